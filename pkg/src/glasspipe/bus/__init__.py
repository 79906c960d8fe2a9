from .broker import (
    Broker,
    BusConnection,
    BusDisconnected,
    BusError,
    Delivery,
    Envelope,
    PayloadTooLarge,
    Receipt,
    Subscription,
    UnknownSubscription,
)
from .lossy import LossyChannel, VirtualClock, consume_all
from .topics import TopicError, topic_matches, validate_pattern, validate_topic

__all__ = [
    "Broker", "BusConnection", "BusDisconnected", "BusError", "Delivery", "Envelope",
    "PayloadTooLarge", "Receipt", "Subscription", "UnknownSubscription",
    "LossyChannel", "VirtualClock", "consume_all",
    "TopicError", "topic_matches", "validate_pattern", "validate_topic",
]
