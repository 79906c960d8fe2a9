"""Deterministic desk-scale pipeline for voice-driven AI glasses."""

from .audio import PcmStream, SegmenterConfig, next_window, overlap_ratio, vad_classify
from .intent import FusionWeights, IntentDef, IntentEngine, classify, pattern_score
from .memory import MemoryStore, cosine, embed
from .netpath import LinkMetrics, PathWeights, RateConfig, adaptive_rate, score_method, select_path
from .gaze import Calibration, MonocularSample, eye_weight, fuse, to_world
from .scheduler import Scheduler, ResourcePool, Task, priority

__version__ = "0.1.0"
