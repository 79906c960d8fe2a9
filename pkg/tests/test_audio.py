from __future__ import annotations

import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glasspipe import audio
from glasspipe.audio import PcmStream, SegmenterConfig, next_window, overlap_ratio, vad_classify
from oracles import oracle_energy, oracle_zcr, sine

RATE = 16000


def test_two_second_stream_windows():
    stream = PcmStream(np.zeros(2 * RATE, dtype=np.int16), RATE)
    cfg = SegmenterConfig(window_duration_s=1.0, hop_s=0.5)
    spans = [(w.start_time_s, w.end_time_s) for w in audio.iter_windows(stream, cfg)]
    assert spans == [(0.0, 1.0), (0.5, 1.5), (1.0, 2.0)]
    assert next_window(stream, cfg, 3) is None


def test_empty_stream_ends_immediately():
    stream = PcmStream(np.zeros(0, dtype=np.int16), RATE)
    assert next_window(stream, SegmenterConfig(), 0) is None


def test_window_sample_count_matches_slicing_oracle():
    samples = np.arange(3 * RATE + 123, dtype=np.int64) % 30000
    stream = PcmStream(samples.astype(np.int16), RATE)
    cfg = SegmenterConfig(1.0, 0.5)
    # oracle: slice by hand with integer offsets
    expected = []
    start = 0
    while start + RATE <= len(samples):
        expected.append(samples[start:start + RATE])
        start += RATE // 2
    got = list(audio.iter_windows(stream, cfg))
    assert len(got) == len(expected)
    for w, e in zip(got, expected):
        assert len(w.samples) == 16000
        assert np.array_equal(w.samples, e)


def test_start_time_offsets_windows():
    stream = PcmStream(np.zeros(RATE, dtype=np.int16), RATE, start_time_s=10.0)
    w = next_window(stream, SegmenterConfig(0.5, 0.25), 1)
    assert w.start_time_s == pytest.approx(10.25)
    assert w.end_time_s - w.start_time_s == pytest.approx(0.5, abs=1 / RATE)


@pytest.mark.parametrize("window,hop,alpha", [(1.0, 1.0, 0.0), (1.0, 0.5, 0.5), (0.8, 0.2, 0.75)])
def test_overlap_ratio(window, hop, alpha):
    assert overlap_ratio(SegmenterConfig(window, hop)) == pytest.approx(alpha, abs=1e-12)


@pytest.mark.parametrize("hop", [0.0, -0.1, 1.5])
def test_invalid_hop_rejected(hop):
    cfg = SegmenterConfig(1.0, hop)
    with pytest.raises(audio.SegmenterConfigError):
        overlap_ratio(cfg)
    with pytest.raises(audio.SegmenterConfigError):
        next_window(PcmStream(np.zeros(RATE, dtype=np.int16)), cfg, 0)


def test_zero_signal_is_silence():
    w = next_window(PcmStream(np.zeros(RATE, dtype=np.int16)), SegmenterConfig(), 0)
    d = vad_classify(w, SegmenterConfig(energy_threshold=1e-9))
    assert d.energy == 0.0 and not d.is_speech


def test_full_scale_200hz_sine_is_speech():
    s = sine(200)
    w = next_window(PcmStream(s, RATE), SegmenterConfig(1.0, 1.0), 0)
    cfg = SegmenterConfig(1.0, 1.0, energy_threshold=1.0, zcr_threshold=0.1)
    d = vad_classify(w, cfg)
    assert d.is_speech
    assert d.energy == pytest.approx(oracle_energy(s), rel=1e-12)
    assert d.energy == pytest.approx(8000.0, rel=1e-9)
    assert d.zcr == oracle_zcr(s)
    assert d.zcr == pytest.approx(0.025, abs=1e-3)


def test_alternating_samples_max_zcr():
    s = np.tile([0.01, -0.01], RATE // 2)
    w = next_window(PcmStream(s, RATE), SegmenterConfig(1.0, 1.0), 0)
    d = vad_classify(w, SegmenterConfig(1.0, 1.0, energy_threshold=0.0, zcr_threshold=0.35))
    assert d.zcr == 1.0
    assert not d.is_speech


def test_int16_input_is_normalized():
    x = np.full(100, 16384, dtype=np.int16)
    assert audio.frame_energy(x) == pytest.approx(100 * 0.25)


def test_zero_counts_as_positive():
    assert audio.zero_crossing_rate(np.array([0.0, 1.0, 0.0, -1.0])) == pytest.approx(1 / 3)


def test_empty_window_rejected():
    w = audio.AudioWindow(0, 0.0, 0.0, np.zeros(0), 0.0, 0.0)
    with pytest.raises(ValueError):
        vad_classify(w, SegmenterConfig())


configs = st.tuples(
    st.integers(min_value=1, max_value=40),  # window in ms units of 25
    st.integers(min_value=1, max_value=40),
).filter(lambda wh: wh[1] <= wh[0]).map(lambda wh: SegmenterConfig(wh[0] * 0.025, wh[1] * 0.025))


@settings(max_examples=60, deadline=None)
@given(cfg=configs, n=st.integers(min_value=0, max_value=3 * 8000), seed=st.integers(0, 2**16))
def test_consecutive_windows_share_overlap_samples(cfg, n, seed):
    rate = 8000
    x = np.random.default_rng(seed).integers(-32768, 32767, size=n).astype(np.int16)
    stream = PcmStream(x, rate)
    wins = list(audio.iter_windows(stream, cfg))
    hop = cfg.hop_samples(rate)
    overlap = cfg.window_samples(rate) - hop
    assert overlap == round(overlap_ratio(cfg) * cfg.window_duration_s * rate)
    for a, b in zip(wins, wins[1:]):
        assert b.index == a.index + 1
        assert np.array_equal(a.samples[hop:], b.samples[:overlap])
    # non-overlapping prefixes rebuild the stream prefix
    if wins:
        rebuilt = np.concatenate([w.samples[:hop] for w in wins])
        assert np.array_equal(rebuilt, x[:len(rebuilt)])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**16), scale=st.floats(1.0, 20.0))
def test_scaling_never_turns_speech_into_silence(seed, scale):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, rng.uniform(0.001, 0.05), size=4000)
    cfg = SegmenterConfig(0.25, 0.25, energy_threshold=0.5, zcr_threshold=0.6)
    w = next_window(PcmStream(x, RATE), cfg, 0)
    w2 = next_window(PcmStream(x * scale, RATE), cfg, 0)
    d1, d2 = vad_classify(w, cfg), vad_classify(w2, cfg)
    assert d1 == vad_classify(w, cfg)
    assert d1.zcr == d2.zcr
    if d1.is_speech:
        assert d2.is_speech


def test_wav_roundtrip_and_ndjson(tmp_path):
    s = (sine(180, 1.5) * 0.5 * 32767).astype(np.int16)
    path = tmp_path / "clip.wav"
    audio.write_wav(path, PcmStream(s, RATE))
    back = audio.load_audio(path)
    assert back.sample_rate_hz == RATE and np.array_equal(back.samples, s)
    buf = io.StringIO()
    n_speech = audio.write_ndjson(back, SegmenterConfig(), buf)
    recs = [json.loads(line) for line in buf.getvalue().splitlines()]
    assert [r["index"] for r in recs] == [0, 1]
    assert set(recs[0]) == {"index", "start_s", "end_s", "energy", "zcr", "is_speech"}
    assert n_speech == 2


def test_raw_pcm_reader(tmp_path):
    s = np.arange(-100, 100, dtype="<i2")
    path = tmp_path / "clip.pcm"
    s.tofile(path)
    stream = audio.load_audio(path, rate_hz=8000)
    assert stream.sample_rate_hz == 8000 and np.array_equal(stream.samples, s)
