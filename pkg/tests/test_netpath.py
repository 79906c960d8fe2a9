from __future__ import annotations

import io
import itertools
import json
import math
from contextlib import redirect_stdout

import pytest
from hypothesis import given, settings, strategies as st

from glasspipe import netpath
from glasspipe.netpath import (LinkMetrics, PathCandidate, PathWeights, RateConfig, adaptive_rate, score_method,
                               select_path, simulate_link)

W = PathWeights()
# metrics on a 1e-3 grid: strictness is about the formula, not sub-ulp perturbations
unit = st.integers(0, 1000).map(lambda i: i / 1000)
lat = st.integers(0, 5000).map(lambda i: i / 1000)


def test_latency_term_vanishes_at_large_latency():
    m = LinkMetrics(1e6, 0.6, 0.7)
    assert score_method(m, W) == pytest.approx(0.3 * 0.6 + 0.2 * 0.7, abs=1e-6)


def test_hand_evaluated_score():
    s = score_method(LinkMetrics(0.1, 0.8, 0.9), W)
    assert s == pytest.approx(5.37050, abs=1e-4)
    assert s == pytest.approx(0.5 / 0.101 + 0.24 + 0.18, abs=1e-12)


def test_select_single_candidate():
    assert select_path([PathCandidate("vpn", LinkMetrics(0.2, 0.5, 0.5))], W) == "vpn"


def test_equal_metrics_prefer_direct_lan():
    m = LinkMetrics(0.05, 0.5, 0.9)
    cands = [PathCandidate(x, m) for x in ("vpn", "port_forward", "direct_lan")]
    assert select_path(cands, W) == "direct_lan"
    assert select_path(cands[:2], W) == "port_forward"


def test_low_latency_vpn_wins():
    cands = [PathCandidate("direct_lan", LinkMetrics(1.0, 0.5, 0.9)),
             PathCandidate("port_forward", LinkMetrics(1.0, 0.5, 0.9)),
             PathCandidate("vpn", LinkMetrics(0.01, 0.5, 0.9))]
    assert select_path(cands, W) == "vpn"


def test_empty_candidates_rejected():
    with pytest.raises(ValueError):
        select_path([], W)


def test_unknown_method_rejected():
    with pytest.raises(ValueError):
        PathCandidate("carrier_pigeon", LinkMetrics(0, 0, 0))


@settings(max_examples=200)
@given(l1=lat, l2=lat, b=unit, r=unit)
def test_score_strictly_decreasing_in_latency(l1, l2, b, r):
    if l1 < l2:
        assert score_method(LinkMetrics(l1, b, r), W) > score_method(LinkMetrics(l2, b, r), W)


@settings(max_examples=200)
@given(l=lat, b1=unit, b2=unit, r1=unit, r2=unit)
def test_score_strictly_increasing_in_bandwidth_and_reliability(l, b1, b2, r1, r2):
    if b1 < b2:
        assert score_method(LinkMetrics(l, b1, r1), W) < score_method(LinkMetrics(l, b2, r1), W)
    if r1 < r2:
        assert score_method(LinkMetrics(l, b1, r1), W) < score_method(LinkMetrics(l, b1, r2), W)


@settings(max_examples=100)
@given(ms=st.lists(st.tuples(lat, unit, unit), min_size=3, max_size=3))
def test_selection_permutation_invariant(ms):
    cands = [PathCandidate(m, LinkMetrics(*x)) for m, x in zip(netpath.METHODS, ms)]
    picks = {select_path(list(p), W) for p in itertools.permutations(cands)}
    assert len(picks) == 1


def test_rate_examples():
    cfg = RateConfig(r_max=10.0, b_required=5.0, lam=0.5)
    assert adaptive_rate(0, cfg, 7.0, 0.0) == 10.0
    assert adaptive_rate(0, cfg, 5.0, 1.0) == pytest.approx(0.60653 * 10, abs=1e-4)
    assert adaptive_rate(0, cfg, 0.0, 0.2) == 0.0


@settings(max_examples=200)
@given(b=st.floats(0, 1e6), L=st.floats(0, 1e3), lam=st.floats(0, 10), rmax=st.floats(1e-3, 1e6))
def test_rate_bounded(b, L, lam, rmax):
    r = adaptive_rate(0, RateConfig(rmax, 100.0, lam), b, L)
    assert 0.0 <= r <= rmax


@settings(max_examples=200)
@given(l1=st.floats(0, 10), l2=st.floats(0, 10), b=st.floats(0.1, 100))
def test_rate_latency_ratio_identity(l1, l2, b):
    cfg = RateConfig(50.0, 20.0, 0.5)
    ratio = adaptive_rate(0, cfg, b, l1) / adaptive_rate(0, cfg, b, l2)
    assert ratio == pytest.approx(math.exp(0.5 * (l2 - l1)), rel=1e-9)


def test_constant_trace_constant_rate():
    s = simulate_link([{"t_s": 0, "b_available": 8, "latency_s": 0.02, "loss_prob": 0}])
    cfg = RateConfig(8, 8)
    rates = {s.rate_at(t, cfg) for t in (0, 0.5, 3.0, 100.0)}
    assert len(rates) == 1


def test_latency_spike_dips_rate_by_exact_factor():
    s = simulate_link([(0, 8, 0.02, 0), (1, 8, 0.52, 0), (2, 8, 0.02, 0)])
    cfg = RateConfig(8, 8, lam=0.5)
    before, during, after = s.rate_at(0.5, cfg), s.rate_at(1.5, cfg), s.rate_at(2.5, cfg)
    assert during / before == pytest.approx(math.exp(-0.5 * 0.5), rel=1e-12)
    assert after == before


def test_step_function_lookup():
    s = simulate_link([(1.0, 4, 0.1, 0.0), (2.0, 2, 0.2, 0.5)])
    assert s.at(0.0).t_s == 1.0
    assert s.at(1.999).t_s == 1.0
    assert s.at(2.0).t_s == 2.0
    m = s.metrics_at(2.5)
    assert m.bandwidth == pytest.approx(0.5) and m.reliability == pytest.approx(0.5)


def test_same_seed_same_drops():
    trace = [(0, 1, 0.1, 0.3)]
    s1, s2 = simulate_link(trace, seed=9), simulate_link(trace, seed=9)
    d1 = [s1.should_drop(i * 0.1) for i in range(500)]
    d2 = [s2.should_drop(i * 0.1) for i in range(500)]
    assert d1 == d2
    assert 100 < sum(d1) < 200


@pytest.mark.parametrize("trace", [[], [(1, 1, 0, 0), (1, 1, 0, 0)], [(0, -1, 0, 0)], [(0, 1, 0, 1.5)]])
def test_bad_traces_rejected(trace):
    with pytest.raises(netpath.TraceError):
        simulate_link(trace)


def test_ticks_are_100ms():
    s = simulate_link([(0, 1, 0, 0), (1.0, 1, 0, 0)])
    ticks = list(s.ticks())
    assert len(ticks) == 11 and ticks[1] == pytest.approx(0.1)


def test_cli_scores_every_tick(tmp_path):
    from glasspipe.cli import main

    path = tmp_path / "trace.json"
    path.write_text(json.dumps([{"t_s": 0, "b_available": 5, "latency_s": 0.01, "loss_prob": 0},
                                {"t_s": 0.5, "b_available": 5, "latency_s": 0.4, "loss_prob": 0}]))
    buf = io.StringIO()
    with redirect_stdout(buf):
        assert main(["netpath", "score", "--trace", str(path)]) == 0
    recs = [json.loads(line) for line in buf.getvalue().splitlines()]
    assert len(recs) == 6
    assert set(recs[0]) == {"t", "method", "score", "rate"}
    assert recs[0]["rate"] > recs[-1]["rate"]


def test_multi_method_trace_switches_path(tmp_path):
    path = tmp_path / "trace.json"
    path.write_text(json.dumps({
        "direct_lan": [[0, 10, 0.005, 0], [0.3, 10, 2.0, 0.9]],
        "vpn": [[0, 6, 0.08, 0.01]],
    }))
    recs = list(netpath.score_sessions(netpath.load_trace(path)))
    assert recs[0]["method"] == "direct_lan"
    assert recs[-1]["method"] == "vpn"
