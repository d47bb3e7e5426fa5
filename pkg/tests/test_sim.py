from __future__ import annotations

import bisect
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from lorawan_qos.geometry import PathLossParams
from lorawan_qos.model import GroupSpec, Scenario
from lorawan_qos.phy import build_mcs_table
from lorawan_qos.sim import SimConfig, aggregate, replicate, run, wilson_interval


def _scenario(n=20, total=0.5, **kw):
    pl = kw.pop("path_loss", PathLossParams())
    g = GroupSpec(n, total / n if n else 0.1, 0.01)
    return Scenario((g,), build_mcs_table(), pl, **kw)


@settings(max_examples=1000, deadline=None)
@given(
    n=st.integers(1, 12),
    total=st.floats(0.01, 3.0),
    mcs=st.integers(2, 5),
    f_ch=st.integers(1, 3),
    rl=st.integers(0, 7),
    q=st.sampled_from([0.0, 3.0, 6.0, math.inf]),
    acked=st.booleans(),
    seed=st.integers(0, 2**32),
)
def test_accounting_identity(n, total, mcs, f_ch, rl, q, acked, seed):
    sc = _scenario(n, total, path_loss=PathLossParams(q=q), f_main_channels=f_ch, retry_limit=rl, acknowledged=acked)
    s = run(SimConfig(sc, 300.0, seed=seed, mote_mcs=np.full(n, mcs)))
    assert np.array_equal(s.generated, s.delivered + s.discarded + s.dropped)
    assert np.all(s.retransmissions <= rl * s.first_attempts)
    assert np.all(s.first_successes <= s.first_attempts)
    assert np.all(s.first_successes <= s.first_data_ok)
    if rl == 0:
        assert s.retransmissions.sum() == 0


def test_same_seed_same_stats():
    sc = _scenario(30, 1.0)
    cfg = SimConfig(sc, 2000.0, seed=11, mote_mcs=np.full(30, 5))
    a, b = run(cfg), run(cfg)
    for name in ("distance", "generated", "delivered", "discarded", "dropped", "retransmissions"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert a.events == b.events
    c = run(SimConfig(sc, 2000.0, seed=12, mote_mcs=np.full(30, 5)))
    assert not np.array_equal(a.generated, c.generated)


def test_single_mote_never_collides():
    sc = _scenario(1, 0.02)
    s = run(SimConfig(sc, 200_000.0, seed=3, mote_mcs=[5]))
    assert s.generated[0] > 3000
    assert s.dropped[0] == 0 and s.retransmissions[0] == 0
    assert s.first_successes[0] == s.first_attempts[0]
    # any residual loss comes only from a third frame arriving during one attempt
    assert s.plr[0] == pytest.approx(s.discarded[0] / s.generated[0])
    assert s.plr[0] < 3e-3


def test_no_traffic_no_events():
    s = run(SimConfig(_scenario(0), 1000.0, mote_mcs=np.zeros(0, dtype=int)))
    assert s.events == 0 and s.generated.size == 0
    tiny = Scenario((GroupSpec(5, 1e-15, 0.01),), build_mcs_table())
    s = run(SimConfig(tiny, 1000.0, mote_mcs=np.full(5, 5)))
    assert s.events == 0 and s.lost.sum() == 0


def test_config_validation():
    sc = _scenario(3)
    with pytest.raises(ValueError):
        SimConfig(sc, 10.0)
    with pytest.raises(ValueError):
        SimConfig(sc, 0.0, mote_mcs=[5, 5, 5])
    with pytest.raises(ValueError):
        SimConfig(sc, 10.0, mote_mcs=[6, 5, 5])
    with pytest.raises(ValueError):
        SimConfig(sc, 10.0, mote_mcs=[5, 5, 5], positions=[[0, 0], [0, 700], [1, 1]])
    cfg = SimConfig(sc, 10.0, counts=[[1], [0], [0], [0], [0], [2]])
    assert cfg.mote_mcs.tolist() == [0, 5, 5]


def test_gateway_capture_rule_on_trace():
    sc = _scenario(60, 3.0, f_main_channels=2)
    s = run(SimConfig(sc, 3000.0, seed=5, mote_mcs=np.full(60, 5), trace=True))
    tr = s.trace
    assert tr and any(not r[6] for r in tr)
    q = sc.path_loss.q
    by_key: dict = {}
    for rec in tr:
        by_key.setdefault((rec[2], rec[3]), []).append(rec)
    for recs in by_key.values():
        recs.sort()
        starts = [r[0] for r in recs]
        longest = max(r[1] - r[0] for r in recs)
        for i, a in enumerate(recs):
            lo, hi = bisect.bisect_left(starts, a[0] - longest), bisect.bisect_left(starts, a[1])
            rivals = [b for j, b in enumerate(recs[lo:hi], lo) if j != i and b[0] < a[1] and a[0] < b[1]]
            if a[6]:
                assert all(a[5] - b[5] > q for b in rivals)
                assert not any(b[6] for b in rivals)


def test_flat_plr_without_capture():
    sc = _scenario(100, 1.0, path_loss=PathLossParams(q=math.inf))
    rep = replicate(SimConfig(sc, 20_000.0, seed=9, mote_mcs=np.full(100, 5)), 4, bins=3)
    c = rep.curve
    pooled = c.lost.sum() / c.generated.sum()
    lo, hi = wilson_interval(c.lost, c.generated, 0.999)
    assert np.all((lo <= pooled) & (pooled <= hi))


def test_capture_favours_near_motes():
    sc = _scenario(100, 3.0)
    s = run(SimConfig(sc, 20_000.0, seed=4, mote_mcs=np.full(100, 5)))
    near = s.distance < 200
    far = s.distance > 450
    p_near = s.lost[near].sum() / s.generated[near].sum()
    p_far = s.lost[far].sum() / s.generated[far].sum()
    assert p_near < p_far


def test_replicate_rules_and_totals():
    cfg = SimConfig(_scenario(20, 1.0), 500.0, seed=1, mote_mcs=np.full(20, 5))
    with pytest.raises(ValueError):
        replicate(cfg, 1)
    with pytest.raises(ValueError):
        replicate(cfg, 2, seeds=[7, 7])
    rep = replicate(cfg, 3, bins=10)
    assert rep.generated == sum(int(r.generated.sum()) for r in rep.runs)
    assert rep.curve.generated.sum() == rep.generated
    assert rep.curve.lost.sum() == rep.lost
    assert rep.delivered + rep.lost == rep.generated
    assert len({r.seed for r in rep.runs}) == 3


def test_interval_width_shrinks_like_inverse_root_n():
    cfg = SimConfig(_scenario(40, 2.0), 1500.0, seed=21, mote_mcs=np.full(40, 5))
    runs = replicate(cfg, 64, bins=1).runs
    sd_hat = {}
    widths = {}
    for n in (4, 16, 64):
        c = aggregate(runs[:n], bins=1)
        widths[n] = float(c.ci_high[0] - c.ci_low[0])
        sd_hat[n] = widths[n] * math.sqrt(n) / (2 * stats.t.ppf(0.975, n - 1))
    assert widths[4] > widths[16] > widths[64]
    assert widths[16] / widths[64] == pytest.approx(2.0 * stats.t.ppf(0.975, 15) / stats.t.ppf(0.975, 63), rel=0.4)
    assert sd_hat[16] == pytest.approx(sd_hat[64], rel=0.4)


def test_wilson_interval_basics():
    lo, hi = wilson_interval(np.array([0, 5, 10]), np.array([10, 10, 10]))
    assert lo[0] == pytest.approx(0, abs=1e-15) and hi[2] == pytest.approx(1, abs=1e-15)
    assert lo[1] < 0.5 < hi[1]
    lo, hi = wilson_interval(np.array([0]), np.array([0]))
    assert np.isnan(lo[0]) and np.isnan(hi[0])
