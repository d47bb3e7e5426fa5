from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lorawan_qos.geometry import (
    PathLossParams,
    ack_capture_prob,
    capture_kernels,
    capture_outcome,
    lens_ack_capture,
    path_loss,
    radial_density,
    sample_disc,
)

params_st = st.builds(
    PathLossParams,
    c1=st.just(-133.7),
    c2=st.floats(10, 80),
    radius=st.floats(50, 5000),
    q=st.floats(0.1, 20),
)


def test_peak_distance_for_reference_cell():
    pl = PathLossParams()
    assert pl.peak_distance == pytest.approx(600 * 10 ** (-6 / 44.9), rel=1e-14)
    assert pl.peak_distance == pytest.approx(441.08, abs=0.01)


def test_path_loss_and_density():
    pl = PathLossParams()
    assert path_loss(1.0, pl) == pytest.approx(-133.7)
    assert path_loss(10.0, pl) == pytest.approx(-133.7 - 44.9)
    with pytest.raises(ValueError):
        path_loss(0.0, pl)
    r = np.linspace(0, 600, 10001)
    assert np.trapezoid(radial_density(r, 600), r) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=300)
@given(params_st, st.floats(0, 1))
def test_kernels_partition_unity(pl, u):
    v_gw, v_both, v_one = capture_kernels(u * pl.radius, pl)
    assert float(v_gw + v_both + v_one) == pytest.approx(1.0, abs=1e-12)
    assert min(float(v_gw), float(v_both), float(v_one)) >= -1e-15


@settings(max_examples=300)
@given(params_st, st.floats(1e-9, 1))
def test_gw_capture_vanishes_beyond_peak(pl, t):
    x = pl.peak_distance + t * (pl.radius - pl.peak_distance)
    if x > pl.peak_distance:
        assert float(capture_kernels(x, pl)[0]) == 0.0


def test_capture_disabled():
    pl = PathLossParams(q=math.inf)
    v_gw, v_both, v_one = capture_kernels(np.array([0.0, 300.0, 600.0]), pl)
    assert np.all(v_gw == 0) and np.all(v_one == 0) and np.all(v_both == 1)
    assert float(ack_capture_prob(300.0, pl)) == 0.0


@settings(max_examples=200, deadline=None)
@given(params_st, st.floats(1e-4, 1))
def test_quadrature_matches_lens_area(pl, u):
    x = u * pl.radius
    assert float(ack_capture_prob(x, pl)) == pytest.approx(lens_ack_capture(x, pl), abs=1e-8)


def test_ack_capture_limits():
    pl = PathLossParams()
    assert float(ack_capture_prob(0.0, pl)) == 1.0
    vals = ack_capture_prob(np.linspace(0, 600, 50), pl)
    assert np.all(np.diff(vals) <= 1e-12)
    assert 0 < vals[-1] < 1


def _mc(pl: PathLossParams, x: float, n: int, seed: int):
    rng = np.random.default_rng(seed)
    pts = sample_disc(rng, n, pl.radius)
    k = pl.margin_ratio
    d_gw = np.hypot(pts[:, 0], pts[:, 1])
    d_mote = np.hypot(pts[:, 0] - x, pts[:, 1])
    return (d_gw > k * x).mean(), (d_gw < x / k).mean(), (d_mote > k * x).mean()


@pytest.mark.parametrize("x", [50.0, 250.0, 441.0, 520.0])
def test_kernels_against_monte_carlo(x):
    pl = PathLossParams()
    n = 400_000
    gw, one, ack = _mc(pl, x, n, seed=int(x))
    co = capture_outcome(x, pl)
    for est, exact in ((gw, co.v_gw), (one, co.v_one), (ack, float(ack_capture_prob(x, pl)))):
        se = max(math.sqrt(exact * (1 - exact) / n), 1e-12)
        assert abs(est - exact) <= 4 * se


def test_sample_disc_is_uniform():
    pts = sample_disc(np.random.default_rng(3), 200_000, 600.0)
    r = np.hypot(pts[:, 0], pts[:, 1])
    assert r.max() <= 600.0
    assert (r < 300).mean() == pytest.approx(0.25, abs=0.005)


def test_invalid_params():
    with pytest.raises(ValueError):
        PathLossParams(c2=0)
    with pytest.raises(ValueError):
        PathLossParams(q=-1)
    with pytest.raises(ValueError):
        capture_kernels(700.0, PathLossParams())
