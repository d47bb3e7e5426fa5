"""Log-distance path loss, radial mote density and capture kernels.

All kernels take the tagged mote's distance ``x`` from the gateway and
depend on ``x / radius`` only.  The interfering mote is uniform in the
disc of radius ``radius``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

QUAD_EPSABS = 1e-9


class IntegrationError(RuntimeError):
    def __init__(self, message: str, abserr: float) -> None:
        super().__init__(f"{message} (achieved error estimate {abserr:.3e})")
        self.abserr = abserr


@dataclass(frozen=True)
class PathLossParams:
    c1: float = -133.7
    c2: float = 44.9
    radius: float = 600.0
    q: float = 6.0

    def __post_init__(self) -> None:
        if not self.c2 > 0:
            raise ValueError(f"path-loss slope c2 must be positive, got {self.c2}")
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not self.q >= 0:
            raise ValueError(f"co-channel rejection q must be >= 0, got {self.q}")

    @property
    def margin_ratio(self) -> float:
        """Distance ratio 10**(q/c2) equivalent to the capture margin."""
        if math.isinf(self.q):
            return math.inf
        return 10.0 ** (self.q / self.c2)

    @property
    def peak_distance(self) -> float:
        """Largest distance at which the gateway can still capture the tagged frame."""
        return self.radius / self.margin_ratio


@dataclass(frozen=True)
class CaptureOutcome:
    v_gw: float
    v_both: float
    v_one: float


def path_loss(distance, params: PathLossParams):
    """Received power in dBm at ``distance`` metres: c1 - c2*log10(d)."""
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    out = params.c1 - params.c2 * np.log10(d)
    return float(out) if out.ndim == 0 else out


def radial_density(r, radius: float):
    """Density 2r/R^2 of a uniform point's distance from the disc centre."""
    rr = np.asarray(r, dtype=float)
    if np.any(rr < 0) or np.any(rr > radius):
        raise ValueError(f"r must lie in [0, {radius}]")
    out = 2.0 * rr / radius**2
    return float(out) if out.ndim == 0 else out


def _check_x(x: np.ndarray, radius: float) -> None:
    if np.any(x < 0) or np.any(x > radius * (1 + 1e-12)):
        raise ValueError(f"x must lie in [0, {radius}]")


def capture_kernels(x, params: PathLossParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised ``(v_gw, v_both, v_one)`` for an array of distances."""
    xs = np.asarray(x, dtype=float)
    _check_x(xs, params.radius)
    u2 = (xs / params.radius) ** 2
    k = params.margin_ratio
    if math.isinf(k):
        zero = np.zeros_like(u2)
        return zero, np.ones_like(u2), zero.copy()
    k2 = k * k
    v_one = u2 / k2
    v_gw = np.where(xs > params.peak_distance, 0.0, 1.0 - u2 * k2)
    v_gw = np.clip(v_gw, 0.0, 1.0)
    v_both = 1.0 - v_gw - v_one
    return v_gw, v_both, v_one


def capture_outcome(x: float, params: PathLossParams) -> CaptureOutcome:
    v_gw, v_both, v_one = capture_kernels(x, params)
    return CaptureOutcome(float(v_gw), float(v_both), float(v_one))


def _angular_fraction(r1: float, x: float, k: float) -> float:
    # share of angles putting an interferer at radius r1 farther than k*x from the mote
    if r1 <= 0.0:
        return 0.0
    # (x^2 + r1^2 - k^2 x^2) / (2 x r1), arranged to avoid underflow for tiny x
    a = 0.5 * x * (1.0 - k * k) / r1 + 0.5 * r1 / x
    a = min(1.0, max(-1.0, a))
    return 1.0 - math.acos(a) / math.pi


@lru_cache(maxsize=65536)
def _ack_capture_cached(u: float, k: float) -> float:
    # unit disc, mote at distance u
    if math.isinf(k):
        return 0.0
    if u == 0.0:
        return 1.0
    lo = u * (k - 1.0)
    hi = u * (k + 1.0)
    points = [p for p in (lo, hi) if 0.0 < p < 1.0]

    def integrand(r1: float) -> float:
        return 2.0 * r1 * _angular_fraction(r1, u, k)

    val, err = integrate.quad(integrand, 0.0, 1.0, points=points or None, epsabs=QUAD_EPSABS, epsrel=0.0, limit=200)
    if err > 10 * QUAD_EPSABS:
        raise IntegrationError("ack capture integral did not converge", err)
    return min(1.0, max(0.0, val))


def ack_capture_prob(x, params: PathLossParams):
    """Probability that the gateway's ACK beats a uniform interferer at the mote.

    The interfering mote must be farther than ``x * 10**(q/c2)`` from the
    tagged mote; evaluated as a radial integral of the admissible angular
    share at each interferer radius.
    """
    xs = np.asarray(x, dtype=float)
    _check_x(xs, params.radius)
    k = params.margin_ratio
    flat = [_ack_capture_cached(float(min(v / params.radius, 1.0)), k) for v in xs.ravel()]
    out = np.asarray(flat).reshape(xs.shape)
    return float(out) if out.ndim == 0 else out


def lens_ack_capture(x: float, params: PathLossParams) -> float:
    """Closed-form counterpart of :func:`ack_capture_prob` via circle-lens area.

    Used as an independent check; the interferer wins when it lies inside
    the circle of radius ``k*x`` around the mote.
    """
    r_gw = params.radius
    rho = params.margin_ratio * x
    d = x
    if math.isinf(params.margin_ratio):
        return 0.0
    if x == 0:
        return 1.0
    if d + rho <= r_gw:
        inter = math.pi * rho * rho
    elif d + r_gw <= rho:
        inter = math.pi * r_gw * r_gw
    else:
        a1 = math.acos((d * d + r_gw * r_gw - rho * rho) / (2 * d * r_gw))
        a2 = math.acos((d * d + rho * rho - r_gw * r_gw) / (2 * d * rho))
        inter = (
            r_gw * r_gw * a1
            + rho * rho * a2
            - 0.5 * math.sqrt(max((-d + r_gw + rho) * (d + r_gw - rho) * (d - r_gw + rho) * (d + r_gw + rho), 0.0))
        )
    return 1.0 - inter / (math.pi * r_gw * r_gw)


def sample_disc(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    """``n`` points uniform in the disc, shape (n, 2)."""
    r = radius * np.sqrt(rng.random(n))
    phi = rng.uniform(0.0, 2 * math.pi, n)
    return np.column_stack((r * np.cos(phi), r * np.sin(phi)))
