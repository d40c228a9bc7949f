"""Symmetric transition densities and the sampling primitives behind them.

Every sampler here is a deterministic transform of uniforms passed in by the
caller, so that likelihood evaluations can reuse one fixed set of base
samples (common random numbers).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc, gammaincc, gammainccinv, gammaincinv, ndtri

from ._hot import lens_area  # noqa: F401  (re-exported)

MAX_LENS_PROPOSALS = 1_000_000


@dataclass(frozen=True)
class Normal:
    """Circular bivariate normal with standard deviation ``sigma`` (km)."""

    sigma: float
    kind = "normal"

    def __post_init__(self):
        _positive(sigma=self.sigma)

    @property
    def values(self):
        return (self.sigma,)

    @property
    def scale(self):
        return self.sigma


@dataclass(frozen=True)
class FixedRadius:
    """Uniform density on the disc of radius ``r`` (km)."""

    r: float
    kind = "fixed-radius"

    def __post_init__(self):
        _positive(r=self.r)

    @property
    def values(self):
        return (self.r,)

    @property
    def scale(self):
        return self.r


@dataclass(frozen=True)
class GammaRadius:
    """Uniform disc whose radius is redrawn each step from
    gamma(shape ``alpha``, rate ``rho``)."""

    alpha: float
    rho: float
    kind = "gamma-radius"

    def __post_init__(self):
        _positive(alpha=self.alpha, rho=self.rho)

    @property
    def values(self):
        return (self.alpha, self.rho)

    @property
    def scale(self):
        return self.alpha / self.rho


KernelSpec = Normal | FixedRadius | GammaRadius

KERNEL_TYPES = {cls.kind: cls for cls in (Normal, FixedRadius, GammaRadius)}


def kernel_from_values(kind: str, values) -> KernelSpec:
    return KERNEL_TYPES[kind](*values)


def _positive(**kw):
    for name, v in kw.items():
        if not (np.isfinite(v) and v > 0):
            raise ValueError(f"{name} must be positive and finite, got {v}")


# ---------------------------------------------------------------------------
# uniforms


def lhs(rng: np.random.Generator, shape, axis=-1) -> np.ndarray:
    """Latin hypercube uniforms: every 1-D slice along ``axis`` has exactly
    one value in each of its ``shape[axis]`` equal strata."""
    shape = tuple(shape)
    axis = axis % len(shape)
    n = shape[axis]
    idx = [1] * len(shape)
    idx[axis] = n
    strata = rng.permuted(np.broadcast_to(np.arange(n, dtype=float).reshape(idx), shape), axis=axis)
    u = (strata + rng.random(shape)) / n
    return np.clip(u, 1e-300, np.nextafter(1.0, 0.0))


def lhs_uniform(count: int, dims: int, seed: int) -> np.ndarray:
    """``count`` Latin hypercube points in ``(0, 1)**dims``."""
    if count < 1 or dims < 1:
        raise ValueError("count and dims must be at least 1")
    return lhs(np.random.default_rng(seed), (count, dims), axis=0)


def uniforms(rng, shape, axis=-1, use_lhs=True) -> np.ndarray:
    if use_lhs:
        return lhs(rng, shape, axis)
    return np.clip(rng.random(shape), 1e-300, None)


# ---------------------------------------------------------------------------
# normal kernel


def standard_normal_offsets(u) -> np.ndarray:
    return ndtri(u)


def sample_normal_step(x, sigma: float, u) -> np.ndarray:
    """``x + sigma * (Phi^-1(u1), Phi^-1(u2))``."""
    _positive(sigma=sigma)
    return np.asarray(x, dtype=float) + sigma * ndtri(np.asarray(u, dtype=float))


def normal_density(y, centre, sigma: float):
    """Circular bivariate normal density (per km^2)."""
    d2 = np.sum((np.asarray(y, dtype=float) - np.asarray(centre, dtype=float)) ** 2, axis=-1)
    return np.exp(-0.5 * d2 / sigma**2) / (2.0 * math.pi * sigma**2)


def log_normal_density(y, centre, sigma: float):
    d2 = np.sum((np.asarray(y, dtype=float) - np.asarray(centre, dtype=float)) ** 2, axis=-1)
    return -0.5 * d2 / sigma**2 - math.log(2.0 * math.pi * sigma**2)


# ---------------------------------------------------------------------------
# radius distribution


def gamma_cdf(r, alpha, rho):
    return gammainc(alpha, rho * np.asarray(r, dtype=float))


def gamma_sf(r, alpha, rho):
    return gammaincc(alpha, rho * np.asarray(r, dtype=float))


def gamma_quantile(p, alpha, rho):
    """Inverse gamma CDF; the upper half goes through the survival function
    so that values close to 1 keep their precision."""
    p = np.asarray(p, dtype=float)
    low = gammaincinv(alpha, np.minimum(p, 0.5))
    high = gammainccinv(alpha, np.minimum(1.0 - p, 0.5))
    return np.where(p <= 0.5, low, high) / rho


def sample_radius_truncated(alpha, rho, lower, u):
    """Quantile transform of ``u`` for gamma(alpha, rho) truncated to
    ``[lower, inf)``.

    Uses ``F^-1(F(lower) + u (1 - F(lower)))`` written in terms of the
    survival function: ``S^-1((1 - u) S(lower))``. Raises when ``S(lower)``
    underflows, i.e. the step is longer than any radius the distribution
    can produce.
    """
    tail = gammaincc(alpha, rho * np.asarray(lower, dtype=float))
    if np.any(tail <= 0.0):
        raise FloatingPointError(
            f"gamma({alpha}, {rho}) has no mass above {np.max(lower)}: step is numerically impossible"
        )
    r = gammainccinv(alpha, (1.0 - np.asarray(u, dtype=float)) * tail) / rho
    return np.maximum(r, lower)


# ---------------------------------------------------------------------------
# discs and lenses


def unit_disc_offsets(u) -> np.ndarray:
    """Map uniform pairs to uniform points on the unit disc via
    ``l ~ U(0, 1)``, ``theta ~ U(-pi, pi)``, offset ``sqrt(l)(cos, sin)``."""
    u = np.asarray(u, dtype=float)
    rad = np.sqrt(u[..., 0])
    theta = -math.pi + 2.0 * math.pi * u[..., 1]
    return np.stack([rad * np.cos(theta), rad * np.sin(theta)], axis=-1)


def sample_disc_uniform(centre, r: float, u1, u2) -> np.ndarray:
    """Uniform point on the disc of radius ``r`` around ``centre``."""
    _positive(r=r)
    off = unit_disc_offsets(np.stack([np.asarray(u1, float), np.asarray(u2, float)], axis=-1))
    return np.asarray(centre, dtype=float) + r * off


def lens_rectangle(d: float, r: float) -> tuple[float, float]:
    """Width (along the step) and height of the smallest rectangle holding
    the lens of two radius-``r`` discs ``d`` apart."""
    return 2.0 * r - d, 2.0 * math.sqrt(max(r * r - 0.25 * d * d, 0.0))


def lens_proposals(x, y, r: float, u) -> tuple[np.ndarray, np.ndarray]:
    """Map uniform pairs onto the lens bounding rectangle.

    Unit-square point -> scale to the rectangle -> polar coordinates ->
    rotate by the step heading -> translate to the step midpoint. Returns
    the proposals and the mask of those inside both discs.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float) - 0.5
    d = float(np.hypot(*(y - x)))
    width, height = lens_rectangle(d, r)
    ux = width * u[..., 0]
    uy = height * u[..., 1]
    length = np.hypot(ux, uy)
    theta = np.arctan2(uy, ux) + math.atan2(y[1] - x[1], y[0] - x[0])
    pts = np.stack([length * np.cos(theta) + 0.5 * (x[0] + y[0]),
                    length * np.sin(theta) + 0.5 * (x[1] + y[1])], axis=-1)
    r2 = r * r
    ok = (np.sum((pts - x) ** 2, axis=-1) <= r2) & (np.sum((pts - y) ** 2, axis=-1) <= r2)
    return pts, ok


def sample_lens_uniform(x, y, r: float, u) -> np.ndarray:
    """Uniform point on the intersection of the radius-``r`` discs around
    ``x`` and ``y`` by rejection from the bounding rectangle.

    ``u`` is either an ``(n, 2)`` array of uniforms consumed in order, or a
    ``numpy.random.Generator`` to draw from.
    """
    _positive(r=r)
    d = float(np.hypot(*(np.asarray(y, float) - np.asarray(x, float))))
    if d >= 2.0 * r:
        raise ValueError(f"empty lens: distance {d} >= 2r = {2 * r}")
    if isinstance(u, np.random.Generator):
        used = 0
        block = 64
        while used < MAX_LENS_PROPOSALS:
            pts, ok = lens_proposals(x, y, r, u.random((block, 2)))
            if ok.any():
                return pts[np.argmax(ok)]
            used += block
        raise RuntimeError("lens rejection sampler exceeded the proposal cap")
    u = np.asarray(u, dtype=float)[:MAX_LENS_PROPOSALS]
    pts, ok = lens_proposals(x, y, r, u)
    if not ok.any():
        raise RuntimeError("lens rejection sampler ran out of proposals")
    return pts[np.argmax(ok)]


def lens_proposal_budget(n_accept: int) -> int:
    """Proposals pre-drawn per lens. The acceptance rate never drops below
    2/3 for a non-empty lens, so this leaves a wide margin."""
    return 3 * n_accept + 32
