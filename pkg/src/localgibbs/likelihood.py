"""Monte Carlo approximation of the local Gibbs step likelihood.

For a step ``x -> y`` the step density is

    p(y|x) = pi(y) * integral over mu of phi(y|mu) phi(mu|x) / Z(mu) dmu,
    Z(mu)  = integral over z of pi(z) phi(z|mu) dz,

and it is estimated with nested samples: centres ``mu_i`` and, for each, end
points ``z_ij``. The habitat normaliser cancels, so only unnormalised weights
enter. For the disc kernels the centres are drawn from the lens where
``phi(y|mu) phi(mu|x)`` is non-zero, and for the gamma-distributed radius an
outer layer of radii is drawn from the gamma law truncated to ``[d/2, inf)``.

All uniforms come from a generator seeded by ``(seed, track, t)``; they are
drawn once per evaluator and reused for every parameter value so that the
approximate likelihood is a deterministic function of the parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaincc

from . import _hot
from .habitat import HabitatRaster, RsfParams
from .kernels import (FixedRadius, GammaRadius, KernelSpec, Normal, lens_proposal_budget,
                      MAX_LENS_PROPOSALS, sample_radius_truncated, standard_normal_offsets,
                      unit_disc_offsets, uniforms)
from .simulator import HmmSpec, Track

DEFAULT_CACHE_BYTES = 1 << 30
_LAZY_CHUNK = 64


class LikelihoodError(RuntimeError):
    """A Monte Carlo estimate that cannot be formed (not merely zero)."""

    def __init__(self, message, t=None, track=None):
        where = "" if t is None else f" (step starting at t={t}" + ("" if track is None else f", track {track}") + ")"
        super().__init__(message + where)
        self.t = t
        self.track = track


@dataclass(frozen=True)
class McConfig:
    n_c: int = 50
    n_z: int = 50
    n_r: int = 30
    seed: int = 0
    lhs: bool = True

    def __post_init__(self):
        for name in ("n_c", "n_z", "n_r"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1")

    def as_dict(self):
        return {"n_c": self.n_c, "n_z": self.n_z, "n_r": self.n_r, "seed": self.seed, "lhs": self.lhs}


@dataclass(frozen=True)
class StepLogLik:
    value: float
    contributing: bool = True


def _family(kernel) -> str:
    return "normal" if isinstance(kernel, Normal) else "radius"


def _step_rng(seed, track, t, *extra):
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, int(track), int(t), *extra])


def draw_step_samples(family: str, mc: McConfig, n_r: int, seed_key) -> dict:
    """Base samples for one step. ``seed_key`` is ``(seed, track, t)``."""
    rng = _step_rng(*seed_key)
    L = mc.lhs
    if family == "normal":
        return {
            "e_mu": standard_normal_offsets(uniforms(rng, (mc.n_c, 2), axis=0, use_lhs=L)),
            "e_z": standard_normal_offsets(uniforms(rng, (mc.n_c, mc.n_z, 2), axis=1, use_lhs=L)),
        }
    P = lens_proposal_budget(mc.n_c)
    return {
        "u_r": uniforms(rng, (n_r,), axis=0, use_lhs=L),
        "u_lens": uniforms(rng, (n_r, P, 2), axis=1, use_lhs=L) - 0.5,
        "e_disc": unit_disc_offsets(uniforms(rng, (n_r, mc.n_c, mc.n_z, 2), axis=2, use_lhs=L)),
    }


def _extra_lens(mc, n_r, seed_key, attempt):
    P = min(lens_proposal_budget(mc.n_c) * 4**attempt, MAX_LENS_PROPOSALS)
    rng = _step_rng(*seed_key, 1, attempt)
    return uniforms(rng, (n_r, P, 2), axis=1, use_lhs=mc.lhs) - 0.5, P


class StepSet:
    """Observed steps of one or more tracks with their frozen base samples.

    Base samples are cached when they fit in ``cache_bytes``; otherwise they
    are regenerated chunk by chunk on every evaluation (same values).
    """

    def __init__(self, tracks: Sequence[Track], family: str, mc: McConfig, n_r: int | None = None,
                 cache_bytes: int = DEFAULT_CACHE_BYTES, track_ids=None):
        if isinstance(tracks, Track):
            tracks = [tracks]
        track_ids = range(len(tracks)) if track_ids is None else track_ids
        self.family = family
        self.mc = mc
        self.n_r = (mc.n_r if n_r is None else n_r) if family == "radius" else 0
        xs, ys, keys, owner, pos = [], [], [], [], []
        self.segments = []
        for k, tr in zip(track_ids, tracks):
            idx = tr.step_index()
            xs.append(tr.points[idx])
            ys.append(tr.points[idx + 1])
            for i in idx:
                keys.append((mc.seed, k, int(tr.times[i])))
            owner.append(np.full(len(idx), k))
            pos.append(idx)
            # runs of steps that follow each other without a gap
            if len(idx):
                brk = np.flatnonzero(np.diff(idx) != 1) + 1
                base = sum(len(a) for a in pos[:-1])
                for run in np.split(np.arange(len(idx)), brk):
                    self.segments.append(base + run)
        self.xs = np.ascontiguousarray(np.concatenate(xs) if xs else np.empty((0, 2)))
        self.ys = np.ascontiguousarray(np.concatenate(ys) if ys else np.empty((0, 2)))
        self.keys = keys
        self.track_of = np.concatenate(owner) if owner else np.empty(0, int)
        self.position = np.concatenate(pos) if pos else np.empty(0, int)
        self.d = np.hypot(*(self.ys - self.xs).T)
        self._cache = None
        if self.n_steps and self._bytes_per_step() * self.n_steps <= cache_bytes:
            self._cache = self._draw(0, self.n_steps)

    @property
    def n_steps(self) -> int:
        return len(self.keys)

    def _bytes_per_step(self):
        mc = self.mc
        if self.family == "normal":
            return 16 * (mc.n_c + mc.n_c * mc.n_z)
        P = lens_proposal_budget(mc.n_c)
        return 8 * self.n_r * (1 + 2 * P + 2 * mc.n_c * mc.n_z)

    def _draw(self, lo, hi):
        per = [draw_step_samples(self.family, self.mc, self.n_r, k) for k in self.keys[lo:hi]]
        return {name: np.ascontiguousarray(np.stack([p[name] for p in per])) for name in per[0]}

    def chunks(self):
        if self._cache is not None:
            yield 0, self.n_steps, self._cache
            return
        for lo in range(0, self.n_steps, _LAZY_CHUNK):
            hi = min(lo + _LAZY_CHUNK, self.n_steps)
            yield lo, hi, self._draw(lo, hi)

    def describe(self, s):
        _, track, t = self.keys[s]
        return {"t": t, "track": track}

    # -- evaluation ---------------------------------------------------------

    def logliks(self, raster: HabitatRaster, params: RsfParams, kernel: KernelSpec,
                wm=None) -> np.ndarray:
        """Log-likelihood of every step under one kernel."""
        if _family(kernel) != self.family:
            raise ValueError(f"step set was built for {self.family} kernels")
        if isinstance(kernel, FixedRadius) and self.n_r != 1:
            raise ValueError("fixed-radius kernels need a step set built with n_r=1")
        wm = raster.weight_map(params) if wm is None else wm
        out = np.empty(self.n_steps)
        for lo, hi, smp in self.chunks():
            if self.family == "normal":
                vals, status = _hot.normal_loglik(wm.W, wm.x0, wm.y0, wm.cs, self.xs[lo:hi],
                                                  self.ys[lo:hi], float(kernel.sigma),
                                                  smp["e_mu"], smp["e_z"])
            else:
                radii, log_trunc = self._radii(kernel, lo, hi, smp["u_r"])
                vals, status = _hot.radius_loglik(wm.W, wm.x0, wm.y0, wm.cs, self.xs[lo:hi],
                                                  self.ys[lo:hi], radii, log_trunc,
                                                  smp["u_lens"], smp["e_disc"])
                for s in np.flatnonzero(status == _hot.LENS_EXHAUSTED):
                    vals[s], status[s] = self._retry_lens(wm, lo + s, radii[s], log_trunc[s], smp["e_disc"][s])
            bad = np.flatnonzero(status != _hot.OK)
            if bad.size:
                s = lo + bad[0]
                if status[bad[0]] == _hot.ZERO_DENOMINATOR:
                    msg = "every end point of some intermediate centre has zero habitat weight"
                else:
                    msg = "lens rejection sampling exceeded the proposal cap"
                raise LikelihoodError(msg, **self.describe(s))
            out[lo:hi] = vals
        return out

    def _radii(self, kernel, lo, hi, u_r):
        d = self.d[lo:hi]
        if isinstance(kernel, FixedRadius):
            radii = np.full((hi - lo, 1), float(kernel.r))
            log_trunc = np.where(d < 2.0 * kernel.r, 0.0, -np.inf)
            return radii, log_trunc
        alpha, rho = float(kernel.alpha), float(kernel.rho)
        tail = gammaincc(alpha, rho * d / 2.0)
        zero = np.flatnonzero(tail <= 0.0)
        if zero.size:
            raise LikelihoodError(
                f"gamma({alpha:.4g}, {rho:.4g}) radius cannot reach half the step length "
                f"{d[zero[0]] / 2:.4g}", **self.describe(lo + zero[0]))
        radii = sample_radius_truncated(alpha, rho, (d / 2.0)[:, None], u_r)
        return np.ascontiguousarray(radii), np.log(tail)

    def _retry_lens(self, wm, s, radii, log_trunc, e_disc):
        for attempt in range(1, 12):
            u_lens, P = _extra_lens(self.mc, self.n_r, self.keys[s], attempt)
            v, st = _hot.radius_loglik(wm.W, wm.x0, wm.y0, wm.cs, self.xs[s:s + 1], self.ys[s:s + 1],
                                       radii[None], np.array([log_trunc]), u_lens[None], e_disc[None])
            if st[0] != _hot.LENS_EXHAUSTED or P >= MAX_LENS_PROPOSALS:
                return v[0], st[0]
        return v[0], st[0]  # pragma: no cover


def _single_step_set(family, x, y, mc, step_index, track, n_r=None):
    tr = Track(np.array([x, y], dtype=float), times=np.array([step_index, step_index + 1]))
    return StepSet([tr], family, mc, n_r=n_r, track_ids=[track])


def _check_inside(raster, x, y):
    from .habitat import covariates_at

    if covariates_at(raster, x) is None:
        raise ValueError(f"step origin {np.asarray(x).tolist()} is outside the habitat map")


def step_loglik_normal(raster: HabitatRaster, params: RsfParams, x, y, sigma: float,
                       mc: McConfig = McConfig(), step_index: int = 1, track: int = 0) -> StepLogLik:
    """Log of the Monte Carlo step density for the normal kernel."""
    _check_inside(raster, x, y)
    ss = _single_step_set("normal", x, y, mc, step_index, track)
    return StepLogLik(float(ss.logliks(raster, params, Normal(sigma))[0]))


def step_loglik_fixed_radius(raster: HabitatRaster, params: RsfParams, x, y, r: float,
                             mc: McConfig = McConfig(), step_index: int = 1,
                             track: int = 0) -> StepLogLik:
    """Log step density for a constant availability radius; ``-inf`` for
    steps of length ``2r`` or more."""
    _check_inside(raster, x, y)
    ss = _single_step_set("radius", x, y, mc, step_index, track, n_r=1)
    return StepLogLik(float(ss.logliks(raster, params, FixedRadius(r))[0]))


def step_loglik_gamma_radius(raster: HabitatRaster, params: RsfParams, x, y, alpha: float,
                             rho: float, mc: McConfig = McConfig(n_c=30, n_z=30, n_r=30),
                             step_index: int = 1, track: int = 0) -> StepLogLik:
    """Log step density with a gamma(alpha, rho) availability radius."""
    _check_inside(raster, x, y)
    ss = _single_step_set("radius", x, y, mc, step_index, track)
    return StepLogLik(float(ss.logliks(raster, params, GammaRadius(alpha, rho))[0]))


def step_set_for(tracks, kernel: KernelSpec, mc: McConfig, **kw) -> StepSet:
    n_r = 1 if isinstance(kernel, FixedRadius) else None
    return StepSet(tracks, _family(kernel), mc, n_r=n_r, **kw)


def track_step_logliks(track: Track, raster: HabitatRaster, params: RsfParams, kernel: KernelSpec,
                       mc: McConfig = McConfig()) -> list[StepLogLik]:
    """One entry per consecutive pair; non-contributing where an end is
    missing."""
    ss = step_set_for([track], kernel, mc)
    vals = ss.logliks(raster, params, kernel)
    out = [StepLogLik(0.0, False) for _ in range(len(track) - 1)]
    for v, i in zip(vals, ss.position):
        out[i] = StepLogLik(float(v))
    return out


def total(values) -> float:
    """Order-independent sum (exactly rounded)."""
    values = np.asarray(values, dtype=float)
    if np.isneginf(values).any():
        return -math.inf
    return math.fsum(values)


def track_loglik(tracks, raster: HabitatRaster, params: RsfParams, kernel: KernelSpec,
                 mc: McConfig = McConfig()) -> float:
    """Log-likelihood of one track or the joint log-likelihood of several
    independent tracks."""
    ss = step_set_for(tracks, kernel, mc)
    return total(ss.logliks(raster, params, kernel))


def forward_loglik(log_p: np.ndarray, segments, gamma, delta0) -> float:
    """Scaled forward recursion ``delta0 P1 Gamma P2 ... Gamma Pn 1'`` in
    log space, summed over gap-separated segments.

    ``log_p[s, j]`` is the log step density of step ``s`` in state ``j``.
    """
    with np.errstate(divide="ignore"):
        log_g = np.log(np.asarray(gamma, dtype=float))
        log_d = np.log(np.asarray(delta0, dtype=float))
    parts = []
    for seg in segments:
        a = log_d + log_p[seg[0]]
        for s in seg[1:]:
            a = _lse(a[:, None] + log_g, axis=0) + log_p[s]
        parts.append(_lse(a, axis=0))
    return total(parts)


def _lse(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(a - m), axis=axis))


def state_logliks(ss: StepSet, raster, params, hmm: HmmSpec) -> np.ndarray:
    wm = raster.weight_map(params)
    return np.stack([ss.logliks(raster, params, k, wm=wm) for k in hmm.kernels], axis=1)


def hmm_track_loglik(tracks, raster: HabitatRaster, params: RsfParams, hmm: HmmSpec,
                     mc: McConfig = McConfig()) -> float:
    """Log-likelihood of the state-switching model by the forward
    algorithm; each gap-free run of steps starts from ``hmm.delta0``."""
    ss = step_set_for(tracks, hmm.kernels[0], mc)
    log_p = state_logliks(ss, raster, params, hmm)
    if hmm.n_states == 1:
        return total(log_p[:, 0])
    return forward_loglik(log_p, ss.segments, hmm.gamma, hmm.delta0)
