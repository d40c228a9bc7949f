"""Track simulation from the local Gibbs movement model.

One step from ``x``: draw a centre ``mu`` from the transition density around
``x``, draw ``K`` candidates from the transition density around ``mu`` and
move to one of them with probability proportional to its habitat weight.
Candidates off the map have weight zero.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _hot
from .habitat import HabitatRaster, RsfParams, WeightMap
from .kernels import (FixedRadius, GammaRadius, KernelSpec, Normal, gamma_quantile,
                      standard_normal_offsets, unit_disc_offsets)

DEFAULT_K = 200
MAX_REDRAWS = 1000
FROM_TARGET = "target"
_CHUNK = 2048


@dataclass(frozen=True)
class Track:
    """Locations at regular time indices; missing fixes are NaN rows."""

    points: np.ndarray
    times: np.ndarray | None = None
    states: np.ndarray | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        times = np.arange(1, len(pts) + 1) if self.times is None else np.array(self.times, dtype=np.int64)
        if times.shape != (len(pts),):
            raise ValueError("times and points differ in length")
        if np.any(np.diff(times) <= 0):
            raise ValueError("time indices must be strictly increasing")
        # a fix with one coordinate missing is treated as missing
        pts[np.isnan(pts).any(axis=1)] = np.nan
        if np.sum(~np.isnan(pts[:, 0])) < 2:
            raise ValueError("a track needs at least two observed locations")
        states = None
        if self.states is not None:
            states = np.array(self.states, dtype=np.int64)
            if states.shape != (len(pts),):
                raise ValueError("states and points differ in length")
        for arr in (pts, times, states):
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    def __len__(self):
        return len(self.points)

    @property
    def observed(self) -> np.ndarray:
        return ~np.isnan(self.points[:, 0])

    def step_index(self) -> np.ndarray:
        """Positions ``i`` such that ``(points[i], points[i+1])`` is an
        observed step between consecutive time indices."""
        obs = self.observed
        ok = obs[:-1] & obs[1:] & (np.diff(self.times) == 1)
        return np.flatnonzero(ok)

    def step_lengths(self) -> np.ndarray:
        i = self.step_index()
        return np.hypot(*(self.points[i + 1] - self.points[i]).T)


@dataclass(frozen=True)
class HmmSpec:
    """Markov switching between ``N`` movement kernels sharing one habitat
    model. ``delta0`` defaults to the stationary distribution of ``gamma``."""

    gamma: np.ndarray
    kernels: tuple[KernelSpec, ...]
    delta0: np.ndarray | None = field(default=None)

    def __post_init__(self):
        g = np.array(self.gamma, dtype=float)
        n = len(self.kernels)
        if n < 1:
            raise ValueError("need at least one state")
        if g.shape != (n, n):
            raise ValueError(f"transition matrix must be {n}x{n}")
        if np.any(g < 0) or np.any(g > 1) or not np.allclose(g.sum(axis=1), 1.0, atol=1e-12, rtol=0):
            raise ValueError("transition matrix rows must be probability vectors")
        if len({type(k) for k in self.kernels}) != 1:
            raise ValueError("all states must use the same kernel family")
        d = stationary_distribution(g) if self.delta0 is None else np.array(self.delta0, dtype=float)
        if d.shape != (n,) or np.any(d < 0) or not math.isclose(d.sum(), 1.0, abs_tol=1e-12):
            raise ValueError("initial distribution must be a probability vector over the states")
        g.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "delta0", d)
        object.__setattr__(self, "kernels", tuple(self.kernels))

    @property
    def n_states(self) -> int:
        return len(self.kernels)


def stationary_distribution(gamma) -> np.ndarray:
    """Solve ``delta Gamma = delta`` with ``sum(delta) = 1``."""
    g = np.asarray(gamma, dtype=float)
    n = g.shape[0]
    a = np.eye(n) - g + np.ones((n, n))
    try:
        d = np.linalg.solve(a.T, np.ones(n))
    except np.linalg.LinAlgError:
        # reducible chain: fall back to a uniform start
        return np.full(n, 1.0 / n)
    d = np.clip(d, 0.0, None)
    return d / d.sum()


# ---------------------------------------------------------------------------
# step offsets


def _draw_offsets(rng, kernel: KernelSpec, n: int, K: int):
    """Standardised centre/candidate offsets and the per-step scale."""
    u_mu = np.clip(rng.random((n, 2)), 1e-300, None)
    u_z = np.clip(rng.random((n, K, 2)), 1e-300, None)
    u_choice = rng.random(n)
    if isinstance(kernel, Normal):
        return standard_normal_offsets(u_mu), standard_normal_offsets(u_z), np.full(n, kernel.sigma), u_choice
    e_mu, e_z = unit_disc_offsets(u_mu), unit_disc_offsets(u_z)
    if isinstance(kernel, FixedRadius):
        scale = np.full(n, kernel.r)
    else:
        scale = gamma_quantile(rng.random(n), kernel.alpha, kernel.rho)
    return e_mu, e_z, scale, u_choice


def _draw_offsets_multi(rng, kernels, states, K):
    first = kernels[0]
    n = len(states)
    e_mu, e_z, _, u_choice = _draw_offsets(rng, first, n, K)
    if isinstance(first, GammaRadius):
        u_r = rng.random(n)
        alpha = np.array([k.alpha for k in kernels])[states]
        rho = np.array([k.rho for k in kernels])[states]
        scale = gamma_quantile(u_r, alpha, rho)
    else:
        scale = np.array([k.scale for k in kernels])[states]
    return e_mu, e_z, scale, u_choice


def _run_chain(wm: WeightMap, start, n_steps, K, rng, draw):
    """Advance the chain ``n_steps`` times. ``draw(rng, lo, hi)`` returns
    offsets for steps ``lo..hi-1``; a step whose candidates all have zero
    weight is redrawn."""
    out = np.empty((n_steps, 2))
    pos = np.array(start, dtype=float)
    done = 0
    while done < n_steps:
        hi = min(done + _CHUNK, n_steps)
        e_mu, e_z, scale, u_choice = draw(rng, done, hi)
        offset = 0
        while offset < hi - done:
            pts, failed = _hot.simulate_chunk(
                wm.W, wm.x0, wm.y0, wm.cs, pos,
                np.ascontiguousarray(e_mu[offset:]), np.ascontiguousarray(e_z[offset:]),
                np.ascontiguousarray(scale[offset:]), np.ascontiguousarray(u_choice[offset:]))
            n_ok = (hi - done - offset) if failed < 0 else failed
            out[done + offset:done + offset + n_ok] = pts[:n_ok]
            if n_ok:
                pos = pts[n_ok - 1].copy()
            offset += n_ok
            if failed < 0:
                break
            step = done + offset
            for _ in range(MAX_REDRAWS):
                r_mu, r_z, r_scale, r_choice = draw(rng, step, step + 1)
                pts1, f1 = _hot.simulate_chunk(wm.W, wm.x0, wm.y0, wm.cs, pos, r_mu, r_z, r_scale, r_choice)
                if f1 < 0:
                    break
            else:
                raise RuntimeError(
                    f"no candidate with positive habitat weight after {MAX_REDRAWS} redraws "
                    f"at step {step + 1} from {pos.tolist()}")
            pos = pts1[0].copy()
            out[step] = pos
            offset += 1
        done = hi
    return out


def sample_from_target(wm: WeightMap, rng, n=1) -> np.ndarray:
    """Exact draws from the utilisation distribution: weighted cell choice,
    then uniform within the cell."""
    p = wm.W.ravel() / wm.W.sum()
    cells = rng.choice(p.size, size=n, p=p)
    row, col = np.divmod(cells, wm.W.shape[1])
    u = rng.random((n, 2))
    return np.stack([wm.x0 + (col + u[:, 0]) * wm.cs, wm.y0 + (row + u[:, 1]) * wm.cs], axis=-1)


def _start(wm, init, rng):
    if isinstance(init, str):
        if init != FROM_TARGET:
            raise ValueError(f"unknown initial location {init!r}")
        return sample_from_target(wm, rng)[0]
    x = np.asarray(init, dtype=float)
    if wm.weights(x)[0] == 0.0:
        raise ValueError(f"initial location {x.tolist()} has no habitat weight")
    return x


def local_gibbs_step(x, kernel: KernelSpec, raster: HabitatRaster, params: RsfParams,
                     K: int = DEFAULT_K, rng=None) -> np.ndarray:
    """One transition of the chain from ``x``."""
    if K < 1:
        raise ValueError("K must be at least 1")
    rng = np.random.default_rng(rng)
    wm = raster.weight_map(params)
    if wm.weights(x)[0] == 0.0:
        raise ValueError(f"{np.asarray(x).tolist()} is outside the habitat map")
    return _run_chain(wm, x, 1, K, rng, lambda g, lo, hi: _draw_offsets(g, kernel, hi - lo, K))[0]


def simulate_track(T: int, init, kernel: KernelSpec, raster: HabitatRaster, params: RsfParams,
                   K: int = DEFAULT_K, seed=None) -> Track:
    """Simulate ``T`` locations. ``init`` is a point or ``"target"`` for a
    draw from the utilisation distribution."""
    if T < 2:
        raise ValueError("T must be at least 2")
    if K < 1:
        raise ValueError("K must be at least 1")
    rng = np.random.default_rng(seed)
    wm = raster.weight_map(params)
    x1 = _start(wm, init, rng)
    rest = _run_chain(wm, x1, T - 1, K, rng, lambda g, lo, hi: _draw_offsets(g, kernel, hi - lo, K))
    return Track(np.vstack([x1, rest]))


def simulate_states(T: int, hmm: HmmSpec, rng) -> np.ndarray:
    u = rng.random(T)
    cum_g = np.cumsum(hmm.gamma, axis=1)
    states = np.empty(T, dtype=np.int64)
    states[0] = min(np.searchsorted(np.cumsum(hmm.delta0), u[0], side="right"), hmm.n_states - 1)
    for t in range(1, T):
        row = cum_g[states[t - 1]]
        states[t] = min(np.searchsorted(row, u[t], side="right"), hmm.n_states - 1)
    return states


def simulate_multistate(T: int, init, hmm: HmmSpec, raster: HabitatRaster, params: RsfParams,
                        K: int = DEFAULT_K, seed=None) -> tuple[Track, np.ndarray]:
    """Simulate a state-switching track. The step from ``x_t`` uses the
    kernel of state ``S_t``; returns the track (with states attached) and
    the 0-based state sequence."""
    if T < 2:
        raise ValueError("T must be at least 2")
    rng = np.random.default_rng(seed)
    states = simulate_states(T, hmm, rng)
    wm = raster.weight_map(params)
    x1 = _start(wm, init, rng)
    rest = _run_chain(wm, x1, T - 1, K, rng,
                      lambda g, lo, hi: _draw_offsets_multi(g, hmm.kernels, states[lo:hi], K))
    return Track(np.vstack([x1, rest]), states=states), states


# ---------------------------------------------------------------------------
# rejection of unsuitable tracks

MAX_TRACK_TRIES = 100


def visits_all_categories(track: Track, raster: HabitatRaster) -> bool:
    """True if every layer of every categorical group is 1 at some observed
    location of the track."""
    row, col, inside = raster.cell_index(track.points[track.observed])
    for idx in raster.categorical.values():
        for i in idx:
            if not np.any(raster.layers[i, row[inside], col[inside]] > 0):
                return False
    return True


def distance_to_edge(track: Track, raster: HabitatRaster) -> float:
    """Smallest distance from an observed location to the map boundary."""
    p = track.points[track.observed]
    x0, x1, y0, y1 = raster.extent
    return float(min((p[:, 0] - x0).min(), (x1 - p[:, 0]).min(), (p[:, 1] - y0).min(), (y1 - p[:, 1]).min()))


def simulate_until(generate, raster: HabitatRaster, require_all_categories=False, edge_margin=0.0,
                   max_tries=MAX_TRACK_TRIES):
    """Call ``generate(attempt)`` until its track (first element if a tuple
    is returned) passes the checks. Returns ``(result, attempts)``."""
    for attempt in range(max_tries):
        out = generate(attempt)
        track = out[0] if isinstance(out, tuple) else out
        if require_all_categories and not visits_all_categories(track, raster):
            continue
        if edge_margin > 0 and distance_to_edge(track, raster) < edge_margin:
            continue
        return out, attempt + 1
    raise RuntimeError(f"no acceptable track after {max_tries} attempts "
                       f"(require_all_categories={require_all_categories}, edge_margin={edge_margin})")


# ---------------------------------------------------------------------------
# CSV


def write_track_csv(path, track: Track):
    """Columns ``t,x,y,state``; empty cells for missing values. States are
    written 1-based."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "state"])
        for k, (t, (x, y)) in enumerate(zip(track.times, track.points)):
            sx = "" if math.isnan(x) else repr(float(x))
            sy = "" if math.isnan(y) else repr(float(y))
            st = "" if track.states is None else str(int(track.states[k]) + 1)
            w.writerow([int(t), sx, sy, st])


def read_track_csv(path) -> Track:
    path = Path(path)
    times, pts, states = [], [], []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"t", "x", "y"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            times.append(int(row["t"]))
            x, y = row["x"].strip(), row["y"].strip()
            pts.append((float(x) if x else math.nan, float(y) if y else math.nan))
            s = (row.get("state") or "").strip()
            states.append(int(s) - 1 if s else None)
    if any(s is None for s in states):
        st = None
    else:
        st = np.array(states)
    return Track(np.array(pts), np.array(times), st)
