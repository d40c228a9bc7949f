"""Maximum likelihood fitting of local Gibbs models.

Parameters are optimised on an unconstrained working scale: free selection
coefficients as they are, movement parameters on the log scale, and for
``N > 1`` states the off-diagonal transition probabilities as per-row
multinomial logits against the diagonal.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import ks_2samp

from . import __version__
from .habitat import HabitatRaster, RsfParams, log_habitat_utilisation
from .kernels import KERNEL_TYPES, FixedRadius, GammaRadius, KernelSpec, Normal
from .likelihood import (LikelihoodError, McConfig, StepSet, forward_loglik, state_logliks,
                         step_set_for, total)
from .simulator import DEFAULT_K, FROM_TARGET, HmmSpec, Track, simulate_multistate, simulate_track

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
Z95 = 1.959963984540054
# mean distance of the sum of two uniform points on the unit disc
_DISC_PAIR_MEAN = 128.0 / (45.0 * math.pi)
_RAYLEIGH_MEAN = math.sqrt(math.pi / 2.0)

_KERNEL_PARAMS = {"normal": ("sigma",), "fixed-radius": ("r",), "gamma-radius": ("alpha", "rho")}


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class Model:
    """What is being estimated: kernel family, number of states, and which
    layers are free."""

    kernel: str
    n_states: int
    layer_names: tuple[str, ...]
    reference_indices: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.kernel not in KERNEL_TYPES:
            raise ValueError(f"unknown kernel {self.kernel!r}; choose from {sorted(KERNEL_TYPES)}")
        if self.n_states < 1:
            raise ValueError("need at least one state")
        object.__setattr__(self, "layer_names", tuple(self.layer_names))
        object.__setattr__(self, "reference_indices", frozenset(self.reference_indices))

    @classmethod
    def for_raster(cls, raster: HabitatRaster, kernel: str, n_states: int = 1, reference=()):
        ref = []
        for r in reference:
            if isinstance(r, str):
                if r not in raster.names:
                    raise ValueError(f"reference category {r!r} is not a raster layer or category")
                ref.append(raster.names.index(r))
            else:
                ref.append(int(r))
        return cls(kernel, n_states, raster.names, frozenset(ref))

    @property
    def free_indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(len(self.layer_names)) if i not in self.reference_indices)

    @property
    def n_kernel_params(self) -> int:
        return len(_KERNEL_PARAMS[self.kernel])

    @property
    def n_params(self) -> int:
        n = self.n_states
        return len(self.free_indices) + n * self.n_kernel_params + n * (n - 1)

    def param_names(self) -> list[str]:
        names = [f"beta[{self.layer_names[i]}]" for i in self.free_indices]
        for j in range(self.n_states):
            suffix = "" if self.n_states == 1 else f"[{j + 1}]"
            names += [p + suffix for p in _KERNEL_PARAMS[self.kernel]]
        for i in range(self.n_states):
            for j in range(self.n_states):
                if i != j:
                    names.append(f"gamma[{i + 1},{j + 1}]")
        return names

    def positive_mask(self) -> np.ndarray:
        k = len(self.free_indices)
        m = np.zeros(self.n_params, bool)
        m[k:k + self.n_states * self.n_kernel_params] = True
        return m

    # -- working <-> natural ----------------------------------------------

    def unpack(self, theta):
        """Working vector -> (RsfParams, kernels, transition matrix)."""
        theta = np.asarray(theta, dtype=float)
        k = len(self.free_indices)
        params = RsfParams.from_free(theta[:k], len(self.layer_names), self.reference_indices)
        nk = self.n_kernel_params
        kernels = []
        for j in range(self.n_states):
            vals = np.exp(theta[k + j * nk:k + (j + 1) * nk])
            kernels.append(KERNEL_TYPES[self.kernel](*vals))
        eta = theta[k + self.n_states * nk:]
        return params, tuple(kernels), gamma_from_working(eta, self.n_states)

    def pack(self, params: RsfParams, kernels: Sequence[KernelSpec], gamma=None) -> np.ndarray:
        beta = np.asarray(params.beta, dtype=float)
        parts = [beta[list(self.free_indices)]]
        for kern in kernels:
            parts.append(np.log(np.asarray(kern.values, dtype=float)))
        if self.n_states > 1:
            parts.append(gamma_to_working(gamma))
        return np.concatenate(parts)

    def natural(self, theta) -> np.ndarray:
        """Natural-scale values in :meth:`param_names` order."""
        params, kernels, gamma = self.unpack(theta)
        out = list(params.beta[list(self.free_indices)])
        for kern in kernels:
            out += list(kern.values)
        n = self.n_states
        out += [gamma[i, j] for i in range(n) for j in range(n) if i != j]
        return np.array(out, dtype=float)

    def as_dict(self):
        return {
            "kernel": self.kernel,
            "states": self.n_states,
            "layers": list(self.layer_names),
            "reference": [self.layer_names[i] for i in sorted(self.reference_indices)],
        }

    @classmethod
    def from_dict(cls, d):
        names = tuple(d["layers"])
        return cls(d["kernel"], int(d["states"]), names, frozenset(names.index(r) for r in d["reference"]))


def gamma_from_working(eta, n: int) -> np.ndarray:
    """Row-wise multinomial logit with the diagonal as reference."""
    if n == 1:
        return np.ones((1, 1))
    eta = np.asarray(eta, dtype=float)
    full = np.zeros((n, n))
    full[~np.eye(n, dtype=bool)] = eta
    full -= full.max(axis=1, keepdims=True)
    g = np.exp(full)
    return g / g.sum(axis=1, keepdims=True)


def gamma_to_working(gamma) -> np.ndarray:
    g = np.asarray(gamma, dtype=float)
    n = g.shape[0]
    if n == 1:
        return np.empty(0)
    eta = np.log(g) - np.log(np.diag(g))[:, None]
    return eta[~np.eye(n, dtype=bool)]


# ---------------------------------------------------------------------------
# objective


class Objective:
    """Negative log-likelihood on the working scale with frozen base
    samples."""

    def __init__(self, tracks, raster: HabitatRaster, model: Model, mc: McConfig, **kw):
        self.raster = raster
        self.model = model
        self.mc = mc
        proto = KERNEL_TYPES[model.kernel](*([1.0] * model.n_kernel_params))
        self.steps: StepSet = step_set_for(tracks, proto, mc, **kw)
        if self.steps.n_steps == 0:
            raise FitError("the tracks contain no observed step")
        self.n_evals = 0

    def loglik(self, theta) -> float:
        params, kernels, gamma = self.model.unpack(theta)
        if self.model.n_states == 1:
            return total(self.steps.logliks(self.raster, params, kernels[0]))
        hmm = HmmSpec(gamma, kernels)
        log_p = state_logliks(self.steps, self.raster, params, hmm)
        return forward_loglik(log_p, self.steps.segments, hmm.gamma, hmm.delta0)

    def __call__(self, theta) -> float:
        self.n_evals += 1
        try:
            ll = self.loglik(theta)
        except (LikelihoodError, FloatingPointError, ValueError, OverflowError):
            return math.inf
        if not math.isfinite(ll):
            return math.inf
        return -ll


# ---------------------------------------------------------------------------
# results


@dataclass
class FitResult:
    model: Model
    theta: np.ndarray
    loglik: float
    mc: McConfig
    seed: int
    starts: list = field(default_factory=list)
    converged: bool = False
    se_working: np.ndarray | None = None
    cov_working: np.ndarray | None = None
    hessian_mc: list = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def params(self) -> RsfParams:
        return self.model.unpack(self.theta)[0]

    @property
    def kernels(self) -> tuple[KernelSpec, ...]:
        return self.model.unpack(self.theta)[1]

    @property
    def kernel(self) -> KernelSpec:
        return self.kernels[0]

    @property
    def gamma(self) -> np.ndarray:
        return self.model.unpack(self.theta)[2]

    def hmm(self) -> HmmSpec:
        return HmmSpec(self.gamma, self.kernels)

    def estimates(self) -> dict:
        return dict(zip(self.model.param_names(), self.model.natural(self.theta)))

    def se(self) -> dict | None:
        """Natural-scale standard errors (delta method for positive and
        transition parameters)."""
        if self.se_working is None:
            return None
        nat = self.model.natural(self.theta)
        jac = _natural_jacobian(self.model, self.theta)
        cov = self.cov_working
        var = np.einsum("ij,jk,ik->i", jac, cov, jac)
        out = np.sqrt(np.maximum(var, 0.0))
        return dict(zip(self.model.param_names(), out)) if nat.size else {}

    def ci95(self) -> dict | None:
        """Wald intervals on the working scale, mapped back: plain for
        selection coefficients, exponentiated for movement parameters,
        delta method (clipped to [0, 1]) for transition probabilities."""
        if self.se_working is None:
            return None
        names = self.model.param_names()
        nat = self.model.natural(self.theta)
        pos = self.model.positive_mask()
        se_nat = self.se()
        out = {}
        for k, name in enumerate(names):
            if k < len(self.model.free_indices):
                lo, hi = nat[k] - Z95 * self.se_working[k], nat[k] + Z95 * self.se_working[k]
            elif pos[k]:
                lo = math.exp(self.theta[k] - Z95 * self.se_working[k])
                hi = math.exp(self.theta[k] + Z95 * self.se_working[k])
            else:
                s = se_nat[name]
                lo, hi = max(0.0, nat[k] - Z95 * s), min(1.0, nat[k] + Z95 * s)
            out[name] = [lo, hi]
        return out

    def log_utilisation(self, raster: HabitatRaster) -> np.ndarray:
        return log_habitat_utilisation(raster, self.params)

    def to_dict(self) -> dict:
        est = self.estimates()
        d = {
            "format_version": FORMAT_VERSION,
            "tool_version": __version__,
            "model": self.model.as_dict(),
            "estimates": est,
            "beta": dict(zip(self.model.layer_names, map(float, self.params.beta))),
            "se": _clean(self.se()),
            "ci95": _clean(self.ci95()),
            "loglik": self.loglik,
            "mc": self.mc.as_dict(),
            "starts": self.starts,
            "seed": self.seed,
            "convergence": {"converged": bool(self.converged), "n_starts": len(self.starts),
                            "n_converged": sum(bool(s.get("converged")) for s in self.starts)},
            "working": [float(v) for v in self.theta],
            "cov_working": None if self.cov_working is None else self.cov_working.tolist(),
            "hessian_mc": self.hessian_mc,
            "elapsed_seconds": self.elapsed,
        }
        if self.model.n_states > 1:
            d["gamma"] = self.gamma.tolist()
            d["delta0"] = self.hmm().delta0.tolist()
        return d

    @classmethod
    def from_dict(cls, d) -> FitResult:
        model = Model.from_dict(d["model"])
        res = cls(model, np.array(d["working"], dtype=float), float(d["loglik"]),
                  McConfig(**d["mc"]), int(d["seed"]), list(d.get("starts", [])),
                  bool(d.get("convergence", {}).get("converged", False)))
        if d.get("cov_working") is not None:
            res.cov_working = np.array(d["cov_working"], dtype=float)
            res.se_working = np.sqrt(np.diag(res.cov_working))
        res.hessian_mc = list(d.get("hessian_mc", []))
        return res

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> FitResult:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def table(self) -> str:
        """Estimates with 95% intervals, one parameter per line."""
        ci = self.ci95() or {}
        lines = []
        for name, v in self.estimates().items():
            if name in ci:
                lo, hi = ci[name]
                lines.append(f"{name:24s} {v:.2f} ({lo:.2f}, {hi:.2f})")
            else:
                lines.append(f"{name:24s} {v:.2f}")
        for i in sorted(self.model.reference_indices):
            lines.append(f"beta[{self.model.layer_names[i]}] (reference){'':4s} 0")
        return "\n".join(lines)


def _clean(d):
    if d is None:
        return None
    return {k: (list(map(float, v)) if isinstance(v, (list, tuple)) else float(v)) for k, v in d.items()}


def _natural_jacobian(model: Model, theta, h=1e-6):
    theta = np.asarray(theta, dtype=float)
    base = model.natural(theta)
    jac = np.zeros((base.size, theta.size))
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        jac[:, j] = (model.natural(theta + e) - model.natural(theta - e)) / (2 * h)
    return jac


# ---------------------------------------------------------------------------
# fitting


def check_categories_visited(tracks, raster: HabitatRaster, model: Model):
    """Every free category indicator must be 1 at some observed location,
    otherwise its coefficient runs off to -inf."""
    pts = np.concatenate([t.points[t.observed] for t in tracks])
    row, col, inside = raster.cell_index(pts)
    for group, idx in raster.categorical.items():
        for i in idx:
            if i in model.reference_indices:
                continue
            if not np.any(raster.layers[i, row[inside], col[inside]] > 0):
                raise ValueError(f"category {raster.names[i]!r} is never visited by the tracks; "
                               f"its coefficient cannot be estimated")


def initial_points(model: Model, tracks, n: int, rng) -> np.ndarray:
    """Random starting points on the working scale.

    Selection coefficients ~ U(-2, 2). Movement scales are placed from the
    observed step-length quartiles using the flat-habitat relation between
    kernel scale and mean step length.
    """
    steps = np.concatenate([t.step_lengths() for t in tracks])
    steps = steps[steps > 0]
    if steps.size == 0:
        raise FitError("all observed steps have zero length")
    q25, q75 = np.quantile(steps, [0.25, 0.75])
    nb = len(model.free_indices)
    S = model.n_states
    out = []
    for _ in range(n):
        parts = [rng.uniform(-2.0, 2.0, nb)]
        if model.kernel == "normal":
            lo = math.log(q25 / (math.sqrt(2.0) * _RAYLEIGH_MEAN))
            hi = math.log(q75 / (math.sqrt(2.0) * _RAYLEIGH_MEAN))
            parts.append(np.sort(rng.uniform(lo, hi, S)))
        elif model.kernel == "fixed-radius":
            # every observed step must be shorter than 2r
            lo = math.log(steps.max() / 2.0 * 1.02)
            parts.append(np.sort(rng.uniform(lo, lo + math.log(2.0), S)))
        else:
            log_mean = np.sort(rng.uniform(math.log(q25 / _DISC_PAIR_MEAN), math.log(q75 / _DISC_PAIR_MEAN), S))
            log_alpha = rng.uniform(math.log(0.3), math.log(3.0), S)
            for j in range(S):
                parts.append(np.array([log_alpha[j], log_alpha[j] - log_mean[j]]))
        if S > 1:
            parts.append(rng.uniform(-3.0, -1.0, S * (S - 1)))
        out.append(np.concatenate(parts))
    return np.array(out).reshape(n, model.n_params)


def _simplex(x0, step=0.3):
    k = len(x0)
    sim = np.tile(x0, (k + 1, 1))
    sim[1:] += step * np.eye(k)
    return sim


def _nelder_mead(obj, x0, xatol, fatol, maxfev):
    res = minimize(obj, x0, method="Nelder-Mead",
                   options={"initial_simplex": _simplex(x0), "xatol": xatol, "fatol": fatol,
                            "maxfev": maxfev, "adaptive": len(x0) > 4})
    # one restart from the best vertex guards against a collapsed simplex
    res2 = minimize(obj, res.x, method="Nelder-Mead",
                    options={"initial_simplex": _simplex(res.x, 0.1), "xatol": xatol, "fatol": fatol,
                             "maxfev": maxfev, "adaptive": len(x0) > 4})
    nfev = res.nfev + res2.nfev
    best = res2 if res2.fun <= res.fun else res
    return best, nfev, bool(res.success and res2.success)


def fit(tracks, raster: HabitatRaster, model: Model, mc: McConfig = McConfig(), starts: int = 10,
        seed: int = 0, xatol: float = 1e-3, fatol: float = 1e-3, maxfev: int | None = None,
        init=None) -> FitResult:
    """Multi-start Nelder-Mead maximisation of the approximate likelihood.

    All starts share one set of base samples (``mc.seed``), so their maxima
    are comparable; starting points are drawn from ``seed``. ``init`` adds
    explicit working-scale starting points in front of the random ones.
    """
    if isinstance(tracks, Track):
        tracks = [tracks]
    if starts < 1 and init is None:
        raise ValueError("need at least one start")
    t0 = time.perf_counter()
    check_categories_visited(tracks, raster, model)
    obj = Objective(tracks, raster, model, mc)
    rng = np.random.default_rng(seed)
    x0s = initial_points(model, tracks, starts, rng)
    if init is not None:
        x0s = np.vstack([np.atleast_2d(np.asarray(init, dtype=float)), x0s])
    maxfev = maxfev or 400 * model.n_params
    trace = []
    best = None
    for k, x0 in enumerate(x0s):
        f0 = obj(x0)
        if not math.isfinite(f0):
            trace.append({"start": k, "x0": x0.tolist(), "loglik": None, "converged": False,
                          "message": "likelihood not finite at starting point", "nfev": 1})
            log.info("start %d: infinite objective at starting point", k)
            continue
        res, nfev, ok = _nelder_mead(obj, x0, xatol, fatol, maxfev)
        ll = -float(res.fun)
        trace.append({"start": k, "x0": x0.tolist(), "x": res.x.tolist(),
                      "loglik": ll if math.isfinite(ll) else None, "converged": ok,
                      "nfev": int(nfev), "message": str(res.message)})
        log.info("start %d: loglik %.4f after %d evaluations", k, ll, nfev)
        if math.isfinite(ll) and (best is None or ll > best[0]):
            best = (ll, res.x.copy(), ok)
    if best is None:
        raise FitError("every start failed: the likelihood was not finite at any starting point")
    ll, theta, ok = best
    theta = _canonical_order(model, theta)
    return FitResult(model, theta, ll, mc, seed, trace, ok, elapsed=time.perf_counter() - t0)


def _canonical_order(model: Model, theta):
    """Sort states by movement scale so that state 1 is the slowest."""
    if model.n_states == 1:
        return theta
    params, kernels, gamma = model.unpack(theta)
    order = np.argsort([k.scale for k in kernels], kind="stable")
    return model.pack(params, [kernels[j] for j in order], gamma[np.ix_(order, order)])


# ---------------------------------------------------------------------------
# standard errors


def fd_hessian(f, x, rel_step=1e-4, steps=None):
    """Central finite-difference Hessian with steps
    ``rel_step * max(1, |x_i|)``, or the explicit ``steps`` where given
    (NaN entries fall back to the relative rule)."""
    x = np.asarray(x, dtype=float)
    k = x.size
    h = rel_step * np.maximum(1.0, np.abs(x))
    if steps is not None:
        steps = np.asarray(steps, dtype=float)
        h = np.where(np.isnan(steps), h, steps)
    f0 = f(x)
    H = np.zeros((k, k))
    fp = np.empty(k)
    fm = np.empty(k)
    for i in range(k):
        e = np.zeros(k)
        e[i] = h[i]
        fp[i] = f(x + e)
        fm[i] = f(x - e)
        H[i, i] = (fp[i] - 2.0 * f0 + fm[i]) / h[i] ** 2
    for i in range(k):
        for j in range(i + 1, k):
            ei = np.zeros(k)
            ej = np.zeros(k)
            ei[i] = h[i]
            ej[j] = h[j]
            v = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4.0 * h[i] * h[j])
            H[i, j] = H[j, i] = v
    return H


def se_from_hessian(H):
    """Standard errors from the Hessian of a *negative* log-likelihood."""
    H = 0.5 * (H + H.T)
    if not np.all(np.isfinite(H)):
        raise FitError("Hessian has non-finite entries")
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise FitError("Hessian of the negative log-likelihood is not positive definite: "
                       "not at a maximum, or a parameter is not identifiable") from None
    cov = np.linalg.inv(H)
    return np.sqrt(np.diag(cov)), cov


def hessian_se(result: FitResult, tracks, raster: HabitatRaster, mc: McConfig | None = None,
               rel_step: float = 1e-4, movement_step: float | None = 0.1, max_rounds: int = 3,
               tol: float = 0.02, growth: float = 2.0) -> FitResult:
    """Hessian-based standard errors at the optimum.

    Selection and transition coordinates use steps ``rel_step * max(1,
    |theta_i|)``. Movement parameters move the Monte Carlo end points across
    raster cell boundaries, which makes the objective piecewise constant at
    small scales, so their (log-scale) coordinates use the fixed step
    ``movement_step`` instead; pass ``None`` to use the relative rule
    everywhere.

    The Hessian is recomputed with Monte Carlo sizes multiplied by ``growth``
    each round until two successive SE vectors agree to ``tol`` (relative),
    or ``max_rounds`` is reached.
    """
    if isinstance(tracks, Track):
        tracks = [tracks]
    mc = mc or result.mc
    prev = None
    history = []
    se = cov = None
    steps = None
    if movement_step is not None:
        steps = np.where(result.model.positive_mask(), movement_step, np.nan)
    for rnd in range(max_rounds):
        obj = Objective(tracks, raster, result.model, mc)
        H = fd_hessian(obj, result.theta, rel_step, steps)
        se, cov = se_from_hessian(H)
        change = None if prev is None else float(np.max(np.abs(se - prev) / np.maximum(np.abs(prev), 1e-300)))
        history.append({**mc.as_dict(), "max_rel_change": change, "se_working": se.tolist()})
        if prev is not None and change < tol:
            break
        prev = se
        mc = McConfig(n_c=int(round(mc.n_c * growth)), n_z=int(round(mc.n_z * growth)),
                      n_r=int(round(mc.n_r * growth)) if result.model.kernel == "gamma-radius" else mc.n_r,
                      seed=mc.seed, lhs=mc.lhs)
    result.se_working = se
    result.cov_working = cov
    result.hessian_mc = history
    return result


# ---------------------------------------------------------------------------
# decoding


def viterbi_path(log_p, segments, gamma, delta0) -> np.ndarray:
    """Most likely state of every step (max-product in log space). Ties go
    to the lower state index."""
    with np.errstate(divide="ignore"):
        log_g = np.log(np.asarray(gamma, dtype=float))
        log_d = np.log(np.asarray(delta0, dtype=float))
    out = np.full(len(log_p), -1, dtype=np.int64)
    for seg in segments:
        n = len(seg)
        v = log_d + log_p[seg[0]]
        back = np.zeros((n, len(log_d)), dtype=np.int64)
        for k in range(1, n):
            cand = v[:, None] + log_g
            back[k] = np.argmax(cand, axis=0)
            v = cand[back[k], np.arange(len(v))] + log_p[seg[k]]
        s = int(np.argmax(v))
        path = np.empty(n, dtype=np.int64)
        path[-1] = s
        for k in range(n - 1, 0, -1):
            s = int(back[k, s])
            path[k - 1] = s
        out[seg] = path
    return out


def viterbi(track: Track, raster: HabitatRaster, params: RsfParams, hmm: HmmSpec,
            mc: McConfig = McConfig()) -> np.ndarray:
    """Decoded 0-based state for every row of the track that starts an
    observed step; -1 elsewhere."""
    if hmm.n_states < 2:
        raise ValueError("decoding requires N >= 2 states")
    ss = step_set_for([track], hmm.kernels[0], mc)
    log_p = state_logliks(ss, raster, params, hmm)
    path = viterbi_path(log_p, ss.segments, hmm.gamma, hmm.delta0)
    out = np.full(len(track), -1, dtype=np.int64)
    out[ss.position] = path
    return out


# ---------------------------------------------------------------------------
# goodness of fit


def simulate_from_fit(result: FitResult, raster: HabitatRaster, n: int, seed=None,
                      K: int = DEFAULT_K) -> Track:
    params = result.params
    if result.model.n_states == 1:
        return simulate_track(n, FROM_TARGET, result.kernel, raster, params, K=K, seed=seed)
    return simulate_multistate(n, FROM_TARGET, result.hmm(), raster, params, K=K, seed=seed)[0]


def gof_steplengths(result: FitResult, tracks, raster: HabitatRaster, sim_length: int = 10_000,
                    seed=None, bin_width: float = 0.05, K: int = DEFAULT_K) -> dict:
    """Compare observed step lengths with those of a track simulated from
    the fitted model: binned densities plus the two-sample KS statistic."""
    if isinstance(tracks, Track):
        tracks = [tracks]
    obs = np.concatenate([t.step_lengths() for t in tracks])
    if obs.size < 2:
        raise ValueError(f"too few observed steps for a comparison ({obs.size})")
    sim = simulate_from_fit(result, raster, sim_length, seed=seed, K=K).step_lengths()
    top = max(obs.max(), sim.max())
    edges = np.arange(0.0, top + bin_width, bin_width)
    if edges[-1] < top:
        edges = np.append(edges, edges[-1] + bin_width)
    obs_d, _ = np.histogram(obs, edges, density=True)
    sim_d, _ = np.histogram(sim, edges, density=True)
    ks = ks_2samp(obs, sim)
    return {
        "bin_lo": edges[:-1],
        "bin_hi": edges[1:],
        "observed_density": obs_d,
        "simulated_density": sim_d,
        "ks_statistic": float(ks.statistic),
        "ks_pvalue": float(ks.pvalue),
        "n_observed": int(obs.size),
        "n_simulated": int(sim.size),
    }


__all__ = [
    "FitError", "FitResult", "Model", "Objective", "fit", "hessian_se", "fd_hessian",
    "se_from_hessian", "viterbi", "viterbi_path", "gof_steplengths", "simulate_from_fit",
    "gamma_from_working", "gamma_to_working", "initial_points", "check_categories_visited",
    "Normal", "FixedRadius", "GammaRadius",
]
