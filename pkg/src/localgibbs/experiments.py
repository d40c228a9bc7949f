"""Replicated simulate -> fit -> decode studies for the three simulation
scenarios.

Tracks start at the centre of a synthetic patchy habitat map. A track is
redrawn if it misses a habitat category or comes closer to the map boundary
than a few kernel scales, where the Monte Carlo normalising sums can vanish.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .habitat import HabitatRaster, RsfParams, log_habitat_utilisation, synthetic_habitat
from .inference import FitError, Model, fit, hessian_se, viterbi
from .kernels import GammaRadius, Normal
from .likelihood import LikelihoodError, McConfig
from .simulator import DEFAULT_K, HmmSpec, simulate_multistate, simulate_track, simulate_until

log = logging.getLogger(__name__)

TRUE_BETA = (3.0, 2.0, 1.0, 0.0)
REFERENCE = "woodland"
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass
class Scenario:
    """One simulation design. ``map_km`` is the side of the square map."""

    number: int
    kernel: str
    n_states: int
    truth: dict
    mc: McConfig
    map_km: float = 30.0
    cell_size: float = 0.1
    patch_scale: float = 0.4
    map_seed: int = 3
    edge_factor: float = 5.0

    def raster(self) -> HabitatRaster:
        n = int(round(self.map_km / self.cell_size))
        return synthetic_habitat(n, n, self.cell_size, patch_scale=self.patch_scale, seed=self.map_seed)

    def kernels(self):
        if self.kernel == "normal":
            return tuple(Normal(s) for s in self.truth["sigma"])
        return (GammaRadius(self.truth["alpha"], self.truth["rho"]),)

    def hmm(self) -> HmmSpec:
        return HmmSpec(np.asarray(self.truth["gamma"], dtype=float), self.kernels())

    @property
    def edge_margin(self) -> float:
        return self.edge_factor * max(k.scale for k in self.kernels())


def scenario(number: int, **overrides) -> Scenario:
    if number == 1:
        base = Scenario(1, "normal", 1, {"sigma": (0.2,)}, McConfig(50, 50))
    elif number == 2:
        # the fast state diffuses far in a few hundred steps, so the map is
        # larger than for the other designs
        base = Scenario(2, "normal", 2, {"sigma": (0.2, 1.0), "gamma": ((0.9, 0.1), (0.1, 0.9))},
                        McConfig(50, 50), map_km=80.0)
    elif number == 3:
        base = Scenario(3, "gamma-radius", 1, {"alpha": 0.7, "rho": 3.0}, McConfig(30, 30, 30))
    else:
        raise ValueError(f"unknown scenario {number}; choose 1, 2 or 3")
    for k, v in overrides.items():
        if v is not None:
            setattr(base, k, v)
    return base


@dataclass
class Replication:
    rep: int
    status: str
    message: str = ""
    estimates: dict = field(default_factory=dict)
    loglik: float | None = None
    log_utilisation: list | None = None
    log_utilisation_error: list | None = None
    accuracy: float | None = None
    mean_radius: float | None = None
    ci95: dict | None = None
    track_attempts: int = 0
    seconds: float = 0.0


def simulate_replicate(sc: Scenario, raster: HabitatRaster, T: int, seed: int, rep: int, K: int = DEFAULT_K):
    """Accepted track (and states for N > 1) for one replication."""
    beta = RsfParams(TRUE_BETA, {raster.names.index(REFERENCE)})
    x0, x1, y0, y1 = raster.extent
    centre = (0.5 * (x0 + x1), 0.5 * (y0 + y1))

    def generate(attempt):
        s = [seed, rep, attempt]
        if sc.n_states == 1:
            return simulate_track(T, centre, sc.kernels()[0], raster, beta, K=K, seed=s), None
        return simulate_multistate(T, centre, sc.hmm(), raster, beta, K=K, seed=s)

    (track, states), attempts = simulate_until(generate, raster, require_all_categories=True,
                                               edge_margin=sc.edge_margin)
    return track, states, attempts


def run_replication(sc: Scenario, raster: HabitatRaster, T: int, rep: int, seed: int = 0, starts: int = 3,
                    K: int = DEFAULT_K, with_se: bool = False) -> Replication:
    t0 = time.perf_counter()
    beta = RsfParams(TRUE_BETA, {raster.names.index(REFERENCE)})
    true_lu = log_habitat_utilisation(raster, beta)
    try:
        track, states, attempts = simulate_replicate(sc, raster, T, seed, rep, K)
        model = Model.for_raster(raster, sc.kernel, sc.n_states, [REFERENCE])
        mc = McConfig(sc.mc.n_c, sc.mc.n_z, sc.mc.n_r, seed=seed * 1000 + rep, lhs=sc.mc.lhs)
        res = fit([track], raster, model, mc, starts=starts, seed=seed * 1000 + rep)
        if with_se:
            res = hessian_se(res, [track], raster, max_rounds=2)
        lu = res.log_utilisation(raster)
        out = Replication(rep, "ok", estimates={k: float(v) for k, v in res.estimates().items()},
                          loglik=res.loglik, log_utilisation=lu.tolist(),
                          log_utilisation_error=(lu - true_lu).tolist(), track_attempts=attempts,
                          ci95=res.ci95())
        if sc.n_states > 1:
            dec = viterbi(track, raster, res.params, res.hmm(), mc)
            ok = dec >= 0
            out.accuracy = float(np.mean(dec[ok] == states[ok]))
        if sc.kernel == "gamma-radius":
            out.mean_radius = res.kernel.alpha / res.kernel.rho
    except (FitError, LikelihoodError, RuntimeError, ValueError, FloatingPointError) as exc:
        log.warning("replication %d failed: %s", rep, exc)
        out = Replication(rep, "failed", message=f"{type(exc).__name__}: {exc}")
    out.seconds = time.perf_counter() - t0
    return out


def summarise(sc: Scenario, reps: list[Replication], raster: HabitatRaster) -> dict:
    ok = [r for r in reps if r.status == "ok"]
    summary = {"n_reps": len(reps), "n_ok": len(ok), "quantiles": list(QUANTILES)}
    if not ok:
        return summary
    for name in ok[0].estimates:
        vals = np.array([r.estimates[name] for r in ok])
        summary[name] = np.quantile(vals, QUANTILES).tolist()
    err = np.abs(np.array([r.log_utilisation_error for r in ok]))
    summary["median_abs_log_utilisation_error"] = dict(zip(raster.names, np.median(err, axis=0).tolist()))
    if sc.kernel == "normal" and sc.n_states == 1:
        sig = np.array([r.estimates["sigma"] for r in ok])
        summary["sigma_within_10pct"] = int(np.sum(np.abs(sig / sc.truth["sigma"][0] - 1) <= 0.1))
    if sc.n_states > 1:
        summary["accuracy"] = np.quantile([r.accuracy for r in ok], QUANTILES).tolist()
        summary["min_accuracy"] = min(r.accuracy for r in ok)
    if sc.kernel == "gamma-radius":
        true_mean = sc.truth["alpha"] / sc.truth["rho"]
        mr = np.array([r.mean_radius for r in ok])
        summary["mean_radius"] = np.quantile(mr, QUANTILES).tolist()
        summary["mean_radius_within_20pct"] = int(np.sum(np.abs(mr / true_mean - 1) <= 0.2))
    return summary


def run_experiment(number: int, reps: int, T: int = 1000, seed: int = 0, starts: int = 3,
                   K: int = DEFAULT_K, with_se: bool = False, progress=None, **overrides) -> dict:
    """Run ``reps`` replications of one scenario. Failures are recorded per
    replication and the run continues."""
    if reps < 1:
        raise ValueError("reps must be at least 1")
    if T < 2:
        raise ValueError("T must be at least 2")
    sc = scenario(number, **overrides)
    raster = sc.raster()
    results = []
    for rep in range(reps):
        r = run_replication(sc, raster, T, rep, seed, starts, K, with_se)
        results.append(r)
        if progress:
            progress(r)
    beta = RsfParams(TRUE_BETA, {raster.names.index(REFERENCE)})
    return {
        "scenario": number,
        "design": {**{k: v for k, v in asdict(sc).items() if k != "mc"}, "mc": sc.mc.as_dict(),
                   "edge_margin": sc.edge_margin, "beta": list(TRUE_BETA), "reference": REFERENCE,
                   "layers": list(raster.names), "T": T, "K": K, "starts": starts, "seed": seed},
        "true_log_utilisation": log_habitat_utilisation(raster, beta).tolist(),
        "replications": [asdict(r) for r in results],
        "summary": summarise(sc, results, raster),
    }

