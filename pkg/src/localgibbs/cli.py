"""Command-line front end.

Every command writes a ``<output>.meta.json`` sidecar (or embeds a
``metadata`` block in JSON outputs) holding all effective settings and the
tool version, which is enough to rerun it.

Exit codes: 0 success, 1 numerical or model failure, 2 invalid input.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend_name
from .experiments import run_experiment
from .habitat import HabitatRaster, RsfParams, load_manifest, save_categorical, synthetic_habitat
from .inference import FitError, FitResult, Model, fit, gof_steplengths, hessian_se, viterbi
from .kernels import KERNEL_TYPES
from .likelihood import LikelihoodError, McConfig
from .simulator import (FROM_TARGET, HmmSpec, Track, read_track_csv, simulate_multistate, simulate_track,
                        simulate_until, write_track_csv)

FORMAT_VERSION = 1
log = logging.getLogger("localgibbs")

MC_DEFAULTS = {"normal": (50, 50, 1), "fixed-radius": (50, 50, 1), "gamma-radius": (30, 30, 30)}


class InputError(ValueError):
    pass


# ---------------------------------------------------------------------------
# helpers


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise InputError(f"expected comma-separated numbers, got {text!r}") from None


def _matrix(text: str) -> np.ndarray:
    """``"0.9,0.1;0.1,0.9"`` -> 2x2 array."""
    rows = [_floats(r) for r in str(text).split(";") if r.strip()]
    if len({len(r) for r in rows}) != 1:
        raise InputError(f"ragged matrix {text!r}")
    return np.array(rows)


def _as_list(v):
    if v is None:
        return None
    return v if isinstance(v, list) else [v]


def _beta(raster: HabitatRaster, items) -> RsfParams:
    """``name=value`` pairs; unnamed layers get 0."""
    beta = np.zeros(raster.n_layers)
    for item in _as_list(items) or []:
        name, _, value = str(item).partition("=")
        if name not in raster.names:
            raise InputError(f"--beta names unknown layer {name!r}; raster has {list(raster.names)}")
        try:
            beta[raster.names.index(name)] = float(value)
        except ValueError:
            raise InputError(f"--beta entry {item!r} is not name=number") from None
    return RsfParams(beta)


def _kernels(args, n_states):
    kind = args.kernel
    if kind == "normal":
        vals = [(v,) for v in _need(args, "sigma", n_states)]
    elif kind == "fixed-radius":
        vals = [(v,) for v in _need(args, "r", n_states)]
    else:
        vals = list(zip(_need(args, "alpha", n_states), _need(args, "rho", n_states)))
    try:
        return tuple(KERNEL_TYPES[kind](*v) for v in vals)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _need(args, name, n):
    raw = getattr(args, name)
    if raw is None:
        raise InputError(f"--{name} is required for the {args.kernel} kernel")
    vals = _floats(raw)
    if len(vals) != n:
        raise InputError(f"--{name} needs {n} value(s), got {len(vals)}")
    return vals


def _load_tracks(paths) -> list[Track]:
    tracks = []
    for p in _as_list(paths) or []:
        if not Path(p).exists():
            raise FileNotFoundError(f"track file not found: {p}")
        tracks.append(read_track_csv(p))
    if not tracks:
        raise InputError("no track files given")
    return tracks


def _check_on_map(tracks, raster: HabitatRaster):
    for k, tr in enumerate(tracks):
        _, _, inside = raster.cell_index(tr.points[tr.observed])
        if not inside.all():
            t = tr.times[tr.observed][np.argmin(inside)]
            raise InputError(f"track {k}: location at t={t} lies outside the habitat map")


def _mc(args, kernel):
    nc, nz, nr = MC_DEFAULTS[kernel]
    return McConfig(args.nc or nc, args.nz or nz, args.nr or nr, seed=args.mc_seed, lhs=not args.no_lhs)


def _metadata(args, **extra):
    settings = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    return {"format_version": FORMAT_VERSION, "tool": "localgibbs", "tool_version": __version__,
            "backend": backend_name(), "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "settings": settings, **extra}


def _write_meta(out: Path, meta: dict):
    Path(str(out) + ".meta.json").write_text(json.dumps(_jsonable(meta), indent=2))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


# ---------------------------------------------------------------------------
# commands


def cmd_make_habitat(args):
    raster = synthetic_habitat(args.rows, args.cols, args.cell_size, patch_scale=args.patch_scale, seed=args.seed)
    out = save_categorical(raster, args.out_dir, args.name)
    _write_meta(out, _metadata(args))
    print(out)


def cmd_simulate(args):
    raster = load_manifest(args.raster)
    params = _beta(raster, args.beta)
    n = args.states
    kernels = _kernels(args, n)
    if args.init == FROM_TARGET:
        init = FROM_TARGET
    else:
        init = _floats(args.init)
        if len(init) != 2:
            raise InputError("--init must be 'target' or 'x,y'")
    if n > 1:
        if args.gamma is None:
            raise InputError("--gamma is required when --states > 1")
        try:
            hmm = HmmSpec(_matrix(args.gamma), kernels)
        except ValueError as exc:
            raise InputError(str(exc)) from None

    def generate(attempt):
        seed = [args.seed, attempt]
        if n == 1:
            return simulate_track(args.T, init, kernels[0], raster, params, K=args.K, seed=seed)
        return simulate_multistate(args.T, init, hmm, raster, params, K=args.K, seed=seed)[0]

    track, attempts = simulate_until(generate, raster, args.require_all_categories, args.edge_margin)
    out = Path(args.out)
    write_track_csv(out, track)
    _write_meta(out, _metadata(args, attempts=attempts, rows=len(track)))
    print(f"wrote {len(track)} locations to {out}")


def cmd_fit(args):
    raster = load_manifest(args.raster)
    tracks = _load_tracks(args.tracks)
    _check_on_map(tracks, raster)
    refs = _as_list(args.reference_category)
    for name in refs:
        if name not in raster.names:
            raise InputError(f"reference category {name!r} is not in the raster manifest "
                             f"(available: {list(raster.names)})")
    model = Model.for_raster(raster, args.kernel, args.states, refs)
    mc = _mc(args, args.kernel)
    res = fit(tracks, raster, model, mc, starts=args.starts, seed=args.seed)
    if not args.no_se:
        res = hessian_se(res, tracks, raster, max_rounds=args.hessian_rounds)
    report = res.to_dict()
    report["metadata"] = _metadata(args)
    out = Path(args.out)
    out.write_text(json.dumps(_jsonable(report), indent=2))
    print(res.table())
    print(f"max log-likelihood {res.loglik:.4f}")


def _load_fit(path) -> FitResult:
    if not Path(path).exists():
        raise FileNotFoundError(f"fit report not found: {path}")
    try:
        return FitResult.load(path)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: not a fit report ({exc})") from None


def cmd_decode(args):
    raster = load_manifest(args.raster)
    res = _load_fit(args.fit)
    if res.model.n_states < 2:
        raise InputError("decoding requires N >= 2 states; the fit report has N = 1")
    if tuple(res.model.layer_names) != raster.names:
        raise InputError("fit report layers do not match the raster manifest")
    track = _load_tracks(args.tracks)[0]
    _check_on_map([track], raster)
    mc = McConfig(args.nc or res.mc.n_c, args.nz or res.mc.n_z, res.mc.n_r, res.mc.seed, res.mc.lhs)
    states = viterbi(track, raster, res.params, res.hmm(), mc)
    out = Path(args.out)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "state"])
        for t, (x, y), s in zip(track.times, track.points, states):
            w.writerow([int(t), "" if math.isnan(x) else repr(float(x)), "" if math.isnan(y) else repr(float(y)),
                        "" if s < 0 else int(s) + 1])
    _write_meta(out, _metadata(args, mc=mc.as_dict()))
    if track.states is not None:
        ok = states >= 0
        print(f"agreement with states in the input: {np.mean(states[ok] == track.states[ok]):.4f}")
    counts = np.bincount(states[states >= 0], minlength=res.model.n_states)
    print("steps per state: " + ", ".join(f"{j + 1}: {c}" for j, c in enumerate(counts)))


def cmd_gof(args):
    raster = load_manifest(args.raster)
    res = _load_fit(args.fit)
    tracks = _load_tracks(args.tracks)
    _check_on_map(tracks, raster)
    try:
        table = gof_steplengths(res, tracks, raster, sim_length=args.sim_length, seed=args.seed,
                                bin_width=args.bin_width)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    out = Path(args.out)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "observed_density", "simulated_density"])
        for row in zip(table["bin_lo"], table["bin_hi"], table["observed_density"], table["simulated_density"]):
            w.writerow([f"{v:.6g}" for v in row])
    stats = {k: table[k] for k in ("ks_statistic", "ks_pvalue", "n_observed", "n_simulated")}
    _write_meta(out, _metadata(args, **stats))
    print(f"KS statistic {table['ks_statistic']:.4f} (p = {table['ks_pvalue']:.3g}); "
          f"{stats['n_observed']} observed vs {stats['n_simulated']} simulated steps")


def cmd_experiment(args):
    if args.reps < 1:
        raise InputError("--reps must be at least 1")

    def progress(r):
        extra = "" if r.accuracy is None else f" accuracy {r.accuracy:.3f}"
        print(f"rep {r.rep}: {r.status} ({r.seconds:.1f} s){extra} {r.message}", flush=True)

    mc = None
    if args.nc or args.nz or args.nr:
        base = {1: (50, 50, 30), 2: (50, 50, 30), 3: (30, 30, 30)}[args.scenario]
        mc = McConfig(args.nc or base[0], args.nz or base[1], args.nr or base[2])
    report = run_experiment(args.scenario, args.reps, T=args.T, seed=args.seed, starts=args.starts, K=args.K,
                            with_se=args.with_se, progress=progress, mc=mc, map_km=args.map_km,
                            patch_scale=args.patch_scale, map_seed=args.map_seed)
    report["metadata"] = _metadata(args)
    out = Path(args.out)
    out.write_text(json.dumps(_jsonable(report), indent=2))
    print(json.dumps(_jsonable(report["summary"]), indent=2))


# ---------------------------------------------------------------------------
# parser


def _add_mc(p):
    p.add_argument("--nc", type=int, help="intermediate centres per step")
    p.add_argument("--nz", type=int, help="end points per centre")
    p.add_argument("--nr", type=int, help="radii per step (gamma-radius)")
    p.add_argument("--mc-seed", type=int, default=0, help="seed of the base samples")
    p.add_argument("--no-lhs", action="store_true", help="plain uniforms instead of Latin hypercube")


def _add_kernel_values(p):
    p.add_argument("--kernel", choices=sorted(KERNEL_TYPES), default="normal")
    p.add_argument("--states", type=int, default=1)
    p.add_argument("--sigma", help="normal standard deviation(s), comma-separated per state")
    p.add_argument("--r", help="fixed radius/radii")
    p.add_argument("--alpha", help="gamma shape(s)")
    p.add_argument("--rho", help="gamma rate(s)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="localgibbs", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON file whose keys mirror the flag names")
        p.set_defaults(func=func)
        return p

    p = add("make-habitat", cmd_make_habitat, "write a synthetic categorical habitat map")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--name", default="habitat")
    p.add_argument("--rows", type=int, default=300)
    p.add_argument("--cols", type=int, default=300)
    p.add_argument("--cell-size", type=float, default=0.1, help="km")
    p.add_argument("--patch-scale", type=float, default=0.4, help="km")
    p.add_argument("--seed", type=int, default=0)

    p = add("simulate", cmd_simulate, "simulate a track")
    p.add_argument("--raster", required=True, help="raster manifest (JSON)")
    _add_kernel_values(p)
    p.add_argument("--gamma", help="transition matrix, rows separated by ';'")
    p.add_argument("--beta", nargs="*", default=[], help="layer=value pairs (others are 0)")
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--K", type=int, default=200)
    p.add_argument("--init", default=FROM_TARGET, help="'target' or 'x,y'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--require-all-categories", action="store_true")
    p.add_argument("--edge-margin", type=float, default=0.0, help="reject tracks this close to the map edge (km)")
    p.add_argument("--out", required=True)

    p = add("fit", cmd_fit, "fit a model by maximum likelihood")
    p.add_argument("--raster", required=True)
    p.add_argument("--tracks", nargs="+", required=True)
    p.add_argument("--kernel", choices=sorted(KERNEL_TYPES), default="normal")
    p.add_argument("--states", type=int, default=1)
    _add_mc(p)
    p.add_argument("--starts", type=int, default=10)
    p.add_argument("--reference-category", nargs="+", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-se", action="store_true", help="skip the Hessian")
    p.add_argument("--hessian-rounds", type=int, default=3)
    p.add_argument("--out", required=True)

    p = add("decode", cmd_decode, "most likely state sequence")
    p.add_argument("--raster", required=True)
    p.add_argument("--fit", required=True, help="fit report (JSON)")
    p.add_argument("--tracks", required=True)
    p.add_argument("--nc", type=int)
    p.add_argument("--nz", type=int)
    p.add_argument("--out", required=True)

    p = add("gof", cmd_gof, "step-length goodness of fit")
    p.add_argument("--raster", required=True)
    p.add_argument("--fit", required=True)
    p.add_argument("--tracks", nargs="+", required=True)
    p.add_argument("--sim-length", type=int, default=10_000)
    p.add_argument("--bin-width", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("experiment", cmd_experiment, "replicated simulation study")
    p.add_argument("--scenario", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--K", type=int, default=200)
    p.add_argument("--starts", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nc", type=int)
    p.add_argument("--nz", type=int)
    p.add_argument("--nr", type=int)
    p.add_argument("--map-km", type=float)
    p.add_argument("--patch-scale", type=float)
    p.add_argument("--map-seed", type=int)
    p.add_argument("--with-se", action="store_true")
    p.add_argument("--out", required=True)
    return parser


def _config_path(argv):
    for k, a in enumerate(argv):
        if a == "--config" and k + 1 < len(argv):
            return argv[k + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def parse_args(argv=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    cfg_path = _config_path(argv)
    if cfg_path:
        path = Path(cfg_path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        cfg = json.loads(path.read_text())
        command = next((a for a in argv if a in parser._subparsers._group_actions[0].choices), None)
        if command is None:
            raise InputError("the config file applies to a subcommand; name one")
        sub = parser._subparsers._group_actions[0].choices[command]
        actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for k, v in cfg.items():
            dest = k.lstrip("-").replace("-", "_")
            if dest not in actions or dest in ("help", "config"):
                raise InputError(f"{path}: unknown setting {k!r}")
            defaults[dest] = v
            # flags on the command line still win over the file
            actions[dest].required = False
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    except (FileNotFoundError, InputError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (FileNotFoundError, InputError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (LikelihoodError, FitError, FloatingPointError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
