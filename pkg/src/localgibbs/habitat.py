"""Habitat rasters, the resource selection function and the utilisation
distribution.

Coordinates are in km. A raster is stored with row 0 at the *bottom* of the
map (the ESRI ASCII reader flips the file's top-first row order), so a point
``(x, y)`` falls in ``layers[:, floor((y - y0) / cs), floor((x - x0) / cs)]``.
Points on the upper/right edge belong to the last row/column.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import logsumexp

from . import _hot


@dataclass(frozen=True)
class HabitatRaster:
    """Stack of covariate layers on a regular grid.

    ``layers`` has shape ``(n_layers, n_rows, n_cols)``. Categorical
    covariates are stored one-hot, one layer per category, and
    ``categorical`` maps the covariate name to the indices of its layers.
    Cells where ``valid`` is False (NODATA in the source) carry no
    covariates and behave like points outside the map.
    """

    origin_x: float
    origin_y: float
    cell_size: float
    layers: np.ndarray
    names: tuple[str, ...]
    categorical: dict[str, tuple[int, ...]] = field(default_factory=dict)
    valid: np.ndarray | None = None

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        layers = np.array(self.layers, dtype=float)
        if layers.ndim == 2:
            layers = layers[None]
        if layers.ndim != 3 or layers.shape[1] < 1 or layers.shape[2] < 1:
            raise ValueError("layers must have shape (n_layers, n_rows, n_cols)")
        if len(self.names) != layers.shape[0]:
            raise ValueError(f"{len(self.names)} names for {layers.shape[0]} layers")
        valid = np.ones(layers.shape[1:], bool) if self.valid is None else np.array(self.valid, bool)
        if valid.shape != layers.shape[1:]:
            raise ValueError("valid mask does not match layer dimensions")
        layers[:, ~valid] = 0.0
        if not np.isfinite(layers[:, valid]).all():
            raise ValueError("non-finite covariate value in a valid cell")
        for group, idx in self.categorical.items():
            block = layers[list(idx)][:, valid]
            if not (np.isin(block, (0.0, 1.0)).all() and np.allclose(block.sum(axis=0), 1.0)):
                raise ValueError(f"layers of categorical covariate {group!r} are not one-hot")
        layers.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "categorical", {k: tuple(v) for k, v in self.categorical.items()})

    @property
    def n_layers(self) -> int:
        return self.layers.shape[0]

    @property
    def n_rows(self) -> int:
        return self.layers.shape[1]

    @property
    def n_cols(self) -> int:
        return self.layers.shape[2]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """``(xmin, xmax, ymin, ymax)`` of the bounding rectangle."""
        return (
            self.origin_x,
            self.origin_x + self.n_cols * self.cell_size,
            self.origin_y,
            self.origin_y + self.n_rows * self.cell_size,
        )

    @property
    def area(self) -> float:
        return float(self.valid.sum()) * self.cell_size**2

    def is_one_hot(self) -> bool:
        covered = sorted(i for idx in self.categorical.values() for i in idx)
        return len(self.categorical) == 1 and covered == list(range(self.n_layers))

    def cell_index(self, points):
        """Row/column of each point and a mask of points with covariates."""
        pts = np.asarray(points, dtype=float)
        fx = (pts[..., 0] - self.origin_x) / self.cell_size
        fy = (pts[..., 1] - self.origin_y) / self.cell_size
        inside = (fx >= 0) & (fx <= self.n_cols) & (fy >= 0) & (fy <= self.n_rows)
        col = np.minimum(np.where(inside, fx, 0).astype(np.int64), self.n_cols - 1)
        row = np.minimum(np.where(inside, fy, 0).astype(np.int64), self.n_rows - 1)
        inside &= self.valid[row, col]
        return row, col, inside

    def cell_centres(self):
        cs = self.cell_size
        xs = self.origin_x + cs * (np.arange(self.n_cols) + 0.5)
        ys = self.origin_y + cs * (np.arange(self.n_rows) + 0.5)
        return np.meshgrid(xs, ys)

    def weight_map(self, params: RsfParams) -> WeightMap:
        return WeightMap.build(self, params)


@dataclass(frozen=True)
class RsfParams:
    """Selection coefficients, one per layer; reference entries are pinned
    to zero."""

    beta: np.ndarray
    reference_indices: frozenset[int] = frozenset()

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float).ravel()
        ref = frozenset(int(i) for i in self.reference_indices)
        for i in ref:
            if not 0 <= i < beta.size:
                raise ValueError(f"reference index {i} out of range")
            if beta[i] != 0.0:
                raise ValueError(f"beta[{i}] is a reference coefficient and must be 0")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "reference_indices", ref)

    @property
    def free_indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.beta.size) if i not in self.reference_indices)

    @classmethod
    def from_free(cls, free_values, n_layers: int, reference_indices) -> RsfParams:
        ref = frozenset(reference_indices)
        beta = np.zeros(n_layers)
        free = [i for i in range(n_layers) if i not in ref]
        beta[free] = np.asarray(free_values, dtype=float)
        return cls(beta, ref)


def _check_params(raster: HabitatRaster, params: RsfParams):
    if params.beta.size != raster.n_layers:
        raise ValueError(f"beta has {params.beta.size} entries for {raster.n_layers} layers")


def covariates_at(raster: HabitatRaster, p) -> np.ndarray | None:
    """Covariate vector of the cell containing ``p``, or None outside the
    map."""
    row, col, inside = raster.cell_index(np.asarray(p, dtype=float))
    if not inside:
        return None
    return raster.layers[:, row, col].copy()


def log_w(raster: HabitatRaster, params: RsfParams, p) -> float:
    """``log w(c(p)) = beta . c(p)``; ``-inf`` where there are no
    covariates."""
    _check_params(raster, params)
    c = covariates_at(raster, p)
    if c is None:
        return -math.inf
    return float(params.beta @ c)


def log_weight_grid(raster: HabitatRaster, params: RsfParams) -> np.ndarray:
    _check_params(raster, params)
    grid = np.tensordot(params.beta, raster.layers, axes=1)
    return np.where(raster.valid, grid, -np.inf)


def log_ud_normalizer(raster: HabitatRaster, params: RsfParams) -> float:
    lw = log_weight_grid(raster, params)
    if not np.isfinite(lw).any():
        raise ValueError("no cell has positive weight")
    return float(logsumexp(lw[np.isfinite(lw)])) + 2.0 * math.log(raster.cell_size)


def ud_normalizer(raster: HabitatRaster, params: RsfParams) -> float:
    """Exact integral of ``w`` over the map (``w`` is constant on cells)."""
    return math.exp(log_ud_normalizer(raster, params))


def ud_density_grid(raster: HabitatRaster, params: RsfParams) -> np.ndarray:
    """Utilisation density (per km^2) of every cell; 0 where invalid."""
    return np.exp(log_weight_grid(raster, params) - log_ud_normalizer(raster, params))


def log_habitat_utilisation(raster: HabitatRaster, params: RsfParams) -> np.ndarray:
    if not raster.is_one_hot():
        raise ValueError("habitat utilisation needs a single one-hot categorical covariate")
    return params.beta - log_ud_normalizer(raster, params)


def habitat_utilisation(raster: HabitatRaster, params: RsfParams) -> np.ndarray:
    """Utilisation density of each habitat category:
    ``exp(beta_i) / integral of w``."""
    return np.exp(log_habitat_utilisation(raster, params))


def category_areas(raster: HabitatRaster) -> np.ndarray:
    return raster.layers[:, raster.valid].sum(axis=1) * raster.cell_size**2


@dataclass(frozen=True)
class WeightMap:
    """Scaled cell weights ``exp(log w - shift)`` laid out for the kernels."""

    W: np.ndarray
    shift: float
    x0: float
    y0: float
    cs: float

    @classmethod
    def build(cls, raster: HabitatRaster, params: RsfParams) -> WeightMap:
        lw = log_weight_grid(raster, params)
        finite = np.isfinite(lw)
        if not finite.any():
            raise ValueError("no cell has positive weight")
        shift = float(lw[finite].max())
        W = np.ascontiguousarray(np.where(finite, np.exp(lw - shift), 0.0))
        return cls(W, shift, float(raster.origin_x), float(raster.origin_y), float(raster.cell_size))

    def weights(self, pts) -> np.ndarray:
        pts = np.ascontiguousarray(np.asarray(pts, dtype=float).reshape(-1, 2))
        return _hot.weights_at(self.W, self.x0, self.y0, self.cs, pts)


# ---------------------------------------------------------------------------
# file formats


def read_ascii_grid(path) -> tuple[dict, np.ndarray]:
    """Read an ESRI ASCII grid. Returns the header and the values with the
    file's first (top) row last, i.e. row 0 at the bottom."""
    path = Path(path)
    header = {}
    with path.open() as fh:
        lines = fh.read().splitlines()
    body_start = 0
    for k, line in enumerate(lines):
        parts = line.split()
        if not parts:
            continue
        key = parts[0].lower()
        if key in ("ncols", "nrows", "xllcorner", "yllcorner", "xllcenter",
                   "yllcenter", "cellsize", "nodata_value"):
            header[key] = float(parts[1])
            body_start = k + 1
        else:
            break
    for key in ("ncols", "nrows", "cellsize"):
        if key not in header:
            raise ValueError(f"{path}: missing header key {key}")
    ncols, nrows, cs = int(header["ncols"]), int(header["nrows"]), header["cellsize"]
    if "xllcorner" not in header:
        header["xllcorner"] = header.pop("xllcenter") - cs / 2
    if "yllcorner" not in header:
        header["yllcorner"] = header.pop("yllcenter") - cs / 2
    values = np.array(" ".join(lines[body_start:]).split(), dtype=float)
    if values.size != nrows * ncols:
        raise ValueError(f"{path}: expected {nrows * ncols} values, found {values.size}")
    return header, values.reshape(nrows, ncols)[::-1].copy()


def write_ascii_grid(path, values, origin_x, origin_y, cell_size, nodata=-9999.0, fmt="%.10g"):
    """Write a bottom-row-first array as an ESRI ASCII grid."""
    values = np.asarray(values, dtype=float)
    nrows, ncols = values.shape
    out = np.where(np.isfinite(values), values, nodata)[::-1]
    with Path(path).open("w") as fh:
        fh.write(f"ncols {ncols}\nnrows {nrows}\nxllcorner {origin_x!r}\n"
                 f"yllcorner {origin_y!r}\ncellsize {cell_size!r}\nNODATA_value {nodata:g}\n")
        np.savetxt(fh, out, fmt=fmt)


def load_manifest(path) -> HabitatRaster:
    """Load a raster stack described by a JSON manifest::

        {"layers": [
            {"name": "veg", "file": "veg.asc", "type": "categorical",
             "categories": {"1": "grassland", "2": "woodland"}},
            {"name": "elev", "file": "elev.asc", "type": "continuous"}]}

    Layer files are resolved relative to the manifest. Categorical layers
    are expanded to one indicator layer per listed category, named after
    the category.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"raster manifest not found: {path}")
    spec = json.loads(path.read_text())
    entries = spec.get("layers")
    if not entries:
        raise ValueError(f"{path}: manifest lists no layers")
    geom = None
    layers, names, categorical = [], [], {}
    valid = None
    for entry in entries:
        grid_path = path.parent / entry["file"]
        if not grid_path.exists():
            raise FileNotFoundError(f"raster layer not found: {grid_path}")
        header, values = read_ascii_grid(grid_path)
        this_geom = (header["ncols"], header["nrows"], header["xllcorner"],
                     header["yllcorner"], header["cellsize"])
        if geom is None:
            geom = this_geom
        elif not np.allclose(geom, this_geom):
            raise ValueError(f"{grid_path}: grid geometry differs from the first layer")
        nodata = header.get("nodata_value")
        ok = np.isfinite(values) if nodata is None else (values != nodata) & np.isfinite(values)
        valid = ok if valid is None else valid & ok
        kind = entry.get("type", "continuous")
        if kind == "categorical":
            cats = entry.get("categories")
            if not cats:
                raise ValueError(f"categorical layer {entry['name']!r} lists no categories")
            codes = {float(code): name for code, name in cats.items()}
            unknown = set(np.unique(values[ok])) - set(codes)
            if unknown:
                raise ValueError(f"{grid_path}: codes {sorted(unknown)} not in manifest categories")
            idx = []
            for code, name in codes.items():
                idx.append(len(layers))
                layers.append((values == code).astype(float))
                names.append(name)
            categorical[entry["name"]] = tuple(idx)
        elif kind == "continuous":
            layers.append(values)
            names.append(entry["name"])
        else:
            raise ValueError(f"unknown layer type {kind!r}")
    if len(set(names)) != len(names):
        raise ValueError("layer and category names must be unique")
    ncols, nrows, x0, y0, cs = geom
    return HabitatRaster(x0, y0, cs, np.stack(layers), tuple(names), categorical, valid)


def save_categorical(raster: HabitatRaster, directory, name="habitat") -> Path:
    """Write a single-covariate one-hot raster as ``<name>.asc`` (codes
    1..k) plus ``<name>.json`` manifest; returns the manifest path."""
    if not raster.is_one_hot():
        raise ValueError("raster is not a single one-hot categorical covariate")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    codes = np.argmax(raster.layers, axis=0).astype(float) + 1.0
    codes[~raster.valid] = np.nan
    write_ascii_grid(directory / f"{name}.asc", codes, raster.origin_x, raster.origin_y,
                     raster.cell_size, fmt="%d")
    manifest = {
        "format_version": 1,
        "layers": [{
            "name": name,
            "file": f"{name}.asc",
            "type": "categorical",
            "categories": {str(k + 1): n for k, n in enumerate(raster.names)},
        }],
    }
    out = directory / f"{name}.json"
    out.write_text(json.dumps(manifest, indent=2))
    return out


def categorical_raster(codes, names: Sequence[str], origin=(0.0, 0.0), cell_size=1.0,
                       group="habitat") -> HabitatRaster:
    """One-hot raster from an integer grid of category indices 0..k-1
    (row 0 at the bottom); negative codes mark missing cells."""
    codes = np.asarray(codes)
    k = len(names)
    valid = codes >= 0
    layers = np.stack([(codes == i).astype(float) for i in range(k)])
    return HabitatRaster(origin[0], origin[1], cell_size, layers, tuple(names),
                         {group: tuple(range(k))}, valid)


def synthetic_habitat(n_rows=150, n_cols=150, cell_size=0.1, names=("grassland",
                      "bushed_grassland", "bushland", "woodland"), patch_scale=0.4,
                      seed=0) -> HabitatRaster:
    """Patchy categorical map: a Gaussian-smoothed white-noise field cut at
    its quantiles so each category covers about the same area.

    ``patch_scale`` (km) is the smoothing length and sets the typical patch
    size.
    """
    rng = np.random.default_rng(seed)
    field_ = gaussian_filter(rng.standard_normal((n_rows, n_cols)),
                             patch_scale / cell_size, mode="wrap")
    k = len(names)
    cuts = np.quantile(field_, np.linspace(0, 1, k + 1)[1:-1])
    codes = np.digitize(field_, cuts)
    return categorical_raster(codes, names, cell_size=cell_size)
