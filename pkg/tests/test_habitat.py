import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from localgibbs.habitat import (HabitatRaster, RsfParams, categorical_raster, category_areas,
                                covariates_at, habitat_utilisation, load_manifest, log_habitat_utilisation,
                                log_ud_normalizer, log_w, read_ascii_grid, save_categorical,
                                synthetic_habitat, ud_density_grid, write_ascii_grid)


def _write_grid(path, rows_top_first, x0=10.0, y0=20.0, cs=0.5, nodata=-9999):
    nrows, ncols = len(rows_top_first), len(rows_top_first[0])
    body = "\n".join(" ".join(str(v) for v in r) for r in rows_top_first)
    path.write_text(f"ncols {ncols}\nnrows {nrows}\nxllcorner {x0}\nyllcorner {y0}\n"
                    f"cellsize {cs}\nNODATA_value {nodata}\n{body}\n")


def test_ascii_grid_rows_flipped(tmp_path):
    _write_grid(tmp_path / "g.asc", [[1, 2, 3], [4, 5, 6]])
    header, values = read_ascii_grid(tmp_path / "g.asc")
    assert header["ncols"] == 3 and header["cellsize"] == 0.5
    # row 0 is the bottom row of the map
    np.testing.assert_array_equal(values, [[4, 5, 6], [1, 2, 3]])


def test_ascii_grid_centre_header(tmp_path):
    (tmp_path / "g.asc").write_text("ncols 2\nnrows 1\nxllcenter 1.0\nyllcenter 2.0\ncellsize 2\n7 8\n")
    header, values = read_ascii_grid(tmp_path / "g.asc")
    assert header["xllcorner"] == 0.0 and header["yllcorner"] == 1.0


def test_ascii_grid_round_trip(tmp_path):
    v = np.arange(12, dtype=float).reshape(3, 4) / 7
    v[1, 2] = np.nan
    write_ascii_grid(tmp_path / "g.asc", v, 1.5, -2.0, 0.25, fmt="%.17g")
    header, back = read_ascii_grid(tmp_path / "g.asc")
    assert header["xllcorner"] == 1.5 and header["yllcorner"] == -2.0
    assert back[1, 2] == -9999
    back[1, 2] = np.nan
    np.testing.assert_array_equal(back, v)


def test_ascii_grid_wrong_count(tmp_path):
    (tmp_path / "g.asc").write_text("ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2 3\n")
    with pytest.raises(ValueError, match="expected 4"):
        read_ascii_grid(tmp_path / "g.asc")


def _manifest(tmp_path, layers):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"layers": layers}))
    return p


def test_manifest_categorical_and_continuous(tmp_path):
    _write_grid(tmp_path / "veg.asc", [[1, 2, -9999], [2, 1, 1]])
    _write_grid(tmp_path / "elev.asc", [[0.5, 1.5, 2.5], [3.5, 4.5, 5.5]])
    p = _manifest(tmp_path, [
        {"name": "veg", "file": "veg.asc", "type": "categorical", "categories": {"1": "grass", "2": "wood"}},
        {"name": "elev", "file": "elev.asc", "type": "continuous"},
    ])
    r = load_manifest(p)
    assert r.names == ("grass", "wood", "elev")
    assert r.categorical == {"veg": (0, 1)}
    assert not r.valid[1, 2] and r.valid.sum() == 5
    # bottom-left cell: veg 2, elev 3.5
    np.testing.assert_array_equal(covariates_at(r, (10.1, 20.1)), [0, 1, 3.5])
    assert covariates_at(r, (11.2, 20.7)) is None  # NODATA cell
    assert covariates_at(r, (9.9, 20.1)) is None  # outside


def test_manifest_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path / "missing.json")
    _write_grid(tmp_path / "veg.asc", [[1, 3]])
    p = _manifest(tmp_path, [{"name": "veg", "file": "veg.asc", "type": "categorical",
                              "categories": {"1": "a", "2": "b"}}])
    with pytest.raises(ValueError, match="not in manifest"):
        load_manifest(p)
    p = _manifest(tmp_path, [{"name": "veg", "file": "nope.asc"}])
    with pytest.raises(FileNotFoundError):
        load_manifest(p)
    _write_grid(tmp_path / "a.asc", [[1, 2]])
    _write_grid(tmp_path / "b.asc", [[1, 2]], cs=1.0)
    p = _manifest(tmp_path, [{"name": "a", "file": "a.asc"}, {"name": "b", "file": "b.asc"}])
    with pytest.raises(ValueError, match="geometry"):
        load_manifest(p)


def test_save_categorical_round_trip(tmp_path):
    r = synthetic_habitat(20, 30, 0.2, seed=4)
    back = load_manifest(save_categorical(r, tmp_path))
    assert back.names == r.names
    np.testing.assert_array_equal(back.layers, r.layers)
    assert (back.origin_x, back.origin_y, back.cell_size) == (r.origin_x, r.origin_y, r.cell_size)


def test_raster_validation():
    with pytest.raises(ValueError):
        HabitatRaster(0, 0, -1.0, np.zeros((1, 2, 2)), ("a",))
    with pytest.raises(ValueError, match="one-hot"):
        HabitatRaster(0, 0, 1.0, np.ones((2, 2, 2)), ("a", "b"), {"g": (0, 1)})
    with pytest.raises(ValueError):
        RsfParams([1.0, 2.0], {1})


def test_point_lookup_edges():
    r = categorical_raster(np.array([[0, 1], [1, 0]]), ["a", "b"])
    # upper/right boundary belongs to the last cell
    np.testing.assert_array_equal(covariates_at(r, (2.0, 2.0)), [1, 0])
    np.testing.assert_array_equal(covariates_at(r, (1.0, 0.0)), [0, 1])
    assert covariates_at(r, (2.0 + 1e-9, 1.0)) is None
    params = RsfParams([0.7, 0.0], {1})
    assert log_w(r, params, (0.5, 0.5)) == 0.7
    assert log_w(r, params, (-1, 0.5)) == -math.inf


def test_ud_normaliser_and_utilisation():
    codes = np.array([[0, 1, 2], [2, 2, 1]])
    r = categorical_raster(codes, ["a", "b", "c"], cell_size=0.5)
    p = RsfParams([1.0, -0.5, 0.0], {2})
    # direct sum of w over cells times cell area
    z = sum(math.exp(p.beta[c]) for c in codes.ravel()) * 0.25
    assert math.isclose(log_ud_normalizer(r, p), math.log(z), rel_tol=1e-14)
    dens = ud_density_grid(r, p)
    assert math.isclose(dens.sum() * 0.25, 1.0, rel_tol=1e-14)
    hu = habitat_utilisation(r, p)
    np.testing.assert_allclose(hu, np.exp(p.beta) / z, rtol=1e-14)
    # utilisation times category area gives the category's share of use
    assert math.isclose(float(hu @ category_areas(r)), 1.0, rel_tol=1e-14)


def test_habitat_utilisation_needs_one_hot():
    r = HabitatRaster(0, 0, 1.0, np.zeros((1, 2, 2)), ("elev",))
    with pytest.raises(ValueError):
        log_habitat_utilisation(r, RsfParams([0.3]))


def test_synthetic_habitat_balanced():
    r = synthetic_habitat(100, 100, 0.1, seed=2)
    share = category_areas(r) / r.area
    np.testing.assert_allclose(share, 0.25, atol=0.01)
    assert r.is_one_hot()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(-20, 20))
def test_ud_invariant_to_beta_shift(beta, c):
    r = categorical_raster(np.array([[0, 1, 2], [2, 0, 0]]), ["a", "b", "c"])
    p = RsfParams(beta)
    q = RsfParams(np.asarray(beta) + c)
    np.testing.assert_allclose(ud_density_grid(r, p), ud_density_grid(r, q), rtol=1e-12)
