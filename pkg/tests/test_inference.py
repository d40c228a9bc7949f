import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from localgibbs.habitat import RsfParams
from localgibbs.inference import (FitError, FitResult, Model, Objective, check_categories_visited, fd_hessian,
                                  fit, gamma_from_working, gamma_to_working, gof_steplengths, hessian_se,
                                  initial_points, se_from_hessian, viterbi, viterbi_path)
from localgibbs.kernels import FixedRadius, GammaRadius, Normal
from localgibbs.likelihood import McConfig, track_loglik
from localgibbs.simulator import HmmSpec, Track, simulate_multistate, simulate_track

from conftest import interior_track


@pytest.fixture(scope="module")
def fitted(patchy, patchy_params):
    tr = interior_track(patchy, patchy_params, Normal(0.1), 200, seed=21)
    model = Model.for_raster(patchy, "normal", reference=["woodland"])
    res = fit(tr, patchy, model, McConfig(10, 10, seed=1), starts=2, seed=3)
    return tr, res


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 4), st.integers(0, 2**31))
def test_gamma_working_round_trip(n, seed):
    g = np.random.default_rng(seed).dirichlet(np.ones(n) * 2, size=n)
    g = np.clip(g, 1e-6, None)
    g /= g.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(gamma_from_working(gamma_to_working(g), n), g, atol=1e-12, rtol=0)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 3), st.sampled_from(["normal", "fixed-radius", "gamma-radius"]), st.integers(0, 2**31))
def test_working_scale_bijection(n_states, kernel, seed):
    rng = np.random.default_rng(seed)
    model = Model(kernel, n_states, ("a", "b", "c"), frozenset({2}))
    theta = rng.normal(0, 1.5, model.n_params)
    back = model.pack(*model.unpack(theta))
    np.testing.assert_allclose(back, theta, atol=1e-12, rtol=0)
    assert len(model.natural(theta)) == len(model.param_names()) == model.n_params


def test_gamma_rows_are_distributions():
    eta = np.array([-1.0, 2.0, 0.5, -3.0, 0.0, 1.0])
    g = gamma_from_working(eta, 3)
    np.testing.assert_allclose(g.sum(axis=1), 1.0, atol=1e-15)
    assert np.all(g > 0)
    assert gamma_from_working([], 1).tolist() == [[1.0]]


def test_model_names_and_masks(patchy):
    m = Model.for_raster(patchy, "gamma-radius", 2, ["woodland"])
    assert m.param_names() == ["beta[grassland]", "beta[bushed_grassland]", "beta[bushland]",
                               "alpha[1]", "rho[1]", "alpha[2]", "rho[2]", "gamma[1,2]", "gamma[2,1]"]
    assert m.positive_mask().tolist() == [False] * 3 + [True] * 4 + [False] * 2
    assert Model.from_dict(m.as_dict()) == m
    with pytest.raises(ValueError, match="reference category"):
        Model.for_raster(patchy, "normal", reference=["swamp"])
    with pytest.raises(ValueError):
        Model("levy", 1, ("a",))


def test_unvisited_category_is_rejected(patchy, patchy_params):
    tr = simulate_track(20, (3.0, 3.0), Normal(0.01), patchy, patchy_params, seed=0)
    model = Model.for_raster(patchy, "normal", reference=["woodland"])
    with pytest.raises(ValueError, match="never visited"):
        check_categories_visited([tr], patchy, model)


def test_objective_maps_failures_to_inf(patchy, patchy_params):
    tr = simulate_track(30, (3.0, 3.0), Normal(0.1), patchy, patchy_params, seed=0)
    model = Model.for_raster(patchy, "fixed-radius", reference=["woodland"])
    obj = Objective([tr], patchy, model, McConfig(5, 5))
    # radius far below the longest step: the likelihood is zero
    assert obj(np.array([0, 0, 0, math.log(1e-4)])) == math.inf
    assert math.isfinite(obj(np.array([0, 0, 0, math.log(1.0)])))


def test_initial_points_respect_constraints(patchy, patchy_params):
    tr = simulate_track(100, (3.0, 3.0), FixedRadius(0.2), patchy, patchy_params, seed=0)
    model = Model.for_raster(patchy, "fixed-radius", 2, ["woodland"])
    x = initial_points(model, [tr], 20, np.random.default_rng(0))
    r = np.exp(x[:, 3:5])
    assert np.all(r > tr.step_lengths().max() / 2)
    assert np.all(np.diff(r, axis=1) >= 0)
    assert np.all((x[:, :3] >= -2) & (x[:, :3] <= 2))


def test_fd_hessian_quadratic():
    A = np.array([[3.0, 0.5, 0.0], [0.5, 2.0, -0.3], [0.0, -0.3, 1.0]])
    f = lambda x: 0.5 * x @ A @ x + x.sum()  # noqa: E731
    np.testing.assert_allclose(fd_hessian(f, np.array([0.2, -1.0, 3.0])), A, atol=1e-6)
    np.testing.assert_allclose(fd_hessian(f, np.zeros(3), steps=[0.1, np.nan, 0.5]), A, atol=1e-9)
    se, cov = se_from_hessian(A)
    np.testing.assert_allclose(cov, np.linalg.inv(A))
    with pytest.raises(FitError, match="positive definite"):
        se_from_hessian(-A)


def test_fit_recovers_and_reports(fitted, patchy):
    tr, res = fitted
    assert res.kernel.sigma == pytest.approx(0.1, rel=0.15)
    assert res.loglik == pytest.approx(track_loglik(tr, patchy, res.params, res.kernel, res.mc), abs=1e-9)
    assert len(res.starts) == 2
    assert set(res.estimates()) == {"beta[grassland]", "beta[bushed_grassland]", "beta[bushland]", "sigma"}
    assert res.params.beta[3] == 0.0
    assert res.se() is None and res.ci95() is None


def test_fit_is_reproducible(fitted, patchy):
    tr, res = fitted
    again = fit(tr, patchy, res.model, res.mc, starts=2, seed=3)
    np.testing.assert_array_equal(again.theta, res.theta)
    assert again.loglik == res.loglik


def test_hessian_se_and_intervals(fitted, patchy, tmp_path):
    tr, res = fitted
    res = hessian_se(FitResult(res.model, res.theta, res.loglik, res.mc, res.seed, res.starts),
                     tr, patchy, max_rounds=2)
    assert len(res.hessian_mc) in (1, 2)
    assert res.hessian_mc[0]["n_c"] == 10
    ci = res.ci95()
    for name, v in res.estimates().items():
        lo, hi = ci[name]
        assert lo < v < hi
    assert ci["sigma"][0] > 0
    se = res.se()
    # delta method for sigma = exp(log sigma)
    assert se["sigma"] == pytest.approx(res.kernel.sigma * res.se_working[-1], rel=1e-6)
    assert "(reference)" in res.table()
    path = tmp_path / "fit.json"
    res.save(path)
    back = FitResult.load(path)
    np.testing.assert_array_equal(back.theta, res.theta)
    np.testing.assert_allclose(back.cov_working, res.cov_working)
    assert back.ci95() == pytest.approx(res.ci95())
    assert back.model == res.model


def test_fit_errors(patchy, patchy_params, flat):
    tr = simulate_track(30, (3.0, 3.0), Normal(0.1), patchy, patchy_params, seed=0)
    model = Model.for_raster(patchy, "normal", reference=["woodland"])
    with pytest.raises(ValueError):
        fit(tr, patchy, model, starts=0)
    # a starting point where the likelihood is zero everywhere
    fr = Model("fixed-radius", 1, ("all",), frozenset({0}))
    with pytest.raises(FitError, match="every start failed"):
        fit(Track([[2.0, 2.0], [2.5, 2.0]]), flat, fr, McConfig(5, 5), starts=0, init=[math.log(0.01)])


def _brute_viterbi(log_p, g, d):
    T, N = log_p.shape
    best, arg = -math.inf, None
    for path in itertools.product(range(N), repeat=T):
        v = math.log(d[path[0]]) + log_p[0, path[0]]
        for t in range(1, T):
            v += math.log(g[path[t - 1], path[t]]) + log_p[t, path[t]]
        if v > best:
            best, arg = v, path
    return np.array(arg)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(2, 3), st.integers(0, 2**31))
def test_viterbi_equals_brute_force(T, N, seed):
    rng = np.random.default_rng(seed)
    log_p = rng.normal(-3, 2, (T, N))
    g = rng.dirichlet(np.ones(N), size=N)
    d = rng.dirichlet(np.ones(N))
    np.testing.assert_array_equal(viterbi_path(log_p, [np.arange(T)], g, d), _brute_viterbi(log_p, g, d))


def test_viterbi_decodes_distinct_states(flat, flat_params):
    h = HmmSpec([[0.9, 0.1], [0.1, 0.9]], (Normal(0.05), Normal(1.0)))
    tr, s = simulate_multistate(300, (0.0, 0.0), h, flat, flat_params, seed=1)
    dec = viterbi(tr, flat, flat_params, h, McConfig(20, 20))
    assert dec[-1] == -1
    assert np.mean(dec[:-1] == s[:-1]) > 0.95
    with pytest.raises(ValueError):
        viterbi(tr, flat, flat_params, HmmSpec([[1.0]], (Normal(0.1),)))


def test_two_state_labels_sorted(flat, flat_params):
    h = HmmSpec([[0.9, 0.1], [0.1, 0.9]], (Normal(1.0), Normal(0.05)))
    tr, _ = simulate_multistate(200, (0.0, 0.0), h, flat, flat_params, seed=2)
    model = Model("normal", 2, ("all",), frozenset({0}))
    res = fit(tr, flat, model, McConfig(10, 10), starts=1, seed=0)
    sig = [k.sigma for k in res.kernels]
    assert sig[0] < sig[1]
    assert sig[0] == pytest.approx(0.05, rel=0.3) and sig[1] == pytest.approx(1.0, rel=0.3)
    assert res.gamma[0, 0] > 0.7 and res.gamma[1, 1] > 0.7


def test_gof_steplengths(fitted, patchy):
    tr, res = fitted
    out = gof_steplengths(res, tr, patchy, sim_length=2000, seed=1)
    assert out["n_observed"] == 199 and out["n_simulated"] == 1999
    width = out["bin_hi"] - out["bin_lo"]
    assert np.sum(out["observed_density"] * width) == pytest.approx(1.0)
    assert np.sum(out["simulated_density"] * width) == pytest.approx(1.0)
    assert out["ks_pvalue"] > 0.001
    with pytest.raises(ValueError):
        gof_steplengths(res, Track([[3, 3], [3.1, 3]]), patchy)
