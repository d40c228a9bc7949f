"""Inner loops: raster weight lookup, Monte Carlo step likelihoods, chain
simulation.

Every kernel exists twice: an ``@njit`` loop version and a vectorised numpy
version with identical inputs and outputs. The public names at the bottom
dispatch on :data:`localgibbs._accel.USE_NUMBA`. Both versions consume the
same pre-drawn base samples, so they agree to floating-point rounding (and
exactly for simulation, where only comparisons are involved).

Raster weights ``W`` are ``exp(log w - max log w)`` with row 0 at the bottom
of the map and 0 for cells without covariates.

Status codes returned by the likelihood kernels:
    0  ok (value may still be -inf for an impossible step)
    2  some intermediate centre had zero total weight among its endpoints
    3  lens rejection sampling ran out of proposals
"""
import math

import numpy as np

from ._accel import USE_NUMBA, HAVE_NUMBA

OK = 0
ZERO_DENOMINATOR = 2
LENS_EXHAUSTED = 3

_LOG_PI = math.log(math.pi)
_LOG_2PI = math.log(2.0 * math.pi)

if HAVE_NUMBA:
    from numba import njit
else:  # pragma: no cover

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


# ---------------------------------------------------------------------------
# numba kernels


@njit(cache=True, inline="always")
def _w_nb(W, x0, y0, cs, px, py):
    fx = (px - x0) / cs
    fy = (py - y0) / cs
    nr = W.shape[0]
    nc = W.shape[1]
    # written so that NaN falls through to "outside"
    if not (fx >= 0.0 and fx <= nc and fy >= 0.0 and fy <= nr):
        return 0.0
    c = int(fx)
    r = int(fy)
    if c >= nc:
        c = nc - 1
    if r >= nr:
        r = nr - 1
    return W[r, c]


@njit(cache=True)
def weights_at_nb(W, x0, y0, cs, pts):
    n = pts.shape[0]
    out = np.empty(n)
    for k in range(n):
        out[k] = _w_nb(W, x0, y0, cs, pts[k, 0], pts[k, 1])
    return out


@njit(cache=True)
def normal_loglik_nb(W, x0, y0, cs, xs, ys, sigma, e_mu, e_z):
    S = xs.shape[0]
    nc = e_mu.shape[1]
    nz = e_z.shape[2]
    out = np.empty(S)
    status = np.zeros(S, dtype=np.int64)
    log_norm = -_LOG_2PI - 2.0 * math.log(sigma)
    inv2s2 = 0.5 / (sigma * sigma)
    for s in range(S):
        wy = _w_nb(W, x0, y0, cs, ys[s, 0], ys[s, 1])
        if wy == 0.0:
            out[s] = -np.inf
            continue
        m = -np.inf
        acc = 0.0
        for i in range(nc):
            mx = xs[s, 0] + sigma * e_mu[s, i, 0]
            my = xs[s, 1] + sigma * e_mu[s, i, 1]
            tot = 0.0
            for j in range(nz):
                tot += _w_nb(W, x0, y0, cs, mx + sigma * e_z[s, i, j, 0],
                             my + sigma * e_z[s, i, j, 1])
            if tot == 0.0:
                status[s] = ZERO_DENOMINATOR
                break
            dx = ys[s, 0] - mx
            dy = ys[s, 1] - my
            term = log_norm - (dx * dx + dy * dy) * inv2s2 - math.log(tot)
            if term > m:
                acc = acc * math.exp(m - term) + 1.0
                m = term
            else:
                acc += math.exp(term - m)
        if status[s] != OK:
            out[s] = np.nan
            continue
        out[s] = math.log(wy) + math.log(nz / nc) + m + math.log(acc)
    return out, status


@njit(cache=True, inline="always")
def _lens_area_nb(d, r):
    if d >= 2.0 * r:
        return 0.0
    return 2.0 * r * r * math.acos(d / (2.0 * r)) - 0.5 * d * math.sqrt(4.0 * r * r - d * d)


@njit(cache=True)
def radius_loglik_nb(W, x0, y0, cs, xs, ys, radii, log_trunc, u_lens, e_disc):
    S = xs.shape[0]
    nr = radii.shape[1]
    P = u_lens.shape[2]
    nc = e_disc.shape[2]
    nz = e_disc.shape[3]
    out = np.empty(S)
    status = np.zeros(S, dtype=np.int64)
    const = -2.0 * _LOG_PI + math.log(nz / (nr * nc))
    for s in range(S):
        wy = _w_nb(W, x0, y0, cs, ys[s, 0], ys[s, 1])
        if wy == 0.0 or log_trunc[s] == -np.inf:
            out[s] = -np.inf
            continue
        ax = xs[s, 0]
        ay = xs[s, 1]
        bx = ys[s, 0]
        by = ys[s, 1]
        d = math.sqrt((bx - ax) ** 2 + (by - ay) ** 2)
        heading = math.atan2(by - ay, bx - ax)
        midx = 0.5 * (ax + bx)
        midy = 0.5 * (ay + by)
        m_out = -np.inf
        acc_out = 0.0
        for i in range(nr):
            r = radii[s, i]
            if d >= 2.0 * r:
                continue
            area = _lens_area_nb(d, r)
            if area <= 0.0:
                continue
            width = 2.0 * r - d
            height = 2.0 * math.sqrt(r * r - 0.25 * d * d)
            r2 = r * r
            accepted = 0
            m_in = -np.inf
            acc_in = 0.0
            for p in range(P):
                ux = width * u_lens[s, i, p, 0]
                uy = height * u_lens[s, i, p, 1]
                ll = math.sqrt(ux * ux + uy * uy)
                th = math.atan2(uy, ux) + heading
                mx = ll * math.cos(th) + midx
                my = ll * math.sin(th) + midy
                if (mx - ax) ** 2 + (my - ay) ** 2 > r2:
                    continue
                if (mx - bx) ** 2 + (my - by) ** 2 > r2:
                    continue
                tot = 0.0
                for k in range(nz):
                    tot += _w_nb(W, x0, y0, cs, mx + r * e_disc[s, i, accepted, k, 0],
                                 my + r * e_disc[s, i, accepted, k, 1])
                if tot == 0.0:
                    status[s] = ZERO_DENOMINATOR
                    break
                term = -math.log(tot)
                if term > m_in:
                    acc_in = acc_in * math.exp(m_in - term) + 1.0
                    m_in = term
                else:
                    acc_in += math.exp(term - m_in)
                accepted += 1
                if accepted == nc:
                    break
            if status[s] != OK:
                break
            if accepted < nc:
                status[s] = LENS_EXHAUSTED
                break
            term = math.log(area) - 4.0 * math.log(r) + m_in + math.log(acc_in)
            if term > m_out:
                acc_out = acc_out * math.exp(m_out - term) + 1.0
                m_out = term
            else:
                acc_out += math.exp(term - m_out)
        if status[s] != OK:
            out[s] = np.nan
        elif acc_out == 0.0:
            out[s] = -np.inf
        else:
            out[s] = math.log(wy) + log_trunc[s] + const + m_out + math.log(acc_out)
    return out, status


@njit(cache=True)
def simulate_chunk_nb(W, x0, y0, cs, start, e_mu, e_z, scales, u_choice):
    S = e_mu.shape[0]
    K = e_z.shape[1]
    pts = np.full((S, 2), np.nan)
    w = np.empty(K)
    px = start[0]
    py = start[1]
    for s in range(S):
        sc = scales[s]
        mx = px + sc * e_mu[s, 0]
        my = py + sc * e_mu[s, 1]
        tot = 0.0
        for k in range(K):
            w[k] = _w_nb(W, x0, y0, cs, mx + sc * e_z[s, k, 0], my + sc * e_z[s, k, 1])
            tot += w[k]
        if tot == 0.0:
            return pts, s
        target = u_choice[s] * tot
        cum = 0.0
        pick = -1
        for k in range(K):
            if w[k] > 0.0:
                pick = k
                cum += w[k]
                if cum > target:
                    break
        px = mx + sc * e_z[s, pick, 0]
        py = my + sc * e_z[s, pick, 1]
        pts[s, 0] = px
        pts[s, 1] = py
    return pts, -1


# ---------------------------------------------------------------------------
# numpy kernels


def weights_at_np(W, x0, y0, cs, pts):
    pts = np.asarray(pts, dtype=float)
    fx = (pts[..., 0] - x0) / cs
    fy = (pts[..., 1] - y0) / cs
    nr, nc = W.shape
    inside = (fx >= 0.0) & (fx <= nc) & (fy >= 0.0) & (fy <= nr)
    c = np.minimum(np.where(inside, fx, 0.0).astype(np.int64), nc - 1)
    r = np.minimum(np.where(inside, fy, 0.0).astype(np.int64), nr - 1)
    return np.where(inside, W[r, c], 0.0)


def _logsumexp_rows(a):
    m = np.max(a, axis=-1, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    out = safe[..., 0] + np.log(np.sum(np.exp(a - safe), axis=-1))
    return out


def normal_loglik_np(W, x0, y0, cs, xs, ys, sigma, e_mu, e_z):
    nc = e_mu.shape[1]
    nz = e_z.shape[2]
    wy = weights_at_np(W, x0, y0, cs, ys)
    mu = xs[:, None, :] + sigma * e_mu
    z = mu[:, :, None, :] + sigma * e_z
    tot = weights_at_np(W, x0, y0, cs, z).sum(axis=-1)
    bad = (tot == 0.0).any(axis=1) & (wy > 0.0)
    d2 = ((ys[:, None, :] - mu) ** 2).sum(axis=-1)
    with np.errstate(divide="ignore"):
        terms = -_LOG_2PI - 2.0 * math.log(sigma) - d2 / (2.0 * sigma * sigma) - np.log(tot)
        out = np.log(wy) + math.log(nz / nc) + _logsumexp_rows(terms)
    out = np.where(wy == 0.0, -np.inf, out)
    out[bad] = np.nan
    status = np.where(bad, ZERO_DENOMINATOR, OK).astype(np.int64)
    return out, status


def lens_points_np(x, y, r, u_lens, n_keep):
    """Rectangle-rejection lens sampler on a block of proposals.

    Returns ``(points, n_accepted)`` where ``points`` holds the first
    ``min(n_keep, n_accepted)`` accepted proposals in proposal order.
    """
    d = math.hypot(y[0] - x[0], y[1] - x[1])
    ux = (2.0 * r - d) * u_lens[:, 0]
    uy = 2.0 * math.sqrt(r * r - 0.25 * d * d) * u_lens[:, 1]
    ll = np.sqrt(ux * ux + uy * uy)
    th = np.arctan2(uy, ux) + math.atan2(y[1] - x[1], y[0] - x[0])
    mx = ll * np.cos(th) + 0.5 * (x[0] + y[0])
    my = ll * np.sin(th) + 0.5 * (x[1] + y[1])
    r2 = r * r
    ok = ((mx - x[0]) ** 2 + (my - x[1]) ** 2 <= r2) & ((mx - y[0]) ** 2 + (my - y[1]) ** 2 <= r2)
    idx = np.flatnonzero(ok)
    keep = idx[:n_keep]
    return np.stack([mx[keep], my[keep]], axis=-1), idx.size


def radius_loglik_np(W, x0, y0, cs, xs, ys, radii, log_trunc, u_lens, e_disc):
    S, nr = radii.shape
    nc = e_disc.shape[2]
    nz = e_disc.shape[3]
    out = np.full(S, -np.inf)
    status = np.zeros(S, dtype=np.int64)
    wy = weights_at_np(W, x0, y0, cs, ys)
    const = -2.0 * _LOG_PI + math.log(nz / (nr * nc))
    for s in range(S):
        if wy[s] == 0.0 or log_trunc[s] == -np.inf:
            continue
        d = math.hypot(ys[s, 0] - xs[s, 0], ys[s, 1] - xs[s, 1])
        terms = []
        for i in range(nr):
            r = radii[s, i]
            if d >= 2.0 * r:
                continue
            area = float(lens_area(d, r))
            if area <= 0.0:
                continue
            mu, n_acc = lens_points_np(xs[s], ys[s], r, u_lens[s, i], nc)
            if n_acc < nc:
                # the loop kernel checks each accepted centre's denominator
                # before it runs out, so report a zero denominator first
                z = mu[:, None, :] + r * e_disc[s, i, : mu.shape[0]]
                if (weights_at_np(W, x0, y0, cs, z).sum(axis=-1) == 0.0).any():
                    status[s] = ZERO_DENOMINATOR
                else:
                    status[s] = LENS_EXHAUSTED
                break
            z = mu[:, None, :] + r * e_disc[s, i]
            tot = weights_at_np(W, x0, y0, cs, z).sum(axis=-1)
            if (tot == 0.0).any():
                status[s] = ZERO_DENOMINATOR
                break
            inner = _logsumexp_rows(-np.log(tot)[None, :])[0]
            terms.append(math.log(area) - 4.0 * math.log(r) + inner)
        if status[s] != OK:
            out[s] = np.nan
        elif terms:
            out[s] = math.log(wy[s]) + log_trunc[s] + const + _logsumexp_rows(np.array(terms)[None, :])[0]
    return out, status


def simulate_chunk_np(W, x0, y0, cs, start, e_mu, e_z, scales, u_choice):
    S = e_mu.shape[0]
    pts = np.full((S, 2), np.nan)
    p = np.array(start, dtype=float)
    for s in range(S):
        sc = scales[s]
        mu = p + sc * e_mu[s]
        z = mu + sc * e_z[s]
        w = weights_at_np(W, x0, y0, cs, z)
        cum = np.cumsum(w)
        tot = cum[-1]
        if tot == 0.0:
            return pts, s
        target = u_choice[s] * tot
        pick = int(np.searchsorted(cum, target, side="right"))
        if pick >= len(w):
            pick = int(np.flatnonzero(w)[-1])
        p = mu + sc * e_z[s, pick]
        pts[s] = p
    return pts, -1


def lens_area(d, r):
    """Area of the intersection of two discs of radius ``r`` whose centres
    are ``d`` apart."""
    d = np.asarray(d, dtype=float)
    r = np.asarray(r, dtype=float)
    inside = d < 2.0 * r
    ratio = np.where(inside, d / (2.0 * r), 1.0)
    root = np.sqrt(np.maximum(4.0 * r * r - d * d, 0.0))
    area = 2.0 * r * r * np.arccos(ratio) - 0.5 * d * root
    return np.where(inside, area, 0.0)


# ---------------------------------------------------------------------------
# dispatch

if USE_NUMBA:
    weights_at = weights_at_nb
    normal_loglik = normal_loglik_nb
    radius_loglik = radius_loglik_nb
    simulate_chunk = simulate_chunk_nb
else:
    weights_at = weights_at_np
    normal_loglik = normal_loglik_np
    radius_loglik = radius_loglik_np
    simulate_chunk = simulate_chunk_np
