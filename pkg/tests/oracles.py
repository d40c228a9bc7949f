"""Independent reference computations used by the tests.

Nothing here calls the package's Monte Carlo code; the functions work from
raw cell weights with deterministic quadrature.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import erf, gammainc, gammaincc, gammainccinv

# ---------------------------------------------------------------------------
# lattice version of the local Gibbs chain


def lattice_cell_chain(w_cells: np.ndarray, kernel: str, scale_cells: float, nodes_per_cell: int = 40,
                       trunc_sd: float = 6.0):
    """Cell-to-cell transition matrix of the local Gibbs chain with every
    integral replaced by a sum over a regular lattice.

    ``w_cells`` holds the habitat weight of each cell of a small domain (unit
    cells). The transition density is a lattice-normalised normal (truncated
    at ``trunc_sd`` standard deviations) or disc indicator, so the lattice
    chain is itself a reversible Markov chain whose stationary law is the
    lattice version of the utilisation distribution.

    Returns ``(P, pi)`` with ``pi`` the stationary cell masses implied by the
    raw weights (``w * area``, normalised) and ``P`` the lumped transition
    matrix between cells (row-major cell order).
    """
    nr, nc = w_cells.shape
    n = nodes_per_cell
    h = 1.0 / n
    node_w = np.kron(w_cells, np.ones((n, n)))
    if kernel == "normal":
        half = int(math.ceil(trunc_sd * scale_cells * n))
        k = np.arange(-half, half + 1) * h
        kx, ky = np.meshgrid(k, k)
        phi = np.exp(-0.5 * (kx**2 + ky**2) / scale_cells**2)
        phi[kx**2 + ky**2 > (trunc_sd * scale_cells) ** 2] = 0.0
    elif kernel == "disc":
        half = int(math.ceil(scale_cells * n))
        k = np.arange(-half, half + 1) * h
        kx, ky = np.meshgrid(k, k)
        phi = (kx**2 + ky**2 <= scale_cells**2).astype(float)
    else:
        raise ValueError(kernel)
    phi /= phi.sum() * h * h
    # Phi_a(mu) = sum over nodes x in cell a of h^2 w(x) phi(mu - x), on the
    # full (padded) lattice of centres mu
    cells = []
    for a in range(nr * nc):
        i, j = divmod(a, nc)
        mask = np.zeros_like(node_w)
        mask[i * n:(i + 1) * n, j * n:(j + 1) * n] = 1.0
        cells.append(fftconvolve(mask * node_w * h * h, phi, mode="full"))
    Phi = np.array(cells)
    Phi[Phi < 0] = 0.0  # FFT round-off
    Z = Phi.sum(axis=0)
    ok = Z > 0
    M = np.einsum("am,bm->ab", Phi[:, ok], Phi[:, ok] / Z[ok]) * h * h
    P = M / M.sum(axis=1, keepdims=True)
    pi = (w_cells.ravel()) / w_cells.sum()
    return P, pi


# ---------------------------------------------------------------------------
# exact normalising integrals on a raster


def _normal_cell_mass(mu, edges_x, edges_y, sigma):
    """Probability of each cell under N(mu, sigma^2 I), shape (ny, nx)."""
    cx = 0.5 * (1 + erf((edges_x - mu[0]) / (math.sqrt(2) * sigma)))
    cy = 0.5 * (1 + erf((edges_y - mu[1]) / (math.sqrt(2) * sigma)))
    return np.outer(np.diff(cy), np.diff(cx))


def _S(x, R):
    """Antiderivative of sqrt(R^2 - x^2)."""
    x = np.clip(x, -R, R)
    return 0.5 * (x * np.sqrt(np.maximum(R * R - x * x, 0.0)) + R * R * np.arcsin(x / R))


def quadrant_area(a, b, R):
    """Area of the disc of radius R at the origin intersected with
    {x <= a, y <= b}; vectorised over ``a`` and ``b``."""
    a = np.clip(np.asarray(a, float), -R, R)
    b = np.asarray(b, float)
    bc = np.clip(b, -R, R)
    c = np.sqrt(np.maximum(R * R - bc * bc, 0.0))
    # b >= 0: full chords for |x| >= c, chord from -s(x) up to b inside
    hi1 = np.maximum(np.minimum(a, -c), -R)
    part1 = 2.0 * (_S(hi1, R) - _S(-R, R))
    hi2 = np.maximum(np.minimum(a, c), -c)
    part2 = bc * (hi2 + c) + _S(hi2, R) - _S(-c, R)
    hi3 = np.maximum(a, c)
    part3 = 2.0 * (_S(hi3, R) - _S(c, R))
    upper = part1 + part2 + part3
    # b < 0: only |x| < c, chord from -s(x) up to b
    lower = part2
    out = np.where(bc >= 0, upper, lower)
    return np.where(b <= -R, 0.0, out)


def disc_rect_area(cx, cy, R, x0, x1, y0, y1):
    """Area of the disc (cx, cy, R) intersected with [x0, x1] x [y0, y1]."""
    q = lambda a, b: quadrant_area(np.asarray(a) - cx, np.asarray(b) - cy, R)  # noqa: E731
    return q(x1, y1) - q(x0, y1) - q(x1, y0) + q(x0, y0)


class RasterOracle:
    """Cell weights on a grid with lower-left corner ``origin`` and cell
    size ``cs``; row 0 is the bottom row. Weights outside the grid are 0."""

    def __init__(self, w, origin, cs):
        self.w = np.asarray(w, dtype=float)
        self.x0, self.y0 = origin
        self.cs = cs
        ny, nx = self.w.shape
        self.ex = self.x0 + cs * np.arange(nx + 1)
        self.ey = self.y0 + cs * np.arange(ny + 1)
        # summation by parts: sum_c w_c area(disc & cell_c) equals
        # sum over corners of Q(corner) times the mixed second difference of w
        wp = np.pad(self.w, 1)
        coef = wp[:-1, :-1] - wp[:-1, 1:] - wp[1:, :-1] + wp[1:, 1:]
        cxg, cyg = np.meshgrid(self.ex, self.ey)
        keep = coef != 0
        self._corner_x, self._corner_y, self._corner_c = cxg[keep], cyg[keep], coef[keep]

    def weight(self, p):
        j = math.floor((p[0] - self.x0) / self.cs)
        i = math.floor((p[1] - self.y0) / self.cs)
        if 0 <= i < self.w.shape[0] and 0 <= j < self.w.shape[1]:
            return self.w[i, j]
        return 0.0

    def z_normal(self, mu, sigma):
        """Integral of phi(z | mu) w(z) for each row of ``mu``."""
        mu = np.atleast_2d(mu)
        k = math.sqrt(2) * sigma
        cx = 0.5 * (1 + erf((self.ex[None, :] - mu[:, :1]) / k))
        cy = 0.5 * (1 + erf((self.ey[None, :] - mu[:, 1:]) / k))
        return np.einsum("mi,ij,mj->m", np.diff(cy, axis=1), self.w, np.diff(cx, axis=1))

    def z_disc(self, mu, r):
        """Disc average of w around each row of ``mu`` (off-grid area counts
        as 0)."""
        mu = np.atleast_2d(mu)
        q = quadrant_area(self._corner_x[None, :] - mu[:, :1], self._corner_y[None, :] - mu[:, 1:], r)
        return q @ self._corner_c / (math.pi * r * r)


# ---------------------------------------------------------------------------
# quadrature step densities


def normal_step_loglik(orc: RasterOracle, x, y, sigma, n_nodes=48):
    """log p(y | x) for the normal kernel.

    phi(y|mu) phi(mu|x) = N(y - x; 0, 2 sigma^2 I) N(mu; (x+y)/2, sigma^2/2 I),
    so the centre integral is an expectation of 1/Z(mu) under a normal,
    computed by tensor Gauss-Hermite quadrature.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    t, wt = np.polynomial.hermite.hermgauss(n_nodes)
    a, b = np.meshgrid(t, t)
    mu = 0.5 * (x + y) + sigma * np.stack([a.ravel(), b.ravel()], axis=1)
    acc = np.sum(np.outer(wt, wt).ravel() / orc.z_normal(mu, sigma)) / math.pi
    d2 = float(np.sum((y - x) ** 2))
    log_conv = -d2 / (4 * sigma**2) - math.log(4 * math.pi * sigma**2)
    return math.log(orc.weight(y)) + log_conv + math.log(acc)


def lens_nodes(x, y, r, n_u=24, n_v=24):
    """Quadrature nodes and weights on the lens of the two radius-r discs
    around x and y."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    d = float(np.hypot(*(y - x)))
    mid = 0.5 * (x + y)
    e1 = (y - x) / d if d > 0 else np.array([1.0, 0.0])
    e2 = np.array([-e1[1], e1[0]])
    a = r - 0.5 * d
    s, ws = np.polynomial.legendre.leggauss(n_u)
    s = 0.5 * (s + 1)
    ws = 0.5 * ws
    tv, wv = np.polynomial.legendre.leggauss(n_v)
    # u = a (1 - s^2) on each half removes the square-root behaviour at the tips
    u = a * (1 - s * s)
    du = 2 * a * s
    V = np.sqrt(np.maximum(r * r - (u + 0.5 * d) ** 2, 0.0))
    pts, wts = [], []
    for side in (-1.0, 1.0):
        uu = side * u[:, None] * np.ones_like(tv)[None, :]
        vv = V[:, None] * tv[None, :]
        pts.append(mid + uu.reshape(-1, 1) * e1 + vv.reshape(-1, 1) * e2)
        wts.append((ws * du * V)[:, None] * wv[None, :])
    return np.vstack(pts), np.concatenate([w.ravel() for w in wts])


def _lens_integral(orc: RasterOracle, x, y, r, n_u=24, n_v=24):
    """Integral over the lens of 1/Z_r(mu) (Z_r the disc average of w)."""
    d = float(np.hypot(*(np.asarray(y, float) - np.asarray(x, float))))
    if d >= 2 * r:
        return 0.0
    mu, wts = lens_nodes(x, y, r, n_u, n_v)
    return float(np.sum(wts / orc.z_disc(mu, r)))


def fixed_radius_step_loglik(orc: RasterOracle, x, y, r, **kw):
    """log p(y | x) for the uniform-disc kernel of radius r:
    w(y) / (pi r^2)^2 * integral over the lens of 1 / Z(mu), where Z is the
    integral of phi w (= the disc average of w)."""
    val = _lens_integral(orc, x, y, r, **kw) / (math.pi * r * r) ** 2
    return math.log(orc.weight(y)) + math.log(val)


def gamma_radius_step_loglik(orc: RasterOracle, x, y, alpha, rho, n_r=24, **kw):
    """log p(y | x) with a gamma(alpha, rho) radius: the fixed-radius density
    integrated over r > d/2, with the r integral written in probability
    space and Gauss-Legendre nodes squared at the lower end."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    d = float(np.hypot(*(y - x)))
    tail = gammaincc(alpha, rho * d / 2)
    s, ws = np.polynomial.legendre.leggauss(n_r)
    s = 0.5 * (s + 1)
    ws = 0.5 * ws
    acc = 0.0
    for sk, wk in zip(s, ws):
        u = sk * sk
        r = gammainccinv(alpha, (1 - u) * tail) / rho
        if r <= d / 2:
            continue
        acc += wk * 2 * sk * _lens_integral(orc, x, y, r, **kw) / (math.pi * r * r) ** 2
    return math.log(orc.weight(y)) + math.log(tail * acc)


def gamma_cdf(r, alpha, rho):
    return gammainc(alpha, rho * r)
