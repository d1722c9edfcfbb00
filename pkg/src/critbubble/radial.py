"""Radial ground state of the critical system, its tail constants and the profile w.

The ground state solves, for r = |y|,

    u'' + (N-1)/r u' + v^p = 0,    v'' + (N-1)/r v' + u^q = 0,

with u(0) = 1 and both components positive and decaying.  Shooting in
beta = v(0) classifies trajectories; the tail is then produced by integrating
inward from r_max with asymptotic data, which is the stable direction, and the
two halves are joined by least squares at a matching radius.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson, ode, quad, simpson, solve_ivp
from scipy.optimize import least_squares
from scipy.special import gamma

from .core import CriticalPair

RTOL = 1e-12
ATOL = 1e-300
R_START = 1e-3


def sphere_area(N: int) -> float:
    """|S^{N-1}| = 2 pi^{N/2} / Gamma(N/2)."""
    return 2.0 * math.pi ** (N / 2.0) / float(gamma(N / 2.0))


def spow(x, e):
    """Sign-preserving power |x|^e sign(x)."""
    return np.sign(x) * np.abs(x) ** e


# ---------------------------------------------------------------------------
# profiles


def _hermite5_coeffs(grid, f, d, s2):
    """Monomial coefficients in t = (r - r_i)/h_i of the quintic Hermite pieces, shape (6, n-1)."""
    h = np.diff(grid)
    f0, f1 = f[:-1], f[1:]
    d0, d1 = d[:-1] * h, d[1:] * h
    s0, s1 = s2[:-1] * h * h, s2[1:] * h * h
    return np.array([
        f0,
        d0,
        0.5 * s0,
        -10 * f0 + 10 * f1 - 6 * d0 - 4 * d1 - 1.5 * s0 + 0.5 * s1,
        15 * f0 - 15 * f1 + 8 * d0 + 7 * d1 + 1.5 * s0 - s1,
        -6 * f0 + 6 * f1 - 3 * d0 - 3 * d1 - 0.5 * s0 + 0.5 * s1,
    ])


def _eval_terms(terms, r, order=0):
    """Sum of c r^{-e} (ln r)^L over terms (c, e, L), or its first derivative."""
    r = np.asarray(r, dtype=float)
    lr = np.log(r)
    out = np.zeros_like(r)
    for c, e, L in terms:
        if order == 0:
            out += c * r ** (-e) * lr**L
        else:
            val = -e * lr**L
            if L:
                val = val + L * lr ** (L - 1)
            out += c * r ** (-e - 1.0) * val
    return out


def _grid_layout(grid):
    """(n_uniform, log step) if grid is uniform on [0, 1] then geometric, else None."""
    hits = np.nonzero(grid == 1.0)[0]
    if grid[0] != 0.0 or len(hits) != 1 or hits[0] < 1 or hits[0] >= len(grid) - 1:
        return None
    n_u = int(hits[0])
    if np.max(np.abs(grid[: n_u + 1] - np.linspace(0.0, 1.0, n_u + 1))) > 1e-14:
        return None
    lg = np.log(grid[n_u:])
    d = np.diff(lg)
    if np.max(np.abs(d - d.mean())) > 1e-9 * d.mean():
        return None
    return n_u, float(d.mean())


def _diff_terms(terms):
    out = []
    for c, e, L in terms:
        out.append((-e * c, e + 1.0, L))
        if L:
            out.append((L * c, e + 1.0, L - 1))
    return out


@dataclass(frozen=True)
class RadialProfile:
    """Radial function on a grid with quintic Hermite interpolation.

    Beyond ``grid[-1]`` the function follows ``tail``, a list of terms
    (c, e, L) meaning c r^{-e} (ln r)^L.
    """

    grid: np.ndarray
    values: np.ndarray
    deriv: np.ndarray
    second: np.ndarray
    tail: tuple = ()
    interp_order: int = 5

    def __post_init__(self):
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("profile values must be finite")
        for a in (self.grid, self.values, self.deriv, self.second):
            a.setflags(write=False)
        object.__setattr__(self, "_fast", _grid_layout(self.grid))
        object.__setattr__(self, "_coef", _hermite5_coeffs(self.grid, self.values, self.deriv, self.second))
        object.__setattr__(self, "_h", np.diff(self.grid))

    @property
    def r_max(self) -> float:
        return float(self.grid[-1])

    @property
    def decay(self) -> tuple[float, int]:
        """(exponent, log power) of the slowest tail term."""
        if not self.tail:
            return math.inf, 0
        lead = min(self.tail, key=lambda t: (t[1], -t[2]))
        return float(lead[1]), int(lead[2])

    def _locate(self, r):
        n = len(self.grid) - 2
        if self._fast is None:
            i = np.searchsorted(self.grid, r, side="right") - 1
            return np.clip(i, 0, n)
        # uniform-then-geometric grid: index from arithmetic, then a one-step fix-up
        n_u, dlog = self._fast
        with np.errstate(divide="ignore"):
            i = np.where(r < 1.0, np.floor(r * n_u), n_u + np.floor(np.log(r) / dlog))
        i = np.clip(i.astype(np.int64), 0, n)
        i -= self.grid[i] > r
        i += (i < n) & (self.grid[np.minimum(i + 1, n + 1)] <= r)
        return np.clip(i, 0, n)

    def __call__(self, r):
        return self._eval(r, 0)

    def derivative(self, r):
        return self._eval(r, 1)

    def _eval(self, r, order):
        r = np.abs(np.asarray(r, dtype=float))
        out = np.empty_like(r)
        inside = r <= self.r_max
        ri = r[inside]
        i = self._locate(ri)
        h = self._h[i]
        t = (ri - self.grid[i]) / h
        c = self._coef
        if order == 0:
            acc = c[5][i]
            for m in (4, 3, 2, 1, 0):
                acc = c[m][i] + t * acc
        else:
            acc = 5.0 * c[5][i]
            for m in (4, 3, 2, 1):
                acc = m * c[m][i] + t * acc
            acc = acc / h
        out[inside] = acc
        if np.any(~inside):
            out[~inside] = _eval_terms(self.tail, r[~inside], order)
        return out

    def derivative_profile(self) -> "RadialProfile":
        """Profile of f'; its second derivative is taken from a cubic fit of f''."""
        third = np.gradient(self.second, self.grid, edge_order=2)
        return RadialProfile(self.grid, self.deriv.copy(), self.second.copy(), third,
                             tuple(_diff_terms(self.tail)))


# ---------------------------------------------------------------------------
# shooting


@dataclass(frozen=True)
class GridOptions:
    r_max: float = 1e4
    n_nodes: int = 4096
    n_uniform: int = 256
    r_match: float | None = None  # default 1.5 sqrt(N(N-2)), the core scale
    bracket_tol: float = 1e-12
    max_iter: int = 200

    def make_grid(self) -> np.ndarray:
        if self.r_max <= 1.0 or self.n_nodes <= self.n_uniform + 2:
            raise ValueError("need r_max > 1 and n_nodes > n_uniform + 2")
        inner = np.linspace(0.0, 1.0, self.n_uniform + 1)
        outer = np.geomspace(1.0, self.r_max, self.n_nodes - self.n_uniform)
        return np.concatenate([inner, outer[1:]])


class BracketError(RuntimeError):
    pass


def _rhs(pair):
    N, p, q = pair.N, pair.p, pair.q

    def f(t, y):
        r2 = math.exp(2.0 * t)
        u, a, v, b = y
        vp = abs(v) ** p * (1.0 if v >= 0 else -1.0)
        uq = abs(u) ** q * (1.0 if u >= 0 else -1.0)
        return [a, -(N - 2) * a - r2 * vp, b, -(N - 2) * b - r2 * uq]

    return f


def _series_start(pair, beta, r):
    """(u, r u', v, r v') from the fourth-order expansion at the origin."""
    N, p, q = pair.N, pair.p, pair.q
    u2 = -beta**p / (2 * N)
    v2 = -1.0 / (2 * N)
    u4 = -p * beta ** (p - 1) * v2 / (4 * (N + 2))
    v4 = -q * u2 / (4 * (N + 2))
    r2 = r * r
    return np.array([1 + u2 * r2 + u4 * r2 * r2, 2 * u2 * r2 + 4 * u4 * r2 * r2,
                     beta + v2 * r2 + v4 * r2 * r2, 2 * v2 * r2 + 4 * v4 * r2 * r2])


def _integrate(pair, y0, t0, t_out, check=None):
    """Integrate in t = ln r from t0 through the points t_out (monotone).

    check(t, y) is called after every accepted step; a nonzero return stops
    the integration.  Returns (states at the reached points, stop code).
    """
    o = ode(_rhs(pair)).set_integrator("dop853", rtol=RTOL, atol=ATOL, nsteps=10**6)
    code = [0]
    if check is not None:
        def solout(t, y):
            c = check(t, y)
            if c:
                code[0] = c
                return -1
            return 0
        o.set_solout(solout)
    o.set_initial_value(np.asarray(y0, dtype=float), t0)
    out = []
    for t in t_out:
        if t != t0:
            o.integrate(t)
        if code[0] or not o.successful():
            break
        out.append(o.y.copy())
    Y = np.array(out).T if out else np.empty((4, 0))
    return Y, code[0]


def shoot(pair: CriticalPair, beta: float, r_end: float, r_out=None):
    """Integrate outward from the origin; returns (sign, states at r_out).

    sign is +1 when beta = v(0) is too large (u crosses zero or the
    logarithmic slope of v turns upward), -1 when it is too small (the same
    tests with u and v swapped) and 0 when the trajectory reached r_end
    cleanly.  The tests run after every accepted step.
    """
    N, p, q = pair.N, pair.p, pair.q

    def check(t, y):
        u, a, v, b = y
        if u < 0:
            return 1
        if v < 0:
            return -1
        r2 = math.exp(2 * t)
        # (r f')' r - ... > 0 means r f'/f is increasing: f stops decaying like a power
        if (-(N - 2) * a - r2 * v**p) * u - a * a > 0:
            return -1
        if (-(N - 2) * b - r2 * u**q) * v - b * b > 0:
            return 1
        return 0

    t_out = [math.log(r_end)] if r_out is None else list(np.log(r_out))
    Y, code = _integrate(pair, _series_start(pair, beta, R_START), math.log(R_START), t_out, check)
    return code, Y


def bisect_beta(pair: CriticalPair, opts: GridOptions):
    """Bracket and bisect beta; returns (beta, lo, hi, iterations)."""
    R = opts.r_max
    lo, hi = 0.5, 2.0
    for _ in range(60):
        s_lo, _ = shoot(pair, lo, R)
        if s_lo < 0:
            break
        lo *= 0.5
    else:
        raise BracketError("no lower bracket for beta")
    for _ in range(60):
        s_hi, _ = shoot(pair, hi, R)
        if s_hi > 0:
            break
        hi *= 2.0
    else:
        raise BracketError("no upper bracket for beta")
    for it in range(opts.max_iter):
        if hi - lo <= opts.bracket_tol * hi:
            return 0.5 * (lo + hi), lo, hi, it
        mid = 0.5 * (lo + hi)
        s, _ = shoot(pair, mid, R)
        if s > 0:
            hi = mid
        elif s < 0:
            lo = mid
        else:
            return mid, lo, hi, it
    raise RuntimeError(f"bisection did not converge in {opts.max_iter} iterations")


# ---------------------------------------------------------------------------
# asymptotic tail


def _tail_terms(pair: CriticalPair, b: float, a_hom: float):
    """Asymptotic terms of (U, V) at large r given V ~ b r^{2-N}.

    a_hom is the coefficient of the free r^{2-N} mode of U.  The forced
    response to V^p is included, and likewise the response of V to the
    leading part of U^q.
    """
    N, p, q = pair.N, pair.p, pair.q
    m_u = 2.0 - p * (N - 2)
    branch = pair.u_branch
    U = [(a_hom, N - 2.0, 0)]
    if branch == "log":
        K = b**p / (N - 2.0)
        U.append((K, N - 2.0, 1))
        lead_c, lead_e, lead_L = K, N - 2.0, 1
    else:
        c_u = -b**p / (m_u * (m_u + N - 2))
        U.append((c_u, -m_u, 0))
        if branch == "fast":
            lead_c, lead_e, lead_L = a_hom, N - 2.0, 0
        else:
            lead_c, lead_e, lead_L = c_u, -m_u, 0
    V = [(b, N - 2.0, 0)]
    m_v = 2.0 - q * lead_e
    denom = m_v * (m_v + N - 2)
    if lead_L == 0 and abs(denom) > 1e-12 and lead_c > 0:
        V.append((-lead_c**q / denom, -m_v, 0))
    return U, V


def _tail_state(pair, b, a_hom, r):
    U, V = _tail_terms(pair, b, a_hom)
    return np.array([_eval_terms(U, r), r * _eval_terms(U, r, 1),
                     _eval_terms(V, r), r * _eval_terms(V, r, 1)], dtype=float)


def _inward(pair, b, a_hom, R, r_out):
    """States at r_out (decreasing, starting at or below R) from tail data at R."""
    y0 = _tail_state(pair, b, a_hom, np.array(R))
    return _integrate(pair, y0, math.log(R), list(np.log(r_out)))[0]


def _dense(pair, y0, r0, r_out):
    """States at r_out from one continuous run started at r0 (dense output).

    Used to fill the grid: stopping at every node would multiply the number
    of steps and the accumulated error.
    """
    t_out = np.log(r_out)
    t1 = t_out[0] if abs(t_out[0] - math.log(r0)) > abs(t_out[-1] - math.log(r0)) else t_out[-1]
    sol = solve_ivp(_rhs(pair), (math.log(r0), t1), y0, method="DOP853", rtol=RTOL, atol=ATOL,
                    dense_output=True)
    if sol.status != 0:
        raise RuntimeError(f"profile integration failed: {sol.message}")
    return sol.sol(t_out)


def _outward(pair, beta, r_out):
    """States at r_out (increasing, all >= R_START) from the origin series."""
    return _integrate(pair, _series_start(pair, beta, R_START), math.log(R_START), list(np.log(r_out)))[0]


# ---------------------------------------------------------------------------
# ground state


@dataclass(frozen=True)
class GroundState:
    """Ground state (U, V) with U(0) = 1, tail constants and energy."""

    pair: CriticalPair
    U: RadialProfile
    V: RadialProfile
    a: float
    b: float
    A: float
    beta: float
    margin: float
    a_hom: float = 0.0
    match_residual: float = 0.0
    options: GridOptions = field(default_factory=GridOptions)

    @property
    def grid(self) -> np.ndarray:
        return self.U.grid


def _second(pair, r, f_d, g):
    """f'' from the ODE given f' and the forcing g (= v^p or u^q)."""
    N = pair.N
    out = np.empty_like(r)
    nz = r > 0
    out[nz] = -(N - 1) / r[nz] * f_d[nz] - g[nz]
    out[~nz] = -g[~nz] / N
    return out


def _match(pair, beta0, opts, r_g):
    """Least-squares join of the outward shot and the inward tail at r_match."""
    N = pair.N
    R, r_m = opts.r_max, _r_match(pair, opts)
    # rough tail data read off the bisected trajectory at radius r_g
    _, Y = shoot(pair, beta0, r_g, r_out=[r_g])
    if Y.shape[1] == 0:
        raise RuntimeError("bisected trajectory failed before the guess radius")
    u_g, _, v_g, _ = Y[:, -1]
    rg = np.array(r_g)
    b0, a0 = v_g * r_g ** (N - 2), 0.0
    for _ in range(20):
        # peel off the correction terms of the tail expansion
        Ut, Vt = _tail_terms(pair, b0, a0)
        a0 = (u_g - _eval_terms(Ut[1:], rg)) * r_g ** (N - 2)
        b0 = (v_g - _eval_terms(Vt[1:], rg)) * r_g ** (N - 2)
    scale_a = max(abs(a0), b0)

    def resid(x):
        beta, b, a_hom = x[0], x[1] * b0, x[2] * scale_a
        yi = _outward(pair, beta, [r_m])
        yo = _inward(pair, b, a_hom, R, [r_m])
        if yi.shape[1] == 0 or yo.shape[1] == 0:
            return np.full(4, 1e3)
        yi, yo = yi[:, -1], yo[:, -1]
        return np.array([(yi[0] - yo[0]) / yi[0], (yi[1] - yo[1]) / yi[0],
                         (yi[2] - yo[2]) / yi[2], (yi[3] - yo[3]) / yi[2]])

    x0 = np.array([beta0, 1.0, a0 / scale_a])
    res = least_squares(resid, x0, method="trf", xtol=1e-12, ftol=1e-12, gtol=1e-12, diff_step=1e-7)
    beta, b, a_hom = res.x[0], res.x[1] * b0, res.x[2] * scale_a
    return beta, b, a_hom, float(np.max(np.abs(res.fun)))


def _r_match(pair, opts):
    if opts.r_match is not None:
        return float(opts.r_match)
    return 1.5 * math.sqrt(pair.N * (pair.N - 2.0))


def _guess_radius(pair, lo, hi, R):
    """Largest radius at which the two bracketing trajectories agree to 1e-6."""
    rs = np.geomspace(2.0, R, 200)
    _, y1 = shoot(pair, lo, R, r_out=rs)
    _, y2 = shoot(pair, hi, R, r_out=rs)
    n = min(y1.shape[1], y2.shape[1])
    rel = np.abs(y1[0, :n] - y2[0, :n]) / np.abs(y1[0, :n])
    ok = np.nonzero(rel < 1e-6)[0]
    if len(ok) == 0:
        return 2.0
    return float(rs[ok[-1]])


def solve_ground_state(pair: CriticalPair, opts: GridOptions | None = None) -> GroundState:
    """Shoot for v(0), then build profiles on the default grid.

    Raises BracketError if no bracket for v(0) exists and RuntimeError if the
    bisection or the matching fails.
    """
    opts = opts or GridOptions()
    N, p, q = pair.N, pair.p, pair.q
    R, r_m = opts.r_max, _r_match(pair, opts)
    beta0, lo, hi, _ = bisect_beta(pair, opts)
    r_g = min(_guess_radius(pair, lo, hi, R), R / 10)
    r_g = max(r_g, 2.0 * r_m)
    beta, b, a_hom, mres = _match(pair, beta0, opts, r_g)
    if mres > 1e-8:
        raise RuntimeError(f"matching residual {mres:.3e} too large")

    grid = opts.make_grid()
    n_in = int(np.searchsorted(grid, r_m, side="right"))
    r_in = grid[1:n_in]
    r_out = grid[n_in:]
    yin = np.empty((4, len(r_in)))
    small = r_in < R_START
    for j in np.nonzero(small)[0]:
        yin[:, j] = _series_start(pair, beta, r_in[j])
    big = ~small
    if np.any(big):
        yin[:, big] = _dense(pair, _series_start(pair, beta, R_START), R_START, r_in[big])
    yout = _dense(pair, _tail_state(pair, b, a_hom, np.array(R)), R, r_out)
    Y = np.concatenate([_series_start(pair, beta, 0.0)[:, None], yin, yout], axis=1)
    u, v = Y[0], Y[2]
    du = np.zeros_like(u)
    dv = np.zeros_like(v)
    du[1:] = Y[1, 1:] / grid[1:]
    dv[1:] = Y[3, 1:] / grid[1:]
    d2u = _second(pair, grid, du, spow(v, p))
    d2v = _second(pair, grid, dv, spow(u, q))
    Ut, Vt = _tail_terms(pair, b, a_hom)
    Ut = _rescale(Ut, u[-1], R)
    Vt = _rescale(Vt, v[-1], R)
    U = RadialProfile(grid, u, du, d2u, tuple(Ut))
    V = RadialProfile(grid, v, dv, d2v, tuple(Vt))
    if np.any(u <= 0) or np.any(v <= 0):
        raise RuntimeError("ground state lost positivity")
    a = _lead_a(pair, b, a_hom)
    A = (2.0 / N) * radial_moment([U], [q + 1.0], N)
    return GroundState(pair, U, V, a, b, A, beta, hi - lo, a_hom, mres, opts)


def _rescale(terms, value, R):
    s = value / float(_eval_terms(terms, np.array(R)))
    return [(c * s, e, L) for c, e, L in terms]


def _lead_a(pair, b, a_hom):
    N, p = pair.N, pair.p
    if pair.u_branch == "fast":
        return a_hom
    if pair.u_branch == "log":
        return b**p / (N - 2.0)
    m_u = 2.0 - p * (N - 2)
    return -b**p / (m_u * (m_u + N - 2))


# ---------------------------------------------------------------------------
# diagnostics


def fd_weights(x0: float, x: np.ndarray, m: int) -> np.ndarray:
    """Finite-difference weights for the m-th derivative at x0 from nodes x (Fornberg)."""
    n = len(x)
    c = np.zeros((n, m + 1))
    c1, c4 = 1.0, x[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5 = 1.0, c4
        c4 = x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


def ode_residual(gs: GroundState) -> float:
    """Max scaled residual of both equations at interior nodes.

    u'' is recovered from the stored u' by fourth-order finite differences,
    so the check is independent of how the profile was produced.
    """
    pair = gs.pair
    N, p, q = pair.N, pair.p, pair.q
    r = gs.grid
    worst = 0.0
    for f, g, e in ((gs.U, gs.V, p), (gs.V, gs.U, q)):
        d = f.deriv
        for i in range(2, len(r) - 2):
            idx = slice(i - 2, i + 3)
            w = fd_weights(r[i], r[idx], 1)
            d2 = float(w @ d[idx])
            t1 = (N - 1) / r[i] * d[i]
            t2 = g.values[i] ** e
            res = abs(d2 + t1 + t2) / max(abs(d2), abs(t1), abs(t2))
            worst = max(worst, res)
    return worst


# ---------------------------------------------------------------------------
# tail constants


@dataclass(frozen=True)
class TailFit:
    a: float
    b: float
    u_exponent: float
    v_exponent: float
    a_flux: float
    b_flux: float
    fit_residual: float


def _fit_two_term(x, y, kappa):
    """Least-squares fit y = c (1 + d x^{-kappa}); returns c, relative rms residual."""
    M = np.column_stack([np.ones_like(x), x ** (-kappa)])
    coef, *_ = np.linalg.lstsq(M, y, rcond=None)
    rms = float(np.sqrt(np.mean((M @ coef - y) ** 2)) / abs(coef[0]))
    return float(coef[0]), rms


def tail_constants(gs: GroundState, fit_tol: float = 1e-6) -> TailFit:
    """Extract a, b from the outer decade of the profiles.

    b is the limit of r^{N-2} V; a is the limit of r^{N-2} U (fast decay),
    of r^{N-2} U / ln r (p = N/(N-2)) or of r^{p(N-2)-2} U (slow decay).
    Decay exponents come from a log-log regression on the same decade.
    """
    pair = gs.pair
    N, p, q = pair.N, pair.p, pair.q
    r = gs.grid
    R = r[-1]
    if R < 1e3:
        raise ValueError("tail fit needs r_max >= 1e3")
    sel = r >= R / 10
    x = r[sel]
    u = gs.U.values[sel]
    v = gs.V.values[sel]
    # V - b r^{2-N} is driven by U^q, hence the correction exponent
    b, res_b = _fit_two_term(x, x ** (N - 2) * v, q * pair.u_decay - N)
    branch = pair.u_branch
    if branch == "fast":
        a, res_a = _fit_two_term(x, x ** (N - 2) * u, p * (N - 2) - N)
    elif branch == "log":
        M = np.column_stack([np.ones_like(x), 1.0 / np.log(x)])
        yy = x ** (N - 2) * u / np.log(x)
        coef, *_ = np.linalg.lstsq(M, yy, rcond=None)
        a = float(coef[0])
        res_a = float(np.sqrt(np.mean((M @ coef - yy) ** 2)) / abs(a))
    else:
        e = pair.u_decay
        a, res_a = _fit_two_term(x, x**e * u, N - 2 - e)
    tol = fit_tol if branch != "log" else 1e-2
    res = max(res_a, res_b)
    if res > tol:
        raise ValueError(f"tail fit residual {res:.2e} exceeds {tol:.0e}; increase r_max")
    su = -np.polyfit(np.log(x), np.log(u), 1)[0]
    sv = -np.polyfit(np.log(x), np.log(v), 1)[0]
    b_flux = radial_moment([gs.U], [q], N) / ((N - 2) * sphere_area(N))
    a_flux = math.nan
    if branch == "fast":
        a_flux = radial_moment([gs.V], [p], N) / ((N - 2) * sphere_area(N))
    elif branch == "log":
        a_flux = b_flux**p / (N - 2)
    return TailFit(a, b, float(su), float(sv), a_flux, b_flux, res)


# ---------------------------------------------------------------------------
# integrals


def radial_moment(profiles, powers, N: int, weight=None, weight_exponent: float = 0.0) -> float:
    """Integral over R^N of prod f_i(|y|)^{p_i} (times weight(|y|)).

    Composite Simpson on the profile grid plus the analytic tail of each
    profile beyond its last node.  weight_exponent is the growth rate of the
    weight at infinity, used for the divergence check.
    """
    if len(profiles) != len(powers):
        raise ValueError("profiles and powers must align")
    grid = profiles[0].grid
    for f in profiles[1:]:
        if f.grid.shape != grid.shape or np.any(f.grid != grid):
            raise ValueError("profiles must share a grid")
    vals = [f.values for f in profiles]
    if all(not np.any(v) for v in vals):
        return 0.0
    decay = sum(pw * f.decay[0] for f, pw in zip(profiles, powers)) - weight_exponent
    if not decay > N:
        if any(f.decay[0] == math.inf for f in profiles):
            pass
        else:
            raise ValueError(f"integrand decays like r^-{decay:.4g}; diverges in dimension {N}")

    def integrand(r, fv):
        out = np.ones_like(np.asarray(r, dtype=float))
        for v, pw in zip(fv, powers):
            out = out * _power(v, pw)
        if weight is not None:
            out = out * weight(r)
        return out * np.asarray(r, dtype=float) ** (N - 1)

    body = simpson(integrand(grid, vals), x=grid)
    R = grid[-1]
    tail = 0.0
    if all(f.tail for f in profiles):
        def g(r):
            rr = np.array([r])
            return float(integrand(rr, [f(rr) for f in profiles])[0])
        tail, _ = quad(g, R, np.inf, epsabs=0.0, epsrel=1e-10, limit=200)
    return sphere_area(N) * (body + tail)


def _power(v, pw):
    v = np.asarray(v, dtype=float)
    if float(pw).is_integer():
        return v ** int(pw)
    if np.any(v < 0):
        raise ValueError("non-integer power of a negative profile")
    return v**pw


# ---------------------------------------------------------------------------
# auxiliary profile w


@dataclass(frozen=True)
class AuxProfileW:
    """Decaying solution of -Delta w = V^{p-1}."""

    w: RadialProfile
    pair: CriticalPair

    def __call__(self, r):
        return self.w(r)


def solve_w(pair: CriticalPair, gs: GroundState) -> AuxProfileW:
    """w(r) = (1/(N-2)) [r^{2-N} M(r) + int_r^inf t f dt], f = V^{p-1}, M(r) = int_0^r t^{N-1} f.

    Requires (p-1)(N-2) > 2 so that int t f converges.
    """
    N, p = pair.N, pair.p
    s = (p - 1.0) * (N - 2)
    if not s > 2.0:
        raise ValueError(f"(p-1)(N-2) = {s:.4g} <= 2: the potential of V^(p-1) diverges")
    r = gs.grid
    f = gs.V.values ** (p - 1.0)
    R = r[-1]
    F = f[-1] * R**s  # f ~ F r^{-s} beyond R
    M = cumulative_simpson(r ** (N - 1) * f, x=r, initial=0.0)
    # int_r^R t f dt, accumulated from the outside in to avoid cancellation
    inner_rev = cumulative_simpson((r * f)[::-1], x=-r[::-1], initial=0.0)[::-1]
    tail_tf = F * R ** (2 - s) / (s - 2)
    wv = np.empty_like(r)
    wv[0] = (inner_rev[0] + tail_tf) / (N - 2)
    rr = r[1:]
    wv[1:] = (rr ** (2 - N) * M[1:] + inner_rev[1:] + tail_tf) / (N - 2)
    dw = np.zeros_like(r)
    dw[1:] = -rr ** (1 - N) * M[1:]
    d2w = _second(pair, r, dw, f)
    MR = M[-1]
    if abs(s - N) > 1e-12:
        terms = [((MR + F * R ** (N - s) / (s - N)) / (N - 2), N - 2.0, 0),
                 (F * (1.0 / (s - 2) - 1.0 / (s - N)) / (N - 2), s - 2.0, 0)]
    else:
        terms = [((MR - F * math.log(R)) / (N - 2), N - 2.0, 0),
                 (F / (N - 2), N - 2.0, 1),
                 (F / ((s - 2) * (N - 2)), s - 2.0, 0)]
    prof = RadialProfile(r, wv, dw, d2w, tuple(terms))
    if np.any(wv <= 0):
        raise RuntimeError("w lost positivity")
    return AuxProfileW(prof, pair)


# ---------------------------------------------------------------------------
# export


def write_profile_csv(gs: GroundState, path) -> None:
    """Write "r,U,V,dU,dV" at full grid resolution with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["r", "U", "V", "dU", "dV"])
        for row in zip(gs.grid, gs.U.values, gs.V.values, gs.U.deriv, gs.V.deriv):
            wr.writerow(["%.17g" % x for x in row])


def read_profile_csv(path):
    """Read back a profile CSV as a dict of arrays ('#' lines are metadata)."""
    with open(path) as fh:
        rows = [ln for ln in fh if not ln.startswith("#")]
    data = np.loadtxt(rows[1:], delimiter=",", ndmin=2)
    return {k: data[:, i] for i, k in enumerate(["r", "U", "V", "dU", "dV"])}
