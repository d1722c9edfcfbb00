"""Leading-order reduced energy F(mu0, r, lambda) and its interior maximum.

F(mu0, r, lambda) = -B1 / (r lambda)^{N-2} + B2 U_{0,mu0}(r) / lambda^{N/(q+1)}.
F is invariant under (mu0, r, lambda) -> (r mu0, 1, r lambda), so the search
runs over F*(M0, Lambda) = F(M0, 1, Lambda).  For fixed M0 the maximizing
Lambda is explicit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .energy import InteractionConstants
from .radial import GroundState


@dataclass(frozen=True)
class ReducedLandscape:
    consts: InteractionConstants
    gs: GroundState
    box: tuple = (8.0, 8.0)

    def __post_init__(self):
        if not (self.consts.B1 > 0 and self.consts.B2 > 0):
            raise ValueError("B1 and B2 must be positive")
        if not (self.box[0] > 1 and self.box[1] > 1):
            raise ValueError("box bounds must exceed 1")

    def U0(self, mu0, r):
        """U_{0,mu0}(r) = mu0^{N/(q+1)} U(mu0 r)."""
        mu0 = np.asarray(mu0, dtype=float)
        a = self.gs.pair.alpha_u
        return mu0**a * self.gs.U(mu0 * np.asarray(r, dtype=float))

    def with_box(self, M00: float, L0: float) -> "ReducedLandscape":
        return replace(self, box=(M00, L0))


def F(mu0, r, lam, land: ReducedLandscape):
    pr = land.gs.pair
    N = pr.N
    c = land.consts
    r = np.asarray(r, dtype=float)
    lam = np.asarray(lam, dtype=float)
    return -c.B1 / (r * lam) ** (N - 2) + c.B2 * land.U0(mu0, r) / lam**pr.alpha_u


def F_star(M0, Lam, land: ReducedLandscape):
    return F(M0, 1.0, Lam, land)


def dF_dLambda(M0, Lam, land: ReducedLandscape):
    """Analytic derivative of F* in Lambda and the scale of its two terms."""
    pr = land.gs.pair
    N, au = pr.N, pr.alpha_u
    c = land.consts
    t1 = (N - 2) * c.B1 * Lam ** (-(N - 1.0))
    t2 = au * c.B2 * land.U0(M0, 1.0) * Lam ** (-au - 1.0)
    return t1 - t2, np.abs(t1) + np.abs(t2)


def lambda_star(M0, land: ReducedLandscape):
    """Lambda(M0) = [(q+1)(N-2) B1 / (B2 N U_{0,M0}(1))]^{(p+1)/N}."""
    pr = land.gs.pair
    N = pr.N
    c = land.consts
    base = (pr.q + 1) * (N - 2) * c.B1 / (c.B2 * N * land.U0(M0, 1.0))
    return base ** ((pr.p + 1) / N)


def stationarity_residual(M0: float, land: ReducedLandscape, h: float = 1e-3) -> float:
    """Five-point central difference of F* in Lambda at Lambda(M0), relative to its term scale."""
    L = float(lambda_star(M0, land))
    g = lambda x: float(F_star(M0, x, land))
    d = L * h
    fd = (-g(L + 2 * d) + 8 * g(L + d) - 8 * g(L - d) + g(L - 2 * d)) / (12 * d)
    _, scale = dF_dLambda(M0, L, land)
    return abs(fd) / float(scale)


def f1_star(M0, land: ReducedLandscape):
    """F*(M0, Lambda(M0)) by direct evaluation and by its closed power form.

    The closed form is tau B2^{1+(p+1)/(q+1)} ((q+1)(N-2)B1/N)^{-(p+1)/(q+1)}
    X^{(p+1)(N-2)/N} with X = M0^{N/(q+1)} U(M0).
    """
    pr = land.gs.pair
    N, p, q = pr.N, pr.p, pr.q
    c = land.consts
    direct = F_star(M0, lambda_star(M0, land), land)
    X = land.U0(M0, 1.0)
    e = (p + 1) / (q + 1)
    K = pr.tau * c.B2 ** (1 + e) * ((q + 1) * (N - 2) * c.B1 / N) ** (-e)
    closed = K * X ** ((p + 1) * (N - 2) / N)
    return direct, closed


def lambda_sign_changes(M0: float, land: ReducedLandscape, n: int = 2001, span: float = 1e6) -> int:
    """Number of sign changes of dF*/dLambda on a log grid around Lambda(M0)."""
    L = float(lambda_star(M0, land))
    grid = L * np.geomspace(1 / span, span, n)
    d, _ = dF_dLambda(M0, grid, land)
    s = np.sign(d)
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


@dataclass(frozen=True)
class InteriorMax:
    M0: float
    Lam: float
    value: float
    margin: float
    box: tuple
    expansions: int
    grid_M0: float
    grid_Lam: float

    def orbit(self, t: float):
        """A point (mu0, r, lambda) = (M0/t, t, Lam/t) of the same scaling orbit."""
        return self.M0 / t, t, self.Lam / t


class BoxTooSmall(RuntimeError):
    pass


def _boundary_max(land, M00, L0, n=4097):
    xs = np.geomspace(1 / M00, M00, n)
    ls = np.geomspace(1 / L0, L0, n)
    vals = [F_star(xs, 1 / L0, land), F_star(xs, L0, land),
            F_star(1 / M00, ls, land), F_star(M00, ls, land)]
    best = max(float(np.max(v)) for v in vals)
    # refine along each edge
    for fixed_lam in (1 / L0, L0):
        res = minimize_scalar(lambda s: -float(F_star(math.exp(s), fixed_lam, land)),
                              bounds=(-math.log(M00), math.log(M00)), method="bounded",
                              options={"xatol": 1e-10})
        best = max(best, -res.fun)
    for fixed_m in (1 / M00, M00):
        res = minimize_scalar(lambda s: -float(F_star(fixed_m, math.exp(s), land)),
                              bounds=(-math.log(L0), math.log(L0)), method="bounded",
                              options={"xatol": 1e-10})
        best = max(best, -res.fun)
    return best


def _search(land, resolution):
    M00, L0 = land.box
    xs = np.geomspace(1 / M00, M00, resolution)
    ls = np.geomspace(1 / L0, L0, resolution)
    vals = F_star(xs[:, None], ls[None, :], land)
    i, j = np.unravel_index(int(np.argmax(vals)), vals.shape)
    gm, gl = float(xs[i]), float(ls[j])
    # golden section in Lambda at the grid M0, then along Lambda(M0) in M0
    res = minimize_scalar(lambda s: -float(F_star(gm, math.exp(s), land)),
                          bracket=(math.log(gl) - 0.5, math.log(gl), math.log(gl) + 0.5)
                          if 0 < j < resolution - 1 else None, method="golden", options={"xtol": 1e-10})
    lo = math.log(xs[max(i - 1, 0)])
    hi = math.log(xs[min(i + 1, resolution - 1)])
    res_m = minimize_scalar(lambda s: -float(f1_star(math.exp(s), land)[0]), bounds=(lo, hi),
                            method="bounded", options={"xatol": 1e-12})
    M0 = math.exp(res_m.x)
    L = float(lambda_star(M0, land))
    edge = 1e-9
    inside = (-math.log(M00) + edge < math.log(M0) < math.log(M00) - edge
              and -math.log(L0) + edge < math.log(L) < math.log(L0) - edge)
    val = float(F_star(M0, L, land)) if inside else max(float(vals[i, j]), -float(res.fun))
    margin = val - _boundary_max(land, M00, L0) if inside else -math.inf
    return M0, L, val, margin, gm, gl


def find_interior_max(land: ReducedLandscape, resolution: int = 64, auto_expand: bool = True,
                      max_expand: int = 12) -> InteriorMax:
    """Grid scan of F* over the box plus local refinement.

    margin = (interior max) - (max over the box boundary) must be positive.
    With auto_expand the box doubles until it is; otherwise BoxTooSmall is
    raised.  Every (M0/t, t, Lam/t) is an equivalent maximizer.
    """
    if resolution < 64:
        raise ValueError("resolution must be at least 64")
    for n_exp in range(max_expand + 1):
        M0, L, val, margin, gm, gl = _search(land, resolution)
        if margin > 0:
            return InteriorMax(M0, L, val, margin, land.box, n_exp, gm, gl)
        if not auto_expand:
            raise BoxTooSmall(f"no interior maximum in box {land.box}: margin {margin}")
        land = land.with_box(2 * land.box[0], 2 * land.box[1])
    raise BoxTooSmall(f"no interior maximum after {max_expand} expansions (box {land.box})")


def write_landscape_csv(land: ReducedLandscape, path, resolution: int = 64) -> None:
    M00, L0 = land.box
    xs = np.geomspace(1 / M00, M00, resolution)
    ls = np.geomspace(1 / L0, L0, resolution)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["M0", "Lambda", "Fstar"])
        for x in xs:
            for v, lam in zip(F_star(x, ls, land), ls):
                wr.writerow(["%.17g" % x, "%.17g" % lam, "%.17g" % v])
