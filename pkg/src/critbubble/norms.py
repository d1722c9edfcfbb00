"""Weighted sup-norms, the error of the polygon ansatz and the nonlinear remainder.

Sup-norms over R^N are approximated on a sample plan, so every value here
is a lower bound for the true norm.  The fields involved are invariant
under the rotations of the polygon, so the plan samples the neighborhood
of x_1 and the edge of its sector.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import linregress

from .bubble import bubble_distances, eval_multibubble, ksum, phi_asymptotic, sphere_points, superadditive_gap
from .core import CriticalPair, PolygonConfig
from .quad import chunk_rng
from .radial import AuxProfileW, GroundState, solve_ground_state, solve_w

KINDS = ("*,1", "*,2", "**,1", "**,2")


@dataclass(frozen=True)
class WeightedNormSpec:
    """Weight sum_j mu^alpha (1 + mu|y - x_j|)^{-beta} of one norm component."""

    kind: str
    alpha: float
    beta: float


def norm_spec(pair: CriticalPair, kind: str) -> WeightedNormSpec:
    if kind not in KINDS:
        raise ValueError(f"unknown norm kind {kind!r}; expected one of {KINDS}")
    base = pair.alpha_u if kind.endswith("1") else pair.alpha_v
    if kind.startswith("**"):
        base += 2.0
    return WeightedNormSpec(kind, base, base + pair.tau)


def norm_weight(config: PolygonConfig, spec: WeightedNormSpec, y) -> np.ndarray:
    mu = config.mu
    d = bubble_distances(config, y)
    return ksum(mu**spec.alpha * (1.0 + mu * d) ** (-spec.beta))


@dataclass(frozen=True)
class SamplePlan:
    """Points for the sup-norms and a mask of the outermost strata."""

    points: np.ndarray
    boundary: np.ndarray
    labels: tuple = ()

    def __len__(self):
        return len(self.points)

    def extend(self, other: "SamplePlan") -> "SamplePlan":
        return SamplePlan(np.concatenate([self.points, other.points]),
                          np.concatenate([self.boundary, other.boundary]), self.labels + other.labels)


def make_plan(config: PolygonConfig, seed: int = 0, n_dir: int = 24, n_radii: int = 24,
              far: tuple = (2.0, 4.0, 10.0, 100.0)) -> SamplePlan:
    """Stratified plan around x_1 plus the sector edge and far-field shells.

    Around x_1: log-spaced radii from 1e-2/mu to the polygon radius, covering
    the scales 1/mu, 1/k and r, each with n_dir random directions.  All k
    centers, the origin and the ray through the sector edge are included.
    The innermost ring and the outermost shell are flagged as boundary.
    """
    N, k, mu, r = config.N, config.k, config.mu, config.r
    rng = chunk_rng(seed, 0)
    x1 = config.centers[0]
    radii = np.geomspace(1e-2 / mu, r, n_radii)
    dirs = sphere_points(n_dir * n_radii, N, rng).reshape(n_radii, n_dir, N)
    near = (x1 + radii[:, None, None] * dirs).reshape(-1, N)
    near_b = np.zeros(len(near), bool)
    near_b[:n_dir] = True
    edge_t = np.geomspace(1e-2, 4.0, n_radii) * r
    ang = math.pi / k
    edge = np.zeros((n_radii, N))
    edge[:, 0] = edge_t * math.cos(ang)
    edge[:, 1] = edge_t * math.sin(ang)
    shells = np.concatenate([R * r * sphere_points(n_dir, N, rng) for R in far])
    shell_b = np.zeros(len(shells), bool)
    shell_b[-n_dir:] = True
    pts = np.concatenate([config.centers, np.zeros((1, N)), near, edge, shells])
    bnd = np.concatenate([np.zeros(k + 1, bool), near_b, np.zeros(n_radii, bool), shell_b])
    labels = ("centers", "origin", "core", "edge", "far")
    return SamplePlan(pts, bnd, labels)


def weighted_ratio(fvals, plan: SamplePlan, config: PolygonConfig, spec: WeightedNormSpec,
                   warn: bool = False) -> float:
    """max over the plan of |f| / weight; a lower bound of the weighted sup-norm."""
    f = np.abs(np.asarray(fvals, dtype=float))
    if f.shape != (len(plan),):
        raise ValueError("values and plan points must align")
    ratio = f / norm_weight(config, spec, plan.points)
    i = int(np.argmax(ratio))
    if warn and ratio[i] > 0 and plan.boundary[i]:
        warnings.warn(f"{spec.kind}-norm is attained on the plan boundary at point {i}; coverage may be short",
                      RuntimeWarning, stacklevel=2)
    return float(ratio[i])


# ---------------------------------------------------------------------------
# error term and nonlinearity


def _signed_gap(a, b, s):
    """|a - b|^{s-1}(a - b) - a^s + b^s for a, b >= 0, stable when one term dominates."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        ge = a >= b
        big = np.where(ge, a, b)
        small = np.where(ge, b, a)
        core = np.where(big > 0, big**s * np.expm1(s * np.log1p(-small / big)), 0.0)
        return np.where(ge, core + b**s, -core - a**s)


def _projection_parts(config, gs, w, y, inner=True):
    mb = eval_multibubble(config, gs, y, keep_each=True, inner=inner)
    phi = phi_asymptotic(config, gs, w, y) if config.k > 1 else np.zeros_like(mb.U_sum)
    return mb, phi


def error_term(config: PolygonConfig, gs: GroundState, w: AuxProfileW, y, inner: bool = True):
    """(l1, l2) = (-V0^p + V^p + |V*|^{p-1}V*, -U0^q + sum U_j^q + |U*|^{q-1}U*).

    V = sum V_j, U = sum U_j + phi (asymptotic), V* = V0 - V, U* = U0 - U.
    inner=False drops the inner bubble.
    """
    pr = gs.pair
    p, q = pr.p, pr.q
    mb, phi = _projection_parts(config, gs, w, y, inner)
    U = mb.U_sum + phi
    l1 = _signed_gap(mb.V0, mb.V_sum, p)
    with np.errstate(invalid="ignore", divide="ignore"):
        shift = np.where(mb.U_sum > 0, mb.U_sum**q * np.expm1(q * np.log1p(phi / mb.U_sum)), phi**q)
    lift = superadditive_gap(mb.U_each, q) + shift
    l2 = _signed_gap(mb.U0, U, q) - lift
    return l1, l2


def error_norm(config: PolygonConfig, gs: GroundState, w: AuxProfileW, plan: SamplePlan,
               warn: bool = True) -> float:
    """Plan estimate of ||(l1, l2)||_** = ||l1||_{**,1} + ||l2||_{**,2}."""
    l1, l2 = error_term(config, gs, w, plan.points)
    pr = gs.pair
    return (weighted_ratio(l1, plan, config, norm_spec(pr, "**,1"), warn)
            + weighted_ratio(l2, plan, config, norm_spec(pr, "**,2"), warn))


@dataclass(frozen=True)
class NormRow:
    k: int
    mu: float
    l_norm: float
    scaled: float


@dataclass(frozen=True)
class NormTable:
    rows: list
    slope: float
    slope_stderr: float

    @property
    def scaled_decreasing(self) -> bool:
        return all(b.scaled < a.scaled for a, b in zip(self.rows, self.rows[1:]))

    def slope_ok(self, pair: CriticalPair) -> bool:
        """Log-log slope of ||l||_** against mu at most -N/(2(q+1)) within its fit error."""
        if len(self.rows) < 2:
            return True
        return self.slope <= -pair.alpha_u / 2 + self.slope_stderr


def error_norm_check(pair: CriticalPair, mu0: float, r: float, lam: float, k_list, seed: int = 0,
                     gs: GroundState | None = None, w: AuxProfileW | None = None, **plan_kw) -> NormTable:
    """||(l1, l2)||_** and its mu^{N/(2(q+1))}-scaled value for each k, plus the log-log slope."""
    gs = gs or solve_ground_state(pair)
    w = w or solve_w(pair, gs)
    rows = []
    for k in k_list:
        cfg = PolygonConfig(pair, k, mu0, r, lam)
        plan = make_plan(cfg, seed, **plan_kw)
        val = error_norm(cfg, gs, w, plan)
        rows.append(NormRow(k, cfg.mu, val, val * cfg.mu ** (pair.alpha_u / 2)))
    slope, serr = math.nan, math.nan
    if len(rows) >= 3:
        fit = linregress(np.log([x.mu for x in rows]), np.log([x.l_norm for x in rows]))
        slope, serr = float(fit.slope), float(fit.stderr)
    elif len(rows) == 2:
        slope = math.log(rows[1].l_norm / rows[0].l_norm) / math.log(rows[1].mu / rows[0].mu)
        serr = 0.0
    return NormTable(rows, slope, serr)


def write_norm_csv(table: NormTable, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["k", "mu", "l_norm", "scaled"])
        for x in table.rows:
            wr.writerow([x.k, "%.17g" % x.mu, "%.17g" % x.l_norm, "%.17g" % x.scaled])


def remainder(base, omega, s):
    """|b + w|^{s-1}(b + w) - |b|^{s-1} b - s |b|^{s-1} w."""
    base = np.asarray(base, dtype=float)
    omega = np.asarray(omega, dtype=float)
    t = base + omega
    ab = np.abs(base)
    return np.abs(t) ** (s - 1) * t - ab ** (s - 1) * base - s * ab ** (s - 1) * omega


def nonlinearity(config: PolygonConfig, gs: GroundState, w: AuxProfileW, omega1, omega2, y):
    """(N1, N2): second-order remainders of |V* + omega2|^{p-1}(V* + omega2) and of the u-analogue.

    omega1, omega2 are callables of the points y.
    """
    pr = gs.pair
    mb, phi = _projection_parts(config, gs, w, y)
    Us = mb.U0 - (mb.U_sum + phi)
    return remainder(mb.V_star, omega2(y), pr.p), remainder(Us, omega1(y), pr.q)


def nonlinearity_ratio(config: PolygonConfig, gs: GroundState, w: AuxProfileW, plan: SamplePlan,
                       eps: float, power: float | None = None) -> float:
    """||N(omega)||_** / eps^power with omega_i = eps * (weight of the (*,i) norm)."""
    pr = gs.pair
    s1, s2 = norm_spec(pr, "*,1"), norm_spec(pr, "*,2")
    om1 = lambda y: eps * norm_weight(config, s1, y)
    om2 = lambda y: eps * norm_weight(config, s2, y)
    N1, N2 = nonlinearity(config, gs, w, om1, om2, plan.points)
    val = (weighted_ratio(N1, plan, config, norm_spec(pr, "**,1"))
           + weighted_ratio(N2, plan, config, norm_spec(pr, "**,2")))
    return val / eps ** (pr.p if power is None else power)


# ---------------------------------------------------------------------------
# domination and envelope constants


def domination_constant(config: PolygonConfig, plan: SamplePlan) -> float:
    """Smallest C with [sum_j (1+mu d_j)^{-(N/(p+1)+tau)}]^p <= C sum_j (1+mu d_j)^{-(N/(q+1)+2+tau)} on the plan."""
    pr = config.pair
    d = config.mu * bubble_distances(config, plan.points)
    lhs = ksum((1 + d) ** (-(pr.alpha_v + pr.tau))) ** pr.p
    rhs = ksum((1 + d) ** (-(pr.alpha_u + 2 + pr.tau)))
    return float(np.max(lhs / rhs))


def envelope_constant(config: PolygonConfig, gs: GroundState, w: AuxProfileW, plan: SamplePlan) -> float:
    """Smallest C with U <= C sum_j mu^{N/(q+1)} (1+mu d_j)^{-(N/(q+1)+tau)} on the plan (U the projection)."""
    mb, phi = _projection_parts(config, gs, w, plan.points)
    pr = config.pair
    spec = WeightedNormSpec("envelope", pr.alpha_u, pr.alpha_u + pr.tau)
    return float(np.max((mb.U_sum + phi) / norm_weight(config, spec, plan.points)))


def constants_stable(values, factor: float = 2.0) -> bool:
    """True when max/min of positive fitted constants stays within factor."""
    v = np.asarray(values, dtype=float)
    return bool(np.all(v > 0) and v.max() / v.min() <= factor)
