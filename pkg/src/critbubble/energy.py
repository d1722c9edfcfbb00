"""Energy of the ground state and of the polygon ansatz, and the interaction expansion.

The interaction energy I(U*, V*) - (k+1)A is never formed as a difference of
two large estimates.  It is split into pieces whose integrands are already
small, and all pieces are estimated from one common set of Monte Carlo
samples, so the assembled total and its standard error are exact
combinations of per-sample values.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .bubble import eval_multibubble, phi_asymptotic, superadditive_gap
from .core import CriticalPair, PolygonConfig, btilde11_direct, btilde11_limit
from .quad import McEstimate, check_resolvable, chunk_for, integrate, integrate_many
from .radial import AuxProfileW, GroundState, radial_moment, solve_ground_state, solve_w, sphere_area

ENERGY_TOL = 5e-3
REFUSE_FRACTION = 0.25


def energy_integrals(gs: GroundState) -> dict:
    """grad, V^{p+1} and U^{q+1} integrals of the ground state over R^N."""
    pr = gs.pair
    N = pr.N
    dU, dV = gs.U.derivative_profile(), gs.V.derivative_profile()
    return {
        "grad": radial_moment([dU, dV], [1, 1], N),
        "V": radial_moment([gs.V], [pr.p + 1], N),
        "U": radial_moment([gs.U], [pr.q + 1], N),
    }


def ground_energy(gs: GroundState, tol: float = ENERGY_TOL) -> float:
    """A = I(U, V) of the ground state.

    Computed from the definition of I and from (2/N) int U^{q+1}; raises
    ValueError when the two disagree by more than tol (relative).
    """
    pr = gs.pair
    it = energy_integrals(gs)
    direct = it["grad"] - it["V"] / (pr.p + 1) - it["U"] / (pr.q + 1)
    short = 2.0 / pr.N * it["U"]
    if not abs(direct - short) <= tol * abs(short):
        raise ValueError(f"ground energy mismatch: definition {direct!r}, shortcut {short!r}")
    return short


@dataclass(frozen=True)
class InteractionConstants:
    btilde11: float
    B11: float
    B1: float
    B2: float
    A: float
    provenance: dict = field(default_factory=dict, compare=False)

    def as_dict(self) -> dict:
        return {"btilde11": self.btilde11, "B11": self.B11, "B1": self.B1, "B2": self.B2, "A": self.A,
                "provenance": dict(self.provenance)}


def interaction_constants(gs: GroundState, w: AuxProfileW) -> InteractionConstants:
    """Assemble b~11, B11, B1, B2 and A from radial integrals and the tail constants."""
    pr = gs.pair
    N, p, q = pr.N, pr.p, pr.q
    bt = btilde11_limit(N)
    IUq = radial_moment([gs.U], [q], N)
    IUqw = radial_moment([gs.U, w.w], [q, 1], N)
    B1 = bt / (p + 1) * (gs.a * IUq + p * gs.b * IUqw)
    B2 = IUq
    prov = {
        "btilde11": "2 zeta(N-2) / (2 pi)^(N-2)",
        "a": "tail constant of U from the matched ground state",
        "b": "tail constant of V from the matched ground state",
        "int_Uq": IUq,
        "int_Uq_w": IUqw,
        "B2": "int U^q",
        "A": "(2/N) int U^(q+1), checked against the definition",
    }
    if pr.is_symmetric:
        IVp = radial_moment([gs.V], [p], N)
        B2 += IVp
        prov["int_Vp"] = IVp
        prov["B2"] = "int U^q + int V^p (symmetric pair)"
    consts = InteractionConstants(bt, p * gs.b * bt, B1, B2, ground_energy(gs), prov)
    for name in ("btilde11", "B11", "B1", "B2", "A"):
        if not getattr(consts, name) > 0:
            raise ArithmeticError(f"interaction constant {name} = {getattr(consts, name)!r} is not positive")
    return consts


def predicted_terms(config: PolygonConfig, gs: GroundState, consts: InteractionConstants) -> tuple[float, float]:
    """The polygon term and the inner-bubble term of the expansion (each already times k)."""
    pr = gs.pair
    N, k, r, mu = pr.N, config.k, config.r, config.mu
    U0r = config.mu0**pr.alpha_u * float(gs.U(config.mu0 * r))
    poly = -consts.B1 * k * float(k) ** (N - 2) / (r * mu) ** (N - 2)
    inner = consts.B2 * k * U0r / mu**pr.alpha_u
    return poly, inner


# ---------------------------------------------------------------------------
# Monte Carlo decomposition


def _mixed_gap(a, b, s):
    """|a - b|^s - a^s - b^s for a, b >= 0, without cancellation near a dominant term."""
    M = np.maximum(a, b)
    m = np.minimum(a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        lead = np.where(M > 0, M**s * np.expm1(s * np.log1p(-m / M)), 0.0)
    return lead - m**s


def _shift_gap(a, d, s):
    """(a + d)^s - a^s for a > 0 and d >= 0."""
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(a > 0, a**s * np.expm1(s * np.log1p(d / a)), d**s)


def energy_densities(config: PolygonConfig, gs: GroundState, w: AuxProfileW, z) -> dict:
    """Pointwise integrands of the interaction pieces at points z of the sector of x_1."""
    pr = gs.pair
    p, q = pr.p, pr.q
    mb = eval_multibubble(config, gs, z, keep_each=True)
    Us = mb.U_sum
    phi = phi_asymptotic(config, gs, w, z) if config.k > 1 else np.zeros_like(Us)
    U = Us + phi
    iuv = (p / (p + 1)) * superadditive_gap(mb.V_each, p + 1) \
        - (superadditive_gap(mb.U_each, q + 1) + _shift_gap(Us, phi, q + 1)) / (q + 1)
    return {
        "IUV_minus_kA": iuv,
        "cross_V": mb.V0**p * mb.V_sum,
        "cross_U": mb.U0**q * U,
        "J1": -_mixed_gap(mb.V0, mb.V_sum, p + 1) / (p + 1),
        "J2": -_mixed_gap(mb.U0, U, q + 1) / (q + 1),
    }


TOTAL_COMBO = {"IUV_minus_kA": 1.0, "J1": 1.0, "J2": 1.0, "cross_V": -1.0, "cross_U": -1.0}


@dataclass(frozen=True)
class EnergyBreakdown:
    k: int
    mu: float
    kA_part: float
    J1: McEstimate
    J2: McEstimate
    IUV_minus_kA: McEstimate
    cross_terms: tuple
    measured_total: McEstimate
    predicted: float
    predicted_terms: tuple
    residual: float
    comparable: bool

    @property
    def assembled(self) -> float:
        """IUV_minus_kA + J1 + J2 - cross terms from the piece values."""
        return (self.IUV_minus_kA.value + self.J1.value + self.J2.value
                - self.cross_terms[0].value - self.cross_terms[1].value)


def measure_expansion(config: PolygonConfig, gs: GroundState, w: AuxProfileW, budget: int, seed: int,
                      consts: InteractionConstants | None = None, proposal: str = "interaction",
                      workers: int = 1) -> EnergyBreakdown:
    """Estimate I(U*, V*) - (k+1)A and compare it with the two-term expansion.

    All pieces are sampled over the sector of x_1 (the integrands are
    invariant under the rotations) from one set of draws.  When the stderr
    of the total exceeds 25% of the predicted correction, residual is NaN
    and comparable is False.
    """
    check_resolvable(config)
    if consts is None:
        consts = interaction_constants(gs, w)
    est = integrate_many(lambda z: energy_densities(config, gs, w, z), config, budget, seed,
                         proposal=proposal, sector=config.k > 1, workers=workers, chunk=chunk_for(config.k),
                         combos={"total": TOTAL_COMBO})
    terms = predicted_terms(config, gs, consts)
    pred = terms[0] + terms[1]
    total = est["total"]
    ok = total.stderr <= REFUSE_FRACTION * abs(pred)
    resid = total.value - pred if ok else math.nan
    return EnergyBreakdown(config.k, config.mu, (config.k + 1) * consts.A, est["J1"], est["J2"],
                           est["IUV_minus_kA"], (est["cross_V"], est["cross_U"]), total, pred, terms,
                           resid, ok)


@dataclass(frozen=True)
class ExpansionRow:
    k: int
    mu: float
    measured: float
    stderr: float
    predicted: float
    residual: float
    scaled_residual: float
    scaled_stderr: float


def expansion_convergence(pair: CriticalPair, mu0: float, r: float, lam: float, k_list, budget: int, seed: int,
                          gs: GroundState | None = None, w: AuxProfileW | None = None,
                          workers: int = 1) -> list[ExpansionRow]:
    """One expansion measurement per k; residuals scaled by mu^{N/(q+1)}.

    Raises RuntimeError when a row is not comparable (MC error too large).
    """
    ks = list(k_list)
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError("k_list must be increasing")
    gs = gs or solve_ground_state(pair)
    w = w or solve_w(pair, gs)
    consts = interaction_constants(gs, w)
    rows = []
    for k in ks:
        cfg = PolygonConfig(pair, k, mu0, r, lam)
        br = measure_expansion(cfg, gs, w, budget, seed, consts, workers=workers)
        if not br.comparable:
            raise RuntimeError(f"k={k}: stderr {br.measured_total.stderr:.3g} exceeds "
                               f"{REFUSE_FRACTION:.0%} of the predicted correction {br.predicted:.3g}")
        s = cfg.mu**pair.alpha_u
        rows.append(ExpansionRow(k, cfg.mu, br.measured_total.value, br.measured_total.stderr, br.predicted,
                                 br.residual, br.residual * s, br.measured_total.stderr * s))
    return rows


def scaled_trend_ok(rows, nsigma: float = 3.0) -> bool:
    """|scaled residual| non-increasing along the rows within nsigma pooled stderr."""
    for a, b in zip(rows, rows[1:]):
        pooled = math.hypot(a.scaled_stderr, b.scaled_stderr)
        if abs(b.scaled_residual) > abs(a.scaled_residual) + nsigma * pooled:
            return False
    return True


def write_expansion_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["k", "mu", "measured", "stderr", "predicted", "residual", "scaled_residual"])
        for r_ in rows:
            wr.writerow([r_.k] + ["%.17g" % v for v in (r_.mu, r_.measured, r_.stderr, r_.predicted,
                                                         r_.residual, r_.scaled_residual)])


# ---------------------------------------------------------------------------
# leading pieces around one bubble


def core_radius(config: PolygonConfig) -> float:
    """Radius pi r / (2k) of the ball around x_1 where the first bubble dominates."""
    return math.pi * config.r / (2 * config.k)


def _ball_moment(prof, power, N, R):
    f = lambda t: float(prof(np.array([t]))[0]) ** power * t ** (N - 1)
    pts = [x for x in (1.0, 10.0, 100.0) if x < R]
    val, _ = quad(f, 0.0, R, points=pts or None, limit=400, epsabs=0.0, epsrel=1e-11)
    return sphere_area(N) * val


def core_interaction_check(config: PolygonConfig, gs: GroundState, which: str, budget: int, seed: int):
    """MC of a leading interaction integral over the core ball S, with its proof-step formula.

    which="inner": int_S V^p V_0 against V_0(r) mu^{-N/(p+1)} int V^p;
    which="polygon": int_S U_1^q sum_{j>=2} U_j against
    a b~11(k) int U^q k^{N-2} / (r mu)^{N-2}.
    The profile integrals in the formulas run over the rescaled ball mu S,
    matching the domain of the MC integral.  Returns (McEstimate, formula).
    """
    pr = gs.pair
    N, p, q, k, mu = pr.N, pr.p, pr.q, config.k, config.mu
    x1 = config.centers[0]
    R = core_radius(config)

    def inside(z):
        return np.linalg.norm(z - x1, axis=-1) < R

    if which == "inner":
        def f(z):
            mb = eval_multibubble(config, gs, z, v_only=True)
            return np.where(inside(z), mb.V_sum**p * mb.V0, 0.0)
        V0r = config.mu0**pr.alpha_v * float(gs.V(config.mu0 * config.r))
        formula = V0r * mu**-pr.alpha_v * _ball_moment(gs.V, p, N, mu * R)
    elif which == "polygon":
        if k < 2:
            raise ValueError("the polygon interaction needs k >= 2")

        def f(z):
            mb = eval_multibubble(config, gs, z, keep_each=True, inner=False)
            return np.where(inside(z), mb.U_each[0] ** q * (mb.U_sum - mb.U_each[0]), 0.0)
        formula = (gs.a * btilde11_direct(N, k) * _ball_moment(gs.U, q, N, mu * R)
                   * float(k) ** (N - 2) / (config.r * mu) ** (N - 2))
    else:
        raise ValueError(f"unknown check {which!r}")
    est = integrate(f, config, budget, seed, proposal="single-bubble", center=x1, radius=R)
    return est, formula
