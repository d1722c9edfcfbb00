"""Bubbles, their parameter derivatives, the polygon ansatz and the interaction profile phi."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PolygonConfig, btilde11_direct, btilde11_limit
from .radial import AuxProfileW, GroundState, sphere_area


def _points(y, N):
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != N:
        raise ValueError(f"points have dimension {y.shape[-1]}, expected {N}")
    return y


def ksum(terms):
    """Neumaier-compensated sum of a sequence of equally shaped arrays."""
    it = iter(terms)
    s = np.array(next(it), dtype=float)
    c = np.zeros_like(s)
    for x in it:
        t = s + x
        big = np.abs(s) >= np.abs(x)
        c += np.where(big, (s - t) + x, (x - t) + s)
        s = t
    return s + c


@dataclass(frozen=True)
class BubbleField:
    """(U_{x,mu}, V_{x,mu})(y) = (mu^{N/(q+1)} U(mu|y-x|), mu^{N/(p+1)} V(mu|y-x|))."""

    gs: GroundState
    x: np.ndarray
    mu: float

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))

    def rho(self, y):
        y = _points(y, self.gs.pair.N)
        return self.mu * np.linalg.norm(y - self.x, axis=-1)

    def u(self, y):
        pr = self.gs.pair
        return self.mu**pr.alpha_u * self.gs.U(self.rho(y))

    def v(self, y):
        pr = self.gs.pair
        return self.mu**pr.alpha_v * self.gs.V(self.rho(y))


def eval_bubble(field: BubbleField, y):
    """Return (u, v) of the bubble at the points y (shape (..., N))."""
    return field.u(y), field.v(y)


# ---------------------------------------------------------------------------
# derivative family


@dataclass(frozen=True)
class DerivativeFamily:
    """Parameter derivatives at a set of points.

    Y0, Z0: d/dmu0 of the inner bubble; Yj1, Zj1: d/dr of bubble j;
    Yj2, Zj2: d/dmu of bubble j.
    """

    Y0: np.ndarray
    Z0: np.ndarray
    Yj1: np.ndarray
    Zj1: np.ndarray
    Yj2: np.ndarray
    Zj2: np.ndarray


def _dmu(prof, alpha, mu, rho):
    # d/dmu [mu^alpha f(mu s)] = mu^(alpha-1) [alpha f(rho) + rho f'(rho)]
    return mu ** (alpha - 1.0) * (alpha * prof(rho) + rho * prof.derivative(rho))


def eval_derivatives(config: PolygonConfig, gs: GroundState, j: int, y) -> DerivativeFamily:
    """Chain-rule derivatives of the inner bubble and of bubble j (1-based)."""
    pr = gs.pair
    N = pr.N
    if not 1 <= j <= config.k:
        raise IndexError(f"bubble index j={j} outside 1..{config.k}")
    y = _points(y, N)
    au, av = pr.alpha_u, pr.alpha_v
    mu0, mu = config.mu0, config.mu
    rho0 = mu0 * np.linalg.norm(y, axis=-1)
    Y0 = _dmu(gs.U, au, mu0, rho0)
    Z0 = _dmu(gs.V, av, mu0, rho0)
    xj = config.centers[j - 1]
    e = xj / config.r
    d = y - xj
    dist = np.linalg.norm(d, axis=-1)
    rho = mu * dist
    # d|y - x_j|/dr = -(y - x_j).e / |y - x_j|, with 0 at the center itself
    with np.errstate(invalid="ignore", divide="ignore"):
        ddist = np.where(dist > 0, -(d @ e) / dist, 0.0)
    Yj1 = mu ** (au + 1.0) * gs.U.derivative(rho) * ddist
    Zj1 = mu ** (av + 1.0) * gs.V.derivative(rho) * ddist
    Yj2 = _dmu(gs.U, au, mu, rho)
    Zj2 = _dmu(gs.V, av, mu, rho)
    return DerivativeFamily(Y0, Z0, Yj1, Zj1, Yj2, Zj2)


# ---------------------------------------------------------------------------
# polygon ansatz


@dataclass(frozen=True)
class MultiBubble:
    """Field values at a set of points.

    U0, V0 are the inner bubble; U_sum, V_sum the polygon sums; V_star =
    V0 - V_sum.  U_each, V_each have the bubble index on axis 0.
    """

    U0: np.ndarray
    V0: np.ndarray
    U_sum: np.ndarray
    V_sum: np.ndarray
    V_star: np.ndarray
    U_each: np.ndarray | None = None
    V_each: np.ndarray | None = None


def bubble_distances(config: PolygonConfig, y) -> np.ndarray:
    """|y - x_j| for every center, shape (k, ...)."""
    y = _points(y, config.N)
    c = config.centers
    # only the first two coordinates of the centers are nonzero
    rest = np.sum(y[..., 2:] ** 2, axis=-1)
    dx = y[None, ..., 0] - c[:, 0].reshape((-1,) + (1,) * (y.ndim - 1))
    dy = y[None, ..., 1] - c[:, 1].reshape((-1,) + (1,) * (y.ndim - 1))
    return np.sqrt(dx * dx + dy * dy + rest[None])


def eval_multibubble(config: PolygonConfig, gs: GroundState, y, keep_each: bool = False,
                     inner: bool = True, v_only: bool = False) -> MultiBubble:
    """Inner bubble and polygon sums at the points y.

    inner=False drops the inner bubble (U0 = V0 = 0); v_only=True skips the
    u-components (returned as NaN).
    """
    pr = gs.pair
    y = _points(y, pr.N)
    mu = config.mu
    rho = mu * bubble_distances(config, y)
    Ve = mu**pr.alpha_v * gs.V(rho)
    Vs = ksum(Ve)
    if v_only:
        Ue = np.full_like(Ve, np.nan)
        Us = np.full_like(Vs, np.nan)
    else:
        Ue = mu**pr.alpha_u * gs.U(rho)
        Us = ksum(Ue)
    if inner:
        rho0 = config.mu0 * np.linalg.norm(y, axis=-1)
        U0 = np.full_like(Vs, np.nan) if v_only else config.mu0**pr.alpha_u * gs.U(rho0)
        V0 = config.mu0**pr.alpha_v * gs.V(rho0)
    else:
        U0 = np.zeros_like(Us)
        V0 = np.zeros_like(Vs)
    return MultiBubble(U0, V0, Us, Vs, V0 - Vs,
                       Ue if keep_each else None, Ve if keep_each else None)


# ---------------------------------------------------------------------------
# interaction profile phi


def B11(gs: GroundState, k: int | None = None) -> float:
    """B11 = p b_{N,p} b~11, with the k -> infinity polygon constant unless k is given."""
    N = gs.pair.N
    bt = btilde11_limit(N) if k is None else btilde11_direct(N, k)
    return gs.pair.p * gs.b * bt


def phi_asymptotic(config: PolygonConfig, gs: GroundState, w: AuxProfileW, y,
                   polygon: str = "limit") -> np.ndarray:
    """Leading-order phi: B11 k^{N-2} / (r^{N-2} mu^{N/(p+1)}) w(mu |y - x_j|).

    x_j is the center of the sector containing y, so on Omega_1 this is the
    formula around x_1 and elsewhere its rotated copy.  polygon="finite"
    replaces the limiting polygon constant by the exact k-gon sum, which
    removes its 10/k^2 relative error (N = 6).
    """
    if polygon not in ("limit", "finite"):
        raise ValueError(f"unknown polygon mode {polygon!r}")
    pr = gs.pair
    N = pr.N
    y = _points(y, N)
    yy = np.atleast_2d(y)
    j = config.sector_index(yy)
    d = np.linalg.norm(yy - config.centers[j], axis=-1)
    pref = B11(gs, config.k if polygon == "finite" else None) * config.k ** (N - 2) / (config.r ** (N - 2) * config.mu**pr.alpha_v)
    out = pref * w(config.mu * d)
    return out.reshape(y.shape[:-1])


def green_constant(N: int) -> float:
    """gamma_N with -Delta (gamma_N |y|^{2-N}) = delta."""
    return 1.0 / ((N - 2) * sphere_area(N))


def phi_density(config: PolygonConfig, gs: GroundState, z) -> np.ndarray:
    """Source (sum V_j)^p - sum V_j^p of the Newtonian potential phi."""
    p = gs.pair.p
    mb = eval_multibubble(config, gs, z, keep_each=True, inner=False, v_only=True)
    return superadditive_gap(mb.V_each, p)


def superadditive_gap(parts, p: float) -> np.ndarray:
    """(sum_j a_j)^p - sum_j a_j^p for a_j >= 0 (bubble index on axis 0).

    Written as M^p expm1(p log1p(D/M)) - sum_{others} a_j^p with M the
    largest part and D the sum of the others, so the small gap near a
    dominant part is not lost to cancellation.
    """
    parts = np.asarray(parts, dtype=float)
    if parts.shape[0] == 1:
        return np.zeros(parts.shape[1:])
    jm = np.argmax(parts, axis=0)
    M = np.take_along_axis(parts, jm[None], axis=0)[0]
    others = parts.copy()
    np.put_along_axis(others, jm[None], 0.0, axis=0)
    D = ksum(others)
    with np.errstate(invalid="ignore", divide="ignore"):
        lead = np.where(M > 0, M**p * np.expm1(p * np.log1p(D / M)), 0.0)
    return lead - ksum(others**p)


@dataclass(frozen=True)
class PhiValue:
    value: float
    stderr: float
    estimate: object = None


def eval_phi(config: PolygonConfig, gs: GroundState, w: AuxProfileW, y, mode: str = "asymptotic",
             budget: int = 10**6, seed: int = 0, workers: int = 1, polygon: str = "limit"):
    """phi at a point y.

    mode="asymptotic" returns an array (any number of points).
    mode="montecarlo" takes a single point and returns a PhiValue with the
    importance-sampled Newtonian potential of (sum V_j)^p - sum V_j^p.
    Raises RuntimeError when the MC stderr exceeds 10% of the estimate.
    """
    if mode == "asymptotic":
        if config.k == 1:
            return np.zeros(np.asarray(y).shape[:-1])
        return phi_asymptotic(config, gs, w, y, polygon)
    if mode != "montecarlo":
        raise ValueError(f"unknown mode {mode!r}")
    from .quad import check_resolvable, chunk_for, integrate

    check_resolvable(config)
    N = gs.pair.N
    y = np.asarray(y, dtype=float).reshape(N)
    if config.k == 1:
        return PhiValue(0.0, 0.0)
    g = green_constant(N)

    def f(z):
        d = np.linalg.norm(z - y, axis=-1)
        return g * d ** (2 - N) * phi_density(config, gs, z)

    est = integrate(f, config, budget, seed, proposal="green", target=y, workers=workers,
                    chunk=chunk_for(config.k))
    if not est.stderr <= 0.1 * abs(est.value):
        raise RuntimeError(f"phi Monte Carlo stderr {est.stderr:.3g} exceeds 10% of {est.value:.3g}")
    return PhiValue(est.value, est.stderr, est)


def eval_projection_U(config: PolygonConfig, gs: GroundState, w: AuxProfileW, y, mode: str = "asymptotic",
                      **mc):
    """Nonlinear projection U = sum U_j + phi."""
    mb = eval_multibubble(config, gs, y, inner=False)
    if config.k == 1:
        return mb.U_sum
    if mode == "asymptotic":
        return mb.U_sum + phi_asymptotic(config, gs, w, y)
    ph = eval_phi(config, gs, w, y, mode, **mc)
    return float(mb.U_sum) + ph.value


def ansatz(config: PolygonConfig, gs: GroundState, w: AuxProfileW, y):
    """(U*, V*) = (U0 - U, V0 - V) with U the projection in asymptotic mode."""
    mb = eval_multibubble(config, gs, y)
    U = mb.U_sum if config.k == 1 else mb.U_sum + phi_asymptotic(config, gs, w, y)
    return mb.U0 - U, mb.V_star


def projection_envelope(config: PolygonConfig, gs: GroundState, y, theta: float = 0.05) -> np.ndarray:
    """Right-hand side (without C) of the pointwise bound on the projection U.

    sum_i mu^{N/(q+1)} (1+mu d_i)^{-(N-2)}
      + mu^{-pN/(q+1)} sum_i k^{p(N-2)-2} (1+k d_i)^{-min(N-2, p(N-3-theta)-2)}.
    """
    pr = gs.pair
    N, p, k, mu = pr.N, pr.p, config.k, config.mu
    d = bubble_distances(config, y)
    e2 = min(N - 2.0, p * (N - 3 - theta) - 2.0)
    t1 = ksum(mu**pr.alpha_u * (1 + mu * d) ** (-(N - 2.0)))
    t2 = mu ** (-p * N / (pr.q + 1)) * ksum(k ** (p * (N - 2) - 2.0) * (1 + k * d) ** (-e2))
    return t1 + t2


def random_points(config: PolygonConfig, n: int, rng: np.random.Generator, scale: float | None = None):
    """Points near the polygon: centers plus Gaussian offsets at mixed scales."""
    N = config.N
    j = rng.integers(0, config.k, n)
    scales = np.array([1.0 / config.mu, 1.0 / config.k, config.r]) if scale is None else np.array([scale])
    s = scales[rng.integers(0, len(scales), n)]
    return config.centers[j] + s[:, None] * rng.standard_normal((n, N))


def sphere_points(n: int, N: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform directions on S^{N-1}."""
    g = rng.standard_normal((n, N))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def scale_config(config: PolygonConfig, t: float) -> PolygonConfig:
    """(mu0, r, lambda) -> (t mu0, r/t, t lambda), hence mu -> t mu."""
    return config.scaled(t)


def ansatz_scaling_defect(config: PolygonConfig, gs: GroundState, w: AuxProfileW, t: float,
                          n: int = 100, seed: int = 0) -> float:
    """Max relative defect of U*'(y) = t^{N/(q+1)} U*(t y), V*'(y) = t^{N/(p+1)} V*(t y).

    Primed fields belong to the configuration with (t mu0, r/t, t lambda).
    Points are drawn near the polygon of the rescaled configuration.
    """
    from .quad import chunk_rng

    pr = gs.pair
    cfg_t = scale_config(config, t)
    y = random_points(cfg_t, n, chunk_rng(seed, 0))
    Ut, Vt = ansatz(cfg_t, gs, w, y)
    U, V = ansatz(config, gs, w, t * y)
    eu = np.abs(Ut - t**pr.alpha_u * U) / np.maximum(np.abs(Ut), 1e-300)
    ev = np.abs(Vt - t**pr.alpha_v * V) / np.maximum(np.abs(Vt), 1e-300)
    return float(max(eu.max(), ev.max()))
