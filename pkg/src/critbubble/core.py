"""Exponent algebra, polygon geometry and the discrete symmetry group."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import zeta

HYPERBOLA_TOL = 1e-12


@dataclass(frozen=True)
class CriticalPair:
    """Exponents (p, q) on the critical hyperbola in dimension N.

    ``q`` is always derived from ``p``; construct through
    :func:`make_critical_pair`.
    """

    N: int
    p: float
    q: float
    tau: float
    in_theorem_range: bool

    @property
    def alpha_u(self) -> float:
        """Scaling exponent N/(q+1) of the u-component."""
        return self.N / (self.q + 1.0)

    @property
    def alpha_v(self) -> float:
        """Scaling exponent N/(p+1) of the v-component."""
        return self.N / (self.p + 1.0)

    @property
    def p_sobolev(self) -> float:
        return (self.N + 2.0) / (self.N - 2.0)

    @property
    def p_serrin(self) -> float:
        return self.N / (self.N - 2.0)

    @property
    def is_symmetric(self) -> bool:
        """True at p = q = (N+2)/(N-2), where U = V."""
        return abs(self.p - self.p_sobolev) < 1e-12

    @property
    def u_branch(self) -> str:
        """Decay branch of U: 'fast', 'log' or 'slow'."""
        if abs(self.p - self.p_serrin) < 1e-12:
            return "log"
        return "fast" if self.p > self.p_serrin else "slow"

    @property
    def u_decay(self) -> float:
        """Power-law decay exponent of U (the log factor is dropped at p = N/(N-2))."""
        N = self.N
        if self.u_branch == "slow":
            return self.p * (N - 2) - 2.0
        return N - 2.0

    @property
    def v_decay(self) -> float:
        return self.N - 2.0

    @property
    def mu_exponent(self) -> float:
        """Exponent (p+1)(N-2)/N with mu = lambda * k**exponent."""
        return (self.p + 1.0) * (self.N - 2) / self.N

    def hyperbola_defect(self) -> float:
        return abs(1.0 / (self.p + 1.0) + 1.0 / (self.q + 1.0) - (self.N - 2) / self.N)


def make_critical_pair(N: int, p: float) -> CriticalPair:
    """Build the pair (p, q) with 1/(p+1) + 1/(q+1) = (N-2)/N."""
    if int(N) != N or N < 5:
        raise ValueError(f"dimension N must be an integer >= 5, got {N}")
    N = int(N)
    p = float(p)
    lo, hi = 2.0 / (N - 2), (N + 2.0) / (N - 2)
    if not (lo < p <= hi + 1e-15):
        raise ValueError(f"p must lie in ({lo}, {hi}] for N={N}, got {p}")
    p = min(p, hi)
    inv_q1 = (N - 2) / N - 1.0 / (p + 1.0)
    q = 1.0 / inv_q1 - 1.0
    tau = N / ((p + 1.0) * (N - 2))
    in_range = N / (N - 2.0) < p <= hi
    pair = CriticalPair(N=N, p=p, q=q, tau=tau, in_theorem_range=in_range)
    assert pair.hyperbola_defect() < HYPERBOLA_TOL
    return pair


def polygon_centers(k: int, r: float, N: int) -> np.ndarray:
    """Vertices of the regular k-gon of radius r in the (y1, y2) plane, shape (k, N)."""
    if k < 1 or r <= 0 or N < 2:
        raise ValueError("need k >= 1, r > 0, N >= 2")
    ang = 2.0 * np.pi * np.arange(k) / k
    x = np.zeros((k, N))
    x[:, 0] = r * np.cos(ang)
    x[:, 1] = r * np.sin(ang)
    return x


def pairwise_sum(k: int, r: float, s: float) -> float:
    """Sum over j = 2..k of |x_j - x_1|**(-s) for the regular k-gon of radius r.

    Terms m and k - m are equal and are paired before accumulation.
    """
    if k < 2 or r <= 0 or s <= 1:
        raise ValueError("need k >= 2, r > 0, s > 1")
    # the largest term is ~ (k / (2 pi r))**s
    if s * math.log(max(k / (2.0 * math.pi * r), 1.0)) > 700.0:
        raise OverflowError(f"pairwise sum overflows for k={k}, s={s}")
    half = (k - 1) // 2
    m = np.arange(1, half + 1, dtype=float)
    terms = 2.0 * np.sin(m * np.pi / k) ** (-s)
    total = math.fsum(terms[::-1])
    if k % 2 == 0:
        total += 1.0  # antipodal vertex, sin(pi/2) = 1
    return total * (2.0 * r) ** (-s)


def btilde11_limit(N: int) -> float:
    """Limit of k**-(N-2) r**(N-2) * pairwise_sum(k, r, N-2), equal to 2 zeta(N-2) / (2 pi)**(N-2)."""
    s = N - 2
    return 2.0 * float(zeta(s)) / (2.0 * math.pi) ** s


def btilde11_direct(N: int, k: int) -> float:
    """Finite-k value k**-(N-2) * pairwise_sum(k, 1, N-2)."""
    s = N - 2
    return pairwise_sum(k, 1.0, s) / float(k) ** s


@dataclass(frozen=True)
class PolygonConfig:
    """Inner bubble at the origin plus k bubbles on a polygon of radius r."""

    pair: CriticalPair
    k: int
    mu0: float
    r: float
    lam: float
    mu: float = field(init=False)
    centers: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.mu0 <= 0 or self.r <= 0 or self.lam <= 0:
            raise ValueError("mu0, r, lambda must be positive")
        mu = self.lam * float(self.k) ** self.pair.mu_exponent
        object.__setattr__(self, "mu", mu)
        c = polygon_centers(self.k, self.r, self.pair.N)
        c.setflags(write=False)
        object.__setattr__(self, "centers", c)

    @property
    def N(self) -> int:
        return self.pair.N

    def scaled(self, t: float) -> "PolygonConfig":
        """Config with (t mu0, r / t, t lambda): the critical-scaling partner."""
        return PolygonConfig(self.pair, self.k, t * self.mu0, self.r / t, t * self.lam)

    def sector_index(self, y: np.ndarray) -> np.ndarray:
        """Index j (0-based) of the sector Omega_{j+1} containing each point.

        A point on the edge between two sectors goes to the lower index;
        points with y' = 0 land in sector 0.
        """
        y = np.atleast_2d(y)
        phi = np.arctan2(y[:, 1], y[:, 0])
        step = 2.0 * np.pi / self.k
        # sector j spans [(j - 1/2) step, (j + 1/2) step]; ceil sends the upper edge to j,
        # and the 1e-12 slack absorbs rounding of the edge angle itself
        j = np.ceil(phi / step - 0.5 - 1e-12).astype(np.int64)
        return j % self.k


def rotation(k: int, j: int, y: np.ndarray) -> np.ndarray:
    """Phi_j: rotate the (y1, y2) plane by 2 (j - 1) pi / k (j is 1-based)."""
    y = np.asarray(y, dtype=float)
    a = 2.0 * np.pi * (j - 1) / k
    c, s = math.cos(a), math.sin(a)
    out = y.copy()
    out[..., 0] = c * y[..., 0] - s * y[..., 1]
    out[..., 1] = s * y[..., 0] + c * y[..., 1]
    return out


def reflection(h: int, y: np.ndarray) -> np.ndarray:
    """Psi_h: flip the sign of coordinate h (1-based)."""
    y = np.asarray(y, dtype=float)
    out = y.copy()
    out[..., h - 1] = -out[..., h - 1]
    return out


def apply_symmetry(config: PolygonConfig, point, j: int, h: int | None = None) -> np.ndarray:
    """Return Phi_j(point), or Psi_h(Phi_j(point)) when h is given."""
    N, k = config.N, config.k
    if not 1 <= j <= k:
        raise IndexError(f"rotation index j={j} outside 1..{k}")
    if h is not None and not 2 <= h <= N:
        raise IndexError(f"reflection index h={h} outside 2..{N}")
    point = np.asarray(point, dtype=float)
    if point.shape[-1] != N:
        raise ValueError(f"point has dimension {point.shape[-1]}, expected {N}")
    out = rotation(k, j, point)
    if h is not None:
        out = reflection(h, out)
    return out
