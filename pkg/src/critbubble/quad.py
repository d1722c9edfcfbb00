"""Importance-sampled Monte Carlo over R^N for multi-bubble integrands.

Samples come from mixtures of radial beta-prime laws placed at the
concentration points of the configuration.  Every chunk of samples draws
from its own Philox stream keyed by (seed, chunk index), so results do not
depend on how chunks are scheduled; chunk statistics are merged in index
order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, logsumexp

from .core import PolygonConfig
from .radial import sphere_area

WEIGHT_RATIO_LIMIT = 1e3


@dataclass(frozen=True)
class McEstimate:
    value: float
    stderr: float
    n: int
    seed: int
    proposal_id: str
    weight_ratio: float = 0.0
    cv_coef: float | None = None

    @property
    def reliable(self) -> bool:
        """False when the largest sample dominates (max / mean |f/g| > 1e3)."""
        return self.weight_ratio <= WEIGHT_RATIO_LIMIT

    def __add__(self, other: "McEstimate") -> "McEstimate":
        """Sum of two independent estimates."""
        return McEstimate(self.value + other.value, math.hypot(self.stderr, other.stderr),
                          self.n + other.n, self.seed, f"{self.proposal_id}+{other.proposal_id}",
                          max(self.weight_ratio, other.weight_ratio))

    def scaled(self, c: float) -> "McEstimate":
        return McEstimate(c * self.value, abs(c) * self.stderr, self.n, self.seed, self.proposal_id,
                          self.weight_ratio, self.cv_coef)


# ---------------------------------------------------------------------------
# proposals


@dataclass(frozen=True)
class RadialGroup:
    """Equal-weight radial beta-prime laws at several centers.

    Around a center c the radius rho = |z - c| / scale has density
    rho^{a-1} (1+rho)^{-(a+b)} / B(a, b); the N-dimensional density behaves
    like rho^{a-N} near c and rho^{-(b+N)} far away.
    """

    centers: np.ndarray
    scale: float
    a: float
    b: float
    weight: float

    def log_pdf_each(self, z, N):
        rho = _distances(z, self.centers) / self.scale
        const = -betaln(self.a, self.b) - math.log(sphere_area(N)) - N * math.log(self.scale)
        out = -(self.a + self.b) * np.log1p(rho) + const
        if self.a != N:
            with np.errstate(divide="ignore"):
                out += (self.a - N) * np.log(rho)
        return out

    def sample(self, rng, n, N):
        j = rng.integers(0, len(self.centers), n)
        g1 = rng.standard_gamma(self.a, n)
        g2 = rng.standard_gamma(self.b, n)
        rho = g1 / g2
        u = rng.standard_normal((n, N))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        return self.centers[j] + (self.scale * rho)[:, None] * u


def _distances(z, centers):
    """|z - c| for every center, shape (m, n)."""
    if centers.shape[1] > 2 and not np.any(centers[:, 2:]):
        rest = np.sum(z[:, 2:] ** 2, axis=1)
        dx = z[None, :, 0] - centers[:, 0, None]
        dy = z[None, :, 1] - centers[:, 1, None]
        return np.sqrt(dx * dx + dy * dy + rest[None])
    return np.stack([np.linalg.norm(z - c, axis=1) for c in centers])


@dataclass(frozen=True)
class Mixture:
    name: str
    groups: tuple
    N: int
    symmetric: bool = True

    def __post_init__(self):
        tot = sum(g.weight for g in self.groups)
        if abs(tot - 1.0) > 1e-12:
            raise ValueError(f"mixture weights sum to {tot}")

    def log_pdf(self, z):
        parts = []
        for g in self.groups:
            lp = g.log_pdf_each(z, self.N) + math.log(g.weight / len(g.centers))
            parts.append(lp)
        return logsumexp(np.concatenate(parts, axis=0), axis=0)

    def sample(self, rng, n):
        counts = rng.multinomial(n, [g.weight for g in self.groups])
        out = [g.sample(rng, c, self.N) for g, c in zip(self.groups, counts) if c]
        z = np.concatenate(out, axis=0)
        return z


PROPOSALS: dict = {}


def register(name):
    def deco(fn):
        PROPOSALS[name] = fn
        return fn
    return deco


def _core(config):
    N = config.N
    return math.sqrt(N * (N - 2.0))


def _origin(config):
    return np.zeros((1, config.N))


def _midpoints(config):
    c = config.centers
    return 0.5 * (c + np.roll(c, -1, axis=0))


@register("bubble-core")
def _bubble_core(config: PolygonConfig, **kw):
    """Mass at each center on the bubble scale, the inner bubble and a broad background."""
    N, cs = config.N, _core(config)
    return Mixture("bubble-core", (
        RadialGroup(config.centers, cs / config.mu, N, 2.0, 0.8),
        RadialGroup(_origin(config), cs / config.mu0, N, 2.0, 0.1),
        RadialGroup(_origin(config), max(config.r, cs / config.mu0), N, 1.0, 0.1),
    ), N)


@register("interaction")
def _interaction(config: PolygonConfig, **kw):
    """Centers on the bubble and inter-center scales, adjacent-pair midpoints, inner bubble, background."""
    N, cs, k = config.N, _core(config), config.k
    gap = 2 * config.r * math.sin(math.pi / k) if k > 1 else config.r
    return Mixture("interaction", (
        RadialGroup(config.centers, cs / config.mu, N, 2.0, 0.35),
        RadialGroup(config.centers, gap, N, 2.0, 0.25),
        RadialGroup(_midpoints(config), gap, N, 2.0, 0.15),
        RadialGroup(_origin(config), cs / config.mu0, N, 2.0, 0.15),
        RadialGroup(_origin(config), max(config.r, cs / config.mu0), N, 1.0, 0.10),
    ), N)


@register("inner-bubble")
def _inner_bubble(config: PolygonConfig, **kw):
    """Inner bubble at the origin, with some mass at the centers and a background."""
    N, cs = config.N, _core(config)
    return Mixture("inner-bubble", (
        RadialGroup(_origin(config), cs / config.mu0, N, 2.0, 0.6),
        RadialGroup(config.centers, cs / config.mu, N, 2.0, 0.2),
        RadialGroup(_origin(config), max(config.r, cs / config.mu0), N, 1.0, 0.2),
    ), N)


@register("green")
def _green(config: PolygonConfig, target=None, **kw):
    """Newtonian potential at a target point: rho^{2-N} mass at the target plus the interaction set."""
    if target is None:
        raise ValueError("the green proposal needs a target point")
    N, cs, k = config.N, _core(config), config.k
    t = np.asarray(target, dtype=float).reshape(1, N)
    gap = 2 * config.r * math.sin(math.pi / k) if k > 1 else config.r
    return Mixture("green", (
        RadialGroup(t, cs / config.mu, 2.0, 2.0, 0.30),
        RadialGroup(t, gap, 2.0, 2.0, 0.10),
        RadialGroup(config.centers, cs / config.mu, N, 2.0, 0.20),
        RadialGroup(config.centers, gap, N, 2.0, 0.20),
        RadialGroup(_midpoints(config), gap, N, 2.0, 0.10),
        RadialGroup(_origin(config), max(config.r, cs / config.mu0), N, 1.0, 0.10),
    ), N, symmetric=False)


@register("single-bubble")
def _single_bubble(config: PolygonConfig, center=None, radius=None, **kw):
    """One center on the bubble scale and on a given outer radius (default: the polygon radius)."""
    if center is None:
        raise ValueError("the single-bubble proposal needs a center")
    N, cs = config.N, _core(config)
    c = np.asarray(center, dtype=float).reshape(1, N)
    return Mixture("single-bubble", (
        RadialGroup(c, cs / config.mu, N, 2.0, 0.8),
        RadialGroup(c, radius or config.r, N, 2.0, 0.2),
    ), N, symmetric=False)


def make_proposal(name: str, config: PolygonConfig, **kw) -> Mixture:
    if name not in PROPOSALS:
        raise KeyError(f"unknown proposal {name!r}; known: {sorted(PROPOSALS)}")
    return PROPOSALS[name](config, **kw)


# ---------------------------------------------------------------------------
# streams and pooling


MAX_CHUNK_CELLS = 2**22


def chunk_for(k: int, base: int = 2**15) -> int:
    """Chunk size keeping the (k, chunk) per-bubble arrays near 4M entries."""
    return max(256, min(base, MAX_CHUNK_CELLS // max(k, 1)))


def check_resolvable(config: PolygonConfig) -> None:
    """Raise when adjacent centers are closer than float resolution allows."""
    gap = 2 * config.r * math.sin(math.pi / config.k) if config.k > 1 else config.r
    if not gap > 1e4 * np.finfo(float).eps * config.r:
        raise ValueError(f"k={config.k}: center gap {gap:.3g} is not resolvable at radius {config.r:.3g}")


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    """Counter-based generator for one chunk, keyed by (seed, chunk)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(chunk,))))


@dataclass
class _Stats:
    """Running first and second moments of (x, y), mergeable in a fixed order."""

    n: int = 0
    mx: float = 0.0
    my: float = 0.0
    cxx: float = 0.0
    cyy: float = 0.0
    cxy: float = 0.0
    amax: float = 0.0
    asum: float = 0.0

    @classmethod
    def of(cls, x, y=None):
        x = np.asarray(x, dtype=float)
        y = np.zeros_like(x) if y is None else np.asarray(y, dtype=float)
        n = x.size
        mx, my = float(np.mean(x)), float(np.mean(y))
        dx, dy = x - mx, y - my
        ax = np.abs(x)
        return cls(n, mx, my, float(dx @ dx), float(dy @ dy), float(dx @ dy), float(ax.max()), float(ax.sum()))

    def merge(self, o: "_Stats") -> "_Stats":
        if self.n == 0:
            return o
        n = self.n + o.n
        fx, fy = o.mx - self.mx, o.my - self.my
        w = self.n * o.n / n
        return _Stats(n, self.mx + fx * o.n / n, self.my + fy * o.n / n,
                      self.cxx + o.cxx + fx * fx * w, self.cyy + o.cyy + fy * fy * w,
                      self.cxy + o.cxy + fx * fy * w, max(self.amax, o.amax), self.asum + o.asum)


def fold_to_sector(config: PolygonConfig, z):
    """Rotate each point into the sector of x_1."""
    j = config.sector_index(z)
    ang = -2.0 * np.pi * j / config.k
    c, s = np.cos(ang), np.sin(ang)
    out = z.copy()
    out[:, 0] = c * z[:, 0] - s * z[:, 1]
    out[:, 1] = s * z[:, 0] + c * z[:, 1]
    return out


def integrate(f, config: PolygonConfig, budget: int, seed: int, proposal: str = "bubble-core",
              sector: bool = False, chunk: int = 2**15, workers: int = 1, control=None,
              tail_exponent: float | None = None, **proposal_kw) -> McEstimate:
    """Estimate the integral of f over R^N.

    f maps an (n, N) array of points to n values.  With sector=True the
    points are folded into the sector of x_1 before f is called, which gives
    k times the integral of f over that sector (equal to the full integral
    when f is invariant under the rotations).  control=(h, H) supplies a
    control variate h with known integral H.  tail_exponent, if given, is the
    decay rate of |f| at infinity and must exceed N.
    """
    N = config.N
    if budget < 2:
        raise ValueError("budget must be at least 2 samples")
    if tail_exponent is not None and not tail_exponent > N:
        raise ValueError(f"integrand decays like |y|^-{tail_exponent}; not integrable in dimension {N}")
    mix = make_proposal(proposal, config, **proposal_kw)
    if sector and not mix.symmetric:
        raise ValueError(f"proposal {proposal!r} is not rotation invariant; sector sampling is invalid")
    sizes = [chunk] * (budget // chunk) + ([budget % chunk] if budget % chunk else [])

    def run(i):
        rng = chunk_rng(seed, i)
        z = mix.sample(rng, sizes[i])
        lg = mix.log_pdf(z)
        if sector:
            z = fold_to_sector(config, z)
        g = np.exp(lg)
        x = np.asarray(f(z), dtype=float) / g
        y = None
        if control is not None:
            y = np.asarray(control[0](z), dtype=float) / g
        if not np.all(np.isfinite(x)):
            raise FloatingPointError("non-finite integrand value in Monte Carlo sample")
        return _Stats.of(x, y)

    parts = _run_chunks(run, len(sizes), workers)
    st = _Stats()
    for s in parts:
        st = st.merge(s)
    n = st.n
    ratio = st.amax / (st.asum / n) if st.asum > 0 else 0.0
    if control is None:
        var = st.cxx / (n - 1)
        return McEstimate(st.mx, math.sqrt(var / n), n, seed, mix.name, ratio)
    H = float(control[1])
    c = st.cxy / st.cyy if st.cyy > 0 else 0.0
    value = st.mx - c * (st.my - H)
    var = (st.cxx - 2 * c * st.cxy + c * c * st.cyy) / (n - 2)
    return McEstimate(value, math.sqrt(max(var, 0.0) / n), n, seed, mix.name, ratio, c)


def _run_chunks(run, n_chunks, workers):
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(run, range(n_chunks)))
    return [run(i) for i in range(n_chunks)]


def integrate_many(f, config: PolygonConfig, budget: int, seed: int, proposal: str = "bubble-core",
                   sector: bool = False, chunk: int = 2**15, workers: int = 1,
                   combos: dict | None = None, **proposal_kw) -> dict:
    """Estimate several integrals from one set of samples.

    f maps (n, N) points to a dict of named (n,) arrays.  combos maps extra
    names to {name: coefficient} linear combinations; their standard errors
    are computed from the per-sample combined values, so correlations
    between the pieces are accounted for.  Returns a dict of McEstimate.
    """
    if budget < 2:
        raise ValueError("budget must be at least 2 samples")
    combos = combos or {}
    mix = make_proposal(proposal, config, **proposal_kw)
    if sector and not mix.symmetric:
        raise ValueError(f"proposal {proposal!r} is not rotation invariant; sector sampling is invalid")
    sizes = [chunk] * (budget // chunk) + ([budget % chunk] if budget % chunk else [])

    def run(i):
        rng = chunk_rng(seed, i)
        z = mix.sample(rng, sizes[i])
        g = np.exp(mix.log_pdf(z))
        if sector:
            z = fold_to_sector(config, z)
        vals = {key: np.asarray(v, dtype=float) / g for key, v in f(z).items()}
        for name, coefs in combos.items():
            vals[name] = sum(c * vals[key] for key, c in coefs.items())
        for key, v in vals.items():
            if not np.all(np.isfinite(v)):
                raise FloatingPointError(f"non-finite value of {key!r} in Monte Carlo sample")
        return {key: _Stats.of(v) for key, v in vals.items()}

    parts = _run_chunks(run, len(sizes), workers)
    out = {}
    for key in parts[0]:
        st = _Stats()
        for p in parts:
            st = st.merge(p[key])
        n = st.n
        ratio = st.amax / (st.asum / n) if st.asum > 0 else 0.0
        out[key] = McEstimate(st.mx, math.sqrt(st.cxx / (n - 1) / n), n, seed, mix.name, ratio)
    return out
