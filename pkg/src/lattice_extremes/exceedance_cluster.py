"""Normalising levels, exceedance point processes and their Laplace functionals."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import mc
from .lattice_core import LatticeUnion, Sublattice, as_point, supnorm
from .tail_spectral import Bump, Modulus, cluster_field, offset_index


@dataclass
class NormalizingSeq:
    mode: str
    sizes: list
    values: list
    tau: float = 1.0

    def __getitem__(self, n):
        return self.values[self.sizes.index(n)]

    def to_dict(self):
        return {"mode": self.mode, "sizes": self.sizes, "values": self.values, "tau": self.tau}


def normalizer(tail=None, sizes=(), data=None, tau: float = 1.0) -> NormalizingSeq:
    """a_n with |Λ_n| P(|X_0| > a_n) = τ.

    Analytic mode takes the survival function ``tail``; empirical mode takes a
    sample ``data`` (at least 10|Λ| values) and returns the (1 - τ/|Λ|) quantile.
    """
    sizes = [int(s) for s in sizes]
    if tail is not None:
        vals = []
        for n in sizes:
            target = tau / n
            f = lambda la: np.log(float(tail(np.exp(la)))) - np.log(target)
            lo, hi = -5.0, 5.0
            while f(lo) < 0:
                lo -= 10
                if lo < -700:
                    raise ValueError("tail function never reaches the target level")
            while f(hi) > 0:
                hi += 10
                if hi > 700:
                    raise ValueError("tail function does not decay to the target level")
            root = brentq(f, lo, hi, xtol=1e-14, rtol=1e-14, maxiter=500)
            a = float(np.exp(root))
            grid = a * np.exp(np.linspace(-0.5, 0.5, 11))
            tv = np.array([float(tail(x)) for x in grid])
            if np.any(np.diff(tv) > 0):
                raise ValueError("tail function is not monotone near the root")
            if abs(n * float(tail(a)) / tau - 1) > 1e-9:
                raise ValueError("bisection did not reach the 1e-9 tolerance")
            vals.append(a)
        return NormalizingSeq("analytic", sizes, vals, tau)
    if data is None:
        raise ValueError("give a tail function or data")
    x = np.abs(np.asarray(data, float)).ravel()
    vals = []
    for n in sizes:
        if x.size < 10 * n:
            raise ValueError(f"empirical mode needs at least {10 * n} values, have {x.size}")
        vals.append(float(np.quantile(x, 1 - tau / n)))
    return NormalizingSeq("empirical", sizes, vals, tau)


@dataclass
class PointConfig:
    points: np.ndarray
    floor: float

    def __post_init__(self):
        if self.floor <= 0:
            raise ValueError("floor must be positive")
        self.points = np.asarray(self.points, float)
        if np.any(np.abs(self.points) <= self.floor):
            raise ValueError("points at or below the floor")

    def __len__(self):
        return len(self.points)


def exceedance_process(values, a: float, floor: float, mask=None) -> PointConfig:
    """{X_t/a : t ∈ Λ, |X_t/a| > floor}; ``mask`` selects Λ inside the realization."""
    from .field_models import FieldRealization

    if isinstance(values, FieldRealization):
        values = values.values
    x = np.asarray(values, float)
    if mask is not None:
        x = x[np.asarray(mask, bool)]
    x = x.ravel() / a
    return PointConfig(x[np.abs(x) > floor], floor)


def laplace_sums(fields, a: float, g, axis_start: int = 1) -> np.ndarray:
    """Σ_t g(X_t/a) for every realization in a stack (n, *grid)."""
    x = np.asarray(fields, float) / a
    return g(x).reshape(x.shape[0], -1).sum(axis=1)


def empirical_laplace(configs, g=None) -> dict:
    """Mean of exp(-Σ g) over configurations with a jackknife SE.

    ``configs`` is either a list of PointConfig or an array of precomputed sums.
    """
    if g is None:
        s = np.asarray(configs, float)
    else:
        s = np.array([float(np.sum(g(c.points))) for c in configs])
    n = len(s)
    if n < 30:
        raise ValueError("need at least 30 configurations")
    e = np.exp(-s)
    m = float(e.mean())
    loo = (e.sum() - e) / (n - 1)
    se = float(np.sqrt((n - 1) / n * ((loo - loo.mean()) ** 2).sum()))
    return {"mean": m, "se": se, "n": n}


# ---------------------------------------------------------------------------
# limit functionals


def _radial_mc(h, M, inner, alpha, rng):
    """Per-sample ∫ h(y) d(-y^{-α}); h vanishes for y ≤ inner/M."""
    n = len(M)
    out = np.zeros(n)
    ok = M > 0
    y0 = np.where(ok, inner / np.where(ok, M, 1.0), np.inf)
    y = y0 * rng.random(n) ** (-1.0 / alpha)
    vals = h(np.where(ok, y, 0.0))
    out[ok] = y0[ok] ** (-alpha) * vals[ok]
    return out


def _shell_mass(values, offsets, pts, R, alpha):
    outer = [p for p in pts if supnorm(p) > R // 2]
    if not outer:
        return 0.0
    idx = offset_index(offsets, outer)
    return float((np.abs(values[:, idx]) ** alpha).sum(axis=1).mean())


def _shape_points(D, R):
    if isinstance(D, LatticeUnion):
        return [as_point(p) for p in D.window(R)]
    return sorted(as_point(p) for p in D if supnorm(as_point(p)) <= R)


@dataclass
class LimitTerm:
    weight: float
    values: np.ndarray  # per-sample integrals
    residual: float

    @property
    def mean(self):
        return float(self.values.mean())

    @property
    def var(self):
        return float(self.values.var(ddof=1) / len(self.values))


def _finish(terms, variant, max_residual, g):
    res = max((t.residual for t in terms), default=0.0)
    if res > max_residual:
        raise ValueError(f"truncation residual {res:.3g} exceeds the bound {max_residual:.3g}; raise R")
    expo = sum(t.weight * t.mean for t in terms)
    var = sum(t.weight ** 2 * t.var for t in terms)
    psi = float(np.exp(-expo))
    product = float(np.prod([np.exp(-t.mean) ** t.weight for t in terms])) if terms else 1.0
    return {"variant": variant, "mean": psi, "se": float(psi * np.sqrt(var)), "exponent": float(expo),
            "product_form": product, "truncation_residual": float(res),
            "n": int(sum(len(t.values) for t in terms)),
            "g": g.describe() if hasattr(g, "describe") else repr(g)}


def _is_zero(g):
    return getattr(g, "c", None) == 0


def limit_laplace_psil(sampler, shapes, g, alpha: float, budget: int, R: int, seed=0,
                       max_residual: float = 1e-3) -> dict:
    """exp(-∫ Σ λ_i E[e^{-Σ_{D_i} g(yΘ)} (1 - e^{-g(yΘ_0)})] d(-y^{-α}))."""
    if _is_zero(g):
        return {"variant": "PsiL", "mean": 1.0, "se": 0.0, "exponent": 0.0, "product_form": 1.0,
                "truncation_residual": 0.0, "n": 0, "g": g.describe()}
    terms = []
    for i, (D, lam) in enumerate(shapes):
        if lam == 0:
            continue
        rng = mc.rng(seed, f"psil/{i}")
        pts = _shape_points(D, R)
        k = len(pts[0]) if pts else getattr(sampler, "k", 1)
        zero = (0,) * k
        offs = [zero] + [p for p in pts if p != zero]
        V = sampler.sample(rng, budget, offs)
        th0 = V[:, 0]
        rest = V[:, 1:]

        def h(y, th0=th0, rest=rest):
            return np.exp(-g(y[:, None] * rest).sum(axis=1)) * (1 - np.exp(-g(y * th0)))

        vals = _radial_mc(h, np.abs(th0), g.inner, alpha, rng)
        terms.append(LimitTerm(float(lam), vals, _shell_mass(V, offs, pts, R, alpha)))
    return _finish(terms, "PsiL", max_residual, g)


def _lattice_points(L, R):
    if isinstance(L, Sublattice):
        return [as_point(p) for p in L.points_in_cube((0,) * L.k, R)]
    return sorted(as_point(p) for p in L if supnorm(as_point(p)) <= R)


def limit_laplace_pro(samplers, structures, g, alpha: float, budget: int, R: int, order, seed=0,
                      max_residual: float = 1e-3) -> dict:
    """exp(-∫ Σ γ*_j c_j E[(1 - e^{-Σ_E g(yΘ_E)}) e^{-Σ_{D̃} g(yΘ_E)}] d(-y^{-α})).

    structures: list of (E, L, gamma, c); D̃ = E + (G \\ {0}) truncated to K_R,
    with G = L^+ ∪ {0} for the given order.
    """
    if _is_zero(g):
        return {"variant": "PsiLEPro", "mean": 1.0, "se": 0.0, "exponent": 0.0, "product_form": 1.0,
                "truncation_residual": 0.0, "n": 0, "g": g.describe()}
    terms = []
    for j, ((E, L, gam, c), smp) in enumerate(zip(structures, samplers)):
        if gam * c == 0:
            continue
        rng = mc.rng(seed, f"pro/{j}")
        E = [as_point(e) for e in E]
        G = [s for s in _lattice_points(L, R) if order.is_positive(s)]
        Dt = sorted({tuple(a + b for a, b in zip(e, s)) for e in E for s in G} - set(E))
        offs = E + Dt
        V = smp.sample(rng, budget, offs)
        VE, VD = V[:, :len(E)], V[:, len(E):]

        def h(y, VE=VE, VD=VD):
            return (1 - np.exp(-g(y[:, None] * VE).sum(axis=1))) * np.exp(-g(y[:, None] * VD).sum(axis=1))

        vals = _radial_mc(h, np.abs(VE).max(axis=1), g.inner, alpha, rng)
        terms.append(LimitTerm(float(gam * c), vals, _shell_mass(V, offs, offs, R, alpha)))
    return _finish(terms, "PsiLEPro", max_residual, g)


class ClusterSampler:
    """Q_{E,L} on H_R = E + (L ∩ K_R), normalised with ρ_α over E shifted along L ∩ K_R."""

    def __init__(self, theta_sampler, E, L, alpha: float, R: int):
        self.theta = theta_sampler
        self.E = [as_point(e) for e in E]
        self.Lpts = _lattice_points(L, R)
        self.alpha = alpha
        self.R = R
        self.offsets = tuple(sorted({tuple(a + b for a, b in zip(e, s)) for e in self.E for s in self.Lpts}))
        self.modulus = Modulus.alpha_norm(self.E, alpha)
        self.envelope = 1.0  # |Q_t| <= ‖Q‖_{H,α} = 1

    def sample(self, rng, n):
        V = self.theta.sample(rng, n, self.offsets)
        keep = np.abs(V).max(axis=1) > 0
        V = V[keep]
        cf = cluster_field(V, self.offsets, self.Lpts, self.alpha, self.R, modulus=self.modulus)
        return cf.q, cf.max_tail_residual()


def limit_laplace_q(samplers, structures, g, alpha: float, budget: int, R: int, seed=0,
                    max_residual: float = 1e-3) -> dict:
    """exp(-Σ γ*_j c_j ∫ E[1 - e^{-Σ_{Ξ*_j} g(yQ)}] d(-y^{-α})) with Q from ClusterSampler."""
    if _is_zero(g):
        return {"variant": "QForm", "mean": 1.0, "se": 0.0, "exponent": 0.0, "product_form": 1.0,
                "truncation_residual": 0.0, "n": 0, "g": g.describe()}
    terms = []
    for j, ((E, L, gam, c), smp) in enumerate(zip(structures, samplers)):
        if gam * c == 0:
            continue
        rng = mc.rng(seed, f"qform/{j}")
        cs = ClusterSampler(smp, E, L, alpha, R)
        Q, res = cs.sample(rng, budget)

        def h(y, Q=Q):
            return 1 - np.exp(-g(y[:, None] * Q).sum(axis=1))

        vals = _radial_mc(h, np.abs(Q).max(axis=1), g.inner, alpha, rng)
        if len(vals) < budget:
            vals = np.concatenate([vals, np.zeros(budget - len(vals))])
        terms.append(LimitTerm(float(gam * c), vals, res))
    return _finish(terms, "QForm", max_residual, g)


def limit_laplace(variant: str, g, alpha: float, budget: int, R: int, seed=0, **kw) -> dict:
    if variant == "PsiL":
        return limit_laplace_psil(kw["sampler"], kw["shapes"], g, alpha, budget, R, seed,
                                  kw.get("max_residual", 1e-3))
    if variant == "PsiLEPro":
        return limit_laplace_pro(kw["samplers"], kw["structures"], g, alpha, budget, R, kw["order"], seed,
                                 kw.get("max_residual", 1e-3))
    if variant == "QForm":
        return limit_laplace_q(kw["samplers"], kw["structures"], g, alpha, budget, R, seed,
                               kw.get("max_residual", 1e-3))
    raise ValueError(f"unknown variant {variant!r}")


def default_g_grid(b2: float = 20.0) -> list:
    """3×3 grid of bumps over (b1, c)."""
    return [Bump(b1, b2, c) for b1 in (0.5, 1.0, 2.0) for c in (0.5, 1.0, 2.0)]


def default_floor(gs) -> float:
    return min(g.inner for g in gs) / 2


# ---------------------------------------------------------------------------
# cluster process


def sample_cluster_process(q_samplers, weights, alpha: float, floor: float, seed, envelopes=None,
                           mixture: bool = False) -> PointConfig:
    """One draw of Σ_j Σ_i Σ_t ε(Γ_{j,i}^{-1/α} (γ*_j c_j)^{1/α} Q_{j,i,t}).

    q_samplers[j].sample(rng, n) returns (Q rows, residual). With mixture=True a
    single Poisson stream is used and each cluster picks j with probability
    γ*_j c_j / Σ γ*c.
    """
    envelopes = envelopes or [getattr(q, "envelope", None) for q in q_samplers]
    if any(e is None for e in envelopes):
        raise ValueError("every cluster sampler needs a Q envelope")
    rng = mc.rng(seed)
    w = np.array([float(gm * c) for gm, c in weights])
    pts = []
    if mixture:
        streams = [(None, float(w.sum()), max(envelopes))]
    else:
        streams = [(j, w[j], envelopes[j]) for j in range(len(q_samplers)) if w[j] > 0]
    for j, wj, env in streams:
        scale = wj ** (1.0 / alpha)
        # all Γ with Γ^{-1/α} scale env >= floor
        gmax = (scale * env / floor) ** alpha
        gam = []
        acc = rng.standard_exponential()
        while acc <= gmax:
            gam.append(acc)
            acc += rng.standard_exponential()
        if not gam:
            continue
        gam = np.array(gam)
        if j is None:
            which = rng.choice(len(q_samplers), size=len(gam), p=w / w.sum())
        else:
            which = np.full(len(gam), j)
        for jj in np.unique(which):
            sel = np.flatnonzero(which == jj)
            Q, _ = q_samplers[jj].sample(rng, len(sel))
            while len(Q) < len(sel):  # rows with zero field are dropped by the sampler
                more, _ = q_samplers[jj].sample(rng, len(sel) - len(Q))
                Q = np.concatenate([Q, more])
            vals = (gam[sel] ** (-1.0 / alpha) * scale)[:, None] * Q[:len(sel)]
            pts.append(vals.ravel())
    allp = np.concatenate(pts) if pts else np.zeros(0)
    return PointConfig(allp[np.abs(allp) > floor], floor)


@dataclass
class IIDClusterSampler:
    """Single-point clusters (Q = 1 at the origin)."""

    envelope: float = 1.0
    extras: dict = field(default_factory=dict)

    def sample(self, rng, n):
        return np.ones((n, 1)), 0.0
