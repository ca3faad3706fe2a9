"""Extremal index estimators, the argmax functional T*, anti-clustering and Fréchet checks."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import mc
from .exceedance_cluster import normalizer
from .lattice_core import InvariantOrder, LatticeUnion, Sublattice, as_point, supnorm
from .tail_spectral import Modulus, cluster_field, offset_index


@dataclass
class BlockScheme:
    size: int  # |Λ_n|
    k: int
    r: int  # blocks Λ_r are r^k boxes
    u: float
    tau: float = 1.0

    @property
    def k_n(self) -> int:
        return self.size // self.r ** self.k

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("need r >= 1")
        if self.k_n < 2:
            raise ValueError(f"k_n = {self.k_n}: need at least two blocks")


def block_scheme(size: int, k: int, tail, tau: float = 1.0, r: int | None = None) -> BlockScheme:
    """r = ⌊|Λ_n|^{1/(2k)}⌋ (√n per axis) by default; u from |Λ_n| P(|X_0| > u) = τ."""
    r = int(size ** (1.0 / (2 * k)) + 1e-9) if r is None else int(r)
    u = normalizer(tail, [size], tau=tau).values[0]
    return BlockScheme(int(size), k, r, u, tau)


@dataclass
class ThetaEstimate:
    variant: str
    value: float
    se: float
    truncation: int | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def in_range(self) -> bool:
        return 0.0 <= self.value <= 1.0

    def to_dict(self):
        return {"variant": self.variant, "value": self.value, "se": self.se, "truncation": self.truncation,
                "in_range": self.in_range, "diagnostics": self.diagnostics}


def block_maxima(fields, r: int) -> np.ndarray:
    """Maxima of |X| over disjoint r^k blocks; returns (n_realizations, n_blocks)."""
    x = np.abs(np.asarray(fields, float))
    n_real, grid = x.shape[0], x.shape[1:]
    nb = [g // r for g in grid]
    x = x[(slice(None),) + tuple(slice(0, b * r) for b in nb)]
    shape = [n_real]
    for b in nb:
        shape += [b, r]
    x = x.reshape(shape)
    axes = tuple(2 + 2 * i for i in range(len(grid)))
    return x.max(axis=axes).reshape(n_real, -1)


def block_theta(fields, scheme: BlockScheme) -> ThetaEstimate:
    """P̂(max over an r^k block > u) / (r^k P̂(|X_0| > u)) with binomial SEs propagated."""
    fields = np.asarray(fields, float)
    bm = block_maxima(fields, scheme.r)
    nb = bm.size
    pb = float(np.mean(bm > scheme.u))
    used = fields[(slice(None),) + tuple(slice(0, (g // scheme.r) * scheme.r) for g in fields.shape[1:])]
    nm = used.size
    pm = float(np.mean(np.abs(used) > scheme.u))
    if pb == 0 or pm == 0:
        raise ValueError(f"no block exceeds u={scheme.u:g}: {nb} blocks, largest block max {float(bm.max()):.6g}")
    size = scheme.r ** scheme.k
    th = pb / (size * pm)
    rel = np.sqrt((1 - pb) / (pb * nb) + (1 - pm) / (pm * nm))
    return ThetaEstimate("block", th, float(th * rel), None,
                         {"blocks": nb, "block_exceedances": int(round(pb * nb)),
                          "point_exceedances": int(round(pm * nm)), "u": scheme.u, "r": scheme.r})


def _points(A, R):
    if isinstance(A, LatticeUnion):
        return [as_point(p) for p in A.window(R)]
    if isinstance(A, Sublattice):
        return [as_point(p) for p in A.points_in_cube((0,) * A.k, R)]
    return sorted(as_point(p) for p in A if supnorm(as_point(p)) <= R)


def _se(x):
    return float(np.std(x, ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0


def theta_u_index(sampler, shapes, alpha: float, budget: int, R: int, seed=0) -> dict:
    """Σ λ_j E[sup_{D_j ∪ 0}|Θ|^α - sup_{D_j}|Θ|^α] and Σ λ_j P(Y sup_{D_j}|Θ| <= 1).

    Both forms use the same Θ draws; the second uses an independent Pareto Y.
    Returns the two estimates and the SE of their difference.
    """
    f1 = f2 = 0.0
    v1 = v2 = vd = 0.0
    for i, (D, lam) in enumerate(shapes):
        if lam == 0:
            continue
        rng = mc.rng(seed, f"uindex/{i}")
        pts = _points(D, R)
        k = len(pts[0]) if pts else getattr(sampler, "k", 1)
        zero = (0,) * k
        offs = [zero] + [p for p in pts if p != zero]
        V = np.abs(sampler.sample(rng, budget, offs))
        s = (V[:, 1:] ** alpha).max(axis=1) if len(offs) > 1 else np.zeros(budget)
        a = np.maximum(V[:, 0] ** alpha, s) - s
        Y = rng.random(budget) ** (-1.0 / alpha)
        b = (Y * s ** (1.0 / alpha) <= 1).astype(float)
        f1 += lam * a.mean()
        f2 += lam * b.mean()
        v1 += lam ** 2 * _se(a) ** 2
        v2 += lam ** 2 * _se(b) ** 2
        vd += lam ** 2 * _se(a - b) ** 2
    sup = ThetaEstimate("u_index", float(f1), float(np.sqrt(v1)), R)
    pr = ThetaEstimate("u_index_pareto", float(f2), float(np.sqrt(v2)), R)
    return {"sup_difference": sup, "pareto": pr, "gap": abs(f1 - f2), "gap_se": float(np.sqrt(vd))}


def _sorted_lattice(L, R, order):
    pts = _points(L, R)
    return sorted(pts, key=order.key)


def _block_max(V, offsets, E, Lpts):
    """m[:, i] = max_{z ∈ E + Lpts[i]} |V_z| for the points whose block fits in the window."""
    pos = {o: i for i, o in enumerate(offsets)}
    cols, keep = [], []
    A = np.abs(V)
    for t in Lpts:
        blk = [tuple(a + b for a, b in zip(e, t)) for e in E]
        if all(b in pos for b in blk):
            cols.append(A[:, [pos[b] for b in blk]].max(axis=1))
            keep.append(t)
    return np.column_stack(cols), keep


def t_star_index(V, offsets, E, L, order: InvariantOrder, R: int):
    """Vectorised T*: returns (points in ≺ order, index of T* per row, -1 on a miss).

    T* is the ≺-first block achieving the overall block maximum: strictly above
    every earlier block and at least every later one. A row is a truncation miss
    when all blocks vanish or the maximising block sits on the outer shell |t| = R.
    """
    Lpts = _sorted_lattice(L, R, order)
    m, pts = _block_max(V, offsets, [as_point(e) for e in E], Lpts)
    best = m.max(axis=1)
    idx = np.argmax(m == best[:, None], axis=1)
    shell = np.array([supnorm(p) >= R for p in pts])
    miss = (best == 0) | shell[idx]
    idx = np.where(miss, -1, idx)
    return pts, idx


def argmax_T_star(theta, E, L, order: InvariantOrder, R: int, offsets=None):
    """T* for a single field given as a mapping point -> value (or values + offsets)."""
    if isinstance(theta, dict):
        offsets = list(theta)
        V = np.array([[theta[o] for o in offsets]], float)
    else:
        V = np.atleast_2d(np.asarray(theta, float))
    pts, idx = t_star_index(V, [as_point(o) for o in offsets], E, L, order, R)
    return None if idx[0] < 0 else pts[idx[0]]


def _require_lattice(X):
    if isinstance(X, Sublattice):
        return X
    if isinstance(X, LatticeUnion):
        if len(X.components) == 1 and not X.isolated and X.floor is None and X.components[0][0].reduce(
                X.components[0][1]) == (0,) * X.k:
            return X.components[0][0]
    raise ValueError("Ξ* is not a lattice; use theta_index4 with the Υ-spectral field")


def theta_lattice_forms(sampler, structures, alpha: float, order: InvariantOrder, budget: int, R: int,
                        seed=0) -> dict:
    """E[sup|Q|^α], E[sup|Θ|^α / Σ|Θ|^α] and E[|Θ_0|^α 1(T* = 0)] over lattices Ξ*_j.

    structures: list of (Ξ*_j as a lattice, λ_j). One stream of Θ feeds all three.
    """
    acc = {"Q_sup": [], "ratio": [], "T_star": []}
    weights = []
    miss_rate = []
    tail = 0.0
    for i, (X, lam) in enumerate(structures):
        L = _require_lattice(X)
        rng = mc.rng(seed, f"lattice/{i}")
        offs = _points(L, R)
        V = sampler.sample(rng, budget, offs)
        zero = offset_index(offs, [(0,) * L.k])[0]
        cf = cluster_field(V, offs, L, alpha, R)
        tail = max(tail, cf.max_tail_residual())
        A = np.abs(V) ** alpha
        q = (np.abs(cf.q) ** alpha).max(axis=1)
        ratio = A.max(axis=1) / A.sum(axis=1)
        pts, idx = t_star_index(V, offs, [(0,) * L.k], L, order, R)
        z = pts.index((0,) * L.k)
        ok = idx >= 0
        ts = A[:, zero] * (idx == z)
        miss_rate.append(float(1 - ok.mean()))
        acc["Q_sup"].append(q)
        acc["ratio"].append(ratio)
        acc["T_star"].append(np.where(ok, ts, np.nan))
        weights.append(float(lam))
    out = {}
    for name, arrs in acc.items():
        val = sum(w * np.nanmean(a) for w, a in zip(weights, arrs))
        var = sum(w ** 2 * _se(a[~np.isnan(a)]) ** 2 for w, a in zip(weights, arrs))
        out[name] = ThetaEstimate(f"lattice_{name}", float(val), float(np.sqrt(var)), R,
                                  {"summability_residual": tail, "truncation_miss": miss_rate})
    names = list(acc)
    gaps = {}
    for a, b in itertools.combinations(names, 2):
        var = 0.0
        for w, x, y in zip(weights, acc[a], acc[b]):
            d = (x - y)[~(np.isnan(x) | np.isnan(y))]
            var += w ** 2 * _se(d) ** 2
        gaps[f"{a}-{b}"] = {"gap": abs(out[a].value - out[b].value), "se": float(np.sqrt(var))}
    out["gaps"] = gaps
    return out


def theta_index4(samplers, structures, alpha: float, order: InvariantOrder, budget: int, R: int,
                 seed=0) -> ThetaEstimate:
    """Σ_j γ*_j |E_j| E[max_{z∈E_j}|Θ_{E_j,z}|^α 1(T*_j = 0)] with the α-norm modulus on E_j.

    structures: list of (E_j, L_j, γ*_j); samplers give Θ_{E_j}. Missed rows are excluded.
    """
    val, var = 0.0, 0.0
    misses = []
    for j, ((E, L, gam), smp) in enumerate(zip(structures, samplers)):
        if gam == 0:
            continue
        rng = mc.rng(seed, f"index4/{j}")
        E = [as_point(e) for e in E]
        Lpts = _points(L, R)
        offs = sorted({tuple(a + b for a, b in zip(e, s)) for e in E for s in Lpts})
        V = smp.sample(rng, budget, offs)
        pts, idx = t_star_index(V, offs, E, L, order, R)
        z = pts.index((0,) * len(E[0]))
        ok = idx >= 0
        mE = (np.abs(V[:, offset_index(offs, E)]) ** alpha).max(axis=1)
        term = (mE * (idx == z))[ok]
        w = gam * len(E)
        val += w * term.mean()
        var += w ** 2 * _se(term) ** 2
        misses.append(float(1 - ok.mean()))
    return ThetaEstimate("upsilon_index4", float(val), float(np.sqrt(var)), R, {"truncation_miss": misses})


# ---------------------------------------------------------------------------
# anti-clustering


def _ac_offsets(r, k, order, E=None):
    """R_{0,Λ_r}: positive differences x - t with x ∈ Λ_r and t admissible in Λ_r."""
    box = list(itertools.product(range(r), repeat=k))
    if E is None:
        rng_ = range(-(r - 1), r)
        return sorted(d for d in itertools.product(rng_, repeat=k) if order.is_positive(d))
    E = [as_point(e) for e in E]
    bset = set(box)
    starts = [t for t in box if all(tuple(a + b for a, b in zip(t, e)) in bset for e in E)]
    diffs = {tuple(x - y for x, y in zip(p, t)) for t in starts for p in box}
    return sorted(d for d in diffs if order.is_positive(d))


def ac_diagnostic(fields, r: int, u: float, l_grid, order: InvariantOrder, E=None, eps: float = 0.02) -> dict:
    """P̂(max_{R_l} |X| > u | conditioning) over the l grid.

    Conditioning is |X_0| > u, or max_{E}|X| > u for the I* variant (E given).
    """
    fields = np.asarray(fields, float)
    k = fields.ndim - 1
    offs = _ac_offsets(r, k, order, E)
    cond = [(0,) * k] if E is None else [as_point(e) for e in E]
    allp = np.array(offs + cond)
    lo = np.maximum(0, -allp.min(axis=0))
    hi = np.array(fields.shape[1:]) - np.maximum(0, allp.max(axis=0))
    if np.any(hi <= lo):
        raise ValueError("grid too small for the block")
    A = np.abs(fields)
    parts = [A[(slice(None),) + tuple(slice(a + c, b + c) for a, b, c in zip(lo, hi, e))] for e in cond]
    cmax = np.max(np.stack(parts), axis=0)
    nz = np.nonzero(cmax > u)
    if len(nz[0]) == 0:
        raise ValueError(f"conditioning event never observed at u={u:g}")
    anchors = [nz[0]] + [nz[i + 1] + lo[i] for i in range(k)]
    off = np.array(offs)
    sup = np.array([supnorm(o) for o in offs])
    vals = A[tuple([anchors[0][:, None]] + [anchors[i + 1][:, None] + off[None, :, i] for i in range(k)])]
    curve = []
    for l in l_grid:
        sel = sup > l
        if not sel.any():
            curve.append(0.0)
            continue
        curve.append(float(np.mean(vals[:, sel].max(axis=1) > u)))
    slope = float(np.polyfit(np.asarray(l_grid, float), curve, 1)[0]) if len(l_grid) > 1 else 0.0
    n = len(nz[0])
    return {"l": list(map(int, l_grid)), "curve": curve, "anchors": n,
            "se": [float(np.sqrt(c * (1 - c) / n)) for c in curve], "slope": slope,
            "variant": "AC" if E is None else "AC_I*", "pass": bool(curve[-1] <= eps)}


# ---------------------------------------------------------------------------
# Fréchet limit of maxima


def frechet_fit(maxima, a: float, alpha: float, theta: float, level: float = 0.05) -> dict:
    """KS distance between max|X|/a and Φ_α^θ(x) = exp(-θ x^{-α}), with the DKW band."""
    x = np.sort(np.asarray(maxima, float) / a)
    n = len(x)

    def cdf(z):
        z = np.asarray(z, float)
        out = np.zeros_like(z)
        pos = z > 0
        out[pos] = np.exp(-theta * z[pos] ** (-alpha))
        return out

    ks = stats.kstest(x, cdf)
    band = float(np.sqrt(np.log(2 / level) / (2 * n)))
    p = (np.arange(1, n + 1) - 0.5) / n
    qq_theory = (-np.log(p) / theta) ** (-1.0 / alpha)
    return {"ks": float(ks.statistic), "band": band, "pass": bool(ks.statistic <= band), "n": n,
            "theta": float(theta), "qq_empirical": x.tolist(), "qq_theory": qq_theory.tolist()}
