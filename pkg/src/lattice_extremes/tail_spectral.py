"""Tail fields, spectral tail fields and their Υ-versions.

Empirical estimators work on stacks of box-shaped realizations, an array of
shape (n_realizations, *grid). Offsets are integer points relative to the
anchor. Everything is d = 1 (real valued).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mc
from .field_models import IIDFrechet, LinearHeavyTail, MovingMaxima
from .lattice_core import IndexSet, LatticeUnion, Sublattice, as_point, supnorm


@dataclass(frozen=True)
class Modulus:
    """sup norm or α-norm restricted to a finite patch Υ."""

    kind: str
    upsilon: tuple
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in ("sup_norm", "alpha_norm"):
            raise ValueError(f"unknown modulus kind {self.kind!r}")
        ups = tuple(sorted(as_point(p) for p in self.upsilon))
        if not ups:
            raise ValueError("Υ must be non-empty")
        object.__setattr__(self, "upsilon", ups)
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @classmethod
    def sup(cls, upsilon):
        return cls("sup_norm", tuple(upsilon))

    @classmethod
    def alpha_norm(cls, upsilon, alpha):
        return cls("alpha_norm", tuple(upsilon), alpha)

    @property
    def k(self):
        return len(self.upsilon[0])

    def shifted(self, t) -> "Modulus":
        t = as_point(t)
        return Modulus(self.kind, tuple(tuple(a + b for a, b in zip(u, t)) for u in self.upsilon), self.alpha)

    def reduce(self, x: np.ndarray) -> np.ndarray:
        """Apply to the last axis of x, which holds the values on Υ."""
        a = np.abs(np.asarray(x, float))
        if self.kind == "sup_norm":
            return a.max(axis=-1)
        return (a ** self.alpha).sum(axis=-1) ** (1.0 / self.alpha)

    def eval(self, x, offsets=None):
        """ρ_Υ(x); x is a mapping point -> value or an array aligned with offsets."""
        if isinstance(x, dict):
            missing = [u for u in self.upsilon if u not in x]
            if missing:
                raise ValueError(f"Υ not inside the window: {missing[:3]}")
            return float(self.reduce(np.array([x[u] for u in self.upsilon])))
        idx = offset_index(offsets, self.upsilon)
        return self.reduce(np.asarray(x)[..., idx])

    def constants(self) -> tuple:
        """(C, D): max|x| < ε ⇒ ρ < ε/C and ρ < ε ⇒ max|x| < Dε."""
        if self.kind == "sup_norm":
            return 1.0, 1.0
        return len(self.upsilon) ** (-1.0 / self.alpha), 1.0

    def to_dict(self):
        return {"kind": self.kind, "upsilon": [list(u) for u in self.upsilon], "alpha": self.alpha}


def offset_index(offsets, wanted) -> np.ndarray:
    pos = {as_point(o): i for i, o in enumerate(offsets)}
    try:
        return np.array([pos[as_point(w)] for w in wanted], dtype=np.int64)
    except KeyError as e:
        raise ValueError(f"offset {e.args[0]} is not in the window") from None


# ---------------------------------------------------------------------------
# samples


@dataclass
class SpectralSample:
    window: IndexSet
    values: np.ndarray
    normalization: str
    u: float
    alpha: float

    def value(self, t):
        return float(self.values[self.window.points.index(as_point(t))])


@dataclass
class SpectralBatch:
    """Many spectral samples on a common offset window."""

    offsets: tuple
    values: np.ndarray  # (n, |W|)
    radial: np.ndarray  # |X_t0|/u or ρ/u
    anchors: np.ndarray  # (n, 1 + k): realization index then grid coordinates
    normalization: str
    u: float
    alpha: float
    modulus: Modulus | None = None
    extras: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        win = IndexSet(self.offsets)
        perm = offset_index(self.offsets, win.points)
        for row in self.values:
            yield SpectralSample(win, row[perm], self.normalization, self.u, self.alpha)

    def column(self, t) -> np.ndarray:
        return self.values[:, offset_index(self.offsets, [t])[0]]

    def sample(self, rng, n, offsets):
        """Bootstrap draws, so a batch can stand in for an exact sampler."""
        idx = offset_index(self.offsets, offsets)
        rows = rng.integers(0, len(self.values), size=n)
        return self.values[rows][:, idx]

    def to_csv(self, path):
        k = len(self.offsets[0])
        with open(path, "w") as fh:
            head = ["realization"] + [f"anchor_{i + 1}" for i in range(k)] + [f"offset_{i + 1}" for i in range(k)]
            fh.write(",".join(head + ["value"]) + "\n")
            for a, row in zip(self.anchors, self.values):
                for o, v in zip(self.offsets, row):
                    fh.write(",".join(str(int(x)) for x in a) + "," + ",".join(map(str, o)) + f",{v!r}\n")


def _anchor_region(shape, offsets):
    off = np.array(offsets, dtype=np.int64)
    lo = np.maximum(0, -off.min(axis=0))
    hi = np.array(shape) - np.maximum(0, off.max(axis=0))  # exclusive
    if np.any(hi <= lo):
        raise ValueError("window does not fit inside the grid")
    return lo, hi


def _gather(fields, anchors, offsets):
    """Values at anchor + offset; anchors (n, 1+k)."""
    off = np.array(offsets, dtype=np.int64)
    idx = [anchors[:, :1]] + [anchors[:, 1 + i:2 + i] + off[None, :, i] for i in range(off.shape[1])]
    return fields[tuple(idx)]


def _check_threshold(fields, u, min_quantile):
    if min_quantile is None:
        return
    frac = float(np.mean(np.abs(fields) > u))
    if frac > 1 - min_quantile:
        raise ValueError(f"threshold {u:g} is below the {min_quantile:.2f} marginal quantile "
                         f"(exceedance fraction {frac:.3g})")


def _prepare(fields, window, extra):
    fields = np.asarray(fields, float)
    W = [as_point(w) for w in (window.points if isinstance(window, IndexSet) else window)]
    if not W:
        raise ValueError("window is empty")
    k = len(W[0])
    if fields.ndim != k + 1:
        raise ValueError(f"expected realizations of shape (n, grid of dim {k})")
    allpts = W + [as_point(e) for e in extra] + [(0,) * k]
    lo, hi = _anchor_region(fields.shape[1:], allpts)
    return fields, W, k, lo, hi


def estimate_spectral_tail(fields, u: float, window, alpha: float, min_quantile: float | None = 0.9) -> SpectralBatch:
    """Θ samples (X_{t0+s}/|X_{t0}|)_{s∈W} over all anchors with |X_{t0}| > u.

    Anchors are kept only when t0 + W lies inside the grid, so no values are
    wrapped or invented at the boundary.
    """
    return estimate_upsilon_tail(fields, Modulus.sup([(0,) * len(as_point(_first(window)))]), u, window, alpha,
                                 min_quantile=min_quantile, _spectral=True)


def _first(window):
    return window.points[0] if isinstance(window, IndexSet) else window[0]


def estimate_upsilon_tail(fields, modulus: Modulus, u: float, window, alpha: float,
                          min_quantile: float | None = 0.9, _spectral: bool = False) -> SpectralBatch:
    """Θ_Υ samples X_{t0+s}/ρ_{Υ+t0}(X) over anchors with ρ_{Υ+t0}(X) > u."""
    fields, W, k, lo, hi = _prepare(fields, window, modulus.upsilon)
    _check_threshold(fields, u, min_quantile)
    n = fields.shape[0]
    # ρ over Υ + t0 for every valid anchor
    sub = tuple(slice(a, b) for a, b in zip(lo, hi))
    parts = []
    for e in modulus.upsilon:
        sl = tuple(slice(a + x, b + x) for a, b, x in zip(lo, hi, e))
        parts.append(np.abs(fields[(slice(None),) + sl]))
    stack = np.stack(parts, axis=-1)
    rho = modulus.reduce(stack)
    hit = rho > u
    if not hit.any():
        raise ValueError(f"no anchor exceeds u={u:g}; largest observed value {float(rho.max()):.6g}")
    nz = np.nonzero(hit)
    anchors = np.column_stack([nz[0]] + [nz[i + 1] + lo[i] for i in range(k)]).astype(np.int64)
    r = rho[nz]
    vals = _gather(fields, anchors, W) / r[:, None]
    norm = "by_abs_X0" if _spectral else "by_rho_upsilon"
    batch = SpectralBatch(tuple(W), vals, r / u, anchors, norm, float(u), float(alpha),
                          None if _spectral else modulus)
    # c estimate: P(ρ_Υ(X) > u) / P(|X_0| > u) on the same anchor region
    p0 = float(np.mean(np.abs(fields[(slice(None),) + sub]) > u))
    batch.extras["c_estimate"] = float(hit.mean() / p0) if p0 > 0 else float("nan")
    batch.extras["anchor_region"] = (lo.tolist(), hi.tolist())
    batch.extras["n_realizations"] = n
    return batch


def pareto_check(radial, alpha: float, ys=None, level: float = 0.05) -> dict:
    """Empirical survival of the radial part against y^{-α} with a DKW band."""
    radial = np.sort(np.asarray(radial, float))
    n = len(radial)
    if ys is None:
        ys = np.linspace(1.0, 10.0, 181)
    ys = np.asarray(ys, float)
    surv = 1.0 - np.searchsorted(radial, ys, side="right") / n
    dev = np.abs(surv - ys ** (-alpha))
    eps = float(np.sqrt(np.log(2 / level) / (2 * n)))
    return {"n": n, "max_deviation": float(dev.max()), "band": eps, "pass": bool(dev.max() <= eps),
            "y": ys.tolist(), "survival": surv.tolist()}


def distance_correlation(x, y) -> float:
    x = np.asarray(x, float).reshape(len(x), -1)
    y = np.asarray(y, float).reshape(len(y), -1)

    def centred(z):
        d = np.sqrt(((z[:, None, :] - z[None, :, :]) ** 2).sum(-1))
        return d - d.mean(0) - d.mean(1)[:, None] + d.mean()

    A, B = centred(x), centred(y)
    dcov = (A * B).mean()
    den = np.sqrt((A * A).mean() * (B * B).mean())
    return float(np.sqrt(max(dcov, 0.0) / den)) if den > 0 else 0.0


def dcor_test(x, y, n_perm: int = 199, seed=0, max_n: int = 1500) -> dict:
    """Distance correlation with a permutation p-value."""
    g = mc.rng(seed)
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if len(x) > max_n:
        keep = np.sort(g.choice(len(x), max_n, replace=False))
        x, y = x[keep], y[keep]
    x = x.reshape(len(x), -1)
    y = y.reshape(len(y), -1)
    dx = np.sqrt(((x[:, None] - x[None]) ** 2).sum(-1))
    dy = np.sqrt(((y[:, None] - y[None]) ** 2).sum(-1))

    def dc(a, b):
        A = a - a.mean(0) - a.mean(1)[:, None] + a.mean()
        B = b - b.mean(0) - b.mean(1)[:, None] + b.mean()
        den = np.sqrt((A * A).mean() * (B * B).mean())
        return np.sqrt(max((A * B).mean(), 0.0) / den) if den > 0 else 0.0

    stat = dc(dx, dy)
    count = 0
    for _ in range(n_perm):
        p = g.permutation(len(y))
        count += dc(dx, dy[np.ix_(p, p)]) >= stat
    return {"dcor": float(stat), "p_value": (count + 1) / (n_perm + 1), "n": len(x)}


def independence_check(batch: SpectralBatch, n_perm: int = 199, seed=0, alpha_level: float = 0.01) -> dict:
    """Radial part ρ/u against the angular field; should look independent."""
    res = dcor_test(np.log(batch.radial), batch.values, n_perm=n_perm, seed=seed)
    res["pass"] = res["p_value"] > alpha_level
    return res


# ---------------------------------------------------------------------------
# exact Θ_Υ for moving-maximum type models


class UpsilonSampler:
    """Θ_Υ for MovingMaxima / LinearHeavyTail: one big noise at m, P(M=m) ∝ ρ_Υ(a_{·-m})^α."""

    def __init__(self, model, modulus: Modulus):
        if isinstance(model, MovingMaxima):
            w, self.signed = dict(model.kernel), False
        elif isinstance(model, LinearHeavyTail):
            w, self.signed = dict(model.coeffs), True
        else:
            raise TypeError(f"no Υ-spectral oracle for {type(model).__name__}")
        self.w = w
        self.alpha = model.alpha
        self.modulus = modulus
        cands = sorted({tuple(u - s for u, s in zip(up, sp)) for up in modulus.upsilon for sp in w})
        rows = []
        for m in cands:
            vals = np.array([w.get(tuple(a - b for a, b in zip(up, m)), 0.0) for up in modulus.upsilon])
            rows.append(float(modulus.reduce(vals)))
        rows = np.array(rows)
        keep = rows > 0
        self.m = [c for c, ok in zip(cands, keep) if ok]
        self.rho = rows[keep]
        p = self.rho ** self.alpha
        self.probs = p / p.sum()

    def sample(self, rng, n, offsets):
        offsets = [as_point(o) for o in offsets]
        M = rng.choice(len(self.m), size=n, p=self.probs)
        out = np.zeros((n, len(offsets)))
        for i, m in enumerate(self.m):
            rows = M == i
            if not rows.any():
                continue
            vec = np.array([self.w.get(tuple(a - b for a, b in zip(o, m)), 0.0) for o in offsets]) / self.rho[i]
            out[rows] = vec
        if self.signed:
            out *= np.where(rng.random(n) < 0.5, -1.0, 1.0)[:, None]
        return out

    def c_value(self) -> float:
        """lim P(ρ_Υ(X) > x)/P(|X_0| > x) for this model."""
        mass = sum(abs(v) ** self.alpha for v in self.w.values())
        return float((self.rho ** self.alpha).sum() / mass)


def upsilon_tail_oracle(model, modulus: Modulus):
    if isinstance(model, IIDFrechet):
        # one big value at a uniformly weighted point of Υ, normalised by ρ of an indicator
        return _IIDUpsilon(modulus, model.alpha)
    return UpsilonSampler(model, modulus)


class _IIDUpsilon:
    def __init__(self, modulus, alpha):
        self.modulus = modulus
        self.alpha = alpha

    def sample(self, rng, n, offsets):
        offsets = [as_point(o) for o in offsets]
        ups = self.modulus.upsilon
        J = rng.integers(0, len(ups), size=n)
        out = np.zeros((n, len(offsets)))
        pos = {o: i for i, o in enumerate(offsets)}
        for j, up in enumerate(ups):
            if up in pos:
                out[J == j, pos[up]] = 1.0
        return out

    def c_value(self):
        return float(len(self.modulus.upsilon))


# ---------------------------------------------------------------------------
# time change


def _ramp(x, lo, hi):
    return np.clip((x - lo) / (hi - lo), 0.0, 1.0)


@dataclass(frozen=True)
class Bump:
    """c · ramp(|x|; b1, 1.1 b1) · ramp-down(|x|; b2/1.1, b2): continuous, zero near 0 and beyond b2."""

    b1: float
    b2: float
    c: float = 1.0

    def __post_init__(self):
        if not (0 < 1.1 * self.b1 < self.b2 / 1.1):
            raise ValueError("need 0 < 1.1 b1 < b2/1.1")

    @property
    def inner(self):
        return self.b1

    def __call__(self, x):
        a = np.abs(x)
        return self.c * _ramp(a, self.b1, 1.1 * self.b1) * _ramp(self.b2 - a, 0.0, self.b2 - self.b2 / 1.1)

    def describe(self):
        return {"kind": "bump", "b1": self.b1, "b2": self.b2, "c": self.c}


@dataclass(frozen=True)
class Threshold:
    """c · 1(|x| > level): bounded, not continuous; fine for time-change checks."""

    level: float
    c: float = 1.0

    @property
    def inner(self):
        return self.level

    def __call__(self, x):
        return self.c * (np.abs(x) > self.level)

    def describe(self):
        return {"kind": "threshold", "level": self.level, "c": self.c}


def _safe_div(a, b):
    out = np.zeros_like(a, dtype=float)
    nz = b != 0
    out[nz] = a[nz] / b[nz]
    return out


def time_change_check(sampler, g, s, t, alpha: float, budget: int, seed=0, version: str = "theta",
                      modulus: Modulus | None = None, n_sigma: float = 3.0) -> dict:
    """Both sides of the time-change identity from one stream of draws.

    theta: E[g(Θ_{t-s}) 1(Θ_{-s} ≠ 0)]  vs  E[g(Θ_t/|Θ_s|) |Θ_s|^α].
    Y:     E[g(Y_{t-s}) 1(Y_{-s} ≠ 0)]  vs  E[|Θ_s|^α g(q Θ_t/|Θ_s|)], q Pareto(α),
           which is the radial integral after r = q/|Θ_s|.
    With a modulus the conditions use ρ_{Υ-s} and ρ_{Υ+s} instead of |Θ_{-s}|, |Θ_s|.
    Terms with |Θ_s| = 0 contribute 0 on the right. The SE is that of the
    paired difference.
    """
    s, t = as_point(s), as_point(t)
    g_rng = mc.rng(seed)
    ts = tuple(a - b for a, b in zip(t, s))
    ms = tuple(-a for a in s)
    if modulus is None:
        pts = [ts, ms, t, s]
    else:
        pts = [ts, t] + list(modulus.shifted(ms).upsilon) + list(modulus.shifted(s).upsilon)
    uniq = sorted(set(pts))
    V = sampler.sample(g_rng, budget, uniq)
    col = {p: V[:, i] for i, p in enumerate(uniq)}
    if modulus is None:
        den_l = np.abs(col[ms])
        den_r = np.abs(col[s])
    else:
        den_l = modulus.reduce(np.column_stack([col[p] for p in modulus.shifted(ms).upsilon]))
        den_r = modulus.reduce(np.column_stack([col[p] for p in modulus.shifted(s).upsilon]))
    if version == "theta":
        lhs_i = g(col[ts]) * (den_l != 0)
        rhs_i = np.where(den_r != 0, g(_safe_div(col[t], den_r)) * den_r ** alpha, 0.0)
    elif version == "Y":
        # Y = R Θ with R Pareto(α) independent of Θ (radial part of the tail field)
        R = g_rng.random(budget) ** (-1.0 / alpha)
        q = g_rng.random(budget) ** (-1.0 / alpha)
        lhs_i = g(R * col[ts]) * (den_l != 0)
        rhs_i = np.where(den_r != 0, g(q * _safe_div(col[t], den_r)) * den_r ** alpha, 0.0)
    else:
        raise ValueError("version must be 'theta' or 'Y'")
    lhs, rhs = float(lhs_i.mean()), float(rhs_i.mean())
    se = float((lhs_i - rhs_i).std(ddof=1) / np.sqrt(budget))
    return {"lhs": lhs, "rhs": rhs, "se": se, "n": int(budget), "s": list(s), "t": list(t),
            "pass": bool(abs(lhs - rhs) <= n_sigma * se + 1e-12)}


# ---------------------------------------------------------------------------
# spectral cluster field


@dataclass
class ClusterField:
    offsets: tuple
    q: np.ndarray  # (n, |W|) Θ / norm
    norm: np.ndarray
    tail_residual: np.ndarray  # norm on A∩K_R minus norm on A∩K_{R/2}
    support: tuple  # points of A ∩ K_R used in the norm

    def max_tail_residual(self) -> float:
        return float(self.tail_residual.max()) if len(self.tail_residual) else 0.0


def _points_of(A, R, k):
    if isinstance(A, LatticeUnion):
        return [as_point(p) for p in A.window(R)]
    if isinstance(A, Sublattice):
        return [as_point(p) for p in A.points_in_cube((0,) * A.k, R)]
    return sorted(as_point(p) for p in A if supnorm(as_point(p)) <= R)


def _norm_alpha(values, offsets, A_pts, alpha, modulus):
    if modulus is None:
        idx = offset_index(offsets, A_pts)
        return (np.abs(values[:, idx]) ** alpha).sum(axis=1) ** (1.0 / alpha) if len(idx) else np.zeros(len(values))
    tot = np.zeros(len(values))
    for a in A_pts:
        m = modulus.shifted(a)
        tot += m.eval(values, offsets) ** alpha
    return tot ** (1.0 / alpha)


def cluster_field(values, offsets, A, alpha: float, R: int, modulus: Modulus | None = None) -> ClusterField:
    """Q = Θ / ‖Θ‖ with ‖Θ‖ = (Σ_{t∈A∩K_R} |Θ_t|^α)^{1/α}, or Σ ρ_{Υ+t}(Θ)^α with a modulus."""
    values = np.atleast_2d(np.asarray(values, float))
    offsets = tuple(as_point(o) for o in offsets)
    k = len(offsets[0])
    pts = _points_of(A, R, k)
    half = [p for p in pts if supnorm(p) <= R // 2]
    nrm = _norm_alpha(values, offsets, pts, alpha, modulus)
    if np.any(nrm == 0):
        raise ValueError("zero norm on A ∩ K_R: cannot normalise")
    inner = _norm_alpha(values, offsets, half, alpha, modulus)
    return ClusterField(offsets, values / nrm[:, None], nrm, nrm - inner, tuple(pts))
