"""Stationary regularly varying fields on finite windows of Z^k.

All simulators work on box grids and draw their noise on a padded box so the
law on the requested window is exactly stationary.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import mc
from .lattice_core import IndexSet, LatticeUnion, as_point, supnorm


def _kernel_items(kernel) -> tuple:
    if isinstance(kernel, dict):
        items = kernel.items()
    else:
        items = kernel
    out = tuple(sorted((as_point(p) if not np.isscalar(p) else (int(p),), float(w)) for p, w in items))
    return out


def kernel_from_list(values, start: int = 0) -> tuple:
    """1-d kernel a_start, a_{start+1}, ... as a point map."""
    return tuple(((start + i,), float(v)) for i, v in enumerate(values))


@dataclass(frozen=True)
class IIDFrechet:
    alpha: float = 1.0
    scale: float = 1.0
    k: int = 1

    def __post_init__(self):
        if self.alpha <= 0 or self.scale <= 0:
            raise ValueError("alpha and scale must be positive")


@dataclass(frozen=True)
class MovingMaxima:
    """X_t = max_s a_s Z_{t-s} with iid α-Fréchet Z."""

    kernel: tuple
    alpha: float = 1.0

    def __post_init__(self):
        items = _kernel_items(self.kernel)
        object.__setattr__(self, "kernel", items)
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if any(w < 0 for _, w in items):
            raise ValueError("kernel must be nonnegative")
        if sum(w ** self.alpha for _, w in items) <= 0:
            raise ValueError("kernel must have positive mass")

    @property
    def k(self) -> int:
        return len(self.kernel[0][0])

    def weights(self) -> dict:
        return dict(self.kernel)

    def mass(self) -> float:
        return float(sum(w ** self.alpha for _, w in self.kernel))


@dataclass(frozen=True)
class LinearHeavyTail:
    """X_t = Σ_s c_s Z_{t-s} with iid symmetric Pareto(α) noise."""

    coeffs: tuple
    alpha: float = 1.5

    def __post_init__(self):
        items = _kernel_items(self.coeffs)
        object.__setattr__(self, "coeffs", items)
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if sum(abs(c) ** self.alpha for _, c in items) <= 0:
            raise ValueError("coefficients must not all vanish")

    @property
    def k(self) -> int:
        return len(self.coeffs[0][0])

    def mass(self) -> float:
        return float(sum(abs(c) ** self.alpha for _, c in self.coeffs))


# ---------------------------------------------------------------------------
# spectral functions V for max-stable fields


class VSampler(Protocol):
    envelope: float | None

    def sample(self, rng: np.random.Generator, n: int, points: np.ndarray) -> np.ndarray: ...

    def mean_v0(self) -> float | None: ...


@dataclass
class ConstantV:
    """V_t ≡ c: a single common factor (complete dependence)."""

    c: float = 1.0

    @property
    def envelope(self):
        return self.c

    def sample(self, rng, n, points):
        return np.full((n, len(points)), self.c)

    def mean_v0(self):
        return self.c

    def describe(self):
        return {"kind": "constant", "c": self.c}


@dataclass
class ShiftedKernelV:
    """Mixed moving maxima: V_t = |W| f_J(t - S), S uniform on a padded box W.

    ``kernels`` is a list of point maps, chosen with ``probs``. The box is
    fixed through ``configure`` from the analysis window; until then the
    sampler treats every call as a fresh window and pads around it.
    """

    kernels: list
    probs: list | None = None
    _box: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        self.kernels = [_kernel_items(kk) for kk in self.kernels]
        if self.probs is None:
            self.probs = [1.0 / len(self.kernels)] * len(self.kernels)
        p = np.asarray(self.probs, float)
        if len(p) != len(self.kernels) or np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
            raise ValueError("probs must be a distribution over kernels")
        for kk in self.kernels:
            if any(w < 0 for _, w in kk):
                raise ValueError("kernels must be nonnegative")
        self.k = len(self.kernels[0][0][0])

    def _support_box(self):
        pts = np.array([p for kk in self.kernels for p, _ in kk])
        return pts.min(axis=0), pts.max(axis=0)

    def box_for(self, points: np.ndarray):
        smin, smax = self._support_box()
        lo = points.min(axis=0) - smax
        hi = points.max(axis=0) - smin
        return lo, hi

    @property
    def envelope(self) -> float | None:
        return None  # depends on the window; see envelope_for

    def envelope_for(self, points: np.ndarray) -> float:
        lo, hi = self.box_for(points)
        size = float(np.prod(hi - lo + 1))
        return size * max(w for kk in self.kernels for _, w in kk)

    def mean_v0(self) -> float:
        return float(sum(pj * sum(w for _, w in kk) for pj, kk in zip(self.probs, self.kernels)))

    def sample(self, rng, n, points):
        points = np.asarray(points, dtype=np.int64).reshape(-1, self.k)
        lo, hi = self.box_for(points)
        size = float(np.prod(hi - lo + 1))
        J = rng.choice(len(self.kernels), size=n, p=self.probs)
        S = rng.integers(lo, hi + 1, size=(n, self.k))
        out = np.zeros((n, len(points)))
        for j, kk in enumerate(self.kernels):
            rows = np.flatnonzero(J == j)
            if rows.size == 0:
                continue
            table = dict(kk)
            diff = points[None, :, :] - S[rows, None, :]
            vals = np.zeros((rows.size, len(points)))
            for p, w in table.items():
                hit = np.all(diff == np.array(p), axis=2)
                vals[hit] = w
            out[rows] = vals
        return size * out

    def describe(self):
        return {"kind": "shifted_kernel", "kernels": [[[list(p), w] for p, w in kk] for kk in self.kernels],
                "probs": list(self.probs)}


@dataclass
class DeHaanMaxStable:
    """X_t = max_i U_i V_{i,t}, U_i = 1/Γ_i, with Γ the arrivals of a unit Poisson process.

    The series is cut once U_i times the envelope of V drops to rel_tol times
    the current window minimum. For rel_tol <= 1 later points can no longer
    change any value, so the cut is exact whenever the envelope is a true bound.
    """

    v_sampler: object
    envelope: float | None = None
    rel_tol: float = 1.0
    batch: int = 32
    max_points: int = 1_000_000

    @property
    def k(self) -> int:
        return getattr(self.v_sampler, "k", 1)

    def envelope_for(self, points) -> float:
        if self.envelope is not None:
            return float(self.envelope)
        if hasattr(self.v_sampler, "envelope_for"):
            return float(self.v_sampler.envelope_for(points))
        env = getattr(self.v_sampler, "envelope", None)
        if env is None:
            raise ValueError("truncation bound unattainable: configure an envelope constant sup_t V_t")
        return float(env)

    def mean_v0(self, budget: int = 200_000, seed: int = 0) -> float:
        m = self.v_sampler.mean_v0() if hasattr(self.v_sampler, "mean_v0") else None
        if m is not None:
            return float(m)
        g = np.random.default_rng(seed)
        zero = np.zeros((1, self.k), dtype=np.int64)
        return float(self.v_sampler.sample(g, budget, zero).mean())


FieldModel = IIDFrechet | MovingMaxima | DeHaanMaxStable | LinearHeavyTail


def model_dim(model) -> int:
    return model.k


def describe_model(model) -> dict:
    if isinstance(model, IIDFrechet):
        return {"kind": "iid_frechet", "alpha": model.alpha, "scale": model.scale, "k": model.k}
    if isinstance(model, MovingMaxima):
        return {"kind": "moving_maxima", "alpha": model.alpha, "kernel": [[list(p), w] for p, w in model.kernel]}
    if isinstance(model, LinearHeavyTail):
        return {"kind": "linear", "alpha": model.alpha, "coeffs": [[list(p), c] for p, c in model.coeffs]}
    if isinstance(model, DeHaanMaxStable):
        v = model.v_sampler.describe() if hasattr(model.v_sampler, "describe") else {"kind": "custom"}
        return {"kind": "de_haan", "v": v, "envelope": model.envelope, "rel_tol": model.rel_tol}
    raise TypeError(f"unknown model {model!r}")


# ---------------------------------------------------------------------------
# simulation on boxes


def _frechet(rng, shape, alpha):
    return rng.standard_exponential(size=shape) ** (-1.0 / alpha)


def _shift_slices(offset, shape):
    return tuple(slice(o, o + s) for o, s in zip(offset, shape))


def simulate_box(model, shape, n: int, rng: np.random.Generator) -> np.ndarray:
    """n independent realizations on the box {0..shape_i-1}; returns (n, *shape)."""
    shape = tuple(int(s) for s in shape)
    k = len(shape)
    if isinstance(model, IIDFrechet):
        return model.scale * _frechet(rng, (n,) + shape, model.alpha)
    if isinstance(model, (MovingMaxima, LinearHeavyTail)):
        items = model.kernel if isinstance(model, MovingMaxima) else model.coeffs
        sup = np.array([p for p, _ in items])
        if sup.shape[1] != k:
            raise ValueError("kernel dimension does not match the window")
        smin, smax = sup.min(axis=0), sup.max(axis=0)
        zshape = tuple(s + int(b - a) for s, a, b in zip(shape, smin, smax))
        if isinstance(model, MovingMaxima):
            Z = _frechet(rng, (n,) + zshape, model.alpha)
            X = np.zeros((n,) + shape)
            for p, w in items:
                if w == 0:
                    continue
                # X_t uses Z_{t-p}; Z index of t-p is t - p + smax
                off = tuple(int(m - q) for q, m in zip(p, smax))
                np.maximum(X, w * Z[(slice(None),) + _shift_slices(off, shape)], out=X)
            return X
        mag = rng.random(size=(n,) + zshape) ** (-1.0 / model.alpha)
        sign = np.where(rng.random(size=(n,) + zshape) < 0.5, -1.0, 1.0)
        Z = sign * mag
        X = np.zeros((n,) + shape)
        for p, c in items:
            off = tuple(int(m - q) for q, m in zip(p, smax))
            X += c * Z[(slice(None),) + _shift_slices(off, shape)]
        return X
    if isinstance(model, DeHaanMaxStable):
        pts = np.array(np.meshgrid(*[np.arange(s) for s in shape], indexing="ij")).reshape(k, -1).T
        vals = simulate_points(model, pts, n, rng)
        return vals.reshape((n,) + shape)
    raise TypeError(f"unsupported model {model!r}")


def simulate_points(model: DeHaanMaxStable, points: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """de Haan series on an arbitrary finite point set; returns (n, len(points))."""
    points = np.asarray(points, dtype=np.int64)
    env = model.envelope_for(points)
    m = len(points)
    X = np.zeros((n, m))
    gam = np.zeros(n)
    active = np.arange(n)
    used = 0
    B = model.batch
    while active.size:
        if used > model.max_points:
            raise RuntimeError("de Haan series did not terminate within max_points")
        na = active.size
        G = gam[active, None] + np.cumsum(rng.standard_exponential(size=(na, B)), axis=1)
        V = model.v_sampler.sample(rng, na * B, points).reshape(na, B, m)
        contrib = (1.0 / G)[:, :, None] * V
        X[active] = np.maximum(X[active], contrib.max(axis=1))
        gam[active] = G[:, -1]
        used += B
        done = env / gam[active] <= model.rel_tol * X[active].min(axis=1)
        active = active[~done]
    return X


@dataclass
class FieldRealization:
    window: IndexSet
    values: np.ndarray  # aligned with window.points
    model: dict
    seed: int | None = None

    def value(self, t) -> float:
        i = self.window.points.index(as_point(t))
        return float(self.values[i])

    def as_dict(self) -> dict:
        return {p: float(v) for p, v in zip(self.window.points, self.values)}

    def to_csv(self, path, sidecar=None):
        k = self.window.k
        with open(path, "w") as fh:
            fh.write(",".join([f"t_{i + 1}" for i in range(k)] + ["value"]) + "\n")
            for p, v in zip(self.window.points, self.values):
                fh.write(",".join(str(x) for x in p) + f",{v!r}\n")
        if sidecar is not None:
            with open(sidecar, "w") as fh:
                json.dump({"model": self.model, "seed": self.seed, "k": k, "n": len(self.window)}, fh,
                          indent=2, sort_keys=True)


def simulate(model, window: IndexSet, seed) -> FieldRealization:
    """One realization on a finite window; reproducible from the seed."""
    g = mc.rng(seed)
    arr = window.to_array()
    if len(arr) == 0:
        raise ValueError("window is empty")
    if isinstance(model, DeHaanMaxStable):
        vals = simulate_points(model, arr, 1, g)[0]
    else:
        lo = arr.min(axis=0)
        shape = tuple(int(x) for x in arr.max(axis=0) - lo + 1)
        box = simulate_box(model, shape, 1, g)[0]
        vals = box[tuple((arr - lo).T)]
    seed_val = int(seed) if isinstance(seed, (int, np.integer)) else None
    return FieldRealization(window, np.asarray(vals, float), describe_model(model), seed_val)


# ---------------------------------------------------------------------------
# analytic facts


def marginal_tail(model):
    """Function u -> P(|X_0| > u).

    Exact for the max-type models; for LinearHeavyTail the Breiman-type
    equivalent Σ|c_s|^α P(|Z| > u) is returned (exact only asymptotically).
    """
    if isinstance(model, IIDFrechet):
        a, s = model.alpha, model.scale
        return lambda u: -np.expm1(-(np.asarray(u, float) / s) ** (-a))
    if isinstance(model, MovingMaxima):
        c, a = model.mass(), model.alpha
        return lambda u: -np.expm1(-c * np.asarray(u, float) ** (-a))
    if isinstance(model, DeHaanMaxStable):
        ev = model.mean_v0()
        return lambda u: -np.expm1(-ev / np.asarray(u, float))
    if isinstance(model, LinearHeavyTail):
        c, a = model.mass(), model.alpha
        return lambda u: np.minimum(1.0, c * np.maximum(np.asarray(u, float), 1.0) ** (-a))
    raise TypeError(f"no analytic marginal for {model!r}")


def model_alpha(model) -> float:
    if isinstance(model, DeHaanMaxStable):
        return 1.0
    return float(model.alpha)


class ThetaSampler:
    """Exact spectral tail field on arbitrary offsets."""

    def __init__(self, kind: str, weights: dict | None = None, alpha: float = 1.0, signed: bool = False, k: int = 1):
        self.kind = kind
        self.alpha = alpha
        self.k = k
        self.signed = signed
        if weights is not None:
            self.weights = {as_point(p): float(w) for p, w in weights.items() if w != 0}
            self.support = sorted(self.weights)
            mass = np.array([abs(self.weights[p]) ** alpha for p in self.support])
            self.probs = mass / mass.sum()
        self.envelope = None

    def sample(self, rng, n: int, offsets) -> np.ndarray:
        offsets = [as_point(o) for o in offsets]
        out = np.zeros((n, len(offsets)))
        if self.kind == "iid":
            for i, o in enumerate(offsets):
                if not any(o):
                    out[:, i] = 1.0
            return out
        J = rng.choice(len(self.support), size=n, p=self.probs)
        sign = np.where(rng.random(n) < 0.5, -1.0, 1.0) if self.signed else np.ones(n)
        for ji, j in enumerate(self.support):
            rows = J == ji
            if not rows.any():
                continue
            aj = abs(self.weights[j])
            for i, o in enumerate(offsets):
                w = self.weights.get(tuple(a + b for a, b in zip(j, o)))
                if w is not None:
                    out[rows, i] = w / aj
            if self.signed:
                out[rows] *= np.sign(self.weights[j])
        return out * sign[:, None]

    def max_reach(self) -> int:
        if self.kind == "iid":
            return 0
        pts = np.array(self.support)
        return int((pts.max(axis=0) - pts.min(axis=0)).max())


def spectral_tail_oracle(model) -> ThetaSampler:
    """Analytic Θ for iid Fréchet, moving maxima and linear heavy-tailed fields."""
    if isinstance(model, IIDFrechet):
        return ThetaSampler("iid", alpha=model.alpha, k=model.k)
    if isinstance(model, MovingMaxima):
        return ThetaSampler("mm", dict(model.kernel), model.alpha, k=model.k)
    if isinstance(model, LinearHeavyTail):
        return ThetaSampler("linear", dict(model.coeffs), model.alpha, signed=True, k=model.k)
    raise TypeError(f"no spectral tail oracle for {type(model).__name__}")


def maxstable_tail_oracle(v_sampler, points, levels, budget: int, rng) -> tuple:
    """P(Y_{t_1} < y_1, ..., Y_{t_n} < y_n) for the tail field of a max-stable field.

    Returns (estimate, standard error). Uses only draws of V, never the field.
    """
    if budget < 100:
        raise ValueError("MC budget must be at least 100")
    points = [as_point(p) for p in points]
    levels = np.asarray(levels, float)
    if len(points) != len(levels):
        raise ValueError("one level per point")
    if np.any(levels <= 0):
        raise ValueError("levels must be positive")
    if not points:
        return 1.0, 0.0
    k = len(points[0])
    pts = np.array([(0,) * k] + points, dtype=np.int64)
    g = mc.rng(rng) if not isinstance(rng, np.random.Generator) else rng
    V = v_sampler.sample(g, budget, pts)
    v0 = V[:, 0]
    M = (V[:, 1:] / levels).max(axis=1)
    num = np.maximum(M, v0) - M
    ev0 = v_sampler.mean_v0() if hasattr(v_sampler, "mean_v0") else None
    if ev0 is None:
        ev0 = v0.mean()
        # ratio estimator with delta-method SE
        r = num.mean() / ev0
        resid = num - r * v0
        se = resid.std(ddof=1) / np.sqrt(budget) / ev0
        return float(r), float(se)
    return float(num.mean() / ev0), float(num.std(ddof=1) / np.sqrt(budget) / ev0)


def br_condition_diagnostic(v_sampler, H: LatticeUnion, E, radii, budget: int, rng, order, eps: float = 1e-3) -> dict:
    """Decay of E[V_t 1(max_E V != 0)] and P(V_t > eps | max_E V != 0) along t in (H)^+."""
    g = mc.rng(rng) if not isinstance(rng, np.random.Generator) else rng
    E = [as_point(e) for e in E]
    k = len(E[0])
    Hp = H.positive(order)
    rows = []
    for r in radii:
        shell = [t for t in Hp.window(r) if supnorm(t) == r]
        if not shell:
            rows.append({"radius": int(r), "points": 0, "mean": None, "prob": None})
            continue
        pts = np.array(E + shell, dtype=np.int64).reshape(-1, k)
        V = v_sampler.sample(g, budget, pts)
        on = V[:, :len(E)].max(axis=1) != 0
        vt = V[:, len(E):]
        mean = float((vt * on[:, None]).mean())
        prob = float((vt[on] > eps).mean()) if on.any() else 0.0
        rows.append({"radius": int(r), "points": len(shell), "mean": mean, "prob": prob})
    vals = [row["mean"] for row in rows if row["mean"] is not None]
    nonincreasing = all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))
    return {"curve": rows, "nonincreasing": nonincreasing, "final": vals[-1] if vals else None}
