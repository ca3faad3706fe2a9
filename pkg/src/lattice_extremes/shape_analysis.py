"""Local shapes of an index set: census, stabilizers, partitions and Ξ-structures."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .lattice_core import (
    IndexSet,
    InvariantOrder,
    LatticeUnion,
    Sublattice,
    as_point,
    in_cube,
    sub,
    supnorm,
)


class NotTranslationStable(ValueError):
    """Candidate shifts of a shape are not closed inside the probe window."""


# ---------------------------------------------------------------------------
# census


@dataclass
class CensusShape:
    points: tuple  # canonical sorted offsets
    count: int
    weight: Fraction

    @property
    def key(self) -> tuple:
        return self.points


@dataclass
class ShapeCensus:
    p: int
    total: int
    shapes: list
    k: int
    full_window: bool = False
    order: InvariantOrder | None = None
    assignment: np.ndarray | None = field(default=None, repr=False)  # shape index per point of Λ

    def weights(self) -> list:
        return [s.weight for s in self.shapes]

    def lookup(self, key) -> CensusShape | None:
        key = tuple(as_point(q) for q in key)
        for s in self.shapes:
            if s.points == key:
                return s
        return None

    def weight_of(self, key) -> Fraction:
        s = self.lookup(key)
        return Fraction(0) if s is None else s.weight

    def to_json(self) -> dict:
        return {
            "p": self.p,
            "total": self.total,
            "full_window": self.full_window,
            "shapes": [
                {"key": [list(q) for q in s.points], "count": s.count, "weight": float(s.weight)}
                for s in self.shapes
            ],
        }


def _window_offsets(p: int, k: int, order: InvariantOrder | None) -> np.ndarray:
    pts = itertools.product(range(-p, p + 1), repeat=k)
    if order is not None:
        pts = (q for q in pts if order.is_positive(q))
    return np.array(sorted(pts), dtype=np.int64).reshape(-1, k)


def _membership_matrix(lam: IndexSet, offsets: np.ndarray, p: int, chunk: int = 4096):
    """Yield (start, bool matrix) with entry [i, j] = (t_i + offsets_j ∈ Λ)."""
    arr = lam.to_array()
    n, k = arr.shape
    lo = arr.min(axis=0) - p
    ext = arr.max(axis=0) - arr.min(axis=0) + 2 * p + 1
    strides = np.ones(k, dtype=np.int64)
    for i in range(k - 2, -1, -1):
        strides[i] = strides[i + 1] * ext[i + 1]
    total_cells = int(np.prod([int(e) for e in ext]))
    if total_cells > 2**62:
        raise OverflowError("bounding box too large to encode")
    codes = ((arr - lo) * strides).sum(axis=1)
    shift = (offsets * strides).sum(axis=1)
    dense = total_cells <= 50_000_000
    if dense:
        grid = np.zeros(total_cells, dtype=bool)
        grid[codes] = True
    else:
        sorted_codes = np.sort(codes)
    for start in range(0, n, chunk):
        c = codes[start:start + chunk]
        q = c[:, None] + shift[None, :]
        if dense:
            yield start, grid[q]
        else:
            idx = np.searchsorted(sorted_codes, q)
            idx = np.minimum(idx, len(sorted_codes) - 1)
            yield start, sorted_codes[idx] == q


def _census(lam: IndexSet, p: int, order: InvariantOrder | None, full: bool) -> ShapeCensus:
    if len(lam) < 1:
        raise ValueError("index set must be nonempty")
    if p < 0:
        raise ValueError("p must be nonnegative")
    k = lam.k
    offsets = _window_offsets(p, k, None if full else order)
    n = len(lam)
    m = len(offsets)
    if m == 0:
        packed = np.zeros((n, 1), dtype=np.uint8)
    else:
        packed = np.empty((n, (m + 7) // 8), dtype=np.uint8)
        for start, block in _membership_matrix(lam, offsets, p):
            packed[start:start + len(block)] = np.packbits(block, axis=1)
    uniq, inverse, counts = np.unique(packed, axis=0, return_inverse=True, return_counts=True)
    inverse = np.asarray(inverse).reshape(-1)
    keys = []
    for row in uniq:
        mask = np.unpackbits(row)[:m].astype(bool) if m else np.zeros(0, bool)
        keys.append(tuple(tuple(int(x) for x in q) for q in offsets[mask]))
    order_idx = sorted(range(len(keys)), key=lambda i: (-int(counts[i]), keys[i]))
    remap = np.empty(len(keys), dtype=np.int64)
    shapes = []
    for new, old in enumerate(order_idx):
        remap[old] = new
        c = int(counts[old])
        shapes.append(CensusShape(keys[old], c, Fraction(c, n)))
    return ShapeCensus(p, n, shapes, k, full, order, remap[inverse])


def census(lam: IndexSet, p: int, order: InvariantOrder) -> ShapeCensus:
    """Group points of Λ by their window shape ((Λ)_{-t} ∩ K_p)^+."""
    return _census(lam, p, order, full=False)


def census_xi(lam: IndexSet, p: int) -> ShapeCensus:
    """Group points of Λ by the full window (Λ)_{-t} ∩ K_p (always contains 0)."""
    return _census(lam, p, None, full=True)


def truncate_key(key, p: int) -> tuple:
    return tuple(q for q in key if in_cube(q, p))


def refinement_residual(coarse: ShapeCensus, fine: ShapeCensus) -> Fraction:
    """Max |λ_{j,p} − Σ λ_{i,p'}| over coarse shapes, aggregating fine shapes truncated to K_p."""
    if fine.p < coarse.p:
        raise ValueError("fine census must use the larger radius")
    agg = {}
    for s in fine.shapes:
        t = truncate_key(s.points, coarse.p)
        agg[t] = agg.get(t, 0) + s.count
    worst = Fraction(0)
    keys = set(agg) | {s.points for s in coarse.shapes}
    for key in keys:
        a = Fraction(agg.get(key, 0), fine.total)
        b = coarse.weight_of(key)
        worst = max(worst, abs(a - b))
    return worst


# ---------------------------------------------------------------------------
# stabilizers and partitions


def _grid(D: LatticeUnion, c: int) -> np.ndarray:
    g = np.zeros((2 * c + 1,) * D.k, dtype=bool)
    pts = D.window(c)
    if pts:
        idx = np.array(pts, dtype=np.int64) + c
        g[tuple(idx.T)] = True
    return g


def _positive_mask(c: int, k: int, order: InvariantOrder) -> np.ndarray:
    m = np.zeros((2 * c + 1,) * k, dtype=bool)
    for q in itertools.product(range(-c, c + 1), repeat=k):
        if order.is_positive(q):
            m[tuple(x + c for x in q)] = True
    return m


def lattice_from_points(points, k: int) -> Sublattice:
    L = Sublattice.zero(k)
    for z in points:
        if not L.contains(z):
            L = Sublattice.from_generators(L.basis + (z,), k)
    return L


@dataclass
class Stabilizer:
    G: tuple  # certified members of G inside K_R, ordered
    L: Sublattice
    probe_radius: int


def stabilizer(D: LatticeUnion, order: InvariantOrder, probe_radius: int) -> Stabilizer:
    """G = {z ∈ D ∪ {0} : ((D)_{-z})^+ = D}, certified on K_R, and L = G ∪ −G."""
    R = int(probe_radius)
    k = D.k
    zero = tuple([0] * k)
    inner = D.window(R)
    if any(not order.is_positive(q) for q in inner):
        raise ValueError("shape must lie in the upper orthant")
    big = _grid(D, 2 * R)
    pos = _positive_mask(R, k, order)
    centre = tuple(slice(R, 3 * R + 1) for _ in range(k))
    target = big[centre] & pos
    G = [zero]
    for z in order.sorted(inner):
        sl = tuple(slice(R + zi, 3 * R + 1 + zi) for zi in z)
        if np.array_equal(big[sl] & pos, target):
            G.append(z)
    L = lattice_from_points(G[1:], k)
    Gset = set(G)
    for q in L.points_in_cube(zero, R):
        if order.is_positive(q) and q not in Gset:
            raise NotTranslationStable(
                f"not translation-stable at this radius: lattice point {q} is not a stabilizing shift"
            )
    return Stabilizer(tuple(G), L, R)


@dataclass
class Partition:
    L: Sublattice
    components: list  # of (Sublattice L_{l_i}, offset z_{l_i})
    shapes: list  # D_{l_i} = ((D)_{-z_{l_i}})^+
    probe_radius: int
    distinct_shapes: int = 0
    bound_violation: tuple | None = None

    @property
    def b(self) -> int:
        return len(self.components)


def shifted_shape(D: LatticeUnion, z, order: InvariantOrder) -> LatticeUnion:
    return D.translate(z).positive(order)


def _coset_positive_points(L: Sublattice, z, R: int, order) -> set:
    return {q for q in L.points_in_cube(z, R) if order.is_positive(q)}


def partition_shape(D: LatticeUnion, stab: Stabilizer, order: InvariantOrder, probe_radius: int | None = None,
                    weight=None) -> Partition:
    """Split D into L^+ and translated lattice pieces ((L_{l_i})_{z_{l_i}})^+."""
    R = stab.probe_radius if probe_radius is None else int(probe_radius)
    k = D.k
    zero = tuple([0] * k)
    target = set(D.window(R))
    # a caller-supplied G need not lie inside D; only its trace on D is covered
    covered = _coset_positive_points(stab.L, zero, R, order) & target
    comps, shapes, keys = [], [], []
    for z in sorted(target, key=lambda q: (supnorm(q), order.key(q))):
        if z in covered:
            continue
        Dz = shifted_shape(D, z, order)
        Lz = stabilizer(Dz, order, R).L
        if Lz.rank != stab.L.rank:
            raise ValueError(f"component lattice at {z} has rank {Lz.rank}, expected {stab.L.rank}")
        piece = _coset_positive_points(Lz, z, R, order)
        if not piece <= target:
            raise ValueError(f"component at {z} leaves the shape inside K_{R}")
        if piece & covered:
            raise ValueError(f"component at {z} overlaps an earlier component")
        covered |= piece
        comps.append((Lz, z))
        shapes.append(Dz)
        keys.append(frozenset(Dz.window(R)))
    if covered != target:
        raise ValueError(f"partition fails to cover the shape within K_{R}")
    part = Partition(stab.L, comps, shapes, R, len(set(keys)))
    if weight is not None and weight > 0:
        bound = int(1 / Fraction(weight)) - 1
        if part.distinct_shapes > bound:
            part.bound_violation = (part.distinct_shapes, bound)
    return part


def partition_union(part: Partition, order: InvariantOrder) -> LatticeUnion:
    k = part.L.k
    zero = tuple([0] * k)
    comps = ((part.L, zero),) + tuple(part.components)
    return LatticeUnion(k, comps, frozenset()).positive(order)


def check_partition(D: LatticeUnion, part: Partition, order: InvariantOrder, max_radius: int) -> bool:
    """Coverage and pairwise disjointness of the partition on every K_c, c <= max_radius."""
    zero = tuple([0] * D.k)
    comps = [(part.L, zero)] + list(part.components)
    full = set(D.window(max_radius))
    pieces = [_coset_positive_points(L, z, max_radius, order) for L, z in comps]
    pieces[0] &= full
    union = set()
    for piece in pieces:
        if union & piece:
            return False
        union |= piece
    # coverage on the largest window implies coverage on every smaller cube
    return union == full


def tip_check(part: Partition, stab: Stabilizer, i: int, order: InvariantOrder) -> bool:
    """TIP for component i (i = 0 is L^+ itself); certified within the probe window."""
    R = part.probe_radius
    k = part.L.k
    zero = tuple([0] * k)
    if i == 0:
        L, z = part.L, zero
    else:
        L, z = part.components[i - 1]
    xs = _coset_positive_points(L, z, R, order)
    ys = [g for g in stab.G if g != zero]
    if not xs or not ys:
        return False
    xmin = min(order.key(x) for x in xs)
    ymax = max(order.key(y) for y in ys)
    return xmin < ymax


def periodic_form(points, L: Sublattice, order: InvariantOrder, positive: bool = True) -> LatticeUnion:
    U = LatticeUnion.periodic(L, points)
    return U.positive(order) if positive else U


def hat_D(D: LatticeUnion, part: Partition, stab: Stabilizer, order: InvariantOrder) -> tuple:
    """Union of D_{l_h} over TIP components. Returns (LatticeUnion, TIP flags).

    A bounded shape has no TIP component; it is returned unchanged.
    """
    R = part.probe_radius
    flags = [tip_check(part, stab, i, order) for i in range(part.b + 1)]
    if not any(flags):
        return D, flags
    pts = set()
    for i, f in enumerate(flags):
        if not f:
            continue
        Dl = D if i == 0 else part.shapes[i - 1]
        pts.update(Dl.window(R))
    U = periodic_form(pts, stab.L, order)
    if set(U.window(R)) != pts:
        raise ValueError("union of TIP shapes is not periodic within the probe window")
    return U, flags


def symmetric_invariance(U: LatticeUnion, L: Sublattice, radius: int) -> bool:
    """Is U ∪ {0} ∪ −U invariant under translation by every basis vector of L (checked on K_radius)?"""
    k = U.k
    zero = tuple([0] * k)
    reach = max((supnorm(b) for b in L.basis), default=0)
    c = radius + reach
    base = set(U.window(c))
    H = base | {zero} | {tuple(-x for x in q) for q in base}
    for g in L.basis:
        for q in itertools.product(range(-radius, radius + 1), repeat=k):
            if (q in H) != (tuple(a + b for a, b in zip(q, g)) in H):
                return False
    return True


# ---------------------------------------------------------------------------
# Ξ-structures


@dataclass
class XiStructure:
    L: Sublattice
    E: tuple  # ordered, 0 first
    xi_star: LatticeUnion
    hat_D: LatticeUnion | None = None
    gamma_star: Fraction | None = None
    tip: list | None = None

    @property
    def n(self) -> int:
        return len(self.E)

    def key(self) -> tuple:
        return (self.L.basis, tuple(sorted(self.L.reduce(e) for e in self.E)))


def xi_structure(D: LatticeUnion, stab: Stabilizer, part: Partition, order: InvariantOrder) -> XiStructure:
    R = part.probe_radius
    k = D.k
    zero = tuple([0] * k)
    L = stab.L
    cosets = {L.reduce(zero)}
    for Li, z in part.components:
        if Li.rank != L.rank or not Li.contains_lattice(L):
            raise ValueError("component lattice must contain L with the same rank")
        for r in L.coset_reps_in(Li):
            cosets.add(L.reduce(tuple(a + b for a, b in zip(z, r))))
    best = {}
    for x in D.window(R):
        c = L.reduce(x)
        if c not in cosets:
            raise ValueError(f"point {x} lies outside the partition cosets")
        cand = (supnorm(x), order.key(x), x)
        if c not in best or cand < best[c]:
            best[c] = cand
    E = [zero]
    for c in cosets:
        if c == L.reduce(zero):
            continue
        if c not in best:
            raise ValueError("coset decomposition fails within the probe window")
        E.append(best[c][2])
    E = [zero] + order.sorted(E[1:])
    xi = LatticeUnion.periodic(L, E)
    if set(xi.positive(order).window(R)) != set(D.window(R)):
        raise ValueError("(Ξ*)^+ does not reproduce the shape")
    return XiStructure(L, tuple(E), xi)


def xi_window_key(xi: LatticeUnion, p: int) -> tuple:
    return tuple(xi.window(p))


# ---------------------------------------------------------------------------
# shapes inferred from finite windows


def infer_shape(points, p: int, order: InvariantOrder, k: int | None = None) -> LatticeUnion:
    """Exact shape consistent with a window S = D ∩ K_p.

    Shifts z with |z| <= p/2 are accepted when ((S)_{-z})^+ and S agree on
    K_{p-|z|}; if the lattice they generate reproduces S exactly on K_p the
    periodic extension is returned, otherwise S itself as a bounded shape.
    """
    S = {as_point(q) for q in points}
    if k is None:
        if not S:
            raise ValueError("k required for an empty shape")
        k = len(next(iter(S)))
    zero = tuple([0] * k)
    if not S:
        return LatticeUnion(k, (), frozenset(), zero, order)
    G = []
    for z in sorted(S, key=lambda q: (supnorm(q), order.key(q))):
        nz = supnorm(z)
        if 2 * nz > p:
            break
        q = p - nz
        lhs = {sub(u, z) for u in S}
        lhs = {u for u in lhs if in_cube(u, q) and order.is_positive(u)}
        rhs = {u for u in S if in_cube(u, q)}
        if lhs == rhs:
            G.append(z)
    L = lattice_from_points(G, k)
    if L.rank > 0:
        U = LatticeUnion.periodic(L, S).positive(order)
        if set(U.window(p)) == S:
            return U
    # no periodic structure certified at this radius: keep the window as a bounded shape
    return LatticeUnion(k, (), frozenset(S), zero, order)


@dataclass
class ShapeStructure:
    key: tuple
    weight: Fraction
    D: LatticeUnion | None
    stabilizer: Stabilizer | None = None
    partition: Partition | None = None
    xi: XiStructure | None = None
    error: str | None = None


@dataclass
class StructureReport:
    p: int
    probe_radius: int
    census: ShapeCensus
    census_xi: ShapeCensus
    structures: list
    classes: list  # list of lists of indices into structures (translation classes)
    representatives: list  # index per class (I*)

    def i_star(self) -> list:
        return [self.structures[i] for i in self.representatives]

    def xi_identity(self) -> Fraction:
        return sum((s.xi.gamma_star * s.xi.n for s in self.i_star()), Fraction(0))


def _translates(xi: XiStructure) -> set:
    out = set()
    for s in xi.E:
        reps = tuple(sorted(xi.L.reduce(sub(e, s)) for e in xi.E))
        out.add((xi.L.basis, reps))
    return out


def analyze_structures(lam: IndexSet, p: int, order: InvariantOrder, probe_radius: int | None = None,
                       min_count: int = 1) -> StructureReport:
    """Infer D_j, G_j, partitions and Ξ-structures for every census shape, then pick I*."""
    R = 4 * p if probe_radius is None else int(probe_radius)
    cen = census(lam, p, order)
    cxi = census_xi(lam, p)
    structs = []
    for sh in cen.shapes:
        if sh.count < min_count:
            continue
        D = infer_shape(sh.points, p, order, k=lam.k)
        st = ShapeStructure(sh.points, sh.weight, D)
        try:
            st.stabilizer = stabilizer(D, order, R)
            st.partition = partition_shape(D, st.stabilizer, order, R, weight=sh.weight)
            st.xi = xi_structure(D, st.stabilizer, st.partition, order)
            hd, flags = hat_D(D, st.partition, st.stabilizer, order)
            st.xi.hat_D, st.xi.tip = hd, flags
            st.xi.gamma_star = cxi.weight_of(xi_window_key(st.xi.xi_star, p))
        except ValueError as exc:
            st.error = str(exc)
        structs.append(st)
    # translation classes of Ξ*
    ok = [i for i, s in enumerate(structs) if s.xi is not None]
    classes, seen = [], {}
    for i in ok:
        own = structs[i].xi.key()
        if own in seen:
            classes[seen[own]].append(i)
            continue
        cid = None
        for t in _translates(structs[i].xi):
            if t in seen:
                cid = seen[t]
                break
        if cid is None:
            cid = len(classes)
            classes.append([])
        classes[cid].append(i)
        seen[own] = cid
    reps = []
    for members in classes:
        # distinct centerings only; pick the most frequent (ties: smallest key)
        uniq = {}
        for i in members:
            uniq.setdefault(structs[i].xi.key(), i)
        best = min(uniq.values(), key=lambda i: (-structs[i].xi.gamma_star, structs[i].key))
        reps.append(best)
    return StructureReport(p, R, cen, cxi, structs, classes, reps)


def weight_identities(lam: IndexSet, ps, order: InvariantOrder, probe_radius: int | None = None) -> dict:
    """Exact finite-n weight identities across a sweep of census radii."""
    ps = sorted(set(int(x) for x in ps))
    if len(ps) < 2:
        raise ValueError("need at least two census radii")
    cens = {p: census(lam, p, order) for p in ps}
    cxis = {p: census_xi(lam, p) for p in ps}
    out = {"n": len(lam), "k": lam.k, "p": ps, "sum_lambda": {}, "refinement": {}, "refinement_xi": {},
           "xi_identity": {}}
    worst = Fraction(0)
    for p in ps:
        s = sum(cens[p].weights(), Fraction(0))
        out["sum_lambda"][p] = str(s)
        worst = max(worst, abs(s - 1))
    for a, b in zip(ps, ps[1:]):
        r1 = refinement_residual(cens[a], cens[b])
        r2 = refinement_residual(cxis[a], cxis[b])
        out["refinement"][f"{a}->{b}"] = str(r1)
        out["refinement_xi"][f"{a}->{b}"] = str(r2)
        worst = max(worst, r1, r2)
    for p in ps:
        rep = analyze_structures(lam, p, order, probe_radius)
        val = rep.xi_identity()
        bound = Fraction(2 * (2 * p + 1) ** lam.k * len(rep.census.shapes), len(lam))
        out["xi_identity"][p] = {"value": str(val), "residual": float(abs(val - 1)), "bound": float(bound),
                                 "within_bound": abs(val - 1) <= bound}
    out["max_exact_violation"] = str(worst)
    return out


def s_sets(lam: IndexSet, xi_star: LatticeUnion, l: int) -> IndexSet:
    """S_{i,l} = {t ∈ Λ : (Λ)_{-t} ∩ K_l = Ξ*_i ∩ K_l}."""
    cx = census_xi(lam, l)
    key = xi_window_key(xi_star, l)
    idx = None
    for j, s in enumerate(cx.shapes):
        if s.points == key:
            idx = j
            break
    if idx is None:
        return IndexSet([], k=lam.k)
    pts = [lam.points[i] for i in np.flatnonzero(cx.assignment == idx)]
    return IndexSet(pts, k=lam.k)


def s_set_overlaps(lam: IndexSet, structures: list, l: int) -> int:
    """Count collisions between (D_j ∩ K_{2l})_t, t ∈ S_{j,4l}, across distinct structures.

    ``structures`` are ShapeStructure objects of distinct translation classes.
    """
    owners = {}
    clashes = 0
    for j, st in enumerate(structures):
        S = s_sets(lam, st.xi.xi_star, 4 * l)
        Dw = st.D.window(2 * l)
        for t in S:
            for d in Dw:
                q = tuple(a + b for a, b in zip(t, d))
                prev = owners.get(q)
                if prev is not None and prev != j:
                    clashes += 1
                owners[q] = j
    return clashes
