"""Exact integer geometry on Z^k.

Points are plain tuples of Python ints. Sublattices are kept in row Hermite
normal form so that equality, membership and coset reduction are exact.
"""
from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

Point = tuple

# coordinates beyond this magnitude are treated as overflow
COORD_LIMIT = 2**62


def as_point(p) -> Point:
    return tuple(int(x) for x in p)


def _check_dim(k, *pts):
    for p in pts:
        if len(p) != k:
            raise ValueError(f"dimension mismatch: expected {k}, got {len(p)}")


def add(s: Point, t: Point) -> Point:
    return tuple(a + b for a, b in zip(s, t))


def sub(s: Point, t: Point) -> Point:
    return tuple(a - b for a, b in zip(s, t))


def neg(s: Point) -> Point:
    return tuple(-a for a in s)


def supnorm(p: Point) -> int:
    return max((abs(x) for x in p), default=0)


class InvariantOrder:
    """Lexicographic order on Z^k, optionally after permuting coordinates.

    ``perm`` lists coordinate indices from most to least significant, so the
    identity permutation gives plain lexicographic order.
    """

    def __init__(self, k: int, perm: Sequence[int] | None = None):
        if k < 1:
            raise ValueError("k must be >= 1")
        if perm is None:
            perm = tuple(range(k))
        perm = tuple(int(i) for i in perm)
        if sorted(perm) != list(range(k)):
            raise ValueError(f"not a permutation of 0..{k - 1}: {perm}")
        self.k = k
        self.perm = perm
        self._self_check()

    @classmethod
    def lex(cls, k: int) -> "InvariantOrder":
        return cls(k)

    @property
    def kind(self) -> str:
        return "lexicographic" if self.perm == tuple(range(self.k)) else "permuted-lexicographic"

    def key(self, p: Point) -> tuple:
        return tuple(p[i] for i in self.perm)

    def compare(self, s: Point, t: Point) -> int:
        _check_dim(self.k, s, t)
        a, b = self.key(s), self.key(t)
        return (a > b) - (a < b)

    def less(self, s: Point, t: Point) -> bool:
        return self.key(s) < self.key(t)

    def is_positive(self, p: Point) -> bool:
        for i in self.perm:
            if p[i] != 0:
                return p[i] > 0
        return False

    def sorted(self, pts: Iterable[Point]) -> list:
        return sorted(pts, key=self.key)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "perm": list(self.perm)}

    def __eq__(self, other):
        return isinstance(other, InvariantOrder) and self.perm == other.perm

    def __hash__(self):
        return hash(("order", self.perm))

    def __repr__(self):
        return f"InvariantOrder(k={self.k}, perm={self.perm})"

    def _self_check(self, trials: int = 200):
        # translation invariance on random triples; permuted lex passes by
        # construction but the check guards against future order kinds
        rng = random.Random(12345)
        for _ in range(trials):
            s = tuple(rng.randint(-50, 50) for _ in range(self.k))
            t = tuple(rng.randint(-50, 50) for _ in range(self.k))
            i = tuple(rng.randint(-50, 50) for _ in range(self.k))
            if self.compare(s, t) != self.compare(add(s, i), add(t, i)):
                raise ValueError("order is not translation invariant")


def compare(order: InvariantOrder, s: Point, t: Point) -> int:
    """-1 if s precedes t, 0 if equal, 1 otherwise."""
    return order.compare(as_point(s), as_point(t))


class IndexSet:
    """Finite subset of Z^k with a canonical (lexicographically sorted) form."""

    __slots__ = ("k", "points", "_set")

    def __init__(self, points: Iterable, k: int | None = None):
        pts = {as_point(p) for p in points}
        if k is None:
            if not pts:
                raise ValueError("dimension required for an empty IndexSet")
            k = len(next(iter(pts)))
        for p in pts:
            if len(p) != k:
                raise ValueError(f"point {p} does not have dimension {k}")
        self.k = int(k)
        self.points = tuple(sorted(pts))
        self._set = frozenset(pts)

    def __len__(self):
        return len(self.points)

    def __iter__(self) -> Iterator[Point]:
        return iter(self.points)

    def __contains__(self, p):
        return as_point(p) in self._set

    def __eq__(self, other):
        return isinstance(other, IndexSet) and self.k == other.k and self._set == other._set

    def __hash__(self):
        return hash((self.k, self.points))

    def __repr__(self):
        if len(self) <= 8:
            return f"IndexSet({list(self.points)})"
        return f"IndexSet(k={self.k}, n={len(self)})"

    @property
    def key(self) -> tuple:
        return self.points

    def as_set(self) -> frozenset:
        return self._set

    def to_array(self):
        import numpy as np

        if not self.points:
            return np.zeros((0, self.k), dtype=np.int64)
        return np.array(self.points, dtype=np.int64)


def hypercube(c: int, k: int) -> IndexSet:
    """K_c = [-c, c]^k as an IndexSet."""
    if c < 0:
        raise ValueError("c must be nonnegative")
    rng = range(-c, c + 1)
    return IndexSet(itertools.product(rng, repeat=k), k=k)


def in_cube(p: Point, c: int) -> bool:
    return all(-c <= x <= c for x in p)


# ---------------------------------------------------------------------------
# Hermite normal form


def _hnf_rows(gens: Iterable[Sequence[int]], k: int) -> tuple:
    rows = [list(map(int, g)) for g in gens]
    for r in rows:
        if len(r) != k:
            raise ValueError("generator dimension mismatch")
    rows = [r for r in rows if any(r)]
    piv_row = 0
    for col in range(k):
        if piv_row >= len(rows):
            break
        while True:
            nz = [i for i in range(piv_row, len(rows)) if rows[i][col] != 0]
            if not nz:
                break
            i0 = min(nz, key=lambda i: abs(rows[i][col]))
            rows[piv_row], rows[i0] = rows[i0], rows[piv_row]
            pr = rows[piv_row]
            clean = True
            for i in range(piv_row + 1, len(rows)):
                if rows[i][col]:
                    q = rows[i][col] // pr[col]
                    rows[i] = [a - q * b for a, b in zip(rows[i], pr)]
                    if rows[i][col]:
                        clean = False
            if clean:
                break
        if not nz:
            continue
        pr = rows[piv_row]
        if pr[col] < 0:
            pr = [-a for a in pr]
            rows[piv_row] = pr
        for i in range(piv_row):
            q = rows[i][col] // pr[col]
            if q:
                rows[i] = [a - q * b for a, b in zip(rows[i], pr)]
        piv_row += 1
        rows = rows[:piv_row] + [r for r in rows[piv_row:] if any(r)]
    out = tuple(tuple(r) for r in rows[:piv_row])
    for r in out:
        if any(abs(x) > COORD_LIMIT for x in r):
            raise OverflowError("HNF entries exceed the coordinate limit")
    return out


def _pivot(row) -> int:
    for j, x in enumerate(row):
        if x:
            return j
    raise ValueError("zero row")


@dataclass(frozen=True)
class Sublattice:
    """Integer row lattice in Z^k stored as its Hermite normal form."""

    k: int
    basis: tuple = ()

    @classmethod
    def from_generators(cls, gens: Iterable, k: int | None = None) -> "Sublattice":
        gens = [as_point(g) for g in gens]
        if k is None:
            if not gens:
                raise ValueError("k required for an empty generator list")
            k = len(gens[0])
        return cls(k, _hnf_rows(gens, k))

    @classmethod
    def zero(cls, k: int) -> "Sublattice":
        return cls(k, ())

    @classmethod
    def full(cls, k: int) -> "Sublattice":
        return cls(k, tuple(tuple(int(i == j) for j in range(k)) for i in range(k)))

    @property
    def rank(self) -> int:
        return len(self.basis)

    @property
    def pivots(self) -> tuple:
        return tuple(_pivot(r) for r in self.basis)

    def contains(self, v: Point) -> bool:
        v = list(v)
        for row, c in zip(self.basis, self.pivots):
            h = row[c]
            if v[c] % h:
                return False
            q = v[c] // h
            if q:
                v = [a - q * b for a, b in zip(v, row)]
        return not any(v)

    def reduce(self, v: Point) -> Point:
        """Canonical representative of the coset v + L."""
        v = list(v)
        for row, c in zip(self.basis, self.pivots):
            q = v[c] // row[c]
            if q:
                v = [a - q * b for a, b in zip(v, row)]
        return tuple(v)

    def contains_lattice(self, other: "Sublattice") -> bool:
        return all(self.contains(r) for r in other.basis)

    def join(self, other: "Sublattice") -> "Sublattice":
        return Sublattice(self.k, _hnf_rows(self.basis + other.basis, self.k))

    def coset_reps_in(self, finer: "Sublattice") -> list:
        """Reduced representatives of finer / self (requires self ⊆ finer, same rank)."""
        if not finer.contains_lattice(self) or finer.rank != self.rank:
            raise ValueError("need a same-rank superlattice")
        zero = tuple([0] * self.k)
        seen = {zero}
        frontier = [zero]
        while frontier:
            nxt = []
            for v in frontier:
                for g in finer.basis:
                    for w in (add(v, g), sub(v, g)):
                        r = self.reduce(w)
                        if r not in seen:
                            seen.add(r)
                            nxt.append(r)
            frontier = nxt
        return sorted(seen)

    def points_in_box(self, offset: Point, lo: Sequence[int], hi: Sequence[int]) -> list:
        """All points of offset + L inside the box lo <= x <= hi (inclusive)."""
        offset = as_point(offset)
        piv = self.pivots
        r = self.rank
        out = []

        def ok_upto(v, ncols):
            return all(lo[j] <= v[j] <= hi[j] for j in range(ncols))

        def rec(i, v):
            if i == r:
                if ok_upto(v, self.k):
                    out.append(tuple(v))
                return
            c = piv[i]
            if not ok_upto(v, c):
                return
            row = self.basis[i]
            h = row[c]
            amin = -((v[c] - lo[c]) // h)  # ceil((lo - v) / h)
            amax = (hi[c] - v[c]) // h
            for a in range(amin, amax + 1):
                rec(i + 1, [x + a * y for x, y in zip(v, row)])

        rec(0, list(offset))
        return out

    def points_in_cube(self, offset: Point, c: int) -> list:
        return self.points_in_box(offset, [-c] * self.k, [c] * self.k)


def lattice_membership(L: Sublattice, offset: Point, p: Point) -> bool:
    return L.contains(sub(as_point(p), as_point(offset)))


# ---------------------------------------------------------------------------
# Unions of translated lattices


@dataclass(frozen=True)
class LatticeUnion:
    """Finite union of translated sublattices plus isolated points.

    If ``floor`` is set the set is further restricted to points strictly
    succeeding ``floor`` in ``order``; shapes D (upper-orthant sets) use
    floor = 0.
    """

    k: int
    components: tuple = ()  # of (Sublattice, offset)
    isolated: frozenset = field(default_factory=frozenset)
    floor: Point | None = None
    order: InvariantOrder | None = None

    def __post_init__(self):
        if self.floor is not None and self.order is None:
            raise ValueError("a floor needs an order")
        comps = tuple((L, as_point(o)) for L, o in self.components)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "isolated", frozenset(as_point(p) for p in self.isolated))

    @classmethod
    def from_points(cls, pts: Iterable, k: int, order=None, floor=None) -> "LatticeUnion":
        return cls(k, (), frozenset(pts), floor, order)

    @classmethod
    def periodic(cls, L: Sublattice, reps: Iterable, order=None, floor=None) -> "LatticeUnion":
        reps = sorted({L.reduce(as_point(r)) for r in reps})
        return cls(L.k, tuple((L, r) for r in reps), frozenset(), floor, order)

    def _above_floor(self, p) -> bool:
        if self.floor is None:
            return True
        return self.order.less(self.floor, p)

    def __contains__(self, p) -> bool:
        p = as_point(p)
        if not self._above_floor(p):
            return False
        if p in self.isolated:
            return True
        return any(L.contains(sub(p, o)) for L, o in self.components)

    def window(self, c: int) -> list:
        """Points in K_c, by per-component enumeration (sorted lexicographically)."""
        pts = set()
        for L, o in self.components:
            pts.update(L.points_in_cube(o, c))
        pts.update(p for p in self.isolated if in_cube(p, c))
        return sorted(p for p in pts if self._above_floor(p))

    def window_by_scan(self, c: int) -> list:
        return [p for p in itertools.product(range(-c, c + 1), repeat=self.k) if p in self]

    def window_set(self, c: int) -> frozenset:
        return frozenset(self.window(c))

    def translate(self, t: Point) -> "LatticeUnion":
        """(S)_{-t}: shift every point by -t."""
        t = as_point(t)
        comps = tuple((L, sub(o, t)) for L, o in self.components)
        iso = frozenset(sub(p, t) for p in self.isolated)
        floor = None if self.floor is None else sub(self.floor, t)
        return LatticeUnion(self.k, comps, iso, floor, self.order)

    def positive(self, order: InvariantOrder) -> "LatticeUnion":
        """(S)^+ = points strictly succeeding 0."""
        zero = tuple([0] * self.k)
        if self.floor is None or (self.order == order and order.less(self.floor, zero)):
            floor = zero
        elif self.order == order:
            floor = self.floor
        else:
            raise ValueError("mixing orders in one LatticeUnion")
        return LatticeUnion(self.k, self.components, self.isolated, floor, order)

    def is_bounded(self) -> bool:
        return all(L.rank == 0 for L, _ in self.components)

    def check_disjoint(self, c: int) -> bool:
        seen = set()
        for L, o in self.components:
            for p in L.points_in_cube(o, c):
                if p in seen:
                    return False
                seen.add(p)
        return not any(p in seen for p in self.isolated if in_cube(p, c))

    def equal_on(self, other: "LatticeUnion", c: int) -> bool:
        return self.window_set(c) == other.window_set(c)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "components": [
                {"basis": [list(r) for r in L.basis], "offset": list(o)} for L, o in self.components
            ],
            "isolated": [list(p) for p in sorted(self.isolated)],
            "floor": None if self.floor is None else list(self.floor),
        }


def translate(S, t):
    """Shift S by -t (the (S)_{-t} convention). Works on IndexSet and LatticeUnion."""
    t = as_point(t)
    if isinstance(S, LatticeUnion):
        return S.translate(t)
    if isinstance(S, IndexSet):
        _check_dim(S.k, t)
        return IndexSet((sub(p, t) for p in S), k=S.k)
    return {sub(as_point(p), t) for p in S}


def upper_orthant(S, order: InvariantOrder):
    if isinstance(S, LatticeUnion):
        return S.positive(order)
    if isinstance(S, IndexSet):
        return IndexSet((p for p in S if order.is_positive(p)), k=S.k)
    return {as_point(p) for p in S if order.is_positive(as_point(p))}


def window_shape(lam: IndexSet, t: Point, p: int, order: InvariantOrder) -> IndexSet:
    """((Λ)_{-t} ∩ K_p)^+ in canonical sorted form."""
    t = as_point(t)
    if t not in lam:
        raise ValueError(f"{t} is not in the index set")
    if p < 0:
        raise ValueError("p must be nonnegative")
    pts = []
    for q in lam:
        d = sub(q, t)
        if in_cube(d, p) and order.is_positive(d):
            pts.append(d)
    return IndexSet(pts, k=lam.k)


# ---------------------------------------------------------------------------
# point-list files


def read_point_list(path) -> tuple:
    """Parse a point-list file. Returns (IndexSet, list of warnings)."""
    warnings = []
    with open(path) as fh:
        lines = fh.read().splitlines()
    k = None
    pts = []
    seen = set()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if k is None:
            if not line.startswith("k="):
                raise ValueError(f"line {lineno}: expected header 'k=<dim>'")
            try:
                k = int(line[2:])
            except ValueError:
                raise ValueError(f"line {lineno}: bad dimension {line[2:]!r}") from None
            if k < 1:
                raise ValueError(f"line {lineno}: dimension must be >= 1")
            continue
        parts = line.split()
        if len(parts) != k:
            raise ValueError(f"line {lineno}: expected {k} integers, got {len(parts)}")
        try:
            p = tuple(int(x) for x in parts)
        except ValueError:
            raise ValueError(f"line {lineno}: non-integer coordinate") from None
        if p in seen:
            warnings.append(f"line {lineno}: duplicate point {p} ignored")
            continue
        seen.add(p)
        pts.append(p)
    if k is None:
        raise ValueError("missing header 'k=<dim>'")
    return IndexSet(pts, k=k), warnings


def write_point_list(lam: IndexSet, path):
    with open(path, "w") as fh:
        fh.write(f"k={lam.k}\n")
        for p in lam:
            fh.write(" ".join(str(x) for x in p) + "\n")
