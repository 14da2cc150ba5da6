"""Finite pieces of Z^d: regions, boxes, boundaries, annuli and dyadic box families."""

from __future__ import annotations

import hashlib
import itertools
import json
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

COORD_BOUND = 2**20
MAX_DIM = 4

Vertex = tuple[int, ...]


def _check_dim(d: int) -> None:
    if not 1 <= d <= MAX_DIM:
        raise ValueError(f"dimension must be in 1..{MAX_DIM}, got {d}")


def _check_coords(coords: np.ndarray) -> None:
    if coords.size and np.abs(coords).max() > COORD_BOUND:
        raise OverflowError(f"coordinate outside +-{COORD_BOUND}")


class Region:
    """Finite vertex set kept in lexicographic order."""

    def __init__(self, coords: np.ndarray | Sequence[Sequence[int]], d: int | None = None):
        arr = np.asarray(coords, dtype=np.int64)
        if arr.size == 0:
            if d is None:
                raise ValueError("empty region needs an explicit dimension")
            arr = arr.reshape(0, d)
        if arr.ndim != 2:
            raise ValueError("coords must be an (N, d) array")
        d = arr.shape[1] if d is None else d
        if arr.shape[1] != d:
            raise ValueError("coordinate dimension mismatch")
        _check_dim(d)
        _check_coords(arr)
        if len(arr):
            arr = np.unique(arr, axis=0)  # unique rows come back lexicographically sorted
        arr.setflags(write=False)
        self.coords = arr
        self.d = d
        self._index = None
        self._vertices = None

    @classmethod
    def from_vertices(cls, vertices: Iterable[Sequence[int]], d: int | None = None) -> "Region":
        verts = [tuple(int(c) for c in v) for v in vertices]
        if not verts:
            return cls(np.zeros((0, d or 1), dtype=np.int64), d=d or 1)
        return cls(np.array(verts, dtype=np.int64), d=d)

    @property
    def vertices(self) -> list[Vertex]:
        if self._vertices is None:
            self._vertices = [tuple(int(c) for c in row) for row in self.coords.tolist()]
        return self._vertices

    @property
    def index(self) -> dict[Vertex, int]:
        if self._index is None:
            self._index = {v: i for i, v in enumerate(self.vertices)}
        return self._index

    def __len__(self) -> int:
        return len(self.coords)

    def __iter__(self):
        return iter(self.vertices)

    def __contains__(self, v) -> bool:
        return tuple(int(c) for c in v) in self.index

    def __eq__(self, other) -> bool:
        other = as_region(other)
        return self.d == other.d and np.array_equal(self.coords, other.coords)

    def __hash__(self) -> int:
        return hash((self.d, self.coords.tobytes()))

    def __repr__(self) -> str:
        return f"Region(d={self.d}, n={len(self)})"

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64(self.d).tobytes())
        h.update(self.coords.astype("<i8").tobytes())
        return h.hexdigest()

    def issubset(self, other) -> bool:
        idx = as_region(other).index
        return all(v in idx for v in self.vertices)

    def union(self, other) -> "Region":
        other = as_region(other)
        return Region(np.concatenate([self.coords, other.coords]), d=self.d)

    def difference(self, other) -> "Region":
        idx = as_region(other).index
        keep = [i for i, v in enumerate(self.vertices) if v not in idx]
        return Region(self.coords[keep], d=self.d)

    def intersection(self, other) -> "Region":
        idx = as_region(other).index
        keep = [i for i, v in enumerate(self.vertices) if v in idx]
        return Region(self.coords[keep], d=self.d)

    def isdisjoint(self, other) -> bool:
        return len(self.intersection(other)) == 0

    def to_json(self) -> str:
        return json.dumps(self.vertices)

    @classmethod
    def from_json(cls, text: str, d: int | None = None) -> "Region":
        return cls.from_vertices(json.loads(text), d=d)


class BoxRegion:
    """Axis-aligned box lo <= v <= hi (inclusive).

    Centred cubes {w : |w - center|_inf <= L} are built with `BoxRegion.cube`; dyadic
    sub-boxes may have uneven sides.
    """

    def __init__(self, lo: Sequence[int], hi: Sequence[int]):
        lo = tuple(int(x) for x in lo)
        hi = tuple(int(x) for x in hi)
        if len(lo) != len(hi):
            raise ValueError("lo/hi dimension mismatch")
        _check_dim(len(lo))
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError("empty box")
        _check_coords(np.array(lo + hi))
        self.lo = lo
        self.hi = hi

    @classmethod
    def cube(cls, half_side: int, d: int, center: Sequence[int] | None = None) -> "BoxRegion":
        if half_side < 0:
            raise ValueError("half_side must be non-negative")
        c = tuple(center) if center is not None else (0,) * d
        if len(c) != d:
            raise ValueError("center dimension mismatch")
        return cls([x - half_side for x in c], [x + half_side for x in c])

    @property
    def d(self) -> int:
        return len(self.lo)

    @property
    def sides(self) -> tuple[int, ...]:
        return tuple(b - a + 1 for a, b in zip(self.lo, self.hi))

    @property
    def is_cube(self) -> bool:
        s = self.sides
        return all(x == s[0] for x in s) and s[0] % 2 == 1

    @property
    def center(self) -> Vertex:
        return tuple((a + b) // 2 for a, b in zip(self.lo, self.hi))

    @property
    def half_side(self) -> int:
        """Half side of a centred cube; for uneven boxes the largest L with Λ_L(center) inside."""
        return min((b - a) // 2 for a, b in zip(self.lo, self.hi))

    def __len__(self) -> int:
        return int(np.prod(self.sides))

    def __contains__(self, v) -> bool:
        return all(a <= x <= b for a, x, b in zip(self.lo, v, self.hi))

    def __eq__(self, other) -> bool:
        return isinstance(other, BoxRegion) and self.lo == other.lo and self.hi == other.hi

    def __hash__(self) -> int:
        return hash((self.lo, self.hi))

    def __repr__(self) -> str:
        if self.is_cube:
            return f"BoxRegion(center={self.center}, half_side={self.half_side})"
        return f"BoxRegion(lo={self.lo}, hi={self.hi})"

    def contains_box(self, other: "BoxRegion") -> bool:
        return all(a <= c and d <= b for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))

    @cached_property
    def region(self) -> Region:
        axes = [np.arange(a, b + 1) for a, b in zip(self.lo, self.hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.d)
        return Region(grid, d=self.d)

    @property
    def coords(self) -> np.ndarray:
        return self.region.coords

    @property
    def vertices(self) -> list[Vertex]:
        return self.region.vertices

    def __iter__(self):
        return iter(self.vertices)

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "center": list(self.center),
                "half_side": self.half_side}

    @classmethod
    def from_dict(cls, data: dict) -> "BoxRegion":
        return cls(data["lo"], data["hi"])


def as_region(x) -> Region:
    if isinstance(x, Region):
        return x
    if isinstance(x, BoxRegion):
        return x.region
    return Region.from_vertices(x)


def box(L: int, d: int, center: Sequence[int] | None = None) -> BoxRegion:
    """Λ_L = {-L..L}^d shifted to `center`."""
    return BoxRegion.cube(L, d, center)


def ball(v: Sequence[int], R: int) -> BoxRegion:
    return BoxRegion.cube(R, len(v), v)


def _offsets(d: int, R: int) -> np.ndarray:
    return np.array(list(itertools.product(range(-R, R + 1), repeat=d)), dtype=np.int64)


def boundary(region, R: int) -> Region:
    """Vertices outside the region within sup-distance R of it."""
    if R < 0:
        raise ValueError("R must be non-negative")
    reg = as_region(region)
    if R == 0 or len(reg) == 0:
        return Region(np.zeros((0, reg.d), dtype=np.int64), d=reg.d)
    cand = (reg.coords[:, None, :] + _offsets(reg.d, R)[None, :, :]).reshape(-1, reg.d)
    cand = np.unique(cand, axis=0)
    idx = reg.index
    keep = [i for i, row in enumerate(cand) if tuple(int(c) for c in row) not in idx]
    return Region(cand[keep], d=reg.d)


def neighbours(v: Sequence[int]) -> list[Vertex]:
    out = []
    for i in range(len(v)):
        for s in (-1, 1):
            w = list(v)
            w[i] += s
            out.append(tuple(w))
    return out


def annulus(outer: BoxRegion, inner: BoxRegion) -> Region:
    if not outer.contains_box(inner):
        raise ValueError("inner box is not contained in outer box")
    return outer.region.difference(inner.region)


def scale_box(b: BoxRegion, alpha) -> BoxRegion:
    """Box with the same centre and half side floor(alpha * L)."""
    a = Fraction(alpha).limit_denominator(10**9) if not isinstance(alpha, Fraction) else alpha
    if a <= 0:
        raise ValueError("alpha must be positive")
    L = (a * b.half_side).__floor__()
    return BoxRegion.cube(int(L), b.d, b.center)


def _axis_cuts(lo: int, hi: int, parts: int) -> list[tuple[int, int]]:
    n = hi - lo + 1
    edges = [lo + (j * n) // parts for j in range(parts + 1)]
    return [(edges[j], edges[j + 1] - 1) for j in range(parts)]


def default_l_max(L: int, k: int) -> int:
    """Largest l with k^l <= sqrt(L)."""
    if k < 2:
        raise ValueError("k must be >= 2")
    l = 0
    while k ** (2 * (l + 1)) <= L:
        l += 1
    return l


def dyadic_family(L: int, k: int, l: int, d: int = 2, root: BoxRegion | None = None) -> list[BoxRegion]:
    """Level-l family: each axis of the root box cut into k^l contiguous runs.

    Cut points at level l are floor(j*n/k^l), so level l+1 refines level l exactly and
    run lengths differ by at most one site.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if l < 0:
        raise ValueError("level must be non-negative")
    root = root if root is not None else box(L, d)
    parts = k**l
    if parts > min(root.sides) or (root.is_cube and parts > 2 * root.half_side and l > 0):
        raise ValueError(f"level {l} too deep for k={k} on {root}")
    cuts = [_axis_cuts(a, b, parts) for a, b in zip(root.lo, root.hi)]
    out = []
    for combo in itertools.product(*cuts):
        out.append(BoxRegion([c[0] for c in combo], [c[1] for c in combo]))
    return out
