"""Quenched Gaussian fields: counter-based sampling, mean/weighted decompositions, sign flips."""

from __future__ import annotations

import csv
import hashlib
import io
import struct
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.special import ndtri

from .lattice import Region, Vertex, as_region

_M64 = (1 << 64) - 1
_MAGIC = b"RFSPDF1\x00"
_HEADER = struct.Struct("<8sQBIIQ32s")


def _splitmix(z: np.ndarray) -> np.ndarray:
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def counter_uniforms(seed: int, coords: np.ndarray, m: int, stream: int = 0) -> np.ndarray:
    """Uniforms in (0,1) keyed by (seed, stream, vertex, component); shape (N, m)."""
    coords = np.asarray(coords, dtype=np.int64)
    n = len(coords)
    key = np.full(n, (seed & _M64), dtype=np.uint64)
    key = _splitmix(key ^ np.uint64(stream & _M64))
    for j in range(coords.shape[1]):
        key = _splitmix(key ^ coords[:, j].view(np.uint64))
    comp = _splitmix(np.arange(1, m + 1, dtype=np.uint64))
    bits = _splitmix(key[:, None] ^ comp[None, :])
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) / float(1 << 53)


@dataclass(eq=False)
class DisorderField:
    """Per-vertex m-vectors over a region, rows aligned with the region's lexicographic order."""

    region: Region
    values: np.ndarray
    seed: int | None = None
    history: tuple[str, ...] = ()
    access_log: list | None = dc_field(default=None, repr=False)

    def __post_init__(self):
        self.region = as_region(self.region)
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != len(self.region):
            raise ValueError("one m-vector per region vertex required")
        vals.setflags(write=False)
        self.values = vals

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_mapping(cls, mapping: dict, m: int | None = None, seed: int | None = None) -> "DisorderField":
        region = Region.from_vertices(mapping.keys())
        vals = np.array([np.atleast_1d(mapping[v]) for v in region.vertices], dtype=np.float64)
        if m is not None and vals.shape[1] != m:
            raise ValueError("component count mismatch")
        return cls(region, vals, seed)

    @classmethod
    def zeros(cls, region, m: int) -> "DisorderField":
        region = as_region(region)
        return cls(region, np.zeros((len(region), m)), None, ("zeros",))

    def __getitem__(self, v) -> np.ndarray:
        return self.values[self.region.index[tuple(v)]]

    def positions(self, region) -> np.ndarray:
        idx = self.region.index
        try:
            return np.array([idx[v] for v in as_region(region).vertices], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"vertex {exc.args[0]} not covered by the field") from None

    def values_on(self, region) -> np.ndarray:
        """(|region|, m) block in the region's order; reads are logged when tracking is on."""
        reg = as_region(region)
        if self.access_log is not None:
            self.access_log.append(frozenset(reg.vertices))
        return self.values[self.positions(reg)]

    def restrict(self, region) -> "DisorderField":
        reg = as_region(region)
        return DisorderField(reg, self.values_on(reg), self.seed, self.history + ("restrict",))

    def with_values_on(self, region, block: np.ndarray, tag: str = "edit") -> "DisorderField":
        vals = self.values.copy()
        vals[self.positions(region)] = np.asarray(block, dtype=np.float64).reshape(-1, self.m)
        return DisorderField(self.region, vals, self.seed, self.history + (tag,))

    def tracked(self) -> "DisorderField":
        return DisorderField(self.region, self.values, self.seed, self.history, access_log=[])

    def accessed(self) -> set[Vertex]:
        out: set[Vertex] = set()
        for chunk in self.access_log or []:
            out |= chunk
        return out

    def digest(self) -> str:
        h = hashlib.sha256(self.region.digest().encode())
        h.update(self.values.astype("<f8").tobytes())
        return h.hexdigest()

    def check_compatible(self, other: "DisorderField") -> None:
        if self.m != other.m:
            raise ValueError(f"fields with different m ({self.m} vs {other.m})")

    def __add__(self, other: "DisorderField") -> "DisorderField":
        self.check_compatible(other)
        if self.region != other.region:
            raise ValueError("fields live on different regions")
        return DisorderField(self.region, self.values + other.values, None, ("sum",))

    def scaled(self, a: float) -> "DisorderField":
        return DisorderField(self.region, a * self.values, self.seed, self.history + (f"scale {a!r}",))

    def lerp(self, other: "DisorderField", t: float) -> "DisorderField":
        """(1-t)*self + t*other on the shared region."""
        self.check_compatible(other)
        if self.region != other.region:
            raise ValueError("fields live on different regions")
        return DisorderField(self.region, (1 - t) * self.values + t * other.values, None, ("lerp",))

    # persistence

    def to_bytes(self) -> bytes:
        n, d = len(self.region), self.region.d
        seed = 0 if self.seed is None else self.seed & _M64
        head = _HEADER.pack(_MAGIC, seed, int(self.seed is not None), self.m, d, n,
                            bytes.fromhex(self.region.digest()))
        return head + self.region.coords.astype("<i8").tobytes() + self.values.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "DisorderField":
        magic, seed, has_seed, m, d, n, digest = _HEADER.unpack_from(blob, 0)
        if magic != _MAGIC:
            raise ValueError("not a disorder field dump")
        off = _HEADER.size
        coords = np.frombuffer(blob, dtype="<i8", count=n * d, offset=off).reshape(n, d)
        off += 8 * n * d
        vals = np.frombuffer(blob, dtype="<f8", count=n * m, offset=off).reshape(n, m)
        region = Region(coords.astype(np.int64), d=d)
        if region.digest() != digest.hex():
            raise ValueError("region hash mismatch in dump")
        return cls(region, vals.astype(np.float64), seed if has_seed else None, ("loaded",))

    def dump(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "DisorderField":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.region.d
        w.writerow([f"x{j}" for j in range(d)] + [f"eta{i}" for i in range(self.m)])
        for v, row in zip(self.region.vertices, self.values):
            w.writerow(list(v) + [repr(float(x)) for x in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, seed: int | None = None) -> "DisorderField":
        rows = list(csv.reader(io.StringIO(text)))
        head, body = rows[0], rows[1:]
        d = sum(1 for c in head if c.startswith("x"))
        mapping = {tuple(int(x) for x in r[:d]): [float(x) for x in r[d:]] for r in body}
        return cls.from_mapping(mapping, seed=seed)


def sample_field(region, m: int, seed: int) -> DisorderField:
    """i.i.d. standard normal m-vectors; each entry depends only on (seed, vertex, component)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    reg = as_region(region)
    u = counter_uniforms(seed, reg.coords, m)
    return DisorderField(reg, ndtri(u), seed, ("sample",))


@dataclass(eq=False)
class WeightFunction:
    region: Region
    w: np.ndarray

    def __post_init__(self):
        self.region = as_region(self.region)
        w = np.array(self.w, dtype=np.float64)
        if w.ndim == 1:
            w = w[:, None]
        if w.shape[0] != len(self.region):
            raise ValueError("one weight vector per vertex required")
        if not np.all(np.isfinite(w)) or np.abs(w).max(initial=0.0) > 1.0:
            raise ValueError("weights must lie in [-1, 1]")
        w.setflags(write=False)
        self.w = w

    @property
    def m(self) -> int:
        return self.w.shape[1]

    @classmethod
    def constant(cls, region, m: int, value: float = 1.0) -> "WeightFunction":
        region = as_region(region)
        return cls(region, np.full((len(region), m), float(value)))

    @classmethod
    def indicator(cls, region, subset, m: int) -> "WeightFunction":
        region = as_region(region)
        sub = as_region(subset).index
        col = np.array([1.0 if v in sub else 0.0 for v in region.vertices])
        return cls(region, np.repeat(col[:, None], m, axis=1))

    @classmethod
    def checkerboard(cls, region, m: int) -> "WeightFunction":
        region = as_region(region)
        sign = np.where(region.coords.sum(axis=1) % 2 == 0, 1.0, -1.0)
        return cls(region, np.repeat(sign[:, None], m, axis=1))

    def values_on(self, region) -> np.ndarray:
        idx = self.region.index
        return self.w[[idx[v] for v in as_region(region).vertices]]

    def mean_square(self, region=None) -> float:
        block = self.w if region is None else self.values_on(region)
        return float(np.mean(np.sum(block**2, axis=1))) if len(block) else 0.0


@dataclass(eq=False)
class FieldDecomposition:
    region: Region
    hat: np.ndarray
    perp: DisorderField
    weight: WeightFunction | None = None

    def reconstruct(self) -> np.ndarray:
        if self.weight is None:
            return self.perp.values + self.hat[None, :]
        return self.perp.values + self.hat[None, :] * self.weight.values_on(self.region)


def decompose(fld: DisorderField, region) -> FieldDecomposition:
    reg = as_region(region)
    block = fld.values_on(reg)
    hat = block.mean(axis=0) if len(block) else np.zeros(fld.m)
    perp = DisorderField(reg, block - hat[None, :], fld.seed, fld.history + ("perp",))
    return FieldDecomposition(reg, hat, perp)


def decompose_weighted(fld: DisorderField, region, weight: WeightFunction) -> FieldDecomposition:
    reg = as_region(region)
    if weight.m != fld.m:
        raise ValueError("weight and field have different m")
    block = fld.values_on(reg)
    w = weight.values_on(reg)
    norm = np.sum(w**2, axis=0)
    hat = np.divide(np.sum(w * block, axis=0), norm, out=np.zeros(fld.m), where=norm > 0)
    perp = DisorderField(reg, block - hat[None, :] * w, fld.seed, fld.history + ("wperp",))
    return FieldDecomposition(reg, hat, perp, weight)


def flip_in_box(fld: DisorderField, region) -> DisorderField:
    """Negate the field on `region`, leave it untouched elsewhere."""
    reg = as_region(region)
    if len(reg) == 0:
        return fld
    pos = fld.positions(reg)
    vals = fld.values.copy()
    vals[pos] = -vals[pos]
    return DisorderField(fld.region, vals, fld.seed, fld.history + ("flip",))
