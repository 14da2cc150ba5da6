"""Model definitions: spin spaces, base and disordered Hamiltonians, noised observables.

Spin values: RFIM/EA use +-1, Potts colours 1..q, the clock model an angle index
0..n_states-1, and O(n) a unit n-vector. Configurations are plain dicts Vertex -> value.

Boundary handling (`boundary` argument):
    "fixed"     spins outside the region are read from the configuration (must be present)
    "free"      terms that reach outside the region are dropped
    "periodic"  the region must be a box; neighbours wrap around
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .disorder import DisorderField
from .lattice import BoxRegion, Region, Vertex, as_region

KINDS = ("rfim", "potts", "ea", "on", "clock")
BOUNDARY_MODES = ("fixed", "free", "periodic")

# Pair couplings for O(n)/clock, written as functions of the dot product so that
# rotation invariance holds by construction. Each entry: (phi, dphi, sup |phi(a)-phi(b)|).
COUPLINGS: dict[str, tuple[Callable, Callable, float]] = {
    "neg_dot": (lambda c: -c, lambda c: -np.ones_like(c), 2.0),
    "neg_dot_sq": (lambda c: -c * c, lambda c: -2.0 * c, 1.0),
}


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    d: int = 2
    beta: float = 1.0
    lam: float = 1.0
    h: tuple[float, ...] = (0.0,)
    q: int = 0
    n: int = 0
    n_states: int = 0
    coupling: str = "neg_dot"
    antiferro: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not 1 <= self.d <= 4:
            raise ValueError("d must be in 1..4")
        if self.beta < 0 or self.lam < 0:
            raise ValueError("beta and lambda must be non-negative")
        h = tuple(float(x) for x in np.atleast_1d(self.h))
        object.__setattr__(self, "h", h)
        if self.kind == "potts" and self.q < 3:
            raise ValueError("Potts needs q >= 3")
        if self.kind == "on" and self.n < 2:
            raise ValueError("O(n) needs n >= 2")
        if self.kind == "clock" and self.n_states < 3:
            raise ValueError("clock model needs n_states >= 3")
        if self.kind in ("on", "clock") and self.coupling not in COUPLINGS:
            raise ValueError(f"unknown coupling {self.coupling!r}")
        if self.antiferro and self.kind != "rfim":
            raise ValueError("antiferro flag only applies to RFIM")
        if len(h) not in (1, self.h_dim):
            raise ValueError(f"h must have {self.h_dim} components")

    # constructors

    @classmethod
    def rfim(cls, beta=1.0, lam=1.0, h=0.0, d=2, antiferro=False) -> "ModelSpec":
        return cls("rfim", d, beta, lam, (h,), antiferro=antiferro)

    @classmethod
    def potts(cls, q=3, beta=1.0, lam=1.0, h=None, d=2) -> "ModelSpec":
        return cls("potts", d, beta, lam, tuple(h) if h is not None else (0.0,) * q, q=q)

    @classmethod
    def ea(cls, beta=1.0, lam=1.0, h=0.0, d=2) -> "ModelSpec":
        return cls("ea", d, beta, lam, (h,))

    @classmethod
    def on(cls, n=2, beta=1.0, lam=1.0, h=None, d=2, coupling="neg_dot") -> "ModelSpec":
        return cls("on", d, beta, lam, tuple(h) if h is not None else (0.0,) * n, n=n, coupling=coupling)

    @classmethod
    def clock(cls, n_states=8, beta=1.0, lam=1.0, h=None, d=2, coupling="neg_dot") -> "ModelSpec":
        return cls("clock", d, beta, lam, tuple(h) if h is not None else (0.0, 0.0), n=2,
                   n_states=n_states, coupling=coupling)

    def with_(self, **kw) -> "ModelSpec":
        return replace(self, **kw)

    # derived quantities

    @property
    def h_dim(self) -> int:
        return {"rfim": 1, "ea": 1, "potts": self.q, "on": self.n, "clock": 2}[self.kind]

    @property
    def h_vec(self) -> np.ndarray:
        h = np.array(self.h, dtype=np.float64)
        return np.full(self.h_dim, h[0]) if len(h) == 1 and self.h_dim > 1 else h

    @property
    def m(self) -> int:
        return {"rfim": 1, "ea": self.d, "potts": self.q, "on": self.n, "clock": 2}[self.kind]

    @property
    def R(self) -> int:
        return 1 if self.kind == "ea" else 0

    @property
    def discrete(self) -> bool:
        return self.kind != "on"

    @property
    def n_spin_states(self) -> int:
        if self.kind in ("rfim", "ea"):
            return 2
        if self.kind == "potts":
            return self.q
        if self.kind == "clock":
            return self.n_states
        raise ValueError("O(n) spins are continuous")

    @property
    def ferromagnetic_ising(self) -> bool:
        """Monotone case: the extremal boundary conditions realise the sup over boundaries."""
        return self.kind == "rfim" and not self.antiferro

    def to_dict(self) -> dict:
        return {"kind": self.kind, "d": self.d, "beta": self.beta, "lam": self.lam, "h": list(self.h),
                "q": self.q, "n": self.n, "n_states": self.n_states, "coupling": self.coupling,
                "antiferro": self.antiferro}

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        kind = data["kind"]
        kw = {k: data[k] for k in ("d", "beta", "lam", "q", "n", "n_states", "coupling", "antiferro") if k in data}
        if kind == "potts":
            kw.setdefault("q", 3)
        if kind == "clock":
            kw.setdefault("n_states", 8)
            kw["n"] = 2
        if kind == "on":
            kw.setdefault("n", 2)
        spec = cls(kind, **{**kw, "h": tuple(np.atleast_1d(data.get("h", 0.0)))})
        if len(spec.h) == 1 and spec.h_dim > 1:
            spec = spec.with_(h=tuple(spec.h_vec))
        return spec


# spin spaces


def state_values(spec: ModelSpec) -> list:
    if spec.kind in ("rfim", "ea"):
        return [-1, 1]
    if spec.kind == "potts":
        return list(range(1, spec.q + 1))
    if spec.kind == "clock":
        return list(range(spec.n_states))
    raise ValueError("O(n) spins are continuous")


def state_index(spec: ModelSpec, value) -> int:
    if spec.kind in ("rfim", "ea"):
        if value not in (-1, 1):
            raise ValueError(f"Ising spin must be +-1, got {value!r}")
        return 0 if value == -1 else 1
    if spec.kind == "potts":
        if not 1 <= int(value) <= spec.q:
            raise ValueError(f"Potts colour out of range: {value!r}")
        return int(value) - 1
    if spec.kind == "clock":
        if not 0 <= int(value) < spec.n_states:
            raise ValueError(f"clock index out of range: {value!r}")
        return int(value)
    raise ValueError("O(n) spins are continuous")


def clock_angles(n_states: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(n_states) / n_states


def spin_vector(spec: ModelSpec, value) -> np.ndarray:
    """Embedding of a spin value as a vector (used for O(n)/clock couplings and rotations)."""
    if spec.kind == "clock":
        a = clock_angles(spec.n_states)[int(value)]
        return np.array([np.cos(a), np.sin(a)])
    if spec.kind == "on":
        v = np.asarray(value, dtype=np.float64)
        if v.shape != (spec.n,):
            raise ValueError("O(n) spin has wrong length")
        if abs(np.linalg.norm(v) - 1.0) > 1e-12:
            raise ValueError("O(n) spin must have unit norm")
        return v
    return np.array([float(value)])


def observable_table(spec: ModelSpec) -> np.ndarray:
    """(S, m) table of f_v as a function of the state index, for site observables."""
    if spec.kind == "rfim":
        return np.array([[-1.0], [1.0]])
    if spec.kind == "potts":
        return np.eye(spec.q)
    if spec.kind == "clock":
        a = clock_angles(spec.n_states)
        return np.stack([np.cos(a), np.sin(a)], axis=1)
    raise ValueError(f"{spec.kind} has no site observable table")


def coupling_kernel(spec: ModelSpec) -> np.ndarray:
    """(S, S) matrix K with edge energy coef*K[s, s'] (coef is 1 for ferromagnetic bonds)."""
    if spec.kind in ("rfim", "ea"):
        s = np.array([-1.0, 1.0])
        return -np.outer(s, s)
    if spec.kind == "potts":
        return -np.eye(spec.q)
    if spec.kind == "clock":
        a = clock_angles(spec.n_states)
        phi = COUPLINGS[spec.coupling][0]
        return phi(np.cos(a[:, None] - a[None, :]))
    raise ValueError("O(n) coupling is continuous")


def coupling_value(spec: ModelSpec, s1, s2) -> float:
    """Psi(s1, s2) for O(n)/clock spins given as vectors (or clock indices)."""
    v1 = spin_vector(spec, s1) if spec.kind == "clock" else np.asarray(s1, dtype=np.float64)
    v2 = spin_vector(spec, s2) if spec.kind == "clock" else np.asarray(s2, dtype=np.float64)
    return float(COUPLINGS[spec.coupling][0](np.dot(v1, v2)))


def boundary_edge_constant(spec: ModelSpec) -> float:
    """Largest change of one boundary-crossing edge term when the outside spin changes."""
    if spec.kind == "rfim":
        return 2.0
    if spec.kind == "potts":
        return 1.0
    if spec.kind == "ea":
        return 2.0 * abs(spec.h[0])
    return COUPLINGS[spec.coupling][2]


# geometry with boundary modes


@dataclass
class Geometry:
    region: Region
    boundary: str = "fixed"
    _box: BoxRegion | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.boundary not in BOUNDARY_MODES:
            raise ValueError(f"unknown boundary mode {self.boundary!r}")
        if isinstance(self.region, BoxRegion):
            self._box = self.region
        self.region = as_region(self.region)
        if self.boundary == "periodic":
            if self._box is None:
                coords = self.region.coords
                lo, hi = coords.min(axis=0), coords.max(axis=0)
                self._box = BoxRegion(lo, hi)
                if len(self._box) != len(self.region):
                    raise ValueError("periodic boundary needs a box region")
            if min(self._box.sides) < 3:
                raise ValueError("periodic boxes need side >= 3")

    @property
    def d(self) -> int:
        return self.region.d

    def shift(self, v: Vertex, i: int, s: int) -> Vertex | None:
        """v + s*e_i under the boundary rule; None when the term is dropped."""
        w = list(v)
        w[i] += s
        w = tuple(w)
        if self.boundary == "periodic":
            lo, side = self._box.lo[i], self._box.sides[i]
            w = list(w)
            w[i] = lo + (w[i] - lo) % side
            return tuple(w)
        if self.boundary == "free" and w not in self.region:
            return None
        return w

    def edges(self) -> list[tuple[Vertex, Vertex, int]]:
        """Edges (u, u+e_i, i) with at least one endpoint in the region, each listed once."""
        out = []
        inside = self.region.index
        for v in self.region.vertices:
            for i in range(self.d):
                w = self.shift(v, i, +1)
                if w is not None:
                    out.append((v, w, i))
                if self.boundary == "fixed":
                    u = self.shift(v, i, -1)
                    if u not in inside:
                        out.append((u, v, i))
        return out

    def outer_sites(self) -> list[Vertex]:
        if self.boundary != "fixed":
            return []
        inside = self.region.index
        seen = {}
        for u, w, _ in self.edges():
            for x in (u, w):
                if x not in inside:
                    seen[x] = None
        return sorted(seen)


def _spin(σ: dict, v: Vertex):
    try:
        return σ[v]
    except KeyError:
        raise KeyError(f"configuration is missing vertex {v}") from None


def _edge_energy(spec: ModelSpec, a, b, coef: float = 1.0) -> float:
    if spec.kind == "rfim":
        return -(-1.0 if spec.antiferro else 1.0) * a * b
    if spec.kind == "potts":
        return -1.0 if a == b else 0.0
    if spec.kind == "ea":
        return -coef * a * b
    return coupling_value(spec, a, b)


def noised_observable(spec: ModelSpec, v: Vertex, σ: dict, geometry: Geometry | None = None) -> np.ndarray:
    v = tuple(v)
    if spec.kind == "rfim":
        return np.array([float(_spin(σ, v))])
    if spec.kind == "potts":
        out = np.zeros(spec.q)
        out[state_index(spec, _spin(σ, v))] = 1.0
        return out
    if spec.kind in ("on", "clock"):
        return spin_vector(spec, _spin(σ, v))
    out = np.zeros(spec.d)
    sv = _spin(σ, v)
    for i in range(spec.d):
        w = geometry.shift(v, i, +1) if geometry is not None else tuple(
            x + (1 if j == i else 0) for j, x in enumerate(v))
        if w is not None:
            out[i] = sv * _spin(σ, w)
    return out


def base_energy(spec: ModelSpec, region, σ: dict, boundary: str = "fixed") -> float:
    geo = Geometry(region, boundary)
    e = 0.0
    h = spec.h_vec
    for u, w, _ in geo.edges():
        a, b = _spin(σ, u), _spin(σ, w)
        e += _edge_energy(spec, a, b, coef=h[0] if spec.kind == "ea" else 1.0)
    for v in geo.region.vertices:
        s = _spin(σ, v)
        if spec.kind == "rfim":
            e -= h[0] * s
        elif spec.kind == "potts":
            e -= h[state_index(spec, s)]
    return float(e)


def _field_block(spec: ModelSpec, region: Region, η: DisorderField) -> np.ndarray:
    if η.m != spec.m:
        raise ValueError(f"field has m={η.m}, model needs m={spec.m}")
    try:
        return η.values_on(region)
    except ValueError as exc:
        raise ValueError(f"field does not cover the region: {exc}") from None


def disordered_energy(spec: ModelSpec, region, σ: dict, η: DisorderField, boundary: str = "fixed") -> float:
    geo = Geometry(region, boundary)
    eta = _field_block(spec, geo.region, η)
    e = base_energy(spec, geo.region, σ, boundary)
    for row, v in zip(eta, geo.region.vertices):
        f = noised_observable(spec, v, σ, geo)
        e -= spec.lam * float(np.dot(row, f))
        if spec.kind in ("on", "clock"):
            e -= float(np.dot(spec.h_vec, f))
    return float(e)


def local_energy_delta(spec: ModelSpec, region, σ: dict, η: DisorderField, v: Vertex, new_spin,
                       boundary: str = "fixed") -> float:
    """Energy change for setting σ_v := new_spin, touching only the terms that contain v."""
    geo = Geometry(region, boundary)
    v = tuple(v)
    if v not in geo.region:
        raise ValueError(f"{v} is outside the region")
    inside = geo.region.index
    h = spec.h_vec
    eta_v = _field_block(spec, Region.from_vertices([v]), η)[0]

    def local(sv) -> float:
        e = 0.0
        for i in range(spec.d):
            for s in (+1, -1):
                w = geo.shift(v, i, s)
                if w is None:
                    continue
                sw = _spin(σ, w)
                if spec.kind == "ea":
                    lower = v if s == +1 else w
                    coef = h[0]
                    if lower in inside:
                        eta_l = eta_v if lower == v else _field_block(spec, Region.from_vertices([lower]), η)[0]
                        coef += spec.lam * eta_l[i]
                    e += -coef * sv * sw
                else:
                    e += _edge_energy(spec, sv, sw)
        if spec.kind == "rfim":
            e -= (spec.lam * eta_v[0] + h[0]) * sv
        elif spec.kind == "potts":
            k = state_index(spec, sv)
            e -= spec.lam * eta_v[k] + h[k]
        elif spec.kind in ("on", "clock"):
            e -= float(np.dot(spec.lam * eta_v + h, spin_vector(spec, sv)))
        return e

    return float(local(new_spin) - local(_spin(σ, v)))


# compact spin serialisation

_SPIN_HEADER = struct.Struct("<4sBI")


def encode_spins(spec: ModelSpec, region, σ: dict) -> bytes:
    verts = as_region(region).vertices
    n = len(verts)
    head = _SPIN_HEADER.pack(b"RFSS", KINDS.index(spec.kind), n)
    if spec.kind in ("rfim", "ea"):
        bits = np.array([1 if σ[v] == 1 else 0 for v in verts], dtype=np.uint8)
        packed = np.zeros((n + 3) // 4, dtype=np.uint8)
        for j in range(4):
            chunk = bits[j::4]
            packed[: len(chunk)] |= (chunk << (2 * j)).astype(np.uint8)
        return head + packed.tobytes()
    if spec.kind in ("potts", "clock"):
        return head + bytes(int(σ[v]) for v in verts)
    return head + np.array([spin_vector(spec, σ[v]) for v in verts], dtype="<f8").tobytes()


def decode_spins(spec: ModelSpec, region, blob: bytes) -> dict:
    magic, kind, n = _SPIN_HEADER.unpack_from(blob, 0)
    verts = as_region(region).vertices
    if magic != b"RFSS" or KINDS[kind] != spec.kind or n != len(verts):
        raise ValueError("spin blob does not match model/region")
    body = blob[_SPIN_HEADER.size:]
    if spec.kind in ("rfim", "ea"):
        packed = np.frombuffer(body, dtype=np.uint8)
        vals = [(packed[i // 4] >> (2 * (i % 4))) & 3 for i in range(n)]
        return {v: (1 if b else -1) for v, b in zip(verts, vals)}
    if spec.kind in ("potts", "clock"):
        return {v: int(b) for v, b in zip(verts, body[:n])}
    arr = np.frombuffer(body, dtype="<f8").reshape(n, spec.n)
    return {v: tuple(float(x) for x in row) for v, row in zip(verts, arr)}
