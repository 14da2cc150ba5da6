"""Zero-temperature objects: exact RFIM ground states by min-cut, annealed local search,
enumeration, zero-temperature fluc and the EA gauge identity."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .disorder import DisorderField, flip_in_box
from .exact import FlucReport, _diameter, enumerate_ground
from .lattice import as_region
from .mcmc import Batch, init_chains, sweep
from .models import (COUPLINGS, ModelSpec, decode_spins, disordered_energy, encode_spins, observable_table)
from .system import System, compile_system


@dataclass
class GroundResult:
    sigma: dict
    energy: float
    method: str
    certificate: float | None = None
    x: np.ndarray | None = field(default=None, repr=False)

    def to_bytes(self, spec: ModelSpec, region) -> bytes:
        meta = self.method.encode()
        cert = np.nan if self.certificate is None else self.certificate
        return struct.pack("<ddH", self.energy, cert, len(meta)) + meta + encode_spins(spec, region, self.sigma)

    @classmethod
    def from_bytes(cls, spec: ModelSpec, region, blob: bytes) -> "GroundResult":
        energy, cert, k = struct.unpack_from("<ddH", blob, 0)
        off = struct.calcsize("<ddH")
        method = blob[off:off + k].decode()
        sigma = decode_spins(spec, region, blob[off + k:])
        return cls(sigma, energy, method, None if np.isnan(cert) else cert)


@dataclass
class AnnealSchedule:
    t0: float = 2.0
    ratio: float = 0.95
    stages: int = 200
    sweeps_per_stage: int = 1
    restarts: int = 20
    seed: int = 0

    def temperatures(self) -> np.ndarray:
        return self.t0 * self.ratio ** np.arange(self.stages)


def _unary(system: System) -> np.ndarray:
    """Site energies including couplings to the fixed outer sites, (N, S)."""
    u = system.site.astype(np.float64).copy()
    K = system.kernel
    for a, b, c in zip(system.ia, system.ib, system.ecoef):
        if system.N <= b < system.pad:
            u[a] += c * K[:, system.tau[b - system.N]]
    return u


def _result(system: System, x: np.ndarray, method: str, cert=None) -> GroundResult:
    e = float(system.energy(x[None])[0])
    return GroundResult(system.decode(x), e, method, cert, x)


def rfim_ground_state(spec: ModelSpec, region, tau, eta: DisorderField) -> GroundResult:
    """Exact minimiser of the ferromagnetic RFIM energy via an s-t minimum cut.

    Source side is spin +1. The source side of the cut returned is the smallest one, so among
    degenerate ground states the pointwise smallest (hence lexicographically smallest) is
    returned.
    """
    if spec.kind != "rfim" or spec.antiferro:
        raise ValueError("min-cut path needs the ferromagnetic RFIM")
    system = compile_system(spec, region, tau, eta)
    N = system.N
    u = _unary(system)                   # states 0 -> -1, 1 -> +1
    G = nx.DiGraph()
    G.add_nodes_from(["s", "t"])
    G.add_nodes_from(range(N))
    for a in range(N):
        diff = u[a, 0] - u[a, 1]          # extra cost of -1 over +1
        if diff > 0:
            G.add_edge("s", a, capacity=diff)
        elif diff < 0:
            G.add_edge(a, "t", capacity=-diff)
    for a, b, c in zip(system.ia, system.ib, system.ecoef):
        if b < N and c != 0:
            cap = 2.0 * c
            for p, q in ((a, b), (b, a)):
                if G.has_edge(p, q):
                    G[p][q]["capacity"] += cap
                else:
                    G.add_edge(p, q, capacity=cap)
    cut, (src, _) = nx.minimum_cut(G, "s", "t")
    x = np.zeros(N, dtype=np.int64)
    for a in src:
        if a != "s":
            x[a] = 1
    return _result(system, x, "mincut_exact", float(cut))


def enumeration_ground(spec: ModelSpec, region, tau, eta: DisorderField) -> GroundResult:
    system = compile_system(spec, region, tau, eta)
    x, _ = enumerate_ground(system)
    return _result(system, x, "enumeration_exact")


# ---------------------------------------------------------------- local search


def _descend_discrete(system: System, X: np.ndarray) -> np.ndarray:
    """Greedy zero-temperature colour sweeps until no single-site change lowers the energy."""
    K = system.kernel
    for _ in range(10_000):
        changed = False
        for sites in system.colors:
            z = system.extended(X)
            nbs = z[:, system.nbr[sites]]                               # (C, A, D)
            e = np.einsum("ad,cads->cas", system.coef[sites], K[:, nbs].transpose(1, 2, 3, 0))
            e = e + system.site[sites][None]
            cur = X[:, sites]
            e_cur = np.take_along_axis(e, cur[..., None], -1)[..., 0]
            best = np.argmin(e, axis=-1)
            better = np.take_along_axis(e, best[..., None], -1)[..., 0] < e_cur - 1e-12
            if better.any():
                X[:, sites] = np.where(better, best, cur)
                changed = True
        if not changed:
            return X
    return X


def _on_gradient(system: System, X: np.ndarray) -> np.ndarray:
    """Euclidean gradient of the energy w.r.t. each spin, (C, N, n)."""
    dphi = COUPLINGS[system.spec.coupling][1]
    z = system.extended(X)
    nbv = z[:, system.nbr]                                              # (C, N, D, n)
    dots = np.einsum("cnk,cndk->cnd", X, nbv)
    w = system.coef[None] * dphi(dots)
    w = np.where(system.nbr[None] < system.pad, w, 0.0)
    return np.einsum("cnd,cndk->cnk", w, nbv) - system.site[None]


def _tangent(X: np.ndarray, g: np.ndarray) -> np.ndarray:
    return g - np.sum(g * X, axis=-1, keepdims=True) * X


def _descend_on(system: System, X: np.ndarray, tol: float = 1e-8, max_iter: int = 200_000) -> np.ndarray:
    """Coordinate descent over colour classes: each spin moves to the minimiser of its local energy
    along the field (exact for the dot coupling) or by projected gradient steps otherwise."""
    for it in range(max_iter):
        for sites in system.colors:
            g = _on_gradient(system, X)[:, sites]
            if system.spec.coupling == "neg_dot":
                field_ = -g
                norm = np.linalg.norm(field_, axis=-1, keepdims=True)
                X[:, sites] = np.where(norm > 0, field_ / np.maximum(norm, 1e-300), X[:, sites])
            else:
                step = 0.1
                Y = X[:, sites] - step * _tangent(X[:, sites], g)
                X[:, sites] = Y / np.linalg.norm(Y, axis=-1, keepdims=True)
        if np.abs(_tangent(X, _on_gradient(system, X))).max() <= tol:
            break
    return X


def stationarity(system: System, x: np.ndarray) -> float:
    """Largest tangential gradient component (O(n) stationarity residual)."""
    return float(np.abs(_tangent(x[None], _on_gradient(system, x[None]))).max())


def local_search_ground(spec: ModelSpec, region, tau, eta: DisorderField,
                        schedule: AnnealSchedule | None = None, start: dict | None = None) -> GroundResult:
    """Simulated annealing with restarts followed by zero-temperature descent; best restart wins.

    With `start`, only the descent is run from that configuration.
    """
    sched = schedule or AnnealSchedule()
    system = compile_system(spec, region, tau, eta)
    if start is not None:
        X = system.encode(start)[None].copy()
    else:
        state = init_chains(Batch.of([system]), sched.restarts, sched.seed)
        for T in sched.temperatures():
            for _ in range(sched.sweeps_per_stage):
                sweep(state, beta=1.0 / T)
        X = state.X[0].copy()
    if spec.discrete:
        X = _descend_discrete(system, X)
    else:
        X = _descend_on(system, X)
    E = system.energy(X)
    best = np.flatnonzero(E <= E.min() + 1e-9)
    if spec.discrete:
        j = min(best, key=lambda i: tuple(X[i]))
    else:
        j = int(best[0])
    return _result(system, X[j], "local_search")


def ground_state(spec: ModelSpec, region, tau, eta: DisorderField, method: str = "auto",
                 schedule: AnnealSchedule | None = None, enum_cap: int = 2**20) -> GroundResult:
    if method == "auto":
        if spec.kind == "rfim" and not spec.antiferro:
            method = "mincut"
        elif spec.discrete and int(spec.n_spin_states) ** len(as_region(region)) <= enum_cap:
            method = "enumeration"
        else:
            method = "local_search"
    if method == "mincut":
        return rfim_ground_state(spec, region, tau, eta)
    if method == "enumeration":
        return enumeration_ground(spec, region, tau, eta)
    return local_search_ground(spec, region, tau, eta, schedule)


def ground_observables(spec: ModelSpec, region, tau, eta, g: GroundResult) -> np.ndarray:
    """(N, m) values of f_v at the ground configuration."""
    system = compile_system(spec, region, tau, eta)
    x = g.x if g.x is not None else system.encode(g.sigma)
    if spec.kind == "ea":
        s = 2.0 * system.extended(x[None])[0] - 1.0
        s[system.pad] = 0.0
        return s[: system.N, None] * s[system.partner]
    if spec.discrete:
        return observable_table(spec)[x]
    return np.asarray(x, dtype=np.float64)


def ground_fluc(spec: ModelSpec, region, eta: DisorderField, boundary_set: list, method: str = "auto",
                schedule: AnnealSchedule | None = None):
    """Largest distance between region averages of f over ground states, one per boundary."""
    if not boundary_set:
        raise ValueError("empty boundary set")
    reg = as_region(region)
    A, used = [], set()
    for tau in boundary_set:
        g = ground_state(spec, reg, tau, eta, method, schedule)
        used.add(g.method)
        A.append(ground_observables(spec, reg, tau, eta, g).mean(axis=0))
    A = np.array(A)
    if A.shape[1] == 1:
        i, j = int(np.argmax(A[:, 0])), int(np.argmin(A[:, 0]))
        fl = float(A[i, 0] - A[j, 0])
    else:
        fl, i, j = _diameter(A)
    exact = used <= {"mincut_exact", "enumeration_exact"}
    return FlucReport(fl, A.max(axis=0) - A.min(axis=0), (boundary_set[i], boundary_set[j]), "ground",
                      "+".join(sorted(used)), A.max(axis=0), A.min(axis=0), len(boundary_set),
                      lower_bound=not exact)


def ground_energy_gradient(spec: ModelSpec, region, tau, eta: DisorderField, g: GroundResult) -> np.ndarray:
    """d(min H)/d eta_{v,i} = -lam * f_{v,i}(ground state), (N, m)."""
    return -spec.lam * ground_observables(spec, region, tau, eta, g)


# ---------------------------------------------------------------- EA gauge


def gauge_flip(sigma: dict) -> dict:
    """Negate spins on the even sublattice."""
    return {v: (-s if sum(v) % 2 == 0 else s) for v, s in sigma.items()}


@dataclass
class GaugeReport:
    max_energy_error: float
    identity_holds: bool
    density: float | None = None
    density_stderr: float | None = None
    n_disorders: int = 0


def satisfied_density(region, sigma: dict, boundary: str = "free") -> float:
    """Fraction of region edges whose endpoints agree."""
    from .models import Geometry
    geo = Geometry(as_region(region), boundary)
    inside = geo.region.index
    edges = [(u, w) for u, w, _ in geo.edges() if u in inside and w in inside]
    return float(np.mean([sigma[u] == sigma[w] for u, w in edges]))


def ea_gauge_check(spec: ModelSpec, region, eta: DisorderField, trials: int = 20, seed: int = 0,
                   tol: float = 1e-12) -> GaugeReport:
    """Energy(gauge-flipped spins, negated disorder) vs energy(spins, disorder), free boundary."""
    if spec.kind != "ea":
        raise ValueError("gauge check applies to the EA model")
    reg = as_region(region)
    rng = np.random.default_rng(seed)
    neg = flip_in_box(eta, eta.region)
    worst = 0.0
    for _ in range(trials):
        sigma = {v: int(rng.choice([-1, 1])) for v in reg.vertices}
        e1 = disordered_energy(spec, reg, sigma, eta, boundary="free")
        e2 = disordered_energy(spec, reg, gauge_flip(sigma), neg, boundary="free")
        worst = max(worst, abs(e1 - e2))
    return GaugeReport(worst, worst <= tol * max(1.0, len(reg)))


def ea_satisfied_density(spec: ModelSpec, region, seeds, method: str = "auto") -> GaugeReport:
    """Disorder-averaged agreeing-edge density at free-boundary ground states."""
    from .disorder import sample_field
    reg = as_region(region)
    vals = []
    for s in seeds:
        eta = sample_field(reg, spec.m, int(s))
        g = ground_state(spec, reg, "free", eta, method)
        vals.append(satisfied_density(reg, g.sigma))
    vals = np.array(vals)
    se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return GaugeReport(0.0, True, float(vals.mean()), se, len(vals))


__all__ = ["GroundResult", "AnnealSchedule", "rfim_ground_state", "enumeration_ground", "local_search_ground",
           "ground_state", "ground_fluc", "ground_energy_gradient", "ground_observables", "gauge_flip",
           "ea_gauge_check", "ea_satisfied_density", "satisfied_density", "stationarity"]
