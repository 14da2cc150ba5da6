"""Array form of a model on a region: neighbour tables, couplings and site terms.

Sites of the region are numbered 0..N-1 in lexicographic order, the fixed outer
sites that actually interact with the region follow as N..N+nb-1, and one padding
slot (coupling 0) closes the table. Discrete spins are stored as state indices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .disorder import DisorderField
from .lattice import Region, Vertex, as_region
from .models import (COUPLINGS, Geometry, ModelSpec, coupling_kernel, observable_table, spin_vector,
                     state_index)


@dataclass(eq=False)
class System:
    spec: ModelSpec
    region: Region
    boundary: str
    outer: list[Vertex]
    nbr: np.ndarray          # (N, D) into the extended index space
    coef: np.ndarray         # (N, D)
    ia: np.ndarray           # (E,) region index of each edge's first end
    ib: np.ndarray           # (E,) extended index of the other end
    ecoef: np.ndarray        # (E,)
    site: np.ndarray         # (N, S) site energies, or (N, n) field vectors for O(n)
    tau: np.ndarray          # (nb,) state indices, or (nb, n) vectors for O(n)
    partner: np.ndarray | None  # (N, d) extended index of v+e_i for EA observables
    colors: list[np.ndarray]

    @property
    def N(self) -> int:
        return len(self.region)

    @property
    def nb(self) -> int:
        return len(self.outer)

    @property
    def S(self) -> int:
        return self.spec.n_spin_states

    @property
    def pad(self) -> int:
        return self.N + self.nb

    @property
    def kernel(self) -> np.ndarray:
        return coupling_kernel(self.spec)

    def extended(self, X: np.ndarray, T: np.ndarray | None = None) -> np.ndarray:
        """Stack region states, outer states and the padding slot along the site axis."""
        B = X.shape[0]
        T = self.tau if T is None else T
        if self.spec.discrete:
            Tb = np.broadcast_to(T, (B, self.nb))
            return np.concatenate([X, Tb, np.zeros((B, 1), dtype=X.dtype)], axis=1)
        Tb = np.broadcast_to(T, (B, self.nb, self.spec.n))
        return np.concatenate([X, Tb, np.zeros((B, 1, self.spec.n))], axis=1)

    def energy(self, X: np.ndarray, T: np.ndarray | None = None) -> np.ndarray:
        z = self.extended(X, T)
        if self.spec.discrete:
            K = self.kernel
            e = (self.ecoef * K[z[:, self.ia], z[:, self.ib]]).sum(axis=1)
            return e + self.site[np.arange(self.N), X].sum(axis=1)
        phi = COUPLINGS[self.spec.coupling][0]
        dots = np.einsum("bek,bek->be", z[:, self.ia], z[:, self.ib])
        return (self.ecoef * phi(dots)).sum(axis=1) - np.einsum("bnk,nk->b", X, self.site)

    def observables(self, X: np.ndarray, T: np.ndarray | None = None) -> np.ndarray:
        """f_v for every site, shape (B, N, m)."""
        spec = self.spec
        if spec.kind == "ea":
            z = self.extended(X, T)
            s = 2.0 * z - 1.0
            s[:, self.pad] = 0.0
            return s[:, : self.N, None] * s[:, self.partner]
        if spec.discrete:
            return observable_table(spec)[X]
        return np.asarray(X, dtype=np.float64)

    def encode(self, σ: dict) -> np.ndarray:
        verts = self.region.vertices
        if self.spec.discrete:
            return np.array([state_index(self.spec, σ[v]) for v in verts], dtype=np.int64)
        return np.array([spin_vector(self.spec, σ[v]) for v in verts])

    def decode(self, x: np.ndarray) -> dict:
        from .models import state_values
        verts = self.region.vertices
        if self.spec.discrete:
            vals = state_values(self.spec)
            return {v: vals[int(i)] for v, i in zip(verts, x)}
        return {v: tuple(float(c) for c in row) for v, row in zip(verts, x)}

    def with_tau(self, tau: np.ndarray) -> "System":
        out = System(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        out.tau = np.asarray(tau)
        return out


def _greedy_colors(n: int, adj: list[set[int]]) -> list[np.ndarray]:
    color = [-1] * n
    for a in range(n):
        used = {color[b] for b in adj[a] if color[b] >= 0}
        c = 0
        while c in used:
            c += 1
        color[a] = c
    arr = np.array(color)
    return [np.flatnonzero(arr == c) for c in range(arr.max() + 1)] if n else []


def compile_system(spec: ModelSpec, region, tau, eta: DisorderField | None) -> System:
    """tau is a boundary configuration dict, or the string "free" / "periodic"."""
    boundary = tau if isinstance(tau, str) else "fixed"
    geo = Geometry(region, boundary)
    reg = geo.region
    N = len(reg)
    inside = reg.index
    if eta is None:
        eta_block = np.zeros((N, spec.m))
    else:
        if eta.m != spec.m:
            raise ValueError(f"field has m={eta.m}, model needs m={spec.m}")
        eta_block = eta.values_on(reg)
    h = spec.h_vec

    # edge list with structural coefficients
    edges = []
    for u, w, i in geo.edges():
        if spec.kind == "ea":
            c = h[0] + (spec.lam * eta_block[inside[u], i] if u in inside else 0.0)
            if u not in inside and h[0] == 0.0:
                continue
        elif spec.kind == "rfim":
            c = -1.0 if spec.antiferro else 1.0
        else:
            c = 1.0
        edges.append((u, w, i, c))

    outer: dict[Vertex, int] = {}
    for u, w, _, _ in edges:
        for x in (u, w):
            if x not in inside and x not in outer:
                outer[x] = 0
    if spec.kind == "ea" and boundary == "fixed":
        for v in reg.vertices:
            for i in range(spec.d):
                x = geo.shift(v, i, +1)
                if x not in inside and x not in outer:
                    outer[x] = 0
    outer_list = sorted(outer)
    ext = dict(inside)
    for j, x in enumerate(outer_list):
        ext[x] = N + j
    pad = N + len(outer_list)

    ia, ib, ec = [], [], []
    inc: list[list[tuple[int, float]]] = [[] for _ in range(N)]
    adj: list[set[int]] = [set() for _ in range(N)]
    for u, w, _, c in edges:
        a, b = ext[u], ext[w]
        if a >= N:
            a, b = b, a
        ia.append(a)
        ib.append(b)
        ec.append(c)
        inc[a].append((b, c))
        if b < N:
            inc[b].append((a, c))
            adj[a].add(b)
            adj[b].add(a)
    D = max((len(x) for x in inc), default=0)
    D = max(D, 1)
    nbr = np.full((N, D), pad, dtype=np.int64)
    coef = np.zeros((N, D))
    for a, lst in enumerate(inc):
        for j, (b, c) in enumerate(lst):
            nbr[a, j] = b
            coef[a, j] = c

    partner = None
    if spec.kind == "ea":
        partner = np.full((N, spec.d), pad, dtype=np.int64)
        for v in reg.vertices:
            for i in range(spec.d):
                x = geo.shift(v, i, +1)
                if x is not None and x in ext:
                    partner[inside[v], i] = ext[x]

    if spec.discrete:
        if spec.kind == "ea":
            site = np.zeros((N, 2))
        else:
            F = observable_table(spec)                   # (S, m)
            hh = h if spec.kind != "rfim" else h[:1]
            site = -(spec.lam * eta_block) @ F.T - (F @ hh)[None, :]
    else:
        site = spec.lam * eta_block + h[None, :]

    if boundary == "fixed":
        try:
            if spec.discrete:
                tau_arr = np.array([state_index(spec, tau[x]) for x in outer_list], dtype=np.int64)
            else:
                tau_arr = np.array([spin_vector(spec, tau[x]) for x in outer_list]).reshape(-1, spec.n)
        except KeyError as exc:
            raise KeyError(f"boundary configuration is missing vertex {exc.args[0]}") from None
    else:
        tau_arr = np.zeros(0, dtype=np.int64) if spec.discrete else np.zeros((0, spec.n))

    # parity colouring when it is proper, greedy otherwise (odd periodic sides)
    parity = reg.coords.sum(axis=1) % 2 if N else np.zeros(0, dtype=int)
    if all(parity[a] != parity[b] for a in range(N) for b in adj[a]):
        colors = [np.flatnonzero(parity == c) for c in (0, 1) if np.any(parity == c)]
    else:
        colors = _greedy_colors(N, adj)

    return System(spec, reg, boundary, outer_list, nbr, coef, np.array(ia, dtype=np.int64),
                  np.array(ib, dtype=np.int64), np.array(ec), site, tau_arr, partner, colors)


def uniform_boundary(spec: ModelSpec, region, value) -> dict:
    """Constant configuration on the outer layer relevant to the model."""
    reg = as_region(region)
    geo = Geometry(reg, "fixed")
    sites = set(geo.outer_sites())
    if spec.kind == "ea":
        for v in reg.vertices:
            for i in range(spec.d):
                x = geo.shift(v, i, +1)
                if x not in reg:
                    sites.add(x)
    return {x: value for x in sorted(sites)}


def outer_layer(spec: ModelSpec, region) -> list[Vertex]:
    return sorted(uniform_boundary(spec, region, 0).keys())
