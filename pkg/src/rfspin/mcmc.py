"""Heat-bath and Metropolis samplers, error bars and convergence checks, candidate-set fluc, TI.

All samplers run a batch of B systems sharing one geometry (disorder replicas or boundary
candidates) times C independent chains, updating one colour class of sites at a time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .disorder import DisorderField, WeightFunction
from .exact import FlucReport, _diameter
from .lattice import as_region
from .models import COUPLINGS, ModelSpec, observable_table, state_values
from .system import System, compile_system, uniform_boundary


class ConvergenceError(RuntimeError):
    pass


@dataclass
class Estimate:
    mean: np.ndarray
    stderr: np.ndarray
    n_samples: int
    autocorrelation_time: float
    rhat: float
    converged: bool = True
    chain_means: np.ndarray | None = field(default=None, repr=False)

    def within(self, value, k: float = 4.0, floor: float = 0.0) -> np.ndarray:
        return np.abs(np.asarray(self.mean) - value) <= k * np.asarray(self.stderr) + floor


@dataclass(eq=False)
class Batch:
    """Stacked per-system arrays over a shared geometry."""

    template: System
    coef: np.ndarray      # (B, N, D)
    site: np.ndarray      # (B, N, S) or (B, N, n)
    tau: np.ndarray       # (B, nb) or (B, nb, n)
    ecoef: np.ndarray     # (B, E)

    @property
    def B(self) -> int:
        return len(self.coef)

    @classmethod
    def of(cls, systems: list[System]) -> "Batch":
        t = systems[0]
        for s in systems[1:]:
            if not (np.array_equal(s.nbr, t.nbr) and s.outer == t.outer and s.region == t.region):
                raise ValueError("batched systems must share their geometry")
        return cls(t, np.stack([s.coef for s in systems]), np.stack([s.site for s in systems]),
                   np.stack([s.tau for s in systems]), np.stack([s.ecoef for s in systems]))


@dataclass
class ChainState:
    batch: Batch
    X: np.ndarray                 # (B, C, N) states or (B, C, N, n) unit vectors
    rng: np.random.Generator
    sweep_count: int = 0
    step: np.ndarray | None = None  # Metropolis aperture per system
    accepted: float = 0.0
    proposed: float = 0.0

    @property
    def spec(self) -> ModelSpec:
        return self.batch.template.spec

    def extended(self) -> np.ndarray:
        b = self.batch
        B, C = self.X.shape[:2]
        if self.spec.discrete:
            T = np.broadcast_to(b.tau[:, None, :], (B, C, b.tau.shape[1]))
            return np.concatenate([self.X, T, np.zeros((B, C, 1), dtype=self.X.dtype)], axis=2)
        n = self.spec.n
        T = np.broadcast_to(b.tau[:, None], (B, C) + b.tau.shape[1:])
        return np.concatenate([self.X, T, np.zeros((B, C, 1, n))], axis=2)


def init_chains(batch: Batch, n_chains: int, seed: int, start: str = "random") -> ChainState:
    rng = np.random.default_rng(seed)
    t = batch.template
    B, N = batch.B, t.N
    if t.spec.discrete:
        if start == "random":
            X = rng.integers(t.S, size=(B, n_chains, N))
        elif start == "boundary":
            # each system starts from its most frequent boundary state
            first = [np.bincount(batch.tau[b], minlength=t.S).argmax() if batch.tau.shape[1] else 0
                     for b in range(B)]
            X = np.broadcast_to(np.array(first)[:, None, None], (B, n_chains, N)).copy()
        else:
            X = np.full((B, n_chains, N), int(start), dtype=np.int64)
    else:
        g = rng.standard_normal((B, n_chains, N, t.spec.n))
        X = g / np.linalg.norm(g, axis=-1, keepdims=True)
    return ChainState(batch, X.astype(np.int64) if t.spec.discrete else X, rng, step=np.full(B, 1.0))


def _local_energies(state: ChainState, sites: np.ndarray, beta: float) -> np.ndarray:
    """Energy of each candidate state at `sites`; shape (B, C, |sites|, S)."""
    b, t = state.batch, state.batch.template
    z = state.extended()
    K = t.kernel
    nb_states = z[:, :, t.nbr[sites]]                       # (B, C, A, D)
    e = np.einsum("bad,bcads->bcas", b.coef[:, sites], K[:, nb_states].transpose(1, 2, 3, 4, 0))
    return e + b.site[:, None, sites, :]


def _heat_bath(state: ChainState, sites: np.ndarray, beta: float) -> None:
    e = _local_energies(state, sites, beta)
    logits = -beta * (e - e.min(axis=-1, keepdims=True))
    p = np.exp(logits)
    cdf = np.cumsum(p, axis=-1)
    u = state.rng.random(cdf.shape[:-1] + (1,)) * cdf[..., -1:]
    new = np.minimum((u > cdf).sum(axis=-1), cdf.shape[-1] - 1)
    state.X[:, :, sites] = new


def _metropolis_discrete(state: ChainState, sites: np.ndarray, beta: float) -> None:
    e = _local_energies(state, sites, beta)
    S = e.shape[-1]
    cur = state.X[:, :, sites]
    prop = (cur + state.rng.integers(1, S, size=cur.shape)) % S
    de = np.take_along_axis(e, prop[..., None], -1)[..., 0] - np.take_along_axis(e, cur[..., None], -1)[..., 0]
    acc = np.log(state.rng.random(cur.shape)) < -beta * de
    state.X[:, :, sites] = np.where(acc, prop, cur)
    state.accepted += acc.mean()
    state.proposed += 1


def _on_local(state: ChainState, sites: np.ndarray, vec: np.ndarray, z: np.ndarray) -> np.ndarray:
    b, t = state.batch, state.batch.template
    phi = COUPLINGS[t.spec.coupling][0]
    nbv = z[:, :, t.nbr[sites]]                             # (B, C, A, D, n)
    dots = np.einsum("bcan,bcadn->bcad", vec, nbv)
    mask = (t.nbr[sites] < t.pad)[None, None]
    pair = np.where(mask, b.coef[:, None, sites] * phi(dots), 0.0).sum(axis=-1)
    return pair - np.einsum("bcan,ban->bca", vec, b.site[:, sites])


def _metropolis_on(state: ChainState, sites: np.ndarray, beta: float) -> None:
    z = state.extended()
    cur = state.X[:, :, sites]
    g = state.rng.standard_normal(cur.shape)
    prop = cur + state.step[:, None, None, None] * g
    prop /= np.linalg.norm(prop, axis=-1, keepdims=True)
    de = _on_local(state, sites, prop, z) - _on_local(state, sites, cur, z)
    acc = np.log(state.rng.random(de.shape)) < -beta * de
    state.X[:, :, sites] = np.where(acc[..., None], prop, cur)
    state.accepted += acc.mean()
    state.proposed += 1


def sweep(state: ChainState, kernel: str = "auto", beta: float | None = None) -> ChainState:
    """One full sweep, colour class by colour class (in place; returns the state)."""
    spec = state.spec
    beta = spec.beta if beta is None else beta
    if kernel == "auto":
        kernel = "heat_bath" if spec.discrete else "metropolis"
    if kernel == "heat_bath" and not spec.discrete:
        raise ValueError("heat-bath needs a discrete spin space")
    for sites in state.batch.template.colors:
        if not spec.discrete:
            _metropolis_on(state, sites, beta)
        elif kernel == "heat_bath":
            _heat_bath(state, sites, beta)
        else:
            _metropolis_discrete(state, sites, beta)
    state.sweep_count += 1
    return state


def _tune_step(state: ChainState, sites_acc: np.ndarray) -> None:
    state.step = np.clip(state.step * np.exp(sites_acc - 0.4), 1e-3, 4.0)


# ---------------------------------------------------------------- diagnostics


def integrated_time(trace: np.ndarray) -> float:
    """Sokal-windowed integrated autocorrelation time of a (n, chains) trace, chains averaged."""
    n = trace.shape[0]
    if n < 4:
        return 1.0
    x = trace - trace.mean(axis=0, keepdims=True)
    var = (x**2).mean()
    if var <= 1e-300:
        return 1.0
    f = np.fft.rfft(x, n=2 * n, axis=0)
    acf = np.fft.irfft(f * np.conj(f), axis=0)[:n].mean(axis=1)
    acf /= acf[0]
    tau = 1.0
    for M in range(1, n):
        tau += 2.0 * acf[M]
        if M >= 5.0 * tau:
            break
    return max(float(tau), 1.0)


def split_rhat(trace: np.ndarray) -> float:
    """Split-chain potential scale reduction for a (n, chains) trace."""
    n = trace.shape[0] // 2
    if n < 2:
        return np.inf
    seqs = np.concatenate([trace[:n], trace[n:2 * n]], axis=1)
    means = seqs.mean(axis=0)
    W = seqs.var(axis=0, ddof=1).mean()
    Bv = n * means.var(ddof=1)
    if W <= 1e-300:
        return 1.0 if Bv <= 1e-300 else np.inf
    var_plus = (n - 1) / n * W + Bv / n
    return float(np.sqrt(var_plus / W))


def observable_span(spec: ModelSpec) -> np.ndarray:
    """max - min of each observable component over single-site states."""
    if spec.kind in ("ea", "on"):
        return np.full(spec.m, 2.0)
    F = observable_table(spec)
    return F.max(axis=0) - F.min(axis=0)


def _stderr(chain_means: np.ndarray, n: int, span) -> np.ndarray:
    """Spread of independent chain means, floored at one sample quantum span/(n*C).

    The floor keeps an observable that never moved during the run (a rare flip not yet
    seen) from reporting a zero error bar.
    """
    C = chain_means.shape[0]
    se = chain_means.std(axis=0, ddof=1) / np.sqrt(C) if C > 1 else np.full(chain_means.shape[1:], np.inf)
    if span is None:
        return se
    return np.sqrt(se**2 + (np.asarray(span) / (n * C)) ** 2)


def summarize(trace: np.ndarray, strict: bool = False, span=None) -> Estimate:
    """trace (n, C, k): per-component estimate from independent chain means."""
    n, C, k = trace.shape
    chain_means = trace.mean(axis=0)
    mean = chain_means.mean(axis=0)
    stderr = _stderr(chain_means, n, span)
    taus = [integrated_time(trace[:, :, j]) for j in range(k)]
    rhats = [split_rhat(trace[:, :, j]) for j in range(k)]
    tau, rhat = max(taus), max(rhats)
    ok = bool(rhat < 1.1 and n >= 10 * tau)
    if strict and not ok:
        raise ConvergenceError(f"R-hat {rhat:.3f}, {n} samples vs autocorrelation time {tau:.1f}")
    return Estimate(mean, stderr, n, tau, rhat, ok, chain_means)


# ---------------------------------------------------------------- observables


def _batch_observables(state: ChainState) -> np.ndarray:
    """(B, C, N, m) site observables."""
    spec = state.spec
    t = state.batch.template
    if spec.kind == "ea":
        z = state.extended()
        s = 2.0 * z - 1.0
        s[:, :, t.pad] = 0.0
        return s[:, :, : t.N, None] * s[:, :, t.partner]
    if spec.discrete:
        return observable_table(spec)[state.X]
    return state.X


@dataclass
class SampleRun:
    state: ChainState
    trace: np.ndarray            # (n, B, C, k) of the weighted statistic
    site_sums: np.ndarray        # (B, C, N, m) sums of site observables over recorded sweeps
    n: int
    span: np.ndarray             # (k,) range of the recorded statistic

    def estimate(self, b: int = 0, strict: bool = False) -> Estimate:
        return summarize(self.trace[:, b], strict, self.span)

    def site_estimate(self, b: int = 0) -> tuple[np.ndarray, np.ndarray]:
        cm = self.site_sums[b] / self.n
        span = np.broadcast_to(observable_span(self.state.spec), cm.shape[1:])
        return cm.mean(axis=0), _stderr(cm, self.n, span)

    def save_trace(self, path) -> None:
        np.save(path, self.trace)


def run_batch(batch: Batch, n_sweeps: int, burn_in: int, n_chains: int, seed: int,
              Wk: np.ndarray | None = None, kernel: str = "auto", start: str = "random") -> SampleRun:
    """Sample all systems of the batch; record sum_v W_v . f_v each sweep (default: site average)."""
    t = batch.template
    spec = t.spec
    N, m = t.N, spec.m
    if Wk is None:
        Wk = np.repeat(np.eye(m)[None], N, axis=0) / N
    state = init_chains(batch, n_chains, seed, start)
    for i in range(burn_in):
        a0, p0 = state.accepted, state.proposed
        sweep(state, kernel)
        if not spec.discrete and state.proposed > p0 and i < burn_in * 0.8:
            _tune_step(state, np.full(batch.B, (state.accepted - a0) / (state.proposed - p0)))
    k = Wk.shape[2]
    trace = np.empty((n_sweeps, batch.B, n_chains, k))
    sums = np.zeros((batch.B, n_chains, N, m))
    for i in range(n_sweeps):
        sweep(state, kernel)
        f = _batch_observables(state)
        sums += f
        trace[i] = np.einsum("bcnm,nmk->bck", f, Wk)
    span = np.einsum("nmk,m->k", np.abs(Wk), observable_span(spec))
    return SampleRun(state, trace, sums, n_sweeps, span)


def sample(spec: ModelSpec, region, tau, eta: DisorderField, n_sweeps: int = 2000, burn_in: int = 500,
           n_chains: int = 16, seed: int = 0, kernel: str = "auto") -> SampleRun:
    return run_batch(Batch.of([compile_system(spec, region, tau, eta)]), n_sweeps, burn_in, n_chains, seed,
                     kernel=kernel)


def site_expectations(spec: ModelSpec, region, tau, eta: DisorderField, **kw) -> tuple[np.ndarray, np.ndarray]:
    """(N, m) means and standard errors of the single-site observables."""
    return sample(spec, region, tau, eta, **kw).site_estimate(0)


def candidate_boundaries(spec: ModelSpec, region) -> list[dict]:
    """Uniform boundary conditions, one per spin state (two antipodal ones for O(n))."""
    reg = as_region(region)
    if spec.discrete:
        return [uniform_boundary(spec, reg, v) for v in state_values(spec)]
    e = np.zeros(spec.n)
    e[0] = 1.0
    return [uniform_boundary(spec, reg, tuple(e)), uniform_boundary(spec, reg, tuple(-e))]


def estimate_fluc(spec: ModelSpec, region, eta: DisorderField, candidates: list[dict] | None = None,
                  weight: WeightFunction | None = None, n_sweeps: int = 2000, burn_in: int = 500,
                  n_chains: int = 16, seed: int = 0, strict: bool = True,
                  start: str = "random") -> tuple[FlucReport, Estimate]:
    """Largest pairwise distance of MCMC-estimated averages over a candidate set of boundaries.

    Always a lower bound of the sup over all boundary conditions, except for monotone models
    with the two extremal candidates.
    """
    reg = as_region(region)
    cands = candidate_boundaries(spec, reg) if candidates is None else candidates
    if len(cands) < 2:
        raise ValueError("need at least two candidate boundary conditions")
    systems = [compile_system(spec, reg, c, eta) for c in cands]
    N, m = len(reg), spec.m
    if weight is not None:
        Wk = weight.values_on(reg)[:, :, None] / N
    else:
        Wk = np.repeat(np.eye(m)[None], N, axis=0) / N
    run = run_batch(Batch.of(systems), n_sweeps, burn_in, n_chains, seed, Wk, start=start)
    ests = [run.estimate(b) for b in range(len(cands))]
    bad = [e for e in ests if not e.converged]
    if bad and strict:
        raise ConvergenceError(f"{len(bad)} candidate chains failed the convergence gate")
    A = np.stack([e.mean for e in ests])
    if A.shape[1] == 1:
        i, j = int(np.argmax(A[:, 0])), int(np.argmin(A[:, 0]))
        fl = float(A[i, 0] - A[j, 0])
    else:
        fl, i, j = _diameter(A)
    se = float(np.sqrt(np.sum(ests[i].stderr**2) + np.sum(ests[j].stderr**2)))
    per = A.max(axis=0) - A.min(axis=0)
    monotone = spec.ferromagnetic_ising and candidates is None and (weight is None or np.all(Wk >= 0))
    report = FlucReport(fl, per, (cands[i], cands[j]), "weighted" if weight is not None else "full_sup",
                        "mcmc", A.max(axis=0), A.min(axis=0), len(cands), lower_bound=not monotone)
    est = Estimate(np.array([fl]), np.array([se]), run.n, max(e.autocorrelation_time for e in ests),
                   max(e.rhat for e in ests), not bad)
    return report, est


def fe_difference_ti(spec: ModelSpec, region, tau, eta_a: DisorderField, eta_b: DisorderField,
                     steps: int = 6, n_sweeps: int = 2000, burn_in: int = 500, n_chains: int = 16,
                     seed: int = 0, strict: bool = False) -> Estimate:
    """FE(eta_b) - FE(eta_a) by Gauss-Legendre thermodynamic integration along the segment."""
    reg = as_region(region)
    eta_a.check_compatible(eta_b)
    diff = eta_a.values_on(reg) - eta_b.values_on(reg)
    N = len(reg)
    if not np.any(diff):
        z = np.zeros(1)
        return Estimate(z, z, 0, 1.0, 1.0, True)
    nodes, weights = np.polynomial.legendre.leggauss(steps)
    ts, ws = 0.5 * (nodes + 1.0), 0.5 * weights
    systems = []
    for t in ts:
        eta_t = eta_a.with_values_on(reg, eta_a.values_on(reg) - t * diff, f"ti {t:.6f}")
        systems.append(compile_system(spec, reg, tau, eta_t))
    Wk = (spec.lam / N) * diff[:, :, None]
    run = run_batch(Batch.of(systems), n_sweeps, burn_in, n_chains, seed, Wk)
    # integrand per chain, combined over nodes; chains are independent across nodes too
    per_chain = np.einsum("b,nbc->nc", ws, run.trace[:, :, :, 0])
    est = summarize(per_chain[:, :, None], strict, [float(np.sum(ws) * run.span[0])])
    ests = [run.estimate(b) for b in range(len(ts))]
    est.converged = est.converged and all(e.converged for e in ests)
    if strict and not est.converged:
        raise ConvergenceError("thermodynamic integration chains did not converge")
    return est


def chain_energies(state: ChainState, b: int = 0) -> np.ndarray:
    """Energy of every chain of batch member b (O(n) and discrete)."""
    t = state.batch.template
    sysb = t.with_tau(state.batch.tau[b])
    sysb.site = state.batch.site[b]
    sysb.coef = state.batch.coef[b]
    sysb.ecoef = state.batch.ecoef[b]
    return sysb.energy(state.X[b])


__all__ = ["ConvergenceError", "Estimate", "ChainState", "Batch", "init_chains", "sweep", "sample",
           "run_batch", "summarize", "split_rhat", "integrated_time", "estimate_fluc",
           "fe_difference_ti", "site_expectations", "candidate_boundaries", "chain_energies"]
