"""Spin-wave rotations for continuous-symmetry models: the ramp profile, rotated spins and
fields, the pointwise two-rotation energy inequality and free-energy gap measurements."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .disorder import DisorderField, flip_in_box, sample_field
from .exact import exact_gibbs
from .lattice import BoxRegion, Vertex, as_region, scale_box
from .mcmc import Estimate
from .models import COUPLINGS, Geometry, ModelSpec, spin_vector, state_values
from .system import uniform_boundary

# sup of d^2/dx^2 Psi(cos x) over rotations, per coupling (Taylor constant of the edge excess)
TAYLOR_CONSTANTS = {"neg_dot": 1.0, "neg_dot_sq": 4.0}


def _check_symmetric(spec: ModelSpec) -> None:
    if spec.kind not in ("on", "clock"):
        raise ValueError("spin-wave rotations need a rotation-invariant O(n) or clock model")
    if spec.coupling not in TAYLOR_CONSTANTS:
        raise ValueError(f"no Taylor constant for coupling {spec.coupling!r}")


def plane_rotation(angle: float, n: int, axis: int = 0) -> np.ndarray:
    """Rotation by `angle` in the (e_axis, e_{axis+1 mod n}) plane; angle pi sends e_axis to -e_axis."""
    if n < 2:
        raise ValueError("rotations need n >= 2")
    i, j = axis % n, (axis + 1) % n
    M = np.eye(n)
    c, s = math.cos(angle), math.sin(angle)
    M[i, i], M[i, j], M[j, i], M[j, j] = c, -s, s, c
    return M


@dataclass(frozen=True)
class RotationProfile:
    """Angles pi on the inner box, zero off its double, linear in sup-distance between."""

    inner: BoxRegion
    outer: BoxRegion
    double: BoxRegion
    ramp: int           # side length of the inner box; the ramp spans half of it
    c_theta: float      # max neighbour increment times the ramp length
    axis: int = 0

    def theta(self, v) -> float:
        v = tuple(v)
        if v not in self.double:
            return 0.0
        c = self.double.center
        dist = self.double.half_side + 1 - max(abs(a - b) for a, b in zip(v, c))
        return math.pi * min(2.0 * dist / self.ramp, 1.0)

    def angles(self, vertices) -> np.ndarray:
        return np.array([self.theta(v) for v in vertices])

    def max_increment(self) -> float:
        geo = Geometry(self.outer, "fixed")
        return max((abs(self.theta(u) - self.theta(w)) for u, w, _ in geo.edges()), default=0.0)


def make_profile(inner: BoxRegion, outer: BoxRegion, axis: int = 0) -> RotationProfile:
    if inner.d != outer.d or not inner.is_cube:
        raise ValueError("inner box must be a cube of the same dimension")
    double = scale_box(inner, 2)
    if not outer.contains_box(double):
        raise ValueError("the doubled inner box does not fit in the outer box")
    ramp = 2 * inner.half_side + 1
    prof = RotationProfile(inner, outer, double, ramp, 0.0, axis)
    return RotationProfile(inner, outer, double, ramp, prof.max_increment() * ramp, axis)


def _as_vectors(spec: ModelSpec, sigma: dict) -> dict:
    if spec.kind == "clock":
        return {v: spin_vector(spec, s) for v, s in sigma.items()}
    return {v: np.asarray(s, dtype=np.float64) for v, s in sigma.items()}


def rotate(obj, profile: RotationProfile, direction: int = +1, spec: ModelSpec | None = None):
    """Apply r_{+theta_v} (direction +1) or r_{-theta_v} (direction -1) site by site.

    Accepts a DisorderField or a dict of spin vectors (clock indices are embedded when `spec` is given).
    """
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    if isinstance(obj, DisorderField):
        n = obj.m
        out = np.empty_like(obj.values)
        for k, v in enumerate(obj.region.vertices):
            out[k] = plane_rotation(direction * profile.theta(v), n, profile.axis) @ obj.values[k]
        return DisorderField(obj.region, out, obj.seed, obj.history + ("rotate",))
    vecs = _as_vectors(spec, obj) if spec is not None else {v: np.asarray(s, float) for v, s in obj.items()}
    return {v: plane_rotation(direction * profile.theta(v), len(s), profile.axis) @ s for v, s in vecs.items()}


def continuous_energy(spec: ModelSpec, region, sigma: dict, eta: DisorderField, h=None) -> float:
    """Fixed-boundary energy with spins as vectors; sigma must cover the region and its outer layer."""
    _check_symmetric(spec)
    reg = as_region(region)
    geo = Geometry(reg, "fixed")
    phi = COUPLINGS[spec.coupling][0]
    e = 0.0
    for u, w, _ in geo.edges():
        e += float(phi(np.dot(sigma[u], sigma[w])))
    hv = spec.h_vec if h is None else np.broadcast_to(np.asarray(h, float), (spec.m,))
    eta_block = eta.values_on(reg)
    S = np.stack([sigma[v] for v in reg.vertices])
    e -= float(np.sum((spec.lam * eta_block + hv) * S))
    return e


def mw_budget(spec: ModelSpec, profile: RotationProfile, h=None) -> float:
    """C * sum over edges of (dtheta)^2 + sum over the doubled box of 2(1 - cos theta)|h|."""
    _check_symmetric(spec)
    geo = Geometry(profile.outer, "fixed")
    grad = sum((profile.theta(u) - profile.theta(w)) ** 2 for u, w, _ in geo.edges())
    hv = spec.h_vec if h is None else np.broadcast_to(np.asarray(h, float), (spec.m,))
    hn = float(np.linalg.norm(hv))
    field = 0.0
    if hn > 0:
        field = sum(2.0 * (1.0 - math.cos(profile.theta(v))) * hn for v in profile.double.vertices)
    return TAYLOR_CONSTANTS[spec.coupling] * grad + field


def mw_pointwise_check(spec: ModelSpec, outer: BoxRegion, inner: BoxRegion, sigma: dict, eta: DisorderField,
                       h=None, axis: int = 0) -> tuple[float, float]:
    """(H^{R eta}(R sigma) + H^{R~ eta}(R~ sigma) - 2 H^{eta}(sigma), budget)."""
    _check_symmetric(spec)
    prof = make_profile(inner, outer, axis)
    vecs = _as_vectors(spec, sigma)
    plus, minus = rotate(vecs, prof, +1), rotate(vecs, prof, -1)
    eta_p, eta_m = rotate(eta, prof, +1), rotate(eta, prof, -1)
    excess = (continuous_energy(spec, outer, plus, eta_p, h) + continuous_energy(spec, outer, minus, eta_m, h)
              - 2.0 * continuous_energy(spec, outer, vecs, eta, h))
    return excess, mw_budget(spec, prof, h)


def random_configuration(spec: ModelSpec, region, rng: np.random.Generator) -> dict:
    """Uniform spins on the region and its outer layer."""
    reg = as_region(region)
    sites = reg.vertices + Geometry(reg, "fixed").outer_sites()
    if spec.kind == "clock":
        return {v: int(rng.integers(spec.n_states)) for v in sites}
    g = rng.standard_normal((len(sites), spec.n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return {v: g[k] for k, v in enumerate(sites)}


def budget_exponent(spec: ModelSpec, half_sides=(2, 4, 8), outer_half: int | None = None) -> tuple[float, list]:
    """Log-log slope of the budget against the inner half side, with the outer box held fixed."""
    d = spec.d
    outer_half = outer_half if outer_half is not None else 2 * max(half_sides) + 2
    outer = BoxRegion.cube(outer_half, d)
    budgets = [mw_budget(spec, make_profile(BoxRegion.cube(a, d), outer), h=0.0) for a in half_sides]
    slope = float(np.polyfit(np.log(half_sides), np.log(budgets), 1)[0])
    return slope, budgets


# ---------------------------------------------------------------- free-energy gap


@dataclass
class GapResult:
    estimate: Estimate
    reversed: Estimate
    budget: float          # normalised: raw budget / (2 |outer|)
    raw_budget: float
    gaps: np.ndarray

    def holds(self, k: float = 4.0) -> bool:
        return float(self.estimate.mean[0]) <= self.budget + k * float(self.estimate.stderr[0])


def _mean_estimate(x: np.ndarray) -> Estimate:
    n = len(x)
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return Estimate(np.array([float(np.mean(x))]), np.array([se]), n, 1.0, 1.0, True)


def mw_fe_gap(spec: ModelSpec, outer: BoxRegion, inner: BoxRegion | None, tau=None, replicas: int = 200,
              h=None, seed: int = 0) -> GapResult:
    """Disorder average of FE(eta~) - FE(eta), eta~ = eta negated on the inner box, exact FE per disorder."""
    if spec.kind != "clock" or spec.m != 2:
        raise ValueError("free-energy gaps are computed for the planar clock model")
    if h is not None:
        spec = spec.with_(h=tuple(np.broadcast_to(np.asarray(h, float), (2,))))
    tau = tau if tau is not None else uniform_boundary(spec, outer, state_values(spec)[0])
    gaps = np.zeros(replicas)
    for r in range(replicas):
        eta = sample_field(outer, 2, seed + r)
        if inner is None:
            continue
        flipped = flip_in_box(eta, inner)
        gaps[r] = (exact_gibbs(spec, outer, tau, flipped).free_energy
                   - exact_gibbs(spec, outer, tau, eta).free_energy)
    raw = 0.0 if inner is None else mw_budget(spec, make_profile(inner, outer))
    return GapResult(_mean_estimate(gaps), _mean_estimate(-gaps), raw / (2 * len(outer)), raw, gaps)


GAP_COLUMNS = ["d", "L", "ell", "n_states", "h", "gap", "budget", "stderr"]


def gap_rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=GAP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: r[k] for k in GAP_COLUMNS})
    return buf.getvalue()


# ---------------------------------------------------------------- magnetization


@dataclass
class MagnetizationResult:
    mean: np.ndarray        # (N, m) disorder mean of <sigma_v>
    stderr: np.ndarray      # (N, m)
    magnitudes: np.ndarray  # per replica |average over the region of <sigma_v>|
    vertices: list[Vertex]

    def magnitude_estimate(self) -> Estimate:
        return _mean_estimate(self.magnitudes)

    def zero_within(self, k: float = 4.0) -> bool:
        se = np.maximum(self.stderr, 1e-15)
        return bool(np.all(np.abs(self.mean) <= k * se))

    def translation_covariant(self, k: float = 4.0) -> bool:
        """Per-vertex means agree with their average within k combined stderr."""
        avg = self.mean.mean(axis=0)
        se = np.maximum(self.stderr, 1e-15)
        return bool(np.all(np.abs(self.mean - avg) <= k * np.sqrt(se**2 + (se**2).mean(axis=0))))


def disorder_magnetization(spec: ModelSpec, region, tau, replicas: int = 200, seed: int = 0,
                           window=None) -> MagnetizationResult:
    """Exact <sigma_v> per disorder replica; magnitudes average over `window` (default the region)."""
    reg = as_region(region)
    win = reg if window is None else as_region(window)
    pos = [reg.index[v] for v in win.vertices]
    per = []
    mags = np.zeros(replicas)
    for r in range(replicas):
        eta = sample_field(reg, spec.m, seed + r)
        obs = exact_gibbs(spec, reg, tau, eta).obs
        per.append(obs)
        mags[r] = float(np.linalg.norm(obs[pos].mean(axis=0)))
    per = np.stack(per)
    se = per.std(axis=0, ddof=1) / math.sqrt(replicas) if replicas > 1 else np.zeros_like(per[0])
    return MagnetizationResult(per.mean(axis=0), se, mags, reg.vertices)
