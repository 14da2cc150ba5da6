"""Multi-scale good-box selection over nested box families, uncovered-vertex accounting and
the aggregation bound that turns good boxes into a bound on the whole box."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .convex import normal_quantile_t_delta
from .disorder import DisorderField, WeightFunction, sample_field
from .exact import CapExceeded, fluc_exact
from .lattice import BoxRegion, Region, as_region, box, default_l_max, dyadic_family
from .models import ModelSpec

CRITERIA = ("fluc_threshold", "weighted_fluc_threshold", "field_quantile", "always_good", "always_bad")


def density_floor_default(L: int, exponent: float = 0.25) -> float:
    """(ln ln L)^(-exponent), with ln ln L clipped below at 1 so small L give a floor of 1."""
    lnln = math.log(math.log(L)) if L > math.e else 0.0
    return max(lnln, 1.0) ** (-exponent)


@dataclass
class Verdict:
    good: bool
    value: float
    lower_bound: bool = False
    method: str = ""


@dataclass
class GoodnessCriterion:
    """Box goodness rule; every verdict reads the field on the box only."""

    kind: str
    delta: float = 0.5
    spec: ModelSpec | None = None
    weight: WeightFunction | None = None
    density_floor: float | None = None
    component: int = 0
    exact_cap: int = 2**20
    mcmc_sweeps: int = 600
    mcmc_burn: int = 300
    mcmc_chains: int = 8
    seed: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in CRITERIA:
            raise ValueError(f"unknown criterion {self.kind!r}")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.kind in ("fluc_threshold", "weighted_fluc_threshold") and self.spec is None:
            raise ValueError("fluc criteria need a model")
        if self.kind == "weighted_fluc_threshold" and self.weight is None:
            raise ValueError("weighted criterion needs a weight function")

    def key(self, region: Region, eta: DisorderField) -> tuple:
        block = eta.values[eta.positions(region)]
        return (region.digest(), hashlib.sha256(block.astype("<f8").tobytes()).hexdigest())

    def evaluate(self, region, eta: DisorderField, use_cache: bool = True) -> Verdict:
        reg = as_region(region)
        k = self.key(reg, eta) if use_cache else None
        if k is not None and k in self._cache:
            return self._cache[k]
        v = self._evaluate(reg, eta)
        if k is not None:
            self._cache[k] = v
        return v

    def _fluc(self, reg: Region, eta: DisorderField, weight: WeightFunction | None) -> Verdict:
        mode = "weighted" if weight is not None else "full_sup"
        try:
            rep = fluc_exact(self.spec, reg, eta, mode=mode, weight=weight, cap=self.exact_cap)
            return Verdict(rep.fluc <= self.delta, rep.fluc, False, rep.method)
        except CapExceeded:
            from .mcmc import estimate_fluc
            rep, _ = estimate_fluc(self.spec, reg, eta, weight=weight, n_sweeps=self.mcmc_sweeps,
                                   burn_in=self.mcmc_burn, n_chains=self.mcmc_chains, seed=self.seed,
                                   strict=False, start="boundary")
            return Verdict(rep.fluc <= self.delta, rep.fluc, True, "mcmc")

    def _evaluate(self, reg: Region, eta: DisorderField) -> Verdict:
        if self.kind == "always_good":
            return Verdict(True, 0.0)
        if self.kind == "always_bad":
            return Verdict(False, math.inf)
        if self.kind == "field_quantile":
            hat = float(eta.values_on(reg)[:, self.component].mean())
            thr = normal_quantile_t_delta(self.delta) / math.sqrt(len(reg))
            return Verdict(hat <= thr, hat, False, "field")
        if self.kind == "fluc_threshold":
            return self._fluc(reg, eta, None)
        w = WeightFunction(reg, self.weight.values_on(reg))
        floor = self.density_floor if self.density_floor is not None else 0.0
        if w.mean_square() <= floor:
            return Verdict(True, 0.0, False, "density")
        return self._fluc(reg, eta, w)


@dataclass
class PartitionReport:
    L: int
    k: int
    l_max: int
    delta: float
    root: BoxRegion
    Q: list[tuple[int, BoxRegion]]
    uncovered: Region
    evaluated: list[int]
    good: list[int]
    verdicts: dict = field(repr=False, default_factory=dict)
    lower_bound_goodness: bool = False

    @property
    def uncovered_fraction(self) -> float:
        return len(self.uncovered) / len(self.root)

    def to_dict(self) -> dict:
        return {
            "L": self.L, "k": self.k, "l_max": self.l_max, "delta": self.delta,
            "root": self.root.to_dict(),
            "Q": [dict(level=l, **b.to_dict()) for l, b in self.Q],
            "uncovered": self.uncovered.vertices,
            "per_level": [{"level": l, "evaluated": e, "good": g}
                          for l, (e, g) in enumerate(zip(self.evaluated, self.good))],
            "uncovered_fraction": self.uncovered_fraction,
            "lower_bound_goodness": self.lower_bound_goodness,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def build_partition(L: int, k: int, l_max: int | None, criterion: GoodnessCriterion, eta: DisorderField,
                    d: int = 2, root: BoxRegion | None = None) -> PartitionReport:
    """Level by level: keep the good boxes of level l that do not sit inside a kept box."""
    if k < 2:
        raise ValueError("k must be >= 2")
    l_max = default_l_max(L, k) if l_max is None else l_max
    root = root if root is not None else box(L, d)
    Q: list[tuple[int, BoxRegion]] = []
    evaluated, good = [], []
    verdicts = {}
    flagged = False
    for l in range(l_max + 1):
        ne = ng = 0
        for b in dyadic_family(L, k, l, root.d, root):
            if any(q.contains_box(b) for _, q in Q):
                continue
            v = criterion.evaluate(b, eta)
            verdicts[(l, b)] = v
            flagged |= v.lower_bound
            ne += 1
            if v.good:
                Q.append((l, b))
                ng += 1
        evaluated.append(ne)
        good.append(ng)
    covered = set()
    for _, b in Q:
        covered.update(b.vertices)
    unc = [v for v in root.vertices if v not in covered]
    uncovered = Region.from_vertices(unc, d=root.d) if unc else Region(np.zeros((0, root.d), dtype=np.int64), d=root.d)
    return PartitionReport(L, k, l_max, criterion.delta, root, Q, uncovered, evaluated, good, verdicts, flagged)


def audit_partition(report: PartitionReport) -> list[str]:
    """Invariant violations (empty list when the report is consistent)."""
    problems = []
    boxes = [b for _, b in report.Q]
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            if not boxes[i].region.isdisjoint(boxes[j].region):
                problems.append(f"boxes {boxes[i]} and {boxes[j]} overlap")
    covered = set()
    for b in boxes:
        covered.update(b.vertices)
    expect = sorted(v for v in report.root.vertices if v not in covered)
    if expect != report.uncovered.vertices:
        problems.append("uncovered set differs from root minus the union of Q")
    families = [dyadic_family(report.L, report.k, l, report.root.d, report.root) for l in range(report.l_max + 1)]
    for v in report.uncovered.vertices:
        for l, fam in enumerate(families):
            anc = next(b for b in fam if v in b)
            verdict = report.verdicts.get((l, anc))
            if verdict is None or verdict.good:
                problems.append(f"uncovered vertex {v} has a good or unevaluated ancestor at level {l}")
                break
    selected = set(report.Q)
    for (l, b), verdict in report.verdicts.items():
        if verdict.good and (l, b) not in selected:
            problems.append(f"good box {b} at level {l} was evaluated but not selected")
    for l, b in report.Q:
        if not report.verdicts[(l, b)].good:
            problems.append(f"bad box {b} selected")
        for l2, b2 in report.Q:
            if l2 < l and b2.contains_box(b):
                problems.append(f"box {b} lies inside an earlier good box")
    return problems


class CriterionViolation(RuntimeError):
    pass


def aggregate_fluc_bound(report: PartitionReport, flucs: dict, delta: float | None = None,
                         direct: float | None = None) -> tuple[float, float | None]:
    """sum_Q |B|/|root| fluc_B + 2 |uncovered|/|root|; checks direct <= bound when given."""
    delta = report.delta if delta is None else delta
    n = len(report.root)
    total = 0.0
    for _, b in report.Q:
        f = flucs[b]
        if f > delta + 1e-12:
            raise CriterionViolation(f"selected box {b} has fluc {f} > {delta}")
        total += len(b) / n * f
    bound = total + 2.0 * len(report.uncovered) / n
    if direct is not None and direct > bound + 1e-10:
        raise CriterionViolation(f"direct fluc {direct} exceeds the aggregate bound {bound}")
    return bound, direct


def adaptive_k(L: int, delta: float, d: int = 2, k_max: int | None = None) -> int | None:
    """Smallest k >= 2 with l_max >= 1 and every child box at most delta/4 of its parent's volume."""
    k_max = k_max if k_max is not None else max(2, int(math.isqrt(L)))
    root = box(L, d)
    for k in range(2, k_max + 1):
        l_max = default_l_max(L, k)
        if l_max < 1:
            continue
        ok = True
        for l in range(l_max):
            parents = dyadic_family(L, k, l, d, root)
            children = dyadic_family(L, k, l + 1, d, root)
            for c in children:
                p = next(pb for pb in parents if pb.contains_box(c))
                if len(c) > delta / 4.0 * len(p):
                    ok = False
                    break
            if not ok:
                break
        if ok:
            return k
    return None


def annulus_access_audit(L: int, k: int, l_max: int, criterion: GoodnessCriterion, eta: DisorderField,
                         v, d: int = 2) -> list[set]:
    """Evaluate the criterion on the annuli around v and return the field entries each one read.

    The sets must be pairwise disjoint and each contained in its annulus.
    """
    root = box(L, d)
    chain = []
    for l in range(l_max + 1):
        fam = dyadic_family(L, k, l, d, root)
        chain.append(next(b for b in fam if tuple(v) in b))
    reads = []
    for l in range(l_max):
        ann = chain[l].region.difference(chain[l + 1].region)
        tracked = eta.tracked()
        criterion.evaluate(ann, tracked, use_cache=False)
        reads.append(tracked.accessed())
    return reads


# ---------------------------------------------------------------- scans


def wilson_interval(p_hat: float, n: int, z: float = 1.96) -> tuple[float, float]:
    if n <= 0:
        return 0.0, 1.0
    denom = 1.0 + z * z / n
    centre = (p_hat + z * z / (2 * n)) / denom
    half = z * math.sqrt(p_hat * (1 - p_hat) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class ScanRow:
    L: int
    l_max: int
    replicas: int
    uncovered_prob: float
    lower: float
    upper: float
    lower_bound_goodness: bool


def uncovered_probability_scan(L_list, k: int, criterion: GoodnessCriterion, replicas: int = 30,
                               seed: int = 0, d: int = 2, m: int = 1, l_max_override: dict | None = None,
                               min_replicas: int = 30) -> list[ScanRow]:
    """Mean uncovered fraction per L over seeded replicas, with Wilson bands (n = replicas)."""
    if replicas < min_replicas:
        raise ValueError(f"need at least {min_replicas} replicas")
    rows = []
    for L in L_list:
        l_max = (l_max_override or {}).get(L, default_l_max(L, k))
        fracs, flagged = [], False
        for r in range(replicas):
            eta = sample_field(box(L, d), m, seed + 1_000_003 * r + L)
            rep = build_partition(L, k, l_max, criterion, eta, d)
            fracs.append(rep.uncovered_fraction)
            flagged |= rep.lower_bound_goodness
        p = float(np.mean(fracs))
        lo, hi = wilson_interval(p, replicas)
        rows.append(ScanRow(L, l_max, replicas, p, lo, hi, flagged))
    return rows


def trend_nonincreasing(rows: list[ScanRow]) -> bool:
    """Each next L's lower band stays at or below the previous L's upper band."""
    return all(b.lower <= a.upper + 1e-12 for a, b in zip(rows, rows[1:]))


def scan_to_csv(rows: list[ScanRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["L", "l_max", "replicas", "uncovered_prob", "wilson_lo", "wilson_hi", "lower_bound_goodness"])
    for r in rows:
        w.writerow([r.L, r.l_max, r.replicas, repr(r.uncovered_prob), repr(r.lower), repr(r.upper),
                    int(r.lower_bound_goodness)])
    return buf.getvalue()
