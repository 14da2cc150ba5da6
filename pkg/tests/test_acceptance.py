"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v`; the lines are printed even without `-s`.
"""

import time

import numpy as np
import pytest

from rfspin.convex import (class_g_gaussian_bound, random_class_g, random_convex, stab_measure_bound, stab_outer,
                           stab_witness, sublevel_gaussian_lower)
from rfspin.disorder import DisorderField, WeightFunction, sample_field
from rfspin.exact import exact_gibbs, fe_gradient_check, fluc_exact, free_energy
from rfspin.ground import enumeration_ground, rfim_ground_state
from rfspin.harness import parse_config, run_experiment
from rfspin.hierarchy import (GoodnessCriterion, aggregate_fluc_bound, audit_partition, build_partition,
                              density_floor_default, trend_nonincreasing, uncovered_probability_scan)
from rfspin.lattice import BoxRegion, box
from rfspin.mcmc import Batch, run_batch
from rfspin.models import ModelSpec, state_values
from rfspin.spinwave import budget_exponent, disorder_magnetization, mw_fe_gap, mw_pointwise_check, random_configuration
from rfspin.system import compile_system, uniform_boundary

NINE = BoxRegion((0, 0), (2, 2))
SQUARE = BoxRegion((0, 0), (1, 1))
SIXTEEN = BoxRegion((0, 0), (3, 3))


@pytest.fixture
def report(capsys):
    start = time.perf_counter()

    def emit(number: int, ok: bool, detail: str, budget_s: float):
        elapsed = time.perf_counter() - start
        ok = ok and elapsed < budget_s
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail} [{elapsed:.1f}s / {budget_s:.0f}s]")
        assert ok, detail

    return emit


def _random_tau(spec, region, rng):
    vals = state_values(spec)
    return {v: vals[rng.integers(len(vals))] for v in uniform_boundary(spec, region, vals[0])}


def test_mcmc_matches_exact_enumeration(report):
    checks = outliers = 0
    for spec0 in (ModelSpec.rfim(), ModelSpec.potts(q=3), ModelSpec.ea()):
        for beta in (0.5, 1.0, 2.0):
            spec = spec0.with_(beta=beta, lam=1.0)
            systems, exact = [], []
            for seed in range(20):
                eta = sample_field(box(3, 2), spec.m, seed)
                tau = uniform_boundary(spec, NINE, state_values(spec)[0])
                systems.append(compile_system(spec, NINE, tau, eta))
                exact.append(exact_gibbs(spec, NINE, tau, eta).obs)
            sweeps = 8000 if spec.kind == "ea" and beta == 2.0 else 2000
            run = run_batch(Batch.of(systems), sweeps, 200, 32, seed=int(beta * 10))
            for b, ref in enumerate(exact):
                mean, se = run.site_estimate(b)
                bad = np.abs(mean - ref) > 4 * np.maximum(se, 1e-12)
                outliers += int(bad.sum())
                checks += bad.size
    allowed = max(1, checks // 50)
    report(1, outliers <= allowed, f"MCMC vs exact outliers {outliers}/{checks} (allowed {allowed})", 300)


def test_free_energy_gradient_identity(report):
    rng = np.random.default_rng(2)
    worst = 0.0
    for region, spec in ((SQUARE, ModelSpec.rfim(beta=1.0, h=0.2)), (NINE, ModelSpec.potts(q=3, beta=0.8))):
        for k in range(10):
            eta = DisorderField(region.region, rng.standard_normal((len(region), spec.m)), k)
            tau = _random_tau(spec, region, rng)
            component = int(rng.integers(spec.m))
            a, n = fe_gradient_check(spec, region, tau, eta, component, step=1e-4)
            worst = max(worst, abs(a - n))
    report(2, worst <= 1e-6, f"max |analytic - finite difference| = {worst:.2e}", 60)


def test_free_energy_concave_and_lipschitz(report):
    rng = np.random.default_rng(3)
    spec = ModelSpec.potts(q=3, beta=0.9, lam=1.3)
    violations = 0
    for k in range(100):
        e1, e2 = sample_field(SQUARE, 3, 2 * k), sample_field(SQUARE, 3, 2 * k + 1)
        t = float(rng.uniform())
        f1, f2 = free_energy(spec, SQUARE, "free", e1), free_energy(spec, SQUARE, "free", e2)
        mid = free_energy(spec, SQUARE, "free", e1.lerp(e2, t))
        lip = spec.lam * np.sum(np.linalg.norm(e1.values - e2.values, axis=1)) / len(SQUARE)
        violations += mid < (1 - t) * f1 + t * f2 - 1e-10
        violations += abs(f1 - f2) > lip + 1e-10
    report(3, violations == 0, f"concavity/Lipschitz violations {violations} over 100 triples", 60)


def test_domain_subadditivity(report):
    spec = ModelSpec.rfim(beta=1.0, lam=1.0)
    left, right = BoxRegion((0, 0), (0, 1)), BoxRegion((2, 0), (2, 1))
    union = left.region.union(right)
    worst = -np.inf
    for seed in range(50):
        eta = sample_field(box(4, 2), 1, seed)
        lhs = fluc_exact(spec, union, eta, method="enumerate").fluc
        rhs = (len(left) * fluc_exact(spec, left, eta).fluc + len(right) * fluc_exact(spec, right, eta).fluc) \
            / len(union)
        worst = max(worst, lhs - rhs)
    report(4, worst <= 1e-10, f"max union excess over weighted average {worst:.2e}", 60)


def test_rfim_min_cut_equals_enumeration(report):
    rng = np.random.default_rng(5)
    mismatches = 0
    for seed in range(50):
        spec = ModelSpec.rfim(lam=float(rng.uniform(0.5, 2.0)), h=float(rng.uniform(-0.5, 0.5)))
        eta = sample_field(box(6, 2), 1, seed)
        tau = {v: int(rng.choice([-1, 1])) for v in uniform_boundary(spec, SIXTEEN, 1)}
        cut = rfim_ground_state(spec, SIXTEEN, tau, eta)
        ref = enumeration_ground(spec, SIXTEEN, tau, eta)
        mismatches += cut.sigma != ref.sigma or abs(cut.energy - ref.energy) > 1e-9
    report(5, mismatches == 0, f"min-cut vs enumeration mismatches {mismatches}/50", 60)


def test_stability_covering_bound(report):
    rng = np.random.default_rng(6)
    measure_violations = witness_violations = witnesses = 0
    for _ in range(100):
        lam = float(rng.uniform(0.5, 3.0))
        g = random_convex(rng, lam)
        for delta in (0.1, 0.5, 1.0):
            for r in (0.01, 0.1, 0.5):
                outer = stab_outer(g, delta, r)
                measure_violations += outer.measure > stab_measure_bound(lam, delta, r) + 1e-9
                for t in rng.uniform(-7, 7, 4):
                    if stab_witness(g, float(t), delta, r) is not None:
                        witnesses += 1
                        witness_violations += float(t) not in outer
    ok = measure_violations == 0 and witness_violations == 0
    report(6, ok, f"measure violations {measure_violations}, witnesses outside {witness_violations}/{witnesses}",
           60)


def test_variational_lemmas(report):
    rng = np.random.default_rng(7)
    worst = max(abs(class_g_gaussian_bound(random_class_g(rng))) for _ in range(500))
    sub_violations = 0
    for delta in (0.1, 0.5, 1.0):
        for _ in range(500):
            measured, floor = sublevel_gaussian_lower(random_class_g(rng, lower=-1.0), delta)
            sub_violations += measured < floor - 1e-9
    ok = worst <= 2.0 and sub_violations == 0
    report(7, ok, f"max |Gaussian integral| {worst:.3f} <= 2, sublevel violations {sub_violations}/1500", 120)


def test_spin_wave_pointwise_inequality(report):
    rng = np.random.default_rng(8)
    spec = ModelSpec.on(n=2, d=2)
    outer, inner = BoxRegion.cube(8, 2), BoxRegion.cube(2, 2)
    violations = 0
    for k in range(100):
        sigma = random_configuration(spec, outer, rng)
        eta = sample_field(outer, 2, k)
        excess, budget = mw_pointwise_check(spec, outer, inner, sigma, eta)
        violations += excess > budget + 1e-9
    slope, _ = budget_exponent(spec, half_sides=(2, 4, 8))
    ok = violations == 0 and abs(slope - 0.0) <= 0.3
    report(8, ok, f"pointwise violations {violations}/100, budget exponent {slope:+.3f} (target 0)", 120)


def test_spin_wave_free_energy_gap(report):
    spec = ModelSpec.clock(n_states=8, d=1)
    res = mw_fe_gap(spec, BoxRegion.cube(8, 1), BoxRegion.cube(4, 1), replicas=200)
    gap, se = float(res.estimate.mean[0]), float(res.estimate.stderr[0])
    report(9, res.holds(), f"gap {gap:+.2e} +/- {se:.1e} vs budget {res.budget:.3e}", 300)


def test_exact_model_facts(report):
    potts = run_experiment(parse_config({"experiment": "model-facts", "L": [3], "replicas": 200,
                                         "model": {"kind": "potts", "q": 3}}))
    ea = run_experiment(parse_config({"experiment": "model-facts", "L": [4], "replicas": 200,
                                      "model": {"kind": "ea"}}))
    mag = disorder_magnetization(ModelSpec.clock(n_states=8, d=1), BoxRegion.cube(4, 1), "periodic", replicas=200)
    ok = bool(potts.summary["facts_hold"] and ea.summary["facts_hold"] and mag.zero_within())
    freqs = ", ".join(f"{x:.4f}" for x in potts.summary["means"])
    report(10, ok, f"Potts colours ({freqs}), EA density {ea.summary['means'][0]:.4f}, "
                   f"periodic clock zero={mag.zero_within()}", 600)


def test_partition_audit_bound_and_scan(report):
    spec = ModelSpec.rfim(beta=1.0, lam=1.0)
    weights = WeightFunction(box(4, 2), np.random.default_rng(11).uniform(0, 1, (len(box(4, 2)), 1)))
    builds = [
        (8, None, GoodnessCriterion("field_quantile", delta=0.5)),
        (4, 1, GoodnessCriterion("fluc_threshold", delta=1.98, spec=spec)),
        (4, 1, GoodnessCriterion("weighted_fluc_threshold", delta=1.5, spec=spec, weight=weights,
                                 density_floor=density_floor_default(4))),
    ]
    audit_failures = 0
    for L, l_max, crit in builds:
        for seed in range(20):
            rep = build_partition(L, 2, l_max, crit, sample_field(box(L, 2), 1, seed))
            audit_failures += bool(audit_partition(rep))
    root = SIXTEEN
    crit = GoodnessCriterion("fluc_threshold", delta=1.9, spec=spec)
    dominated = 0
    for seed in range(20):
        eta = sample_field(root, 1, seed)
        rep = build_partition(4, 2, 1, crit, eta, root=root)
        direct = fluc_exact(spec, root, eta).fluc
        bound, _ = aggregate_fluc_bound(rep, {b: crit.evaluate(b, eta).value for _, b in rep.Q}, direct=direct)
        dominated += direct <= bound
    rows = uncovered_probability_scan([4, 8, 16], 2, GoodnessCriterion("fluc_threshold", delta=0.5, spec=spec),
                                      replicas=30)
    trend = trend_nonincreasing(rows)
    ok = audit_failures == 0 and dominated == 20 and trend
    probs = ", ".join(f"L={r.L}:{r.uncovered_prob:.2f}" for r in rows)
    report(11, ok, f"audit failures {audit_failures}/60, bound dominates {dominated}/20, "
                   f"uncovered ({probs}) nonincreasing={trend}", 600)


def test_decay_trends(report):
    fluc = run_experiment(parse_config({"experiment": "fluc-decay", "L": [2, 3, 4],
                                        "model": {"kind": "rfim", "beta": 1.0, "lam": 1.0}}))
    medians = fluc.summary["medians"]
    fluc_ok = all(b <= a for a, b in zip(medians, medians[1:]))
    mag = run_experiment(parse_config({"experiment": "mag-decay", "L": [8, 16, 32], "replicas": 100,
                                       "model": {"kind": "clock", "d": 1, "n_states": 8}}))
    means = mag.summary["means"]
    ok = fluc_ok and mag.summary["decreasing"]
    report(12, ok, "RFIM median fluc " + ", ".join(f"{x:.4f}" for x in medians)
           + "; clock |m| " + ", ".join(f"{x:.4f}" for x in means), 900)
