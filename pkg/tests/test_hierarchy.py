import dataclasses
import json
import math

import numpy as np
import pytest

from rfspin.disorder import WeightFunction, sample_field
from rfspin.exact import fluc_exact
from rfspin.hierarchy import (CriterionViolation, GoodnessCriterion, PartitionReport, adaptive_k,
                              aggregate_fluc_bound, annulus_access_audit, audit_partition, build_partition,
                              density_floor_default, scan_to_csv, trend_nonincreasing,
                              uncovered_probability_scan, wilson_interval)
from rfspin.lattice import BoxRegion, annulus, box, dyadic_family
from rfspin.models import ModelSpec

RFIM = ModelSpec.rfim(beta=1.0, lam=1.0)


def test_trivial_criteria():
    eta = sample_field(box(4, 2), 1, 0)
    good = build_partition(4, 2, 1, GoodnessCriterion("always_good"), eta)
    assert [b for _, b in good.Q] == [box(4, 2)] and good.uncovered_fraction == 0.0
    bad = build_partition(4, 2, 1, GoodnessCriterion("always_bad"), eta)
    assert bad.Q == [] and len(bad.uncovered) == len(box(4, 2))
    assert audit_partition(good) == [] and audit_partition(bad) == []


def test_field_quantile_builds_pass_the_audit():
    crit = GoodnessCriterion("field_quantile", delta=0.5)
    fractions = []
    for seed in range(20):
        rep = build_partition(8, 2, None, crit, sample_field(box(8, 2), 1, seed))
        assert audit_partition(rep) == []
        fractions.append(rep.uncovered_fraction)
    assert 0.0 < np.mean(fractions) <= 1.0


def test_fluc_builds_pass_the_audit():
    crit = GoodnessCriterion("fluc_threshold", delta=1.98, spec=RFIM)
    for seed in range(4):
        rep = build_partition(4, 2, 1, crit, sample_field(box(4, 2), 1, seed))
        assert audit_partition(rep) == []
        assert not rep.lower_bound_goodness


def test_weighted_criterion_with_density_escape():
    reg = box(4, 2)
    w = WeightFunction(reg, np.random.default_rng(0).uniform(0, 1, (len(reg), 1)))
    crit = GoodnessCriterion("weighted_fluc_threshold", delta=1.5, spec=RFIM, weight=w,
                             density_floor=density_floor_default(4))
    rep = build_partition(4, 2, 1, crit, sample_field(reg, 1, 1))
    assert audit_partition(rep) == []
    assert all(v.method == "density" for v in rep.verdicts.values())
    strict = dataclasses.replace(crit, density_floor=0.0, _cache={})
    rep = build_partition(4, 2, 1, strict, sample_field(reg, 1, 1))
    assert audit_partition(rep) == []
    assert all(v.method != "density" for v in rep.verdicts.values())


def test_density_floor_shape():
    assert density_floor_default(8) == 1.0
    big = 10**12
    assert density_floor_default(big) == pytest.approx(math.log(math.log(big)) ** -0.25)
    assert density_floor_default(big, exponent=0.125) > density_floor_default(big)


def test_audit_detects_tampering():
    eta = sample_field(box(8, 2), 1, 3)
    rep = build_partition(8, 2, None, GoodnessCriterion("field_quantile", delta=2.0), eta)
    assert rep.Q
    level, first = rep.Q[0]
    doubled = dataclasses.replace(rep, Q=rep.Q + [(level, first)])
    assert audit_partition(doubled)
    dropped = dataclasses.replace(rep, Q=rep.Q[1:])
    assert audit_partition(dropped)


def test_verdicts_only_read_their_box():
    crit = GoodnessCriterion("fluc_threshold", delta=1.9, spec=RFIM)
    b = BoxRegion((0, 0), (1, 1))
    eta = sample_field(box(4, 2), 1, 5)
    before = crit.evaluate(b, eta, use_cache=False)
    outside = box(4, 2).region.difference(b)
    noisy = eta.with_values_on(outside, eta.values_on(outside) + 50.0)
    after = crit.evaluate(b, noisy, use_cache=False)
    assert before == after
    tracked = eta.tracked()
    crit.evaluate(b, tracked, use_cache=False)
    assert tracked.accessed() <= set(b.vertices)


def test_cache_hits_on_identical_boxes():
    crit = GoodnessCriterion("field_quantile")
    eta = sample_field(box(4, 2), 1, 0)
    crit.evaluate(box(1, 2), eta)
    crit.evaluate(box(1, 2), eta)
    assert len(crit._cache) == 1


def test_annulus_reads_are_disjoint_and_local():
    eta = sample_field(box(8, 2), 1, 0)
    crit = GoodnessCriterion("field_quantile")
    reads = annulus_access_audit(8, 2, 2, crit, eta, (1, 1))
    chain = [next(b for b in dyadic_family(8, 2, l, 2) if (1, 1) in b) for l in range(3)]
    for l, got in enumerate(reads):
        assert got == set(annulus(chain[l], chain[l + 1]).vertices)
    assert reads[0].isdisjoint(reads[1])


def test_aggregate_bound_trivial_case():
    root = box(2, 2)
    rep = PartitionReport(2, 2, 0, 0.3, root, [(0, root)], box(0, 2).region.difference(box(0, 2)), [1], [1])
    assert aggregate_fluc_bound(rep, {root: 0.3})[0] == pytest.approx(0.3)
    with pytest.raises(CriterionViolation):
        aggregate_fluc_bound(rep, {root: 0.4})


def test_aggregate_bound_dominates_direct_fluc():
    root = BoxRegion((0, 0), (3, 3))
    crit = GoodnessCriterion("fluc_threshold", delta=1.9, spec=RFIM)
    for seed in range(5):
        eta = sample_field(root, 1, seed)
        rep = build_partition(4, 2, 1, crit, eta, root=root)
        flucs = {b: crit.evaluate(b, eta).value for _, b in rep.Q}
        direct = fluc_exact(RFIM, root, eta).fluc
        bound, _ = aggregate_fluc_bound(rep, flucs, direct=direct)
        assert direct <= bound


def test_adaptive_k():
    assert adaptive_k(64, 1.0) == 3


def test_wilson_interval():
    lo, hi = wilson_interval(0.5, 100)
    assert lo == pytest.approx(0.4038, abs=1e-3) and hi == pytest.approx(0.5962, abs=1e-3)
    assert wilson_interval(0.0, 30)[0] == 0.0
    assert wilson_interval(1.0, 30)[1] == 1.0


def test_scan_with_always_good_is_zero():
    rows = uncovered_probability_scan([2, 4], 2, GoodnessCriterion("always_good"), replicas=30)
    assert all(r.uncovered_prob == 0.0 for r in rows)
    assert trend_nonincreasing(rows)
    assert scan_to_csv(rows).splitlines()[0].startswith("L,l_max,replicas,uncovered_prob")


def test_scan_needs_enough_replicas():
    with pytest.raises(ValueError):
        uncovered_probability_scan([4], 2, GoodnessCriterion("always_good"), replicas=10)


def test_lenient_field_quantile_leaves_little_uncovered():
    rows = uncovered_probability_scan([4, 8, 16], 2, GoodnessCriterion("field_quantile", delta=2.0), replicas=30)
    assert all(r.uncovered_prob < 0.1 for r in rows)


def test_report_serialises():
    rep = build_partition(4, 2, 1, GoodnessCriterion("field_quantile"), sample_field(box(4, 2), 1, 0))
    data = json.loads(rep.to_json())
    assert data["uncovered_fraction"] == rep.uncovered_fraction
    assert len(data["per_level"]) == 2
