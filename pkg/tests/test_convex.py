import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from rfspin.convex import (ClassGError, IntervalSet, PiecewiseLinear, PiecewiseLinearConvex, StepFunction,
                           centered_interval_measure, class_g_gaussian_bound, corollary_floor,
                           corollary_floor_tight, gaussian_measure, normal_quantile_t_delta, pl_max,
                           random_class_g, random_convex, stab_measure_bound, stab_outer, stab_witness,
                           sublevel_floor, sublevel_floor_quad, sublevel_gaussian_lower, sup_distance)


def test_pl_max_and_sup_distance():
    f = PiecewiseLinear((0.0,), (0.0,), -1.0, 1.0)
    g = PiecewiseLinear((0.0,), (0.5,), 0.0, 0.0)
    h = pl_max(f, g)
    assert h(0.0) == 0.5 and h(2.0) == 2.0 and h(-3.0) == 3.0
    assert sup_distance(f, h) == pytest.approx(0.5)


def test_convexity_and_lipschitz_are_enforced():
    with pytest.raises(ValueError):
        PiecewiseLinearConvex.from_slopes([0.0], [1.0, -1.0], lam_lip=2.0)
    with pytest.raises(ValueError):
        PiecewiseLinearConvex.from_slopes([0.0], [-3.0, 3.0], lam_lip=2.0)


def test_convex_json_roundtrip(rng):
    g = random_convex(rng, 1.5)
    back = PiecewiseLinearConvex.from_json(g.to_json())
    assert np.allclose(back(np.linspace(-8, 8, 33)), g(np.linspace(-8, 8, 33)))


def test_stability_set_of_absolute_value():
    out = stab_outer(PiecewiseLinearConvex.abs_function(1.0), 0.5, 0.1)
    assert len(out) == 1
    assert 0.0 in out
    assert out.measure <= 8 * 0.1 / 0.5 + 1e-12


def test_linear_functions_have_no_stability_points():
    g = PiecewiseLinearConvex.linear(0.3, 1.0)
    assert stab_outer(g, 0.5, 0.1).measure == 0.0
    for t in (-2.0, 0.0, 1.5):
        assert stab_witness(g, t, 0.5, 0.1) is None


def test_kink_translation_witness():
    g = PiecewiseLinearConvex.abs_function(1.0)
    for r in (0.01, 0.1, 1.0):
        w = stab_witness(g, 0.0, 0.5, r)
        assert w is not None and w.verify(g, 1.0, 0.5, r)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_stability_measure_bound_and_witness_soundness(seed):
    rng = np.random.default_rng(seed)
    lam = rng.uniform(0.5, 3.0)
    g = random_convex(rng, lam)
    delta, r = rng.uniform(0.1, 1.0), rng.uniform(0.01, 0.5)
    outer = stab_outer(g, delta, r)
    assert outer.measure <= stab_measure_bound(lam, delta, r) + 1e-9
    for t in rng.uniform(-7, 7, 10):
        w = stab_witness(g, t, delta, r)
        if w is not None:
            assert t in outer


def test_gaussian_measure_values():
    assert gaussian_measure(IntervalSet(((-math.inf, math.inf),))) == pytest.approx(1.0)
    quad, _ = integrate.quad(lambda t: math.exp(-t * t / 2) / math.sqrt(2 * math.pi), -0.5, 0.5)
    assert gaussian_measure(IntervalSet(((-0.5, 0.5),))) == pytest.approx(quad, abs=1e-14)
    assert gaussian_measure(IntervalSet(((-0.5, 0.5),))) == pytest.approx(0.382924922548026, abs=1e-12)
    assert gaussian_measure(IntervalSet(((0.0, 1.0),)), sigma2=4.0) == pytest.approx(
        gaussian_measure(IntervalSet(((0.0, 0.5),))))


def test_centred_interval_is_extremal(rng):
    for _ in range(200):
        k = int(rng.integers(1, 5))
        lengths = rng.dirichlet(np.ones(k)) * rng.uniform(0.1, 3.0)
        starts = np.sort(rng.uniform(-4, 4, k)) + np.concatenate([[0], np.cumsum(lengths)[:-1]])
        s = IntervalSet.from_intervals(list(zip(starts, starts + lengths)))
        assert gaussian_measure(s) <= centered_interval_measure(s.measure) + 1e-12


def test_interval_set_merges_and_serialises():
    s = IntervalSet.from_intervals([(0, 1), (0.5, 2), (3, 4)])
    assert s.intervals == ((0, 2), (3, 4))
    assert IntervalSet.from_json(s.to_json()) == s


def test_corollary_floor(rng):
    bad = 0
    for _ in range(200):
        lam = rng.uniform(0.5, 3)
        g = random_convex(rng, lam)
        delta, r, s2 = rng.uniform(0.1, 1), rng.uniform(0.01, 0.5), rng.uniform(0.05, 1)
        if r < math.sqrt(s2) * delta**2 / lam:
            continue
        outside = 1 - gaussian_measure(stab_outer(g, delta, r), s2)
        bad += outside < corollary_floor(lam, delta, r, s2)
        bad += outside < corollary_floor_tight(lam, delta, r, s2)
    assert bad == 0
    with pytest.raises(ValueError):
        corollary_floor(1.0, 1.0, 0.01, 1.0)


def test_class_g_integrals():
    assert class_g_gaussian_bound(StepFunction.zero()) == 0.0
    odd = StepFunction((-1.0, 0.0, 1.0), (-1.0, 1.0))
    assert odd.in_class_g()
    assert class_g_gaussian_bound(odd) == pytest.approx(0.0, abs=1e-15)
    lopsided = StepFunction((-0.5, 0.25, 1.5), (0.8, -0.6))
    quad, _ = integrate.quad(lambda t: lopsided(t) * math.exp(-t * t / 2), -3, 3, points=[-0.5, 0.25, 1.5])
    assert class_g_gaussian_bound(lopsided) == pytest.approx(quad, abs=1e-10)
    with pytest.raises(ClassGError):
        class_g_gaussian_bound(StepFunction((0.0, 2.0), (1.0,)))


def test_random_class_members_stay_bounded(rng):
    for _ in range(500):
        g = random_class_g(rng)
        assert g.in_class_g()
        assert abs(class_g_gaussian_bound(g)) <= 2.0


@pytest.mark.parametrize("delta", [0.1, 0.5, 1.0])
def test_sublevel_floor_closed_form_and_bound(delta, rng):
    assert sublevel_floor(delta) == pytest.approx(sublevel_floor_quad(delta), abs=1e-10)
    for _ in range(500):
        measured, floor = sublevel_gaussian_lower(random_class_g(rng, lower=-1.0), delta)
        assert measured >= floor - 1e-9


def test_sublevel_rejects_functions_below_minus_one():
    with pytest.raises(ClassGError):
        sublevel_gaussian_lower(StepFunction((0.0, 0.5), (-1.5,)), 0.5)


def test_quantile_behaviour():
    assert normal_quantile_t_delta(100.0) > 3
    t = normal_quantile_t_delta(0.2)
    assert t < 0
    grid = np.linspace(0.05, 0.5, 10)
    ts = np.array([normal_quantile_t_delta(d) for d in grid])
    assert np.all(np.diff(ts) >= 0)
    ratio = -ts * grid
    assert ratio.min() > 0.5 and ratio.max() < 2.0
    from scipy.special import log_ndtr
    for d in (0.1, 0.7, 3.0):
        assert float(log_ndtr(normal_quantile_t_delta(d))) == pytest.approx(-1 / d**2, rel=1e-9)
