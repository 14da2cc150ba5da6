import numpy as np
import pytest

from rfspin.disorder import sample_field
from rfspin.exact import exact_gibbs, fluc_exact, free_energy
from rfspin.lattice import BoxRegion, box
from rfspin.mcmc import (Batch, ConvergenceError, estimate_fluc, fe_difference_ti, init_chains, integrated_time,
                         run_batch, sample, split_rhat, summarize, sweep)
from rfspin.models import ModelSpec
from rfspin.system import compile_system, uniform_boundary

NINE = BoxRegion((0, 0), (2, 2))


def _agree(mean, se, exact, k=4.0):
    return np.abs(mean - exact) <= k * np.maximum(se, 1e-12)


def test_infinite_temperature_marginals_are_uniform():
    spec = ModelSpec.potts(q=3, beta=0.0)
    eta = sample_field(box(3, 2), 3, 0)
    run = sample(spec, NINE, uniform_boundary(spec, NINE, 1), eta, n_sweeps=2500, burn_in=10, n_chains=16, seed=1)
    mean, se = run.site_estimate(0)
    assert (~_agree(mean, se, 1 / 3)).sum() <= 1


@pytest.mark.parametrize("kernel", ["heat_bath", "metropolis"])
def test_ising_centre_spin_matches_exact(kernel):
    spec = ModelSpec.rfim(beta=0.5)
    eta = sample_field(box(3, 2), 1, 2)
    tau = uniform_boundary(spec, NINE, 1)
    exact = exact_gibbs(spec, NINE, tau, eta).obs
    run = run_batch(Batch.of([compile_system(spec, NINE, tau, eta)]), 4000, 200, 16, 3, kernel=kernel)
    mean, se = run.site_estimate(0)
    assert (~_agree(mean, se, exact)).sum() <= 1


def test_potts_and_ea_batches_match_exact():
    outliers = total = 0
    for spec in [ModelSpec.potts(q=3, beta=1.0), ModelSpec.ea(beta=1.0)]:
        systems, exact = [], []
        for seed in range(4):
            eta = sample_field(box(4, 2), spec.m, seed)
            tau = uniform_boundary(spec, NINE, 1)
            systems.append(compile_system(spec, NINE, tau, eta))
            exact.append(exact_gibbs(spec, NINE, tau, eta).obs)
        run = run_batch(Batch.of(systems), 2000, 200, 16, 7)
        for b in range(len(systems)):
            mean, se = run.site_estimate(b)
            ok = _agree(mean, se, exact[b])
            outliers += int((~ok).sum())
            total += ok.size
    assert outliers <= max(1, total // 50)


def test_planar_rotor_sampler_tunes_its_aperture():
    spec = ModelSpec.on(n=2, beta=1.0)
    eta = sample_field(box(3, 2), 2, 0)
    run = run_batch(Batch.of([compile_system(spec, NINE, "free", eta)]), 1, 500, 4, 0)
    state = run.state
    assert state.step[0] != 1.0
    a0, p0 = state.accepted, state.proposed
    for _ in range(300):
        sweep(state)
    assert np.allclose(np.linalg.norm(state.X, axis=-1), 1.0)
    assert 0.3 < (state.accepted - a0) / (state.proposed - p0) < 0.5


def test_heat_bath_is_rejected_for_continuous_spins():
    spec = ModelSpec.on(n=2)
    state = init_chains(Batch.of([compile_system(spec, NINE, "free", sample_field(NINE, 2, 0))]), 2, 0)
    with pytest.raises(ValueError):
        sweep(state, kernel="heat_bath")


def test_diagnostics_on_synthetic_chains():
    rng = np.random.default_rng(0)
    iid = rng.standard_normal((4000, 8))
    assert integrated_time(iid) == pytest.approx(1.0, abs=0.2)
    assert split_rhat(iid) < 1.01
    phi = 0.8
    ar = np.zeros((20000, 8))
    for t in range(1, len(ar)):
        ar[t] = phi * ar[t - 1] + rng.standard_normal(8)
    assert integrated_time(ar) == pytest.approx((1 + phi) / (1 - phi), rel=0.15)
    shifted = iid + np.arange(8)[None, :]
    assert split_rhat(shifted) > 1.5


def test_strict_summary_raises_on_short_runs():
    trace = np.cumsum(np.random.default_rng(1).standard_normal((30, 2, 1)), axis=0)
    with pytest.raises(ConvergenceError):
        summarize(trace, strict=True)


def test_duplicate_candidates_give_zero_fluc():
    spec = ModelSpec.rfim(beta=1.0)
    eta = sample_field(box(3, 2), 1, 0)
    tau = uniform_boundary(spec, NINE, 1)
    rep, est = estimate_fluc(spec, NINE, eta, candidates=[tau, tau], n_sweeps=2000, burn_in=200, strict=False)
    assert rep.fluc <= 4 * est.stderr[0]


def test_extremal_candidates_recover_exact_fluc():
    spec = ModelSpec.rfim(beta=1.0)
    eta = sample_field(box(3, 2), 1, 1)
    exact = fluc_exact(spec, NINE, eta).fluc
    rep, est = estimate_fluc(spec, NINE, eta, n_sweeps=3000, burn_in=300, seed=2, strict=False)
    assert not rep.lower_bound
    assert abs(rep.fluc - exact) <= 4 * est.stderr[0]


def test_stronger_field_lowers_the_estimate():
    reg = BoxRegion((0, 0), (7, 7))
    eta = sample_field(box(9, 2), 1, 3)
    weak, _ = estimate_fluc(ModelSpec.rfim(lam=1.0), reg, eta, n_sweeps=1500, burn_in=300, strict=False,
                            start="boundary")
    strong, _ = estimate_fluc(ModelSpec.rfim(lam=10.0), reg, eta, n_sweeps=1500, burn_in=300, strict=False)
    assert strong.fluc < weak.fluc


def test_thermodynamic_integration():
    spec = ModelSpec.rfim(beta=0.6)
    tau = uniform_boundary(spec, NINE, 1)
    a, b = sample_field(box(3, 2), 1, 10), sample_field(box(3, 2), 1, 11)
    zero = fe_difference_ti(spec, NINE, tau, a, a)
    assert zero.mean[0] == 0.0
    forward = fe_difference_ti(spec, NINE, tau, a, b, n_sweeps=3000, burn_in=300, seed=4)
    exact = free_energy(spec, NINE, tau, b) - free_energy(spec, NINE, tau, a)
    assert abs(forward.mean[0] - exact) <= 4 * forward.stderr[0]
    backward = fe_difference_ti(spec, NINE, tau, b, a, n_sweeps=3000, burn_in=300, seed=5)
    se = np.hypot(forward.stderr[0], backward.stderr[0])
    assert abs(forward.mean[0] + backward.mean[0]) <= 2 * se


def test_same_seed_same_chain():
    spec = ModelSpec.potts(q=3)
    eta = sample_field(NINE, 3, 0)
    r1 = sample(spec, NINE, "free", eta, n_sweeps=50, burn_in=5, n_chains=2, seed=9)
    r2 = sample(spec, NINE, "free", eta, n_sweeps=50, burn_in=5, n_chains=2, seed=9)
    assert np.array_equal(r1.trace, r2.trace)
