import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfspin.disorder import DisorderField, sample_field
from rfspin.lattice import BoxRegion, Region, ball, box
from rfspin.models import (ModelSpec, base_energy, decode_spins, disordered_energy, encode_spins,
                           local_energy_delta, noised_observable, state_values)
from rfspin.system import compile_system, uniform_boundary

ORIGIN = Region.from_vertices([(0, 0)])


def _constant(value, region=None):
    return {v: value for v in (region or ball((0, 0), 1)).vertices}


def _random_spins(spec, region, rng):
    vals = state_values(spec)
    return {v: vals[rng.integers(len(vals))] for v in region.vertices}


def test_single_site_energies():
    assert base_energy(ModelSpec.rfim(), ORIGIN, _constant(1)) == -4.0
    potts = _constant(1)
    potts[(0, 0)] = 2
    assert base_energy(ModelSpec.potts(q=3), ORIGIN, potts) == 0.0
    assert base_energy(ModelSpec.ea(), ORIGIN, _constant(1)) == 0.0


def test_disordered_energy_adds_the_field():
    eta = DisorderField.from_mapping({(0, 0): [2.0]})
    assert disordered_energy(ModelSpec.rfim(), ORIGIN, _constant(1), eta) == -6.0
    free = ModelSpec.rfim(lam=0.0)
    assert disordered_energy(free, ORIGIN, _constant(1), eta) == base_energy(free, ORIGIN, _constant(1))


def test_observables():
    assert np.array_equal(noised_observable(ModelSpec.potts(q=3), (0, 0), {(0, 0): 2}), [0, 1, 0])
    sigma = {(0, 0): 1, (1, 0): -1, (0, 1): 1}
    assert np.array_equal(noised_observable(ModelSpec.ea(), (0, 0), sigma), [-1, 1])
    assert np.array_equal(noised_observable(ModelSpec.rfim(), (0, 0), {(0, 0): -1}), [-1])


def test_missing_spin_is_an_error():
    with pytest.raises(KeyError):
        base_energy(ModelSpec.rfim(), ORIGIN, {(0, 0): 1})


def test_isolated_flip_costs_eight():
    eta = DisorderField.from_mapping({(0, 0): [0.0]})
    assert local_energy_delta(ModelSpec.rfim(), ORIGIN, _constant(1), eta, (0, 0), -1) == pytest.approx(8.0)
    assert local_energy_delta(ModelSpec.rfim(), ORIGIN, _constant(1), eta, (0, 0), 1) == 0.0


SPECS = [ModelSpec.rfim(beta=0.7, h=0.3), ModelSpec.potts(q=3, h=(0.1, 0.0, -0.2)),
         ModelSpec.ea(h=0.4), ModelSpec.clock(n_states=5, h=(0.2, 0.1))]


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind)
def test_local_delta_matches_full_difference(spec, rng):
    reg = BoxRegion((0, 0), (2, 2))
    eta = sample_field(box(4, 2), spec.m, 5)
    halo = ball((1, 1), 3)
    for _ in range(20):
        sigma = _random_spins(spec, halo, rng)
        v = reg.vertices[rng.integers(len(reg))]
        new = state_values(spec)[rng.integers(len(state_values(spec)))]
        moved = dict(sigma)
        moved[v] = new
        full = disordered_energy(spec, reg, moved, eta) - disordered_energy(spec, reg, sigma, eta)
        assert local_energy_delta(spec, reg, sigma, eta, v, new) == pytest.approx(full, abs=1e-10)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind)
@pytest.mark.parametrize("mode", ["fixed", "free", "periodic"])
def test_compiled_energy_matches_reference(spec, mode, rng):
    reg = BoxRegion((0, 0), (2, 2))
    eta = sample_field(box(5, 2), spec.m, 3)
    vals = state_values(spec)
    tau = ({v: vals[rng.integers(len(vals))] for v in uniform_boundary(spec, reg, vals[0])}
           if mode == "fixed" else mode)
    system = compile_system(spec, reg, tau, eta)
    for _ in range(5):
        x = rng.integers(system.S, size=system.N)
        sigma = system.decode(x)
        if isinstance(tau, dict):
            sigma.update(tau)
        ref = disordered_energy(spec, reg, sigma, eta, boundary=mode)
        assert system.energy(x[None])[0] == pytest.approx(ref, abs=1e-9)


def test_finite_volume_consistency():
    # energy differences inside a sub-box do not depend on the outer region
    spec = ModelSpec.potts(q=3, h=(0.2, 0.0, 0.0))
    inner, outer = BoxRegion((1, 1), (2, 2)), BoxRegion((0, 0), (3, 3))
    eta = sample_field(box(5, 2), 3, 1)
    rng = np.random.default_rng(0)
    sigma = _random_spins(spec, ball((1, 1), 4), rng)
    moved = dict(sigma)
    for v in inner.vertices:
        moved[v] = 1 + (moved[v] % 3)
    d_in = disordered_energy(spec, inner, moved, eta) - disordered_energy(spec, inner, sigma, eta)
    d_out = disordered_energy(spec, outer, moved, eta) - disordered_energy(spec, outer, sigma, eta)
    assert d_in == pytest.approx(d_out, abs=1e-10)


@given(st.sampled_from(SPECS), st.integers(0, 2**31))
@settings(max_examples=25, deadline=None)
def test_spin_serialisation_roundtrip(spec, seed):
    reg = box(1, 2)
    sigma = _random_spins(spec, reg, np.random.default_rng(seed))
    assert decode_spins(spec, reg, encode_spins(spec, reg, sigma)) == sigma


def test_spec_validation_and_roundtrip():
    with pytest.raises(ValueError):
        ModelSpec.potts(q=2)
    with pytest.raises(ValueError):
        ModelSpec.rfim(beta=-1)
    spec = ModelSpec.clock(n_states=6, h=(0.1, 0.2), d=1)
    assert ModelSpec.from_dict(spec.to_dict()) == spec
