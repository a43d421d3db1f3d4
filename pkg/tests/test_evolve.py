import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import brute_zeno_survival, detuned_rabi_max, expm_evolve, rabi_site1
from zenotbs.evolve import (EvolutionTrace, StepTooCoarseError, as_state, basis_state, bloch_trajectory,
                            ideal_zeno_population, projective_chain, propagate, pulse_count_sweep,
                            rabi_half_period)
from zenotbs.model import (LatticeSpec, LinearRamp, MeasurementProgram, PulseTrain, PumpRamp,
                           build_h0, default_aah, static_hamiltonian)


def _static(L):
    return PumpRamp(0.0, 0.0, L)


def test_uncoupled_populations_constant():
    spec = default_aah(kappa0=1e-300, kappa_m=0.0)
    psi = np.full(9, 1 / 3, dtype=complex)
    tr = propagate(spec, _static(1.0), None, psi, steps=100)
    np.testing.assert_allclose(tr.populations, 1 / 9, atol=1e-12)


def test_rabi_follows_cosine(two_level):
    L = 0.3
    tr = propagate(two_level, _static(L), None, basis_state(2, 1), steps=600)
    expected = [rabi_site1(10.3, z) for z in tr.z]
    np.testing.assert_allclose(tr.populations[:, 0], expected, atol=1e-9)


def test_rabi_half_period(two_level):
    assert rabi_half_period(two_level) == pytest.approx(0.152504, abs=1e-6)
    tr = propagate(two_level, _static(rabi_half_period(two_level)), None, basis_state(2, 1), steps=200)
    assert tr.populations[-1, 1] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("ratio", [0.5, 2.0, 6.0])
def test_detuned_rabi_maximum(two_level, ratio):
    k = two_level.kappa0
    db = ratio * k
    omega = math.sqrt(k ** 2 + (db / 2) ** 2)
    tr = propagate(two_level, _static(math.pi / omega), MeasurementProgram.constant(2, db),
                   basis_state(2, 1), steps=4000)
    assert tr.populations[:, 1].max() == pytest.approx(detuned_rabi_max(k, db), abs=1e-6)


def test_matches_expm_for_static_measured_lattice(aah):
    h = static_hamiltonian(aah, 0.1, 12.0, 2)
    psi = basis_state(9, 5)
    tr = propagate(aah, PumpRamp(0.1, 0.0, 0.4), MeasurementProgram.constant(2, 12.0), psi, steps=300)
    np.testing.assert_allclose(tr.final_state, expm_evolve(h, psi, 0.4), atol=1e-10)


def test_trace_shape_and_monotone_grid(aah):
    tr = propagate(aah, PumpRamp(0.25, -0.5, 0.5), None, basis_state(9, 9), steps=123)
    assert len(tr) == 124 and np.all(np.diff(tr.z) > 0)
    assert tr.z[0] == 0.0 and tr.z[-1] == 0.5
    assert np.all(tr.survival == 1.0)


def test_step_too_coarse(aah):
    with pytest.raises(StepTooCoarseError, match="too coarse"):
        propagate(aah, PumpRamp(0, 0.1, 1.0), None, basis_state(9, 1), steps=10)


def test_rejects_unnormalised(aah):
    with pytest.raises(ValueError, match="normalised"):
        propagate(aah, _static(1.0), None, np.ones(9), steps=2000)
    with pytest.raises(ValueError):
        as_state([1.0, 1e-3])


def test_pulse_edges_on_grid():
    spec = LatticeSpec.two_level()
    pt = PulseTrain(n=3, Lm=0.01, dbeta=50.0, span=0.15)
    tr = propagate(spec, _static(0.15), MeasurementProgram.single(2, pt), basis_state(2, 1), steps=97)
    for edge in pt.breakpoints():
        assert np.min(np.abs(tr.z - edge)) < 1e-14


@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(0, 40), st.integers(1, 9))
def test_unitarity_property(phi0, dphi, db, site):
    spec = default_aah()
    prog = MeasurementProgram.single(site, LinearRamp(0.0, db, 0.0, 0.3))
    tr = propagate(spec, PumpRamp(phi0, dphi, 0.3), prog, basis_state(9, 5))
    assert np.max(np.abs(tr.norms - 1)) < 1e-9


@given(st.floats(-100, 100))
def test_beta_invariance(c):
    a = default_aah()
    b = default_aah(beta=35.0 + c)
    ramp = PumpRamp(0.25, -0.5, 0.3)
    prog = MeasurementProgram.constant(1, 20.0)
    pa = propagate(a, ramp, prog, basis_state(9, 9), steps=3000).populations[-1]
    pb = propagate(b, ramp, prog, basis_state(9, 9), steps=3000).populations[-1]
    np.testing.assert_allclose(pa, pb, atol=1e-9)


def test_step_halving_ratio(aah):
    ramp = PumpRamp(0.25, -0.5, 1.0)
    prog = MeasurementProgram.single(1, LinearRamp(0.0, 20.0, 0.0, 1.0))
    psi = basis_state(9, 9)
    ref = propagate(aah, ramp, prog, psi, steps=64000).final_state
    e1 = np.linalg.norm(propagate(aah, ramp, prog, psi, steps=500).final_state - ref)
    e2 = np.linalg.norm(propagate(aah, ramp, prog, psi, steps=1000).final_state - ref)
    assert 3.5 <= e1 / e2 <= 4.5


def test_pulse_train_converges_to_constant(two_level):
    L = rabi_half_period(two_level)
    db = 3 * two_level.kappa0
    const = propagate(two_level, _static(L), MeasurementProgram.constant(2, db), basis_state(2, 1)).populations[-1]
    gaps = []
    for n in (5, 20, 80):
        prog = MeasurementProgram.single(2, PulseTrain.from_coverage(n, 0.5, db, L))
        half = MeasurementProgram.constant(2, 0.5 * db)
        ref = propagate(two_level, _static(L), half, basis_state(2, 1)).populations[-1]
        p = propagate(two_level, _static(L), prog, basis_state(2, 1)).populations[-1]
        gaps.append(abs(p[1] - ref[1]))
    # at fixed coverage the train approaches the duty-averaged detuning
    assert gaps[0] > gaps[1] > gaps[2]
    full = MeasurementProgram.single(2, PulseTrain.from_coverage(50, 1.0, db, L))
    p = propagate(two_level, _static(L), full, basis_state(2, 1)).populations[-1]
    assert abs(p[1] - const[1]) < 1e-9


def test_ideal_zeno_values():
    assert ideal_zeno_population(1) == pytest.approx(0.0, abs=1e-30)
    assert ideal_zeno_population(2) == pytest.approx(0.25)
    assert ideal_zeno_population(10) == pytest.approx(0.780546, abs=1e-6)
    assert abs(ideal_zeno_population(10) - math.exp(-math.pi ** 2 / 40)) < 1e-3
    for bad in (0, -3, 2.5):
        with pytest.raises(ValueError):
            ideal_zeno_population(bad)


@pytest.mark.parametrize("n", range(1, 65))
def test_projective_chain_equals_closed_form(two_level, n):
    L = rabi_half_period(two_level)
    tr = projective_chain(two_level, basis_state(2, 1), n, L)
    assert tr.survival[-1] == pytest.approx(ideal_zeno_population(n), abs=1e-6)
    assert tr.survival[-1] == pytest.approx(brute_zeno_survival(two_level.kappa0, n, L), abs=1e-12)


def test_projective_chain_limits(two_level):
    L = rabi_half_period(two_level)
    assert projective_chain(two_level, basis_state(2, 1), 1, L).survival[-1] < 1e-6
    assert projective_chain(two_level, basis_state(2, 1), 400, L).survival[-1] > 0.99
    tr = projective_chain(two_level, basis_state(2, 1), 4, L, substeps=5)
    assert len(tr) == 21 and np.all(np.diff(tr.survival) <= 0)
    with pytest.raises(ValueError):
        projective_chain(default_aah(), basis_state(9, 1), 3, 1.0)
    with pytest.raises(ValueError):
        projective_chain(two_level, np.array([1, 1]) / math.sqrt(2), 3, L)


def test_bloch_points():
    states = np.array([[1, 0], [1 / math.sqrt(2), 1j / math.sqrt(2)]])
    tr = EvolutionTrace(np.array([0.0, 1.0]), states, np.ones(2))
    b = bloch_trajectory(tr)
    np.testing.assert_allclose(b, [[0, 0, 1], [0, 1, 0]], atol=1e-15)


def test_rabi_bloch_great_circle(two_level):
    tr = propagate(two_level, _static(0.6), None, basis_state(2, 1), steps=1000)
    b = bloch_trajectory(tr)
    np.testing.assert_allclose(np.linalg.norm(b, axis=1), 1.0, atol=1e-9)
    assert np.max(np.abs(b[:, 0])) < 1e-9


def test_bloch_rejects_lattice(aah):
    tr = propagate(aah, _static(0.1), None, basis_state(9, 1), steps=300)
    with pytest.raises(ValueError, match="M = 2"):
        bloch_trajectory(tr)


def test_h0_unchanged_by_propagation(aah):
    before = build_h0(aah, 0.2).copy()
    propagate(aah, PumpRamp(0.2, 0.1, 0.1), None, basis_state(9, 1), steps=400)
    np.testing.assert_array_equal(before, build_h0(aah, 0.2))


def test_pulse_count_sweep_modes(two_level):
    ns = [1, 4, 16]
    fixed_alpha = pulse_count_sweep(two_level, ns, dbeta=200.0, alpha=0.5)
    fixed_len = pulse_count_sweep(two_level, ns, dbeta=200.0, Lm=0.005)
    assert fixed_alpha.shape == fixed_len.shape == (3, 2)
    # fixed coverage keeps the total detuned length; fixed pulse length grows it with n
    assert fixed_len[2, 0] > fixed_len[0, 0]
    with pytest.raises(ValueError, match="exactly one"):
        pulse_count_sweep(two_level, ns, dbeta=1.0)
    with pytest.raises(ValueError, match="alpha"):
        pulse_count_sweep(two_level, [40], dbeta=1.0, Lm=0.01)
