import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import zenotbs.analysis as an
from oracles import detuned_rabi_max, lz_closed_form
from zenotbs.analysis import (OverlapUnderflowError, adiabatic_length, decompose, label_chi,
                              landau_zener_probability, lz_parameters, path_gap_curve,
                              phase_diagram, ramp_tunnel, aze_tbs, relative_decay_rate,
                              right_boundary_band, simulate_landau_zener, strong_dbeta,
                              transfer_fidelity, ze_tbs, ze_two_level)
from zenotbs.evolve import basis_state
from zenotbs.model import MeasurementProgram, PumpRamp, default_aah
from zenotbs.spectral import boundary_state_index, eigenframe


@pytest.fixture(scope="module")
def ze_run():
    return ze_tbs(default_aah())


# --- decomposition -------------------------------------------------------------

def test_decompose_eigenstate(aah):
    f = eigenframe(aah, 0.25)
    d = decompose(f.state(2), f, 0.0)
    expected = np.zeros(9)
    expected[2] = 1.0
    np.testing.assert_allclose(d.weights, expected, atol=1e-12)
    assert abs(d.omega[2] - 1.0) < 1e-12


def test_decompose_equal_superposition(aah):
    f = eigenframe(aah, 0.1)
    psi = (f.state(1) + f.state(4)) / math.sqrt(2)
    w = decompose(psi, f, 0.3).weights
    assert w[1] == pytest.approx(0.5) and w[4] == pytest.approx(0.5)


@given(st.lists(st.floats(-1, 1), min_size=18, max_size=18), st.floats(0, 5), st.floats(-1, 1))
def test_decompose_completeness(raw, z, phi):
    spec = default_aah()
    v = np.array(raw[:9]) + 1j * np.array(raw[9:])
    if np.linalg.norm(v) < 1e-3:
        return
    v = v / np.linalg.norm(v)
    d = decompose(v, eigenframe(spec, phi), z)
    assert abs(d.weights.sum() - 1) < 1e-9
    np.testing.assert_allclose(d.reconstruct(), v, atol=1e-9)


def test_decompose_rejects_unnormalised(aah):
    with pytest.raises(ValueError):
        decompose(np.ones(9), eigenframe(aah, 0.0))


def test_decompose_ze_path_lands_on_opposite_edge(ze_run):
    r = ze_run
    d = decompose(r.trace.final_state, r.initial_frame, r.trace.z[-1])
    assert int(np.argmax(d.weights)) == boundary_state_index(r.initial_frame, "left")
    assert r.fidelity_left > 0.9


# --- fidelity ------------------------------------------------------------------

def test_transfer_fidelity_trivial():
    psi = np.array([0.6, 0.8j])
    assert transfer_fidelity(psi, psi) == pytest.approx(1.0)
    assert transfer_fidelity(psi, np.array([0.8, -0.6j])) == pytest.approx(0.0, abs=1e-15)


# --- chi -------------------------------------------------------------------------

@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.05, 1.0), st.integers(0, 8))
def test_chi_vanishes_without_measurement(phi0, dphi, z, band):
    spec = default_aah()
    assert relative_decay_rate(spec, phi0, dphi, 0.0, band, z=z, track_points=21) == 0.0


def test_chi_negative_at_ze_point(aah):
    j = right_boundary_band(aah, 0.25)
    assert relative_decay_rate(aah, 0.25, -0.5, strong_dbeta(aah), j, site=2) < 0


def test_chi_accepts_program(aah):
    j = right_boundary_band(aah, 0.25)
    a = relative_decay_rate(aah, 0.25, -0.5, 60.0, j, site=1)
    b = relative_decay_rate(aah, 0.25, -0.5, MeasurementProgram.constant(1, 60.0), j)
    assert a == b


def test_chi_underflow_is_reported(aah, monkeypatch):
    monkeypatch.setattr(an, "OVERLAP_FLOOR", 2.0)
    with pytest.raises(OverlapUnderflowError, match="underflow"):
        relative_decay_rate(aah, 0.25, -0.5, 60.0, 2)


def test_chi_stable_under_finer_tracking(aah):
    j = right_boundary_band(aah, -0.6)
    for dphi in (0.4, -0.5, 0.0):
        a = relative_decay_rate(aah, -0.6, dphi, 60.0, j, track_points=101)
        b = relative_decay_rate(aah, -0.6, dphi, 60.0, j, track_points=202)
        assert abs(a - b) < 0.05


# --- phase diagram -----------------------------------------------------------------

@given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=1, max_size=20), st.floats(0.01, 1))
def test_labels_follow_threshold(chis, th):
    labels = label_chi(chis, th)
    for c, lab in zip(chis, labels):
        assert lab == ("ZE" if c < -th else "AZE" if c > th else "neutral")


def test_phase_diagram_zero_plane(aah):
    pd = phase_diagram(aah, [-0.6, 0.25], [-0.5, 0.4], [0.0])
    assert np.all(pd.chi == 0.0) and np.all(pd.labels == "neutral")


def test_phase_diagram_structure(aah):
    pd = phase_diagram(aah, np.linspace(-1, 1, 5), np.linspace(-1, 1, 5), [60.0])
    labels = set(pd.labels.ravel())
    assert {"ZE", "AZE"} <= labels
    assert pd.chi.shape == (5, 5, 1) and pd.missing == 0
    rows = list(pd.rows())
    assert len(rows) == 25 and rows[0][:3] == (-1.0, -1.0, 60.0)


def test_dphi_zero_row_has_aze(aah):
    pd = phase_diagram(aah, np.linspace(-1, 1, 11), [0.0], [20.0, 60.0, 120.0])
    assert np.any(pd.labels == "AZE")


def test_phase_diagram_parallel_matches_serial(aah):
    args = (aah, np.linspace(-1, 1, 4), [-0.5, 0.4], [30.0, 60.0])
    a = phase_diagram(*args)
    b = phase_diagram(*args, workers=2)
    np.testing.assert_array_equal(a.chi, b.chi)


# --- Landau-Zener --------------------------------------------------------------------

def test_lz_closed_form_points():
    assert landau_zener_probability(0.0, 1.0) == 1.0
    assert landau_zener_probability(2.0, 2 * math.pi) == pytest.approx(math.exp(-1))
    assert landau_zener_probability(1.0, 1e-6) < 1e-100
    with pytest.raises(ValueError, match="rate"):
        landau_zener_probability(1.0, 0.0)
    with pytest.raises(ValueError):
        landau_zener_probability(-1.0, 1.0)


def test_lz_parameters_on_hyperbola():
    z = np.linspace(-1, 1, 401)
    gaps = np.sqrt(0.3 ** 2 + (7.0 * (z - 0.1)) ** 2)
    gap, rate = lz_parameters(z, gaps)
    assert gap == pytest.approx(0.3, rel=1e-6) and rate == pytest.approx(7.0, rel=1e-6)


@pytest.mark.parametrize("p_target", [0.05, 0.3, 0.7, 0.95])
def test_lz_simulation_matches_formula(p_target):
    kappa = 1.0
    rate = 2 * math.pi * kappa ** 2 / math.log(1 / p_target)
    sim = simulate_landau_zener(kappa, rate)
    assert abs(sim - lz_closed_form(2 * kappa, rate)) / p_target < 0.1


def test_adiabatic_length_consistent(aah):
    j = right_boundary_band(aah, 0.25)
    L = adiabatic_length(aah, 0.25, -0.5, j, target=0.01)
    z, gaps = path_gap_curve(aah, PumpRamp(0.25, -0.5, 1.0), None, j)
    gap, rate1 = lz_parameters(z, gaps)
    assert landau_zener_probability(gap, rate1 / L) == pytest.approx(0.01)
    assert 10 < L < 100
    assert gap == pytest.approx(np.min(gaps), rel=1e-2)


# --- scenarios -------------------------------------------------------------------------

def test_ze_two_level_rabi_and_freezing(two_level):
    free = ze_two_level(two_level)
    assert free.populations[-1, 1] == pytest.approx(1.0, abs=1e-9)
    frozen = ze_two_level(two_level, dbeta=6 * two_level.kappa0)
    assert frozen.populations[:, 1].max() <= detuned_rabi_max(10.3, 61.8) + 1e-9
    assert frozen.populations[-1, 0] > 0.9


def test_ze_two_level_pulses(two_level):
    tr = ze_two_level(two_level, dbeta=300.0, n_pulses=10, alpha=0.5)
    assert tr.populations[-1, 0] > 0.5


def _consistent(result):
    winner = "left" if result.fidelity_left > result.fidelity_right else "right"
    return (result.final_zeta > 0) == (winner == "left")


def test_scenario_consistency_unmeasured_ze(ze_run):
    assert _consistent(ze_run)


@pytest.mark.parametrize("runner,kwargs", [
    (ze_tbs, {"dbeta": 60.0}),
    (aze_tbs, {"dbeta": 0.0}),
    (aze_tbs, {"dbeta": 60.0}),
    pytest.param(ramp_tunnel, {}, marks=pytest.mark.xfail(
        strict=True, reason="at -0.2 turns the lower-gap boundary state is left-localised; the "
                            "launched right state is a bulk-edge level whose zeta and fidelity disagree")),
])
def test_scenario_consistency(aah, runner, kwargs):
    assert _consistent(runner(aah, **kwargs))


def test_scenario_unitarity(ze_run):
    assert np.max(np.abs(ze_run.trace.norms - 1)) < 1e-9
    assert len(ze_run.zeta_series) == len(ze_run.trace)


def test_ramp_tunnel_program_shape(aah):
    r = ramp_tunnel(aah)
    prof = r.program.entries[0][1]
    assert r.program.entries[0][0] == 1
    assert prof.value(0.0) == 0.0 and prof.value(0.7) == pytest.approx(60.0)
    assert r.ramp.dphi == 0.0 and r.ramp.L == 0.7
    assert r.zeta_series[0] < -0.5


def test_initial_state_is_right_tbs(ze_run):
    psi0 = ze_run.trace.states[0]
    j = ze_run.initial_index
    assert abs(np.vdot(ze_run.initial_frame.state(j), psi0)) == pytest.approx(1.0)
    assert ze_run.zeta_series[0] < -0.8


def test_basis_state_helper():
    assert basis_state(3, 2)[1] == 1.0
