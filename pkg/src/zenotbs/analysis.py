"""Zeno / anti-Zeno diagnostics built on top of propagation and eigenanalysis."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .evolve import EvolutionTrace, as_state, basis_state, propagate, rabi_half_period
from .model import (LatticeSpec, LinearRamp, MeasurementProgram, PulseTrain, PumpRamp,
                    default_aah, hamiltonian_at)
from .spectral import SpectralFrame, boundary_state_index, eigenframe, frame_from_matrix, zeta

STRONG_DBETA_FACTOR = 6.0
CHI_THRESHOLD = 0.1
OVERLAP_FLOOR = 1e-14

# Reference scenario points, phases in turns.
ZE_POINT = (0.25, -0.5)
AZE_POINT = (-0.6, 0.4)
RAMP_PHI = -0.2
RAMP_SPAN = 0.7


class OverlapUnderflowError(ArithmeticError):
    """An overlap entering the decay-rate logarithm vanished."""


class TrackingError(RuntimeError):
    """A band could not be followed continuously along a path."""


# --- decomposition --------------------------------------------------------

@dataclass
class DecompositionWeights:
    """Weights of a state on a fixed eigenbasis, dynamical phases removed.

    ``state = sum_i omega_i exp(-i k_i z) basis[:, i]``.
    """

    omega: np.ndarray
    eigenvalues: np.ndarray
    basis: np.ndarray
    z: float = 0.0

    @property
    def weights(self) -> np.ndarray:
        return np.abs(self.omega) ** 2

    def reconstruct(self) -> np.ndarray:
        return self.basis @ (self.omega * np.exp(-1j * self.eigenvalues * self.z))


def decompose(state, frame: SpectralFrame, z: float = 0.0) -> DecompositionWeights:
    psi = as_state(state)
    amps = frame.eigenvectors.conj().T @ psi
    omega = amps * np.exp(1j * frame.eigenvalues * z)
    return DecompositionWeights(omega=omega, eigenvalues=frame.eigenvalues.copy(),
                                basis=frame.eigenvectors.copy(), z=z)


def transfer_fidelity(trace_or_state, target) -> float:
    """``|<target|psi_final>|^2``."""
    if isinstance(trace_or_state, EvolutionTrace):
        psi = trace_or_state.final_state
    else:
        psi = np.asarray(trace_or_state, dtype=complex)
    psi = as_state(psi, tol=1e-8)
    t = as_state(target, tol=1e-8)
    return float(abs(np.vdot(t, psi)) ** 2)


# --- band following -------------------------------------------------------

def track_band(hfun, band: int, s_values: np.ndarray, min_overlap: float = 0.9,
               max_depth: int = 30) -> np.ndarray:
    """Follow eigenvector ``band`` of ``hfun(s)`` across ``s_values``.

    Consecutive samples whose eigenvectors overlap by less than
    ``min_overlap`` are bisected until they do; the returned vector at the
    last sample is gauge-chained to the first.  Raises
    :class:`TrackingError` when bisection cannot resolve a near-crossing.
    """
    s_values = np.asarray(s_values, dtype=float)
    hs = np.array([hfun(s) for s in s_values])
    _, vs = np.linalg.eigh(hs)
    vecs = vs[:, :, band].astype(complex)

    def step(s0, v0, s1, v1, depth):
        o = np.vdot(v0, v1)
        if abs(o) >= min_overlap:
            return v1 * (np.conj(o) / abs(o))
        if depth == 0:
            raise TrackingError(f"band {band} lost between s={s0:.6g} and s={s1:.6g}")
        sm = 0.5 * (s0 + s1)
        vm = np.linalg.eigh(hfun(sm))[1][:, band].astype(complex)
        vm = step(s0, v0, sm, vm, depth - 1)
        return step(sm, vm, s1, v1, depth - 1)

    v = vecs[0]
    for k in range(1, len(s_values)):
        v = step(s_values[k - 1], v, s_values[k], vecs[k], max_depth)
    return v


# --- relative decay rate --------------------------------------------------

def _as_program(program: Union[MeasurementProgram, None, float], site: int) -> MeasurementProgram:
    if program is None:
        return MeasurementProgram()
    if isinstance(program, MeasurementProgram):
        return program
    return MeasurementProgram.constant(site, float(program))


def relative_decay_rate(spec: LatticeSpec, phi0: float, dphi: float,
                        program: Union[MeasurementProgram, float, None], band: int,
                        z: Optional[float] = None, L: float = 1.0, site: int = 2,
                        track_points: int = 101) -> float:
    """Measurement-induced change of the initial-state overlap of band ``band``.

    ``chi = -log(|<psi_j(0)|Psi_j(z)>|^2 / |<psi_j(0)|psi_j(z)>|^2)`` where
    ``psi_j`` follows ``H0(phi(z))`` and ``Psi_j`` follows the measured
    Hamiltonian.  A bare number for ``program`` means a constant detuning on
    ``site``.  Negative values signal Zeno freezing, positive ones anti-Zeno
    acceleration.
    """
    program = _as_program(program, site)
    ramp = PumpRamp(phi0, dphi, L)
    z = L if z is None else float(z)
    ramp.check(z)
    s = np.linspace(0.0, z, max(2, track_points))
    bare = MeasurementProgram()

    def h_bare(x):
        return hamiltonian_at(spec, ramp, bare, x)

    def h_meas(x):
        return hamiltonian_at(spec, ramp, program, x)

    psi0 = np.linalg.eigh(h_bare(0.0))[1][:, band]
    psi_z = track_band(h_bare, band, s)
    big_psi_z = track_band(h_meas, band, s)
    num = abs(np.vdot(psi0, big_psi_z)) ** 2
    den = abs(np.vdot(psi0, psi_z)) ** 2
    if num < OVERLAP_FLOOR or den < OVERLAP_FLOOR:
        raise OverlapUnderflowError(
            f"overlap underflow (measured {num:.3g}, bare {den:.3g}); chi diverges")
    return float(-math.log(num / den))


def right_boundary_band(spec: LatticeSpec, phi: float, half: str = "lower") -> int:
    """Energy index of the right boundary state of ``H0(phi)``."""
    return boundary_state_index(eigenframe(spec, phi), "right", half)


@dataclass
class PhaseDiagram:
    """``chi`` over a ``(phi0, dphi, dbeta)`` grid with ZE / AZE labels."""

    phi0: np.ndarray
    dphi: np.ndarray
    dbeta: np.ndarray
    chi: np.ndarray
    threshold: float
    band: Optional[int]
    site: int
    L: float
    z: float
    bands_used: np.ndarray = field(default=None)

    @property
    def labels(self) -> np.ndarray:
        return label_chi(self.chi, self.threshold)

    @property
    def missing(self) -> int:
        return int(np.sum(np.isnan(self.chi)))

    def rows(self):
        """Long-format rows ``(phi0, dphi, dbeta, chi, label)`` in grid order."""
        labels = self.labels
        for i, a in enumerate(self.phi0):
            for j, b in enumerate(self.dphi):
                for k, c in enumerate(self.dbeta):
                    yield a, b, c, self.chi[i, j, k], labels[i, j, k]


def label_chi(chi, threshold: float = CHI_THRESHOLD) -> np.ndarray:
    chi = np.asarray(chi, dtype=float)
    out = np.full(chi.shape, "neutral", dtype=object)
    out[chi < -threshold] = "ZE"
    out[chi > threshold] = "AZE"
    out[np.isnan(chi)] = "missing"
    return out


def _chi_row(args):
    spec, phi0, dphi_grid, dbeta_grid, band, site, L, z, track_points = args
    j = right_boundary_band(spec, phi0) if band is None else band
    row = np.full((len(dphi_grid), len(dbeta_grid)), np.nan)
    for a, dphi in enumerate(dphi_grid):
        for b, db in enumerate(dbeta_grid):
            try:
                row[a, b] = relative_decay_rate(spec, phi0, dphi, db, j, z=z, L=L,
                                                site=site, track_points=track_points)
            except (OverlapUnderflowError, TrackingError):
                pass
    return j, row


def phase_diagram(spec: LatticeSpec, phi0_grid, dphi_grid, dbeta_grid,
                  band: Optional[int] = None, site: int = 2, L: float = 1.0,
                  z: Optional[float] = None, threshold: float = CHI_THRESHOLD,
                  workers: Optional[int] = None, track_points: int = 101) -> PhaseDiagram:
    """Evaluate ``chi`` on every grid point.

    ``band=None`` uses the right boundary state of ``H0(phi0)`` at each
    ``phi0``.  Points where tracking fails or an overlap underflows are
    stored as NaN.  Rows over ``phi0`` are independent and run in a
    process pool when ``workers > 1``; results do not depend on it.
    """
    phi0_grid = np.atleast_1d(np.asarray(phi0_grid, dtype=float))
    dphi_grid = np.atleast_1d(np.asarray(dphi_grid, dtype=float))
    dbeta_grid = np.atleast_1d(np.asarray(dbeta_grid, dtype=float))
    z = L if z is None else z
    tasks = [(spec, p, dphi_grid, dbeta_grid, band, site, L, z, track_points) for p in phi0_grid]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_chi_row, tasks))
    else:
        results = [_chi_row(t) for t in tasks]
    chi = np.array([r for _, r in results]).reshape(len(phi0_grid), len(dphi_grid), len(dbeta_grid))
    return PhaseDiagram(phi0=phi0_grid, dphi=dphi_grid, dbeta=dbeta_grid, chi=chi,
                        threshold=threshold, band=band, site=site, L=L, z=z,
                        bands_used=np.array([j for j, _ in results]))


# --- Landau-Zener ---------------------------------------------------------

def landau_zener_probability(gap_min: float, rate: float) -> float:
    """Diabatic passage probability ``exp(-2 pi (gap_min / 2)^2 / rate)``.

    ``rate`` is the sweep speed of the diabatic level splitting, in 1/m per m.
    """
    if gap_min < 0:
        raise ValueError("gap_min: must be >= 0")
    if not rate > 0:
        raise ValueError("rate: must be > 0")
    return math.exp(-2.0 * math.pi * (0.5 * gap_min) ** 2 / rate)


def lz_parameters(z, gaps) -> tuple:
    """Minimum gap and diabatic sweep rate from a sampled gap curve.

    Fits ``gap^2 = gap_min^2 + rate^2 (z - z0)^2`` around the minimum,
    which is exact for a two-level avoided crossing.
    """
    z = np.asarray(z, dtype=float)
    g = np.asarray(gaps, dtype=float)
    k = int(np.argmin(g))
    # contiguous window around the minimum, at least 5 points
    near = g <= 2.0 * g[k]
    lo = max(0, min(k - 2, _first_run(near, k, -1)))
    hi = min(len(g) - 1, max(k + 2, _first_run(near, k, +1)))
    zz, gg = z[lo:hi + 1], g[lo:hi + 1]
    a, b, c = np.polyfit(zz - z[k], gg ** 2, 2)
    if a <= 0:
        raise ValueError("gap curve has no avoided-crossing minimum")
    gap_min2 = c - b * b / (4 * a)
    return math.sqrt(max(gap_min2, 0.0)), math.sqrt(a)


def _first_run(mask, k, direction):
    i = k
    while 0 <= i + direction < len(mask) and mask[i + direction]:
        i += direction
    return i


def simulate_landau_zener(kappa: float, rate: float, reach: float = 50.0,
                          steps: Optional[int] = None) -> float:
    """Diabatic passage probability of a swept two-mode crossing, by propagation.

    Mode 1 is detuned linearly from ``-reach*kappa`` to ``+reach*kappa`` at
    ``rate``.  The run starts in the adiabatic state that is mostly mode 1
    and reports the final weight on the adiabatic state that is again mostly
    mode 1.  Measuring in the adiabatic basis at both ends removes the slowly
    decaying finite-range oscillations that a site-basis readout carries.
    """
    if not kappa > 0:
        raise ValueError("kappa: must be > 0")
    if not rate > 0:
        raise ValueError("rate: must be > 0")
    spec = LatticeSpec.two_level(beta=0.0, kappa=kappa)
    d = reach * kappa
    length = 2.0 * d / rate
    ramp = PumpRamp(0.0, 0.0, length)
    program = MeasurementProgram.single(1, LinearRamp(-d, d, 0.0, length))

    def mostly_mode1(z):
        v = np.linalg.eigh(hamiltonian_at(spec, ramp, program, z))[1]
        return v[:, int(np.argmax(np.abs(v[0])))]

    trace = propagate(spec, ramp, program, mostly_mode1(0.0), steps=steps)
    return float(abs(np.vdot(mostly_mode1(length), trace.final_state)) ** 2)


def path_gap_curve(spec: LatticeSpec, ramp: PumpRamp, program: Optional[MeasurementProgram],
                   band: int, points: int = 2001):
    """Sampled ``(z, gap)`` between level ``band`` and its nearest neighbour."""
    program = program or MeasurementProgram()
    z = np.linspace(0.0, ramp.L, points)
    w = np.array([np.linalg.eigvalsh(hamiltonian_at(spec, ramp, program, x)) for x in z])
    below = w[:, band] - w[:, band - 1] if band > 0 else np.full(points, np.inf)
    above = w[:, band + 1] - w[:, band] if band < spec.M - 1 else np.full(points, np.inf)
    return z, np.minimum(below, above)


def adiabatic_length(spec: LatticeSpec, phi0: float, dphi: float, band: int,
                     program: Optional[MeasurementProgram] = None,
                     target: float = 0.01, points: int = 2001) -> float:
    """Ramp length for which the Landau-Zener leak at the tightest gap is ``target``.

    The diabatic sweep rate scales as ``1/L``, so ``P = exp(-c L)`` and the
    length follows from one unit-length gap scan.  A measurement program,
    if given, must be defined over ``[0, 1]``.
    """
    if not 0 < target < 1:
        raise ValueError("target: need 0 < target < 1")
    z, gaps = path_gap_curve(spec, PumpRamp(phi0, dphi, 1.0), program, band, points)
    gap_min, rate1 = lz_parameters(z, gaps)
    if gap_min == 0:
        raise ValueError("gap closes along the path; no adiabatic length exists")
    return rate1 * math.log(1.0 / target) / (2.0 * math.pi * (0.5 * gap_min) ** 2)


# --- scenario runners -----------------------------------------------------

@dataclass
class ScenarioResult:
    trace: EvolutionTrace
    initial_frame: SpectralFrame
    final_frame: SpectralFrame
    initial_index: int
    fidelity_left: float
    fidelity_right: float
    zeta_series: np.ndarray
    ramp: PumpRamp
    program: MeasurementProgram

    @property
    def final_zeta(self) -> float:
        return float(self.zeta_series[-1])


def run_tbs(spec: LatticeSpec, ramp: PumpRamp, program: Optional[MeasurementProgram],
            steps: Optional[int] = None, half: str = "lower", cell: int = 3,
            side: str = "right") -> ScenarioResult:
    """Launch a boundary state of ``H0(phi0)`` (the right one by default) and propagate.

    Fidelities are taken against the left and right boundary states of the
    full Hamiltonian at the end of the run, searched in the same half of
    the spectrum as the launched state.
    """
    program = program or MeasurementProgram()
    start = eigenframe(spec, ramp.phi0, cell=cell)
    j = boundary_state_index(start, side, half)
    trace = propagate(spec, ramp, program, start.state(j), steps=steps)
    end = frame_from_matrix(hamiltonian_at(spec, ramp, program, ramp.L),
                            ramp.phi(ramp.L), float(program.diagonal(ramp.L, spec.M).max(initial=0.0)),
                            cell=cell)
    left = end.state(boundary_state_index(end, "left", half))
    right = end.state(boundary_state_index(end, "right", half))
    zs = np.array([zeta(s, cell) for s in trace.states])
    return ScenarioResult(trace=trace, initial_frame=start, final_frame=end, initial_index=j,
                          fidelity_left=transfer_fidelity(trace, left),
                          fidelity_right=transfer_fidelity(trace, right),
                          zeta_series=zs, ramp=ramp, program=program)


def strong_dbeta(spec: LatticeSpec) -> float:
    """Strong-measurement preset, ``6 * kappa0``."""
    return STRONG_DBETA_FACTOR * spec.kappa0


def ze_tbs(spec: Optional[LatticeSpec] = None, dbeta: float = 0.0, site: int = 1,
           L: Optional[float] = None, steps: Optional[int] = None,
           point=ZE_POINT) -> ScenarioResult:
    """Pump the right boundary state across the bulk, optionally under measurement.

    ``L=None`` uses the Landau-Zener adiabatic length of the unmeasured pump.
    """
    spec = spec or default_aah()
    phi0, dphi = point
    if L is None:
        L = adiabatic_length(spec, phi0, dphi, right_boundary_band(spec, phi0))
    program = MeasurementProgram.constant(site, dbeta) if dbeta else MeasurementProgram()
    return run_tbs(spec, PumpRamp(phi0, dphi, L), program, steps)


def aze_tbs(spec: Optional[LatticeSpec] = None, dbeta: float = 0.0, site: int = 2,
            L: Optional[float] = None, steps: Optional[int] = None) -> ScenarioResult:
    """Anti-Zeno scenario at ``(phi0, dphi) = (-0.6, 0.4)``; measurement on site 2 by default."""
    return ze_tbs(spec, dbeta, site, L, steps, point=AZE_POINT)


def ramp_tunnel(spec: Optional[LatticeSpec] = None, dbeta_max: Optional[float] = None,
                site: int = 1, phi: float = RAMP_PHI, span: float = RAMP_SPAN,
                steps: Optional[int] = None) -> ScenarioResult:
    """Fixed phase, measurement strength ramped linearly from 0 to ``dbeta_max``."""
    spec = spec or default_aah()
    if dbeta_max is None:
        dbeta_max = strong_dbeta(spec)
    program = MeasurementProgram.single(site, LinearRamp(0.0, dbeta_max, 0.0, span))
    return run_tbs(spec, PumpRamp(phi, 0.0, span), program, steps)


def ze_two_level(spec: Optional[LatticeSpec] = None, dbeta: float = 0.0,
                 n_pulses: Optional[int] = None, alpha: float = 1.0,
                 L: Optional[float] = None, steps: Optional[int] = None) -> EvolutionTrace:
    """Two coupled modes over half a Rabi period, measuring mode 2.

    ``n_pulses=None`` applies ``dbeta`` continuously; otherwise as a pulse
    train of ``n_pulses`` segments with coverage ``alpha``.
    """
    spec = spec or LatticeSpec.two_level()
    L = rabi_half_period(spec) if L is None else L
    if not dbeta:
        program = MeasurementProgram()
    elif n_pulses is None:
        program = MeasurementProgram.constant(2, dbeta)
    else:
        program = MeasurementProgram.single(2, PulseTrain.from_coverage(n_pulses, alpha, dbeta, L))
    return propagate(spec, PumpRamp(0.0, 0.0, L), program, basis_state(2, 1), steps=steps)


def detuned_rabi_max_transfer(kappa: float, dbeta: float) -> float:
    """Peak population reaching the detuned mode, ``kappa^2 / (kappa^2 + (dbeta/2)^2)``."""
    return kappa ** 2 / (kappa ** 2 + (0.5 * dbeta) ** 2)
