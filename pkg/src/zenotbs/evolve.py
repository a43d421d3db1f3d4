"""Propagation of ``-i d/dz |psi> = H(z) |psi>`` and ideal projective chains."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import (TWO_LEVEL, LatticeSpec, MeasurementProgram, PulseTrain, PumpRamp, build_h0,
                    hoppings)

NORM_TOL = 1e-9
MAX_PHASE_STEP = 0.5
_CHUNK = 4096


class StepTooCoarseError(ValueError):
    """Raised when ``||H|| * h`` exceeds the accuracy limit of the integrator."""


@dataclass
class EvolutionTrace:
    """Sampled states along z.

    ``survival`` is the running no-jump probability of a projective chain
    and stays at 1 for coherent propagation.
    """

    z: np.ndarray
    states: np.ndarray
    survival: np.ndarray

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.states) ** 2

    @property
    def norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.populations, axis=1))

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def __len__(self) -> int:
        return len(self.z)


def as_state(amplitudes, tol: float = NORM_TOL) -> np.ndarray:
    """Validate a normalised complex state vector."""
    psi = np.asarray(amplitudes, dtype=complex).ravel()
    norm = np.linalg.norm(psi)
    if abs(norm - 1.0) > tol:
        raise ValueError(f"state is not normalised (norm = {norm:.12g})")
    return psi


def basis_state(M: int, site: int) -> np.ndarray:
    """Unit amplitude on ``site`` (1-based)."""
    psi = np.zeros(M, dtype=complex)
    psi[site - 1] = 1.0
    return psi


def hamiltonian_bound(spec: LatticeSpec, program: MeasurementProgram) -> float:
    """z-independent upper bound on the Gershgorin norm of H(z)."""
    hop = spec.kappa0 + (spec.kappa_m if spec.kind != TWO_LEVEL else 0.0)
    return abs(spec.beta) + 2.0 * hop + program.max_abs()


def default_steps(spec: LatticeSpec, ramp: PumpRamp, program: MeasurementProgram) -> int:
    return max(1, math.ceil(20.0 * hamiltonian_bound(spec, program) * ramp.L))


def _grid(L: float, steps: int, breakpoints) -> np.ndarray:
    """Step boundaries with every schedule discontinuity on the grid."""
    inner = [b for b in breakpoints if 0.0 < b < L and not math.isclose(b, L, rel_tol=1e-12)]
    nodes = np.unique(np.concatenate([[0.0], inner, [L]]))
    # drop near-coincident nodes produced by rounding in the profiles
    keep = np.concatenate([[True], np.diff(nodes) > 1e-12 * max(1.0, L)])
    nodes = nodes[keep]
    nodes[-1] = L
    pieces = []
    for a, b in zip(nodes[:-1], nodes[1:]):
        n = max(1, int(round(steps * (b - a) / L)))
        pieces.append(np.linspace(a, b, n + 1)[:-1])
    pieces.append([L])
    return np.concatenate(pieces)


def _midpoint_hamiltonians(spec, ramp, program, zm: np.ndarray) -> np.ndarray:
    M = spec.M
    idx = np.arange(M - 1)
    h = np.zeros((len(zm), M, M))
    h[:, np.arange(M), np.arange(M)] = spec.beta
    for k, z in enumerate(zm):
        off = hoppings(spec, ramp.phi(z))
        h[k, idx, idx + 1] = off
        h[k, idx + 1, idx] = off
        if program:
            h[k, np.arange(M), np.arange(M)] += program.diagonal(z, M)
    return h


def propagate(spec: LatticeSpec, ramp: PumpRamp, program: Optional[MeasurementProgram],
              psi0, steps: Optional[int] = None) -> EvolutionTrace:
    """Integrate from ``z = 0`` to ``z = ramp.L``.

    Each step applies ``exp(i H(z_mid) h)``, exact for the sampled
    Hamiltonian and therefore norm-preserving; the scheme is second order in
    ``h``.  Step boundaries include every breakpoint of the measurement
    program, so pulse edges never fall inside a step.
    """
    program = program or MeasurementProgram()
    program.validate(spec.M)
    psi = as_state(psi0)
    if len(psi) != spec.M:
        raise ValueError(f"psi0: length {len(psi)} does not match M = {spec.M}")
    if steps is None:
        steps = default_steps(spec, ramp, program)
    if steps < 1:
        raise ValueError("steps: must be >= 1")

    z = _grid(ramp.L, int(steps), program.breakpoints())
    h_steps = np.diff(z)
    states = np.empty((len(z), spec.M), dtype=complex)
    states[0] = psi
    for start in range(0, len(h_steps), _CHUNK):
        stop = min(start + _CHUNK, len(h_steps))
        zm = 0.5 * (z[start:stop] + z[start + 1:stop + 1])
        hs = _midpoint_hamiltonians(spec, ramp, program, zm)
        norms = np.max(np.sum(np.abs(hs), axis=2), axis=1) * h_steps[start:stop]
        bad = np.argmax(norms)
        if norms[bad] > MAX_PHASE_STEP:
            raise StepTooCoarseError(
                f"step too coarse: ||H||*h = {norms[bad]:.3g} > {MAX_PHASE_STEP} "
                f"at z = {zm[bad]:.6g}; increase steps")
        w, v = np.linalg.eigh(hs)
        phases = np.exp(1j * w * h_steps[start:stop, None])
        for k in range(stop - start):
            vk = v[k]
            psi = vk @ (phases[k] * (vk.T @ psi))
            states[start + k + 1] = psi
    return EvolutionTrace(z=z, states=states, survival=np.ones(len(z)))


def evolve_constant(h: np.ndarray, psi, z: float) -> np.ndarray:
    """Exact ``exp(i h z) psi`` for a z-independent Hamiltonian."""
    w, v = np.linalg.eigh(h)
    return v @ (np.exp(1j * w * z) * (v.conj().T @ np.asarray(psi, dtype=complex)))


def ideal_zeno_population(n: int) -> float:
    """Survival after ``n`` ideal measurements spread over half a Rabi period."""
    if int(n) != n or n < 1:
        raise ValueError(f"n: need a positive integer, got {n!r}")
    return math.cos(math.pi / (2 * n)) ** (2 * n)


def rabi_half_period(spec: LatticeSpec) -> float:
    """Distance over which a resonant two-level system fully transfers, ``pi / (2 kappa)``."""
    if spec.kind != TWO_LEVEL:
        raise ValueError("rabi_half_period needs a two_level spec")
    return math.pi / (2.0 * spec.kappa0)


def projective_chain(spec: LatticeSpec, psi0, n: int, span: float,
                     substeps: int = 1) -> EvolutionTrace:
    """Free evolution interrupted by ``n`` evenly spaced ideal projections.

    Each projection onto the initial basis state multiplies the survival
    probability by the current overlap and resets the state.  Samples are
    taken ``substeps`` times per interval; at a projection instant the
    stored state is the pre-projection one and ``survival`` already
    includes that projection.
    """
    if spec.kind != TWO_LEVEL:
        raise ValueError("projective_chain needs a two_level spec")
    if int(n) != n or n < 1:
        raise ValueError(f"n: need a positive integer, got {n!r}")
    if not span > 0:
        raise ValueError("span: must be > 0")
    psi = as_state(psi0)
    hits = np.flatnonzero(np.isclose(np.abs(psi), 1.0, atol=NORM_TOL))
    if len(hits) != 1:
        raise ValueError("psi0: projective chain needs a basis state")
    home = int(hits[0])
    measured = np.zeros(spec.M, dtype=complex)
    measured[home] = 1.0

    h = build_h0(spec)
    dz = span / (n * substeps)
    w, v = np.linalg.eigh(h)
    u = v @ np.diag(np.exp(1j * w * dz)) @ v.conj().T

    total = n * substeps
    z = np.linspace(0.0, span, total + 1)
    states = np.empty((total + 1, spec.M), dtype=complex)
    survival = np.empty(total + 1)
    states[0], survival[0] = psi, 1.0
    p_survive = 1.0
    for k in range(1, total + 1):
        psi = u @ psi
        if k % substeps == 0:
            p_survive *= abs(psi[home]) ** 2
            states[k] = psi
            psi = measured.copy()
        else:
            states[k] = psi
        survival[k] = p_survive
    return EvolutionTrace(z=z, states=states, survival=survival)


def pulse_count_sweep(spec: LatticeSpec, n_values, dbeta: float, alpha: Optional[float] = None,
                      Lm: Optional[float] = None, span: Optional[float] = None,
                      site: int = 2) -> np.ndarray:
    """Final populations after pulse trains of ``n`` segments, one row per ``n``.

    Give exactly one of ``alpha`` (coverage held fixed, pulses shorten as
    ``n`` grows) or ``Lm`` (pulse length held fixed, coverage grows).
    ``span`` defaults to half a Rabi period; mode 1 is launched.
    """
    if (alpha is None) == (Lm is None):
        raise ValueError("give exactly one of alpha or Lm")
    span = rabi_half_period(spec) if span is None else span
    ramp = PumpRamp(0.0, 0.0, span)
    rows = []
    for n in n_values:
        if alpha is not None:
            train = PulseTrain.from_coverage(int(n), alpha, dbeta, span)
        else:
            train = PulseTrain(n=int(n), Lm=Lm, dbeta=dbeta, span=span)
        trace = propagate(spec, ramp, MeasurementProgram.single(site, train), basis_state(spec.M, 1))
        rows.append(trace.populations[-1])
    return np.array(rows)


def bloch_trajectory(trace: EvolutionTrace) -> np.ndarray:
    """Bloch vectors ``(x, y, z)`` of a two-mode trace, one row per sample."""
    a = np.asarray(trace.states)
    if a.ndim != 2 or a.shape[1] != 2:
        raise ValueError("bloch_trajectory needs a two-mode trace (M = 2)")
    c = np.conj(a[:, 0]) * a[:, 1]
    return np.stack([2 * c.real, 2 * c.imag, np.abs(a[:, 0]) ** 2 - np.abs(a[:, 1]) ** 2], axis=1)


__all__ = [
    "EvolutionTrace", "StepTooCoarseError", "as_state", "basis_state", "bloch_trajectory",
    "default_steps", "evolve_constant", "ideal_zeno_population", "projective_chain",
    "propagate", "pulse_count_sweep", "rabi_half_period",
]
