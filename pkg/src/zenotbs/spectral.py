"""Eigenanalysis of H(phi, dbeta): tracked bands, edge localisation and the quantum metric."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import LatticeSpec, hoppings_dphi, static_hamiltonian

DEGENERACY_FLAG = 1e-10
DEGENERACY_REL_TOL = 1e-8


class DegeneracyError(ValueError):
    """The requested band touches a neighbour, so its metric is undefined."""


@dataclass
class SpectralFrame:
    """Eigen-decomposition of H at one parameter point.

    Columns of ``eigenvectors`` are the states; ``zeta`` holds the edge
    localisation of each.  Without a gauge reference the columns follow
    ascending eigenvalue; with one, they follow the matched reference column.
    """

    phi: float
    dbeta: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    zeta: np.ndarray
    degenerate: bool = False

    @property
    def M(self) -> int:
        return len(self.eigenvalues)

    def state(self, j: int) -> np.ndarray:
        return self.eigenvectors[:, j]

    def gap(self, j: int) -> float:
        """Distance from level ``j`` to its nearest neighbour."""
        others = np.delete(self.eigenvalues, j)
        return float(np.min(np.abs(others - self.eigenvalues[j])))


def zeta(state, cell: int = 3) -> float:
    """Normalised left-minus-right edge intensity in ``[-1, 1]``.

    Compares the first ``cell`` sites against the last ``cell`` sites;
    +1 is fully left-localised, -1 fully right-localised, and 0 is returned
    when both edge cells are empty.
    """
    p = np.abs(np.asarray(state)) ** 2
    if cell < 1:
        raise ValueError("cell: must be >= 1")
    if 2 * cell > len(p):
        raise ValueError(f"cell: {cell} exceeds half the lattice ({len(p)} sites)")
    left = float(np.sum(p[:cell]))
    right = float(np.sum(p[-cell:]))
    if left + right < 1e-12:
        return 0.0
    return (left - right) / (left + right)


def _canonical_gauge(v: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest component is real and positive."""
    idx = np.argmax(np.abs(v) > np.max(np.abs(v), axis=0) * (1 - 1e-9), axis=0)
    lead = v[idx, np.arange(v.shape[1])]
    return v * (np.conj(lead) / np.abs(lead))


def align_to(reference: np.ndarray, v: np.ndarray, w: np.ndarray):
    """Reorder and rephase the columns of ``v`` to follow ``reference``.

    Matching maximises the total ``|overlap|``; afterwards every overlap
    with the matched reference column is real and positive.
    """
    overlap = reference.conj().T @ v
    rows, cols = linear_sum_assignment(-np.abs(overlap))
    order = cols[np.argsort(rows)]
    v = v[:, order]
    w = w[order]
    o = np.einsum("ij,ij->j", reference.conj(), v)
    mag = np.abs(o)
    phase = np.where(mag > 0, np.conj(o) / np.where(mag > 0, mag, 1.0), 1.0)
    return v * phase, w, mag


def frame_from_matrix(h: np.ndarray, phi: float = 0.0, dbeta: float = 0.0,
                      reference: Optional[np.ndarray] = None, cell: int = 3) -> SpectralFrame:
    w, v = np.linalg.eigh(h)
    degenerate = bool(np.any(np.diff(w) < DEGENERACY_FLAG))
    if reference is None:
        v = _canonical_gauge(v.astype(complex))
    else:
        v, w, _ = align_to(reference, v.astype(complex), w)
    cell = min(cell, len(w) // 2)
    z = np.array([zeta(v[:, j], cell) for j in range(len(w))])
    return SpectralFrame(phi=phi, dbeta=dbeta, eigenvalues=w, eigenvectors=v,
                         zeta=z, degenerate=degenerate)


def eigenframe(spec: LatticeSpec, phi: float, dbeta: float = 0.0, site: int = 1,
               reference: Optional[np.ndarray] = None, cell: int = 3) -> SpectralFrame:
    """Spectral frame of ``H0(phi) + dbeta |site><site|``."""
    return frame_from_matrix(static_hamiltonian(spec, phi, dbeta, site), phi, dbeta,
                             reference=reference, cell=cell)


def boundary_state_index(frame: SpectralFrame, side: str = "right",
                         half: Optional[str] = "lower") -> int:
    """Index of the most strongly edge-localised state.

    ``half`` restricts the search to the lower (``"lower"``) or upper
    (``"upper"``) half of the spectrum by energy rank; the AAH spectrum is
    mirror-symmetric about ``beta`` so both halves host one copy of each
    boundary branch.
    """
    if side not in ("left", "right"):
        raise ValueError("side: expected 'left' or 'right'")
    rank = np.argsort(np.argsort(frame.eigenvalues))
    M = frame.M
    if half == "lower":
        mask = rank <= M // 2
    elif half == "upper":
        mask = rank >= (M - 1) // 2
    elif half is None:
        mask = np.ones(M, dtype=bool)
    else:
        raise ValueError("half: expected 'lower', 'upper' or None")
    score = frame.zeta if side == "left" else -frame.zeta
    score = np.where(mask, score, -np.inf)
    return int(np.argmax(score))


def _track(make_frame: Callable[[float, Optional[np.ndarray]], SpectralFrame],
           s0: float, s1: float, prev: SpectralFrame, min_overlap: float,
           depth: int) -> SpectralFrame:
    frame = make_frame(s1, prev.eigenvectors)
    mags = np.abs(np.einsum("ij,ij->j", prev.eigenvectors.conj(), frame.eigenvectors))
    if np.min(mags) >= min_overlap or depth <= 0:
        return frame
    mid = 0.5 * (s0 + s1)
    half = _track(make_frame, s0, mid, prev, min_overlap, depth - 1)
    return _track(make_frame, mid, s1, half, min_overlap, depth - 1)


def band_structure(spec: LatticeSpec, path: Sequence[Tuple[float, float]], site: int = 1,
                   min_overlap: float = 0.9, max_depth: int = 16,
                   cell: int = 3) -> list:
    """Frames along a path of ``(phi, dbeta)`` points with chained gauge.

    Whenever consecutive tracked states overlap by less than
    ``min_overlap`` the segment is bisected and tracked through the
    intermediate points, which are not returned.
    """
    path = [(float(p), float(d)) for p, d in path]
    if not path:
        raise ValueError("path: must be nonempty")
    frames = [eigenframe(spec, *path[0], site=site, cell=cell)]
    for (p0, d0), (p1, d1) in zip(path[:-1], path[1:]):
        def make(s, ref, p0=p0, d0=d0, p1=p1, d1=d1):
            return eigenframe(spec, p0 + s * (p1 - p0), d0 + s * (d1 - d0), site=site,
                              reference=ref, cell=cell)
        f = _track(make, 0.0, 1.0, frames[-1], min_overlap, max_depth)
        f.phi, f.dbeta = p1, d1
        frames.append(f)
    return frames


# --- quantum metric -------------------------------------------------------

def default_deltas(spec: LatticeSpec) -> Tuple[float, float]:
    dphi = 1e-3 * spec.period
    return dphi, 1e-3 * max(spec.kappa0, 1.0)


def _band_vector(h: np.ndarray, band: int, tol: float) -> Tuple[np.ndarray, float]:
    w, v = np.linalg.eigh(h)
    scale = max(np.max(np.abs(w)), 1.0)
    gaps = [abs(w[band] - w[k]) for k in (band - 1, band + 1) if 0 <= k < len(w)]
    if gaps and min(gaps) < tol * scale:
        raise DegeneracyError(f"band {band} is degenerate (gap {min(gaps):.3g})")
    return v[:, band].astype(complex), min(gaps) if gaps else np.inf


def metric_from_hamiltonian(hfun: Callable[[np.ndarray], np.ndarray], point, deltas,
                            band: int, form: str = "difference",
                            gauge_phases: Optional[np.ndarray] = None,
                            tol: float = DEGENERACY_REL_TOL) -> np.ndarray:
    """Quantum metric of eigenstate ``band`` of ``hfun(params)`` at ``point``.

    ``form="difference"`` differentiates gauge-aligned eigenvectors by
    central differences and evaluates
    ``Re(<d_a psi|d_b psi> - <d_a psi|psi><psi|d_b psi>)``.
    ``form="projector"`` differentiates ``P = |psi><psi|`` instead and
    returns ``Re Tr(d_a P d_b P) / 2``, which needs no gauge choice.
    ``gauge_phases`` (one per stencil vector, centre first) multiplies the
    raw eigenvectors before either evaluation.
    """
    point = np.asarray(point, dtype=float)
    deltas = np.asarray(deltas, dtype=float)
    n = len(point)
    if np.any(deltas <= 0):
        raise ValueError("deltas: must be > 0")
    phases = np.ones(2 * n + 1, dtype=complex) if gauge_phases is None else np.asarray(gauge_phases)

    psi0, _ = _band_vector(hfun(point), band, tol)
    psi0 = psi0 * phases[0]
    plus, minus = [], []
    for a in range(n):
        e = np.zeros(n)
        e[a] = deltas[a]
        vp, _ = _band_vector(hfun(point + e), band, tol)
        vm, _ = _band_vector(hfun(point - e), band, tol)
        plus.append(vp * phases[1 + 2 * a])
        minus.append(vm * phases[2 + 2 * a])

    g = np.empty((n, n))
    if form == "difference":
        d = []
        for a in range(n):
            vp, vm = plus[a], minus[a]
            vp = vp * _unit(np.vdot(vp, psi0))
            vm = vm * _unit(np.vdot(vm, psi0))
            d.append((vp - vm) / (2 * deltas[a]))
        for a in range(n):
            for b in range(n):
                val = np.vdot(d[a], d[b]) - np.vdot(d[a], psi0) * np.vdot(psi0, d[b])
                g[a, b] = val.real
    elif form == "projector":
        dp = [(np.outer(plus[a], plus[a].conj()) - np.outer(minus[a], minus[a].conj()))
              / (2 * deltas[a]) for a in range(n)]
        for a in range(n):
            for b in range(n):
                g[a, b] = 0.5 * np.trace(dp[a] @ dp[b]).real
    else:
        raise ValueError("form: expected 'difference' or 'projector'")
    return 0.5 * (g + g.T)


def _unit(c: complex) -> complex:
    # phase that makes <stencil|centre> real positive after multiplication
    return c / abs(c) if abs(c) > 0 else 1.0


def quantum_metric(spec: LatticeSpec, band: int, phi: float, dbeta: float = 0.0,
                   site: int = 1, deltas: Optional[Tuple[float, float]] = None,
                   form: str = "difference") -> np.ndarray:
    """2x2 metric in the ``(phi, dbeta)`` plane for eigenstate ``band``.

    ``phi`` is read in ``spec.phi_unit`` so the ``phi``-components carry
    that unit.  Raises :class:`DegeneracyError` near band touchings.
    """
    if deltas is None:
        deltas = default_deltas(spec)

    def hfun(x):
        return static_hamiltonian(spec, x[0], x[1], site)

    return metric_from_hamiltonian(hfun, (phi, dbeta), deltas, band, form=form)


def metric_sum_over_states(spec: LatticeSpec, band: int, phi: float, dbeta: float = 0.0,
                           site: int = 1) -> np.ndarray:
    """Metric from analytic Hamiltonian derivatives (perturbation-theory form)."""
    h = static_hamiltonian(spec, phi, dbeta, site)
    w, v = np.linalg.eigh(h)
    M = spec.M
    dh_phi = np.zeros((M, M))
    idx = np.arange(M - 1)
    dh_phi[idx, idx + 1] = dh_phi[idx + 1, idx] = hoppings_dphi(spec, phi)
    dh_db = np.zeros((M, M))
    dh_db[site - 1, site - 1] = 1.0
    a = v.T @ dh_phi @ v[:, band]
    b = v.T @ dh_db @ v[:, band]
    denom = (w - w[band]) ** 2
    mask = np.arange(M) != band
    if np.min(denom[mask]) < (DEGENERACY_REL_TOL * max(np.max(np.abs(w)), 1.0)) ** 2:
        raise DegeneracyError(f"band {band} is degenerate")
    comps = np.stack([a, b])[:, mask] / np.sqrt(denom[mask])
    return comps @ comps.T


@dataclass
class MetricMap:
    """Metric tensor of one band over a ``(dbeta, phi)`` grid.

    ``g`` has shape ``(len(dbeta), len(phi), 2, 2)``; points where the band
    was degenerate hold NaN and are counted in ``missing``.
    """

    phi: np.ndarray
    dbeta: np.ndarray
    g: np.ndarray
    band: int
    site: int

    @property
    def abs_det(self) -> np.ndarray:
        return np.abs(np.linalg.det(self.g))

    @property
    def missing(self) -> int:
        return int(np.sum(np.isnan(self.g[..., 0, 0])))

    @property
    def g_phiphi(self) -> np.ndarray:
        return self.g[..., 0, 0]


def metric_map(spec: LatticeSpec, band: int, phi_grid, dbeta_grid, site: int = 1,
               deltas: Optional[Tuple[float, float]] = None, workers: Optional[int] = None,
               form: str = "difference") -> MetricMap:
    phi_grid = np.asarray(phi_grid, dtype=float)
    dbeta_grid = np.asarray(dbeta_grid, dtype=float)
    if phi_grid.size < 1 or dbeta_grid.size < 1:
        raise ValueError("grids: need at least one point per axis")
    points = [(i, k) for i in range(len(dbeta_grid)) for k in range(len(phi_grid))]

    def one(ik):
        i, k = ik
        try:
            return quantum_metric(spec, band, phi_grid[k], dbeta_grid[i], site, deltas, form)
        except DegeneracyError:
            return np.full((2, 2), np.nan)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(one, points))
    else:
        values = [one(p) for p in points]
    g = np.array(values).reshape(len(dbeta_grid), len(phi_grid), 2, 2)
    return MetricMap(phi=phi_grid, dbeta=dbeta_grid, g=g, band=band, site=site)
