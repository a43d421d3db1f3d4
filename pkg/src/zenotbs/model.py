"""Lattice and drive definitions, and the instantaneous Hamiltonian.

The propagation equation is ``-i d/dz |psi> = H(z) |psi>`` with

    H(z) = H0(phi(z)) + sum_m dbeta_m(z) |m><m|

where ``H0`` is either a pair of coupled modes or an Aubry-Andre-Harper
(AAH) chain with cosine-modulated nearest-neighbour hopping.  Sites are
numbered from 1, as in the usual ``c_m`` notation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

TWO_LEVEL = "two_level"
AAH = "aah"
PHI_UNITS = ("turns", "radians")

# Slack used when checking that z lies inside a closed interval.
_Z_EPS = 1e-12


@dataclass(frozen=True)
class LatticeSpec:
    """Static description of a tight-binding waveguide array.

    ``beta`` is the uniform propagation constant, ``kappa0`` the static
    coupling and ``kappa_m`` the hopping modulation depth, all in 1/m.
    ``phi_unit`` fixes how every phase passed alongside this spec is read.
    """

    kind: str = AAH
    M: int = 9
    beta: float = 35.0
    kappa0: float = 10.0
    kappa_m: float = 5.0
    ell: float = 1.0 / 3.0
    phi_unit: str = "turns"

    def __post_init__(self):
        if self.kind not in (TWO_LEVEL, AAH):
            raise ValueError(f"kind: expected 'two_level' or 'aah', got {self.kind!r}")
        if self.phi_unit not in PHI_UNITS:
            raise ValueError(f"phi_unit: expected one of {PHI_UNITS}, got {self.phi_unit!r}")
        if int(self.M) != self.M or self.M < 2:
            raise ValueError(f"M: need an integer >= 2, got {self.M!r}")
        if not self.kappa0 > 0:
            raise ValueError(f"kappa0: must be > 0, got {self.kappa0!r}")
        if not self.kappa_m >= 0:
            raise ValueError(f"kappa_m: must be >= 0, got {self.kappa_m!r}")
        if not np.isfinite(self.beta):
            raise ValueError(f"beta: must be finite, got {self.beta!r}")
        if self.kind == TWO_LEVEL:
            if self.M != 2:
                raise ValueError(f"M: a two_level lattice has M = 2, got {self.M}")
            if self.kappa_m != 0:
                raise ValueError("kappa_m: must be 0 for a two_level lattice")
        elif self.M < 3:
            raise ValueError(f"M: an aah lattice needs M >= 3, got {self.M}")

    @classmethod
    def two_level(cls, beta: float = 35.0, kappa: float = 10.3) -> "LatticeSpec":
        return cls(kind=TWO_LEVEL, M=2, beta=beta, kappa0=kappa, kappa_m=0.0)

    @classmethod
    def aah(cls, M: int = 9, beta: float = 35.0, kappa0: float = 10.0,
            kappa_m: float = 5.0, ell: float = 1.0 / 3.0,
            phi_unit: str = "turns") -> "LatticeSpec":
        return cls(kind=AAH, M=M, beta=beta, kappa0=kappa0, kappa_m=kappa_m,
                   ell=ell, phi_unit=phi_unit)

    def to_radians(self, phi: float) -> float:
        return 2.0 * math.pi * phi if self.phi_unit == "turns" else float(phi)

    @property
    def period(self) -> float:
        """One full period of phi in this spec's unit."""
        return 1.0 if self.phi_unit == "turns" else 2.0 * math.pi


def default_aah(**overrides) -> LatticeSpec:
    """Repository default AAH preset (M = 9, kappa0 = 10, kappa_m = 5 per metre).

    The coupling values are placeholders chosen to leave open gaps; the
    preset refuses parameter sets where some hopping could change sign.
    """
    spec = LatticeSpec.aah(**overrides)
    if spec.kappa0 - spec.kappa_m <= 0:
        raise ValueError("kappa_m: preset requires kappa0 - kappa_m > 0 so all hoppings stay positive")
    return spec


@dataclass(frozen=True)
class PumpRamp:
    """Linear phase ramp ``phi(z) = phi0 + dphi * z / L`` over ``0 <= z <= L``."""

    phi0: float = 0.0
    dphi: float = 0.0
    L: float = 1.0

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError(f"L: must be > 0, got {self.L!r}")

    def phi(self, z: float) -> float:
        return self.phi0 + self.dphi * z / self.L

    def check(self, z: float) -> None:
        if z < -_Z_EPS * max(1.0, self.L) or z > self.L * (1 + _Z_EPS) + _Z_EPS:
            raise ValueError(f"z = {z!r} outside ramp range [0, {self.L}]")


# --- measurement profiles -------------------------------------------------

@dataclass(frozen=True)
class Constant:
    dbeta: float

    def value(self, z: float) -> float:
        return self.dbeta

    def breakpoints(self) -> Tuple[float, ...]:
        return ()

    def max_abs(self) -> float:
        return abs(self.dbeta)


@dataclass(frozen=True)
class LinearRamp:
    """Linear change from ``dbeta_start`` at ``z_start`` to ``dbeta_end`` at ``z_end``.

    The value is held constant outside ``[z_start, z_end]``.
    """

    dbeta_start: float
    dbeta_end: float
    z_start: float
    z_end: float

    def __post_init__(self):
        if not self.z_end > self.z_start:
            raise ValueError("z_end: must exceed z_start")

    def value(self, z: float) -> float:
        t = (z - self.z_start) / (self.z_end - self.z_start)
        t = min(max(t, 0.0), 1.0)
        return self.dbeta_start + (self.dbeta_end - self.dbeta_start) * t

    def breakpoints(self) -> Tuple[float, ...]:
        return (self.z_start, self.z_end)

    def max_abs(self) -> float:
        return max(abs(self.dbeta_start), abs(self.dbeta_end))


@dataclass(frozen=True)
class PulseTrain:
    """``n`` evenly spaced on-segments of length ``Lm`` inside ``[0, span]``.

    Segment ``k`` is centred at ``(k + 1/2) * span / n``; with coverage
    ``alpha = n * Lm / span == 1`` the segments tile the span exactly.
    """

    n: int
    Lm: float
    dbeta: float
    span: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n: need a positive integer, got {self.n!r}")
        if not self.span > 0 or not self.Lm > 0:
            raise ValueError("Lm, span: must be > 0")
        alpha = self.alpha
        if alpha > 1 + 1e-12:
            raise ValueError(f"alpha = n*Lm/span = {alpha:.6g} exceeds 1; pulses would overlap")

    @classmethod
    def from_coverage(cls, n: int, alpha: float, dbeta: float, span: float) -> "PulseTrain":
        if not 0 < alpha <= 1:
            raise ValueError(f"alpha: need 0 < alpha <= 1, got {alpha!r}")
        return cls(n=n, Lm=alpha * span / n, dbeta=dbeta, span=span)

    @property
    def alpha(self) -> float:
        return self.n * self.Lm / self.span

    def segments(self) -> np.ndarray:
        centres = (np.arange(self.n) + 0.5) * self.span / self.n
        half = 0.5 * min(self.Lm, self.span / self.n)
        return np.stack([centres - half, centres + half], axis=1)

    def value(self, z: float) -> float:
        if z < -_Z_EPS * self.span or z > self.span * (1 + _Z_EPS):
            raise ValueError(f"z = {z!r} outside pulse-train span [0, {self.span}]")
        pitch = self.span / self.n
        k = min(int(z // pitch), self.n - 1)
        seg = self.segments()
        tol = _Z_EPS * self.span
        # z // pitch can land one segment off at a boundary
        for lo, hi in seg[max(k - 1, 0):k + 2]:
            if lo - tol <= z <= hi + tol:
                return self.dbeta
        return 0.0

    def breakpoints(self) -> Tuple[float, ...]:
        return tuple(float(x) for x in self.segments().ravel())

    def max_abs(self) -> float:
        return abs(self.dbeta)


@dataclass(frozen=True)
class Sampled:
    """Piecewise-linear interpolation of tabulated values."""

    z: Tuple[float, ...]
    values: Tuple[float, ...]

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.ndim != 1 or len(z) < 2 or len(z) != len(self.values):
            raise ValueError("z, values: need equal-length 1-D tables with >= 2 entries")
        if np.any(np.diff(z) <= 0):
            raise ValueError("z: grid must be strictly increasing")
        object.__setattr__(self, "z", tuple(float(x) for x in z))
        object.__setattr__(self, "values", tuple(float(x) for x in self.values))

    def value(self, z: float) -> float:
        lo, hi = self.z[0], self.z[-1]
        tol = _Z_EPS * max(1.0, abs(hi))
        if z < lo - tol or z > hi + tol:
            raise ValueError(f"z = {z!r} outside sampled grid [{lo}, {hi}]")
        return float(np.interp(z, self.z, self.values))

    def breakpoints(self) -> Tuple[float, ...]:
        return self.z

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


Profile = Union[Constant, LinearRamp, PulseTrain, Sampled]


@dataclass(frozen=True)
class MeasurementProgram:
    """On-site detunings ``dbeta_m(z)`` applied to chosen sites (1-based)."""

    entries: Tuple[Tuple[int, Profile], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple((int(m), p) for m, p in self.entries))

    @classmethod
    def constant(cls, site: int, dbeta: float) -> "MeasurementProgram":
        return cls(((site, Constant(dbeta)),))

    @classmethod
    def single(cls, site: int, profile: Profile) -> "MeasurementProgram":
        return cls(((site, profile),))

    def __bool__(self) -> bool:
        return bool(self.entries)

    def validate(self, M: int) -> None:
        for site, _ in self.entries:
            if not 1 <= site <= M:
                raise ValueError(f"site: index {site} outside 1..{M}")

    def diagonal(self, z: float, M: int) -> np.ndarray:
        if z < -_Z_EPS:
            raise ValueError(f"z = {z!r} is negative")
        self.validate(M)
        d = np.zeros(M)
        for site, profile in self.entries:
            d[site - 1] += profile.value(z)
        return d

    def breakpoints(self) -> Tuple[float, ...]:
        pts = set()
        for _, profile in self.entries:
            pts.update(profile.breakpoints())
        return tuple(sorted(pts))

    def max_abs(self) -> float:
        return sum(p.max_abs() for _, p in self.entries)


@dataclass(frozen=True)
class WToDbetaMap:
    """Affine calibration ``dbeta = a * w + b`` from attached width ``w`` in mm."""

    a: float
    b: float = 0.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"a: map must be increasing (a > 0), got {self.a!r}")

    def __call__(self, w_mm):
        return self.a * np.asarray(w_mm, dtype=float) + self.b


# --- Hamiltonian builders -------------------------------------------------

def hopping(spec: LatticeSpec, m: int, phi: float) -> float:
    """Coupling between sites ``m`` and ``m + 1``: ``kappa0 + kappa_m cos(2 pi ell m + phi)``."""
    if not 1 <= m <= spec.M - 1:
        raise ValueError(f"m: bond index {m} outside 1..{spec.M - 1}")
    if spec.kind == TWO_LEVEL:
        return float(spec.kappa0)
    return float(spec.kappa0 + spec.kappa_m * math.cos(2.0 * math.pi * spec.ell * m + spec.to_radians(phi)))


def hoppings(spec: LatticeSpec, phi: float) -> np.ndarray:
    """All ``M - 1`` bond couplings at phase ``phi``."""
    if spec.kind == TWO_LEVEL:
        return np.full(spec.M - 1, float(spec.kappa0))
    m = np.arange(1, spec.M)
    return spec.kappa0 + spec.kappa_m * np.cos(2.0 * np.pi * spec.ell * m + spec.to_radians(phi))


def hoppings_dphi(spec: LatticeSpec, phi: float) -> np.ndarray:
    """Derivative of :func:`hoppings` with respect to ``phi`` (in ``spec.phi_unit``)."""
    if spec.kind == TWO_LEVEL:
        return np.zeros(spec.M - 1)
    m = np.arange(1, spec.M)
    scale = 2.0 * np.pi if spec.phi_unit == "turns" else 1.0
    return -scale * spec.kappa_m * np.sin(2.0 * np.pi * spec.ell * m + spec.to_radians(phi))


def _tridiagonal(diag: np.ndarray, off: np.ndarray) -> np.ndarray:
    n = len(diag)
    h = np.diag(np.asarray(diag, dtype=float))
    idx = np.arange(n - 1)
    h[idx, idx + 1] = off
    h[idx + 1, idx] = off
    return h


def build_h0(spec: LatticeSpec, phi: float = 0.0) -> np.ndarray:
    """Unperturbed Hamiltonian: ``beta`` on the diagonal, hoppings off it."""
    return _tridiagonal(np.full(spec.M, float(spec.beta)), hoppings(spec, phi))


def build_measurement(program: MeasurementProgram, z: float, M: int) -> np.ndarray:
    return np.diag(program.diagonal(z, M))


def hamiltonian_at(spec: LatticeSpec, ramp: PumpRamp, program: MeasurementProgram,
                   z: float) -> np.ndarray:
    ramp.check(z)
    h = build_h0(spec, ramp.phi(z))
    h[np.diag_indices(spec.M)] += program.diagonal(z, spec.M)
    return h


def static_hamiltonian(spec: LatticeSpec, phi: float, dbeta: float = 0.0,
                       site: int = 1) -> np.ndarray:
    """``H0(phi)`` plus a single on-site detuning; used for spectral scans."""
    h = build_h0(spec, phi)
    if dbeta:
        if not 1 <= site <= spec.M:
            raise ValueError(f"site: index {site} outside 1..{spec.M}")
        h[site - 1, site - 1] += dbeta
    return h


def gershgorin_norm(h: np.ndarray) -> float:
    """Upper bound on the spectral radius from Gershgorin discs."""
    return float(np.max(np.sum(np.abs(h), axis=1)))
