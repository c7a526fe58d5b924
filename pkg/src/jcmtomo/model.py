"""Shared domain types, unit conventions and photon statistics.

Units
-----
Frequencies (``g``, ``delta``, ``nu`` and the Rabi frequencies) are angular
and given in kHz (10^3 rad/s). Times are in microseconds. Every phase is
formed as ``freq * t * 1e-3``, so ``g = 50`` and ``t = 20`` give a phase of
exactly 1. hbar = 1 throughout.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Literal, Union

import numpy as np
from scipy.special import gammainc, gammaln

from .errors import UnphysicalBloch

#: kHz * us -> dimensionless phase
KHZ_US = 1e-3

#: Poisson tail mass allowed beyond an automatic Fock cutoff
TAIL_TOL = 1e-12

#: slack on the unit-ball test for validated Bloch vectors
BLOCH_TOL = 1e-12


class SpinConvention(enum.Enum):
    """Normalization of the two-level operators.

    ``PAULI`` has sigma_z eigenvalues +-1, ``HALF`` has +-1/2. A Bloch vector
    expressed in a convention holds the expectations of that convention's
    operators, so its components are ``scale`` times the usual (Pauli) Bloch
    components, and a sigma_z readout is ``scale`` times the detector outcome.
    """

    PAULI = "pauli"
    HALF = "half"

    @property
    def scale(self) -> float:
        return 1.0 if self is SpinConvention.PAULI else 0.5

    @classmethod
    def parse(cls, value: Union[str, "SpinConvention"]) -> "SpinConvention":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


#: normalization in which the closed-form moment series hold exactly;
#: confirmed against the Fock-space propagator by ``calibrate_convention``
SERIES_CONVENTION = SpinConvention.HALF


def auto_cutoff(nbar: float, tail_tol: float = TAIL_TOL) -> int:
    """Smallest photon cutoff N whose Poisson(nbar) tail beyond N is below tol.

    Never returns less than 1.
    """
    if nbar < 0:
        raise ValueError(f"nbar must be non-negative, got {nbar}")
    if not 0.0 < tail_tol < 1.0:
        raise ValueError(f"tail_tol must lie in (0, 1), got {tail_tol}")
    if nbar == 0:
        return 1
    n = 0
    # P(X > n) for X ~ Poisson(nbar) is the regularized lower gamma P(n + 1, nbar)
    while gammainc(n + 1, nbar) >= tail_tol:
        n += 1
    return max(1, n)


@dataclass(frozen=True)
class JcmConfig:
    """Physical parameters of the atom-cavity system.

    Parameters
    ----------
    g : float
        Atom-field coupling, angular kHz. Must be positive.
    delta : float
        Detuning between atom and mode frequency, angular kHz.
    alpha : complex
        Amplitude of the initial coherent state of the mode.
    nu : float
        Mode frequency, angular kHz. 0 selects the interaction picture.
    fock_cutoff : int or "auto"
        Largest photon number kept in truncated sums and matrices.
    """

    g: float
    delta: float
    alpha: complex = 0.0
    nu: float = 0.0
    fock_cutoff: Union[int, Literal["auto"]] = "auto"

    def __post_init__(self):
        if not (math.isfinite(self.g) and self.g > 0):
            raise ValueError(f"coupling g must be positive and finite, got {self.g}")
        if not math.isfinite(self.delta):
            raise ValueError(f"detuning must be finite, got {self.delta}")
        object.__setattr__(self, "alpha", complex(self.alpha))
        if self.fock_cutoff != "auto":
            if int(self.fock_cutoff) != self.fock_cutoff or self.fock_cutoff < 1:
                raise ValueError(f"fock_cutoff must be an integer >= 1 or 'auto', got {self.fock_cutoff!r}")
            object.__setattr__(self, "fock_cutoff", int(self.fock_cutoff))

    @classmethod
    def from_nbar(cls, nbar: float, g: float, delta: float, phase: float = 0.0, **kw) -> "JcmConfig":
        """Build a config from the mean photon number and the coherent phase."""
        if nbar < 0:
            raise ValueError(f"nbar must be non-negative, got {nbar}")
        return cls(g=g, delta=delta, alpha=math.sqrt(nbar) * complex(math.cos(phase), math.sin(phase)), **kw)

    @property
    def nbar(self) -> float:
        return abs(self.alpha) ** 2

    @property
    def cutoff(self) -> int:
        if self.fock_cutoff == "auto":
            return auto_cutoff(self.nbar)
        return self.fock_cutoff


@dataclass(frozen=True)
class BlochVector:
    """Initial-state parameters (<sigma_x>, <sigma_y>, <sigma_z>).

    With ``validate=True`` the constructor rejects vectors outside the unit
    ball; the default builds a raw vector, e.g. the output of a linear
    inversion that may have landed outside.
    """

    x: float
    y: float
    z: float
    validate: bool = field(default=False, compare=False, repr=False)

    def __post_init__(self):
        for name in ("x", "y", "z"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.validate and self.norm > 1.0 + BLOCH_TOL:
            raise UnphysicalBloch(f"Bloch vector norm {self.norm:.15g} exceeds 1")

    @classmethod
    def from_array(cls, v, validate: bool = False) -> "BlochVector":
        x, y, z = np.asarray(v, dtype=float)
        return cls(x, y, z, validate=validate)

    @property
    def norm(self) -> float:
        return math.sqrt(self.x**2 + self.y**2 + self.z**2)

    @property
    def is_physical(self) -> bool:
        return self.norm <= 1.0 + BLOCH_TOL

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class MomentVector:
    """Measured averages <sigma_z>_t, <a^dag a>_t and <sigma_z a^dag a>_t."""

    sz: float
    n: float
    szn: float

    @classmethod
    def from_array(cls, v) -> "MomentVector":
        sz, n, szn = np.asarray(v, dtype=float)
        return cls(float(sz), float(n), float(szn))

    def as_array(self) -> np.ndarray:
        return np.array([self.sz, self.n, self.szn])


@dataclass(frozen=True)
class TimeGrid:
    """``steps`` equally spaced times from ``t_min`` to ``t_max`` (us), inclusive."""

    t_min: float
    t_max: float
    steps: int

    def __post_init__(self):
        if not self.t_min <= self.t_max:
            raise ValueError(f"t_min ({self.t_min}) must not exceed t_max ({self.t_max})")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")

    def points(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, int(self.steps))


def rabi_frequency(n, cfg: JcmConfig):
    """Rabi frequency of the (n+1)-excitation manifold, angular kHz."""
    n = np.asarray(n)
    if np.any(n < 0):
        raise ValueError("photon index must be non-negative")
    out = np.sqrt(4.0 * (n + 1) * cfg.g**2 + cfg.delta**2)
    return float(out) if out.ndim == 0 else out


def poisson_weight(n, alpha: complex):
    """Photon-number probability of a coherent state, exp(-|a|^2) |a|^(2n) / n!."""
    n = np.asarray(n)
    if np.any(n < 0):
        raise ValueError("photon index must be non-negative")
    nbar = abs(alpha) ** 2
    if nbar == 0:
        out = (n == 0).astype(float)
    else:
        out = np.exp(n * math.log(nbar) - nbar - gammaln(n + 1))
    return float(out) if out.ndim == 0 else out


def poisson_weights(alpha: complex, count: int) -> np.ndarray:
    """Weights c_0 .. c_{count-1}."""
    return np.atleast_1d(poisson_weight(np.arange(count), alpha))
