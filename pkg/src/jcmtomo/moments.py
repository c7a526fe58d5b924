"""Closed-form moment series, the linear design system and its determinant.

The three observables after an interaction time ``t`` are affine in the
initial Bloch vector ``s``::

    (<sigma_z>_t, <a^dag a>_t, <sigma_z a^dag a>_t) = M s + B

The series below are written in the spin-1/2 normalization
(``SERIES_CONVENTION``): ``s`` holds expectations of the spin-1/2 operators
and ``<sigma_z>_t`` is read out with eigenvalues +-1/2.

Two variants of the correlator row are available. ``"corrected"`` weights the
``c_{n+1}`` contributions to its sigma_z coefficient and offset with
``(2n + 1)``, which agrees with exact propagation. ``"legacy"`` uses
``(2n + 3)`` as in the original closed form; it reproduces the reference
design tables but not the propagator. The other rows, and hence the
determinant, are identical for both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional, Union

import numpy as np

from .errors import SingularDesign
from .model import (
    KHZ_US,
    SERIES_CONVENTION,
    BlochVector,
    JcmConfig,
    MomentVector,
    SpinConvention,
    poisson_weights,
)

Correlator = Literal["corrected", "legacy"]

#: |D| at or below this is treated as singular
SINGULAR_THRESHOLD = 1e-12

_BASIS = (BlochVector(1.0, 0.0, 0.0), BlochVector(0.0, 1.0, 0.0), BlochVector(0.0, 0.0, 1.0))
_ZERO = BlochVector(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class TimeNoise:
    """Gaussian spread of the interaction time: center ``t0`` (us), variance ``sigma`` (us^2)."""

    t0: float
    sigma: float

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"time variance must be non-negative, got {self.sigma}")


class _Series:
    """Per-(cfg, t) arrays shared by the three moment series."""

    def __init__(self, cfg: JcmConfig, t: float):
        nmax = cfg.cutoff
        self.n = np.arange(nmax + 1, dtype=float)
        c = poisson_weights(cfg.alpha, nmax + 2)
        self.c, self.c1 = c[:-1], c[1:]
        g = cfg.g * KHZ_US
        delta = cfg.delta * KHZ_US
        om = np.sqrt(4.0 * (self.n + 1) * g**2 + delta**2)
        half = 0.5 * om * t
        s, co = np.sin(half), np.cos(half)
        self.g = g
        # sin^2(Omega t / 2) / (Omega / 2)^2
        self.S = (s / (0.5 * om)) ** 2
        amp = cfg.alpha * (co + 1j * delta * s / om)
        w = self.c * s / om
        # coefficient sums of <sigma_x>_0 and <sigma_y>_0 in the population row
        self.x_terms = 4.0 * g * w * amp.imag
        self.y_terms = 4.0 * g * w * amp.real
        self.mean_n = math.fsum(self.n * self.c)

    def exchange(self):
        return self.g**2 * (self.n + 1) * (self.c1 + self.c) * self.S

    def b1_terms(self):
        return 0.5 * self.g**2 * (self.n + 1) * (self.c1 - self.c) * self.S


def _check_correlator(correlator: str) -> int:
    if correlator == "corrected":
        return 1
    if correlator == "legacy":
        return 3
    raise ValueError(f"correlator must be 'corrected' or 'legacy', got {correlator!r}")


def moment_sz(s: BlochVector, cfg: JcmConfig, t: float) -> float:
    """<sigma_z>_t (spin-1/2 readout) for initial Bloch vector ``s``."""
    ser = _Series(cfg, t)
    return math.fsum(
        [
            s.x * math.fsum(ser.x_terms),
            s.y * math.fsum(ser.y_terms),
            s.z * (1.0 - math.fsum(ser.exchange())),
            math.fsum(ser.b1_terms()),
        ]
    )


def moment_n(s: BlochVector, cfg: JcmConfig, t: float) -> float:
    """<a^dag a>_t for initial Bloch vector ``s``."""
    ser = _Series(cfg, t)
    b2 = ser.mean_n - math.fsum(ser.b1_terms())
    return math.fsum(
        [
            -s.x * math.fsum(ser.x_terms),
            -s.y * math.fsum(ser.y_terms),
            s.z * math.fsum(ser.exchange()),
            b2,
        ]
    )


def moment_szn(s: BlochVector, cfg: JcmConfig, t: float, correlator: Correlator = "corrected") -> float:
    """<sigma_z a^dag a>_t (spin-1/2 readout) for initial Bloch vector ``s``."""
    k = _check_correlator(correlator)
    ser = _Series(cfg, t)
    n, c, c1, S, g2 = ser.n, ser.c, ser.c1, ser.S, ser.g**2
    weight = 0.5 * (2 * n + 1)
    z_coef = ser.mean_n - math.fsum(0.5 * g2 * (n + 1) * ((2 * n + k) * c1 + (2 * n + 1) * c) * S)
    b3 = math.fsum(0.25 * g2 * (n + 1) * ((2 * n + k) * c1 - (2 * n + 1) * c) * S)
    return math.fsum(
        [
            s.x * math.fsum(weight * ser.x_terms),
            s.y * math.fsum(weight * ser.y_terms),
            s.z * z_coef,
            b3,
        ]
    )


def moments(s: BlochVector, cfg: JcmConfig, t: float, correlator: Correlator = "corrected") -> MomentVector:
    return MomentVector(moment_sz(s, cfg, t), moment_n(s, cfg, t), moment_szn(s, cfg, t, correlator))


@dataclass(frozen=True, eq=False)
class DesignSystem:
    """Affine map from the initial Bloch vector to the measured moments.

    ``m`` and ``b`` act on Bloch components expressed in ``convention``, and
    the sigma_z readouts are taken in the same convention. ``m_inv`` and ``c``
    (the inverse of ``m m^T``) are ``None`` for a singular design.
    """

    m: np.ndarray
    b: np.ndarray
    det: float
    m_inv: Optional[np.ndarray]
    c: Optional[np.ndarray]
    cfg: JcmConfig
    t: float
    correlator: str = "corrected"
    convention: SpinConvention = SERIES_CONVENTION

    @property
    def singular(self) -> bool:
        return self.m_inv is None

    @property
    def cond(self) -> float:
        sv = np.linalg.svd(self.m, compute_uv=False)
        return float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf

    def require_inverse(self) -> None:
        if self.singular:
            raise SingularDesign(f"design at t={self.t} us is singular (det={self.det:.3g})")

    def predict(self, bloch: BlochVector) -> MomentVector:
        """Moments produced by a (Pauli-normalized) Bloch vector."""
        return MomentVector.from_array(self.m @ (self.convention.scale * bloch.as_array()) + self.b)

    def with_convention(self, convention: Union[str, SpinConvention]) -> "DesignSystem":
        """Same matrices, read in another spin normalization."""
        return DesignSystem(
            self.m, self.b, self.det, self.m_inv, self.c, self.cfg, self.t,
            self.correlator, SpinConvention.parse(convention),
        )


def build_design(
    cfg: JcmConfig,
    t: float,
    correlator: Correlator = "corrected",
    convention: Union[str, SpinConvention] = SERIES_CONVENTION,
) -> DesignSystem:
    """Assemble ``M`` and ``B`` by probing the moment series at basis vectors.

    ``convention`` only labels how the matrices are read downstream; the
    numbers are those of the series. Raises ``SingularDesign`` when
    ``|det M| <= SINGULAR_THRESHOLD``.
    """
    b = moments(_ZERO, cfg, t, correlator).as_array()
    cols = [moments(e, cfg, t, correlator).as_array() - b for e in _BASIS]
    m = np.column_stack(cols)
    det = float(np.linalg.det(m))
    if abs(det) <= SINGULAR_THRESHOLD:
        raise SingularDesign(f"design at t={t} us is singular (det={det:.3g})")
    m_inv = np.linalg.inv(m)
    c = m_inv.T @ m_inv
    return DesignSystem(m, b, det, m_inv, c, cfg, float(t), correlator, SpinConvention.parse(convention))


def build_design_unchecked(
    cfg: JcmConfig,
    t: float,
    correlator: Correlator = "corrected",
    convention: Union[str, SpinConvention] = SERIES_CONVENTION,
) -> DesignSystem:
    """Like :func:`build_design` but returns singular systems with ``m_inv=None``."""
    try:
        return build_design(cfg, t, correlator, convention)
    except SingularDesign:
        b = moments(_ZERO, cfg, t, correlator).as_array()
        m = np.column_stack([moments(e, cfg, t, correlator).as_array() - b for e in _BASIS])
        return DesignSystem(
            m, b, float(np.linalg.det(m)), None, None, cfg, float(t),
            correlator, SpinConvention.parse(convention),
        )


def _det_parts(cfg: JcmConfig):
    nmax = cfg.cutoff
    n = np.arange(nmax + 1, dtype=float)
    c = poisson_weights(cfg.alpha, nmax + 1)
    om = np.sqrt(4.0 * (n + 1) * (cfg.g * KHZ_US) ** 2 + (cfg.delta * KHZ_US) ** 2)
    pref = 4.0 * (cfg.delta * KHZ_US) * (cfg.g * KHZ_US) ** 2 * cfg.nbar
    # e^{-2 nbar} nbar^{n+m+1} / (n! m!) = nbar c_n c_m
    weights = np.outer(c, c) * np.subtract.outer(n, n)
    return pref, weights, om


def determinant(cfg: JcmConfig, t: float) -> float:
    """det M from the explicit double sum over photon numbers."""
    pref, weights, om = _det_parts(cfg)
    if pref == 0.0:
        return 0.0
    a = np.sin(0.5 * om * t) ** 2 / om**2
    b = np.sin(om * t) / om
    bracket = np.outer(a, b) - np.outer(b, a)
    return pref * math.fsum((weights * bracket).ravel())


def determinant_grid(cfg: JcmConfig, times) -> np.ndarray:
    """Vectorized :func:`determinant` over an array of times."""
    times = np.asarray(times, dtype=float)
    pref, weights, om = _det_parts(cfg)
    if pref == 0.0:
        return np.zeros_like(times)
    ph = np.multiply.outer(times, om)
    a = np.sin(0.5 * ph) ** 2 / om**2
    b = np.sin(ph) / om
    return pref * (np.einsum("tn,nm,tm->t", a, weights, b) - np.einsum("tn,nm,tm->t", b, weights, a))


def determinant_consistency(cfg: JcmConfig, t: float, correlator: Correlator = "corrected") -> float:
    """|det(M) - D| between the assembled design and the double-sum formula."""
    design = build_design_unchecked(cfg, t, correlator)
    return abs(float(np.linalg.det(design.m)) - determinant(cfg, t))


def _w(om_n, om_m, t0, sigma):
    """Gaussian average of sin^2(om_n t/2) sin(om_m t) / (om_n^2 om_m), t ~ N(t0, sigma)."""
    sp, sm = om_m + om_n, om_m - om_n
    return (
        2.0 * np.exp(-0.5 * sigma * om_m**2) * np.sin(t0 * om_m)
        - np.exp(-0.5 * sigma * sp**2) * np.sin(t0 * sp)
        - np.exp(-0.5 * sigma * sm**2) * np.sin(t0 * sm)
    ) / (4.0 * om_n**2 * om_m)


def averaged_determinant(cfg: JcmConfig, noise: TimeNoise) -> float:
    """Determinant averaged over a Gaussian-distributed interaction time."""
    pref, weights, om = _det_parts(cfg)
    if pref == 0.0:
        return 0.0
    on, omm = np.meshgrid(om, om, indexing="ij")
    bracket = _w(on, omm, noise.t0, noise.sigma) - _w(omm, on, noise.t0, noise.sigma)
    return pref * math.fsum((weights * bracket).ravel())


def averaged_determinant_grid(cfg: JcmConfig, centers, sigma: float) -> np.ndarray:
    centers = np.asarray(centers, dtype=float)
    if sigma < 0:
        raise ValueError(f"time variance must be non-negative, got {sigma}")
    pref, weights, om = _det_parts(cfg)
    if pref == 0.0:
        return np.zeros_like(centers)
    on, omm = np.meshgrid(om, om, indexing="ij")
    t0 = centers[:, None, None]
    bracket = _w(on, omm, t0, sigma) - _w(omm, on, t0, sigma)
    return pref * np.einsum("nm,tnm->t", weights, bracket)
