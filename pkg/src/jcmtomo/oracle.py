"""Ground-truth propagation in a truncated atom x Fock space.

Basis ordering is (atom level) x (photon number): index ``a * (N + 1) + n``
with ``a = 0`` for the upper level |+> and ``a = 1`` for |->.

Two propagators are provided. :func:`propagator_analytic` evaluates the
closed-form JC evolution operator as operator functions of a^dag a.
:func:`propagator_numeric` builds the truncated Hamiltonian and
exponentiates it exactly on the 2x2 excitation blocks. They share no code
beyond the ladder operators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Union

import numpy as np

from .errors import NoConventionMatches, UnphysicalBloch
from .mlfit import CountRecord
from .model import (
    BLOCH_TOL,
    KHZ_US,
    SERIES_CONVENTION,
    BlochVector,
    JcmConfig,
    MomentVector,
    SpinConvention,
    TimeGrid,
)
from .moments import moments as series_moments

_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


@dataclass(frozen=True, eq=False)
class JointState:
    rho: np.ndarray
    cutoff: int

    @property
    def dim(self) -> int:
        return 2 * (self.cutoff + 1)


@dataclass(frozen=True, eq=False)
class JointDistribution:
    """``p[m, k]``: probability of m photons and atomic outcome ``(+1, -1)[k]``."""

    p: np.ndarray

    @property
    def cutoff(self) -> int:
        return self.p.shape[0] - 1

    def outcomes(self):
        """Flattened (m, a, p) arrays in row-major order."""
        m = np.repeat(np.arange(self.p.shape[0]), 2)
        a = np.tile([1, -1], self.p.shape[0])
        return m, a, self.p.ravel()


def annihilation(cutoff: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, cutoff + 1, dtype=float)), 1)


def coherent_amplitudes(alpha: complex, cutoff: int) -> np.ndarray:
    """Truncated and renormalized Fock amplitudes of |alpha>."""
    n = np.arange(cutoff + 1)
    log_fact = np.array([math.lgamma(k + 1) for k in n])
    if alpha == 0:
        v = (n == 0).astype(complex)
    else:
        v = np.exp(n * np.log(abs(alpha)) - 0.5 * log_fact) * np.exp(1j * n * np.angle(alpha))
    return v / np.linalg.norm(v)


def initial_state(s: BlochVector, cfg: JcmConfig) -> JointState:
    """rho_S(s) x |alpha><alpha| with the Pauli-normalized Bloch vector ``s``."""
    if s.norm > 1.0 + BLOCH_TOL:
        raise UnphysicalBloch(f"Bloch vector norm {s.norm:.15g} exceeds 1")
    rho_s = 0.5 * (np.eye(2) + s.x * _PAULI["x"] + s.y * _PAULI["y"] + s.z * _PAULI["z"])
    psi = coherent_amplitudes(cfg.alpha, cfg.cutoff)
    return JointState(np.kron(rho_s, np.outer(psi, psi.conj())), cfg.cutoff)


def _sin_over(x, t):
    """sin(t x) / x, continuous at x = 0."""
    return t * np.sinc(t * x / np.pi)


def propagator_analytic(cfg: JcmConfig, t: float) -> np.ndarray:
    """Closed-form U(t) built from its four atomic blocks."""
    nmax = cfg.cutoff
    n = np.arange(nmax + 1, dtype=float)
    g, delta, nu = cfg.g * KHZ_US, cfg.delta * KHZ_US, cfg.nu * KHZ_US
    a = annihilation(nmax)
    phi = g**2 * n + delta**2 / 4.0
    r_up, r_dn = np.sqrt(phi + g**2), np.sqrt(phi)
    ph_up = np.exp(-1j * nu * t * (n + 0.5))
    ph_dn = np.exp(-1j * nu * t * (n - 0.5))
    upp = np.diag(ph_up * (np.cos(t * r_up) - 0.5j * delta * _sin_over(r_up, t)))
    upm = -1j * g * np.diag(ph_up * _sin_over(r_up, t)) @ a
    ump = -1j * g * np.diag(ph_dn * _sin_over(r_dn, t)) @ a.T
    umm = np.diag(ph_dn * (np.cos(t * r_dn) + 0.5j * delta * _sin_over(r_dn, t)))
    return np.block([[upp, upm], [ump, umm]])


def hamiltonian(cfg: JcmConfig, convention: SpinConvention = SERIES_CONVENTION) -> np.ndarray:
    """Truncated JC Hamiltonian (rad/us): omega sigma_z + nu a^dag a + g (|+><-| a + h.c.)."""
    nmax = cfg.cutoff
    a = annihilation(nmax)
    num = a.T @ a
    omega = (cfg.nu + cfg.delta) * KHZ_US
    sz = convention.scale * _PAULI["z"]
    flip = np.array([[0, 1], [0, 0]], dtype=complex)
    h = omega * np.kron(sz, np.eye(nmax + 1)) + cfg.nu * KHZ_US * np.kron(np.eye(2), num)
    h = h + cfg.g * KHZ_US * (np.kron(flip, a) + np.kron(flip.T, a.T))
    return h


def propagator_numeric(cfg: JcmConfig, t: float, convention: SpinConvention = SERIES_CONVENTION) -> np.ndarray:
    """exp(-i H t) assembled from the exact 2x2 blocks {|+,n>, |-,n+1>} and two singlets."""
    nmax = cfg.cutoff
    dim = nmax + 1
    omega = (cfg.nu + cfg.delta) * KHZ_US * convention.scale
    nu, g = cfg.nu * KHZ_US, cfg.g * KHZ_US
    u = np.zeros((2 * dim, 2 * dim), dtype=complex)
    n = np.arange(nmax, dtype=float)
    blocks = np.zeros((nmax, 2, 2))
    blocks[:, 0, 0] = omega + nu * n
    blocks[:, 1, 1] = -omega + nu * (n + 1)
    blocks[:, 0, 1] = blocks[:, 1, 0] = g * np.sqrt(n + 1)
    evals, evecs = np.linalg.eigh(blocks)
    ub = np.einsum("kij,kj,klj->kil", evecs, np.exp(-1j * evals * t), evecs)
    up = np.arange(nmax)            # |+, n>
    dn = dim + np.arange(1, dim)    # |-, n+1>
    u[up, up] = ub[:, 0, 0]
    u[up, dn] = ub[:, 0, 1]
    u[dn, up] = ub[:, 1, 0]
    u[dn, dn] = ub[:, 1, 1]
    u[dim, dim] = np.exp(1j * omega * t)                           # |-, 0>
    u[nmax, nmax] = np.exp(-1j * (omega + nu * nmax) * t)          # |+, N>, no partner
    return u


def _apply(u: np.ndarray, state: JointState) -> JointState:
    return JointState(u @ state.rho @ u.conj().T, state.cutoff)


def evolve_analytic(state: JointState, cfg: JcmConfig, t: float) -> JointState:
    _check_cutoff(state, cfg)
    return _apply(propagator_analytic(cfg, t), state)


def evolve_numeric(
    state: JointState, cfg: JcmConfig, t: float, convention: SpinConvention = SERIES_CONVENTION
) -> JointState:
    _check_cutoff(state, cfg)
    return _apply(propagator_numeric(cfg, t, convention), state)


def _check_cutoff(state: JointState, cfg: JcmConfig) -> None:
    if state.cutoff != cfg.cutoff:
        raise ValueError(f"state cutoff {state.cutoff} does not match config cutoff {cfg.cutoff}")


def observables(cutoff: int, convention: SpinConvention = SERIES_CONVENTION):
    """sigma_z, a^dag a and their product on the joint space."""
    num = np.diag(np.arange(cutoff + 1, dtype=float))
    sz = np.kron(convention.scale * _PAULI["z"].real, np.eye(cutoff + 1))
    n_op = np.kron(np.eye(2), num)
    return sz, n_op, sz @ n_op


def oracle_moments(state: JointState, convention: SpinConvention = SERIES_CONVENTION) -> MomentVector:
    sz, n_op, szn = observables(state.cutoff, convention)
    tr = lambda op: float(np.einsum("ij,ji->", state.rho, op).real)  # noqa: E731
    return MomentVector(tr(sz), tr(n_op), tr(szn))


def excitation_number(state: JointState) -> float:
    """tr(rho (a^dag a + |+><+|))."""
    dim = state.cutoff + 1
    diag = np.real(np.diag(state.rho))
    n = np.arange(dim)
    return float(diag[:dim] @ (n + 1) + diag[dim:] @ n)


def joint_distribution(state: JointState) -> JointDistribution:
    dim = state.cutoff + 1
    diag = np.clip(np.real(np.diag(state.rho)), 0.0, None)
    return JointDistribution(np.column_stack([diag[:dim], diag[dim:]]))


def state_fidelity(rho: np.ndarray, sigma: np.ndarray, rank_tol: float = 1e-13) -> float:
    """Uhlmann fidelity, computed on the numerical support of ``rho``."""
    w, v = np.linalg.eigh(rho)
    keep = w > rank_tol
    sq = v[:, keep] * np.sqrt(w[keep])
    k = sq.conj().T @ sigma @ sq
    ev = np.clip(np.linalg.eigvalsh(0.5 * (k + k.conj().T)), 0.0, None)
    return float(np.sum(np.sqrt(ev)) ** 2)


def sample_counts(dist: JointDistribution, shots: int, seed: int):
    """Multinomial draw of ``shots`` joint outcomes with a PCG64 stream seeded by ``seed``."""
    if int(shots) != shots or shots < 1:
        raise ValueError(f"shots must be a positive integer, got {shots}")
    m, a, p = dist.outcomes()
    p = p / p.sum()
    rng = np.random.Generator(np.random.PCG64(seed))
    counts = rng.multinomial(int(shots), p)
    return CountRecord(m, a, counts.astype(float))


@dataclass
class CalibrationReport:
    """Max |oracle - series| per convention, moment and probe vector over a time grid."""

    deviations: Dict[str, Dict[str, Dict[str, float]]]
    tolerance: float
    correlator: str
    matches: list = field(default_factory=list)

    @property
    def discriminating(self) -> bool:
        return len(self.matches) < 2

    @property
    def convention(self) -> Optional[SpinConvention]:
        return self.matches[0] if len(self.matches) == 1 else None

    def max_deviation(self, convention: Union[str, SpinConvention]) -> float:
        rows = self.deviations[SpinConvention.parse(convention).value]
        return max(v for row in rows.values() for v in row.values())

    def lines(self):
        out = []
        for conv, rows in self.deviations.items():
            for moment, probes in rows.items():
                cells = "  ".join(f"{k}={v:.3e}" for k, v in probes.items())
                out.append(f"{conv:5s} {moment:3s} {cells}")
        return out


_PROBES = {
    "x": BlochVector(1.0, 0.0, 0.0),
    "y": BlochVector(0.0, 1.0, 0.0),
    "z": BlochVector(0.0, 0.0, 1.0),
    "0": BlochVector(0.0, 0.0, 0.0),
}


def calibrate_convention(
    cfg: JcmConfig,
    t_grid: TimeGrid,
    correlator: str = "corrected",
    tol: float = 1e-6,
) -> CalibrationReport:
    """Find the spin normalization in which the moment series match propagation.

    For each candidate convention the Pauli probe states are propagated with
    that convention's Hamiltonian, read out in that convention, and compared
    with the series evaluated at the probe scaled into the convention.
    Raises ``NoConventionMatches`` (carrying the report) if no candidate stays
    within ``tol``. Both candidates matching means the grid cannot
    discriminate; then ``report.convention`` is ``None``.
    """
    times = t_grid.points()
    deviations: Dict[str, Dict[str, Dict[str, float]]] = {}
    matches = []
    for conv in SpinConvention:
        rows = {k: {p: 0.0 for p in _PROBES} for k in ("sz", "n", "szn")}
        states = {p: initial_state(s, cfg) for p, s in _PROBES.items()}
        for t in times:
            u = propagator_numeric(cfg, float(t), conv)
            for p, s in _PROBES.items():
                got = oracle_moments(_apply(u, states[p]), conv).as_array()
                scaled = BlochVector.from_array(conv.scale * s.as_array())
                want = series_moments(scaled, cfg, float(t), correlator).as_array()
                for k, d in zip(("sz", "n", "szn"), np.abs(got - want)):
                    rows[k][p] = max(rows[k][p], float(d))
        deviations[conv.value] = rows
        if max(v for row in rows.values() for v in row.values()) < tol:
            matches.append(conv)
    report = CalibrationReport(deviations, tol, correlator, matches)
    if not matches:
        raise NoConventionMatches("no spin convention reproduces the moment series", report)
    return report
