"""Maximum-likelihood reconstruction from joint (photon number, atom) frequencies.

The probabilities ``p`` over the recorded outcomes maximize
``sum(nu * log p)`` on the probability simplex, subject to the recovered
Bloch vector lying in the unit ball::

    (u(p) - B)^T C (u(p) - B) <= scale^2,    C = (M M^T)^-1

where ``u(p)`` are the three moments implied by ``p`` and ``scale`` is the
sigma_z eigenvalue of the design's spin convention.

When ``p = nu`` already satisfies the constraint it is returned unchanged.
Otherwise the constraint is active at the optimum. The multiplier ``mu`` of
the penalized problem ``max L(p) - mu q(p)`` is then tuned by a bracketed
root search until ``q = 1``, and each penalized problem is solved by an
active-set Newton method on the simplex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .errors import EmptySupport, NonConvergence, SupportMismatch
from .model import BlochVector


@dataclass(frozen=True, eq=False)
class CountRecord:
    """Counts (or frequencies) of joint outcomes ``(m, a)`` with ``a`` in {+1, -1}.

    The support is exactly the listed outcomes; zero entries stay in it.
    """

    m: np.ndarray
    a: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=int).ravel()
        a = np.asarray(self.a, dtype=int).ravel()
        v = np.asarray(self.values, dtype=float).ravel()
        if not (m.size == a.size == v.size):
            raise ValueError("m, a and values must have equal length")
        if m.size == 0:
            raise EmptySupport("count record has no outcomes")
        if np.any(m < 0):
            raise ValueError("photon outcomes must be non-negative")
        if not np.all(np.isin(a, (-1, 1))):
            raise ValueError("atomic outcomes must be +1 or -1")
        if np.any(~np.isfinite(v)) or np.any(v < 0):
            raise ValueError("counts must be finite and non-negative")
        if len(set(zip(m.tolist(), a.tolist()))) != m.size:
            raise ValueError("duplicate (m, a) outcome")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_pairs(cls, entries: Sequence[Tuple[int, int, float]]) -> "CountRecord":
        m, a, v = zip(*entries) if entries else ((), (), ())
        return cls(np.array(m), np.array(a), np.array(v))

    @property
    def total(self) -> float:
        return float(self.values.sum())

    @property
    def normalized(self) -> bool:
        return abs(self.total - 1.0) <= 1e-12

    @property
    def frequencies(self) -> np.ndarray:
        total = self.total
        if total <= 0:
            raise EmptySupport("count record has zero total weight")
        return self.values / total

    @property
    def m_range(self) -> List[int]:
        return sorted(set(self.m.tolist()))

    def support(self):
        return list(zip(self.m.tolist(), self.a.tolist()))


@dataclass(frozen=True, eq=False)
class ProbTable:
    m: np.ndarray
    a: np.ndarray
    p: np.ndarray

    def support(self):
        return list(zip(np.asarray(self.m).tolist(), np.asarray(self.a).tolist()))


@dataclass(frozen=True)
class MlOptions:
    max_iter: int = 100_000
    constraint_tol: float = 1e-10


@dataclass(frozen=True, eq=False)
class MlSolution:
    p: ProbTable
    bloch: BlochVector
    log_likelihood: float
    constraint_active: bool
    delta: float
    iterations: int
    converged: bool
    multiplier: float = 0.0
    constraint_value: float = 0.0
    regularized: bool = False


def _table(x) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(x, CountRecord):
        return x.m, x.a, x.frequencies
    return np.asarray(x.m), np.asarray(x.a), np.asarray(x.p, dtype=float)


def u_vector(p, scale: float = 1.0) -> np.ndarray:
    """Moments implied by a probability table: (sum a p, sum m p, sum a m p).

    ``scale`` multiplies the atomic outcome, giving readouts in a spin
    convention whose sigma_z eigenvalues are +-scale.
    """
    m, a, w = _table(p)
    sa = scale * a
    return np.array([np.sum(sa * w), np.sum(m * w), np.sum(sa * m * w)])


def _design_terms(m, a, design):
    design.require_inverse()
    scale = design.convention.scale
    amat = np.vstack([scale * a, m, scale * a * m]).astype(float)
    cs = design.c / scale**2
    return amat, cs


def bloch_constraint_value(p, design) -> float:
    """Squared norm of the Bloch vector implied by ``p``; physical iff <= 1."""
    m, a, w = _table(p)
    amat, cs = _design_terms(m, a, design)
    r = amat @ w - design.b
    return float(r @ cs @ r)


def bloch_from_table(p, design) -> BlochVector:
    m, a, w = _table(p)
    design.require_inverse()
    u = u_vector(ProbTable(m, a, w), design.convention.scale)
    return BlochVector.from_array(design.m_inv @ (u - design.b) / design.convention.scale)


def bloch_covariance(p, design, shots: int) -> np.ndarray:
    """Covariance of the inverted Bloch vector for ``shots`` multinomial draws from ``p``."""
    m, a, w = _table(p)
    amat, _ = _design_terms(m, a, design)
    jac = design.m_inv @ amat / design.convention.scale
    cov_p = (np.diag(w) - np.outer(w, w)) / shots
    return jac @ cov_p @ jac.T


def distance_delta(nu, p) -> float:
    """1 - sum sqrt(nu p) between two tables over the same support."""
    m1, a1, w1 = _table(nu)
    m2, a2, w2 = _table(p)
    if len(m1) != len(m2) or not (np.array_equal(m1, m2) and np.array_equal(a1, a2)):
        if sorted(zip(m1.tolist(), a1.tolist())) != sorted(zip(m2.tolist(), a2.tolist())):
            raise SupportMismatch("tables are defined over different outcomes")
        order2 = {k: i for i, k in enumerate(zip(m2.tolist(), a2.tolist()))}
        w2 = np.array([w2[order2[k]] for k in zip(m1.tolist(), a1.tolist())])
    return float(1.0 - math.fsum(np.sqrt(w1 * w2)))


def log_likelihood(nu: np.ndarray, p: np.ndarray) -> float:
    pos = nu > 0
    if np.any(p[pos] <= 0):
        return -math.inf
    return math.fsum(nu[pos] * np.log(p[pos]))


def relative_entropy(nu: np.ndarray, p: np.ndarray) -> float:
    pos = nu > 0
    if np.any(p[pos] <= 0):
        return math.inf
    return math.fsum(nu[pos] * np.log(nu[pos] / p[pos]))


class _Budget(Exception):
    pass


class _Penalized:
    """max sum(nu log p) - mu q(p) over the simplex, by active-set Newton."""

    def __init__(self, nu, amat, b, cs):
        self.nu = nu
        self.pos = nu > 0
        self.amat, self.b, self.cs = amat, b, cs
        self.q_hess = 2.0 * amat.T @ cs @ amat
        self.iterations = 0

    def q(self, p):
        r = self.amat @ p - self.b
        return float(r @ self.cs @ r)

    def value(self, p, mu):
        if np.any(p[self.pos] <= 0):
            return -math.inf
        return log_likelihood(self.nu, p) - mu * self.q(p)

    def grad(self, p, mu):
        g = np.zeros_like(p)
        g[self.pos] = self.nu[self.pos] / p[self.pos]
        return g - 2.0 * mu * self.amat.T @ (self.cs @ (self.amat @ p - self.b))

    def hess(self, p, mu):
        h = -mu * self.q_hess
        idx = np.flatnonzero(self.pos)
        h[idx, idx] -= self.nu[idx] / p[idx] ** 2
        return h

    def _direction(self, p, g, h, free):
        """Newton step on the free face, adjusting the face until it is consistent.

        Zero-frequency coordinates can leave directions with no curvature, so
        the Hessian is damped by a relative 1e-12; those directions change
        neither the objective nor the constraint.
        """
        damp = 1e-12 * max(1.0, float(np.max(np.abs(np.diag(h)))))
        blocked = np.zeros(p.size, dtype=bool)
        while True:
            f = np.flatnonzero(free)
            k = f.size
            kkt = np.zeros((k + 1, k + 1))
            kkt[:k, :k] = h[np.ix_(f, f)] - damp * np.eye(k)
            kkt[:k, k] = -1.0
            kkt[k, :k] = 1.0
            sol = np.linalg.lstsq(kkt, np.concatenate([-g[f], [0.0]]), rcond=None)[0]
            lam = sol[k]
            # a coordinate sitting at zero must not be pushed outward
            outward = f[(p[f] == 0) & (sol[:k] < 0)]
            if outward.size:
                free[outward] = False
                blocked[outward] = True
                continue
            fixed = np.flatnonzero(~free & ~blocked)
            viol = g[fixed] - lam
            if fixed.size and viol.max() > 1e-12 * max(1.0, abs(lam)):
                free[fixed[np.argmax(viol)]] = True
                continue
            d = np.zeros_like(p)
            d[f] = sol[:k] - sol[:k].mean()
            return d, lam

    def solve(self, mu, p0, budget):
        p = p0.copy()
        free = self.pos | (p > 0)
        for _ in range(budget):
            self.iterations += 1
            g = self.grad(p, mu)
            d, lam = self._direction(p, g, self.hess(p, mu), free)
            # first-order optimality on the simplex, immune to rounding in the objective
            gscale = max(1.0, float(np.max(np.abs(g[free]))))
            resid = float(np.max(np.abs(g[free] - lam)))
            if (~free).any():
                resid = max(resid, float(np.max(g[~free] - lam)))
            if resid <= 1e-11 * gscale:
                return p, True
            step = 1.0
            shrink = d < 0
            lim_pos = shrink & self.pos
            if lim_pos.any():
                step = min(step, 0.99 * float(np.min(-p[lim_pos] / d[lim_pos])))
            lim_zero = shrink & ~self.pos & free
            hit = None
            if lim_zero.any():
                ratios = -p[lim_zero] / d[lim_zero]
                if ratios.min() < step:
                    step = float(ratios.min())
                    hit = np.flatnonzero(lim_zero)[np.argmin(ratios)]
            f0 = self.value(p, mu)
            slope = float((g - lam) @ d)
            # below the rounding level of the objective the line search is blind;
            # the Newton step is taken as is
            blind = slope <= 64 * np.finfo(float).eps * max(1.0, abs(f0))
            while not blind and self.value(p + step * d, mu) < f0 + 1e-4 * step * slope:
                step *= 0.5
                hit = None
                if step < 1e-20:
                    # no representable ascent left
                    return p, resid <= 1e-8 * gscale
            p = p + step * d
            if hit is not None:
                p[hit] = 0.0
            # zero-frequency entries at rounding level are put on the boundary
            dust = ~self.pos & (p < 1e-15 * p.max())
            p[dust] = 0.0
            free[dust] = False
        return p, False


def _min_norm_face(e_mat: np.ndarray, z0: np.ndarray) -> np.ndarray:
    """Smallest-norm z >= 0 with ``e_mat @ z == e_mat @ z0`` (primal active set)."""
    target_rhs = e_mat @ z0
    z = z0.copy()
    free = z > 0
    for _ in range(20 * z.size + 20):
        f = np.flatnonzero(free)
        target = np.zeros_like(z)
        if f.size:
            target[f] = np.linalg.lstsq(e_mat[:, f], target_rhs, rcond=None)[0]
        d = target - z
        neg = free & (d < 0)
        step = 1.0
        if neg.any():
            ratios = z[neg] / -d[neg]
            if ratios.min() < 1.0:
                step = float(ratios.min())
                hit = np.flatnonzero(neg)[np.argmin(ratios)]
        z = z + step * d
        if step < 1.0:
            z[hit] = 0.0
            free[hit] = False
            continue
        z[~free] = 0.0
        y = np.linalg.lstsq(e_mat[:, f].T, 2.0 * z[f], rcond=None)[0] if f.size else np.zeros(e_mat.shape[0])
        fixed = np.flatnonzero(~free)
        if fixed.size:
            push = e_mat[:, fixed].T @ y
            if push.max() > 1e-12 * max(1.0, float(np.max(np.abs(y)))):
                free[fixed[np.argmax(push)]] = True
                continue
        return np.clip(z, 0.0, None)
    return np.clip(z, 0.0, None)


def ml_fit(nu: CountRecord, design, opts: Optional[MlOptions] = None) -> MlSolution:
    """Constrained maximum-likelihood probabilities and the implied Bloch vector.

    When zero-frequency outcomes make the optimum non-unique, the optimum of
    smallest Euclidean norm is returned (``regularized`` is then set).

    Raises ``SingularDesign`` for a singular design, ``EmptySupport`` for an
    empty record and ``NonConvergence`` (with the best iterate attached) when
    the iteration budget runs out.
    """
    opts = opts or MlOptions()
    design.require_inverse()
    if nu.total <= 0:
        raise EmptySupport("count record has zero total weight")
    freq = nu.frequencies
    amat, cs = _design_terms(nu.m, nu.a, design)
    prob = _Penalized(freq, amat, design.b, cs)

    def finish(p, mu, active, iterations, converged, regularized=False):
        table = ProbTable(nu.m.copy(), nu.a.copy(), p)
        return MlSolution(
            p=table,
            bloch=bloch_from_table(table, design),
            log_likelihood=log_likelihood(freq, p),
            constraint_active=active,
            delta=distance_delta(nu, table),
            iterations=iterations,
            converged=converged,
            multiplier=mu,
            constraint_value=prob.q(p),
            regularized=regularized,
        )

    if prob.q(freq) <= 1.0:
        return finish(freq.copy(), 0.0, False, 0, True)

    state = {"p": freq.copy()}

    def excess(mu):
        budget = opts.max_iter - prob.iterations
        if budget <= 0:
            raise _Budget
        p, ok = prob.solve(mu, state["p"], budget)
        state["p"] = p
        if not ok:
            raise _Budget
        return prob.q(p) - 1.0

    lo, hi = 0.0, 1.0
    try:
        for _ in range(400):
            if excess(hi) <= 0:
                break
            lo, hi = hi, hi * 4.0
        else:
            raise NonConvergence(
                "the Bloch-ball constraint cannot be met on this support",
                finish(state["p"], hi, True, prob.iterations, False),
            )
        mu = brentq(excess, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
        excess(mu)
    except _Budget:
        raise NonConvergence(
            f"iteration budget of {opts.max_iter} exhausted",
            finish(state["p"], hi, True, prob.iterations, False),
        ) from None
    p = state["p"]
    zero = ~prob.pos
    regularized = bool(zero.any())
    if regularized:
        # the optimum is unique except along directions that move only
        # zero-frequency entries while keeping their moments and total fixed
        e_mat = np.vstack([amat[:, zero], np.ones(int(zero.sum()))])
        p = p.copy()
        p[zero] = _min_norm_face(e_mat, p[zero])
    converged = abs(prob.q(p) - 1.0) <= opts.constraint_tol
    return finish(p, float(mu), True, prob.iterations, converged, regularized)


def kkt_residuals(nu: CountRecord, solution: MlSolution, design) -> Tuple[float, float]:
    """(stationarity, complementary slackness) of a solution.

    Stationarity is the largest component of the Lagrangian gradient left
    after removing the simplex multiplier, over free outcomes, plus any
    positive gradient pushing out of a zero outcome.
    """
    freq = nu.frequencies
    p = solution.p.p
    amat, cs = _design_terms(nu.m, nu.a, design)
    pos = freq > 0
    g = np.zeros_like(p)
    g[pos] = freq[pos] / p[pos]
    r = amat @ p - design.b
    g -= 2.0 * solution.multiplier * amat.T @ (cs @ r)
    free = p > 0
    lam = float(np.mean(g[free]))
    stat = float(np.max(np.abs(g[free] - lam)))
    if (~free).any():
        stat = max(stat, float(np.max(np.clip(g[~free] - lam, 0.0, None))))
    slack = abs(solution.multiplier * (float(r @ cs @ r) - 1.0))
    return stat, slack


TABLE_VALUES = (0.05, 0.15, 0.25, 0.30)


def symmetric_record(v1: float, v2: float) -> Optional[CountRecord]:
    """Frequencies equal for both atomic outcomes at m = 1, 2, 3.

    The m = 3 entry is ``1/2 - v1 - v2``; returns ``None`` when that is
    negative (the pair is not a valid frequency set).
    """
    v3 = 0.5 - v1 - v2
    if v3 < -1e-15:
        return None
    v3 = max(v3, 0.0)
    return CountRecord(np.array([1, 1, 2, 2, 3, 3]), np.array([1, -1, 1, -1, 1, -1]), np.array([v1, v1, v2, v2, v3, v3]))


def delta_table(design, values: Sequence[float] = TABLE_VALUES, opts: Optional[MlOptions] = None):
    """delta between symmetric frequency sets and their ML probabilities.

    Returns rows ``(v1, v2, delta_or_None, solution_or_None)`` with ``v2``
    as the slow index.
    """
    rows = []
    for v2 in values:
        for v1 in values:
            rec = symmetric_record(v1, v2)
            if rec is None:
                rows.append((v1, v2, None, None))
                continue
            sol = ml_fit(rec, design, opts)
            rows.append((v1, v2, sol.delta, sol))
    return rows
