import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from jcmtomo.errors import EmptySupport, NonConvergence, SingularDesign, SupportMismatch
from jcmtomo.mlfit import (
    CountRecord,
    MlOptions,
    ProbTable,
    bloch_constraint_value,
    bloch_covariance,
    delta_table,
    distance_delta,
    kkt_residuals,
    log_likelihood,
    ml_fit,
    relative_entropy,
    symmetric_record,
    u_vector,
)
from jcmtomo.model import BlochVector
from jcmtomo.moments import build_design_unchecked
from jcmtomo.oracle import evolve_analytic, initial_state, joint_distribution

from conftest import PAULI_OUTCOMES

M3, A3 = PAULI_OUTCOMES
WORKED_P = np.array([0.05148118, 0.05087771, 0.24811809, 0.254403426, 0.19158279, 0.20353679])
WORKED_BLOCH = np.array([-0.187183, -0.942992, 0.275121])


def record(values):
    return CountRecord(M3, A3, np.asarray(values, float))


def slsqp_fit(nu, design, objective="likelihood"):
    """Independent constrained fit with a general-purpose SQP solver."""
    amat = np.vstack([A3, M3, A3 * M3]).astype(float) * np.array([[design.convention.scale], [1], [design.convention.scale]])
    cs = design.c / design.convention.scale**2
    pos = nu > 0

    def q(p):
        r = amat @ p - design.b
        return r @ cs @ r

    if objective == "likelihood":
        fun = lambda p: -np.sum(nu[pos] * np.log(np.maximum(p[pos], 1e-300)))  # noqa: E731
    else:
        fun = lambda p: np.sum(nu[pos] * np.log(nu[pos] / np.maximum(p[pos], 1e-300)))  # noqa: E731
    cons = [{"type": "eq", "fun": lambda p: p.sum() - 1}, {"type": "ineq", "fun": lambda p: 1 - q(p)}]
    res = minimize(fun, nu, method="SLSQP", bounds=[(0, 1)] * nu.size, constraints=cons, options=dict(ftol=1e-15, maxiter=2000))
    return res.x


class TestMoments:
    def test_uniform(self):
        assert np.allclose(u_vector(ProbTable(M3, A3, np.full(6, 1 / 6))), [0, 2, 0])

    def test_single_outcome(self):
        assert np.allclose(u_vector(ProbTable(np.array([2]), np.array([1]), np.array([1.0]))), [1, 2, 2])

    def test_worked_probabilities(self, table_design):
        u = u_vector(ProbTable(M3, A3, WORKED_P))
        s = table_design.m_inv @ (u - table_design.b)
        assert np.allclose(s, WORKED_BLOCH, atol=2e-5)

    def test_half_scale(self):
        assert np.allclose(u_vector(ProbTable(np.array([2]), np.array([-1]), np.array([1.0])), 0.5), [-0.5, 2, -1])


class TestConstraint:
    def _dist(self, s, design):
        cfg = design.cfg
        dist = joint_distribution(evolve_analytic(initial_state(s, cfg), cfg, design.t))
        m, a, p = dist.outcomes()
        return ProbTable(m, a, p)

    def test_pure_state_on_boundary(self, design_d100):
        assert bloch_constraint_value(self._dist(BlochVector(0.6, 0, -0.8), design_d100), design_d100) == pytest.approx(1, abs=1e-8)

    def test_mixed_state_at_center(self, design_d100):
        assert bloch_constraint_value(self._dist(BlochVector(0, 0, 0), design_d100), design_d100) == pytest.approx(0, abs=1e-10)

    def test_worked_probabilities_active(self, table_design):
        assert bloch_constraint_value(ProbTable(M3, A3, WORKED_P), table_design) == pytest.approx(1, abs=1e-6)

    def test_singular(self, cfg_d100):
        with pytest.raises(SingularDesign):
            bloch_constraint_value(ProbTable(M3, A3, np.full(6, 1 / 6)), build_design_unchecked(cfg_d100, 0))


class TestFit:
    def test_physical_frequencies_returned_exactly(self, design_d100):
        s = BlochVector(0.2, -0.5, 0.3)
        cfg = design_d100.cfg
        m, a, p = joint_distribution(evolve_analytic(initial_state(s, cfg), cfg, 300)).outcomes()
        rec = CountRecord(m, a, p)
        sol = ml_fit(rec, design_d100)
        assert np.array_equal(sol.p.p, rec.frequencies)
        assert not sol.constraint_active and sol.delta < 1e-10 and sol.converged
        assert np.allclose(sol.bloch.as_array(), s.as_array(), atol=1e-8)

    def test_worked_example(self, table_design):
        sol = ml_fit(record([0.05, 0.05, 0.25, 0.25, 0.2, 0.2]), table_design)
        assert sol.constraint_active and sol.converged
        assert np.max(np.abs(sol.p.p - WORKED_P)) < 1e-6
        assert np.allclose(sol.bloch.as_array(), WORKED_BLOCH, atol=2e-5)
        assert sol.bloch.norm == pytest.approx(1, abs=1e-8)

    @pytest.mark.parametrize("seed", range(8))
    def test_agrees_with_sqp(self, table_design, seed):
        rng = np.random.default_rng(seed)
        nu = rng.dirichlet(np.ones(6))
        sol = ml_fit(record(nu), table_design)
        ref = slsqp_fit(nu, table_design)
        if not sol.constraint_active:
            assert bloch_constraint_value(record(nu), table_design) <= 1
            return
        assert np.allclose(sol.p.p, ref, atol=1e-5)
        assert sol.log_likelihood >= log_likelihood(nu, ref) - 1e-9

    def test_relative_entropy_formulation(self, table_design):
        nu = np.array([0.05, 0.05, 0.05, 0.05, 0.4, 0.4])
        sol = ml_fit(record(nu), table_design)
        ref = slsqp_fit(nu, table_design, objective="entropy")
        assert np.allclose(sol.p.p, ref, atol=1e-5)
        assert relative_entropy(nu, sol.p.p) == pytest.approx(
            log_likelihood(nu, nu) - sol.log_likelihood, abs=1e-14
        )

    @pytest.mark.parametrize("values", [[1, 0, 0, 0, 0, 0], [0, 0, 0, 0, 0, 1], [0.9, 0.02, 0.02, 0.02, 0.02, 0.02]])
    def test_concentrated_input(self, table_design, values):
        rec = record(values)
        sol = ml_fit(rec, table_design)
        assert sol.converged and sol.constraint_active
        assert sol.constraint_value == pytest.approx(1, abs=1e-8)
        stat, slack = kkt_residuals(rec, sol, table_design)
        assert stat < 1e-6 and slack < 1e-8

    @pytest.mark.parametrize("values", [[1, 0, 0, 0, 0, 0], [0.5, 0, 0, 0.5, 0, 0]])
    def test_zero_outcomes_take_smallest_norm(self, table_design, values):
        # among optima, entries with zero frequency minimize their Euclidean norm
        rec = record(values)
        sol = ml_fit(rec, table_design)
        assert sol.regularized
        zero = rec.frequencies == 0
        amat = np.vstack([A3, M3, A3 * M3]).astype(float)[:, zero]
        emat = np.vstack([amat, np.ones(zero.sum())])
        target = emat @ sol.p.p[zero]
        res = minimize(
            lambda z: z @ z,
            np.full(zero.sum(), sol.p.p[zero].sum() / zero.sum()),
            method="SLSQP",
            bounds=[(0, 1)] * int(zero.sum()),
            constraints=[{"type": "eq", "fun": lambda z: emat @ z - target}],
            options=dict(ftol=1e-15, maxiter=1000),
        )
        assert np.allclose(sol.p.p[zero], res.x, atol=1e-6)

    def test_invariants_and_monotonicity(self, table_design):
        rng = np.random.default_rng(5)
        for v in ([0.05, 0.05, 0.05, 0.05, 0.4, 0.4], [0.3, 0.3, 0.15, 0.15, 0.05, 0.05]):
            nu = np.array(v)
            sol = ml_fit(record(nu), table_design)
            p = sol.p.p
            assert p.min() >= 0 and abs(p.sum() - 1) < 1e-10
            assert sol.constraint_value <= 1 + 1e-8 and sol.bloch.norm <= 1 + 1e-8
            stat, slack = kkt_residuals(record(nu), sol, table_design)
            assert stat < 1e-6 and slack < 1e-8
            feasible = 0
            while feasible < 1000:
                cand = rng.dirichlet(200 * p + 0.5, size=500)
                for c in cand:
                    if bloch_constraint_value(ProbTable(M3, A3, c), table_design) <= 1:
                        feasible += 1
                        assert log_likelihood(nu, c) <= sol.log_likelihood + 1e-12

    def test_zero_frequencies_floor_exactly(self, table_design):
        sol = ml_fit(symmetric_record(0.25, 0.25), table_design)
        assert sol.converged and sol.constraint_active
        assert np.any(sol.p.p == 0.0) and sol.p.p.min() >= 0
        ref = slsqp_fit(np.array([0.25, 0.25, 0.25, 0.25, 0, 0]), table_design)
        assert sol.delta == pytest.approx(1 - np.sum(np.sqrt(sol.p.p * [0.25, 0.25, 0.25, 0.25, 0, 0])))
        assert np.allclose(sol.p.p, ref, atol=1e-5)

    def test_budget_exhaustion(self, table_design):
        with pytest.raises(NonConvergence) as err:
            ml_fit(record([0.05, 0.05, 0.25, 0.25, 0.2, 0.2]), table_design, MlOptions(max_iter=3))
        assert err.value.solution is not None and not err.value.solution.converged

    def test_empty_and_singular(self, cfg_d100, table_design):
        with pytest.raises(EmptySupport):
            CountRecord(np.array([]), np.array([]), np.array([]))
        with pytest.raises(EmptySupport):
            ml_fit(record(np.zeros(6)), table_design)
        with pytest.raises(SingularDesign):
            ml_fit(record(np.full(6, 1 / 6)), build_design_unchecked(cfg_d100, 0.0))

    def test_counts_are_normalized(self, table_design):
        a = ml_fit(record([5, 5, 25, 25, 20, 20]), table_design)
        b = ml_fit(record([0.05, 0.05, 0.25, 0.25, 0.2, 0.2]), table_design)
        assert np.allclose(a.p.p, b.p.p, atol=1e-12)


class TestTable:
    # values computed with this solver; they agree with the reference table to
    # 4 significant digits except the (0.25, 0.25) cell
    EXPECTED = {
        (0.05, 0.05): 0.0098950351,
        (0.15, 0.05): 4.9434114e-05,
        (0.25, 0.05): 0.0,
        (0.30, 0.05): 0.0010842531,
        (0.05, 0.15): 0.0031861791,
        (0.15, 0.15): 0.0,
        (0.25, 0.15): 0.0014051408,
        (0.30, 0.15): 0.0115232947,
        (0.05, 0.25): 7.1689921e-05,
        (0.15, 0.25): 0.0,
        (0.25, 0.25): 0.0331291913,
        (0.05, 0.30): 0.0,
        (0.15, 0.30): 9.6097481e-05,
    }

    def test_grid(self, table_design):
        rows = delta_table(table_design)
        assert len(rows) == 16
        for v1, v2, d, sol in rows:
            if (v1, v2) in self.EXPECTED:
                assert d == pytest.approx(self.EXPECTED[(v1, v2)], abs=1e-9)
                assert sol.converged
            else:
                assert d is None and sol is None
                assert v1 + v2 > 0.5


class TestDistance:
    probs = st.lists(st.floats(0, 1), min_size=6, max_size=6).filter(lambda v: sum(v) > 1e-3)

    @given(probs, probs)
    def test_range_and_symmetry(self, a, b):
        pa, pb = record(a), record(b)
        d = distance_delta(pa, pb)
        assert -1e-12 <= d <= 1 + 1e-12
        assert d == pytest.approx(distance_delta(pb, pa), abs=1e-15)

    @given(probs)
    def test_zero_on_identity(self, a):
        assert abs(distance_delta(record(a), record(a))) < 1e-14

    def test_positive_when_different(self):
        assert distance_delta(record([1, 0, 0, 0, 0, 0]), record([0, 1, 0, 0, 0, 0])) == 1.0
        assert distance_delta(record([0.5, 0.5, 0, 0, 0, 0]), record(np.full(6, 1 / 6))) > 0

    def test_support_handling(self):
        a = record(np.full(6, 1 / 6))
        shuffled = CountRecord(M3[::-1], A3[::-1], np.full(6, 1 / 6))
        assert distance_delta(a, shuffled) == pytest.approx(0, abs=1e-15)
        with pytest.raises(SupportMismatch):
            distance_delta(a, CountRecord(np.array([1, 2]), np.array([1, 1]), np.array([0.5, 0.5])))


class TestRecords:
    @pytest.mark.parametrize(
        "m, a, v",
        [([1, 1], [1, 1], [0.5, 0.5]), ([1], [0], [1.0]), ([-1], [1], [1.0]), ([1], [1], [-1.0]), ([1, 2], [1], [1.0])],
    )
    def test_validation(self, m, a, v):
        with pytest.raises(ValueError):
            CountRecord(np.array(m), np.array(a), np.array(v))

    def test_accessors(self):
        rec = CountRecord.from_pairs([(1, 1, 3.0), (2, -1, 1.0)])
        assert rec.total == 4 and not rec.normalized
        assert rec.frequencies.tolist() == [0.75, 0.25]
        assert rec.m_range == [1, 2] and rec.support() == [(1, 1), (2, -1)]

    def test_symmetric_record(self):
        assert symmetric_record(0.3, 0.25) is None
        rec = symmetric_record(0.05, 0.25)
        assert np.allclose(rec.values, [0.05, 0.05, 0.25, 0.25, 0.2, 0.2]) and rec.normalized

    def test_covariance_matches_sampling(self, design_d100):
        cfg = design_d100.cfg
        m, a, p = joint_distribution(evolve_analytic(initial_state(BlochVector(0.2, -0.5, 0.3), cfg), cfg, 300)).outcomes()
        p = p / p.sum()
        cov = bloch_covariance(ProbTable(m, a, p), design_d100, 10_000)
        rng = np.random.default_rng(3)
        draws = []
        for c in rng.multinomial(10_000, p, size=2000):
            u = u_vector(ProbTable(m, a, c / 10_000), 0.5)
            draws.append(design_d100.m_inv @ (u - design_d100.b) / 0.5)
        emp = np.cov(np.array(draws).T)
        assert np.allclose(np.sqrt(np.diag(emp)), np.sqrt(np.diag(cov)), rtol=0.1)
