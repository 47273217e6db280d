import math

import numpy as np
import pytest
from pydantic import ValidationError

from conftest import one_var
from packcover.core.config import settings
from packcover.core.errors import BudgetExhaustedError, InstanceError, NothingToVerifyError, SolverError, VerificationError
from packcover.schemas.solve import Selector, SolveConfig
from packcover.services.instance import MixedInstance, generate_random_feasible
from packcover.services.potentials import Lanes, PotentialState
from packcover.services.solvers import (
	check_solution,
	choose_N,
	increment_bound,
	packing_bound,
	rho,
	row_ratios,
	solve,
	verify_outcome,
)
from packcover.services.tomography import build_tomo_instance

ALGORITHMS = ["generic", "phased", "parallel"]


def _assert_within_guarantee(inst, outcome, eps):
	assert outcome.status == "feasible"
	max_p, min_c = row_ratios(inst, outcome.x)
	assert min_c >= 1 - 1e-9
	assert max_p <= 1 + 4.5 * eps
	assert (outcome.x >= 0).all()


def test_choose_N_known_values():
	assert choose_N(2, 0.1) == pytest.approx(13.8629, abs=1e-4)
	assert choose_N(math.e**2, 1.0) == pytest.approx(4.0)
	assert choose_N(100, 0.05, "parallel") == pytest.approx(204.207, abs=1e-3)
	# m = 1 still gives N > 0
	assert choose_N(1, 0.1) > 0


def test_increment_bound_known_value():
	N = choose_N(2, 0.1)
	assert increment_bound(2, N, 0.1) == pytest.approx(279.26, abs=0.01)


def test_packing_bound():
	assert packing_bound(0.1) == pytest.approx(0.45)
	r = rho(0.5)
	assert packing_bound(0.5) == pytest.approx(r - 1 + (1 + r) * 0.25 + 0.5)


@pytest.mark.parametrize("algorithm", ALGORITHMS)
def test_single_variable_feasible(unit_instance, algorithm):
	outcome = solve(unit_instance, SolveConfig(epsilon=0.1, algorithm=algorithm))
	_assert_within_guarantee(unit_instance, outcome, 0.1)
	assert 1 - 1e-9 <= outcome.x[0] <= 1.45
	assert outcome.stats["increments"] <= increment_bound(outcome.stats["m"], outcome.stats["N"], 0.1)


@pytest.mark.parametrize("algorithm", ALGORITHMS)
def test_single_variable_infeasible(contradictory_instance, algorithm):
	outcome = solve(contradictory_instance, SolveConfig(epsilon=0.1, algorithm=algorithm))
	assert outcome.status == "infeasible"
	assert outcome.x is None
	assert outcome.certificate.log_ratio > 0
	with pytest.raises(NothingToVerifyError, match="nothing to verify"):
		verify_outcome(contradictory_instance, outcome, 0.1)


def test_identity_system_is_symmetric():
	inst = MixedInstance.from_dense(np.eye(2), [1.0, 1.0], np.eye(2), [1.0, 1.0])
	outcome = solve(inst, SolveConfig(epsilon=0.1, algorithm="parallel"))
	_assert_within_guarantee(inst, outcome, 0.1)
	assert outcome.x[0] == outcome.x[1]


@pytest.mark.parametrize("algorithm", ALGORITHMS)
@pytest.mark.parametrize("eps", [0.05, 0.1, 0.2])
def test_planted_instances_are_feasible(algorithm, eps):
	for seed in range(3):
		inst, _ = generate_random_feasible(10 + seed, 6 + seed, 5 + seed, 0.4, seed)
		outcome = solve(inst, SolveConfig(epsilon=eps, algorithm=algorithm))
		_assert_within_guarantee(inst, outcome, eps)
		verify_outcome(inst, outcome, eps)
		s = outcome.stats
		assert s["increments"] <= increment_bound(s["m"], s["N"], eps)


@pytest.mark.parametrize("selector", list(Selector))
def test_selectors_reach_the_same_guarantee(selector):
	inst, _ = generate_random_feasible(12, 8, 8, 0.4, 17)
	outcome = solve(inst, SolveConfig(epsilon=0.1, algorithm="generic", selector=selector))
	_assert_within_guarantee(inst, outcome, 0.1)


@pytest.mark.parametrize("algorithm", ALGORITHMS)
def test_trace_potentials(algorithm):
	inst, _ = generate_random_feasible(14, 9, 9, 0.35, 4)
	eps = 0.1
	outcome = solve(inst, SolveConfig(epsilon=eps, algorithm=algorithm, trace=True))
	assert outcome.feasible
	records = outcome.trace.records
	assert records[0].column == "init"
	assert len(records) == outcome.stats["increments"] + 1

	phis = [r.phi for r in records if math.isfinite(r.phi)]
	assert all(b <= a + 1e-9 for a, b in zip(phis, phis[1:]))

	# the parallel start may delete rows before the first increment, so skip the init record
	psis = [r.psi for r in records[1:]]
	assert all(b - a >= eps - 1e-9 for a, b in zip(psis, psis[1:]))


@pytest.mark.parametrize("algorithm", ["phased", "parallel"])
def test_global_grows_by_one_plus_eps_per_phase(algorithm):
	inst, _ = generate_random_feasible(16, 10, 10, 0.3, 9)
	eps = 0.1
	outcome = solve(inst, SolveConfig(epsilon=eps, algorithm=algorithm, trace=True))
	log_g = outcome.trace.phase_log_g
	assert len(log_g) == outcome.stats["phases"]
	assert all(b - a >= math.log1p(eps) - 1e-9 for a, b in zip(log_g, log_g[1:]))


def test_parallel_output_does_not_depend_on_threads():
	inst, _ = generate_random_feasible(30, 20, 20, 0.3, 2)
	one = solve(inst, SolveConfig(epsilon=0.1, algorithm="parallel", threads=1))
	three = solve(inst, SolveConfig(epsilon=0.1, algorithm="parallel", threads=3))
	np.testing.assert_array_equal(one.x, three.x)
	assert one.stats["increments"] == three.stats["increments"]


def test_covering_deletion_can_be_disabled_on_a_self_dual_system():
	tomo = build_tomo_instance([[0.5, 1.0], [1.0, 0.5]], [0.0, 90.0])
	inst = tomo.to_mixed_instance()
	outcome = solve(inst, SolveConfig(epsilon=0.1, algorithm="parallel", delete_covered=False))
	_assert_within_guarantee(inst, outcome, 0.1)
	assert outcome.stats["deleted_cover_rows"] == 0


def test_covering_deletion_is_required_when_packing_differs():
	inst, _ = generate_random_feasible(10, 6, 6, 0.4, 5)
	with pytest.raises(InstanceError, match="P = C"):
		solve(inst, SolveConfig(epsilon=0.1, algorithm="parallel", delete_covered=False))
	scaled = MixedInstance.from_dense(np.eye(2), [1.0, 1.0], np.eye(2), [0.5, 0.5])
	with pytest.raises(InstanceError, match="P = C"):
		solve(scaled, SolveConfig(epsilon=0.1, delete_covered=False))


def test_finish_check_does_not_rescan_rows(monkeypatch):
	calls = []
	count = PotentialState._count_uncovered

	def counting(self):
		calls.append(self.increments)
		return count(self)

	monkeypatch.setattr(PotentialState, "_count_uncovered", counting)
	inst, _ = generate_random_feasible(12, 8, 8, 0.4, 6)
	outcome = solve(inst, SolveConfig(epsilon=0.1, algorithm="phased", resync_interval=10**6))
	assert outcome.feasible
	assert outcome.stats["increments"] > 100
	assert calls == [0]


@pytest.mark.parametrize("algorithm", ["generic", "phased"])
def test_single_column_increments_touch_only_their_column(algorithm):
	inst, _ = generate_random_feasible(20, 12, 12, 0.2, 8)
	s = solve(inst, SolveConfig(epsilon=0.1, algorithm=algorithm)).stats
	assert 0 < s["rows_touched"] <= s["increments"] * s["column_degree"]


@pytest.mark.parametrize("algorithm", ALGORITHMS)
def test_traced_eligibility_never_exceeds_the_cap(algorithm):
	inst, _ = generate_random_feasible(14, 9, 9, 0.35, 4)
	eps = 0.1
	outcome = solve(inst, SolveConfig(epsilon=eps, algorithm=algorithm, trace=True))
	assert outcome.feasible
	values = [r.eligibility for r in outcome.trace.records[1:]]
	assert values and all(v is not None for v in values)
	assert max(values) <= math.log1p(eps) + 1e-12


def test_parallel_phases_stay_under_the_per_phase_bound():
	eps = 0.1
	for n in (8, 16, 32):
		inst, _ = generate_random_feasible(n, n // 2 + 2, n // 2 + 2, 0.3, n)
		s = solve(inst, SolveConfig(epsilon=eps, algorithm="parallel")).stats
		assert s["phases"] >= 1
		assert 1 <= s["max_phase_increments"] <= s["N"] * math.log(s["N"] * s["n"]) / eps


def test_default_algorithm_comes_from_settings(monkeypatch):
	monkeypatch.setattr(settings, "default_algorithm", "parallel")
	assert SolveConfig().algorithm == "parallel"
	monkeypatch.setattr(settings, "default_algorithm", "simplex")
	with pytest.raises(ValidationError):
		SolveConfig()


def test_lanes_close_when_a_loop_fails(monkeypatch, unit_instance):
	pools = []
	close = Lanes.close

	def recording_close(self):
		pools.append(self._pool is not None)
		close(self)

	def broken(self):
		raise SolverError("eligible variables cannot move any active row")

	monkeypatch.setattr(Lanes, "close", recording_close)
	monkeypatch.setattr(PotentialState, "log_locals", broken)
	with pytest.raises(SolverError, match="cannot move"):
		solve(unit_instance, SolveConfig(epsilon=0.1, algorithm="parallel", threads=2))
	assert pools[:1] == [True]


def test_budget_exhaustion_is_not_infeasibility(unit_instance):
	with pytest.raises(BudgetExhaustedError, match="budget exhausted"):
		solve(unit_instance, SolveConfig(epsilon=0.1, algorithm="generic", max_increments=3))


def test_zero_rhs_rows_are_handled():
	# row 0 of P forces x0 = 0; x1 alone must cover
	inst = MixedInstance.from_dense([[1.0, 0.0], [0.0, 1.0]], [0.0, 2.0], [[1.0, 1.0], [1.0, 0.0]], [1.0, 0.0])
	outcome = solve(inst, SolveConfig(epsilon=0.1, algorithm="phased"))
	_assert_within_guarantee(inst, outcome, 0.1)
	assert outcome.x[0] == 0.0
	assert outcome.stats["forced_zero_vars"] == [0]


def test_trivially_infeasible_instance():
	inst = one_var(1.0, 0.0, 1.0, 1.0)
	outcome = solve(inst, SolveConfig(epsilon=0.1))
	assert outcome.status == "infeasible"
	assert "trivially infeasible" in outcome.certificate.reason


def test_instance_without_packing_rows():
	inst = MixedInstance.from_dense(np.zeros((0, 2)), [], [[1.0, 2.0]], [3.0])
	for algorithm in ALGORITHMS:
		outcome = solve(inst, SolveConfig(epsilon=0.2, algorithm=algorithm))
		assert outcome.feasible
		assert float(inst.C.dot(outcome.x)[0]) >= 3.0 * (1 - 1e-9)


def test_check_solution_reports_the_worst_row(planted):
	inst, x_star = planted
	report = check_solution(inst, x_star, 0.1)
	assert report.passed
	assert report.max_packing_ratio <= 1.0

	bad = x_star * 0.5
	report = check_solution(inst, bad, 0.1)
	assert not report.passed
	assert report.violation == "covering"
	outcome = solve(inst, SolveConfig(epsilon=0.1))
	outcome.x = bad
	with pytest.raises(VerificationError, match="covering violation"):
		verify_outcome(inst, outcome, 0.1)


def test_check_solution_flags_packing_overshoot(unit_instance):
	report = check_solution(unit_instance, np.array([2.0]), 0.1)
	assert report.violation == "packing"
	assert report.worst_packing.row == 0
	assert report.worst_packing.value == pytest.approx(2.0)


def test_outcome_schema(unit_instance):
	out = solve(unit_instance, SolveConfig(epsilon=0.2)).to_schema()
	assert out.status == "feasible"
	assert len(out.x) == 1
	for key in ("increments", "phases", "deleted_cover_rows", "wall_time", "N", "max_packing_ratio", "min_covering_ratio"):
		assert key in out.stats


@pytest.mark.slow
def test_small_epsilon_stays_finite():
	# m = 1000 rows on one column: N is near 1382, so e^N is far outside float range
	inst, _ = generate_random_feasible(1, 500, 500, 1.0, 0)
	eps = 0.01
	outcome = solve(inst, SolveConfig(epsilon=eps, algorithm="phased", trace=True))
	assert outcome.stats["N"] > 1300
	_assert_within_guarantee(inst, outcome, eps)
	records = outcome.trace.records
	assert all(math.isfinite(r.psi) and not math.isnan(r.phi) for r in records)
	phis = [r.phi for r in records if math.isfinite(r.phi)]
	assert all(b <= a + 1e-9 * max(1.0, abs(a)) for a, b in zip(phis, phis[1:]))
	log_g = outcome.trace.phase_log_g
	assert all(b - a >= math.log1p(eps) - 1e-9 for a, b in zip(log_g, log_g[1:]))
