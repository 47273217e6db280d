import math

import numpy as np
import pytest

from packcover.core.errors import PotentialError, SolverError
from packcover.services.instance import MixedInstance, generate_random_feasible, normalize
from packcover.services.oracle import finite_difference_gradient
from packcover.services.potentials import (
	Lanes,
	PotentialState,
	column_derivative,
	gradient_weights,
	lmax,
	lmin,
	local_and_global,
	ratio,
)


def _state(P, p, C, c, N=1.0, x0=None, lanes=None, **kw) -> PotentialState:
	norm = normalize(MixedInstance.from_dense(P, p, C, c), N)
	return PotentialState(norm, x0, lanes, **kw)


def _random_state(rng, n=10, rows=10, seed=5, N=1.0, lanes=None):
	inst, _ = generate_random_feasible(n, rows, rows, 0.4, seed)
	norm = normalize(inst, N)
	x = rng.uniform(0.0, 0.5, size=norm.n)
	return PotentialState(norm, x, lanes)


def test_lmax_known_values():
	assert lmax([0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-12)
	assert lmax([5000.0]) == 5000.0
	assert lmax([1000.0, 0.0]) == 1000.0
	assert lmin([0.0, 0.0]) == pytest.approx(-math.log(2), abs=1e-12)
	assert lmin([-3.5]) == pytest.approx(-3.5)


def test_empty_vector_is_rejected():
	with pytest.raises(PotentialError, match="empty vector"):
		lmax([])
	with pytest.raises(PotentialError, match="empty vector"):
		gradient_weights([])


def test_lmin_is_mirror_of_lmax(rng):
	for _ in range(1000):
		y = rng.normal(0, 10, size=rng.integers(1, 8))
		assert lmin(y) == pytest.approx(-lmax(-y), abs=1e-12)


def test_bounds_against_true_extremes(rng):
	for _ in range(200):
		y = rng.normal(0, 50, size=6)
		assert y.max() <= lmax(y) <= y.max() + math.log(6) + 1e-12
		assert y.min() - math.log(6) - 1e-12 <= lmin(y) <= y.min()


def test_log_domain_matches_naive_sums(rng):
	for _ in range(200):
		y = rng.uniform(-20, 20, size=7)
		assert lmax(y) == pytest.approx(math.log(np.exp(y).sum()), rel=1e-12)
		assert lmin(y) == pytest.approx(-math.log(np.exp(-y).sum()), rel=1e-12)


def test_gradient_weights():
	np.testing.assert_allclose(gradient_weights([0.0, 0.0]), [0.5, 0.5])
	np.testing.assert_allclose(gradient_weights([math.log(3), 0.0]), [0.75, 0.25])
	w = gradient_weights([800.0, -800.0, 3.0])
	assert np.isfinite(w).all()
	assert w.sum() == pytest.approx(1.0, abs=1e-12)


def test_gradient_weights_match_finite_differences(rng):
	for _ in range(100):
		y = rng.normal(0, 2, size=5)
		numeric = finite_difference_gradient(lmax, y)
		np.testing.assert_allclose(gradient_weights(y), numeric, rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("eps", [0.01, 0.1, 0.5, 1.0])
def test_smoothness_inequalities(rng, eps):
	for _ in range(2500):
		y = rng.normal(0, 3, size=rng.integers(1, 6))
		beta = rng.uniform(0, eps, size=y.size)
		up = lmax(y) + (1 + eps) * float(beta @ gradient_weights(y))
		assert lmax(y + beta) <= up + 1e-12
		down = lmin(y) + (1 - eps / 2) * float(beta @ gradient_weights(-y))
		assert lmin(y + beta) >= down - 1e-12


def test_column_derivative_known_values():
	state = _state([[1.0]], [1.0], [[1.0]], [1.0])
	np.testing.assert_allclose(column_derivative(state.P, +1, state), [1.0])
	state = _state([[1.0], [1.0]], [1.0, 1.0], [[1.0]], [1.0], x0=np.array([0.7]))
	np.testing.assert_allclose(column_derivative(state.P, +1, state), [1.0])


def test_chain_rule(rng):
	state = _random_state(rng)
	for M, y in ((state.P, state.Px), (state.C, state.Cx)):
		alpha = rng.uniform(0, 1, size=state.n)
		lhs = float(alpha @ column_derivative(M, +1, state))
		rhs = float(M.dot(alpha) @ gradient_weights(y))
		assert lhs == pytest.approx(rhs, rel=1e-10)


def test_column_derivative_matches_finite_differences(rng):
	for seed in range(100):
		state = _random_state(rng, n=6, rows=4, seed=seed)
		x = state.x.copy()
		numeric_p = finite_difference_gradient(lambda v: lmax(state.P.dot(v)), x)
		numeric_c = finite_difference_gradient(lambda v: lmin(state.C.dot(v)), x)
		np.testing.assert_allclose(column_derivative(state.P, +1, state), numeric_p, rtol=1e-6, atol=1e-8)
		np.testing.assert_allclose(column_derivative(state.C, -1, state), numeric_c, rtol=1e-6, atol=1e-8)


def test_ratio_known_values():
	state = _state([[1.0]], [1.0], [[1.0]], [1.0])
	assert ratio(0, state) == pytest.approx(1.0)
	local, glob = local_and_global(state)
	np.testing.assert_allclose(local, [1.0])
	assert glob == pytest.approx(1.0)

	# packing column empty, covering column present
	state = _state([[1.0, 0.0]], [1.0], [[1.0, 1.0]], [1.0])
	assert ratio(1, state) == 0.0


def test_ratio_is_infinite_once_covering_rows_are_deleted():
	state = _state([[1.0, 1.0]], [1.0], [[1.0, 0.0], [0.0, 1.0]], [1.0, 1.0])
	state.apply_column(0, 1.0)
	assert state.deactivate_covered() == 1
	assert ratio(0, state) == math.inf
	local, _ = local_and_global(state)
	assert local[0] == math.inf
	assert math.isfinite(local[1])


def test_local_over_global_is_ratio(rng):
	state = _random_state(rng)
	local, glob = local_and_global(state)
	for j in range(state.n):
		assert local[j] / glob == pytest.approx(state.ratio(j), rel=1e-10)
		d_p = column_derivative(state.P, +1, state)[j]
		d_c = column_derivative(state.C, -1, state)[j]
		assert d_p / d_c == pytest.approx(state.ratio(j), rel=1e-10)


def test_step_size_uses_largest_live_entry():
	state = _state([[0.5]], [1.0], [[0.25]], [1.0])
	assert state.step_size(0, 0.1) == pytest.approx(0.2)

	state = _state([[1.0]], [1.0], [[10.0]], [1.0])
	state.apply_column(0, 0.1)
	assert state.deactivate_covered() == 1
	assert state.step_size(0, 0.1) == pytest.approx(0.1)


def test_increments_only_raise_rows_and_potentials(rng):
	inst, _ = generate_random_feasible(8, 6, 6, 0.5, 21)
	state = PotentialState(normalize(inst, 20.0))
	before_local, before_global = state.log_locals(), state.log_global()
	for k in range(60):
		j = k % state.n
		px, cx = state.Px.copy(), state.Cx.copy()
		state.apply_column(j, state.step_size(j, 0.1))
		state.deactivate_covered(state.C.column(j)[0])
		assert (state.Px >= px).all() and (state.Cx >= cx).all()
		local, glob = state.log_locals(), state.log_global()
		assert (local >= before_local - 1e-12).all()
		assert glob >= before_global - 1e-12
		before_local, before_global = local, glob


def test_shifted_sums_reproduce_potentials(rng):
	state = _random_state(rng, N=40.0)
	assert state.shift_p + math.log(state.S_p) == pytest.approx(state.lmax_p(), rel=1e-12)
	assert -(state.shift_c + math.log(state.S_c)) == pytest.approx(state.lmin_c(), rel=1e-12)


def test_periodic_resync_keeps_rows_exact():
	inst, _ = generate_random_feasible(6, 4, 4, 0.6, 8)
	state = PotentialState(normalize(inst, 10.0), resync_interval=4)
	for k in range(40):
		state.apply_column(k % state.n, 0.01)
	np.testing.assert_allclose(state.Px, state.P.dot(state.x), rtol=1e-12)
	np.testing.assert_allclose(state.Cx, state.C.dot(state.x), rtol=1e-12)
	assert state.max_drift < 1e-12


def test_initial_x_must_be_nonnegative():
	norm = normalize(MixedInstance.from_dense([[1.0]], [1.0], [[1.0]], [1.0]), 1.0)
	with pytest.raises(PotentialError):
		PotentialState(norm, np.array([-1.0]))


def test_lanes_split_and_results_do_not_depend_on_lane_count(rng):
	assert Lanes(3).bounds(10) == [(0, 3), (3, 6), (6, 10)]
	assert Lanes(4).bounds(2) == [(0, 1), (1, 2)]
	results = []
	for threads in (1, 3):
		with Lanes(threads) as lanes:
			state = _random_state(np.random.default_rng(7), n=25, rows=20, N=15.0, lanes=lanes)
			results.append((state.Px.copy(), state.log_locals()))
	np.testing.assert_array_equal(results[0][0], results[1][0])
	np.testing.assert_array_equal(results[0][1], results[1][1])


def test_statically_empty_column_is_an_internal_error():
	norm = normalize(MixedInstance.from_dense([[1.0]], [1.0], [[1.0]], [1.0]), 1.0)
	state = PotentialState(norm)
	state._static_empty[0] = True
	with pytest.raises(SolverError, match="no constraints"):
		state.log_local(0)


def test_uncovered_count_follows_increments(rng):
	state = _random_state(rng, N=2.0)
	for _ in range(40):
		j = int(rng.integers(state.n))
		state.apply_column(j, float(rng.uniform(0.0, 0.3)))
		assert state.uncovered == int((state.active & (state.Cx < state.N)).sum())
		state.deactivate_covered()
		assert state.uncovered == int((state.active & (state.Cx < state.N)).sum())
	state.apply_vector(rng.uniform(0.0, 0.2, size=state.n))
	assert state.uncovered == int((state.active & (state.Cx < state.N)).sum())


def test_rows_touched_counts_column_entries():
	state = _state([[1.0, 0.0], [1.0, 1.0]], [1.0, 1.0], [[1.0, 2.0]], [1.0], N=5.0)
	assert state.n == 2
	state.apply_column(0, 0.1)
	assert state.rows_touched == 3
	state.apply_column(1, 0.1)
	assert state.rows_touched == 5
	state.apply_vector(np.array([0.0, 0.1]))
	assert state.rows_touched == 7
