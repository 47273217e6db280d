import numpy as np
import pytest

from packcover.core.errors import TomographyError
from packcover.schemas.solve import SolveConfig
from packcover.schemas.tomo import PhantomFile
from packcover.services.instance import SparseNonnegMatrix, constraint_count
from packcover.services.solvers import solve
from packcover.services.tomography import (
	build_tomo_instance,
	run_tomography,
	solve_nonneg_system,
	strip_areas,
)


def _phantom(rng, side=4):
	return rng.uniform(0.2, 1.0, size=(side, side))


def test_axis_aligned_strips_cover_whole_cells():
	areas = strip_areas(3, 0.0)
	assert len(areas) == 9
	assert all(v == pytest.approx(1.0) for v in areas.values())
	# angle 0 bins follow grid rows
	assert {b for b, j in areas if j // 3 == 1} == {1}


def test_strip_areas_partition_every_cell(rng):
	for angle in rng.uniform(0, 180, size=10):
		areas = strip_areas(4, float(angle))
		per_cell = np.zeros(16)
		for (_, j), a in areas.items():
			per_cell[j] += a
		np.testing.assert_allclose(per_cell, 1.0, atol=1e-9)


def test_uniform_two_by_two():
	tomo = build_tomo_instance(np.ones((2, 2)), [0.0, 90.0])
	assert tomo.A.shape == (4, 4)
	np.testing.assert_allclose(tomo.mu, 2.0)
	np.testing.assert_allclose(tomo.A.dot(np.ones(4)), 1.0)
	assert tomo.dropped_rows == 0
	assert tomo.deleted_cells == ()


def test_zero_mass_ray_drops_row_and_cells():
	tomo = build_tomo_instance([[0.0, 0.0], [1.0, 1.0]], [0.0])
	assert tomo.dropped_rows == 1
	assert tomo.deleted_cells == (0, 1)
	assert tomo.A.shape == (1, 2)
	np.testing.assert_array_equal(tomo.cell_map, [2, 3])

	# the vertical rays still see the deleted cells; only the surviving cells keep entries
	tomo = build_tomo_instance([[0.0, 0.0], [1.0, 1.0]], [0.0, 90.0])
	assert tomo.A.shape == (3, 2)
	np.testing.assert_allclose(tomo.A.dot(np.ones(2)), 1.0)


def test_phantom_solves_its_own_system(rng):
	grid = _phantom(rng)
	tomo = build_tomo_instance(grid, [0.0, 45.0, 90.0, 135.0])
	assert tomo.A.cols == 16
	np.testing.assert_allclose(tomo.A.dot(grid.ravel()[tomo.cell_map]), 1.0, atol=1e-12)
	assert len(tomo.row_labels) == tomo.A.rows
	assert {a for a, _ in tomo.row_labels} == {0, 1, 2, 3}


def test_bad_phantoms():
	with pytest.raises(TomographyError, match="all zero"):
		build_tomo_instance(np.zeros((3, 3)), [0.0])
	with pytest.raises(TomographyError, match="square"):
		build_tomo_instance(np.ones((2, 3)), [0.0])
	with pytest.raises(TomographyError, match="nonnegative"):
		build_tomo_instance([[1.0, -1.0], [1.0, 1.0]], [0.0])
	with pytest.raises(TomographyError, match="angle"):
		build_tomo_instance(np.ones((2, 2)), [])


def test_identity_system():
	result = solve_nonneg_system(SparseNonnegMatrix.from_dense(np.eye(2)), 0.1)
	assert result.feasible
	assert ((result.x >= 1 - 1e-9) & (result.x <= 1.45)).all()


def test_single_row_system():
	result = solve_nonneg_system(SparseNonnegMatrix.from_dense([[1.0, 1.0]]), 0.1)
	assert result.feasible
	assert 1 - 1e-9 <= result.x.sum() <= 1.45


def test_inconsistent_system_is_infeasible():
	A = SparseNonnegMatrix(2, 2, [(0, 0, 1.0), (0, 1, 1.0), (1, 0, 3.0), (1, 1, 3.0)])
	result = solve_nonneg_system(A, 0.1)
	assert result.status == "infeasible"
	assert result.stats["log_ratio"] > 0


def test_zero_column_is_rejected():
	with pytest.raises(TomographyError, match="all-zero column"):
		solve_nonneg_system(SparseNonnegMatrix(1, 2, [(0, 0, 1.0)]), 0.1)


@pytest.mark.parametrize("eps", [0.1, 0.2])
def test_reconstruction_residual(rng, eps):
	tomo = build_tomo_instance(_phantom(rng), [0.0, 45.0, 90.0, 135.0])
	result = solve_nonneg_system(tomo.A, eps)
	assert result.feasible
	residual = tomo.A.dot(result.x)
	assert residual.min() >= 1 - 1e-9
	assert residual.max() <= 1 + 4.5 * eps
	assert result.stats["initial_max_row"] <= 1 + 1e-12
	assert result.stats["m"] == 2 * tomo.A.rows


def test_matches_generic_parallel_solver(rng):
	eps = 0.2
	tomo = build_tomo_instance(_phantom(rng, side=3), [0.0, 60.0, 120.0])
	inst = tomo.to_mixed_instance()
	assert constraint_count(inst) == 2 * tomo.A.rows
	direct = solve_nonneg_system(tomo.A, eps)
	general = solve(inst, SolveConfig(epsilon=eps, algorithm="parallel", delete_covered=False))
	assert general.feasible and direct.feasible
	assert general.stats["N"] == pytest.approx(direct.stats["N"])
	assert general.stats["increments"] == direct.stats["increments"]
	np.testing.assert_allclose(direct.x, general.x, rtol=1e-9)


def test_run_tomography(rng):
	grid = _phantom(rng, side=3)
	tomo, out = run_tomography(PhantomFile(grid=grid.tolist(), angles=[0.0, 90.0]), 0.2)
	assert out.status == "feasible"
	assert out.grid_side == 3
	assert len(out.grid) == 3 and len(out.grid[0]) == 3
	assert out.residual_min >= 1 - 1e-9
	assert out.residual_max <= 1 + 4.5 * 0.2
	assert tomo.A.rows == 6


def test_run_tomography_with_box(rng):
	eps = 0.2
	grid = _phantom(rng, side=3)
	tomo, out = run_tomography(PhantomFile(grid=grid.tolist(), angles=[0.0, 90.0], box=True), eps)
	assert out.status == "feasible"
	assert max(out.x) <= 1 + 4.5 * eps
	assert out.residual_min >= 1 - 1e-9
	assert out.residual_max <= 1 + 4.5 * eps
