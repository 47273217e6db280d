from __future__ import annotations
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple
import logging
import math
import time

import numpy as np
from scipy.special import logsumexp

from packcover.core.config import settings
from packcover.core.errors import BudgetExhaustedError, TomographyError
from packcover.schemas.solve import SolveConfig
from packcover.schemas.tomo import PhantomFile, TomoResultOut
from packcover.services.instance import MixedInstance, SparseNonnegMatrix
from packcover.services.potentials import Lanes, column_logsumexp
from packcover.services.solvers import solve


logger = logging.getLogger(__name__)

AREA_FLOOR = 1e-12

Point = Tuple[float, float]


def _clip(poly: List[Point], normal: Point, offset: float) -> List[Point]:
	"""Sutherland-Hodgman against the half-plane normal . p <= offset."""
	out: List[Point] = []
	for k in range(len(poly)):
		prev, cur = poly[k - 1], poly[k]
		s_prev = normal[0] * prev[0] + normal[1] * prev[1] - offset
		s_cur = normal[0] * cur[0] + normal[1] * cur[1] - offset
		if s_cur <= 0:
			if s_prev > 0:
				t = s_prev / (s_prev - s_cur)
				out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
			out.append(cur)
		elif s_prev <= 0:
			t = s_prev / (s_prev - s_cur)
			out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
	return out


def _area(poly: List[Point]) -> float:
	if len(poly) < 3:
		return 0.0
	total = 0.0
	for k in range(len(poly)):
		x0, y0 = poly[k - 1]
		x1, y1 = poly[k]
		total += x0 * y1 - x1 * y0
	return abs(total) / 2


def strip_areas(side: int, angle_deg: float) -> Dict[Tuple[int, int], float]:
	"""
	Area of every (detector bin, cell) overlap for one parallel-beam angle.
	Cells are unit squares [c, c+1] x [r, r+1]; bins are unit-width strips across the ray direction.
	"""
	theta = math.radians(angle_deg)
	v = (-math.sin(theta), math.cos(theta))
	centre = (side / 2, side / 2)
	half = side / 2 * (abs(math.cos(theta)) + abs(math.sin(theta)))
	bins = max(1, math.ceil(2 * half - 1e-9))
	start = -bins / 2
	v_centre = v[0] * centre[0] + v[1] * centre[1]
	areas: Dict[Tuple[int, int], float] = {}
	for r in range(side):
		for c in range(side):
			square = [(c, r), (c + 1, r), (c + 1, r + 1), (c, r + 1)]
			proj = [v[0] * x + v[1] * y - v_centre for x, y in square]
			first = max(0, int(math.floor(min(proj) - start)))
			last = min(bins - 1, int(math.floor(max(proj) - start)))
			for b in range(first, last + 1):
				lo, hi = start + b, start + b + 1
				poly = _clip(square, v, hi + v_centre)
				poly = _clip(poly, (-v[0], -v[1]), -(lo + v_centre))
				area = _area(poly)
				if area > AREA_FLOOR:
					areas[(b, r * side + c)] = area
	return areas


@dataclass
class TomoInstance:
	A: SparseNonnegMatrix
	mu: np.ndarray
	grid_side: int
	angles: List[float]
	cell_map: np.ndarray
	deleted_cells: Tuple[int, ...] = ()
	dropped_rows: int = 0
	row_labels: List[Tuple[int, int]] = field(default_factory=list)

	def to_mixed_instance(self, box: bool = False) -> MixedInstance:
		"""P = C = A with unit right-hand sides; box adds x_j <= 1 packing rows."""
		ones = np.ones(self.A.rows)
		if not box:
			return MixedInstance(self.A, ones, self.A, ones)
		n = self.A.cols
		entries = self.A.entries() + [(self.A.rows + j, j, 1.0) for j in range(n)]
		P = SparseNonnegMatrix(self.A.rows + n, n, entries)
		return MixedInstance(P, np.ones(self.A.rows + n), self.A, ones)

	def to_grid(self, x: np.ndarray) -> np.ndarray:
		full = np.zeros(self.grid_side * self.grid_side)
		full[self.cell_map] = x
		return full.reshape(self.grid_side, self.grid_side)


def build_tomo_instance(phantom, angles: Sequence[float]) -> TomoInstance:
	grid = np.asarray(phantom, dtype=float)
	if grid.ndim != 2 or grid.shape[0] != grid.shape[1] or grid.size == 0:
		raise TomographyError("phantom must be a non-empty square grid")
	if (grid < 0).any() or not np.all(np.isfinite(grid)):
		raise TomographyError("phantom densities must be finite and nonnegative")
	if not (grid > 0).any():
		raise TomographyError("phantom is all zero")
	if not angles:
		raise TomographyError("need at least one angle")
	side = grid.shape[0]
	density = grid.ravel()

	rows: List[Dict[int, float]] = []
	labels: List[Tuple[int, int]] = []
	for a, angle in enumerate(angles):
		per_bin: Dict[int, Dict[int, float]] = {}
		for (b, j), area in strip_areas(side, angle).items():
			per_bin.setdefault(b, {})[j] = area
		for b in sorted(per_bin):
			rows.append(per_bin[b])
			labels.append((a, b))

	mu = np.array([sum(area * density[j] for j, area in row.items()) for row in rows])
	deleted = np.zeros(side * side, dtype=bool)
	for row, mass in zip(rows, mu):
		if mass <= 0:
			deleted[list(row)] = True
	keep_rows = np.flatnonzero(mu > 0)
	cell_map = np.flatnonzero(~deleted)
	if cell_map.size == 0:
		raise TomographyError("every cell lies on a ray with zero mass")
	column_of = {int(j): k for k, j in enumerate(cell_map)}

	entries = []
	for new_i, i in enumerate(keep_rows):
		for j, area in rows[i].items():
			if j in column_of:
				entries.append((new_i, column_of[j], area / mu[i]))
	A = SparseNonnegMatrix(keep_rows.size, cell_map.size, entries)
	logger.debug("tomography matrix %d x %d, %d rows dropped", A.rows, A.cols, len(rows) - keep_rows.size)
	return TomoInstance(
		A=A,
		mu=mu[keep_rows],
		grid_side=side,
		angles=list(angles),
		cell_map=cell_map,
		deleted_cells=tuple(int(j) for j in np.flatnonzero(deleted)),
		dropped_rows=len(rows) - int(keep_rows.size),
		row_labels=[labels[i] for i in keep_rows],
	)


@dataclass
class NonnegSolution:
	status: str
	x: Optional[np.ndarray]
	stats: Dict[str, Any]

	@property
	def feasible(self) -> bool:
		return self.status == "feasible"


def solve_nonneg_system(A: SparseNonnegMatrix, epsilon: float, max_increments: int = settings.max_increments, threads: int = 1) -> NonnegSolution:
	"""
	x >= 0 with 1 <= Ax <= 1 + O(eps): the parallel loop with P = C = A and no row deletion.
	m counts each row twice (once as packing, once as covering).
	"""
	started = time.perf_counter()
	n = A.cols
	counts = A.column_counts()
	if n == 0 or (counts == 0).any():
		raise TomographyError("matrix has an all-zero column")
	m = max(2 * A.rows, 2)
	N = (1 + 2 * math.log(m)) / epsilon
	csc = A.csc
	log_data = np.log(csc.data)
	col_max = np.maximum.reduceat(csc.data, csc.indptr[:-1])
	x = 1.0 / (n * col_max)
	log_cap = math.log1p(epsilon)
	tol = settings.infeasibility_tolerance
	stats: Dict[str, Any] = {"epsilon": epsilon, "N": N, "m": m, "n": n, "increments": 0, "phases": 0, "max_phase_increments": 0}
	phase_increments = 0

	with Lanes(threads) as lanes:
		Ax = lanes.matvec(A.csr, x)
		stats["initial_max_row"] = float(Ax.max())
		log_g: Optional[float] = None
		while Ax.min() < N:
			log_num = lanes.map(lambda lo, hi: column_logsumexp(csc.indptr, csc.indices, log_data, Ax, lo, hi), n)
			neg = -Ax
			log_den = lanes.map(lambda lo, hi: column_logsumexp(csc.indptr, csc.indices, log_data, neg, lo, hi), n)
			log_local = log_num - log_den
			if log_g is None or not (log_local - log_g <= log_cap).any():
				log_g = float(logsumexp(Ax) + (-logsumexp(neg)))
				best = float(log_local.min()) - log_g
				if best > tol:
					stats["log_ratio"] = best
					stats["wall_time"] = time.perf_counter() - started
					return NonnegSolution("infeasible", None, stats)
				stats["phases"] += 1
				phase_increments = 0
			eligible = log_local - log_g <= log_cap
			alpha = np.where(eligible, x, 0.0)
			delta = lanes.matvec(A.csr, alpha).max()
			if stats["increments"] >= max_increments:
				raise BudgetExhaustedError(stats["increments"])
			step = alpha * (epsilon / delta)
			x = x + step
			Ax = Ax + lanes.matvec(A.csr, step)
			stats["increments"] += 1
			phase_increments += 1
			stats["max_phase_increments"] = max(stats["max_phase_increments"], phase_increments)
			stats["max_row_seen"] = max(stats.get("max_row_seen", 0.0), float(Ax.max()))

	stats["wall_time"] = time.perf_counter() - started
	return NonnegSolution("feasible", x / N, stats)


def run_tomography(phantom: PhantomFile, epsilon: float, config: Optional[SolveConfig] = None) -> Tuple[TomoInstance, TomoResultOut]:
	"""Build the projection system for a phantom and reconstruct a nonnegative grid from it."""
	config = config or SolveConfig(epsilon=epsilon, algorithm="parallel")
	tomo = build_tomo_instance(phantom.grid, phantom.angles)
	if phantom.box:
		outcome = solve(tomo.to_mixed_instance(box=True), config.model_copy(update={"epsilon": epsilon, "algorithm": "parallel"}))
		status, x, stats = outcome.status, outcome.x, outcome.stats
	else:
		result = solve_nonneg_system(tomo.A, epsilon, config.max_increments, config.threads)
		status, x, stats = result.status, result.x, result.stats
	side = tomo.grid_side
	if status != "feasible":
		return tomo, TomoResultOut(status=status, grid_side=side, stats=stats)
	residual = tomo.A.dot(x)
	return tomo, TomoResultOut(
		status="feasible",
		grid_side=side,
		x=[float(v) for v in x],
		grid=tomo.to_grid(x).tolist(),
		residual_min=float(residual.min()),
		residual_max=float(residual.max()),
		stats=stats,
	)
