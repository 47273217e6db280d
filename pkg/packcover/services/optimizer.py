from __future__ import annotations
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple
import logging
import math
import time

import numpy as np

from packcover.core.config import settings
from packcover.core.errors import SolverError, TriviallyInfeasibleError
from packcover.schemas.solution import OptimizeOut, SubproblemOut
from packcover.schemas.solve import SolveConfig
from packcover.services.instance import MixedInstance, constraint_count
from packcover.services.solvers import solve


logger = logging.getLogger(__name__)

BRACKET_EPSILON = 0.5
CERTIFY_SLACK = 1e-12


@dataclass
class OptimizeOutcome:
	lam: float
	x: np.ndarray
	subproblem_log: List[SubproblemOut]
	bracket: Tuple[float, float]
	stats: Dict[str, Any] = field(default_factory=dict)

	def to_schema(self) -> OptimizeOut:
		return OptimizeOut(
			lam=self.lam,
			x=[float(v) for v in self.x],
			bracket=self.bracket,
			subproblem_log=self.subproblem_log,
			stats=self.stats,
		)


def packing_lambda(inst: MixedInstance, x: np.ndarray) -> float:
	"""Smallest lam with Px <= lam p; inf when a row with p_i = 0 carries load."""
	px = inst.P.dot(x)
	pos = inst.p > 0
	if (px[~pos] > 0).any():
		return math.inf
	return float((px[pos] / inst.p[pos]).max()) if pos.any() else 0.0


def initial_bound(inst: MixedInstance) -> Tuple[float, np.ndarray]:
	"""
	lam = sum over covering rows of the cheapest way to cover that row alone,
	where column j costs sum_i' P_i'j / p_i'. Satisfies lam* <= lam <= m^2 lam*.
	"""
	with np.errstate(divide="ignore", invalid="ignore"):
		weights = np.where(inst.p > 0, 1.0 / np.where(inst.p > 0, inst.p, 1.0), 0.0)
	cost = np.asarray(inst.P.csc.T @ weights).ravel()
	loaded = inst.P.csr[np.flatnonzero(inst.p == 0)]
	if loaded.nnz:
		cost[np.unique(loaded.indices)] = math.inf

	lam = 0.0
	x = np.zeros(inst.n)
	for i in range(inst.C.rows):
		if inst.c[i] <= 0:
			continue
		cols, vals = inst.C.row(i)
		coverage = vals / inst.c[i]
		candidates = cost[cols] / coverage
		if candidates.size == 0 or not np.isfinite(candidates).any():
			raise TriviallyInfeasibleError(i)
		k = int(np.argmin(candidates))
		lam += float(candidates[k])
		x[cols[k]] += 1.0 / coverage[k]
	return lam, x


class _Subproblems:
	"""Runs certified feasibility subproblems at Px <= lam' p and keeps the best certified bounds."""

	def __init__(self, inst: MixedInstance, config: SolveConfig, retries: int):
		self.inst = inst
		self.config = config
		self.retries = retries
		self.log: List[SubproblemOut] = []
		self.lo = 0.0
		self.hi = math.inf
		self.best_x: Optional[np.ndarray] = None
		self.last_subproblem_time = 0.0

	def offer(self, lam_x: float, x: np.ndarray) -> None:
		if lam_x < self.hi:
			self.hi = lam_x
			self.best_x = x

	def raise_floor(self, lam: float) -> None:
		self.lo = max(self.lo, lam)

	def solve_at(self, lam: float, epsilon: float, stage: str = "refine") -> bool:
		"""
		True: lam* <= (1+epsilon) lam, certified by a returned x.
		False: lam* > lam.
		"""
		started = time.perf_counter()
		scaled = self.inst.with_packing_scale(lam)
		solver_eps = epsilon
		increments = 0
		for attempt in range(self.retries + 1):
			outcome = solve(scaled, self.config.model_copy(update={"epsilon": solver_eps}))
			increments += outcome.stats["increments"]
			if not outcome.feasible:
				self.raise_floor(lam)
				self._log(lam, epsilon, "infeasible", None, attempt, started, stage, increments)
				return False
			lam_x = packing_lambda(self.inst, outcome.x)
			self.offer(lam_x, outcome.x)
			if lam_x <= (1 + epsilon) * lam * (1 + CERTIFY_SLACK):
				self._log(lam, epsilon, "feasible", lam_x, attempt, started, stage, increments)
				return True
			logger.debug("subproblem at %.6g gave lam_x %.6g above (1+%.3g) lam; retrying", lam, lam_x, epsilon)
			solver_eps /= 2
		raise SolverError(f"subproblem at lambda {lam!r} could not be certified within {self.retries} retries")

	def _log(self, lam: float, epsilon: float, status: str, lam_x: Optional[float], retries: int, started: float, stage: str, increments: int) -> None:
		self.last_subproblem_time = time.perf_counter() - started
		self.log.append(SubproblemOut(
			lam=lam,
			epsilon=epsilon,
			status=status,
			certified_lambda=lam_x,
			retries=retries,
			bracket=(self.lo, self.hi),
			stage=stage,
			increments=increments,
		))


def _m_eff(inst: MixedInstance) -> int:
	return max(constraint_count(inst), 2)


def _bracket(runner: _Subproblems, lambda0: float) -> float:
	inst = runner.inst
	J = math.ceil(2 * math.log2(_m_eff(inst)))
	init_lam, init_x = initial_bound(inst)
	runner.offer(packing_lambda(inst, init_x), init_x)
	runner.raise_floor(lambda0)

	lo_i, hi_i = 0, J
	while lo_i < hi_i:
		mid = (lo_i + hi_i) // 2
		if runner.solve_at(lambda0 * 2**mid, BRACKET_EPSILON, "bracket"):
			hi_i = mid
		else:
			lo_i = mid + 1
	if runner.hi > lambda0 * 2**lo_i * (1 + BRACKET_EPSILON):
		runner.solve_at(lambda0 * 2**lo_i, BRACKET_EPSILON, "bracket")
	return lambda0 * 2 ** max(lo_i - 1, 0)


def bracket_lambda(inst: MixedInstance, lambda0: float, config: Optional[SolveConfig] = None) -> float:
	"""lambda1 = lambda0 2^j with lam* in [lambda1, 3 lambda1], from O(log log m) subproblems at eps' = 1/2."""
	runner = _Subproblems(inst, config or SolveConfig(), settings.subproblem_retries)
	return _bracket(runner, lambda0)


def _refine(runner: _Subproblems, lambda1: float, epsilon: float, delta: float) -> Dict[str, int]:
	lam = lambda1
	steps = 0
	while delta > epsilon:
		candidate = lam * (1 + delta / 4)
		if not runner.solve_at(candidate, delta / 4):
			lam = candidate
		delta *= 0.75
		steps += 1

	# the nominal schedule bounds lam* but not the last x; close the certified gap too
	polish = 0
	while runner.hi > (1 + epsilon) * runner.lo:
		gap = min(runner.hi / runner.lo - 1, 2.0)
		candidate = runner.lo * (1 + gap / 4)
		runner.solve_at(candidate, gap / 4, "polish")
		polish += 1
	return {"refine_steps": steps, "polish_steps": polish}


def refine_lambda(inst: MixedInstance, lambda1: float, epsilon: float, config: Optional[SolveConfig] = None, delta: float = 1.0) -> OptimizeOutcome:
	"""Shrinks lam* in [lambda1, (1+delta) lambda1] to a (1+epsilon) bracket; delta drops by 3/4 per subproblem."""
	runner = _Subproblems(inst, config or SolveConfig(), settings.subproblem_retries)
	runner.raise_floor(lambda1)
	_, init_x = initial_bound(inst)
	runner.offer(packing_lambda(inst, init_x), init_x)
	counts = _refine(runner, lambda1, epsilon, delta)
	return _outcome(runner, counts)


def _outcome(runner: _Subproblems, stats: Dict[str, Any]) -> OptimizeOutcome:
	if runner.best_x is None:
		raise SolverError("no feasible solution was produced")
	stats = dict(stats)
	stats["subproblems"] = len(runner.log)
	stats["last_subproblem_time"] = runner.last_subproblem_time
	return OptimizeOutcome(
		lam=runner.hi,
		x=runner.best_x,
		subproblem_log=list(runner.log),
		bracket=(runner.lo, runner.hi),
		stats=stats,
	)


def optimize(inst: MixedInstance, epsilon: float, config: Optional[SolveConfig] = None) -> OptimizeOutcome:
	"""min lam such that Px <= lam p, Cx >= c has a solution, to within 1+epsilon."""
	config = config or SolveConfig()
	started = time.perf_counter()
	lam_init, x_init = initial_bound(inst)
	if lam_init == 0:
		return OptimizeOutcome(0.0, x_init, [], (0.0, 0.0), {"subproblems": 0, "refine_steps": 0, "polish_steps": 0})

	runner = _Subproblems(inst, config, settings.subproblem_retries)
	lambda0 = lam_init / _m_eff(inst) ** 2
	lambda1 = _bracket(runner, lambda0)
	bracket_subproblems = len(runner.log)
	delta = max(1.0, runner.hi / lambda1 - 1)
	refine_started = time.perf_counter()
	counts = _refine(runner, lambda1, epsilon, delta)
	refine_time = time.perf_counter() - refine_started
	out = _outcome(runner, counts)
	out.stats.update({
		"lambda_init": lam_init,
		"lambda0": lambda0,
		"lambda1": lambda1,
		"bracket_subproblems": bracket_subproblems,
		"delta1": delta,
		"refine_time": refine_time,
		"last_subproblem_share": out.stats["last_subproblem_time"] / refine_time if len(runner.log) > bracket_subproblems and refine_time > 0 else None,
		"wall_time": time.perf_counter() - started,
	})
	logger.info("optimize: lambda %.6g in [%.6g, %.6g] after %d subproblems", out.lam, *out.bracket, out.stats["subproblems"])
	return out
