from __future__ import annotations
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union
import csv
import logging
import math
import time

import numpy as np

from packcover.core.errors import BudgetExhaustedError, InstanceError, NothingToVerifyError, SolverError, TriviallyInfeasibleError, VerificationError
from packcover.schemas.solution import Certificate, CheckReport, RowSlack, SolutionOut
from packcover.schemas.solve import Selector, SolveConfig
from packcover.services.instance import MixedInstance, NormalizedInstance, constraint_count, normalize
from packcover.services.potentials import Lanes, PotentialState


logger = logging.getLogger(__name__)

COVER_TOLERANCE = 1e-9


def rho(epsilon: float) -> float:
	return (1 + epsilon) ** 2 / (1 - epsilon / 2)


def packing_bound(epsilon: float) -> float:
	"""Relative packing overshoot allowed in a feasible answer: max (Px)_i/p_i <= 1 + bound."""
	if epsilon <= 0.2:
		return 4.5 * epsilon
	r = rho(epsilon)
	return r - 1 + (1 + r) * epsilon / 2 + epsilon


def choose_N(inst: Union[MixedInstance, int, float], epsilon: float, algorithm: str = "generic") -> float:
	"""
	N = 2 ln m / eps from x0 = 0, or (1 + 2 ln m) / eps after the parallel start (max Px0 <= 1).
	m below 2 is raised to 2 so that N > 0.
	"""
	m = constraint_count(inst) if isinstance(inst, MixedInstance) else inst
	if m < 1:
		raise InstanceError("no constraints")
	log_m = math.log(max(m, 2))
	if algorithm == "parallel":
		return (1 + 2 * log_m) / epsilon
	return 2 * log_m / epsilon


def increment_bound(m: int, N: float, epsilon: float) -> float:
	return m * (N + epsilon) / epsilon


@dataclass
class TraceRecord:
	step: int
	column: str
	phi: float
	psi: float
	lmax: float
	lmin: float
	log_g: Optional[float]
	phase: int
	eligibility: Optional[float]
	deleted: int


@dataclass
class DiagnosticTrace:
	"""Per-increment potentials plus ln g at every accepted phase start."""

	epsilon: float
	N: float
	rho: float
	records: List[TraceRecord] = field(default_factory=list)
	phase_log_g: List[float] = field(default_factory=list)

	CSV_FIELDS = ("k", "j", "phi", "psi", "lmax_px", "lmin_cx", "log_g", "phase", "eligibility", "deleted")

	def write_csv(self, path: Union[str, Path]) -> None:
		with open(path, "w", newline="", encoding="utf-8") as fh:
			writer = csv.writer(fh)
			writer.writerow(self.CSV_FIELDS)
			for r in self.records:
				writer.writerow([
					r.step, r.column, repr(r.phi), repr(r.psi), repr(r.lmax), repr(r.lmin),
					"" if r.log_g is None else repr(r.log_g), r.phase,
					"" if r.eligibility is None else repr(r.eligibility), r.deleted,
				])


@dataclass
class SolveOutcome:
	status: str
	x: Optional[np.ndarray]
	stats: Dict[str, Any]
	certificate: Optional[Certificate] = None
	trace: Optional[DiagnosticTrace] = None
	normalized: Optional[NormalizedInstance] = None

	@property
	def feasible(self) -> bool:
		return self.status == "feasible"

	def to_schema(self) -> SolutionOut:
		return SolutionOut(
			status=self.status,
			x=None if self.x is None else [float(v) for v in self.x],
			stats=self.stats,
			certificate=self.certificate,
		)


def row_ratios(inst: MixedInstance, x: np.ndarray):
	"""(max_i (Px)_i/p_i, min_i (Cx)_i/c_i) over rows with positive right-hand side."""
	px = inst.P.dot(x)
	cx = inst.C.dot(x)
	pos_p = inst.p > 0
	pos_c = inst.c > 0
	max_p = float((px[pos_p] / inst.p[pos_p]).max()) if pos_p.any() else 0.0
	min_c = float((cx[pos_c] / inst.c[pos_c]).min()) if pos_c.any() else math.inf
	return max_p, min_c


class _Run:
	"""Bookkeeping shared by the three loops: budget, deletions, trace, outcome."""

	def __init__(self, norm: NormalizedInstance, config: SolveConfig, algorithm: str, x0: Optional[np.ndarray] = None):
		self.norm = norm
		self.config = config
		self.algorithm = algorithm
		self.epsilon = config.epsilon
		self.log_cap = math.log1p(config.epsilon)
		self.lanes = Lanes(config.threads if algorithm == "parallel" else 1)
		self.state = PotentialState(norm, x0, self.lanes, config.resync_interval)
		self.phase = 0
		self.phase_increments: List[int] = []
		self.deleted = 0
		self.started = time.perf_counter()
		self.trace: Optional[DiagnosticTrace] = None
		if config.trace:
			self.trace = DiagnosticTrace(self.epsilon, norm.N, rho(self.epsilon))
			self.record("init", None, None)

	def unfinished(self) -> bool:
		return self.state.uncovered > 0

	def delete(self, rows: Optional[np.ndarray] = None) -> None:
		if self.config.delete_covered:
			self.deleted += self.state.deactivate_covered(rows)

	def new_phase(self, log_g: float) -> None:
		self.phase += 1
		self.phase_increments.append(0)
		if self.trace is not None:
			self.trace.phase_log_g.append(log_g)
		logger.debug("phase %d starts at ln g = %.6g after %d increments", self.phase, log_g, self.state.increments)

	def check_budget(self) -> None:
		if self.state.increments >= self.config.max_increments:
			raise BudgetExhaustedError(self.state.increments)

	def after_increment(self, column: str, eligibility: Optional[float], log_g: Optional[float]) -> None:
		if self.phase_increments:
			self.phase_increments[-1] += 1
		if self.trace is not None:
			self.record(column, eligibility, log_g)

	def record(self, column: str, eligibility: Optional[float], log_g: Optional[float]) -> None:
		s = self.state
		lmax, lmin = s.lmax_p(), s.lmin_c()
		self.trace.records.append(TraceRecord(
			step=s.increments,
			column=column,
			phi=lmax - self.trace.rho * lmin,
			psi=s.psi(self.epsilon),
			lmax=lmax,
			lmin=lmin,
			log_g=log_g,
			phase=self.phase,
			eligibility=eligibility,
			deleted=self.deleted,
		))

	def _stats(self) -> Dict[str, Any]:
		norm = self.norm
		return {
			"algorithm": self.algorithm,
			"epsilon": self.epsilon,
			"N": norm.N,
			"m": norm.m,
			"n": norm.n,
			"column_degree": norm.column_degree,
			"nnz": norm.P.nnz + norm.C.nnz,
			"increments": self.state.increments,
			"rows_touched": self.state.rows_touched,
			"phases": self.phase,
			"max_phase_increments": max(self.phase_increments, default=0),
			"deleted_cover_rows": self.deleted,
			"forced_zero_vars": list(norm.forced_zero_vars),
			"unused_vars": list(norm.unused_vars),
			"max_drift": self.state.max_drift,
			"wall_time": time.perf_counter() - self.started,
		}

	def feasible(self) -> SolveOutcome:
		self.lanes.close()
		x = self.norm.to_original(self.state.x)
		stats = self._stats()
		stats["max_packing_ratio"], stats["min_covering_ratio"] = row_ratios(self.norm.original, x)
		logger.info("%s solve feasible after %d increments in %d phases", self.algorithm, self.state.increments, self.phase)
		return SolveOutcome("feasible", x, stats, trace=self.trace, normalized=self.norm)

	def infeasible(self, reason: str, log_ratio: float) -> SolveOutcome:
		self.lanes.close()
		cert = Certificate(reason=reason, phase=self.phase, increments=self.state.increments, log_ratio=float(log_ratio))
		logger.info("%s solve infeasible: %s (ln ratio %.3g)", self.algorithm, reason, log_ratio)
		return SolveOutcome("infeasible", None, self._stats(), certificate=cert, trace=self.trace, normalized=self.norm)


def _trivially_infeasible(err: TriviallyInfeasibleError, algorithm: str, epsilon: float) -> SolveOutcome:
	cert = Certificate(reason=str(err), phase=0, increments=0, log_ratio=math.inf)
	stats = {"algorithm": algorithm, "epsilon": epsilon, "increments": 0, "phases": 0}
	return SolveOutcome("infeasible", None, stats, certificate=cert)


def _select(selector: Selector, log_r: np.ndarray, state: PotentialState, log_cap: float) -> int:
	if selector == Selector.min_ratio:
		return int(np.argmin(log_r))
	eligible = log_r <= log_cap
	if selector == Selector.first_eligible:
		return int(np.flatnonzero(eligible)[0])
	d_p, d_c = state.partials()
	diff = np.where(eligible, d_p - d_c, np.inf)
	return int(np.argmin(diff))


def solve_generic(inst: MixedInstance, config: SolveConfig) -> SolveOutcome:
	eps = config.epsilon
	try:
		norm = normalize(inst, choose_N(inst, eps, "generic"))
	except TriviallyInfeasibleError as e:
		return _trivially_infeasible(e, "generic", eps)
	run = _Run(norm, config, "generic")
	state = run.state
	tol = config.infeasibility_tolerance
	with run.lanes:
		while run.unfinished():
			log_r = state.log_ratios()
			best = float(log_r.min())
			if best > tol:
				return run.infeasible("min ratio exceeds 1", best)
			j = _select(config.selector, log_r, state, run.log_cap)
			run.check_budget()
			state.apply_column(j, state.step_size(j, eps))
			run.delete(norm.C.column(j)[0])
			run.after_increment(str(j), float(log_r[j]), None)
		return run.feasible()


def solve_phased(inst: MixedInstance, config: SolveConfig) -> SolveOutcome:
	"""Round-robin over variables; each pass over all j is one phase with g frozen."""
	eps = config.epsilon
	try:
		norm = normalize(inst, choose_N(inst, eps, "phased"))
	except TriviallyInfeasibleError as e:
		return _trivially_infeasible(e, "phased", eps)
	run = _Run(norm, config, "phased")
	state = run.state
	tol = config.infeasibility_tolerance
	with run.lanes:
		while run.unfinished():
			log_g = state.log_global()
			best = float(state.log_locals().min()) - log_g
			if best > tol:
				return run.infeasible("min local/global exceeds 1 at phase start", best)
			run.new_phase(log_g)
			for j in range(norm.n):
				cover_rows = norm.C.column(j)[0]
				while run.unfinished():
					eligibility = state.log_local(j) - log_g
					if eligibility > run.log_cap:
						break
					run.check_budget()
					state.apply_column(j, state.step_size(j, eps))
					run.delete(cover_rows)
					run.after_increment(str(j), eligibility, log_g)
				if not run.unfinished():
					break
		return run.feasible()


def parallel_start(norm: NormalizedInstance) -> np.ndarray:
	"""
	x_j = min_i 1/(n P'_ij) so that max P'x <= 1.
	A column without packing entries uses its covering entries instead.
	"""
	n = norm.n
	x0 = np.zeros(n)
	if n == 0:
		return x0
	for j in range(n):
		_, vals = norm.P.column(j)
		if vals.size == 0:
			_, vals = norm.C.column(j)
		x0[j] = 1.0 / (n * vals.max())
	return x0


def solve_parallel(inst: MixedInstance, config: SolveConfig) -> SolveOutcome:
	"""All eligible variables grow together, alpha_j proportional to x_j."""
	eps = config.epsilon
	try:
		norm = normalize(inst, choose_N(inst, eps, "parallel"))
	except TriviallyInfeasibleError as e:
		return _trivially_infeasible(e, "parallel", eps)
	run = _Run(norm, config, "parallel", parallel_start(norm))
	state = run.state
	lanes = run.lanes
	tol = config.infeasibility_tolerance
	log_g: Optional[float] = None
	with lanes:
		run.delete()
		while run.unfinished():
			log_locals = state.log_locals()
			if log_g is None or not (log_locals - log_g <= run.log_cap).any():
				log_g = state.log_global()
				best = float(log_locals.min()) - log_g
				if best > tol:
					return run.infeasible("min local/global exceeds 1 at phase start", best)
				run.new_phase(log_g)
			ratios = log_locals - log_g
			eligible = ratios <= run.log_cap
			base = np.where(eligible, state.x, 0.0)
			top = max(
				lanes.matvec(norm.P.csr, base).max(initial=0.0),
				lanes.matvec(norm.C.csr, base)[state.active].max(initial=0.0),
			)
			if top <= 0:
				raise SolverError("eligible variables cannot move any active row")
			run.check_budget()
			state.apply_vector(base * (eps / top))
			run.delete()
			run.after_increment("multi", float(ratios[eligible].max()), log_g)
		return run.feasible()


_SOLVERS = {
	"generic": solve_generic,
	"phased": solve_phased,
	"parallel": solve_parallel,
}


def solve(inst: MixedInstance, config: SolveConfig) -> SolveOutcome:
	if not config.delete_covered and not (inst.P == inst.C and np.array_equal(inst.p, inst.c)):
		# without deletion only the P = C form stays bounded (Ax <= O(N))
		raise InstanceError("covering deletion can only be disabled when P = C and p = c")
	return _SOLVERS[config.algorithm](inst, config)


def check_solution(inst: MixedInstance, x: np.ndarray, epsilon: float) -> CheckReport:
	"""Recompute Px and Cx with compensated sums against the original right-hand sides."""
	x = np.asarray(x, dtype=float)
	if x.shape != (inst.n,):
		raise InstanceError(f"solution has {x.size} coordinates, expected {inst.n}")
	bound = packing_bound(epsilon)
	violation = None
	if (x < 0).any():
		violation = "negative coordinate"

	worst_p: Optional[RowSlack] = None
	for i in range(inst.P.rows):
		cols, vals = inst.P.row(i)
		value = math.fsum(vals * x[cols])
		ratio = value / inst.p[i] if inst.p[i] > 0 else (0.0 if value == 0 else math.inf)
		if worst_p is None or ratio > worst_p.value:
			worst_p = RowSlack(row=i, value=ratio, bound=1 + bound)
	worst_c: Optional[RowSlack] = None
	for i in range(inst.C.rows):
		if inst.c[i] <= 0:
			continue
		cols, vals = inst.C.row(i)
		ratio = math.fsum(vals * x[cols]) / inst.c[i]
		if worst_c is None or ratio < worst_c.value:
			worst_c = RowSlack(row=i, value=ratio, bound=1 - COVER_TOLERANCE)

	if violation is None and worst_c is not None and worst_c.value < worst_c.bound:
		violation = "covering"
	if violation is None and worst_p is not None and worst_p.value > worst_p.bound:
		violation = "packing"
	return CheckReport(
		passed=violation is None,
		max_packing_ratio=None if worst_p is None else worst_p.value,
		min_covering_ratio=None if worst_c is None else worst_c.value,
		packing_bound=1 + bound,
		worst_packing=worst_p,
		worst_covering=worst_c,
		violation=violation,
	)


def verify_outcome(inst: MixedInstance, outcome: SolveOutcome, epsilon: float) -> CheckReport:
	if not outcome.feasible or outcome.x is None:
		raise NothingToVerifyError()
	report = check_solution(inst, outcome.x, epsilon)
	if report.violation == "covering":
		raise VerificationError("covering", report.worst_covering.row, report.worst_covering.value, report.worst_covering.bound)
	if report.violation == "packing":
		raise VerificationError("packing", report.worst_packing.row, report.worst_packing.value, report.worst_packing.bound)
	if report.violation is not None:
		raise VerificationError(report.violation, -1, math.nan, 0.0)
	return report
