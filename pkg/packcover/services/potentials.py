from __future__ import annotations
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Tuple
import logging
import math

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp, softmax

from packcover.core.config import settings
from packcover.core.errors import PotentialError, SolverError
from packcover.services.instance import NormalizedInstance, SparseNonnegMatrix


logger = logging.getLogger(__name__)

DRIFT_WARNING = 1e-9


def _vector(y) -> np.ndarray:
	arr = np.asarray(y, dtype=float).ravel()
	if arr.size == 0:
		raise PotentialError("empty vector")
	return arr


def lmax(y) -> float:
	"""Smoothed maximum ln sum(e^y), evaluated with a max shift."""
	return float(logsumexp(_vector(y)))


def lmin(y) -> float:
	return -float(logsumexp(-_vector(y)))


def gradient_weights(y) -> np.ndarray:
	"""Partial derivatives of lmax at y (a probability vector)."""
	return softmax(_vector(y))


def column_logsumexp(indptr: np.ndarray, indices: np.ndarray, log_data: np.ndarray, row_terms: np.ndarray, lo: int, hi: int) -> np.ndarray:
	"""
	For columns lo..hi-1 of a CSC matrix M, returns ln sum_i M_ij e^{row_terms_i}.
	Rows with row_terms = -inf are skipped; empty columns give -inf.
	"""
	cols = hi - lo
	out = np.full(cols, -np.inf)
	start, stop = indptr[lo], indptr[hi]
	if stop == start:
		return out
	a = row_terms[indices[start:stop]] + log_data[start:stop]
	owners = np.repeat(np.arange(cols), np.diff(indptr[lo:hi + 1]))
	peak = np.full(cols, -np.inf)
	np.maximum.at(peak, owners, a)
	finite = np.isfinite(peak)
	base = np.where(finite, peak, 0.0)
	with np.errstate(under="ignore"):
		total = np.bincount(owners, weights=np.exp(a - base[owners]), minlength=cols)
	out[finite] = base[finite] + np.log(total[finite])
	return out


def _small_lse(a: np.ndarray) -> float:
	if a.size == 0:
		return -math.inf
	peak = a.max()
	if peak == -math.inf:
		return -math.inf
	return float(peak + math.log(np.exp(a - peak).sum()))


def log_ratio_from_sums(log_num, log_den):
	"""ln(num/den) with den = 0 mapped to +inf and num = 0 to -inf."""
	log_num = np.asarray(log_num, dtype=float)
	log_den = np.asarray(log_den, dtype=float)
	with np.errstate(invalid="ignore"):
		return np.where(log_den == -np.inf, np.inf, log_num - log_den)


class Lanes:
	"""
	Fixed contiguous split of rows or columns over a thread pool.
	Each row/column is evaluated inside one chunk, so results do not depend on the lane count.
	"""

	def __init__(self, threads: int = 1):
		self.threads = max(1, int(threads))
		self._pool: Optional[ThreadPoolExecutor] = None
		if self.threads > 1:
			self._pool = ThreadPoolExecutor(max_workers=self.threads, thread_name_prefix="packcover-lane")

	def bounds(self, size: int) -> List[Tuple[int, int]]:
		edges = [size * k // self.threads for k in range(self.threads + 1)]
		return [(lo, hi) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]

	def map(self, fn: Callable[[int, int], np.ndarray], size: int) -> np.ndarray:
		chunks = self.bounds(size)
		if not chunks:
			return np.zeros(0)
		if self._pool is None or len(chunks) == 1:
			parts = [fn(lo, hi) for lo, hi in chunks]
		else:
			parts = list(self._pool.map(lambda bounds: fn(*bounds), chunks))
		return np.concatenate(parts)

	def matvec(self, csr: sp.csr_matrix, v: np.ndarray) -> np.ndarray:
		if self._pool is None:
			return np.asarray(csr @ v).ravel()
		return self.map(lambda lo, hi: np.asarray(csr[lo:hi] @ v).ravel(), csr.shape[0])

	def close(self) -> None:
		if self._pool is not None:
			self._pool.shutdown(wait=True)
			self._pool = None

	def __enter__(self) -> "Lanes":
		return self

	def __exit__(self, *exc) -> None:
		self.close()


class PotentialState:
	"""
	Current x with exact row values Px, Cx and the active covering mask.
	The exponential sums are never stored; they are evaluated in log domain on demand.
	"""

	def __init__(self, inst: NormalizedInstance, x0: Optional[np.ndarray] = None, lanes: Optional[Lanes] = None, resync_interval: int = settings.resync_interval):
		self.inst = inst
		self.N = inst.N
		self.P: SparseNonnegMatrix = inst.P
		self.C: SparseNonnegMatrix = inst.C
		self.n = inst.n
		self.lanes = lanes or Lanes(1)
		self.resync_interval = int(resync_interval)
		self.x = np.zeros(self.n) if x0 is None else np.array(x0, dtype=float)
		if self.x.shape != (self.n,) or (self.x < 0).any():
			raise PotentialError("initial x must be a nonnegative vector of length n")
		self._p_log = np.log(self.P.csc.data)
		self._c_log = np.log(self.C.csc.data)
		self._degrees = self.P.column_counts() + self.C.column_counts()
		self._static_empty = self._degrees == 0
		self.active = np.ones(self.C.rows, dtype=bool)
		self.increments = 0
		# row entries written by increments, resyncs excluded
		self.rows_touched = 0
		self.max_drift = 0.0
		self.Px = self.lanes.matvec(self.P.csr, self.x)
		self.Cx = self.lanes.matvec(self.C.csr, self.x)
		self.uncovered = self._count_uncovered()

	# potentials

	def lmax_p(self) -> float:
		if self.Px.size == 0:
			return -math.inf
		return float(logsumexp(self.Px))

	def lmin_c(self) -> float:
		if not self.active.any():
			return math.inf
		return -float(logsumexp(-self.Cx[self.active]))

	def log_global(self) -> float:
		"""ln global(x) = ln sum e^{Px} - ln sum_active e^{-Cx}."""
		return self.lmax_p() + self.lmin_c()

	@property
	def shift_p(self) -> float:
		return float(self.Px.max())

	@property
	def S_p(self) -> float:
		return float(np.exp(self.Px - self.shift_p).sum())

	@property
	def shift_c(self) -> float:
		return float((-self.Cx[self.active]).max()) if self.active.any() else -math.inf

	@property
	def S_c(self) -> float:
		if not self.active.any():
			return 0.0
		return float(np.exp(-self.Cx[self.active] - self.shift_c).sum())

	def phi(self, rho: float) -> float:
		return self.lmax_p() - rho * self.lmin_c()

	def psi(self, epsilon: float) -> float:
		return float(self.Px.sum() + (self.Cx[self.active] - self.N - epsilon).sum())

	# column sums

	def _covering_terms(self) -> np.ndarray:
		return np.where(self.active, -self.Cx, -np.inf)

	def log_numerators(self) -> np.ndarray:
		csc = self.P.csc
		return self.lanes.map(lambda lo, hi: column_logsumexp(csc.indptr, csc.indices, self._p_log, self.Px, lo, hi), self.n)

	def log_denominators(self) -> np.ndarray:
		csc = self.C.csc
		terms = self._covering_terms()
		return self.lanes.map(lambda lo, hi: column_logsumexp(csc.indptr, csc.indices, self._c_log, terms, lo, hi), self.n)

	def column_log_sums(self, j: int) -> Tuple[float, float]:
		"""(ln sum_i P_ij e^{Px_i}, ln sum_active C_ij e^{-Cx_i}) in O(column degree)."""
		lo, hi = self.P.csc.indptr[j], self.P.csc.indptr[j + 1]
		log_num = _small_lse(self.Px[self.P.csc.indices[lo:hi]] + self._p_log[lo:hi])
		lo, hi = self.C.csc.indptr[j], self.C.csc.indptr[j + 1]
		rows = self.C.csc.indices[lo:hi]
		live = self.active[rows]
		log_den = _small_lse(self._c_log[lo:hi][live] - self.Cx[rows[live]])
		return log_num, log_den

	def log_locals(self) -> np.ndarray:
		if self.n and self._static_empty.any():
			raise SolverError(f"variable {int(np.flatnonzero(self._static_empty)[0])} has no constraints")
		return log_ratio_from_sums(self.log_numerators(), self.log_denominators())

	def log_local(self, j: int) -> float:
		if self._static_empty[j]:
			raise SolverError(f"variable {j} has no constraints")
		log_num, log_den = self.column_log_sums(j)
		return float(log_ratio_from_sums(log_num, log_den))

	def log_ratios(self) -> np.ndarray:
		"""ln ratio_j = ln local_j - ln global for every column."""
		return self.log_locals() - self.log_global()

	def log_ratio(self, j: int) -> float:
		return self.log_local(j) - self.log_global()

	def ratio(self, j: int) -> float:
		value = self.log_ratio(j)
		if value > 709.0:
			return math.inf
		return math.exp(value)

	def partials(self) -> Tuple[np.ndarray, np.ndarray]:
		"""(partial_j(P, x), partial_j(C, -x)) for every column."""
		with np.errstate(under="ignore"):
			d_p = np.exp(self.log_numerators() - self.lmax_p())
			d_c = np.exp(self.log_denominators() + self.lmin_c()) if self.active.any() else np.zeros(self.n)
		return d_p, d_c

	# increments

	def step_size(self, j: int, epsilon: float) -> float:
		"""alpha_j with max(max P alpha, max C alpha) = epsilon over packing and active covering rows."""
		_, p_vals = self.P.column(j)
		c_rows, c_vals = self.C.column(j)
		c_vals = c_vals[self.active[c_rows]]
		biggest = max(p_vals.max(initial=0.0), c_vals.max(initial=0.0))
		if biggest <= 0:
			raise SolverError(f"variable {j} has no packing or active covering entry")
		return epsilon / biggest

	def apply_column(self, j: int, alpha: float) -> None:
		self.x[j] += alpha
		rows, vals = self.P.column(j)
		self.Px[rows] += alpha * vals
		rows, vals = self.C.column(j)
		live = rows[self.active[rows]]
		before = self.Cx[live] < self.N
		self.Cx[rows] += alpha * vals
		self.uncovered -= int((before & (self.Cx[live] >= self.N)).sum())
		self.rows_touched += int(self._degrees[j])
		self._tick()

	def apply_vector(self, alpha: np.ndarray) -> None:
		self.x += alpha
		self.Px += self.lanes.matvec(self.P.csr, alpha)
		self.Cx += self.lanes.matvec(self.C.csr, alpha)
		self.uncovered = self._count_uncovered()
		self.rows_touched += int(self._degrees[alpha != 0].sum())
		self._tick()

	def _count_uncovered(self) -> int:
		return int((self.active & (self.Cx < self.N)).sum())

	def _tick(self) -> None:
		self.increments += 1
		if self.increments % self.resync_interval == 0:
			self.resync()

	def resync(self) -> float:
		"""Recompute Px and Cx from x; returns the relative drift that was removed."""
		fresh_p = self.lanes.matvec(self.P.csr, self.x)
		fresh_c = self.lanes.matvec(self.C.csr, self.x)
		drift = 0.0
		for old, new in ((self.Px, fresh_p), (self.Cx, fresh_c)):
			if new.size:
				scale = np.maximum(np.abs(new), 1.0)
				drift = max(drift, float((np.abs(old - new) / scale).max()))
		if drift > DRIFT_WARNING:
			logger.warning("row values drifted by %.3g (relative) after %d increments", drift, self.increments)
		self.max_drift = max(self.max_drift, drift)
		self.Px, self.Cx = fresh_p, fresh_c
		self.uncovered = self._count_uncovered()
		return drift

	def deactivate_covered(self, rows: Optional[np.ndarray] = None) -> int:
		"""Deactivate active covering rows with Cx >= N; returns how many were removed."""
		if rows is None:
			hit = self.active & (self.Cx >= self.N)
			count = int(hit.sum())
			self.active &= ~hit
			return count
		rows = rows[self.active[rows] & (self.Cx[rows] >= self.N)]
		self.active[rows] = False
		return int(rows.size)

	@property
	def deleted(self) -> int:
		return int(self.C.rows - self.active.sum())


def column_derivative(M: SparseNonnegMatrix, sign: int, state: PotentialState) -> np.ndarray:
	"""
	sign > 0: d lmax(Mx)/dx_j for every column j.
	sign < 0: d lmin(Mx)/dx_j, restricted to active rows when M is the state's covering matrix.
	"""
	if sign > 0:
		y = state.Px if M is state.P else M.dot(state.x)
		if y.size == 0:
			return np.zeros(M.cols)
		log_w = y - logsumexp(y)
	else:
		y = state.Cx if M is state.C else M.dot(state.x)
		live = state.active if M is state.C else np.ones(M.rows, dtype=bool)
		if not live.any():
			return np.zeros(M.cols)
		terms = np.where(live, -y, -np.inf)
		log_w = terms - logsumexp(terms[live])
	with np.errstate(under="ignore"):
		w = np.exp(log_w)
	return np.asarray(M.csc.T @ w).ravel()


def ratio(j: int, state: PotentialState) -> float:
	return state.ratio(j)


def local_and_global(state: PotentialState) -> Tuple[np.ndarray, float]:
	"""Plain-scale local_j and global; overflow to inf for large row values, use the log forms there."""
	with np.errstate(over="ignore", under="ignore"):
		return np.exp(state.log_locals()), float(np.exp(state.log_global()))
