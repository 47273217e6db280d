from __future__ import annotations
from dataclasses import dataclass, field
from typing import Iterable, List, Tuple
import logging
import math

import numpy as np
import scipy.sparse as sp

from packcover.core.errors import InstanceError, TriviallyInfeasibleError


logger = logging.getLogger(__name__)

Entry = Tuple[int, int, float]

# slack used by the planted-feasible generator
PLANTED_SLACK = 0.05


class SparseNonnegMatrix:
	"""
	Nonnegative sparse matrix with row-major (CSR) and column-major (CSC) copies.
	- Explicit zeros are dropped on construction
	- Duplicate (row, col) pairs, negative values and out-of-range indices are rejected
	"""

	def __init__(self, rows: int, cols: int, entries: Iterable[Entry] = ()):
		if rows < 0 or cols < 0:
			raise InstanceError("matrix shape must be nonnegative")
		triples = list(entries)
		if triples:
			r = np.fromiter((int(t[0]) for t in triples), dtype=np.int64, count=len(triples))
			c = np.fromiter((int(t[1]) for t in triples), dtype=np.int64, count=len(triples))
			v = np.fromiter((float(t[2]) for t in triples), dtype=float, count=len(triples))
		else:
			r = np.zeros(0, dtype=np.int64)
			c = np.zeros(0, dtype=np.int64)
			v = np.zeros(0, dtype=float)
		self._init_from_arrays(rows, cols, r, c, v)

	def _init_from_arrays(self, rows: int, cols: int, r: np.ndarray, c: np.ndarray, v: np.ndarray) -> None:
		if r.size:
			if r.min() < 0 or r.max() >= rows or c.min() < 0 or c.max() >= cols:
				raise InstanceError("index out of range")
			if not np.all(np.isfinite(v)):
				raise InstanceError("non-finite coefficient")
			if (v < 0).any():
				raise InstanceError("negative coefficient")
			keys = r * max(cols, 1) + c
			if np.unique(keys).size != keys.size:
				raise InstanceError("duplicate entry")
		keep = v > 0
		self.rows = int(rows)
		self.cols = int(cols)
		self.csr = sp.csr_matrix((v[keep], (r[keep], c[keep])), shape=(self.rows, self.cols), dtype=float)
		self.csr.sort_indices()
		self.csc = self.csr.tocsc()
		self.csc.sort_indices()

	@classmethod
	def from_scipy(cls, mat: sp.spmatrix) -> "SparseNonnegMatrix":
		coo = sp.coo_matrix(mat)
		obj = cls.__new__(cls)
		obj._init_from_arrays(coo.shape[0], coo.shape[1], coo.row.astype(np.int64), coo.col.astype(np.int64), coo.data.astype(float))
		return obj

	@classmethod
	def from_dense(cls, dense) -> "SparseNonnegMatrix":
		arr = np.atleast_2d(np.asarray(dense, dtype=float))
		return cls.from_scipy(sp.coo_matrix(arr))

	@property
	def shape(self) -> Tuple[int, int]:
		return self.rows, self.cols

	@property
	def nnz(self) -> int:
		return int(self.csr.nnz)

	def entries(self) -> List[Entry]:
		coo = self.csr.tocoo()
		return [(int(i), int(j), float(v)) for i, j, v in zip(coo.row, coo.col, coo.data)]

	def row(self, i: int) -> Tuple[np.ndarray, np.ndarray]:
		lo, hi = self.csr.indptr[i], self.csr.indptr[i + 1]
		return self.csr.indices[lo:hi], self.csr.data[lo:hi]

	def column(self, j: int) -> Tuple[np.ndarray, np.ndarray]:
		lo, hi = self.csc.indptr[j], self.csc.indptr[j + 1]
		return self.csc.indices[lo:hi], self.csc.data[lo:hi]

	def row_counts(self) -> np.ndarray:
		return np.diff(self.csr.indptr)

	def column_counts(self) -> np.ndarray:
		return np.diff(self.csc.indptr)

	def dot(self, x: np.ndarray) -> np.ndarray:
		return np.asarray(self.csr @ np.asarray(x, dtype=float)).ravel()

	def scale_rows(self, factors: np.ndarray) -> "SparseNonnegMatrix":
		if self.rows == 0:
			return SparseNonnegMatrix(0, self.cols)
		return SparseNonnegMatrix.from_scipy(sp.diags(np.asarray(factors, dtype=float)) @ self.csr)

	def select(self, rows: np.ndarray, cols: np.ndarray) -> "SparseNonnegMatrix":
		return SparseNonnegMatrix.from_scipy(self.csr[np.asarray(rows, dtype=np.int64)][:, np.asarray(cols, dtype=np.int64)])

	def to_dense(self) -> np.ndarray:
		return self.csr.toarray()

	def __eq__(self, other: object) -> bool:
		if not isinstance(other, SparseNonnegMatrix):
			return NotImplemented
		return self.shape == other.shape and self.entries() == other.entries()

	def __repr__(self) -> str:
		return f"SparseNonnegMatrix(rows={self.rows}, cols={self.cols}, nnz={self.nnz})"


def _as_rhs(values, size: int, name: str) -> np.ndarray:
	arr = np.asarray(values, dtype=float).ravel()
	if arr.size != size:
		raise InstanceError(f"{name} has {arr.size} entries, expected {size}")
	if not np.all(np.isfinite(arr)):
		raise InstanceError(f"non-finite {name}")
	if (arr < 0).any():
		raise InstanceError("negative coefficient")
	return arr


@dataclass(frozen=True, eq=False)
class MixedInstance:
	"""Find x >= 0 with Px <= p and Cx >= c."""

	P: SparseNonnegMatrix
	p: np.ndarray
	C: SparseNonnegMatrix
	c: np.ndarray

	def __post_init__(self):
		if self.P.cols != self.C.cols:
			raise InstanceError("packing and covering matrices disagree on the number of variables")
		object.__setattr__(self, "p", _as_rhs(self.p, self.P.rows, "packing rhs"))
		object.__setattr__(self, "c", _as_rhs(self.c, self.C.rows, "covering rhs"))
		self.p.setflags(write=False)
		self.c.setflags(write=False)
		if self.P.rows + self.C.rows == 0:
			raise InstanceError("no constraints")

	@property
	def n(self) -> int:
		return self.P.cols

	@property
	def m(self) -> int:
		return self.P.rows + self.C.rows

	@classmethod
	def from_dense(cls, P, p, C, c) -> "MixedInstance":
		return cls(SparseNonnegMatrix.from_dense(P), np.asarray(p, dtype=float), SparseNonnegMatrix.from_dense(C), np.asarray(c, dtype=float))

	def with_packing_scale(self, lam: float) -> "MixedInstance":
		return MixedInstance(self.P, self.p * float(lam), self.C, self.c)

	def with_covering_scale(self, factor: float) -> "MixedInstance":
		return MixedInstance(self.P, self.p, self.C, self.c * float(factor))

	def __eq__(self, other: object) -> bool:
		if not isinstance(other, MixedInstance):
			return NotImplemented
		return (
			self.P == other.P
			and self.C == other.C
			and np.array_equal(self.p, other.p)
			and np.array_equal(self.c, other.c)
		)


@dataclass(frozen=True, eq=False)
class NormalizedInstance:
	"""
	Row-scaled instance with every retained right-hand side equal to N.
	Column k of P and C is original variable var_map[k]; x carries over unscaled.
	"""

	original: MixedInstance
	N: float
	P: SparseNonnegMatrix
	C: SparseNonnegMatrix
	var_map: np.ndarray
	packing_rows: np.ndarray
	covering_rows: np.ndarray
	forced_zero_vars: Tuple[int, ...]
	unused_vars: Tuple[int, ...]
	dropped_packing_rows: Tuple[int, ...]
	dropped_covering_rows: Tuple[int, ...]
	virtual_packing_row: bool = False
	column_degree: int = field(init=False)

	def __post_init__(self):
		counts = self.P.column_counts() + self.C.column_counts()
		object.__setattr__(self, "column_degree", int(counts.max()) if counts.size else 0)

	@property
	def n(self) -> int:
		return self.P.cols

	@property
	def m(self) -> int:
		return self.P.rows + self.C.rows

	@property
	def dropped_rows(self) -> Tuple[Tuple[int, ...], Tuple[int, ...]]:
		return self.dropped_packing_rows, self.dropped_covering_rows

	def to_original(self, x: np.ndarray) -> np.ndarray:
		full = np.zeros(self.original.n, dtype=float)
		full[self.var_map] = x
		return full

	def from_original(self, x: np.ndarray) -> np.ndarray:
		return np.asarray(x, dtype=float)[self.var_map]


def constraint_count(inst: MixedInstance) -> int:
	"""Rows that survive cleanup: packing rows with p_i > 0 and covering rows with c_i > 0."""
	return int(np.count_nonzero(inst.p > 0) + np.count_nonzero(inst.c > 0))


def normalize(inst: MixedInstance, N: float) -> NormalizedInstance:
	if not (N > 0 and math.isfinite(N)):
		raise InstanceError("N must be a positive finite number")
	n = inst.n
	zero_p = np.flatnonzero(inst.p == 0)
	forced = np.zeros(n, dtype=bool)
	if zero_p.size:
		forced[np.unique(inst.P.csr[zero_p].indices)] = True
	keep_p = np.flatnonzero(inst.p > 0)
	keep_c = np.flatnonzero(inst.c > 0)

	candidates = np.flatnonzero(~forced)
	cover = inst.C.csr[keep_c][:, candidates]
	empty = np.flatnonzero(np.diff(cover.tocsr().indptr) == 0)
	if empty.size:
		raise TriviallyInfeasibleError(int(keep_c[empty[0]]))

	# variables outside every retained covering row never move
	in_cover = np.diff(cover.tocsc().indptr) > 0
	var_map = candidates[in_cover]
	unused = candidates[~in_cover]

	P = inst.P.select(keep_p, var_map).scale_rows(N / inst.p[keep_p])
	C = inst.C.select(keep_c, var_map).scale_rows(N / inst.c[keep_c])
	virtual = False
	if P.rows == 0:
		# constant row so lmax Px stays defined (it contributes e^0 and no derivative)
		P = SparseNonnegMatrix(1, var_map.size)
		virtual = True
	if unused.size:
		logger.debug("dropping %d variables absent from every covering row", unused.size)
	return NormalizedInstance(
		original=inst,
		N=float(N),
		P=P,
		C=C,
		var_map=var_map,
		packing_rows=keep_p,
		covering_rows=keep_c,
		forced_zero_vars=tuple(int(j) for j in np.flatnonzero(forced)),
		unused_vars=tuple(int(j) for j in unused),
		dropped_packing_rows=tuple(int(i) for i in zero_p),
		dropped_covering_rows=tuple(int(i) for i in np.flatnonzero(inst.c == 0)),
		virtual_packing_row=virtual,
	)


def _random_block(rng: np.random.Generator, rows: int, n: int, density: float, values) -> List[Entry]:
	entries: List[Entry] = []
	for i in range(rows):
		mask = rng.random(n) < density
		if not mask.any():
			mask[rng.integers(n)] = True
		for j in np.flatnonzero(mask):
			entries.append((i, int(j), float(values())))
	return entries


def _check_generator_args(n: int, m_p: int, m_c: int, density: float) -> None:
	if n < 1 or m_p < 0 or m_c < 0 or m_p + m_c < 1:
		raise InstanceError("generator needs n >= 1 and at least one row")
	if not (0 < density <= 1):
		raise InstanceError("density must lie in (0, 1]")


def generate_random_feasible(n: int, m_p: int, m_c: int, density: float, seed: int) -> Tuple[MixedInstance, np.ndarray]:
	"""Random instance around a planted strictly feasible point; returns (instance, x_star)."""
	_check_generator_args(n, m_p, m_c, density)
	if m_p < 1 or m_c < 1:
		raise InstanceError("planted instances need packing and covering rows")
	rng = np.random.default_rng(seed)
	x_star = rng.uniform(0.5, 1.5, size=n)
	P = SparseNonnegMatrix(m_p, n, _random_block(rng, m_p, n, density, lambda: rng.uniform(0.1, 2.0)))
	C = SparseNonnegMatrix(m_c, n, _random_block(rng, m_c, n, density, lambda: rng.uniform(0.1, 2.0)))
	p = P.dot(x_star) * (1 + PLANTED_SLACK)
	c = C.dot(x_star) * (1 - PLANTED_SLACK)
	return MixedInstance(P, p, C, c), x_star


def generate_random(n: int, m_p: int, m_c: int, seed: int, density: float = 0.7, max_value: int = 3) -> MixedInstance:
	"""Small-integer instance with no feasibility guarantee."""
	_check_generator_args(n, m_p, m_c, density)
	rng = np.random.default_rng(seed)
	P = SparseNonnegMatrix(m_p, n, _random_block(rng, m_p, n, density, lambda: rng.integers(1, max_value + 1)))
	C = SparseNonnegMatrix(m_c, n, _random_block(rng, m_c, n, density, lambda: rng.integers(1, max_value + 1)))
	p = rng.integers(1, 2 * max_value + 1, size=m_p).astype(float)
	c = rng.integers(1, max_value + 2, size=m_c).astype(float)
	return MixedInstance(P, p, C, c)
