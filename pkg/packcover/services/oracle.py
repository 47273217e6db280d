from __future__ import annotations
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Callable, List, Optional, Sequence

import numpy as np
from sympy import QQ
from sympy.polys.matrices import DomainMatrix

from packcover.core.errors import OracleLimitError
from packcover.services.instance import MixedInstance
from packcover.services.optimizer import initial_bound


@dataclass(frozen=True)
class TinyInstanceLimit:
	max_vars: int = 3
	max_rows: int = 6
	value_cap: float = 1e6


@dataclass(frozen=True)
class OracleResult:
	feasible: bool
	witness: Optional[List[Fraction]] = None


def _check_limit(inst: MixedInstance, limit: TinyInstanceLimit) -> None:
	if inst.n > limit.max_vars or inst.m > limit.max_rows:
		raise OracleLimitError(f"instance too large for the oracle ({inst.n} vars, {inst.m} rows)")
	biggest = max([abs(v) for _, _, v in inst.P.entries() + inst.C.entries()] + [float(v) for v in inst.p] + [float(v) for v in inst.c] + [0.0])
	if biggest > limit.value_cap:
		raise OracleLimitError("instance values exceed the oracle cap")


def _dense_rows(inst: MixedInstance):
	n = inst.n
	P = [[Fraction(0)] * n for _ in range(inst.P.rows)]
	C = [[Fraction(0)] * n for _ in range(inst.C.rows)]
	for i, j, v in inst.P.entries():
		P[i][j] = Fraction(v)
	for i, j, v in inst.C.entries():
		C[i][j] = Fraction(v)
	return P, [Fraction(float(v)) for v in inst.p], C, [Fraction(float(v)) for v in inst.c]


def solve_exact(rows: Sequence[Sequence[Fraction]], rhs: Sequence[Fraction]) -> Optional[List[Fraction]]:
	"""Reduced row echelon form of [rows | rhs] over QQ; None when the square system is singular."""
	n = len(rows)
	if n == 0:
		return []
	augmented = [[_rational(v) for v in row] + [_rational(b)] for row, b in zip(rows, rhs)]
	reduced, pivots = DomainMatrix(augmented, (n, n + 1), QQ).rref()
	if tuple(pivots) != tuple(range(n)):
		return None
	return [Fraction(int(row[n].numerator), int(row[n].denominator)) for row in reduced.to_list()]


def _rational(value):
	value = Fraction(value)
	return QQ(value.numerator, value.denominator)


def _satisfies(x: List[Fraction], P, p, C, c) -> bool:
	if any(v < 0 for v in x):
		return False
	for row, bound in zip(P, p):
		if sum(a * v for a, v in zip(row, x)) > bound:
			return False
	for row, bound in zip(C, c):
		if sum(a * v for a, v in zip(row, x)) < bound:
			return False
	return True


def exact_feasible_tiny(inst: MixedInstance, limit: TinyInstanceLimit = TinyInstanceLimit()) -> OracleResult:
	"""
	Decides {x >= 0 : Px <= p, Cx >= c} exactly by enumerating basic points.
	The region sits in the nonnegative orthant, so when nonempty it has a vertex.
	"""
	_check_limit(inst, limit)
	n = inst.n
	P, p, C, c = _dense_rows(inst)
	if n == 0:
		zero: List[Fraction] = []
		return OracleResult(True, zero) if _satisfies(zero, P, p, C, c) else OracleResult(False)
	planes = list(zip(P, p)) + list(zip(C, c))
	for j in range(n):
		unit = [Fraction(0)] * n
		unit[j] = Fraction(1)
		planes.append((unit, Fraction(0)))
	for subset in combinations(planes, n):
		x = solve_exact([row for row, _ in subset], [b for _, b in subset])
		if x is not None and _satisfies(x, P, p, C, c):
			return OracleResult(True, x)
	return OracleResult(False)


def brute_lambda_star(inst: MixedInstance, limit: TinyInstanceLimit = TinyInstanceLimit(), rel_width: float = 1e-9) -> float:
	"""Bisection on lam over [lam_init/m^2, lam_init] with the exact oracle as predicate."""
	_check_limit(inst, limit)
	lam_init, _ = initial_bound(inst)
	if lam_init == 0:
		return 0.0
	lo = lam_init / max(inst.m, 2) ** 2
	hi = lam_init
	if exact_feasible_tiny(inst.with_packing_scale(lo), limit).feasible:
		return lo
	while hi - lo > rel_width * hi:
		mid = (lo + hi) / 2
		if exact_feasible_tiny(inst.with_packing_scale(mid), limit).feasible:
			hi = mid
		else:
			lo = mid
	return hi


def finite_difference_gradient(fn: Callable[[np.ndarray], float], point, h: float = 1e-6) -> np.ndarray:
	point = np.asarray(point, dtype=float)
	grad = np.zeros_like(point)
	for k in range(point.size):
		step = np.zeros_like(point)
		step[k] = h
		grad[k] = (fn(point + step) - fn(point - step)) / (2 * h)
	return grad
