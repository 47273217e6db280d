from __future__ import annotations
from typing import Any, Dict, List, Sequence, TextIO
import csv
import logging
import math

from rich.console import Console
from rich.table import Table

from packcover.schemas.solve import SolveConfig
from packcover.services.instance import generate_random_feasible
from packcover.services.solvers import solve


logger = logging.getLogger(__name__)

FIELDNAMES = [
	"algorithm", "m", "n", "d", "nnz", "epsilon", "N", "status", "increments", "phases", "rows_touched",
	"max_phase_increments", "wall_time", "ops_constant", "per_phase_constant",
]


def operation_count(algorithm: str, increments: int, phases: int, rows_touched: int, nnz: int) -> int:
	"""
	Phased work is the row entries its increments touched plus one full column scan per phase.
	The other loops rescan every column on each increment.
	"""
	if algorithm == "phased":
		return rows_touched + phases * nnz
	return increments * nnz


def run_bench(sizes: Sequence[int], epsilons: Sequence[float], algorithms: Sequence[str], seed: int = 0, density: float = 0.3, threads: int = 1) -> List[Dict[str, Any]]:
	"""One planted-feasible instance per size; every (algorithm, epsilon) pair solves it."""
	rows: List[Dict[str, Any]] = []
	for size in sizes:
		half = max(size // 2, 1)
		inst, _ = generate_random_feasible(size, half, half, density, seed + size)
		for eps in epsilons:
			for algorithm in algorithms:
				outcome = solve(inst, SolveConfig(epsilon=eps, algorithm=algorithm, threads=threads))
				s = outcome.stats
				m, d, nnz = s["m"], s["column_degree"], s["nnz"]
				scale = m * d * math.log(max(m, 2)) / eps**2
				per_phase = None
				if algorithm == "parallel":
					N, n = s["N"], max(s["n"], 1)
					per_phase = s["max_phase_increments"] / (N * math.log(N * n) / eps)
				rows.append({
					"algorithm": algorithm,
					"m": m,
					"n": s["n"],
					"d": d,
					"nnz": nnz,
					"epsilon": eps,
					"N": s["N"],
					"status": outcome.status,
					"increments": s["increments"],
					"phases": s["phases"],
					"rows_touched": s["rows_touched"],
					"max_phase_increments": s["max_phase_increments"],
					"wall_time": s["wall_time"],
					"ops_constant": operation_count(algorithm, s["increments"], s["phases"], s["rows_touched"], nnz) / scale,
					"per_phase_constant": per_phase,
				})
				logger.info("bench %s m=%d eps=%g: %d increments", algorithm, m, eps, s["increments"])
	return rows


def write_csv(rows: List[Dict[str, Any]], fh: TextIO) -> None:
	writer = csv.DictWriter(fh, fieldnames=FIELDNAMES)
	writer.writeheader()
	for row in rows:
		writer.writerow(row)


def fmt(val, decimals: int = 3) -> str:
	if val is None:
		return "--"
	if isinstance(val, float):
		return f"{val:.{decimals}g}"
	return str(val)


def render_table(rows: List[Dict[str, Any]], console: Console | None = None) -> Table:
	table = Table(show_header=True, header_style="bold cyan")
	for name in ("algorithm", "m", "epsilon", "increments", "phases", "wall_time", "ops_constant", "per_phase_constant"):
		table.add_column(name, justify="left" if name == "algorithm" else "right")
	for row in rows:
		table.add_row(*(fmt(row[name]) for name in ("algorithm", "m", "epsilon", "increments", "phases", "wall_time", "ops_constant", "per_phase_constant")))
	if console is not None:
		console.print(table)
	return table
