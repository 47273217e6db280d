from __future__ import annotations
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional
import argparse
import json
import logging
import sys

from rich.console import Console

from packcover.core.config import settings
from packcover.core.errors import NothingToVerifyError, PackCoverError, TriviallyInfeasibleError
from packcover.core.logging import configure_logging
from packcover.schemas.solve import Selector, SolveConfig
from packcover.services import bench
from packcover.services.instance import generate_random_feasible
from packcover.services.mcf import FlowNetwork, solve_mcf
from packcover.services.optimizer import optimize
from packcover.services.parsing import parse_network_file, parse_phantom, parse_solution_x, read_instance, serialize_instance, write_pgm
from packcover.services.solvers import check_solution, solve
from packcover.services.tomography import run_tomography


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2

SELECTORS = {
	"min-ratio": Selector.min_ratio,
	"min-difference": Selector.min_difference,
	"first": Selector.first_eligible,
}


class CommandParser(argparse.ArgumentParser):
	"""Argument errors exit with status 1 after printing usage."""

	def error(self, message: str):
		self.print_usage(sys.stderr)
		self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _epsilon(text: str) -> float:
	try:
		value = float(text)
	except ValueError as e:
		raise argparse.ArgumentTypeError(f"invalid epsilon {text!r}") from e
	if not 0 < value < 1:
		raise argparse.ArgumentTypeError("epsilon must lie in (0, 1)")
	return value


def _positive_int(text: str) -> int:
	try:
		value = int(text)
	except ValueError as e:
		raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from e
	if value < 1:
		raise argparse.ArgumentTypeError("must be at least 1")
	return value


def _algorithm(text: str) -> str:
	name = text.strip()
	if name not in ("generic", "phased", "parallel"):
		raise argparse.ArgumentTypeError(f"unknown algorithm {text!r}")
	return name


def _list_of(kind: Callable[[str], Any]) -> Callable[[str], List[Any]]:
	def parse(text: str) -> List[Any]:
		return [kind(part) for part in text.split(",") if part.strip()]
	return parse


def build_parser() -> argparse.ArgumentParser:
	common = CommandParser(add_help=False)
	common.add_argument("--output", help="Write the result here instead of stdout.")
	common.add_argument("--epsilon", type=_epsilon, default=settings.default_epsilon)
	common.add_argument("--algorithm", choices=["generic", "phased", "parallel"], default=settings.default_algorithm)
	common.add_argument("--selector", choices=sorted(SELECTORS), default="min-ratio")
	common.add_argument("--seed", type=int, default=settings.seed)
	common.add_argument("--max-increments", type=_positive_int, default=settings.max_increments)
	common.add_argument("--trace", help="CSV file receiving one row per increment.")
	common.add_argument("--threads", type=_positive_int, default=settings.threads)

	parser = CommandParser(prog="packcover", description="Approximate mixed packing and covering solver.")
	sub = parser.add_subparsers(dest="command", required=True, parser_class=CommandParser)

	p = sub.add_parser("solve", parents=[common], help="Decide approximate feasibility of an instance.")
	p.add_argument("--input", required=True)

	p = sub.add_parser("optimize", parents=[common], help="Minimize lambda with Px <= lambda p, Cx >= c.")
	p.add_argument("--input", required=True)

	p = sub.add_parser("flow", parents=[common], help="Min-cost concurrent multicommodity flow.")
	p.add_argument("--input", required=True)

	p = sub.add_parser("tomo", parents=[common], help="Reconstruct a phantom from parallel-beam projections.")
	p.add_argument("--input", required=True)
	p.add_argument("--pgm", help="Also write the reconstruction as an ASCII PGM image.")
	p.add_argument("--box", action="store_true", help="Add x_j <= 1 constraints.")

	p = sub.add_parser("gen", parents=[common], help="Generate a planted-feasible random instance.")
	p.add_argument("--vars", type=_positive_int, default=20)
	p.add_argument("--packing-rows", type=_positive_int, default=15)
	p.add_argument("--covering-rows", type=_positive_int, default=15)
	p.add_argument("--density", type=float, default=0.3)
	p.add_argument("--planted", help="Write the planted x* here as JSON.")

	p = sub.add_parser("check", parents=[common], help="Verify a solution file against an instance.")
	p.add_argument("--input", required=True)
	p.add_argument("--solution", required=True)

	p = sub.add_parser("bench", parents=[common], help="Sweep sizes and epsilons, write a CSV of work counts.")
	p.add_argument("--sizes", type=_list_of(_positive_int), default=[10, 20, 40])
	p.add_argument("--epsilons", type=_list_of(_epsilon), default=[0.2, 0.1])
	p.add_argument("--algorithms", type=_list_of(_algorithm), default=["generic", "phased", "parallel"])
	p.add_argument("--density", type=float, default=0.3)
	return parser


def _solve_config(args: argparse.Namespace) -> SolveConfig:
	return SolveConfig(
		epsilon=args.epsilon,
		algorithm=args.algorithm,
		selector=SELECTORS[args.selector],
		max_increments=args.max_increments,
		trace=bool(args.trace),
		threads=args.threads,
	)


def _emit(args: argparse.Namespace, payload: Any) -> None:
	if isinstance(payload, bytes):
		text = payload.decode("utf-8")
	else:
		text = json.dumps(payload, indent=2)
	if args.output:
		Path(args.output).write_text(text + "\n", encoding="utf-8")
	else:
		sys.stdout.write(text + "\n")


def _status_code(status: str) -> int:
	return EXIT_OK if status in ("feasible", "optimal") else EXIT_INFEASIBLE


def cmd_solve(args: argparse.Namespace) -> int:
	inst = read_instance(args.input)
	outcome = solve(inst, _solve_config(args))
	if args.trace and outcome.trace is not None:
		outcome.trace.write_csv(args.trace)
	payload = outcome.to_schema().model_dump()
	payload["stats"]["seed"] = args.seed
	_emit(args, payload)
	return _status_code(outcome.status)


def cmd_optimize(args: argparse.Namespace) -> int:
	inst = read_instance(args.input)
	try:
		result = optimize(inst, args.epsilon, _solve_config(args).model_copy(update={"trace": False}))
	except TriviallyInfeasibleError as e:
		_emit(args, {"status": "infeasible", "lambda": None, "x": None, "stats": {"reason": str(e), "seed": args.seed}})
		return EXIT_INFEASIBLE
	payload = result.to_schema().model_dump(by_alias=True)
	payload["stats"]["seed"] = args.seed
	_emit(args, payload)
	return EXIT_OK


def cmd_flow(args: argparse.Namespace) -> int:
	net = FlowNetwork.from_file(parse_network_file(Path(args.input).read_bytes()))
	solution = solve_mcf(net, args.epsilon, args.max_increments)
	payload = solution.to_schema(net).model_dump()
	payload["stats"]["seed"] = args.seed
	_emit(args, payload)
	return _status_code(solution.status)


def cmd_tomo(args: argparse.Namespace) -> int:
	phantom = parse_phantom(Path(args.input).read_bytes())
	if args.box:
		phantom = phantom.model_copy(update={"box": True})
	config = _solve_config(args).model_copy(update={"algorithm": "parallel", "trace": False})
	_, result = run_tomography(phantom, args.epsilon, config)
	if args.pgm and result.grid is not None:
		write_pgm(result.grid, args.pgm)
	payload = result.model_dump()
	payload["stats"]["seed"] = args.seed
	_emit(args, payload)
	return _status_code(result.status)


def cmd_gen(args: argparse.Namespace) -> int:
	inst, x_star = generate_random_feasible(args.vars, args.packing_rows, args.covering_rows, args.density, args.seed)
	_emit(args, serialize_instance(inst))
	if args.planted:
		Path(args.planted).write_text(json.dumps({"x": [float(v) for v in x_star], "seed": args.seed}, indent=2) + "\n", encoding="utf-8")
	return EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
	inst = read_instance(args.input)
	x = parse_solution_x(Path(args.solution).read_bytes())
	report = check_solution(inst, x, args.epsilon)
	_emit(args, report.model_dump())
	return EXIT_OK if report.passed else EXIT_ERROR


def cmd_bench(args: argparse.Namespace) -> int:
	rows = bench.run_bench(args.sizes, args.epsilons, args.algorithms, args.seed, args.density, args.threads)
	if args.output:
		with open(args.output, "w", newline="", encoding="utf-8") as fh:
			bench.write_csv(rows, fh)
	else:
		bench.write_csv(rows, sys.stdout)
	bench.render_table(rows, Console(stderr=True))
	return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
	"solve": cmd_solve,
	"optimize": cmd_optimize,
	"flow": cmd_flow,
	"tomo": cmd_tomo,
	"gen": cmd_gen,
	"check": cmd_check,
	"bench": cmd_bench,
}


def run(argv: Optional[List[str]] = None) -> int:
	parser = build_parser()
	try:
		args = parser.parse_args(argv)
	except SystemExit as e:
		return int(e.code or 0)
	configure_logging(settings.log_level_value)
	try:
		return COMMANDS[args.command](args)
	except NothingToVerifyError as e:
		print(f"packcover: {e}", file=sys.stderr)
		return EXIT_INFEASIBLE
	except (PackCoverError, OSError) as e:
		logger.debug("command failed", exc_info=True)
		print(f"packcover: error: {e}", file=sys.stderr)
		return EXIT_ERROR


def main() -> None:
	sys.exit(run())
