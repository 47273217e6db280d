from __future__ import annotations
from typing import Any, List, Type, TypeVar
import json
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ValidationError

from packcover.core.errors import InstanceError, NothingToVerifyError
from packcover.schemas.instance import InstanceFile, MatrixBlock
from packcover.schemas.network import NetworkFile
from packcover.schemas.tomo import PhantomFile
from packcover.services.instance import MixedInstance, SparseNonnegMatrix


ModelT = TypeVar("ModelT", bound=BaseModel)


def _load_json(text: bytes | str) -> Any:
	try:
		if isinstance(text, bytes):
			text = text.decode("utf-8-sig")
		return json.loads(text)
	except Exception as e:
		raise InstanceError("malformed JSON") from e


def _validate(model: Type[ModelT], data: Any) -> ModelT:
	try:
		return model.model_validate(data)
	except ValidationError as e:
		first = e.errors()[0]
		where = ".".join(str(part) for part in first["loc"])
		raise InstanceError(f"invalid {model.__name__} at {where}: {first['msg']}") from e


def _block_to_matrix(block: MatrixBlock, num_vars: int, name: str) -> SparseNonnegMatrix:
	if len(block.rhs) != block.rows:
		raise InstanceError(f"{name} rhs has {len(block.rhs)} entries, expected {block.rows}")
	return SparseNonnegMatrix(block.rows, num_vars, block.entries)


def parse_instance(text: bytes | str) -> MixedInstance:
	raw = _validate(InstanceFile, _load_json(text))
	P = _block_to_matrix(raw.packing, raw.num_vars, "packing")
	C = _block_to_matrix(raw.covering, raw.num_vars, "covering")
	return MixedInstance(P, np.array(raw.packing.rhs, dtype=float), C, np.array(raw.covering.rhs, dtype=float))


def instance_to_file(inst: MixedInstance) -> InstanceFile:
	return InstanceFile(
		num_vars=inst.n,
		packing=MatrixBlock(rows=inst.P.rows, entries=inst.P.entries(), rhs=[float(v) for v in inst.p]),
		covering=MatrixBlock(rows=inst.C.rows, entries=inst.C.entries(), rhs=[float(v) for v in inst.c]),
	)


def serialize_instance(inst: MixedInstance) -> bytes:
	return json.dumps(instance_to_file(inst).model_dump(), indent=1).encode("utf-8")


def read_instance(path: str | Path) -> MixedInstance:
	return parse_instance(Path(path).read_bytes())


def parse_network_file(text: bytes | str) -> NetworkFile:
	return _validate(NetworkFile, _load_json(text))


def parse_phantom(text: bytes | str) -> PhantomFile:
	raw = _validate(PhantomFile, _load_json(text))
	side = len(raw.grid)
	if side == 0 or any(len(row) != side for row in raw.grid):
		raise InstanceError("phantom grid must be square")
	values = np.asarray(raw.grid, dtype=float)
	if not np.all(np.isfinite(values)) or (values < 0).any():
		raise InstanceError("phantom densities must be finite and nonnegative")
	return raw


def parse_solution_x(text: bytes | str) -> np.ndarray:
	data = _load_json(text)
	if isinstance(data, dict) and data.get("status") == "infeasible":
		raise NothingToVerifyError("solution is infeasible")
	if not isinstance(data, dict) or data.get("x") is None:
		raise InstanceError("solution file has no x")
	try:
		return np.asarray(data["x"], dtype=float)
	except (TypeError, ValueError) as e:
		raise InstanceError("solution x must be a list of numbers") from e


def write_pgm(grid: List[List[float]] | np.ndarray, path: str | Path, max_value: int = 255) -> None:
	"""ASCII (P2) grayscale image, values scaled to [0, max_value]."""
	arr = np.asarray(grid, dtype=float)
	top = float(arr.max()) if arr.size else 0.0
	scaled = np.zeros_like(arr) if top <= 0 else np.clip(arr / top, 0.0, 1.0) * max_value
	pixels = np.rint(scaled).astype(int)
	lines = ["P2", f"{arr.shape[1]} {arr.shape[0]}", str(max_value)]
	lines.extend(" ".join(str(v) for v in row) for row in pixels)
	Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
