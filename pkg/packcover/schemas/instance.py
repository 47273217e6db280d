from typing import List, Tuple
from pydantic import BaseModel, ConfigDict, Field


class MatrixBlock(BaseModel):
	model_config = ConfigDict(extra="forbid")

	rows: int = Field(ge=0)
	entries: List[Tuple[int, int, float]] = Field(default_factory=list)
	rhs: List[float] = Field(default_factory=list)


class InstanceFile(BaseModel):
	"""On-disk form of a mixed packing/covering instance."""

	model_config = ConfigDict(extra="forbid")

	num_vars: int = Field(ge=0)
	packing: MatrixBlock
	covering: MatrixBlock
