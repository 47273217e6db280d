from typing import Any, Dict, List, Literal, Optional
from pydantic import BaseModel, ConfigDict, Field


class PhantomFile(BaseModel):
	model_config = ConfigDict(extra="forbid")

	grid: List[List[float]] = Field(description="Square grid of nonnegative densities, row-major.")
	angles: List[float] = Field(default_factory=lambda: [0.0, 45.0, 90.0, 135.0], description="Projection angles in degrees.")
	box: bool = False


class TomoResultOut(BaseModel):
	status: Literal["feasible", "infeasible"]
	grid_side: int
	x: Optional[List[float]] = None
	grid: Optional[List[List[float]]] = None
	residual_min: Optional[float] = None
	residual_max: Optional[float] = None
	stats: Dict[str, Any] = Field(default_factory=dict)
