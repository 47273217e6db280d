from typing import Any, Dict, List, Literal, Optional, Tuple
from pydantic import BaseModel, Field


class Certificate(BaseModel):
	reason: str
	phase: int
	increments: int
	log_ratio: float = Field(description="Smallest log eligibility ratio seen at the failing test.")


class SolutionOut(BaseModel):
	status: Literal["feasible", "infeasible"]
	x: Optional[List[float]] = None
	stats: Dict[str, Any] = Field(default_factory=dict)
	certificate: Optional[Certificate] = None


class SubproblemOut(BaseModel):
	lam: float
	epsilon: float
	status: Literal["feasible", "infeasible"]
	certified_lambda: Optional[float] = None
	retries: int = 0
	bracket: Optional[Tuple[float, float]] = Field(default=None, description="Certified [lower, upper] bounds on lambda* after this subproblem.")
	stage: Literal["bracket", "refine", "polish"] = "refine"
	increments: int = Field(default=0, description="Solver increments over every attempt of this subproblem.")


class OptimizeOut(BaseModel):
	status: Literal["optimal", "infeasible"] = "optimal"
	lam: Optional[float] = Field(default=None, serialization_alias="lambda")
	x: Optional[List[float]] = None
	bracket: Optional[Tuple[float, float]] = None
	subproblem_log: List[SubproblemOut] = Field(default_factory=list)
	stats: Dict[str, Any] = Field(default_factory=dict)


class RowSlack(BaseModel):
	row: int
	value: float
	bound: float


class CheckReport(BaseModel):
	passed: bool
	max_packing_ratio: Optional[float]
	min_covering_ratio: Optional[float]
	packing_bound: float
	worst_packing: Optional[RowSlack] = None
	worst_covering: Optional[RowSlack] = None
	violation: Optional[str] = None
