from typing import Any, Dict, List, Literal, Optional
from pydantic import BaseModel, ConfigDict, Field


class EdgeIn(BaseModel):
	model_config = ConfigDict(populate_by_name=True, extra="forbid")

	source: int = Field(alias="from", ge=0)
	target: int = Field(alias="to", ge=0)
	weight: float = Field(ge=0)
	capacity: float = Field(gt=0)


class CommodityIn(BaseModel):
	model_config = ConfigDict(extra="forbid")

	source: int = Field(ge=0)
	sink: int = Field(ge=0)
	demand: float = Field(gt=0)


class NetworkFile(BaseModel):
	model_config = ConfigDict(extra="forbid")

	nodes: int = Field(ge=1)
	edges: List[EdgeIn]
	commodities: List[CommodityIn]
	budget: float = Field(gt=0)


class EdgeFlowOut(BaseModel):
	edge: int
	flow: float


class CommodityFlowOut(BaseModel):
	commodity: int
	shipped: float
	edges: List[EdgeFlowOut]


class FlowSolutionOut(BaseModel):
	status: Literal["feasible", "infeasible"]
	edge_flow: Optional[List[float]] = None
	cost: Optional[float] = None
	commodities: Optional[List[CommodityFlowOut]] = None
	stats: Dict[str, Any] = Field(default_factory=dict)
