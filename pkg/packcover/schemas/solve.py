from enum import Enum
from typing import Literal
from pydantic import BaseModel, ConfigDict, Field

from packcover.core.config import settings


class Selector(str, Enum):
	min_ratio = "min_ratio"
	min_difference = "min_difference"
	first_eligible = "first_eligible"


Algorithm = Literal["generic", "phased", "parallel"]


class SolveConfig(BaseModel):
	model_config = ConfigDict(frozen=True)

	epsilon: float = Field(default=settings.default_epsilon, gt=0, lt=1)
	algorithm: Algorithm = Field(default_factory=lambda: settings.default_algorithm, validate_default=True)
	selector: Selector = Selector.min_ratio
	max_increments: int = Field(default=settings.max_increments, ge=1)
	trace: bool = False
	threads: int = Field(default=settings.threads, ge=1, description="Lanes for the parallel solver.")
	delete_covered: bool = Field(default=True, description="Deactivate covering rows once Cx >= N. Only P = C instances may turn this off.")
	infeasibility_tolerance: float = Field(default=settings.infeasibility_tolerance, ge=0)
	resync_interval: int = Field(default=settings.resync_interval, ge=1)
