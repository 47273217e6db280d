import logging
import os

from pydantic import Field
from pydantic_settings import BaseSettings

# logging.getLevelNamesMapping is Python 3.11+; same mapping on 3.10.
_level_names_mapping = getattr(
	logging, "getLevelNamesMapping", lambda: dict(logging._nameToLevel)
)


def normalize_log_level(level: str) -> str:
	"""
	Normalize a log level name.
	- Accepts any case and surrounding whitespace
	- Unknown names fall back to WARNING
	"""
	name = level.strip().upper()
	if name == "WARN":
		name = "WARNING"
	if name not in _level_names_mapping():
		return "WARNING"
	return name


class Settings(BaseSettings):
	log_level: str = Field(default=os.getenv("MPC_LOG", "WARNING"))
	default_epsilon: float = Field(default=float(os.getenv("MPC_EPSILON", "0.1")))
	default_algorithm: str = Field(default=os.getenv("MPC_ALGORITHM", "phased"))
	max_increments: int = Field(default=int(os.getenv("MPC_MAX_INCREMENTS", "10000000")))
	resync_interval: int = Field(default=int(os.getenv("MPC_RESYNC_INTERVAL", str(2**16))))
	threads: int = Field(default=int(os.getenv("MPC_THREADS", "1")))
	seed: int = Field(default=int(os.getenv("MPC_SEED", "0")))
	infeasibility_tolerance: float = 1e-12  # log-ratio units
	subproblem_retries: int = 3
	shift_headroom: float = 30.0

	@property
	def log_level_value(self) -> int:
		"""Numeric logging level for the configured name."""
		return _level_names_mapping()[normalize_log_level(self.log_level)]


settings = Settings()
