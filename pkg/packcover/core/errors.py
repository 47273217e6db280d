from __future__ import annotations


class PackCoverError(Exception):
	"""Base class for every error raised by packcover."""


class InstanceError(PackCoverError, ValueError):
	"""Malformed or invalid problem input."""


class TriviallyInfeasibleError(InstanceError):
	"""A covering row with positive demand has no usable column."""

	def __init__(self, row: int, message: str = "trivially infeasible"):
		super().__init__(f"{message}: covering row {row}")
		self.row = row


class NetworkError(InstanceError):
	pass


class TomographyError(InstanceError):
	pass


class PotentialError(PackCoverError, ValueError):
	pass


class SolverError(PackCoverError, RuntimeError):
	"""Internal solver failure, never an answer about the instance."""


class BudgetExhaustedError(SolverError):
	def __init__(self, increments: int):
		super().__init__(f"budget exhausted after {increments} increments")
		self.increments = increments


class VerificationError(PackCoverError):
	def __init__(self, kind: str, row: int, value: float, bound: float):
		super().__init__(f"{kind} violation at row {row}: {value!r} vs bound {bound!r}")
		self.kind = kind
		self.row = row
		self.value = value
		self.bound = bound


class NothingToVerifyError(PackCoverError):
	def __init__(self, reason: str = ""):
		super().__init__(f"nothing to verify: {reason}" if reason else "nothing to verify")
		self.reason = reason


class OracleLimitError(PackCoverError, ValueError):
	pass
