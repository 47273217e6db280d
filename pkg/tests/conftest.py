import json

import numpy as np
import pytest

from packcover.services.instance import MixedInstance, generate_random_feasible


def one_var(P, p, C, c) -> MixedInstance:
	return MixedInstance.from_dense([[P]], [p], [[C]], [c])


@pytest.fixture
def unit_instance() -> MixedInstance:
	"""x <= 1 and x >= 1."""
	return one_var(1.0, 1.0, 1.0, 1.0)


@pytest.fixture
def contradictory_instance() -> MixedInstance:
	"""2x <= 1 and x >= 1."""
	return one_var(2.0, 1.0, 1.0, 1.0)


@pytest.fixture
def planted():
	return generate_random_feasible(12, 8, 8, 0.4, 3)


@pytest.fixture
def write_json(tmp_path):
	def write(name, payload):
		path = tmp_path / name
		if isinstance(payload, bytes):
			path.write_bytes(payload)
		else:
			path.write_text(json.dumps(payload), encoding="utf-8")
		return path
	return write


@pytest.fixture
def rng():
	return np.random.default_rng(12345)
