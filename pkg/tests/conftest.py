import pytest

from handcnn import tensor


@pytest.fixture(autouse=True)
def _engine_state():
    """Keep the engine-wide switches from leaking between tests."""
    tensor.set_precision("float32")
    tensor.set_finite_checks(True)
    yield
    tensor.set_precision("float32")
    tensor.set_finite_checks(True)
