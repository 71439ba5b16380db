import numpy as np
import pytest

from neuronlock import abe
from neuronlock.container import Dtype, LayerSpec
from neuronlock.rng import Rng
from neuronlock.synth import build_container, random_model, task_fixture


@pytest.fixture
def tiny_f32():
    """Minimal 1-layer FLOAT32 container (d_in=2, d_hidden=3, d_out=2)."""
    w_in = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    b_in = np.array([0.5, -0.5, 0.25])
    w_out = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    return build_container([w_in], [b_in], [w_out], Dtype.FLOAT32)


@pytest.fixture
def tiny_int8():
    """64-neuron INT8 container mirroring the harness fixture shape."""
    return random_model([LayerSpec(16, 64, 8)], Dtype.INT8, seed=7)


@pytest.fixture
def three_layer_f16():
    return random_model(
        [LayerSpec(8, 16, 8), LayerSpec(8, 12, 8), LayerSpec(8, 20, 4)],
        Dtype.FLOAT16,
        seed=11,
    )


@pytest.fixture
def two_task_fixture():
    return task_fixture(tasks=("health", "code"), seed=3)


@pytest.fixture(scope="session")
def abe_system():
    """One CP-ABE setup shared across tests (setup itself is tested separately)."""
    rng = Rng(1234)
    pk, msk = abe.abe_setup(rng)
    return pk, msk, rng
