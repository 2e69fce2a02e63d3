import numpy as np
import pytest

from licspulse import DetuningMode, SystemConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def resonant_quarter():
    return SystemConfig(q=-6.0, R=0.25, detuning_mode=DetuningMode.RESONANT)


@pytest.fixture
def stark_sixteenth():
    return SystemConfig(q=-6.0, R=1.0 / 16.0, detuning_mode=DetuningMode.DYNAMIC_STARK)


def random_config(rng) -> SystemConfig:
    mode = DetuningMode.RESONANT if rng.random() < 0.5 else DetuningMode.DYNAMIC_STARK
    return SystemConfig(
        q=float(rng.uniform(-8.0, 2.0)),
        R=float(rng.choice([0.0, 1.0 / 16.0, 0.25, 1.0])),
        detuning_mode=mode,
    )
