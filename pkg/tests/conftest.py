import numpy as np
import pytest
import torch

from dualground.synth import SynthConfig, generate


@pytest.fixture(scope="session")
def tiny_corpus():
    """Small deterministic corpus shared by module tests."""
    return generate(SynthConfig(num_clips=8, raw_dim=12, vocab_size=20,
                                signal_strength=3.0, noise_std=0.2, seed=11), 4, 2)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_deterministic():
    torch.manual_seed(0)
    yield
