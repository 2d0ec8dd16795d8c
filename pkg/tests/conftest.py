import torch
import pytest

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return torch.Generator().manual_seed(1234)


def randn(*shape, generator=None):
    return torch.randn(*shape, generator=generator, dtype=torch.float64)
