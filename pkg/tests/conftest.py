import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from lightdecomp.env import LightEnv  # noqa: E402
from lightdecomp.mixer import Mixer, MixerConfig  # noqa: E402
from lightdecomp.policy.network import PolicyConfig, init_network  # noqa: E402
from lightdecomp.training import TrajBatch  # noqa: E402

torch.set_num_threads(1)

TINY_POLICY = PolicyConfig(d_model=16, n_layers=1, n_heads=2, d_ff=32, head_hidden=16, hist_embed=8)


@pytest.fixture(scope="session")
def small_env():
    return LightEnv(Mixer(MixerConfig(width=16, height=16)))


@pytest.fixture(scope="session")
def experts(small_env):
    return TrajBatch.from_trajectories(small_env.build_expert_dataset(32, np.random.default_rng(0)))


@pytest.fixture
def tiny_net():
    return init_network(TINY_POLICY, seed=3)


def random_hist(rng, n, sparsity=0.0):
    p = rng.random(n)
    if sparsity:
        p[rng.random(n) < sparsity] = 0.0
    if p.sum() == 0:
        p[0] = 1.0
    return p / p.sum()
