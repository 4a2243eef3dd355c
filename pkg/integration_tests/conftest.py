# coding=utf-8
"""
Fixtures for the long-running end-to-end checks.
"""
from __future__ import absolute_import

import pytest

from sparsedraft.analytics.workloads import Workload
from sparsedraft.model import ModelConfig, TOY_CONFIG
from sparsedraft.model.transformer import init_weights

INTEGRATION_SEEDS = 20


@pytest.fixture(scope='session')
def toy_weights():
    return init_weights(TOY_CONFIG, 0)


@pytest.fixture(scope='session')
def small_weights():
    config = ModelConfig(n_layers=2, d_model=64, n_q_heads=4, n_kv_heads=2, head_dim=16, vocab_size=64,
                         max_context=256)
    return init_weights(config, 1)


@pytest.fixture(scope='session')
def narrow_vocab_weights():
    """Eight tokens, so an empirical token distribution converges quickly."""
    config = ModelConfig(n_layers=2, d_model=32, n_q_heads=4, n_kv_heads=2, head_dim=8, vocab_size=8,
                         max_context=128)
    return init_weights(config, 2)


@pytest.fixture(scope='session')
def seeded_prompts(toy_weights):
    workload = Workload(kind='repeated_segments', prompt_len=64, n_prompts=INTEGRATION_SEEDS, seed=0,
                        segment_len=12)
    return workload.prompts(toy_weights.config.vocab_size)
