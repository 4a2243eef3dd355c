"""
py.test configuration fixtures

This module defines any fixtures or other extensions to py.test to be used throughout the
tests in this and sub packages.
"""
from __future__ import print_function, absolute_import

import pytest

from sparsedraft.analytics.workloads import Workload
from sparsedraft.model import ModelConfig, banded
from sparsedraft.model.transformer import init_weights


@pytest.fixture(scope='session')
def tiny_config():
    """Two dense layers, small enough to decode hundreds of tokens per second."""
    return ModelConfig(n_layers=2, d_model=32, n_q_heads=4, n_kv_heads=2, head_dim=8, vocab_size=32,
                       max_context=128)


@pytest.fixture(scope='session')
def tiny_weights(tiny_config):
    return init_weights(tiny_config, 0)


@pytest.fixture(scope='session')
def banded_config():
    return ModelConfig(n_layers=3, d_model=32, n_q_heads=4, n_kv_heads=2, head_dim=8, vocab_size=32,
                       max_context=128, layer_kinds=['dense', banded(4), 'dense'])


@pytest.fixture(scope='session')
def banded_weights(banded_config):
    return init_weights(banded_config, 3)


@pytest.fixture
def workload():
    return Workload(kind='repeated_segments', prompt_len=24, n_prompts=2, seed=0, segment_len=6)


@pytest.fixture
def prompt(workload, tiny_config):
    return workload.prompt(0, tiny_config.vocab_size)
