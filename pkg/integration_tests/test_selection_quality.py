# coding=utf-8
"""
Selection quality on the randomly initialised toy model: how verification rows agree with each
other, and how acceptance grows with the kept fraction of the prefix.
"""
from __future__ import absolute_import

import pytest

from sparsedraft.analytics.benchmark import overlap_at_distance, overlap_by_distance
from sparsedraft.analytics.sweep import sweep_step1_ratio
from sparsedraft.analytics.workloads import Workload
from sparsedraft.api import DecodeParams
from sparsedraft.selection import SelectorConfig, ALL_DRAFT, COLLECT2

GAMMA = 4


@pytest.fixture(scope='module')
def segments():
    return Workload(kind='repeated_segments', prompt_len=128, n_prompts=4, seed=0, segment_len=16)


def _params(strategy=COLLECT2):
    return DecodeParams(gamma=GAMMA, selector=SelectorConfig(strategy=strategy, sparse_ratio=0.25, k_min=16),
                        max_new_tokens=64)


def test_row_agreement_falls_with_distance(toy_weights, segments):
    by_distance = overlap_at_distance(overlap_by_distance(toy_weights, segments, _params(), k=32))
    assert len(by_distance) == GAMMA + 1
    assert by_distance[0] == 1.0
    assert by_distance[1] < 1.0
    assert by_distance[GAMMA] <= by_distance[1]


@pytest.mark.parametrize('strategy', [COLLECT2, ALL_DRAFT])
def test_acceptance_grows_with_the_kept_fraction(toy_weights, segments, strategy):
    ratios = [0.25, 0.5, 1.0]
    chosen, curve = sweep_step1_ratio(toy_weights, segments, _params(strategy), GAMMA, ratios, epsilon=0.05)
    assert curve == sorted(curve)
    assert curve[-1] == GAMMA
    # random weights spread attention evenly, so half the prefix is not yet a plateau
    assert curve[1] < 0.95 * curve[-1]
    assert chosen == 1.0
