# coding=utf-8
from __future__ import absolute_import

import pytest

from sparsedraft.analytics.workloads import Workload, KINDS
from sparsedraft.utils import ContextOverflowError, InvalidDocException


@pytest.mark.parametrize('kind', KINDS)
def test_prompts_are_reproducible(kind):
    workload = Workload(kind=kind, prompt_len=40, n_prompts=3, seed=5)
    prompts = workload.prompts(50)
    assert prompts == Workload(kind=kind, prompt_len=40, n_prompts=3, seed=5).prompts(50)
    assert prompts != Workload(kind=kind, prompt_len=40, n_prompts=3, seed=6).prompts(50)
    assert len({tuple(p) for p in prompts}) == 3
    for p in prompts:
        assert len(p) == 40
        assert all(0 <= t < 50 for t in p)


def test_repeated_segments():
    workload = Workload(kind='repeated_segments', prompt_len=30, n_prompts=1, segment_len=8, repeats=3)
    prompt = workload.prompt(0, 100)
    # six filler tokens, then three copies
    body = prompt[6:]
    assert body[:8] == body[8:16] == body[16:]

    cut = Workload(kind='repeated_segments', prompt_len=20, n_prompts=1, segment_len=8).prompt(0, 100)
    assert cut[:8] == cut[8:16] and cut[16:] == cut[:4]


def test_needle_cue_repeats_its_opening():
    workload = Workload(kind='needle', prompt_len=64, n_prompts=4, needle_len=8)
    for prompt in workload.prompts(1000):
        cue = prompt[-4:]
        openings = [i for i in range(64 - 8 - 4 + 1) if prompt[i:i + 4] == cue]
        assert openings


@pytest.mark.parametrize('bad', [dict(kind='zipf'), dict(prompt_len=0), dict(n_prompts=0), dict(seed=-1),
                                 dict(segment_len=0), dict(repeats=0), dict(kind='needle', needle_len=40)])
def test_invalid_workloads(bad):
    with pytest.raises(InvalidDocException):
        Workload(**bad)


def test_check_fits(tiny_config):
    workload = Workload(prompt_len=100)
    workload.check_fits(tiny_config, 20, 8)
    with pytest.raises(ContextOverflowError):
        workload.check_fits(tiny_config, 20, 9)
    with pytest.raises(IndexError):
        workload.prompt(4, 32)
    assert Workload.from_doc(workload.to_doc()) == workload
