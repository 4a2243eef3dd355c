# coding=utf-8
from __future__ import absolute_import

import mock
import numpy
import pytest

from sparsedraft.analytics.cost_model import hardware_preset
from sparsedraft.analytics.sweep import choose_plateau, choose_argmax, SweepRunner, sweep_step1_ratio, \
    sweep_step2_gamma, sweep_step3_refine
from sparsedraft.api import DecodeParams
from sparsedraft.selection import SelectorConfig


@pytest.fixture
def base_params():
    return DecodeParams(gamma=2, selector=SelectorConfig(k_min=4), max_new_tokens=8)


@pytest.fixture
def runner(tiny_weights, workload, base_params):
    return SweepRunner(tiny_weights, workload, base_params, hardware_preset('desk', tiny_weights))


def test_choose_plateau():
    assert choose_plateau([0.1, 0.5, 1.0], [3.0, 3.0, 3.0]) == 0.1
    assert choose_plateau([0.1, 0.5, 1.0], [0.0, 1.0, 2.0]) == 1.0
    assert choose_plateau([0.1, 0.5, 1.0], [0.0, 0.0, 0.0]) == 0.1
    with pytest.raises(ValueError):
        choose_plateau([], [])
    with pytest.raises(ValueError):
        choose_plateau([0.5, 0.1], [1.0, 1.0])
    with pytest.raises(ValueError):
        choose_plateau([0.1, 0.5], [1.0])


def test_choose_argmax():
    assert choose_argmax([0.1, 0.2], [5.0, 4.0]) == 0.1
    assert choose_argmax([1, 2, 3], [1.0, 2.0, 2.0]) == 2
    with pytest.raises(ValueError):
        choose_argmax([], [])


def test_grid_measures_each_cell_once(runner):
    grid = runner.grid([1.0, 0.25], [3, 2])
    assert list(grid.coords['sparse_ratio'].values) == [0.25, 1.0]
    assert list(grid.coords['gamma'].values) == [2, 3]
    assert grid['throughput'].shape == (2, 2)
    assert numpy.all(grid['speedup'].values > 0)
    # a full-width draft is accepted in full
    assert list(grid['mean_accepted'].sel(sparse_ratio=1.0).values) == [2.0, 3.0]
    iteration_time = grid['iteration_time'].sel(gamma=3)
    assert iteration_time.sel(sparse_ratio=1.0) > iteration_time.sel(sparse_ratio=0.25)

    with mock.patch.object(runner.executor, 'map', side_effect=AssertionError('cell measured twice')):
        summaries = runner.measure([(0.25, 2), (1.0, 3)])
    assert summaries[1]['mean_accepted'] == 3.0


def test_full_sweep(runner):
    report = runner.run([0.25, 1.0], [2, 3], gamma_large=3)
    assert report.ratio_curve[-1] == (1.0, 3.0)
    assert report.step1_ratio in (0.25, 1.0)
    assert report.step2_gamma in (2, 3)
    assert report.final[0] in (0.25, 1.0)
    assert report.final[1] == report.step2_gamma
    assert report.grid['mean_accepted'].shape == (2, 2)


def test_step1_alone_needs_no_hardware(tiny_weights, workload, base_params):
    ratio, curve = sweep_step1_ratio(tiny_weights, workload, base_params, 2, [1.0, 0.5], epsilon=0.0)
    assert len(curve) == 2
    assert curve[-1] == 2.0
    assert ratio == (0.5 if curve[0] >= 2.0 else 1.0)
    with pytest.raises(ValueError):
        sweep_step1_ratio(tiny_weights, workload, base_params, 2, [])


def test_later_steps_alone(tiny_weights, workload, base_params):
    hw = hardware_preset('desk', tiny_weights)
    gamma = sweep_step2_gamma(tiny_weights, workload, base_params, 1.0, [3, 2], hw)
    assert gamma in (2, 3)
    runner = SweepRunner(tiny_weights, workload, base_params, hw, ctx=64)
    assert sweep_step2_gamma(tiny_weights, workload, base_params, 1.0, [2, 3], hw, ctx=64) == \
        choose_argmax([2, 3], [runner.throughput(1.0, 2), runner.throughput(1.0, 3)])

    ratio, chosen_gamma = sweep_step3_refine(tiny_weights, workload, base_params, 2, [1.0, 0.25], hw)
    assert ratio in (0.25, 1.0)
    assert chosen_gamma == 2
