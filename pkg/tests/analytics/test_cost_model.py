# coding=utf-8
from __future__ import absolute_import

import pytest
from hypothesis import given
from hypothesis.strategies import integers, floats

from sparsedraft.analytics.cost_model import HardwareModel, hardware_preset, verify_kv_time, \
    cost_iteration_time, modeled_throughput, vanilla_throughput, draft_step_time, H100, PRESETS
from sparsedraft.utils import InvalidDocException
from tests.util import isclose


def test_kv_transfer_anchor():
    hw = HardwareModel(mem_bandwidth=3.892e12, weight_bytes=0, kv_bytes_per_token=72e9)
    assert isclose(verify_kv_time(hw, 1) * 1000, 18.5, rel_tol=0.005)


def test_presets():
    assert hardware_preset('h100') == H100
    assert hardware_preset('h100-collect-all').overhead_fraction_collect == 0.53
    assert hardware_preset('h100-quest').overhead_fraction_select == 0.217
    assert hardware_preset('h100-long', overhead_fraction_collect=0.1).overhead_fraction_collect == 0.1
    assert set(PRESETS) >= {'h100', 'h100-collect2'}
    with pytest.raises(InvalidDocException):
        hardware_preset('a100')
    with pytest.raises(InvalidDocException):
        hardware_preset('desk')


def test_desk_preset(banded_weights):
    hw = hardware_preset('desk', banded_weights)
    assert hw.weight_bytes == banded_weights.n_bytes
    assert hw.kv_bytes_per_token == banded_weights.config.kv_bytes_per_token
    assert isclose(hw.dense_fraction, 2 / 3.0)
    assert hw.banded_window == 5


@pytest.mark.parametrize('bad', [dict(mem_bandwidth=0), dict(weight_bytes=-1), dict(dense_fraction=1.5)])
def test_invalid_hardware(bad):
    fields = dict(mem_bandwidth=1e12, weight_bytes=1e9, kv_bytes_per_token=1e5)
    fields.update(bad)
    with pytest.raises(InvalidDocException):
        HardwareModel(**fields)


@given(integers(min_value=1, max_value=200000), floats(min_value=0.0, max_value=0.85),
       integers(min_value=1, max_value=16))
def test_iteration_time_grows_with_every_input(ctx, ratio, gamma):
    hw = PRESETS['h100-collect2']
    base = cost_iteration_time(hw, ctx, ratio, gamma)
    assert cost_iteration_time(hw, ctx + 1000, ratio, gamma) > base
    assert cost_iteration_time(hw, ctx, ratio + 0.1, gamma) > base
    assert cost_iteration_time(hw, ctx, ratio, gamma + 1) > base


def test_banded_layers_cap_their_reads():
    hw = HardwareModel(1.0, 0.0, 1.0, dense_fraction=0.5, banded_window=100)
    assert draft_step_time(hw, 1000, 1.0) == 0.5 * 1000 + 0.5 * 100
    assert draft_step_time(hw, 50, 0.5) == 0.5 * 25 + 0.5 * 50


def test_throughput():
    hw = PRESETS['h100']
    ctx = 32000
    assert modeled_throughput(hw, ctx, 1.0, 0, 1.0) == pytest.approx(vanilla_throughput(hw, ctx))
    # accepting every draft at a small ratio beats plain decoding
    assert modeled_throughput(hw, ctx, 0.1, 4, 5.0) > vanilla_throughput(hw, ctx)
    # nothing accepted costs throughput
    assert modeled_throughput(hw, ctx, 0.1, 4, 1.0) < vanilla_throughput(hw, ctx)
    with pytest.raises(ValueError):
        modeled_throughput(hw, ctx, 0.1, 4, 6.0)
    with pytest.raises(ValueError):
        cost_iteration_time(hw, ctx, 1.5, 4)


def test_collection_overhead_scales_verification():
    plain = cost_iteration_time(PRESETS['h100'], 10000, 0.1, 4)
    collecting = cost_iteration_time(PRESETS['h100-collect-all'], 10000, 0.1, 4)
    verify = cost_iteration_time(PRESETS['h100'], 10000, 0.1, 0)
    assert collecting == pytest.approx(plain + 0.53 * verify)
