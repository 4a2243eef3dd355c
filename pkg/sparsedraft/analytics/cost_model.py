# coding=utf-8
"""
Memory-bandwidth cost model of one draft-and-verify iteration.

Decoding is bandwidth bound: each forward streams the weights once plus the KV entries it
attends. Drafting reads a `ratio` share of the dense-layer KV; verification reads all of it.
"""
from __future__ import absolute_import, division

import logging
from collections import namedtuple

from sparsedraft.utils import InvalidDocException

_LOG = logging.getLogger(__name__)

_FIELDS = ('mem_bandwidth', 'weight_bytes', 'kv_bytes_per_token', 'overhead_fraction_collect',
           'overhead_fraction_select', 'dense_fraction', 'banded_window')


class HardwareModel(namedtuple('HardwareModel', _FIELDS)):
    """
    :param float mem_bandwidth: bytes per second
    :param float weight_bytes: parameter bytes streamed per forward
    :param float kv_bytes_per_token: keys and values of one token across all layers
    :param float overhead_fraction_collect: extra verification time spent collecting logits
    :param float overhead_fraction_select: extra drafting time spent choosing KV entries
    :param float dense_fraction: share of KV bytes that live in dense layers
    :param int banded_window: tokens a banded layer reads
    """
    __slots__ = ()

    def __new__(cls, mem_bandwidth, weight_bytes, kv_bytes_per_token, overhead_fraction_collect=0.0,
                overhead_fraction_select=0.0, dense_fraction=1.0, banded_window=0):
        self = super(HardwareModel, cls).__new__(cls, float(mem_bandwidth), float(weight_bytes),
                                                 float(kv_bytes_per_token), float(overhead_fraction_collect),
                                                 float(overhead_fraction_select), float(dense_fraction),
                                                 int(banded_window))
        if not self.mem_bandwidth > 0:
            raise InvalidDocException('mem_bandwidth must be positive')
        if min(self.weight_bytes, self.kv_bytes_per_token, self.overhead_fraction_collect,
               self.overhead_fraction_select, self.banded_window) < 0:
            raise InvalidDocException('Byte counts, overheads and banded_window must be non-negative')
        if not 0.0 <= self.dense_fraction <= 1.0:
            raise InvalidDocException('dense_fraction must be in [0, 1], got %r' % dense_fraction)
        return self

    @classmethod
    def from_doc(cls, doc):
        return cls(**doc)

    def to_doc(self):
        return dict(self._asdict())


H100 = HardwareModel(mem_bandwidth=3.892e12, weight_bytes=16.4e9, kv_bytes_per_token=147456)

PRESETS = {
    'h100': H100,
    'h100-collect-all': H100._replace(overhead_fraction_collect=0.53),
    'h100-collect2': H100._replace(overhead_fraction_collect=0.05),
    'h100-quest': H100._replace(overhead_fraction_select=0.217),
    'h100-long': H100._replace(overhead_fraction_collect=0.37),
}

DESK = 'desk'
DESK_BANDWIDTH = 1e11


def desk_preset(weights):
    """
    A laptop-class model of the loaded toy transformer.

    :type weights: sparsedraft.model.Weights
    :rtype: HardwareModel
    """
    config = weights.config
    windows = [kind.window for kind in config.layer_kinds if not kind.is_dense]
    return HardwareModel(mem_bandwidth=DESK_BANDWIDTH,
                         weight_bytes=weights.n_bytes,
                         kv_bytes_per_token=config.kv_bytes_per_token,
                         dense_fraction=len(config.dense_layers) / config.n_layers,
                         banded_window=max(windows) + 1 if windows else 0)


def hardware_preset(name, weights=None, **overrides):
    """
    Look up a preset by name, replacing any given fields.

    >>> hardware_preset('h100-collect2').overhead_fraction_collect
    0.05
    """
    if name == DESK:
        if weights is None:
            raise InvalidDocException('The desk preset is derived from a model; none given')
        hw = desk_preset(weights)
    elif name in PRESETS:
        hw = PRESETS[name]
    else:
        raise InvalidDocException('Unknown hardware preset %r, expected one of %r'
                                  % (name, sorted(PRESETS) + [DESK]))
    return HardwareModel(**dict(hw._asdict(), **overrides)) if overrides else hw


def _kv_tokens(hw, ctx, ratio):
    return hw.dense_fraction * ratio * ctx + (1.0 - hw.dense_fraction) * min(hw.banded_window, ctx)


def verify_kv_time(hw, ctx):
    """
    Seconds to stream the KV of `ctx` tokens once.

    >>> round(verify_kv_time(HardwareModel(3.892e12, 0, 72e9), 1) * 1000, 2)
    18.5
    """
    return _kv_tokens(hw, ctx, 1.0) * hw.kv_bytes_per_token / hw.mem_bandwidth


def draft_step_time(hw, ctx, ratio):
    return (hw.weight_bytes + _kv_tokens(hw, ctx, ratio) * hw.kv_bytes_per_token) / hw.mem_bandwidth


def verify_step_time(hw, ctx):
    return (hw.weight_bytes + _kv_tokens(hw, ctx, 1.0) * hw.kv_bytes_per_token) * \
        (1.0 + hw.overhead_fraction_collect) / hw.mem_bandwidth


def cost_iteration_time(hw, ctx, ratio, gamma):
    """
    Seconds for gamma drafting steps and one verification at context length `ctx`.

    :type hw: HardwareModel
    :rtype: float
    """
    if ctx < 0 or gamma < 0 or not 0.0 <= ratio <= 1.0:
        raise ValueError('Need ctx >= 0, gamma >= 0 and ratio in [0, 1]; got %r, %r, %r' % (ctx, gamma, ratio))
    return gamma * draft_step_time(hw, ctx, ratio) * (1.0 + hw.overhead_fraction_select) + verify_step_time(hw, ctx)


def modeled_throughput(hw, ctx, ratio, gamma, mean_emitted):
    """
    Tokens per second when each iteration emits `mean_emitted` tokens on average.

    >>> hw = HardwareModel(1.0, 1.0, 0.0)
    >>> modeled_throughput(hw, 10, 0.5, 0, 1.0)
    1.0
    >>> modeled_throughput(hw, 10, 0.5, 1, 2.0)
    1.0
    """
    if not 1.0 <= mean_emitted <= gamma + 1:
        raise ValueError('mean_emitted %r outside [1, %d]' % (mean_emitted, gamma + 1))
    return mean_emitted / cost_iteration_time(hw, ctx, ratio, gamma)


def vanilla_throughput(hw, ctx):
    """One full-attention forward per token, without collection overhead."""
    return 1.0 / cost_iteration_time(hw._replace(overhead_fraction_collect=0.0), ctx, 1.0, 0)
