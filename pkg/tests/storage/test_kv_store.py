# coding=utf-8
"""
KV cache semantics: append, rollback, gather and page summaries
"""
from __future__ import absolute_import

import numpy
import pytest
from hypothesis import given
from hypothesis.strategies import integers

from sparsedraft.model import ModelConfig
from sparsedraft.storage import KvStore
from sparsedraft.utils import ContextOverflowError


def _entry(config, value):
    shape = (config.n_layers, config.n_kv_heads, config.head_dim)
    return numpy.full(shape, value, dtype=numpy.float32), numpy.full(shape, -value, dtype=numpy.float32)


def _random_entries(config, n, seed=0):
    rng = numpy.random.default_rng(seed)
    shape = (config.n_layers, n, config.n_kv_heads, config.head_dim)
    return rng.standard_normal(shape).astype(numpy.float32), rng.standard_normal(shape).astype(numpy.float32)


def test_append_and_read(tiny_config):
    kv = KvStore(tiny_config)
    for value in range(3):
        assert kv.append(*_entry(tiny_config, value)) == value + 1
    keys = kv.layer_keys(1)
    assert keys.shape == (3, tiny_config.n_kv_heads, tiny_config.head_dim)
    assert keys[:, 0, 0].tolist() == [0.0, 1.0, 2.0]
    assert kv.layer_values(0)[2, 1, 3] == -2.0
    with pytest.raises(ValueError):
        keys[0, 0, 0] = 5.0


def test_append_requires_every_layer_and_head(tiny_config):
    kv = KvStore(tiny_config)
    keys, values = _entry(tiny_config, 1)
    with pytest.raises(ValueError):
        kv.append(keys[:1], values[:1])
    assert kv.length == 0


def test_truncate_rolls_back(tiny_config):
    kv = KvStore(tiny_config)
    for value in range(5):
        kv.append(*_entry(tiny_config, value))
    kv.commit()
    kv.truncate(2)
    assert kv.length == 2
    assert kv.committed_len == 2
    kv.append(*_entry(tiny_config, 9))
    assert kv.layer_keys(0)[:, 0, 0].tolist() == [0.0, 1.0, 9.0]

    with pytest.raises(ValueError):
        kv.truncate(4)
    with pytest.raises(ValueError):
        kv.truncate(-1)


def test_commit_survives_provisional_entries(tiny_config):
    kv = KvStore(tiny_config)
    kv.extend(*_random_entries(tiny_config, 4))
    kv.commit()
    kv.extend(*_random_entries(tiny_config, 3, seed=1))
    assert (kv.length, kv.committed_len) == (7, 4)
    kv.truncate(5)
    assert (kv.length, kv.committed_len) == (5, 4)


def test_capacity(tiny_config):
    kv = KvStore(tiny_config)
    kv.extend(*_random_entries(tiny_config, tiny_config.max_context))
    with pytest.raises(ContextOverflowError):
        kv.append(*_entry(tiny_config, 1))
    assert kv.length == tiny_config.max_context


def test_gather(tiny_config):
    kv = KvStore(tiny_config)
    keys, values = _random_entries(tiny_config, 6)
    kv.extend(keys, values)
    got_keys, got_values = kv.gather(1, 1, [0, 3, 5])
    assert numpy.array_equal(got_keys, keys[1, [0, 3, 5], 1])
    assert numpy.array_equal(got_values, values[1, [0, 3, 5], 1])
    assert kv.gather(0, 0, [])[0].shape == (0, tiny_config.head_dim)

    with pytest.raises(IndexError):
        kv.gather(0, 0, [6])
    with pytest.raises(ValueError):
        kv.gather(0, 0, [3, 1])


@given(integers(min_value=1, max_value=40), integers(min_value=0, max_value=2 ** 16))
def test_gather_copies_arbitrary_positions(length, seed):
    config = ModelConfig(n_layers=2, d_model=8, n_q_heads=2, n_kv_heads=2, head_dim=4, vocab_size=8,
                         max_context=48)
    kv = KvStore(config)
    keys, values = _random_entries(config, length, seed)
    kv.extend(keys, values)

    rng = numpy.random.default_rng(seed)
    layer, kv_head = int(rng.integers(config.n_layers)), int(rng.integers(config.n_kv_heads))
    picked = rng.random(length) < 0.5
    indices = numpy.flatnonzero(picked).tolist()
    rest = numpy.flatnonzero(~picked).tolist()

    got_keys, got_values = kv.gather(layer, kv_head, indices)
    assert got_keys.shape == (len(indices), config.head_dim)
    for row, position in enumerate(indices):
        assert got_keys[row].tolist() == keys[layer, position, kv_head].tolist()
        assert got_values[row].tolist() == values[layer, position, kv_head].tolist()

    # a selection and its complement together hold every entry exactly once
    rest_keys, _ = kv.gather(layer, kv_head, rest)
    order = numpy.argsort(indices + rest, kind='stable')
    union = numpy.concatenate([got_keys, rest_keys])[order]
    assert numpy.array_equal(union, kv.layer_keys(layer)[:, kv_head])

    got_keys[...] = 0
    assert numpy.array_equal(kv.layer_keys(layer)[:, kv_head], keys[layer, :, kv_head])


def test_byte_accounting(tiny_config):
    kv = KvStore(tiny_config)
    kv.extend(*_random_entries(tiny_config, 5))
    assert kv.kv_bytes(5) == 5 * tiny_config.kv_bytes_per_token
    assert kv.stored_bytes() == kv.kv_bytes(5)


@pytest.mark.parametrize('prefix_len', [1, 4, 9, 12])
def test_page_summaries_bound_every_key(tiny_config, prefix_len):
    kv = KvStore(tiny_config, page_size=4)
    kv.extend(*_random_entries(tiny_config, 12))
    for layer in range(tiny_config.n_layers):
        mins, maxs = kv.page_summaries(layer, prefix_len)
        assert len(mins) == -(-prefix_len // 4)
        keys = kv.layer_keys(layer)
        for page in range(len(mins)):
            block = keys[page * 4:min(page * 4 + 4, prefix_len)]
            assert numpy.array_equal(mins[page], block.min(axis=0))
            assert numpy.array_equal(maxs[page], block.max(axis=0))


def test_page_summaries_follow_rollback(tiny_config):
    kv = KvStore(tiny_config, page_size=4)
    kv.extend(*_random_entries(tiny_config, 7))
    kv.truncate(5)
    replacement = _random_entries(tiny_config, 3, seed=2)
    kv.extend(*replacement)

    fresh = KvStore(tiny_config, page_size=4)
    keys, values = _random_entries(tiny_config, 7)
    fresh.extend(keys[:, :5], values[:, :5])
    fresh.extend(*replacement)

    for layer in range(tiny_config.n_layers):
        for got, expected in zip(kv.page_summaries(layer, 8), fresh.page_summaries(layer, 8)):
            assert numpy.array_equal(got, expected)

    with pytest.raises(ValueError):
        KvStore(tiny_config).page_summaries(0, 1)
    with pytest.raises(ValueError):
        kv.page_summaries(0, 9)
