# coding=utf-8
"""
The toy decoder-only transformer: seeded initialisation, rotary encoding and the forward pass.

Tokens of one call are processed together, but every per-token product is a stacked one-row
product and attention always spans ``max_context`` masked key columns, so results are bitwise
independent of batching. Drafting, verification and from-scratch recomputation therefore agree
exactly wherever their attended key sets agree.
"""
from __future__ import absolute_import, division

import logging
import threading

import cachetools
import numpy

from sparsedraft.attention import FULL, LogitMatrix, attend_grouped, attended_mask
from sparsedraft.model import Weights, tensor_layout
from sparsedraft.utils import ContextOverflowError
from sparsedraft.utils import rng

_LOG = logging.getLogger(__name__)

#: Rows per attention block; bounds the rows x heads x max_context logit arrays.
_ROW_BLOCK = 128

_ROTATIONS = cachetools.LRUCache(maxsize=16384)
_ROTATIONS_LOCK = threading.RLock()


def init_weights(config, seed):
    """
    Draw every tensor from its own Philox stream ``(seed, WEIGHTS, tensor_index)``.

    Projections and the embedding are standard normal scaled by 1/sqrt(fan_in); norm gains are ones.

    :type config: sparsedraft.model.ModelConfig
    :param int seed: non-negative
    :rtype: Weights
    """
    tensors = []
    for index, (name, shape) in enumerate(tensor_layout(config)):
        if name.endswith('norm'):
            tensors.append(numpy.ones(shape, dtype=numpy.float32))
            continue
        fan_in = shape[1] if name == 'token_embedding' else shape[0]
        draws = rng.stream(seed, rng.WEIGHTS, index).standard_normal(shape, dtype=numpy.float32)
        tensors.append(draws * numpy.float32(1.0 / numpy.sqrt(fan_in)))
    _LOG.debug('Initialised %d tensors with seed %d', len(tensors), seed)
    return Weights.from_tensors(config, tensors)


@cachetools.cached(cache=_ROTATIONS, lock=_ROTATIONS_LOCK)
def _rotation(position, head_dim, theta):
    inverse_freq = theta ** (-numpy.arange(0, head_dim, 2, dtype=numpy.float64) / head_dim)
    angles = position * inverse_freq
    cos, sin = numpy.cos(angles), numpy.sin(angles)
    cos.flags.writeable = False
    sin.flags.writeable = False
    return cos, sin


def _rotation_tables(positions, head_dim, theta, ndim):
    positions = numpy.asarray(positions, dtype=numpy.int64)
    if not positions.ndim:
        return _rotation(int(positions), head_dim, theta)
    tables = [_rotation(int(p), head_dim, theta) for p in positions]
    shape = positions.shape + (1,) * (ndim - positions.ndim - 1) + (head_dim // 2,)
    return (numpy.stack([cos for cos, _ in tables]).reshape(shape),
            numpy.stack([sin for _, sin in tables]).reshape(shape))


def apply_rope(vec, position, theta):
    """
    Rotate consecutive pairs (2i, 2i+1) of the last axis by ``position * theta^(-2i/head_dim)``.

    `position` is one position, or one per entry of the leading axis of `vec`.

    >>> v = numpy.array([1.0, 2.0, 3.0, 4.0])
    >>> bool(numpy.array_equal(apply_rope(v, 0, 10000.0), v))
    True
    >>> bool(numpy.isclose(numpy.linalg.norm(apply_rope(v, 17, 10000.0)), numpy.linalg.norm(v)))
    True
    >>> both = apply_rope(numpy.stack([v, v]), [0, 17], 10000.0)
    >>> bool(numpy.array_equal(both[1], apply_rope(v, 17, 10000.0)))
    True
    """
    vec = numpy.asarray(vec)
    head_dim = vec.shape[-1]
    if head_dim % 2:
        raise ValueError('Rotary encoding needs an even head_dim, got %d' % head_dim)
    dtype = vec.dtype if vec.dtype in (numpy.float32, numpy.float64) else numpy.float64
    cos, sin = _rotation_tables(position, head_dim, float(theta), vec.ndim)
    wide = vec.astype(numpy.float64)
    even, odd = wide[..., 0::2], wide[..., 1::2]
    rotated = numpy.empty_like(wide)
    rotated[..., 0::2] = even * cos - odd * sin
    rotated[..., 1::2] = even * sin + odd * cos
    return rotated.astype(dtype)


def rms_norm(x, gain, eps):
    """
    >>> x = rms_norm(numpy.array([3.0, 4.0], dtype=numpy.float32), numpy.ones(2, dtype=numpy.float32), 0.0)
    >>> bool(numpy.allclose(x, [0.8485, 1.1314], atol=1e-4))
    True
    """
    mean_square = numpy.mean(numpy.square(x), axis=-1, keepdims=True)
    inverse = numpy.float32(1.0) / numpy.sqrt(mean_square + numpy.float32(eps))
    return x * inverse * gain


def _rowwise(x, matrix):
    """rows x n times n x m, as one vector-matrix product per row."""
    return numpy.matmul(x[:, numpy.newaxis, :], matrix)[:, 0, :]


def _gated_mlp(h, layer):
    gate = _rowwise(h, layer.w_gate)
    with numpy.errstate(over='ignore'):
        activated = gate / (numpy.float32(1.0) + numpy.exp(-gate))
    return _rowwise(activated * _rowwise(h, layer.w_up), layer.w_down)


def _check_inputs(config, tokens, positions, kv):
    if not tokens:
        raise ValueError('forward needs at least one token')
    if len(positions) != len(tokens):
        raise ValueError('%d tokens but %d positions' % (len(tokens), len(positions)))
    if positions != list(range(kv.length, kv.length + len(tokens))):
        raise ValueError('Positions must continue the cache contiguously from %d, got %r'
                         % (kv.length, positions[:4]))
    if positions[-1] >= config.max_context:
        raise ContextOverflowError('Position %d beyond max_context %d' % (positions[-1], config.max_context))
    bad = [t for t in tokens if not 0 <= t < config.vocab_size]
    if bad:
        raise ValueError('Token ids %r outside vocabulary of %d' % (bad[:4], config.vocab_size))


def forward(weights, tokens, positions, kv, attend=FULL, collect=None, meter=None):
    """
    Run the model over `tokens` at `positions`, appending their keys and values to `kv`.

    :type weights: Weights
    :param list[int] tokens: token ids
    :param list[int] positions: absolute positions, contiguous from ``kv.length``
    :type kv: sparsedraft.storage.kv_store.KvStore
    :type attend: sparsedraft.attention.AttendSpec
    :param sparsedraft.attention.CollectSpec collect: input rows whose prefix logits are captured
    :param sparsedraft.attention.TrafficMeter meter: accumulates bytes read, if given
    :return: (n_tokens x vocab_size float32 logits, dict of layer -> LogitMatrix or None)
    """
    config = weights.config
    tokens = [int(t) for t in tokens]
    positions = [int(p) for p in positions]
    _check_inputs(config, tokens, positions, kv)
    attend.check(config)

    n_tokens, start = len(tokens), kv.length
    n_q, n_kv, head_dim = config.n_q_heads, config.n_kv_heads, config.head_dim
    scale = 1.0 / numpy.sqrt(head_dim)

    if collect is not None:
        if len(set(collect.rows)) != len(collect.rows) or any(not 0 <= r < n_tokens for r in collect.rows):
            raise ValueError('Collected rows %r must be distinct rows of %d inputs' % (collect.rows, n_tokens))
        if not 0 <= collect.prefix_len <= start + n_tokens:
            raise ValueError('Collected prefix %d reaches past the processed tokens (%d)'
                             % (collect.prefix_len, start + n_tokens))
    collected = {} if collect is not None else None

    hidden = weights.token_embedding[tokens]
    new_keys = numpy.empty((config.n_layers, n_tokens, n_kv, head_dim), dtype=numpy.float32)
    new_values = numpy.empty_like(new_keys)
    width = config.max_context

    for layer, (lw, kind) in enumerate(zip(weights.layers, config.layer_kinds)):
        h = rms_norm(hidden, lw.attn_norm, config.norm_eps)
        queries = apply_rope(_rowwise(h, lw.wq).reshape(n_tokens, n_q, head_dim), positions, config.rope_theta)
        new_keys[layer] = apply_rope(_rowwise(h, lw.wk).reshape(n_tokens, n_kv, head_dim), positions,
                                     config.rope_theta)
        new_values[layer] = _rowwise(h, lw.wv).reshape(n_tokens, n_kv, head_dim)

        # unwritten columns stay zero and are masked out
        keys = numpy.zeros((width, n_kv, head_dim), dtype=numpy.float32)
        values = numpy.zeros_like(keys)
        keys[:start], values[:start] = kv.layer_keys(layer), kv.layer_values(layer)
        keys[start:start + n_tokens], values[start:start + n_tokens] = new_keys[layer], new_values[layer]

        if kind.is_dense and not attend.is_full:
            selections = [attend.selection_for(layer, kind, queries[i], kv, meter) for i in range(n_tokens)]
        else:
            selections = None
        mask = attended_mask(kind, positions, width, selections)

        output = numpy.empty_like(queries)
        if collect is not None:
            captured = numpy.full((n_q, len(collect.rows), collect.prefix_len), -numpy.inf)
        for block in range(0, n_tokens, _ROW_BLOCK):
            block_rows = slice(block, block + _ROW_BLOCK)
            output[block_rows], raw = attend_grouped(queries[block_rows], keys, values, scale, mask[block_rows])
            if collect is None:
                continue
            for slot, row in enumerate(collect.rows):
                if block <= row < block + _ROW_BLOCK:
                    seen = mask[row, :collect.prefix_len]
                    captured[:, slot, seen] = raw[row - block][:, :collect.prefix_len][:, seen]

        if meter is not None:
            meter.kv_bytes += int(mask.any(axis=0).sum()) * config.kv_bytes_per_layer_token
        if collect is not None:
            rows = list(collect.rows)
            collected[layer] = LogitMatrix(layer, captured, [r + 1 for r in rows], n_tokens, head_dim,
                                           queries=queries[rows])

        hidden = hidden + _rowwise(output.reshape(n_tokens, n_q * head_dim), lw.wo)
        hidden = hidden + _gated_mlp(rms_norm(hidden, lw.mlp_norm, config.norm_eps), lw)

    kv.extend(new_keys, new_values)

    logits = _rowwise(rms_norm(hidden, weights.final_norm, config.norm_eps), weights.token_embedding.T)
    if not numpy.isfinite(logits).all():
        raise FloatingPointError('Non-finite logits at positions %r' % positions)
    return logits, collected
