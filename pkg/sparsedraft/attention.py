# coding=utf-8
"""
Scaled dot-product attention primitives, logit capture, and the specs that tell a forward pass
how to attend and which logits to collect.

Logits are accumulated in float64 from float32 queries and keys; softmax subtracts the row maximum.
"""
from __future__ import absolute_import, division

import logging
from collections import namedtuple

import numpy

from sparsedraft.utils import SelectionError

_LOG = logging.getLogger(__name__)


def softmax_stable(logits):
    """
    Softmax over the last axis, in float64.

    >>> softmax_stable([0.0, 0.0]).tolist()
    [0.5, 0.5]
    >>> softmax_stable([3.0]).tolist()
    [1.0]
    >>> softmax_stable([float('-inf'), 0.0]).tolist()
    [0.0, 1.0]
    """
    logits = numpy.asarray(logits, dtype=numpy.float64)
    if logits.shape[-1] == 0:
        raise ValueError('softmax over an empty row')
    top = logits.max(axis=-1, keepdims=True)
    if not numpy.all(numpy.isfinite(top)):
        raise ValueError('softmax needs at least one finite entry per row')
    exps = numpy.exp(logits - top)
    return exps / exps.sum(axis=-1, keepdims=True)


def _result_dtype(*arrays):
    return numpy.result_type(numpy.float32, *(a.dtype for a in arrays))


def attend(q, keys, values, scale):
    """
    Single-head attention of one query over `m` keys.

    :param numpy.ndarray q: head_dim
    :param numpy.ndarray keys: m x head_dim
    :param numpy.ndarray values: m x head_dim
    :param float scale: usually 1/sqrt(head_dim)
    :rtype: numpy.ndarray
    """
    keys, values = numpy.asarray(keys), numpy.asarray(values)
    output, _ = attend_collect(q, keys[:0], values[:0], keys, values, scale)
    return output


def attend_collect(q, prefix_keys, prefix_values, window_keys, window_values, scale):
    """
    Attention over prefix and window keys together, also returning the raw (unscaled) logits of
    the prefix keys.

    :return: (output over the concatenation, q . prefix_keys^T in float64)
    """
    q = numpy.asarray(q)
    keys = numpy.concatenate([numpy.asarray(prefix_keys), numpy.asarray(window_keys)])
    values = numpy.concatenate([numpy.asarray(prefix_values), numpy.asarray(window_values)])
    if keys.shape[0] == 0:
        raise ValueError('attention over zero keys')
    raw = keys.astype(numpy.float64).dot(q.astype(numpy.float64))
    weights = softmax_stable(raw * scale)
    output = weights.dot(values.astype(numpy.float64))
    return output.astype(_result_dtype(q, values)), raw[:len(prefix_keys)]


def attend_grouped(queries, keys, values, scale, mask=None):
    """
    Grouped-query attention of several token positions over one shared key axis.

    Every (row, kv head) pair is its own stacked product, so a row's result does not depend on
    which other rows share the call.

    :param numpy.ndarray queries: rows x n_q_heads x head_dim, or n_q_heads x head_dim for one position
    :param numpy.ndarray keys: m x n_kv_heads x head_dim
    :param numpy.ndarray values: m x n_kv_heads x head_dim
    :param numpy.ndarray mask: rows x m booleans, True where a row may attend; everything when omitted
    :return: (rows x n_q_heads x head_dim output, rows x n_q_heads x m raw logits in float64)
    """
    queries = numpy.asarray(queries)
    single = queries.ndim == 2
    if single:
        queries = queries[numpy.newaxis]
        mask = None if mask is None else numpy.asarray(mask)[numpy.newaxis]
    rows, n_q, head_dim = queries.shape
    m, n_kv, _ = keys.shape
    if m == 0:
        raise ValueError('attention over zero keys')
    grouped = queries.astype(numpy.float64).reshape(rows, n_kv, n_q // n_kv, head_dim)
    raw = numpy.matmul(grouped, keys.astype(numpy.float64).transpose(1, 2, 0))
    scaled = raw * scale
    if mask is not None:
        scaled = numpy.where(mask[:, numpy.newaxis, numpy.newaxis, :], scaled, -numpy.inf)
    weights = softmax_stable(scaled)
    output = numpy.matmul(weights, values.astype(numpy.float64).transpose(1, 0, 2))
    output = output.reshape(rows, n_q, head_dim).astype(numpy.float32)
    raw = raw.reshape(rows, n_q, m)
    if single:
        return output[0], raw[0]
    return output, raw


def attended_mask(kind, positions, width, selections=None):
    """
    Which of `width` key positions each query attends to.

    Dense layers see every earlier position, banded layers the last ``window`` positions and
    themselves, and sparse attention the selected prefix plus everything from the selection's
    prefix length onwards.

    :param list[int] positions: absolute position of each query row
    :param list selections: one SelectionSet per row, for sparse attention
    :return: rows x width booleans

    >>> from sparsedraft.model import DENSE, banded
    >>> attended_mask(DENSE, [3], 6).astype(int).tolist()
    [[1, 1, 1, 1, 0, 0]]
    >>> attended_mask(banded(2), [4, 5], 6).astype(int).tolist()
    [[0, 0, 1, 1, 1, 0], [0, 0, 0, 1, 1, 1]]
    """
    positions = numpy.asarray(positions, dtype=numpy.int64)[:, numpy.newaxis]
    columns = numpy.arange(width, dtype=numpy.int64)
    mask = columns <= positions
    if selections is not None:
        for row, selection in enumerate(selections):
            mask[row, :selection.prefix_len] = False
            mask[row, selection.indices] = True
        return mask
    if not kind.is_dense:
        mask &= columns >= positions - kind.window
    return mask


class LogitMatrix(object):
    """
    Raw attention logits q.K^T of some verification queries over the committed prefix of one layer.

    :param int layer: layer index
    :param numpy.ndarray logits: n_q_heads x rows x cols, masked entries -inf
    :param tuple[int] row_labels: 1-based verification query index of each row
    :param int n_queries: number of verification queries the rows were drawn from (gamma + 1)
    :param int head_dim: key width, for the attention-weight scale
    :param int col_offset: absolute position of column 0
    :param numpy.ndarray queries: optional rows x n_q_heads x head_dim rotary queries, kept for auditing
    """

    def __init__(self, layer, logits, row_labels, n_queries, head_dim, col_offset=0, queries=None):
        self.layer = layer
        self.logits = numpy.asarray(logits, dtype=numpy.float64)
        self.row_labels = tuple(int(t) for t in row_labels)
        self.n_queries = int(n_queries)
        self.head_dim = int(head_dim)
        self.col_offset = int(col_offset)
        self.queries = queries
        if self.logits.ndim != 3 or self.logits.shape[1] != len(self.row_labels):
            raise ValueError('Logits of shape %s do not match %d row labels'
                             % (self.logits.shape, len(self.row_labels)))
        if any(not 1 <= t <= self.n_queries for t in self.row_labels):
            raise ValueError('Row labels %r outside 1..%d' % (self.row_labels, self.n_queries))

    @property
    def n_heads(self):
        return self.logits.shape[0]

    @property
    def rows(self):
        return self.logits.shape[1]

    @property
    def cols(self):
        return self.logits.shape[2]

    @property
    def gamma(self):
        return self.n_queries - 1

    def row_index(self, label):
        """
        :param int label: 1-based verification query index
        :return: position of that row in :attr:`logits`
        """
        try:
            return self.row_labels.index(label)
        except ValueError:
            raise SelectionError('Row %d was not collected for layer %d (have %r)'
                                 % (label, self.layer, self.row_labels))

    def scaled(self, factor):
        """A copy with every logit multiplied by `factor`."""
        return LogitMatrix(self.layer, self.logits * factor, self.row_labels, self.n_queries, self.head_dim,
                           self.col_offset, self.queries)

    def __repr__(self):
        return 'LogitMatrix<layer=%d, heads=%d, rows=%r, cols=%d>' % (self.layer, self.n_heads, self.row_labels,
                                                                      self.cols)


#: Which input rows of a forward call have their prefix logits captured, and how many prefix columns.
CollectSpec = namedtuple('CollectSpec', ('rows', 'prefix_len'))


class TrafficMeter(object):
    """
    Counts bytes a forward pass would stream: KV entries read and selection metadata (page summaries).
    """

    def __init__(self):
        self.kv_bytes = 0
        self.meta_bytes = 0

    def reset(self):
        self.kv_bytes = 0
        self.meta_bytes = 0

    def __repr__(self):
        return 'TrafficMeter<kv=%d, meta=%d>' % (self.kv_bytes, self.meta_bytes)


class AttendSpec(object):
    """
    How dense layers attend: fully, over fixed per-layer selection sets, or over sets chosen per
    query by a callable ``(layer, queries, kv, meter) -> SelectionSet``. Banded layers always
    attend over their window.
    """

    def __init__(self, selections=None, selector=None):
        if selections is not None and selector is not None:
            raise ValueError('Give fixed selections or a per-query selector, not both')
        self.selections = dict(selections) if selections is not None else None
        self.selector = selector

    @classmethod
    def full(cls):
        return cls()

    @classmethod
    def sparse(cls, selections):
        """
        :param dict[int, SelectionSet] selections: one set per dense layer
        """
        return cls(selections=selections)

    @classmethod
    def query_aware(cls, selector):
        return cls(selector=selector)

    @property
    def is_full(self):
        return self.selections is None and self.selector is None

    def check(self, config):
        """
        Reject sets for banded layers and require a set for every dense layer.

        :type config: sparsedraft.model.ModelConfig
        """
        if self.selections is None:
            return
        dense = set(config.dense_layers)
        banded_layers = sorted(set(self.selections) - dense)
        if banded_layers:
            raise SelectionError('Sparse attention applies to dense layers only; got sets for layers %r'
                                 % banded_layers)
        missing = sorted(dense - set(self.selections))
        if missing:
            raise SelectionError('No selection set for dense layers %r' % missing)

    def selection_for(self, layer, kind, queries, kv, meter=None):
        """
        The selection set a query attends with at `layer`, or None for full/banded attention.
        """
        if not kind.is_dense or self.is_full:
            return None
        if self.selector is not None:
            return self.selector(layer, queries, kv, meter)
        return self.selections[layer]


FULL = AttendSpec.full()
