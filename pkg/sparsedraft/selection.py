# coding=utf-8
"""
KV selection strategies.

Verification-guided strategies score prefix columns from logits collected during verification and
keep the top-k columns per dense layer. Three baselines need no logits: a sink-plus-recent window,
a query-aware page bound re-evaluated for every drafted token, and the last accepted token's row.

All ranking goes through :func:`topk_indices`, which breaks ties toward the older position.
"""
from __future__ import absolute_import, division

import functools
import logging
from collections import namedtuple

import numpy

from sparsedraft.attention import softmax_stable
from sparsedraft.utils import clamp, round_half_up, SelectionError

_LOG = logging.getLogger(__name__)

WINDOW = 'window'
QUEST = 'quest'
LAST_ACCEPTED = 'last_accepted'
ALL_DRAFT = 'all_draft'
COLLECT2 = 'collect2'
COLLECT2_WEIGHTS = 'collect2_weights'
COLLECT_N = 'collect_n'
ACCEPTED_ONLY = 'accepted_only'

STRATEGIES = (WINDOW, QUEST, LAST_ACCEPTED, ALL_DRAFT, COLLECT2, COLLECT2_WEIGHTS, COLLECT_N, ACCEPTED_ONLY)
#: Strategies scored from verification logits.
VERIFICATION_GUIDED = (LAST_ACCEPTED, ALL_DRAFT, COLLECT2, COLLECT2_WEIGHTS, COLLECT_N, ACCEPTED_ONLY)
METRICS = ('logits', 'weights')

_CONFIG_FIELDS = ('strategy', 'sparse_ratio', 'k_min', 'window', 'sink', 'page_size', 'metric', 'collect_rows')


class SelectorConfig(namedtuple('SelectorConfig', _CONFIG_FIELDS)):
    """
    How a session chooses the prefix tokens drafting attends to.

    ``window=None`` sizes the window selector from the sparse ratio (k - sink).

    >>> SelectorConfig(strategy='collect2', sparse_ratio=0.5).collect_rows_for(gamma=4)
    [0, 4]
    >>> SelectorConfig(strategy='window', sparse_ratio=0.5).collect_rows_for(gamma=4) is None
    True
    """
    __slots__ = ()

    def __new__(cls, strategy=COLLECT2, sparse_ratio=0.25, k_min=16, window=None, sink=4, page_size=4,
                metric='logits', collect_rows=2):
        self = super(SelectorConfig, cls).__new__(cls, strategy, float(sparse_ratio), int(k_min),
                                                  None if window is None else int(window), int(sink),
                                                  int(page_size), metric, int(collect_rows))
        if strategy not in STRATEGIES:
            raise ValueError('Unknown selector %r, expected one of %r' % (strategy, STRATEGIES))
        if not 0.0 < self.sparse_ratio <= 1.0:
            raise ValueError('sparse_ratio must be in (0, 1], got %r' % sparse_ratio)
        if self.k_min < 1 or self.sink < 0 or self.page_size < 1 or self.collect_rows < 2:
            raise ValueError('k_min and page_size must be positive, sink non-negative, collect_rows at least 2')
        if self.window is not None and (self.window < 0 or self.sink + self.window < 1):
            raise ValueError('sink + window must be at least 1')
        if metric not in METRICS:
            raise ValueError('Unknown metric %r, expected one of %r' % (metric, METRICS))
        return self

    @property
    def needs_logits(self):
        return self.strategy in VERIFICATION_GUIDED

    @property
    def scores_weights(self):
        return self.strategy == COLLECT2_WEIGHTS or self.metric == 'weights'

    def collect_rows_for(self, gamma):
        """
        0-based verification rows whose logits must be collected, or None.
        """
        if not self.needs_logits:
            return None
        if self.strategy in (COLLECT2, COLLECT2_WEIGHTS):
            return sorted({0, gamma})
        if self.strategy == COLLECT_N:
            return sampled_query_rows(gamma, self.collect_rows)
        return list(range(gamma + 1))

    @classmethod
    def from_doc(cls, doc):
        return cls(**doc)

    def to_doc(self):
        return dict(self._asdict())


def sampled_query_rows(gamma, n):
    """
    `n` evenly spaced rows of ``0..gamma`` that always include the last (bonus) row.

    >>> sampled_query_rows(7, 2)
    [0, 7]
    >>> sampled_query_rows(7, 3)
    [1, 4, 7]
    >>> sampled_query_rows(2, 5)
    [0, 1, 2]
    >>> sampled_query_rows(0, 2)
    [0]
    """
    n = min(n, gamma + 1)
    if n == 1:
        return [gamma]
    interval = gamma // (n - 1)
    start = gamma - (n - 1) * interval
    return [start + i * interval for i in range(n)]


def selection_size(prefix_len, cfg):
    """
    k = clamp(round(sparse_ratio x p), k_min, p), rounding halves up.

    >>> selection_size(100, SelectorConfig(sparse_ratio=0.25, k_min=16))
    25
    >>> selection_size(40, SelectorConfig(sparse_ratio=0.25, k_min=16))
    16
    >>> selection_size(10, SelectorConfig(sparse_ratio=0.25, k_min=16))
    10
    """
    return clamp(round_half_up(cfg.sparse_ratio * prefix_len), min(cfg.k_min, prefix_len), prefix_len)


class SelectionSet(object):
    """
    Sorted prefix positions one dense layer keeps for sparse attention.

    Positions at or beyond `prefix_len` are always attended and are not listed.

    :param int layer: layer index
    :param indices: strictly increasing positions below `prefix_len`
    :param str source: strategy tag
    :param int prefix_len: number of prefix positions the set was chosen from
    """

    def __init__(self, layer, indices, source, prefix_len):
        indices = numpy.array(indices, dtype=numpy.int64).reshape(-1)
        if indices.size and (indices[0] < 0 or indices[-1] >= prefix_len or numpy.any(numpy.diff(indices) <= 0)):
            raise SelectionError('Selection must be strictly increasing positions below %d' % prefix_len)
        indices.flags.writeable = False
        self.layer = int(layer)
        self.indices = indices
        self.source = source
        self.prefix_len = int(prefix_len)

    @property
    def k(self):
        return len(self.indices)

    @classmethod
    def everything(cls, layer, prefix_len, source='full'):
        return cls(layer, numpy.arange(prefix_len), source, prefix_len)

    def __eq__(self, other):
        return (isinstance(other, SelectionSet) and self.layer == other.layer and
                self.prefix_len == other.prefix_len and numpy.array_equal(self.indices, other.indices))

    def __ne__(self, other):
        return not self == other

    __hash__ = None

    def __repr__(self):
        return 'SelectionSet<layer=%d, k=%d of %d, %s>' % (self.layer, self.k, self.prefix_len, self.source)


def _row_block(L, rows):
    rows = list(rows)
    if not rows:
        raise ValueError('Scoring needs at least one row')
    return L.logits[:, [L.row_index(t) for t in rows], :]


def score_columns(L, rows):
    """
    Mean over heads of the mean over `rows` of each column's logit. Masked entries are skipped;
    fully masked columns score -inf.

    :type L: sparsedraft.attention.LogitMatrix
    :param rows: 1-based row labels
    :rtype: numpy.ndarray
    """
    block = _row_block(L, rows)
    finite = numpy.isfinite(block)
    if finite.all():
        return block.mean(axis=1).mean(axis=0)
    counts = finite.sum(axis=(0, 1))
    totals = numpy.where(finite, block, 0.0).sum(axis=(0, 1))
    scores = numpy.full(block.shape[2], -numpy.inf)
    present = counts > 0
    scores[present] = totals[present] / counts[present]
    return scores


def score_columns_weights(L, rows):
    """
    As :func:`score_columns`, but each row is first turned into attention weights
    (softmax with the 1/sqrt(head_dim) scale).
    """
    block = _row_block(L, rows)
    if block.shape[2] == 0:
        return numpy.zeros(0)
    weights = softmax_stable(block / numpy.sqrt(L.head_dim))
    scores = weights.mean(axis=1).mean(axis=0)
    scores[~numpy.isfinite(block).any(axis=(0, 1))] = -numpy.inf
    return scores


def topk_indices(scores, k):
    """
    Positions of the `k` largest scores, ties to the lower index, sorted ascending.

    >>> topk_indices([5, 1, 5, 0], 2).tolist()
    [0, 2]
    >>> topk_indices([1.0, 2.0, 3.0], 3).tolist()
    [0, 1, 2]
    """
    scores = numpy.asarray(scores, dtype=numpy.float64)
    if not 0 <= k <= len(scores):
        raise ValueError('Cannot take the top %d of %d scores' % (k, len(scores)))
    order = numpy.lexsort((numpy.arange(len(scores)), -scores))
    return numpy.sort(order[:k])


def _select(scores, prefix_len, cfg, layer, source):
    k = min(selection_size(prefix_len, cfg), int(numpy.isfinite(scores).sum()))
    return SelectionSet(layer, topk_indices(scores, k), source, prefix_len)


def _score(L, rows, cfg):
    return score_columns_weights(L, rows) if cfg.scores_weights else score_columns(L, rows)


def _require_all_rows(L):
    if set(L.row_labels) != set(range(1, L.n_queries + 1)):
        raise SelectionError('Layer %d needs all %d rows collected, have %r' % (L.layer, L.n_queries, L.row_labels))


def select_all_draft(L, cfg):
    """Top-k of the column scores averaged over every verification row."""
    _require_all_rows(L)
    return _select(_score(L, L.row_labels, cfg), L.cols, cfg, L.layer, ALL_DRAFT)


def select_collect2(L, cfg):
    """Top-k over the first and last (bonus) verification rows."""
    rows = sorted({1, L.n_queries})
    return _select(_score(L, rows, cfg), L.cols, cfg, L.layer, COLLECT2_WEIGHTS if cfg.scores_weights else COLLECT2)


def select_collect_n(L, cfg):
    """Top-k over ``cfg.collect_rows`` evenly spaced verification rows."""
    rows = [r + 1 for r in sampled_query_rows(L.gamma, cfg.collect_rows)]
    return _select(_score(L, rows, cfg), L.cols, cfg, L.layer, COLLECT_N)


def select_last_accepted(L, accepted_count, cfg):
    """Top-k of the row of the last accepted token (row ``accepted_count + 1``)."""
    if not 0 <= accepted_count <= L.gamma:
        raise SelectionError('accepted_count %d outside 0..%d' % (accepted_count, L.gamma))
    return _select(_score(L, [accepted_count + 1], cfg), L.cols, cfg, L.layer, LAST_ACCEPTED)


def select_accepted_only(L, accepted_count, cfg):
    """Top-k over the rows of verified tokens only, ignoring rejected and discarded drafts."""
    if not 0 <= accepted_count <= L.gamma:
        raise SelectionError('accepted_count %d outside 0..%d' % (accepted_count, L.gamma))
    return _select(_score(L, range(1, accepted_count + 2), cfg), L.cols, cfg, L.layer, ACCEPTED_ONLY)


def select_from_logits(L, cfg, accepted_count=0):
    """
    Dispatch a verification-guided strategy for one layer.

    :type L: sparsedraft.attention.LogitMatrix
    :type cfg: SelectorConfig
    :rtype: SelectionSet
    """
    strategy = cfg.strategy
    if strategy == ALL_DRAFT:
        return select_all_draft(L, cfg)
    if strategy in (COLLECT2, COLLECT2_WEIGHTS):
        return select_collect2(L, cfg)
    if strategy == COLLECT_N:
        return select_collect_n(L, cfg)
    if strategy == LAST_ACCEPTED:
        return select_last_accepted(L, accepted_count, cfg)
    if strategy == ACCEPTED_ONLY:
        return select_accepted_only(L, accepted_count, cfg)
    raise SelectionError('Strategy %r does not select from logits' % strategy)


def select_window(prefix_len, cfg, layer=0):
    """
    The first ``sink`` positions plus the last ``window`` positions of the prefix.

    >>> select_window(5, SelectorConfig(strategy='window', sink=1, window=2)).indices.tolist()
    [0, 3, 4]
    >>> select_window(1, SelectorConfig(strategy='window', sink=1, window=2)).indices.tolist()
    [0]
    """
    sink = min(cfg.sink, prefix_len)
    window = cfg.window
    if window is None:
        window = max(selection_size(prefix_len, cfg) - sink, 0)
    recent = numpy.arange(max(prefix_len - window, 0), prefix_len)
    indices = numpy.union1d(numpy.arange(sink), recent)
    return SelectionSet(layer, indices, WINDOW, prefix_len)


def page_bounds(queries, page_mins, page_maxs):
    """
    Upper bound of the head-summed logit of any key in each page:
    sum over heads and dims of max(q_d x min_d, q_d x max_d).

    :param numpy.ndarray queries: n_q_heads x head_dim
    :param numpy.ndarray page_mins: n_pages x n_kv_heads x head_dim
    :param numpy.ndarray page_maxs: n_pages x n_kv_heads x head_dim
    :return: n_pages scores
    """
    n_pages, n_kv, head_dim = page_mins.shape
    grouped = queries.astype(numpy.float64).reshape(1, n_kv, -1, head_dim)
    lows = grouped * page_mins.astype(numpy.float64)[:, :, numpy.newaxis, :]
    highs = grouped * page_maxs.astype(numpy.float64)[:, :, numpy.newaxis, :]
    return numpy.maximum(lows, highs).sum(axis=(1, 2, 3)).reshape(n_pages)


def select_quest(queries, page_mins, page_maxs, prefix_len, cfg, layer=0):
    """
    Rank pages by :func:`page_bounds` and keep whole pages until k positions are covered; the last
    page taken keeps only its oldest positions so exactly k are selected.
    """
    if page_mins is None or page_maxs is None or len(page_mins) != -(-prefix_len // cfg.page_size):
        raise SelectionError('Page summaries missing for a prefix of %d' % prefix_len)
    k = selection_size(prefix_len, cfg)
    bounds = page_bounds(queries, page_mins, page_maxs)
    picked = []
    for page in numpy.lexsort((numpy.arange(len(bounds)), -bounds)).tolist():
        if len(picked) >= k:
            break
        start = page * cfg.page_size
        stop = min(start + cfg.page_size, prefix_len)
        picked.extend(range(start, min(stop, start + k - len(picked))))
    return SelectionSet(layer, sorted(picked), QUEST, prefix_len)


def _quest_for_query(cfg, prefix_len, layer, queries, kv, meter):
    page_mins, page_maxs = kv.page_summaries(layer, prefix_len)
    if meter is not None:
        meter.meta_bytes += page_mins.nbytes + page_maxs.nbytes
    return select_quest(queries, page_mins, page_maxs, prefix_len, cfg, layer)


def quest_selector(cfg, prefix_len):
    """
    A per-query selector for :meth:`sparsedraft.attention.AttendSpec.query_aware`.
    """
    return functools.partial(_quest_for_query, cfg, prefix_len)


def overlap_ratio(a, b):
    """
    |A n B| / k for two selections of equal size k.

    >>> overlap_ratio([1, 2, 3, 4], [3, 4, 5, 6])
    0.5
    """
    a, b = numpy.asarray(a), numpy.asarray(b)
    if len(a) != len(b) or len(a) == 0:
        raise ValueError('Overlap needs two non-empty sets of equal size, got %d and %d' % (len(a), len(b)))
    return len(numpy.intersect1d(a, b)) / len(a)


def set_overlap(a, b):
    """
    |A n B| / max(|A|, |B|); 1.0 for two empty sets.

    >>> set_overlap([1, 2, 3, 4], [3, 4])
    0.5
    """
    a, b = numpy.asarray(a), numpy.asarray(b)
    if len(a) == 0 and len(b) == 0:
        return 1.0
    return len(numpy.intersect1d(a, b)) / max(len(a), len(b))
