# coding=utf-8
"""
Token-granular key/value cache.

Every (layer, kv_head) pair owns a contiguous row per absolute token position. All pairs share one
length, so appending or truncating always moves every layer together.
"""
from __future__ import absolute_import, division

import logging

import numpy

from sparsedraft.utils import ContextOverflowError

_LOG = logging.getLogger(__name__)


class KvStore(object):
    """
    Keys and values of processed tokens, preallocated up to the model's ``max_context``.

    :type config: sparsedraft.model.ModelConfig
    :param int page_size: when set, per-page elementwise key minima/maxima are maintained on append
    """

    def __init__(self, config, page_size=None):
        self.config = config
        shape = (config.n_layers, config.max_context, config.n_kv_heads, config.head_dim)
        self._keys = numpy.zeros(shape, dtype=numpy.float32)
        self._values = numpy.zeros(shape, dtype=numpy.float32)
        self.length = 0
        #: Positions below this are final; later ones may still be rolled back.
        self.committed_len = 0

        self.page_size = page_size
        if page_size is not None:
            if page_size < 1:
                raise ValueError('page_size must be positive, got %r' % page_size)
            n_pages = -(-config.max_context // page_size)
            pages_shape = (config.n_layers, n_pages, config.n_kv_heads, config.head_dim)
            self._page_min = numpy.zeros(pages_shape, dtype=numpy.float32)
            self._page_max = numpy.zeros(pages_shape, dtype=numpy.float32)

    @property
    def bytes_per_token(self):
        return self.config.kv_bytes_per_token

    def kv_bytes(self, context_len):
        """
        Bytes held by `context_len` tokens of cache.

        :rtype: int
        """
        return int(context_len) * self.bytes_per_token

    def stored_bytes(self):
        """Bytes actually occupied by the retrievable entries."""
        return sum(self.layer_keys(layer).nbytes + self.layer_values(layer).nbytes
                   for layer in range(self.config.n_layers))

    def append(self, keys, values):
        """
        Append one token.

        :param numpy.ndarray keys: n_layers x n_kv_heads x head_dim
        :param numpy.ndarray values: n_layers x n_kv_heads x head_dim
        :return: the new length
        """
        keys = numpy.asarray(keys, dtype=numpy.float32)
        values = numpy.asarray(values, dtype=numpy.float32)
        expected = (self.config.n_layers, self.config.n_kv_heads, self.config.head_dim)
        if keys.shape != expected or values.shape != expected:
            raise ValueError('Entries for every (layer, kv_head) required: expected %s, got %s and %s'
                             % (expected, keys.shape, values.shape))
        return self.extend(keys[:, numpy.newaxis], values[:, numpy.newaxis])

    def extend(self, keys, values):
        """
        Append several tokens at once.

        :param numpy.ndarray keys: n_layers x n_tokens x n_kv_heads x head_dim
        :param numpy.ndarray values: same shape as `keys`
        :return: the new length
        """
        n_tokens = keys.shape[1]
        start, stop = self.length, self.length + n_tokens
        if stop > self.config.max_context:
            raise ContextOverflowError('KV store holds at most %d tokens, cannot grow to %d'
                                       % (self.config.max_context, stop))
        self._keys[:, start:stop] = keys
        self._values[:, start:stop] = values
        self.length = stop
        if self.page_size is not None:
            for position in range(start, stop):
                self._summarise(position)
        return self.length

    def _summarise(self, position):
        page, offset = divmod(position, self.page_size)
        key = self._keys[:, position]
        if offset == 0:
            self._page_min[:, page] = key
            self._page_max[:, page] = key
        else:
            numpy.minimum(self._page_min[:, page], key, out=self._page_min[:, page])
            numpy.maximum(self._page_max[:, page], key, out=self._page_max[:, page])

    def truncate(self, to_len):
        """
        Roll back to `to_len` tokens; later appends overwrite the dropped positions.
        """
        if not 0 <= to_len <= self.length:
            raise ValueError('Cannot truncate a store of length %d to %d' % (self.length, to_len))
        self.length = to_len
        self.committed_len = min(self.committed_len, to_len)
        if self.page_size is not None and to_len % self.page_size:
            page_start = to_len - to_len % self.page_size
            for position in range(page_start, to_len):
                self._summarise(position)

    def commit(self):
        """Mark everything currently stored as final."""
        self.committed_len = self.length

    def layer_keys(self, layer):
        """
        Read-only view of one layer's keys: length x n_kv_heads x head_dim.
        """
        view = self._keys[layer, :self.length]
        view.flags.writeable = False
        return view

    def layer_values(self, layer):
        view = self._values[layer, :self.length]
        view.flags.writeable = False
        return view

    def gather(self, layer, kv_head, indices):
        """
        Copy out the keys and values at `indices`, in order.

        :param list[int] indices: strictly increasing positions below the current length
        :rtype: (numpy.ndarray, numpy.ndarray)
        """
        indices = numpy.asarray(indices, dtype=numpy.int64).reshape(-1)
        if indices.size:
            if indices[0] < 0 or indices[-1] >= self.length:
                raise IndexError('Indices must lie in [0, %d)' % self.length)
            if numpy.any(numpy.diff(indices) <= 0):
                raise ValueError('Indices must be strictly increasing')
        return self._keys[layer, indices, kv_head], self._values[layer, indices, kv_head]

    def page_summaries(self, layer, prefix_len):
        """
        Elementwise key minima and maxima of each page covering positions [0, prefix_len).

        The trailing partial page is summarised over its positions below `prefix_len` only.

        :return: (mins, maxs), each n_pages x n_kv_heads x head_dim
        """
        if self.page_size is None:
            raise ValueError('This store does not maintain page summaries')
        if prefix_len > self.length:
            raise ValueError('Prefix %d exceeds stored length %d' % (prefix_len, self.length))
        n_full, remainder = divmod(prefix_len, self.page_size)
        mins = self._page_min[layer, :n_full]
        maxs = self._page_max[layer, :n_full]
        if remainder:
            tail = self._keys[layer, n_full * self.page_size:prefix_len]
            mins = numpy.concatenate([mins, tail.min(axis=0)[numpy.newaxis]])
            maxs = numpy.concatenate([maxs, tail.max(axis=0)[numpy.newaxis]])
        return mins, maxs

    def __repr__(self):
        return 'KvStore<length=%d, committed=%d>' % (self.length, self.committed_len)
