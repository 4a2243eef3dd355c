# coding=utf-8
"""
Core classes used across modules: the toy transformer's architecture and its parameter tensors.
"""
from __future__ import absolute_import, division

import logging
from collections import namedtuple, OrderedDict
from pathlib import Path

import numpy

from sparsedraft.utils import schema_validated, InvalidDocException

_LOG = logging.getLogger(__name__)

SCHEMA_PATH = Path(__file__).parent / 'schema'

#: Hidden width of the gated MLP relative to d_model.
MLP_RATIO = 4

#: Bytes per stored float.
FLOAT_BYTES = 4


class LayerKind(namedtuple('LayerKind', ('name', 'window'))):
    """
    Attention kind of one layer: ``dense`` (full causal) or ``banded`` (causal, keys at most `window` back).

    >>> DENSE.is_dense
    True
    >>> banded(64)
    LayerKind(name='banded', window=64)
    >>> LayerKind.from_doc({'banded': 8}).to_doc()
    {'banded': 8}
    """
    __slots__ = ()

    @property
    def is_dense(self):
        return self.name == 'dense'

    @classmethod
    def from_doc(cls, doc):
        if doc == 'dense':
            return DENSE
        if isinstance(doc, dict) and set(doc) == {'banded'}:
            return banded(doc['banded'])
        raise InvalidDocException('Unknown layer kind: %r' % (doc,))

    def to_doc(self):
        return 'dense' if self.is_dense else {'banded': self.window}


DENSE = LayerKind('dense', None)


def banded(window):
    return LayerKind('banded', int(window))


_CONFIG_FIELDS = ('n_layers', 'd_model', 'n_q_heads', 'n_kv_heads', 'head_dim', 'vocab_size',
                  'max_context', 'rope_theta', 'layer_kinds', 'norm_eps')


@schema_validated(SCHEMA_PATH / 'model-config-schema.yaml')
class ModelConfig(namedtuple('ModelConfig', _CONFIG_FIELDS)):
    """
    Architecture hyperparameters of a grouped-query decoder-only transformer.

    Construction checks every invariant and raises :class:`InvalidDocException` on violation.

    >>> c = ModelConfig(n_layers=2, d_model=64, n_q_heads=4, n_kv_heads=2, head_dim=16, vocab_size=32,
    ...                 max_context=128)
    >>> c.group_size, c.dense_layers, c.kv_bytes_per_token
    (2, (0, 1), 512)
    """
    __slots__ = ()

    def __new__(cls, n_layers, d_model, n_q_heads, n_kv_heads, head_dim, vocab_size, max_context,
                rope_theta=10000.0, layer_kinds=None, norm_eps=1e-6):
        if layer_kinds is None:
            layer_kinds = (DENSE,) * n_layers
        layer_kinds = tuple(kind if isinstance(kind, LayerKind) else LayerKind.from_doc(kind)
                            for kind in layer_kinds)
        self = super(ModelConfig, cls).__new__(cls, int(n_layers), int(d_model), int(n_q_heads), int(n_kv_heads),
                                               int(head_dim), int(vocab_size), int(max_context),
                                               float(rope_theta), layer_kinds, float(norm_eps))
        self._check()
        return self

    def _check(self):
        problems = []
        if min(self.n_layers, self.d_model, self.n_q_heads, self.n_kv_heads, self.head_dim, self.max_context) < 1:
            problems.append('all counts must be positive')
        elif self.n_q_heads % self.n_kv_heads:
            problems.append('n_kv_heads (%d) must divide n_q_heads (%d)' % (self.n_kv_heads, self.n_q_heads))
        if self.n_q_heads * self.head_dim != self.d_model:
            problems.append('n_q_heads x head_dim must equal d_model (%d x %d != %d)'
                            % (self.n_q_heads, self.head_dim, self.d_model))
        if self.head_dim % 2:
            problems.append('head_dim must be even for rotary encoding, got %d' % self.head_dim)
        if self.vocab_size < 2:
            problems.append('vocab_size must be at least 2')
        if not self.rope_theta > 0 or not self.norm_eps > 0:
            problems.append('rope_theta and norm_eps must be positive')
        if len(self.layer_kinds) != self.n_layers:
            problems.append('expected %d layer kinds, got %d' % (self.n_layers, len(self.layer_kinds)))
        for kind in self.layer_kinds:
            if not kind.is_dense and not 1 <= kind.window <= self.max_context:
                problems.append('banded window %d outside [1, %d]' % (kind.window, self.max_context))
        if problems:
            raise InvalidDocException('Invalid model config: ' + '; '.join(problems))

    @property
    def group_size(self):
        """Query heads per KV head."""
        return self.n_q_heads // self.n_kv_heads

    @property
    def mlp_dim(self):
        return MLP_RATIO * self.d_model

    @property
    def dense_layers(self):
        return tuple(i for i, kind in enumerate(self.layer_kinds) if kind.is_dense)

    @property
    def kv_bytes_per_token(self):
        """Keys and values of one token across all layers and KV heads."""
        return 2 * self.n_layers * self.n_kv_heads * self.head_dim * FLOAT_BYTES

    @property
    def kv_bytes_per_layer_token(self):
        return 2 * self.n_kv_heads * self.head_dim * FLOAT_BYTES

    @classmethod
    def from_doc(cls, doc):
        """
        :param dict doc: a parsed model-config document
        :rtype: ModelConfig
        """
        cls.validate(doc)
        return cls(**doc)

    def to_doc(self):
        doc = OrderedDict((name, getattr(self, name)) for name in _CONFIG_FIELDS)
        doc['layer_kinds'] = [kind.to_doc() for kind in self.layer_kinds]
        return doc


#: Default toy architecture.
TOY_CONFIG = ModelConfig(n_layers=4, d_model=256, n_q_heads=8, n_kv_heads=2, head_dim=32, vocab_size=256,
                         max_context=1024)

LAYER_TENSORS = ('wq', 'wk', 'wv', 'wo', 'attn_norm', 'mlp_norm', 'w_gate', 'w_up', 'w_down')

LayerWeights = namedtuple('LayerWeights', LAYER_TENSORS)


def tensor_layout(config):
    """
    Names and shapes of every parameter tensor, in the fixed order used for
    initialisation streams and the weight file.

    :type config: ModelConfig
    :rtype: list[(str, tuple[int])]

    >>> [name for name, _ in tensor_layout(TOY_CONFIG)][:3]
    ['token_embedding', 'layers.0.wq', 'layers.0.wk']
    >>> len(tensor_layout(TOY_CONFIG)) == 2 + 9 * TOY_CONFIG.n_layers
    True
    """
    d, hd = config.d_model, config.head_dim
    shapes = {
        'wq': (d, config.n_q_heads * hd),
        'wk': (d, config.n_kv_heads * hd),
        'wv': (d, config.n_kv_heads * hd),
        'wo': (config.n_q_heads * hd, d),
        'attn_norm': (d,),
        'mlp_norm': (d,),
        'w_gate': (d, config.mlp_dim),
        'w_up': (d, config.mlp_dim),
        'w_down': (config.mlp_dim, d),
    }
    layout = [('token_embedding', (config.vocab_size, d))]
    for layer in range(config.n_layers):
        layout.extend(('layers.%d.%s' % (layer, name), shapes[name]) for name in LAYER_TENSORS)
    layout.append(('final_norm', (d,)))
    return layout


def _frozen(array):
    array = numpy.ascontiguousarray(array, dtype=numpy.float32)
    array.flags.writeable = False
    return array


class Weights(object):
    """
    Parameter tensors of the toy transformer. Immutable once constructed; the output head is the
    transposed token embedding.

    :type config: ModelConfig
    :param numpy.ndarray token_embedding: vocab_size x d_model
    :param list[LayerWeights] layers: one entry per layer
    :param numpy.ndarray final_norm: d_model gains
    """

    def __init__(self, config, token_embedding, layers, final_norm):
        self.config = config
        self.token_embedding = _frozen(token_embedding)
        self.layers = tuple(LayerWeights(*(_frozen(t) for t in layer)) for layer in layers)
        self.final_norm = _frozen(final_norm)

        expected = tensor_layout(config)
        actual = list(self.tensors())
        if len(actual) != len(expected):
            raise ValueError('Expected %d tensors, got %d' % (len(expected), len(actual)))
        for (name, shape), (_, tensor) in zip(expected, actual):
            if tensor.shape != shape:
                raise ValueError('Tensor %s has shape %s, expected %s' % (name, tensor.shape, shape))
            if not numpy.isfinite(tensor).all():
                raise ValueError('Tensor %s has non-finite entries' % name)

    @classmethod
    def from_tensors(cls, config, tensors):
        """
        Build from a flat sequence of arrays in :func:`tensor_layout` order.

        :type config: ModelConfig
        :type tensors: list[numpy.ndarray]
        :rtype: Weights
        """
        tensors = list(tensors)
        per_layer = len(LAYER_TENSORS)
        if len(tensors) != 2 + per_layer * config.n_layers:
            raise ValueError('Expected %d tensors, got %d' % (2 + per_layer * config.n_layers, len(tensors)))
        layers = [LayerWeights(*tensors[1 + i * per_layer:1 + (i + 1) * per_layer])
                  for i in range(config.n_layers)]
        return cls(config, tensors[0], layers, tensors[-1])

    def tensors(self):
        """
        Yield (name, array) in :func:`tensor_layout` order.
        """
        yield 'token_embedding', self.token_embedding
        for i, layer in enumerate(self.layers):
            for name, tensor in zip(LAYER_TENSORS, layer):
                yield 'layers.%d.%s' % (i, name), tensor
        yield 'final_norm', self.final_norm

    @property
    def n_bytes(self):
        """Total parameter bytes, i.e. what one decoding step streams from memory."""
        return sum(tensor.nbytes for _, tensor in self.tensors())

    def __eq__(self, other):
        if not isinstance(other, Weights) or self.config != other.config:
            return False
        return all(numpy.array_equal(a, b) for (_, a), (_, b) in zip(self.tensors(), other.tensors()))

    def __ne__(self, other):
        return not self == other

    __hash__ = None

    def __repr__(self):
        return 'Weights<%d layers, d_model=%d, %d bytes>' % (self.config.n_layers, self.config.d_model, self.n_bytes)
