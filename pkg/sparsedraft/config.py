# coding=utf-8
"""
Run configuration.

A run is described by one document (YAML or JSON). Built-in defaults are overridden by the
document, which is overridden by command-line flags.
"""
from __future__ import absolute_import

import logging
from pathlib import Path

import yaml

from sparsedraft.analytics.cost_model import hardware_preset
from sparsedraft.analytics.workloads import Workload
from sparsedraft.api import DecodeParams, DecodeMode
from sparsedraft.model import ModelConfig, SCHEMA_PATH
from sparsedraft.model.transformer import init_weights
from sparsedraft.selection import SelectorConfig
from sparsedraft.storage import load_weights
from sparsedraft.utils import read_document, read_documents, validate_document, merge_documents, \
    InvalidDocException

_LOG = logging.getLogger(__name__)

RUN_CONFIG_SCHEMA = next(iter(read_documents(SCHEMA_PATH / 'run-config-schema.yaml')))[1]

# Default configuration options.
_DEFAULT_CONF = u"""
model:
    init:
        seed: 0
        config:
            n_layers: 4
            d_model: 256
            n_q_heads: 8
            n_kv_heads: 2
            head_dim: 32
            vocab_size: 256
            max_context: 1024
workload:
    kind: repeated_segments
    prompt_len: 128
    n_prompts: 4
    seed: 0
    segment_len: 16
decode:
    gamma: 4
    mode: greedy
    temperature: 1.0
    seed: 0
    max_new_tokens: 64
    eos_token: null
selector:
    strategy: collect2
    sparse_ratio: 0.25
    k_min: 16
    sink: 4
    page_size: 4
    metric: logits
    collect_rows: 2
hardware:
    preset: desk
sweep:
    ratios: [0.125, 0.25, 0.5, 1.0]
    gammas: [2, 4, 8]
    gamma_large: 12
    epsilon: 0.02
    context_tokens: null
compare:
    selectors:
        - {strategy: window}
        - {strategy: quest}
        - {strategy: last_accepted}
        - {strategy: all_draft}
        - {strategy: collect2}
selfcheck:
    seeds: 3
    gammas: [3, 7]
    selectors: [window, quest, last_accepted, all_draft, collect2]
    max_new_tokens: 32
    prompt_len: 48
output:
    directory: out
"""


def default_document():
    return yaml.safe_load(_DEFAULT_CONF)


def _merge_run_documents(base, override):
    merged = merge_documents(base, override)
    # A weight file replaces the default initialisation rather than merging with it.
    if 'load' in override.get('model', {}):
        merged['model'] = override['model']
    return merged


def _checked(factory, doc, section):
    try:
        return factory(**doc)
    except (TypeError, ValueError) as e:
        raise InvalidDocException('Invalid %s section: %s' % (section, e))


class RunConfig(object):
    """
    A validated run document.

    :param dict doc: the fully merged document
    :param list files_loaded: paths the document was read from
    """

    def __init__(self, doc, files_loaded=None):
        validate_document(doc, RUN_CONFIG_SCHEMA)
        self.doc = doc
        self.files_loaded = list(files_loaded or [])

    @classmethod
    def find(cls, paths=()):
        """
        Defaults overridden by each file in `paths`, in order.

        :type paths: list[str]
        :rtype: RunConfig
        """
        doc = default_document()
        for path in paths:
            if not Path(path).exists():
                raise InvalidDocException('Config file not found: %s' % path)
            override = read_document(path)
            if not isinstance(override, dict):
                raise InvalidDocException('Config file %s does not hold a mapping' % path)
            doc = _merge_run_documents(doc, override)
        return cls(doc, paths)

    def with_overrides(self, out=None, seed=None, selector=None, gamma=None, ratio=None, mode=None,
                       temperature=None):
        """
        Apply command-line flags. ``seed`` replaces every seed in the document.

        :rtype: RunConfig
        """
        override = {}

        def put(section, key, value):
            if value is not None:
                override.setdefault(section, {})[key] = value

        put('output', 'directory', None if out is None else str(out))
        put('selector', 'strategy', selector)
        put('selector', 'sparse_ratio', ratio)
        put('decode', 'gamma', gamma)
        put('decode', 'mode', mode)
        put('decode', 'temperature', temperature)
        if seed is not None:
            put('decode', 'seed', seed)
            put('workload', 'seed', seed)
            if 'init' in self.doc['model']:
                override['model'] = {'init': {'seed': seed}}
        return RunConfig(_merge_run_documents(self.doc, override), self.files_loaded)

    @property
    def model_config(self):
        """
        :rtype: ModelConfig
        """
        init = self.doc['model'].get('init')
        if init is None:
            return self.weights().config
        return ModelConfig.from_doc(init['config'])

    def weights(self):
        """
        Initialise or load the model weights.

        :rtype: sparsedraft.model.Weights
        """
        model = self.doc['model']
        if 'load' in model:
            path = Path(model['load'])
            if not path.exists():
                raise InvalidDocException('Weight file not found: %s' % path)
            _LOG.info('Loading weights from %s', path)
            _, weights = load_weights(path)
            return weights
        init = model['init']
        return init_weights(ModelConfig.from_doc(init['config']), init['seed'])

    @property
    def workload(self):
        return _checked(Workload, self.doc['workload'], 'workload')

    @property
    def selector(self):
        return _checked(SelectorConfig, self.doc['selector'], 'selector')

    def decode_params(self, selector=None):
        """
        :param SelectorConfig selector: replaces the configured selector
        :rtype: DecodeParams
        """
        decode = dict(self.doc['decode'])
        mode = _checked(DecodeMode, {'name': decode.pop('mode'), 'temperature': decode.pop('temperature')},
                        'decode')
        return _checked(DecodeParams, dict(decode, mode=mode, selector=selector or self.selector), 'decode')

    def compare_params(self):
        """
        One DecodeParams per selector of the ``compare`` section, each merged over ``selector``.

        :rtype: list[DecodeParams]
        """
        return [self.decode_params(_checked(SelectorConfig, merge_documents(self.doc['selector'], entry),
                                            'compare'))
                for entry in self.doc['compare']['selectors']]

    def hardware(self, weights=None):
        """
        :type weights: sparsedraft.model.Weights
        :rtype: sparsedraft.analytics.cost_model.HardwareModel
        """
        overrides = dict(self.doc['hardware'])
        return hardware_preset(overrides.pop('preset'), weights, **overrides)

    @property
    def sweep(self):
        return dict(self.doc['sweep'])

    @property
    def selfcheck(self):
        return dict(self.doc['selfcheck'])

    @property
    def output_dir(self):
        return Path(self.doc['output']['directory'])

    def __str__(self):
        return "RunConfig<loaded_from={}>".format(self.files_loaded or 'defaults')

    def __repr__(self):
        return self.__str__()
