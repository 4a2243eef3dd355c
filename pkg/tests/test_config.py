# coding=utf-8
"""
Run configuration: defaults, override files and command-line flags
"""
from __future__ import absolute_import

import pytest

from sparsedraft.api import DecodeMode
from sparsedraft.config import RunConfig
from sparsedraft.model import TOY_CONFIG
from sparsedraft.storage import save_weights
from sparsedraft.utils import InvalidDocException
from tests import util


def test_find_defaults():
    config = RunConfig.find(paths=[])
    assert config.model_config == TOY_CONFIG
    params = config.decode_params()
    assert params.gamma == 4
    assert params.mode == DecodeMode.greedy()
    assert params.selector.strategy == 'collect2'
    assert config.workload.kind == 'repeated_segments'
    assert [p.selector.strategy for p in config.compare_params()] == ['window', 'quest', 'last_accepted',
                                                                      'all_draft', 'collect2']
    assert config.selfcheck['gammas'] == [3, 7]
    assert str(config.output_dir) == 'out'


def test_find_config():
    files = util.write_files({
        'base.yaml': """
decode:
    gamma: 6
selector:
    sparse_ratio: 0.5
        """,
        'override.yaml': """
decode:
    mode: sample
    temperature: 0.7
compare:
    selectors:
        - {strategy: window}
        - {k_min: 2}
        """
    })

    # One config file
    config = RunConfig.find(paths=[str(files.joinpath('base.yaml'))])
    assert config.decode_params().gamma == 6
    # Not set: uses default
    assert config.decode_params().max_new_tokens == 64

    # Now two config files, with the latter overriding earlier options.
    config = RunConfig.find(paths=[str(files.joinpath('base.yaml')),
                                   str(files.joinpath('override.yaml'))])
    params = config.decode_params()
    assert params.gamma == 6
    assert params.mode == DecodeMode.sample(0.7)
    compared = config.compare_params()
    assert [p.selector.strategy for p in compared] == ['window', 'collect2']
    # compare entries merge over the selector section
    assert compared[0].selector.sparse_ratio == 0.5
    assert compared[1].selector.k_min == 2


def test_command_line_flags_win():
    config = RunConfig.find([]).with_overrides(out='elsewhere', seed=7, selector='quest', gamma=2, ratio=0.125)
    params = config.decode_params()
    assert (params.gamma, params.seed) == (2, 7)
    assert params.selector.strategy == 'quest'
    assert params.selector.sparse_ratio == 0.125
    assert config.workload.seed == 7
    assert config.doc['model']['init']['seed'] == 7
    assert config.doc['model']['init']['config']['n_layers'] == 4
    assert str(config.output_dir) == 'elsewhere'


@pytest.mark.parametrize('content', [
    'decode: {beam: 3}',
    'selector: {sparse_ratio: 1.5}',
    'selector: {strategy: oracle}',
    'workload: {kind: needle, needle_len: 100}',
    'decode: {temperature: 0}',
    '- a list',
])
def test_invalid_documents(content):
    files = util.write_files({'bad.yaml': content})
    with pytest.raises(InvalidDocException):
        config = RunConfig.find([str(files.joinpath('bad.yaml'))])
        config.decode_params()
        config.workload  # pylint: disable=pointless-statement


def test_missing_files():
    with pytest.raises(InvalidDocException):
        RunConfig.find(['/no/such/config.yaml'])
    files = util.write_files({'load.yaml': 'model: {load: /no/such/weights.bin}'})
    config = RunConfig.find([str(files.joinpath('load.yaml'))])
    with pytest.raises(InvalidDocException):
        config.weights()


def test_loading_weights(tmpdir, tiny_weights):
    path = str(tmpdir.join('tiny.bin'))
    save_weights(path, tiny_weights.config, tiny_weights)
    files = util.write_files({'load.yaml': 'model: {load: "%s"}' % path})
    config = RunConfig.find([str(files.joinpath('load.yaml'))])
    assert 'init' not in config.doc['model']
    assert config.weights() == tiny_weights
    assert config.model_config == tiny_weights.config
    # no initialisation seed to replace
    assert 'init' not in config.with_overrides(seed=3).doc['model']


def test_hardware(tiny_weights):
    config = RunConfig.find([])
    assert config.hardware(tiny_weights).weight_bytes == tiny_weights.n_bytes
    with pytest.raises(InvalidDocException):
        config.hardware()

    files = util.write_files({'hw.yaml': 'hardware: {preset: h100, overhead_fraction_collect: 0.1}'})
    hw = RunConfig.find([str(files.joinpath('hw.yaml'))]).hardware()
    assert hw.overhead_fraction_collect == 0.1
