# coding=utf-8
from __future__ import absolute_import

import json

import pandas

from sparsedraft.analytics.reports import iteration_frame, write_csv, write_json, write_stats_jsonl, \
    read_stats_jsonl, ITERATION_COLUMNS
from sparsedraft.api import DecodeParams, generate
from sparsedraft.selection import SelectorConfig


def _runs(weights, workload):
    params = DecodeParams(gamma=3, selector=SelectorConfig(k_min=4), max_new_tokens=10)
    return [generate(weights, prompt, params)[1] for prompt in workload.prompts(weights.config.vocab_size)]


def test_iteration_frame(tiny_weights, workload):
    runs = _runs(tiny_weights, workload)
    frame = iteration_frame(runs)
    assert tuple(frame.columns) == ITERATION_COLUMNS
    assert len(frame) == sum(len(stats) for stats in runs)
    assert set(frame['run']) == {0, 1}
    assert (frame['emitted'] == frame['accepted'] + 1).all()

    empty = iteration_frame([])
    assert tuple(empty.columns) == ITERATION_COLUMNS
    assert len(empty) == 0


def test_reports_are_byte_identical_on_rerun(tmpdir, tiny_weights, workload):
    first, second = tmpdir.join('a.csv'), tmpdir.join('b.csv')
    write_csv(iteration_frame(_runs(tiny_weights, workload)), first)
    write_csv(iteration_frame(_runs(tiny_weights, workload)), second)
    assert first.read() == second.read()
    assert pandas.read_csv(str(first)).columns.tolist() == list(ITERATION_COLUMNS)


def test_stats_lines_keep_run_boundaries(tmpdir, tiny_weights, workload):
    runs = _runs(tiny_weights, workload)
    path = tmpdir.join('stats.jsonl')
    write_stats_jsonl(runs, path)
    lines = path.read().splitlines()
    assert len(lines) == sum(len(stats) for stats in runs)
    assert json.loads(lines[-1])['run'] == 1
    assert read_stats_jsonl(path) == runs


def test_write_json(tmpdir):
    path = tmpdir.join('summary.json')
    write_json({'b': (1, 2), 'a': 0.5}, path)
    assert json.loads(path.read()) == {'a': 0.5, 'b': [1, 2]}
    assert path.read().endswith('\n')
