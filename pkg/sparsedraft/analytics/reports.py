# coding=utf-8
"""
Report files: CSV tables, a JSON summary and the raw iteration stats as JSON lines.

Everything is written with stable column order and float formatting so reruns with the same
seed produce byte-identical files.
"""
from __future__ import absolute_import, division

import json
import logging
from collections import OrderedDict

import pandas

from sparsedraft.api import IterationStats
from sparsedraft.utils import jsonify_document

_LOG = logging.getLogger(__name__)

FLOAT_FORMAT = '%.6g'

ITERATION_COLUMNS = ('run', 'iteration', 'prefix_len', 'gamma', 'accepted', 'emitted', 'rejected_accept_prob',
                     'draft_kv_bytes', 'draft_meta_bytes', 'verify_kv_bytes', 'collected_bytes',
                     'selection_retention', 'selector')


def iteration_frame(runs):
    """
    One row per iteration of every run.

    :param runs: list of IterationStats lists, one per run
    :rtype: pandas.DataFrame
    """
    rows = []
    for run, stats in enumerate(runs):
        for s in stats:
            row = s.to_doc()
            row['run'] = run
            row['emitted'] = s.emitted
            rows.append(OrderedDict((name, row[name]) for name in ITERATION_COLUMNS))
    return pandas.DataFrame(rows, columns=list(ITERATION_COLUMNS))


def grid_frame(grid):
    """
    Flatten a sweep grid into one row per (sparse_ratio, gamma) cell.

    :type grid: xarray.Dataset
    :rtype: pandas.DataFrame
    """
    return grid.to_dataframe().reset_index()


def write_csv(frame, path):
    frame.to_csv(str(path), index=False, float_format=FLOAT_FORMAT)
    _LOG.info('Wrote %d rows to %s', len(frame), path)


def write_json(doc, path):
    with open(str(path), 'w') as f:
        json.dump(jsonify_document(doc), f, indent=2, sort_keys=True)
        f.write('\n')
    _LOG.info('Wrote %s', path)


def write_stats_jsonl(runs, path):
    """
    Persist the raw stats stream, one JSON document per iteration, tagged with its run index.
    """
    with open(str(path), 'w') as f:
        for run, stats in enumerate(runs):
            for s in stats:
                doc = s.to_doc()
                doc['run'] = run
                f.write(json.dumps(jsonify_document(doc), sort_keys=True))
                f.write('\n')


def read_stats_jsonl(path):
    """
    :return: list of IterationStats lists, one per run
    """
    runs = OrderedDict()
    with open(str(path)) as f:
        for line in f:
            if not line.strip():
                continue
            doc = json.loads(line)
            runs.setdefault(doc.pop('run', 0), []).append(IterationStats.from_doc(doc))
    return list(runs.values())
