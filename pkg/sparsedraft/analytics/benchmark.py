# coding=utf-8
"""
Benchmark runs and their summaries.

Summaries are computed only from the :class:`~sparsedraft.api.IterationStats` stream, so a summary
can always be rebuilt from persisted stats.
"""
from __future__ import absolute_import, division

import functools
import logging
from collections import OrderedDict

import numpy
import pandas

from sparsedraft.api import Session, generate
from sparsedraft.executor import SerialExecutor
from sparsedraft.selection import ALL_DRAFT, overlap_ratio, score_columns, topk_indices
from .cost_model import modeled_throughput, vanilla_throughput

_LOG = logging.getLogger(__name__)

#: Bins of the rejected-token acceptance-probability histogram.
HISTOGRAM_BINS = 10


def run_prompt(weights, prompt, params):
    """
    One speculative generation; module level so process pools can pickle it.

    :return: (tokens, list of IterationStats)
    """
    return generate(weights, prompt, params)


def per_position_acceptance(stats, gamma):
    """
    Share of drafts accepted at each draft position, given every earlier draft was accepted.

    Positions never reached are NaN.

    :param stats: iterable of IterationStats
    :rtype: list[float]
    """
    attempts = numpy.zeros(gamma, dtype=numpy.int64)
    accepted = numpy.zeros(gamma, dtype=numpy.int64)
    for s in stats:
        for t, flag in enumerate(s.accept_flags):
            attempts[t] += 1
            accepted[t] += bool(flag)
    with numpy.errstate(invalid='ignore', divide='ignore'):
        rates = accepted / attempts
    return [float(r) for r in rates]


def rejected_histogram(stats, bins=HISTOGRAM_BINS):
    """
    Counts of the rejected tokens' acceptance probabilities over equal bins of [0, 1].

    :rtype: list[int]
    """
    probs = [s.rejected_accept_prob for s in stats if s.rejected_accept_prob is not None]
    counts, _ = numpy.histogram(probs, bins=bins, range=(0.0, 1.0))
    return [int(c) for c in counts]


def _mean(values):
    values = [v for v in values if v is not None]
    return float(numpy.mean(values)) if values else None


def summarise_stats(stats, gamma):
    """
    Aggregate an IterationStats stream.

    >>> summarise_stats([], 4)['iterations']
    0

    :param list stats: IterationStats of any number of runs
    :param int gamma: drafts per iteration
    :rtype: OrderedDict
    """
    stats = list(stats)
    draft_kv = sum(s.draft_kv_bytes for s in stats)
    verify_kv = sum(s.verify_kv_bytes for s in stats)
    overhead = sum(s.collected_bytes + s.draft_meta_bytes for s in stats)
    summary = OrderedDict()
    summary['iterations'] = len(stats)
    summary['gamma'] = gamma
    summary['mean_accepted'] = _mean([s.accepted for s in stats])
    summary['mean_emitted'] = _mean([s.accepted + 1 for s in stats])
    summary['per_position_acceptance'] = per_position_acceptance(stats, gamma)
    summary['rejected_prob_histogram'] = rejected_histogram(stats)
    summary['mean_prefix_len'] = _mean([s.prefix_len for s in stats])
    summary['mean_retention'] = _mean([s.selection_retention for s in stats])
    summary['draft_kv_bytes'] = draft_kv
    summary['verify_kv_bytes'] = verify_kv
    summary['selection_overhead'] = overhead / (draft_kv + verify_kv) if draft_kv + verify_kv else 0.0
    return summary


def run_benchmark(weights, workload, params, executor=None):
    """
    Generate from every prompt of a workload and summarise.

    :type weights: sparsedraft.model.Weights
    :type workload: sparsedraft.analytics.workloads.Workload
    :type params: sparsedraft.api.DecodeParams
    :param executor: from :func:`sparsedraft.executor.get_executor`; serial by default
    :return: (summary, list of per-prompt (tokens, stats))
    """
    executor = executor or SerialExecutor()
    workload.check_fits(weights.config, params.max_new_tokens, params.gamma)
    futures = executor.map(functools.partial(run_prompt, weights, params=params),
                           workload.prompts(weights.config.vocab_size))
    runs = executor.results(futures)
    stats = [s for _, run_stats in runs for s in run_stats]
    summary = summarise_stats(stats, params.gamma)
    summary['selector'] = params.selector.strategy
    summary['sparse_ratio'] = params.selector.sparse_ratio
    _LOG.info('%s at ratio %.3g, gamma %d: %.3f accepted per iteration over %d iterations',
              params.selector.strategy, params.selector.sparse_ratio, params.gamma,
              summary['mean_accepted'] or 0.0, summary['iterations'])
    return summary, runs


def _acceptance_columns(rates):
    return OrderedDict(('accept_pos_%d' % (t + 1), rate) for t, rate in enumerate(rates))


def compare_selectors(weights, workload, params_per_selector, hw, ctx=None, executor=None):
    """
    Benchmark several selectors on the same prompts and gamma.

    :param list params_per_selector: DecodeParams, one per table row
    :type hw: sparsedraft.analytics.cost_model.HardwareModel
    :param int ctx: context length for the cost model; defaults to each run's mean prefix length
    :rtype: pandas.DataFrame
    """
    gammas = {params.gamma for params in params_per_selector}
    if len(gammas) != 1:
        raise ValueError('Selectors must be compared at one gamma, got %r' % sorted(gammas))
    rows = []
    for params in params_per_selector:
        summary, _ = run_benchmark(weights, workload, params, executor)
        context = ctx if ctx is not None else summary['mean_prefix_len'] or workload.prompt_len
        throughput = modeled_throughput(hw, context, params.selector.sparse_ratio, params.gamma,
                                        summary['mean_emitted'] or 1.0)
        row = OrderedDict()
        row['selector'] = params.selector.strategy
        row['sparse_ratio'] = params.selector.sparse_ratio
        row['gamma'] = params.gamma
        row['iterations'] = summary['iterations']
        row['mean_accepted'] = summary['mean_accepted']
        row['mean_emitted'] = summary['mean_emitted']
        row['selection_overhead'] = summary['selection_overhead']
        row['mean_retention'] = summary['mean_retention']
        row['throughput'] = throughput
        row['speedup'] = throughput / vanilla_throughput(hw, context)
        row.update(_acceptance_columns(summary['per_position_acceptance']))
        rows.append(row)
    return pandas.DataFrame(rows)


def row_overlap(matrix, k):
    """
    Pairwise overlap ratios of the single-row top-k sets of one LogitMatrix.

    :type matrix: sparsedraft.attention.LogitMatrix
    :return: rows x rows array, or None when the matrix has no columns
    """
    k = min(k, matrix.cols)
    if k == 0:
        return None
    sets = [topk_indices(score_columns(matrix, [label]), k) for label in matrix.row_labels]
    n = len(sets)
    overlap = numpy.ones((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            overlap[i, j] = overlap[j, i] = overlap_ratio(sets[i], sets[j])
    return overlap


def mean_overlap(matrices, k):
    """
    Mean of :func:`row_overlap` over layers and iterations.

    :param matrices: LogitMatrix instances with the same rows
    """
    tables = [t for t in (row_overlap(m, k) for m in matrices) if t is not None]
    if not tables:
        raise ValueError('No logit matrix with prefix columns to compare')
    return numpy.mean(tables, axis=0)


def overlap_at_distance(overlap):
    """
    Mean overlap of row pairs at each distance ``|t - t'|``.

    >>> overlap_at_distance(numpy.array([[1.0, 0.5], [0.5, 1.0]]))
    [1.0, 0.5]
    """
    n = len(overlap)
    return [float(numpy.mean(numpy.diagonal(overlap, offset=d))) for d in range(n)]


def collect_all_rows(weights, prompt, params):
    """
    Run a generation that collects every verification row and return the matrices of every
    iteration and dense layer.

    :rtype: list[sparsedraft.attention.LogitMatrix]
    """
    session = Session(weights, params._replace(selector=params.selector._replace(strategy=ALL_DRAFT)), prompt)
    session.start()
    matrices = []
    while not session.finished:
        session.decode_iteration()
        matrices.extend(matrix for _, matrix in sorted(session.collected.items()))
    return matrices


def overlap_by_distance(weights, workload, params, k, executor=None):
    """
    Mean overlap between the top-k sets of each pair of verification rows, over the workload.

    :type params: sparsedraft.api.DecodeParams
    :param int k: set size, capped by each iteration's prefix length
    :return: (gamma + 1) x (gamma + 1) array, symmetric with a unit diagonal
    """
    executor = executor or SerialExecutor()
    workload.check_fits(weights.config, params.max_new_tokens, params.gamma)
    futures = executor.map(functools.partial(collect_all_rows, weights, params=params),
                           workload.prompts(weights.config.vocab_size))
    matrices = [m for run in executor.results(futures) for m in run]
    return mean_overlap(matrices, k)
