# coding=utf-8
"""
Three-step tuning of sparse ratio and gamma.

1. At a large gamma, find the smallest ratio where accepted drafts per iteration level off.
2. At that ratio, pick the gamma with the best modeled throughput.
3. At that gamma, re-pick the ratio by modeled throughput.

Cells of the (ratio, gamma) grid are measured at most once per :class:`SweepRunner`, so the three
steps and the full grid share work.
"""
from __future__ import absolute_import, division

import functools
import logging
from collections import namedtuple, OrderedDict

import numpy
import xarray

from sparsedraft.executor import SerialExecutor
from .benchmark import run_prompt, summarise_stats
from .cost_model import cost_iteration_time, modeled_throughput, vanilla_throughput

_LOG = logging.getLogger(__name__)

DEFAULT_GAMMA_LARGE = 12
DEFAULT_EPSILON = 0.02


def choose_plateau(ratios, curve, epsilon=DEFAULT_EPSILON):
    """
    Smallest ratio whose value reaches ``(1 - epsilon)`` of the value at the largest ratio.

    >>> choose_plateau([0.1, 0.2, 0.5, 1.0], [1.0, 2.9, 3.0, 3.0], epsilon=0.05)
    0.2
    >>> choose_plateau([0.1, 0.2, 0.5, 1.0], [1.0, 2.9, 3.0, 3.0], epsilon=0.0)
    0.5
    """
    ratios = list(ratios)
    curve = list(curve)
    if not ratios:
        raise ValueError('No ratios to choose from')
    if len(ratios) != len(curve):
        raise ValueError('%d ratios but %d curve points' % (len(ratios), len(curve)))
    if ratios != sorted(ratios):
        raise ValueError('Ratios must be ascending: %r' % ratios)
    target = (1.0 - epsilon) * curve[-1]
    for ratio, value in zip(ratios, curve):
        if value >= target:
            return ratio
    return ratios[-1]


def choose_argmax(candidates, values):
    """
    The candidate with the largest value; ties go to the earlier (smaller) candidate.

    >>> choose_argmax([2, 4, 8], [1.0, 3.0, 3.0])
    4
    """
    candidates = list(candidates)
    if not candidates or len(candidates) != len(values):
        raise ValueError('Need one value per candidate, got %d and %d' % (len(candidates), len(values)))
    return candidates[int(numpy.argmax(numpy.asarray(values, dtype=numpy.float64)))]


def _or_nan(value):
    return numpy.nan if value is None else value


#: Result of a full sweep.
SweepReport = namedtuple('SweepReport', ('grid', 'ratio_curve', 'step1_ratio', 'step2_gamma', 'final'))


class SweepRunner(object):
    """
    Measures (ratio, gamma) cells on one workload, caching each cell's summary.

    :type weights: sparsedraft.model.Weights
    :type workload: sparsedraft.analytics.workloads.Workload
    :param base_params: DecodeParams whose gamma and sparse ratio get replaced per cell
    :type hw: sparsedraft.analytics.cost_model.HardwareModel
    :param int ctx: context length for the cost model; each cell's mean prefix length if None
    """

    def __init__(self, weights, workload, base_params, hw, ctx=None, executor=None):
        self.weights = weights
        self.workload = workload
        self.base_params = base_params
        self.hw = hw
        self.ctx = ctx
        self.executor = executor or SerialExecutor()
        self._cells = {}

    def _params(self, ratio, gamma):
        selector = self.base_params.selector._replace(sparse_ratio=float(ratio))
        return self.base_params._replace(gamma=int(gamma), selector=selector)

    def measure(self, cells):
        """
        Summaries for (ratio, gamma) pairs, running only the ones not yet measured.

        Every prompt of every missing cell is submitted before any result is collected.

        :rtype: list[OrderedDict]
        """
        cells = [(float(r), int(g)) for r, g in cells]
        missing = [cell for cell in OrderedDict.fromkeys(cells) if cell not in self._cells]
        prompts = self.workload.prompts(self.weights.config.vocab_size)
        pending = []
        for ratio, gamma in missing:
            params = self._params(ratio, gamma)
            self.workload.check_fits(self.weights.config, params.max_new_tokens, gamma)
            run = functools.partial(run_prompt, self.weights, params=params)
            pending.append(((ratio, gamma), self.executor.map(run, prompts)))
        for cell, futures in pending:
            runs = self.executor.results(futures)
            self._cells[cell] = summarise_stats([s for _, stats in runs for s in stats], cell[1])
            _LOG.info('Cell ratio=%.3g gamma=%d: %.3f accepted per iteration', cell[0], cell[1],
                      self._cells[cell]['mean_accepted'] or 0.0)
        return [self._cells[cell] for cell in cells]

    def _context(self, summary):
        if self.ctx is not None:
            return self.ctx
        return summary['mean_prefix_len'] or self.workload.prompt_len

    def throughput(self, ratio, gamma):
        summary, = self.measure([(ratio, gamma)])
        return modeled_throughput(self.hw, self._context(summary), ratio, gamma, summary['mean_emitted'] or 1.0)

    def step1_ratio(self, gamma_large, ratios, epsilon=DEFAULT_EPSILON):
        """
        :return: (chosen ratio, mean accepted per iteration at each ratio)
        """
        ratios = sorted(float(r) for r in ratios)
        if not ratios:
            raise ValueError('No ratios to sweep')
        curve = [s['mean_accepted'] or 0.0 for s in self.measure([(r, gamma_large) for r in ratios])]
        return choose_plateau(ratios, curve, epsilon), curve

    def step2_gamma(self, ratio, gammas):
        gammas = sorted(int(g) for g in gammas)
        self.measure([(ratio, g) for g in gammas])
        return choose_argmax(gammas, [self.throughput(ratio, g) for g in gammas])

    def step3_refine(self, gamma, ratios):
        """
        :return: the final (ratio, gamma)
        """
        ratios = sorted(float(r) for r in ratios)
        self.measure([(r, gamma) for r in ratios])
        return choose_argmax(ratios, [self.throughput(r, gamma) for r in ratios]), gamma

    def grid(self, ratios, gammas):
        """
        Every (ratio, gamma) cell as an :class:`xarray.Dataset`.
        """
        ratios = sorted(float(r) for r in ratios)
        gammas = sorted(int(g) for g in gammas)
        self.measure([(r, g) for r in ratios for g in gammas])
        names = ('mean_accepted', 'mean_emitted', 'iteration_time', 'throughput', 'speedup')
        data = {name: numpy.full((len(ratios), len(gammas)), numpy.nan) for name in names}
        for i, ratio in enumerate(ratios):
            for j, gamma in enumerate(gammas):
                summary = self._cells[(ratio, gamma)]
                ctx = self._context(summary)
                data['mean_accepted'][i, j] = _or_nan(summary['mean_accepted'])
                data['mean_emitted'][i, j] = _or_nan(summary['mean_emitted'])
                data['iteration_time'][i, j] = cost_iteration_time(self.hw, ctx, ratio, gamma)
                data['throughput'][i, j] = self.throughput(ratio, gamma)
                data['speedup'][i, j] = data['throughput'][i, j] / vanilla_throughput(self.hw, ctx)
        return xarray.Dataset({name: (('sparse_ratio', 'gamma'), values) for name, values in data.items()},
                              coords={'sparse_ratio': ratios, 'gamma': gammas})

    def run(self, ratios, gammas, gamma_large=DEFAULT_GAMMA_LARGE, epsilon=DEFAULT_EPSILON):
        """
        The full grid plus the three tuning steps.

        :rtype: SweepReport
        """
        grid = self.grid(ratios, gammas)
        ratio, curve = self.step1_ratio(gamma_large, ratios, epsilon)
        gamma = self.step2_gamma(ratio, gammas)
        final = self.step3_refine(gamma, ratios)
        _LOG.info('Chosen operating point: ratio %.3g, gamma %d', final[0], final[1])
        return SweepReport(grid, list(zip(sorted(float(r) for r in ratios), curve)), ratio, gamma, final)


def sweep_step1_ratio(weights, workload, base_params, gamma_large, ratios, epsilon=DEFAULT_EPSILON):
    """Step 1 alone: the chosen ratio and its acceptance curve."""
    runner = SweepRunner(weights, workload, base_params, hw=None)
    return runner.step1_ratio(gamma_large, ratios, epsilon)


def sweep_step2_gamma(weights, workload, base_params, ratio, gammas, hw, ctx=None):
    """Step 2 alone: the gamma with the best modeled throughput at `ratio`."""
    return SweepRunner(weights, workload, base_params, hw, ctx).step2_gamma(ratio, gammas)


def sweep_step3_refine(weights, workload, base_params, gamma, ratios, hw, ctx=None):
    """Step 3 alone: the final (ratio, gamma) at fixed `gamma`."""
    return SweepRunner(weights, workload, base_params, hw, ctx).step3_refine(gamma, ratios)
