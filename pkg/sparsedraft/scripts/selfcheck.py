from __future__ import absolute_import

import logging
from collections import namedtuple, OrderedDict

import click
from click import echo

from sparsedraft.analytics.reports import write_json
from sparsedraft.analytics.workloads import Workload
from sparsedraft.api import DecodeParams, DecodeMode, Session, vanilla_generate, recompute_kv, kv_matches
from sparsedraft.scripts.generate import prepare_output
from sparsedraft.ui import click as ui
from sparsedraft.ui.click import cli
from sparsedraft.utils import generate_table

_LOG = logging.getLogger('sparsedraft-selfcheck')

#: Outcome of one speculative run against vanilla decoding.
CheckResult = namedtuple('CheckResult', ('selector', 'gamma', 'seed', 'passed', 'problem'))


def first_divergence(expected, actual):
    """
    Index of the first differing token, or None.

    >>> first_divergence([1, 2, 3], [1, 2, 4])
    2
    >>> first_divergence([1, 2], [1, 2]) is None
    True
    >>> first_divergence([1, 2], [1])
    1
    """
    for i, (e, a) in enumerate(zip(expected, actual)):
        if e != a:
            return i
    if len(expected) != len(actual):
        return min(len(expected), len(actual))
    return None


def _iteration_problem(weights, session, stats):
    if not stats.accepted <= stats.gamma or stats.emitted != stats.accepted + 1:
        return 'iteration %d: accepted %d of %d but emitted %d' % (stats.iteration, stats.accepted, stats.gamma,
                                                                  stats.emitted)
    if stats.emitted_tokens[:stats.accepted] != stats.draft_tokens[:stats.accepted]:
        return 'iteration %d: emitted tokens do not start with the accepted drafts' % stats.iteration
    if not kv_matches(session.kv, recompute_kv(weights, session.tokens[:-1])):
        return 'iteration %d: committed KV differs from a full recomputation' % stats.iteration
    return None


def check_run(weights, prompt, params, accept_all=False):
    """
    Run speculative decoding with invariant checks after every iteration and compare the output
    with vanilla decoding.

    :return: description of the first problem, or None
    """
    session = Session(weights, params, prompt, accept_all=accept_all)
    session.start()
    while not session.finished:
        problem = _iteration_problem(weights, session, session.decode_iteration())
        if problem:
            return problem
    expected = vanilla_generate(weights, prompt, params.mode, params.seed, params.max_new_tokens,
                                params.eos_token)
    actual = session.output()
    at = first_divergence(expected, actual)
    if at is not None:
        return ('first divergence at token %d: expected %r, got %r'
                % (at, expected[at] if at < len(expected) else None, actual[at] if at < len(actual) else None))
    return None


def run_selfcheck(weights, config, accept_all=False):
    """
    Greedy losslessness over every configured selector, gamma and seed.

    :type config: sparsedraft.config.RunConfig
    :rtype: list[CheckResult]
    """
    settings = config.selfcheck
    base = config.decode_params()
    workload = config.workload
    prompts = Workload(kind=workload.kind, prompt_len=settings['prompt_len'], n_prompts=settings['seeds'],
                       seed=workload.seed, segment_len=workload.segment_len,
                       needle_len=min(workload.needle_len, settings['prompt_len'] // 2))
    results = []
    for name in settings['selectors']:
        selector = config.selector._replace(strategy=name)
        for gamma in settings['gammas']:
            for i in range(settings['seeds']):
                params = DecodeParams(gamma=gamma, selector=selector, mode=DecodeMode.greedy(), seed=base.seed + i,
                                      max_new_tokens=settings['max_new_tokens'], eos_token=base.eos_token)
                prompts.check_fits(weights.config, params.max_new_tokens, gamma)
                problem = check_run(weights, prompts.prompt(i, weights.config.vocab_size), params, accept_all)
                if problem:
                    _LOG.warning('%s gamma=%d seed=%d: %s', name, gamma, params.seed, problem)
                results.append(CheckResult(name, gamma, params.seed, problem is None, problem))
    return results


def result_table(results):
    counts = OrderedDict()
    for r in results:
        passed, runs = counts.get((r.selector, r.gamma), (0, 0))
        counts[(r.selector, r.gamma)] = (passed + r.passed, runs + 1)
    rows = [('selector', 'gamma', 'passed', 'runs')]
    rows.extend((selector, str(gamma), str(passed), str(runs)) for (selector, gamma), (passed, runs) in counts.items())
    return rows


@cli.command('selfcheck', help='Check greedy speculative output against vanilla decoding for every selector')
@ui.run_options
@click.option('--inject-fault', is_flag=True, hidden=True, help="Accept every draft without verification")
@ui.pass_config
def selfcheck_cmd(config, inject_fault):
    weights = config.weights()
    results = run_selfcheck(weights, config, accept_all=inject_fault)

    for line in generate_table(result_table(results)):
        echo(line)

    out = prepare_output(config)
    write_json({'results': [r._asdict() for r in results]}, out / 'selfcheck.json')

    failures = [r for r in results if not r.passed]
    if failures:
        first = failures[0]
        echo('FAILED %d of %d runs; %s gamma=%d seed=%d: %s'
             % (len(failures), len(results), first.selector, first.gamma, first.seed, first.problem))
        click.get_current_context().exit(1)
    echo('All %d runs lossless' % len(results))
