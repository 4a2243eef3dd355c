from __future__ import absolute_import

import logging

from click import echo

from sparsedraft.analytics.benchmark import run_benchmark, compare_selectors
from sparsedraft.analytics.cost_model import modeled_throughput, vanilla_throughput
from sparsedraft.analytics.reports import (iteration_frame, grid_frame, write_csv, write_json,
                                           write_stats_jsonl)
from sparsedraft.analytics.sweep import SweepRunner
from sparsedraft.scripts.generate import prepare_output, summary_line
from sparsedraft.ui import click as ui
from sparsedraft.ui.click import cli
from sparsedraft.utils import generate_table

_LOG = logging.getLogger('sparsedraft-bench')


@cli.command('bench', help='Benchmark the configured selector over the workload')
@ui.run_options
@ui.executor_cli_options
@ui.pass_config
def bench_cmd(config, executor):
    weights = config.weights()
    params = config.decode_params()
    hw = config.hardware(weights)
    summary, runs = run_benchmark(weights, config.workload, params, executor)

    ctx = config.sweep['context_tokens'] or summary['mean_prefix_len'] or config.workload.prompt_len
    throughput = modeled_throughput(hw, ctx, params.selector.sparse_ratio, params.gamma,
                                    summary['mean_emitted'] or 1.0)
    summary['context_tokens'] = ctx
    summary['throughput'] = throughput
    summary['speedup'] = throughput / vanilla_throughput(hw, ctx)
    summary['hardware'] = hw.to_doc()
    summary['params'] = params.to_doc()

    out = prepare_output(config)
    stats = [run_stats for _, run_stats in runs]
    write_csv(iteration_frame(stats), out / 'bench-iterations.csv')
    write_stats_jsonl(stats, out / 'bench-stats.jsonl')
    write_json(summary, out / 'bench-summary.json')
    echo(summary_line([t for tokens, _ in runs for t in tokens], summary))
    echo('Modeled speedup over vanilla decoding: %.2fx' % summary['speedup'])


def _format(value):
    if isinstance(value, float):
        return '-' if value != value else '%.3f' % value
    return str(value)


@cli.command('compare', help='Compare the selectors of the compare section on one workload')
@ui.run_options
@ui.executor_cli_options
@ui.pass_config
def compare_cmd(config, executor):
    weights = config.weights()
    hw = config.hardware(weights)
    frame = compare_selectors(weights, config.workload, config.compare_params(), hw,
                              ctx=config.sweep['context_tokens'], executor=executor)

    out = prepare_output(config)
    write_csv(frame, out / 'compare.csv')
    columns = ['selector', 'mean_accepted', 'selection_overhead', 'mean_retention', 'speedup']
    rows = [tuple(columns)]
    rows.extend(tuple(_format(row[c]) for c in columns) for _, row in frame.iterrows())
    for line in generate_table(rows):
        echo(line)


@cli.command('sweep', help='Sweep sparse ratio and gamma, then tune them in three steps')
@ui.run_options
@ui.executor_cli_options
@ui.pass_config
def sweep_cmd(config, executor):
    weights = config.weights()
    settings = config.sweep
    runner = SweepRunner(weights, config.workload, config.decode_params(), config.hardware(weights),
                         ctx=settings['context_tokens'], executor=executor)
    report = runner.run(settings['ratios'], settings['gammas'], settings['gamma_large'], settings['epsilon'])

    out = prepare_output(config)
    write_csv(grid_frame(report.grid), out / 'sweep.csv')
    write_json({
        'ratio_curve': [{'sparse_ratio': r, 'mean_accepted': a} for r, a in report.ratio_curve],
        'gamma_large': settings['gamma_large'],
        'step1_ratio': report.step1_ratio,
        'step2_gamma': report.step2_gamma,
        'final': {'sparse_ratio': report.final[0], 'gamma': report.final[1]},
    }, out / 'sweep.json')
    echo('Operating point: sparse_ratio=%g gamma=%d' % report.final)
