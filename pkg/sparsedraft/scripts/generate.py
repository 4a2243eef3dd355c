from __future__ import absolute_import

import logging

import click
from click import echo

from sparsedraft.analytics.benchmark import summarise_stats
from sparsedraft.analytics.reports import write_json, write_stats_jsonl
from sparsedraft.api import generate
from sparsedraft.ui import click as ui
from sparsedraft.ui.click import cli

_LOG = logging.getLogger('sparsedraft-generate')


def prepare_output(config):
    """Create the configured output directory and return it."""
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def summary_line(tokens, summary):
    rates = ' '.join('-' if rate != rate else '%.2f' % rate for rate in summary['per_position_acceptance'])
    return ('%d tokens, %d iterations, %.2f accepted drafts per iteration, acceptance by position: %s'
            % (len(tokens), summary['iterations'], summary['mean_accepted'] or 0.0, rates))


@cli.command('generate', help='Generate from the first workload prompt; write tokens and iteration stats')
@ui.run_options
@click.option('--prompt-index', type=click.IntRange(min=0), default=0, help="Workload prompt to generate from")
@ui.pass_config
def generate_cmd(config, prompt_index):
    weights = config.weights()
    params = config.decode_params()
    workload = config.workload
    workload.check_fits(weights.config, params.max_new_tokens, params.gamma)
    if prompt_index >= workload.n_prompts:
        raise click.BadParameter('workload has %d prompts' % workload.n_prompts, param_hint='--prompt-index')
    prompt = workload.prompt(prompt_index, weights.config.vocab_size)

    tokens, stats = generate(weights, prompt, params)
    summary = summarise_stats(stats, params.gamma)

    out = prepare_output(config)
    write_json({'prompt': prompt, 'tokens': tokens, 'params': params.to_doc(), 'summary': summary},
               out / 'generate.json')
    write_stats_jsonl([stats], out / 'generate-stats.jsonl')
    echo(summary_line(tokens, summary))
