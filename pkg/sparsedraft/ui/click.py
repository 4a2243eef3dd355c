# coding=utf-8
"""
Common functions for click-based cli scripts.
"""
from __future__ import absolute_import

import copy
import functools
import logging
import sys

import click

from sparsedraft import __version__
from sparsedraft.config import RunConfig
from sparsedraft.executor import get_executor
from sparsedraft.selection import STRATEGIES
from sparsedraft.utils import InvalidDocException, SparseDraftException

_LOG_FORMAT_STRING = '%(asctime)s %(process)d %(name)s %(levelname)s %(message)s'
CLICK_SETTINGS = dict(help_option_names=['-h', '--help'])
_LOG = logging.getLogger(__name__)


def _print_version(ctx, param, value):
    if not value or ctx.resilient_parsing:
        return

    click.echo(
        '{prog}, version {version}'.format(
            prog='sparsedraft',
            version=__version__
        )
    )
    ctx.exit()


def compose(*functions):
    """
    >>> compose(
    ...     lambda x: x+1,
    ...     lambda y: y+2
    ... )(1)
    4
    """

    def compose2(f, g):
        return lambda x: f(g(x))

    return functools.reduce(compose2, functions, lambda x: x)


class ColorFormatter(logging.Formatter):
    colors = {
        'info': dict(fg='white'),
        'error': dict(fg='red'),
        'exception': dict(fg='red'),
        'critical': dict(fg='red'),
        'debug': dict(fg='blue'),
        'warning': dict(fg='yellow')
    }

    def format(self, record):
        if not record.exc_info:
            record = copy.copy(record)
            record.levelname = click.style(record.levelname, **self.colors.get(record.levelname.lower(), {}))
        return logging.Formatter.format(self, record)


class ClickHandler(logging.Handler):
    def emit(self, record):
        try:
            msg = self.format(record)
            click.echo(msg, err=True)
        except (KeyboardInterrupt, SystemExit):
            raise
        except:  # pylint: disable=bare-except
            self.handleError(record)


def _init_logging(ctx, param, value):
    handler = ClickHandler()
    handler.formatter = ColorFormatter(_LOG_FORMAT_STRING)
    logging.root.handlers = [h for h in logging.root.handlers if not isinstance(h, ClickHandler)]
    logging.root.addHandler(handler)

    logging_level = logging.WARN - 10 * value
    logging.root.setLevel(logging_level)
    logging.getLogger('sparsedraft').setLevel(logging_level)

    logging.getLogger('sparsedraft').info('Running sparsedraft command: %s', ' '.join(sys.argv))

    ctx.ensure_object(dict)
    ctx.obj['verbosity'] = value


def _add_logfile(ctx, param, value):
    formatter = logging.Formatter(_LOG_FORMAT_STRING)
    for logfile in value:
        handler = logging.FileHandler(logfile)
        handler.formatter = formatter
        logging.root.addHandler(handler)


#: pylint: disable=invalid-name
version_option = click.option('--version', is_flag=True, callback=_print_version,
                              expose_value=False, is_eager=True)
#: pylint: disable=invalid-name
verbose_option = click.option('--verbose', '-v', count=True, callback=_init_logging,
                              is_eager=True, expose_value=False, help="Use multiple times for more verbosity")
#: pylint: disable=invalid-name
logfile_option = click.option('--log-file', multiple=True, callback=_add_logfile,
                              is_eager=True, expose_value=False, help="Specify log file")

# This is a function, so it's valid to be lowercase.
#: pylint: disable=invalid-name
global_cli_options = compose(
    version_option,
    verbose_option,
    logfile_option,
)


@click.group(help="Self-speculative decoding lab", context_settings=CLICK_SETTINGS)
@global_cli_options
def cli():
    pass


#: Flags that override the run document.
RUN_FLAGS = ('out', 'seed', 'selector', 'gamma', 'ratio', 'mode', 'temperature')

#: pylint: disable=invalid-name
run_options = compose(
    click.option('--config', 'config_paths', multiple=True, type=click.Path(dir_okay=False),
                 help="Run configuration (YAML or JSON); later files override earlier ones"),
    click.option('--out', type=click.Path(file_okay=False), help="Output directory"),
    click.option('--seed', type=click.IntRange(min=0), help="Replace every seed in the configuration"),
    click.option('--selector', type=click.Choice(STRATEGIES), help="KV selection strategy"),
    click.option('--gamma', type=click.IntRange(min=1), help="Draft tokens per iteration"),
    click.option('--ratio', type=click.FloatRange(min=0.0, max=1.0), help="Sparse ratio in (0, 1]"),
    click.option('--mode', type=click.Choice(['greedy', 'sample']), help="Decoding mode"),
    click.option('--temperature', type=float, help="Sampling temperature"),
)


def pass_config(f):
    """
    Get the run configuration as the first argument.

    Configuration errors become usage errors (exit 2). Engine errors print one line and exit 1, or
    propagate with their traceback under -v.
    """

    def new_func(*args, **kwargs):
        overrides = {name: kwargs.pop(name) for name in RUN_FLAGS}
        paths = kwargs.pop('config_paths')
        try:
            config = RunConfig.find(paths).with_overrides(**overrides)
            _LOG.debug("Loaded run config: %s", config)
            return f(config, *args, **kwargs)
        except InvalidDocException as e:
            raise click.UsageError(str(e))
        except (SparseDraftException, ValueError) as e:
            ctx = click.get_current_context()
            if (ctx.obj or {}).get('verbosity', 0) >= 1:
                raise
            click.echo('Error: %s' % e)
            ctx.exit(1)

    return functools.update_wrapper(new_func, f)


EXECUTOR_TYPES = {
    'serial': lambda _: get_executor(None),
    'multiproc': lambda workers: get_executor(int(workers)),
}


def _setup_executor(ctx, param, value):
    try:
        return EXECUTOR_TYPES[value[0]](value[1])
    except ValueError:
        ctx.fail("Failed to create '%s' executor with '%s'" % value)


executor_cli_options = click.option('--executor',
                                    type=(click.Choice(sorted(EXECUTOR_TYPES)), str),
                                    default=('serial', '0'),
                                    help="Run parallelized. eg:\n"
                                         "--executor multiproc 4",
                                    callback=_setup_executor)

