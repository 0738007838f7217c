# SPDX-License-Identifier: GPL-3.0-or-later
import logging
import sys

import click

from canalatlas.config import load_pipeline_config
from canalatlas.errors import CanalAtlasError, ConfigError, ValidationError
from canalatlas.pipeline import SUBCOMMANDS, run_subcommand


LOG_FORMAT = 'ts=%(asctime)s level=%(levelname)s logger=%(name)s %(message)s'
LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR')
log = logging.getLogger(__name__)


def configure_logging(level=None):
    """
    Configure the key=value log records of the command line.

    :param str level: the level of the canalatlas loggers; defaults to the "canalatlas_log_level"
        worker configuration
    """
    # Import this here so the Celery application is only configured when a command runs
    from canalatlas.workers.config import get_worker_config

    logging.basicConfig(format=LOG_FORMAT, stream=sys.stderr)
    logging.captureWarnings(True)
    logging.getLogger('canalatlas').setLevel(level or get_worker_config().canalatlas_log_level)


@click.group()
def cli():
    """Build an average ear canal shape and its acoustic input impedance."""


def _make_subcommand(name):
    @click.option('--config', 'config_path', required=True,
                  type=click.Path(dir_okay=False), help='The pipeline JSON configuration.')
    @click.option('--seed', type=click.IntRange(0, 2 ** 64 - 1),
                  help='Override the seed of the synthetic population.')
    @click.option('--threads', type=click.IntRange(min=1),
                  help='The maximum number of concurrent work items.')
    @click.option('--out', 'output_dir', type=click.Path(file_okay=False),
                  help='Override the output directory.')
    @click.option('--log-level', type=click.Choice(LOG_LEVELS, case_sensitive=False),
                  help='The log level of the pipeline.')
    @click.option('--set', 'overrides', multiple=True, metavar='DOTTED.KEY=JSON',
                  help='Override a configuration key; may be repeated.')
    def command(config_path, seed, threads, output_dir, log_level, overrides):
        configure_logging(log_level.upper() if log_level else None)
        try:
            config = load_pipeline_config(config_path, overrides, seed=seed,
                                          output_dir=output_dir)
            # Import this here so the Celery application is only configured when a command runs
            from canalatlas.workers.tasks import task_mapper
            manifest = run_subcommand(name, config, task_mapper(threads))
        except (ConfigError, ValidationError, FileNotFoundError) as error:
            log.error('subcommand=%s status=failed error=%s', name, type(error).__name__)
            click.echo(f'Error: {error}', err=True)
            sys.exit(1)
        except CanalAtlasError as error:
            log.exception('subcommand=%s status=failed', name)
            click.echo(f'Error: {error}', err=True)
            sys.exit(2)
        click.echo(
            f'Wrote {len(manifest["artifacts"])} artifacts and the manifest to {config.output_dir}'
        )

    command.__doc__ = f'Run the {name} stage of the pipeline.'
    return cli.command(name=name)(command)


for _name in SUBCOMMANDS:
    _make_subcommand(_name)


if __name__ == '__main__':
    cli()
