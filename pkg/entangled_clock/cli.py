"""Command Line Interface for the entangled clock testbed."""

import json
import sys
import tempfile
from pathlib import Path

import click
from nipype import config as nipype_config
from nipype import logging

from . import __version__
from .harness import ExperimentConfig, SweepConfig, warn_if_underpowered
from .models import SOURCE_KINDS
from .timeline import DetectionConfig
from .utils import load_config, parse_angle, write_json
from .workflows import REPORT_STEMS, build_workflow

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CERTIFIED = 3

ENV_PREFIX = 'ECLOCK_'

# Subcommands whose --trials sets the per-point sample size rather than n_trials
TABLE_COMMANDS = ('sweep', 'cardinal', 'excess')


def _envvar(name):
    return f'{ENV_PREFIX}{name}'


_OPTIONS = {
    'config': click.option(
        '--config',
        'config_file',
        type=click.Path(exists=True, dir_okay=False),
        envvar=_envvar('CONFIG'),
        help='JSON config merged over the packaged defaults',
    ),
    'out': click.option(
        '--out',
        'output_dir',
        type=click.Path(file_okay=False),
        default='.',
        show_default=True,
        envvar=_envvar('OUT'),
        help='Output directory',
    ),
    'format': click.option(
        '--format',
        'out_format',
        type=click.Choice(['csv', 'json']),
        default='csv',
        show_default=True,
        envvar=_envvar('FORMAT'),
        help='Table format; json writes one record per line',
    ),
    'seed': click.option(
        '--seed', type=click.IntRange(min=0), envvar=_envvar('SEED'), help='Master seed'
    ),
    'settings_seed': click.option(
        '--settings-seed',
        type=click.IntRange(min=0),
        envvar=_envvar('SETTINGS_SEED'),
        help='Private seed of the settings schedule',
    ),
    'trials': click.option(
        '--trials',
        type=click.IntRange(min=1),
        envvar=_envvar('TRIALS'),
        help='Trials per experiment, or per grid point for tables',
    ),
    'points': click.option(
        '--points', type=click.IntRange(min=2), envvar=_envvar('POINTS'), help='Sweep grid size'
    ),
    'source': click.option(
        '--source',
        'sources',
        type=click.Choice(SOURCE_KINDS),
        multiple=True,
        envvar=_envvar('SOURCE'),
        help='Outcome source; repeat for several sweep curves',
    ),
    'theta': click.option(
        '--theta',
        type=float,
        envvar=_envvar('THETA'),
        help='Calibration angle of the mimic source',
    ),
    'degrees': click.option(
        '--degrees', is_flag=True, envvar=_envvar('DEGREES'), help='Read --theta in degrees'
    ),
    'eta_a': click.option(
        '--eta-a', type=float, envvar=_envvar('ETA_A'), help="Alice's detector efficiency"
    ),
    'eta_b': click.option(
        '--eta-b', type=float, envvar=_envvar('ETA_B'), help="Bob's detector efficiency"
    ),
    'window': click.option(
        '--window', type=float, envvar=_envvar('WINDOW'), help='Coincidence window in ns'
    ),
    'jitter': click.option(
        '--jitter', type=float, envvar=_envvar('JITTER'), help='Timing jitter sigma in ns'
    ),
    'confidence': click.option(
        '--confidence', type=float, envvar=_envvar('CONFIDENCE'), help='Certification confidence'
    ),
    'workers': click.option(
        '--workers', type=click.IntRange(min=1), envvar=_envvar('WORKERS'), help='Worker threads'
    ),
    'working_dir': click.option(
        '--working-dir',
        '-w',
        type=click.Path(file_okay=False),
        envvar=_envvar('WORKING_DIR'),
        help='Path to working directory',
    ),
}

SHARED_OPTIONS = ('config', 'out', 'seed', 'trials', 'working_dir')
DETECTOR_OPTIONS = ('eta_a', 'eta_b', 'window', 'jitter')
EXPERIMENT_OPTIONS = ('settings_seed', *DETECTOR_OPTIONS, 'confidence', 'workers')

# Options each subcommand reads; anything else is a usage error
COMMAND_OPTIONS = {
    'sweep': (
        *SHARED_OPTIONS, 'format', 'points', 'source', 'theta', 'degrees', 'eta_a', 'eta_b'
    ),
    'cardinal': (*SHARED_OPTIONS, 'format', 'eta_a', 'eta_b'),
    'excess': SHARED_OPTIONS,
    'chsh': (*SHARED_OPTIONS, 'source', 'theta', 'degrees', *EXPERIMENT_OPTIONS),
    'certify': (*SHARED_OPTIONS, 'source', 'theta', 'degrees', *EXPERIMENT_OPTIONS),
    'forge-demo': (*SHARED_OPTIONS, *EXPERIMENT_OPTIONS),
}


def command_options(command):
    """Decorate a subcommand with the options listed for it in ``COMMAND_OPTIONS``."""

    def decorator(func):
        for name in reversed(COMMAND_OPTIONS[command]):
            func = _OPTIONS[name](func)
        return func

    return decorator


def resolve_config(command: str, config_file=None, **options) -> dict:
    """Merge the config file and the command-line overrides into one tree.

    Parameters
    ----------
    command : str
        Subcommand name; decides where ``trials`` and ``sources`` land.
    config_file : str, optional
        User JSON config. A relative ``source.tape_file`` in it is taken
        relative to this file.
    **options
        Values of the shared options; ``None`` leaves the config untouched.

    Returns
    -------
    dict
        Validated configuration.
    """
    config = load_config(config_file)
    sources = tuple(options.get('sources') or ())

    if options.get('seed') is not None:
        config['master_seed'] = options['seed']
    if options.get('settings_seed') is not None:
        config['settings_seed'] = options['settings_seed']
    if options.get('confidence') is not None:
        config['confidence'] = options['confidence']
    if options.get('workers') is not None:
        config['n_workers'] = options['workers']
    if options.get('points') is not None:
        config['sweep']['points'] = options['points']

    detection = config['detection']
    for option, key in (
        ('eta_a', 'eta_a'),
        ('eta_b', 'eta_b'),
        ('window', 'coincidence_window'),
        ('jitter', 'jitter_sigma'),
    ):
        if options.get(option) is not None:
            detection[key] = options[option]

    theta = options.get('theta')
    if theta is not None:
        theta = parse_angle(theta, options.get('degrees', False))

    if command in TABLE_COMMANDS:
        if options.get('trials') is not None:
            config['sweep']['n_per_point'] = options['trials']
        if sources:
            config['sweep']['sources'] = list(sources)
        if theta is not None:
            config['sweep']['theta_star'] = theta
        SweepConfig.from_dict(config['sweep'])
        DetectionConfig.from_dict(detection)
        return config

    if len(sources) > 1:
        raise click.UsageError(f'{command} takes a single --source, got {len(sources)}')
    if options.get('trials') is not None:
        config['n_trials'] = options['trials']
    if sources:
        config['source']['kind'] = sources[0]
    if theta is not None:
        config['source']['theta_star'] = theta
    # Nodes run inside their own working directories
    tape_file = config['source'].get('tape_file')
    if tape_file is not None and config_file is not None:
        config['source']['tape_file'] = str((Path(config_file).parent / tape_file).absolute())
    ExperimentConfig.from_dict(config)
    return config


def _set_verbose():
    nipype_config.set('logging', 'workflow_level', 'DEBUG')
    nipype_config.set('logging', 'interface_level', 'DEBUG')
    logging.update_logging(nipype_config)


def _run_command(command: str, options: dict) -> Path:
    output_dir = Path(options.pop('output_dir')).absolute()
    working_dir = options.pop('working_dir')
    out_format = options.pop('out_format', 'csv')

    config = resolve_config(command, **options)
    output_dir.mkdir(parents=True, exist_ok=True)
    config_file = write_json(config, output_dir / 'config.json')

    if command in ('certify', 'forge-demo'):
        warn_if_underpowered(
            config['n_trials'],
            config['confidence'],
            DetectionConfig.from_dict(config['detection']),
        )

    click.echo(f'Running {command} -> {output_dir}')
    if working_dir is None:
        with tempfile.TemporaryDirectory(prefix='eclock_') as tmp_dir:
            build_workflow(command, config_file, output_dir, tmp_dir, out_format).run()
    else:
        working_dir = Path(working_dir).absolute()
        working_dir.mkdir(parents=True, exist_ok=True)
        build_workflow(command, config_file, output_dir, working_dir, out_format).run()
    return output_dir


def _read_verdict(report_file: Path) -> dict:
    with report_file.open() as f:
        return json.load(f)['verdict']


@click.group()
@click.version_option(version=__version__)
@click.option('--verbose', '-v', is_flag=True, help='Enable verbose output')
def cli(verbose):
    """Entangled clock synchronization testbed.

    Monte Carlo experiments comparing singlet clocks with a local
    hidden-variable model, and CHSH certification against forged ticks.
    """
    if verbose:
        click.echo('Verbose mode enabled')
        _set_verbose()


@cli.command()
@command_options('sweep')
def sweep(**options):
    """Synchronization rate curves over [0, pi]."""
    output_dir = _run_command('sweep', options)
    click.echo(f'Wrote sweep table to {output_dir}')


@cli.command()
@command_options('cardinal')
def cardinal(**options):
    """Rates at theta = 0, pi/2 and pi against the exact values."""
    output_dir = _run_command('cardinal', options)
    click.echo(f'Wrote cardinal table to {output_dir}')


@cli.command()
@command_options('excess')
def excess(**options):
    """Extrema of the quantum minus classical rate."""
    output_dir = _run_command('excess', options)
    with (output_dir / 'excess.json').open() as f:
        summary = json.load(f)
    for name in ('theta_1', 'theta_2'):
        entry = summary[name]
        click.echo(
            f'{name}: theta = {entry["theta"]:.4f} rad, '
            f'delta = {entry["delta_exact"]:+.4f} (simulated {entry["delta_mc"]:+.4f})'
        )


@cli.command()
@command_options('chsh')
def chsh(**options):
    """Estimate the CHSH parameter and report it."""
    output_dir = _run_command('chsh', options)
    verdict = _read_verdict(output_dir / f'{REPORT_STEMS["chsh"]}.json')
    click.echo(f'S = {verdict["s_hat"]:.4f} +- {verdict["confidence_radius"]:.4f}')


@cli.command()
@command_options('certify')
@click.pass_context
def certify(ctx, **options):
    """Certify non-locality; exits 3 when the run does not certify."""
    output_dir = _run_command('certify', options)
    verdict = _read_verdict(output_dir / f'{REPORT_STEMS["certify"]}.json')
    click.echo(
        f'S = {verdict["s_hat"]:.4f} +- {verdict["confidence_radius"]:.4f}, '
        f'margin = {verdict["margin"]:+.4f}: '
        f'{"certified" if verdict["certified"] else "not certified"}'
    )
    ctx.exit(EXIT_OK if verdict['certified'] else EXIT_NOT_CERTIFIED)


@cli.command('forge-demo')
@command_options('forge-demo')
def forge_demo(**options):
    """Replay a forged tape against the known and a fresh settings schedule."""
    output_dir = _run_command('forge-demo', options)
    click.echo((output_dir / 'forgery_summary.txt').read_text().strip())


def main(argv=None):
    """Run the CLI and exit with 0 (success), 3 (not certified) or 1 (error)."""
    try:
        rv = cli.main(args=argv, prog_name='entangled-clock', standalone_mode=False)
    except click.ClickException as e:
        e.show()
        sys.exit(EXIT_ERROR)
    except click.Abort:
        click.echo('Aborted!', err=True)
        sys.exit(EXIT_ERROR)
    except Exception as e:  # noqa: BLE001
        click.echo(f'Error: {e}', err=True)
        sys.exit(EXIT_ERROR)
    sys.exit(rv or EXIT_OK)


if __name__ == '__main__':
    main()
