from pathlib import Path

import nipype.interfaces.utility as niu
import nipype.pipeline.engine as pe

from .interfaces import (
    CardinalRegimes,
    ColumnMetadata,
    CompareVerdicts,
    ExcessExtrema,
    ForgeTapes,
    RunChshExperiment,
    SweepRates,
)

# Report stems written by each experiment-style subcommand
REPORT_STEMS = {
    'chsh': 'chsh_report',
    'certify': 'certification',
    'forge-demo': ('forgery_known_schedule', 'forgery_fresh_schedule'),
}

COMMANDS = ('sweep', 'cardinal', 'excess', 'chsh', 'certify', 'forge-demo')


def build_workflow(
    command: str,
    config_file: str | Path,
    output_dir: str | Path,
    working_dir: str | Path,
    out_format: str = 'csv',
):
    """Build the workflow behind one CLI subcommand.

    Parameters
    ----------
    command : str
        One of ``COMMANDS``.
    config_file : str | Path
        Fully resolved JSON config.
    output_dir : str | Path
        Where datasets and reports are written. Must exist.
    working_dir : str | Path
        nipype working directory.
    out_format : str
        ``csv`` or ``json`` for the rate tables.

    Returns
    -------
    workflow : pe.Workflow
    """
    if command not in COMMANDS:
        raise ValueError(f'Unknown command: {command}')
    output_dir = Path(output_dir)
    working_dir = Path(working_dir)

    workflow = pe.Workflow(name=f'entangled_clock_{command.replace("-", "_")}')
    workflow.base_dir = str(working_dir)
    workflow.config['execution'] = {
        'crashdump_dir': str(working_dir / 'crash'),
        'stop_on_first_crash': 'true',
    }

    inputnode = pe.Node(
        niu.IdentityInterface(fields=['config_file', 'output_dir']),
        name='inputnode',
    )
    inputnode.inputs.config_file = str(config_file)
    inputnode.inputs.output_dir = str(output_dir)

    if command == 'sweep':
        sub_wf = init_rate_table_wf(SweepRates, 'sweep', out_format)
    elif command == 'cardinal':
        sub_wf = init_rate_table_wf(CardinalRegimes, 'cardinal', out_format)
    elif command == 'excess':
        sub_wf = init_excess_wf()
    elif command == 'forge-demo':
        sub_wf = init_forge_demo_wf()
    else:
        sub_wf = init_experiment_wf(REPORT_STEMS[command])

    workflow.connect([
        (inputnode, sub_wf, [
            ('config_file', 'inputnode.config_file'),
            ('output_dir', 'inputnode.output_dir'),
        ]),
    ])  # fmt:skip

    return workflow


def _init_inputnode():
    return pe.Node(
        niu.IdentityInterface(fields=['config_file', 'output_dir']),
        name='inputnode',
    )


def init_rate_table_wf(interface, name: str, out_format: str = 'csv'):
    """
    Initialize a workflow that writes one rate table and its column sidecar.

    Parameters
    ----------
    interface : type
        SimpleInterface producing the table (``out_file`` output).
    name : str
        Table name; also names the workflow.
    out_format : str
        ``csv`` or ``json``.

    Inputs
    ------
    config_file : str
        Resolved JSON config.
    output_dir : str
        Output directory.

    Returns
    -------
    workflow : pe.Workflow
    """
    workflow = pe.Workflow(name=f'{name}_wf')
    inputnode = _init_inputnode()
    make_table = pe.Node(
        interface(out_format=out_format),
        name=f'{name}_table',
        always_run=True,
    )
    column_metadata = pe.Node(
        ColumnMetadata(),
        name=f'{name}_metadata',
        always_run=True,
    )
    workflow.connect([
        (inputnode, make_table, [
            ('config_file', 'config_file'),
            ('output_dir', 'output_dir'),
        ]),
        (make_table, column_metadata, [('out_file', 'in_file')]),
    ])  # fmt:skip
    return workflow


def init_excess_wf():
    workflow = pe.Workflow(name='excess_wf')
    inputnode = _init_inputnode()
    extrema = pe.Node(ExcessExtrema(), name='excess_extrema', always_run=True)
    workflow.connect([
        (inputnode, extrema, [
            ('config_file', 'config_file'),
            ('output_dir', 'output_dir'),
        ]),
    ])  # fmt:skip
    return workflow


def init_experiment_wf(label: str):
    """Initialize a workflow running a single CHSH experiment."""
    workflow = pe.Workflow(name='experiment_wf')
    inputnode = _init_inputnode()
    experiment = pe.Node(
        RunChshExperiment(label=label),
        name='experiment',
        always_run=True,
    )
    workflow.connect([
        (inputnode, experiment, [
            ('config_file', 'config_file'),
            ('output_dir', 'output_dir'),
        ]),
    ])  # fmt:skip
    return workflow


def init_forge_demo_wf():
    """
    Initialize the forgery workflow.

    A tape is forged with knowledge of the settings schedule, then replayed
    once against that schedule and once against a schedule from a fresh
    seed, and the two verdicts are compared.

    Inputs
    ------
    config_file : str
        Resolved JSON config.
    output_dir : str
        Output directory.

    Returns
    -------
    workflow : pe.Workflow
    """
    known_label, fresh_label = REPORT_STEMS['forge-demo']
    workflow = pe.Workflow(name='forge_demo_wf')
    inputnode = _init_inputnode()
    forge = pe.Node(ForgeTapes(), name='forge_tapes', always_run=True)
    known = pe.Node(
        RunChshExperiment(label=known_label),
        name='known_schedule',
        always_run=True,
    )
    fresh = pe.Node(
        RunChshExperiment(label=fresh_label, fresh_schedule=True),
        name='fresh_schedule',
        always_run=True,
    )
    compare = pe.Node(CompareVerdicts(), name='compare_verdicts', always_run=True)

    workflow.connect([
        (inputnode, forge, [
            ('config_file', 'config_file'),
            ('output_dir', 'output_dir'),
        ]),
        (inputnode, known, [
            ('config_file', 'config_file'),
            ('output_dir', 'output_dir'),
        ]),
        (inputnode, fresh, [
            ('config_file', 'config_file'),
            ('output_dir', 'output_dir'),
        ]),
        (inputnode, compare, [('output_dir', 'output_dir')]),
        (forge, known, [('tape_file', 'tape_file')]),
        (forge, fresh, [('tape_file', 'tape_file')]),
        (known, compare, [('out_file', 'known_report')]),
        (fresh, compare, [('out_file', 'fresh_report')]),
    ])  # fmt:skip
    return workflow
