import dataclasses
import json
from pathlib import Path

import pandas as pd
from nipype import logging
from nipype.interfaces.base import File, SimpleInterface, TraitedSpec, isdefined, traits

from ..harness import (
    ExperimentConfig,
    build_schedule,
    excess_summary,
    forge_tapes,
    fresh_settings_seed,
    run_experiment,
)
from ..utils import STREAM_FORGERY, load_config, make_rng, write_column_sidecar, write_json

LOGGER = logging.getLogger('nipype.interface')


class _ColumnMetadataInputSpec(TraitedSpec):
    in_file = File(
        desc='CSV or JSON-lines table',
        exists=True,
        mandatory=True,
    )


class _ColumnMetadataOutputSpec(TraitedSpec):
    out_file = File(
        desc='JSON sidecar describing the columns',
        mandatory=True,
    )


class ColumnMetadata(SimpleInterface):
    """Write a JSON sidecar next to a table with a description of each column."""

    input_spec = _ColumnMetadataInputSpec
    output_spec = _ColumnMetadataOutputSpec

    def _run_interface(self, runtime):
        in_file = Path(self.inputs.in_file)
        if in_file.suffix == '.csv':
            columns = pd.read_csv(in_file, nrows=0).columns.tolist()
        else:
            columns = pd.read_json(in_file, lines=True, nrows=1).columns.tolist()
        out_file = in_file.with_suffix('.json')
        write_column_sidecar(columns, out_file)
        self._results['out_file'] = str(out_file)
        return runtime


class _ExperimentInputSpec(TraitedSpec):
    config_file = File(
        desc='Resolved JSON config',
        exists=True,
        mandatory=True,
    )
    output_dir = traits.Directory(
        desc='Output directory',
        exists=True,
        mandatory=True,
    )
    label = traits.Str(
        'experiment',
        usedefault=True,
        desc='Stem of the report file names',
    )
    tape_file = File(
        desc='Playback tape; switches the source to playback',
        exists=True,
        mandatory=False,
    )
    fresh_schedule = traits.Bool(
        False,
        usedefault=True,
        desc='Measure with a schedule derived from a fresh settings seed',
    )


class _ExperimentOutputSpec(TraitedSpec):
    out_file = File(
        desc='JSON report with CHSH estimate and verdict',
        mandatory=True,
    )
    certified = traits.Bool(desc='Certification verdict')
    s_hat = traits.Float(desc='Estimated CHSH parameter')


class RunChshExperiment(SimpleInterface):
    """Run one CHSH experiment and save its report."""

    input_spec = _ExperimentInputSpec
    output_spec = _ExperimentOutputSpec

    def _run_interface(self, runtime):
        config = ExperimentConfig.from_dict(load_config(self.inputs.config_file))
        if isdefined(self.inputs.tape_file):
            config = config.replace(
                source=dataclasses.replace(
                    config.source, kind='playback', tape_file=str(self.inputs.tape_file)
                )
            )
        if self.inputs.fresh_schedule:
            config = config.replace(settings_seed=fresh_settings_seed(config.settings_seed))

        record = run_experiment(config)
        paths = record.save(self.inputs.output_dir, self.inputs.label)
        LOGGER.info(
            '%s: S = %.4f +- %.4f, certified = %s',
            self.inputs.label,
            record.chsh.s_hat,
            record.chsh.confidence_radius,
            record.verdict.certified,
        )
        self._results['out_file'] = str(paths['report'])
        self._results['certified'] = record.verdict.certified
        self._results['s_hat'] = record.chsh.s_hat
        return runtime


class _ForgeTapesInputSpec(TraitedSpec):
    config_file = File(
        desc='Resolved JSON config',
        exists=True,
        mandatory=True,
    )
    output_dir = traits.Directory(
        desc='Output directory',
        exists=True,
        mandatory=True,
    )


class _ForgeTapesOutputSpec(TraitedSpec):
    tape_file = File(
        desc='CSV tape forged with knowledge of the settings schedule',
        exists=True,
        mandatory=True,
    )


class ForgeTapes(SimpleInterface):
    """Forge a playback tape for the schedule the config's settings seed produces."""

    input_spec = _ForgeTapesInputSpec
    output_spec = _ForgeTapesOutputSpec

    def _run_interface(self, runtime):
        config = ExperimentConfig.from_dict(load_config(self.inputs.config_file))
        schedule = build_schedule(config.settings_seed, config.n_trials)
        tape = forge_tapes(schedule, config.quad, make_rng(config.master_seed, STREAM_FORGERY))
        tape_file = tape.to_csv(Path(self.inputs.output_dir) / 'forged_tape.csv')
        self._results['tape_file'] = str(tape_file)
        return runtime


class _CompareVerdictsInputSpec(TraitedSpec):
    known_report = File(
        desc='Report of the replay against the known schedule',
        exists=True,
        mandatory=True,
    )
    fresh_report = File(
        desc='Report of the replay against a fresh schedule',
        exists=True,
        mandatory=True,
    )
    output_dir = traits.Directory(
        desc='Output directory',
        exists=True,
        mandatory=True,
    )


class _CompareVerdictsOutputSpec(TraitedSpec):
    out_file = File(
        desc='One-line comparison of the two verdicts',
        mandatory=True,
    )


class CompareVerdicts(SimpleInterface):
    input_spec = _CompareVerdictsInputSpec
    output_spec = _CompareVerdictsOutputSpec

    def _run_interface(self, runtime):
        verdicts = {}
        for name in ('known_report', 'fresh_report'):
            with open(getattr(self.inputs, name)) as f:
                verdicts[name] = json.load(f)['verdict']

        known, fresh = verdicts['known_report'], verdicts['fresh_report']
        summary = (
            f'known schedule: S={known["s_hat"]:.4f} certified={known["certified"]}; '
            f'fresh schedule: S={fresh["s_hat"]:.4f} certified={fresh["certified"]}'
        )
        out_file = Path(self.inputs.output_dir) / 'forgery_summary.txt'
        out_file.write_text(summary + '\n')
        self._results['out_file'] = str(out_file)
        return runtime


class _ExcessExtremaInputSpec(TraitedSpec):
    config_file = File(
        desc='Resolved JSON config',
        exists=True,
        mandatory=True,
    )
    output_dir = traits.Directory(
        desc='Output directory',
        exists=True,
        mandatory=True,
    )


class _ExcessExtremaOutputSpec(TraitedSpec):
    out_file = File(
        desc='JSON report of the excess extrema',
        mandatory=True,
    )


class ExcessExtrema(SimpleInterface):
    input_spec = _ExcessExtremaInputSpec
    output_spec = _ExcessExtremaOutputSpec

    def _run_interface(self, runtime):
        config = load_config(self.inputs.config_file)
        summary = excess_summary(config['sweep']['n_per_point'], seed=config['master_seed'])
        out_file = write_json(summary, Path(self.inputs.output_dir) / 'excess.json')
        self._results['out_file'] = str(out_file)
        return runtime
