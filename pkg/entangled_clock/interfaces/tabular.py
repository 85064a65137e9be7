"""Interfaces that write rate tables."""

from pathlib import Path

from nipype import logging
from nipype.interfaces.base import File, SimpleInterface, TraitedSpec, traits

from ..harness import SweepConfig, cardinal_check, sweep
from ..timeline import DetectionConfig
from ..utils import load_config, save_results

LOGGER = logging.getLogger('nipype.interface')

TABLE_SUFFIXES = {'csv': '.csv', 'json': '.jsonl'}


class _RateTableInputSpec(TraitedSpec):
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
    out_format = traits.Enum(
        'csv',
        'json',
        usedefault=True,
        desc='csv, or json for one record per line',
    )


class _RateTableOutputSpec(TraitedSpec):
    out_file = File(
        desc='Rate table',
        exists=True,
        mandatory=True,
    )


class SweepRates(SimpleInterface):
    """Monte Carlo and exact sync-rate curves over [0, pi]."""

    input_spec = _RateTableInputSpec
    output_spec = _RateTableOutputSpec

    def _run_interface(self, runtime):
        config = load_config(self.inputs.config_file)
        sweep_cfg = SweepConfig.from_dict(config['sweep'])
        table = sweep(
            sweep_cfg,
            DetectionConfig.from_dict(config['detection']),
            seed=config['master_seed'],
        )
        suffix = TABLE_SUFFIXES[self.inputs.out_format]
        out_file = Path(self.inputs.output_dir) / f'sweep{suffix}'
        save_results(table, out_file, self.inputs.out_format)
        LOGGER.info('Wrote %d sweep rows to %s', len(table), out_file)
        self._results['out_file'] = str(out_file)
        return runtime


class CardinalRegimes(SimpleInterface):
    """Both sources at theta = 0, pi/2, pi against the exact rates."""

    input_spec = _RateTableInputSpec
    output_spec = _RateTableOutputSpec

    def _run_interface(self, runtime):
        config = load_config(self.inputs.config_file)
        table = cardinal_check(
            config['sweep']['n_per_point'],
            seed=config['master_seed'],
            cfg=DetectionConfig.from_dict(config['detection']),
        )
        if not table['within_4se'].all():
            LOGGER.warning('Cardinal rates outside 4 standard errors:\n%s', table[~table['within_4se']])

        suffix = TABLE_SUFFIXES[self.inputs.out_format]
        out_file = Path(self.inputs.output_dir) / f'cardinal{suffix}'
        save_results(table, out_file, self.inputs.out_format)
        self._results['out_file'] = str(out_file)
        return runtime
