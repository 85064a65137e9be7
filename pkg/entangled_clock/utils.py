"""Utility functions for entangled clock simulations."""

import copy
import json
import math
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

SCHEMA_VERSION = 1

# Stream identifiers mixed into every derived RNG
STREAM_SOURCE = 0
STREAM_DETECTION = 1
STREAM_JITTER = 2
STREAM_SETTINGS = 3
STREAM_FORGERY = 4
STREAM_SWEEP = 5
STREAM_FRESH_SCHEDULE = 6
STREAM_TAPE = 7

CSV_FLOAT_FORMAT = '%.17g'


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator for one named stream of a master seed.

    Parameters
    ----------
    seed : int
        Non-negative master seed.
    *stream : int
        Stream identifiers, e.g. ``(STREAM_SOURCE, chunk_index)``.

    Returns
    -------
    numpy.random.Generator
        Philox generator whose state depends only on ``seed`` and ``stream``.
    """
    if seed < 0:
        raise ValueError(f'Seeds must be non-negative, got {seed}')
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed: int, *stream: int) -> int:
    """A fresh 63-bit seed derived from ``seed`` and a stream id."""
    return int(make_rng(seed, *stream).integers(0, 2**63 - 1))


def load_default_config() -> dict:
    with (
        resources.files('entangled_clock.data')
        .joinpath('default_config.json')
        .open('r') as f
    ):
        return json.load(f)


def load_column_descriptions() -> dict:
    with resources.files('entangled_clock.data').joinpath('columns.json').open('r') as f:
        return json.load(f)


def deep_update(base: dict, update: dict) -> dict:
    """Recursively merge ``update`` into a copy of ``base``."""
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_update(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_config(config_file: str | Path | None = None) -> dict:
    """Read a JSON config and merge it over the packaged defaults.

    Parameters
    ----------
    config_file : str or Path, optional
        Path to a JSON config file. Only the keys it sets are overridden.

    Returns
    -------
    dict
        Complete configuration tree.
    """
    config = load_default_config()
    if config_file is None:
        return config

    config_file = Path(config_file)
    if not config_file.exists():
        raise FileNotFoundError(f'Config file {config_file} does not exist')
    with config_file.open('r') as f:
        user_config = json.load(f)

    version = user_config.get('schema_version', SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValueError(
            f'Unsupported config schema_version {version} (expected {SCHEMA_VERSION})'
        )
    return deep_update(config, user_config)


def parse_angle(value: float, degrees: bool = False) -> float:
    """Convert a user-supplied angle to radians."""
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f'Angle must be finite, got {value}')
    return math.radians(value) if degrees else value


def write_json(data: dict, out_file: str | Path) -> Path:
    out_file = Path(out_file)
    with out_file.open('w') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write('\n')
    return out_file


def save_results(
    data: pd.DataFrame | dict, out_file: str | Path, format: str = 'csv'  # noqa: A002
) -> Path:
    """Write a table or report to disk.

    Parameters
    ----------
    data : DataFrame or dict
        Tables are written row-wise; dicts are written as JSON trees.
    out_file : str or Path
        Destination file.
    format : {'csv', 'json'}
        Output format. JSON tables are written as one record per line.

    Returns
    -------
    Path
        The written file.
    """
    out_file = Path(out_file)
    if format not in ('csv', 'json'):
        raise ValueError(f'Unsupported format: {format}')

    if isinstance(data, dict):
        if format == 'csv':
            data = pd.json_normalize(data)
        else:
            return write_json(data, out_file)

    if format == 'csv':
        data.to_csv(
            out_file,
            index=False,
            float_format=CSV_FLOAT_FORMAT,
            lineterminator='\n',
            na_rep='n/a',
        )
    else:
        data.to_json(out_file, orient='records', lines=True, double_precision=15)
    return out_file


def write_column_sidecar(columns: list[str], out_file: str | Path) -> Path:
    """Write the JSON description of each column in a dataset."""
    descriptions = load_column_descriptions()
    sidecar = {col: descriptions.get(col, {'Description': 'n/a'}) for col in columns}
    return write_json(sidecar, out_file)
