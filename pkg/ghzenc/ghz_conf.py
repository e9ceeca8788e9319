# vim: set tabstop=4 expandtab :
###############################################################################
#   Copyright (c) 2025 The ghzenc developers
#
#   Licensed under the Apache License, Version 2.0 (the "License");
#   you may not use this file except in compliance with the License.
#   You may obtain a copy of the License at
#
#       http://www.apache.org/licenses/LICENSE-2.0
#
#   Unless required by applicable law or agreed to in writing, software
#   distributed under the License is distributed on an "AS IS" BASIS,
#   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#   See the License for the specific language governing permissions and
#   limitations under the License.
###############################################################################

from __future__ import annotations  # available from Python 3.7 onwards, default from Python 3.11 onwards

import configparser
import math
import os
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Tuple

import psutil

from ghzenc.ghzexceptions import GhzConfigException
from ghzenc.utils import log, stable_hash

# keys that never influence artifact contents
HASH_EXCLUDED: Tuple[str, ...] = ('run.jobs', 'run.out', 'run.cache', 'run.log_level')


# ----------------------------------------------------------------------------------------------------------------------
def _to_bool(val: Any) -> bool:
    if isinstance(val, bool):
        return val
    sval = str(val).strip().lower()
    if sval in ('1', 'true', 'yes', 'on'):
        return True
    if sval in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f'not a boolean: {val!r}')


def _to_int(val: Any) -> int:
    if isinstance(val, bool):
        raise ValueError(f'not an integer: {val!r}')
    if isinstance(val, int):
        return val
    return int(str(val).strip(), base=0)


def _to_float(val: Any) -> float:
    fval = float(str(val).strip()) if not isinstance(val, (int, float)) else float(val)
    if not math.isfinite(fval):
        raise ValueError(f'not a finite number: {val!r}')
    return fval


def _to_str_or_none(val: Any) -> str | None:
    if val is None:
        return None
    sval = str(val).strip()
    return sval if sval != '' else None


def _split(val: Any) -> List[Any]:
    if isinstance(val, (list, tuple)):
        return list(val)
    return [p for p in (s.strip() for s in str(val).split(',')) if p != '']


def _to_int_list(val: Any) -> Tuple[int, ...]:
    vals = tuple(_to_int(v) for v in _split(val))
    if not vals:
        raise ValueError('empty list')
    return vals


def float_grid(text: str) -> Tuple[float, ...]:
    """
    Inclusive range 'start:stop:step'.
    """
    parts = [p.strip() for p in text.split(':')]
    if len(parts) != 3:
        raise ValueError(f'expected start:stop:step (got {text!r})')
    start, stop, step = (_to_float(p) for p in parts)
    if step <= 0.0 or stop < start:
        raise ValueError(f'invalid range {text!r}')
    count = (stop - start) / step
    if abs(count - round(count)) > 1e-9 * max(1.0, count):
        raise ValueError(f'step does not divide the range {text!r}')
    return tuple(round(start + i * step, 12) for i in range(int(round(count)) + 1))


def _to_float_grid(val: Any) -> Tuple[float, ...]:
    # comma separated values and start:stop:step ranges may be mixed
    vals: List[float] = []
    for part in _split(val):
        if isinstance(part, str) and ':' in part:
            vals.extend(float_grid(part))
        else:
            vals.append(_to_float(part))
    if not vals:
        raise ValueError('empty list')
    return tuple(vals)


def _to_optional_float_grid(val: Any) -> Tuple[float, ...] | None:
    if val is None or (isinstance(val, str) and val.strip() in ('', 'auto')):
        return None
    return _to_float_grid(val)


def _to_optional_float(val: Any) -> float | None:
    if val is None or (isinstance(val, str) and val.strip() in ('', 'auto')):
        return None
    return _to_float(val)


@dataclass(frozen=True)
class ConfKey:
    convert: Callable[[Any], Any]
    default: Any
    choices: Tuple[str, ...] | None = None
    minimum: float | None = None


def _to_choice(val: Any) -> str:
    return str(val).strip().lower()


SCHEMA: Dict[str, Dict[str, ConfKey]] = {
    'run': {
        'jobs': ConfKey(_to_int, 0, minimum=0),
        'seed': ConfKey(_to_int, 0, minimum=0),
        'out': ConfKey(_to_str_or_none, 'ghzenc_out'),
        'cache': ConfKey(_to_str_or_none, None),
        'log_level': ConfKey(_to_choice, 'info', choices=('debug', 'info', 'warning', 'error')),
    },
    'encode': {
        'n': ConfKey(_to_int, 64, minimum=1),
        'theta': ConfKey(_to_float, 1.0, minimum=0.0),
        'tau1': ConfKey(_to_float, 0.0, minimum=0.0),
        'tau2': ConfKey(_to_float, 0.0, minimum=0.0),
        'tau3': ConfKey(_to_optional_float, None, minimum=0.0),
        'mode': ConfKey(_to_choice, 'reduced', choices=('reduced', 'two_branch')),
        'protocol': ConfKey(_to_choice, 'original', choices=('original', 'rewritten')),
        'husimi': ConfKey(_to_bool, False),
    },
    'husimi': {
        'n_polar': ConfKey(_to_int, 128, minimum=2),
        'n_azimuth': ConfKey(_to_int, 256, minimum=1),
        'format': ConfKey(_to_choice, 'csv', choices=('csv', 'binary')),
        'difference': ConfKey(_to_bool, True),
    },
    'sweep': {
        'n': ConfKey(_to_int_list, (64,)),
        'theta': ConfKey(_to_float_grid, (1.0,)),
        'tau1': ConfKey(_to_float_grid, float_grid('0:0.15:0.005')),
        'tau2': ConfKey(_to_optional_float_grid, None),
        'tau2_half_width': ConfKey(_to_float, 0.02, minimum=0.0),
        'tau2_step': ConfKey(_to_float, 0.002, minimum=0.0),
        'tau2_c': ConfKey(_to_float, 2.0, minimum=0.0),
        'tau3_min': ConfKey(_to_float, 0.0, minimum=0.0),
        'tau3_max': ConfKey(_to_float, 0.15, minimum=0.0),
        'output': ConfKey(_to_str_or_none, 'sweep.csv'),
        'resume': ConfKey(_to_bool, True),
        'allow_out_of_range': ConfKey(_to_bool, False),
        'batch_size': ConfKey(_to_int, 16, minimum=1),
    },
    'optimize': {
        'n': ConfKey(_to_int_list, (64,)),
        'theta': ConfKey(_to_float_grid, (1.0,)),
        'tradeoff': ConfKey(_to_bool, False),
        'polarization': ConfKey(_to_bool, False),
    },
    'squeeze_scan': {
        'n': ConfKey(_to_int_list, (64, 128, 256, 512, 1024)),
        'tau': ConfKey(_to_float_grid, float_grid('0:0.25:0.0025')),
        'collapse': ConfKey(_to_bool, True),
    },
    'disorder': {
        'n': ConfKey(_to_int, 12, minimum=2),
        'delta': ConfKey(_to_float, 0.1, minimum=0.0),
        'realizations': ConfKey(_to_int, 5, minimum=1),
        'theta': ConfKey(_to_float, 1.0, minimum=0.0),
        'tau1': ConfKey(_to_optional_float, None, minimum=0.0),
        'tau2': ConfKey(_to_optional_float, None, minimum=0.0),
        'tau3': ConfKey(_to_optional_float, None, minimum=0.0),
        'tau3_mode': ConfKey(_to_choice, 'reuse', choices=('reuse', 'reoptimize')),
        'all_twists': ConfKey(_to_bool, False),
    },
    'baseline': {
        'n': ConfKey(_to_int_list, (64,)),
    },
}


def _check_range(key: str, spec: ConfKey, val: Any) -> None:
    if spec.choices is not None and val not in spec.choices:
        raise GhzConfigException(f'{key}: {val!r} is not one of {", ".join(spec.choices)}.')
    if spec.minimum is None or val is None:
        return
    for v in (val if isinstance(val, tuple) else (val,)):
        if v < spec.minimum:
            raise GhzConfigException(f'{key}: {v} is below the minimum of {spec.minimum}.')


def _split_key(key: str) -> Tuple[str, str]:
    section, sep, name = key.partition('.')
    if not sep or section not in SCHEMA:
        raise GhzConfigException(f'Unknown configuration section in key {key!r} '
                                 f'(known sections: {", ".join(SCHEMA)}).')
    if name not in SCHEMA[section]:
        raise GhzConfigException(f'Unknown configuration key {key!r} in section [{section}].')
    return section, name


# ----------------------------------------------------------------------------------------------------------------------
class RunConfig(object):
    """
    Configuration of one ghzenc run.

    Creation is a two-step process: (1) key/value pairs ('section.key') can be set programmatically, e.g. from
    command line flags. (2) parse_config() fills in the remaining keys from the optional ini file and then from the
    built-in defaults, converts and validates all values. Values set programmatically always take precedence over
    values from the ini file.
    """

    def __init__(self, ini_file: str | None = None) -> None:
        """
        Constructor.

        Args:
            ini_file: Optional ini file. If given, it must exist.
        """
        self._conf: Dict[str, Any] = {}
        self._parsed = False
        self._ini_file = ini_file

    @property
    def ini_file(self) -> str | None:
        return self._ini_file

    def set(self, key: str, val: Any) -> None:
        _split_key(key)
        self._conf[key] = val
        if self._parsed:
            self._convert(key)

    def get(self, key: str) -> Any:
        _split_key(key)
        return self._conf[key] if key in self._conf.keys() else None

    def __getitem__(self, key: str) -> Any:
        return self.get(key)

    def __setitem__(self, key: str, value: Any) -> None:
        self.set(key, value)

    def section(self, name: str) -> Dict[str, Any]:
        if name not in SCHEMA:
            raise GhzConfigException(f'Unknown configuration section [{name}].')
        return {k: self.get(f'{name}.{k}') for k in SCHEMA[name]}

    def _read_ini(self) -> Dict[str, str]:
        if self._ini_file is None:
            log.info('No config file given; using defaults and command line values.')
            return {}
        if not os.path.exists(self._ini_file):
            raise GhzConfigException(f'Config file {self._ini_file} does not exist.')
        ini = configparser.ConfigParser()
        try:
            ini.read(self._ini_file)
        except configparser.Error as ex:
            raise GhzConfigException(f'Unable to parse {self._ini_file}: {ex}') from None
        values = {}
        for section in ini.sections():
            for name, val in ini[section].items():
                key = f'{section}.{name}'
                _split_key(key)
                values[key] = val
        return values

    def _convert(self, key: str) -> None:
        section, name = _split_key(key)
        spec = SCHEMA[section][name]
        raw = self._conf[key]
        try:
            val = None if raw is None and spec.default is None else spec.convert(raw)
        except (TypeError, ValueError) as ex:
            raise GhzConfigException(f'{key}: invalid value {raw!r} ({ex}).') from None
        _check_range(key, spec, val)
        self._conf[key] = val

    def parse_config(self, force_reparse: bool = False, silent: bool = False) -> None:
        """
        Resolves every configuration key: programmatically set values first, then the ini file, then defaults.

        Args:
            force_reparse: Re-read the ini file even if parsing has already been performed.
            silent: Do not log the resolved configuration.
        """
        if self._parsed and not force_reparse:
            return

        # only copy items from ini to in-memory config which are not already present (i.e., set programmatically)
        for k, v in self._read_ini().items():
            if k not in self._conf.keys():
                self._conf[k] = v
        for section, keys in SCHEMA.items():
            for name, spec in keys.items():
                key = f'{section}.{name}'
                if key not in self._conf.keys():
                    self._conf[key] = spec.default
                self._convert(key)
        self._parsed = True

        if not silent:
            log.info(f'{"work directory:":25} {os.getcwd()}')
            log.info(f'{"config file:":25} {self._ini_file}')
            log.info(f'{"jobs:":25} {self.jobs}')

    @property
    def jobs(self) -> int:
        jobs = self.get('run.jobs') or 0
        return jobs if jobs > 0 else (psutil.cpu_count() or 1)

    def config_hash(self, *sections: str) -> str:
        """
        Hash of the resolved values that determine the artifacts of a command (run seed plus the command's sections).
        Parallelism, output and cache locations do not enter the hash.
        """
        self.parse_config(silent=True)
        items = {f'{s}.{k}': v for s in sections for k, v in self.section(s).items()}
        items['run.seed'] = self.get('run.seed')
        return stable_hash({k: v for k, v in items.items() if k not in HASH_EXCLUDED})

    def dump(self, section: str) -> None:
        for name, val in self.section(section).items():
            GhzConf.log(f'{section}.{name}', val)


# ----------------------------------------------------------------------------------------------------------------------
class GhzConf(object):
    """
    Global, static configuration used by the command line front end and the shared test fixtures.
    """
    conf = RunConfig()

    class keys(object):
        # run-wide settings
        jobs: str = 'run.jobs'
        seed: str = 'run.seed'
        out: str = 'run.out'
        cache: str = 'run.cache'
        log_level: str = 'run.log_level'

        # single protocol run
        encode_n: str = 'encode.n'
        encode_theta: str = 'encode.theta'
        encode_tau1: str = 'encode.tau1'
        encode_tau2: str = 'encode.tau2'
        encode_tau3: str = 'encode.tau3'
        encode_mode: str = 'encode.mode'
        encode_husimi: str = 'encode.husimi'

        # sweeps and optimization
        sweep_n: str = 'sweep.n'
        sweep_output: str = 'sweep.output'
        optimize_n: str = 'optimize.n'
        optimize_theta: str = 'optimize.theta'
        squeeze_n: str = 'squeeze_scan.n'
        baseline_n: str = 'baseline.n'

        # disorder study
        disorder_n: str = 'disorder.n'
        disorder_delta: str = 'disorder.delta'
        disorder_realizations: str = 'disorder.realizations'

    @staticmethod
    def use(conf: RunConfig) -> None:
        GhzConf.conf = conf

    @staticmethod
    def set(key: str, val: Any) -> None:
        """See :func:`RunConfig.set`."""
        GhzConf.conf.set(key, val)

    @staticmethod
    def get(key: str) -> Any:
        """See :func:`RunConfig.get`."""
        return GhzConf.conf.get(key)

    @staticmethod
    def parse_config(force_reparse: bool = False) -> None:
        """See :func:`RunConfig.parse_config`."""
        GhzConf.conf.parse_config(force_reparse)

    @staticmethod
    def log(key, val):
        """
        Logs key value pairs and indents values to a pre-defined (fixed) level.
        """
        key += ':'
        log.info(f'{key:25} {val}')
