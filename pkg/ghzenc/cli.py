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

import argparse
import json
import logging
import os
import re
import sys
from typing import Any, Callable, Dict, List, Sequence, TypeVar

from ghzenc import __version__
from ghzenc.analysis import check_squeeze_grid, squeeze_collapse, squeeze_scan, write_squeeze_csv
from ghzenc.dicke import husimi, husimi_difference
from ghzenc.fullspace import disorder_ensemble, write_disorder_csv
from ghzenc.ghz_conf import GhzConf, RunConfig
from ghzenc.ghzexceptions import GhzCapacityException, GhzConfigException, GhzNumericException
from ghzenc.optimizer import (ProtocolEvaluator, SweepSpec, SweepTable, Tau2Window, optimize_full, polarization_scan,
                              run_sweep, theta_tradeoff)
from ghzenc.propagator import cache_store
from ghzenc.protocol import (ControlledState, ProtocolEngine, ProtocolParams, ProtocolTrace, cnot_baseline,
                             fidelity_report)
from ghzenc.utils import artifact_banner, fmt_float, log, log_setup, write_atomic

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

T = TypeVar('T')

# command -> config sections that determine its artifacts
COMMAND_SECTIONS: Dict[str, tuple] = {
    'encode': ('encode', 'husimi'),
    'husimi': ('encode', 'husimi'),
    'sweep': ('sweep',),
    'optimize': ('optimize',),
    'squeeze-scan': ('squeeze_scan',),
    'disorder': ('disorder',),
    'baseline': ('baseline',),
}

# section receiving the direct --n / --theta flags
PRIMARY_SECTION: Dict[str, str] = {
    'encode': 'encode',
    'husimi': 'encode',
    'sweep': 'sweep',
    'optimize': 'optimize',
    'squeeze-scan': 'squeeze_scan',
    'disorder': 'disorder',
    'baseline': 'baseline',
}


# ----------------------------------------------------------------------------------------------------------------------
def _out_path(conf: RunConfig, name: str) -> str:
    return os.path.join(conf.get('run.out'), name)


def _write_json(path: str, doc: Dict[str, Any]) -> None:
    write_atomic(path, json.dumps(doc, sort_keys=True, indent=2) + '\n')


def _stage_file(label: str) -> str:
    return re.sub(r'[^A-Za-z0-9]+', '_', label).strip('_')


def _checked(section: str, build: Callable[[], T]) -> T:
    # validation of command inputs built from the configuration; failures are configuration errors
    try:
        return build()
    except ValueError as ex:
        raise GhzConfigException(f'invalid [{section}] parameters: {ex}') from None


def _encode_params(conf: RunConfig) -> ProtocolParams:
    sec = conf.section('encode')
    params = _checked('encode', lambda: ProtocolParams(sec['n'], sec['theta'], sec['tau1'], sec['tau2'],
                                                       sec['tau3'] or 0.0))
    if sec['tau3'] is None:
        res = ProtocolEvaluator(sec['n']).optimize_tau3(params.theta, params.tau1, params.tau2)
        log.info(f'optimized tau3 = {res.tau3:.6f}')
        params = params.with_tau3(res.tau3)
    return params


def _encode_trace(conf: RunConfig) -> ProtocolTrace:
    sec = conf.section('encode')
    engine = ProtocolEngine(sec['n'])
    params = _encode_params(conf)
    if sec['protocol'] == 'rewritten':
        return engine.run_rewritten(params, sec['mode'])
    return engine.run(params, sec['mode'])


def _write_husimi_grids(conf: RunConfig, trace: ProtocolTrace, config_hash: str) -> List[str]:
    sec = conf.section('husimi')
    resolution = (sec['n_polar'], sec['n_azimuth'])
    n = trace.final.n_qubits
    ext = 'csv' if sec['format'] == 'csv' else 'bin'
    paths = []
    for i, (label, state) in enumerate(trace.checkpoints, start=1):
        grids = []
        if isinstance(state, ControlledState):
            grids.append(('', husimi(state.branch0, resolution)))
            if sec['difference']:
                grids.append(('_diff', husimi_difference(state.branch0, state.branch1, resolution)))
        else:
            grids.append(('', husimi(state, resolution)))
        for suffix, grid in grids:
            path = _out_path(conf, f'husimi_N{n}_stage{i}_{_stage_file(label)}{suffix}.{ext}')
            if ext == 'csv':
                grid.to_csv(path, config_hash)
            else:
                grid.save_binary(path)
            paths.append(path)
    return paths


# ----------------------------------------------------------------------------------------------------------------------
def cmd_encode(conf: RunConfig, config_hash: str) -> Dict[str, Any]:
    trace = _encode_trace(conf)
    report = fidelity_report(trace)
    path = _out_path(conf, f'encode_N{report.n_qubits}.json')
    write_atomic(path, report.to_json(config_hash))
    summary = {'epsilon': report.epsilon, 'T': report.time_budget.total, 'N': report.n_qubits,
               'tau3': report.params.tau3, 'report': path}
    if conf.get('encode.husimi'):
        summary['husimi'] = len(_write_husimi_grids(conf, trace, config_hash))
    return summary


def cmd_husimi(conf: RunConfig, config_hash: str) -> Dict[str, Any]:
    trace = _encode_trace(conf)
    paths = _write_husimi_grids(conf, trace, config_hash)
    return {'N': trace.final.n_qubits, 'grids': len(paths), 'format': conf.get('husimi.format')}


def _sweep_spec(conf: RunConfig) -> SweepSpec:
    sec = conf.section('sweep')
    output = None if sec['output'] is None else _out_path(conf, sec['output'])

    def _build() -> SweepSpec:
        tau2 = sec['tau2'] if sec['tau2'] is not None else Tau2Window(sec['tau2_half_width'], sec['tau2_step'],
                                                                      sec['tau2_c'])
        return SweepSpec(n_values=sec['n'], theta=sec['theta'], tau1=sec['tau1'], tau2=tau2,
                         tau3_interval=(sec['tau3_min'], sec['tau3_max']), output=output, resume=sec['resume'],
                         allow_out_of_range=sec['allow_out_of_range'], batch_size=sec['batch_size'])

    return _checked('sweep', _build)


def cmd_sweep(conf: RunConfig, config_hash: str) -> Dict[str, Any]:
    table: SweepTable = run_sweep(_sweep_spec(conf), conf.jobs, config_hash)
    best = table.best()
    return {'rows': len(table.rows), 'factorizations': table.factorizations, 'output': table.spec.output,
            'best': {'N': best.n_qubits, 'theta': best.theta, 'tau1': best.tau1, 'tau2': best.tau2,
                     'tau3': best.tau3, 'epsilon': best.epsilon}}


def cmd_optimize(conf: RunConfig, config_hash: str) -> Dict[str, Any]:
    sec = conf.section('optimize')
    if sec['tradeoff'] and len(sec['theta']) < 2:
        raise GhzConfigException('optimize.tradeoff needs at least two optimize.theta values.')
    results = [optimize_full(n, theta, conf.jobs) for n in sec['n'] for theta in sec['theta']]
    lines = [artifact_banner(config_hash), 'N,theta,tau1,tau2,tau3,epsilon,T']
    lines.extend(r.as_row().csv_line() for r in results)
    path = _out_path(conf, 'optimize.csv')
    write_atomic(path, '\n'.join(lines) + '\n')
    summary: Dict[str, Any] = {'optima': [{'N': r.n_qubits, 'theta': r.theta, 'epsilon': r.epsilon,
                                           'T': r.total_time} for r in results], 'output': path}

    if sec['tradeoff']:
        fits = {}
        for n in sec['n']:
            fit = theta_tradeoff(n, sec['theta'], conf.jobs)
            fits[str(n)] = {'slope': fit.slope, 'intercept': fit.intercept, 'r_squared': fit.r_squared}
        _write_json(_out_path(conf, 'theta_tradeoff.json'),
                    {'fits': fits, 'version': __version__, 'config_hash': config_hash})
        summary['tradeoff'] = fits

    if sec['polarization']:
        lines = [artifact_banner(config_hash), 'N,theta,epsilon,polarization_error']
        for theta in sec['theta']:
            for p in polarization_scan(sec['n'], theta, conf.jobs):
                lines.append(f'{p.n_qubits},{fmt_float(p.theta)},{fmt_float(p.epsilon)},'
                             f'{fmt_float(p.polarization_error)}')
        write_atomic(_out_path(conf, 'polarization.csv'), '\n'.join(lines) + '\n')
        summary['polarization'] = _out_path(conf, 'polarization.csv')
    return summary


def cmd_squeeze_scan(conf: RunConfig, config_hash: str) -> Dict[str, Any]:
    sec = conf.section('squeeze_scan')
    _checked('squeeze_scan', lambda: check_squeeze_grid(sec['tau']))
    scans = [squeeze_scan(n, sec['tau']) for n in sec['n']]
    path = _out_path(conf, 'squeeze_scan.csv')
    write_squeeze_csv(path, scans, config_hash)
    summary: Dict[str, Any] = {'tau_min': {str(s.n_qubits): s.tau_min for s in scans},
                               'delta_y_min': {str(s.n_qubits): s.delta_y_min for s in scans}, 'output': path}
    if sec['collapse']:
        lines = [artifact_banner(config_hash), 'N,tau_shift,delta_y_over_lnN']
        lines.extend(f'{n},{fmt_float(t)},{fmt_float(y)}' for n, t, y in squeeze_collapse(scans))
        write_atomic(_out_path(conf, 'squeeze_collapse.csv'), '\n'.join(lines) + '\n')
        summary['collapse'] = _out_path(conf, 'squeeze_collapse.csv')
    return summary


def cmd_disorder(conf: RunConfig, config_hash: str) -> Dict[str, Any]:
    sec = conf.section('disorder')
    n, theta = sec['n'], sec['theta']
    taus = (sec['tau1'], sec['tau2'], sec['tau3'])
    if any(t is None for t in taus):
        clean = optimize_full(n, theta, conf.jobs)
        taus = tuple(c if t is None else t for t, c in zip(taus, (clean.tau1, clean.tau2, clean.tau3)))
    params = _checked('disorder', lambda: ProtocolParams(n, theta, *taus))
    seeds = [conf.get('run.seed') + r for r in range(sec['realizations'])]
    reports = disorder_ensemble(params, sec['delta'], seeds, sec['tau3_mode'], sec['all_twists'], conf.jobs)
    path = _out_path(conf, f'disorder_N{n}.csv')
    write_disorder_csv(path, reports, config_hash)
    return {'N': n, 'delta': sec['delta'], 'rows': len(reports), 'tau3_mode': sec['tau3_mode'],
            'epsilon_mean': sum(r.epsilon for r in reports) / len(reports),
            'epsilon_clean': reports[0].epsilon_clean, 'leakage_max': max(r.leakage for r in reports),
            'output': path}


def cmd_baseline(conf: RunConfig, config_hash: str) -> Dict[str, Any]:
    rows = []
    for n in conf.get('baseline.n'):
        report = cnot_baseline(n)
        write_atomic(_out_path(conf, f'baseline_N{n}.json'), report.to_json(config_hash))
        rows.append({'N': n, 'epsilon': report.epsilon, 'T': report.time_budget.total})
    return {'baseline': rows}


COMMANDS: Dict[str, Callable[[RunConfig, str], Dict[str, Any]]] = {
    'encode': cmd_encode,
    'husimi': cmd_husimi,
    'sweep': cmd_sweep,
    'optimize': cmd_optimize,
    'squeeze-scan': cmd_squeeze_scan,
    'disorder': cmd_disorder,
    'baseline': cmd_baseline,
}


# ----------------------------------------------------------------------------------------------------------------------
class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f'{self.prog}: error: {message}\n')


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', metavar='PATH', help='ini file with run settings')
    common.add_argument('--out', metavar='DIR', help='output directory (run.out)')
    common.add_argument('--cache', metavar='DIR', help='spectral cache directory (run.cache)')
    common.add_argument('--jobs', metavar='K', type=int, help='worker threads, 0 = available cores (run.jobs)')
    common.add_argument('--seed', metavar='S', type=int, help='base seed (run.seed)')
    common.add_argument('--log-level', metavar='L', help='debug, info, warning or error (run.log_level)')
    common.add_argument('--set', metavar='SECTION.KEY=VALUE', action='append', default=[],
                        help='override a single configuration key')
    common.add_argument('--n', metavar='N', help='system size(s) of the command')
    common.add_argument('--theta', metavar='THETA', help='separation parameter(s) of the command')
    common.add_argument('--husimi', action='store_true', help='write per-stage Husimi grids (encode)')

    parser = _ArgumentParser(prog='ghzenc', description='Fast GHZ encoding on the Dicke manifold.')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True, parser_class=_ArgumentParser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=f'run the {name} command')
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """
    Builds the run configuration: flags are set programmatically and therefore win over the ini file.
    """
    conf = RunConfig(args.config)
    for flag, key in (('out', 'run.out'), ('cache', 'run.cache'), ('jobs', 'run.jobs'), ('seed', 'run.seed'),
                      ('log_level', 'run.log_level')):
        if getattr(args, flag) is not None:
            conf.set(key, getattr(args, flag))
    section = PRIMARY_SECTION[args.command]
    if args.n is not None:
        conf.set(f'{section}.n', args.n)
    if args.theta is not None:
        conf.set(f'{section}.theta', args.theta)
    if args.husimi:
        conf.set('encode.husimi', True)
    for item in args.set:
        key, sep, val = item.partition('=')
        if not sep:
            raise GhzConfigException(f'--set expects section.key=value (got {item!r}).')
        conf.set(key.strip(), val.strip())
    conf.parse_config(silent=True)
    return conf


def _setup_logging(conf: RunConfig) -> logging.Handler:
    log_setup(getattr(logging, conf.get('run.log_level').upper()))
    handler = logging.FileHandler(_out_path(conf, 'ghzenc.log'))
    handler.setFormatter(logging.Formatter('%(asctime)s [%(levelname)s] %(filename)s @%(lineno)d: %(message)s'))
    log.addHandler(handler)
    return handler


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = None
    try:
        conf = config_from_args(args)
        GhzConf.use(conf)
        os.makedirs(conf.get('run.out'), exist_ok=True)
        handler = _setup_logging(conf)
        log.info(f'ghzenc {__version__} command {args.command}')
        for section in ('run',) + COMMAND_SECTIONS[args.command]:
            conf.dump(section)
        cache_store().set_cache_dir(conf.get('run.cache'))
        config_hash = conf.config_hash(*COMMAND_SECTIONS[args.command])
        summary = COMMANDS[args.command](conf, config_hash)
        summary.update({'command': args.command, 'config_hash': config_hash, 'version': __version__})
        print(json.dumps(summary, sort_keys=True))
        return EXIT_OK
    except GhzConfigException as ex:
        log.error(f'configuration error: {ex}')
        print(f'ghzenc: configuration error: {ex}', file=sys.stderr)
        return EXIT_CONFIG
    except (GhzNumericException, GhzCapacityException) as ex:
        log.error(f'numeric error: {ex}')
        print(f'ghzenc: numeric error: {ex}', file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as ex:
        log.exception(f'computation failed: {ex}')
        print(f'ghzenc: computation failed: {ex}', file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as ex:
        log.error(f'I/O error: {ex}')
        print(f'ghzenc: I/O error: {ex}', file=sys.stderr)
        return EXIT_IO
    finally:
        if handler is not None:
            log.removeHandler(handler)
            handler.close()


if __name__ == '__main__':
    sys.exit(main())
