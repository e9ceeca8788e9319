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

import glob
import json
import os

import pytest

import ghzenc.cli as cli
from ghzenc import __version__
from ghzenc.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, build_parser, config_from_args, main
from ghzenc.dicke import HusimiGrid

ENCODE_ARGS = ['--n', '16', '--theta', '1.0', '--set', 'encode.tau1=0.05', '--set', 'encode.tau2=0.1',
               '--set', 'encode.tau3=0.03', '--set', 'husimi.n_polar=8', '--set', 'husimi.n_azimuth=16']


@pytest.fixture(scope='function')
def out_dir(store, run_config, tmp_path) -> str:
    return str(tmp_path / 'cli_out')


def _run(capsys, *argv) -> dict:
    assert main(list(argv)) == EXIT_OK
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def _lines(path: str) -> list:
    with open(path, 'r') as f:
        return f.read().splitlines()


class TestArguments(object):

    def test_flags_become_config(self, tmp_path):
        args = build_parser().parse_args(['sweep', '--n', '32,64', '--jobs', '2', '--out', str(tmp_path),
                                          '--set', 'sweep.resume=false'])
        conf = config_from_args(args)
        assert conf.get('sweep.n') == (32, 64)
        assert conf.get('run.jobs') == 2
        assert conf.get('sweep.resume') is False

    def test_flags_win_over_ini(self, tmp_path):
        ini = tmp_path / 'run.ini'
        ini.write_text('[encode]\nn = 24\ntheta = 0.5\n')
        conf = config_from_args(build_parser().parse_args(['encode', '--config', str(ini), '--n', '12']))
        assert conf.get('encode.n') == 12
        assert conf.get('encode.theta') == 0.5

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args(['--version'])
        assert exc.value.code == 0
        assert __version__ in capsys.readouterr().out

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            main(['teleport'])
        assert exc.value.code == EXIT_CONFIG


class TestExitCodes(object):

    def test_unknown_key(self, out_dir):
        assert main(['encode', '--out', out_dir, '--set', 'encode.bogus=1']) == EXIT_CONFIG

    def test_bad_value(self, out_dir):
        assert main(['encode', '--out', out_dir, '--set', 'encode.mode=sideways']) == EXIT_CONFIG

    def test_malformed_set(self, out_dir):
        assert main(['encode', '--out', out_dir, '--set', 'encode.n']) == EXIT_CONFIG

    def test_capacity(self, out_dir):
        assert main(['encode', '--out', out_dir, '--n', '5000', '--set', 'encode.tau3=0.0']) == EXIT_NUMERIC

    def test_invalid_sweep_sizes(self, out_dir):
        assert main(['sweep', '--out', out_dir, '--set', 'sweep.n=2', '--set', 'sweep.tau1=0.05']) == EXIT_CONFIG

    def test_short_squeeze_grid(self, out_dir):
        argv = ['squeeze-scan', '--out', out_dir, '--set', 'squeeze_scan.n=16', '--set', 'squeeze_scan.tau=0:0.1:0.01']
        assert main(argv) == EXIT_CONFIG

    def test_tradeoff_needs_two_thetas(self, out_dir):
        argv = ['optimize', '--out', out_dir, '--n', '12', '--set', 'optimize.tradeoff=true']
        assert main(argv) == EXIT_CONFIG

    def test_computation_value_error(self, out_dir, monkeypatch):
        def _fail(n):
            raise ValueError(f'no baseline for N={n}')

        monkeypatch.setattr(cli, 'cnot_baseline', _fail)
        assert main(['baseline', '--out', out_dir, '--n', '8']) == EXIT_NUMERIC, 'only config errors map to 2'

    @pytest.mark.parametrize('n', ['1', '2'])
    def test_smallest_sizes(self, out_dir, capsys, n):
        summary = _run(capsys, 'encode', '--out', out_dir, '--n', n, '--theta', '1.0')
        assert summary['N'] == int(n)
        assert 0.0 <= summary['epsilon'] <= 1.0


class TestCommands(object):

    def test_baseline(self, out_dir, capsys):
        summary = _run(capsys, 'baseline', '--out', out_dir, '--n', '64')
        assert summary['command'] == 'baseline'
        assert summary['version'] == __version__
        assert summary['baseline'][0]['epsilon'] <= 1e-10
        with open(os.path.join(out_dir, 'baseline_N64.json')) as f:
            doc = json.load(f)
        assert doc['config_hash'] == summary['config_hash']
        assert os.path.exists(os.path.join(out_dir, 'ghzenc.log'))

    def test_config_hash_ignores_jobs(self, out_dir, capsys):
        a = _run(capsys, 'baseline', '--out', out_dir, '--n', '8', '--jobs', '1')
        b = _run(capsys, 'baseline', '--out', out_dir, '--n', '8', '--jobs', '4')
        c = _run(capsys, 'baseline', '--out', out_dir, '--n', '8', '--seed', '3')
        assert a['config_hash'] == b['config_hash'] != c['config_hash']

    def test_encode_with_husimi(self, out_dir, capsys):
        summary = _run(capsys, 'encode', '--out', out_dir, '--husimi', *ENCODE_ARGS)
        assert summary['husimi'] == 7
        assert 0.0 <= summary['epsilon'] <= 1.0
        grids = sorted(glob.glob(os.path.join(out_dir, 'husimi_N16_stage*.csv')))
        assert len(grids) == 7
        assert os.path.basename(grids[0]) == 'husimi_N16_stage1_S_tau1.csv'
        with open(os.path.join(out_dir, 'encode_N16.json')) as f:
            report = json.load(f)
        assert report['tau3'] == 0.03
        assert report['epsilon'] == pytest.approx(summary['epsilon'])

    def test_encode_optimizes_tau3(self, out_dir, capsys):
        summary = _run(capsys, 'encode', '--out', out_dir, '--n', '16', '--set', 'encode.tau1=0.05',
                       '--set', 'encode.tau2=0.1')
        assert 0.0 <= summary['tau3'] <= 0.15

    def test_husimi_two_branch_binary(self, out_dir, capsys):
        summary = _run(capsys, 'husimi', '--out', out_dir, *ENCODE_ARGS, '--set', 'encode.mode=two_branch',
                       '--set', 'husimi.format=binary')
        paths = sorted(glob.glob(os.path.join(out_dir, '*.bin')))
        assert summary['grids'] == len(paths) == 14
        assert len([p for p in paths if p.endswith('_diff.bin')]) == 7
        with open(paths[0], 'rb') as f:
            assert HusimiGrid.from_binary(f.read()).resolution == (8, 16)

    def test_sweep(self, out_dir, capsys):
        argv = ['sweep', '--out', out_dir, '--n', '12', '--set', 'sweep.tau1=0:0.1:0.05',
                '--set', 'sweep.tau2=0.05,0.1']
        summary = _run(capsys, *argv)
        assert summary['rows'] == 6
        path = os.path.join(out_dir, 'sweep.csv')
        first = _lines(path)
        assert first[1] == 'N,theta,tau1,tau2,tau3,epsilon,T'
        assert len(first) == 8
        _run(capsys, *argv)
        assert _lines(path) == first

    def test_squeeze_scan(self, out_dir, capsys):
        summary = _run(capsys, 'squeeze-scan', '--out', out_dir, '--n', '32,64',
                       '--set', 'squeeze_scan.tau=0:0.25:0.005')
        assert set(summary['tau_min']) == {'32', '64'}
        assert len(_lines(os.path.join(out_dir, 'squeeze_scan.csv'))) == 2 + 2 * 51
        assert _lines(os.path.join(out_dir, 'squeeze_collapse.csv'))[1] == 'N,tau_shift,delta_y_over_lnN'

    def test_optimize(self, out_dir, capsys):
        summary = _run(capsys, 'optimize', '--out', out_dir, '--n', '12', '--theta', '1.0')
        assert len(summary['optima']) == 1
        assert len(_lines(os.path.join(out_dir, 'optimize.csv'))) == 3

    def test_disorder(self, out_dir, capsys):
        summary = _run(capsys, 'disorder', '--out', out_dir, '--n', '6', '--seed', '10',
                       '--set', 'disorder.realizations=3', '--set', 'disorder.tau1=0.05',
                       '--set', 'disorder.tau2=0.1', '--set', 'disorder.tau3=0.05')
        assert summary['rows'] == 3
        lines = _lines(os.path.join(out_dir, 'disorder_N6.csv'))
        assert len(lines) == 5
        assert [ln.split(',')[2] for ln in lines[2:]] == ['10', '11', '12']
        assert all(ln.split(',')[-1] == 'reuse' for ln in lines[2:])
