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

import json

import numpy as np
import pytest

import ghzenc.optimizer as optimizer
from ghzenc.analysis import tau2_predictor
from ghzenc.ghzexceptions import GhzNumericException
from ghzenc.optimizer import (SWEEP_CSV_HEADER, ProtocolEvaluator, SweepRow, SweepSpec, SweepTable, Tau2Window,
                              optimize_full, optimize_tau3, optimized_state, polarization_scan, run_sweep,
                              theta_tradeoff)
from ghzenc.protocol import ProtocolEngine, ProtocolParams, fidelity_report


def _engine_epsilon(n: int, theta: float, tau1: float, tau2: float, tau3: float) -> float:
    trace = ProtocolEngine(n).run(ProtocolParams(n, theta, tau1, tau2, tau3))
    return fidelity_report(trace).epsilon_reduced


def _small_spec(output: str | None, **kwargs) -> SweepSpec:
    return SweepSpec(n_values=(16,), theta=(1.0,), tau1=(0.0, 0.05, 0.1), tau2=(0.05, 0.1), output=output, **kwargs)


def _read(path: str) -> str:
    with open(path, 'r') as f:
        return f.read()


class TestTau3Search(object):

    def test_matches_engine(self, store):
        n, theta, tau1, tau2 = 32, 1.0, 0.05, 0.08
        res = ProtocolEvaluator(n).optimize_tau3(theta, tau1, tau2)
        assert res.epsilon <= res.coarse_epsilon, 'refinement must never worsen the grid optimum'
        assert res.epsilon == pytest.approx(_engine_epsilon(n, theta, tau1, tau2, res.tau3), abs=1e-10)

    def test_beats_brute_force_grid(self, store):
        n, theta, tau1, tau2 = 24, 1.5, 0.03, 0.1
        tau3, eps = optimize_tau3(n, theta, tau1, tau2)
        brute = min(_engine_epsilon(n, theta, tau1, tau2, t) for t in np.linspace(0.0, 0.15, 76))
        assert 0.0 <= tau3 <= 0.15
        assert eps <= brute + 1e-12

    def test_epsilon_curve(self, store):
        evaluator = ProtocolEvaluator(20)
        prefinal = evaluator.prefinal(1.0, 0.04, 0.06)
        taus = np.array([0.0, 0.02, 0.07])
        curve = evaluator.epsilon_curve(prefinal, taus)
        expected = [_engine_epsilon(20, 1.0, 0.04, 0.06, t) for t in taus]
        assert np.allclose(curve, expected, atol=1e-10)

    def test_separated_state_memoized(self, store):
        evaluator = ProtocolEvaluator(16)
        a = evaluator.prefinal(1.0, 0.05, 0.05)
        b = evaluator.prefinal(1.0, 0.05, 0.07)
        assert not np.allclose(a, b)
        assert evaluator._separated.cache_info().hits == 1

    @pytest.mark.slow
    def test_snapshot(self, store, snapshot_params):
        p = snapshot_params
        tau3, eps = optimize_tau3(p.n_qubits, p.theta, p.tau1, p.tau2)
        assert tau3 == pytest.approx(0.0357, abs=0.003)
        assert eps <= 1e-3

    @pytest.mark.slow
    @pytest.mark.parametrize('n', [256, 512])
    def test_tau3_decreases_with_theta(self, store, n):
        tau3 = {theta: optimize_full(n, theta).tau3 for theta in (1.0, 2.0)}
        assert tau3[2.0] <= tau3[1.0]


class TestSweepSpec(object):

    def test_tau2_window(self):
        window = Tau2Window()
        grid = window.grid(512, 1.5)
        center = tau2_predictor(512, 1.5)
        assert len(grid) == 21
        assert grid == tuple(sorted(grid))
        assert grid[10] == pytest.approx(center, abs=1e-12)
        assert grid[1] - grid[0] == pytest.approx(0.002, abs=1e-12)

    def test_tau2_window_clipped(self):
        # tiny theta pushes the predictor above the default range
        grid = Tau2Window().grid(16, 0.01)
        assert max(grid) <= 0.15
        assert len(grid) < 21

    def test_cells(self):
        spec = _small_spec(None)
        cells = spec.cells()
        assert len(cells) == 6
        assert cells[0] == (16, 1.0, 0.0, 0.05)
        assert cells[-1] == (16, 1.0, 0.1, 0.1)

    @pytest.mark.parametrize('kwargs', [dict(n_values=()), dict(theta=()), dict(tau1=[]), dict(n_values=(2,)),
                                        dict(tau1=(0.2,)), dict(tau2=(0.0, 0.16)), dict(tau3_interval=(0.1, 0.05)),
                                        dict(batch_size=0)])
    def test_invalid(self, kwargs):
        args = dict(n_values=(16,), theta=(1.0,), tau1=(0.0,), tau2=(0.05,))
        args.update(kwargs)
        with pytest.raises(ValueError):
            SweepSpec(**args)

    def test_out_of_range_override(self):
        spec = SweepSpec(n_values=(16,), theta=(3.0,), tau1=(0.2,), tau2=(0.05,), allow_out_of_range=True)
        assert spec.cells() == [(16, 3.0, 0.2, 0.05)]

    def test_spec_hash(self):
        assert _small_spec('a.csv').spec_hash() == _small_spec('b.csv').spec_hash()
        assert _small_spec(None).spec_hash() != SweepSpec((16,), (1.0,), (0.0,), (0.05,)).spec_hash()


class TestSweep(object):

    def test_table(self, store, tmp_path):
        out = str(tmp_path / 'sweep.csv')
        table = run_sweep(_small_spec(out))
        assert table.complete
        assert table.completed == list(range(6))
        assert table.factorizations <= 2, 'one factorization per generator and N'
        assert all(0.0 <= row.epsilon <= 1.0 for row in table.ordered_rows())
        lines = _read(out).splitlines()
        assert lines[0].startswith('# ghzenc')
        assert lines[1] == SWEEP_CSV_HEADER
        assert len(lines) == 8
        ckpt = json.loads(_read(out + '.checkpoint.json'))
        assert ckpt['completed'] == list(range(6))
        assert ckpt['spec_hash'] == table.spec.spec_hash()

    def test_rows_match_tau3_search(self, store):
        table = run_sweep(_small_spec(None))
        row = table.rows[3]
        tau3, eps = optimize_tau3(16, row.theta, row.tau1, row.tau2)
        assert (row.tau3, row.epsilon) == (tau3, eps)

    def test_parallel_determinism(self, store, tmp_path):
        a = run_sweep(_small_spec(str(tmp_path / 'a.csv')), jobs=1, config_hash='x')
        b = run_sweep(_small_spec(str(tmp_path / 'b.csv'), batch_size=1), jobs=4, config_hash='x')
        assert a.csv_text('x') == b.csv_text('x')
        assert _read(str(tmp_path / 'a.csv')) == _read(str(tmp_path / 'b.csv'))

    def test_resume_partial(self, store, tmp_path, monkeypatch):
        full = str(tmp_path / 'full.csv')
        run_sweep(_small_spec(full))

        out = str(tmp_path / 'partial.csv')
        spec = _small_spec(out)
        reference = run_sweep(_small_spec(None))
        partial = SweepTable(spec, {i: reference.rows[i] for i in (0, 1)}, 6)
        optimizer._write_checkpoint(partial, None)

        calls = []
        orig = optimizer._evaluate_cell

        def _counting(evaluators, cell, interval):
            calls.append(cell)
            return orig(evaluators, cell, interval)

        monkeypatch.setattr(optimizer, '_evaluate_cell', _counting)
        table = run_sweep(spec)
        assert len(calls) == 4, 'only the missing rows may be computed'
        assert table.complete
        assert _read(out) == _read(full)

    def test_rerun_completed(self, store, tmp_path, monkeypatch):
        out = str(tmp_path / 'sweep.csv')
        run_sweep(_small_spec(out))
        first = _read(out)
        monkeypatch.setattr(optimizer, '_evaluate_cell', lambda *a: pytest.fail('nothing left to compute'))
        run_sweep(_small_spec(out))
        assert _read(out) == first

    def test_foreign_checkpoint_ignored(self, store, tmp_path):
        out = str(tmp_path / 'sweep.csv')
        run_sweep(SweepSpec((16,), (1.0,), (0.0,), (0.05,), output=out))
        table = run_sweep(_small_spec(out))
        assert table.complete
        assert len(_read(out).splitlines()) == 8

    def test_no_resume(self, store, tmp_path, monkeypatch):
        out = str(tmp_path / 'sweep.csv')
        run_sweep(_small_spec(out))
        calls = []
        orig = optimizer._evaluate_cell
        monkeypatch.setattr(optimizer, '_evaluate_cell', lambda *a: calls.append(a) or orig(*a))
        run_sweep(_small_spec(out, resume=False))
        assert len(calls) == 6

    def test_factorization_budget(self, store):
        table = run_sweep(SweepSpec((8, 12), (1.0,), (0.0,), (0.05,)))
        assert table.factorizations == 4

    def test_budget_violation(self, store, monkeypatch):
        counts = iter([0, 99])
        monkeypatch.setattr(store, 'factorization_count', lambda n=None: next(counts))
        with pytest.raises(GhzNumericException):
            run_sweep(SweepSpec((8,), (1.0,), (0.0,), (0.05,)))

    def test_best(self, store):
        table = run_sweep(_small_spec(None))
        best = table.best(16, 1.0)
        assert best.epsilon == min(r.epsilon for r in table.ordered_rows())
        with pytest.raises(ValueError):
            table.best(32)

    def test_row_parsing(self):
        row = SweepRow(16, 1.0, 0.05, 0.1, 0.03, 1.5e-3, 0.12)
        assert SweepRow.from_csv_line(row.csv_line()).matches((16, 1.0, 0.05, 0.1))
        with pytest.raises(ValueError):
            SweepRow.from_csv_line('16,1.0,0.05')


class TestOptimizeFull(object):

    def test_small_n(self, store):
        res = optimize_full(24, 1.0)
        assert res.epsilon <= res.coarse_epsilon
        assert 0.0 <= res.tau1 <= 0.15 and 0.0 <= res.tau2 <= 0.15 and 0.0 <= res.tau3 <= 0.15
        assert res.evaluations >= 31 * 21
        eps = fidelity_report(ProtocolEngine(24).run(res.params)).epsilon_reduced
        assert eps == pytest.approx(res.epsilon, abs=1e-10)
        assert optimized_state(res).norm_drift() < 1e-9
        assert res.as_row().total_time == pytest.approx(res.total_time)

    def test_parallel_determinism(self, store):
        assert optimize_full(16, 1.5, jobs=1) == optimize_full(16, 1.5, jobs=3)

    @pytest.mark.slow
    def test_large_n(self, store):
        res = optimize_full(1024, 2.0)
        assert res.epsilon <= 1e-3
        assert abs(res.tau2 - tau2_predictor(1024, 2.0)) <= 0.01


class TestTradeoffs(object):

    def test_needs_two_thetas(self, store):
        with pytest.raises(ValueError):
            theta_tradeoff(16, [1.0])

    def test_polarization_scan(self, store):
        points = polarization_scan([12, 16], 1.0)
        assert [p.n_qubits for p in points] == [12, 16]
        assert all(p.polarization_error >= 0.0 and 0.0 <= p.epsilon <= 1.0 for p in points)

    @pytest.mark.slow
    def test_epsilon_decays_with_theta(self, store):
        thetas = [1.0, 1.25, 1.5, 1.75, 2.0]
        fit = theta_tradeoff(512, thetas, jobs=4)
        eps = [r.epsilon for r in fit.results]
        assert all(a > b for a, b in zip(eps, eps[1:])), f'optimized epsilon should fall with theta: {eps}'
        assert fit.slope < 0.0
        assert fit.r_squared >= 0.9, f'ln(epsilon) vs theta is not linear enough (R^2 = {fit.r_squared:.3f})'

    @pytest.mark.slow
    def test_polarization_error_falls_with_n(self, store):
        points = polarization_scan([128, 256, 512, 1024], 2.0, jobs=4)
        errors = [p.polarization_error for p in points]
        assert all(a > b for a, b in zip(errors, errors[1:])), f'polarization error should fall with N: {errors}'
