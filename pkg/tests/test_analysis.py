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

import math

import numpy as np
import pytest

from ghzenc.analysis import (DickeTailProfile, dicke_tail, golden_refine, polarization_bound, polarization_error,
                             squeeze_collapse, squeeze_scan, tail_decay_rate, tail_is_geometric, tau2_predictor,
                             variance, write_squeeze_csv, z_expectation)
from ghzenc.dicke import DickeSpace, DickeVector, dicke_state
from ghzenc.optimizer import optimize_full, optimized_state
from ghzenc.protocol import ProtocolEngine

SQUEEZE_GRID = np.linspace(0.0, 0.25, 101)


def _random_state(n: int, seed: int) -> DickeVector:
    rng = np.random.default_rng(seed)
    amps = rng.normal(size=n + 1) + 1j * rng.normal(size=n + 1)
    return DickeVector(DickeSpace(n), amps / np.linalg.norm(amps))


def _cat_state(n: int) -> DickeVector:
    amps = np.zeros(n + 1, dtype=np.complex128)
    amps[0] = amps[n] = 1.0 / math.sqrt(2.0)
    return DickeVector(DickeSpace(n), amps)


def _geometric_state(n: int, ratio: float) -> DickeVector:
    probs = ratio ** np.arange(n + 1, dtype=np.float64)
    return DickeVector(DickeSpace(n), np.sqrt(probs / probs.sum()))


class TestDickeTail(object):

    def test_north_pole(self):
        profile = dicke_tail(dicke_state(DickeSpace(16), 0))
        assert np.allclose(profile.cumulative, 1.0)
        assert np.all(profile.tail == 0.0)
        assert profile.n_qubits == 16

    def test_cat_state(self):
        n = 10
        profile = dicke_tail(_cat_state(n))
        assert np.allclose(profile.cumulative[:n], 0.5)
        assert profile.cumulative[n] == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize('seed', [1, 2, 3])
    def test_random_states_monotone(self, seed):
        profile = dicke_tail(_random_state(40, seed))
        assert np.all(np.diff(profile.cumulative) >= -1e-15), 'cumulative profile must be nondecreasing'
        assert abs(profile.cumulative[-1] - 1.0) < 1e-9
        assert np.allclose(profile.cumulative + profile.tail, 1.0, atol=1e-12)

    def test_decay_ratios(self):
        profile = dicke_tail(_geometric_state(20, 0.25))
        ratios = profile.decay_ratios(1, 6)
        assert len(ratios) == 5
        assert np.allclose(ratios, 0.25, rtol=1e-6)
        assert tail_is_geometric(profile, 0.5)
        assert not tail_is_geometric(profile, 0.2)

    def test_zero_tail_ratio(self):
        assert np.all(dicke_tail(dicke_state(DickeSpace(8), 0)).decay_ratios() == 0.0)

    def test_parity_alternating_tail(self):
        tail = np.cumprod([1.0, 0.8, 0.2, 0.8, 0.2, 0.8, 0.2, 0.8])
        profile = DickeTailProfile(1.0 - tail, tail)
        assert np.any(profile.decay_ratios(1, 6) > 0.5)
        assert tail_decay_rate(profile, 1, 6) == pytest.approx(-0.9757, abs=1e-3)
        assert tail_is_geometric(profile, 0.5), 'the fitted trend halves per excitation'
        assert tail_decay_rate(dicke_tail(dicke_state(DickeSpace(8), 0))) == -math.inf

    def test_csv(self):
        text = dicke_tail(dicke_state(DickeSpace(3), 1)).csv_text('abc')
        lines = text.splitlines()
        assert lines[0].startswith('#') and 'abc' in lines[0]
        assert lines[1] == 'k,cumulative,tail'
        assert len(lines) == 6


class TestPolarization(object):

    def test_north_pole(self):
        assert polarization_error(dicke_state(DickeSpace(32), 0)) == 0.0

    @pytest.mark.parametrize('n', [4, 32, 100])
    def test_single_excitation(self, n):
        state = dicke_state(DickeSpace(n), 1)
        assert polarization_error(state) == pytest.approx(2.0 / n, rel=1e-14)
        assert z_expectation(state) == pytest.approx(n - 2.0, rel=1e-14)

    def test_bound_on_geometric_tail(self):
        state = _geometric_state(64, 0.3)
        deficit, bound, geometric = polarization_bound(state)
        assert geometric
        assert deficit <= bound, 'N - <Z> <= 4 eps must hold for a halving tail'
        assert deficit == pytest.approx(state.n_qubits - z_expectation(state), abs=1e-12)

    def test_bound_not_claimed_for_cat(self):
        deficit, bound, geometric = polarization_bound(_cat_state(8))
        assert not geometric
        assert deficit > bound


class TestVariance(object):

    @pytest.mark.parametrize('which', ['X', 'Y'])
    def test_transverse_north_pole(self, store, which):
        n = 50
        assert variance(dicke_state(DickeSpace(n), 0), which) == pytest.approx(math.sqrt(n), rel=1e-12)

    @pytest.mark.parametrize('k', [0, 3, 7])
    def test_z_eigenstates(self, store, k):
        assert variance(dicke_state(DickeSpace(7), k), 'z') == pytest.approx(0.0, abs=1e-12)

    def test_unknown_operator(self, store):
        with pytest.raises(ValueError):
            variance(dicke_state(DickeSpace(4), 0), 'W')


class TestSqueezeScan(object):

    def test_start_value_and_single_factorization(self, store):
        n = 256
        scan = squeeze_scan(n, SQUEEZE_GRID)
        assert scan.y_var[0] == pytest.approx(n, abs=1e-8)
        assert scan.factorizations == 1, 'all grid points must share one H_TAT factorization'
        assert store.factorization_count(n) == 1
        assert scan.interior
        assert scan.y_var_min <= scan.y_var.min() + 1e-12
        assert 0.0 < scan.tau_min < 0.25

    def test_cache_reused_by_second_scan(self, store):
        squeeze_scan(64, SQUEEZE_GRID)
        scan = squeeze_scan(64, SQUEEZE_GRID[::2])
        assert scan.factorizations == 0

    @pytest.mark.parametrize('grid', [np.linspace(0.0, 0.25, 20), np.linspace(0.0, 0.3, 60),
                                      np.linspace(0.25, 0.0, 60)])
    def test_invalid_grid(self, store, grid):
        with pytest.raises(ValueError):
            squeeze_scan(16, grid)

    @pytest.mark.slow
    @pytest.mark.parametrize('n', [512, 1024, 2048])
    def test_minimum_location(self, store, n):
        scan = squeeze_scan(n, SQUEEZE_GRID)
        assert 0.115 <= scan.tau_min <= 0.135, f'tau_min={scan.tau_min} at N={n}'

    @pytest.mark.slow
    @pytest.mark.parametrize('n', [256, 512, 1024, 2048])
    def test_extreme_squeezing_band(self, store, n):
        scan = squeeze_scan(n, SQUEEZE_GRID)
        assert 0.5 <= scan.delta_y_min <= 5.0, f'dY={scan.delta_y_min} at N={n}'

    def test_collapse_and_csv(self, store, tmp_path):
        scans = [squeeze_scan(n, SQUEEZE_GRID) for n in (32, 64)]
        rows = squeeze_collapse(scans)
        assert len(rows) == 2 * len(SQUEEZE_GRID)
        n, shift, dy = rows[0]
        assert n == 32
        assert shift == pytest.approx(-scans[0].tau_min)
        assert dy == pytest.approx(math.sqrt(32) / math.log(32), rel=1e-8)

        path = str(tmp_path / 'squeeze.csv')
        write_squeeze_csv(path, scans, 'cafe')
        with open(path) as f:
            lines = f.read().splitlines()
        assert lines[1] == 'tau,y_var,N'
        assert len(lines) == 2 + 2 * len(SQUEEZE_GRID)


class TestTau2Predictor(object):

    def test_reference_value(self):
        assert tau2_predictor(1024, 2.0) == pytest.approx(0.1103, abs=1e-4)
        assert abs(tau2_predictor(1024, 2.0) - 0.111) < 0.005

    def test_decreasing_in_theta(self):
        vals = [tau2_predictor(512, theta) for theta in (0.5, 1.0, 1.5, 2.0)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_large_theta_limit(self):
        assert tau2_predictor(64, 2.0 * 64) <= 0.0

    @pytest.mark.parametrize('n, theta', [(2, 1.0), (64, 0.0), (64, -1.0)])
    def test_invalid(self, n, theta):
        with pytest.raises(ValueError):
            tau2_predictor(n, theta)


class TestGoldenRefine(object):

    def test_parabola(self):
        x, f = golden_refine(lambda t: (t - 0.3) ** 2 + 1.0, 0.0, 0.25, 1.0, 1e-6)
        assert x == pytest.approx(0.3, abs=1e-5)
        assert f == pytest.approx(1.0, abs=1e-9)

    def test_no_bracket(self):
        assert golden_refine(lambda t: t, 0.0, 0.5, 1.0, 1e-6) is None
        assert golden_refine(lambda t: 1.0, 0.0, 0.5, 1.0, 1e-6) is None


@pytest.mark.slow
class TestOptimizedTail(object):

    def test_exponential_tail(self, store):
        state = optimized_state(optimize_full(512, 2.0, jobs=4))
        profile = dicke_tail(state)
        factor = math.exp(-tail_decay_rate(profile, 1, 6))
        assert factor >= 2.0, f'tail should at least halve per excitation (fitted factor {factor:.3f})'
        assert tail_is_geometric(profile, 0.5, 1, 6)

    def test_snapshot_tail_decays(self, store, snapshot_params):
        profile = dicke_tail(ProtocolEngine(snapshot_params.n_qubits).run(snapshot_params).final)
        assert np.all(np.diff(np.log(profile.tail[1:11])) < 0.0), 'tail beyond D_0 should decay with k'
