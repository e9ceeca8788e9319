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
import math

import numpy as np
import pytest
import scipy.linalg

from ghzenc.dicke import DickeSpace, DickeVector, build_collective_ops, dicke_state
from ghzenc.protocol import (STAGE_LABELS, Block, BlockKind, ControlledState, ProtocolEngine, ProtocolParams,
                             ProtocolTrace, branch_target_phase, cnot_baseline, fidelity_report, rewritten_protocol,
                             run_protocol, time_budget, worst_case_infidelity)


def _random_params(n: int, rng: np.random.Generator) -> ProtocolParams:
    return ProtocolParams(n, rng.uniform(0.0, 2.0), *rng.uniform(0.0, 0.15, size=3))


class TestBlocks(object):

    def test_rx_pi(self, store):
        out = ProtocolEngine(2).apply(Block(BlockKind.RX, math.pi), dicke_state(DickeSpace(2), 0))
        assert out.distance(dicke_state(DickeSpace(2), 2).scaled(-1.0)) < 1e-12, 'RX(pi)|D_0> should be -|D_2>'

    def test_oat_phase(self, store):
        phi = 0.9
        out = ProtocolEngine(4).apply(Block(BlockKind.O, phi), dicke_state(DickeSpace(4), 2))
        assert out.amplitude(2) == pytest.approx(1.0, abs=1e-15), 'Z eigenvalue 0 should give phase 1'
        out = ProtocolEngine(4).apply(Block(BlockKind.O, phi), dicke_state(DickeSpace(4), 0))
        assert out.amplitude(0) == pytest.approx(np.exp(-1j * phi * 16 / 16.0), abs=1e-15)

    def test_controlled_rotation(self, store):
        n, phi = 12, 0.4
        space = DickeSpace(n)
        ops = build_collective_ops(space)
        d0 = dicke_state(space, 0)
        state = ProtocolEngine(n).apply(Block(BlockKind.C, phi), ControlledState(d0, d0, 0.6, 0.8))
        assert np.allclose(state.branch0.amplitudes, scipy.linalg.expm(0.5j * phi * ops.X) @ d0.amplitudes)
        assert np.allclose(state.branch1.amplitudes, scipy.linalg.expm(-0.5j * phi * ops.X) @ d0.amplitudes)
        assert state.alpha == 0.6 and state.beta == 0.8

    def test_controlled_needs_branch(self, store):
        with pytest.raises(ValueError):
            ProtocolEngine(4).apply(Block(BlockKind.C, 0.1), dicke_state(DickeSpace(4), 0))

    def test_direction(self, store):
        engine = ProtocolEngine(10)
        state = dicke_state(DickeSpace(10), 0)
        fwd = engine.apply(Block(BlockKind.S, 0.1), state)
        assert engine.apply(Block(BlockKind.S, 0.1), fwd, direction=-1).distance(state) < 1e-12

    def test_dimension_mismatch(self, store):
        with pytest.raises(ValueError):
            ProtocolEngine(4).apply(Block(BlockKind.RZ, 0.1), dicke_state(DickeSpace(5), 0))

    def test_non_finite_parameter(self):
        with pytest.raises(ValueError):
            Block(BlockKind.S, float('nan'))


class TestInfidelity(object):

    @pytest.mark.parametrize('f0,f1,eps', [(1.0, 1.0, 0.0), (1.0, -1.0, 1.0), (1.0, 1j, 0.5), (0.0, 0.0, 1.0)])
    def test_closed_form(self, f0, f1, eps):
        assert worst_case_infidelity(f0, f1)[0] == pytest.approx(eps, abs=1e-15)

    def test_brute_force(self):
        rng = np.random.default_rng(11)
        p = np.linspace(0.0, 1.0, 20001)
        for _ in range(20):
            f0, f1 = (rng.uniform(0.3, 1.0) * np.exp(1j * rng.uniform(0, 2 * np.pi)) for _ in range(2))
            expected = 1.0 - np.min(np.abs(p * f0 + (1 - p) * f1) ** 2)
            eps, p_min = worst_case_infidelity(f0, f1)
            assert eps == pytest.approx(expected, abs=1e-6)
            assert 0.0 <= p_min <= 1.0

    def test_overlap_too_large(self):
        with pytest.raises(ValueError):
            worst_case_infidelity(1.1, 1.0)

    def test_exact_final_state(self):
        space = DickeSpace(6)
        final = ControlledState(dicke_state(space, 0), dicke_state(space, 6), 0.6, 0.8)
        trace = ProtocolTrace(None, 'cnot', final, (('done', final),))
        assert fidelity_report(trace).epsilon == 0.0


class TestProtocol(object):

    def test_stage_labels(self, store):
        trace = run_protocol(ProtocolParams(16, 1.0, 0.05, 0.1, 0.03))
        assert trace.labels == STAGE_LABELS
        assert len(trace.checkpoints) == 7

    def test_norm_preserved(self, store):
        trace = run_protocol(ProtocolParams(64, 2.0, 0.1, 0.1, 0.1), 'two_branch')
        assert abs(trace.final.norm() - 1.0) < 1e-9

    @pytest.mark.parametrize('draw', range(50))
    @pytest.mark.parametrize('n', [16, 64])
    def test_branch_symmetry(self, store, n, draw):
        params = _random_params(n, np.random.default_rng([n, draw]))
        report = fidelity_report(run_protocol(params, 'two_branch', alpha=0.6, beta=0.8))
        assert abs(report.f1 - report.f0) < 1e-10, f'f1 should equal f0 for {params}'
        reduced = fidelity_report(run_protocol(params))
        assert report.epsilon == pytest.approx(reduced.epsilon_reduced, abs=1e-10)

    def test_branch_symmetry_general_n(self, store):
        params = ProtocolParams(12, 1.3, 0.07, 0.09, 0.04)
        report = fidelity_report(run_protocol(params, 'two_branch'))
        assert abs(report.f1 - report.f0) < 1e-10, 'f1 should equal f0 against the phased target'
        assert branch_target_phase(16) == 1.0

    def test_no_separation_without_theta(self, store):
        report = fidelity_report(run_protocol(ProtocolParams(20, 0.0, 0.1, 0.05, 0.02), 'two_branch'))
        assert abs(abs(report.f0) - abs(report.f1)) < 1e-12

    def test_time_budget(self):
        assert time_budget(ProtocolParams(64, 0.0, 0.0, 0.0, 0.0)).total == pytest.approx(math.pi / (8 * 64))
        budget = time_budget(ProtocolParams(1024, 2.0, 0.0505, 0.111, 0.0357))
        assert budget.total == pytest.approx(0.0486, abs=5e-4)
        assert budget.ratio_to_cnot == pytest.approx(0.06, abs=0.005)
        assert budget.lower_bound_ref == pytest.approx(math.log(1024) / 1024)

    def test_negative_parameter(self):
        with pytest.raises(ValueError):
            ProtocolParams(16, 1.0, -0.1, 0.0, 0.0)

    def test_report_json(self, store):
        report = fidelity_report(run_protocol(ProtocolParams(16, 1.0, 0.05, 0.1, 0.03)))
        doc = json.loads(report.to_json('deadbeef'))
        for key in ('N', 'theta', 'tau1', 'tau2', 'tau3', 'phi', 'f0_re', 'f0_im', 'f1_re', 'f1_im', 'epsilon',
                    'epsilon_reduced', 'T', 'T_over_cnot'):
            assert key in doc, f'{key} missing from report'
        assert doc['config_hash'] == 'deadbeef'

    @pytest.mark.slow
    def test_snapshot_parameters(self, snapshot_params):
        report = fidelity_report(run_protocol(snapshot_params))
        assert report.epsilon_reduced == pytest.approx(6.7e-4, rel=0.1)
        assert report.time_budget.total == pytest.approx(0.048, abs=1e-3)


class TestRewrittenProtocol(object):

    @pytest.mark.parametrize('draw', range(20))
    @pytest.mark.parametrize('n', [16, 64])
    def test_matches_original(self, store, n, draw):
        params = _random_params(n, np.random.default_rng([n, draw, 5]))
        original = run_protocol(params).final
        rewritten = rewritten_protocol(params).final
        assert original.distance(rewritten) < 1e-10, f'rewritten protocol differs for {params}'

    def test_without_final_twist(self, store):
        params = ProtocolParams(16, 1.0, 0.05, 0.1, 0.0)
        assert run_protocol(params).final.distance(rewritten_protocol(params).final) < 1e-10

    def test_conjugation_identity(self, store):
        n = 24
        space = DickeSpace(n)
        rng = np.random.default_rng(6)
        amps = rng.normal(size=n + 1) + 1j * rng.normal(size=n + 1)
        state = DickeVector(space, amps / np.linalg.norm(amps))
        engine = ProtocolEngine(n)
        lhs = state
        for block in (Block(BlockKind.RX, -math.pi / 2), Block(BlockKind.O, math.pi / 4),
                      Block(BlockKind.RX, math.pi / 2)):
            lhs = engine.apply(block, lhs)
        rhs = engine.apply(Block(BlockKind.OY, math.pi / 4), state)
        assert lhs.distance(rhs) < 1e-10


class TestCnotBaseline(object):

    @pytest.mark.parametrize('n', [1, 5, 8, 31, 64, 256])
    def test_exact(self, store, n):
        report = cnot_baseline(n)
        assert report.epsilon <= 1e-10
        assert report.time_budget.total == pytest.approx(math.pi / 4)

    def test_equator_after_hamiltonian(self, store):
        trace = ProtocolEngine(32).cnot_trace()
        branch0 = trace.stage('H_CNOT').branch0
        z = float(np.sum(branch0.probabilities() * (32 - 2 * np.arange(33))))
        assert abs(z) < 1e-10, 'branch 0 should sit on the equator'

    def test_rotation_sign(self, store):
        n = 6
        engine = ProtocolEngine(n)
        branch0 = engine.cnot_trace().stage('H_CNOT').branch0
        back = engine.apply(Block(BlockKind.RX, math.pi / 2.0), branch0)
        assert abs(back.amplitude(0)) == pytest.approx(1.0, abs=1e-12), 'RX(+pi/2) returns branch 0 to |0...0>'
        flipped = engine.apply(Block(BlockKind.RX, -math.pi / 2.0), branch0)
        assert abs(flipped.amplitude(n)) == pytest.approx(1.0, abs=1e-12), 'RX(-pi/2) would end on |1...1>'

    def test_invalid_size(self):
        with pytest.raises(ValueError):
            cnot_baseline(0)
