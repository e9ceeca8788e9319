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

import cmath
import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, List, Tuple, Union

import numpy as np

from ghzenc import __version__
from ghzenc.analysis import DickeTailProfile, dicke_tail, polarization_error
from ghzenc.dicke import DickeSpace, DickeVector, GeneratorLabel, NORM_DRIFT_WARN, dicke_state
from ghzenc.propagator import SpectralCacheStore, cache_store, propagate
from ghzenc.utils import log

CNOT_TIME: float = math.pi / 4.0

# (min, max) of the parameter ranges used by default sweeps
PARAM_RANGES: Dict[str, Tuple[float, float]] = {
    'theta': (0.0, 2.0),
    'tau1': (0.0, 0.15),
    'tau2': (0.0, 0.15),
    'tau3': (0.0, 0.15),
}

STAGE_LABELS: Tuple[str, ...] = ('S_tau1', 'C_phi', 'S_-tau2', 'RX_-pi/2', 'O_pi/4', 'RZ_pi/4', 'S_tau3')
REWRITTEN_LABELS: Tuple[str, ...] = ('S_tau1', 'C_phi', 'S_-tau2', 'OY_pi/4', 'T_tau3', 'RX_-pi/2', 'RZ_pi/4')


# ----------------------------------------------------------------------------------------------------------------------
@dataclass(frozen=True)
class ProtocolParams:
    """
    Protocol parameters (N, theta, tau1, tau2, tau3). The controlled-rotation angle is phi = theta (ln N)^2 / N and
    every twisting time tau runs for tau ln N / N.
    """
    n_qubits: int
    theta: float
    tau1: float
    tau2: float
    tau3: float

    def __post_init__(self) -> None:
        DickeSpace(self.n_qubits)
        for name in ('theta', 'tau1', 'tau2', 'tau3'):
            val = getattr(self, name)
            if not math.isfinite(val) or val < 0.0:
                raise ValueError(f'Protocol parameter {name} must be finite and non-negative (got {val}).')
            object.__setattr__(self, name, float(val))

    @property
    def phi(self) -> float:
        return self.theta * math.log(self.n_qubits) ** 2 / self.n_qubits

    @property
    def time_scale(self) -> float:
        return math.log(self.n_qubits) / self.n_qubits

    def with_tau3(self, tau3: float) -> ProtocolParams:
        return replace(self, tau3=tau3)

    def in_default_ranges(self) -> bool:
        return all(lo <= getattr(self, name) <= hi for name, (lo, hi) in PARAM_RANGES.items())

    def as_dict(self) -> Dict[str, float]:
        return {'N': self.n_qubits, 'theta': self.theta, 'tau1': self.tau1, 'tau2': self.tau2, 'tau3': self.tau3,
                'phi': self.phi}


# ----------------------------------------------------------------------------------------------------------------------
class BlockKind(Enum):
    RX = 'RX'     # e^{i phi X/2}
    RZ = 'RZ'     # e^{i phi Z/2}
    C = 'C'       # e^{+-i phi X/2} depending on the control branch
    S = 'S'       # e^{-i tau (ln N/N) H_TAT}
    O = 'O'       # e^{-i phi Z^2/(4N)}
    OY = 'OY'     # e^{-i phi Y^2/(4N)}
    T = 'T'       # e^{+i tau (ln N/N) (AB+BA)}, the S block seen from the rotated frame

    @classmethod
    def get_keys(cls) -> List[str]:
        return [e.value for e in cls]


@dataclass(frozen=True)
class Block:
    kind: BlockKind
    value: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise ValueError(f'Block parameter must be finite (got {self.value}).')


# ----------------------------------------------------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ControlledState:
    """
    Control qubit times Dicke register: alpha |0> (x) branch0 + beta |1> (x) branch1.
    """
    branch0: DickeVector
    branch1: DickeVector
    alpha: complex
    beta: complex

    def __post_init__(self) -> None:
        self.branch0.space.check_compatible(self.branch1.space)
        weight = abs(self.alpha) ** 2 + abs(self.beta) ** 2
        if abs(weight - 1.0) > 1e-9:
            raise ValueError(f'|alpha|^2 + |beta|^2 must be 1 (got {weight}).')

    @property
    def n_qubits(self) -> int:
        return self.branch0.n_qubits

    @property
    def space(self) -> DickeSpace:
        return self.branch0.space

    def norm(self) -> float:
        return math.sqrt(abs(self.alpha) ** 2 * self.branch0.norm() ** 2 +
                         abs(self.beta) ** 2 * self.branch1.norm() ** 2)

    def with_branches(self, branch0: DickeVector, branch1: DickeVector) -> ControlledState:
        return ControlledState(branch0, branch1, self.alpha, self.beta)


ProtocolState = Union[DickeVector, ControlledState]


@dataclass(frozen=True, eq=False)
class ProtocolTrace:
    params: ProtocolParams | None
    mode: str
    initial: ProtocolState
    checkpoints: Tuple[Tuple[str, ProtocolState], ...]

    @property
    def final(self) -> ProtocolState:
        if not self.checkpoints:
            raise ValueError('Protocol trace has no checkpoints.')
        return self.checkpoints[-1][1]

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(label for label, _ in self.checkpoints)

    def stage(self, label: str) -> ProtocolState:
        for stage_label, state in self.checkpoints:
            if stage_label == label:
                return state
        raise KeyError(label)


# ----------------------------------------------------------------------------------------------------------------------
@dataclass(frozen=True)
class TimeBudget:
    total: float
    lower_bound_ref: float
    cnot_reference: float = CNOT_TIME

    @property
    def ratio_to_cnot(self) -> float:
        return self.total / self.cnot_reference


def time_budget(params: ProtocolParams) -> TimeBudget:
    """
    Total evolution time T = theta (ln N)^2/(2N) + pi/(8N) + (ln N/N)(tau1 + tau2 + tau3) together with the ln N/N
    lower-bound scale and the pi/4 CNOT reference.
    """
    n = params.n_qubits
    log_n = math.log(n)
    total = (params.theta * log_n ** 2 / (2.0 * n) + math.pi / (8.0 * n) +
             log_n / n * (params.tau1 + params.tau2 + params.tau3))
    return TimeBudget(total, log_n / n)


# ----------------------------------------------------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class FidelityReport:
    n_qubits: int
    params: ProtocolParams | None
    mode: str
    f0: complex
    f1: complex
    epsilon: float
    epsilon_reduced: float
    alpha_sq_worst: float
    time_budget: TimeBudget
    polarization_error: float
    tail: DickeTailProfile | None = None

    @property
    def lower_bound_ref(self) -> float:
        return self.time_budget.lower_bound_ref

    def to_dict(self) -> Dict[str, float | int | str | None]:
        p = self.params
        return {
            'N': self.n_qubits,
            'theta': None if p is None else p.theta,
            'tau1': None if p is None else p.tau1,
            'tau2': None if p is None else p.tau2,
            'tau3': None if p is None else p.tau3,
            'phi': None if p is None else p.phi,
            'f0_re': self.f0.real,
            'f0_im': self.f0.imag,
            'f1_re': self.f1.real,
            'f1_im': self.f1.imag,
            'epsilon': self.epsilon,
            'epsilon_reduced': self.epsilon_reduced,
            'T': self.time_budget.total,
            'T_over_cnot': self.time_budget.ratio_to_cnot,
        }

    def to_json(self, config_hash: str | None = None) -> str:
        doc = self.to_dict()
        doc['mode'] = self.mode
        doc['polarization_error'] = self.polarization_error
        doc['lower_bound_ref'] = self.lower_bound_ref
        doc['alpha_sq_worst'] = self.alpha_sq_worst
        doc['version'] = __version__
        if config_hash is not None:
            doc['config_hash'] = config_hash
        return json.dumps(doc, sort_keys=True, indent=2) + '\n'


def worst_case_infidelity(f0: complex, f1: complex) -> Tuple[float, float]:
    """
    Closed form of the worst case over the input amplitudes, where the overlap is |alpha|^2 f0 + |beta|^2 f1: with
    d the distance from the origin to the segment [f1, f0], epsilon = 1 - d^2.

    Returns:
        (epsilon, |alpha|^2 at the minimum). For f0 == f1 every alpha is optimal and 1 is returned.
    """
    f0, f1 = complex(f0), complex(f1)
    for name, f in (('f0', f0), ('f1', f1)):
        if abs(f) > 1.0 + 1e-9:
            raise ValueError(f'Branch overlap {name}={f} exceeds unit modulus.')
    d = f0 - f1
    dd = abs(d) ** 2
    p = 1.0 if dd == 0.0 else min(max(-(d.conjugate() * f1).real / dd, 0.0), 1.0)
    closest = f1 + p * d
    return min(max(1.0 - abs(closest) ** 2, 0.0), 1.0), p


def branch_target_phase(n_qubits: int) -> complex:
    """
    Phase of the branch-1 target relative to |1...1>. The protocol maps the control-|1> branch onto
    e^{-3i pi N/4}|1...1> whenever it maps the control-|0> branch onto |0...0>; for 8 | N this is exactly 1.
    """
    return cmath.exp(1j * math.pi * ((-3 * n_qubits) % 8) / 4.0) if (3 * n_qubits) % 8 else 1.0 + 0.0j


# ----------------------------------------------------------------------------------------------------------------------
class ProtocolEngine(object):
    """
    Applies protocol blocks on the Dicke space of one N. Spectral caches come from a SpectralCacheStore and are
    shared by all engines and threads; the engine itself holds no mutable state.
    """

    def __init__(self, n_qubits: int, store: SpectralCacheStore | None = None) -> None:
        self._space = DickeSpace(n_qubits)
        self._store = cache_store() if store is None else store
        self._ops = self._store.operators(self._space)
        self._z = self._ops.z_diag

    @property
    def space(self) -> DickeSpace:
        return self._space

    @property
    def n_qubits(self) -> int:
        return self._space.n_qubits

    @property
    def store(self) -> SpectralCacheStore:
        return self._store

    def cache(self, label: GeneratorLabel):
        return self._store.get(self._space, label)

    def initial_state(self) -> DickeVector:
        return dicke_state(self._space, 0)

    # -- array-level kernels -------------------------------------------------------------------------------------------
    def apply_amplitudes(self, kind: BlockKind, value: float, amps: np.ndarray, branch_sign: int = 1) -> np.ndarray:
        n = self.n_qubits
        scale = math.log(n) / n
        if kind == BlockKind.RX:
            return propagate(self.cache(GeneratorLabel.X), -value / 2.0, amps)
        if kind == BlockKind.RZ:
            return amps * np.exp(0.5j * value * self._z)
        if kind == BlockKind.C:
            return propagate(self.cache(GeneratorLabel.X), -branch_sign * value / 2.0, amps)
        if kind == BlockKind.S:
            return propagate(self.cache(GeneratorLabel.H_TAT), value * scale, amps)
        if kind == BlockKind.O:
            return amps * np.exp(-1j * value / (4.0 * n) * self._z ** 2)
        if kind == BlockKind.OY:
            return propagate(self.cache(GeneratorLabel.Y_SQUARED), value / (4.0 * n), amps)
        if kind == BlockKind.T:
            return propagate(self.cache(GeneratorLabel.TILTED), -value * scale, amps)
        raise ValueError(f'Unknown block kind {kind}.')

    def _wrap(self, amps: np.ndarray, label: str) -> DickeVector:
        out = DickeVector(self._space, amps)
        drift = out.norm_drift()
        if drift > NORM_DRIFT_WARN:
            log.warning(f'Norm drift {drift:.3e} after block {label} (N={self.n_qubits}).')
        return out

    # -- state-level API -----------------------------------------------------------------------------------------------
    def apply(self, block: Block, state: ProtocolState, direction: int = 1, branch: int | None = None) -> ProtocolState:
        """
        Applies one block to a Dicke vector or a controlled state.

        Args:
            block: The block; its parameter is multiplied by direction.
            state: DickeVector (symmetry-reduced picture) or ControlledState.
            direction: +1 or -1.
            branch: For C blocks on a DickeVector, the control branch (0 or 1) the vector belongs to.

        Returns:
            A new state of the same kind.
        """
        if direction not in (1, -1):
            raise ValueError(f'direction must be +1 or -1 (got {direction}).')
        if state.n_qubits != self.n_qubits:
            raise ValueError(f'Dimension mismatch: engine N={self.n_qubits}, state N={state.n_qubits}.')
        value = direction * block.value
        label = f'{block.kind.value}({value:g})'
        if isinstance(state, ControlledState):
            b0 = self.apply_amplitudes(block.kind, value, state.branch0.amplitudes, 1)
            b1 = self.apply_amplitudes(block.kind, value, state.branch1.amplitudes, -1)
            return state.with_branches(self._wrap(b0, label), self._wrap(b1, label))
        if block.kind == BlockKind.C and branch not in (0, 1):
            raise ValueError('A C block on a Dicke vector needs the control branch (0 or 1).')
        sign = -1 if branch == 1 else 1
        return self._wrap(self.apply_amplitudes(block.kind, value, state.amplitudes, sign), label)

    def _run_blocks(self, blocks: List[Tuple[str, Block]], params: ProtocolParams | None, mode: str,
                    alpha: complex, beta: complex) -> ProtocolTrace:
        if mode == 'reduced':
            state: ProtocolState = self.initial_state()
        elif mode == 'two_branch':
            state = ControlledState(self.initial_state(), self.initial_state(), alpha, beta)
        else:
            raise ValueError(f'Unknown protocol mode {mode!r} (expected reduced or two_branch).')
        initial = state
        checkpoints = []
        for label, block in blocks:
            state = self.apply(block, state, branch=0)
            checkpoints.append((label, state))
        return ProtocolTrace(params, mode, initial, tuple(checkpoints))

    def run(self, params: ProtocolParams, mode: str = 'reduced',
            alpha: complex = 1 / math.sqrt(2.0), beta: complex = 1 / math.sqrt(2.0)) -> ProtocolTrace:
        self._check_params(params)
        return self._run_blocks(protocol_blocks(params), params, mode, alpha, beta)

    def run_rewritten(self, params: ProtocolParams, mode: str = 'reduced',
                      alpha: complex = 1 / math.sqrt(2.0), beta: complex = 1 / math.sqrt(2.0)) -> ProtocolTrace:
        self._check_params(params)
        return self._run_blocks(rewritten_blocks(params), params, mode, alpha, beta)

    def _check_params(self, params: ProtocolParams) -> None:
        if params.n_qubits != self.n_qubits:
            raise ValueError(f'Dimension mismatch: engine N={self.n_qubits}, params N={params.n_qubits}.')

    def cnot_trace(self, alpha: complex = 1 / math.sqrt(2.0), beta: complex = 1 / math.sqrt(2.0)) -> ProtocolTrace:
        """
        Parallel-CNOT reference: H = Z_0 X for t = pi/4, an ensemble x rotation returning branch 0 to |0...0>, and a
        control-qubit z rotation aligning the phases of both branches.

        The ensemble rotation is RX(+pi/2) = e^{i pi X/4}. Branch 0 leaves the H_CNOT stage as e^{-i pi X/4}|0...0>,
        which RX(+pi/2) undoes exactly; RX(-pi/2) would complete a pi rotation and leave branch 0 on |1...1>.
        """
        x_cache = self.cache(GeneratorLabel.X)
        d0 = self.initial_state().amplitudes
        state = ControlledState(self._wrap(propagate(x_cache, CNOT_TIME, d0), 'H_CNOT'),
                                self._wrap(propagate(x_cache, -CNOT_TIME, d0), 'H_CNOT'), alpha, beta)
        checkpoints = [('H_CNOT', state)]
        state = self.apply(Block(BlockKind.RX, math.pi / 2.0), state)
        checkpoints.append(('RX_pi/2', state))
        chi = cmath.phase(state.branch1.amplitude(self.n_qubits)) - cmath.phase(state.branch0.amplitude(0))
        state = state.with_branches(state.branch0, state.branch1.scaled(cmath.exp(-1j * chi)))
        checkpoints.append(('Z0_align', state))
        return ProtocolTrace(None, 'cnot', ControlledState(self.initial_state(), self.initial_state(), alpha, beta),
                             tuple(checkpoints))


# ----------------------------------------------------------------------------------------------------------------------
def protocol_blocks(params: ProtocolParams) -> List[Tuple[str, Block]]:
    quarter = math.pi / 4.0
    return list(zip(STAGE_LABELS, (
        Block(BlockKind.S, params.tau1),
        Block(BlockKind.C, params.phi),
        Block(BlockKind.S, -params.tau2),
        Block(BlockKind.RX, -math.pi / 2.0),
        Block(BlockKind.O, quarter),
        Block(BlockKind.RZ, quarter),
        Block(BlockKind.S, params.tau3),
    )))


def rewritten_blocks(params: ProtocolParams) -> List[Tuple[str, Block]]:
    # the final rotations are pulled through O and S_tau3, turning them into Y^2 and AB+BA twists
    quarter = math.pi / 4.0
    return list(zip(REWRITTEN_LABELS, (
        Block(BlockKind.S, params.tau1),
        Block(BlockKind.C, params.phi),
        Block(BlockKind.S, -params.tau2),
        Block(BlockKind.OY, quarter),
        Block(BlockKind.T, params.tau3),
        Block(BlockKind.RX, -math.pi / 2.0),
        Block(BlockKind.RZ, quarter),
    )))


def apply_block(block: Block, state: ProtocolState, direction: int = 1, branch: int | None = None) -> ProtocolState:
    return ProtocolEngine(state.n_qubits).apply(block, state, direction, branch)


def run_protocol(params: ProtocolParams, mode: str = 'reduced',
                 alpha: complex = 1 / math.sqrt(2.0), beta: complex = 1 / math.sqrt(2.0)) -> ProtocolTrace:
    return ProtocolEngine(params.n_qubits).run(params, mode, alpha, beta)


def rewritten_protocol(params: ProtocolParams, mode: str = 'reduced',
                       alpha: complex = 1 / math.sqrt(2.0), beta: complex = 1 / math.sqrt(2.0)) -> ProtocolTrace:
    return ProtocolEngine(params.n_qubits).run_rewritten(params, mode, alpha, beta)


# ----------------------------------------------------------------------------------------------------------------------
def fidelity_report(trace: ProtocolTrace) -> FidelityReport:
    """
    Branch overlaps and worst-case infidelity of the final checkpoint.

    reduced:    f0 = <D_0|psi>; the symmetry of the protocol makes f1 equal to f0.
    two_branch: f0 = <D_0|branch0>, f1 = <target_1|branch1> with target_1 = branch_target_phase(N) |D_N>.
    cnot:       f0 = <D_0|branch0>, f1 = <D_N|branch1> after the baseline's own phase alignment.
    """
    final = trace.final
    n = final.n_qubits
    if isinstance(final, ControlledState):
        f0 = final.branch0.amplitude(0)
        f1 = final.branch1.amplitude(n)
        if trace.mode != 'cnot':
            f1 *= branch_target_phase(n).conjugate()
        reduced_state = final.branch0
    else:
        f0 = final.amplitude(0)
        f1 = f0
        reduced_state = final
    epsilon, alpha_sq = worst_case_infidelity(f0, f1)
    if trace.params is not None:
        budget = time_budget(trace.params)
    else:
        budget = TimeBudget(CNOT_TIME, math.log(n) / n)
    return FidelityReport(n_qubits=n, params=trace.params, mode=trace.mode, f0=f0, f1=f1, epsilon=epsilon,
                          epsilon_reduced=min(max(1.0 - abs(f0) ** 2, 0.0), 1.0), alpha_sq_worst=alpha_sq,
                          time_budget=budget, polarization_error=polarization_error(reduced_state),
                          tail=dicke_tail(reduced_state))


def cnot_baseline(n_qubits: int) -> FidelityReport:
    if n_qubits < 1:
        raise ValueError(f'CNOT baseline needs N >= 1 (got {n_qubits}).')
    return fidelity_report(ProtocolEngine(n_qubits).cnot_trace())
