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

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, List, Sequence, Tuple

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.sparse.linalg import LinearOperator
from scipy.special import comb

from ghzenc.analysis import golden_refine
from ghzenc.dicke import DickeSpace, DickeVector
from ghzenc.ghzexceptions import GhzCapacityException, GhzNumericException
from ghzenc.protocol import ProtocolEngine, ProtocolParams, fidelity_report
from ghzenc.utils import artifact_banner, fmt_float, log, write_atomic

MAX_FULL_QUBITS: int = 24
FULL_NORM_TOL: float = 1e-8

KRYLOV_TOL: float = 1e-10
KRYLOV_MAX_DIM: int = 64
KRYLOV_MAX_HALVINGS: int = 16
_BREAKDOWN: float = 1e-13

REOPT_TAU3_POINTS: int = 31
REOPT_TAU3_TOL: float = 1e-6

TAU3_MODES: Tuple[str, ...] = ('reuse', 'reoptimize')
DISORDER_CSV_HEADER = 'N,delta,seed,theta,tau1,tau2,tau3,epsilon,epsilon_clean,leakage,tau3_mode'


def _check_full_size(n_qubits: int) -> None:
    if not isinstance(n_qubits, (int, np.integer)) or isinstance(n_qubits, bool) or n_qubits < 1:
        raise ValueError(f'Number of qubits must be a positive integer (got {n_qubits!r}).')
    if n_qubits > MAX_FULL_QUBITS:
        raise GhzCapacityException(f'N={n_qubits} exceeds the full-space limit of {MAX_FULL_QUBITS} qubits.')


@lru_cache(maxsize=8)
def popcounts(n_qubits: int) -> np.ndarray:
    """
    Number of set bits of every basis index 0 .. 2^N - 1.
    """
    _check_full_size(n_qubits)
    idx = np.arange(1 << n_qubits, dtype=np.int64)
    pc = np.zeros(1 << n_qubits, dtype=np.int64)
    for bit in range(n_qubits):
        pc += (idx >> bit) & 1
    pc.setflags(write=False)
    return pc


@lru_cache(maxsize=8)
def _class_norms(n_qubits: int) -> np.ndarray:
    return np.sqrt(comb(n_qubits, np.arange(n_qubits + 1), exact=False))


# ----------------------------------------------------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class FullStateVector:
    """
    State of N qubits in the computational basis; bit i of the index is the state of qubit i.
    """
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        _check_full_size(self.n_qubits)
        amps = np.array(self.amplitudes, dtype=np.complex128)
        if amps.shape != (1 << self.n_qubits,):
            raise ValueError(f'Expected {1 << self.n_qubits} amplitudes for N={self.n_qubits} (got {amps.shape}).')
        amps.setflags(write=False)
        object.__setattr__(self, 'amplitudes', amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def norm_drift(self) -> float:
        return abs(self.norm() - 1.0)

    def amplitude(self, index: int) -> complex:
        return complex(self.amplitudes[index])

    def overlap(self, other: FullStateVector) -> complex:
        if other.n_qubits != self.n_qubits:
            raise ValueError(f'Dimension mismatch: N={self.n_qubits} vs N={other.n_qubits}.')
        return complex(np.vdot(self.amplitudes, other.amplitudes))


def zero_state(n_qubits: int) -> FullStateVector:
    amps = np.zeros(1 << n_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return FullStateVector(n_qubits, amps)


def embed_dicke(state: DickeVector) -> FullStateVector:
    n = state.n_qubits
    pc = popcounts(n)
    return FullStateVector(n, (state.amplitudes / _class_norms(n))[pc])


def dm_amplitudes(state: FullStateVector) -> np.ndarray:
    """
    <D_k|state> for k = 0 .. N: amplitudes summed per popcount class and divided by sqrt(C(N, k)).
    """
    n = state.n_qubits
    pc = popcounts(n)
    amps = state.amplitudes
    sums = (np.bincount(pc, weights=amps.real, minlength=n + 1) +
            1j * np.bincount(pc, weights=amps.imag, minlength=n + 1))
    return sums / _class_norms(n)


def dm_project(state: FullStateVector) -> FullStateVector:
    n = state.n_qubits
    return FullStateVector(n, (dm_amplitudes(state) / _class_norms(n))[popcounts(n)])


def dm_leakage(state: FullStateVector) -> float:
    """
    Probability outside the symmetric (Dicke) subspace.
    """
    weight = float(np.sum(np.abs(dm_amplitudes(state)) ** 2))
    return min(max(1.0 - weight, 0.0), 1.0)


def to_dicke(state: FullStateVector) -> DickeVector:
    return DickeVector(DickeSpace(state.n_qubits), dm_amplitudes(state))


# ----------------------------------------------------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class DisorderedCoupling:
    """
    Pair couplings J_ij (symmetric, zero diagonal) drawn uniformly from [1 - delta, 1 + delta].
    """
    n_qubits: int
    delta: float
    seed: int
    J: np.ndarray

    def pairs(self) -> List[Tuple[int, int, float]]:
        i, j = np.triu_indices(self.n_qubits, k=1)
        return [(int(a), int(b), float(self.J[a, b])) for a, b in zip(i, j)]

    def pair_values(self) -> np.ndarray:
        return self.J[np.triu_indices(self.n_qubits, k=1)]


def _pair_draw(seed: int, i: int, j: int, delta: float) -> float:
    # one counter-based stream per unordered pair: the value depends on (seed, i, j) only
    gen = np.random.Generator(np.random.Philox(key=seed, counter=[i, j, 0, 0]))
    return float(gen.uniform(1.0 - delta, 1.0 + delta))


def sample_disorder(n_qubits: int, delta: float, seed: int) -> DisorderedCoupling:
    _check_full_size(n_qubits)
    if not math.isfinite(delta) or delta < 0.0:
        raise ValueError(f'Disorder strength must be finite and non-negative (got {delta}).')
    seed = int(seed)
    if not 0 <= seed < 1 << 64:
        raise ValueError(f'Seed must be a 64-bit unsigned integer (got {seed}).')
    J = np.zeros((n_qubits, n_qubits))
    for i in range(n_qubits):
        for j in range(i + 1, n_qubits):
            J[i, j] = J[j, i] = 1.0 if delta == 0.0 else _pair_draw(seed, i, j, delta)
    J.setflags(write=False)
    return DisorderedCoupling(n_qubits, float(delta), seed, J)


def uniform_coupling(n_qubits: int) -> DisorderedCoupling:
    return sample_disorder(n_qubits, 0.0, 0)


# ----------------------------------------------------------------------------------------------------------------------
class DisorderedTatOperator(object):
    """
    Matrix-free H' = sum_i sum_{j != i} J_ij (X_i Y_j + Y_i X_j).

    Per unordered pair the two-qubit term is 4i J_ij |11><00| - 4i J_ij |00><11|; the single-flip blocks cancel.
    With jobs > 1 the pairs are split into groups that accumulate into private buffers.
    """

    def __init__(self, coupling: DisorderedCoupling, jobs: int = 1) -> None:
        self._coupling = coupling
        self._n = coupling.n_qubits
        self._pairs = coupling.pairs()
        self._jobs = max(1, min(int(jobs), len(self._pairs) or 1))

    @property
    def n_qubits(self) -> int:
        return self._n

    @property
    def dim(self) -> int:
        return 1 << self._n

    def _slices(self, i: int, j: int, bit_i: int, bit_j: int) -> Tuple:
        # qubit q lives on axis N-1-q of the (2,)*N view
        idx: List = [slice(None)] * self._n
        idx[self._n - 1 - i] = bit_i
        idx[self._n - 1 - j] = bit_j
        return tuple(idx)

    def _accumulate(self, psi: np.ndarray, pairs: List[Tuple[int, int, float]]) -> np.ndarray:
        shape = (2,) * self._n
        src = psi.reshape(shape)
        out = np.zeros(shape, dtype=np.complex128)
        for i, j, J in pairs:
            s00 = self._slices(i, j, 0, 0)
            s11 = self._slices(i, j, 1, 1)
            out[s11] += (4j * J) * src[s00]
            out[s00] -= (4j * J) * src[s11]
        return out.reshape(-1)

    def matvec(self, psi: np.ndarray) -> np.ndarray:
        psi = np.asarray(psi, dtype=np.complex128).reshape(-1)
        if psi.shape[0] != self.dim:
            raise ValueError(f'Dimension mismatch: operator has {self.dim} amplitudes, vector {psi.shape[0]}.')
        if self._jobs == 1:
            return self._accumulate(psi, self._pairs)
        groups = [self._pairs[g::self._jobs] for g in range(self._jobs)]
        with ThreadPoolExecutor(max_workers=self._jobs) as pool:
            parts = list(pool.map(lambda grp: self._accumulate(psi, grp), groups))
        return np.sum(parts, axis=0)

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator((self.dim, self.dim), matvec=self.matvec, rmatvec=self.matvec, dtype=np.complex128)

    def to_dense(self) -> np.ndarray:
        if self._n > 12:
            raise GhzCapacityException(f'Dense H\' is limited to N <= 12 (got {self._n}).')
        return self.as_linear_operator().matmat(np.eye(self.dim, dtype=np.complex128))


# ----------------------------------------------------------------------------------------------------------------------
def _lanczos_step(matvec: Callable[[np.ndarray], np.ndarray], vec: np.ndarray, t: float,
                  tol: float, max_dim: int) -> Tuple[np.ndarray, float]:
    beta0 = float(np.linalg.norm(vec))
    if beta0 == 0.0:
        return vec.copy(), 0.0
    basis = [vec / beta0]
    alpha: List[float] = []
    beta: List[float] = []
    err = math.inf
    coeffs = np.ones(1, dtype=np.complex128)
    for m in range(max_dim):
        w = matvec(basis[m])
        alpha.append(float(np.vdot(basis[m], w).real))
        # full reorthogonalization
        for u in basis:
            w -= np.vdot(u, w) * u
        b = float(np.linalg.norm(w))
        if m == 0:
            evals, evecs = np.array(alpha), np.ones((1, 1))
        else:
            evals, evecs = eigh_tridiagonal(np.array(alpha), np.array(beta))
        coeffs = evecs @ (np.exp(-1j * t * evals) * evecs[0, :])
        breakdown = b <= _BREAKDOWN * max(1.0, abs(alpha[-1]))
        # invariant subspace reached: the projection is exact
        err = 0.0 if breakdown else beta0 * b * abs(coeffs[-1])
        if err <= tol:
            break
        if m + 1 < max_dim:
            beta.append(b)
            basis.append(w / b)
    out = np.zeros_like(vec)
    for c, u in zip(coeffs, basis):
        out += (beta0 * c) * u
    return out, err


def krylov_expm_multiply(matvec: Callable[[np.ndarray], np.ndarray], vec: np.ndarray, t: float,
                         tol: float = KRYLOV_TOL, max_dim: int = KRYLOV_MAX_DIM) -> np.ndarray:
    """
    e^{-iHt} vec for Hermitian H given by its matvec (Lanczos with full reorthogonalization).

    The subspace grows until the a-posteriori error estimate drops below tol; if max_dim is reached first, the time
    step is halved and the evolution restarts from the last accepted substep.

    Raises:
        GhzNumericException: No convergence after KRYLOV_MAX_HALVINGS halvings; carries the achieved residual.
    """
    vec = np.asarray(vec, dtype=np.complex128)
    if t == 0.0:
        return vec.copy()
    total = abs(t)
    sign = 1.0 if t > 0 else -1.0
    done, step, halvings = 0.0, total, 0
    out = vec.copy()
    while done < total:
        h = min(step, total - done)
        new, err = _lanczos_step(matvec, out, sign * h, tol * h / total, max_dim)
        if err <= tol * h / total:
            out, done = new, done + h
            continue
        halvings += 1
        if halvings > KRYLOV_MAX_HALVINGS:
            raise GhzNumericException(f'Krylov exponential did not converge (t={t}, residual {err:.3e}).',
                                      residual=err)
        step = h / 2.0
        log.debug(f'Krylov step halved to {step:.3e} (residual {err:.3e})')
    return out


def evolve_disordered_tat(coupling: DisorderedCoupling, tau: float, state: FullStateVector,
                          jobs: int = 1, operator: DisorderedTatOperator | None = None) -> FullStateVector:
    """
    Applies e^{-i tau (ln N/N) H'} to a full-space state.
    """
    if state.n_qubits != coupling.n_qubits:
        raise ValueError(f'Dimension mismatch: coupling N={coupling.n_qubits}, state N={state.n_qubits}.')
    if tau == 0.0:
        return state
    n = state.n_qubits
    op = DisorderedTatOperator(coupling, jobs) if operator is None else operator
    out = FullStateVector(n, krylov_expm_multiply(op.matvec, state.amplitudes, tau * math.log(n) / n))
    _check_norm(out, 'S\'')
    return out


def _check_norm(state: FullStateVector, label: str) -> None:
    drift = state.norm_drift()
    if drift > FULL_NORM_TOL:
        log.warning(f'Norm drift {drift:.3e} after {label} (N={state.n_qubits}).')


# ----------------------------------------------------------------------------------------------------------------------
def _rotate_all(state: FullStateVector, angle: float) -> FullStateVector:
    # e^{i angle X/2} on every qubit
    n = state.n_qubits
    c, s = math.cos(angle / 2.0), math.sin(angle / 2.0)
    gate = np.array([[c, 1j * s], [1j * s, c]])
    psi = state.amplitudes.reshape((2,) * n)
    for axis in range(n):
        psi = np.moveaxis(np.tensordot(gate, psi, axes=([1], [axis])), 0, axis)
    return FullStateVector(n, psi.reshape(-1))


def _z_values(n_qubits: int) -> np.ndarray:
    return n_qubits - 2.0 * popcounts(n_qubits)


def apply_rx(state: FullStateVector, phi: float) -> FullStateVector:
    return _rotate_all(state, phi)


def apply_rz(state: FullStateVector, phi: float) -> FullStateVector:
    return FullStateVector(state.n_qubits, state.amplitudes * np.exp(0.5j * phi * _z_values(state.n_qubits)))


def apply_oat(state: FullStateVector, phi: float) -> FullStateVector:
    n = state.n_qubits
    return FullStateVector(n, state.amplitudes * np.exp(-1j * phi / (4.0 * n) * _z_values(n) ** 2))


@dataclass(frozen=True)
class DisorderReport:
    n_qubits: int
    delta: float
    seed: int
    params: ProtocolParams
    epsilon: float
    epsilon_clean: float
    leakage: float
    leakage_steps: Tuple[float, float]
    tau3_mode: str
    disorder_all_twists: bool = False

    def csv_line(self) -> str:
        p = self.params
        return ','.join([str(self.n_qubits), fmt_float(self.delta), str(self.seed)] +
                        [fmt_float(v) for v in (p.theta, p.tau1, p.tau2, p.tau3, self.epsilon, self.epsilon_clean,
                                                self.leakage)] + [self.tau3_mode])


def _reoptimize_tau3(state: FullStateVector, op: DisorderedTatOperator,
                     interval: Tuple[float, float]) -> Tuple[float, FullStateVector]:
    n = state.n_qubits
    scale = math.log(n) / n
    grid = np.linspace(interval[0], interval[1], REOPT_TAU3_POINTS)
    states = [FullStateVector(n, krylov_expm_multiply(op.matvec, state.amplitudes, grid[0] * scale))]
    for prev, cur in zip(grid[:-1], grid[1:]):
        states.append(FullStateVector(n, krylov_expm_multiply(op.matvec, states[-1].amplitudes, (cur - prev) * scale)))
    eps = np.array([1.0 - abs(s.amplitude(0)) ** 2 for s in states])
    i = int(np.argmin(eps))
    if 0 < i < len(grid) - 1:
        def _eps(tau: float) -> float:
            amp = krylov_expm_multiply(op.matvec, states[i - 1].amplitudes, (tau - grid[i - 1]) * scale)[0]
            return 1.0 - abs(amp) ** 2

        refined = golden_refine(_eps, float(grid[i - 1]), float(grid[i]), float(grid[i + 1]), REOPT_TAU3_TOL)
        if refined is not None and refined[1] < eps[i]:
            tau3 = refined[0]
            return tau3, FullStateVector(n, krylov_expm_multiply(op.matvec, state.amplitudes, tau3 * scale))
    return float(grid[i]), states[i]


def run_disordered_protocol(params: ProtocolParams, coupling: DisorderedCoupling, tau3_mode: str = 'reuse',
                            disorder_all_twists: bool = False, jobs: int = 1,
                            tau3_interval: Tuple[float, float] = (0.0, 0.15)) -> DisorderReport:
    """
    Reduced-branch protocol in the full 2^N space with the disordered H' in S_tau1 and S_-tau2. The remaining
    blocks are homogeneous; with disorder_all_twists the final S_tau3 also uses H'.

    tau3_mode 'reuse' keeps params.tau3, 'reoptimize' searches tau3 on the disordered state.
    """
    if tau3_mode not in TAU3_MODES:
        raise ValueError(f'Unknown tau3 mode {tau3_mode!r} (expected one of {TAU3_MODES}).')
    n = params.n_qubits
    if coupling.n_qubits != n:
        raise ValueError(f'Dimension mismatch: coupling N={coupling.n_qubits}, params N={n}.')
    if n > 20:
        log.warning(f'Full-space protocol at N={n} needs {(16 << n) / 2 ** 30:.1f} GiB per state vector.')

    disordered = DisorderedTatOperator(coupling, jobs)
    clean = disordered if coupling.delta == 0.0 else DisorderedTatOperator(uniform_coupling(n), jobs)
    final_op = disordered if disorder_all_twists else clean

    state = evolve_disordered_tat(coupling, params.tau1, zero_state(n), operator=disordered)
    leak1 = dm_leakage(state)
    state = apply_rx(state, params.phi)
    state = evolve_disordered_tat(coupling, -params.tau2, state, operator=disordered)
    leak2 = dm_leakage(state)
    state = apply_rx(state, -math.pi / 2.0)
    state = apply_oat(state, math.pi / 4.0)
    state = apply_rz(state, math.pi / 4.0)

    # reference at the clean parameters in both tau3 modes
    epsilon_clean = fidelity_report(ProtocolEngine(n).run(params)).epsilon_reduced
    if tau3_mode == 'reoptimize':
        tau3, state = _reoptimize_tau3(state, final_op, tau3_interval)
        params = params.with_tau3(tau3)
    else:
        state = evolve_disordered_tat(coupling, params.tau3, state, operator=final_op)
    _check_norm(state, 'protocol')

    epsilon = min(max(1.0 - abs(state.amplitude(0)) ** 2, 0.0), 1.0)
    log.info(f'disorder N={n:<3} delta={coupling.delta:<5} seed={coupling.seed:<6} eps={epsilon:.4e} '
             f'clean={epsilon_clean:.4e} leak={max(leak1, leak2):.4e} tau3={params.tau3:.5f} ({tau3_mode})')
    return DisorderReport(n, coupling.delta, coupling.seed, params, epsilon, epsilon_clean, max(leak1, leak2),
                          (leak1, leak2), tau3_mode, disorder_all_twists)


def disorder_ensemble(params: ProtocolParams, delta: float, seeds: Sequence[int], tau3_mode: str = 'reuse',
                      disorder_all_twists: bool = False, jobs: int = 1) -> List[DisorderReport]:
    """
    One report per seed; realizations run as independent jobs and come back in seed order.
    """
    def _one(seed: int) -> DisorderReport:
        return run_disordered_protocol(params, sample_disorder(params.n_qubits, delta, seed), tau3_mode,
                                       disorder_all_twists)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(_one, seeds))


def disorder_csv_text(reports: Sequence[DisorderReport], config_hash: str | None = None) -> str:
    lines = [] if config_hash is None else [artifact_banner(config_hash)]
    lines.append(DISORDER_CSV_HEADER)
    lines.extend(r.csv_line() for r in reports)
    return '\n'.join(lines) + '\n'


def write_disorder_csv(path: str, reports: Sequence[DisorderReport], config_hash: str | None = None) -> None:
    write_atomic(path, disorder_csv_text(reports, config_hash))
