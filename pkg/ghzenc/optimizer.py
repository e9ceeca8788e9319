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

import json
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.stats import linregress

from ghzenc import __version__
from ghzenc.analysis import golden_refine, polarization_error, tau2_predictor
from ghzenc.dicke import DickeVector, GeneratorLabel
from ghzenc.ghzexceptions import GhzNumericException
from ghzenc.propagator import SpectralCacheStore, cache_store
from ghzenc.protocol import PARAM_RANGES, BlockKind, ProtocolEngine, ProtocolParams, time_budget
from ghzenc.utils import artifact_banner, fmt_float, log, stable_hash, write_atomic

TAU3_INTERVAL: Tuple[float, float] = (0.0, 0.15)
TAU3_GRID_POINTS: int = 151
TAU3_TOL: float = 1e-6
TIE_TOL: float = 1e-12

TAU1_STEP: float = 0.005
REFINE_MIN_STEP: float = 5e-4
REFINE_MAX_MOVES: int = 20

SWEEP_CSV_HEADER = 'N,theta,tau1,tau2,tau3,epsilon,T'

# generators an evaluator pulls from the cache store (RZ and O are applied as diagonal phases)
EVALUATOR_GENERATORS = (GeneratorLabel.X, GeneratorLabel.H_TAT)


def _key(val: float) -> float:
    # grid coordinates are compared after rounding so that refinement steps land on identical keys
    return round(float(val), 12)


# ----------------------------------------------------------------------------------------------------------------------
@dataclass(frozen=True)
class Tau3Result:
    tau3: float
    epsilon: float
    coarse_epsilon: float


class ProtocolEvaluator(object):
    """
    Fast protocol evaluation for one N. The state after S_tau1 and C_phi is memoized per (theta, tau1), and the
    final S_tau3 stage is evaluated in the H_TAT eigenbasis so that every tau3 costs O(N).
    """

    def __init__(self, n_qubits: int, store: SpectralCacheStore | None = None) -> None:
        self._engine = ProtocolEngine(n_qubits, store)
        tat = self._engine.cache(GeneratorLabel.H_TAT)
        self._engine.cache(GeneratorLabel.X)
        self._tat = tat
        if tat.is_diagonal:
            self._lam = tat.diagonal
            self._row0 = np.zeros(self._engine.space.dim)
            self._row0[0] = 1.0
        else:
            self._lam = tat.eigenvalues
            self._row0 = tat.eigenvectors[0, :]
        self._scale = math.log(n_qubits) / n_qubits
        self._separated = lru_cache(maxsize=512)(self._compute_separated)

    @property
    def n_qubits(self) -> int:
        return self._engine.n_qubits

    @property
    def engine(self) -> ProtocolEngine:
        return self._engine

    def _compute_separated(self, theta: float, tau1: float) -> np.ndarray:
        params = ProtocolParams(self.n_qubits, theta, tau1, 0.0, 0.0)
        amps = self._engine.initial_state().amplitudes
        amps = self._engine.apply_amplitudes(BlockKind.S, tau1, amps)
        amps = self._engine.apply_amplitudes(BlockKind.C, params.phi, amps, 1)
        amps.setflags(write=False)
        return amps

    def prefinal(self, theta: float, tau1: float, tau2: float) -> np.ndarray:
        """
        Reduced-branch state right before S_tau3.
        """
        amps = self._separated(_key(theta), _key(tau1))
        amps = self._engine.apply_amplitudes(BlockKind.S, -tau2, amps)
        amps = self._engine.apply_amplitudes(BlockKind.RX, -math.pi / 2.0, amps)
        amps = self._engine.apply_amplitudes(BlockKind.O, math.pi / 4.0, amps)
        return self._engine.apply_amplitudes(BlockKind.RZ, math.pi / 4.0, amps)

    def epsilon_curve(self, prefinal: np.ndarray, tau3: np.ndarray) -> np.ndarray:
        """
        1 - |<D_0| S_tau3 |prefinal>|^2 for every tau3 in the array.
        """
        weights = self._row0 * self._tat.to_eigenbasis(prefinal)
        overlaps = np.exp(-1j * np.outer(np.atleast_1d(tau3) * self._scale, self._lam)) @ weights
        return np.clip(1.0 - np.abs(overlaps) ** 2, 0.0, 1.0)

    def optimize_tau3(self, theta: float, tau1: float, tau2: float,
                      interval: Tuple[float, float] = TAU3_INTERVAL) -> Tau3Result:
        """
        Maximizes |<D_0|psi_final>| over tau3: a 151-point grid followed by golden-section refinement of the best
        interior grid point. Flat landscapes resolve to the smallest maximizing tau3.
        """
        prefinal = self.prefinal(theta, tau1, tau2)
        grid = np.linspace(interval[0], interval[1], TAU3_GRID_POINTS)
        eps_grid = self.epsilon_curve(prefinal, grid)
        i = int(np.flatnonzero(eps_grid <= eps_grid.min() + TIE_TOL)[0])
        tau3, eps = float(grid[i]), float(eps_grid[i])
        if 0 < i < len(grid) - 1:
            refined = golden_refine(lambda t: float(self.epsilon_curve(prefinal, np.array([t]))[0]),
                                    float(grid[i - 1]), tau3, float(grid[i + 1]), TAU3_TOL)
            if refined is not None and refined[1] < eps - TIE_TOL:
                tau3, eps = refined
        return Tau3Result(tau3, eps, float(eps_grid[i]))

    def final_state(self, params: ProtocolParams) -> DickeVector:
        return self._engine.run(params).final


def optimize_tau3(n_qubits: int, theta: float, tau1: float, tau2: float,
                  store: SpectralCacheStore | None = None) -> Tuple[float, float]:
    res = ProtocolEvaluator(n_qubits, store).optimize_tau3(theta, tau1, tau2)
    return res.tau3, res.epsilon


# ----------------------------------------------------------------------------------------------------------------------
@dataclass(frozen=True)
class Tau2Window:
    """
    tau2 grid centered on the semiclassical predictor: predictor +- half_width in steps of step, clipped to the
    default range.
    """
    half_width: float = 0.02
    step: float = 0.002
    c: float = 2.0

    def grid(self, n_qubits: int, theta: float) -> Tuple[float, ...]:
        center = tau2_predictor(n_qubits, theta, self.c)
        count = int(round(self.half_width / self.step))
        lo, hi = PARAM_RANGES['tau2']
        pts = sorted({_key(min(max(center + m * self.step, lo), hi)) for m in range(-count, count + 1)})
        return tuple(pts)


def _as_floats(values: Sequence[float], name: str) -> Tuple[float, ...]:
    vals = tuple(float(v) for v in values)
    if not vals:
        raise ValueError(f'Sweep grid {name} must not be empty.')
    return vals


@dataclass(frozen=True)
class SweepSpec:
    n_values: Tuple[int, ...]
    theta: Tuple[float, ...]
    tau1: Tuple[float, ...]
    tau2: Tuple[float, ...] | Tau2Window = field(default_factory=Tau2Window)
    tau3_interval: Tuple[float, float] = TAU3_INTERVAL
    output: str | None = None
    resume: bool = True
    allow_out_of_range: bool = False
    batch_size: int = 16

    def __post_init__(self) -> None:
        n_values = tuple(int(n) for n in self.n_values)
        if not n_values or any(n < 3 for n in n_values):
            raise ValueError(f'Sweep N values must be non-empty and >= 3 (got {self.n_values}).')
        object.__setattr__(self, 'n_values', n_values)
        object.__setattr__(self, 'theta', _as_floats(self.theta, 'theta'))
        object.__setattr__(self, 'tau1', _as_floats(self.tau1, 'tau1'))
        if not isinstance(self.tau2, Tau2Window):
            object.__setattr__(self, 'tau2', _as_floats(self.tau2, 'tau2'))
        elif any(t <= 0.0 for t in self.theta):
            raise ValueError('The tau2 predictor window needs theta > 0.')
        lo, hi = (float(v) for v in self.tau3_interval)
        if not 0.0 <= lo < hi:
            raise ValueError(f'Invalid tau3 interval {self.tau3_interval}.')
        object.__setattr__(self, 'tau3_interval', (lo, hi))
        if self.batch_size < 1:
            raise ValueError(f'Batch size must be positive (got {self.batch_size}).')
        if not self.allow_out_of_range:
            self._check_ranges()

    def _check_ranges(self) -> None:
        grids = {'theta': self.theta, 'tau1': self.tau1}
        if not isinstance(self.tau2, Tau2Window):
            grids['tau2'] = self.tau2
        grids['tau3'] = self.tau3_interval
        for name, vals in grids.items():
            lo, hi = PARAM_RANGES[name]
            if any(v < lo or v > hi for v in vals):
                raise ValueError(f'Sweep grid {name} leaves the default range [{lo}, {hi}]; '
                                 f'set allow_out_of_range to override.')

    def tau2_grid(self, n_qubits: int, theta: float) -> Tuple[float, ...]:
        return self.tau2.grid(n_qubits, theta) if isinstance(self.tau2, Tau2Window) else self.tau2

    def cells(self) -> List[Tuple[int, float, float, float]]:
        return [(n, theta, tau1, tau2)
                for n in self.n_values
                for theta in self.theta
                for tau1 in self.tau1
                for tau2 in self.tau2_grid(n, theta)]

    def spec_hash(self) -> str:
        tau2 = asdict(self.tau2) if isinstance(self.tau2, Tau2Window) else list(self.tau2)
        return stable_hash({'N': list(self.n_values), 'theta': list(self.theta), 'tau1': list(self.tau1),
                            'tau2': tau2, 'tau3_interval': list(self.tau3_interval)})


@dataclass(frozen=True)
class SweepRow:
    n_qubits: int
    theta: float
    tau1: float
    tau2: float
    tau3: float
    epsilon: float
    total_time: float

    def csv_line(self) -> str:
        return ','.join([str(self.n_qubits)] + [fmt_float(v) for v in (self.theta, self.tau1, self.tau2, self.tau3,
                                                                         self.epsilon, self.total_time)])

    @classmethod
    def from_csv_line(cls, line: str) -> SweepRow:
        parts = line.strip().split(',')
        if len(parts) != 7:
            raise ValueError(f'Malformed sweep row: {line!r}')
        return cls(int(parts[0]), *(float(p) for p in parts[1:]))

    def matches(self, cell: Tuple[int, float, float, float]) -> bool:
        n, theta, tau1, tau2 = cell
        return (self.n_qubits == n and fmt_float(self.theta) == fmt_float(theta) and
                fmt_float(self.tau1) == fmt_float(tau1) and fmt_float(self.tau2) == fmt_float(tau2))


@dataclass(eq=False)
class SweepTable:
    spec: SweepSpec
    rows: Dict[int, SweepRow]
    n_cells: int
    factorizations: int = 0

    @property
    def complete(self) -> bool:
        return len(self.rows) == self.n_cells

    @property
    def completed(self) -> List[int]:
        return sorted(self.rows)

    def ordered_rows(self) -> List[SweepRow]:
        return [self.rows[i] for i in self.completed]

    def csv_text(self, config_hash: str | None = None) -> str:
        lines = [artifact_banner(self.spec.spec_hash() if config_hash is None else config_hash), SWEEP_CSV_HEADER]
        lines.extend(row.csv_line() for row in self.ordered_rows())
        return '\n'.join(lines) + '\n'

    def best(self, n_qubits: int | None = None, theta: float | None = None) -> SweepRow:
        best = None
        for row in self.ordered_rows():
            if (n_qubits is not None and row.n_qubits != n_qubits) or (theta is not None and row.theta != theta):
                continue
            if best is None or row.epsilon < best.epsilon - TIE_TOL:
                best = row
        if best is None:
            raise ValueError('No completed sweep rows match the selection.')
        return best


# ----------------------------------------------------------------------------------------------------------------------
def _checkpoint_path(output: str) -> str:
    return output + '.checkpoint.json'


def _load_checkpoint(spec: SweepSpec, cells: List[Tuple[int, float, float, float]]) -> Dict[int, SweepRow]:
    ckpt_path = _checkpoint_path(spec.output)
    if not (os.path.exists(ckpt_path) and os.path.exists(spec.output)):
        return {}
    with open(ckpt_path, 'r') as f:
        ckpt = json.load(f)
    if ckpt.get('spec_hash') != spec.spec_hash():
        log.warning(f'Checkpoint {ckpt_path} belongs to a different sweep; starting over.')
        return {}
    completed = [int(i) for i in ckpt.get('completed', [])]
    with open(spec.output, 'r') as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip() and not ln.startswith('#')]
    data = lines[1:] if lines and lines[0] == SWEEP_CSV_HEADER else None
    if data is None or len(data) != len(completed):
        log.warning(f'Sweep table {spec.output} does not match its checkpoint; starting over.')
        return {}
    rows = {}
    for idx, line in zip(completed, data):
        row = SweepRow.from_csv_line(line)
        if idx >= len(cells) or not row.matches(cells[idx]):
            log.warning(f'Sweep row {idx} in {spec.output} does not match the sweep grid; starting over.')
            return {}
        rows[idx] = row
    log.info(f'resuming sweep with {len(rows)} of {len(cells)} rows completed')
    return rows


def _write_checkpoint(table: SweepTable, config_hash: str | None) -> None:
    # table first, then checkpoint: a crash in between leaves a checkpoint that still describes a valid prefix
    write_atomic(table.spec.output, table.csv_text(config_hash))
    ckpt = {'spec_hash': table.spec.spec_hash(), 'completed': table.completed, 'version': __version__}
    write_atomic(_checkpoint_path(table.spec.output), json.dumps(ckpt, sort_keys=True) + '\n')


def _evaluate_cell(evaluators: Dict[int, ProtocolEvaluator], cell: Tuple[int, float, float, float],
                   interval: Tuple[float, float]) -> SweepRow:
    n, theta, tau1, tau2 = cell
    res = evaluators[n].optimize_tau3(theta, tau1, tau2, interval)
    total = time_budget(ProtocolParams(n, theta, tau1, tau2, res.tau3)).total
    return SweepRow(n, theta, tau1, tau2, res.tau3, res.epsilon, total)


def run_sweep(spec: SweepSpec, jobs: int = 1, config_hash: str | None = None,
              store: SpectralCacheStore | None = None) -> SweepTable:
    """
    Runs one optimize_tau3 per grid cell. With an output path the table and a sidecar checkpoint are rewritten
    atomically after every batch, and a rerun with the same spec only computes the missing rows.

    Args:
        spec: Sweep definition.
        jobs: Worker threads. Rows are identical for any value.
        config_hash: Hash embedded in the CSV banner (defaults to the spec hash).
        store: Spectral cache registry; defaults to the process-wide one.

    Returns:
        The (complete) sweep table.
    """
    store = cache_store() if store is None else store
    cells = spec.cells()
    rows = _load_checkpoint(spec, cells) if (spec.output and spec.resume) else {}
    table = SweepTable(spec, rows, len(cells))
    todo = [i for i in range(len(cells)) if i not in rows]

    before = store.factorization_count()
    evaluators = {n: ProtocolEvaluator(n, store) for n in spec.n_values}
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        for start in range(0, len(todo), spec.batch_size):
            batch = todo[start:start + spec.batch_size]
            results = pool.map(lambda i: _evaluate_cell(evaluators, cells[i], spec.tau3_interval), batch)
            for i, row in zip(batch, results):
                table.rows[i] = row
            if spec.output:
                _write_checkpoint(table, config_hash)
            log.info(f'sweep progress {len(table.rows):6}/{len(cells)}')
    if spec.output and not todo:
        _write_checkpoint(table, config_hash)

    table.factorizations = store.factorization_count() - before
    budget = len(spec.n_values) * len(EVALUATOR_GENERATORS)
    if table.factorizations > budget:
        raise GhzNumericException(f'Sweep used {table.factorizations} factorizations, budget is {budget}.')
    return table


# ----------------------------------------------------------------------------------------------------------------------
@dataclass(frozen=True)
class OptimumResult:
    n_qubits: int
    theta: float
    tau1: float
    tau2: float
    tau3: float
    epsilon: float
    coarse_epsilon: float
    evaluations: int

    @property
    def params(self) -> ProtocolParams:
        return ProtocolParams(self.n_qubits, self.theta, self.tau1, self.tau2, self.tau3)

    @property
    def total_time(self) -> float:
        return time_budget(self.params).total

    def as_row(self) -> SweepRow:
        return SweepRow(self.n_qubits, self.theta, self.tau1, self.tau2, self.tau3, self.epsilon, self.total_time)


class _CellMemo(object):
    """
    Thread-safe memo of (tau1, tau2) -> Tau3Result for one (N, theta).
    """

    def __init__(self, evaluator: ProtocolEvaluator, theta: float, pool: ThreadPoolExecutor) -> None:
        self._evaluator = evaluator
        self._theta = theta
        self._pool = pool
        self._results: Dict[Tuple[float, float], Tau3Result] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._results)

    def evaluate(self, points: List[Tuple[float, float]]) -> List[Tuple[Tuple[float, float], Tau3Result]]:
        points = [(_key(a), _key(b)) for a, b in points]
        with self._lock:
            missing = sorted({p for p in points if p not in self._results})
        results = self._pool.map(lambda p: self._evaluator.optimize_tau3(self._theta, *p), missing)
        for p, res in zip(missing, results):
            with self._lock:
                self._results[p] = res
        return [(p, self._results[p]) for p in points]


def _pick_best(candidates: List[Tuple[Tuple[float, float], Tau3Result]],
               best: Tuple[Tuple[float, float], Tau3Result] | None) -> Tuple[Tuple[float, float], Tau3Result]:
    for cand in sorted(candidates, key=lambda c: c[0]):
        if best is None or cand[1].epsilon < best[1].epsilon - TIE_TOL:
            best = cand
    return best


def optimize_full(n_qubits: int, theta: float, jobs: int = 1, window: Tau2Window | None = None,
                  store: SpectralCacheStore | None = None) -> OptimumResult:
    """
    Coarse (tau1, tau2) grid with an inner tau3 search, followed by a pattern search around the best cell whose
    steps are halved down to 5e-4. Refinement only ever accepts strictly better cells.
    """
    window = Tau2Window() if window is None else window
    evaluator = ProtocolEvaluator(n_qubits, store)
    lo, hi = PARAM_RANGES['tau1']
    tau1_grid = [_key(lo + i * TAU1_STEP) for i in range(int(round((hi - lo) / TAU1_STEP)) + 1)]
    tau2_grid = window.grid(n_qubits, theta)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        memo = _CellMemo(evaluator, theta, pool)
        best = _pick_best(memo.evaluate([(a, b) for a in tau1_grid for b in tau2_grid]), None)
        coarse_eps = best[1].epsilon

        step1, step2 = TAU1_STEP, window.step
        while step1 / 2.0 >= REFINE_MIN_STEP or step2 / 2.0 >= REFINE_MIN_STEP:
            if step1 / 2.0 >= REFINE_MIN_STEP:
                step1 /= 2.0
            if step2 / 2.0 >= REFINE_MIN_STEP:
                step2 /= 2.0
            for _ in range(REFINE_MAX_MOVES):
                (c1, c2), _res = best
                neighbours = [(min(max(c1 + a * step1, lo), hi), min(max(c2 + b * step2, lo), hi))
                              for a in (-1, 0, 1) for b in (-1, 0, 1) if (a, b) != (0, 0)]
                moved = _pick_best(memo.evaluate(neighbours), best)
                if moved is best:
                    break
                best = moved

    (tau1, tau2), res = best
    log.info(f'optimum N={n_qubits:<5} theta={theta:<5} eps={res.epsilon:.4e} tau=({tau1:.5f}, {tau2:.5f}, '
             f'{res.tau3:.5f}) cells={len(memo)}')
    return OptimumResult(n_qubits, theta, tau1, tau2, res.tau3, res.epsilon, coarse_eps, len(memo))


def optimized_state(result: OptimumResult, store: SpectralCacheStore | None = None) -> DickeVector:
    return ProtocolEngine(result.n_qubits, store).run(result.params).final


# ----------------------------------------------------------------------------------------------------------------------
@dataclass(frozen=True)
class ThetaTradeoff:
    results: Tuple[OptimumResult, ...]
    slope: float
    intercept: float
    r_squared: float


def theta_tradeoff(n_qubits: int, thetas: Sequence[float], jobs: int = 1,
                   store: SpectralCacheStore | None = None) -> ThetaTradeoff:
    """
    Optimized epsilon per theta and a linear fit of ln(epsilon) against theta.
    """
    if len(thetas) < 2:
        raise ValueError('The theta tradeoff needs at least two theta values.')
    results = tuple(optimize_full(n_qubits, theta, jobs, store=store) for theta in thetas)
    eps = np.array([r.epsilon for r in results])
    if np.any(eps <= 0.0):
        raise GhzNumericException('Cannot fit ln(epsilon) with a vanishing infidelity.')
    fit = linregress(np.asarray(thetas, dtype=np.float64), np.log(eps))
    return ThetaTradeoff(results, float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2))


@dataclass(frozen=True)
class PolarizationPoint:
    n_qubits: int
    theta: float
    epsilon: float
    polarization_error: float


def polarization_scan(n_values: Sequence[int], theta: float, jobs: int = 1,
                      store: SpectralCacheStore | None = None) -> List[PolarizationPoint]:
    points = []
    for n in n_values:
        res = optimize_full(n, theta, jobs, store=store)
        points.append(PolarizationPoint(n, theta, res.epsilon, polarization_error(optimized_state(res, store))))
    return points
