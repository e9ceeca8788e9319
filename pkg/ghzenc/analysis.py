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
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.stats import linregress

from ghzenc.dicke import DickeVector, GeneratorLabel, dicke_state, DickeSpace
from ghzenc.propagator import SpectralCacheStore, cache_store
from ghzenc.utils import artifact_banner, fmt_float, log, write_atomic

# default upper end of the tau range used by the protocol sweeps
TAU_RANGE_MAX: float = 0.15

SQUEEZE_GRID_MAX: float = 0.25
SQUEEZE_GRID_MIN_POINTS: int = 50
SQUEEZE_TAU_TOL: float = 1e-5


# ----------------------------------------------------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class DickeTailProfile:
    """
    cumulative[k] = P_{<=k}; tail[k] = 1 - P_{<=k}, summed from the far end so that tiny tails keep full relative
    precision.
    """
    cumulative: np.ndarray
    tail: np.ndarray

    @property
    def n_qubits(self) -> int:
        return len(self.cumulative) - 1

    def decay_ratios(self, k_first: int = 1, k_last: int = 6) -> np.ndarray:
        """
        tail[k+1] / tail[k] for k_first <= k < k_last. Zero tails yield a ratio of 0.
        """
        k_last = min(k_last, self.n_qubits)
        num = self.tail[k_first + 1:k_last + 1]
        den = self.tail[k_first:k_last]
        with np.errstate(divide='ignore', invalid='ignore'):
            return np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), 0.0)

    def csv_text(self, config_hash: str | None = None) -> str:
        lines = [] if config_hash is None else [artifact_banner(config_hash)]
        lines.append('k,cumulative,tail')
        for k in range(len(self.cumulative)):
            lines.append(f'{k},{fmt_float(self.cumulative[k])},{fmt_float(self.tail[k])}')
        return '\n'.join(lines) + '\n'


def dicke_tail(state: DickeVector) -> DickeTailProfile:
    probs = state.probabilities()
    cumulative = np.cumsum(probs)
    from_end = np.cumsum(probs[::-1])[::-1]
    tail = np.append(from_end[1:], 0.0)
    return DickeTailProfile(cumulative, tail)


def tail_decay_rate(profile: DickeTailProfile, k_first: int = 1, k_last: int = 6) -> float:
    """
    Slope of a least-squares fit of ln tail[k] against k over k_first <= k <= k_last. Zero tails are left out of the
    fit; with fewer than two nonzero points the tail is treated as vanishing (-inf).
    """
    k_last = min(k_last, profile.n_qubits)
    ks = np.arange(k_first, k_last + 1)
    tail = profile.tail[k_first:k_last + 1]
    keep = tail > 0.0
    if np.count_nonzero(keep) < 2:
        return -math.inf
    return float(linregress(ks[keep], np.log(tail[keep])).slope)


def tail_is_geometric(profile: DickeTailProfile, ratio: float = 0.5, k_first: int = 1, k_last: int = 6) -> bool:
    """
    True when the fitted decay of the tail is at least a factor 1/ratio per excitation. The tails of optimized
    protocol states alternate with parity, so single ratios may exceed the factor while the trend does not.
    """
    return tail_decay_rate(profile, k_first, k_last) <= math.log(ratio)


# ----------------------------------------------------------------------------------------------------------------------
def z_expectation(state: DickeVector) -> float:
    k = np.arange(state.space.dim)
    return float(np.sum((state.n_qubits - 2.0 * k) * state.probabilities()))


def polarization_error(state: DickeVector) -> float:
    """
    Relative error (N - <Z>)/N of the total polarization. Evaluated as sum_k 2k p_k / N, which is N - <Z> without the
    cancellation.
    """
    k = np.arange(state.space.dim)
    return float(np.sum(2.0 * k * state.probabilities()) / state.n_qubits)


def polarization_bound(state: DickeVector) -> Tuple[float, float, bool]:
    """
    Checks the bound N - <Z> <= 4 eps with eps = 1 - |<D_0|state>|^2.

    Returns:
        (N - <Z>, 4 eps, geometric) where geometric tells whether the tail halves from k=0 on. The bound is
        guaranteed to hold whenever geometric is True.
    """
    profile = dicke_tail(state)
    eps = float(profile.tail[0])
    # the bound needs every single ratio, not only the fitted trend
    geometric = bool(np.all(profile.decay_ratios(0, state.n_qubits) <= 0.5))
    return polarization_error(state) * state.n_qubits, 4.0 * eps, geometric


def variance(state: DickeVector, which: str, store: SpectralCacheStore | None = None) -> float:
    """
    Standard deviation sqrt(<O^2> - <O>^2) of a collective Pauli operator.

    Args:
        state: Unit Dicke vector.
        which: 'X', 'Y' or 'Z'.
        store: Registry providing the collective operators; defaults to the process-wide one.
    """
    try:
        label = {'X': GeneratorLabel.X, 'Y': GeneratorLabel.Y, 'Z': GeneratorLabel.Z}[which.upper()]
    except (KeyError, AttributeError):
        raise ValueError(f'Unsupported operator {which!r} (expected X, Y or Z).')
    store = cache_store() if store is None else store
    band = store.operators(state.n_qubits).generator(label)
    o_psi = band.matvec(state.amplitudes)
    mean = float(np.real(np.vdot(state.amplitudes, o_psi)))
    second = float(np.real(np.vdot(o_psi, o_psi)))
    return math.sqrt(max(second - mean * mean, 0.0))


# ----------------------------------------------------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SqueezeScan:
    n_qubits: int
    tau: np.ndarray
    y_var: np.ndarray
    tau_min: float
    y_var_min: float
    interior: bool
    factorizations: int

    @property
    def delta_y_min(self) -> float:
        return math.sqrt(self.y_var_min)

    def csv_rows(self) -> List[str]:
        return [f'{fmt_float(t)},{fmt_float(y)},{self.n_qubits}' for t, y in zip(self.tau, self.y_var)]


def check_squeeze_grid(tau_grid: Sequence[float]) -> np.ndarray:
    grid = np.asarray(tau_grid, dtype=np.float64)
    if grid.ndim != 1 or len(grid) < SQUEEZE_GRID_MIN_POINTS:
        raise ValueError(f'Squeeze scan needs at least {SQUEEZE_GRID_MIN_POINTS} grid points (got {grid.size}).')
    if np.any(grid < 0.0) or np.any(grid > SQUEEZE_GRID_MAX):
        raise ValueError(f'Squeeze scan grid must lie within [0, {SQUEEZE_GRID_MAX}].')
    if np.any(np.diff(grid) <= 0.0):
        raise ValueError('Squeeze scan grid must be strictly increasing.')
    return grid


def _parabola_vertex(x: np.ndarray, y: np.ndarray) -> float | None:
    (x0, x1, x2), (y0, y1, y2) = x, y
    denom = (x0 - x1) * (x0 - x2) * (x1 - x2)
    a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom
    b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / denom
    if a <= 0.0:
        return None
    vertex = -b / (2.0 * a)
    return vertex if x0 < vertex < x2 else None


def golden_refine(func, left: float, mid: float, right: float, tol: float) -> Tuple[float, float] | None:
    """
    Golden-section refinement of a bracketed minimum. Returns (x, f(x)) or None when (left, mid, right) is not a
    valid bracket (flat or monotone landscapes).
    """
    f_left, f_mid, f_right = func(left), func(mid), func(right)
    if not (f_mid < f_left and f_mid < f_right):
        return None
    # scipy's golden-section tolerance is relative to |x|
    xtol = tol / (2.0 * max(abs(mid), tol))
    res = minimize_scalar(func, bracket=(left, mid, right), method='golden', options={'xtol': xtol})
    return float(res.x), float(res.fun)


def squeeze_scan(n_qubits: int, tau_grid: Sequence[float], store: SpectralCacheStore | None = None) -> SqueezeScan:
    """
    Evolves |D_0> under S_tau for every grid point and records <Y^2>. All grid points share one H_TAT factorization.
    tau_min is located by a parabola through the three grid points around the argmin (in log scale) followed by
    golden-section refinement.
    """
    grid = check_squeeze_grid(tau_grid)
    store = cache_store() if store is None else store
    space = DickeSpace(n_qubits)
    before = store.factorization_count(n_qubits)
    cache = store.get(space, GeneratorLabel.H_TAT)
    y_band = store.operators(space).generator(GeneratorLabel.Y)
    coeffs = cache.to_eigenbasis(dicke_state(space, 0).amplitudes)
    scale = space.log_n / n_qubits

    def _y_var(taus: np.ndarray) -> np.ndarray:
        states = cache.from_eigenbasis(np.exp(-1j * np.outer(cache.eigenvalues, taus * scale)) * coeffs[:, None])
        y_states = y_band.matvec(states)
        return np.sum(np.abs(y_states) ** 2, axis=0)

    def _log_y_var(tau: float) -> float:
        return float(np.log(_y_var(np.array([tau]))[0]))

    y_var = _y_var(grid)
    i = int(np.argmin(y_var))
    tau_min, y_min = float(grid[i]), float(y_var[i])
    interior = 0 < i < len(grid) - 1
    if interior:
        window = grid[i - 1:i + 2]
        vertex = _parabola_vertex(window, np.log(y_var[i - 1:i + 2]))
        mid = vertex if vertex is not None and _log_y_var(vertex) < math.log(y_min) else tau_min
        refined = golden_refine(_log_y_var, float(window[0]), mid, float(window[2]), SQUEEZE_TAU_TOL)
        if refined is not None and math.exp(refined[1]) < y_min:
            tau_min, y_min = refined[0], math.exp(refined[1])
    else:
        log.warning(f'Squeezing minimum for N={n_qubits} sits at the grid boundary (tau={tau_min}).')

    factorizations = store.factorization_count(n_qubits) - before
    log.info(f'squeeze scan N={n_qubits:<5} tau_min={tau_min:.6f} dY={math.sqrt(y_min):.4f}')
    return SqueezeScan(n_qubits, grid, y_var, tau_min, y_min, interior, factorizations)


def squeeze_collapse(scans: Iterable[SqueezeScan]) -> List[Tuple[int, float, float]]:
    """
    Rescaled scan data (N, tau - tau_min, dY / ln N) for overlaying several system sizes.
    """
    rows = []
    for scan in scans:
        log_n = math.log(scan.n_qubits)
        for tau, y in zip(scan.tau, scan.y_var):
            rows.append((scan.n_qubits, float(tau - scan.tau_min), math.sqrt(y) / log_n))
    return rows


def write_squeeze_csv(path: str, scans: Sequence[SqueezeScan], config_hash: str | None = None) -> None:
    lines = [] if config_hash is None else [artifact_banner(config_hash)]
    lines.append('tau,y_var,N')
    for scan in scans:
        lines.extend(scan.csv_rows())
    write_atomic(path, '\n'.join(lines) + '\n')


# ----------------------------------------------------------------------------------------------------------------------
def tau2_predictor(n_qubits: int, theta: float, c: float = 2.0) -> float:
    """
    Semiclassical estimate of the stretching time tau_2 = [ln(cN/theta) - 2 ln(ln N)] / (4 ln N).

    Args:
        n_qubits: N >= 3.
        theta: Separation parameter, > 0.
        c: Fit constant of the separation distance.

    Returns:
        The predicted tau_2. Values outside [0, 0.15] are returned unchanged but logged as out of range.
    """
    if n_qubits < 3:
        raise ValueError(f'tau2 predictor requires N >= 3 (got {n_qubits}).')
    if not theta > 0.0:
        raise ValueError(f'tau2 predictor requires theta > 0 (got {theta}).')
    log_n = math.log(n_qubits)
    tau2 = (math.log(c * n_qubits / theta) - 2.0 * math.log(log_n)) / (4.0 * log_n)
    if not 0.0 < tau2 <= TAU_RANGE_MAX:
        log.warning(f'tau2 predictor out of range for N={n_qubits}, theta={theta}: {tau2:.5f}')
    return tau2
