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
import struct
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import List, Tuple

import numpy as np
from scipy.integrate import simpson
from scipy.special import gammaln, xlogy

from ghzenc.ghzexceptions import GhzCapacityException
from ghzenc.utils import artifact_banner, fmt_float, log, write_atomic

# Largest ensemble supported by the Dicke backend. Dense eigenvectors at this size need ~270 MB per generator.
MAX_QUBITS: int = 4096

# Norm drift above this threshold is reported (never corrected).
NORM_DRIFT_WARN: float = 1e-9


# ----------------------------------------------------------------------------------------------------------------------
@dataclass(frozen=True)
class DickeSpace:
    """
    The permutation-symmetric subspace of N qubits. Basis index k counts the qubits in state |1>; k=0 is the north
    pole (Z eigenvalue N).
    """
    n_qubits: int

    def __post_init__(self) -> None:
        if isinstance(self.n_qubits, bool) or not isinstance(self.n_qubits, (int, np.integer)):
            raise ValueError(f'Number of qubits must be an integer (got {self.n_qubits!r}).')
        if self.n_qubits < 1:
            raise ValueError(f'Number of qubits must be positive (got {self.n_qubits}).')
        if self.n_qubits > MAX_QUBITS:
            raise GhzCapacityException(f'N={self.n_qubits} exceeds the Dicke backend limit of {MAX_QUBITS} qubits.')
        object.__setattr__(self, 'n_qubits', int(self.n_qubits))

    @property
    def dim(self) -> int:
        return self.n_qubits + 1

    @property
    def log_n(self) -> float:
        return math.log(self.n_qubits)

    def check_compatible(self, other: DickeSpace) -> None:
        if self.n_qubits != other.n_qubits:
            raise ValueError(f'Dimension mismatch: N={self.n_qubits} vs. N={other.n_qubits}.')


# ----------------------------------------------------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class DickeVector:
    space: DickeSpace
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        amps = np.array(self.amplitudes, dtype=np.complex128)
        if amps.shape != (self.space.dim,):
            raise ValueError(f'Amplitude array of shape {amps.shape} does not match Dicke dimension {self.space.dim}.')
        amps.setflags(write=False)
        object.__setattr__(self, 'amplitudes', amps)

    @property
    def n_qubits(self) -> int:
        return self.space.n_qubits

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def norm_drift(self) -> float:
        return abs(self.norm() - 1.0)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def amplitude(self, k: int) -> complex:
        return complex(self.amplitudes[k])

    def overlap(self, other: DickeVector) -> complex:
        """
        Returns <self|other>.
        """
        self.space.check_compatible(other.space)
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def scaled(self, factor: complex) -> DickeVector:
        return DickeVector(self.space, self.amplitudes * factor)

    def distance(self, other: DickeVector) -> float:
        self.space.check_compatible(other.space)
        return float(np.linalg.norm(self.amplitudes - other.amplitudes))


# ----------------------------------------------------------------------------------------------------------------------
class GeneratorLabel(Enum):
    """
    Hermitian generators used by the protocol blocks. TILTED is AB+BA with A=(X+Z)/sqrt(2), B=(X-Z)/sqrt(2), which
    simplifies to X^2 - Z^2.
    """
    X = 'X'
    Y = 'Y'
    Z = 'Z'
    H_TAT = 'H_TAT'
    Z_SQUARED = 'Z2'
    Y_SQUARED = 'Y2'
    X_SQUARED = 'X2'
    TILTED = 'AB+BA'
    CUSTOM = 'custom'

    @classmethod
    def get_keys(cls) -> List[str]:
        return [e.value for e in cls]


# ----------------------------------------------------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class BandedHermitian:
    """
    Hermitian matrix in band storage. diagonals[d][k] holds the upper-triangle element a[k, k+d]; the lower triangle
    is implied by Hermiticity.
    """
    dim: int
    diagonals: Tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        diags = []
        for d, diag in enumerate(self.diagonals):
            arr = np.asarray(diag)
            if arr.shape != (self.dim - d,):
                raise ValueError(f'Diagonal {d} has shape {arr.shape}, expected ({self.dim - d},).')
            arr = arr.copy()
            arr.setflags(write=False)
            diags.append(arr)
        if np.any(np.abs(np.imag(diags[0])) > 0.0):
            raise ValueError('Main diagonal of a Hermitian matrix must be real.')
        object.__setattr__(self, 'diagonals', tuple(diags))

    @property
    def bandwidth(self) -> int:
        return len(self.diagonals) - 1

    @property
    def is_diagonal(self) -> bool:
        return all(not np.any(diag) for diag in self.diagonals[1:])

    def main_diagonal(self) -> np.ndarray:
        return np.real(self.diagonals[0]).astype(np.float64)

    def matvec(self, vec: np.ndarray) -> np.ndarray:
        """
        Product with a vector, or with every column of a (dim, m) array.
        """
        vec = np.asarray(vec)

        def _col(diag: np.ndarray) -> np.ndarray:
            return diag if vec.ndim == 1 else diag[:, None]

        out = (_col(self.diagonals[0]) * vec).astype(np.result_type(vec, *self.diagonals, np.complex64))
        for d in range(1, len(self.diagonals)):
            if d >= self.dim:
                break
            diag = _col(self.diagonals[d])
            out[:-d] += diag * vec[d:]
            out[d:] += np.conj(diag) * vec[:-d]
        return out

    def to_dense(self) -> np.ndarray:
        dtype = np.result_type(*self.diagonals, np.float64)
        mat = np.diag(self.diagonals[0].astype(dtype))
        for d in range(1, len(self.diagonals)):
            if d >= self.dim:
                break
            mat += np.diag(self.diagonals[d], d) + np.diag(np.conj(self.diagonals[d]), -d)
        return mat

    def upper_band(self) -> np.ndarray:
        """
        Upper band in the LAPACK layout expected by scipy.linalg.eig_banded: ab[u + i - j, j] == a[i, j].
        """
        u = self.bandwidth
        dtype = np.result_type(*self.diagonals, np.float64)
        ab = np.zeros((u + 1, self.dim), dtype=dtype)
        for d, diag in enumerate(self.diagonals):
            ab[u - d, d:] = diag
        return ab


# ----------------------------------------------------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class CollectiveOperators:
    """
    Collective Pauli operators X, Y, Z = sum_i X_i, ... restricted to the Dicke space.

    The generators are kept in band storage; dense copies (X, Y, Z, h_tat, z_squared) are created on first access.
    ladder[k] = sqrt((N-k)(k+1)) is the matrix element <D_{k+1}|X|D_k>.
    """
    space: DickeSpace
    z_diag: np.ndarray
    ladder: np.ndarray

    def _two_step(self) -> np.ndarray:
        # <D_{k+2}|L+^2|D_k>
        return self.ladder[:-1] * self.ladder[1:]

    def _ladder_sq_sum(self) -> np.ndarray:
        # <D_k|L+L- + L-L+|D_k>
        sq = self.ladder ** 2
        out = np.zeros(self.space.dim)
        out[:-1] += sq
        out[1:] += sq
        return out

    def _band(self, *diagonals: np.ndarray) -> BandedHermitian:
        return BandedHermitian(self.space.dim, tuple(diagonals))

    def generator(self, label: GeneratorLabel) -> BandedHermitian:
        """
        Returns the banded matrix of the given generator.

        Args:
            label: One of the predefined generators (CUSTOM is not available here).

        Returns:
            The generator in band storage.
        """
        dim = self.space.dim
        zero1 = np.zeros(max(dim - 1, 0))
        if label == GeneratorLabel.X:
            return self._band(np.zeros(dim), self.ladder.copy())
        if label == GeneratorLabel.Y:
            return self._band(np.zeros(dim), -1j * self.ladder)
        if label == GeneratorLabel.Z:
            return self._band(self.z_diag.copy())
        if label == GeneratorLabel.Z_SQUARED:
            return self._band(self.z_diag ** 2)
        if label == GeneratorLabel.H_TAT:
            # XY + YX = 2i (L+^2 - L-^2)
            return self._band(np.zeros(dim), zero1.astype(np.complex128), -2j * self._two_step())
        if label == GeneratorLabel.Y_SQUARED:
            return self._band(self._ladder_sq_sum(), zero1, -self._two_step())
        if label == GeneratorLabel.X_SQUARED:
            return self._band(self._ladder_sq_sum(), zero1, self._two_step())
        if label == GeneratorLabel.TILTED:
            return self._band(self._ladder_sq_sum() - self.z_diag ** 2, zero1, self._two_step())
        raise ValueError(f'No predefined matrix for generator {label}.')

    @cached_property
    def X(self) -> np.ndarray:
        return self.generator(GeneratorLabel.X).to_dense()

    @cached_property
    def Y(self) -> np.ndarray:
        return self.generator(GeneratorLabel.Y).to_dense()

    @cached_property
    def Z(self) -> np.ndarray:
        return self.generator(GeneratorLabel.Z).to_dense()

    @cached_property
    def h_tat(self) -> np.ndarray:
        return self.generator(GeneratorLabel.H_TAT).to_dense()

    @cached_property
    def z_squared(self) -> np.ndarray:
        return self.generator(GeneratorLabel.Z_SQUARED).to_dense()


def build_collective_ops(space: DickeSpace) -> CollectiveOperators:
    n = space.n_qubits
    if n > MAX_QUBITS:
        raise GhzCapacityException(f'N={n} exceeds the Dicke backend limit of {MAX_QUBITS} qubits.')
    k = np.arange(n + 1, dtype=np.float64)
    z_diag = n - 2.0 * k
    ladder = np.sqrt((n - k[:-1]) * (k[:-1] + 1.0))
    z_diag.setflags(write=False)
    ladder.setflags(write=False)
    return CollectiveOperators(space, z_diag, ladder)


# ----------------------------------------------------------------------------------------------------------------------
def dicke_state(space: DickeSpace, k: int) -> DickeVector:
    if not 0 <= k <= space.n_qubits:
        raise ValueError(f'Dicke index k={k} out of range [0, {space.n_qubits}].')
    amps = np.zeros(space.dim, dtype=np.complex128)
    amps[k] = 1.0
    return DickeVector(space, amps)


# ----------------------------------------------------------------------------------------------------------------------
@dataclass(frozen=True)
class SpinCoherentParams:
    polar: float
    azimuth: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.polar <= math.pi:
            raise ValueError(f'Polar angle {self.polar} outside [0, pi].')
        if not 0.0 <= self.azimuth < 2.0 * math.pi:
            raise ValueError(f'Azimuth {self.azimuth} outside [0, 2pi).')


def _coherent_log_magnitudes(n: int, polar: np.ndarray) -> np.ndarray:
    """
    log|<D_k|coherent(polar, .)>| for every polar angle (rows) and k (columns), computed via log-gamma so that
    binomial coefficients at N ~ 2048 never overflow.
    """
    k = np.arange(n + 1, dtype=np.float64)
    log_binom = gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)
    half = np.atleast_1d(np.asarray(polar, dtype=np.float64))[:, None] / 2.0
    return 0.5 * log_binom[None, :] + xlogy(n - k[None, :], np.cos(half)) + xlogy(k[None, :], np.sin(half))


def spin_coherent(space: DickeSpace, params: SpinCoherentParams) -> DickeVector:
    """
    All qubits in cos(polar/2)|0> + e^{i azimuth} sin(polar/2)|1>, expanded in the Dicke basis.
    """
    k = np.arange(space.dim, dtype=np.float64)
    magnitudes = np.exp(_coherent_log_magnitudes(space.n_qubits, np.array([params.polar]))[0])
    return DickeVector(space, magnitudes * np.exp(1j * k * params.azimuth))


# ----------------------------------------------------------------------------------------------------------------------
HUSIMI_MAGIC = b'GHZQ'
HUSIMI_SIGNED_MAGIC = b'GHZS'
HUSIMI_HDR_FMT = '<4sIII'


@dataclass(frozen=True, eq=False)
class HusimiGrid:
    """
    Husimi Q function sampled on a regular sphere grid. polar runs over [0, pi] including both poles, azimuth over
    [0, 2pi) without the endpoint. Signed grids hold the two-branch difference Q_alpha - Q_beta.
    """
    n_qubits: int
    values: np.ndarray
    signed: bool = False

    @property
    def resolution(self) -> Tuple[int, int]:
        return self.values.shape[0], self.values.shape[1]

    @property
    def polar(self) -> np.ndarray:
        return husimi_polar_axis(self.resolution[0])

    @property
    def azimuth(self) -> np.ndarray:
        return husimi_azimuth_axis(self.resolution[1])

    @property
    def normalization(self) -> float:
        return (self.n_qubits + 1) / (4.0 * math.pi)

    def integral(self) -> float:
        """
        Sphere quadrature of Q with the sin(polar) measure: Simpson's rule over polar, rectangle rule over azimuth
        (exact for band-limited periodic integrands).
        """
        n_polar, n_az = self.resolution
        if n_polar < 3:
            raise ValueError('Quadrature requires at least three polar samples.')
        ring = self.values.sum(axis=1) * (2.0 * math.pi / n_az)
        return float(simpson(ring * np.sin(self.polar), x=self.polar))

    def peak(self) -> Tuple[float, float, float]:
        """
        Returns (value, polar, azimuth) at the grid maximum.
        """
        i, j = np.unravel_index(int(np.argmax(self.values)), self.values.shape)
        return float(self.values[i, j]), float(self.polar[i]), float(self.azimuth[j])

    def csv_text(self, config_hash: str | None = None) -> str:
        lines = [] if config_hash is None else [artifact_banner(config_hash)]
        lines.append('polar,azimuth,Q')
        polar, azimuth = self.polar, self.azimuth
        for i in range(self.resolution[0]):
            for j in range(self.resolution[1]):
                lines.append(f'{fmt_float(polar[i])},{fmt_float(azimuth[j])},{fmt_float(self.values[i, j])}')
        return '\n'.join(lines) + '\n'

    def to_csv(self, path: str, config_hash: str | None = None) -> None:
        write_atomic(path, self.csv_text(config_hash))

    def to_binary(self) -> bytes:
        magic = HUSIMI_SIGNED_MAGIC if self.signed else HUSIMI_MAGIC
        hdr = struct.pack(HUSIMI_HDR_FMT, magic, self.n_qubits, *self.resolution)
        return hdr + np.ascontiguousarray(self.values, dtype='<f8').tobytes()

    def save_binary(self, path: str) -> None:
        write_atomic(path, self.to_binary())

    @classmethod
    def from_binary(cls, data: bytes) -> HusimiGrid:
        hdr_len = struct.calcsize(HUSIMI_HDR_FMT)
        if len(data) < hdr_len:
            raise ValueError('Husimi binary grid is truncated (no header).')
        magic, n, n_polar, n_az = struct.unpack(HUSIMI_HDR_FMT, data[:hdr_len])
        if magic not in (HUSIMI_MAGIC, HUSIMI_SIGNED_MAGIC):
            raise ValueError(f'Unknown Husimi grid magic {magic!r}.')
        payload = data[hdr_len:]
        if len(payload) != n_polar * n_az * 8:
            raise ValueError(f'Husimi payload has {len(payload)} bytes, expected {n_polar * n_az * 8}.')
        values = np.frombuffer(payload, dtype='<f8').reshape(n_polar, n_az).astype(np.float64)
        return cls(n, values, signed=(magic == HUSIMI_SIGNED_MAGIC))


def husimi_polar_axis(n_polar: int) -> np.ndarray:
    return np.linspace(0.0, math.pi, n_polar)


def husimi_azimuth_axis(n_azimuth: int) -> np.ndarray:
    return np.linspace(0.0, 2.0 * math.pi, n_azimuth, endpoint=False)


def _check_resolution(resolution: Tuple[int, int]) -> Tuple[int, int]:
    try:
        n_polar, n_az = (int(r) for r in resolution)
    except (TypeError, ValueError):
        raise ValueError(f'Husimi resolution must be a pair of integers (got {resolution!r}).')
    if n_polar < 1 or n_az < 1:
        raise ValueError(f'Husimi resolution must be positive (got {n_polar}x{n_az}).')
    return n_polar, n_az


def _coherent_overlaps(state: DickeVector, n_polar: int, n_az: int) -> np.ndarray:
    # <coherent(polar_i, azimuth_j)|state> = sum_k b_k(polar_i) e^{-i k azimuth_j} psi_k
    n = state.n_qubits
    mags = np.exp(_coherent_log_magnitudes(n, husimi_polar_axis(n_polar)))
    phases = np.exp(-1j * np.outer(np.arange(n + 1), husimi_azimuth_axis(n_az)))
    return (mags * state.amplitudes[None, :]) @ phases


def husimi(state: DickeVector, resolution: Tuple[int, int] = (128, 256)) -> HusimiGrid:
    """
    Husimi Q function Q = (N+1)/(4pi) |<coherent(polar, azimuth)|state>|^2 on a regular grid.

    Args:
        state: Unit-norm Dicke vector.
        resolution: (n_polar, n_azimuth) grid size.

    Returns:
        HusimiGrid with non-negative values.
    """
    n_polar, n_az = _check_resolution(resolution)
    if state.norm_drift() > NORM_DRIFT_WARN:
        log.warning(f'Husimi input deviates from unit norm by {state.norm_drift():.3e}.')
    amp = _coherent_overlaps(state, n_polar, n_az)
    norm = (state.n_qubits + 1) / (4.0 * math.pi)
    return HusimiGrid(state.n_qubits, norm * np.abs(amp) ** 2)


def husimi_difference(state_alpha: DickeVector, state_beta: DickeVector,
                      resolution: Tuple[int, int] = (128, 256)) -> HusimiGrid:
    """
    Signed two-branch field Q_alpha - Q_beta used to colour the two branches of a controlled state.
    """
    state_alpha.space.check_compatible(state_beta.space)
    q_alpha = husimi(state_alpha, resolution)
    q_beta = husimi(state_beta, resolution)
    return HusimiGrid(state_alpha.n_qubits, q_alpha.values - q_beta.values, signed=True)
