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

import hashlib
import os
import struct
import threading
import time
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Tuple

import numpy as np
import scipy.linalg

from ghzenc.dicke import (BandedHermitian, CollectiveOperators, DickeSpace, DickeVector, GeneratorLabel,
                          NORM_DRIFT_WARN, build_collective_ops)
from ghzenc.ghzexceptions import GhzNumericException
from ghzenc.utils import log, singleton, write_atomic

HERMITIAN_TOL: float = 1e-12

SPECTRAL_MAGIC = b'GHZC'
SPECTRAL_FORMAT_VERSION = 1
SPECTRAL_HDR_FMT = '<4sHI16sIB'
_DIGEST_LEN = 32


# ----------------------------------------------------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SpectralCache:
    """
    Eigendecomposition H = V diag(lambda) V^dagger of a fixed generator. Eigenvalues are sorted ascending and every
    eigenvector has its largest-magnitude component real-positive.

    Diagonal generators keep their diagonal in basis order and skip the factorization; eigenvectors are then a
    permuted identity and only materialized on request.
    """
    label: GeneratorLabel
    space: DickeSpace
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None = None
    diagonal: np.ndarray | None = None

    def __post_init__(self) -> None:
        if (self.eigenvectors is None) == (self.diagonal is None):
            raise ValueError('A spectral cache holds either eigenvectors or a diagonal, not both.')
        for arr in (self.eigenvalues, self.eigenvectors, self.diagonal):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def is_diagonal(self) -> bool:
        return self.diagonal is not None

    @cached_property
    def vectors(self) -> np.ndarray:
        if self.eigenvectors is not None:
            return self.eigenvectors
        order = np.argsort(self.diagonal, kind='stable')
        vecs = np.zeros((self.space.dim, self.space.dim))
        vecs[order, np.arange(self.space.dim)] = 1.0
        vecs.setflags(write=False)
        return vecs

    def to_eigenbasis(self, amps: np.ndarray) -> np.ndarray:
        # V^dagger a computed as conj(V^T conj(a)) to avoid a conjugated copy of V
        if self.is_diagonal:
            return np.asarray(amps, dtype=np.complex128)
        return np.conj(self.eigenvectors.T @ np.conj(amps))

    def from_eigenbasis(self, coeffs: np.ndarray) -> np.ndarray:
        if self.is_diagonal:
            return np.asarray(coeffs, dtype=np.complex128)
        return self.eigenvectors @ coeffs

    def phases(self, t: float) -> np.ndarray:
        """
        e^{-i lambda t} in the order matching to_eigenbasis() (basis order for diagonal generators).
        """
        lam = self.diagonal if self.is_diagonal else self.eigenvalues
        return np.exp(-1j * t * lam)

    def reconstruct(self) -> np.ndarray:
        if self.is_diagonal:
            return np.diag(self.diagonal)
        vecs = self.eigenvectors
        return (vecs * self.eigenvalues[None, :]) @ vecs.conj().T

    # -- persistence ---------------------------------------------------------------------------------------------------
    def to_bytes(self) -> bytes:
        label = self.label.value.encode('ascii').ljust(16, b'\0')
        hdr = struct.pack(SPECTRAL_HDR_FMT, SPECTRAL_MAGIC, SPECTRAL_FORMAT_VERSION, self.space.n_qubits, label,
                          self.space.dim, 1 if self.is_diagonal else 0)
        body = np.ascontiguousarray(self.eigenvalues, dtype='<f8').tobytes()
        if self.is_diagonal:
            body += np.ascontiguousarray(self.diagonal, dtype='<f8').tobytes()
        else:
            body += np.ascontiguousarray(self.eigenvectors, dtype='<c16').tobytes()
        payload = hdr + body
        return payload + hashlib.sha256(payload).digest()

    @classmethod
    def from_bytes(cls, data: bytes) -> SpectralCache:
        hdr_len = struct.calcsize(SPECTRAL_HDR_FMT)
        if len(data) < hdr_len + _DIGEST_LEN:
            raise GhzNumericException('Spectral cache file is truncated.')
        payload, digest = data[:-_DIGEST_LEN], data[-_DIGEST_LEN:]
        if hashlib.sha256(payload).digest() != digest:
            raise GhzNumericException('Spectral cache file has an invalid checksum.')
        magic, version, n, label, dim, flag = struct.unpack(SPECTRAL_HDR_FMT, payload[:hdr_len])
        if magic != SPECTRAL_MAGIC or version != SPECTRAL_FORMAT_VERSION:
            raise GhzNumericException(f'Unsupported spectral cache file (magic {magic!r}, version {version}).')
        if dim != n + 1:
            raise GhzNumericException(f'Spectral cache header is inconsistent (N={n}, dim={dim}).')
        space = DickeSpace(n)
        body = payload[hdr_len:]
        expected = dim * 8 + (dim * 8 if flag else dim * dim * 16)
        if len(body) != expected:
            raise GhzNumericException(f'Spectral cache body has {len(body)} bytes, expected {expected}.')
        eigenvalues = np.frombuffer(body[:dim * 8], dtype='<f8').astype(np.float64)
        label = GeneratorLabel(label.rstrip(b'\0').decode('ascii'))
        if flag:
            diagonal = np.frombuffer(body[dim * 8:], dtype='<f8').astype(np.float64)
            return cls(label, space, eigenvalues, diagonal=diagonal)
        vecs = np.frombuffer(body[dim * 8:], dtype='<c16').reshape(dim, dim).astype(np.complex128)
        return cls(label, space, eigenvalues, eigenvectors=vecs)


# ----------------------------------------------------------------------------------------------------------------------
def _fix_phases(vecs: np.ndarray) -> np.ndarray:
    cols = np.arange(vecs.shape[1])
    pivots = vecs[np.argmax(np.abs(vecs), axis=0), cols]
    return vecs * (np.abs(pivots) / pivots)[None, :]


def _diagonal_cache(diag: np.ndarray, label: GeneratorLabel, space: DickeSpace) -> SpectralCache:
    diag = np.asarray(np.real(diag), dtype=np.float64).copy()
    return SpectralCache(label, space, np.sort(diag, kind='stable'), diagonal=diag)


def _check_hermitian(mat: np.ndarray) -> None:
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f'Generator must be a square matrix (got shape {mat.shape}).')
    scale = max(1.0, float(np.linalg.norm(mat)))
    err = float(np.linalg.norm(mat - mat.conj().T))
    if err > HERMITIAN_TOL * scale:
        raise ValueError(f'Generator is not Hermitian (|H - H^dagger| = {err:.3e}).')


def diagonalize(mat: np.ndarray | BandedHermitian, label: GeneratorLabel = GeneratorLabel.CUSTOM) -> SpectralCache:
    """
    Computes the spectral factorization of a Hermitian generator on the Dicke space.

    Args:
        mat: Dense Hermitian matrix or banded generator of dimension N+1.
        label: Generator label stored with the cache.

    Returns:
        SpectralCache with ascending eigenvalues and phase-normalized eigenvectors.
    """
    start = time.perf_counter()
    if isinstance(mat, BandedHermitian):
        space = DickeSpace(mat.dim - 1)
        if mat.is_diagonal:
            return _diagonal_cache(mat.main_diagonal(), label, space)
        solver = 'eig_banded'
    else:
        mat = np.asarray(mat)
        _check_hermitian(mat)
        space = DickeSpace(mat.shape[0] - 1)
        if not np.any(mat - np.diag(np.diag(mat))):
            return _diagonal_cache(np.diag(mat), label, space)
        solver = 'eigh'

    try:
        if solver == 'eig_banded':
            eigenvalues, vecs = scipy.linalg.eig_banded(mat.upper_band(), lower=False, check_finite=True)
        else:
            eigenvalues, vecs = scipy.linalg.eigh(mat, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as ex:
        raise GhzNumericException(f'Eigensolver ({solver}) failed for {label.value} at N={space.n_qubits}: {ex}')

    vecs = _fix_phases(vecs)
    log.info(f'diagonalized {label.value:6} N={space.n_qubits:<5} ({solver}) in {time.perf_counter() - start:.2f}s')
    return SpectralCache(label, space, np.asarray(eigenvalues, dtype=np.float64), eigenvectors=vecs)


# ----------------------------------------------------------------------------------------------------------------------
def propagate(cache: SpectralCache, t: float, amps: np.ndarray) -> np.ndarray:
    """
    Array-level kernel of evolve(): V e^{-i lambda t} V^dagger amps. Two matrix-vector products per call.
    """
    if t == 0:
        return np.asarray(amps, dtype=np.complex128)
    return cache.from_eigenbasis(cache.phases(t) * cache.to_eigenbasis(amps))


def evolve(cache: SpectralCache, t: float, state: DickeVector) -> DickeVector:
    """
    Returns e^{-iHt} state for the generator H factorized in cache. t=0 returns the input object unchanged.
    """
    if cache.space.n_qubits != state.n_qubits:
        raise ValueError(f'Dimension mismatch: cache N={cache.space.n_qubits}, state N={state.n_qubits}.')
    if t == 0:
        return state
    out = DickeVector(state.space, propagate(cache, t, state.amplitudes))
    drift = out.norm_drift()
    if drift > NORM_DRIFT_WARN:
        log.warning(f'Norm drift {drift:.3e} after evolution under {cache.label.value} (N={state.n_qubits}, t={t}).')
    return out


def dense_expm_evolve(mat: np.ndarray, t: float, amps: np.ndarray) -> np.ndarray:
    """
    Reference evolution via scipy's scaling-and-squaring matrix exponential. Only used for cross-checks.
    """
    return scipy.linalg.expm(-1j * t * np.asarray(mat)) @ np.asarray(amps, dtype=np.complex128)


# ----------------------------------------------------------------------------------------------------------------------
@singleton
class SpectralCacheStore(object):
    """
    Process-wide registry of spectral caches keyed by (N, generator). Each key is factorized at most once; concurrent
    requests for a missing key wait for the first computation while other keys stay available. Optionally persists
    caches to a directory so later invocations skip the factorization. Files in that directory are only ever added,
    never replaced.
    """

    def __init__(self) -> None:
        self._caches: Dict[Tuple[int, GeneratorLabel], SpectralCache] = {}
        self._ops: Dict[int, CollectiveOperators] = {}
        self._lock = threading.RLock()
        self._key_locks: Dict[Tuple[int, GeneratorLabel], threading.Lock] = {}
        self._cache_dir: str | None = None
        self.factorizations: Counter = Counter()
        self.hits: Counter = Counter()
        self.loads: Counter = Counter()

    def set_cache_dir(self, path: str | None) -> None:
        with self._lock:
            if path is not None:
                os.makedirs(path, exist_ok=True)
            self._cache_dir = path

    @property
    def cache_dir(self) -> str | None:
        return self._cache_dir

    def clear(self) -> None:
        with self._lock:
            self._caches.clear()
            self._ops.clear()
            self._key_locks.clear()
            self.factorizations.clear()
            self.hits.clear()
            self.loads.clear()

    def operators(self, space: DickeSpace | int) -> CollectiveOperators:
        n = space if isinstance(space, int) else space.n_qubits
        with self._lock:
            if n not in self._ops:
                self._ops[n] = build_collective_ops(DickeSpace(n))
            return self._ops[n]

    def _file_name(self, n: int, label: GeneratorLabel) -> str:
        return os.path.join(self._cache_dir, f'spectral_N{n}_{label.name}.bin')

    def _load(self, n: int, label: GeneratorLabel) -> SpectralCache | None:
        if self._cache_dir is None:
            return None
        path = self._file_name(n, label)
        if not os.path.exists(path):
            return None
        with open(path, 'rb') as f:
            data = f.read()
        try:
            cache = SpectralCache.from_bytes(data)
        except GhzNumericException as ex:
            log.warning(f'Ignoring corrupt spectral cache {path}: {ex}')
            return None
        if cache.space.n_qubits != n or cache.label != label:
            log.warning(f'Ignoring spectral cache {path}: content does not match file name.')
            return None
        return cache

    def _persist(self, cache: SpectralCache) -> None:
        if self._cache_dir is None or cache.is_diagonal:
            return
        path = self._file_name(cache.space.n_qubits, cache.label)
        if os.path.exists(path):
            return
        write_atomic(path, cache.to_bytes())
        log.debug(f'stored spectral cache {path}')

    def _key_lock(self, key: Tuple[int, GeneratorLabel]) -> threading.Lock:
        with self._lock:
            return self._key_locks.setdefault(key, threading.Lock())

    def get(self, space: DickeSpace | int, label: GeneratorLabel) -> SpectralCache:
        """
        Returns the cache for (N, label), factorizing or loading it on first use. Only requests for the same key wait
        for a running factorization; other keys are served meanwhile.
        """
        n = space if isinstance(space, int) else space.n_qubits
        key = (n, label)
        with self._lock:
            cache = self._caches.get(key)
            if cache is not None:
                self.hits[key] += 1
                return cache
        with self._key_lock(key):
            with self._lock:
                cache = self._caches.get(key)
                if cache is not None:
                    self.hits[key] += 1
                    return cache
            cache = self._load(n, label)
            loaded = cache is not None
            if loaded:
                log.debug(f'loaded spectral cache {label.value} N={n} from {self._cache_dir}')
            else:
                cache = diagonalize(self.operators(n).generator(label), label)
                self._persist(cache)
            with self._lock:
                if loaded:
                    self.loads[key] += 1
                elif not cache.is_diagonal:
                    self.factorizations[key] += 1
                self._caches[key] = cache
            return cache

    def factorization_count(self, n: int | None = None) -> int:
        with self._lock:
            return sum(v for (kn, _), v in self.factorizations.items() if n is None or kn == n)

    def stats(self) -> Dict[str, int]:
        with self._lock:
            return {'cached': len(self._caches),
                    'factorizations': sum(self.factorizations.values()),
                    'hits': sum(self.hits.values()),
                    'loads': sum(self.loads.values())}


def cache_store() -> SpectralCacheStore:
    return SpectralCacheStore()
