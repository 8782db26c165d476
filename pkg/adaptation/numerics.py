"""Dense linear-algebra contract shared by the rest of the package.

A Matrix is a 2-D float64 ``numpy.ndarray`` with rows = feature dimension and
columns = samples; ``as_matrix`` is the only gate into that contract.
"""
from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from .exceptions import (
    ContractError,
    DefinitenessError,
    DegenerateDataError,
    ParameterError,
    SolverFailureError,
)


logger = logging.getLogger(__name__)

MATRIX_MAGIC = b'DADL'
_HEADER = struct.Struct('<4sII')


def as_matrix(value, *, name: str = 'matrix') -> np.ndarray:
    m = np.asarray(value, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ContractError(f'{name} must be 2-D, got {m.ndim} dimensions')
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ContractError(f'{name} must have at least one row and one column, got {m.shape}')
    if not np.all(np.isfinite(m)):
        raise ContractError(f'{name} contains NaN or Inf entries')
    return m


def frobenius(m) -> float:
    return float(np.linalg.norm(m, 'fro'))


# ---------- SVD ----------
@dataclass(frozen=True, eq=False)
class SvdResult:
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.vt


def svd(m) -> SvdResult:
    """Thin SVD with the largest-magnitude entry of every left vector made positive."""
    m = as_matrix(m)
    try:
        u, s, vt = linalg.svd(m, full_matrices=False, lapack_driver='gesdd')
    except linalg.LinAlgError:
        # gesdd occasionally fails where the slower QR-iteration driver succeeds.
        try:
            u, s, vt = linalg.svd(m, full_matrices=False, lapack_driver='gesvd')
        except linalg.LinAlgError as exc:
            raise SolverFailureError(f'SVD did not converge for a {m.shape[0]}x{m.shape[1]} matrix') from exc

    pivots = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivots, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return SvdResult(u=u * signs, s=s, vt=vt * signs[:, None])


# ---------- SPD SOLVE ----------
def solve_spd(a, b, *, jitter: float = 0.0) -> np.ndarray:
    """Solve ``a @ x = b`` for symmetric positive-definite ``a`` via Cholesky.

    ``jitter`` is added to the diagonal only if the plain factorization fails.
    """
    a = as_matrix(a, name='a')
    b_arr = np.asarray(b, dtype=np.float64)
    vector_rhs = b_arr.ndim == 1
    b_mat = as_matrix(b_arr, name='b')

    if a.shape[0] != a.shape[1]:
        raise ContractError(f'a must be square, got {a.shape}')
    if b_mat.shape[0] != a.shape[0]:
        raise ContractError(f'b has {b_mat.shape[0]} rows but a is {a.shape[0]}x{a.shape[1]}')
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > 1e-10 * scale:
        raise ContractError('a is not symmetric within 1e-10')

    try:
        factor = linalg.cho_factor(a, lower=False, check_finite=False)
    except linalg.LinAlgError as exc:
        if jitter <= 0.0:
            raise DefinitenessError(f'{a.shape[0]}x{a.shape[0]} system is not positive-definite') from exc
        try:
            factor = linalg.cho_factor(a + jitter * np.eye(a.shape[0]), lower=False, check_finite=False)
        except linalg.LinAlgError as exc2:
            raise DefinitenessError(
                f'{a.shape[0]}x{a.shape[0]} system is not positive-definite even with jitter {jitter:g}'
            ) from exc2

    x = linalg.cho_solve(factor, b_mat, check_finite=False)
    return x.ravel() if vector_rhs else x


# ---------- PCA ----------
@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray
    basis: np.ndarray
    explained_variance: np.ndarray

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def apply(self, x) -> np.ndarray:
        x = as_matrix(x, name='x')
        if x.shape[0] != self.mean.shape[0]:
            raise ContractError(f'PCA model expects {self.mean.shape[0]} rows, got {x.shape[0]}')
        return self.basis.T @ (x - self.mean[:, None])

    def reconstruct(self, projected) -> np.ndarray:
        return self.basis @ as_matrix(projected, name='projected') + self.mean[:, None]


def pca_fit(x, *, dim: int | None = None, variance: float | None = None) -> PcaModel:
    """Fit PCA on the columns of ``x``; exactly one of ``dim`` / ``variance`` is given."""
    x = as_matrix(x, name='x')
    d, n = x.shape
    if (dim is None) == (variance is None):
        raise ParameterError('pca_fit needs exactly one of dim or variance')
    if n < 2:
        raise ContractError(f'pca_fit needs at least 2 samples, got {n}')

    mean = x.mean(axis=1)
    decomposition = svd(x - mean[:, None])
    explained = decomposition.s ** 2 / (n - 1)

    if dim is not None:
        if dim < 1 or dim > min(d, n):
            raise ParameterError(f'dim must be in [1, {min(d, n)}], got {dim}')
        p = dim
    else:
        if not 0.0 < variance <= 1.0:
            raise ParameterError(f'variance fraction must be in (0, 1], got {variance}')
        total = float(explained.sum())
        if total <= np.finfo(np.float64).tiny:
            raise DegenerateDataError(f'{d}x{n} data has zero variance')
        cumulative = np.cumsum(explained) / total
        p = int(np.searchsorted(cumulative, variance - 1e-12) + 1)
        p = min(p, explained.shape[0])

    logger.debug('pca_fit kept %d of %d components', p, explained.shape[0])
    return PcaModel(mean=mean, basis=decomposition.u[:, :p].copy(), explained_variance=explained[:p].copy())


# ---------- MATRIX FILES ----------
def write_matrix(path, m) -> Path:
    """Write a matrix as CSV (``.csv``) or the ``DADL`` binary format (anything else)."""
    path = Path(path)
    m = as_matrix(m)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == '.csv':
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow([m.shape[0], m.shape[1]])
            for row in m:
                writer.writerow([repr(float(v)) for v in row])
    else:
        with open(path, 'wb') as f:
            f.write(_HEADER.pack(MATRIX_MAGIC, m.shape[0], m.shape[1]))
            f.write(np.ascontiguousarray(m, dtype='<f8').tobytes())
    return path


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ContractError(f'matrix file not found: {path}')

    if path.suffix.lower() == '.csv':
        with open(path, newline='') as f:
            rows = list(csv.reader(f))
        if not rows:
            raise ContractError(f'{path} is empty')
        try:
            d, n = (int(v) for v in rows[0])
            data = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype=np.float64)
        except ValueError as exc:
            raise ContractError(f'{path} is not a valid matrix CSV: {exc}') from exc
        if data.shape != (d, n):
            raise ContractError(f'{path} header says {d}x{n} but holds {data.shape}')
        return as_matrix(data, name=str(path))

    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ContractError(f'{path} is too short to be a matrix file')
    magic, d, n = _HEADER.unpack_from(raw)
    if magic != MATRIX_MAGIC:
        raise ContractError(f'{path} does not start with the DADL magic bytes')
    body = raw[_HEADER.size:]
    if len(body) != d * n * 8:
        raise ContractError(f'{path} header says {d}x{n} but holds {len(body)} bytes of data')
    data = np.frombuffer(body, dtype='<f8').reshape(d, n).astype(np.float64)
    return as_matrix(data, name=str(path))
