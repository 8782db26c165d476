"""l0-constrained sparse coding: batch OMP and stacked multi-domain joint coding.

Every coding problem in the package goes through ``omp_encode`` or
``joint_encode``. An l1 (LASSO) solver would also fit the joint problem; this
package keeps one deterministic greedy solver so the joint sparsity bound
``||z_i||_0 + ||gamma_i||_0 <= T`` holds exactly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import ContractError, ParameterError
from .numerics import as_matrix, solve_spd, write_matrix


logger = logging.getLogger(__name__)

UNIT_NORM_TOL = 1e-8
RESIDUAL_TOL = 1e-12
GRAM_JITTER = 1e-12


# ---------- DICTIONARY ----------
@dataclass(frozen=True, eq=False)
class Dictionary:
    atoms: np.ndarray

    def __post_init__(self):
        atoms = as_matrix(self.atoms, name='dictionary')
        norms = np.linalg.norm(atoms, axis=0)
        bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_NORM_TOL)
        if bad.size:
            raise ContractError(
                f'dictionary atoms must be unit-norm; column {int(bad[0])} has norm {norms[bad[0]]:.6g}'
            )
        object.__setattr__(self, 'atoms', atoms)

    @classmethod
    def from_columns(cls, columns) -> Dictionary:
        """Normalize every column to unit length; zero columns are rejected."""
        columns = as_matrix(columns, name='columns')
        norms = np.linalg.norm(columns, axis=0)
        if np.any(norms == 0.0):
            raise ContractError(f'column {int(np.flatnonzero(norms == 0.0)[0])} is zero and cannot be normalized')
        return cls(columns / norms)

    @property
    def d(self) -> int:
        return self.atoms.shape[0]

    @property
    def n(self) -> int:
        return self.atoms.shape[1]

    def __matmul__(self, other):
        return self.atoms @ other


# ---------- CODES ----------
@dataclass(frozen=True, eq=False)
class SparseCode:
    coeffs: np.ndarray
    support_bound: int

    def __post_init__(self):
        coeffs = as_matrix(self.coeffs, name='coefficients')
        counts = np.count_nonzero(coeffs, axis=0)
        if counts.size and counts.max() > self.support_bound:
            col = int(np.argmax(counts))
            raise ContractError(
                f'column {col} has {int(counts[col])} nonzeros, above the bound {self.support_bound}'
            )
        object.__setattr__(self, 'coeffs', coeffs)

    @classmethod
    def zeros(cls, n: int, samples: int, support_bound: int) -> SparseCode:
        return cls(np.zeros((n, samples)), support_bound)

    @property
    def n(self) -> int:
        return self.coeffs.shape[0]

    @property
    def samples(self) -> int:
        return self.coeffs.shape[1]

    def nonzeros(self) -> np.ndarray:
        return np.count_nonzero(self.coeffs, axis=0)

    def write(self, path):
        return write_matrix(path, self.coeffs)


@dataclass(frozen=True, eq=False)
class JointCodePair:
    z: SparseCode
    gamma: SparseCode
    support_bound: int

    def __post_init__(self):
        if self.z.coeffs.shape != self.gamma.coeffs.shape:
            raise ContractError(f'z is {self.z.coeffs.shape} but gamma is {self.gamma.coeffs.shape}')
        joint = self.z.nonzeros() + self.gamma.nonzeros()
        if joint.size and joint.max() > self.support_bound:
            col = int(np.argmax(joint))
            raise ContractError(
                f'column {col} uses {int(joint[col])} atoms jointly, above the bound {self.support_bound}'
            )

    def nonzeros(self) -> np.ndarray:
        return self.z.nonzeros() + self.gamma.nonzeros()


# ---------- OMP CORE ----------
def _solve_gram_blocks(blocks: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    # One Cholesky check for the whole batch; a failing column retries alone with jitter.
    try:
        np.linalg.cholesky(blocks)
    except np.linalg.LinAlgError:
        return np.stack([solve_spd(b, r, jitter=GRAM_JITTER) for b, r in zip(blocks, rhs)])
    return np.linalg.solve(blocks, rhs[..., None])[..., 0]


def _batch_omp(atoms: np.ndarray, signals: np.ndarray, t: int) -> np.ndarray:
    """Greedy OMP run on all columns at once, selecting on Gram-updated correlations.

    Ties go to the smallest atom index; selected atoms are never re-selected.
    Atoms need not be unit-norm here; public entry points enforce that.
    """
    n = atoms.shape[1]
    samples = signals.shape[1]
    gram = atoms.T @ atoms
    gram = 0.5 * (gram + gram.T)
    initial = (atoms.T @ signals).T
    energy = np.einsum('ij,ij->j', signals, signals)

    support = np.zeros((samples, t), dtype=np.intp)
    values = np.zeros((samples, t))
    size = np.zeros(samples, dtype=np.intp)
    active = np.flatnonzero(np.sqrt(energy) >= RESIDUAL_TOL)

    for k in range(t):
        if active.size == 0:
            break
        chosen = support[active, :k]
        corr = initial[active]
        if k:
            corr = corr - np.einsum('ak,akm->am', values[active, :k], gram[chosen])
        scores = np.abs(corr)
        if k:
            np.put_along_axis(scores, chosen, -1.0, axis=1)
        support[active, k] = np.argmax(scores, axis=1)
        size[active] = k + 1

        chosen = support[active, :k + 1]
        blocks = gram[chosen[:, :, None], chosen[:, None, :]]
        rhs = np.take_along_axis(initial[active], chosen, axis=1)
        fitted = _solve_gram_blocks(blocks, rhs)
        values[active, :k + 1] = fitted

        # ||r||^2 = ||x||^2 - c.b at the least-squares fit; only near-exact fits get an explicit residual.
        estimate = energy[active] - np.einsum('ak,ak->a', fitted, rhs)
        finished = np.zeros(active.size, dtype=bool)
        for pos in np.flatnonzero(estimate <= 1e-12 * np.maximum(energy[active], 1.0)):
            col = active[pos]
            residual = signals[:, col] - atoms[:, chosen[pos]] @ fitted[pos]
            finished[pos] = np.linalg.norm(residual) < RESIDUAL_TOL
        active = active[~finished]

    coeffs = np.zeros((n, samples))
    for width in np.unique(size):
        if width == 0:
            continue
        cols = np.flatnonzero(size == width)
        coeffs[support[cols, :width].T, cols] = values[cols, :width].T
    return coeffs


def omp_encode(dictionary: Dictionary, x, t: int) -> SparseCode:
    if not isinstance(dictionary, Dictionary):
        dictionary = Dictionary(dictionary)
    x = as_matrix(x, name='x')
    if t < 1 or t > dictionary.n:
        raise ParameterError(f'sparsity must be in [1, {dictionary.n}], got {t}')
    if x.shape[0] != dictionary.d:
        raise ContractError(f'signals have {x.shape[0]} rows but atoms have {dictionary.d}')
    return SparseCode(_batch_omp(dictionary.atoms, x, t), t)


def stack_blocks(common: Dictionary, specifics: Sequence[Dictionary], signals: Sequence) -> tuple[np.ndarray, np.ndarray]:
    """Validate and stack ``[specific_i | common]`` row blocks with their signals."""
    if len(specifics) != len(signals):
        raise ContractError(f'{len(specifics)} dictionaries but {len(signals)} signal blocks')
    if not specifics:
        raise ContractError('joint coding needs at least one block')

    mats = []
    samples = None
    for index, (spec, sig) in enumerate(zip(specifics, signals)):
        sig = as_matrix(sig, name=f'signal block {index}')
        if spec.d != common.d or spec.n != common.n:
            raise ContractError(
                f'block {index}: dictionary is {spec.d}x{spec.n}, common dictionary is {common.d}x{common.n}'
            )
        if sig.shape[0] != common.d:
            raise ContractError(f'block {index}: signal has {sig.shape[0]} rows, expected {common.d}')
        if samples is None:
            samples = sig.shape[1]
        elif sig.shape[1] != samples:
            raise ContractError(f'block {index}: signal has {sig.shape[1]} columns, expected {samples}')
        mats.append(sig)

    d_tilde = np.vstack([np.hstack([spec.atoms, common.atoms]) for spec in specifics])
    x_tilde = np.vstack(mats)
    return x_tilde, d_tilde


def joint_encode(common: Dictionary, specifics: Sequence[Dictionary], signals: Sequence, t: int) -> JointCodePair:
    """Code every block with one shared ``[gamma; z]`` under a joint budget ``t``."""
    x_tilde, d_tilde = stack_blocks(common, specifics, signals)
    n = common.n
    if t < 1 or t > 2 * n:
        raise ParameterError(f'sparsity must be in [1, {2 * n}], got {t}')

    coeffs = _batch_omp(d_tilde, x_tilde, t)
    logger.debug('joint_encode: %d blocks, %d samples, stacked %dx%d', len(specifics), x_tilde.shape[1], *d_tilde.shape)
    return JointCodePair(
        z=SparseCode(coeffs[n:], t),
        gamma=SparseCode(coeffs[:n], t),
        support_bound=t,
    )
