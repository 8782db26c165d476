"""Common dictionary (K-SVD) and incoherence-penalized domain-specific dictionaries.

Objectives are unnormalized Frobenius sums. The incoherence term of a specific
dictionary is the sum of its per-atom penalties ``||d_j^T D^C||^2``, i.e.
``||D^T D^C||_F^2``, which is the quantity the closed-form atom update
minimizes.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .exceptions import ContractError, DegenerateAtomError, ParameterError, SingularSystemError
from .numerics import as_matrix, read_matrix, solve_spd, svd, write_matrix
from .sparse_coding import Dictionary, SparseCode, _batch_omp, joint_encode


logger = logging.getLogger(__name__)

CONVERGENCE_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class CommonDictResult:
    d_common: Dictionary
    z_source: SparseCode
    z_target: SparseCode
    objective_trace: list[float] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class SpecificDictResult:
    d_specific: Dictionary
    z: SparseCode
    gamma: SparseCode
    objective_trace: list[float] = field(default_factory=list)
    d_initial: Dictionary | None = None


class AtomUpdate(NamedTuple):
    atom: np.ndarray
    alpha: np.ndarray
    scale: float

    @property
    def raw_atom(self) -> np.ndarray:
        """The closed-form atom before normalization."""
        return self.atom * self.scale


# ---------- OBJECTIVES ----------
def common_objective(x, d_common, z) -> float:
    atoms = d_common.atoms if isinstance(d_common, Dictionary) else d_common
    coeffs = z.coeffs if isinstance(z, SparseCode) else z
    return float(np.sum((x - atoms @ coeffs) ** 2))


def incoherence(d_specific, d_common) -> float:
    spec = d_specific.atoms if isinstance(d_specific, Dictionary) else d_specific
    common = d_common.atoms if isinstance(d_common, Dictionary) else d_common
    return float(np.sum((spec.T @ common) ** 2))


def objective(x, d_common, z, d_specific, gamma, lam: float) -> float:
    spec = d_specific.atoms if isinstance(d_specific, Dictionary) else d_specific
    coeffs = gamma.coeffs if isinstance(gamma, SparseCode) else gamma
    residual = common_objective(x - spec @ coeffs, d_common, z)
    return residual + lam * incoherence(spec, d_common)


def _converged(trace: list[float]) -> bool:
    if len(trace) < 2:
        return False
    prev, cur = trace[-2], trace[-1]
    return abs(prev - cur) <= CONVERGENCE_TOL * max(abs(prev), np.finfo(np.float64).tiny)


# ---------- INITIALIZATION ----------
def initial_dictionary(x, n: int, seed) -> Dictionary:
    """``n`` distinct nonzero data columns, sampled without replacement and normalized."""
    x = as_matrix(x, name='x')
    candidates = np.flatnonzero(np.linalg.norm(x, axis=0) > 0.0)
    if n < 1 or n > candidates.size:
        raise ParameterError(f'cannot draw {n} atoms from {candidates.size} nonzero columns')
    rng = np.random.default_rng(seed)
    picked = rng.choice(candidates, size=n, replace=False)
    return Dictionary.from_columns(x[:, picked])


def _largest_residual_column(data: np.ndarray, residual: np.ndarray) -> np.ndarray | None:
    norms = np.linalg.norm(residual, axis=0)
    k = int(np.argmax(norms))
    column = data[:, k]
    length = np.linalg.norm(column)
    if norms[k] == 0.0 or length == 0.0:
        return None
    return column / length


def _keep_better(x: np.ndarray, atoms: np.ndarray, old: np.ndarray, new: np.ndarray) -> np.ndarray:
    old_err = np.sum((x - atoms @ old) ** 2, axis=0)
    new_err = np.sum((x - atoms @ new) ** 2, axis=0)
    return np.where(new_err <= old_err, new, old)


# ---------- COMMON DICTIONARY ----------
def learn_common(x_s, x_t, n: int, t: int, iters: int, seed) -> CommonDictResult:
    """K-SVD on ``[x_s | x_t]``; both reconstruction terms share only the common dictionary."""
    x_s = as_matrix(x_s, name='x_s')
    x_t = as_matrix(x_t, name='x_t')
    if x_s.shape[0] != x_t.shape[0]:
        raise ContractError(f'source has {x_s.shape[0]} rows but target has {x_t.shape[0]}')
    x = np.hstack([x_s, x_t])
    if n > x.shape[1]:
        raise ParameterError(f'{n} atoms requested from only {x.shape[1]} samples')
    if t < 1 or t > n:
        raise ParameterError(f'sparsity must be in [1, {n}], got {t}')

    atoms = initial_dictionary(x, n, seed).atoms.copy()
    codes = _batch_omp(atoms, x, t)
    trace = [common_objective(x, atoms, codes)]

    for it in range(iters):
        residual = x - atoms @ codes
        for j in range(n):
            support = np.flatnonzero(codes[j])
            if support.size == 0:
                replacement = _largest_residual_column(x, residual)
                if replacement is not None:
                    atoms[:, j] = replacement
                continue
            restricted = residual[:, support] + np.outer(atoms[:, j], codes[j, support])
            rank_one = svd(restricted)
            atoms[:, j] = rank_one.u[:, 0]
            codes[j, support] = rank_one.s[0] * rank_one.vt[0]
            residual[:, support] = restricted - np.outer(atoms[:, j], codes[j, support])

        codes = _keep_better(x, atoms, codes, _batch_omp(atoms, x, t))
        trace.append(common_objective(x, atoms, codes))
        logger.debug('learn_common iter %d objective %.6g', it, trace[-1])
        if _converged(trace):
            break

    n_s = x_s.shape[1]
    return CommonDictResult(
        d_common=Dictionary(atoms),
        z_source=SparseCode(codes[:, :n_s], t),
        z_target=SparseCode(codes[:, n_s:], t),
        objective_trace=trace,
    )


# ---------- SPECIFIC DICTIONARIES ----------
def _coherence_spectrum(common: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    evals, evecs = np.linalg.eigh(common @ common.T)
    return np.clip(evals, 0.0, None), evecs


def update_atom(j_hat, alpha_row, d_common, lam: float, *, spectrum=None) -> AtomUpdate:
    """Closed-form incoherent atom ``(||a||^2 I + lam C C^T)^-1 J a^T``, then normalize.

    The returned coefficient row is rescaled by the pre-normalization norm, so
    ``atom (x) alpha`` equals the closed-form product. ``spectrum`` is the
    eigendecomposition of ``C C^T``; sweeps pass it once instead of refactoring
    the system for every atom.
    """
    j_hat = as_matrix(j_hat, name='j_hat')
    alpha = np.asarray(alpha_row, dtype=np.float64).ravel()
    common = d_common.atoms if isinstance(d_common, Dictionary) else as_matrix(d_common, name='d_common')
    if lam < 0:
        raise ParameterError(f'lambda must be non-negative, got {lam}')
    if alpha.shape[0] != j_hat.shape[1]:
        raise ContractError(f'coefficient row has length {alpha.shape[0]}, residual has {j_hat.shape[1]} columns')
    if common.shape[0] != j_hat.shape[0]:
        raise ContractError(f'common atoms have {common.shape[0]} rows, residual has {j_hat.shape[0]}')

    energy = float(alpha @ alpha)
    if energy == 0.0:
        if lam == 0.0:
            raise SingularSystemError('atom update with a zero coefficient row and lambda = 0 is singular')
        raise DegenerateAtomError('zero coefficient row gives a zero atom')

    if spectrum is None:
        system = energy * np.eye(j_hat.shape[0]) + lam * (common @ common.T)
        raw = solve_spd(0.5 * (system + system.T), j_hat @ alpha)
    else:
        evals, evecs = spectrum
        raw = evecs @ ((evecs.T @ (j_hat @ alpha)) / (energy + lam * evals))
    scale = float(np.linalg.norm(raw))
    if scale == 0.0:
        raise DegenerateAtomError('closed-form atom has zero norm')
    return AtomUpdate(atom=raw / scale, alpha=alpha * scale, scale=scale)


def update_specific_dictionary(j_s, d_specific, gamma, d_common, lam: float, data=None) -> tuple[np.ndarray, np.ndarray]:
    """One atom-by-atom sweep over a specific dictionary with fixed common codes.

    ``j_s`` is ``x - D^C Z``. An update is kept only when it does not raise the
    atom's share of the objective. Atoms with an all-zero coefficient row are
    replaced by the normalized ``data`` column with the largest residual.
    """
    atoms = np.array(d_specific.atoms if isinstance(d_specific, Dictionary) else d_specific, dtype=np.float64)
    coeffs = np.array(gamma.coeffs if isinstance(gamma, SparseCode) else gamma, dtype=np.float64)
    common = d_common.atoms if isinstance(d_common, Dictionary) else d_common
    data = j_s if data is None else data

    residual = j_s - atoms @ coeffs
    spectrum = _coherence_spectrum(common)
    for j in range(atoms.shape[1]):
        alpha = coeffs[j]
        penalty = lam * float(np.sum((atoms[:, j] @ common) ** 2))

        if not alpha.any():
            replacement = _largest_residual_column(data, residual)
            if replacement is not None and lam * float(np.sum((replacement @ common) ** 2)) <= penalty:
                atoms[:, j] = replacement
            continue

        j_hat = residual + np.outer(atoms[:, j], alpha)
        try:
            update = update_atom(j_hat, alpha, common, lam, spectrum=spectrum)
        except SingularSystemError:
            continue
        fitted = j_hat - np.outer(update.atom, update.alpha)
        new_cost = float(np.sum(fitted ** 2)) + lam * float(np.sum((update.atom @ common) ** 2))
        old_cost = float(np.sum(residual ** 2)) + penalty
        if new_cost <= old_cost:
            atoms[:, j] = update.atom
            coeffs[j] = update.alpha
            residual = fitted
    return atoms, coeffs


def learn_specific(x, d_common: Dictionary, n: int, t: int, lam: float, iters: int, seed,
                   z_init: SparseCode | None = None) -> SpecificDictResult:
    """Alternate joint coding against ``[D_spec | D^C]`` and incoherent atom updates."""
    x = as_matrix(x, name='x')
    if d_common.d != x.shape[0]:
        raise ContractError(f'common dictionary has {d_common.d} rows, data has {x.shape[0]}')
    if lam < 0:
        raise ParameterError(f'lambda must be non-negative, got {lam}')
    if n != d_common.n:
        raise ContractError(f'specific dictionary size {n} differs from common size {d_common.n}')
    if t < 1 or t > 2 * n:
        raise ParameterError(f'sparsity must be in [1, {2 * n}], got {t}')

    start = initial_dictionary(x, n, seed)
    atoms = start.atoms.copy()
    common = d_common.atoms
    if z_init is None:
        z = np.zeros((d_common.n, x.shape[1]))
    else:
        if z_init.coeffs.shape != (d_common.n, x.shape[1]) or z_init.nonzeros().max(initial=0) > t:
            raise ContractError(f'initial common codes must be {d_common.n}x{x.shape[1]} with at most {t} nonzeros')
        z = z_init.coeffs.copy()
    gamma = np.zeros((n, x.shape[1]))
    trace = [objective(x, common, z, atoms, gamma, lam)]

    for it in range(iters):
        pair = joint_encode(d_common, [Dictionary(atoms)], [x], t)
        old_err = np.sum((x - common @ z - atoms @ gamma) ** 2, axis=0)
        new_err = np.sum((x - common @ pair.z.coeffs - atoms @ pair.gamma.coeffs) ** 2, axis=0)
        take = new_err <= old_err
        z = np.where(take, pair.z.coeffs, z)
        gamma = np.where(take, pair.gamma.coeffs, gamma)

        atoms, gamma = update_specific_dictionary(x - common @ z, atoms, gamma, common, lam, data=x)
        trace.append(objective(x, common, z, atoms, gamma, lam))
        logger.debug('learn_specific iter %d objective %.6g', it, trace[-1])
        if _converged(trace):
            break

    return SpecificDictResult(
        d_specific=Dictionary(atoms),
        z=SparseCode(z, t),
        gamma=SparseCode(gamma, t),
        objective_trace=trace,
        d_initial=start,
    )


# ---------- FILES ----------
DICTIONARY_ROLES = ('common', 'source', 'target', 'intermediate')


def write_dictionary(path, dictionary: Dictionary, *, role: str, t: int, lam: float, seed) -> Path:
    """Matrix file plus a ``.json`` sidecar describing how the dictionary was learned."""
    if role not in DICTIONARY_ROLES:
        raise ParameterError(f'unknown dictionary role {role!r}')
    path = write_matrix(path, dictionary.atoms)
    sidecar = {'role': role, 'n': dictionary.n, 'd': dictionary.d, 't': t, 'lambda': lam, 'seed': seed}
    path.with_suffix('.json').write_text(json.dumps(sidecar, indent=2, sort_keys=True) + '\n')
    return path


def read_dictionary(path) -> tuple[Dictionary, dict]:
    path = Path(path)
    sidecar_path = path.with_suffix('.json')
    sidecar = json.loads(sidecar_path.read_text()) if sidecar_path.exists() else {}
    return Dictionary(read_matrix(path)), sidecar
