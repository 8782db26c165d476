"""Intermediate-domain path between a source and a target domain.

``adapt`` learns the common dictionary, the source/target specific
dictionaries, then walks from the source-specific dictionary toward the
target by alternating domain-adaptive joint coding and ridge-regularized
dictionary steps. ``recover_source`` and ``augment_features`` turn a finished
path into domain-adaptive features.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dict_learning import learn_common, learn_specific, read_dictionary, write_dictionary
from .exceptions import ConfigError, ContractError, ParameterError
from .numerics import as_matrix, frobenius, read_matrix, solve_spd, svd, write_matrix
from .sparse_coding import Dictionary, JointCodePair, SparseCode, joint_encode
from .validators import reject_unknown, require, to_float, to_int


logger = logging.getLogger(__name__)

_INT_FIELDS = ('n', 't', 'max_domains', 'dict_iters', 'seed')
# Config files spell the incoherence weight the way the objective does.
_JSON_NAMES = {'lam': 'lambda'}


# ---------- CONFIG ----------
@dataclass(frozen=True)
class AdaptConfig:
    n: int = 32
    t: int = 8
    lam: float = 0.1
    eta: float = 2000.0
    delta_stop: float = 1e-2
    max_domains: int = 30
    dict_iters: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ParameterError(f'n must be at least 1, got {self.n}')
        if self.t < 1:
            raise ParameterError(f't must be at least 1, got {self.t}')
        if self.lam < 0:
            raise ParameterError(f'lambda must be non-negative, got {self.lam}')
        if self.eta <= 0:
            raise ParameterError(f'eta must be positive, got {self.eta}')
        if self.delta_stop <= 0:
            raise ParameterError(f'delta_stop must be positive, got {self.delta_stop}')
        if self.max_domains < 1:
            raise ParameterError(f'max_domains must be at least 1, got {self.max_domains}')
        if self.dict_iters < 1:
            raise ParameterError(f'dict_iters must be at least 1, got {self.dict_iters}')

    @classmethod
    def from_settings(cls, **overrides) -> AdaptConfig:
        """Defaults from ``settings.DADL``; ``None`` overrides are ignored."""
        from django.conf import settings

        defaults = getattr(settings, 'DADL', {})
        values = {
            'n': defaults.get('ATOMS', cls.n),
            't': defaults.get('SPARSITY', cls.t),
            'lam': defaults.get('LAMBDA', cls.lam),
            'eta': defaults.get('ETA', cls.eta),
            'delta_stop': defaults.get('DELTA', cls.delta_stop),
            'max_domains': defaults.get('MAX_DOMAINS', cls.max_domains),
            'dict_iters': defaults.get('DICT_ITERS', cls.dict_iters),
            'seed': defaults.get('SEED', cls.seed),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def from_dict(cls, data: dict, *, exclude: tuple[str, ...] = ()) -> AdaptConfig:
        """Parse the JSON form (``lambda`` for ``lam``); missing keys take the settings defaults."""
        names = {_JSON_NAMES.get(f.name, f.name): f.name for f in fields(cls) if f.name not in exclude}
        data = reject_unknown(data, names, 'adapt')
        values = {}
        for key, value in data.items():
            name = names[key]
            if name in _INT_FIELDS:
                values[name] = require(to_int(value, min_value=0), f'adapt.{key}')
            else:
                values[name] = require(to_float(value), f'adapt.{key}')
        try:
            return cls.from_settings(**values)
        except ParameterError as exc:
            raise ConfigError(f'invalid adapt section: {exc}') from exc

    def to_dict(self, *, exclude: tuple[str, ...] = ()) -> dict:
        return {_JSON_NAMES.get(k, k): v for k, v in asdict(self).items() if k not in exclude}


# ---------- PATH TYPES ----------
@dataclass(frozen=True)
class StepRecord:
    k: int
    delta_norm: float
    residue_norm: float
    ridge: float
    updated_residue_norm: float
    normalized_residue_norm: float


@dataclass(frozen=True, eq=False)
class DomainPath:
    config: AdaptConfig
    d_common: Dictionary
    specifics: list[Dictionary]
    d_target: Dictionary
    x_t_intermediate: list[np.ndarray]
    step_log: list[StepRecord]
    z_target: SparseCode
    gamma_target: SparseCode
    final_residue_norm: float
    threshold: float
    truncated: bool = False
    # D^C Z^k and D^k G^k behind X_t^{k+1}, for k = 0..N-1.
    x_t_common: list[np.ndarray] = field(default_factory=list)
    x_t_specific: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        for index, spec in enumerate([self.d_common, self.d_target, *self.specifics]):
            if spec.d != self.d_common.d or spec.n != self.d_common.n:
                raise ContractError(f'dictionary {index} is {spec.d}x{spec.n}, expected {self.d_common.d}x{self.d_common.n}')

    @property
    def n_domains(self) -> int:
        """N, the index of the last domain-specific dictionary."""
        return len(self.specifics) - 1

    def residue_curve(self) -> list[float]:
        return [step.residue_norm for step in self.step_log] + [self.final_residue_norm]


@dataclass(frozen=True, eq=False)
class SourceRecovery:
    z_final: SparseCode
    gamma_final: SparseCode
    x_s_intermediate: list[np.ndarray] = field(default_factory=list)


# ---------- CLOSED FORMS ----------
def residue(x_t, d_common: Dictionary, z: SparseCode, d_k: Dictionary, gamma: SparseCode) -> np.ndarray:
    x_t = as_matrix(x_t, name='x_t')
    if d_common.d != x_t.shape[0] or d_k.d != x_t.shape[0]:
        raise ContractError(f'dictionaries have {d_common.d}/{d_k.d} rows, x_t has {x_t.shape[0]}')
    if z.coeffs.shape != (d_common.n, x_t.shape[1]) or gamma.coeffs.shape != (d_k.n, x_t.shape[1]):
        raise ContractError(f'codes are {z.coeffs.shape}/{gamma.coeffs.shape}, x_t has {x_t.shape[1]} columns')
    return x_t - d_common.atoms @ z.coeffs - d_k.atoms @ gamma.coeffs


def dictionary_delta(j_k, gamma_k: SparseCode, eta: float) -> np.ndarray:
    """Ridge step ``J G^T (eta I + G G^T)^-1``."""
    if eta <= 0:
        raise ParameterError(f'eta must be positive, got {eta}')
    j_k = as_matrix(j_k, name='j_k')
    gamma = gamma_k.coeffs
    if gamma.shape[1] != j_k.shape[1]:
        raise ContractError(f'gamma has {gamma.shape[1]} columns, residue has {j_k.shape[1]}')
    system = eta * np.eye(gamma.shape[0]) + gamma @ gamma.T
    return solve_spd(0.5 * (system + system.T), gamma @ j_k.T).T


def ridge_weight(gamma_k: SparseCode, eta: float) -> float:
    """Ridge weight of one path step, with ``eta`` counted in virtual samples.

    Each virtual sample carries the mean per-sample, per-atom code energy
    ``||G||_F^2 / (n N)``, so a step covers about ``N / (N + eta)`` of the
    distance to the least-squares dictionary at any intensity scale.
    """
    if eta <= 0:
        raise ParameterError(f'eta must be positive, got {eta}')
    gamma = gamma_k.coeffs
    energy = float(np.sum(gamma ** 2)) / gamma.size
    return eta * energy if energy > 0.0 else eta


def verify_residue_identity(j_k, gamma_k: SparseCode, eta: float) -> tuple[float, float]:
    """Residue drop computed directly and through the SVD of gamma; both should agree and be <= 0."""
    j_k = as_matrix(j_k, name='j_k')
    delta = dictionary_delta(j_k, gamma_k, eta)
    lhs = frobenius(j_k - delta @ gamma_k.coeffs) ** 2 - frobenius(j_k) ** 2

    decomposition = svd(gamma_k.coeffs)
    s2 = decomposition.s ** 2
    q = np.sqrt(s2 ** 2 + 2.0 * eta * s2) / (s2 + eta)
    rhs = -frobenius((j_k @ decomposition.vt.T) * q) ** 2
    return lhs, rhs


def _normalize_step(atoms: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(atoms, axis=0)
    out = fallback.copy()
    alive = norms > 0.0
    out[:, alive] = atoms[:, alive] / norms[alive]
    return out


# ---------- TARGET CODING ----------
def _target_blocks(x_t, d_target, specifics, intermediates, k):
    dicts = [d_target, specifics[k]] + [specifics[i] for i in range(k)]
    signals = [x_t, x_t] + [intermediates[i] for i in range(k)]
    return dicts, signals


def encode_target(path: DomainPath, x_t, t: int | None = None) -> JointCodePair:
    """Re-run the target-side coding recursion against a finished path's dictionaries.

    Applied to the training target this reproduces ``path.z_target`` / ``path.gamma_target``.
    """
    x_t = as_matrix(x_t, name='x_t')
    t = path.config.t if t is None else t
    if x_t.shape[0] != path.d_common.d:
        raise ContractError(f'x_t has {x_t.shape[0]} rows, path dictionaries have {path.d_common.d}')
    intermediates = [x_t]
    pair = None
    for k in range(path.n_domains + 1):
        dicts, signals = _target_blocks(x_t, path.d_target, path.specifics, intermediates, k)
        pair = joint_encode(path.d_common, dicts, signals, t)
        intermediates.append(path.d_common.atoms @ pair.z.coeffs + path.specifics[k].atoms @ pair.gamma.coeffs)
    return pair


# ---------- ADAPT ----------
def adapt(x_s, x_t, cfg: AdaptConfig) -> DomainPath:
    x_s = as_matrix(x_s, name='x_s')
    x_t = as_matrix(x_t, name='x_t')
    if x_s.shape[0] != x_t.shape[0]:
        raise ContractError(f'source has {x_s.shape[0]} rows but target has {x_t.shape[0]}')

    common = learn_common(x_s, x_t, cfg.n, cfg.t, cfg.dict_iters, cfg.seed)
    d_common = common.d_common
    source = learn_specific(x_s, d_common, cfg.n, cfg.t, cfg.lam, cfg.dict_iters, cfg.seed + 1, z_init=common.z_source)
    target = learn_specific(x_t, d_common, cfg.n, cfg.t, cfg.lam, cfg.dict_iters, cfg.seed + 2, z_init=common.z_target)
    d_target = target.d_specific

    specifics = [source.d_specific]
    intermediates = [x_t]
    shared: list[np.ndarray] = []
    specific: list[np.ndarray] = []
    threshold = cfg.delta_stop * frobenius(specifics[0].atoms)
    step_log: list[StepRecord] = []
    truncated = False
    k = 0

    while True:
        dicts, signals = _target_blocks(x_t, d_target, specifics, intermediates, k)
        pair = joint_encode(d_common, dicts, signals, cfg.t)
        d_k = specifics[k]
        j_k = residue(x_t, d_common, pair.z, d_k, pair.gamma)
        ridge = ridge_weight(pair.gamma, cfg.eta)
        delta = dictionary_delta(j_k, pair.gamma, ridge)
        next_atoms = _normalize_step(d_k.atoms + delta, d_k.atoms)

        record = StepRecord(
            k=k,
            delta_norm=frobenius(delta),
            residue_norm=frobenius(j_k),
            ridge=ridge,
            updated_residue_norm=frobenius(j_k - delta @ pair.gamma.coeffs),
            normalized_residue_norm=frobenius(
                x_t - d_common.atoms @ pair.z.coeffs - next_atoms @ pair.gamma.coeffs
            ),
        )
        step_log.append(record)
        logger.info('step %d: |dD|=%.6g |J|=%.6g ridge=%.6g', k, record.delta_norm, record.residue_norm, ridge)

        specifics.append(Dictionary(next_atoms))
        shared.append(d_common.atoms @ pair.z.coeffs)
        specific.append(d_k.atoms @ pair.gamma.coeffs)
        intermediates.append(shared[-1] + specific[-1])
        k += 1

        if record.delta_norm <= threshold:
            break
        if k >= cfg.max_domains:
            truncated = True
            logger.warning('path truncated at %d domains before |dD| reached %.6g', k, threshold)
            break

    dicts, signals = _target_blocks(x_t, d_target, specifics, intermediates, k)
    final = joint_encode(d_common, dicts, signals, cfg.t)
    final_residue = frobenius(residue(x_t, d_common, final.z, specifics[k], final.gamma))

    return DomainPath(
        config=cfg,
        d_common=d_common,
        specifics=specifics,
        d_target=d_target,
        x_t_intermediate=intermediates,
        step_log=step_log,
        z_target=final.z,
        gamma_target=final.gamma,
        final_residue_norm=final_residue,
        threshold=threshold,
        truncated=truncated,
        x_t_common=shared,
        x_t_specific=specific,
    )


# ---------- SOURCE / FEATURES ----------
def recover_source(path: DomainPath, x_s, t: int) -> SourceRecovery:
    x_s = as_matrix(x_s, name='x_s')
    if x_s.shape[0] != path.d_common.d:
        raise ContractError(f'x_s has {x_s.shape[0]} rows, path dictionaries have {path.d_common.d}')

    d_common = path.d_common
    recovered: list[np.ndarray] = []
    pair = joint_encode(d_common, [path.d_target], [x_s], t) if path.n_domains == 0 else None
    for k in range(1, path.n_domains + 1):
        dicts = [path.d_target] + [path.specifics[i] for i in range(1, k)]
        signals = [x_s] + recovered[:k - 1]
        pair = joint_encode(d_common, dicts, signals, t)
        recovered.append(d_common.atoms @ pair.z.coeffs + path.specifics[k].atoms @ pair.gamma.coeffs)

    return SourceRecovery(z_final=pair.z, gamma_final=pair.gamma, x_s_intermediate=recovered)


def path_features(path: DomainPath, z: SparseCode, gamma: SparseCode) -> np.ndarray:
    """``D^C Z + D^i G`` for every dictionary on the path, stacked in path order."""
    if z.n != path.d_common.n or gamma.n != path.d_common.n or z.samples != gamma.samples:
        raise ContractError(f'codes are {z.coeffs.shape}/{gamma.coeffs.shape}, dictionaries have {path.d_common.n} atoms')
    shared = path.d_common.atoms @ z.coeffs
    return np.vstack([shared + spec.atoms @ gamma.coeffs for spec in path.specifics])


def augment_features(path: DomainPath, src: SourceRecovery, z_t_final: SparseCode,
                     gamma_t_final: SparseCode) -> tuple[np.ndarray, np.ndarray]:
    """Augmented (source, target) features of a finished path."""
    return path_features(path, src.z_final, src.gamma_final), path_features(path, z_t_final, gamma_t_final)


# ---------- FILES ----------
def write_step_log(path_obj: DomainPath, csv_path) -> Path:
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['k', 'delta_norm', 'residue_norm'])
        for step in path_obj.step_log:
            writer.writerow([step.k, repr(step.delta_norm), repr(step.residue_norm)])
    return csv_path


def save_path(path_obj: DomainPath, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cfg = path_obj.config

    write_dictionary(directory / 'common.mat', path_obj.d_common, role='common', t=cfg.t, lam=cfg.lam, seed=cfg.seed)
    write_dictionary(directory / 'target.mat', path_obj.d_target, role='target', t=cfg.t, lam=cfg.lam, seed=cfg.seed + 2)
    for k, spec in enumerate(path_obj.specifics):
        role = 'source' if k == 0 else 'intermediate'
        write_dictionary(directory / f'specific_{k:03d}.mat', spec, role=role, t=cfg.t, lam=cfg.lam, seed=cfg.seed)
    for k, features in enumerate(path_obj.x_t_intermediate):
        write_matrix(directory / 'xt_k' / f'xt_{k:03d}.mat', features)
    for k, (shared, specific) in enumerate(zip(path_obj.x_t_common, path_obj.x_t_specific), start=1):
        write_matrix(directory / 'xt_k' / f'common_{k:03d}.mat', shared)
        write_matrix(directory / 'xt_k' / f'specific_{k:03d}.mat', specific)
    path_obj.z_target.write(directory / 'z_target.mat')
    path_obj.gamma_target.write(directory / 'gamma_target.mat')
    write_step_log(path_obj, directory / 'residue.csv')

    manifest = {
        'config': cfg.to_dict(),
        'n_domains': path_obj.n_domains,
        'threshold': path_obj.threshold,
        'truncated': path_obj.truncated,
        'final_residue_norm': path_obj.final_residue_norm,
        'step_log': [asdict(step) for step in path_obj.step_log],
    }
    (directory / 'path.json').write_text(json.dumps(manifest, indent=2, sort_keys=True) + '\n')
    return directory


def load_path(directory) -> DomainPath:
    directory = Path(directory)
    manifest_path = directory / 'path.json'
    if not manifest_path.exists():
        raise ConfigError(f'{directory} does not contain a path.json')
    manifest = json.loads(manifest_path.read_text())
    cfg = AdaptConfig.from_dict(manifest['config'])
    count = manifest['n_domains'] + 1

    d_common, _ = read_dictionary(directory / 'common.mat')
    d_target, _ = read_dictionary(directory / 'target.mat')
    specifics = [read_dictionary(directory / f'specific_{k:03d}.mat')[0] for k in range(count)]
    intermediates = [read_matrix(directory / 'xt_k' / f'xt_{k:03d}.mat') for k in range(count)]
    shared = [read_matrix(directory / 'xt_k' / f'common_{k:03d}.mat') for k in range(1, count)]
    specific = [read_matrix(directory / 'xt_k' / f'specific_{k:03d}.mat') for k in range(1, count)]

    return DomainPath(
        config=cfg,
        d_common=d_common,
        specifics=specifics,
        d_target=d_target,
        x_t_intermediate=intermediates,
        step_log=[StepRecord(**step) for step in manifest['step_log']],
        z_target=SparseCode(read_matrix(directory / 'z_target.mat'), cfg.t),
        gamma_target=SparseCode(read_matrix(directory / 'gamma_target.mat'), cfg.t),
        final_residue_norm=manifest['final_residue_norm'],
        threshold=manifest['threshold'],
        truncated=manifest['truncated'],
        x_t_common=shared,
        x_t_specific=specific,
    )
