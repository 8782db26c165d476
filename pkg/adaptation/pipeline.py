"""Experiment runner: toy or file datasets, domain shift, adaptation, PCA and a classifier head."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .domain_path import AdaptConfig, adapt, augment_features, recover_source
from .domain_synth import (
    ToyImageDataset,
    gaussian_blur_shift,
    linear_shift,
    make_toy_dataset,
    motion_blur_shift,
    random_affine,
    read_dataset,
)
from .exceptions import ConfigError, ContractError, DadlError, ParameterError
from .numerics import as_matrix, pca_fit, solve_spd
from .validators import reject_unknown, require, to_float, to_int


logger = logging.getLogger(__name__)

CLASSIFIERS = ('nearest_neighbor', 'linear_ovr')
SHIFT_KINDS = ('none', 'gaussian', 'motion', 'affine')
DATASET_KINDS = ('toy', 'files')
DEFAULT_ETA_GRID = (1500.0, 2000.0, 2500.0)
DEFAULT_ATOM_GRID = (16, 32, 64)
# Target draws reuse the class templates of the trial seed with different samples.
TARGET_SAMPLE_SEED = 1


# ---------- CONFIG ----------
@dataclass(frozen=True)
class DatasetSpec:
    kind: str = 'toy'
    classes: int = 10
    per_class: int = 30
    height: int = 16
    width: int = 16
    source: str | None = None
    source_labels: str | None = None
    target: str | None = None
    target_labels: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> DatasetSpec:
        data = reject_unknown(data, {f for f in cls.__dataclass_fields__}, 'dataset')
        kind = data.get('kind', cls.kind)
        if kind not in DATASET_KINDS:
            raise ConfigError(f'dataset.kind must be one of {", ".join(DATASET_KINDS)}, got {kind!r}')
        values = {'kind': kind}
        for name in ('classes', 'per_class'):
            if name in data:
                values[name] = require(to_int(data[name], min_value=2), f'dataset.{name}')
        for name in ('height', 'width'):
            if name in data:
                values[name] = require(to_int(data[name], min_value=1), f'dataset.{name}')
        for name in ('source', 'source_labels', 'target', 'target_labels'):
            if data.get(name) is not None:
                values[name] = str(data[name])

        spec = cls(**values)
        if kind == 'files':
            for name in ('source', 'source_labels', 'target', 'target_labels'):
                value = getattr(spec, name)
                if value is None:
                    raise ConfigError(f'dataset.{name} is required for file datasets')
                if not Path(value).exists():
                    raise ConfigError(f'dataset.{name} not found: {value}')
        return spec


@dataclass(frozen=True)
class ShiftSpec:
    kind: str = 'none'
    sigma: float = 3.0
    length: int = 9
    theta: float = 135.0
    mix: float = 0.3
    offset: float = 0.1

    @classmethod
    def from_dict(cls, data: dict) -> ShiftSpec:
        data = reject_unknown(data, {f for f in cls.__dataclass_fields__}, 'shift')
        kind = data.get('kind', cls.kind)
        if kind not in SHIFT_KINDS:
            raise ConfigError(f'shift.kind must be one of {", ".join(SHIFT_KINDS)}, got {kind!r}')
        values = {'kind': kind}
        if 'sigma' in data:
            values['sigma'] = require(to_float(data['sigma'], min_value=0.0), 'shift.sigma')
        if 'length' in data:
            length = to_int(data['length'], min_value=1)
            if length is None or length % 2 == 0:
                raise ConfigError('shift.length must be a positive odd integer')
            values['length'] = length
        if 'theta' in data:
            values['theta'] = require(to_float(data['theta']), 'shift.theta')
        if 'mix' in data:
            values['mix'] = require(to_float(data['mix'], min_value=0.0, max_value=1.0), 'shift.mix')
        if 'offset' in data:
            values['offset'] = require(to_float(data['offset'], min_value=0.0), 'shift.offset')
        return cls(**values)

    def apply(self, ds: ToyImageDataset, seed) -> ToyImageDataset:
        if self.kind == 'gaussian':
            return gaussian_blur_shift(ds, self.sigma)
        if self.kind == 'motion':
            return motion_blur_shift(ds, self.length, self.theta)
        if self.kind == 'affine':
            a, b = random_affine(ds.images.shape[0], self.mix, self.offset, seed)
            return ds.with_images(linear_shift(ds.images, a, b))
        return ds


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    shift: ShiftSpec = field(default_factory=ShiftSpec)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    pca: dict = field(default_factory=lambda: {'variance': 0.99})
    classifier: str = 'nearest_neighbor'
    trials: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError(f'trials must be at least 1, got {self.trials}')
        if self.classifier not in CLASSIFIERS:
            raise ConfigError(f'classifier must be one of {", ".join(CLASSIFIERS)}, got {self.classifier!r}')
        if set(self.pca) not in ({'variance'}, {'dim'}):
            raise ConfigError('pca must hold exactly one of "variance" or "dim"')

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        data = reject_unknown(data, {f for f in cls.__dataclass_fields__}, 'config')
        values = {}
        if 'dataset' in data:
            values['dataset'] = DatasetSpec.from_dict(data['dataset'])
        if 'shift' in data:
            values['shift'] = ShiftSpec.from_dict(data['shift'])
        if 'adapt' in data:
            if isinstance(data['adapt'], dict) and 'seed' in data['adapt']:
                raise ConfigError('adapt.seed is not accepted: trial i adapts with seed + i from the top level')
            values['adapt'] = AdaptConfig.from_dict(data['adapt'], exclude=('seed',))
        else:
            values['adapt'] = AdaptConfig.from_settings()
        if 'pca' in data:
            pca = reject_unknown(data['pca'], {'variance', 'dim'}, 'pca')
            if len(pca) != 1:
                raise ConfigError('pca must hold exactly one of "variance" or "dim"')
            if 'dim' in pca:
                values['pca'] = {'dim': require(to_int(pca['dim'], min_value=1), 'pca.dim')}
            else:
                values['pca'] = {'variance': require(
                    to_float(pca['variance'], min_value=1e-12, max_value=1.0), 'pca.variance')}
        if 'classifier' in data:
            values['classifier'] = str(data['classifier'])
        if 'trials' in data:
            values['trials'] = require(to_int(data['trials'], min_value=1), 'trials')
        if 'seed' in data:
            values['seed'] = require(to_int(data['seed'], min_value=0), 'seed')
        return cls(**values)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f'config file not found: {path}')
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f'{path} is not valid JSON: {exc}') from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            'dataset': asdict(self.dataset),
            'shift': asdict(self.shift),
            'adapt': self.adapt.to_dict(exclude=('seed',)),
            'pca': dict(self.pca),
            'classifier': self.classifier,
            'trials': self.trials,
            'seed': self.seed,
        }


# ---------- REPORT ----------
@dataclass
class TrialRecord:
    index: int
    seed: int
    accuracy: float | None = None
    baseline_accuracy: float | None = None
    n_domains: int | None = None
    truncated: bool = False
    residue_curve: list[float] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    trials: list[TrialRecord] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return any(not trial.ok for trial in self.trials)

    def accuracies(self) -> list[float]:
        return [trial.accuracy for trial in self.trials if trial.ok]

    def baseline_accuracies(self) -> list[float]:
        return [trial.baseline_accuracy for trial in self.trials if trial.baseline_accuracy is not None]

    @property
    def mean_accuracy(self) -> float | None:
        values = self.accuracies()
        return float(np.mean(values)) if values else None

    @property
    def std_accuracy(self) -> float | None:
        values = self.accuracies()
        return float(np.std(values)) if values else None

    @property
    def baseline_mean(self) -> float | None:
        values = self.baseline_accuracies()
        return float(np.mean(values)) if values else None

    def to_dict(self, *, timings: bool = True) -> dict:
        trials = []
        for trial in self.trials:
            row = asdict(trial)
            if not timings:
                row.pop('timings')
            trials.append(row)
        return {
            'config': self.config.to_dict(),
            'partial': self.partial,
            'mean_accuracy': self.mean_accuracy,
            'std_accuracy': self.std_accuracy,
            'baseline_mean_accuracy': self.baseline_mean,
            'trials': trials,
        }


# ---------- CLASSIFIERS ----------
def _nearest_neighbor(train_x, train_y, test_x) -> np.ndarray:
    distances = cdist(test_x.T, train_x.T, 'euclidean')
    nearest = distances == distances.min(axis=1, keepdims=True)
    return np.where(nearest, train_y[None, :], np.iinfo(np.int64).max).min(axis=1)


def _linear_ovr(train_x, train_y, test_x, classes) -> np.ndarray:
    a = np.vstack([train_x, np.ones((1, train_x.shape[1]))])
    gram = a @ a.T
    gram = 0.5 * (gram + gram.T)
    rho = 1e-3 * np.trace(gram) / gram.shape[0]
    targets = np.where(train_y[None, :] == classes[:, None], 1.0, -1.0)
    weights = solve_spd(gram + rho * np.eye(gram.shape[0]), a @ targets.T)
    scores = weights.T @ np.vstack([test_x, np.ones((1, test_x.shape[1]))])
    return classes[np.argmax(scores, axis=0)]


def classify(train_x, train_y, test_x, kind: str, *, classes=None) -> np.ndarray:
    """Predict a label for every column of ``test_x``.

    ``classes``, when given, lists the labels every one of which must appear in ``train_y``.
    """
    train_x = as_matrix(train_x, name='train_x')
    test_x = as_matrix(test_x, name='test_x')
    train_y = np.asarray(train_y, dtype=np.int64).ravel()
    if train_x.shape[0] != test_x.shape[0]:
        raise ContractError(f'train features have {train_x.shape[0]} rows, test features have {test_x.shape[0]}')
    if train_y.shape[0] != train_x.shape[1]:
        raise ContractError(f'{train_y.shape[0]} labels for {train_x.shape[1]} training samples')

    present = np.unique(train_y)
    if classes is not None:
        missing = np.setdiff1d(np.asarray(classes, dtype=np.int64), present)
        if missing.size:
            raise ContractError(f'class {int(missing[0])} has no training samples')

    if kind == 'nearest_neighbor':
        return _nearest_neighbor(train_x, train_y, test_x)
    if kind == 'linear_ovr':
        return _linear_ovr(train_x, train_y, test_x, present)
    raise ParameterError(f'unknown classifier {kind!r}')


def accuracy(predicted, truth) -> float:
    predicted = np.asarray(predicted).ravel()
    truth = np.asarray(truth).ravel()
    if predicted.shape != truth.shape:
        raise ContractError(f'{predicted.shape[0]} predictions for {truth.shape[0]} labels')
    return float(np.mean(predicted == truth))


# ---------- TRIALS ----------
def load_domains(cfg: ExperimentConfig, seed: int) -> tuple[ToyImageDataset, ToyImageDataset]:
    spec = cfg.dataset
    if spec.kind == 'toy':
        source = make_toy_dataset(spec.classes, spec.per_class, spec.height, spec.width, seed)
        target = make_toy_dataset(spec.classes, spec.per_class, spec.height, spec.width, seed,
                                  sample_seed=TARGET_SAMPLE_SEED)
    else:
        # Plain feature files carry no image shape unless a blur has to be applied.
        h, w = (spec.height, spec.width) if cfg.shift.kind in ('gaussian', 'motion') else (None, None)
        source = read_dataset(spec.source, spec.source_labels, h, w)
        target = read_dataset(spec.target, spec.target_labels, h, w)
    return source, cfg.shift.apply(target, seed)


def _evaluate(cfg: ExperimentConfig, train_x, train_y, test_x, test_y, classes) -> float:
    head = pca_fit(np.hstack([train_x, test_x]), **cfg.pca)
    predicted = classify(head.apply(train_x), train_y, head.apply(test_x), cfg.classifier, classes=classes)
    return accuracy(predicted, test_y)


def run_trial(cfg: ExperimentConfig, index: int) -> TrialRecord:
    seed = cfg.seed + index
    record = TrialRecord(index=index, seed=seed)
    clock = time.perf_counter()

    def lap(phase):
        nonlocal clock
        now = time.perf_counter()
        record.timings[phase] = now - clock
        clock = now

    try:
        source, target = load_domains(cfg, seed)
        classes = np.arange(cfg.dataset.classes) if cfg.dataset.kind == 'toy' else None
        lap('data')

        record.baseline_accuracy = _evaluate(cfg, source.images, source.labels, target.images, target.labels, classes)
        lap('baseline')

        # adapt.seed is refused at parse time; each trial adapts with its own seed.
        path = adapt(source.images, target.images, replace(cfg.adapt, seed=seed))
        record.n_domains = path.n_domains
        record.truncated = path.truncated
        record.residue_curve = path.residue_curve()
        lap('adapt')

        recovered = recover_source(path, source.images, cfg.adapt.t)
        source_features, target_features = augment_features(path, recovered, path.z_target, path.gamma_target)
        lap('features')

        record.accuracy = _evaluate(cfg, source_features, source.labels, target_features, target.labels, classes)
        lap('classify')
    except DadlError as exc:
        record.error = f'{type(exc).__name__}: {exc}'
        logger.error('trial %d (seed %d) failed: %s', index, seed, record.error)
    return record


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    report = ExperimentReport(config=cfg)
    for index in range(cfg.trials):
        logger.info('trial %d/%d started (seed %d)', index + 1, cfg.trials, cfg.seed + index)
        record = run_trial(cfg, index)
        report.trials.append(record)
        logger.info(
            'trial %d/%d done: accuracy=%s baseline=%s domains=%s timings=%s',
            index + 1, cfg.trials, record.accuracy, record.baseline_accuracy, record.n_domains,
            {k: round(v, 3) for k, v in record.timings.items()},
        )
    return report


def sensitivity_sweep(cfg: ExperimentConfig, eta_values=DEFAULT_ETA_GRID, atom_values=DEFAULT_ATOM_GRID) -> list[dict]:
    rows = []
    for eta in eta_values:
        for n in atom_values:
            report = run_experiment(replace(cfg, adapt=replace(cfg.adapt, eta=float(eta), n=int(n))))
            domains = [trial.n_domains for trial in report.trials if trial.n_domains is not None]
            rows.append({
                'eta': float(eta),
                'n': int(n),
                'mean_accuracy': report.mean_accuracy,
                'baseline_mean_accuracy': report.baseline_mean,
                'mean_domains': float(np.mean(domains)) if domains else None,
                'partial': report.partial,
            })
    return rows


# ---------- OUTPUT ----------
def write_report(report: ExperimentReport, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / 'report.json').write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + '\n')

    with open(out_dir / 'residue.csv', 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['trial', 'k', 'residue_norm'])
        for trial in report.trials:
            for k, value in enumerate(trial.residue_curve):
                writer.writerow([trial.index, k, repr(value)])

    with open(out_dir / 'accuracy.csv', 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['trial', 'seed', 'accuracy', 'baseline_accuracy', 'n_domains', 'truncated', 'error'])
        for trial in report.trials:
            writer.writerow([trial.index, trial.seed, trial.accuracy, trial.baseline_accuracy,
                             trial.n_domains, trial.truncated, trial.error or ''])
    return out_dir


def write_sensitivity(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = ['eta', 'n', 'mean_accuracy', 'baseline_mean_accuracy', 'mean_domains', 'partial']
    with open(path, 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
    return path


def record_report(report: ExperimentReport, name: str, out_dir=''):
    """Store a finished report as an ExperimentRun with one TrialResult per trial."""
    from django.db import transaction

    from .models import ExperimentRun, TrialResult

    with transaction.atomic():
        run = ExperimentRun.objects.create(
            name=name,
            config=report.config.to_dict(),
            status=ExperimentRun.STATUS_PARTIAL if report.partial else ExperimentRun.STATUS_COMPLETE,
            mean_accuracy=report.mean_accuracy,
            std_accuracy=report.std_accuracy,
            baseline_mean_accuracy=report.baseline_mean,
            output_dir=str(out_dir),
        )
        TrialResult.objects.bulk_create([
            TrialResult(
                run=run,
                index=trial.index,
                seed=trial.seed,
                accuracy=trial.accuracy,
                baseline_accuracy=trial.baseline_accuracy,
                n_domains=trial.n_domains,
                truncated=trial.truncated,
                residue_curve=trial.residue_curve,
                error=trial.error or '',
            )
            for trial in report.trials
        ])
    return run
