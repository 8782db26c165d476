from __future__ import annotations

import numpy as np
from django.test import SimpleTestCase

from adaptation.domain_path import AdaptConfig, adapt
from adaptation.domain_synth import make_toy_dataset
from adaptation.pipeline import ExperimentConfig, run_experiment


TRIALS = 10
SHIFTS = (
	{'kind': 'gaussian', 'sigma': 2.0},
	{'kind': 'gaussian', 'sigma': 3.0},
	{'kind': 'motion', 'length': 5, 'theta': 135.0},
	{'kind': 'motion', 'length': 9, 'theta': 135.0},
)


def _mk_report(shift: dict):
	cfg = ExperimentConfig.from_dict({'shift': shift, 'trials': TRIALS, 'seed': 0})
	return run_experiment(cfg)


class ToyBlurAcceptanceTests(SimpleTestCase):
	"""Default configuration on the 10-class 16x16 toy set."""

	@classmethod
	def setUpClass(cls):
		super().setUpClass()
		cls.reports = [_mk_report(shift) for shift in SHIFTS]
		cls.unshifted = _mk_report({'kind': 'none'})

	def test_trials_complete(self):
		for report in [*self.reports, self.unshifted]:
			self.assertFalse(report.partial)

	def test_adaptation_beats_raw_features_under_blur(self):
		for shift, report in zip(SHIFTS, self.reports):
			with self.subTest(**shift):
				self.assertLess(report.baseline_mean, 0.95)
				self.assertGreater(report.mean_accuracy, report.baseline_mean)

	def test_adaptation_costs_little_without_shift(self):
		self.assertGreaterEqual(self.unshifted.mean_accuracy, self.unshifted.baseline_mean - 0.02)

	def test_paths_have_several_steps_and_stop_in_time(self):
		for report in self.reports:
			for trial in report.trials:
				self.assertFalse(trial.truncated)
				self.assertGreaterEqual(trial.n_domains, 2)
				self.assertLessEqual(trial.n_domains, 30)

	def test_residue_mostly_falls_along_the_path(self):
		steps = falling = 0
		for report in self.reports:
			for trial in report.trials:
				drops = np.diff(trial.residue_curve)
				steps += drops.size
				falling += int(np.sum(drops <= 0.0))
		self.assertGreaterEqual(falling / steps, 0.9)


class IdenticalDomainTests(SimpleTestCase):
	def test_path_stops_within_two_steps(self):
		ds = make_toy_dataset(10, 30, 16, 16, 0)
		path = adapt(ds.images, ds.images, AdaptConfig.from_settings())
		self.assertFalse(path.truncated)
		self.assertLessEqual(path.n_domains, 2)
