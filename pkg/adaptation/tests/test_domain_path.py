from __future__ import annotations

import json
import tempfile
from pathlib import Path
from unittest import mock

import numpy as np
from django.test import SimpleTestCase

from adaptation.domain_path import (
	AdaptConfig,
	DomainPath,
	adapt,
	augment_features,
	dictionary_delta,
	encode_target,
	load_path,
	recover_source,
	residue,
	ridge_weight,
	save_path,
	verify_residue_identity,
)
from adaptation.exceptions import ConfigError, ContractError, ParameterError
from adaptation.sparse_coding import Dictionary, SparseCode, joint_encode


def _mk_dictionary(d: int, n: int, seed: int) -> Dictionary:
	atoms = np.random.default_rng(seed).normal(size=(d, n))
	return Dictionary(atoms / np.linalg.norm(atoms, axis=0))


def _mk_path(*, d: int = 8, n: int = 5, steps: int = 2, seed: int = 0, constant: bool = False) -> DomainPath:
	common = _mk_dictionary(d, n, seed)
	target = _mk_dictionary(d, n, seed + 1)
	if constant:
		specifics = [_mk_dictionary(d, n, seed + 2)] * (steps + 1)
	else:
		specifics = [_mk_dictionary(d, n, seed + 2 + k) for k in range(steps + 1)]
	rng = np.random.default_rng(seed + 100)
	return DomainPath(
		config=AdaptConfig(n=n, t=3),
		d_common=common,
		specifics=specifics,
		d_target=target,
		x_t_intermediate=[rng.normal(size=(d, 4)) for _ in range(steps + 1)],
		step_log=[],
		z_target=SparseCode.zeros(n, 4, 3),
		gamma_target=SparseCode.zeros(n, 4, 3),
		final_residue_norm=0.0,
		threshold=0.0,
	)


def _mk_shifted_pair(seed: int = 0):
	rng = np.random.default_rng(seed)
	x_s = rng.normal(size=(12, 40))
	mix = np.eye(12) + 0.3 * rng.normal(size=(12, 12))
	return x_s, mix @ x_s + 0.05 * rng.normal(size=(12, 40))


class ResidueTests(SimpleTestCase):
	def setUp(self):
		rng = np.random.default_rng(3)
		self.common = _mk_dictionary(5, 4, 1)
		self.d_k = _mk_dictionary(5, 4, 2)
		self.z = SparseCode(rng.normal(size=(4, 6)), 4)
		self.gamma = SparseCode(rng.normal(size=(4, 6)), 4)

	def test_exact_codes_give_zero(self):
		x_t = self.common.atoms @ self.z.coeffs + self.d_k.atoms @ self.gamma.coeffs
		self.assertLess(np.abs(residue(x_t, self.common, self.z, self.d_k, self.gamma)).max(), 1e-12)

	def test_zero_codes_return_target(self):
		x_t = np.random.default_rng(4).normal(size=(5, 6))
		zero = SparseCode.zeros(4, 6, 1)
		np.testing.assert_array_equal(residue(x_t, self.common, zero, self.d_k, zero), x_t)

	def test_matches_elementwise_loop(self):
		x_t = np.random.default_rng(5).normal(size=(5, 6))
		got = residue(x_t, self.common, self.z, self.d_k, self.gamma)
		for r in range(5):
			for c in range(6):
				value = x_t[r, c]
				for j in range(4):
					value -= self.common.atoms[r, j] * self.z.coeffs[j, c]
					value -= self.d_k.atoms[r, j] * self.gamma.coeffs[j, c]
				self.assertAlmostEqual(got[r, c], value, places=12)

	def test_shape_mismatch(self):
		with self.assertRaises(ContractError):
			residue(np.ones((5, 3)), self.common, self.z, self.d_k, self.gamma)


class DictionaryDeltaTests(SimpleTestCase):
	def test_zero_gamma_gives_zero_step(self):
		j_k = np.random.default_rng(0).normal(size=(5, 20))
		delta = dictionary_delta(j_k, SparseCode.zeros(6, 20, 1), 2.0)
		np.testing.assert_array_equal(delta, np.zeros((5, 6)))

	def test_huge_eta_crushes_step(self):
		rng = np.random.default_rng(1)
		j_k = rng.normal(size=(5, 20))
		gamma = SparseCode(rng.normal(size=(6, 20)), 6)
		delta = dictionary_delta(j_k, gamma, 1e9)
		self.assertLess(np.linalg.norm(delta), 1e-6 * np.linalg.norm(j_k @ gamma.coeffs.T))

	def test_matches_gradient_descent(self):
		eta = 2.0
		for seed in range(20):
			rng = np.random.default_rng(seed)
			j_k = rng.normal(size=(5, 20))
			g = rng.normal(size=(6, 20))
			delta = dictionary_delta(j_k, SparseCode(g, 6), eta)

			step = 1.0 / (2.0 * np.linalg.eigvalsh(g @ g.T + eta * np.eye(6)).max())
			guess = np.zeros((5, 6))
			for _ in range(5000):
				grad = -2.0 * (j_k - guess @ g) @ g.T + 2.0 * eta * guess
				guess = guess - step * grad
			self.assertLess(np.abs(guess - delta).max(), 1e-6)

			grad = -2.0 * (j_k - delta @ g) @ g.T + 2.0 * eta * delta
			self.assertLess(np.linalg.norm(grad), 1e-8)

	def test_rejects_non_positive_eta(self):
		with self.assertRaises(ParameterError):
			dictionary_delta(np.ones((2, 3)), SparseCode.zeros(2, 3, 1), 0.0)


class RidgeWeightTests(SimpleTestCase):
	def test_counts_eta_in_mean_code_energy(self):
		gamma = SparseCode(np.array([[1.0, 0.0, 2.0], [0.0, 3.0, 0.0]]), 2)
		self.assertAlmostEqual(ridge_weight(gamma, 10.0), 10.0 * 14.0 / 6.0, places=12)

	def test_zero_codes_fall_back_to_eta(self):
		self.assertEqual(ridge_weight(SparseCode.zeros(4, 5, 1), 7.0), 7.0)

	def test_step_is_invariant_to_intensity_scale(self):
		rng = np.random.default_rng(40)
		j_k = rng.normal(size=(6, 30))
		gamma = rng.normal(size=(5, 30))
		base = dictionary_delta(j_k, SparseCode(gamma, 5), ridge_weight(SparseCode(gamma, 5), 2000.0))
		for scale in (1e-3, 255.0):
			scaled = SparseCode(scale * gamma, 5)
			delta = dictionary_delta(scale * j_k, scaled, ridge_weight(scaled, 2000.0))
			np.testing.assert_allclose(delta, base, rtol=1e-9, atol=1e-14)

	def test_rejects_non_positive_eta(self):
		with self.assertRaises(ParameterError):
			ridge_weight(SparseCode.zeros(2, 2, 1), -1.0)


class ResidueIdentityTests(SimpleTestCase):
	def test_zero_gamma(self):
		j_k = np.random.default_rng(0).normal(size=(4, 10))
		lhs, rhs = verify_residue_identity(j_k, SparseCode.zeros(4, 10, 1), 1.0)
		self.assertAlmostEqual(lhs, 0.0, places=10)
		self.assertAlmostEqual(rhs, 0.0, places=10)

	def test_both_paths_agree_and_never_increase(self):
		etas = (0.1, 1.0, 10.0, 2000.0)
		for seed in range(50):
			rng = np.random.default_rng(seed)
			d = int(rng.integers(4, 17))
			n = int(rng.integers(4, 33))
			samples = int(rng.integers(10, 101))
			eta = etas[seed % 4]
			j_k = rng.normal(size=(d, samples))
			gamma = SparseCode(rng.normal(size=(n, samples)), n)
			lhs, rhs = verify_residue_identity(j_k, gamma, eta)
			self.assertLessEqual(abs(lhs - rhs), 1e-8 * abs(rhs) + 1e-12)
			self.assertLessEqual(lhs, 1e-9)

			delta = dictionary_delta(j_k, gamma, eta)
			self.assertLessEqual(np.linalg.norm(j_k - delta @ gamma.coeffs), np.linalg.norm(j_k) + 1e-9)

	def test_rank_one_gamma_matches_hand_formula(self):
		rng = np.random.default_rng(7)
		j_k = rng.normal(size=(5, 12))
		u = rng.normal(size=4)
		v = rng.normal(size=12)
		eta = 3.0
		s = np.linalg.norm(u) * np.linalg.norm(v)
		v_hat = v / np.linalg.norm(v)
		expected = -(s ** 4 + 2.0 * eta * s ** 2) / (s ** 2 + eta) ** 2 * float(np.sum((j_k @ v_hat) ** 2))
		_, rhs = verify_residue_identity(j_k, SparseCode(np.outer(u, v), 4), eta)
		self.assertAlmostEqual(rhs, expected, places=9)


class AdaptConfigTests(SimpleTestCase):
	def test_settings_defaults(self):
		cfg = AdaptConfig.from_settings()
		self.assertEqual((cfg.n, cfg.t, cfg.eta), (32, 8, 2000.0))

	def test_overrides_ignore_none(self):
		cfg = AdaptConfig.from_settings(n=12, eta=None)
		self.assertEqual(cfg.n, 12)
		self.assertEqual(cfg.eta, 2000.0)

	def test_invalid_values(self):
		with self.assertRaises(ParameterError):
			AdaptConfig(eta=0.0)
		with self.assertRaises(ParameterError):
			AdaptConfig(lam=-1.0)
		with self.assertRaises(ParameterError):
			AdaptConfig(max_domains=0)

	def test_unknown_keys(self):
		with self.assertRaises(ConfigError):
			AdaptConfig.from_dict({'n': 4, 'atoms': 4})
		with self.assertRaises(ConfigError):
			AdaptConfig.from_dict({'lam': 0.5})

	def test_lambda_key(self):
		cfg = AdaptConfig.from_dict({'lambda': 0.25, 'n': 12})
		self.assertEqual((cfg.lam, cfg.n), (0.25, 12))
		self.assertEqual(cfg.to_dict()['lambda'], 0.25)
		self.assertNotIn('lam', cfg.to_dict())
		self.assertEqual(AdaptConfig.from_dict(cfg.to_dict()), cfg)

	def test_values_are_coerced(self):
		cfg = AdaptConfig.from_dict({'n': '16', 't': 4.0, 'eta': '1500'})
		self.assertEqual((cfg.n, cfg.t, cfg.eta), (16, 4, 1500.0))
		self.assertIsInstance(cfg.n, int)

	def test_bad_values_are_config_errors(self):
		for data in ({'n': 8.5}, {'t': 'x'}, {'eta': None}, {'lambda': True}, {'eta': 0}, {'n': 0}):
			with self.assertRaises(ConfigError, msg=str(data)):
				AdaptConfig.from_dict(data)


class AdaptTests(SimpleTestCase):
	@classmethod
	def setUpClass(cls):
		super().setUpClass()
		cls.x_s, cls.x_t = _mk_shifted_pair()
		cls.cfg = AdaptConfig(n=6, t=3, lam=0.1, eta=50.0, delta_stop=1e-2, max_domains=4, dict_iters=3, seed=0)
		cls.path = adapt(cls.x_s, cls.x_t, cls.cfg)

	def test_path_shapes(self):
		path = self.path
		steps = path.n_domains
		self.assertGreaterEqual(steps, 1)
		self.assertLessEqual(steps, self.cfg.max_domains)
		self.assertEqual(len(path.specifics), steps + 1)
		self.assertEqual(len(path.x_t_intermediate), steps + 1)
		self.assertEqual(len(path.step_log), steps)
		self.assertEqual(len(path.residue_curve()), steps + 1)
		np.testing.assert_array_equal(path.x_t_intermediate[0], self.x_t)

	def test_stop_rule(self):
		last = self.path.step_log[-1]
		if self.path.truncated:
			self.assertEqual(self.path.n_domains, self.cfg.max_domains)
			self.assertGreater(last.delta_norm, self.path.threshold)
		else:
			self.assertLessEqual(last.delta_norm, self.path.threshold)
		for step in self.path.step_log[:-1]:
			self.assertGreater(step.delta_norm, self.path.threshold)

	def test_each_step_never_raises_residue(self):
		for step in self.path.step_log:
			self.assertLessEqual(step.updated_residue_norm, step.residue_norm + 1e-9)

	def test_specifics_stay_unit_norm(self):
		for spec in self.path.specifics:
			self.assertLess(np.abs(np.linalg.norm(spec.atoms, axis=0) - 1.0).max(), 1e-8)

	def test_final_codes_respect_budget(self):
		total = self.path.z_target.nonzeros() + self.path.gamma_target.nonzeros()
		self.assertTrue(np.all(total <= self.cfg.t))

	def test_encode_target_reproduces_final_codes(self):
		pair = encode_target(self.path, self.x_t)
		np.testing.assert_array_equal(pair.z.coeffs, self.path.z_target.coeffs)
		np.testing.assert_array_equal(pair.gamma.coeffs, self.path.gamma_target.coeffs)

	def test_deterministic(self):
		again = adapt(self.x_s, self.x_t, self.cfg)
		self.assertEqual(again.residue_curve(), self.path.residue_curve())
		np.testing.assert_array_equal(again.specifics[-1].atoms, self.path.specifics[-1].atoms)

	def test_row_mismatch(self):
		with self.assertRaises(ContractError):
			adapt(self.x_s, self.x_t[:10], self.cfg)

	def test_save_and_load(self):
		with tempfile.TemporaryDirectory() as tmp:
			save_path(self.path, tmp)
			loaded = load_path(tmp)
		self.assertEqual(loaded.n_domains, self.path.n_domains)
		self.assertEqual(loaded.config, self.cfg)
		self.assertEqual(loaded.residue_curve(), self.path.residue_curve())
		self.assertEqual(loaded.truncated, self.path.truncated)
		for a, b in zip(loaded.specifics, self.path.specifics):
			np.testing.assert_array_equal(a.atoms, b.atoms)
		np.testing.assert_array_equal(loaded.gamma_target.coeffs, self.path.gamma_target.coeffs)

	def test_ridge_recorded_per_step(self):
		for step in self.path.step_log:
			self.assertGreater(step.ridge, 0.0)

	def test_components_rebuild_intermediates(self):
		path = self.path
		self.assertEqual(len(path.x_t_common), path.n_domains)
		self.assertEqual(len(path.x_t_specific), path.n_domains)
		for k in range(1, path.n_domains + 1):
			np.testing.assert_allclose(
				path.x_t_common[k - 1] + path.x_t_specific[k - 1], path.x_t_intermediate[k], atol=1e-12)

	def test_save_exports_components_and_lambda(self):
		with tempfile.TemporaryDirectory() as tmp:
			save_path(self.path, tmp)
			manifest = json.loads((Path(tmp) / 'path.json').read_text())
			for k in range(1, self.path.n_domains + 1):
				self.assertTrue((Path(tmp) / 'xt_k' / f'common_{k:03d}.mat').exists())
				self.assertTrue((Path(tmp) / 'xt_k' / f'specific_{k:03d}.mat').exists())
			loaded = load_path(tmp)
		self.assertEqual(manifest['config']['lambda'], self.cfg.lam)
		self.assertNotIn('lam', manifest['config'])
		for a, b in zip(loaded.x_t_specific, self.path.x_t_specific):
			np.testing.assert_array_equal(a, b)

	def test_load_missing_manifest(self):
		with tempfile.TemporaryDirectory() as tmp:
			with self.assertRaises(ConfigError):
				load_path(tmp)


class RecoverSourceTests(SimpleTestCase):
	def test_first_step_is_single_block_coding(self):
		path = _mk_path(steps=1)
		x_s = np.random.default_rng(11).normal(size=(8, 7))
		recovered = recover_source(path, x_s, 3)
		pair = joint_encode(path.d_common, [path.d_target], [x_s], 3)
		np.testing.assert_array_equal(recovered.z_final.coeffs, pair.z.coeffs)
		np.testing.assert_array_equal(recovered.gamma_final.coeffs, pair.gamma.coeffs)
		expected = path.d_common.atoms @ pair.z.coeffs + path.specifics[1].atoms @ pair.gamma.coeffs
		np.testing.assert_allclose(recovered.x_s_intermediate[0], expected)

	def test_exactly_representable_source(self):
		path = _mk_path(steps=1)
		rng = np.random.default_rng(12)
		z = np.zeros((5, 6))
		gamma = np.zeros((5, 6))
		for c in range(6):
			z[rng.integers(5), c] = rng.normal()
			gamma[rng.integers(5), c] = rng.normal()
		x_s = path.d_common.atoms @ z + path.d_target.atoms @ gamma
		recovered = recover_source(path, x_s, 8)
		fit = path.d_common.atoms @ recovered.z_final.coeffs + path.d_target.atoms @ recovered.gamma_final.coeffs
		self.assertLess(np.abs(fit - x_s).max(), 1e-8)

	def test_support_bound_at_every_step(self):
		path = _mk_path(steps=4)
		x_s = np.random.default_rng(13).normal(size=(8, 9))
		recovered = recover_source(path, x_s, 3)
		self.assertEqual(len(recovered.x_s_intermediate), 4)
		for k in range(1, 5):
			dicts = [path.d_target] + path.specifics[1:k]
			signals = [x_s] + recovered.x_s_intermediate[:k - 1]
			pair = joint_encode(path.d_common, dicts, signals, 3)
			self.assertTrue(np.all(pair.nonzeros() <= 3))

	def test_zero_step_path(self):
		path = _mk_path(steps=0)
		x_s = np.random.default_rng(14).normal(size=(8, 3))
		recovered = recover_source(path, x_s, 3)
		pair = joint_encode(path.d_common, [path.d_target], [x_s], 3)
		self.assertEqual(recovered.x_s_intermediate, [])
		np.testing.assert_array_equal(recovered.z_final.coeffs, pair.z.coeffs)

	def test_one_coding_pass_per_step(self):
		path = _mk_path(steps=3)
		x_s = np.random.default_rng(15).normal(size=(8, 4))
		with mock.patch('adaptation.domain_path.joint_encode', wraps=joint_encode) as spy:
			recover_source(path, x_s, 3)
		self.assertEqual(spy.call_count, 3)

	def test_row_mismatch(self):
		with self.assertRaises(ContractError):
			recover_source(_mk_path(), np.ones((7, 3)), 3)


class AugmentFeaturesTests(SimpleTestCase):
	def test_zero_step_path_has_one_block(self):
		path = _mk_path(steps=0)
		x = np.random.default_rng(20).normal(size=(8, 5))
		recovered = recover_source(path, x, 3)
		source_aug, _ = augment_features(path, recovered, path.z_target, path.gamma_target)
		expected = path.d_common.atoms @ recovered.z_final.coeffs + path.specifics[0].atoms @ recovered.gamma_final.coeffs
		self.assertEqual(source_aug.shape, (8, 5))
		np.testing.assert_allclose(source_aug, expected)

	def test_constant_path_repeats_blocks(self):
		path = _mk_path(steps=3, constant=True)
		recovered = recover_source(path, np.random.default_rng(21).normal(size=(8, 5)), 3)
		source_aug, target_aug = augment_features(path, recovered, path.z_target, path.gamma_target)
		self.assertEqual(source_aug.shape, (32, 5))
		self.assertEqual(target_aug.shape, (32, 4))
		for i in range(1, 4):
			np.testing.assert_array_equal(source_aug[8 * i:8 * (i + 1)], source_aug[:8])

	def test_blocks_match_recomputation(self):
		path = _mk_path(steps=3)
		rng = np.random.default_rng(22)
		pair = joint_encode(path.d_common, [path.d_target], [rng.normal(size=(8, 4))], 3)
		recovered = recover_source(path, rng.normal(size=(8, 5)), 3)
		_, target_aug = augment_features(path, recovered, pair.z, pair.gamma)
		for i, spec in enumerate(path.specifics):
			block = path.d_common.atoms @ pair.z.coeffs + spec.atoms @ pair.gamma.coeffs
			np.testing.assert_allclose(target_aug[8 * i:8 * (i + 1)], block)

	def test_code_shape_mismatch(self):
		path = _mk_path(steps=1)
		recovered = recover_source(path, np.random.default_rng(23).normal(size=(8, 5)), 3)
		with self.assertRaises(ContractError):
			augment_features(path, recovered, SparseCode.zeros(5, 4, 3), SparseCode.zeros(5, 3, 3))
