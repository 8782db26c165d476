from __future__ import annotations

import numpy as np
from django.test import SimpleTestCase

from adaptation.exceptions import ContractError, ParameterError
from adaptation.sparse_coding import Dictionary, SparseCode, joint_encode, omp_encode, stack_blocks


def _mk_dictionary(d: int, n: int, seed: int) -> Dictionary:
	atoms = np.random.default_rng(seed).normal(size=(d, n))
	return Dictionary(atoms / np.linalg.norm(atoms, axis=0))


def _naive_omp(atoms, x, t):
	# Residual-driven OMP with a least-squares refit at every step.
	coeffs = np.zeros((atoms.shape[1], x.shape[1]))
	for i in range(x.shape[1]):
		signal = x[:, i]
		residual = signal.copy()
		support = []
		c = np.zeros(0)
		if np.linalg.norm(signal) < 1e-12:
			continue
		for _ in range(t):
			scores = np.abs(atoms.T @ residual)
			scores[support] = -1.0
			support.append(int(np.argmax(scores)))
			c = np.linalg.lstsq(atoms[:, support], signal, rcond=None)[0]
			residual = signal - atoms[:, support] @ c
			if np.linalg.norm(residual) < 1e-12:
				break
		coeffs[support, i] = c
	return coeffs


class DictionaryTests(SimpleTestCase):
	def test_rejects_non_unit_atoms(self):
		with self.assertRaises(ContractError):
			Dictionary(np.array([[2.0, 0.0], [0.0, 1.0]]))

	def test_from_columns_normalizes(self):
		d = Dictionary.from_columns(np.array([[3.0, 0.0], [4.0, 2.0]]))
		np.testing.assert_allclose(np.linalg.norm(d.atoms, axis=0), [1.0, 1.0])

	def test_from_columns_rejects_zero_column(self):
		with self.assertRaises(ContractError):
			Dictionary.from_columns(np.array([[1.0, 0.0], [0.0, 0.0]]))

	def test_sparse_code_bound(self):
		with self.assertRaises(ContractError):
			SparseCode(np.ones((3, 2)), 2)


class OmpTests(SimpleTestCase):
	def test_atom_reproduces_single_coefficient(self):
		dictionary = _mk_dictionary(8, 12, 0)
		for t in (1, 3):
			code = omp_encode(dictionary, dictionary.atoms[:, [5]], t)
			expected = np.zeros((12, 1))
			expected[5, 0] = 1.0
			np.testing.assert_allclose(code.coeffs, expected, atol=1e-12)

	def test_orthogonal_expansion(self):
		dictionary = Dictionary(np.eye(4))
		x = np.array([[2.0], [3.0], [0.0], [0.0]])
		code = omp_encode(dictionary, x, 2)
		np.testing.assert_allclose(code.coeffs[:, 0], [2.0, 3.0, 0.0, 0.0])
		np.testing.assert_allclose(dictionary @ code.coeffs, x)

	def test_zero_signal_gives_zero_code(self):
		code = omp_encode(_mk_dictionary(6, 8, 1), np.zeros((6, 2)), 3)
		self.assertEqual(int(np.count_nonzero(code.coeffs)), 0)

	def test_matches_naive_oracle(self):
		for seed in range(100):
			dictionary = _mk_dictionary(8, 12, seed)
			x = np.random.default_rng(1000 + seed).normal(size=(8, 4))
			got = omp_encode(dictionary, x, 3).coeffs
			want = _naive_omp(dictionary.atoms, x, 3)
			np.testing.assert_array_equal(got != 0, want != 0)
			self.assertLess(np.abs(got - want).max(), 1e-10)

	def test_scale_equivariance(self):
		dictionary = _mk_dictionary(10, 16, 7)
		x = np.random.default_rng(8).normal(size=(10, 12))
		base = omp_encode(dictionary, x, 4).coeffs
		for factor in (0.01, 3.0, 250.0):
			scaled = omp_encode(dictionary, factor * x, 4).coeffs
			np.testing.assert_array_equal(scaled != 0, base != 0)
			np.testing.assert_allclose(scaled, factor * base, rtol=1e-9, atol=1e-12 * factor)

	def test_residual_shrinks_and_is_orthogonal_to_support(self):
		dictionary = _mk_dictionary(12, 20, 9)
		x = np.random.default_rng(10).normal(size=(12, 15))
		previous = np.linalg.norm(x, axis=0)
		for t in range(1, 9):
			coeffs = omp_encode(dictionary, x, t).coeffs
			residual = x - dictionary.atoms @ coeffs
			norms = np.linalg.norm(residual, axis=0)
			self.assertTrue(np.all(norms <= previous + 1e-12))
			for i in range(x.shape[1]):
				support = np.flatnonzero(coeffs[:, i])
				self.assertLess(np.abs(dictionary.atoms[:, support].T @ residual[:, i]).max(), 1e-8)
			previous = norms

	def test_supports_grow_by_one_atom(self):
		dictionary = _mk_dictionary(12, 20, 11)
		x = np.random.default_rng(12).normal(size=(12, 6))
		previous = omp_encode(dictionary, x, 1).coeffs != 0
		for t in range(2, 7):
			current = omp_encode(dictionary, x, t).coeffs != 0
			self.assertTrue(np.all(current[previous]))
			np.testing.assert_array_equal(current.sum(axis=0), t)
			previous = current

	def test_sparsity_bound(self):
		dictionary = _mk_dictionary(6, 8, 2)
		with self.assertRaises(ParameterError):
			omp_encode(dictionary, np.ones((6, 1)), 9)
		with self.assertRaises(ParameterError):
			omp_encode(dictionary, np.ones((6, 1)), 0)

	def test_row_mismatch(self):
		with self.assertRaises(ContractError):
			omp_encode(_mk_dictionary(6, 8, 2), np.ones((5, 1)), 2)


class JointEncodeTests(SimpleTestCase):
	def setUp(self):
		self.common = _mk_dictionary(6, 8, 21)
		self.specifics = [_mk_dictionary(6, 8, 22 + i) for i in range(3)]
		rng = np.random.default_rng(30)
		self.signals = [rng.normal(size=(6, 5)) for _ in range(3)]

	def test_single_block_equals_concatenated_omp(self):
		pair = joint_encode(self.common, self.specifics[:1], self.signals[:1], 3)
		concatenated = Dictionary(np.hstack([self.specifics[0].atoms, self.common.atoms]))
		code = omp_encode(concatenated, self.signals[0], 3).coeffs
		np.testing.assert_allclose(pair.gamma.coeffs, code[:8], atol=1e-12)
		np.testing.assert_allclose(pair.z.coeffs, code[8:], atol=1e-12)

	def test_duplicated_block_keeps_codes(self):
		single = joint_encode(self.common, self.specifics[:1], self.signals[:1], 3)
		double = joint_encode(self.common, self.specifics[:1] * 2, self.signals[:1] * 2, 3)
		np.testing.assert_array_equal(single.z.coeffs != 0, double.z.coeffs != 0)
		np.testing.assert_array_equal(single.gamma.coeffs != 0, double.gamma.coeffs != 0)
		self.assertLess(np.abs(single.z.coeffs - double.z.coeffs).max(), 1e-10)
		self.assertLess(np.abs(single.gamma.coeffs - double.gamma.coeffs).max(), 1e-10)

	def test_matches_materialized_stack(self):
		for seed in range(100):
			common = _mk_dictionary(6, 8, 4000 + seed)
			specifics = [_mk_dictionary(6, 8, 5000 + 10 * seed + i) for i in range(1 + seed % 3)]
			rng = np.random.default_rng(6000 + seed)
			signals = [rng.normal(size=(6, 5)) for _ in specifics]
			pair = joint_encode(common, specifics, signals, 3)
			stacked = np.zeros((6 * len(specifics), 16))
			for i, spec in enumerate(specifics):
				stacked[6 * i:6 * (i + 1), :8] = spec.atoms
				stacked[6 * i:6 * (i + 1), 8:] = common.atoms
			want = _naive_omp(stacked, np.vstack(signals), 3)
			np.testing.assert_array_equal(pair.gamma.coeffs != 0, want[:8] != 0)
			np.testing.assert_array_equal(pair.z.coeffs != 0, want[8:] != 0)
			self.assertLess(np.abs(pair.gamma.coeffs - want[:8]).max(), 1e-10)
			self.assertLess(np.abs(pair.z.coeffs - want[8:]).max(), 1e-10)

	def test_joint_budget_holds(self):
		pair = joint_encode(self.common, self.specifics, self.signals, 4)
		self.assertTrue(np.all(pair.nonzeros() <= 4))

	def test_budget_above_both_dictionaries(self):
		with self.assertRaises(ParameterError):
			joint_encode(self.common, self.specifics, self.signals, 17)

	def test_block_count_mismatch(self):
		with self.assertRaises(ContractError):
			stack_blocks(self.common, self.specifics, self.signals[:2])

	def test_column_count_mismatch(self):
		signals = [self.signals[0], self.signals[1][:, :3]]
		with self.assertRaises(ContractError):
			joint_encode(self.common, self.specifics[:2], signals, 3)

	def test_no_blocks(self):
		with self.assertRaises(ContractError):
			joint_encode(self.common, [], [], 3)
