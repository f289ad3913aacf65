"""
Unit tests for the finite-difference oracles
"""

import os
import sys
import unittest

import numpy as np

# Add the src directory to the path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from errors import InvalidArgumentError
from gradcheck import GradientCheck, central_difference, check_model_gradient
from nn_core import Gradients, init_model, loss_and_gradients, one_hot


class TestCentralDifference(unittest.TestCase):
    """Tests for the scalar central difference"""

    def test_cubic(self):
        """Test d/dx x^3 at x = 2"""
        self.assertAlmostEqual(central_difference(lambda x: x ** 3, 2.0, 1e-5), 12.0, places=6)

    def test_step_must_be_positive(self):
        """Test that h <= 0 is rejected"""
        with self.assertRaises(InvalidArgumentError):
            central_difference(lambda x: x, 1.0, 0.0)


class TestCheckModelGradient(unittest.TestCase):
    """Tests for the per-parameter gradient check"""

    def setUp(self):
        rng = np.random.default_rng(0)
        self.model = init_model([4, 5, 3], seed=0)
        self.inputs = rng.uniform(size=(6, 4))
        self.targets = one_hot(rng.integers(0, 3, size=6), 3)

    def loss(self, model):
        return loss_and_gradients(model, self.inputs, self.targets)[0]

    def test_correct_gradient_passes(self):
        """Test that true gradients agree with finite differences"""
        _, grads = loss_and_gradients(self.model, self.inputs, self.targets)
        check = check_model_gradient(self.loss, self.model, grads)
        self.assertLess(check.relative_error, 1e-5)

    def test_wrong_gradient_fails(self):
        """Test that a sign-flipped gradient is caught"""
        _, grads = loss_and_gradients(self.model, self.inputs, self.targets)
        flipped = Gradients(weights=[-w for w in grads.weights], biases=[-b for b in grads.biases])
        self.assertGreater(check_model_gradient(self.loss, self.model, flipped).relative_error, 1.0)

    def test_subset_of_coordinates(self):
        """Test that max_entries limits the checked coordinates and leaves the model unchanged"""
        before = self.model.copy()
        _, grads = loss_and_gradients(self.model, self.inputs, self.targets)
        check = check_model_gradient(self.loss, self.model, grads, max_entries=7, seed=1)
        self.assertEqual(check.checked, 7)
        self.assertTrue(self.model.same_parameters(before))

    def test_small_network_random_draws(self):
        """Test a 4-3-2 network over 20 random draws with eps = 1e-4"""
        rng = np.random.default_rng(7)
        for draw in range(20):
            model = init_model([4, 3, 2], seed=draw)
            inputs = rng.uniform(size=(5, 4))
            targets = one_hot(rng.integers(0, 2, size=5), 2)
            _, grads = loss_and_gradients(model, inputs, targets)
            check = check_model_gradient(lambda m: loss_and_gradients(m, inputs, targets)[0], model, grads, eps=1e-4)
            self.assertLess(check.relative_error, 1e-4, msg=f"draw {draw}")

    def test_zero_gradients(self):
        """Test that two zero gradients compare equal"""
        check = GradientCheck(analytic=np.zeros(3), numeric=np.zeros(3))
        self.assertEqual(check.relative_error, 0.0)


if __name__ == '__main__':
    unittest.main()
