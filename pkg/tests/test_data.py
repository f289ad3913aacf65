"""
Unit tests for dataset loading, triggers and poisoning
"""

import os
import shutil
import sys
import tempfile
import unittest

import numpy as np
from scipy.stats import norm

# Add the src directory to the path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from data import (
    Dataset, embed_trigger, embed_trigger_batch, feature_trigger, gen_synthetic, load_idx, pixel_statistics,
    poison_dataset, sample_probes, square_trigger, subset, train_test_split, trojan_count
)
from errors import DegenerateAlphaError, FormatError, InvalidArgumentError


def write_idx_pair(directory, pixels, labels, image_magic=0x803, label_magic=0x801, extra_image_bytes=b""):
    """Write an IDX3/IDX1 pair from uint8 arrays; returns both paths."""
    n, rows, cols = pixels.shape
    images_path = os.path.join(directory, "images.idx3")
    labels_path = os.path.join(directory, "labels.idx1")
    with open(images_path, 'wb') as f:
        f.write(np.array([image_magic, n, rows, cols], dtype='>u4').tobytes())
        f.write(pixels.astype(np.uint8).tobytes())
        f.write(extra_image_bytes)
    with open(labels_path, 'wb') as f:
        f.write(np.array([label_magic, len(labels)], dtype='>u4').tobytes())
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())
    return images_path, labels_path


class TestLoadIdx(unittest.TestCase):
    """Tests for the IDX loader"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        rng = np.random.default_rng(0)
        self.pixels = rng.integers(0, 256, size=(5, 4, 4)).astype(np.uint8)
        self.labels = np.array([0, 1, 2, 1, 0])

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_load_valid_pair(self):
        """Test that a well-formed pair loads with pixels scaled by /255"""
        images, labels = write_idx_pair(self.temp_dir, self.pixels, self.labels)
        dataset = load_idx(images, labels)
        self.assertEqual(len(dataset), 5)
        self.assertEqual(dataset.dim, 16)
        self.assertEqual(dataset.image_side, 4)
        self.assertEqual(dataset.num_classes, 3)
        np.testing.assert_allclose(dataset.samples, self.pixels.reshape(5, 16) / 255.0)
        np.testing.assert_array_equal(dataset.labels, self.labels)

    def test_bad_magic_reports_offset_zero(self):
        """Test that a wrong image magic raises FormatError at offset 0"""
        images, labels = write_idx_pair(self.temp_dir, self.pixels, self.labels, image_magic=0x802)
        with self.assertRaises(FormatError) as ctx:
            load_idx(images, labels)
        self.assertEqual(ctx.exception.offset, 0)

    def test_truncated_pixels(self):
        """Test that a truncated pixel block raises FormatError at the end of the data"""
        images, labels = write_idx_pair(self.temp_dir, self.pixels, self.labels)
        with open(images, 'rb') as f:
            content = f.read()
        with open(images, 'wb') as f:
            f.write(content[:-3])
        with self.assertRaises(FormatError) as ctx:
            load_idx(images, labels)
        self.assertEqual(ctx.exception.offset, len(content) - 3)

    def test_trailing_bytes(self):
        """Test that bytes after the pixel block are rejected"""
        images, labels = write_idx_pair(self.temp_dir, self.pixels, self.labels, extra_image_bytes=b"\x00\x00")
        with self.assertRaises(FormatError) as ctx:
            load_idx(images, labels)
        self.assertEqual(ctx.exception.offset, 16 + 5 * 16)

    def test_label_count_mismatch(self):
        """Test that a label file with a different count is rejected"""
        images, labels = write_idx_pair(self.temp_dir, self.pixels, self.labels[:4])
        with self.assertRaises(FormatError) as ctx:
            load_idx(images, labels)
        self.assertEqual(ctx.exception.offset, 4)


class TestDataset(unittest.TestCase):
    """Tests for Dataset validation"""

    def test_rejects_out_of_range_features(self):
        """Test that features outside [0, 1] are rejected"""
        with self.assertRaises(InvalidArgumentError):
            Dataset(samples=np.array([[0.5, 1.5]]), labels=np.array([0]), num_classes=2)

    def test_rejects_bad_labels(self):
        """Test that labels outside [0, k) are rejected"""
        with self.assertRaises(InvalidArgumentError):
            Dataset(samples=np.array([[0.5, 0.5]]), labels=np.array([2]), num_classes=2)

    def test_arrays_are_read_only(self):
        """Test that datasets cannot be modified in place"""
        dataset = Dataset(samples=np.array([[0.5, 0.5]]), labels=np.array([1]), num_classes=2)
        with self.assertRaises(ValueError):
            dataset.samples[0, 0] = 0.1


class TestSynthetic(unittest.TestCase):
    """Tests for the Gaussian-blob generator"""

    def test_reproducible(self):
        """Test that the same seed gives identical data"""
        a = gen_synthetic(3, 20, 16, 0.8, seed=5)
        b = gen_synthetic(3, 20, 16, 0.8, seed=5)
        np.testing.assert_array_equal(a.samples, b.samples)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_shape_and_balance(self):
        """Test sizes, class balance, range and the square image side"""
        dataset = gen_synthetic(4, 25, 16, 0.8, seed=1)
        self.assertEqual(len(dataset), 100)
        self.assertEqual(dataset.image_side, 4)
        for c in range(4):
            self.assertAlmostEqual(dataset.class_frequency(c), 0.25)
        self.assertGreaterEqual(dataset.samples.min(), 0.0)
        self.assertLessEqual(dataset.samples.max(), 1.0)

    def test_centers_are_separated(self):
        """Test that class means are roughly `separation` apart"""
        dataset = gen_synthetic(2, 400, 9, 0.6, seed=2, spread=0.02)
        means = [dataset.samples[dataset.labels == c].mean(axis=0) for c in range(2)]
        self.assertAlmostEqual(float(np.linalg.norm(means[0] - means[1])), 0.6, delta=0.02)

    def test_signal_lives_in_last_features(self):
        """Test that only the last k features separate the classes and a corner trigger misses them"""
        dataset = gen_synthetic(3, 300, 64, 0.8, seed=3)
        means = np.stack([dataset.samples[dataset.labels == c].mean(axis=0) for c in range(3)])
        spread_per_feature = means.max(axis=0) - means.min(axis=0)
        self.assertTrue(np.all(spread_per_feature[:61] < 0.05))
        self.assertTrue(np.all(spread_per_feature[61:] > 0.5))
        trigger = square_trigger(8, size=4)
        self.assertEqual(float(trigger.mask[61:].sum()), 0.0)

    def test_default_blobs_are_linearly_separable(self):
        """Test that argmax over the signal features labels at least 99% of samples correctly"""
        dataset = gen_synthetic(3, 200, 64, 0.8, seed=0)
        predicted = np.argmax(dataset.samples[:, 61:], axis=1)
        self.assertGreaterEqual(float(np.mean(predicted == dataset.labels)), 0.99)

    def test_invalid_arguments(self):
        """Test argument validation"""
        with self.assertRaises(InvalidArgumentError):
            gen_synthetic(5, 10, 4, 0.5, seed=0)
        with self.assertRaises(InvalidArgumentError):
            gen_synthetic(2, 10, 16, 0.0, seed=0)


class TestTriggers(unittest.TestCase):
    """Tests for trigger construction and embedding"""

    def test_square_trigger_mask(self):
        """Test that the default trigger covers a 4x4 top-left square"""
        trigger = square_trigger(8)
        mask = trigger.mask.reshape(8, 8)
        self.assertEqual(int(mask.sum()), 16)
        self.assertTrue(np.all(mask[:4, :4] == 1.0))

    def test_square_trigger_must_fit(self):
        """Test that an oversized trigger is rejected"""
        with self.assertRaises(InvalidArgumentError):
            square_trigger(4, size=3, row=2)

    def test_embed_is_idempotent(self):
        """Test that embedding twice equals embedding once"""
        trigger = square_trigger(4, size=2, value=0.9)
        x = np.random.default_rng(0).uniform(size=16)
        once = embed_trigger(x, trigger)
        np.testing.assert_array_equal(embed_trigger(once, trigger), once)

    def test_embed_keeps_unmasked_features(self):
        """Test that features outside the mask are untouched"""
        trigger = feature_trigger(6, [1, 4], value=1.0)
        x = np.full(6, 0.3)
        np.testing.assert_allclose(embed_trigger(x, trigger), [0.3, 1.0, 0.3, 0.3, 1.0, 0.3])

    def test_batch_matches_single(self):
        """Test that batch embedding agrees with row-wise embedding"""
        trigger = square_trigger(4, size=2)
        inputs = np.random.default_rng(1).uniform(size=(5, 16))
        batch = embed_trigger_batch(inputs, trigger)
        for row, expected in zip(inputs, batch):
            np.testing.assert_array_equal(embed_trigger(row, trigger), expected)


class TestPoisoning(unittest.TestCase):
    """Tests for poison_dataset and trojan_count"""

    def setUp(self):
        self.clean = gen_synthetic(3, 40, 16, 0.8, seed=3)
        self.trigger = square_trigger(4, size=2, target_class=1)

    def test_trojan_count_floor(self):
        """Test floor(alpha N) including products that land just below an integer"""
        self.assertEqual(trojan_count(0.03, 100), 3)
        self.assertEqual(trojan_count(0.29, 100), 29)
        self.assertEqual(trojan_count(0.5, 3), 1)
        self.assertEqual(trojan_count(0.001, 100), 0)

    def test_counts(self):
        """Test that floor(alpha N) samples are selected, sorted and distinct"""
        poisoned = poison_dataset(self.clean, 0.1, self.trigger, seed=0)
        self.assertEqual(poisoned.n_trojan, 12)
        self.assertEqual(len(set(poisoned.trojan_indices.tolist())), 12)
        self.assertTrue(np.all(np.diff(poisoned.trojan_indices) > 0))
        self.assertEqual(len(poisoned.clean_indices()), 120 - 12)

    def test_training_set_layout(self):
        """Test that D_p holds every original plus one triggered copy per selected sample"""
        poisoned = poison_dataset(self.clean, 0.25, self.trigger, seed=1)
        inputs, labels = poisoned.training_set()
        self.assertEqual(inputs.shape[0], 120 + 30)
        np.testing.assert_array_equal(inputs[:120], self.clean.samples)
        self.assertTrue(np.all(labels[120:] == 1))
        np.testing.assert_array_equal(
            inputs[120:], embed_trigger_batch(self.clean.samples[poisoned.trojan_indices], self.trigger)
        )

    def test_clean_dataset_unchanged(self):
        """Test that poisoning never touches the clean dataset"""
        before = self.clean.samples.copy()
        poison_dataset(self.clean, 0.4, self.trigger, seed=2)
        np.testing.assert_array_equal(self.clean.samples, before)

    def test_degenerate_alpha(self):
        """Test that a ratio selecting no sample raises DegenerateAlphaError"""
        with self.assertRaises(DegenerateAlphaError):
            poison_dataset(self.clean, 0.001, self.trigger, seed=0)

    def test_alpha_out_of_range(self):
        """Test that alpha outside (0, 1) is rejected"""
        for alpha in (0.0, 1.0, -0.1, 1.5):
            with self.assertRaises(InvalidArgumentError):
                poison_dataset(self.clean, alpha, self.trigger, seed=0)

    def test_reproducible_selection(self):
        """Test that the same seed selects the same samples"""
        a = poison_dataset(self.clean, 0.2, self.trigger, seed=9)
        b = poison_dataset(self.clean, 0.2, self.trigger, seed=9)
        np.testing.assert_array_equal(a.trojan_indices, b.trojan_indices)


class TestProbesAndSplits(unittest.TestCase):
    """Tests for probe sampling and dataset helpers"""

    def test_probes_are_clipped_and_seeded(self):
        """Test probe shape, range and reproducibility"""
        a = sample_probes(50, 16, 0.5, 0.4, seed=4)
        b = sample_probes(50, 16, 0.5, 0.4, seed=4)
        self.assertEqual(a.inputs.shape, (50, 16))
        self.assertGreaterEqual(a.inputs.min(), 0.0)
        self.assertLessEqual(a.inputs.max(), 1.0)
        np.testing.assert_array_equal(a.inputs, b.inputs)

    def test_probes_disjoint_from_data(self):
        """Test that random probes do not coincide with training samples"""
        dataset = gen_synthetic(2, 30, 16, 0.8, seed=0)
        self.assertTrue(sample_probes(30, 16, 0.5, 0.2, seed=1).disjoint_from(dataset))

    def test_sample_mean_matches_clipped_gaussian(self):
        """Test the empirical probe mean against the analytic mean of a clipped Gaussian"""
        mu, sigma = 0.226, 0.3
        a, b = (0.0 - mu) / sigma, (1.0 - mu) / sigma
        expected = (mu * (norm.cdf(b) - norm.cdf(a)) + sigma * (norm.pdf(a) - norm.pdf(b))
                    + (1.0 - norm.cdf(b)))
        probes = sample_probes(5000, 16, mu, sigma, seed=7)
        self.assertAlmostEqual(float(probes.inputs.mean()), expected, delta=0.02)

    def test_probe_sigma_must_be_positive(self):
        """Test that sigma <= 0 is rejected"""
        with self.assertRaises(InvalidArgumentError):
            sample_probes(5, 4, 0.5, 0.0, seed=0)

    def test_pixel_statistics(self):
        """Test global mean and std"""
        dataset = Dataset(samples=np.array([[0.0, 1.0], [0.0, 1.0]]), labels=np.array([0, 1]), num_classes=2)
        mu, sigma = pixel_statistics(dataset)
        self.assertAlmostEqual(mu, 0.5)
        self.assertAlmostEqual(sigma, 0.5)

    def test_subset_and_split(self):
        """Test subset prefix and a disjoint, covering split"""
        dataset = gen_synthetic(2, 50, 16, 0.8, seed=6)
        head = subset(dataset, 10)
        np.testing.assert_array_equal(head.samples, dataset.samples[:10])
        train, test = train_test_split(dataset, 0.2, seed=0)
        self.assertEqual(len(train) + len(test), 100)
        self.assertEqual(len(test), 20)
        self.assertEqual(train.image_side, 4)


if __name__ == '__main__':
    unittest.main()
