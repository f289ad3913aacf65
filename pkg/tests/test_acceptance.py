"""
Desk-scale MNIST acceptance runs

Skipped unless TROJANFORGE_MNIST_DIR points at a directory holding the four
uncompressed IDX files (train-images-idx3-ubyte, train-labels-idx1-ubyte,
t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte). Each run takes minutes.
"""

import glob
import os
import shutil
import sys
import tempfile
import unittest

# Add the src directory to the path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from cli import main
from utils import read_csv_rows

MNIST_DIR = os.environ.get("TROJANFORGE_MNIST_DIR")


def mnist_config(mnist_dir):
    return "\n".join([
        "dataset = idx",
        f"train_images = {os.path.join(mnist_dir, 'train-images-idx3-ubyte')}",
        f"train_labels = {os.path.join(mnist_dir, 'train-labels-idx1-ubyte')}",
        f"test_images = {os.path.join(mnist_dir, 't10k-images-idx3-ubyte')}",
        f"test_labels = {os.path.join(mnist_dir, 't10k-labels-idx1-ubyte')}",
        "train_limit = 2000",
        "test_limit = 1000",
        "hidden_dims = 64",
        "log_level = WARNING",
    ]) + "\n"


@unittest.skipUnless(MNIST_DIR, "set TROJANFORGE_MNIST_DIR to run the MNIST acceptance suite")
class TestMnistAcceptance(unittest.TestCase):
    """Desk-scale reproduction targets on a 2000/1000 MNIST split"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.config_path = os.path.join(self.temp_dir, "mnist.conf")
        with open(self.config_path, 'w', encoding='utf-8') as f:
            f.write(mnist_config(MNIST_DIR))

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def run_rows(self, subcommand, kind):
        out_dir = os.path.join(self.temp_dir, subcommand)
        if not os.path.isdir(out_dir):
            self.assertEqual(main([subcommand, "--config", self.config_path, "--out", out_dir]), 0)
        return read_csv_rows(glob.glob(os.path.join(out_dir, f"{subcommand}_{kind}_*.csv"))[0])

    def test_clean_accuracy(self):
        """Test Acc-C >= 0.95 for the clean MLP"""
        row = self.run_rows("train-clean", "metrics")[0]
        self.assertGreaterEqual(float(row["acc_c"]), 0.95)

    def test_submodular_search(self):
        """Test alpha in [0.01, 0.10], Acc-T >= 0.9 and Acc-C within 3 points of clean"""
        summary = self.run_rows("submodular-search", "summary")[0]
        self.assertGreaterEqual(float(summary["alpha"]), 0.01)
        self.assertLessEqual(float(summary["alpha"]), 0.10)
        self.assertEqual(summary["certificate_holds"], "true")

        metrics = {r["model_tag"]: r for r in self.run_rows("submodular-search", "metrics")}
        self.assertGreaterEqual(float(metrics["baseline_trojan"]["acc_t"]), 0.90)
        self.assertLessEqual(float(metrics["clean"]["acc_c"]) - float(metrics["baseline_trojan"]["acc_c"]), 0.03)

        rounds = self.run_rows("submodular-search", "rounds")
        if len(rounds) >= 2:
            self.assertLess(abs(float(rounds[-1]["alpha"]) - float(rounds[-2]["alpha"])), 0.05)

    def test_mm_trojan_equilibrium(self):
        """Test the coin-flip detector, full evasion, the divergence trend and both accuracies"""
        trace = self.run_rows("mm-trojan", "trace")
        self.assertGreaterEqual(float(trace[-1]["mean_hd_trojan"]), 0.4)
        self.assertLessEqual(float(trace[-1]["mean_hd_trojan"]), 0.6)
        self.assertLess(float(trace[-1]["jsd"]), float(trace[0]["jsd"]))

        metrics = {r["model_tag"]: r for r in self.run_rows("mm-trojan", "metrics")}
        self.assertEqual(float(metrics["mm_trojan"]["evasion"]), 1.0)
        self.assertGreaterEqual(float(metrics["mm_trojan"]["acc_t"]), 0.90)
        self.assertLessEqual(float(metrics["clean"]["acc_c"]) - float(metrics["mm_trojan"]["acc_c"]), 0.05)

    def test_baseline_is_detected(self):
        """Test that a fresh detector flags the Baseline Trojan"""
        metrics = {r["model_tag"]: r for r in self.run_rows("mm-trojan", "metrics")}
        self.assertLessEqual(float(metrics["baseline_trojan"]["evasion"]), 0.1)
        self.assertGreaterEqual(float(metrics["baseline_trojan"]["mean_trojan_prob"]), 0.9)


if __name__ == '__main__':
    unittest.main()
