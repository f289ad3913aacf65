"""
End-to-end tests for the trojanforge command line on a tiny synthetic config
"""

import glob
import os
import shutil
import sys
import tempfile
import unittest

# Add the src directory to the path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from cli import ExperimentHarness, main
from config import ExperimentConfig
from metrics import acc_clean, acc_trojan
from utils import read_csv_rows

TINY_CONFIG = """
# tiny synthetic run
synthetic_dim = 16
synthetic_classes = 3
synthetic_per_class = 20
hidden_dims = 8
trigger_size = 2
epochs = 2
lr = 0.3
batch_size = 16
alpha = 0.1
gamma = 0.05
rounds = 1
sweep_start = 0.1
sweep_stop = 0.2
sweep_step = 0.1
itr = 5
probe_count = 16
game_batch_size = 16
detector_steps = 5
probe_batches = 2
eval_samples = 20
verify_draws = 3
log_level = ERROR
"""

CONVERGING_CONFIG = """
# small game that settles
synthetic_dim = 16
synthetic_classes = 3
synthetic_per_class = 80
hidden_dims = 8
trigger_size = 2
trigger_value = 0.0
target_class = 1
epochs = 40
lr = 0.3
batch_size = 16
alpha = 0.1
gamma = 0.05
itr = 480
gamma3 = 0.3
game_batch_size = 16
probe_count = 64
probe_mu = 0.5
probe_sigma = 0.5
probe_batches = 20
eval_samples = 40
verify_draws = 3
log_level = ERROR
"""

ANALYTIC_CHECKS = [
    "upper_bound_dominance", "supermodularity", "backprop_gradient", "detector_chain_gradient",
    "bound_certificate", "identical_divergence", "identical_optimal_detector",
]


class TestCommandLine(unittest.TestCase):
    """Tests for main() and the sub-command outputs"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()
        self.config_path = os.path.join(self.temp_dir, "tiny.conf")
        with open(self.config_path, 'w', encoding='utf-8') as f:
            f.write(TINY_CONFIG)

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def out(self, name):
        return os.path.join(self.temp_dir, name)

    def csv_of(self, out_dir, subcommand, kind):
        matches = glob.glob(os.path.join(out_dir, f"{subcommand}_{kind}_*.csv"))
        self.assertEqual(len(matches), 1, msg=f"{subcommand} {kind}")
        return matches[0]

    def test_train_clean(self):
        """Test the clean run: exit 0, model artifact, metrics with the config hash"""
        out_dir = self.out("clean")
        self.assertEqual(main(["train-clean", "--config", self.config_path, "--out", out_dir]), 0)
        self.assertTrue(os.path.exists(os.path.join(out_dir, "clean_model.npz")))
        self.assertTrue(os.path.exists(os.path.join(out_dir, "resolved_config.txt")))

        path = self.csv_of(out_dir, "train-clean", "metrics")
        with open(path, encoding='utf-8') as f:
            self.assertTrue(f.readline().startswith("# config_hash="))
        rows = read_csv_rows(path)
        self.assertEqual(rows[0]["model_tag"], "clean")

    def test_config_error_exit_code(self):
        """Test exit code 2 for an out-of-range value"""
        bad = self.out("bad.conf")
        with open(bad, 'w', encoding='utf-8') as f:
            f.write("alpha = 1.5\n")
        self.assertEqual(main(["train-clean", "--config", bad, "--out", self.out("x")]), 2)

    def test_missing_config_exit_code(self):
        """Test exit code 2 for a config file that does not exist"""
        self.assertEqual(main(["train-clean", "--config", self.out("absent.conf")]), 2)

    def test_submodular_search_outputs(self):
        """Test that the search writes every CSV kind and a valid alpha"""
        out_dir = self.out("search")
        self.assertEqual(main(["submodular-search", "--config", self.config_path, "--out", out_dir]), 0)
        for kind in ("greedy", "rounds", "certificate", "loss_curve", "metrics", "summary"):
            self.csv_of(out_dir, "submodular-search", kind)
        summary = read_csv_rows(self.csv_of(out_dir, "submodular-search", "summary"))[0]
        self.assertTrue(0.0 < float(summary["alpha"]) < 1.0)
        self.assertEqual(summary["greedy_iterations"], "20")

    def test_mm_trojan_is_reproducible(self):
        """Test that rerunning the same config gives byte-identical CSVs"""
        first, second = self.out("run1"), self.out("run2")
        self.assertEqual(main(["mm-trojan", "--config", self.config_path, "--out", first]), 0)
        self.assertEqual(main(["mm-trojan", "--config", self.config_path, "--out", second]), 0)
        for kind in ("trace", "metrics", "equilibrium"):
            with open(self.csv_of(first, "mm-trojan", kind), 'rb') as a, \
                    open(self.csv_of(second, "mm-trojan", kind), 'rb') as b:
                self.assertEqual(a.read(), b.read(), msg=kind)

        trace = read_csv_rows(self.csv_of(first, "mm-trojan", "trace"))
        self.assertEqual(len(trace), 5)
        tags = [r["model_tag"] for r in read_csv_rows(self.csv_of(first, "mm-trojan", "metrics"))]
        self.assertEqual(tags, ["clean", "baseline_trojan", "mm_trojan"])

    def test_seed_override_changes_hash(self):
        """Test that --seed changes the recorded config hash"""
        a, b = self.out("seed_a"), self.out("seed_b")
        self.assertEqual(main(["train-clean", "--config", self.config_path, "--out", a]), 0)
        self.assertEqual(main(["train-clean", "--config", self.config_path, "--out", b, "--seed", "5"]), 0)
        with open(self.csv_of(a, "train-clean", "metrics"), encoding='utf-8') as fa, \
                open(self.csv_of(b, "train-clean", "metrics"), encoding='utf-8') as fb:
            self.assertNotEqual(fa.readline(), fb.readline())

    def test_evaluate_saved_model(self):
        """Test evaluate on artifacts written by mm-trojan"""
        game_dir = self.out("game")
        self.assertEqual(main(["mm-trojan", "--config", self.config_path, "--out", game_dir]), 0)
        eval_dir = self.out("eval")
        code = main([
            "evaluate", "--config", self.config_path, "--out", eval_dir,
            "--model", os.path.join(game_dir, "trojan_model.npz"),
            "--detector", os.path.join(game_dir, "detector.npz"),
        ])
        self.assertEqual(code, 0)
        row = read_csv_rows(self.csv_of(eval_dir, "evaluate", "metrics"))[0]
        self.assertEqual(row["model_tag"], "mm_trojan")
        self.assertNotEqual(row["evasion"], "NA")

    def test_evaluate_missing_model(self):
        """Test exit code 1 when the model artifact is missing"""
        code = main(["evaluate", "--config", self.config_path, "--out", self.out("e"),
                     "--model", self.out("absent.npz")])
        self.assertEqual(code, 1)

    def test_verify_analytic_checks(self):
        """Test that the analytic property checks pass on the tiny config"""
        out_dir = self.out("verify")
        main(["verify", "--config", self.config_path, "--out", out_dir])
        rows = {r["check"]: r for r in read_csv_rows(self.csv_of(out_dir, "verify", "checks"))}
        for check in ANALYTIC_CHECKS:
            self.assertEqual(rows[check]["passed"], "true", msg=check)

    def test_verify_passes_on_converging_game(self):
        """Test exit 0 and every check passing once the game has room to settle"""
        config_path = self.out("converging.conf")
        with open(config_path, 'w', encoding='utf-8') as f:
            f.write(CONVERGING_CONFIG)
        out_dir = self.out("verify_converging")
        self.assertEqual(main(["verify", "--config", config_path, "--out", out_dir]), 0)
        rows = {r["check"]: r for r in read_csv_rows(self.csv_of(out_dir, "verify", "checks"))}
        for check in ANALYTIC_CHECKS + ["divergence_trend", "optimal_detector_agreement"]:
            self.assertEqual(rows[check]["passed"], "true", msg=check)


class TestDefaultConfig(unittest.TestCase):
    """Tests for the shipped defaults of the clean run"""

    @classmethod
    def setUpClass(cls):
        cls.temp_dir = tempfile.mkdtemp()
        harness = ExperimentHarness(ExperimentConfig(output_dir=cls.temp_dir, log_level="ERROR"), "train-clean")
        cls.train, cls.test = harness.load_data()
        cls.trigger = harness.trigger_for(cls.train)
        cls.model = harness.train_clean(cls.train)

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.temp_dir)

    def test_clean_model_fits_default_data(self):
        """Test that the default epochs and learning rate reach 95% clean accuracy"""
        self.assertGreaterEqual(acc_clean(self.model, self.test), 0.95)

    def test_clean_model_ignores_trigger(self):
        """Test that the trigger patch alone does not move a clean model to the target class"""
        self.assertLessEqual(acc_trojan(self.model, self.test, self.trigger), 0.5)


if __name__ == '__main__':
    unittest.main()
