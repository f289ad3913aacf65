"""
Example usage of trojanforge on synthetic blobs

Runs the poisoning-ratio search, then the min-max game and its Baseline
Trojan contrast, and prints the comparison table. Takes well under a minute.
"""

import logging

from src.data import gen_synthetic, poison_dataset, square_trigger, train_test_split
from src.metrics import evaluate_model
from src.minmax_game import GameConfig, MinMaxTrojan, init_detector, train_detector
from src.nn_core import TrainConfig, init_model, train_model
from src.poison_opt import SubmodularTrojan, certificate_from_terms


def main():
    """Demonstrate the search and the game end to end"""

    # 3 blobs of 8x8 "images"; the trigger is a 2x2 white patch mapping to class 0
    blobs = gen_synthetic(k=3, n_per_class=100, dim=64, separation=0.8, seed=0)
    train, test = train_test_split(blobs, 0.25, seed=0)
    trigger = square_trigger(8, size=2, target_class=0)
    train_config = TrainConfig(lr=0.3, epochs=40, batch_size=32)

    clean_model = train_model(init_model([64, 16, 3], seed=0), train.samples, train.targets(), train_config)
    print(evaluate_model("clean", clean_model, test, trigger).row())

    print(f"\n{'='*50}")
    print("Poisoning-ratio search")
    print('='*50)
    search = SubmodularTrojan(train, trigger, train_config, hidden_dims=(16,), gamma=0.01, seed=0,
                              log_level=logging.WARNING)
    alpha, search_model = search.run(rounds=2)
    certificate = certificate_from_terms(search.last_terms, alpha, [round(0.05 * i, 2) for i in range(1, 20)])
    print(f"alpha* = {alpha:.4f} after {search.last_trace.iterations} greedy steps")
    print(f"certificate holds: {certificate.holds} ({certificate.achieved:.4f} <= {certificate.bound:.4f})")
    print(evaluate_model("baseline_trojan", search_model, test, trigger).row())

    print(f"\n{'='*50}")
    print("Min-max game")
    print('='*50)
    poisoned = poison_dataset(train, 0.05, trigger, seed=1)
    game = MinMaxTrojan(clean_model, poisoned, GameConfig(itr=100, probe_count=64, batch_size=32),
                        test_set=test, log_level=logging.WARNING)
    init_trojan = init_model([64, 16, 3], seed=1)
    trojan_model, detector, trace = game.train(init_trojan)
    baseline_model = game.train_baseline(init_trojan)
    first, last = trace.records[0], trace.records[-1]
    print(f"divergence {first.jsd:.4f} -> {last.jsd:.4f}, mean h_D on Trojan outputs {last.mean_hd_trojan:.3f}")

    # a detector trained from scratch against the Baseline Trojan
    fresh = train_detector(init_detector(3, seed=2), clean_model, baseline_model, steps=300, gamma1=0.1,
                           mu=game.mu, sigma=game.sigma, probe_count=64, seed=3)

    evasion_args = dict(probe_batches=20, probes_per_batch=64, mu=game.mu, sigma=game.sigma, seed=4)
    for report in (
        evaluate_model("baseline_trojan", baseline_model, test, trigger, detector=fresh, **evasion_args),
        evaluate_model("mm_trojan", trojan_model, test, trigger, detector=detector, **evasion_args),
    ):
        print(report.row())


if __name__ == "__main__":
    main()
