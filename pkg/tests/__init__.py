"""
Test package for trojanforge

Unit tests cover every module under src/:
- nn_core, gradcheck: MLP forward/backward and finite-difference oracles
- data, config: IDX loading, poisoning, probes and the config parser
- poison_opt, sweep: bound terms, greedy alpha search and the loss-curve sweep
- minmax_game, metrics: detector game, divergence diagnostics and evaluation
- cli: end-to-end runs on a tiny synthetic config

To run all tests:
    python -m pytest tests/

To run the MNIST acceptance runs as well:
    TROJANFORGE_MNIST_DIR=/path/to/mnist python -m pytest tests/test_acceptance.py

To run with coverage:
    python -m pytest --cov=src tests/
"""
