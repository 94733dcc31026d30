//! Training loop, metrics, and experiment runner.
