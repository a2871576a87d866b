//! Criterion benchmarks for the estimators, the encoder and a short training run.
