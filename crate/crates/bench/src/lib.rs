//! Criterion benchmarks for the training step, the tiny backbone and the transform bank. Run with `cargo bench -p clfa-bench`.
