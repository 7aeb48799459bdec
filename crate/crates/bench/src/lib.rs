//! Benchmarks for the csilab pipeline; run with `cargo bench -p csilab-bench`.
