//! Criterion benchmarks for the engine; see `benches/`. Run with
//! `cargo bench -p mtv-bench`.
