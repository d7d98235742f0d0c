//! Criterion benchmarks for the cost model and the toy RL loop live in
//! `benches/`; run them with `cargo bench -p nvmrl-bench`.
