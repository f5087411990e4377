//! Criterion benchmarks for the hot kernels of `vreg-core`; see `benches/kernels.rs`.
