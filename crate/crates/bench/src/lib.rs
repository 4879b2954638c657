//! Criterion benchmarks for `fanonet-core`; see `benches/core.rs`.
