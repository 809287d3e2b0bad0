//! Criterion benchmarks for the filter and the closed-loop simulation; see `benches/`.
