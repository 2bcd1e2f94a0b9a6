//! Criterion benchmarks for the operator and solver hot paths; see `benches/`.
