//! Criterion benchmarks for `pairsurv-core`; see `benches/`.
