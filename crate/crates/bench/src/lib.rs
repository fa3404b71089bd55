//! Criterion benchmarks for `evfl-core`; see `benches/core.rs`.
