//! Benchmarks for the hot paths of `steerprompt-core` live in `benches/`.
