//! Benchmarks for the energy kernels; see `benches/`.
