//! Benchmarks for the density and decoder kernels live in `benches/`.
