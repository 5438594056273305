//! Criterion benchmarks for the simulation, rendering and decomposition
//! kernels; see `benches/`.
