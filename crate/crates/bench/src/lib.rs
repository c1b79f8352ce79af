//! Criterion benchmark crate; see `benches/kernels.rs`.
