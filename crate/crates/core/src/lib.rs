//! Kernel-approximation layers for classifiers over frozen feature
//! extractors.
//!
//! The library provides three explicit kernel feature maps — Nystrom
//! landmarks with a learnable whitening map, random kitchen sinks, and
//! Fastfood — together with the minimal pieces needed to train and compare
//! them: a dense tensor core (symmetric eigendecomposition, PSD inverse
//! square root, fast Walsh-Hadamard transform), kernel functions and the
//! bandwidth heuristic, a small reverse-mode layer stack with Adam, and
//! dataset plumbing (synthetic blobs, IDX, CSV, a frozen random-projection
//! extractor).
//!
//! The Nystrom layer computes the kernel vector of each input against a
//! frozen landmark subsample and applies a trainable linear map `W`,
//! initialized at the whitening factor `K11^{-1/2}`. Training `W` ("adaptive"
//! mode) learns a metric in the empirical kernel feature space; freezing it
//! recovers the classical Nystrom approximation. Multiple kernels are fused
//! by concatenating their per-kernel representations.

pub mod config;
pub mod data;
pub mod error;
pub mod features;
pub mod kernels;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};

/// Mix a base seed with a stream index so independent runs get independent,
/// reproducible RNG streams. SplitMix64 finalizer.
pub fn mix_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9e3779b97f4a7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
