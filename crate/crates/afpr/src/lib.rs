//! Discrete ambiguity functions and waveform recovery from their magnitudes.
//!
//! A radar waveform is a complex vector `x` of `N` samples on a periodic
//! grid. Its (narrowband, discrete) ambiguity surface
//!
//! ```text
//! A[p, k] = | Σ_n x[n] · conj(x[n − p]) · e^{−2πi n k / N} |²
//! ```
//!
//! describes how the matched filter responds to a delay of `p` samples and a
//! Doppler shift of `k` frequency bins. This crate computes that surface and
//! solves the inverse problem: given `A` — possibly undersampled and noisy —
//! recover a band-limited or time-limited waveform whose ambiguity surface
//! matches it. The magnitude-only measurements make this a (fourth-order)
//! phase retrieval problem, attacked in two stages:
//!
//! 1. [`initializer`] — a spectral initialization that averages the surface
//!    over Doppler, seeds a correlation-matrix estimate, and refines it by
//!    alternating regularized least-squares solves on each diagonal with a
//!    leading-eigenvector extraction.
//! 2. [`solver`] — a stochastic trust-region descent on a smoothed
//!    amplitude-fit objective, with a shrinking smoothing parameter that
//!    doubles as the trust-region radius.
//!
//! [`signal`] holds the waveform type, generators, and support checks;
//! [`ambiguity`] the forward transform, distances, and surface properties;
//! [`sampling`] undersampling masks and measurement noise; [`harness`]
//! batch experiments (recovery scenarios, success-rate maps, initializer
//! comparisons); [`io`] the CSV/JSON interchange formats used by the CLI.
//!
//! Conventions used throughout: indexing is cyclic (indices are taken mod
//! `N`); the forward DFT is unnormalized, `x̃[k] = Σ_n x[n] e^{−2πink/N}`,
//! and the inverse carries the `1/N` factor. Everything that draws random
//! numbers takes an explicit `u64` seed and is reproducible across runs and
//! thread counts.

pub mod ambiguity;
mod fft;
pub mod harness;
pub mod initializer;
pub mod io;
pub mod sampling;
pub mod signal;
pub mod solver;

/// Errors shared across the crate.
///
/// Variants are deliberately coarse: callers usually need to distinguish
/// "bad input" from "numerical failure", not much more. The CLI maps
/// [`Error::Diverged`] and [`Error::EigenStall`] to its numeric-failure exit
/// code; everything else is treated as a usage error.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("signal needs at least {min} samples, got {got}")]
    TooShort { min: usize, got: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("support width {width} exceeds N/2 = {limit} (N = {n}); the magnitude map cannot identify such a waveform")]
    SupportTooWide { width: usize, limit: usize, n: usize },

    #[error("reference map has zero norm; relative distance is undefined")]
    ZeroReference,

    #[error("mask keeps no cells")]
    EmptyMask,

    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("eigeniteration stalled after {iters} iterations (trailing contraction ratio {ratio:.3e})")]
    EigenStall { iters: usize, ratio: f64 },

    #[error("objective diverged at iteration {iteration}: h = {objective:.3e} > 10 × initial {initial:.3e}")]
    Diverged { iteration: usize, objective: f64, initial: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{path}: {reason}")]
    Parse { path: String, reason: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Diverged { .. } | Error::EigenStall { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
