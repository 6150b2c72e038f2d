//! Thin wrappers over `rustfft` pinning the crate's DFT convention:
//! unnormalized forward transform, `1/N` on the inverse.
//!
//! Plans are cached per thread so the per-row transforms in the hot loops
//! (ambiguity rows, gradient rows, circulant solves) do not re-plan.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::cell::RefCell;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place unnormalized forward DFT: `buf[k] ← Σ_n buf[n] e^{−2πink/N}`.
pub(crate) fn forward(buf: &mut [Complex64]) {
    let plan = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()));
    plan.process(buf);
}

/// In-place unnormalized inverse kernel: `buf[n] ← Σ_k buf[k] e^{+2πink/N}`.
pub(crate) fn inverse_raw(buf: &mut [Complex64]) {
    let plan = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(buf.len()));
    plan.process(buf);
}

/// In-place inverse DFT carrying the `1/N` factor.
pub(crate) fn inverse(buf: &mut [Complex64]) {
    let n = buf.len();
    inverse_raw(buf);
    let scale = 1.0 / n as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}
