//! The discrete ambiguity surface and tools for comparing and probing it.
//!
//! For a waveform `x` of length `N` the delay–Doppler inner products are
//!
//! ```text
//! S[p, k] = Σ_n x[n] · conj(x[n − p]) · e^{−2πink/N}
//! ```
//!
//! (all indices mod `N`): row `p` is the DFT of the lag product
//! `x ⊙ conj(x shifted by p)`. The ambiguity surface is the squared
//! magnitude `A[p, k] = |S[p, k]|²`. Only `A` is observed by the recovery
//! problem; the phase of `S` is lost.
//!
//! [`transformed_data`] applies the inverse DFT of each delay row over the
//! Doppler axis,
//!
//! ```text
//! Y[p, ℓ] = (1/N) Σ_k A[p, k] e^{−2πikℓ/N}
//!         = Σ_n x[n]·conj(x[n−p])·x[n+ℓ−p]·conj(x[n+ℓ]),
//! ```
//!
//! turning the magnitudes into autocorrelations of lag products — the
//! quantities the spectral initializer consumes.
//!
//! Distances between surfaces use the scale-free pseudometric
//! `dist(A, W) = ‖√A − √W‖_F / ‖√A‖_F`, which is zero across the trivial
//! transform families of [`crate::signal::TrivialTransform`].

use crate::sampling::SamplingMask;
use crate::signal::{ComplexSignal, SupportKind, SupportSpec};
use crate::{fft, Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// The complex delay–Doppler inner products `S[p, k]`, row-major by delay.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerProductMap {
    n: usize,
    entries: Vec<Complex64>,
}

impl InnerProductMap {
    pub fn n_len(&self) -> usize {
        self.n
    }

    pub fn get(&self, p: usize, k: usize) -> Complex64 {
        self.entries[p * self.n + k]
    }

    /// One delay row, `S[p, ·]`.
    pub fn row(&self, p: usize) -> &[Complex64] {
        &self.entries[p * self.n..(p + 1) * self.n]
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }
}

/// Computes every delay–Doppler inner product of `x` (one length-`N` FFT
/// per delay row).
pub fn inner_product_map(x: &ComplexSignal) -> InnerProductMap {
    let n = x.len();
    let mut entries = vec![Complex64::ZERO; n * n];
    for p in 0..n {
        let row = &mut entries[p * n..(p + 1) * n];
        for m in 0..n {
            row[m] = x.at(m as isize) * x.at(m as isize - p as isize).conj();
        }
        fft::forward(row);
    }
    InnerProductMap { n, entries }
}

/// The real, non-negative ambiguity surface `A[p, k]`, row-major by delay.
///
/// Surfaces produced by [`ambiguity_map`] are non-negative everywhere;
/// surfaces that have passed through additive noise may carry small
/// negative entries, which every consumer clamps at zero before taking
/// square roots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityMap {
    n: usize,
    entries: Vec<f64>,
}

impl AmbiguityMap {
    /// Wraps a row-major `N×N` value table.
    pub fn from_entries(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch { left: entries.len(), right: n * n });
        }
        if let Some(index) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(AmbiguityMap { n, entries })
    }

    pub fn n_len(&self) -> usize {
        self.n
    }

    pub fn get(&self, p: usize, k: usize) -> f64 {
        self.entries[p * self.n + k]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    /// Squared Frobenius norm `Σ A²`.
    pub fn frob_norm_sqr(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum()
    }

    /// Total mass `Σ_{p,k} A[p,k]`, invariant under the trivial transforms
    /// (it equals `N · ‖x‖₂⁴` for the surface of any waveform `x`).
    pub fn volume(&self) -> f64 {
        self.entries.iter().sum()
    }

    /// Location and value of the maximum entry (first occurrence in
    /// row-major order).
    pub fn peak(&self) -> (usize, usize, f64) {
        let mut best = (0usize, 0usize, f64::NEG_INFINITY);
        for p in 0..self.n {
            for k in 0..self.n {
                let v = self.get(p, k);
                if v > best.2 {
                    best = (p, k, v);
                }
            }
        }
        best
    }
}

/// Computes the ambiguity surface of `x`.
pub fn ambiguity_map(x: &ComplexSignal) -> AmbiguityMap {
    let s = inner_product_map(x);
    AmbiguityMap {
        n: s.n,
        entries: s.entries.iter().map(|c| c.norm_sqr()).collect(),
    }
}

/// The per-delay autocorrelation table `Y[p, ℓ]`, row-major by delay.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformedData {
    n: usize,
    entries: Vec<Complex64>,
}

impl TransformedData {
    pub fn n_len(&self) -> usize {
        self.n
    }

    pub fn get(&self, p: usize, ell: usize) -> Complex64 {
        self.entries[p * self.n + ell]
    }

    /// The column `y_ℓ[p] = Y[p, ℓ]` consumed by the initializer's
    /// per-diagonal least-squares problems.
    pub fn column(&self, ell: usize) -> Vec<Complex64> {
        (0..self.n).map(|p| self.get(p, ell)).collect()
    }
}

/// Transforms each delay row of the surface over the Doppler axis:
/// `Y[p, ℓ] = (1/N) Σ_k A[p, k] e^{−2πikℓ/N}`. When `A` is an exact
/// surface, `Y[p, ℓ] = Σ_n x[n]·conj(x[n−p])·x[n+ℓ−p]·conj(x[n+ℓ])`; in
/// particular column 0 is real and non-negative.
pub fn transformed_data(a: &AmbiguityMap) -> TransformedData {
    let n = a.n;
    let scale = 1.0 / n as f64;
    let mut entries = vec![Complex64::ZERO; n * n];
    for p in 0..n {
        let row = &mut entries[p * n..(p + 1) * n];
        for (k, slot) in row.iter_mut().enumerate() {
            *slot = Complex64::new(a.get(p, k) * scale, 0.0);
        }
        fft::forward(row);
    }
    TransformedData { n, entries }
}

/// Relative root-energy distance `‖√A − √W‖_F / ‖√A‖_F` between two
/// surfaces, with `reference = A`. Negative entries (possible after noise)
/// are clamped at zero before the square roots. Errors when the reference
/// has zero norm. This is a pseudometric: it vanishes between surfaces of
/// trivially-related waveforms, not only identical ones.
pub fn af_distance(reference: &AmbiguityMap, other: &AmbiguityMap) -> Result<f64> {
    if reference.n != other.n {
        return Err(Error::DimensionMismatch { left: reference.n, right: other.n });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, w) in reference.entries.iter().zip(&other.entries) {
        let ra = a.max(0.0).sqrt();
        let rw = w.max(0.0).sqrt();
        num += (ra - rw) * (ra - rw);
        den += ra * ra;
    }
    if den <= 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((num / den).sqrt())
}

/// [`af_distance`] between the surfaces of two waveforms, with `x` as the
/// reference. This is the relative error metric used by every experiment.
pub fn signal_distance(x: &ComplexSignal, w: &ComplexSignal) -> Result<f64> {
    af_distance(&ambiguity_map(x), &ambiguity_map(w))
}

/// One verified surface property: whether it held and how much slack the
/// measurement left (interpretation depends on the property).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub holds: bool,
    pub slack: f64,
}

/// Results of [`check_properties`]. Checks that need the generating
/// waveform are `None` when it was not supplied.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PropertyReport {
    /// The origin is the maximum entry (exact comparison); with the
    /// waveform available, its value also matches `‖x‖₂⁴`. Slack is the
    /// margin `A[0,0] − max_{(p,k)≠(0,0)} A[p,k]`.
    pub origin_peak: PropertyCheck,
    /// `Σ A = N·‖x‖₂⁴`, so the total mass is invariant under the trivial
    /// transforms. Slack is the relative identity error. Needs the
    /// waveform.
    pub volume_invariance: Option<PropertyCheck>,
    /// Point symmetry `A[p, k] = A[−p mod N, −k mod N]`. Slack is the
    /// largest mismatch relative to the peak.
    pub origin_symmetry: PropertyCheck,
    /// Quadratic phase `x[n]·e^{iπqn²/N}` shears the surface along the
    /// Doppler axis: `A_q[p, k] = A[p, (k − qp) mod N]`, checked at
    /// integer `q ∈ {1, 2}` (even `N` only). Slack is the largest mismatch
    /// relative to the peak. Needs the waveform.
    pub shear_covariance: Option<PropertyCheck>,
}

const SYMMETRY_TOL: f64 = 1e-9;

/// Verifies the structural properties of an ambiguity surface, using the
/// generating waveform for the checks that need one.
pub fn check_properties(a: &AmbiguityMap, x: Option<&ComplexSignal>) -> PropertyReport {
    let n = a.n;
    let origin = a.get(0, 0);
    let mut off_peak = f64::NEG_INFINITY;
    for p in 0..n {
        for k in 0..n {
            if (p, k) != (0, 0) {
                off_peak = off_peak.max(a.get(p, k));
            }
        }
    }
    let mut origin_holds = a.entries.iter().all(|&v| v <= origin);
    if let Some(x) = x {
        let e2 = x.energy();
        origin_holds &= (origin - e2 * e2).abs() <= 1e-12 * (e2 * e2).max(1.0);
    }
    let origin_peak = PropertyCheck { holds: origin_holds, slack: origin - off_peak };

    let volume_invariance = x.map(|x| {
        let expected = n as f64 * x.energy() * x.energy();
        let slack = (a.volume() - expected).abs() / expected.max(f64::MIN_POSITIVE);
        PropertyCheck { holds: slack <= SYMMETRY_TOL, slack }
    });

    let mut sym_slack = 0.0f64;
    for p in 0..n {
        for k in 0..n {
            let mirrored = a.get((n - p) % n, (n - k) % n);
            sym_slack = sym_slack.max((a.get(p, k) - mirrored).abs());
        }
    }
    let scale = origin.max(f64::MIN_POSITIVE);
    let origin_symmetry =
        PropertyCheck { holds: sym_slack / scale <= SYMMETRY_TOL, slack: sym_slack / scale };

    let shear_covariance = x.filter(|x| x.len() % 2 == 0).map(|x| {
        let mut worst = 0.0f64;
        for q in [1usize, 2] {
            let sheared_signal = quadratic_phase(x, q);
            let a_q = ambiguity_map(&sheared_signal);
            for p in 0..n {
                for k in 0..n {
                    let shifted_k = (k + n - (q * p) % n) % n;
                    worst = worst.max((a_q.get(p, k) - a.get(p, shifted_k)).abs());
                }
            }
        }
        PropertyCheck { holds: worst / scale <= SYMMETRY_TOL, slack: worst / scale }
    });

    PropertyReport { origin_peak, volume_invariance, origin_symmetry, shear_covariance }
}

/// Multiplies `x` by the grid-compatible quadratic phase `e^{iπqn²/N}`.
/// For even `N` this is periodic for every integer `q`.
pub fn quadratic_phase(x: &ComplexSignal, q: usize) -> ComplexSignal {
    let n = x.len();
    ComplexSignal::from_fn(n, |i| {
        // n² mod 2N keeps the argument of cis small at large N
        let sq = (i * i) % (2 * n);
        x.at(i as isize) * Complex64::cis(PI * (q * sq) as f64 / n as f64)
    })
    .expect("same length as input")
}

/// Verdict of the measurement-count and critical-row screen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentifiabilityVerdict {
    /// Enough cells kept and the critical rows survive.
    Ok,
    /// Fewer cells kept than the counting bound requires.
    UnderSampled,
    /// Cell count suffices but a critical row was damaged.
    CriticalRowsMissing,
}

/// What the screen measured. `required_count` is `3·width` in general and
/// `2·width` when the relevant power profile is known (`spectrum_known`;
/// for band-limited supports the sharper bound additionally needs
/// `N ≥ 3`). The critical lines are the Doppler columns `k ∈ {0, width−1}`
/// for band-limited supports and the delay rows `p ∈ {0, width−1}` for
/// time-limited ones; both must be fully kept.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub kept_count: usize,
    pub required_count: usize,
    pub critical_rows_kept: [bool; 2],
    pub verdict: IdentifiabilityVerdict,
}

/// Screens a sampling mask against the counting bounds for the declared
/// support class. Advisory: failing the screen does not preclude the
/// approximate recovery the solver often still achieves.
pub fn identifiability_check(
    mask: &SamplingMask,
    support: &SupportSpec,
    spectrum_known: bool,
) -> Result<IdentifiabilityReport> {
    let n = mask.n_len();
    support.validate(n)?;
    let width = support.width;
    let (band, lines): (bool, [usize; 2]) = match support.kind {
        SupportKind::BandLimited => (true, [0, width - 1]),
        SupportKind::TimeLimited => (false, [0, width - 1]),
        SupportKind::None => {
            return Err(Error::invalid(
                "support",
                "identifiability needs a band- or time-limited class",
            ));
        }
    };

    let kept_count = mask.kept_count();
    let sharper = spectrum_known && (!band || n >= 3);
    let required_count = if sharper { 2 * width } else { 3 * width };

    let line_kept = |line: usize| -> bool {
        (0..n).all(|other| {
            if band {
                mask.is_kept(other, line) // full Doppler column
            } else {
                mask.is_kept(line, other) // full delay row
            }
        })
    };
    let critical_rows_kept = [line_kept(lines[0]), line_kept(lines[1])];

    let verdict = if kept_count < required_count {
        IdentifiabilityVerdict::UnderSampled
    } else if !(critical_rows_kept[0] && critical_rows_kept[1]) {
        IdentifiabilityVerdict::CriticalRowsMissing
    } else {
        IdentifiabilityVerdict::Ok
    };

    Ok(IdentifiabilityReport { kept_count, required_count, critical_rows_kept, verdict })
}
