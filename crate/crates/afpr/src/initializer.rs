//! Spectral initialization: a data-driven starting point for the solver.
//!
//! The surface fixes the waveform only up to trivial transforms, and the
//! descent solver is local, so it needs a seed already in the right basin.
//! This module builds one in two stages.
//!
//! **Magnitude seed.** Averaging the surface over Doppler recovers the
//! lag-energy profile
//!
//! ```text
//! v[p] = (1/N) Σ_k A[p, k] = Σ_n |x[n]|² |x[n − p]|²,
//! ```
//!
//! so `v` is used as a magnitude estimate and dressed with uniformly random
//! phases: `seed[p] = v[p]·e^{iθ[p]}`.
//!
//! **Alternating refinement.** The transformed data `Y[p, ℓ]` (see
//! [`crate::ambiguity::transformed_data`]) are linear in the cyclic
//! diagonals `x_ℓ[j] = X[j, j+ℓ]` of the rank-one matrix `X = x·xᴴ`:
//! `y_ℓ = G_ℓ x_ℓ`, where `G_ℓ` is the circulant matrix
//! `G_ℓ[p, n] = conj(x[n−p])·x[n+ℓ−p]` built from the unknown waveform
//! itself. The refinement alternates between the two roles of `x`: with the
//! current witness `w` frozen inside `G_ℓ`, each diagonal is re-estimated by
//! the regularized least-squares solve
//!
//! ```text
//! x_ℓ ← (G_ℓᴴ G_ℓ + (1/2λ)·I)⁻¹ (G_ℓᴴ y_ℓ + (1/2λ)·x_ℓ_prev),
//! ```
//!
//! the diagonals are reassembled into a matrix estimate, and the witness is
//! replaced by the leading eigenvector of its Hermitian part. Circulant
//! structure makes every solve exact in `O(N log N)` via the DFT. The final
//! witness is scaled by [`ScaleMode`] to produce the starting waveform.
//!
//! **Partially observed surfaces.** A zero-filled masked surface would
//! otherwise have its zeros fitted as measurements.
//! [`run_initialization_masked`] takes the mask explicitly and treats the
//! removed cells as holes: the seed profile averages observed cells only,
//! and every sweep refills the holes from the surface the current witness
//! predicts before transforming, so the data term constrains only what
//! was actually measured while the model carries the rest. A surface
//! whose Doppler columns were removed is handled through its Fourier
//! dual, where the axes swap roles and the column mask becomes a row
//! mask. A declared support class, when available, is enforced on the
//! witness each sweep — see [`run_initialization_masked`].

use crate::ambiguity::{ambiguity_map, transformed_data, AmbiguityMap};
use crate::sampling::{MaskKind, SamplingMask};
use crate::signal::{project_to_support, ComplexSignal, SupportSpec};
use crate::{fft, Error, Result};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// How the unit-norm witness vector is scaled into a waveform.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// Fourth root of the recovered main-diagonal mass. Exact when the
    /// true waveform has unit energy; off by `‖x‖^{3/2}` otherwise.
    FourthRoot,
    /// Least-squares fit of the surface magnitude to the measured map
    /// (see [`fit_scale`]); exact at any scale on clean data.
    #[default]
    FitScale,
}

/// Parameters of the spectral initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    /// Alternating refinement sweeps `T`.
    pub iters: usize,
    /// Regularization weight `λ`; the solves damp with `1/(2λ)`.
    pub lambda: f64,
    /// Power-iteration budget per eigenvector extraction.
    pub power_iters: usize,
    /// Power-iteration convergence threshold on the iterate delta.
    pub power_tol: f64,
    /// Seed for the random phases of the magnitude seed.
    pub seed: u64,
    pub scale_mode: ScaleMode,
    /// Log a warning when a regularized solve's condition number exceeds
    /// this bound.
    pub warn_condition: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            iters: 2,
            lambda: 1.0,
            power_iters: 200,
            power_tol: 1e-10,
            seed: 0,
            scale_mode: ScaleMode::FitScale,
            warn_condition: 1e12,
        }
    }
}

impl InitConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::invalid("lambda", "must be positive and finite"));
        }
        if self.power_iters == 0 {
            return Err(Error::invalid("power_iters", "must be at least 1"));
        }
        if !(self.power_tol.is_finite() && self.power_tol > 0.0) {
            return Err(Error::invalid("power_tol", "must be positive and finite"));
        }
        Ok(())
    }
}

/// A circulant matrix `M[p, n] = g[(n − p) mod N]`, stored by its row
/// generator. The DFT diagonalizes it: `(Mv)^[k] = m[k]·v̂[k]` with
/// eigenvalues `m[k] = ĝ[(−k) mod N]`.
#[derive(Clone, Debug)]
pub struct Circulant {
    n: usize,
    generator: Vec<Complex64>,
    eigenvalues: Vec<Complex64>,
}

impl Circulant {
    /// Builds from an explicit row generator `g`.
    pub fn new(generator: Vec<Complex64>) -> Self {
        let n = generator.len();
        let mut spectrum = generator.clone();
        fft::forward(&mut spectrum);
        let eigenvalues = (0..n).map(|k| spectrum[(n - k) % n]).collect();
        Circulant { n, generator, eigenvalues }
    }

    /// The diagonal-update operator `G_ℓ[p, n] = conj(w[n−p])·w[n+ℓ−p]`,
    /// whose generator is `g[m] = conj(w[m])·w[(m+ℓ) mod N]`.
    pub fn from_window(w: &[Complex64], ell: usize) -> Self {
        let n = w.len();
        Circulant::new((0..n).map(|m| w[m].conj() * w[(m + ell) % n]).collect())
    }

    pub fn n_len(&self) -> usize {
        self.n
    }

    /// Eigenvalues in DFT order: `M` acts on the `k`-th Fourier mode as
    /// multiplication by this value.
    pub fn eigenvalues(&self) -> &[Complex64] {
        &self.eigenvalues
    }

    /// Smallest squared singular value, `min_k |m[k]|²`. Zero exactly when
    /// the matrix is singular.
    pub fn min_singular_value_sq(&self) -> f64 {
        self.eigenvalues.iter().map(|m| m.norm_sqr()).fold(f64::INFINITY, f64::min)
    }

    /// Matrix–vector product via the DFT.
    pub fn mul(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut hat = v.to_vec();
        fft::forward(&mut hat);
        for (h, m) in hat.iter_mut().zip(&self.eigenvalues) {
            *h *= m;
        }
        fft::inverse(&mut hat);
        hat
    }

    /// Adjoint matrix–vector product `Mᴴ·v` via the DFT.
    pub fn mul_adjoint(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut hat = v.to_vec();
        fft::forward(&mut hat);
        for (h, m) in hat.iter_mut().zip(&self.eigenvalues) {
            *h *= m.conj();
        }
        fft::inverse(&mut hat);
        hat
    }

    /// Dense row-major form, for small-scale comparison.
    pub fn to_dense(&self) -> Vec<Complex64> {
        let n = self.n;
        let mut out = vec![Complex64::ZERO; n * n];
        for p in 0..n {
            for col in 0..n {
                out[p * n + col] = self.generator[(col + n - p) % n];
            }
        }
        out
    }

    /// Solves `(MᴴM + c·I)·x = Mᴴy + c·x_prev` exactly in the Fourier
    /// domain. `c > 0` keeps the system invertible even when `M` is
    /// singular.
    pub fn solve_regularized(&self, y: &[Complex64], x_prev: &[Complex64], c: f64) -> ProxOutcome {
        let mut y_hat = y.to_vec();
        fft::forward(&mut y_hat);
        let mut x_hat = x_prev.to_vec();
        fft::forward(&mut x_hat);
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for k in 0..self.n {
            let gain = self.eigenvalues[k].norm_sqr();
            lo = lo.min(gain);
            hi = hi.max(gain);
            x_hat[k] = (self.eigenvalues[k].conj() * y_hat[k] + c * x_hat[k]) / (gain + c);
        }
        fft::inverse(&mut x_hat);
        ProxOutcome { solution: x_hat, sigma_min_sq: lo, condition: (hi + c) / (lo + c) }
    }

    /// The row-subsampled counterpart of [`Circulant::solve_regularized`]:
    /// solves `(MᴴKM + c·I)·x = MᴴK·y + c·x_prev`, where `K` keeps the
    /// flagged rows and drops the rest. Row removal breaks the circulant
    /// diagonalization, so the Hermitian positive-definite system is
    /// solved by conjugate gradients with DFT-based operator products.
    /// With rows dropped the unregularized operator is rank-deficient, so
    /// `sigma_min_sq` is exactly zero and `condition` is the upper bound
    /// `(max_k |m_k|² + c)/c`.
    pub fn solve_row_masked(
        &self,
        y: &[Complex64],
        kept_rows: &[bool],
        x_prev: &[Complex64],
        c: f64,
    ) -> ProxOutcome {
        let apply = |z: &[Complex64]| -> Vec<Complex64> {
            let mut t = self.mul(z);
            for (ti, &keep) in t.iter_mut().zip(kept_rows) {
                if !keep {
                    *ti = Complex64::ZERO;
                }
            }
            let mut s = self.mul_adjoint(&t);
            for (si, zi) in s.iter_mut().zip(z) {
                *si += c * zi;
            }
            s
        };

        let masked: Vec<Complex64> = y
            .iter()
            .zip(kept_rows)
            .map(|(&v, &keep)| if keep { v } else { Complex64::ZERO })
            .collect();
        let mut b = self.mul_adjoint(&masked);
        for (bi, xp) in b.iter_mut().zip(x_prev) {
            *bi += c * xp;
        }
        let b_norm_sq: f64 = b.iter().map(|v| v.norm_sqr()).sum();

        let mut x = x_prev.to_vec();
        let ax = apply(&x);
        let mut r: Vec<Complex64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let mut dir = r.clone();
        let mut rs = r.iter().map(|v| v.norm_sqr()).sum::<f64>();
        let tol_sq = 1e-18 * b_norm_sq;
        for _ in 0..4 * self.n {
            if rs <= tol_sq {
                break;
            }
            let a_dir = apply(&dir);
            let denom: f64 =
                dir.iter().zip(&a_dir).map(|(d, ad)| (d.conj() * ad).re).sum();
            if denom <= 0.0 {
                break;
            }
            let step = rs / denom;
            for ((xi, ri), (di, adi)) in
                x.iter_mut().zip(r.iter_mut()).zip(dir.iter().zip(&a_dir))
            {
                *xi += step * di;
                *ri -= step * adi;
            }
            let rs_next = r.iter().map(|v| v.norm_sqr()).sum::<f64>();
            let ratio = rs_next / rs;
            for (di, ri) in dir.iter_mut().zip(&r) {
                *di = ri + ratio * *di;
            }
            rs = rs_next;
        }

        let hi = self.eigenvalues.iter().map(|m| m.norm_sqr()).fold(0.0, f64::max);
        ProxOutcome { solution: x, sigma_min_sq: 0.0, condition: (hi + c) / c }
    }
}

/// Result of one regularized diagonal solve.
#[derive(Clone, Debug)]
pub struct ProxOutcome {
    pub solution: Vec<Complex64>,
    /// `σ²_min` of the unregularized operator.
    pub sigma_min_sq: f64,
    /// Condition number of the regularized normal system.
    pub condition: f64,
}

/// A dense `N×N` complex matrix estimate of `x·xᴴ`, addressed by its
/// cyclic diagonals.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    n: usize,
    entries: Vec<Complex64>,
}

impl CorrelationMatrix {
    /// `X = w·wᴴ`.
    pub fn from_rank_one(w: &[Complex64]) -> Self {
        let n = w.len();
        let mut entries = vec![Complex64::ZERO; n * n];
        for a in 0..n {
            for b in 0..n {
                entries[a * n + b] = w[a] * w[b].conj();
            }
        }
        CorrelationMatrix { n, entries }
    }

    /// Reassembles a matrix from its `N` cyclic diagonals,
    /// `X[j, (j+ℓ) mod N] = diagonals[ℓ][j]`.
    pub fn from_diagonals(diagonals: &[Vec<Complex64>]) -> Result<Self> {
        let n = diagonals.len();
        let mut entries = vec![Complex64::ZERO; n * n];
        for (ell, diag) in diagonals.iter().enumerate() {
            if diag.len() != n {
                return Err(Error::DimensionMismatch { left: diag.len(), right: n });
            }
            for (j, &v) in diag.iter().enumerate() {
                entries[j * n + (j + ell) % n] = v;
            }
        }
        Ok(CorrelationMatrix { n, entries })
    }

    pub fn n_len(&self) -> usize {
        self.n
    }

    pub fn get(&self, a: usize, b: usize) -> Complex64 {
        self.entries[a * self.n + b]
    }

    /// The `ℓ`-th cyclic diagonal, `x_ℓ[j] = X[j, (j+ℓ) mod N]`.
    pub fn diagonal(&self, ell: usize) -> Vec<Complex64> {
        (0..self.n).map(|j| self.get(j, (j + ell) % self.n)).collect()
    }

    /// `(X + Xᴴ)/2`.
    pub fn hermitianized(&self) -> CorrelationMatrix {
        let n = self.n;
        let entries = (0..n * n)
            .map(|i| {
                let (a, b) = (i / n, i % n);
                (self.get(a, b) + self.get(b, a).conj()) * 0.5
            })
            .collect();
        CorrelationMatrix { n, entries }
    }

    /// Frobenius distance `‖X − other‖_F`.
    pub fn frob_dist(&self, other: &CorrelationMatrix) -> Result<f64> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch { left: self.n, right: other.n });
        }
        let sum: f64 = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        Ok(sum.sqrt())
    }

    fn frob_norm(&self) -> f64 {
        self.entries.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    fn mul(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut out = vec![Complex64::ZERO; n];
        for (a, slot) in out.iter_mut().enumerate() {
            let row = &self.entries[a * n..(a + 1) * n];
            *slot = row.iter().zip(v).map(|(m, x)| m * x).sum();
        }
        out
    }
}

/// Outcome of one power-iteration extraction. `stalled` carries the
/// stopping diagnostics when the iterate delta never dropped below the
/// tolerance — the vector is then a mixture within the top eigenspace,
/// which a near-tied spectrum cannot separate faster.
#[derive(Debug)]
struct EigenPair {
    vector: Vec<Complex64>,
    iterations: usize,
    stalled: Option<Error>,
}

/// Leading unit-norm eigenvector of a Hermitian matrix by shifted power
/// iteration. The spectrum is shifted by `+‖H‖_F` so the largest
/// eigenvalue of `H` dominates in magnitude regardless of sign. When the
/// iterate delta has not dropped below `tol` within `max_iters` sweeps,
/// the last iterate is returned with [`Error::EigenStall`] attached as
/// [`EigenPair::stalled`]; only a degenerate (zero-norm) iterate is a
/// hard error.
fn leading_eigenvector(
    h: &CorrelationMatrix,
    start: &[Complex64],
    max_iters: usize,
    tol: f64,
) -> Result<EigenPair> {
    let shift = h.frob_norm();
    let mut v = start.to_vec();
    normalize(&mut v).ok_or_else(|| Error::invalid("start", "zero warm-start vector"))?;
    let mut previous_delta = f64::NAN;
    let mut contraction = f64::NAN;
    for t in 1..=max_iters {
        let mut next = h.mul(&v);
        for (w, x) in next.iter_mut().zip(&v) {
            *w += shift * x;
        }
        if normalize(&mut next).is_none() {
            return Err(Error::EigenStall { iters: t, ratio: f64::INFINITY });
        }
        // align the free global phase before measuring progress
        let overlap: Complex64 = next.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
        if overlap.norm() > 0.0 {
            let phase = overlap / overlap.norm();
            for w in next.iter_mut() {
                *w *= phase;
            }
        }
        let delta: f64 = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        v = next;
        if delta <= tol {
            return Ok(EigenPair { vector: v, iterations: t, stalled: None });
        }
        // the per-sweep contraction estimates the spectral gap
        contraction = delta / previous_delta;
        previous_delta = delta;
    }
    Ok(EigenPair {
        vector: v,
        iterations: max_iters,
        stalled: Some(Error::EigenStall { iters: max_iters, ratio: contraction }),
    })
}

fn normalize(v: &mut [Complex64]) -> Option<f64> {
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if norm <= 0.0 || !norm.is_finite() {
        return None;
    }
    for c in v.iter_mut() {
        *c /= norm;
    }
    Some(norm)
}

/// Fills unobserved entries of a cyclic profile by linear interpolation
/// between the nearest observed neighbors on each side. At least one entry
/// must be observed.
fn fill_profile_gaps(profile: &mut [f64], observed: &[bool]) {
    let n = profile.len();
    for p in 0..n {
        if observed[p] {
            continue;
        }
        let mut back = 1;
        while !observed[(p + n - back) % n] {
            back += 1;
        }
        let mut ahead = 1;
        while !observed[(p + ahead) % n] {
            ahead += 1;
        }
        let left = profile[(p + n - back) % n];
        let right = profile[(p + ahead) % n];
        profile[p] = left + (right - left) * back as f64 / (back + ahead) as f64;
    }
}

/// Least-squares scale for a unit-direction waveform: the `β ≥ 0`
/// minimizing `‖√A_measured − β²·√W‖_F` where `W` is the surface of `w`.
/// Exact on clean complete data because scaling a waveform by `β` scales
/// its surface by `β⁴`.
pub fn fit_scale(w: &ComplexSignal, measured: &AmbiguityMap) -> Result<f64> {
    let surface = crate::ambiguity::ambiguity_map(w);
    if surface.n_len() != measured.n_len() {
        return Err(Error::DimensionMismatch { left: surface.n_len(), right: measured.n_len() });
    }
    let mut cross = 0.0;
    let mut self_energy = 0.0;
    for (a, v) in measured.entries().iter().zip(surface.entries()) {
        let rw = v.max(0.0).sqrt();
        cross += a.max(0.0).sqrt() * rw;
        self_energy += rw * rw;
    }
    if self_energy <= 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((cross / self_energy).sqrt())
}

/// [`fit_scale`] restricted to the cells a mask kept, so zero-filled
/// holes do not drag the fitted amplitude down.
fn masked_fit_scale(w: &ComplexSignal, measured: &AmbiguityMap, mask: &SamplingMask) -> Result<f64> {
    let surface = crate::ambiguity::ambiguity_map(w);
    let n = measured.n_len();
    if surface.n_len() != n {
        return Err(Error::DimensionMismatch { left: surface.n_len(), right: n });
    }
    let mut cross = 0.0;
    let mut self_energy = 0.0;
    for p in 0..n {
        for k in 0..n {
            if !mask.is_kept(p, k) {
                continue;
            }
            let rw = surface.get(p, k).max(0.0).sqrt();
            cross += measured.get(p, k).max(0.0).sqrt() * rw;
            self_energy += rw * rw;
        }
    }
    if self_energy <= 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((cross / self_energy).sqrt())
}

/// Per-sweep health measurements of the refinement.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InitDiagnostics {
    /// Worst (smallest) `σ²_min` across the diagonal operators, one entry
    /// per sweep.
    pub sigma_min_sq: Vec<f64>,
    /// Whether `λ·σ²_min > 1/2` held at every sweep — the regime in which
    /// the refinement is a contraction toward `x·xᴴ`.
    pub premise_ok: bool,
    /// Largest regularized condition number seen in any solve.
    pub max_condition: f64,
    /// `‖X_t − X_{t−1}‖_F` per sweep.
    pub matrix_deltas: Vec<f64>,
    /// Power-iteration sweeps used per eigenvector extraction.
    pub power_iterations: Vec<usize>,
    /// Final scale applied to the witness.
    pub beta: f64,
}

/// Output of [`run_initialization`].
#[derive(Clone, Debug)]
pub struct InitOutput {
    /// The magnitude-average seed with random phases (before refinement),
    /// included so experiments can measure what refinement bought.
    pub seed: ComplexSignal,
    /// The refined, scaled starting waveform.
    pub refined: ComplexSignal,
    pub diagnostics: InitDiagnostics,
}

/// Runs the full spectral initialization on a (possibly noisy,
/// zero-filled) surface.
pub fn run_initialization(a: &AmbiguityMap, config: &InitConfig) -> Result<InitOutput> {
    run_refinement(a, None, None, config)
}

/// [`run_initialization`] on a partially observed surface whose removed
/// cells were zero-filled (see [`crate::sampling::MaskMode::ZeroFill`]).
///
/// Cells the mask removed carry no measurement at all, and fitting their
/// zeros as data would drag the seed (and through the targets every
/// diagonal) toward zero. The removed cells are therefore treated as
/// holes: the seed profile averages only observed cells (interpolating
/// across rows with none), and every sweep refills the holes from the
/// surface predicted by the current witness before transforming. A
/// genuinely measured zero cell (a lag beyond a short pulse's overlap,
/// say) is real data and must not be masked off, which is why the holes
/// come from the mask rather than from scanning the surface for zeros.
///
/// When the removal runs along the Doppler axis instead, so that columns
/// survive intact but no row does, the whole problem is transported to
/// the Fourier-dual surface — `A_x̃[p, k] = N²·A_x[k, (N−p) mod N]` for
/// `x̃ = DFT(x)` — where the column mask becomes a row mask, and the
/// estimate is transformed back at the end. The axis with more intact
/// lines wins; on a tie the surface is used as given.
///
/// `support`, when given, names the class the waveform is known to lie
/// in; the witness is projected onto it after every eigenvector step.
/// A heavily gapped surface pins some relative phases only through the
/// class: a mask keeping every `L`-th row is blind to the per-residue
/// rotations `x[n] ↦ x[n]·e^{iφ_{n mod L}}`, which leave every kept row
/// exactly invariant, and only the declared class singles out one member
/// of that family. Without it the refinement can converge to a mixture
/// of shifted copies that no amount of surface data resolves.
pub fn run_initialization_masked(
    a: &AmbiguityMap,
    mask: &SamplingMask,
    support: Option<&SupportSpec>,
    config: &InitConfig,
) -> Result<InitOutput> {
    let n = a.n_len();
    if mask.n_len() != n {
        return Err(Error::DimensionMismatch { left: mask.n_len(), right: n });
    }
    let intact_rows = (0..n).filter(|&p| (0..n).all(|k| mask.is_kept(p, k))).count();
    let intact_cols = (0..n).filter(|&k| (0..n).all(|p| mask.is_kept(p, k))).count();
    if intact_cols <= intact_rows {
        return run_refinement(a, Some(mask), support, config);
    }

    let entries: Vec<f64> = (0..n * n)
        .map(|i| {
            let (p, k) = (i / n, i % n);
            (n * n) as f64 * a.get(k, (n - p) % n)
        })
        .collect();
    let dual_surface = AmbiguityMap::from_entries(n, entries)?;
    let dual_kept: Vec<bool> = (0..n * n)
        .map(|i| {
            let (p, k) = (i / n, i % n);
            mask.is_kept(k, (n - p) % n)
        })
        .collect();
    let dual_mask = SamplingMask::from_kept(n, dual_kept, mask.mode(), MaskKind::Custom)?;
    let dual_spec = support.map(SupportSpec::dual);
    let dual = run_refinement(&dual_surface, Some(&dual_mask), dual_spec.as_ref(), config)?;

    let mut samples = dual.refined.idft().samples().to_vec();
    if normalize(&mut samples).is_none() {
        return Err(Error::ZeroReference);
    }
    let mut candidate = ComplexSignal::new(samples)?;
    if let Some(spec) = support {
        let projected = project_to_support(&candidate, spec);
        let mut flat = projected.samples().to_vec();
        if normalize(&mut flat).is_some() {
            candidate = ComplexSignal::new(flat)?;
        }
    }
    let beta = fit_scale(&candidate, a)?;
    let mut diagnostics = dual.diagnostics;
    diagnostics.beta = beta;
    Ok(InitOutput {
        seed: dual.seed.idft(),
        refined: candidate.scaled(Complex64::new(beta, 0.0)),
        diagnostics,
    })
}

fn run_refinement(
    a: &AmbiguityMap,
    mask: Option<&SamplingMask>,
    support: Option<&SupportSpec>,
    config: &InitConfig,
) -> Result<InitOutput> {
    config.validate()?;
    let n = a.n_len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let row_kept: Vec<usize> = match mask {
        Some(m) => (0..n).map(|p| (0..n).filter(|&k| m.is_kept(p, k)).count()).collect(),
        None => vec![n; n],
    };
    let gaps = row_kept.iter().any(|&count| count == 0);
    let missing_cells = mask.is_some_and(|m| m.kept_count() < n * n);
    if row_kept.iter().all(|&count| count == 0) {
        return Err(Error::ZeroReference);
    }

    // magnitude seed: Doppler average dressed with random phases. The
    // average runs over the observed cells of each row so a partially
    // observed row is not biased toward zero, and rows with no
    // observations at all take interpolated values.
    let mut profile: Vec<f64> = (0..n)
        .map(|p| {
            if row_kept[p] == 0 {
                return 0.0;
            }
            let sum: f64 = match mask {
                Some(m) => {
                    (0..n).filter(|&k| m.is_kept(p, k)).map(|k| a.get(p, k)).sum()
                }
                None => (0..n).map(|k| a.get(p, k)).sum(),
            };
            (sum / row_kept[p] as f64).max(0.0)
        })
        .collect();
    if gaps {
        let observed_rows: Vec<bool> = row_kept.iter().map(|&count| count > 0).collect();
        fill_profile_gaps(&mut profile, &observed_rows);
    }
    let seed_samples: Vec<Complex64> = profile
        .iter()
        .map(|&v| Complex64::from_polar(v, TAU * rng.random::<f64>()))
        .collect();
    let seed = ComplexSignal::new(seed_samples.clone())?;

    let mut witness = seed_samples;
    if normalize(&mut witness).is_none() {
        return Err(Error::ZeroReference);
    }

    let measured = transformed_data(a);
    let c = 1.0 / (2.0 * config.lambda);
    let mut estimate = CorrelationMatrix::from_rank_one(&witness);
    let mut diagnostics = InitDiagnostics {
        sigma_min_sq: Vec::with_capacity(config.iters),
        premise_ok: true,
        max_condition: 1.0,
        matrix_deltas: Vec::with_capacity(config.iters),
        power_iterations: Vec::with_capacity(config.iters),
        beta: 0.0,
    };

    for _ in 0..config.iters {
        // On a gapped surface the transform would otherwise mix the
        // zero-filled cells into every target; refreshing those cells from
        // the surface the current witness itself predicts keeps the data
        // term anchored to the measurements while the model carries the
        // holes. Nothing to do on a fully observed surface.
        let y = match mask {
            Some(m) if missing_cells => {
                let current = ComplexSignal::new(witness.clone())?;
                let beta = masked_fit_scale(&current, a, m)?;
                let predicted = ambiguity_map(&current.scaled(Complex64::new(beta, 0.0)));
                let filled: Vec<f64> = (0..n * n)
                    .map(|i| {
                        let (p, k) = (i / n, i % n);
                        if m.is_kept(p, k) {
                            a.get(p, k)
                        } else {
                            predicted.get(p, k)
                        }
                    })
                    .collect();
                transformed_data(&AmbiguityMap::from_entries(n, filled)?)
            }
            _ => measured.clone(),
        };
        let mut worst_sigma = f64::INFINITY;
        let mut diagonals = Vec::with_capacity(n);
        for ell in 0..n {
            let operator = Circulant::from_window(&witness, ell);
            let prior = estimate.diagonal(ell);
            let target = y.column(ell);
            let outcome = operator.solve_regularized(&target, &prior, c);
            worst_sigma = worst_sigma.min(outcome.sigma_min_sq);
            diagnostics.max_condition = diagnostics.max_condition.max(outcome.condition);
            diagonals.push(outcome.solution);
        }
        let refreshed = CorrelationMatrix::from_diagonals(&diagonals)?;
        diagnostics.sigma_min_sq.push(worst_sigma);
        diagnostics.premise_ok &= config.lambda * worst_sigma > 0.5;
        diagnostics.matrix_deltas.push(refreshed.frob_dist(&estimate)?);

        let pair = leading_eigenvector(
            &refreshed.hermitianized(),
            &witness,
            config.power_iters,
            config.power_tol,
        )?;
        if let Some(stall) = pair.stalled {
            // On a fully observed surface with no side information a
            // non-separating spectrum is a genuine failure. The gapped and
            // support-constrained paths keep going instead: a mixture
            // within the top eigenspace is still a serviceable witness,
            // and the later sweeps keep correcting it.
            if !gaps && support.is_none() {
                return Err(stall);
            }
            log::warn!("power iteration stalled ({stall}); continuing with the mixed iterate");
        }
        witness = pair.vector;
        if let Some(spec) = support {
            // A witness refit only against gap-ridden data can drift into
            // mixtures of trivially-shifted copies that no amount of data
            // resolves; projecting onto the declared support class after
            // each eigenvector step strips the out-of-class component
            // while the data term keeps pulling the rest toward the
            // measurements.
            let projected = project_to_support(&ComplexSignal::new(witness.clone())?, spec);
            let mut samples = projected.samples().to_vec();
            if normalize(&mut samples).is_some() {
                witness = samples;
            }
        }
        diagnostics.power_iterations.push(pair.iterations);
        estimate = refreshed;
    }
    if diagnostics.max_condition > config.warn_condition {
        log::warn!(
            "diagonal solves reached condition number {:.3e}; treat the refinement with suspicion",
            diagnostics.max_condition
        );
    }

    let beta = match config.scale_mode {
        ScaleMode::FourthRoot => {
            let mass: f64 = estimate
                .diagonal(0)
                .iter()
                .map(|v| v.re)
                .filter(|&r| r > 0.0)
                .sum();
            mass.powf(0.25)
        }
        // Fitting against the surface exactly as handed in — zero-filled
        // holes included — under-scales a masked start on purpose: the
        // conservative amplitude keeps the descent's first smoothed steps
        // well inside the basin instead of overshooting from day one.
        ScaleMode::FitScale => fit_scale(&ComplexSignal::new(witness.clone())?, a)?,
    };
    diagnostics.beta = beta;

    let refined = ComplexSignal::new(witness)?.scaled(Complex64::new(beta, 0.0));
    Ok(InitOutput { seed, refined, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambiguity::{ambiguity_map, signal_distance};
    use crate::signal::{ComplexSignal, WaveformKind, WaveformRecipe};
    use nalgebra::{Complex, DMatrix, DVector};

    fn random_vector(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect()
    }

    fn band_limited_waveform(n: usize, seed: u64) -> ComplexSignal {
        let recipe = WaveformRecipe {
            kind: WaveformKind::GaussianSpectrum,
            n_len: n,
            seed,
            ..WaveformRecipe::default()
        };
        recipe.generate().unwrap()
    }

    #[test]
    fn circulant_dense_form_matches_the_window_definition() {
        let w = random_vector(6, 1);
        let ell = 2;
        let g = Circulant::from_window(&w, ell);
        let dense = g.to_dense();
        for p in 0..6 {
            for col in 0..6 {
                let expect = w[(col + 6 - p) % 6].conj() * w[(col + ell + 6 - p) % 6];
                assert!((dense[p * 6 + col] - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn circulant_mul_agrees_with_dense_and_eigenvalues_with_fourier_modes() {
        let g = Circulant::new(random_vector(8, 2));
        let v = random_vector(8, 3);
        let fast = g.mul(&v);
        let dense = g.to_dense();
        for p in 0..8 {
            let direct: Complex64 = (0..8).map(|c| dense[p * 8 + c] * v[c]).sum();
            assert!((fast[p] - direct).norm() < 1e-10);
        }
        // M acts on the k-th Fourier mode by its k-th eigenvalue
        for k in 0..8 {
            let mode: Vec<Complex64> =
                (0..8).map(|j| Complex64::cis(TAU * (j * k) as f64 / 8.0)).collect();
            let image = g.mul(&mode);
            for j in 0..8 {
                assert!((image[j] - g.eigenvalues()[k] * mode[j]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn regularized_solve_matches_a_dense_lu_oracle() {
        let n = 8;
        let w = random_vector(n, 4);
        let g = Circulant::from_window(&w, 3);
        let y = random_vector(n, 5);
        let x_prev = random_vector(n, 6);
        let c = 0.37;
        let fast = g.solve_regularized(&y, &x_prev, c);

        let dense = g.to_dense();
        let m = DMatrix::from_fn(n, n, |r, col| Complex::from(dense[r * n + col]));
        let normal = m.adjoint() * &m + DMatrix::identity(n, n) * Complex::from(Complex64::new(c, 0.0));
        let rhs = m.adjoint() * DVector::from_fn(n, |r, _| Complex::from(y[r]))
            + DVector::from_fn(n, |r, _| Complex::from(x_prev[r])) * Complex::from(Complex64::new(c, 0.0));
        let oracle = normal.lu().solve(&rhs).expect("regularized system is invertible");
        for j in 0..n {
            assert!((fast.solution[j] - oracle[j]).norm() < 1e-10);
        }
    }

    #[test]
    fn identity_operator_solve_limits() {
        // from_window(e₀, 0) is the identity matrix
        let mut e0 = vec![Complex64::ZERO; 6];
        e0[0] = Complex64::ONE;
        let g = Circulant::from_window(&e0, 0);
        let dense = g.to_dense();
        for p in 0..6 {
            for c in 0..6 {
                let expect = if p == c { Complex64::ONE } else { Complex64::ZERO };
                assert!((dense[p * 6 + c] - expect).norm() < 1e-12);
            }
        }
        let y = random_vector(6, 20);
        let x_prev = random_vector(6, 21);
        // vanishing regularization: the solve approaches plain least squares
        let unregularized = g.solve_regularized(&y, &x_prev, 1e-14);
        for j in 0..6 {
            assert!((unregularized.solution[j] - y[j]).norm() < 1e-10);
        }
        // consistent prior: the prior is a fixed point at any strength
        let fixed = g.solve_regularized(&y, &y, 3.7);
        for j in 0..6 {
            assert!((fixed.solution[j] - y[j]).norm() < 1e-10);
        }
    }

    #[test]
    fn flat_window_is_singular_but_still_solvable() {
        let ones = vec![Complex64::ONE; 8];
        let g = Circulant::from_window(&ones, 0);
        assert!(g.min_singular_value_sq() < 1e-20);
        let outcome = g.solve_regularized(&random_vector(8, 7), &random_vector(8, 8), 0.5);
        assert!(outcome.solution.iter().all(|v| v.is_finite()));
        assert!(outcome.condition > 1.0);
    }

    #[test]
    fn correlation_matrix_round_trips_through_its_diagonals() {
        let x = random_vector(5, 9);
        let m = CorrelationMatrix::from_rank_one(&x);
        let diagonals: Vec<_> = (0..5).map(|l| m.diagonal(l)).collect();
        let rebuilt = CorrelationMatrix::from_diagonals(&diagonals).unwrap();
        assert!(m.frob_dist(&rebuilt).unwrap() < 1e-12);
        // rank-one matrices are already Hermitian
        assert!(m.frob_dist(&m.hermitianized()).unwrap() < 1e-12);
    }

    #[test]
    fn power_iteration_matches_a_dense_eigen_oracle() {
        let n = 6;
        // Hermitian matrix with a clear spectral gap
        let x = random_vector(n, 10);
        let z = random_vector(n, 11);
        let mut entries = vec![Complex64::ZERO; n * n];
        for a in 0..n {
            for b in 0..n {
                entries[a * n + b] =
                    3.0 * x[a] * x[b].conj() + 0.25 * z[a] * z[b].conj();
            }
        }
        let h = CorrelationMatrix::from_diagonals(
            &(0..n)
                .map(|l| (0..n).map(|j| entries[j * n + (j + l) % n]).collect())
                .collect::<Vec<_>>(),
        )
        .unwrap()
        .hermitianized();

        let start = vec![Complex64::ONE; n];
        let pair = leading_eigenvector(&h, &start, 500, 1e-12).unwrap();

        // oracle: symmetric eigensolve of the real embedding [[Re,−Im],[Im,Re]]
        let embed = DMatrix::from_fn(2 * n, 2 * n, |r, c| {
            let v = h.get(r % n, c % n);
            match (r < n, c < n) {
                (true, true) | (false, false) => v.re,
                (true, false) => -v.im,
                (false, true) => v.im,
            }
        });
        let eigen = embed.symmetric_eigen();
        let top = eigen
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        let col = eigen.eigenvectors.column(top);
        let mut oracle: Vec<Complex64> =
            (0..n).map(|j| Complex64::new(col[j], col[j + n])).collect();
        normalize(&mut oracle).unwrap();

        // compare up to the free global phase
        let overlap: Complex64 = pair.vector.iter().zip(&oracle).map(|(a, b)| a.conj() * b).sum();
        assert!(overlap.norm() > 1.0 - 1e-8, "overlap {}", overlap.norm());
    }

    #[test]
    fn power_iteration_reports_a_stall_when_starved() {
        let x = random_vector(6, 12);
        let z = random_vector(6, 13);
        let mut entries = vec![Complex64::ZERO; 36];
        for a in 0..6 {
            for b in 0..6 {
                // two nearly tied eigenvalues contract very slowly
                entries[a * 6 + b] = x[a] * x[b].conj() + 0.999 * z[a] * z[b].conj();
            }
        }
        let diagonals: Vec<_> = (0..6)
            .map(|l| (0..6).map(|j| entries[j * 6 + (j + l) % 6]).collect())
            .collect();
        let h = CorrelationMatrix::from_diagonals(&diagonals).unwrap().hermitianized();
        let pair = leading_eigenvector(&h, &vec![Complex64::ONE; 6], 3, 1e-14).unwrap();
        assert!(matches!(pair.stalled, Some(Error::EigenStall { iters: 3, .. })));
    }

    #[test]
    fn fit_scale_recovers_a_known_amplitude() {
        let x = band_limited_waveform(16, 14);
        let doubled = x.scaled(Complex64::new(2.0, 0.0));
        let beta = fit_scale(&x, &ambiguity_map(&doubled)).unwrap();
        assert!((beta - 2.0).abs() < 1e-10, "beta = {beta}");
    }

    #[test]
    fn impulse_surface_is_recovered_exactly() {
        let truth = ComplexSignal::delta(8);
        let a = ambiguity_map(&truth);
        let config = InitConfig { scale_mode: ScaleMode::FourthRoot, ..InitConfig::default() };
        let out = run_initialization(&a, &config).unwrap();
        assert!((out.diagnostics.beta - 1.0).abs() < 1e-9);
        assert!(signal_distance(&truth, &out.refined).unwrap() < 1e-9);
    }

    #[test]
    fn refinement_tracks_the_rank_one_truth_on_clean_data() {
        let truth = band_limited_waveform(16, 15);
        let a = ambiguity_map(&truth);
        let out = run_initialization(&a, &InitConfig { lambda: 10.0, ..InitConfig::default() })
            .unwrap();
        let target = CorrelationMatrix::from_rank_one(truth.samples());
        let mut seed_unit = out.seed.samples().to_vec();
        normalize(&mut seed_unit).unwrap();
        let seed_dist =
            CorrelationMatrix::from_rank_one(&seed_unit).frob_dist(&target).unwrap();
        let mut refined_unit = out.refined.samples().to_vec();
        normalize(&mut refined_unit).unwrap();
        let refined_dist =
            CorrelationMatrix::from_rank_one(&refined_unit).frob_dist(&target).unwrap();
        assert!(
            refined_dist < seed_dist,
            "refinement should contract: {refined_dist:.3e} vs {seed_dist:.3e}"
        );
        assert_eq!(out.diagnostics.sigma_min_sq.len(), 2);
        assert_eq!(out.diagnostics.matrix_deltas.len(), 2);
        assert_eq!(out.diagnostics.power_iterations.len(), 2);
    }

    #[test]
    fn initialization_is_deterministic_in_the_seed() {
        let a = ambiguity_map(&band_limited_waveform(16, 16));
        let config = InitConfig { seed: 42, ..InitConfig::default() };
        let first = run_initialization(&a, &config).unwrap();
        let second = run_initialization(&a, &config).unwrap();
        assert_eq!(first.refined.samples(), second.refined.samples());
        let other = run_initialization(&a, &InitConfig { seed: 43, ..config }).unwrap();
        assert_ne!(first.refined.samples(), other.refined.samples());
    }

    #[test]
    fn degenerate_configs_and_data_are_rejected() {
        let a = ambiguity_map(&ComplexSignal::delta(4));
        assert!(run_initialization(&a, &InitConfig { lambda: 0.0, ..InitConfig::default() })
            .is_err());
        assert!(run_initialization(&a, &InitConfig { power_tol: -1.0, ..InitConfig::default() })
            .is_err());
        let zero = AmbiguityMap::from_entries(4, vec![0.0; 16]).unwrap();
        assert!(matches!(
            run_initialization(&zero, &InitConfig::default()),
            Err(Error::ZeroReference)
        ));
    }

    #[test]
    fn config_serde_defaults_fill_missing_fields() {
        let config: InitConfig = serde_json::from_str(r#"{"lambda": 2.5}"#).unwrap();
        assert_eq!(config.lambda, 2.5);
        assert_eq!(config.iters, 2);
        assert_eq!(config.scale_mode, ScaleMode::FitScale);
        let tag = serde_json::to_string(&ScaleMode::FourthRoot).unwrap();
        assert_eq!(tag, r#""fourth_root""#);
    }
}
