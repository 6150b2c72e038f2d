//! Complex waveforms on a periodic grid, their transforms, and generators.
//!
//! A [`ComplexSignal`] is a vector of `N ≥ 2` complex samples indexed mod
//! `N`. The DFT convention is fixed crate-wide: the forward transform is
//! unnormalized, `x̃[k] = Σ_n x[n] e^{−2πink/N}`, and the inverse carries
//! the `1/N` factor, so `idft(dft(x)) = x`.
//!
//! Four families of transforms leave the ambiguity surface untouched and
//! are therefore invisible to magnitude-only recovery; they are collected
//! in [`TrivialTransform`]:
//!
//! * global phase `x[n] ↦ e^{iφ} x[n]`,
//! * circular delay `x[n] ↦ x[n − a]`,
//! * time reversal `x[n] ↦ x[−n]`,
//! * modulation `x[n] ↦ e^{2πibn/N} x[n]` by an integer number of bins.
//!
//! "Support" means a run of consecutive zeros in one domain: a waveform is
//! `B`-band-limited when its spectrum has `N − B` consecutive zeros
//! (cyclically) and `S`-time-limited when the samples themselves do. Widths
//! above `⌊N/2⌋` are rejected where a recipe declares them, since the
//! recovery guarantees need at least half the grid free.
//!
//! # Example
//!
//! ```
//! use afpr::signal::{ComplexSignal, TrivialTransform};
//!
//! let x = ComplexSignal::delta(8);
//! let shifted = x.transformed(TrivialTransform::Shift { shift: 3 });
//! assert_eq!(shifted.at(3), x.at(0));
//! // the spectrum of a delta is flat
//! assert!(x.dft().samples().iter().all(|c| (c.re - 1.0).abs() < 1e-12));
//! ```

use crate::{fft, Error, Result};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// A complex waveform of `N ≥ 2` samples with cyclic indexing.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSignal {
    samples: Vec<Complex64>,
}

impl ComplexSignal {
    /// Wraps a sample vector, rejecting fewer than two samples or any
    /// non-finite value.
    pub fn new(samples: Vec<Complex64>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::TooShort { min: 2, got: samples.len() });
        }
        if let Some(index) = samples
            .iter()
            .position(|c| !c.re.is_finite() || !c.im.is_finite())
        {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { samples })
    }

    /// Builds a signal by evaluating `f` at each index.
    pub fn from_fn(n: usize, f: impl FnMut(usize) -> Complex64) -> Result<Self> {
        Self::new((0..n).map(f).collect())
    }

    /// The unit impulse `δ₀`.
    pub fn delta(n: usize) -> Self {
        let mut samples = vec![Complex64::ZERO; n.max(2)];
        samples[0] = Complex64::ONE;
        Self { samples }
    }

    /// The all-ones signal.
    pub fn ones(n: usize) -> Self {
        Self { samples: vec![Complex64::ONE; n.max(2)] }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false: construction requires at least two samples.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    /// Sample at index `n` taken mod `N`, so negative indices wrap.
    pub fn at(&self, n: isize) -> Complex64 {
        let len = self.samples.len() as isize;
        self.samples[n.rem_euclid(len) as usize]
    }

    /// Total energy `Σ_n |x[n]|²`.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Euclidean norm `‖x‖₂`.
    pub fn norm(&self) -> f64 {
        self.energy().sqrt()
    }

    /// Pointwise scaling by a complex constant.
    pub fn scaled(&self, c: Complex64) -> Self {
        Self { samples: self.samples.iter().map(|v| v * c).collect() }
    }

    /// Unnormalized forward DFT.
    pub fn dft(&self) -> Self {
        let mut buf = self.samples.clone();
        fft::forward(&mut buf);
        Self { samples: buf }
    }

    /// Inverse DFT (carries the `1/N` factor).
    pub fn idft(&self) -> Self {
        let mut buf = self.samples.clone();
        fft::inverse(&mut buf);
        Self { samples: buf }
    }

    /// Applies one of the ambiguity-invariant transforms.
    pub fn transformed(&self, t: TrivialTransform) -> Self {
        let n = self.samples.len();
        match t {
            TrivialTransform::Rotate { phase } => self.scaled(Complex64::cis(phase)),
            TrivialTransform::Shift { shift } => {
                let samples = (0..n)
                    .map(|i| self.at(i as isize - shift as isize))
                    .collect();
                Self { samples }
            }
            TrivialTransform::Reflect => {
                let samples = (0..n).map(|i| self.at(-(i as isize))).collect();
                Self { samples }
            }
            TrivialTransform::Modulate { bins } => {
                let b = bins.rem_euclid(n as i64) as u64;
                let samples = (0..n)
                    .map(|i| {
                        let idx = (b * i as u64) % n as u64;
                        self.samples[i] * Complex64::cis(TAU * idx as f64 / n as f64)
                    })
                    .collect();
                Self { samples }
            }
        }
    }
}

/// Transforms that leave the ambiguity surface exactly invariant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrivialTransform {
    /// Global phase rotation by `phase` radians.
    Rotate { phase: f64 },
    /// Circular delay: output `y[n] = x[n − shift]`.
    Shift { shift: i64 },
    /// Time reversal: output `y[n] = x[−n]`.
    Reflect,
    /// Modulation by an integer number of frequency bins:
    /// `y[n] = e^{2πi·bins·n/N} x[n]`.
    Modulate { bins: i64 },
}

/// Which domain a support constraint lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportKind {
    /// The spectrum has `N − width` consecutive zeros.
    BandLimited,
    /// The samples have `N − width` consecutive zeros.
    TimeLimited,
    /// No constraint.
    None,
}

/// A declared support class: at most `width` consecutive nonzero entries
/// (cyclically) in the domain picked by `kind`, starting near `offset`.
///
/// `offset` records where a generator placed the window; the membership
/// test in [`check_support`] is placement-agnostic, since a circular shift
/// does not change the class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportSpec {
    pub kind: SupportKind,
    pub width: usize,
    #[serde(default)]
    pub offset: usize,
}

impl SupportSpec {
    pub fn none() -> Self {
        SupportSpec { kind: SupportKind::None, width: 0, offset: 0 }
    }

    /// The class the DFT of a member waveform belongs to: time- and
    /// band-limitation swap roles under the transform, with the same
    /// window width. The window position is not tracked — projection
    /// locates windows by energy — so the offset is carried through
    /// unchanged.
    pub fn dual(&self) -> SupportSpec {
        let kind = match self.kind {
            SupportKind::TimeLimited => SupportKind::BandLimited,
            SupportKind::BandLimited => SupportKind::TimeLimited,
            SupportKind::None => SupportKind::None,
        };
        SupportSpec { kind, ..*self }
    }

    /// Checks `1 ≤ width ≤ ⌊N/2⌋` for constrained kinds.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.kind == SupportKind::None {
            return Ok(());
        }
        if self.width == 0 {
            return Err(Error::invalid("support width", "must be at least 1"));
        }
        if self.width > n / 2 {
            return Err(Error::SupportTooWide { width: self.width, limit: n / 2, n });
        }
        Ok(())
    }
}

/// Tests whether `x` lies in the support class `spec` up to `tol`: whether
/// the relevant domain has a cyclic run of at least `N − width` entries of
/// magnitude ≤ `tol`. Always true for [`SupportKind::None`].
pub fn check_support(x: &ComplexSignal, spec: &SupportSpec, tol: f64) -> bool {
    let domain = match spec.kind {
        SupportKind::None => return true,
        SupportKind::TimeLimited => x.clone(),
        SupportKind::BandLimited => x.dft(),
    };
    let n = domain.len();
    if spec.width >= n {
        return true;
    }
    let small: Vec<bool> = domain.samples().iter().map(|c| c.norm() <= tol).collect();
    longest_cyclic_run(&small) >= n - spec.width
}

/// Projects `x` onto the support class `spec`: zeroes everything outside
/// the highest-energy cyclic window of `spec.width` entries, in the time
/// domain for [`SupportKind::TimeLimited`] and the frequency domain for
/// [`SupportKind::BandLimited`]. The window placement comes from the
/// signal itself rather than from `spec.offset`, because a surface pins
/// the support location only up to the trivial shift and modulation
/// ambiguities. Identity for [`SupportKind::None`]; a no-op whenever `x`
/// already lies in the class.
pub fn project_to_support(x: &ComplexSignal, spec: &SupportSpec) -> ComplexSignal {
    let n = x.len();
    if spec.kind == SupportKind::None || spec.width >= n {
        return x.clone();
    }
    let domain = match spec.kind {
        SupportKind::TimeLimited => x.clone(),
        SupportKind::BandLimited => x.dft(),
        SupportKind::None => unreachable!(),
    };
    let energy: Vec<f64> = domain.samples().iter().map(|c| c.norm_sqr()).collect();
    let mut window: f64 = energy[..spec.width].iter().sum();
    let mut best = window;
    let mut best_start = 0usize;
    for start in 1..n {
        window += energy[(start + spec.width - 1) % n] - energy[start - 1];
        if window > best {
            best = window;
            best_start = start;
        }
    }
    let kept: Vec<Complex64> = domain
        .samples()
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let inside = (i + n - best_start) % n < spec.width;
            if inside {
                c
            } else {
                Complex64::ZERO
            }
        })
        .collect();
    let projected = ComplexSignal::new(kept).expect("projection preserves length");
    match spec.kind {
        SupportKind::TimeLimited => projected,
        SupportKind::BandLimited => projected.idft(),
        SupportKind::None => unreachable!(),
    }
}

/// Resolves the per-residue phase family a strided surface sampling is
/// blind to: when only the delay rows at multiples of `stride` are
/// observed, every modification `x[n] ↦ x[n]·e^{iφ_{n mod stride}}` leaves
/// those rows exactly invariant (the two factors of each row share a
/// residue, so the phases cancel), and the data alone cannot prefer one
/// member over another. In the frequency domain the modification mixes
/// copies of the spectrum shifted by multiples of `N/stride`, so for a
/// band-limited class the members differ sharply in how much energy a
/// single window can hold. This picks the member that concentrates the
/// most energy in the best cyclic window of `spec.width` bins, by cyclic
/// coordinate descent over the residue phases on a fixed grid —
/// deterministic, and exact enough that the follow-up projection keeps
/// nearly all of the winner's mass.
///
/// Identity when `stride < 2`, when `stride` does not divide the length
/// (the residue classes are then not cyclically consistent and no such
/// family exists), or for a class that is not band-limited (a time-limited
/// class contains every member of the family, so there is nothing to
/// choose with).
pub fn align_residue_phases(x: &ComplexSignal, stride: usize, spec: &SupportSpec) -> ComplexSignal {
    let n = x.len();
    if stride < 2 || n % stride != 0 || spec.kind != SupportKind::BandLimited || spec.width >= n
    {
        return x.clone();
    }
    let spectrum = x.dft();
    // Shifted copies of the spectrum: modifying by phases φ_r turns the
    // spectrum into Σ_j c_j·X[k − j·N/stride] with c_j the DFT of the
    // phase pattern over one period, |Σ_r c-weights| preserving energy.
    let hop = n / stride;
    let base = spectrum.samples();
    let shifted: Vec<Vec<Complex64>> = (0..stride)
        .map(|j| (0..n).map(|k| base[(k + n - j * hop) % n]).collect())
        .collect();
    let window_energy = |phases: &[f64]| -> f64 {
        let coeffs: Vec<Complex64> = (0..stride)
            .map(|j| {
                (0..stride)
                    .map(|r| {
                        Complex64::from_polar(
                            1.0,
                            phases[r] - TAU * (j * r) as f64 / stride as f64,
                        )
                    })
                    .sum::<Complex64>()
                    / stride as f64
            })
            .collect();
        let energy: Vec<f64> = (0..n)
            .map(|k| {
                let v: Complex64 =
                    coeffs.iter().zip(&shifted).map(|(c, s)| c * s[k]).sum();
                v.norm_sqr()
            })
            .collect();
        let mut window: f64 = energy[..spec.width].iter().sum();
        let mut best = window;
        for start in 1..n {
            window += energy[(start + spec.width - 1) % n] - energy[start - 1];
            best = best.max(window);
        }
        best
    };

    // The global phase is arbitrary, so φ_0 stays 0 and the rest are
    // optimized one at a time over a fixed grid until a pass stalls.
    const GRID: usize = 64;
    let mut phases = vec![0.0f64; stride];
    let mut best = window_energy(&phases);
    for _ in 0..4 {
        let mut improved = false;
        for r in 1..stride {
            let saved = phases[r];
            let mut champion = (best, saved);
            for g in 0..GRID {
                phases[r] = TAU * g as f64 / GRID as f64;
                let score = window_energy(&phases);
                if score > champion.0 {
                    champion = (score, phases[r]);
                }
            }
            phases[r] = champion.1;
            if champion.0 > best * (1.0 + 1e-12) {
                improved = true;
            }
            best = champion.0;
        }
        if !improved {
            break;
        }
    }
    ComplexSignal::from_fn(n, |i| {
        x.at(i as isize) * Complex64::from_polar(1.0, phases[i % stride])
    })
    .expect("modulation preserves length")
}

/// Length of the longest cyclic run of `true`, capped at `flags.len()`.
fn longest_cyclic_run(flags: &[bool]) -> usize {
    let n = flags.len();
    let mut best = 0usize;
    let mut run = 0usize;
    for i in 0..2 * n {
        if flags[i % n] {
            run += 1;
            best = best.max(run.min(n));
        } else {
            run = 0;
        }
    }
    best
}

/// Waveform families the generator knows how to synthesize.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveformKind {
    /// Gaussian magnitude profile with uniformly random phases, hard
    /// zeroed outside a half-grid window. Band-limited by construction
    /// (or time-limited via the dual placement).
    GaussianSpectrum,
    /// Linear frequency-modulated pulse with a unit rectangular envelope.
    Lfm,
    /// Nonlinear FM: the linear sweep plus `L` cosine harmonics.
    Nlfm,
}

/// A reproducible waveform description.
///
/// Physical quantities map onto the grid through the sample interval `dt`:
/// frequency `f` in Hz lands on bin `f·N·dt` (the bin spacing is
/// `1/(N·dt)` Hz). For `gaussian_spectrum` the nonzero window always has
/// width `⌈(N−1)/2⌉` — the widest class the recovery guarantees allow —
/// centered on the bin given by `center_hz`, and `cutoff` (in 1/µs) sets
/// the standard deviation of the magnitude profile in the same bin units.
/// The synthesized waveform is scaled to unit energy.
///
/// For `lfm`/`nlfm` the envelope is 1 on `0 ≤ dt·n ≤ pulse_t` and 0
/// elsewhere, the phase is `π·φ[n]` with
///
/// ```text
/// φ[n] = π·κ·(dt·n)²  + Σ_{l=1}^{L} α_l · cos(2π·l·dt·n / pulse_t)   (nlfm only)
/// κ = sweep_df / pulse_t,   α_l = 0.4 · pulse_t / l
/// ```
///
/// and the pulse length in samples must not exceed `⌊N/2⌋`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WaveformRecipe {
    pub kind: WaveformKind,
    pub n_len: usize,
    /// Spectral center in Hz (`gaussian_spectrum`).
    pub center_hz: f64,
    /// Gaussian width parameter in 1/µs (`gaussian_spectrum`).
    pub cutoff: f64,
    /// Pulse duration `T` in seconds (`lfm`/`nlfm`).
    pub pulse_t: f64,
    /// Total frequency sweep `Δf` in Hz (`lfm`/`nlfm`).
    pub sweep_df: f64,
    /// Number of cosine harmonics `L` in the `nlfm` phase law.
    pub nlfm_l: usize,
    /// Sample interval `Δt` in seconds.
    pub dt: f64,
    /// Seed for the random spectral phases.
    pub seed: u64,
}

impl Default for WaveformRecipe {
    fn default() -> Self {
        WaveformRecipe {
            kind: WaveformKind::GaussianSpectrum,
            n_len: 128,
            center_hz: 800.0,
            cutoff: 150.0,
            pulse_t: 25.2e-6,
            sweep_df: 128e3,
            nlfm_l: 3,
            dt: 0.4e-6,
            seed: 0,
        }
    }
}

impl WaveformRecipe {
    pub fn validate(&self) -> Result<()> {
        if self.n_len < 2 {
            return Err(Error::invalid("n_len", "must be at least 2"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt", "must be positive and finite"));
        }
        match self.kind {
            WaveformKind::GaussianSpectrum => {
                if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
                    return Err(Error::invalid("cutoff", "must be positive and finite"));
                }
                if !self.center_hz.is_finite() {
                    return Err(Error::invalid("center_hz", "must be finite"));
                }
            }
            WaveformKind::Lfm | WaveformKind::Nlfm => {
                if !(self.pulse_t > 0.0 && self.pulse_t.is_finite()) {
                    return Err(Error::invalid("pulse_t", "must be positive and finite"));
                }
                if !(self.sweep_df >= 0.0 && self.sweep_df.is_finite()) {
                    return Err(Error::invalid("sweep_df", "must be non-negative"));
                }
                if self.kind == WaveformKind::Nlfm && self.nlfm_l == 0 {
                    return Err(Error::invalid("nlfm_l", "must be at least 1"));
                }
            }
        }
        Ok(())
    }

    /// Synthesizes the waveform in its natural domain: band-limited for
    /// `gaussian_spectrum`, time-limited for `lfm`/`nlfm`.
    pub fn generate(&self) -> Result<ComplexSignal> {
        self.generate_supported(self.natural_domain())
    }

    /// Synthesizes the waveform with the Gaussian window placed in the
    /// requested domain. `lfm`/`nlfm` are inherently time-limited and
    /// ignore the request.
    pub fn generate_supported(&self, domain: SupportKind) -> Result<ComplexSignal> {
        self.validate()?;
        match self.kind {
            WaveformKind::GaussianSpectrum => self.generate_gaussian(domain),
            WaveformKind::Lfm | WaveformKind::Nlfm => self.generate_chirp(),
        }
    }

    /// The domain `generate` uses when none is requested.
    pub fn natural_domain(&self) -> SupportKind {
        match self.kind {
            WaveformKind::GaussianSpectrum => SupportKind::BandLimited,
            WaveformKind::Lfm | WaveformKind::Nlfm => SupportKind::TimeLimited,
        }
    }

    /// The support class `generate_supported(domain)` guarantees.
    pub fn implied_support(&self, domain: SupportKind) -> Result<SupportSpec> {
        self.validate()?;
        let n = self.n_len;
        match self.kind {
            WaveformKind::GaussianSpectrum => {
                let width = half_width(n);
                let kind = match domain {
                    SupportKind::TimeLimited => SupportKind::TimeLimited,
                    _ => SupportKind::BandLimited,
                };
                Ok(SupportSpec { kind, width, offset: self.window_start(width) })
            }
            WaveformKind::Lfm | WaveformKind::Nlfm => {
                let width = self.pulse_samples();
                let spec = SupportSpec { kind: SupportKind::TimeLimited, width, offset: 0 };
                spec.validate(n)?;
                Ok(spec)
            }
        }
    }

    fn window_start(&self, width: usize) -> usize {
        let n = self.n_len as i64;
        let center = (self.center_hz * self.n_len as f64 * self.dt).round() as i64;
        (center - width as i64 / 2).rem_euclid(n) as usize
    }

    fn pulse_samples(&self) -> usize {
        // samples with dt·n ≤ pulse_t, padded with a float-slack so exact
        // multiples are not lost to rounding
        (self.pulse_t / self.dt + 1e-9).floor() as usize + 1
    }

    fn generate_gaussian(&self, domain: SupportKind) -> Result<ComplexSignal> {
        let n = self.n_len;
        let width = half_width(n);
        let start = self.window_start(width);
        let sigma = (self.cutoff * 1e6 * n as f64 * self.dt).max(1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);

        let mut buf = vec![Complex64::ZERO; n];
        for j in 0..width {
            let d = j as f64 - (width / 2) as f64;
            let mag = (-d * d / (2.0 * sigma * sigma)).exp();
            let phase = TAU * rng.random::<f64>();
            buf[(start + j) % n] = Complex64::from_polar(mag, phase);
        }

        let mut signal = match domain {
            // window lives in the spectrum; the waveform is its inverse DFT
            SupportKind::BandLimited | SupportKind::None => {
                fft::inverse(&mut buf);
                ComplexSignal::new(buf)?
            }
            // dual construction: the window is the waveform itself
            SupportKind::TimeLimited => ComplexSignal::new(buf)?,
        };
        let norm = signal.norm();
        if norm <= 0.0 {
            return Err(Error::invalid("recipe", "synthesized signal is identically zero"));
        }
        signal = signal.scaled(Complex64::new(1.0 / norm, 0.0));
        Ok(signal)
    }

    fn generate_chirp(&self) -> Result<ComplexSignal> {
        let n = self.n_len;
        let s_len = self.pulse_samples();
        if s_len > n / 2 {
            return Err(Error::SupportTooWide { width: s_len, limit: n / 2, n });
        }
        let kappa = self.sweep_df / self.pulse_t;
        let mut samples = vec![Complex64::ZERO; n];
        for (i, sample) in samples.iter_mut().take(s_len).enumerate() {
            let t = self.dt * i as f64;
            let mut phi = PI * kappa * t * t;
            if self.kind == WaveformKind::Nlfm {
                for l in 1..=self.nlfm_l {
                    let alpha = 0.4 * self.pulse_t / l as f64;
                    phi += alpha * (TAU * l as f64 * t / self.pulse_t).cos();
                }
            }
            *sample = Complex64::cis(PI * phi);
        }
        ComplexSignal::new(samples)
    }
}

/// `⌈(N−1)/2⌉`, the widest support the recovery guarantees allow. Equal to
/// `⌊N/2⌋` for every `N ≥ 2`.
pub fn half_width(n: usize) -> usize {
    n / 2
}
