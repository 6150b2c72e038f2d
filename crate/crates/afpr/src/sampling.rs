//! Partial observation of ambiguity surfaces: sampling masks and
//! measurement noise.
//!
//! A [`SamplingMask`] records which delay–Doppler cells of an `N×N`
//! surface were observed. Masks are built from a declarative
//! [`MaskKind`] and carry a [`MaskMode`] telling consumers how to treat
//! the missing cells: [`MaskMode::ZeroFill`] substitutes zeros (the
//! initializer wants a complete table), while [`MaskMode::Exclude`] drops
//! them from objectives and gradients (the solver's default, which avoids
//! biasing the fit toward zero).
//!
//! [`add_noise`] perturbs every cell with i.i.d. Gaussian noise whose
//! variance is set from a target signal-to-noise ratio in dB:
//! `σ² = ‖A‖²_F · 10^{−snr/10} / N²`. Noise is applied to the full
//! surface before masking, matching a receiver that digitizes everything
//! and discards cells afterwards.

use crate::ambiguity::AmbiguityMap;
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// How consumers should treat cells the mask removed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Pretend removed cells were observed as zero.
    ZeroFill,
    /// Leave removed cells out of every sum.
    #[default]
    Exclude,
}

/// Declarative description of a sampling pattern.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskKind {
    /// Every cell observed.
    Full,
    /// Keep only delay rows `p ≡ 0 (mod keep_every)`.
    UniformDelay { keep_every: usize },
    /// Remove the leading `round(frac_first·N)` and trailing
    /// `round(frac_last·N)` delay rows.
    BlockDelay { frac_first: f64, frac_last: f64 },
    /// Remove the leading and trailing Doppler columns analogously.
    BlockDoppler { frac_first: f64, frac_last: f64 },
    /// An explicit kept table supplied by the caller.
    Custom,
}

/// Which cells of an `N×N` surface were observed.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    n: usize,
    kept: Vec<bool>,
    mode: MaskMode,
    kind: MaskKind,
}

impl SamplingMask {
    /// Wraps an explicit row-major kept table. Errors when the table is
    /// the wrong size or keeps nothing.
    pub fn from_kept(n: usize, kept: Vec<bool>, mode: MaskMode, kind: MaskKind) -> Result<Self> {
        if kept.len() != n * n {
            return Err(Error::DimensionMismatch { left: kept.len(), right: n * n });
        }
        if !kept.iter().any(|&b| b) {
            return Err(Error::EmptyMask);
        }
        Ok(SamplingMask { n, kept, mode, kind })
    }

    pub fn n_len(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> MaskMode {
        self.mode
    }

    pub fn kind(&self) -> &MaskKind {
        &self.kind
    }

    pub fn is_kept(&self, p: usize, k: usize) -> bool {
        self.kept[p * self.n + k]
    }

    /// Row-major kept table.
    pub fn kept(&self) -> &[bool] {
        &self.kept
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&b| b).count()
    }

    /// Kept cells as `(p, k)` pairs in row-major order.
    pub fn kept_cells(&self) -> Vec<(usize, usize)> {
        let mut cells = Vec::with_capacity(self.kept_count());
        for p in 0..self.n {
            for k in 0..self.n {
                if self.kept[p * self.n + k] {
                    cells.push((p, k));
                }
            }
        }
        cells
    }

    /// The same cells under a different missing-cell policy.
    pub fn with_mode(&self, mode: MaskMode) -> SamplingMask {
        SamplingMask { mode, ..self.clone() }
    }
}

/// Builds the mask described by `kind` for an `N×N` surface.
pub fn make_mask(n: usize, kind: &MaskKind, mode: MaskMode) -> Result<SamplingMask> {
    if n == 0 {
        return Err(Error::invalid("n_len", "mask needs a positive grid size"));
    }
    let kept = match kind {
        MaskKind::Full => vec![true; n * n],
        MaskKind::UniformDelay { keep_every } => {
            if *keep_every == 0 {
                return Err(Error::invalid("keep_every", "must be at least 1"));
            }
            let mut kept = vec![false; n * n];
            for p in (0..n).step_by(*keep_every) {
                kept[p * n..(p + 1) * n].fill(true);
            }
            kept
        }
        MaskKind::BlockDelay { frac_first, frac_last } => {
            let (lead, trail) = block_extents(n, *frac_first, *frac_last)?;
            let mut kept = vec![false; n * n];
            for p in lead..n - trail {
                kept[p * n..(p + 1) * n].fill(true);
            }
            kept
        }
        MaskKind::BlockDoppler { frac_first, frac_last } => {
            let (lead, trail) = block_extents(n, *frac_first, *frac_last)?;
            let mut kept = vec![false; n * n];
            for p in 0..n {
                for k in lead..n - trail {
                    kept[p * n + k] = true;
                }
            }
            kept
        }
        MaskKind::Custom => {
            return Err(Error::invalid(
                "kind",
                "custom masks carry their own table; build them with from_kept",
            ));
        }
    };
    SamplingMask::from_kept(n, kept, mode, kind.clone())
}

fn block_extents(n: usize, frac_first: f64, frac_last: f64) -> Result<(usize, usize)> {
    for (name, frac) in [("frac_first", frac_first), ("frac_last", frac_last)] {
        if !(0.0..=1.0).contains(&frac) {
            return Err(Error::invalid(name, "fraction must lie in [0, 1]"));
        }
    }
    let lead = (frac_first * n as f64).round() as usize;
    let trail = (frac_last * n as f64).round() as usize;
    if lead + trail >= n {
        return Err(Error::EmptyMask);
    }
    Ok((lead, trail))
}

/// Removes `round(removal_frac·N)` delay rows chosen uniformly at random
/// (without replacement) by the seeded generator. Used by the
/// success-rate experiments. The result reports [`MaskKind::Custom`].
pub fn random_delay_removal(
    n: usize,
    removal_frac: f64,
    seed: u64,
    mode: MaskMode,
) -> Result<SamplingMask> {
    if !(0.0..=1.0).contains(&removal_frac) {
        return Err(Error::invalid("removal_frac", "fraction must lie in [0, 1]"));
    }
    let remove = (removal_frac * n as f64).round() as usize;
    if remove >= n {
        return Err(Error::EmptyMask);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = vec![true; n * n];
    for p in rand::seq::index::sample(&mut rng, n, remove) {
        kept[p * n..(p + 1) * n].fill(false);
    }
    SamplingMask::from_kept(n, kept, mode, MaskKind::Custom)
}

/// Applies the mask's policy to a surface. Under [`MaskMode::ZeroFill`]
/// the removed cells become zero; under [`MaskMode::Exclude`] the values
/// pass through unchanged and the mask must travel alongside the map.
pub fn apply_mask(a: &AmbiguityMap, mask: &SamplingMask) -> Result<AmbiguityMap> {
    if a.n_len() != mask.n_len() {
        return Err(Error::DimensionMismatch { left: a.n_len(), right: mask.n_len() });
    }
    let mut out = a.clone();
    if mask.mode() == MaskMode::ZeroFill {
        for (v, &keep) in out.entries_mut().iter_mut().zip(mask.kept()) {
            if !keep {
                *v = 0.0;
            }
        }
    }
    Ok(out)
}

/// Additive Gaussian measurement noise at a target SNR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Target ratio `10·log₁₀(‖A‖²_F / E‖noise‖²_F)` in dB. `+∞` leaves
    /// the surface untouched.
    pub snr_db: f64,
    #[serde(default)]
    pub seed: u64,
    /// Clamp perturbed cells at zero so the result stays a plausible
    /// magnitude surface. Disable to study the raw noise model.
    #[serde(default = "default_true")]
    pub clamp_negative: bool,
}

fn default_true() -> bool {
    true
}

impl NoiseSpec {
    pub fn new(snr_db: f64, seed: u64) -> Self {
        NoiseSpec { snr_db, seed, clamp_negative: true }
    }
}

/// Perturbs every cell with i.i.d. `N(0, σ²)` noise,
/// `σ² = ‖A‖²_F · 10^{−snr/10} / N²`.
pub fn add_noise(a: &AmbiguityMap, spec: &NoiseSpec) -> Result<AmbiguityMap> {
    if spec.snr_db.is_nan() || spec.snr_db == f64::NEG_INFINITY {
        return Err(Error::invalid("snr_db", "must be a real value or +inf"));
    }
    if spec.snr_db == f64::INFINITY {
        return Ok(a.clone());
    }
    let n = a.n_len();
    let sigma =
        (a.frob_norm_sqr() * 10f64.powf(-spec.snr_db / 10.0) / (n * n) as f64).sqrt();
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::invalid("snr_db", &format!("bad noise scale: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = a.clone();
    for v in out.entries_mut() {
        *v += normal.sample(&mut rng);
        if spec.clamp_negative {
            *v = v.max(0.0);
        }
    }
    Ok(out)
}

/// Surface distance restricted to the mask's kept cells:
/// `‖√A − √W‖_F / ‖√A‖_F` summed over kept `(p, k)` only.
///
/// This is the natural self-consistency score for a candidate recovered
/// from a partial surface — it compares the candidate against every cell
/// that was actually measured and nothing else, so it needs no ground
/// truth. Under a full mask it coincides with
/// [`crate::ambiguity::af_distance`]. Negative entries (possible after
/// unclamped noise) are clamped to zero before the square root, matching
/// what the solver fits.
pub fn masked_af_distance(
    reference: &AmbiguityMap,
    other: &AmbiguityMap,
    mask: &SamplingMask,
) -> Result<f64> {
    if reference.n_len() != other.n_len() {
        return Err(Error::DimensionMismatch { left: reference.n_len(), right: other.n_len() });
    }
    if reference.n_len() != mask.n_len() {
        return Err(Error::DimensionMismatch { left: reference.n_len(), right: mask.n_len() });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&a, &w), &keep) in
        reference.entries().iter().zip(other.entries()).zip(mask.kept())
    {
        if !keep {
            continue;
        }
        let a = a.max(0.0).sqrt();
        let w = w.max(0.0).sqrt();
        num += (a - w) * (a - w);
        den += a * a;
    }
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((num / den).sqrt())
}
