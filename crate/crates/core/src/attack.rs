//! Closed-form image reconstruction from one sample's embedding gradients.
//!
//! Because `E_pos` is added to every token, the position-embedding gradient
//! row `i` equals the upstream gradient `gᵢ = ∂loss/∂Z₀[i]`, and the
//! patch-embedding gradient is `Σᵢ xᵢᵀ·gᵢ` over the flattened patches `xᵢ`.
//! Stacking `G = [g₁; …; g_N]` turns this into the linear system
//! `g_pat = Xᵀ·G`, which has a unique solution whenever `G` has full row rank.
//! An eavesdropper on plaintext FedSGD updates therefore recovers the image
//! exactly. On encrypted updates the same solve returns patches mixed by the
//! unknown `E_a` and shuffled by `E_b`, i.e. noise.

use thiserror::Error;

use crate::crypto::{CryptoError, SecretKey};
use crate::model::{backward, forward_loss, patchify, unpatchify, GradientUpdate, Image, ModelConfig, ModelError, ModelParams, Sample};
use crate::numerics::{solve_least_squares, Matrix, NumericsError};

/// Plain-case acceptance: reconstruction PSNR at or above this is "recovered".
pub const RECOVERY_PSNR_DB: f64 = 80.0;
/// Encrypted-case acceptance: PSNR must stay within this margin of the mid-gray baseline.
pub const BASELINE_MARGIN_DB: f64 = 3.0;
/// Pixel value of the reference "no information" reconstruction.
pub const MID_GRAY: f64 = 0.5;

#[derive(Debug, Error)]
pub enum AttackError {
    /// `G` is rank deficient so the solve is not unique; the attack is inconclusive.
    #[error("attack inconclusive: per-position gradients have rank {rank} < {required}")]
    RankDeficient { rank: usize, required: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Numerics(NumericsError),
}

impl From<NumericsError> for AttackError {
    fn from(e: NumericsError) -> Self {
        match e {
            NumericsError::RankDeficient { rank, required } => AttackError::RankDeficient { rank, required },
            other => AttackError::Numerics(other),
        }
    }
}

/// Gradients the attacker observes for a single training image.
#[derive(Debug, Clone)]
pub struct AttackInput {
    pub g_pat: Matrix,
    pub g_pos: Matrix,
    pub encrypted: bool,
    pub cfg: ModelConfig,
}

impl AttackInput {
    pub fn from_update(update: &GradientUpdate, cfg: &ModelConfig) -> Self {
        Self { g_pat: update.layers.pat.clone(), g_pos: update.layers.pos.clone(), encrypted: update.encrypted, cfg: *cfg }
    }
}

/// Peak signal-to-noise ratio for pixels in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    /// Zero error.
    Exact,
    Db(f64),
}

impl Psnr {
    pub fn from_mse(mse: f64) -> Self {
        if mse == 0.0 {
            Psnr::Exact
        } else {
            Psnr::Db(10.0 * (1.0 / mse).log10())
        }
    }

    pub fn db(self) -> f64 {
        match self {
            Psnr::Exact => f64::INFINITY,
            Psnr::Db(v) => v,
        }
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Psnr::Exact => write!(f, "exact"),
            Psnr::Db(v) => write!(f, "{v:.2} dB"),
        }
    }
}

/// Error statistics of `reconstructed` against `truth`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageError {
    pub max_abs: f64,
    pub mse: f64,
    pub psnr: Psnr,
}

pub fn compare(reconstructed: &Image, truth: &Image) -> ImageError {
    assert_eq!(reconstructed.dims(), truth.dims(), "image shapes differ");
    let n = truth.pixels.len() as f64;
    let (max_abs, sq) = reconstructed
        .pixels
        .iter()
        .zip(&truth.pixels)
        .fold((0.0f64, 0.0f64), |(m, s), (a, b)| ((a - b).abs().max(m), s + (a - b) * (a - b)));
    let mse = sq / n;
    ImageError { max_abs, mse, psnr: Psnr::from_mse(mse) }
}

/// PSNR of the constant mid-gray image against `truth`.
pub fn baseline_psnr(truth: &Image) -> Psnr {
    let gray = Image::filled(truth.height, truth.width, truth.channels, MID_GRAY);
    compare(&gray, truth).psnr
}

/// Recovered flattened patches, `N×L`.
pub fn reconstruct_patches(inp: &AttackInput) -> Result<Matrix, AttackError> {
    let n = inp.cfg.num_patches();
    let expected_pos = (n + 1, inp.cfg.embed_dim);
    if inp.g_pos.shape() != expected_pos {
        return Err(NumericsError::Shape { op: "reconstruct_patches", left: expected_pos, right: inp.g_pos.shape() }.into());
    }
    let per_position = inp.g_pos.row_range(1, n + 1);
    Ok(solve_least_squares(&per_position, &inp.g_pat)?)
}

/// Outcome of attacking one gradient set.
#[derive(Debug, Clone)]
pub struct AttackResult {
    /// Reconstruction clamped to `[0, 1]`, as an attacker would display it.
    pub reconstructed: Image,
    /// Present when ground truth was supplied.
    pub error: Option<ImageError>,
    pub rank_used: usize,
}

/// Runs the attack and scores it against `truth` when given.
pub fn attack(inp: &AttackInput, truth: Option<&Image>) -> Result<AttackResult, AttackError> {
    let patches = reconstruct_patches(inp)?;
    let mut image = unpatchify(&patches, &inp.cfg)?;
    for v in &mut image.pixels {
        *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    }
    let error = truth.map(|t| compare(&image, t));
    Ok(AttackResult { reconstructed: image, error, rank_used: inp.cfg.num_patches() })
}

/// Gradients of a single sample, as a FedSGD client with batch size 1 would send them.
pub fn single_sample_gradient(sample: &Sample, params: &ModelParams, cfg: &ModelConfig) -> Result<GradientUpdate, ModelError> {
    let (_, cache) = forward_loss(sample, params, cfg)?;
    backward(&cache, params)
}

/// Checks that `g_pat = Σᵢ xᵢᵀ·g_pos[i+1]` holds for `sample`; returns the max-abs residual.
pub fn leakage_identity_residual(sample: &Sample, update: &GradientUpdate, cfg: &ModelConfig) -> Result<f64, AttackError> {
    let patches = patchify(&sample.image, cfg)?;
    let per_position = update.layers.pos.row_range(1, cfg.num_tokens());
    Ok(patches.t_matmul(&per_position)?.max_abs_diff(&update.layers.pat))
}

/// The three cases of a plain-versus-encrypted attack comparison.
#[derive(Debug)]
pub struct AttackReport {
    pub baseline: Psnr,
    pub plain: Result<AttackResult, AttackError>,
    pub encrypted: Result<AttackResult, AttackError>,
    /// Attack after decrypting with the true key, when it was supplied.
    pub decrypted: Option<Result<AttackResult, AttackError>>,
}

/// Attacks one sample's gradient in plaintext and under `key`.
///
/// `plain` and `encrypted` must come from the same sample and model.
pub fn evaluate_attack(
    plain: &GradientUpdate,
    encrypted: &GradientUpdate,
    truth: &Image,
    cfg: &ModelConfig,
    decrypt_with: Option<&SecretKey>,
) -> Result<AttackReport, AttackError> {
    let decrypted = match decrypt_with {
        Some(key) => {
            let d = key.decrypt_grad(encrypted)?;
            Some(attack(&AttackInput::from_update(&d, cfg), Some(truth)))
        }
        None => None,
    };
    Ok(AttackReport {
        baseline: baseline_psnr(truth),
        plain: attack(&AttackInput::from_update(plain, cfg), Some(truth)),
        encrypted: attack(&AttackInput::from_update(encrypted, cfg), Some(truth)),
        decrypted,
    })
}
