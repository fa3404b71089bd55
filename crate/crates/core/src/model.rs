//! ViT-style embedding layer with a small tanh-MLP classification head.
//!
//! The embedding layer maps an image to the token matrix
//! `Z₀ = [x_class; x¹·E_pat; …; xᴺ·E_pat] + E_pos`, where `xⁱ` is the i-th
//! flattened `P×P×C` patch. The head flattens `Z₀` row-major, applies one
//! tanh hidden layer and a softmax output. Forward and backward passes are
//! analytic so the gradients consumed by federation and by the attack are
//! exact.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{rng_matrix, Distribution, Matrix, NumericsError, Rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("image is {got:?} (h, w, c) but config expects {expected:?}")]
    ImageShape { expected: (usize, usize, usize), got: (usize, usize, usize) },
    #[error("label {label} out of range for {num_classes} classes")]
    Label { label: usize, num_classes: usize },
    #[error("operation requires plaintext parameters but they are encrypted")]
    Encrypted,
    #[error("cannot combine {left} and {right} values")]
    DomainMixing { left: &'static str, right: &'static str },
    #[error("non-finite loss {0}")]
    NonFinite(f64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_classes: usize,
    pub hidden_dim: usize,
}

impl Default for ModelConfig {
    /// 32×32 RGB, 8×8 patches (N = 16, L = 192), D = 32, 10 classes, 64 hidden units.
    fn default() -> Self {
        Self { image_h: 32, image_w: 32, channels: 3, patch_size: 8, embed_dim: 32, num_classes: 10, hidden_dim: 64 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("image_h", self.image_h),
            ("image_w", self.image_w),
            ("channels", self.channels),
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("num_classes", self.num_classes),
            ("hidden_dim", self.hidden_dim),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be >= 1")));
        }
        if self.image_h % self.patch_size != 0 || self.image_w % self.patch_size != 0 {
            return Err(ModelError::Config(format!(
                "image {}x{} is not divisible into {p}x{p} patches",
                self.image_h,
                self.image_w,
                p = self.patch_size
            )));
        }
        if self.num_classes < 2 {
            return Err(ModelError::Config("num_classes must be >= 2".into()));
        }
        // Per-position gradients need enough independent hidden directions to
        // have full rank N.
        if self.hidden_dim < 4 * self.num_patches() {
            return Err(ModelError::Config(format!(
                "hidden_dim {} must be >= 4 * num_patches = {}",
                self.hidden_dim,
                4 * self.num_patches()
            )));
        }
        Ok(())
    }

    /// N, the number of patches.
    pub fn num_patches(&self) -> usize {
        (self.image_w / self.patch_size) * (self.image_h / self.patch_size)
    }

    /// L = P²·C, the flattened patch length.
    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    /// N + 1 tokens including the class token.
    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn head_input_dim(&self) -> usize {
        self.num_tokens() * self.embed_dim
    }
}

/// An `H×W×C` image with pixel values in `[0, 1]`, stored row-major with the
/// channel index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), height * width * channels, "pixel buffer size");
        Self { height, width, channels, pixels }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[self.index(y, x, c)]
    }
}

/// A labeled training or test image.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: usize,
}

/// The seven trainable tensors, used both for parameters and for their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Layers {
    /// Patch embedding, `L×D`.
    pub pat: Matrix,
    /// Position embedding, `(N+1)×D`; row 0 belongs to the class token.
    pub pos: Matrix,
    /// Class token, `1×D`.
    pub class_token: Matrix,
    pub head_w1: Matrix,
    pub head_b1: Matrix,
    pub head_w2: Matrix,
    pub head_b2: Matrix,
}

pub const PARAM_NAMES: [&str; 7] = ["e_pat", "e_pos", "x_class", "head_w1", "head_b1", "head_w2", "head_b2"];
pub const GRAD_NAMES: [&str; 7] =
    ["g_pat", "g_pos", "g_class", "g_head_w1", "g_head_b1", "g_head_w2", "g_head_b2"];

impl Layers {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (l, d, t, h, k) = (cfg.patch_len(), cfg.embed_dim, cfg.num_tokens(), cfg.hidden_dim, cfg.num_classes);
        Self {
            pat: Matrix::zeros(l, d),
            pos: Matrix::zeros(t, d),
            class_token: Matrix::zeros(1, d),
            head_w1: Matrix::zeros(t * d, h),
            head_b1: Matrix::zeros(1, h),
            head_w2: Matrix::zeros(h, k),
            head_b2: Matrix::zeros(1, k),
        }
    }

    pub fn tensors(&self) -> [&Matrix; 7] {
        [&self.pat, &self.pos, &self.class_token, &self.head_w1, &self.head_b1, &self.head_w2, &self.head_b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 7] {
        [
            &mut self.pat,
            &mut self.pos,
            &mut self.class_token,
            &mut self.head_w1,
            &mut self.head_b1,
            &mut self.head_w2,
            &mut self.head_b2,
        ]
    }

    /// Rebuilds from tensors in [`PARAM_NAMES`] order.
    pub fn from_tensors(t: [Matrix; 7]) -> Self {
        let [pat, pos, class_token, head_w1, head_b1, head_w2, head_b2] = t;
        Self { pat, pos, class_token, head_w1, head_b1, head_w2, head_b2 }
    }

    pub fn into_tensors(self) -> [Matrix; 7] {
        [self.pat, self.pos, self.class_token, self.head_w1, self.head_b1, self.head_w2, self.head_b2]
    }

    pub fn matches_config(&self, cfg: &ModelConfig) -> bool {
        let expected = Layers::zeros(cfg);
        let ok = self.tensors().iter().zip(expected.tensors()).all(|(a, b)| a.shape() == b.shape());
        ok
    }

    /// `self += alpha · other`, tensor by tensor.
    pub fn axpy(&mut self, alpha: f64, other: &Layers) -> Result<(), NumericsError> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    pub fn scale_mut(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            t.scale_mut(alpha);
        }
    }

    /// Largest entry-wise difference across all tensors.
    pub fn max_abs_diff(&self, other: &Layers) -> f64 {
        self.tensors().iter().zip(other.tensors()).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max)
    }

    pub fn bit_eq(&self, other: &Layers) -> bool {
        self.tensors().iter().zip(other.tensors()).all(|(a, b)| a.bit_eq(b))
    }
}

/// Model parameters, in plaintext or with the two embeddings encrypted.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Layers,
    /// `pat` and `pos` are in cipher space. Head tensors and the class token
    /// are always plaintext.
    pub encrypted: bool,
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self { layers: Layers::zeros(cfg), encrypted: false }
    }

    /// Embedding and head weights `N(0,1)·0.02`, biases and class token zero.
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let (l, d, t, h, k) = (cfg.patch_len(), cfg.embed_dim, cfg.num_tokens(), cfg.hidden_dim, cfg.num_classes);
        let mut w = |r, c| rng_matrix(rng, r, c, Distribution::StandardNormal).scale(0.02);
        let pat = w(l, d);
        let pos = w(t, d);
        let head_w1 = w(t * d, h);
        let head_w2 = w(h, k);
        Self {
            layers: Layers {
                pat,
                pos,
                class_token: Matrix::zeros(1, d),
                head_w1,
                head_b1: Matrix::zeros(1, h),
                head_w2,
                head_b2: Matrix::zeros(1, k),
            },
            encrypted: false,
        }
    }

    fn require_plain(&self) -> Result<(), ModelError> {
        if self.encrypted {
            Err(ModelError::Encrypted)
        } else {
            Ok(())
        }
    }
}

pub(crate) fn domain_name(encrypted: bool) -> &'static str {
    if encrypted {
        "encrypted"
    } else {
        "plaintext"
    }
}

/// Per-layer gradients from one client for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientUpdate {
    pub layers: Layers,
    pub round: u32,
    pub client_id: u32,
    pub encrypted: bool,
}

impl GradientUpdate {
    pub fn plain(layers: Layers) -> Self {
        Self { layers, round: 0, client_id: 0, encrypted: false }
    }
}

/// Splits an image into `N` flattened patches, one per row.
///
/// Patches are scanned left-to-right, top-to-bottom; within a patch pixels
/// are in raster order with the channel index fastest.
pub fn patchify(image: &Image, cfg: &ModelConfig) -> Result<Matrix, ModelError> {
    let expected = (cfg.image_h, cfg.image_w, cfg.channels);
    if image.dims() != expected {
        return Err(ModelError::ImageShape { expected, got: image.dims() });
    }
    let p = cfg.patch_size;
    let c = cfg.channels;
    let per_row = cfg.image_w / p;
    let mut out = Matrix::zeros(cfg.num_patches(), cfg.patch_len());
    for patch in 0..cfg.num_patches() {
        let (py, px) = (patch / per_row, patch % per_row);
        let row = out.row_mut(patch);
        for dy in 0..p {
            let start = image.index(py * p + dy, px * p, 0);
            row[dy * p * c..(dy + 1) * p * c].copy_from_slice(&image.pixels[start..start + p * c]);
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &Matrix, cfg: &ModelConfig) -> Result<Image, ModelError> {
    let expected = (cfg.num_patches(), cfg.patch_len());
    if patches.shape() != expected {
        return Err(NumericsError::Shape { op: "unpatchify", left: expected, right: patches.shape() }.into());
    }
    let p = cfg.patch_size;
    let c = cfg.channels;
    let per_row = cfg.image_w / p;
    let mut image = Image::filled(cfg.image_h, cfg.image_w, c, 0.0);
    for patch in 0..cfg.num_patches() {
        let (py, px) = (patch / per_row, patch % per_row);
        let row = patches.row(patch);
        for dy in 0..p {
            let start = image.index(py * p + dy, px * p, 0);
            image.pixels[start..start + p * c].copy_from_slice(&row[dy * p * c..(dy + 1) * p * c]);
        }
    }
    Ok(image)
}

/// Token matrix `Z₀`, `(N+1)×D`.
pub fn embed(patches: &Matrix, params: &ModelParams) -> Result<Matrix, ModelError> {
    params.require_plain()?;
    let l = &params.layers;
    let projected = patches.matmul(&l.pat)?;
    let d = l.pat.cols();
    if l.pos.rows() != projected.rows() + 1 || l.pos.cols() != d {
        return Err(NumericsError::Shape { op: "embed", left: (projected.rows() + 1, d), right: l.pos.shape() }.into());
    }
    let mut z = l.pos.clone();
    for (o, c) in z.row_mut(0).iter_mut().zip(l.class_token.as_slice()) {
        *o += c;
    }
    for i in 0..projected.rows() {
        for (o, v) in z.row_mut(i + 1).iter_mut().zip(projected.row(i)) {
            *o += v;
        }
    }
    Ok(z)
}

/// Intermediate activations kept for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    patches: Matrix,
    flat: Matrix,
    hidden: Matrix,
    probs: Matrix,
    label: usize,
    tokens: usize,
}

impl ForwardCache {
    pub fn patches(&self) -> &Matrix {
        &self.patches
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }
}

/// Softmax cross-entropy loss of one sample.
pub fn forward_loss(sample: &Sample, params: &ModelParams, cfg: &ModelConfig) -> Result<(f64, ForwardCache), ModelError> {
    params.require_plain()?;
    if sample.label >= cfg.num_classes {
        return Err(ModelError::Label { label: sample.label, num_classes: cfg.num_classes });
    }
    let patches = patchify(&sample.image, cfg)?;
    let z = embed(&patches, params)?;
    let tokens = z.rows();
    let flat = z.reshape(1, cfg.head_input_dim())?;
    let l = &params.layers;
    let mut hidden = flat.matmul(&l.head_w1)?;
    hidden.add_assign(&l.head_b1)?;
    let hidden = hidden.map(f64::tanh);
    let mut logits = hidden.matmul(&l.head_w2)?;
    logits.add_assign(&l.head_b2)?;

    let max = logits.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.as_slice().iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = total.ln() - (logits.as_slice()[sample.label] - max);
    if !loss.is_finite() {
        return Err(ModelError::NonFinite(loss));
    }
    let probs = Matrix::from_vec(1, exps.len(), exps.iter().map(|e| e / total).collect())?;
    Ok((loss.max(0.0), ForwardCache { patches, flat, hidden, probs, label: sample.label, tokens }))
}

/// Analytic gradients of the loss recorded in `cache`.
pub fn backward(cache: &ForwardCache, params: &ModelParams) -> Result<GradientUpdate, ModelError> {
    params.require_plain()?;
    let l = &params.layers;

    let mut d_logits = cache.probs.clone();
    d_logits.as_mut_slice()[cache.label] -= 1.0;
    let g_w2 = cache.hidden.t_matmul(&d_logits)?;
    let d_hidden = d_logits.matmul_t(&l.head_w2)?;
    let d_pre = Matrix::from_vec(
        1,
        d_hidden.cols(),
        d_hidden.as_slice().iter().zip(cache.hidden.as_slice()).map(|(g, h)| g * (1.0 - h * h)).collect(),
    )?;
    let g_w1 = cache.flat.t_matmul(&d_pre)?;
    let d_z = d_pre.matmul_t(&l.head_w1)?.reshape(cache.tokens, l.pat.cols())?;

    let g_class = d_z.row_range(0, 1);
    let g_pat = cache.patches.t_matmul(&d_z.row_range(1, cache.tokens))?;

    Ok(GradientUpdate::plain(Layers {
        pat: g_pat,
        pos: d_z,
        class_token: g_class,
        head_w1: g_w1,
        head_b1: d_pre,
        head_w2: g_w2,
        head_b2: d_logits,
    }))
}

/// Mean loss and mean gradient over a batch.
pub fn batch_gradient(samples: &[&Sample], params: &ModelParams, cfg: &ModelConfig) -> Result<(f64, Layers), ModelError> {
    let mut sum = Layers::zeros(cfg);
    let mut loss = 0.0;
    for s in samples {
        let (l, cache) = forward_loss(s, params, cfg)?;
        loss += l;
        sum.axpy(1.0, &backward(&cache, params)?.layers)?;
    }
    let n = samples.len().max(1) as f64;
    sum.scale_mut(1.0 / n);
    Ok((loss / n, sum))
}

/// One gradient step: every tensor `← tensor − lr·grad`.
pub fn apply_sgd(params: &ModelParams, grad: &GradientUpdate, lr: f64) -> Result<ModelParams, ModelError> {
    if params.encrypted != grad.encrypted {
        return Err(ModelError::DomainMixing { left: domain_name(params.encrypted), right: domain_name(grad.encrypted) });
    }
    let mut out = params.clone();
    out.layers.axpy(-lr, &grad.layers)?;
    Ok(out)
}

/// Predicted class (arg-max logit).
pub fn predict(image: &Image, params: &ModelParams, cfg: &ModelConfig) -> Result<usize, ModelError> {
    let sample = Sample { image: image.clone(), label: 0 };
    let (_, cache) = forward_loss(&sample, params, cfg)?;
    let p = cache.probs.as_slice();
    Ok((0..p.len()).fold(0, |best, i| if p[i] > p[best] { i } else { best }))
}

/// Fraction of samples classified correctly.
pub fn accuracy(samples: &[Sample], params: &ModelParams, cfg: &ModelConfig) -> Result<f64, ModelError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for s in samples {
        if predict(&s.image, params, cfg)? == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}
