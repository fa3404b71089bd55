//! Secret-key model encryption for the patch and position embeddings.
//!
//! The patch embedding is multiplied on the left by a random invertible
//! `L×L` matrix `E_a`; the position embedding is multiplied by an
//! `(N+1)×(N+1)` permutation matrix `E_b` whose first row and column are
//! fixed so the class-token row never moves. Both maps are linear, so any
//! linear combination of encrypted tensors (a gradient step, an average)
//! decrypts to the same combination of the plaintexts.
//!
//! Keys are shared by all clients out of band and never reach the server.

use std::fs;
use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::Cursor;
use crate::model::{GradientUpdate, Layers, ModelParams};
use crate::numerics::{
    condition_one, rng_matrix, rng_permutation, Distribution, Lu, Matrix, NumericsError, Rng, Seed,
};

/// Largest accepted 1-norm condition number of `E_a`.
pub const MAX_CONDITION: f64 = 1e4;
/// Resampling budget for a well-conditioned `E_a`.
pub const MAX_KEYGEN_ATTEMPTS: u32 = 64;

const KEY_MAGIC: &[u8; 4] = b"FVK1";
const KEY_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CryptoError {
    #[error("{what} has shape {got:?}, key expects {expected_rows} rows")]
    Shape { what: &'static str, expected_rows: usize, got: (usize, usize) },
    #[error("value is already encrypted")]
    AlreadyEncrypted,
    #[error("value is not encrypted")]
    NotEncrypted,
    #[error("no E_a with condition <= {MAX_CONDITION:e} after {MAX_KEYGEN_ATTEMPTS} attempts")]
    KeyGeneration,
    #[error("invalid key: {0}")]
    InvalidKey(String),
    #[error("key file: {0}")]
    KeyFile(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Shared secret: `E_a`, its inverse, the permutation `l_t` and the derived `E_b`.
#[derive(Clone, PartialEq)]
pub struct SecretKey {
    e_a: Matrix,
    e_a_inv: Matrix,
    /// 1-based: `perm[i-1] = l_e(i)`.
    perm: Vec<usize>,
    e_b: Matrix,
    key_id: u64,
}

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SecretKey")
            .field("key_id", &format_args!("{:016x}", self.key_id))
            .field("patch_len", &self.patch_len())
            .field("num_patches", &self.num_patches())
            .finish_non_exhaustive()
    }
}

fn fingerprint(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    h.update(b"evfl-key-id\0");
    for p in parts {
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// `E_b` for a 1-based permutation: leading 1, then `m(i,j) = [j = l_e(i)]`.
fn permutation_matrix(perm: &[usize]) -> Matrix {
    let n = perm.len();
    let mut e_b = Matrix::zeros(n + 1, n + 1);
    e_b[(0, 0)] = 1.0;
    for (i, &target) in perm.iter().enumerate() {
        e_b[(i + 1, target)] = 1.0;
    }
    e_b
}

fn validate_perm(perm: &[usize]) -> Result<(), CryptoError> {
    let n = perm.len();
    if n == 0 {
        return Err(CryptoError::InvalidKey("empty permutation".into()));
    }
    let mut seen = vec![false; n + 1];
    for &p in perm {
        if p == 0 || p > n || seen[p] {
            return Err(CryptoError::InvalidKey(format!("{perm:?} is not a permutation of 1..={n}")));
        }
        seen[p] = true;
    }
    Ok(())
}

impl SecretKey {
    /// Deterministic key for patch length `l` and `n` patches.
    pub fn generate(seed: &Seed, l: usize, n: usize) -> Result<Self, CryptoError> {
        if l == 0 || n == 0 {
            return Err(CryptoError::InvalidKey(format!("L = {l} and N = {n} must be >= 1")));
        }
        let mut perm_rng = Rng::stream(seed, "key/permutation");
        let perm = rng_permutation(&mut perm_rng, n);

        for attempt in 0..MAX_KEYGEN_ATTEMPTS {
            let mut rng = Rng::new(seed.derive_indexed("key/e_a", attempt as u64));
            let e_a = rng_matrix(&mut rng, l, l, Distribution::StandardNormal);
            let Ok(lu) = Lu::factor(&e_a) else { continue };
            let e_a_inv = lu.inverse();
            let cond = condition_one(&e_a, &e_a_inv);
            if cond.is_finite() && cond <= MAX_CONDITION {
                let e_b = permutation_matrix(&perm);
                let key_id = fingerprint(&[&seed.0, &(l as u64).to_le_bytes(), &(n as u64).to_le_bytes()]);
                return Ok(Self { e_a, e_a_inv, perm, e_b, key_id });
            }
            log::debug!("key attempt {attempt}: condition {cond:e} rejected");
        }
        Err(CryptoError::KeyGeneration)
    }

    /// Key from explicit parts; `e_a` must be invertible and `perm` a 1-based permutation.
    pub fn from_parts(e_a: Matrix, perm: Vec<usize>) -> Result<Self, CryptoError> {
        validate_perm(&perm)?;
        let e_a_inv = Lu::factor(&e_a)?.inverse();
        let mut bytes = Vec::new();
        crate::codec::put_f64s(&mut bytes, e_a.as_slice());
        let perm_bytes: Vec<u8> = perm.iter().flat_map(|p| (*p as u32).to_le_bytes()).collect();
        let key_id = fingerprint(&[&bytes, &perm_bytes]);
        let e_b = permutation_matrix(&perm);
        Ok(Self { e_a, e_a_inv, perm, e_b, key_id })
    }

    /// Key whose transforms are the identity. Useful as a control in tests.
    pub fn identity(l: usize, n: usize) -> Self {
        Self::from_parts(Matrix::identity(l), (1..=n).collect()).expect("identity key is valid")
    }

    pub fn e_a(&self) -> &Matrix {
        &self.e_a
    }

    pub fn e_a_inv(&self) -> &Matrix {
        &self.e_a_inv
    }

    pub fn e_b(&self) -> &Matrix {
        &self.e_b
    }

    /// The 1-based permutation `l_t`.
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn key_id(&self) -> u64 {
        self.key_id
    }

    /// L
    pub fn patch_len(&self) -> usize {
        self.e_a.rows()
    }

    /// N
    pub fn num_patches(&self) -> usize {
        self.perm.len()
    }

    fn check_rows(&self, what: &'static str, m: &Matrix, rows: usize) -> Result<(), CryptoError> {
        if m.rows() != rows {
            return Err(CryptoError::Shape { what, expected_rows: rows, got: m.shape() });
        }
        Ok(())
    }

    /// `E_a · m`
    pub fn encrypt_pat(&self, m: &Matrix) -> Result<Matrix, CryptoError> {
        self.check_rows("patch embedding", m, self.patch_len())?;
        Ok(self.e_a.matmul(m)?)
    }

    /// `E_a⁻¹ · m̂`
    pub fn decrypt_pat(&self, m: &Matrix) -> Result<Matrix, CryptoError> {
        self.check_rows("patch embedding", m, self.patch_len())?;
        Ok(self.e_a_inv.matmul(m)?)
    }

    /// `E_b · m`: row 0 kept, row `i` replaced by row `l_e(i)`.
    pub fn encrypt_pos(&self, m: &Matrix) -> Result<Matrix, CryptoError> {
        self.check_rows("position embedding", m, self.num_patches() + 1)?;
        let mut out = m.clone();
        for (i, &src) in self.perm.iter().enumerate() {
            out.row_mut(i + 1).copy_from_slice(m.row(src));
        }
        Ok(out)
    }

    /// `E_bᵀ · m̂`, the exact inverse of [`encrypt_pos`](Self::encrypt_pos).
    pub fn decrypt_pos(&self, m: &Matrix) -> Result<Matrix, CryptoError> {
        self.check_rows("position embedding", m, self.num_patches() + 1)?;
        let mut out = m.clone();
        for (i, &dst) in self.perm.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(m.row(i + 1));
        }
        Ok(out)
    }

    fn encrypt_layers(&self, l: &Layers) -> Result<Layers, CryptoError> {
        let mut out = l.clone();
        out.pat = self.encrypt_pat(&l.pat)?;
        out.pos = self.encrypt_pos(&l.pos)?;
        Ok(out)
    }

    fn decrypt_layers(&self, l: &Layers) -> Result<Layers, CryptoError> {
        let mut out = l.clone();
        out.pat = self.decrypt_pat(&l.pat)?;
        out.pos = self.decrypt_pos(&l.pos)?;
        Ok(out)
    }

    pub fn encrypt_model(&self, params: &ModelParams) -> Result<ModelParams, CryptoError> {
        if params.encrypted {
            return Err(CryptoError::AlreadyEncrypted);
        }
        Ok(ModelParams { layers: self.encrypt_layers(&params.layers)?, encrypted: true })
    }

    pub fn decrypt_model(&self, params: &ModelParams) -> Result<ModelParams, CryptoError> {
        if !params.encrypted {
            return Err(CryptoError::NotEncrypted);
        }
        Ok(ModelParams { layers: self.decrypt_layers(&params.layers)?, encrypted: false })
    }

    pub fn encrypt_grad(&self, grad: &GradientUpdate) -> Result<GradientUpdate, CryptoError> {
        if grad.encrypted {
            return Err(CryptoError::AlreadyEncrypted);
        }
        Ok(GradientUpdate { layers: self.encrypt_layers(&grad.layers)?, encrypted: true, round: grad.round, client_id: grad.client_id })
    }

    pub fn decrypt_grad(&self, grad: &GradientUpdate) -> Result<GradientUpdate, CryptoError> {
        if !grad.encrypted {
            return Err(CryptoError::NotEncrypted);
        }
        Ok(GradientUpdate { layers: self.decrypt_layers(&grad.layers)?, encrypted: false, round: grad.round, client_id: grad.client_id })
    }

    /// Serializes to the `FVK1` key-file layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (l, n) = (self.patch_len(), self.num_patches());
        let mut out = Vec::with_capacity(4 + 1 + 8 + 16 * l * l + 4 * n + 8);
        out.extend_from_slice(KEY_MAGIC);
        out.push(KEY_VERSION);
        out.extend_from_slice(&(l as u32).to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        crate::codec::put_f64s(&mut out, self.e_a.as_slice());
        crate::codec::put_f64s(&mut out, self.e_a_inv.as_slice());
        for p in &self.perm {
            out.extend_from_slice(&(*p as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.key_id.to_le_bytes());
        out
    }

    /// Parses an `FVK1` key file; `E_b` is rebuilt from the stored permutation.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let bad = |t: crate::codec::Truncated| {
            CryptoError::KeyFile(format!("truncated at byte {} (needed {} more)", t.offset, t.needed))
        };
        let mut cur = Cursor::new(bytes);
        if cur.take(4).map_err(bad)? != KEY_MAGIC {
            return Err(CryptoError::KeyFile("bad magic, expected FVK1".into()));
        }
        let version = cur.u8().map_err(bad)?;
        if version != KEY_VERSION {
            return Err(CryptoError::KeyFile(format!("unsupported version {version}")));
        }
        let l = cur.u32().map_err(bad)? as usize;
        let n = cur.u32().map_err(bad)? as usize;
        if l == 0 || n == 0 {
            return Err(CryptoError::KeyFile(format!("empty dimensions L = {l}, N = {n}")));
        }
        let e_a = Matrix::from_vec(l, l, cur.f64s(l * l).map_err(bad)?)?;
        let e_a_inv = Matrix::from_vec(l, l, cur.f64s(l * l).map_err(bad)?)?;
        let perm = (0..n).map(|_| cur.u32().map(|p| p as usize)).collect::<Result<Vec<_>, _>>().map_err(bad)?;
        validate_perm(&perm)?;
        let key_id = cur.u64().map_err(bad)?;
        if cur.remaining() != 0 {
            return Err(CryptoError::KeyFile(format!("{} trailing bytes", cur.remaining())));
        }
        let e_b = permutation_matrix(&perm);
        Ok(Self { e_a, e_a_inv, perm, e_b, key_id })
    }

    pub fn save(&self, path: &Path) -> Result<(), CryptoError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CryptoError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
