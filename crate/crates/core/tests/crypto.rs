use evfl::crypto::CryptoError;
use evfl::model::{Layers, ModelConfig, ModelParams};
use evfl::numerics::{rng_matrix, Distribution};
use evfl::{GradientUpdate, Matrix, Rng, SecretKey, Seed};
use proptest::prelude::*;

fn normal(seed: u64, r: usize, c: usize) -> Matrix {
    rng_matrix(&mut Rng::new(Seed::from_u64(seed)), r, c, Distribution::StandardNormal)
}

fn key(seed: u64, l: usize, n: usize) -> SecretKey {
    SecretKey::generate(&Seed::from_u64(seed), l, n).unwrap()
}

#[test]
fn same_seed_same_key() {
    let a = key(5, 12, 4);
    let b = key(5, 12, 4);
    assert_eq!(a.key_id(), b.key_id());
    assert!(a.e_a().bit_eq(b.e_a()));
    assert_eq!(a.permutation(), b.permutation());
}

#[test]
fn distinct_seeds_have_distinct_fingerprints() {
    let mut ids: Vec<u64> = (0..100).map(|s| key(s, 6, 4).key_id()).collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), 100);
}

#[test]
fn e_a_times_inverse_is_identity() {
    let k = key(3, 192, 16);
    assert!(k.e_a().matmul(k.e_a_inv()).unwrap().max_abs_diff(&Matrix::identity(192)) <= 1e-10);
    let c = evfl::numerics::condition_one(k.e_a(), k.e_a_inv());
    assert!(c <= evfl::crypto::MAX_CONDITION, "condition {c}");
}

#[test]
fn decrypting_e_a_gives_identity() {
    let k = key(4, 10, 3);
    assert!(k.decrypt_pat(k.e_a()).unwrap().max_abs_diff(&Matrix::identity(10)) <= 1e-10);
}

#[test]
fn identity_key_is_transparent() {
    let k = SecretKey::identity(6, 3);
    let m = normal(1, 6, 4);
    let p = normal(2, 4, 4);
    assert!(k.encrypt_pat(&m).unwrap().bit_eq(&m));
    assert!(k.encrypt_pos(&p).unwrap().bit_eq(&p));
    assert!(k.decrypt_pos(&p).unwrap().bit_eq(&p));
}

#[test]
fn shape_mismatch_is_rejected() {
    let k = key(1, 8, 4);
    assert!(matches!(k.encrypt_pat(&normal(1, 7, 3)), Err(CryptoError::Shape { .. })));
    assert!(matches!(k.encrypt_pos(&normal(1, 4, 3)), Err(CryptoError::Shape { .. })));
}

#[test]
fn double_encryption_and_decryption_are_refused() {
    let cfg = ModelConfig { image_h: 4, image_w: 4, channels: 1, patch_size: 2, embed_dim: 3, num_classes: 2, hidden_dim: 16 };
    let k = key(2, cfg.patch_len(), cfg.num_patches());
    let p = ModelParams::init(&cfg, &mut Rng::new(Seed::from_u64(1)));
    let e = k.encrypt_model(&p).unwrap();
    assert!(matches!(k.encrypt_model(&e), Err(CryptoError::AlreadyEncrypted)));
    assert!(matches!(k.decrypt_model(&p), Err(CryptoError::NotEncrypted)));
    let g = GradientUpdate::plain(p.layers.clone());
    assert!(matches!(k.decrypt_grad(&g), Err(CryptoError::NotEncrypted)));
}

#[test]
fn head_tensors_pass_through_unchanged() {
    let cfg = ModelConfig::default();
    let k = key(7, cfg.patch_len(), cfg.num_patches());
    let p = ModelParams::init(&cfg, &mut Rng::new(Seed::from_u64(8)));
    let e = k.encrypt_model(&p).unwrap();
    assert!(e.encrypted);
    let (a, b) = (p.layers.tensors(), e.layers.tensors());
    for i in 2..7 {
        assert!(a[i].bit_eq(b[i]));
    }
}

#[test]
fn gradient_round_and_client_survive_encryption() {
    let cfg = ModelConfig { image_h: 4, image_w: 4, channels: 1, patch_size: 2, embed_dim: 3, num_classes: 2, hidden_dim: 16 };
    let k = key(2, cfg.patch_len(), cfg.num_patches());
    let g = GradientUpdate { layers: Layers::zeros(&cfg), round: 7, client_id: 3, encrypted: false };
    let e = k.encrypt_grad(&g).unwrap();
    assert_eq!((e.round, e.client_id, e.encrypted), (7, 3, true));
    // Linear map of zero.
    assert_eq!(e.layers.pat.max_abs(), 0.0);
    assert_eq!(e.layers.pos.max_abs(), 0.0);
}

#[test]
fn ciphertext_rows_are_uncorrelated_with_plaintext_rows() {
    let mut total = 0.0;
    for t in 0..100u64 {
        let k = key(1000 + t, 24, 4);
        let e = normal(t, 24, 16);
        let c = k.encrypt_pat(&e).unwrap();
        let mut sum = 0.0;
        for r in 0..24 {
            sum += pearson(e.row(r), c.row(r));
        }
        total += sum / 24.0;
    }
    let mean = total / 100.0;
    assert!(mean.abs() < 0.1, "mean row correlation {mean}");
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn pos_round_trip_is_bit_exact_over_many_matrices() {
    let k = key(11, 12, 9);
    let mut rng = Rng::new(Seed::from_u64(12));
    for _ in 0..1000 {
        let m = rng_matrix(&mut rng, 10, 5, Distribution::StandardNormal);
        assert!(k.decrypt_pos(&k.encrypt_pos(&m).unwrap()).unwrap().bit_eq(&m));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pat_round_trip(seed in any::<u64>(), l in 1usize..40, d in 1usize..10) {
        let k = key(seed, l, 2);
        let m = normal(seed ^ 9, l, d);
        prop_assert!(k.decrypt_pat(&k.encrypt_pat(&m).unwrap()).unwrap().max_abs_diff(&m) <= 1e-10);
    }

    #[test]
    fn pos_row_zero_fixed_and_rows_permuted(seed in any::<u64>(), n in 1usize..20, d in 1usize..6) {
        let k = key(seed, 2, n);
        let m = normal(seed ^ 5, n + 1, d);
        let e = k.encrypt_pos(&m).unwrap();
        prop_assert_eq!(e.row(0), m.row(0));
        let key_of = |x: &Matrix| {
            let mut rows: Vec<Vec<u64>> = (0..x.rows()).map(|r| x.row(r).iter().map(|v| v.to_bits()).collect()).collect();
            rows.sort();
            rows
        };
        prop_assert_eq!(key_of(&e), key_of(&m));
        prop_assert!(k.e_b().matmul(&m).unwrap().bit_eq(&e));
    }

    #[test]
    fn encryption_commutes_with_linear_combination(seed in any::<u64>(), alpha in -5.0f64..5.0, beta in -5.0f64..5.0) {
        let k = key(seed, 16, 6);
        let (a, b) = (normal(seed ^ 1, 16, 4), normal(seed ^ 2, 16, 4));
        let mixed = k.encrypt_pat(&a).unwrap().scale(alpha).add(&k.encrypt_pat(&b).unwrap().scale(beta)).unwrap();
        let want = a.scale(alpha).add(&b.scale(beta)).unwrap();
        prop_assert!(k.decrypt_pat(&mixed).unwrap().max_abs_diff(&want) <= 1e-9);
        prop_assert!(k.encrypt_pat(&want).unwrap().max_abs_diff(&mixed) <= 1e-10 * (1.0 + mixed.max_abs()));

        let (pa, pb) = (normal(seed ^ 3, 7, 4), normal(seed ^ 4, 7, 4));
        let mixed_pos = k.encrypt_pos(&pa).unwrap().scale(alpha).add(&k.encrypt_pos(&pb).unwrap().scale(beta)).unwrap();
        let want_pos = pa.scale(alpha).add(&pb.scale(beta)).unwrap();
        prop_assert!(k.decrypt_pos(&mixed_pos).unwrap().bit_eq(&want_pos));
    }

    #[test]
    fn model_round_trip(seed in any::<u64>()) {
        let cfg = ModelConfig { image_h: 8, image_w: 8, channels: 3, patch_size: 4, embed_dim: 8, num_classes: 3, hidden_dim: 16 };
        let k = key(seed, cfg.patch_len(), cfg.num_patches());
        let p = ModelParams::init(&cfg, &mut Rng::new(Seed::from_u64(seed ^ 7)));
        let back = k.decrypt_model(&k.encrypt_model(&p).unwrap()).unwrap();
        prop_assert!(!back.encrypted);
        prop_assert!(back.layers.max_abs_diff(&p.layers) <= 1e-10);
        prop_assert!(back.layers.pos.bit_eq(&p.layers.pos));
    }
}
