use evfl::attack::{
    attack, baseline_psnr, evaluate_attack, leakage_identity_residual, reconstruct_patches, single_sample_gradient, AttackInput,
    Psnr, BASELINE_MARGIN_DB, RECOVERY_PSNR_DB,
};
use evfl::data::synth_generate;
use evfl::model::{patchify, unpatchify, Image, ModelConfig, ModelParams, Sample};
use evfl::{Rng, SecretKey, Seed};
use proptest::prelude::*;

fn trial(seed: u64, cfg: &ModelConfig) -> (Sample, ModelParams) {
    let ds = synth_generate(&Seed::from_u64(seed), cfg.num_classes, cfg, cfg.num_classes);
    let s = ds.samples[seed as usize % cfg.num_classes].clone();
    (s, ModelParams::init(cfg, &mut Rng::new(Seed::from_u64(seed ^ 0x5eed))))
}

#[test]
fn plain_gradients_reveal_the_image() {
    let cfg = ModelConfig::default();
    let (s, p) = trial(1, &cfg);
    let g = single_sample_gradient(&s, &p, &cfg).unwrap();
    let patches = reconstruct_patches(&AttackInput::from_update(&g, &cfg)).unwrap();
    assert!(patches.max_abs_diff(&patchify(&s.image, &cfg).unwrap()) <= 1e-6);
    let r = attack(&AttackInput::from_update(&g, &cfg), Some(&s.image)).unwrap();
    assert!(r.error.unwrap().psnr.db() >= RECOVERY_PSNR_DB);
    assert_eq!(r.rank_used, cfg.num_patches());
}

#[test]
fn report_covers_plain_encrypted_and_decrypted() {
    let cfg = ModelConfig::default();
    let (s, p) = trial(2, &cfg);
    let key = SecretKey::generate(&Seed::from_u64(3), cfg.patch_len(), cfg.num_patches()).unwrap();
    let g = single_sample_gradient(&s, &p, &cfg).unwrap();
    let eg = key.encrypt_grad(&g).unwrap();
    let rep = evaluate_attack(&g, &eg, &s.image, &cfg, Some(&key)).unwrap();
    let plain = rep.plain.unwrap().error.unwrap();
    let enc = rep.encrypted.unwrap().error.unwrap();
    let dec = rep.decrypted.unwrap().unwrap().error.unwrap();
    assert!(plain.psnr.db() >= RECOVERY_PSNR_DB);
    assert!(dec.max_abs <= 1e-6);
    assert!(enc.psnr.db() <= rep.baseline.db() + BASELINE_MARGIN_DB);
}

#[test]
fn ciphertext_attack_never_beats_baseline_over_fifty_samples() {
    let cfg = ModelConfig::default();
    let key = SecretKey::generate(&Seed::from_u64(77), cfg.patch_len(), cfg.num_patches()).unwrap();
    for seed in 100..150 {
        let (s, p) = trial(seed, &cfg);
        let g = key.encrypt_grad(&single_sample_gradient(&s, &p, &cfg).unwrap()).unwrap();
        let r = attack(&AttackInput::from_update(&g, &cfg), Some(&s.image)).unwrap();
        let base = baseline_psnr(&s.image).db();
        assert!(r.error.unwrap().psnr.db() <= base + BASELINE_MARGIN_DB, "seed {seed}");
    }
}

#[test]
fn psnr_of_image_against_itself_is_exact() {
    let img = Image::filled(4, 4, 3, 0.7);
    assert_eq!(evfl::attack::compare(&img, &img).psnr, Psnr::Exact);
}

#[test]
fn mid_gray_baseline_of_black_image() {
    // mse = 0.25 → 10·log10(4).
    let b = baseline_psnr(&Image::filled(2, 2, 1, 0.0)).db();
    assert!((b - 10.0 * 4f64.log10()).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn leakage_identity_holds(seed in any::<u64>()) {
        let cfg = ModelConfig::default();
        let (s, p) = trial(seed % 1000, &cfg);
        let p = ModelParams { layers: p.layers, encrypted: false };
        let g = single_sample_gradient(&s, &p, &cfg).unwrap();
        prop_assert!(leakage_identity_residual(&s, &g, &cfg).unwrap() <= 1e-10);
    }

    #[test]
    fn exact_recovery_on_random_images(seed in any::<u64>()) {
        let cfg = ModelConfig { image_h: 16, image_w: 16, channels: 3, patch_size: 4, embed_dim: 32, num_classes: 5, hidden_dim: 64 };
        let mut rng = Rng::new(Seed::from_u64(seed));
        let n = 16 * 16 * 3;
        let img = Image::new(16, 16, 3, (0..n).map(|_| rng.uniform01()).collect());
        let s = Sample { image: img, label: (seed % 5) as usize };
        let p = ModelParams::init(&cfg, &mut rng);
        let g = single_sample_gradient(&s, &p, &cfg).unwrap();
        let x = reconstruct_patches(&AttackInput::from_update(&g, &cfg)).unwrap();
        let back = unpatchify(&x, &cfg).unwrap();
        let worst = back.pixels.iter().zip(&s.image.pixels).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(worst <= 1e-6, "max error {worst}");
    }
}
