use evfl::data::{load_cifar10_binary, load_idx, partition_random, synth_generate, write_image};
use evfl::model::{Image, Layers, ModelConfig, ModelParams};
use evfl::{modelfile, Matrix, Rng, SecretKey, Seed};
use proptest::prelude::*;

fn random_bits(rng: &mut Rng, r: usize, c: usize) -> Matrix {
    let v = (0..r * c)
        .map(|_| loop {
            let x = f64::from_bits(rng.next_u64());
            if !x.is_nan() {
                break x;
            }
        })
        .collect();
    Matrix::from_vec(r, c, v).unwrap()
}

#[test]
fn key_file_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k.fvk");
    let k = SecretKey::generate(&Seed::from_u64(8), 48, 4).unwrap();
    k.save(&path).unwrap();
    let back = SecretKey::load(&path).unwrap();
    assert_eq!(back.to_bytes(), k.to_bytes());
    assert_eq!(back.key_id(), k.key_id());
    assert!(back.e_b().bit_eq(k.e_b()));
}

#[test]
fn key_file_rejects_corruption() {
    let k = SecretKey::generate(&Seed::from_u64(8), 6, 3).unwrap();
    let bytes = k.to_bytes();
    for cut in 0..bytes.len() {
        assert!(SecretKey::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(SecretKey::from_bytes(&bad).is_err());
    let mut trailing = bytes;
    trailing.push(0);
    assert!(SecretKey::from_bytes(&trailing).is_err());
}

#[test]
fn model_file_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.fvw");
    let cfg = ModelConfig::default();
    let p = ModelParams::init(&cfg, &mut Rng::new(Seed::from_u64(1)));
    modelfile::save(&path, &cfg, &p).unwrap();
    let (c, q) = modelfile::load(&path).unwrap();
    assert_eq!(c, cfg);
    assert!(q.layers.bit_eq(&p.layers));
}

#[test]
fn model_file_rejects_truncation_and_wrong_shapes() {
    let cfg = ModelConfig { image_h: 4, image_w: 4, channels: 1, patch_size: 2, embed_dim: 2, num_classes: 2, hidden_dim: 16 };
    let p = ModelParams::zeros(&cfg);
    let bytes = modelfile::to_bytes(&cfg, &p);
    for cut in 0..bytes.len() {
        assert!(modelfile::from_bytes(&bytes[..cut]).is_err());
    }
    let other = ModelConfig { embed_dim: 3, ..cfg };
    let mixed = modelfile::to_bytes(&other, &p);
    assert!(modelfile::from_bytes(&mixed).is_err());
}

#[test]
fn cifar_fixture_two_records() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("batch.bin");
    let mut bytes = Vec::new();
    for (label, fill) in [(3u8, 255u8), (9u8, 0u8)] {
        bytes.push(label);
        bytes.extend(std::iter::repeat(fill).take(3072));
    }
    // Distinguish the red plane of record 0 at pixel (0, 1).
    bytes[1 + 1] = 51;
    std::fs::write(&path, &bytes).unwrap();
    let ds = load_cifar10_binary(&[&path]).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!((ds.samples[0].label, ds.samples[1].label), (3, 9));
    assert_eq!(ds.samples[0].image.get(0, 0, 0), 1.0);
    assert_eq!(ds.samples[0].image.get(0, 1, 0), 0.2);
    assert_eq!(ds.samples[0].image.get(0, 1, 1), 1.0);
    assert!(ds.samples[1].image.pixels.iter().all(|v| *v == 0.0));

    std::fs::write(&path, &bytes[..3073 + 100]).unwrap();
    let err = load_cifar10_binary(&[&path]).unwrap_err().to_string();
    assert!(err.contains("3073"), "{err}");
}

#[test]
fn idx_pair_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = (dir.path().join("img.idx"), dir.path().join("lbl.idx"));
    let mut img = vec![0, 0, 8, 3];
    for d in [3u32, 2, 2] {
        img.extend(d.to_be_bytes());
    }
    img.extend([0, 255, 128, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
    let mut lbl = vec![0, 0, 8, 1];
    lbl.extend(3u32.to_be_bytes());
    lbl.extend([0, 1, 2]);
    std::fs::write(&ip, &img).unwrap();
    std::fs::write(&lp, &lbl).unwrap();
    let ds = load_idx(&ip, &lp).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.samples[0].image.dims(), (2, 2, 1));
    assert_eq!(ds.samples[0].image.pixels[0], 0.0);
    assert_eq!(ds.samples[0].image.pixels[1], 1.0);

    lbl.truncate(lbl.len() - 1);
    lbl[7] = 2;
    std::fs::write(&lp, &lbl).unwrap();
    assert!(load_idx(&ip, &lp).is_err());
}

#[test]
fn pnm_bytes_for_black_and_white() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.ppm");
    write_image(&Image::filled(2, 3, 3, 1.0), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let header = b"P6\n3 2\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert!(bytes[header.len()..].iter().all(|b| *b == 255));
    let gray = dir.path().join("b.pgm");
    write_image(&Image::filled(2, 2, 1, 0.0), &gray).unwrap();
    let bytes = std::fs::read(&gray).unwrap();
    assert!(bytes.starts_with(b"P5\n"));
    assert!(bytes.ends_with(&[0, 0, 0, 0]));
}

#[test]
fn synthetic_data_is_balanced_deterministic_and_in_range() {
    let cfg = ModelConfig::default();
    let a = synth_generate(&Seed::from_u64(4), 103, &cfg, 10);
    let b = synth_generate(&Seed::from_u64(4), 103, &cfg, 10);
    assert_eq!(a, b);
    for k in 0..10 {
        let c = a.samples.iter().filter(|s| s.label == k).count();
        assert!((10..=11).contains(&c));
    }
    assert!(a.samples.iter().flat_map(|s| &s.image.pixels).all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn partitions_over_several_seeds_are_disjoint() {
    let cfg = ModelConfig { image_h: 4, image_w: 4, channels: 1, patch_size: 2, embed_dim: 2, num_classes: 2, hidden_dim: 16 };
    let ds = synth_generate(&Seed::from_u64(0), 60, &cfg, 2);
    for s in 0..5 {
        let p = partition_random(&ds, 5, 12, &Seed::from_u64(s)).unwrap();
        assert!(p.is_disjoint());
        assert_eq!(p, partition_random(&ds, 5, 12, &Seed::from_u64(s)).unwrap());
    }
    assert!(partition_random(&ds, 5, 13, &Seed::from_u64(0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn model_bytes_round_trip(seed in any::<u64>(), ps in 1usize..3, grid in 1usize..3, d in 1usize..4, k in 2usize..4, enc in any::<bool>()) {
        let n = grid * grid;
        let cfg = ModelConfig { image_h: ps * grid, image_w: ps * grid, channels: 3, patch_size: ps, embed_dim: d, num_classes: k, hidden_dim: 4 * n };
        let mut rng = Rng::new(Seed::from_u64(seed));
        let mut layers = Layers::zeros(&cfg);
        for t in layers.tensors_mut() {
            *t = random_bits(&mut rng, t.rows(), t.cols());
        }
        let p = ModelParams { layers, encrypted: enc };
        let bytes = modelfile::to_bytes(&cfg, &p);
        let (c, q) = modelfile::from_bytes(&bytes).unwrap();
        prop_assert_eq!(c, cfg);
        prop_assert_eq!(q.encrypted, enc);
        prop_assert!(q.layers.bit_eq(&p.layers));
    }

    #[test]
    fn key_bytes_round_trip(seed in any::<u64>(), l in 1usize..20, n in 1usize..20) {
        let k = SecretKey::generate(&Seed::from_u64(seed), l, n).unwrap();
        let back = SecretKey::from_bytes(&k.to_bytes()).unwrap();
        prop_assert_eq!(back.to_bytes(), k.to_bytes());
        prop_assert!(back.e_a_inv().bit_eq(k.e_a_inv()));
    }
}
