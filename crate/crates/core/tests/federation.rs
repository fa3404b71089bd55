use std::thread;

use evfl::federation::{
    client_state, initial_model, prepare_data, run_client, run_simulation, serve, ClientUpdate, DataSource, FederationError,
    Mode, RunConfig, ServerState, Strategy,
};
use evfl::model::{batch_gradient, Layers, ModelConfig, ModelParams, Sample};
use evfl::numerics::{rng_matrix, Distribution};
use evfl::transport::{loopback_pair, Metrics, RoundMessage};
use evfl::{GradientUpdate, Rng, SecretKey, Seed};
use proptest::prelude::*;

fn small_model() -> ModelConfig {
    ModelConfig { image_h: 8, image_w: 8, channels: 3, patch_size: 4, embed_dim: 8, num_classes: 3, hidden_dim: 16 }
}

fn run_config(mode: Mode, strategy: Strategy, rounds: u32) -> RunConfig {
    RunConfig {
        mode,
        strategy,
        clients: 4,
        rounds,
        seed: 21,
        model: small_model(),
        data: DataSource::Synthetic { per_client: 16, test_size: 60 },
        ..RunConfig::default()
    }
}

fn key_for(cfg: &RunConfig) -> SecretKey {
    SecretKey::generate(&Seed::from_u64(99), cfg.model.patch_len(), cfg.model.num_patches()).unwrap()
}

fn random_layers(cfg: &ModelConfig, rng: &mut Rng) -> Layers {
    let mut l = Layers::zeros(cfg);
    for t in l.tensors_mut() {
        *t = rng_matrix(rng, t.rows(), t.cols(), Distribution::StandardNormal);
    }
    l
}

#[test]
fn encrypted_client_gradients_decrypt_to_plain_gradients() {
    let cfg = run_config(Mode::Encrypted, Strategy::FedSgd, 1);
    let key = key_for(&cfg);
    let data = prepare_data(&cfg).unwrap();
    let global = initial_model(&cfg, Some(&key)).unwrap();
    let mut client = client_state(&cfg, &data, Some(&key), 2).unwrap();
    let (update, _) = client.client_local_step(&global, 0).unwrap();
    let ClientUpdate::Gradients(enc) = update else { panic!("fedsgd sends gradients") };
    assert!(enc.encrypted);
    assert_eq!((enc.round, enc.client_id), (0, 2));

    let plain_cfg = RunConfig { mode: Mode::Plain, ..cfg.clone() };
    let plain_global = initial_model(&plain_cfg, None).unwrap();
    let samples: Vec<Sample> = data.client_samples(2);
    let refs: Vec<&Sample> = samples.iter().collect();
    let (_, want) = batch_gradient(&refs, &plain_global, &cfg.model).unwrap();
    assert!(key.decrypt_grad(&enc).unwrap().layers.max_abs_diff(&want) <= 1e-10);
}

#[test]
fn identity_key_outbound_equals_plain_pipeline() {
    let cfg = run_config(Mode::Encrypted, Strategy::FedAvg, 1);
    let id_key = SecretKey::identity(cfg.model.patch_len(), cfg.model.num_patches());
    let data = prepare_data(&cfg).unwrap();
    let enc_global = initial_model(&cfg, Some(&id_key)).unwrap();
    let mut enc_client = client_state(&cfg, &data, Some(&id_key), 0).unwrap();
    let (enc_up, enc_loss) = enc_client.client_local_step(&enc_global, 0).unwrap();

    let plain_cfg = RunConfig { mode: Mode::Plain, ..cfg.clone() };
    let mut plain_client = client_state(&plain_cfg, &data, None, 0).unwrap();
    let (plain_up, plain_loss) = plain_client.client_local_step(&initial_model(&plain_cfg, None).unwrap(), 0).unwrap();

    let (ClientUpdate::Params { params: a, .. }, ClientUpdate::Params { params: b, .. }) = (enc_up, plain_up) else {
        panic!("fedavg sends parameters")
    };
    assert!(a.layers.bit_eq(&b.layers));
    assert_eq!(enc_loss.to_bits(), plain_loss.to_bits());
}

#[test]
fn client_refuses_stale_round_and_wrong_domain() {
    let cfg = run_config(Mode::Encrypted, Strategy::FedSgd, 2);
    let key = key_for(&cfg);
    let data = prepare_data(&cfg).unwrap();
    let global = initial_model(&cfg, Some(&key)).unwrap();
    let mut c = client_state(&cfg, &data, Some(&key), 0).unwrap();
    assert!(matches!(c.client_local_step(&global, 1), Err(FederationError::StaleRound { expected: 0, got: 1 })));
    let plain = key.decrypt_model(&global).unwrap();
    assert!(matches!(c.client_local_step(&plain, 0), Err(FederationError::DomainMixing { .. })));
}

#[test]
fn fedsgd_server_update_on_pat_is_e_a_times_plain_update() {
    let cfg = small_model();
    let key = SecretKey::generate(&Seed::from_u64(3), cfg.patch_len(), cfg.num_patches()).unwrap();
    let mut rng = Rng::new(Seed::from_u64(4));
    let init = ModelParams { layers: random_layers(&cfg, &mut rng), encrypted: false };
    let grads: Vec<GradientUpdate> = (0..3)
        .map(|id| GradientUpdate { layers: random_layers(&cfg, &mut rng), round: 0, client_id: id, encrypted: false })
        .collect();
    let mut plain = ServerState::new(init.clone(), Strategy::FedSgd, 0.3, 3);
    plain.aggregate_fedsgd(&grads).unwrap();
    let mut enc = ServerState::new(key.encrypt_model(&init).unwrap(), Strategy::FedSgd, 0.3, 3);
    let enc_grads: Vec<GradientUpdate> = grads.iter().map(|g| key.encrypt_grad(g).unwrap()).collect();
    enc.aggregate_fedsgd(&enc_grads).unwrap();

    let lhs = &enc.global().layers.pat;
    let rhs = key.e_a().matmul(&plain.global().layers.pat).unwrap();
    assert!(lhs.max_abs_diff(&rhs) <= 1e-9);
    let pos_rhs = key.e_b().matmul(&plain.global().layers.pos).unwrap();
    assert!(enc.global().layers.pos.max_abs_diff(&pos_rhs) <= 1e-12);
}

#[test]
fn identical_updates_match_single_client() {
    let cfg = small_model();
    let mut rng = Rng::new(Seed::from_u64(5));
    let init = ModelParams { layers: random_layers(&cfg, &mut rng), encrypted: false };
    let g = random_layers(&cfg, &mut rng);
    let mut one = ServerState::new(init.clone(), Strategy::FedSgd, 0.1, 1);
    one.aggregate_fedsgd(&[GradientUpdate { layers: g.clone(), round: 0, client_id: 0, encrypted: false }]).unwrap();
    let mut many = ServerState::new(init, Strategy::FedSgd, 0.1, 4);
    let same: Vec<GradientUpdate> =
        (0..4).map(|id| GradientUpdate { layers: g.clone(), round: 0, client_id: id, encrypted: false }).collect();
    many.aggregate_fedsgd(&same).unwrap();
    assert!(one.global().layers.max_abs_diff(&many.global().layers) <= 1e-15);
}

#[test]
fn rounds_advance_by_one_per_quorum() {
    let cfg = small_model();
    let mut rng = Rng::new(Seed::from_u64(6));
    let mut s = ServerState::new(ModelParams::zeros(&cfg), Strategy::FedAvg, 0.1, 2);
    for t in 0..5u32 {
        assert_eq!(s.round(), t);
        for id in 0..2 {
            let p = ModelParams { layers: random_layers(&cfg, &mut rng), encrypted: false };
            s.submit(ClientUpdate::Params { params: p, round: t, client_id: id }).unwrap();
        }
        s.aggregate().unwrap();
    }
    assert_eq!(s.round(), 5);
}

#[test]
fn fedavg_dual_run_matches() {
    let plain_cfg = run_config(Mode::Plain, Strategy::FedAvg, 3);
    let enc_cfg = run_config(Mode::Encrypted, Strategy::FedAvg, 3);
    let key = key_for(&enc_cfg);
    let a = run_simulation(&plain_cfg, None).unwrap();
    let b = run_simulation(&enc_cfg, Some(&key)).unwrap();
    assert_eq!(a.records.len(), 3);
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!(x.round, y.round);
        for (l1, l2) in x.losses.iter().zip(&y.losses) {
            assert!((l1 - l2).abs() <= 1e-9);
        }
        assert_eq!(format!("{:.2}", x.accuracy * 100.0), format!("{:.2}", y.accuracy * 100.0));
    }
    assert!(a.final_model.layers.max_abs_diff(&b.final_model.layers) <= 1e-9);
}

#[test]
fn zero_round_encrypted_run_returns_initial_model() {
    let cfg = run_config(Mode::Encrypted, Strategy::FedSgd, 0);
    let key = key_for(&cfg);
    let out = run_simulation(&cfg, Some(&key)).unwrap();
    let plain_init = initial_model(&RunConfig { mode: Mode::Plain, ..cfg.clone() }, None).unwrap();
    assert!(!out.final_model.encrypted);
    assert!(out.final_model.layers.max_abs_diff(&plain_init.layers) <= 1e-10);
    assert!(out.final_model.layers.pos.bit_eq(&plain_init.layers.pos));
}

#[test]
fn key_for_wrong_geometry_is_a_config_error() {
    let cfg = run_config(Mode::Encrypted, Strategy::FedSgd, 1);
    let key = SecretKey::generate(&Seed::from_u64(1), 5, 5).unwrap();
    assert!(matches!(run_simulation(&cfg, Some(&key)), Err(FederationError::Config(_))));
}

#[test]
fn every_sample_used_by_exactly_one_client() {
    let mut cfg = run_config(Mode::Plain, Strategy::FedSgd, 1);
    cfg.clients = 5;
    let data = prepare_data(&cfg).unwrap();
    assert!(data.partition.is_disjoint());
    let total: usize = (0..5).map(|c| data.partition.indices(c).len()).sum();
    assert_eq!(total, data.train.len());
}

#[test]
fn server_aborts_with_last_round_when_a_client_vanishes() {
    let cfg = small_model();
    let (mut client, server_ep) = loopback_pair();
    let driver = thread::spawn(move || {
        client.send(&RoundMessage::register(0)).unwrap();
        for t in 0..2u32 {
            let msg = client.recv().unwrap();
            let g = GradientUpdate { layers: Layers::zeros(&cfg), round: t, client_id: 0, encrypted: false };
            assert_eq!(msg.round, t);
            if t == 1 {
                return; // drop the connection mid-round
            }
            client.send(&RoundMessage::grad_update(&g, Metrics::NONE)).unwrap();
        }
    });
    let err = serve(vec![server_ep], ModelParams::zeros(&small_model()), Strategy::FedSgd, 0.1, 5).unwrap_err();
    driver.join().unwrap();
    match err {
        FederationError::Aborted { last_completed_round, .. } => assert_eq!(last_completed_round, Some(0)),
        other => panic!("expected abort, got {other}"),
    }
}

#[test]
fn client_reports_stale_round_from_server() {
    let cfg = run_config(Mode::Plain, Strategy::FedSgd, 3);
    let data = prepare_data(&cfg).unwrap();
    let state = client_state(&cfg, &data, None, 0).unwrap();
    let (client_ep, mut server) = loopback_pair();
    let model = initial_model(&cfg, None).unwrap();
    let h = thread::spawn(move || run_client(client_ep, state, 3, None));
    assert_eq!(server.recv().unwrap().sender_id, 0);
    server.send(&RoundMessage::global_model(2, &model)).unwrap();
    assert!(matches!(h.join().unwrap(), Err(FederationError::StaleRound { expected: 0, got: 2 })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn encrypted_aggregation_commutes_with_decryption(seed in any::<u64>(), m in 1usize..=8, fedavg in any::<bool>()) {
        let cfg = small_model();
        let key = SecretKey::generate(&Seed::from_u64(seed), cfg.patch_len(), cfg.num_patches()).unwrap();
        let mut rng = Rng::new(Seed::from_u64(seed ^ 0xabc));
        let init = ModelParams { layers: random_layers(&cfg, &mut rng), encrypted: false };
        let strategy = if fedavg { Strategy::FedAvg } else { Strategy::FedSgd };
        let mut plain = ServerState::new(init.clone(), strategy, 0.05, m);
        let mut enc = ServerState::new(key.encrypt_model(&init).unwrap(), strategy, 0.05, m);
        for id in 0..m as u32 {
            let layers = random_layers(&cfg, &mut rng);
            let (p, e) = if fedavg {
                let p = ModelParams { layers, encrypted: false };
                let e = key.encrypt_model(&p).unwrap();
                (ClientUpdate::Params { params: p, round: 0, client_id: id }, ClientUpdate::Params { params: e, round: 0, client_id: id })
            } else {
                let g = GradientUpdate { layers, round: 0, client_id: id, encrypted: false };
                let e = key.encrypt_grad(&g).unwrap();
                (ClientUpdate::Gradients(g), ClientUpdate::Gradients(e))
            };
            plain.submit(p).unwrap();
            enc.submit(e).unwrap();
        }
        plain.aggregate().unwrap();
        enc.aggregate().unwrap();
        let dec = key.decrypt_model(enc.global()).unwrap();
        prop_assert!(dec.layers.max_abs_diff(&plain.global().layers) <= 1e-9);
        prop_assert!(dec.layers.pos.bit_eq(&plain.global().layers.pos));
    }
}
