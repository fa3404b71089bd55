use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use serde::Serialize;

use evfl::federation::{
    client_state, initial_model, prepare_data, run_client, run_simulation_from, serve, FederationError, Mode, RoundRecord,
    RunConfig, TransportKind,
};
use evfl::transport::{socket_connect_retry, SocketListener};
use evfl::{modelfile, ModelParams, SecretKey};

use crate::common::{create_dir, key_id_hex, load_key, load_run_config, usage, CliError};
use crate::{Role, TrainArgs, TransportArg};

const CONNECT_ATTEMPTS: u32 = 100;
const CONNECT_DELAY: Duration = Duration::from_millis(100);

#[derive(Serialize)]
struct Artifacts {
    model: Option<String>,
    metrics: String,
    key_id: Option<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    role: &'static str,
    seed: u64,
    mode: String,
    strategy: String,
    completed: bool,
    last_completed_round: Option<u32>,
    error: Option<String>,
    final_accuracy: Option<f64>,
    records: &'a [RoundRecord],
    artifacts: Artifacts,
    config: &'a RunConfig,
}

/// What a finished or aborted run leaves behind.
struct RunResult<'a> {
    records: &'a [RoundRecord],
    final_accuracy: Option<f64>,
    model: Option<&'a str>,
    failure: Option<&'a FederationError>,
}

fn write_outputs(dir: &Path, role: &'static str, cfg: &RunConfig, key: Option<&SecretKey>, r: RunResult) -> Result<(), CliError> {
    let last_completed_round = match r.failure {
        Some(FederationError::Aborted { last_completed_round, .. }) => *last_completed_round,
        Some(_) => None,
        None => r.records.last().map(|x| x.round),
    };
    let manifest = Manifest {
        role,
        seed: cfg.seed,
        mode: cfg.mode.to_string(),
        strategy: cfg.strategy.to_string(),
        completed: r.failure.is_none(),
        last_completed_round,
        error: r.failure.map(|e| e.to_string()),
        final_accuracy: r.final_accuracy,
        records: r.records,
        artifacts: Artifacts { model: r.model.map(str::to_string), metrics: "metrics.csv".into(), key_id: key.map(key_id_hex) },
        config: cfg,
    };
    let path = dir.join("manifest.json");
    let io = |e: std::io::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    let mut f = File::create(&path).map_err(io)?;
    serde_json::to_writer_pretty(&mut f, &manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    f.write_all(b"\n").map_err(io)?;
    write_metrics(&dir.join("metrics.csv"), cfg.clients, r.records)
}

fn write_metrics(path: &Path, clients: usize, records: &[RoundRecord]) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let mut header = vec!["round".to_string()];
    header.extend((0..clients).map(|i| format!("client{i}_loss")));
    header.push("accuracy".into());
    w.write_record(&header).map_err(err)?;
    let num = |v: f64| if v.is_finite() { v.to_string() } else { String::new() };
    for rec in records {
        let mut row = vec![rec.round.to_string()];
        row.extend(rec.losses.iter().map(|l| num(*l)));
        row.push(num(rec.accuracy));
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn save_model(path: &Path, cfg: &RunConfig, params: &ModelParams) -> Result<(), CliError> {
    modelfile::save(path, &cfg.model, params).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn load_initial(path: &Path, cfg: &RunConfig) -> Result<ModelParams, CliError> {
    let (file_cfg, params) = modelfile::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if file_cfg != cfg.model {
        return Err(usage(format!("{}: model shape differs from the run config", path.display())));
    }
    if params.encrypted != (cfg.mode == Mode::Encrypted) {
        return Err(usage(format!(
            "{}: initial model is {} but the run is in {} mode",
            path.display(),
            if params.encrypted { "encrypted" } else { "plaintext" },
            cfg.mode
        )));
    }
    Ok(params)
}

fn mode_key(a: &TrainArgs, cfg: &RunConfig) -> Result<Option<SecretKey>, CliError> {
    match (cfg.mode, &a.key) {
        (Mode::Plain, _) => Ok(None),
        (Mode::Encrypted, None) => Err(usage("encrypted mode requires --key <key file> (create one with `evfl keygen`)")),
        (Mode::Encrypted, Some(p)) => Ok(Some(load_key(p, &cfg.model)?)),
    }
}

pub fn run(a: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = load_run_config(&a.config, a.mode)?;
    if let Some(t) = a.transport {
        cfg.transport.kind = match t {
            TransportArg::Loopback => TransportKind::Loopback,
            TransportArg::Socket => TransportKind::Socket,
        };
    }
    if let Some(addr) = &a.addr {
        cfg.transport.addr = addr.clone();
    }
    match a.role {
        Role::All => run_all(a, &cfg),
        Role::Server => run_server(a, &cfg),
        Role::Client => run_client_role(a, &cfg),
    }
}

fn run_all(a: &TrainArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let key = mode_key(a, cfg)?;
    let data = prepare_data(cfg)?;
    let initial = match &a.initial_model {
        Some(p) => load_initial(p, cfg)?,
        None => initial_model(cfg, key.as_ref())?,
    };
    create_dir(&a.out_dir)?;
    match run_simulation_from(cfg, key.as_ref(), &data, initial) {
        Ok(out) => {
            save_model(&a.out_dir.join("model.fvw"), cfg, &out.final_model)?;
            let r = RunResult { records: &out.records, final_accuracy: Some(out.final_accuracy), model: Some("model.fvw"), failure: None };
            write_outputs(&a.out_dir, "all", cfg, key.as_ref(), r)?;
            println!("final accuracy: {:.2}%", 100.0 * out.final_accuracy);
            Ok(())
        }
        Err(e @ FederationError::Aborted { .. }) => {
            let r = RunResult { records: &[], final_accuracy: None, model: None, failure: Some(&e) };
            write_outputs(&a.out_dir, "all", cfg, key.as_ref(), r)?;
            Err(CliError::Runtime(e.to_string()))
        }
        Err(e) => Err(e.into()),
    }
}

fn run_server(a: &TrainArgs, cfg: &RunConfig) -> Result<(), CliError> {
    if a.key.is_some() {
        return Err(usage("the server role never holds the secret key; pass an encrypted --initial-model instead"));
    }
    if cfg.transport.kind != TransportKind::Socket {
        return Err(usage("--role server needs the socket transport"));
    }
    let initial = match (&a.initial_model, cfg.mode) {
        (Some(p), _) => load_initial(p, cfg)?,
        (None, Mode::Plain) => initial_model(cfg, None)?,
        (None, Mode::Encrypted) => {
            return Err(usage("an encrypted server needs --initial-model (create one with `evfl init-model`)"))
        }
    };
    create_dir(&a.out_dir)?;
    let listener = SocketListener::bind(cfg.transport.addr.as_str()).map_err(|e| usage(e.to_string()))?;
    println!("listening on {}", listener.local_addr());
    let _ = std::io::stdout().flush();

    let mut endpoints = Vec::with_capacity(cfg.clients);
    let mut result = Ok(());
    for _ in 0..cfg.clients {
        match listener.accept() {
            Ok(ep) => endpoints.push(ep),
            Err(e) => {
                result = Err(FederationError::Aborted { last_completed_round: None, source: Box::new(e.into()) });
                break;
            }
        }
    }
    drop(listener);
    let served = result.and_then(|()| serve(endpoints, initial, cfg.strategy, cfg.lr, cfg.rounds));
    match served {
        Ok(out) => {
            save_model(&a.out_dir.join("global.fvw"), cfg, &out.global)?;
            let r = RunResult { records: &out.records, final_accuracy: out.final_accuracy, model: Some("global.fvw"), failure: None };
            write_outputs(&a.out_dir, "server", cfg, None, r)?;
            if let Some(acc) = out.final_accuracy {
                println!("final accuracy: {:.2}%", 100.0 * acc);
            }
            Ok(())
        }
        Err(e) => {
            let r = RunResult { records: &[], final_accuracy: None, model: None, failure: Some(&e) };
            write_outputs(&a.out_dir, "server", cfg, None, r)?;
            Err(CliError::Runtime(e.to_string()))
        }
    }
}

fn run_client_role(a: &TrainArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let id = a.client_id.ok_or_else(|| usage("--role client needs --client-id"))?;
    if id as usize >= cfg.clients {
        return Err(usage(format!("client id {id} out of range for {} clients", cfg.clients)));
    }
    let addr = a.addr.as_deref().ok_or_else(|| usage("--role client needs --addr of the server"))?;
    let key = mode_key(a, cfg)?;
    let data = prepare_data(cfg)?;
    let state = client_state(cfg, &data, key.as_ref(), id)?;
    let ep = socket_connect_retry(addr, CONNECT_ATTEMPTS, CONNECT_DELAY).map_err(|e| CliError::Runtime(e.to_string()))?;
    let test = (id == 0).then_some(data.test.samples.as_slice());
    let out = run_client(ep, state, cfg.rounds, test).map_err(|e| CliError::Runtime(e.to_string()))?;
    if id == 0 {
        create_dir(&a.out_dir)?;
        save_model(&a.out_dir.join("model.fvw"), cfg, &out.final_model)?;
    }
    match out.final_accuracy {
        Some(acc) => println!("client {id} done, final accuracy: {:.2}%", 100.0 * acc),
        None => println!("client {id} done"),
    }
    Ok(())
}
