use std::path::Path;

use evfl::federation::{initial_model, Mode, RunConfig};
use evfl::model::ModelConfig;
use evfl::{modelfile, SecretKey};

use crate::common::{key_id_hex, load_key, load_run_config, parse_seed, usage, CliError};
use crate::{InitModelArgs, KeygenArgs};

/// Reads a bare model table, or the `[model]` table of a run config.
fn read_model_config(path: &Path) -> Result<ModelConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let cfg = match RunConfig::from_toml(&text) {
        Ok(run) => run.model,
        Err(_) => toml::from_str::<ModelConfig>(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?,
    };
    cfg.validate().map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

pub fn run(a: &KeygenArgs) -> Result<(), CliError> {
    let seed = parse_seed(&a.seed)?;
    let cfg = match &a.model_config {
        Some(p) => read_model_config(p)?,
        None => ModelConfig::default(),
    };
    let key = SecretKey::generate(&seed, cfg.patch_len(), cfg.num_patches()).map_err(|e| CliError::Runtime(e.to_string()))?;
    key.save(&a.out).map_err(|e| usage(format!("{}: {e}", a.out.display())))?;
    println!("{}", key_id_hex(&key));
    Ok(())
}

pub fn init_model(a: &InitModelArgs) -> Result<(), CliError> {
    let cfg = load_run_config(&a.config, a.mode)?;
    let key = match (cfg.mode, &a.key) {
        (Mode::Encrypted, None) => return Err(usage("encrypted mode requires --key")),
        (Mode::Encrypted, Some(p)) => Some(load_key(p, &cfg.model)?),
        (Mode::Plain, _) => None,
    };
    let params = initial_model(&cfg, key.as_ref())?;
    modelfile::save(&a.out, &cfg.model, &params).map_err(|e| usage(format!("{}: {e}", a.out.display())))?;
    match &key {
        Some(k) => println!("wrote encrypted initial model for key {}", key_id_hex(k)),
        None => println!("wrote plaintext initial model"),
    }
    Ok(())
}
