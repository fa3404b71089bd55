use std::path::Path;

use evfl::data::{load_cifar10_binary, Dataset};
use evfl::federation::prepare_data;
use evfl::model::accuracy;
use evfl::modelfile;

use crate::common::{load_key, load_run_config, usage, CliError};
use crate::EvalArgs;

fn is_toml(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "toml")
}

pub fn run(a: &EvalArgs) -> Result<(), CliError> {
    let (cfg, mut params) = modelfile::load(&a.model).map_err(|e| usage(format!("{}: {e}", a.model.display())))?;
    if params.encrypted {
        let path = a.key.as_ref().ok_or_else(|| usage(format!("{} is encrypted; pass --key to decrypt it", a.model.display())))?;
        params = load_key(path, &cfg)?.decrypt_model(&params).map_err(|e| usage(e.to_string()))?;
    }
    let test: Dataset = match a.data.as_slice() {
        [p] if is_toml(p) => prepare_data(&load_run_config(p, None)?)?.test,
        paths if paths.iter().any(|p| is_toml(p)) => return Err(usage("--data takes one run config or CIFAR-10 batch files")),
        paths => load_cifar10_binary(paths).map_err(|e| usage(e.to_string()))?,
    };
    test.check_config(&cfg).map_err(|e| usage(format!("model and data disagree: {e}")))?;
    let acc = accuracy(&test.samples, &params, &cfg).map_err(|e| usage(e.to_string()))?;
    println!("accuracy: {:.2}%", 100.0 * acc);
    Ok(())
}
