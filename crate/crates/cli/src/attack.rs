use std::fmt::Write as _;
use std::path::Path;

use evfl::attack::{evaluate_attack, single_sample_gradient, AttackError, AttackResult};
use evfl::data::write_image;
use evfl::federation::{initial_model, prepare_data, Mode, RunConfig};
use evfl::{modelfile, Image, SecretKey, Seed};

use crate::common::{create_dir, key_id_hex, load_key, load_run_config, usage, CliError};
use crate::AttackArgs;

fn write_pnm(dir: &Path, stem: &str, image: &Image) -> Result<String, CliError> {
    let name = format!("{stem}.{}", if image.channels == 1 { "pgm" } else { "ppm" });
    write_image(image, &dir.join(&name)).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(name)
}

/// Writes the case's image and returns its report line.
fn case(dir: &Path, label: &str, r: &Result<AttackResult, AttackError>) -> Result<String, CliError> {
    match r {
        Ok(res) => {
            let file = write_pnm(dir, &format!("reconstructed_{label}"), &res.reconstructed)?;
            let e = res.error.expect("attack scored against the original");
            let psnr = if e.psnr.db().is_infinite() { "exact".to_string() } else { format!("{:.2}dB", e.psnr.db()) };
            Ok(format!("{label}: rank={} mse={:.6e} max_abs={:.6e} psnr={psnr} image={file}", res.rank_used, e.mse, e.max_abs))
        }
        Err(AttackError::RankDeficient { rank, required }) => {
            Ok(format!("{label}: inconclusive rank={rank} required={required}"))
        }
        Err(e) => Err(CliError::Runtime(format!("{label} attack: {e}"))),
    }
}

pub fn run(a: &AttackArgs) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(p) => load_run_config(p, Some(crate::ModeArg::Plain))?,
        None => RunConfig::default(),
    };
    let supplied = match &a.key {
        Some(p) => {
            let shape = match &a.gradients_from_run {
                Some(m) => modelfile::load(m).map_err(|e| usage(format!("{}: {e}", m.display())))?.0,
                None => cfg.model,
            };
            Some(load_key(p, &shape)?)
        }
        None => None,
    };

    let params = match &a.gradients_from_run {
        Some(path) => {
            let (file_cfg, params) = modelfile::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            if a.config.is_some() && file_cfg != cfg.model {
                return Err(usage(format!("{}: model shape differs from the run config", path.display())));
            }
            cfg.model = file_cfg;
            if params.encrypted {
                let key = supplied.as_ref().ok_or_else(|| usage(format!("{} is encrypted; pass --key", path.display())))?;
                key.decrypt_model(&params).map_err(|e| usage(e.to_string()))?
            } else {
                params
            }
        }
        None => {
            cfg.mode = Mode::Plain;
            initial_model(&cfg, None)?
        }
    };
    let data = prepare_data(&cfg)?;
    let sample = data.train.samples.get(a.sample_index).ok_or_else(|| {
        usage(format!("sample index {} out of range for {} training samples", a.sample_index, data.train.len()))
    })?;

    let key = match &supplied {
        Some(k) => k.clone(),
        None => SecretKey::generate(&Seed::from_u64(cfg.seed).derive("attack/ephemeral-key"), cfg.model.patch_len(), cfg.model.num_patches())
            .map_err(|e| CliError::Runtime(e.to_string()))?,
    };
    let grad = single_sample_gradient(sample, &params, &cfg.model).map_err(|e| usage(e.to_string()))?;
    let enc = key.encrypt_grad(&grad).map_err(|e| CliError::Runtime(e.to_string()))?;
    let rep = evaluate_attack(&grad, &enc, &sample.image, &cfg.model, supplied.as_ref())
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    create_dir(&a.out_dir)?;
    let original = write_pnm(&a.out_dir, "original", &sample.image)?;
    let mut report = String::new();
    let _ = writeln!(report, "sample_index: {}", a.sample_index);
    let _ = writeln!(report, "label: {}", sample.label);
    let _ = writeln!(report, "original: {original}");
    let _ = writeln!(
        report,
        "key: {} ({})",
        key_id_hex(&key),
        if supplied.is_some() { "supplied" } else { "ephemeral" }
    );
    let _ = writeln!(report, "baseline_psnr: {:.2}dB", rep.baseline.db());
    let mut lines = vec![case(&a.out_dir, "plain", &rep.plain)?, case(&a.out_dir, "encrypted", &rep.encrypted)?];
    if let Some(d) = &rep.decrypted {
        lines.push(case(&a.out_dir, "decrypted", d)?);
    }
    for l in &lines {
        let _ = writeln!(report, "{l}");
        println!("{l}");
    }
    let path = a.out_dir.join("report.txt");
    std::fs::write(&path, report).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}
