//! Flat key=value config files, flag overrides and config fingerprints.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use isurv::models::ModelConfig;

/// Parse a flat `key = value` text file; `#` starts a comment.
pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {path:?}"))?;
    parse_config_text(&text)
}

pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected 'key = value', got '{raw}'", lineno + 1);
        };
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}

/// Apply `key=value` pairs onto a model config; unknown keys are errors.
pub fn apply_model_overrides(config: &mut ModelConfig, kv: &BTreeMap<String, String>) -> Result<()> {
    for (key, value) in kv {
        apply_one(config, key, value)?;
    }
    Ok(())
}

fn apply_one(config: &mut ModelConfig, key: &str, value: &str) -> Result<()> {
    macro_rules! parse {
        () => {
            value.parse().with_context(|| format!("invalid value '{value}' for '{key}'"))?
        };
    }
    match key {
        "epochs" => config.epochs = parse!(),
        "learning_rate" | "lr" => config.learning_rate = parse!(),
        "gamma" => config.gamma = parse!(),
        "generations" | "m" => config.generations = parse!(),
        "quantile_fraction" | "r" => config.quantile_fraction = parse!(),
        "window" | "k" => config.window = parse!(),
        "p_mask" | "mask_rate" => config.p_mask = parse!(),
        "embed_dim" | "d" => config.embed_dim = parse!(),
        "dropout" => config.dropout = parse!(),
        "batch_rate" => config.batch_rate = parse!(),
        "weight_decay" => config.weight_decay = parse!(),
        "fine_tune_epochs" => config.fine_tune_epochs = Some(parse!()),
        "tau_init" => config.tau_init = parse!(),
        "seed" => config.seed = parse!(),
        "variant" => config.variant = isurv::models::Variant::parse(value)?,
        other => bail!("unknown config key '{other}'"),
    }
    Ok(())
}

/// FNV-1a 64-bit fingerprint, hex encoded.
pub fn fnv1a64(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}

/// Fingerprint of a run: the raw config file when one was given, otherwise
/// the canonical JSON of the effective model config.
pub fn config_hash(file_bytes: Option<&[u8]>, effective: &ModelConfig) -> Result<String> {
    match file_bytes {
        Some(bytes) => Ok(fnv1a64(bytes)),
        None => Ok(fnv1a64(serde_json::to_string(effective)?.as_bytes())),
    }
}
