//! Config-file loading and flag layering: flags > file > preset defaults.

use std::path::{Path, PathBuf};

use actret::dataset::SynthConfig;
use actret::experiment::{EvalConfig, ExperimentConfig};
use actret::training::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Top-level TOML file. Relative paths resolve against the file's directory.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub manifest: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub semantic_bank: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// `desk` or `large`; seeds the `[train]` defaults.
    pub preset: Option<String>,
    pub shots: Option<usize>,
    pub train: Option<toml::Table>,
    pub eval: Option<toml::Table>,
    pub synth: Option<toml::Table>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        if !path.is_file() {
            return Err(CliError::Validation(format!(
                "config file {} does not exist",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.manifest,
            &mut cfg.features,
            &mut cfg.semantic_bank,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn train(&self, preset_flag: Option<&str>) -> Result<TrainConfig, CliError> {
        let preset = preset_flag.or(self.preset.as_deref()).unwrap_or("desk");
        let defaults = TrainConfig::preset(preset).map_err(CliError::from)?;
        overlay(&defaults, self.train.as_ref(), "train")
    }

    pub fn eval(&self) -> Result<EvalConfig, CliError> {
        overlay(&EvalConfig::default(), self.eval.as_ref(), "eval")
    }

    pub fn synth(&self) -> Result<SynthConfig, CliError> {
        overlay(&SynthConfig::default(), self.synth.as_ref(), "synth")
    }
}

/// Replaces the fields of `defaults` that `table` sets; unknown keys are errors.
fn overlay<T: Serialize + DeserializeOwned>(
    defaults: &T,
    table: Option<&toml::Table>,
    section: &str,
) -> Result<T, CliError> {
    let mut v = serde_json::to_value(defaults).expect("defaults serialize");
    if let Some(t) = table {
        let over = serde_json::to_value(t).map_err(|e| CliError::Validation(format!("[{section}]: {e}")))?;
        if let (Value::Object(dst), Value::Object(src)) = (&mut v, over) {
            dst.extend(src);
        }
    }
    serde_json::from_value(v).map_err(|e| CliError::Validation(format!("[{section}]: {e}")))
}

/// Run directory `<out>/<hash>-seed<seed>`; the hash covers the configuration
/// (seed excluded) and the manifest bytes.
pub fn run_dir(out: &Path, cfg: &ExperimentConfig, manifest: &Path, tag: &str) -> Result<PathBuf, CliError> {
    let mut unseeded = cfg.clone();
    unseeded.train.seed = 0;
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update(serde_json::to_vec(&unseeded).expect("config serializes"));
    h.update(std::fs::read(manifest).map_err(|e| CliError::io(manifest, e))?);
    let digest = h.finalize();
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    Ok(out.join(format!("{hex}-seed{}", cfg.train.seed)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_override_preset_and_unknown_keys_fail() {
        let f: FileConfig = toml::from_str("preset = \"large\"\n[train]\ntau = 0.5\n").unwrap();
        let t = f.train(None).unwrap();
        assert_eq!(t.tau, 0.5);
        assert_eq!(t.embed_dim, 512);
        assert_eq!(f.train(Some("desk")).unwrap().embed_dim, 64);
        let bad: FileConfig = toml::from_str("[train]\ntua = 0.5\n").unwrap();
        assert!(bad.train(None).is_err());
        assert!(toml::from_str::<FileConfig>("bogus = 1\n").is_err());
    }
}
