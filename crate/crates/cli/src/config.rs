//! Run configuration: one TOML file with a section per pipeline stage.

use std::path::{Path, PathBuf};

use cloudnet_core::augment::AugmentationPolicy;
use cloudnet_core::inference::InferenceConfig;
use cloudnet_core::model::NetworkConfig;
use cloudnet_core::trainer::TrainConfig;
use serde::Deserialize;

use crate::error::CliError;

pub const DATA_ROOT_ENV: &str = "CLOUDNET_DATA_ROOT";

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Holds `train/` and `test/` with one directory per band plus `gt/`.
    #[serde(default)]
    pub data_root: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    paths: Paths,
    #[serde(default)]
    network: NetworkConfig,
    train: TrainConfig,
    #[serde(default)]
    augment: AugmentationPolicy,
    #[serde(default)]
    inference: InferenceConfig,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub data_root: PathBuf,
    pub output_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub augment: AugmentationPolicy,
    pub inference: InferenceConfig,
}

impl RunConfig {
    pub fn best_checkpoint(&self) -> PathBuf {
        self.output_dir.join("best.ckpt")
    }

    pub fn last_checkpoint(&self) -> PathBuf {
        self.output_dir.join("last.ckpt")
    }

    pub fn patches_dir(&self) -> PathBuf {
        self.output_dir.join("patches")
    }

    pub fn predictions_dir(&self) -> PathBuf {
        self.output_dir.join("predictions")
    }
}

fn has_key(table: &toml::Table, section: &str, key: &str) -> bool {
    table
        .get(section)
        .and_then(|s| s.as_table())
        .is_some_and(|s| s.contains_key(key))
}

/// Parses `text`; relative paths resolve against `base`.
pub fn parse(text: &str, base: &Path, env_data_root: Option<PathBuf>) -> Result<RunConfig, CliError> {
    let table: toml::Table = text.parse().map_err(|e| CliError::Usage(format!("config: {e}")))?;
    if !has_key(&table, "train", "seed") {
        return Err(CliError::Usage("config: `train.seed` is required".into()));
    }
    let augment_seeded = has_key(&table, "augment", "seed");
    let raw: RawConfig = table.try_into().map_err(|e| CliError::Usage(format!("config: {e}")))?;
    let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
    let data_root = env_data_root
        .or(raw.paths.data_root.map(resolve))
        .ok_or_else(|| CliError::Usage(format!("config: set `paths.data_root` or {DATA_ROOT_ENV}")))?;
    let mut augment = raw.augment;
    if !augment_seeded {
        augment.seed = raw.train.seed;
    }
    let cfg = RunConfig {
        data_root,
        output_dir: resolve(raw.paths.output_dir),
        checkpoint: raw.paths.checkpoint.map(resolve),
        network: raw.network,
        train: raw.train,
        augment,
        inference: raw.inference,
    };
    cfg.network.validate().map_err(|e| CliError::Usage(format!("config [network]: {e}")))?;
    cfg.train.validate().map_err(|e| CliError::Usage(format!("config [train]: {e}")))?;
    cfg.augment.validate().map_err(|e| CliError::Usage(format!("config [augment]: {e}")))?;
    cfg.inference.validate().map_err(|e| CliError::Usage(format!("config [inference]: {e}")))?;
    if cfg.inference.model_input_side != cfg.network.input_side {
        return Err(CliError::Usage(format!(
            "config: inference.model_input_side {} differs from network.input_side {}",
            cfg.inference.model_input_side, cfg.network.input_side
        )));
    }
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let env = std::env::var_os(DATA_ROOT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    parse(&text, &base, env)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[paths]\ndata_root = \"data\"\noutput_dir = \"out\"\n[train]\nseed = 4\n";

    #[test]
    fn defaults_and_relative_paths() {
        let cfg = parse(MINIMAL, Path::new("/cfg"), None).unwrap();
        assert_eq!(cfg.data_root, Path::new("/cfg/data"));
        assert_eq!(cfg.output_dir, Path::new("/cfg/out"));
        assert_eq!(cfg.train.initial_lr, 1e-4);
        assert_eq!(cfg.train.patience, 15);
        assert_eq!(cfg.inference.threshold, 0.047);
        assert_eq!(cfg.network.input_side, 192);
        assert_eq!(cfg.augment.seed, 4);
    }

    #[test]
    fn seed_is_required() {
        let text = "[paths]\noutput_dir = \"o\"\ndata_root = \"d\"\n[train]\nmax_epochs = 3\n";
        assert!(matches!(parse(text, Path::new("."), None), Err(CliError::Usage(m)) if m.contains("train.seed")));
    }

    #[test]
    fn environment_overrides_data_root() {
        let cfg = parse(MINIMAL, Path::new("/cfg"), Some("/elsewhere".into())).unwrap();
        assert_eq!(cfg.data_root, Path::new("/elsewhere"));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_usage_errors() {
        let typo = format!("{MINIMAL}learning_rate = 1.0\n");
        assert!(matches!(parse(&typo, Path::new("."), None), Err(CliError::Usage(_))));
        let bad = format!("{MINIMAL}[inference]\nthreshold = 2.0\n");
        assert!(matches!(parse(&bad, Path::new("."), None), Err(CliError::Usage(_))));
    }

    #[test]
    fn input_sides_must_agree() {
        let text = format!("{MINIMAL}[network]\ninput_side = 64\n");
        assert!(matches!(parse(&text, Path::new("."), None), Err(CliError::Usage(m)) if m.contains("model_input_side")));
    }
}
