use std::collections::BTreeMap;
use std::path::Path;

use qoe_core::experiments::{DatasetSource, ExperimentConfig};
use qoe_core::features::VqiConfig;
use qoe_core::models::{ModelKind, ParamValue};
use qoe_core::pipeline::LoopConfig;
use qoe_core::synth::SynthConfig;
use serde::Deserialize;

use crate::CliError;

pub const DEFAULT_SEED: u64 = 42;

/// The `experiment.*` section.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub split_ratio: f64,
    pub cv_folds: usize,
    pub models: Vec<ModelKind>,
    pub hyperparams: BTreeMap<String, BTreeMap<String, ParamValue>>,
    pub timing_runs: usize,
    pub timing_warmup: usize,
    pub timing_sizes: Vec<usize>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let d = ExperimentConfig::default();
        Self {
            split_ratio: d.split_ratio,
            cv_folds: d.cv_folds,
            models: d.models,
            hyperparams: d.hyperparams,
            timing_runs: d.timing_runs,
            timing_warmup: d.timing_warmup,
            timing_sizes: d.timing_sizes,
        }
    }
}

/// Contents of the `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub seed: Option<u64>,
    pub synth: SynthConfig,
    pub vqi: VqiConfig,
    pub experiment: ExperimentSection,
    /// Closed-loop settings; `vqi` and `seed` come from the top level.
    pub pipeline: LoopConfig,
    /// Default grid for `grid-search`.
    pub grid: BTreeMap<String, Vec<ParamValue>>,
}

/// Parses TOML or JSON, chosen by file extension.
pub fn parse_by_extension<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext.to_ascii_lowercase().as_str() {
        "toml" => toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display()))),
        "json" => serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display()))),
        _ => Err(CliError::Usage(format!(
            "{}: expected a .toml or .json file",
            path.display()
        ))),
    }
}

impl AppConfig {
    pub fn load(path: Option<&Path>, seed_flag: Option<u64>) -> Result<Self, CliError> {
        let mut cfg: AppConfig = match path {
            Some(p) => parse_by_extension(p)?,
            None => AppConfig::default(),
        };
        cfg.seed = Some(seed_flag.or(cfg.seed).unwrap_or(DEFAULT_SEED));
        cfg.pipeline.vqi = cfg.vqi;
        cfg.pipeline.seed = cfg.seed();
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    /// Experiment settings over a session log, or over the synthetic
    /// generator when no log is given.
    pub fn experiment(&self, input: Option<&Path>) -> ExperimentConfig {
        let e = &self.experiment;
        ExperimentConfig {
            dataset: match input {
                Some(p) => DatasetSource::Log { path: p.to_path_buf() },
                None => DatasetSource::Synthetic {
                    synth: self.synth.clone(),
                },
            },
            split_ratio: e.split_ratio,
            cv_folds: e.cv_folds,
            models: e.models.clone(),
            seed: self.seed(),
            hyperparams: e.hyperparams.clone(),
            timing_runs: e.timing_runs,
            timing_warmup: e.timing_warmup,
            timing_sizes: e.timing_sizes.clone(),
            vqi: self.vqi,
            out_dir: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(name: &str, body: &str) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let mut f = std::fs::File::create(dir.path().join(name)).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        dir
    }

    #[test]
    fn toml_and_json_agree() {
        let t = write(
            "c.toml",
            "seed = 9\n[vqi]\nk = 3.0\n[synth]\nper_cell = 2\n[experiment]\nmodels = [\"RF\"]\n",
        );
        let j = write(
            "c.json",
            r#"{"seed": 9, "vqi": {"k": 3.0}, "synth": {"per_cell": 2}, "experiment": {"models": ["RF"]}}"#,
        );
        let a = AppConfig::load(Some(&t.path().join("c.toml")), None).unwrap();
        let b = AppConfig::load(Some(&j.path().join("c.json")), None).unwrap();
        assert_eq!(a.experiment(None), b.experiment(None));
        assert_eq!(a.seed(), 9);
        assert_eq!(a.vqi.k, 3.0);
        assert_eq!(a.pipeline.vqi.k, 3.0);
    }

    #[test]
    fn seed_flag_wins() {
        let t = write("c.toml", "seed = 9\n");
        assert_eq!(AppConfig::load(Some(&t.path().join("c.toml")), Some(4)).unwrap().seed(), 4);
        assert_eq!(AppConfig::load(None, None).unwrap().seed(), DEFAULT_SEED);
    }

    #[test]
    fn unknown_keys_and_extensions_are_usage_errors() {
        let t = write("c.toml", "sede = 9\n");
        assert!(matches!(
            AppConfig::load(Some(&t.path().join("c.toml")), None),
            Err(CliError::Usage(_))
        ));
        let y = write("c.yaml", "seed: 9\n");
        assert!(matches!(
            AppConfig::load(Some(&y.path().join("c.yaml")), None),
            Err(CliError::Usage(_))
        ));
    }
}
