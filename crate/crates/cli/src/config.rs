//! Sectioned key-value run configuration. Command-line flags override
//! every key.

use std::path::{Path, PathBuf};

use serde::Deserialize;

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub prior: PriorSection,
    #[serde(default)]
    pub chain: ChainSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub baseline: BaselineSection,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub draws: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub k: Option<usize>,
    pub d: Option<usize>,
    /// Checked against the data when present.
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub shapes: Option<Vec<Vec<usize>>>,
    /// Use only the first `t` observations.
    pub t: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub elicit_v: Option<f64>,
    pub elicit_av: Option<f64>,
    pub alpha: Option<f64>,
    pub a_tau: Option<f64>,
    pub b_tau: Option<f64>,
    pub a_sigma: Option<f64>,
    pub b_sigma: Option<f64>,
    pub a_lambda: Option<f64>,
    pub b_lambda: Option<f64>,
    pub nu: Option<Vec<f64>>,
    pub sigma_mu_sq: Option<f64>,
    pub a_noise: Option<f64>,
    pub b_noise: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub scan_fraction: Option<f64>,
    pub ident: Option<String>,
    pub ident_equation: Option<usize>,
    pub beta_prior: Option<String>,
    pub path_warmup: Option<usize>,
    pub starts: Option<usize>,
    pub start_sweeps: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub setting: Option<String>,
    pub covariates: Option<String>,
    pub noisy: Option<bool>,
    pub t: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    pub train: Option<usize>,
    pub horizons: Option<Vec<usize>>,
    pub lambda: Option<f64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}
