//! TOML run configuration. The long parameter list lives in a structured
//! file rather than flags; see the repository README for the schema and
//! the defaults baked into each section.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sfc_core::error::{Result, SfcError};
use sfc_core::model::Hyperparameters;
use sfc_core::sampler::SamplerConfig;
use sfc_core::wavelet::WaveletFamily;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub parallel: ParallelSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Csv,
    Binary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Dataset file, long-format CSV or the packed binary layout.
    pub path: PathBuf,
    pub rows: usize,
    pub cols: usize,
    /// Inferred from the file extension when absent.
    #[serde(default)]
    pub format: Option<DataFormat>,
    /// Subsample the series to this length before fitting; required when
    /// the stored length is not a power of two.
    #[serde(default)]
    pub target_t: Option<usize>,
}

impl DataSection {
    pub fn resolved_format(&self) -> Result<DataFormat> {
        if let Some(f) = self.format {
            return Ok(f);
        }
        match self.path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(DataFormat::Csv),
            Some("bin") => Ok(DataFormat::Binary),
            _ => Err(SfcError::Config(format!(
                "cannot infer the format of {}; set data.format to \"csv\" or \"binary\"",
                self.path.display()
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub wavelet: WaveletFamily,
    pub hyperparameters: Hyperparameters,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { wavelet: WaveletFamily::Haar, hyperparameters: Hyperparameters::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSection {
    pub chains: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub settings: SamplerConfig,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self { chains: 4, seed: 1, settings: SamplerConfig::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParallelSection {
    /// Concurrent chains.
    pub chain_workers: usize,
    /// Threads for the within-iteration sweep over clusters, per chain.
    pub cluster_workers: usize,
}

impl Default for ParallelSection {
    fn default() -> Self {
        Self { chain_workers: 1, cluster_workers: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| SfcError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.rows == 0 || self.data.cols == 0 {
            return Err(SfcError::Config("lattice dimensions must be positive".into()));
        }
        if let Some(t) = self.data.target_t {
            if t < 2 || !t.is_power_of_two() {
                return Err(SfcError::Config(format!(
                    "data.target_t must be a power of two >= 2, got {t}"
                )));
            }
        }
        self.data.resolved_format()?;
        if self.sampler.chains == 0 {
            return Err(SfcError::Config("sampler.chains must be at least 1".into()));
        }
        self.sampler.settings.validate()?;
        self.model.hyperparameters.validate()?;
        if self.parallel.chain_workers == 0 || self.parallel.cluster_workers == 0 {
            return Err(SfcError::Config("worker counts must be at least 1".into()));
        }
        Ok(())
    }
}
