use std::path::{Path, PathBuf};

use camsynth::analysis::{Method, PipelineConfig};
use camsynth::data::{load_csv, merge_historical, Arm, Column, CovariateSchema, LoadOptions, OutcomeColumns, OutcomeMode, StudyData};
use camsynth::equivalence::EquivalenceConfig;
use camsynth::sampler::ChainConfig;
use camsynth::simgen::ScenarioSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    /// Master seed. Mandatory: there is no clock-based fallback.
    pub seed: Option<u64>,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    pub data: Option<DataSection>,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub analysis: AnalysisSection,
    pub simulate: Option<SimulateSection>,
    pub power: Option<PowerSection>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub treatment: PathBuf,
    /// One or more RWD files; several are merged with per-row provenance.
    pub rwd: Vec<PathBuf>,
    pub schema: Vec<Column>,
    #[serde(default)]
    pub outcome: OutcomeSection,
    pub missing_tokens: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeSection {
    #[serde(default = "none_mode")]
    pub mode: OutcomeMode,
    /// Survival: event time column (original units) and event indicator.
    pub time: Option<String>,
    pub status: Option<String>,
    /// Continuous: response column.
    pub value: Option<String>,
}

impl Default for OutcomeSection {
    fn default() -> Self {
        Self { mode: OutcomeMode::None, time: None, status: None, value: None }
    }
}

fn none_mode() -> OutcomeMode {
    OutcomeMode::None
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub resample_ratio: f64,
    pub equivalence: EquivalenceConfig,
    pub compare_random: bool,
    pub standardize: bool,
    pub weights_use_outcomes: bool,
    pub hr_target: f64,
    pub t_star: f64,
    pub grid_points: usize,
    pub level: f64,
    /// Posterior draws (evenly spaced) used for the goodness-of-fit export.
    pub gof_draws: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            resample_ratio: p.resample_ratio,
            equivalence: p.equivalence,
            compare_random: true,
            standardize: p.standardize,
            weights_use_outcomes: p.weights_use_outcomes,
            hr_target: p.r_star,
            t_star: p.t_star,
            grid_points: p.grid_points,
            level: p.level,
            gof_draws: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateSection {
    #[serde(flatten)]
    pub scenario: ScenarioSpec,
    /// Keep the registry's censored survival outcomes instead of generating continuous
    /// ones (selection scenarios only).
    #[serde(default)]
    pub survival: bool,
    /// Treatment-arm hazard ratio applied to survival outcomes; 1 leaves them unchanged.
    #[serde(default = "unit")]
    pub hazard_ratio: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSection {
    pub cell: ScenarioSpec,
    #[serde(default = "default_reps")]
    pub null_replicates: usize,
    #[serde(default = "default_reps")]
    pub alt_replicates: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
}

fn default_reps() -> usize {
    50
}

fn default_methods() -> Vec<Method> {
    vec![Method::CaPpmx, Method::IsLm]
}

/// A parsed config together with the facts every artifact records about it.
pub struct Loaded {
    pub cfg: StudyConfig,
    pub text: String,
    pub hash: String,
    pub seed: u64,
    pub base: PathBuf,
    pub out: PathBuf,
    /// SHA-256 of every data file the config names, keyed by the path as written.
    pub inputs: serde_json::Map<String, serde_json::Value>,
}

impl Loaded {
    pub fn read(path: &Path, seed_override: Option<u64>, out_override: Option<PathBuf>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: StudyConfig = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.chain.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let seed = seed_override.or(cfg.seed).ok_or_else(|| CliError::Config(format!("{}: `seed` is mandatory", path.display())))?;
        let hash = hex::encode(Sha256::digest(text.as_bytes()));
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let out = out_override.unwrap_or_else(|| base.join(&cfg.output_dir));
        let mut loaded = Self { cfg, text, hash, seed, base, out, inputs: Default::default() };
        loaded.inputs = loaded.input_hashes();
        Ok(loaded)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let a = &self.cfg.analysis;
        PipelineConfig {
            chain: self.cfg.chain.clone(),
            mode: self.cfg.data.as_ref().map_or(OutcomeMode::None, |d| d.outcome.mode),
            resample_ratio: a.resample_ratio,
            equivalence: a.equivalence.clone(),
            validate: true,
            compare_random: a.compare_random,
            standardize: a.standardize,
            weights_use_outcomes: a.weights_use_outcomes,
            t_star: a.t_star,
            r_star: a.hr_target,
            grid_points: a.grid_points,
            level: a.level,
        }
    }

    pub fn data(&self) -> Result<&DataSection, CliError> {
        self.cfg.data.as_ref().ok_or_else(|| CliError::Config("config has no [data] section".into()))
    }

    pub fn schema(&self) -> Result<CovariateSchema, CliError> {
        CovariateSchema::new(self.data()?.schema.clone()).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn outcome_columns(&self) -> Result<Option<OutcomeColumns>, CliError> {
        let o = &self.data()?.outcome;
        let need = |v: &Option<String>, key: &str| v.clone().ok_or_else(|| CliError::Config(format!("outcome mode needs `{key}`")));
        Ok(match o.mode {
            OutcomeMode::None => None,
            OutcomeMode::Continuous => Some(OutcomeColumns::Continuous { value: need(&o.value, "value")? }),
            OutcomeMode::Survival => Some(OutcomeColumns::Survival { time: need(&o.time, "time")?, status: need(&o.status, "status")? }),
        })
    }

    fn input_hashes(&self) -> serde_json::Map<String, serde_json::Value> {
        let mut m = serde_json::Map::new();
        if let Some(d) = &self.cfg.data {
            for p in std::iter::once(&d.treatment).chain(&d.rwd) {
                let h = std::fs::read(self.resolve(p)).map(|b| hex::encode(Sha256::digest(&b))).unwrap_or_default();
                m.insert(p.display().to_string(), h.into());
            }
        }
        m
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Loads both arms; several RWD files are merged.
    pub fn study(&self) -> Result<StudyData, CliError> {
        let d = self.data()?;
        let schema = self.schema()?;
        let mut opts = LoadOptions { outcome: self.outcome_columns()?, ..Default::default() };
        if let Some(t) = &d.missing_tokens {
            opts.missing_tokens = t.clone();
        }
        let load = |p: &Path, arm: Arm| {
            let path = self.resolve(p);
            if !path.exists() {
                return Err(CliError::io(&path, std::io::Error::new(std::io::ErrorKind::NotFound, "file not found")));
            }
            // Provenance names the file as written in the config so artifacts do not depend on the working directory.
            let opts = LoadOptions { source: Some(p.display().to_string()), ..opts.clone() };
            load_csv(&path, &schema, arm, &opts).map(|(ds, _)| ds).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
        };
        let treatment = load(&d.treatment, Arm::Treatment)?;
        if d.rwd.is_empty() {
            return Err(CliError::Config("[data] rwd lists no files".into()));
        }
        let sources = d.rwd.iter().map(|p| load(p, Arm::Rwd)).collect::<Result<Vec<_>, _>>()?;
        let rwd = merge_historical(&sources).map_err(|e| CliError::Input(e.to_string()))?;
        StudyData::new(treatment, rwd).map_err(|e| CliError::Input(e.to_string()))
    }
}
