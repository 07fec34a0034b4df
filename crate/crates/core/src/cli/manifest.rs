use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::MineSettings;
use super::CliError;
use crate::feature_store::Precision;
use crate::objective::LossConfig;
use crate::synthgen::MixtureSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRun {
    pub spec_path: Option<PathBuf>,
    pub spec: MixtureSpec,
    pub precision: Precision,
    pub output: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MineRun {
    pub features: PathBuf,
    pub config_path: Option<PathBuf>,
    pub settings: MineSettings,
    pub output: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRun {
    pub features: PathBuf,
    pub mining: PathBuf,
    pub config_path: Option<PathBuf>,
    pub settings: LossConfig,
    pub output: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub trust: bool,
    pub curve: bool,
    pub cluster: bool,
    pub bands: bool,
    pub quantiles: Vec<f64>,
    pub band_cuts: [f64; 2],
    /// Cluster count for `cluster`; defaults to the number of label classes.
    pub clusters: Option<usize>,
    pub cluster_seed: u64,
    pub cluster_max_iters: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            trust: false,
            curve: false,
            cluster: false,
            bands: false,
            quantiles: crate::eval::default_quantile_grid(),
            band_cuts: crate::eval::DEFAULT_BAND_CUTS,
            clusters: None,
            cluster_seed: 0,
            cluster_max_iters: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRun {
    pub features: PathBuf,
    pub mining: Option<PathBuf>,
    pub projection: Option<PathBuf>,
    pub config_path: Option<PathBuf>,
    pub settings: EvalSettings,
    pub output: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParam {
    pub name: String,
    pub value: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPoint {
    pub params: Vec<SweepParam>,
    pub settings: MineSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRun {
    pub features: PathBuf,
    pub base_path: Option<PathBuf>,
    pub sweep_path: PathBuf,
    pub points: Vec<SweepPoint>,
    /// When present every point is also trained and clustered.
    pub train: Option<LossConfig>,
    pub eval: EvalSettings,
    pub output: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", content = "run", rename_all = "lowercase")]
pub enum Invocation {
    Generate(GenerateRun),
    Mine(MineRun),
    Train(TrainRun),
    Eval(EvalRun),
    Sweep(SweepRun),
}

impl Invocation {
    pub fn output(&self) -> &Path {
        match self {
            Invocation::Generate(r) => &r.output,
            Invocation::Mine(r) => &r.output,
            Invocation::Train(r) => &r.output,
            Invocation::Eval(r) => &r.output,
            Invocation::Sweep(r) => &r.output,
        }
    }

    pub fn set_output(&mut self, path: PathBuf) {
        match self {
            Invocation::Generate(r) => r.output = path,
            Invocation::Mine(r) => r.output = path,
            Invocation::Train(r) => r.output = path,
            Invocation::Eval(r) => r.output = path,
            Invocation::Sweep(r) => r.output = path,
        }
    }

    /// Whether the output is a directory (as opposed to a single file).
    pub fn writes_directory(&self) -> bool {
        matches!(self, Invocation::Train(_) | Invocation::Eval(_) | Invocation::Sweep(_))
    }

    pub fn seed(&self) -> Option<u64> {
        use crate::result::StrategyConfig;
        match self {
            Invocation::Generate(r) => Some(r.spec.seed),
            Invocation::Mine(r) => match (&r.settings.subsample, &r.settings.strategy) {
                (Some(s), _) => Some(s.seed),
                (None, StrategyConfig::Kmeans(k)) => Some(k.seed),
                _ => None,
            },
            Invocation::Train(r) => Some(r.settings.seed),
            Invocation::Eval(r) => r.settings.cluster.then_some(r.settings.cluster_seed),
            Invocation::Sweep(r) => r.train.map(|t| t.seed),
        }
    }

    /// Where the manifest of this run lives.
    pub fn manifest_path(&self) -> PathBuf {
        if self.writes_directory() {
            self.output().join("manifest.json")
        } else {
            let mut name = self.output().as_os_str().to_owned();
            name.push(".manifest.json");
            PathBuf::from(name)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub invocation: Invocation,
    pub seed: Option<u64>,
    pub threads: usize,
    pub duration_secs: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    pub fn write(&self) -> Result<(), CliError> {
        let path = self.invocation.manifest_path();
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}
