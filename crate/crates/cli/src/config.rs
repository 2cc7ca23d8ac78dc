//! Experiment configuration: one structured document (TOML by default, JSON
//! accepted by extension) covering dataset paths, the split recipe, the
//! strategy list and optional ablation grids.

use discovery_core::dataset::{ConceptKey, EmbeddingFormat, ImbalanceSpec};
use discovery_core::derive_seed;
use discovery_core::discovery::{
    BaselineKind, EmbeddingProvider, PartitionMode, PartitionSettings, ProbabilityProvider,
    Strategy, StrategySpec,
};
use discovery_core::kernels::RectifyPolicy;
use discovery_core::maximizer::{GreedyMode, MergePolicy};
use discovery_core::submodular::FunctionFamily;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub split: SplitConfig,
    #[serde(rename = "strategy", default)]
    pub strategies: Vec<StrategyConfig>,
    #[serde(default)]
    pub ablation: Option<AblationConfig>,
}

fn default_seed() -> u64 {
    0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub embeddings: PathBuf,
    /// Inferred from the extension (`.csv` / `.raw`) when omitted.
    #[serde(default)]
    pub format: Option<EmbeddingFormat>,
    pub labels: PathBuf,
    #[serde(default)]
    pub probabilities: Option<PathBuf>,
    /// Object-feature manifest for detection kernels (loaded and validated;
    /// the discovery loop itself runs on the classification embeddings).
    #[serde(default)]
    pub detection_manifest: Option<PathBuf>,
    /// Unit-normalize embeddings after loading.
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_true() -> bool {
    true
}

impl DatasetConfig {
    pub fn embedding_format(&self) -> Result<EmbeddingFormat> {
        if let Some(f) = self.format {
            return Ok(f);
        }
        match self.embeddings.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(EmbeddingFormat::Csv),
            Some("raw") => Ok(EmbeddingFormat::RawF32),
            other => Err(err(format!(
                "cannot infer embedding format from extension {other:?}; set dataset.format"
            ))),
        }
    }
}

/// Concept keys accept either a bare class id or a `class:attr1;attr2`
/// string.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConceptKeyConfig {
    Class(u32),
    Key(String),
}

impl ConceptKeyConfig {
    pub fn to_key(&self) -> Result<ConceptKey> {
        match self {
            ConceptKeyConfig::Class(c) => Ok(ConceptKey::of_class(*c)),
            ConceptKeyConfig::Key(s) => s.parse().map_err(|e| err(format!("{e}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub known: Vec<ConceptKeyConfig>,
    pub unknown: Vec<ConceptKeyConfig>,
    pub rho: f64,
    pub labeled_per_known: usize,
    pub per_known: usize,
    pub per_unknown: usize,
}

impl SplitConfig {
    pub fn to_spec(&self, seed: u64) -> Result<ImbalanceSpec> {
        let known: BTreeSet<ConceptKey> = self
            .known
            .iter()
            .map(ConceptKeyConfig::to_key)
            .collect::<Result<_>>()?;
        let unknown: BTreeSet<ConceptKey> = self
            .unknown
            .iter()
            .map(ConceptKeyConfig::to_key)
            .collect::<Result<_>>()?;
        let spec = ImbalanceSpec {
            known_concepts: known,
            unknown_concepts: unknown,
            rho: self.rho,
            labeled_per_known: self.labeled_per_known,
            per_known_count: self.per_known,
            per_unknown_count: self.per_unknown,
            seed: derive_seed(seed, "split", 0),
        };
        spec.validate().map_err(|e| err(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    /// `"auto"`, `"off"`, or a fixed partition count.
    #[serde(default = "default_partition_mode")]
    pub mode: toml::Value,
    #[serde(default = "default_column_threshold")]
    pub column_threshold: usize,
    /// `"re_greedy"` or `"quota"`.
    #[serde(default)]
    pub merge: Option<String>,
}

fn default_partition_mode() -> toml::Value {
    toml::Value::String("auto".into())
}

fn default_column_threshold() -> usize {
    20_000
}

impl PartitionConfig {
    fn to_settings(&self) -> Result<PartitionSettings> {
        let mode = match &self.mode {
            toml::Value::String(s) if s == "auto" => PartitionMode::Auto,
            toml::Value::String(s) if s == "off" => PartitionMode::Off,
            toml::Value::Integer(n) if *n >= 1 => PartitionMode::Fixed(*n as usize),
            other => return Err(err(format!("bad partition mode {other:?}"))),
        };
        let merge = match self.merge.as_deref() {
            None | Some("re_greedy") => MergePolicy::ReGreedy,
            Some("quota") => MergePolicy::Quota,
            Some(other) => return Err(err(format!("bad merge policy {other:?}"))),
        };
        Ok(PartitionSettings {
            mode,
            column_threshold: self.column_threshold,
            merge,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub name: String,
    /// `scg_then_smi`, `scg_only`, `scg_then_scmi` or `baseline:<name>`.
    pub strategy: String,
    #[serde(default = "default_family")]
    pub family: String,
    #[serde(default = "one")]
    pub eta: f64,
    #[serde(default = "one")]
    pub nu: f64,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "default_epsilon_reg")]
    pub epsilon_reg: f64,
    pub budget: usize,
    pub rounds: usize,
    /// `naive`, `lazy` or `stochastic`.
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "default_stochastic_epsilon")]
    pub stochastic_epsilon: f64,
    /// `clamp` or `shift`.
    #[serde(default = "default_rectify")]
    pub rectify: String,
    #[serde(default)]
    pub literal_phase_switch: bool,
    #[serde(default)]
    pub partition: Option<PartitionConfig>,
    /// External embedding provider command, argv style.
    #[serde(default)]
    pub embedding_provider: Option<Vec<String>>,
    /// External probability provider command, argv style.
    #[serde(default)]
    pub probability_provider: Option<Vec<String>>,
    /// Explicit seed; derived from the global seed when omitted.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_family() -> String {
    "fl".into()
}

fn one() -> f64 {
    1.0
}

fn default_epsilon_reg() -> f64 {
    1e-4
}

fn default_mode() -> String {
    "lazy".into()
}

fn default_stochastic_epsilon() -> f64 {
    0.01
}

fn default_rectify() -> String {
    "clamp".into()
}

impl StrategyConfig {
    pub fn to_spec(&self, global_seed: u64, index: usize, has_probs: bool) -> Result<StrategySpec> {
        let strategy = parse_strategy(&self.strategy)?;
        let family = match self.family.as_str() {
            "fl" => FunctionFamily::Fl,
            "gc" => FunctionFamily::Gc,
            "logdet" => FunctionFamily::LogDet,
            other => return Err(err(format!("{}: unknown family {other:?}", self.name))),
        };
        let greedy_mode = match self.mode.as_str() {
            "naive" => GreedyMode::Naive,
            "lazy" => GreedyMode::Lazy,
            "stochastic" => GreedyMode::Stochastic,
            other => return Err(err(format!("{}: unknown greedy mode {other:?}", self.name))),
        };
        let rectify = match self.rectify.as_str() {
            "clamp" => RectifyPolicy::Clamp,
            "shift" => RectifyPolicy::Shift,
            other => {
                return Err(err(format!(
                    "{}: unknown rectify policy {other:?}",
                    self.name
                )))
            }
        };
        let partition = match &self.partition {
            Some(p) => p.to_settings()?,
            None => PartitionSettings::default(),
        };
        let embedding_provider = match &self.embedding_provider {
            Some(cmd) if cmd.is_empty() => {
                return Err(err(format!("{}: empty embedding provider", self.name)))
            }
            Some(cmd) => EmbeddingProvider::External {
                command: cmd.clone(),
            },
            None => EmbeddingProvider::Static,
        };
        let probability_provider = match &self.probability_provider {
            Some(cmd) if cmd.is_empty() => {
                return Err(err(format!("{}: empty probability provider", self.name)))
            }
            Some(cmd) => ProbabilityProvider::External {
                command: cmd.clone(),
            },
            None => {
                let needs = matches!(&strategy, Strategy::Baseline(k) if k.needs_probabilities());
                if needs && has_probs {
                    ProbabilityProvider::Static
                } else {
                    ProbabilityProvider::None
                }
            }
        };
        let mut spec = StrategySpec::new(self.name.clone(), strategy, family);
        spec.eta = self.eta;
        spec.nu = self.nu;
        spec.lambda = self.lambda;
        spec.epsilon_reg = self.epsilon_reg;
        spec.budget = self.budget;
        spec.rounds = self.rounds;
        spec.greedy_mode = greedy_mode;
        spec.stochastic_epsilon = self.stochastic_epsilon;
        spec.rectify = rectify;
        spec.partition = partition;
        spec.literal_phase_switch = self.literal_phase_switch;
        spec.embedding_provider = embedding_provider;
        spec.probability_provider = probability_provider;
        spec.seed = self
            .seed
            .unwrap_or_else(|| derive_seed(global_seed, "strategy", index as u64));
        spec.validate().map_err(|e| err(e.to_string()))?;
        Ok(spec)
    }
}

fn parse_strategy(s: &str) -> Result<Strategy> {
    match s {
        "scg_then_smi" => Ok(Strategy::ScgThenSmi),
        "scg_only" => Ok(Strategy::ScgOnly),
        "scg_then_scmi" => Ok(Strategy::ScgThenScmi),
        other => match other.strip_prefix("baseline:") {
            Some("entropy") => Ok(Strategy::Baseline(BaselineKind::Entropy)),
            Some("margin") => Ok(Strategy::Baseline(BaselineKind::Margin)),
            Some("least_confidence") => Ok(Strategy::Baseline(BaselineKind::LeastConfidence)),
            Some("badge") => Ok(Strategy::Baseline(BaselineKind::Badge)),
            Some("random") => Ok(Strategy::Baseline(BaselineKind::Random)),
            _ => Err(err(format!("unknown strategy {s:?}"))),
        },
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    /// Name of the strategy the grid varies.
    pub strategy: String,
    pub eta: Vec<f64>,
    pub nu: Vec<f64>,
    /// Round index used for the summary column.
    #[serde(default = "default_summary_round")]
    pub summary_round: usize,
}

fn default_summary_round() -> usize {
    3
}

impl ExperimentConfig {
    /// Parses a TOML (default) or JSON (by extension) config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err(format!("{}: {e}", path.display())))?;
        let config: ExperimentConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)
                .map_err(|e| err(format!("{}: {e}", path.display())))?,
            _ => toml::from_str(&text).map_err(|e| err(format!("{}: {e}", path.display())))?,
        };
        Ok(config)
    }

    /// Checks referenced paths and strategy names before any compute starts.
    pub fn validate(&self, base_dir: &Path) -> Result<()> {
        for (what, path) in [
            ("dataset.embeddings", Some(&self.dataset.embeddings)),
            ("dataset.labels", Some(&self.dataset.labels)),
            ("dataset.probabilities", self.dataset.probabilities.as_ref()),
            (
                "dataset.detection_manifest",
                self.dataset.detection_manifest.as_ref(),
            ),
        ] {
            if let Some(path) = path {
                let resolved = self.resolve(base_dir, path);
                if !resolved.exists() {
                    return Err(err(format!("{what}: {} does not exist", resolved.display())));
                }
            }
        }
        self.dataset.embedding_format()?;
        if self.strategies.is_empty() {
            return Err(err("no strategies configured"));
        }
        let mut names = BTreeSet::new();
        for (k, s) in self.strategies.iter().enumerate() {
            if !names.insert(&s.name) {
                return Err(err(format!("duplicate strategy name {:?}", s.name)));
            }
            let needs_probs = matches!(
                parse_strategy(&s.strategy)?,
                Strategy::Baseline(kind) if kind.needs_probabilities()
            );
            if needs_probs
                && self.dataset.probabilities.is_none()
                && s.probability_provider.is_none()
            {
                return Err(err(format!(
                    "strategy {:?} needs dataset.probabilities or a probability provider",
                    s.name
                )));
            }
            s.to_spec(self.seed, k, self.dataset.probabilities.is_some())?;
        }
        self.split.to_spec(self.seed)?;
        if let Some(ab) = &self.ablation {
            if ab.eta.is_empty() || ab.nu.is_empty() {
                return Err(err("ablation grids must be nonempty"));
            }
            if ab.summary_round == 0 {
                return Err(err("ablation summary_round must be >= 1"));
            }
            if !self.strategies.iter().any(|s| s.name == ab.strategy) {
                return Err(err(format!(
                    "ablation references unknown strategy {:?}",
                    ab.strategy
                )));
            }
        }
        Ok(())
    }

    /// Resolves a config-relative path.
    pub fn resolve(&self, base_dir: &Path, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            base_dir.join(path)
        }
    }
}

/// A fully-commented default configuration, printed by `--print-defaults`.
pub fn default_config_text() -> String {
    r#"# global seed; per-strategy seeds derive from it unless set explicitly
seed = 0
# where reports are written (override with --out)
output_dir = "out"

[dataset]
embeddings = "data/embeddings.raw"   # .raw (raw-f32) or .csv
labels = "data/labels.csv"           # id,class_id,attr1;attr2;...
# probabilities = "data/probabilities.csv"  # id,p0,...,p{C-1}; needed by uncertainty baselines
# detection_manifest = "data/manifest.csv"  # image_id,path,kind,classes
normalize = true                      # unit-normalize rows after loading
# format = "raw-f32"                  # override extension-based detection

[split]
known = [0, 1, 2, 3, 4, 5, 6]        # class ids, or "class:attr" strings for slices
unknown = [7, 8, 9]
rho = 20.0                            # unlabeled imbalance: per_known = rho * per_unknown
labeled_per_known = 1000
per_known = 1000
per_unknown = 50

[[strategy]]
name = "flcg_mi"
strategy = "scg_then_smi"            # scg_then_smi | scg_only | scg_then_scmi | baseline:<name>
family = "fl"                        # fl | gc | logdet
eta = 1.0                            # query-relevance intensity
nu = 1.5                             # conditioning intensity
lambda = 1.0                         # graph-cut redundancy weight
epsilon_reg = 0.0001                 # log-det diagonal regularizer
budget = 50
rounds = 10
mode = "lazy"                        # naive | lazy | stochastic
stochastic_epsilon = 0.01
rectify = "clamp"                    # clamp | shift
literal_phase_switch = false
# partition = { mode = "auto", column_threshold = 20000, merge = "re_greedy" }
# embedding_provider = ["./retrain.sh"]     # labeled ids on stdin, raw-f32 path as last arg
# probability_provider = ["./predict.sh"]   # labeled ids on stdin, CSV path as last arg
# seed = 7

[[strategy]]
name = "random"
strategy = "baseline:random"
budget = 50
rounds = 10

# [ablation]
# strategy = "flcg_mi"
# eta = [0.5, 1.0, 2.0]
# nu = [1.0, 1.5, 1.7]
# summary_round = 3
"#
    .to_string()
}
