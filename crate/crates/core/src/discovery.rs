//! The round-based discovery loop.
//!
//! An experiment starts from a labeled pool `L` of known concepts and an
//! unlabeled pool `U`. The conditioning set `P` starts as `L`, the query set
//! `Q` empty, and the concept coverage `K` as the known concepts. Each round:
//!
//! 1. while unknown instances may still exist, maximize a conditional-gain
//!    function built over `S^P` (and the ground kernel) to select a batch
//!    dissimilar to everything known; otherwise maximize a
//!    mutual-information function over `S^Q` targeting the unknown exemplars
//!    found so far (or the conditional-mutual-information combination);
//! 2. label the batch through the oracle, move it from `U` to `L`, route
//!    known-concept picks into `P` and unknown-concept picks into `Q`;
//! 3. if the batch surfaced no concept outside `K`, switch permanently from
//!    conditioning to targeting; fold the batch's concepts into `K`.
//!
//! Classification of a pick as known/unknown always compares against the
//! *initial* known-concept set, matching the `P`/`Q` semantics rather than
//! the evolving coverage.
//!
//! Embeddings are static by default; an external provider executable can
//! refresh them each round (the seam where per-round model retraining would
//! live). The provider receives the current labeled ids on stdin, one per
//! line, and the output path as its last argument; it must write a raw-f32
//! embedding file with one row per point in the experiment's id order and
//! exit 0.

use crate::baselines::{
    badge_select, entropy_select, least_confidence_select, load_probability_table, margin_select,
    random_select, ProbabilityTable,
};
use crate::dataset::{ConceptKey, DatasetSplit, EmbeddingFormat, EmbeddingStore};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::ids::PointId;
use crate::kernels::{cosine_kernel, RectifyPolicy};
use crate::maximizer::{
    greedy, partitioned_greedy, GreedyMode, GreedyOptions, MergePolicy, SelectionResult,
};
use crate::submodular::{AcquisitionFunction, FunctionFamily, FunctionKind, KernelSet, Params};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::Instant;

/// Ground sets above this size make the four-term graph-cut form
/// impractical; the build is refused rather than left to crawl.
const GC_CMI_MAX_GROUND: usize = 4000;

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Conditioning rounds until no new concepts appear, then targeting.
    ScgThenSmi,
    /// Conditioning every round.
    ScgOnly,
    /// Conditioning, then the joint conditional-mutual-information form.
    ScgThenScmi,
    Baseline(BaselineKind),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Entropy,
    Margin,
    LeastConfidence,
    Badge,
    Random,
}

impl BaselineKind {
    pub fn needs_probabilities(self) -> bool {
        !matches!(self, BaselineKind::Random)
    }
}

/// Which acquisition ran in a round.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Conditioning,
    Targeting,
    ConditioningTargeting,
    Baseline,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Phase::Conditioning => "conditioning",
            Phase::Targeting => "targeting",
            Phase::ConditioningTargeting => "conditioning_targeting",
            Phase::Baseline => "baseline",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conditioning" => Ok(Phase::Conditioning),
            "targeting" => Ok(Phase::Targeting),
            "conditioning_targeting" => Ok(Phase::ConditioningTargeting),
            "baseline" => Ok(Phase::Baseline),
            other => Err(Error::Format(format!("unknown phase {other:?}"))),
        }
    }
}

/// When the ground kernel is partitioned.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    /// Partition once the candidate pool exceeds `column_threshold`.
    Auto,
    /// Never partition.
    Off,
    /// Always use this many partitions.
    Fixed(usize),
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct PartitionSettings {
    pub mode: PartitionMode,
    /// Largest candidate pool for which the dense candidates x candidates
    /// kernel is materialized whole.
    pub column_threshold: usize,
    pub merge: MergePolicy,
}

impl Default for PartitionSettings {
    fn default() -> Self {
        Self {
            mode: PartitionMode::Auto,
            column_threshold: 20_000,
            merge: MergePolicy::ReGreedy,
        }
    }
}

/// Where per-round embeddings come from.
#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingProvider {
    #[default]
    Static,
    External {
        command: Vec<String>,
    },
}

/// Where per-round probability tables for the uncertainty baselines come
/// from.
#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilityProvider {
    #[default]
    None,
    /// One static table reused every round.
    Static,
    External {
        command: Vec<String>,
    },
}

/// Complete recipe for one strategy run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StrategySpec {
    pub name: String,
    pub strategy: Strategy,
    pub family: FunctionFamily,
    pub eta: f64,
    pub nu: f64,
    pub lambda: f64,
    pub epsilon_reg: f64,
    pub budget: usize,
    pub rounds: usize,
    pub greedy_mode: GreedyMode,
    pub stochastic_epsilon: f64,
    pub rectify: RectifyPolicy,
    pub partition: PartitionSettings,
    /// Restore the literal coverage test (`selected ∩ K == ∅`) instead of
    /// the default "no concepts outside K" switch condition.
    pub literal_phase_switch: bool,
    pub embedding_provider: EmbeddingProvider,
    pub probability_provider: ProbabilityProvider,
    pub seed: u64,
}

impl StrategySpec {
    pub fn new(name: impl Into<String>, strategy: Strategy, family: FunctionFamily) -> Self {
        Self {
            name: name.into(),
            strategy,
            family,
            eta: 1.0,
            nu: 1.0,
            lambda: 1.0,
            epsilon_reg: 1e-4,
            budget: 50,
            rounds: 10,
            greedy_mode: GreedyMode::Lazy,
            stochastic_epsilon: 0.01,
            rectify: RectifyPolicy::Clamp,
            partition: PartitionSettings::default(),
            literal_phase_switch: false,
            embedding_provider: EmbeddingProvider::Static,
            probability_provider: ProbabilityProvider::None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Argument(format!(
                "strategy {}: budget must be >= 1",
                self.name
            )));
        }
        if self.rounds == 0 {
            return Err(Error::Argument(format!(
                "strategy {}: rounds must be >= 1",
                self.name
            )));
        }
        for (what, v) in [
            ("eta", self.eta),
            ("nu", self.nu),
            ("lambda", self.lambda),
            ("epsilon_reg", self.epsilon_reg),
        ] {
            if !v.is_finite() {
                return Err(Error::Argument(format!(
                    "strategy {}: {what} must be finite",
                    self.name
                )));
            }
        }
        if let Strategy::Baseline(kind) = &self.strategy {
            if kind.needs_probabilities() && self.probability_provider == ProbabilityProvider::None
            {
                return Err(Error::Argument(format!(
                    "strategy {}: {kind:?} needs a probability table",
                    self.name
                )));
            }
        }
        if let PartitionMode::Fixed(0) = self.partition.mode {
            return Err(Error::Argument(format!(
                "strategy {}: fixed partition count must be >= 1",
                self.name
            )));
        }
        Ok(())
    }

    fn params(&self) -> Params {
        Params {
            eta: self.eta,
            nu: self.nu,
            lambda: self.lambda,
            epsilon_reg: self.epsilon_reg,
        }
    }
}

/// What happened in one selection round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: usize,
    pub phase: Phase,
    pub selected: Vec<PointId>,
    pub per_concept: BTreeMap<ConceptKey, usize>,
    /// Unknown-concept points selected so far, including this round.
    pub cumulative_unknown: usize,
    pub objective: f64,
    pub stopped_early: bool,
    pub wall_secs: f64,
    pub warnings: Vec<String>,
}

/// The evolving sets of a discovery run.
#[derive(Clone, Debug)]
pub struct DiscoveryState {
    labeled: BTreeSet<PointId>,
    unlabeled: BTreeSet<PointId>,
    conditioning: BTreeSet<PointId>,
    query: BTreeSet<PointId>,
    coverage: BTreeSet<ConceptKey>,
    unknown_flag: bool,
    round: usize,
    history: Vec<RoundRecord>,
}

impl DiscoveryState {
    fn new(split: &DatasetSplit) -> Self {
        Self {
            labeled: split.labeled().clone(),
            unlabeled: split.unlabeled().clone(),
            conditioning: split.labeled().clone(),
            query: BTreeSet::new(),
            coverage: split.known_concepts().clone(),
            unknown_flag: true,
            round: 0,
            history: Vec::new(),
        }
    }

    pub fn labeled(&self) -> &BTreeSet<PointId> {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &BTreeSet<PointId> {
        &self.unlabeled
    }

    pub fn conditioning(&self) -> &BTreeSet<PointId> {
        &self.conditioning
    }

    pub fn query(&self) -> &BTreeSet<PointId> {
        &self.query
    }

    pub fn coverage(&self) -> &BTreeSet<ConceptKey> {
        &self.coverage
    }

    pub fn unknown_flag(&self) -> bool {
        self.unknown_flag
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn history(&self) -> &[RoundRecord] {
        &self.history
    }

    pub fn cumulative_unknown(&self) -> usize {
        self.history
            .last()
            .map(|r| r.cumulative_unknown)
            .unwrap_or(0)
    }
}

/// Default phase-switch rule: conclude conditioning once the newly selected
/// concepts contain nothing outside the coverage seen so far.
pub fn phase_switch(
    prev_coverage: &BTreeSet<ConceptKey>,
    selected_concepts: &BTreeSet<ConceptKey>,
) -> bool {
    selected_concepts.is_subset(prev_coverage)
}

/// Literal-condition variant: switch when the selected concepts are entirely
/// disjoint from the coverage.
pub fn phase_switch_literal(
    prev_coverage: &BTreeSet<ConceptKey>,
    selected_concepts: &BTreeSet<ConceptKey>,
) -> bool {
    selected_concepts.is_disjoint(prev_coverage)
}

/// One strategy run over one split. Rounds are strictly sequential; run
/// multiple experiments concurrently for parallelism.
pub struct Experiment<'a> {
    spec: StrategySpec,
    split: &'a DatasetSplit,
    store: EmbeddingStore,
    probabilities: Option<ProbabilityTable>,
    state: DiscoveryState,
    work_dir: Option<PathBuf>,
}

impl<'a> Experiment<'a> {
    /// Validates the spec against the split and embeddings.
    ///
    /// `probabilities` backs `ProbabilityProvider::Static`; `work_dir` is
    /// where external providers write their per-round files (the system temp
    /// directory when unset).
    pub fn new(
        spec: StrategySpec,
        split: &'a DatasetSplit,
        store: EmbeddingStore,
        probabilities: Option<ProbabilityTable>,
        work_dir: Option<PathBuf>,
    ) -> Result<Self> {
        spec.validate()?;
        if !store.is_normalized() {
            return Err(Error::Data(
                "experiment embeddings must be normalized".into(),
            ));
        }
        for id in split.labeled().iter().chain(split.unlabeled()) {
            if !store.contains(*id) {
                return Err(Error::UnknownId(*id));
            }
        }
        if spec.probability_provider == ProbabilityProvider::Static && probabilities.is_none() {
            return Err(Error::Argument(format!(
                "strategy {}: static probability provider without a table",
                spec.name
            )));
        }
        let state = DiscoveryState::new(split);
        Ok(Self {
            spec,
            split,
            store,
            probabilities,
            state,
            work_dir,
        })
    }

    pub fn state(&self) -> &DiscoveryState {
        &self.state
    }

    pub fn spec(&self) -> &StrategySpec {
        &self.spec
    }

    /// Runs every remaining round and returns the full history.
    pub fn run(&mut self) -> Result<Vec<RoundRecord>> {
        while self.step()?.is_some() {}
        Ok(self.state.history.clone())
    }

    /// Runs one selection round. Returns `None` once the configured rounds
    /// are done or the unlabeled pool is exhausted.
    pub fn step(&mut self) -> Result<Option<RoundRecord>> {
        if self.state.round >= self.spec.rounds || self.state.unlabeled.is_empty() {
            return Ok(None);
        }
        let started = Instant::now();
        let round = self.state.round + 1;
        let mut warnings = Vec::new();

        self.refresh_embeddings(round)?;
        let round_probs = self.round_probabilities(round)?;

        let candidates: Vec<PointId> = self.state.unlabeled.iter().copied().collect();
        let round_seed = derive_seed(self.spec.seed, "round", round as u64);

        // phase decision, with the empty-query fallback: targeting with no
        // exemplars degenerates, so conditioning continues under a warning
        let phase = match &self.spec.strategy {
            Strategy::Baseline(_) => Phase::Baseline,
            Strategy::ScgOnly => Phase::Conditioning,
            Strategy::ScgThenSmi | Strategy::ScgThenScmi => {
                if self.state.unknown_flag {
                    Phase::Conditioning
                } else if self.state.query.is_empty() {
                    warnings.push(
                        "targeting phase reached with an empty query set; continuing \
                         conditioning"
                            .into(),
                    );
                    Phase::Conditioning
                } else if self.spec.strategy == Strategy::ScgThenSmi {
                    Phase::Targeting
                } else {
                    Phase::ConditioningTargeting
                }
            }
        };

        let selection = match (&self.spec.strategy, phase) {
            (Strategy::Baseline(kind), _) => {
                self.select_baseline(*kind, &candidates, round_probs.as_ref(), round_seed)?
            }
            (_, Phase::Conditioning) => {
                self.select_submodular(self.spec.family.cg(), &candidates, round_seed)?
            }
            (_, Phase::Targeting) => {
                self.select_submodular(self.spec.family.mi(), &candidates, round_seed)?
            }
            (_, Phase::ConditioningTargeting) => {
                self.select_submodular(self.spec.family.cmi(), &candidates, round_seed)?
            }
            (_, Phase::Baseline) => unreachable!(),
        };

        // oracle labeling and set bookkeeping
        let mut per_concept: BTreeMap<ConceptKey, usize> = BTreeMap::new();
        let mut selected_concepts = BTreeSet::new();
        let mut new_unknown = 0usize;
        for id in &selection.chosen {
            let label = self.split.oracle_label(*id)?;
            let key = label.key();
            *per_concept.entry(key.clone()).or_insert(0) += 1;
            selected_concepts.insert(key.clone());
            self.state.unlabeled.remove(id);
            self.state.labeled.insert(*id);
            if self.split.known_concepts().contains(&key) {
                self.state.conditioning.insert(*id);
            } else {
                self.state.query.insert(*id);
                new_unknown += 1;
            }
        }

        // phase switch precedes the coverage update
        if self.state.unknown_flag {
            let switch = if self.spec.literal_phase_switch {
                phase_switch_literal(&self.state.coverage, &selected_concepts)
            } else {
                phase_switch(&self.state.coverage, &selected_concepts)
            };
            if switch {
                self.state.unknown_flag = false;
            }
        }
        self.state.coverage.extend(selected_concepts);

        let record = RoundRecord {
            round,
            phase,
            per_concept,
            cumulative_unknown: self.state.cumulative_unknown() + new_unknown,
            objective: selection.objective,
            stopped_early: selection.stopped_early,
            selected: selection.chosen,
            wall_secs: started.elapsed().as_secs_f64(),
            warnings,
        };
        self.state.history.push(record.clone());
        self.state.round = round;
        Ok(Some(record))
    }

    fn greedy_options(&self, seed: u64) -> GreedyOptions {
        GreedyOptions {
            mode: self.spec.greedy_mode,
            seed,
            epsilon: self.spec.stochastic_epsilon,
        }
    }

    fn select_baseline(
        &self,
        kind: BaselineKind,
        candidates: &[PointId],
        probs: Option<&ProbabilityTable>,
        seed: u64,
    ) -> Result<SelectionResult> {
        let b = self.spec.budget;
        match kind {
            BaselineKind::Random => Ok(random_select(candidates, b, seed)),
            BaselineKind::Entropy => entropy_select(need_probs(probs)?, candidates, b),
            BaselineKind::Margin => margin_select(need_probs(probs)?, candidates, b),
            BaselineKind::LeastConfidence => {
                least_confidence_select(need_probs(probs)?, candidates, b)
            }
            BaselineKind::Badge => {
                badge_select(&self.store, need_probs(probs)?, candidates, b, seed)
            }
        }
    }

    /// Builds the kernels a kind needs over the current sets and maximizes.
    fn select_submodular(
        &self,
        kind: FunctionKind,
        candidates: &[PointId],
        seed: u64,
    ) -> Result<SelectionResult> {
        let opts = self.greedy_options(seed);
        let parts = self.partition_count(kind, candidates.len());
        if parts > 1 {
            let build = |ground_ids: &[PointId]| self.build_function(kind, ground_ids);
            let out = partitioned_greedy(
                build,
                candidates,
                self.spec.budget,
                parts,
                self.spec.partition.merge,
                &opts,
            )?;
            return Ok(out.selection);
        }
        let f = self.build_function(kind, candidates)?;
        greedy(&f, candidates, self.spec.budget, &opts)
    }

    fn partition_count(&self, kind: FunctionKind, n_candidates: usize) -> usize {
        if !kind.needs_ground() {
            return 1;
        }
        match self.spec.partition.mode {
            PartitionMode::Off => 1,
            PartitionMode::Fixed(p) => p.min(n_candidates).max(1),
            PartitionMode::Auto => {
                let t = self.spec.partition.column_threshold.max(1);
                n_candidates.div_ceil(t)
            }
        }
    }

    /// Instantiates `kind` with candidate domain (and conditional-gain
    /// ground set) `ground_ids`.
    fn build_function(
        &self,
        kind: FunctionKind,
        ground_ids: &[PointId],
    ) -> Result<AcquisitionFunction> {
        let p_ids: Vec<PointId> = self.state.conditioning.iter().copied().collect();
        let q_ids: Vec<PointId> = self.state.query.iter().copied().collect();
        let rectify = self.spec.rectify;
        let mut ks = KernelSet::default();

        if kind == FunctionKind::GcCmi {
            // the four-term form needs one symmetric kernel over U ∪ Q ∪ P
            let mut all: Vec<PointId> = ground_ids.to_vec();
            all.extend(&q_ids);
            all.extend(&p_ids);
            all.sort_unstable();
            all.dedup();
            if all.len() > GC_CMI_MAX_GROUND {
                return Err(Error::Argument(format!(
                    "gc_cmi is evaluated from its four-term definition and is limited to \
                     {GC_CMI_MAX_GROUND} combined points; this instance has {}",
                    all.len()
                )));
            }
            let full = Arc::new(cosine_kernel(&self.store, &all, &self.store, &all, rectify)?);
            ks.ground = Some(full.clone());
            ks.query_cross = Some(Arc::new(full.submatrix(&q_ids, &all)?));
            ks.cond_cross = Some(Arc::new(full.submatrix(&p_ids, &all)?));
            return AcquisitionFunction::build(kind, ks, self.spec.params());
        }

        if kind.needs_ground() {
            ks.ground = Some(Arc::new(cosine_kernel(
                &self.store,
                ground_ids,
                &self.store,
                ground_ids,
                rectify,
            )?));
        }
        let needs_query = kind.is_mi() || kind.is_cmi();
        let needs_cond = kind.is_cg() || kind.is_cmi();
        if needs_query {
            ks.query_cross = Some(Arc::new(cosine_kernel(
                &self.store,
                &q_ids,
                &self.store,
                ground_ids,
                rectify,
            )?));
        }
        if needs_cond {
            ks.cond_cross = Some(Arc::new(cosine_kernel(
                &self.store,
                &p_ids,
                &self.store,
                ground_ids,
                rectify,
            )?));
        }
        if kind.family() == FunctionFamily::LogDet {
            if needs_query {
                ks.query_self = Some(Arc::new(cosine_kernel(
                    &self.store,
                    &q_ids,
                    &self.store,
                    &q_ids,
                    rectify,
                )?));
            }
            if needs_cond {
                ks.cond_self = Some(Arc::new(cosine_kernel(
                    &self.store,
                    &p_ids,
                    &self.store,
                    &p_ids,
                    rectify,
                )?));
            }
            if kind.is_cmi() {
                ks.cond_query = Some(Arc::new(cosine_kernel(
                    &self.store,
                    &p_ids,
                    &self.store,
                    &q_ids,
                    rectify,
                )?));
            }
        }
        AcquisitionFunction::build(kind, ks, self.spec.params())
    }

    fn provider_output_path(&self, round: usize, ext: &str) -> PathBuf {
        let dir = self.work_dir.clone().unwrap_or_else(std::env::temp_dir);
        dir.join(format!(
            "provider-{}-{:04}-{}.{ext}",
            self.spec.name,
            round,
            std::process::id()
        ))
    }

    fn run_provider(&self, command: &[String], out_path: &PathBuf) -> Result<()> {
        if command.is_empty() {
            return Err(Error::Argument("provider command is empty".into()));
        }
        let mut child = Command::new(&command[0])
            .args(&command[1..])
            .arg(out_path)
            .stdin(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Provider(format!("{}: spawn failed: {e}", command[0])))?;
        {
            let stdin = child.stdin.as_mut().expect("piped stdin");
            let mut buf = String::new();
            for id in &self.state.labeled {
                buf.push_str(&id.to_string());
                buf.push('\n');
            }
            stdin
                .write_all(buf.as_bytes())
                .map_err(|e| Error::Provider(format!("{}: writing stdin: {e}", command[0])))?;
        }
        let out = child
            .wait_with_output()
            .map_err(|e| Error::Provider(format!("{}: wait failed: {e}", command[0])))?;
        if !out.status.success() {
            return Err(Error::Provider(format!(
                "{} exited with {}: {}",
                command[0],
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        Ok(())
    }

    fn refresh_embeddings(&mut self, round: usize) -> Result<()> {
        let EmbeddingProvider::External { command } = self.spec.embedding_provider.clone() else {
            return Ok(());
        };
        let out_path = self.provider_output_path(round, "raw");
        self.run_provider(&command, &out_path)?;
        let fresh = crate::dataset::load_embeddings(&out_path, EmbeddingFormat::RawF32)?;
        let _ = std::fs::remove_file(&out_path);
        if fresh.len() != self.store.len() {
            return Err(Error::Provider(format!(
                "provider wrote {} rows, experiment has {} points",
                fresh.len(),
                self.store.len()
            )));
        }
        // provider rows follow the experiment's id order
        let normalized = fresh.is_normalized();
        let fresh = self.store.with_data(fresh.data().to_owned(), normalized)?;
        self.store = if fresh.is_normalized() {
            fresh
        } else {
            fresh.normalize()?
        };
        Ok(())
    }

    fn round_probabilities(&mut self, round: usize) -> Result<Option<ProbabilityTable>> {
        match self.spec.probability_provider.clone() {
            ProbabilityProvider::None => Ok(None),
            ProbabilityProvider::Static => Ok(self.probabilities.clone()),
            ProbabilityProvider::External { command } => {
                let out_path = self.provider_output_path(round, "csv");
                self.run_provider(&command, &out_path)?;
                let table = load_probability_table(&out_path)?;
                let _ = std::fs::remove_file(&out_path);
                Ok(Some(table))
            }
        }
    }
}

fn need_probs<'t>(probs: Option<&'t ProbabilityTable>) -> Result<&'t ProbabilityTable> {
    probs.ok_or_else(|| Error::Argument("baseline needs a probability table".into()))
}

/// Convenience wrapper: build an [`Experiment`] and run it to completion.
pub fn run_experiment(
    spec: StrategySpec,
    split: &DatasetSplit,
    store: EmbeddingStore,
    probabilities: Option<ProbabilityTable>,
    work_dir: Option<PathBuf>,
) -> Result<Vec<RoundRecord>> {
    Experiment::new(spec, split, store, probabilities, work_dir)?.run()
}

/// One cell of an (eta, nu) ablation grid.
#[derive(Clone, Debug)]
pub struct AblationCell {
    pub eta: f64,
    pub nu: f64,
    /// The base spec with the cell's (eta, nu) applied and a suffixed name.
    pub spec: StrategySpec,
    pub records: Vec<RoundRecord>,
}

/// Runs `base` once per (eta, nu) grid cell. Cell names append the varied
/// values to the base strategy name.
pub fn run_ablation(
    base: &StrategySpec,
    eta_grid: &[f64],
    nu_grid: &[f64],
    split: &DatasetSplit,
    store: &EmbeddingStore,
    probabilities: Option<&ProbabilityTable>,
    work_dir: Option<PathBuf>,
) -> Result<Vec<AblationCell>> {
    if eta_grid.is_empty() || nu_grid.is_empty() {
        return Err(Error::Argument("ablation grids must be nonempty".into()));
    }
    let mut cells = Vec::with_capacity(eta_grid.len() * nu_grid.len());
    for &eta in eta_grid {
        for &nu in nu_grid {
            let mut spec = base.clone();
            spec.eta = eta;
            spec.nu = nu;
            spec.name = format!("{}-eta{eta}-nu{nu}", base.name);
            let records = run_experiment(
                spec.clone(),
                split,
                store.clone(),
                probabilities.cloned(),
                work_dir.clone(),
            )?;
            cells.push(AblationCell {
                eta,
                nu,
                spec,
                records,
            });
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_discovery_split, ImbalanceSpec};
    use crate::synthetic::{gaussian_clusters, ClusterSpec};

    fn key(c: u32) -> ConceptKey {
        ConceptKey::of_class(c)
    }

    /// Small planted-cluster world: 4 known concepts, 1 unknown.
    fn small_world(seed: u64) -> (EmbeddingStore, DatasetSplit) {
        let spec = ClusterSpec {
            clusters: 5,
            dim: 8,
            points_per_cluster: vec![40, 40, 40, 40, 12],
            noise: 0.06,
            max_center_cosine: 0.5,
            seed,
        };
        let (store, labels) = gaussian_clusters(&spec).unwrap();
        let split = build_discovery_split(
            &labels,
            &ImbalanceSpec {
                known_concepts: (0..4).map(key).collect(),
                unknown_concepts: [key(4)].into(),
                rho: 2.0,
                labeled_per_known: 20,
                per_known_count: 20,
                per_unknown_count: 10,
                seed,
            },
        )
        .unwrap();
        (store, split)
    }

    fn fl_spec(name: &str, strategy: Strategy) -> StrategySpec {
        let mut s = StrategySpec::new(name, strategy, FunctionFamily::Fl);
        s.budget = 10;
        s.rounds = 6;
        s.nu = 1.2;
        s
    }

    #[test]
    fn phase_switch_semantics() {
        let coverage: BTreeSet<ConceptKey> = [key(0), key(1)].into();
        // subset of coverage: switch under prose semantics
        assert!(phase_switch(&coverage, &[key(0)].into()));
        // one never-seen concept: no switch
        assert!(!phase_switch(&coverage, &[key(0), key(9)].into()));
        // empty selection: vacuous switch
        assert!(phase_switch(&coverage, &BTreeSet::new()));

        // literal variant: switch only when fully disjoint
        assert!(!phase_switch_literal(&coverage, &[key(0)].into()));
        assert!(!phase_switch_literal(&coverage, &[key(0), key(9)].into()));
        assert!(phase_switch_literal(&coverage, &[key(9)].into()));
        assert!(phase_switch_literal(&coverage, &BTreeSet::new()));
    }

    #[test]
    fn conditioning_then_targeting_discovers_planted_cluster() {
        let (store, split) = small_world(7);
        let total_unknown = split.unknown_pool_size();
        assert_eq!(total_unknown, 10);
        let records = run_experiment(
            fl_spec("flcg_mi", Strategy::ScgThenSmi),
            &split,
            store,
            None,
            None,
        )
        .unwrap();
        assert!(!records.is_empty());
        let last = records.last().unwrap();
        assert_eq!(last.cumulative_unknown, total_unknown);
        // phase never reverts: once targeting appears, conditioning may not
        let mut seen_targeting = false;
        for r in &records {
            match r.phase {
                Phase::Targeting | Phase::ConditioningTargeting => seen_targeting = true,
                Phase::Conditioning => {
                    assert!(!seen_targeting, "phase reverted at round {}", r.round)
                }
                Phase::Baseline => unreachable!(),
            }
        }
    }

    #[test]
    fn conservation_and_purity_invariants() {
        let (store, split) = small_world(11);
        let n_total = split.labeled().len() + split.unlabeled().len();
        let mut exp = Experiment::new(
            fl_spec("inv", Strategy::ScgThenSmi),
            &split,
            store,
            None,
            None,
        )
        .unwrap();
        let mut prev_cumulative = 0;
        while let Some(rec) = exp.step().unwrap() {
            let st = exp.state();
            assert_eq!(st.labeled().len() + st.unlabeled().len(), n_total);
            assert!(st.labeled().is_disjoint(st.unlabeled()));
            // query purity: only unknown concepts; conditioning: only known
            for id in st.query() {
                assert!(split.is_unknown_concept(*id).unwrap());
            }
            for id in st.conditioning() {
                assert!(!split.is_unknown_concept(*id).unwrap());
            }
            assert!(rec.cumulative_unknown >= prev_cumulative);
            prev_cumulative = rec.cumulative_unknown;
            // coverage only grows
            assert!(st.coverage().is_superset(split.known_concepts()));
        }
    }

    #[test]
    fn scg_only_never_switches_phase() {
        let (store, split) = small_world(13);
        let records = run_experiment(
            fl_spec("scg_only", Strategy::ScgOnly),
            &split,
            store,
            None,
            None,
        )
        .unwrap();
        assert!(records.iter().all(|r| r.phase == Phase::Conditioning));
    }

    #[test]
    fn scmi_strategy_switches_to_joint_phase() {
        let (store, split) = small_world(17);
        let records = run_experiment(
            fl_spec("scg_cmi", Strategy::ScgThenScmi),
            &split,
            store,
            None,
            None,
        )
        .unwrap();
        assert!(records
            .iter()
            .any(|r| r.phase == Phase::ConditioningTargeting));
        assert!(records.iter().all(|r| r.phase != Phase::Targeting));
    }

    #[test]
    fn random_baseline_runs_without_probabilities() {
        let (store, split) = small_world(19);
        let mut spec = fl_spec("random", Strategy::Baseline(BaselineKind::Random));
        spec.rounds = 3;
        let records = run_experiment(spec, &split, store, None, None).unwrap();
        assert_eq!(records.len(), 3);
        assert!(records.iter().all(|r| r.phase == Phase::Baseline));
        assert!(records.iter().all(|r| r.selected.len() == 10));
    }

    #[test]
    fn uncertainty_baseline_requires_probabilities() {
        let (store, split) = small_world(23);
        let spec = fl_spec("entropy", Strategy::Baseline(BaselineKind::Entropy));
        let err = Experiment::new(spec, &split, store, None, None).err().unwrap();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn pool_smaller_than_budget_ends_experiment() {
        let (store, split) = small_world(29);
        let mut spec = fl_spec("drain", Strategy::ScgThenSmi);
        spec.budget = 70;
        spec.rounds = 4;
        let records = run_experiment(spec, &split, store, None, None).unwrap();
        // |U| = 90: one full 70-point round, then the 20-point remainder
        assert_eq!(records.len(), 2);
        let selected: usize = records.iter().map(|r| r.selected.len()).sum();
        assert_eq!(selected, 90);
    }

    #[test]
    fn replay_is_deterministic() {
        let (store, split) = small_world(31);
        let a = run_experiment(
            fl_spec("det", Strategy::ScgThenSmi),
            &split,
            store.clone(),
            None,
            None,
        )
        .unwrap();
        let b = run_experiment(
            fl_spec("det", Strategy::ScgThenSmi),
            &split,
            store,
            None,
            None,
        )
        .unwrap();
        // identical apart from wall-clock times
        let strip = |records: Vec<RoundRecord>| {
            records
                .into_iter()
                .map(|mut r| {
                    r.wall_secs = 0.0;
                    r
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(a), strip(b));
    }

    #[test]
    fn per_concept_counts_sum_to_selection() {
        let (store, split) = small_world(37);
        let records = run_experiment(
            fl_spec("sumlaw", Strategy::ScgThenSmi),
            &split,
            store,
            None,
            None,
        )
        .unwrap();
        for r in &records {
            let total: usize = r.per_concept.values().sum();
            assert_eq!(total, r.selected.len());
        }
    }

    #[test]
    fn external_embedding_provider_refreshes_rows() {
        let (store, split) = small_world(41);
        let dir = tempfile::tempdir().unwrap();
        // provider copies a pre-staged raw file; the wc -l guard also proves
        // the stdin id-list contract holds
        let staged = dir.path().join("staged.raw");
        crate::dataset::save_embeddings_raw(&store, &staged).unwrap();
        let script = dir.path().join("provider.sh");
        std::fs::write(
            &script,
            format!(
                "#!/bin/sh\nids=$(wc -l)\n[ \"$ids\" -gt 0 ] || exit 3\ncp {} \"$1\"\n",
                staged.display()
            ),
        )
        .unwrap();
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();

        let mut spec = fl_spec("ext", Strategy::ScgThenSmi);
        spec.rounds = 2;
        spec.embedding_provider = EmbeddingProvider::External {
            command: vec![script.display().to_string()],
        };
        let records =
            run_experiment(spec, &split, store, None, Some(dir.path().to_path_buf())).unwrap();
        assert_eq!(records.len(), 2);
    }

    #[test]
    fn failing_provider_aborts_with_diagnostics() {
        let (store, split) = small_world(43);
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("bad.sh");
        std::fs::write(&script, "#!/bin/sh\necho model exploded >&2\nexit 7\n").unwrap();
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();
        let mut spec = fl_spec("bad", Strategy::ScgThenSmi);
        spec.embedding_provider = EmbeddingProvider::External {
            command: vec![script.display().to_string()],
        };
        let err = run_experiment(spec, &split, store, None, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("model exploded"), "{msg}");
    }
}
