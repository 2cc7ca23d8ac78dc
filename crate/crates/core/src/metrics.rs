//! Discovery reports: per-round and cumulative unknown-instance counts,
//! per-concept curves, round of full discovery, and lossless CSV/JSON
//! serialization.
//!
//! Accuracy-style columns appear in the schema as explicit "not computed"
//! placeholders (`null` in JSON, `NA` in CSV): filling them needs a trained
//! model, which is outside this tool.

use crate::dataset::{ConceptKey, DatasetSplit};
use crate::discovery::{Phase, RoundRecord, StrategySpec};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

pub const SCHEMA_VERSION: u32 = 1;

/// One round of a report: counts only, no raw id lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub phase: Phase,
    pub selected: usize,
    pub unknown_selected: usize,
    pub cumulative_unknown: usize,
    pub per_concept: BTreeMap<ConceptKey, usize>,
    pub objective: f64,
    pub wall_secs: f64,
    /// Not computed: accuracy evaluation needs a trained model.
    pub accuracy: Option<f64>,
}

/// Machine-readable outcome of one strategy run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryReport {
    pub schema_version: u32,
    pub strategy: String,
    pub seed: u64,
    /// Unknown-concept points available in the unlabeled pool at round 0.
    pub total_unknown_pool: usize,
    /// First 1-based round at which every unknown-pool point was selected.
    pub full_discovery_round: Option<usize>,
    pub rounds: Vec<RoundSummary>,
    pub cumulative_unknown_curve: Vec<usize>,
    /// Echo of the strategy configuration that produced the run.
    pub config: serde_json::Value,
}

/// Folds an experiment's round records into a report, re-deriving the
/// unknown counts from the oracle so any inconsistency in the records is
/// caught here.
pub fn accumulate(
    spec: &StrategySpec,
    records: &[RoundRecord],
    split: &DatasetSplit,
) -> Result<DiscoveryReport> {
    let total_unknown_pool = split.unknown_pool_size();
    let mut rounds = Vec::with_capacity(records.len());
    let mut curve = Vec::with_capacity(records.len());
    let mut cumulative = 0usize;
    let mut full_discovery_round = None;
    for rec in records {
        let mut unknown_selected = 0usize;
        for id in &rec.selected {
            if !split.labeled().contains(id) && !split.unlabeled().contains(id) {
                return Err(Error::Data(format!(
                    "round {}: selected id {id} is not part of the split",
                    rec.round
                )));
            }
            if split.is_unknown_concept(*id)? {
                unknown_selected += 1;
            }
        }
        let concept_total: usize = rec.per_concept.values().sum();
        if concept_total != rec.selected.len() {
            return Err(Error::Data(format!(
                "round {}: per-concept counts sum to {concept_total}, selected {}",
                rec.round,
                rec.selected.len()
            )));
        }
        cumulative += unknown_selected;
        if rec.cumulative_unknown != cumulative {
            return Err(Error::Data(format!(
                "round {}: recorded cumulative {} != recomputed {}",
                rec.round, rec.cumulative_unknown, cumulative
            )));
        }
        if full_discovery_round.is_none() && total_unknown_pool > 0 && cumulative == total_unknown_pool
        {
            full_discovery_round = Some(rec.round);
        }
        curve.push(cumulative);
        rounds.push(RoundSummary {
            round: rec.round,
            phase: rec.phase,
            selected: rec.selected.len(),
            unknown_selected,
            cumulative_unknown: cumulative,
            per_concept: rec.per_concept.clone(),
            objective: rec.objective,
            wall_secs: rec.wall_secs,
            accuracy: None,
        });
    }
    let config = serde_json::to_value(spec)
        .map_err(|e| Error::Data(format!("serializing config echo: {e}")))?;
    Ok(DiscoveryReport {
        schema_version: SCHEMA_VERSION,
        strategy: spec.name.clone(),
        seed: spec.seed,
        total_unknown_pool,
        full_discovery_round,
        rounds,
        cumulative_unknown_curve: curve,
        config,
    })
}

/// Strategy-by-strategy comparison aligned on round index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub strategies: Vec<String>,
    pub rounds: usize,
    /// `cumulative[s][r]` = strategy `s` cumulative unknowns after round
    /// `r + 1`.
    pub cumulative: Vec<Vec<usize>>,
    /// Per-strategy ratio against the `random` report, when one is present.
    pub vs_random: Option<Vec<Vec<f64>>>,
    pub warnings: Vec<String>,
}

/// Aligns reports on the shortest round count and computes ratio columns
/// against the strategy named `random`, when present.
pub fn compare(reports: &[DiscoveryReport]) -> Result<ComparisonTable> {
    if reports.is_empty() {
        return Err(Error::Argument("no reports to compare".into()));
    }
    let mut warnings = Vec::new();
    let rounds = reports
        .iter()
        .map(|r| r.cumulative_unknown_curve.len())
        .min()
        .unwrap_or(0);
    if reports
        .iter()
        .any(|r| r.cumulative_unknown_curve.len() != rounds)
    {
        warnings.push(format!(
            "reports disagree on round counts; aligned to the shortest ({rounds})"
        ));
    }
    let strategies: Vec<String> = reports.iter().map(|r| r.strategy.clone()).collect();
    let cumulative: Vec<Vec<usize>> = reports
        .iter()
        .map(|r| r.cumulative_unknown_curve[..rounds].to_vec())
        .collect();
    let vs_random = match reports.iter().position(|r| r.strategy == "random") {
        Some(base_idx) => {
            let base = &cumulative[base_idx];
            Some(
                cumulative
                    .iter()
                    .map(|curve| {
                        curve
                            .iter()
                            .zip(base)
                            .map(|(c, b)| {
                                if *b == 0 {
                                    f64::NAN
                                } else {
                                    *c as f64 / *b as f64
                                }
                            })
                            .collect()
                    })
                    .collect(),
            )
        }
        None => {
            warnings.push("no report named 'random'; ratio columns omitted".into());
            None
        }
    };
    Ok(ComparisonTable {
        strategies,
        rounds,
        cumulative,
        vs_random,
        warnings,
    })
}

/// Writes a comparison as CSV: one row per round, one cumulative column per
/// strategy plus ratio columns when available.
pub fn export_comparison_csv(table: &ComparisonTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut header = vec!["round".to_string()];
    for s in &table.strategies {
        header.push(format!("{s}_cumulative_unknown"));
    }
    if table.vs_random.is_some() {
        for s in &table.strategies {
            header.push(format!("{s}_vs_random"));
        }
    }
    w.write_record(&header)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for r in 0..table.rounds {
        let mut row = vec![(r + 1).to_string()];
        for curve in &table.cumulative {
            row.push(curve[r].to_string());
        }
        if let Some(ratios) = &table.vs_random {
            for ratio in ratios {
                row.push(format!("{}", ratio[r]));
            }
        }
        w.write_record(&row)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(ReportFormat::Csv),
            Some("json") => Ok(ReportFormat::Json),
            other => Err(Error::Argument(format!(
                "cannot infer report format from extension {other:?}"
            ))),
        }
    }
}

const CSV_HEADER: [&str; 15] = [
    "schema_version",
    "strategy",
    "seed",
    "total_unknown_pool",
    "full_discovery_round",
    "round",
    "phase",
    "selected",
    "unknown_selected",
    "cumulative_unknown",
    "objective",
    "wall_secs",
    "accuracy",
    "per_concept",
    "config",
];

// entries joined by ',' which attribute strings may not contain; keys can
// embed ';' between their own attributes
fn pack_concepts(per_concept: &BTreeMap<ConceptKey, usize>) -> String {
    per_concept
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn unpack_concepts(field: &str) -> Result<BTreeMap<ConceptKey, usize>> {
    let mut out = BTreeMap::new();
    if field.is_empty() {
        return Ok(out);
    }
    for part in field.split(',') {
        let (key, count) = part
            .rsplit_once('=')
            .ok_or_else(|| Error::Format(format!("bad per_concept field {field:?}")))?;
        let count: usize = count
            .parse()
            .map_err(|_| Error::Format(format!("bad count in {part:?}")))?;
        out.insert(ConceptKey::from_str(key)?, count);
    }
    Ok(out)
}

/// Exports a report. Both formats round-trip losslessly through
/// [`import_report`].
pub fn export_report(report: &DiscoveryReport, path: &Path, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Json => {
            let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            serde_json::to_writer_pretty(file, report)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            Ok(())
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_path(path)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            w.write_record(CSV_HEADER)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            let config = serde_json::to_string(&report.config)
                .map_err(|e| Error::Format(format!("config echo: {e}")))?;
            for r in &report.rounds {
                w.write_record([
                    report.schema_version.to_string(),
                    report.strategy.clone(),
                    report.seed.to_string(),
                    report.total_unknown_pool.to_string(),
                    report
                        .full_discovery_round
                        .map(|x| x.to_string())
                        .unwrap_or_default(),
                    r.round.to_string(),
                    r.phase.to_string(),
                    r.selected.to_string(),
                    r.unknown_selected.to_string(),
                    r.cumulative_unknown.to_string(),
                    format!("{}", r.objective),
                    format!("{}", r.wall_secs),
                    "NA".to_string(),
                    pack_concepts(&r.per_concept),
                    config.clone(),
                ])
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
            Ok(())
        }
    }
}

/// Reads a report back; the format is inferred from the extension.
pub fn import_report(path: &Path) -> Result<DiscoveryReport> {
    match ReportFormat::from_path(path)? {
        ReportFormat::Json => {
            let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
            let report: DiscoveryReport = serde_json::from_reader(file)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            if report.schema_version != SCHEMA_VERSION {
                return Err(Error::Format(format!(
                    "{}: schema version {} unsupported",
                    path.display(),
                    report.schema_version
                )));
            }
            Ok(report)
        }
        ReportFormat::Csv => import_report_csv(path),
    }
}

fn import_report_csv(path: &Path) -> Result<DiscoveryReport> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    {
        let headers = reader
            .headers()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if headers.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(Error::Format(format!(
                "{}: unexpected report header",
                path.display()
            )));
        }
    }
    let mut report: Option<DiscoveryReport> = None;
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let field = |i: usize| record.get(i).unwrap_or_default().to_string();
        let parse_usize = |i: usize| -> Result<usize> {
            field(i)
                .parse()
                .map_err(|_| Error::Format(format!("{}: row {k}: bad integer", path.display())))
        };
        let parse_f64 = |i: usize| -> Result<f64> {
            field(i)
                .parse()
                .map_err(|_| Error::Format(format!("{}: row {k}: bad float", path.display())))
        };
        if report.is_none() {
            let schema_version: u32 = field(0).parse().map_err(|_| {
                Error::Format(format!("{}: row {k}: bad schema version", path.display()))
            })?;
            if schema_version != SCHEMA_VERSION {
                return Err(Error::Format(format!(
                    "{}: schema version {schema_version} unsupported",
                    path.display()
                )));
            }
            let config: serde_json::Value = serde_json::from_str(&field(14))
                .map_err(|e| Error::Format(format!("{}: row {k}: config: {e}", path.display())))?;
            report = Some(DiscoveryReport {
                schema_version,
                strategy: field(1),
                seed: field(2).parse().map_err(|_| {
                    Error::Format(format!("{}: row {k}: bad seed", path.display()))
                })?,
                total_unknown_pool: parse_usize(3)?,
                full_discovery_round: if field(4).is_empty() {
                    None
                } else {
                    Some(parse_usize(4)?)
                },
                rounds: Vec::new(),
                cumulative_unknown_curve: Vec::new(),
                config,
            });
        }
        let rep = report.as_mut().expect("initialized above");
        let cumulative = parse_usize(9)?;
        rep.rounds.push(RoundSummary {
            round: parse_usize(5)?,
            phase: Phase::from_str(&field(6))?,
            selected: parse_usize(7)?,
            unknown_selected: parse_usize(8)?,
            cumulative_unknown: cumulative,
            per_concept: unpack_concepts(&field(13))?,
            objective: parse_f64(10)?,
            wall_secs: parse_f64(11)?,
            accuracy: None,
        });
        rep.cumulative_unknown_curve.push(cumulative);
    }
    report.ok_or_else(|| Error::Data(format!("{}: empty report", path.display())))
}
