//! Comparison acquisition strategies: uncertainty sampling over model
//! confidences, gradient-embedding k-means++ seeding, and random selection.
//!
//! Probability tables arrive from CSV (`id,p0,...,p{C-1}`) or an external
//! per-round provider; the selectors themselves are pure functions over
//! immutable inputs with per-call seeded randomness.

use crate::dataset::EmbeddingStore;
use crate::error::{Error, Result};
use crate::ids::PointId;
use crate::maximizer::SelectionResult;
use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::path::Path;

/// Per-point class probabilities, rows on the simplex.
#[derive(Clone, Debug)]
pub struct ProbabilityTable {
    ids: Vec<PointId>,
    probs: Array2<f64>,
    index: HashMap<PointId, usize>,
}

impl ProbabilityTable {
    pub fn new(ids: Vec<PointId>, probs: Array2<f64>) -> Result<Self> {
        if ids.len() != probs.nrows() {
            return Err(Error::Shape(format!(
                "{} ids for {} probability rows",
                ids.len(),
                probs.nrows()
            )));
        }
        if probs.ncols() == 0 {
            return Err(Error::Data("probability table needs >= 1 class".into()));
        }
        for (k, row) in probs.rows().into_iter().enumerate() {
            let mut sum = 0.0;
            for v in row.iter() {
                if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                    return Err(Error::Data(format!(
                        "row {k}: probability {v} outside [0, 1]"
                    )));
                }
                sum += *v;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Data(format!(
                    "row {k} sums to {sum}, not a distribution"
                )));
            }
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(*id, i).is_some() {
                return Err(Error::Data(format!("duplicate probability row for {id}")));
            }
        }
        Ok(Self { ids, probs, index })
    }

    pub fn classes(&self) -> usize {
        self.probs.ncols()
    }

    pub fn ids(&self) -> &[PointId] {
        &self.ids
    }

    pub fn row(&self, id: PointId) -> Result<ArrayView1<'_, f64>> {
        let i = self.index.get(&id).copied().ok_or(Error::UnknownId(id))?;
        Ok(self.probs.row(i))
    }
}

/// Loads a probability table CSV: header `id,p0,...,p{C-1}`.
pub fn load_probability_table(path: &Path) -> Result<ProbabilityTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() < 2 || &headers[0] != "id" {
        return Err(Error::Format(format!(
            "{}: expected header id,p0,...,p{{C-1}}",
            path.display()
        )));
    }
    let classes = headers.len() - 1;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if record.len() != classes + 1 {
            return Err(Error::Format(format!(
                "{}: row {k} has {} fields, expected {}",
                path.display(),
                record.len(),
                classes + 1
            )));
        }
        let id: u32 = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("{}: row {k}: bad id", path.display())))?;
        ids.push(PointId(id));
        for field in record.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("{}: row {k}: bad float", path.display())))?;
            values.push(v);
        }
    }
    if ids.is_empty() {
        return Err(Error::Data(format!("{}: empty table", path.display())));
    }
    let n = ids.len();
    let probs = Array2::from_shape_vec((n, classes), values)
        .map_err(|e| Error::Shape(format!("{}: {e}", path.display())))?;
    ProbabilityTable::new(ids, probs)
}

/// Shannon entropy in nats; `0 ln 0 = 0`.
pub fn entropy(row: ArrayView1<'_, f64>) -> f64 {
    row.iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

/// Top-1 minus top-2 probability.
pub fn margin(row: ArrayView1<'_, f64>) -> f64 {
    let mut top1 = f64::NEG_INFINITY;
    let mut top2 = f64::NEG_INFINITY;
    for &p in row.iter() {
        if p > top1 {
            top2 = top1;
            top1 = p;
        } else if p > top2 {
            top2 = p;
        }
    }
    if top2.is_finite() {
        top1 - top2
    } else {
        top1
    }
}

/// Maximum class probability.
pub fn max_confidence(row: ArrayView1<'_, f64>) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Clone, Copy)]
enum Direction {
    Descending,
    Ascending,
}

/// Shared top-B selection: scores sorted per direction, ties broken by the
/// smaller id. The returned gains are the scores in pick order.
fn ranked_select(
    scored: Vec<(PointId, f64)>,
    budget: usize,
    direction: Direction,
) -> SelectionResult {
    let mut scored = scored;
    scored.sort_by(|a, b| {
        let ord = a.1.total_cmp(&b.1);
        let ord = match direction {
            Direction::Descending => ord.reverse(),
            Direction::Ascending => ord,
        };
        ord.then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(budget);
    let objective = scored.iter().map(|(_, s)| *s).sum();
    SelectionResult {
        chosen: scored.iter().map(|(id, _)| *id).collect(),
        gains: scored.iter().map(|(_, s)| *s).collect(),
        stopped_early: false,
        objective,
    }
}

fn score_candidates(
    table: &ProbabilityTable,
    candidates: &[PointId],
    score: impl Fn(ArrayView1<'_, f64>) -> f64,
) -> Result<Vec<(PointId, f64)>> {
    candidates
        .iter()
        .map(|id| table.row(*id).map(|row| (*id, score(row))))
        .collect()
}

/// Top-B candidates by Shannon entropy, descending.
pub fn entropy_select(
    table: &ProbabilityTable,
    candidates: &[PointId],
    budget: usize,
) -> Result<SelectionResult> {
    let scored = score_candidates(table, candidates, entropy)?;
    Ok(ranked_select(scored, budget, Direction::Descending))
}

/// Top-B candidates by smallest top-two margin.
pub fn margin_select(
    table: &ProbabilityTable,
    candidates: &[PointId],
    budget: usize,
) -> Result<SelectionResult> {
    let scored = score_candidates(table, candidates, margin)?;
    Ok(ranked_select(scored, budget, Direction::Ascending))
}

/// Top-B candidates by lowest maximum class probability.
pub fn least_confidence_select(
    table: &ProbabilityTable,
    candidates: &[PointId],
    budget: usize,
) -> Result<SelectionResult> {
    let scored = score_candidates(table, candidates, max_confidence)?;
    Ok(ranked_select(scored, budget, Direction::Ascending))
}

/// Gradient-embedding k-means++ selection.
///
/// Each candidate's gradient embedding is the outer product of
/// `(p - onehot(argmax p))` with its feature vector, flattened to `C * D`.
/// Selection is k-means++ seeding over these embeddings with the origin as
/// the phantom initial center, so the first seed is drawn proportional to
/// the squared gradient norm. Pseudo-labels come from the supplied
/// probabilities, which means points of never-seen classes are always
/// pseudo-labeled as a known class; the mechanism is reproduced as-is.
///
/// The squared distance between two embeddings factorizes as
/// `|u_x|^2 |f_x|^2 - 2 (u_x . u_y)(f_x . f_y) + |u_y|^2 |f_y|^2`, so no
/// `C * D` vector is ever materialized.
pub fn badge_select(
    features: &EmbeddingStore,
    table: &ProbabilityTable,
    candidates: &[PointId],
    budget: usize,
    seed: u64,
) -> Result<SelectionResult> {
    if candidates.is_empty() {
        return Err(Error::Argument("candidates must be nonempty".into()));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();

    struct Grad {
        id: PointId,
        u: Vec<f64>,
        f: Vec<f64>,
        u_norm2: f64,
        f_norm2: f64,
    }
    let mut grads = Vec::with_capacity(sorted.len());
    for id in &sorted {
        let p = table.row(*id)?;
        let f = features.row(*id)?;
        let hard = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .expect(">= 1 class");
        let mut u: Vec<f64> = p.iter().copied().collect();
        u[hard] -= 1.0;
        let u_norm2 = u.iter().map(|v| v * v).sum();
        let f_vec: Vec<f64> = f.iter().copied().collect();
        let f_norm2 = f_vec.iter().map(|v| v * v).sum();
        grads.push(Grad {
            id: *id,
            u,
            f: f_vec,
            u_norm2,
            f_norm2,
        });
    }

    let dist2 = |a: &Grad, b: &Grad| -> f64 {
        let uu: f64 = a.u.iter().zip(&b.u).map(|(x, y)| x * y).sum();
        let ff: f64 = a.f.iter().zip(&b.f).map(|(x, y)| x * y).sum();
        (a.u_norm2 * a.f_norm2 - 2.0 * uu * ff + b.u_norm2 * b.f_norm2).max(0.0)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = budget.min(grads.len());
    // D^2 weights start as squared distance to the origin (zero gradient)
    let mut weight: Vec<f64> = grads.iter().map(|g| g.u_norm2 * g.f_norm2).collect();
    let mut taken = vec![false; grads.len()];
    let mut chosen = Vec::with_capacity(budget);
    let mut gains = Vec::with_capacity(budget);
    for _ in 0..budget {
        let total: f64 = weight
            .iter()
            .zip(&taken)
            .filter(|(_, t)| !**t)
            .map(|(w, _)| *w)
            .sum();
        let pick = if total > 0.0 {
            let r = rng.gen_range(0.0..total);
            let mut acc = 0.0;
            let mut pick = None;
            for (k, w) in weight.iter().enumerate() {
                if taken[k] {
                    continue;
                }
                acc += *w;
                if r < acc {
                    pick = Some(k);
                    break;
                }
            }
            // guard against accumulated rounding at the tail
            pick.unwrap_or_else(|| taken.iter().rposition(|t| !*t).expect("candidate left"))
        } else {
            // all remaining weights zero: deterministic smallest id
            taken.iter().position(|t| !*t).expect("candidate left")
        };
        taken[pick] = true;
        chosen.push(grads[pick].id);
        gains.push(weight[pick]);
        for k in 0..grads.len() {
            if !taken[k] {
                weight[k] = weight[k].min(dist2(&grads[k], &grads[pick]));
            }
        }
    }
    let objective = gains.iter().sum();
    Ok(SelectionResult {
        chosen,
        gains,
        stopped_early: false,
        objective,
    })
}

/// Uniform sampling without replacement, seeded.
pub fn random_select(candidates: &[PointId], budget: usize, seed: u64) -> SelectionResult {
    use rand::seq::SliceRandom;
    let mut pool = candidates.to_vec();
    pool.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    pool.truncate(budget);
    SelectionResult {
        gains: vec![0.0; pool.len()],
        chosen: pool,
        stopped_early: false,
        objective: 0.0,
    }
}
