//! Submodular information measures over similarity kernels.
//!
//! Three base families — facility location, graph cut, log determinant —
//! instantiated as mutual information `I_f(A; Q)`, conditional gain
//! `f(A | P)` and conditional mutual information `I_f(A; Q | P)`:
//!
//! | family | MI | CG | CMI |
//! |--------|----|----|-----|
//! | facility location | `FlMi` | `FlCg` | `FlCmi` |
//! | graph cut | `GcMi` | `GcCg` | `GcCmi` (four-term, small scale) |
//! | log determinant | `LogDetMi` | `LogDetCg` | `LogDetCmi` (small scale) |
//!
//! `eta` scales the attraction to the query set, `nu` the repulsion from the
//! conditioning set, `lambda` the graph-cut redundancy penalty. At
//! `eta = nu = 1` every closed form equals the set-theoretic definition
//! built from its base function; [`definition_check`] computes both routes
//! for test harnesses.
//!
//! [`AcquisitionFunction`] pairs a closed-form evaluator with a memoized
//! [`GainState`], so greedy maximization pays one incremental update per
//! step rather than a from-scratch evaluation.

mod chol;
mod fl;
mod gc;
mod logdet;

use crate::error::{Error, Result};
use crate::ids::PointId;
use crate::kernels::Kernel;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

pub use chol::{logdet as logdet_of, CholeskyFactor};

use fl::{CoverageMemo, FlCoverage};
use gc::{GcCgFn, GcCgMemo, GcCmiFn, GcCmiMemo, GcMiFn};
use logdet::{LogDetCgFn, LogDetCgMemo, LogDetCmiFn, LogDetCmiMemo, LogDetMiFn, LogDetMiMemo};

/// Underlying submodular base function.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionFamily {
    Fl,
    Gc,
    LogDet,
}

impl FunctionFamily {
    pub fn mi(self) -> FunctionKind {
        match self {
            FunctionFamily::Fl => FunctionKind::FlMi,
            FunctionFamily::Gc => FunctionKind::GcMi,
            FunctionFamily::LogDet => FunctionKind::LogDetMi,
        }
    }

    pub fn cg(self) -> FunctionKind {
        match self {
            FunctionFamily::Fl => FunctionKind::FlCg,
            FunctionFamily::Gc => FunctionKind::GcCg,
            FunctionFamily::LogDet => FunctionKind::LogDetCg,
        }
    }

    pub fn cmi(self) -> FunctionKind {
        match self {
            FunctionFamily::Fl => FunctionKind::FlCmi,
            FunctionFamily::Gc => FunctionKind::GcCmi,
            FunctionFamily::LogDet => FunctionKind::LogDetCmi,
        }
    }
}

/// A concrete instantiation from the family x measure grid.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionKind {
    FlMi,
    GcMi,
    LogDetMi,
    FlCg,
    GcCg,
    LogDetCg,
    FlCmi,
    GcCmi,
    LogDetCmi,
}

impl FunctionKind {
    pub fn family(self) -> FunctionFamily {
        use FunctionKind::*;
        match self {
            FlMi | FlCg | FlCmi => FunctionFamily::Fl,
            GcMi | GcCg | GcCmi => FunctionFamily::Gc,
            LogDetMi | LogDetCg | LogDetCmi => FunctionFamily::LogDet,
        }
    }

    pub fn is_mi(self) -> bool {
        matches!(self, Self::FlMi | Self::GcMi | Self::LogDetMi)
    }

    pub fn is_cg(self) -> bool {
        matches!(self, Self::FlCg | Self::GcCg | Self::LogDetCg)
    }

    pub fn is_cmi(self) -> bool {
        matches!(self, Self::FlCmi | Self::GcCmi | Self::LogDetCmi)
    }

    /// Whether the kind needs the symmetric ground kernel over the
    /// candidates. Mutual-information forms of FL and GC only touch `S^Q`.
    pub fn needs_ground(self) -> bool {
        !matches!(self, Self::FlMi | Self::GcMi)
    }
}

/// Scalar parameters shared by every instantiation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Params {
    /// Intensity of relevance to the query set.
    pub eta: f64,
    /// Intensity of conditioning against the conditioning set.
    pub nu: f64,
    /// Graph-cut redundancy weight.
    pub lambda: f64,
    /// Diagonal regularizer added to every factorized principal kernel.
    pub epsilon_reg: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            eta: 1.0,
            nu: 1.0,
            lambda: 1.0,
            epsilon_reg: 1e-4,
        }
    }
}

impl Params {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta", self.eta),
            ("nu", self.nu),
            ("lambda", self.lambda),
            ("epsilon_reg", self.epsilon_reg),
        ] {
            if !v.is_finite() {
                return Err(Error::Argument(format!("{name} must be finite, got {v}")));
            }
        }
        if self.epsilon_reg < 0.0 {
            return Err(Error::Argument("epsilon_reg must be >= 0".into()));
        }
        Ok(())
    }
}

/// The kernels a kind may require. Candidate identity comes from the column
/// ids of the ground kernel (or of the cross kernels for ground-free kinds);
/// all supplied kernels must agree on it.
#[derive(Clone, Default)]
pub struct KernelSet {
    /// Symmetric candidates x candidates kernel.
    pub ground: Option<Arc<Kernel>>,
    /// `S^Q`: query rows x candidates.
    pub query_cross: Option<Arc<Kernel>>,
    /// `S^P`: conditioning rows x candidates.
    pub cond_cross: Option<Arc<Kernel>>,
    /// `S_Q`: query x query.
    pub query_self: Option<Arc<Kernel>>,
    /// `S_P`: conditioning x conditioning.
    pub cond_self: Option<Arc<Kernel>>,
    /// `S_PQ`: conditioning x query.
    pub cond_query: Option<Arc<Kernel>>,
}

impl KernelSet {
    fn require(&self, field: &str, kind: FunctionKind) -> Result<Arc<Kernel>> {
        let slot = match field {
            "ground" => &self.ground,
            "query_cross" => &self.query_cross,
            "cond_cross" => &self.cond_cross,
            "query_self" => &self.query_self,
            "cond_self" => &self.cond_self,
            "cond_query" => &self.cond_query,
            _ => unreachable!(),
        };
        slot.clone().ok_or_else(|| {
            Error::Argument(format!("{kind:?} requires the {field} kernel"))
        })
    }
}

enum Engine {
    Coverage(FlCoverage),
    GcMi(GcMiFn),
    GcCg(GcCgFn),
    GcCmi(GcCmiFn),
    LdMi(LogDetMiFn),
    LdCg(LogDetCgFn),
    LdCmi(LogDetCmiFn),
}

#[derive(Clone, Debug)]
enum Memo {
    Coverage(CoverageMemo),
    Scalar(f64),
    GcCg(GcCgMemo),
    GcCmi(GcCmiMemo),
    LdMi(LogDetMiMemo),
    LdCg(LogDetCgMemo),
    LdCmi(LogDetCmiMemo),
}

/// Memoized evaluation state for one greedy run. Single-owner: clone it to
/// branch, never share across workers.
#[derive(Clone, Debug)]
pub struct GainState {
    selected: Vec<PointId>,
    selected_set: BTreeSet<PointId>,
    memo: Memo,
}

impl GainState {
    pub fn selected(&self) -> &[PointId] {
        &self.selected
    }

    pub fn contains(&self, id: PointId) -> bool {
        self.selected_set.contains(&id)
    }
}

/// A submodular set function over the candidate ground set, supporting exact
/// evaluation and memoized marginal gains. Evaluation is read-only and safe
/// to call concurrently with distinct [`GainState`]s.
pub struct AcquisitionFunction {
    kind: FunctionKind,
    candidates: Vec<PointId>,
    col_of: HashMap<PointId, usize>,
    engine: Engine,
}

impl std::fmt::Debug for AcquisitionFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AcquisitionFunction")
            .field("kind", &self.kind)
            .field("candidates", &self.candidates.len())
            .finish()
    }
}

impl AcquisitionFunction {
    /// Builds the function for `kind`, validating that exactly the kernels
    /// the kind requires are present and mutually aligned.
    pub fn build(kind: FunctionKind, kernels: KernelSet, params: Params) -> Result<Self> {
        params.validate()?;
        let eps = params.epsilon_reg;
        let engine = match kind {
            FunctionKind::FlMi => {
                let q = kernels.require("query_cross", kind)?;
                Engine::Coverage(FlCoverage::mi(q, params.eta))
            }
            FunctionKind::GcMi => {
                let q = kernels.require("query_cross", kind)?;
                Engine::GcMi(GcMiFn::new(q, params.lambda))
            }
            FunctionKind::LogDetMi => {
                let ground = kernels.require("ground", kind)?;
                let q = kernels.require("query_cross", kind)?;
                let qs = kernels.require("query_self", kind)?;
                Engine::LdMi(LogDetMiFn::new(ground, q, &qs, params.eta, eps)?)
            }
            FunctionKind::FlCg => {
                let ground = kernels.require("ground", kind)?;
                let p = kernels.require("cond_cross", kind)?;
                Engine::Coverage(FlCoverage::cg(ground, &p, params.nu)?)
            }
            FunctionKind::GcCg => {
                let ground = kernels.require("ground", kind)?;
                let p = kernels.require("cond_cross", kind)?;
                Engine::GcCg(GcCgFn::new(ground, p, params.lambda, params.nu)?)
            }
            FunctionKind::LogDetCg => {
                let ground = kernels.require("ground", kind)?;
                let p = kernels.require("cond_cross", kind)?;
                let ps = kernels.require("cond_self", kind)?;
                Engine::LdCg(LogDetCgFn::new(ground, p, &ps, params.nu, eps)?)
            }
            FunctionKind::FlCmi => {
                let ground = kernels.require("ground", kind)?;
                let q = kernels.require("query_cross", kind)?;
                let p = kernels.require("cond_cross", kind)?;
                Engine::Coverage(FlCoverage::cmi(ground, &q, &p, params.eta, params.nu)?)
            }
            FunctionKind::GcCmi => {
                let ground = kernels.require("ground", kind)?;
                let q = kernels.require("query_cross", kind)?;
                let p = kernels.require("cond_cross", kind)?;
                fl::check_ground(&ground)?;
                let q_idx = resolve_rows(&ground, q.row_ids(), "query ids")?;
                let p_idx = resolve_rows(&ground, p.row_ids(), "conditioning ids")?;
                Engine::GcCmi(GcCmiFn::new(ground, q_idx, p_idx, params.lambda))
            }
            FunctionKind::LogDetCmi => {
                let ground = kernels.require("ground", kind)?;
                let q = kernels.require("query_cross", kind)?;
                let p = kernels.require("cond_cross", kind)?;
                let qs = kernels.require("query_self", kind)?;
                let ps = kernels.require("cond_self", kind)?;
                let pq = kernels.require("cond_query", kind)?;
                Engine::LdCmi(LogDetCmiFn::new(
                    ground, q, p, &qs, ps, pq, params.eta, params.nu, eps,
                )?)
            }
        };
        let candidate_source = match &engine {
            Engine::Coverage(c) => c.kernel().col_ids(),
            Engine::GcMi(_) => kernels.query_cross.as_ref().unwrap().col_ids(),
            _ => kernels.ground.as_ref().unwrap().col_ids(),
        };
        let candidates = candidate_source.to_vec();
        let mut col_of = HashMap::with_capacity(candidates.len());
        for (c, id) in candidates.iter().enumerate() {
            col_of.insert(*id, c);
        }
        Ok(Self {
            kind,
            candidates,
            col_of,
            engine,
        })
    }

    pub fn kind(&self) -> FunctionKind {
        self.kind
    }

    /// The evaluation domain: ids the function can score.
    pub fn candidates(&self) -> &[PointId] {
        &self.candidates
    }

    pub fn contains_candidate(&self, id: PointId) -> bool {
        self.col_of.contains_key(&id)
    }

    fn col(&self, id: PointId) -> Result<usize> {
        self.col_of.get(&id).copied().ok_or(Error::UnknownId(id))
    }

    pub fn new_state(&self) -> GainState {
        let memo = match &self.engine {
            Engine::Coverage(e) => Memo::Coverage(e.new_memo()),
            Engine::GcMi(_) => Memo::Scalar(0.0),
            Engine::GcCg(e) => Memo::GcCg(e.new_memo()),
            Engine::GcCmi(e) => Memo::GcCmi(e.new_memo()),
            Engine::LdMi(e) => Memo::LdMi(e.new_memo()),
            Engine::LdCg(e) => Memo::LdCg(e.new_memo()),
            Engine::LdCmi(e) => Memo::LdCmi(e.new_memo()),
        };
        GainState {
            selected: Vec::new(),
            selected_set: BTreeSet::new(),
            memo,
        }
    }

    /// Marginal gain `f(A ∪ {x}) - f(A)` from the memoized state.
    pub fn marginal_gain(&self, state: &GainState, x: PointId) -> Result<f64> {
        if state.contains(x) {
            return Err(Error::Argument(format!("{x} is already selected")));
        }
        let c = self.col(x)?;
        match (&self.engine, &state.memo) {
            (Engine::Coverage(e), Memo::Coverage(m)) => Ok(e.gain(m, c)),
            (Engine::GcMi(e), Memo::Scalar(_)) => Ok(e.gain(c)),
            (Engine::GcCg(e), Memo::GcCg(m)) => Ok(e.gain(m, c)),
            (Engine::GcCmi(e), Memo::GcCmi(m)) => Ok(e.gain(m, c)),
            (Engine::LdMi(e), Memo::LdMi(m)) => e.gain(m, c),
            (Engine::LdCg(e), Memo::LdCg(m)) => e.gain(m, c),
            (Engine::LdCmi(e), Memo::LdCmi(m)) => e.gain(m, c),
            _ => unreachable!("state does not belong to this function"),
        }
    }

    /// Adds `x` to the selection, updating the memo. Returns the realized
    /// gain.
    pub fn commit(&self, state: &mut GainState, x: PointId) -> Result<f64> {
        if state.contains(x) {
            return Err(Error::Argument(format!("{x} is already selected")));
        }
        let c = self.col(x)?;
        let g = match (&self.engine, &mut state.memo) {
            (Engine::Coverage(e), Memo::Coverage(m)) => e.commit(m, c),
            (Engine::GcMi(e), Memo::Scalar(v)) => {
                let g = e.gain(c);
                *v += g;
                g
            }
            (Engine::GcCg(e), Memo::GcCg(m)) => e.commit(m, c),
            (Engine::GcCmi(e), Memo::GcCmi(m)) => e.commit(m, c),
            (Engine::LdMi(e), Memo::LdMi(m)) => e.commit(m, c)?,
            (Engine::LdCg(e), Memo::LdCg(m)) => e.commit(m, c)?,
            (Engine::LdCmi(e), Memo::LdCmi(m)) => e.commit(m, c)?,
            _ => unreachable!("state does not belong to this function"),
        };
        state.selected.push(x);
        state.selected_set.insert(x);
        Ok(g)
    }

    /// Current function value from the memo.
    pub fn value(&self, state: &GainState) -> f64 {
        match (&self.engine, &state.memo) {
            (Engine::Coverage(e), Memo::Coverage(m)) => e.value(m),
            (Engine::GcMi(_), Memo::Scalar(v)) => *v,
            (Engine::GcCg(e), Memo::GcCg(m)) => e.value(m),
            (Engine::GcCmi(e), Memo::GcCmi(m)) => e.value(m),
            (Engine::LdMi(e), Memo::LdMi(m)) => e.value(m),
            (Engine::LdCg(e), Memo::LdCg(m)) => e.value(m),
            (Engine::LdCmi(e), Memo::LdCmi(m)) => e.value(m),
            _ => unreachable!("state does not belong to this function"),
        }
    }

    /// From-scratch evaluation of an arbitrary set, independent of any memo.
    pub fn evaluate(&self, set: &[PointId]) -> Result<f64> {
        let mut seen = BTreeSet::new();
        for id in set {
            if !seen.insert(*id) {
                return Err(Error::Argument(format!("duplicate id {id} in set")));
            }
        }
        let cols: Vec<usize> = set.iter().map(|id| self.col(*id)).collect::<Result<_>>()?;
        match &self.engine {
            Engine::Coverage(e) => Ok(e.evaluate(&cols)),
            Engine::GcMi(e) => Ok(e.evaluate(&cols)),
            Engine::GcCg(e) => Ok(e.evaluate(&cols)),
            Engine::GcCmi(e) => Ok(e.evaluate(&cols)),
            Engine::LdMi(e) => e.evaluate(&cols),
            Engine::LdCg(e) => e.evaluate(&cols),
            Engine::LdCmi(e) => e.evaluate(&cols),
        }
    }

    /// Whether stale upper bounds stay valid across steps (certified
    /// diminishing returns), making accelerated lazy greedy exact.
    pub fn lazy_safe(&self) -> bool {
        !matches!(self.kind, FunctionKind::LogDetMi | FunctionKind::LogDetCmi)
    }

    /// Graph-cut kinds can go negative; greedy may stop early on them once
    /// the best gain is non-positive.
    pub fn stops_on_nonpositive_gain(&self) -> bool {
        matches!(
            self.kind,
            FunctionKind::GcMi | FunctionKind::GcCg | FunctionKind::GcCmi
        )
    }
}

/// Free-function form of [`AcquisitionFunction::marginal_gain`].
pub fn marginal_gain(f: &AcquisitionFunction, state: &GainState, x: PointId) -> Result<f64> {
    f.marginal_gain(state, x)
}

fn resolve_rows(kernel: &Kernel, ids: &[PointId], what: &str) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| {
            kernel
                .row_index_of(*id)
                .map_err(|_| Error::Argument(format!("{what}: {id} missing from ground kernel")))
        })
        .collect()
}

/// Both evaluation routes for one instantiation: the Table-style closed form
/// and the set-theoretic definition built from the base function. At
/// `eta = nu = 1` the two agree (facility location and graph cut exactly,
/// log determinant to factorization accuracy).
#[derive(Clone, Copy, Debug)]
pub struct DefinitionCheck {
    pub closed_form: f64,
    pub set_theoretic: f64,
}

/// Evaluates `kind` on `(a, q, p)` through both routes over one symmetric
/// kernel whose ids are the full ground set. The three sets must be pairwise
/// disjoint subsets of the kernel ids. Intended for small instances.
pub fn definition_check(
    kind: FunctionKind,
    kernel: &Kernel,
    a: &[PointId],
    q: &[PointId],
    p: &[PointId],
    params: Params,
) -> Result<DefinitionCheck> {
    if !kernel.is_symmetric() {
        return Err(Error::Argument(
            "definition_check needs a symmetric full kernel".into(),
        ));
    }
    let sets = [a, q, p];
    for (i, x) in sets.iter().enumerate() {
        for y in sets.iter().skip(i + 1) {
            let xi: BTreeSet<_> = x.iter().collect();
            if y.iter().any(|id| xi.contains(id)) {
                return Err(Error::Argument("a, q, p must be pairwise disjoint".into()));
            }
        }
    }

    let all = kernel.col_ids().to_vec();
    let kernels = KernelSet {
        ground: Some(Arc::new(kernel.clone())),
        query_cross: Some(Arc::new(kernel.submatrix(q, &all)?)),
        cond_cross: Some(Arc::new(kernel.submatrix(p, &all)?)),
        query_self: Some(Arc::new(kernel.submatrix(q, q)?)),
        cond_self: Some(Arc::new(kernel.submatrix(p, p)?)),
        cond_query: Some(Arc::new(kernel.submatrix(p, q)?)),
    };
    let f = AcquisitionFunction::build(kind, kernels, params)?;
    let closed_form = f.evaluate(a)?;

    let a_idx = resolve_rows(kernel, a, "a")?;
    let q_idx = resolve_rows(kernel, q, "q")?;
    let p_idx = resolve_rows(kernel, p, "p")?;
    let set_theoretic = set_theoretic_value(kind, kernel, &a_idx, &q_idx, &p_idx, params)?;
    Ok(DefinitionCheck {
        closed_form,
        set_theoretic,
    })
}

/// `I_f(A; Q)`, `f(A | P)` or `I_f(A; Q | P)` computed from the base set
/// function itself.
fn set_theoretic_value(
    kind: FunctionKind,
    kernel: &Kernel,
    a: &[usize],
    q: &[usize],
    p: &[usize],
    params: Params,
) -> Result<f64> {
    let base: Box<dyn Fn(&[usize]) -> Result<f64>> = match kind.family() {
        FunctionFamily::Fl => {
            // the MI form of facility location arises from the base restricted
            // to the ground set A ∪ Q; CG and CMI use the full ground set
            let rows: Vec<usize> = if kind.is_mi() {
                gc::union_indices(a, q)
            } else {
                (0..kernel.rows()).collect()
            };
            let kernel = kernel.clone();
            Box::new(move |set: &[usize]| {
                Ok(rows
                    .iter()
                    .map(|&r| {
                        set.iter()
                            .map(|&j| kernel.at(r, j))
                            .fold(0.0f64, f64::max)
                    })
                    .sum())
            })
        }
        FunctionFamily::Gc => {
            let kernel = kernel.clone();
            let lambda = params.lambda;
            Box::new(move |set: &[usize]| Ok(gc::gc_base_value(&kernel, set, lambda)))
        }
        FunctionFamily::LogDet => {
            let kernel = kernel.clone();
            let eps = params.epsilon_reg;
            Box::new(move |set: &[usize]| {
                if set.is_empty() {
                    return Ok(0.0);
                }
                let mut m = ndarray::Array2::zeros((set.len(), set.len()));
                for (i, &x) in set.iter().enumerate() {
                    for (j, &y) in set.iter().enumerate() {
                        m[[i, j]] = kernel.at(x, y);
                    }
                    m[[i, i]] += eps;
                }
                chol::logdet(m.view())
            })
        }
    };

    if kind.is_mi() {
        let aq = gc::union_indices(a, q);
        Ok(base(a)? + base(q)? - base(&aq)?)
    } else if kind.is_cg() {
        let ap = gc::union_indices(a, p);
        Ok(base(&ap)? - base(p)?)
    } else {
        let ap = gc::union_indices(a, p);
        let qp = gc::union_indices(q, p);
        let aqp = gc::union_indices(&ap, q);
        Ok(base(&ap)? + base(&qp)? - base(&aqp)? - base(p)?)
    }
}
