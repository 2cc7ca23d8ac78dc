//! Graph-cut information measures.
//!
//! The base function is `f(X) = sum_{i in V, j in X} S_ij -
//! lambda * sum_{i, j in X} S_ij`. Its mutual information collapses to the
//! modular `2 * lambda * sum_{i in A, j in Q} S_ij`; its conditional gain is
//! `f(A) - 2 * lambda * nu * sum_{i in A, j in P} S_ij`. The conditional
//! mutual information has no closed form and is evaluated from the four-term
//! definition, which restricts it to small ground sets.

use crate::error::Result;
use crate::kernels::Kernel;
use std::sync::Arc;

/// Modular mutual-information form: per-candidate weights from `S^Q`.
pub(crate) struct GcMiFn {
    query_cross: Arc<Kernel>,
    weights: Vec<f64>,
    lambda: f64,
}

impl GcMiFn {
    pub fn new(query_cross: Arc<Kernel>, lambda: f64) -> Self {
        let weights = query_cross
            .col_sum()
            .into_iter()
            .map(|s| 2.0 * lambda * s)
            .collect();
        Self {
            query_cross,
            weights,
            lambda,
        }
    }

    pub fn gain(&self, col: usize) -> f64 {
        self.weights[col]
    }

    pub fn evaluate(&self, cols: &[usize]) -> f64 {
        // from scratch, bypassing the cached column sums
        let mut total = 0.0;
        for q in 0..self.query_cross.rows() {
            for &c in cols {
                total += self.query_cross.at(q, c);
            }
        }
        2.0 * self.lambda * total
    }
}

/// Conditional-gain form over the symmetric ground kernel.
pub(crate) struct GcCgFn {
    ground: Arc<Kernel>,
    cond_cross: Arc<Kernel>,
    /// `sum_{i in V} S_ic` per candidate.
    col_sums: Vec<f64>,
    /// `2 * lambda * nu * sum_{p in P} S_pc` per candidate.
    penalty: Vec<f64>,
    lambda: f64,
    nu: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct GcCgMemo {
    /// `sum_{j in A} S_jc` per candidate, updated on commit.
    acc: Vec<f64>,
    value: f64,
}

impl GcCgFn {
    pub fn new(ground: Arc<Kernel>, cond_cross: Arc<Kernel>, lambda: f64, nu: f64) -> Result<Self> {
        super::fl::alignment_checks(&ground, &cond_cross, "S^P")?;
        let col_sums = ground.col_sum();
        let penalty = cond_cross
            .col_sum()
            .into_iter()
            .map(|s| 2.0 * lambda * nu * s)
            .collect();
        Ok(Self {
            ground,
            cond_cross,
            col_sums,
            penalty,
            lambda,
            nu,
        })
    }

    pub fn new_memo(&self) -> GcCgMemo {
        GcCgMemo {
            acc: vec![0.0; self.ground.cols()],
            value: 0.0,
        }
    }

    pub fn gain(&self, memo: &GcCgMemo, col: usize) -> f64 {
        self.col_sums[col]
            - self.lambda * (2.0 * memo.acc[col] + self.ground.at(col, col))
            - self.penalty[col]
    }

    pub fn commit(&self, memo: &mut GcCgMemo, col: usize) -> f64 {
        let g = self.gain(memo, col);
        for (acc, &s) in memo.acc.iter_mut().zip(self.ground.row(col).iter()) {
            *acc += s;
        }
        memo.value += g;
        g
    }

    pub fn value(&self, memo: &GcCgMemo) -> f64 {
        memo.value
    }

    pub fn evaluate(&self, cols: &[usize]) -> f64 {
        let mut coverage = 0.0;
        for i in 0..self.ground.rows() {
            for &c in cols {
                coverage += self.ground.at(i, c);
            }
        }
        let mut internal = 0.0;
        for &a in cols {
            for &b in cols {
                internal += self.ground.at(a, b);
            }
        }
        let mut cond = 0.0;
        for p in 0..self.cond_cross.rows() {
            for &c in cols {
                cond += self.cond_cross.at(p, c);
            }
        }
        coverage - self.lambda * internal - 2.0 * self.lambda * self.nu * cond
    }
}

/// Graph-cut base value `f(X)` over row/column indices of a symmetric kernel.
pub(crate) fn gc_base_value(kernel: &Kernel, set: &[usize], lambda: f64) -> f64 {
    let mut coverage = 0.0;
    for &x in set {
        // symmetric kernel: column sum equals row sum
        coverage += kernel.row(x).sum();
    }
    let mut internal = 0.0;
    for &a in set {
        for &b in set {
            internal += kernel.at(a, b);
        }
    }
    coverage - lambda * internal
}

/// Four-term conditional mutual information for the graph-cut base. Small
/// scale only: every evaluation touches the full `A + Q + P` square.
pub(crate) struct GcCmiFn {
    kernel: Arc<Kernel>,
    q_idx: Vec<usize>,
    p_idx: Vec<usize>,
    lambda: f64,
    f_qp: f64,
    f_p: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct GcCmiMemo {
    sel: Vec<usize>,
    value: f64,
}

impl GcCmiFn {
    pub fn new(kernel: Arc<Kernel>, q_idx: Vec<usize>, p_idx: Vec<usize>, lambda: f64) -> Self {
        let qp: Vec<usize> = union_indices(&q_idx, &p_idx);
        let f_qp = gc_base_value(&kernel, &qp, lambda);
        let f_p = gc_base_value(&kernel, &p_idx, lambda);
        Self {
            kernel,
            q_idx,
            p_idx,
            lambda,
            f_qp,
            f_p,
        }
    }

    fn four_term(&self, sel: &[usize]) -> f64 {
        let ap = union_indices(sel, &self.p_idx);
        let aqp = union_indices(&ap, &self.q_idx);
        gc_base_value(&self.kernel, &ap, self.lambda) + self.f_qp
            - gc_base_value(&self.kernel, &aqp, self.lambda)
            - self.f_p
    }

    pub fn new_memo(&self) -> GcCmiMemo {
        GcCmiMemo {
            sel: Vec::new(),
            value: 0.0,
        }
    }

    pub fn gain(&self, memo: &GcCmiMemo, col: usize) -> f64 {
        let mut sel = memo.sel.clone();
        sel.push(col);
        self.four_term(&sel) - memo.value
    }

    pub fn commit(&self, memo: &mut GcCmiMemo, col: usize) -> f64 {
        memo.sel.push(col);
        let v = self.four_term(&memo.sel);
        let g = v - memo.value;
        memo.value = v;
        g
    }

    pub fn value(&self, memo: &GcCmiMemo) -> f64 {
        memo.value
    }

    pub fn evaluate(&self, cols: &[usize]) -> f64 {
        self.four_term(cols)
    }
}

pub(crate) fn union_indices(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = a.iter().chain(b.iter()).copied().collect();
    out.sort_unstable();
    out.dedup();
    out
}
