//! Log-determinant information measures with incremental Cholesky updates.
//!
//! Every principal kernel that gets factorized is regularized as `S + eps I`
//! first; a pivot that is still non-positive afterwards is surfaced as a
//! numerical error, never patched. Marginal gains grow the factor of the
//! selected submatrix by one trailing column per commit, so a gain evaluation
//! costs `O(|A|^2 + |A||Q|)` instead of a fresh factorization.
//!
//! The conditional-gain and mutual-information forms scale with the size of
//! the conditioning/query sets (their self-kernels are factorized once at
//! construction). The conditional-mutual-information form additionally grows
//! a factor over `P ∪ A` and is intended for small instances.

use crate::error::{Error, Result};
use crate::kernels::Kernel;
use ndarray::Array2;
use std::sync::Arc;

use super::chol::CholeskyFactor;
use super::fl::{check_cross_alignment, check_ground};

fn nonpd(context: &str, schur: f64) -> Error {
    Error::Numerical(format!(
        "{context}: non-positive-definite pivot {schur:.3e} after regularization"
    ))
}

/// Solves `(L L^T) x = b` given the lower factor.
fn spd_solve(l: &CholeskyFactor, b: &[f64]) -> Vec<f64> {
    let w = l.forward_solve(b);
    back_solve(l, &w)
}

/// Solves `L^T x = y`.
fn back_solve(l: &CholeskyFactor, y: &[f64]) -> Vec<f64> {
    let n = l.len();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l.row(k)[i] * x[k];
        }
        x[i] = s / l.row(i)[i];
    }
    x
}

fn regularized(kernel: &Kernel, eps: f64) -> Array2<f64> {
    let mut m = kernel.values().to_owned();
    for i in 0..m.nrows() {
        m[[i, i]] += eps;
    }
    m
}

/// `I_f(A; Q) = log det(S_A) - log det(S_A - eta^2 S_AQ S_Q^{-1} S_QA)`.
pub(crate) struct LogDetMiFn {
    ground: Arc<Kernel>,
    query_cross: Arc<Kernel>,
    eta2: f64,
    eps: f64,
    /// `(S_Q + eps I)^{-1} S_QU`, one column per candidate.
    g: Array2<f64>,
    /// Pivot seed of the conditioned matrix per candidate.
    diag2: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct LogDetMiMemo {
    l1: CholeskyFactor,
    l2: CholeskyFactor,
    sel: Vec<usize>,
    /// Query-cross column of each selected candidate, cached for gain scans.
    sel_qcols: Vec<Vec<f64>>,
    value: f64,
}

impl LogDetMiFn {
    pub fn new(
        ground: Arc<Kernel>,
        query_cross: Arc<Kernel>,
        query_self: &Kernel,
        eta: f64,
        eps: f64,
    ) -> Result<Self> {
        check_ground(&ground)?;
        check_cross_alignment(&ground, &query_cross, "S^Q")?;
        if query_self.row_ids() != query_cross.row_ids()
            || query_self.col_ids() != query_cross.row_ids()
        {
            return Err(Error::Shape("S_Q must be square over the query ids".into()));
        }
        let lq = CholeskyFactor::factor(regularized(query_self, eps).view())
            .map_err(|e| Error::Numerical(format!("S_Q: {e}")))?;
        let n_q = query_cross.rows();
        let n_u = query_cross.cols();
        let mut g = Array2::zeros((n_q, n_u));
        let mut diag2 = Vec::with_capacity(n_u);
        let eta2 = eta * eta;
        for c in 0..n_u {
            let b: Vec<f64> = (0..n_q).map(|q| query_cross.at(q, c)).collect();
            let x = spd_solve(&lq, &b);
            let corr: f64 = b.iter().zip(&x).map(|(a, b)| a * b).sum();
            diag2.push(ground.at(c, c) + eps - eta2 * corr);
            for (q, v) in x.into_iter().enumerate() {
                g[[q, c]] = v;
            }
        }
        Ok(Self {
            ground,
            query_cross,
            eta2,
            eps,
            g,
            diag2,
        })
    }

    pub fn new_memo(&self) -> LogDetMiMemo {
        LogDetMiMemo::default()
    }

    fn columns(&self, memo: &LogDetMiMemo, col: usize) -> (Vec<f64>, Vec<f64>) {
        let n_q = self.query_cross.rows();
        let g_col: Vec<f64> = (0..n_q).map(|q| self.g[[q, col]]).collect();
        let mut c1 = Vec::with_capacity(memo.sel.len());
        let mut c2 = Vec::with_capacity(memo.sel.len());
        for (k, &a) in memo.sel.iter().enumerate() {
            let s = self.ground.at(a, col);
            c1.push(s);
            let corr: f64 = memo.sel_qcols[k]
                .iter()
                .zip(&g_col)
                .map(|(x, y)| x * y)
                .sum();
            c2.push(s - self.eta2 * corr);
        }
        (c1, c2)
    }

    pub fn gain(&self, memo: &LogDetMiMemo, col: usize) -> Result<f64> {
        let (c1, c2) = self.columns(memo, col);
        let (_, s1) = memo.l1.schur(&c1, self.ground.at(col, col) + self.eps);
        if !(s1.is_finite() && s1 > 0.0) {
            return Err(nonpd("S_A", s1));
        }
        let (_, s2) = memo.l2.schur(&c2, self.diag2[col]);
        if !(s2.is_finite() && s2 > 0.0) {
            return Err(nonpd("conditioned S_A", s2));
        }
        Ok(s1.ln() - s2.ln())
    }

    pub fn commit(&self, memo: &mut LogDetMiMemo, col: usize) -> Result<f64> {
        let (c1, c2) = self.columns(memo, col);
        let (w1, s1) = memo.l1.schur(&c1, self.ground.at(col, col) + self.eps);
        if !(s1.is_finite() && s1 > 0.0) {
            return Err(nonpd("S_A", s1));
        }
        let (w2, s2) = memo.l2.schur(&c2, self.diag2[col]);
        if !(s2.is_finite() && s2 > 0.0) {
            return Err(nonpd("conditioned S_A", s2));
        }
        memo.l1.push_row(w1, s1.sqrt());
        memo.l2.push_row(w2, s2.sqrt());
        let n_q = self.query_cross.rows();
        memo.sel_qcols
            .push((0..n_q).map(|q| self.query_cross.at(q, col)).collect());
        memo.sel.push(col);
        let g = s1.ln() - s2.ln();
        memo.value += g;
        Ok(g)
    }

    pub fn value(&self, memo: &LogDetMiMemo) -> f64 {
        memo.value
    }

    pub fn evaluate(&self, cols: &[usize]) -> Result<f64> {
        if cols.is_empty() {
            return Ok(0.0);
        }
        let n = cols.len();
        let n_q = self.query_cross.rows();
        let mut m1 = Array2::zeros((n, n));
        for (i, &a) in cols.iter().enumerate() {
            for (j, &b) in cols.iter().enumerate() {
                m1[[i, j]] = self.ground.at(a, b);
            }
            m1[[i, i]] += self.eps;
        }
        let mut m2 = m1.clone();
        for (i, &a) in cols.iter().enumerate() {
            for (j, &b) in cols.iter().enumerate() {
                let corr: f64 = (0..n_q)
                    .map(|q| self.query_cross.at(q, a) * self.g[[q, b]])
                    .sum();
                m2[[i, j]] -= self.eta2 * corr;
            }
        }
        let ld1 = CholeskyFactor::factor(m1.view())?.logdet();
        let ld2 = CholeskyFactor::factor(m2.view())?.logdet();
        Ok(ld1 - ld2)
    }
}

/// `f(A | P) = log det(S_A - nu^2 S_AP S_P^{-1} S_PA)`.
pub(crate) struct LogDetCgFn {
    ground: Arc<Kernel>,
    cond_cross: Arc<Kernel>,
    nu2: f64,
    eps: f64,
    /// `(S_P + eps I)^{-1} S_PU`, one column per candidate.
    h: Array2<f64>,
    diag: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct LogDetCgMemo {
    l: CholeskyFactor,
    sel: Vec<usize>,
    sel_pcols: Vec<Vec<f64>>,
    value: f64,
}

impl LogDetCgFn {
    pub fn new(
        ground: Arc<Kernel>,
        cond_cross: Arc<Kernel>,
        cond_self: &Kernel,
        nu: f64,
        eps: f64,
    ) -> Result<Self> {
        check_ground(&ground)?;
        check_cross_alignment(&ground, &cond_cross, "S^P")?;
        if cond_self.row_ids() != cond_cross.row_ids()
            || cond_self.col_ids() != cond_cross.row_ids()
        {
            return Err(Error::Shape(
                "S_P must be square over the conditioning ids".into(),
            ));
        }
        let n_p = cond_cross.rows();
        let n_u = cond_cross.cols();
        let nu2 = nu * nu;
        let mut h = Array2::zeros((n_p, n_u));
        let mut diag = Vec::with_capacity(n_u);
        if n_p > 0 {
            let lp = CholeskyFactor::factor(regularized(cond_self, eps).view())
                .map_err(|e| Error::Numerical(format!("S_P: {e}")))?;
            for c in 0..n_u {
                let b: Vec<f64> = (0..n_p).map(|p| cond_cross.at(p, c)).collect();
                let x = spd_solve(&lp, &b);
                let corr: f64 = b.iter().zip(&x).map(|(a, b)| a * b).sum();
                diag.push(ground.at(c, c) + eps - nu2 * corr);
                for (p, v) in x.into_iter().enumerate() {
                    h[[p, c]] = v;
                }
            }
        } else {
            for c in 0..n_u {
                diag.push(ground.at(c, c) + eps);
            }
        }
        Ok(Self {
            ground,
            cond_cross,
            nu2,
            eps,
            h,
            diag,
        })
    }

    pub fn new_memo(&self) -> LogDetCgMemo {
        LogDetCgMemo::default()
    }

    fn column(&self, memo: &LogDetCgMemo, col: usize) -> Vec<f64> {
        let n_p = self.cond_cross.rows();
        let h_col: Vec<f64> = (0..n_p).map(|p| self.h[[p, col]]).collect();
        memo.sel
            .iter()
            .enumerate()
            .map(|(k, &a)| {
                let corr: f64 = memo.sel_pcols[k]
                    .iter()
                    .zip(&h_col)
                    .map(|(x, y)| x * y)
                    .sum();
                self.ground.at(a, col) - self.nu2 * corr
            })
            .collect()
    }

    pub fn gain(&self, memo: &LogDetCgMemo, col: usize) -> Result<f64> {
        let c = self.column(memo, col);
        let (_, s) = memo.l.schur(&c, self.diag[col]);
        if !(s.is_finite() && s > 0.0) {
            return Err(nonpd("conditioned S_A", s));
        }
        Ok(s.ln())
    }

    pub fn commit(&self, memo: &mut LogDetCgMemo, col: usize) -> Result<f64> {
        let c = self.column(memo, col);
        let (w, s) = memo.l.schur(&c, self.diag[col]);
        if !(s.is_finite() && s > 0.0) {
            return Err(nonpd("conditioned S_A", s));
        }
        memo.l.push_row(w, s.sqrt());
        let n_p = self.cond_cross.rows();
        memo.sel_pcols
            .push((0..n_p).map(|p| self.cond_cross.at(p, col)).collect());
        memo.sel.push(col);
        let g = s.ln();
        memo.value += g;
        Ok(g)
    }

    pub fn value(&self, memo: &LogDetCgMemo) -> f64 {
        memo.value
    }

    pub fn evaluate(&self, cols: &[usize]) -> Result<f64> {
        if cols.is_empty() {
            return Ok(0.0);
        }
        let n = cols.len();
        let n_p = self.cond_cross.rows();
        let mut m = Array2::zeros((n, n));
        for (i, &a) in cols.iter().enumerate() {
            for (j, &b) in cols.iter().enumerate() {
                let corr: f64 = (0..n_p)
                    .map(|p| self.cond_cross.at(p, a) * self.h[[p, b]])
                    .sum();
                m[[i, j]] = self.ground.at(a, b) - self.nu2 * corr;
            }
            m[[i, i]] += self.eps;
        }
        Ok(CholeskyFactor::factor(m.view())?.logdet())
    }
}

/// `I_f(A; Q | P)` as the log of a determinant ratio. Internally tracked as
/// `log det(S'_Q - T_P) - log det(S'_Q - T_{P ∪ A})` with
/// `T_M = (eta S_QM) (S_M + eps I)^{-1} (eta S_MQ)` and `S'_Q = S_Q + eps I`;
/// the `A`-to-`P` cross blocks inside `S_M` are scaled by `nu`.
pub(crate) struct LogDetCmiFn {
    ground: Arc<Kernel>,
    query_cross: Arc<Kernel>,
    cond_cross: Arc<Kernel>,
    cond_self: Arc<Kernel>,
    cond_query: Arc<Kernel>,
    eta: f64,
    nu: f64,
    eps: f64,
    /// `S_Q + eps I` kept dense for the repeated small determinants.
    sq_eps: Array2<f64>,
    l_p: CholeskyFactor,
    /// `L_P^{-1} (eta S_PQ)` rows.
    y_p: Vec<Vec<f64>>,
    t_p: Array2<f64>,
    /// `log det(S'_Q - T_P)`, the constant numerator.
    num: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct LogDetCmiMemo {
    l: CholeskyFactor,
    y: Vec<Vec<f64>>,
    t: Array2<f64>,
    den: f64,
    sel: Vec<usize>,
    value: f64,
}

impl LogDetCmiFn {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ground: Arc<Kernel>,
        query_cross: Arc<Kernel>,
        cond_cross: Arc<Kernel>,
        query_self: &Kernel,
        cond_self: Arc<Kernel>,
        cond_query: Arc<Kernel>,
        eta: f64,
        nu: f64,
        eps: f64,
    ) -> Result<Self> {
        check_ground(&ground)?;
        check_cross_alignment(&ground, &query_cross, "S^Q")?;
        check_cross_alignment(&ground, &cond_cross, "S^P")?;
        if query_self.row_ids() != query_cross.row_ids()
            || query_self.col_ids() != query_cross.row_ids()
        {
            return Err(Error::Shape("S_Q must be square over the query ids".into()));
        }
        if cond_self.row_ids() != cond_cross.row_ids()
            || cond_self.col_ids() != cond_cross.row_ids()
        {
            return Err(Error::Shape(
                "S_P must be square over the conditioning ids".into(),
            ));
        }
        if cond_query.row_ids() != cond_cross.row_ids()
            || cond_query.col_ids() != query_cross.row_ids()
        {
            return Err(Error::Shape(
                "S_PQ must map conditioning rows to query columns".into(),
            ));
        }
        let n_q = query_cross.rows();
        let n_p = cond_cross.rows();
        let sq_eps = regularized(query_self, eps);
        // the numerator also needs S_Q itself to be invertible
        CholeskyFactor::factor(sq_eps.view()).map_err(|e| Error::Numerical(format!("S_Q: {e}")))?;
        let l_p = if n_p > 0 {
            CholeskyFactor::factor(regularized(&cond_self, eps).view())
                .map_err(|e| Error::Numerical(format!("S_P: {e}")))?
        } else {
            CholeskyFactor::empty()
        };
        // Y_P column q solves L_P y = eta * S_Pq; stored row-wise
        let mut y_cols: Vec<Vec<f64>> = Vec::with_capacity(n_q);
        for q in 0..n_q {
            let b: Vec<f64> = (0..n_p).map(|p| eta * cond_query.at(p, q)).collect();
            y_cols.push(l_p.forward_solve(&b));
        }
        let mut y_p = vec![vec![0.0; n_q]; n_p];
        for (q, col) in y_cols.iter().enumerate() {
            for (p, v) in col.iter().enumerate() {
                y_p[p][q] = *v;
            }
        }
        let mut t_p = Array2::zeros((n_q, n_q));
        for i in 0..n_q {
            for j in 0..n_q {
                t_p[[i, j]] = (0..n_p).map(|p| y_p[p][i] * y_p[p][j]).sum();
            }
        }
        let num = CholeskyFactor::factor((&sq_eps - &t_p).view())
            .map_err(|_| {
                Error::Numerical(
                    "S_Q - T_P is not positive definite; query and conditioning kernels are \
                     degenerate"
                        .into(),
                )
            })?
            .logdet();
        Ok(Self {
            ground,
            query_cross,
            cond_cross,
            cond_self,
            cond_query,
            eta,
            nu,
            eps,
            sq_eps,
            l_p,
            y_p,
            t_p,
            num,
        })
    }

    pub fn new_memo(&self) -> LogDetCmiMemo {
        LogDetCmiMemo {
            l: self.l_p.clone(),
            y: self.y_p.clone(),
            t: self.t_p.clone(),
            den: self.num,
            sel: Vec::new(),
            value: 0.0,
        }
    }

    /// New `S_M` column for candidate `col`: conditioning block scaled by nu,
    /// then the selected block.
    fn m_column(&self, memo: &LogDetCmiMemo, col: usize) -> Vec<f64> {
        let n_p = self.cond_cross.rows();
        let mut c = Vec::with_capacity(n_p + memo.sel.len());
        for p in 0..n_p {
            c.push(self.nu * self.cond_cross.at(p, col));
        }
        for &a in &memo.sel {
            c.push(self.ground.at(a, col));
        }
        c
    }

    fn step(&self, memo: &LogDetCmiMemo, col: usize) -> Result<(Vec<f64>, f64, Vec<f64>, f64)> {
        let c = self.m_column(memo, col);
        let (w, s) = memo.l.schur(&c, self.ground.at(col, col) + self.eps);
        if !(s.is_finite() && s > 0.0) {
            return Err(nonpd("S_{P ∪ A}", s));
        }
        let d = s.sqrt();
        let n_q = self.query_cross.rows();
        let mut y_new = Vec::with_capacity(n_q);
        for q in 0..n_q {
            let mut v = self.eta * self.query_cross.at(q, col);
            for (k, wk) in w.iter().enumerate() {
                v -= wk * memo.y[k][q];
            }
            y_new.push(v / d);
        }
        let mut shifted = self.sq_eps.clone() - &memo.t;
        for i in 0..n_q {
            for j in 0..n_q {
                shifted[[i, j]] -= y_new[i] * y_new[j];
            }
        }
        let den = CholeskyFactor::factor(shifted.view())
            .map_err(|e| Error::Numerical(format!("S_Q - T: {e}")))?
            .logdet();
        Ok((w, d, y_new, den))
    }

    pub fn gain(&self, memo: &LogDetCmiMemo, col: usize) -> Result<f64> {
        let (_, _, _, den) = self.step(memo, col)?;
        Ok(memo.den - den)
    }

    pub fn commit(&self, memo: &mut LogDetCmiMemo, col: usize) -> Result<f64> {
        let (w, d, y_new, den) = self.step(memo, col)?;
        let g = memo.den - den;
        memo.l.push_row(w, d);
        for (i, yi) in y_new.iter().enumerate() {
            for (j, yj) in y_new.iter().enumerate() {
                memo.t[[i, j]] += yi * yj;
            }
        }
        memo.y.push(y_new);
        memo.den = den;
        memo.sel.push(col);
        memo.value += g;
        Ok(g)
    }

    pub fn value(&self, memo: &LogDetCmiMemo) -> f64 {
        memo.value
    }

    pub fn evaluate(&self, cols: &[usize]) -> Result<f64> {
        let n_p = self.cond_cross.rows();
        let n_q = self.query_cross.rows();
        let n_m = n_p + cols.len();
        // S_M with nu-scaled cross blocks, regularized on the diagonal
        let mut s_m: Array2<f64> = Array2::zeros((n_m, n_m));
        for p in 0..n_p {
            for p2 in 0..n_p {
                s_m[[p, p2]] = self.cond_self.at(p, p2);
            }
            s_m[[p, p]] += self.eps;
        }
        for (i, &a) in cols.iter().enumerate() {
            for p in 0..n_p {
                let v = self.nu * self.cond_cross.at(p, a);
                s_m[[p, n_p + i]] = v;
                s_m[[n_p + i, p]] = v;
            }
            for (j, &b) in cols.iter().enumerate() {
                s_m[[n_p + i, n_p + j]] = self.ground.at(a, b);
            }
            s_m[[n_p + i, n_p + i]] += self.eps;
        }
        let l = CholeskyFactor::factor(s_m.view())?;
        let mut t: Array2<f64> = Array2::zeros((n_q, n_q));
        let mut y_cols: Vec<Vec<f64>> = Vec::with_capacity(n_q);
        for q in 0..n_q {
            let mut b = Vec::with_capacity(n_m);
            for p in 0..n_p {
                b.push(self.eta * self.cond_query.at(p, q));
            }
            for &a in cols {
                b.push(self.eta * self.query_cross.at(q, a));
            }
            y_cols.push(l.forward_solve(&b));
        }
        for i in 0..n_q {
            for j in 0..n_q {
                t[[i, j]] = y_cols[i].iter().zip(&y_cols[j]).map(|(a, b)| a * b).sum();
            }
        }
        let den = CholeskyFactor::factor((&self.sq_eps - &t).view())?.logdet();
        Ok(self.num - den)
    }
}
