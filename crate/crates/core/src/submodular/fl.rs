//! Facility-location coverage engine.
//!
//! All three facility-location information measures reduce to plain
//! max-coverage over a transformed kernel plus an optional modular bonus:
//!
//! - mutual information: coverage of the query rows of `S^Q`, plus the
//!   modular term `eta * max_{q in Q} S_qx` per selected candidate;
//! - conditional gain: `max(max_{j in A} S_ij - nu * maxP_i, 0)` equals
//!   `max_{j in A} relu(S_ij - nu * maxP_i)`, coverage over a thresholded
//!   ground kernel;
//! - conditional mutual information: the same with the entry first capped at
//!   `eta * maxQ_i` (min against a constant commutes with the max over `A`).
//!
//! The memo keeps the running per-row coverage, so a marginal gain is one
//! pass over the covered rows.

use crate::error::{Error, Result};
use crate::kernels::Kernel;
use std::sync::Arc;

pub(crate) struct FlCoverage {
    kernel: Arc<Kernel>,
    /// Symmetric kernel whose rows and columns are the candidate list, so a
    /// candidate's column can be scanned through its (contiguous) row.
    aligned: bool,
    /// Per-row cap applied inside the max (`eta * maxQ_i`); `None` = no cap.
    cap: Option<Vec<f64>>,
    /// Per-row threshold subtracted before clamping (`nu * maxP_i`).
    sub: Option<Vec<f64>>,
    /// Per-candidate modular bonus.
    modular: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub(crate) struct CoverageMemo {
    cov: Vec<f64>,
    value: f64,
}

impl FlCoverage {
    /// Mutual-information form over the query cross kernel `S^Q` (Q x U).
    pub fn mi(query_cross: Arc<Kernel>, eta: f64) -> Self {
        let modular = query_cross.col_max().into_iter().map(|m| eta * m).collect();
        Self {
            aligned: false,
            cap: None,
            sub: None,
            modular: Some(modular),
            kernel: query_cross,
        }
    }

    /// Conditional-gain form over the symmetric ground kernel, thresholded by
    /// `nu * max_{j in P} S_ij` per ground row.
    pub fn cg(ground: Arc<Kernel>, cond_cross: &Kernel, nu: f64) -> Result<Self> {
        check_ground(&ground)?;
        check_cross_alignment(&ground, cond_cross, "S^P")?;
        let sub = cond_cross.col_max().into_iter().map(|m| nu * m).collect();
        Ok(Self {
            aligned: true,
            cap: None,
            sub: Some(sub),
            modular: None,
            kernel: ground,
        })
    }

    /// Conditional-mutual-information form: capped by the query column maxima
    /// and thresholded by the conditioning column maxima.
    pub fn cmi(
        ground: Arc<Kernel>,
        query_cross: &Kernel,
        cond_cross: &Kernel,
        eta: f64,
        nu: f64,
    ) -> Result<Self> {
        check_ground(&ground)?;
        check_cross_alignment(&ground, query_cross, "S^Q")?;
        check_cross_alignment(&ground, cond_cross, "S^P")?;
        let cap = query_cross.col_max().into_iter().map(|m| eta * m).collect();
        let sub = cond_cross.col_max().into_iter().map(|m| nu * m).collect();
        Ok(Self {
            aligned: true,
            cap: Some(cap),
            sub: Some(sub),
            modular: None,
            kernel: ground,
        })
    }

    pub fn kernel(&self) -> &Arc<Kernel> {
        &self.kernel
    }

    #[inline]
    fn effective(&self, raw: f64, row: usize) -> f64 {
        let capped = match &self.cap {
            Some(cap) => raw.min(cap[row]),
            None => raw,
        };
        let t = match &self.sub {
            Some(sub) => capped - sub[row],
            None => capped,
        };
        t.max(0.0)
    }

    pub fn new_memo(&self) -> CoverageMemo {
        CoverageMemo {
            cov: vec![0.0; self.kernel.rows()],
            value: 0.0,
        }
    }

    pub fn gain(&self, memo: &CoverageMemo, col: usize) -> f64 {
        let mut g = 0.0;
        if self.aligned {
            // symmetric kernel: the candidate's column is its row
            for (row, (&s, &c)) in self
                .kernel
                .row(col)
                .iter()
                .zip(memo.cov.iter())
                .enumerate()
            {
                let t = self.effective(s, row);
                if t > c {
                    g += t - c;
                }
            }
        } else {
            for (row, &c) in memo.cov.iter().enumerate() {
                let t = self.effective(self.kernel.at(row, col), row);
                if t > c {
                    g += t - c;
                }
            }
        }
        if let Some(m) = &self.modular {
            g += m[col];
        }
        g
    }

    pub fn commit(&self, memo: &mut CoverageMemo, col: usize) -> f64 {
        let mut g = 0.0;
        for row in 0..memo.cov.len() {
            let raw = if self.aligned {
                self.kernel.at(col, row)
            } else {
                self.kernel.at(row, col)
            };
            let t = self.effective(raw, row);
            if t > memo.cov[row] {
                g += t - memo.cov[row];
                memo.cov[row] = t;
            }
        }
        if let Some(m) = &self.modular {
            g += m[col];
        }
        memo.value += g;
        g
    }

    pub fn value(&self, memo: &CoverageMemo) -> f64 {
        memo.value
    }

    /// From-scratch evaluation used by consistency oracles.
    pub fn evaluate(&self, cols: &[usize]) -> f64 {
        let mut total = 0.0;
        for row in 0..self.kernel.rows() {
            let mut best = 0.0f64;
            for &col in cols {
                let raw = if self.aligned {
                    self.kernel.at(col, row)
                } else {
                    self.kernel.at(row, col)
                };
                best = best.max(self.effective(raw, row));
            }
            total += best;
        }
        if let Some(m) = &self.modular {
            total += cols.iter().map(|&c| m[c]).sum::<f64>();
        }
        total
    }
}

pub(crate) fn check_ground(ground: &Kernel) -> Result<()> {
    if !ground.is_symmetric() {
        return Err(Error::Shape(
            "ground kernel must be symmetric over the candidate set".into(),
        ));
    }
    Ok(())
}

pub(crate) fn check_cross_alignment(ground: &Kernel, cross: &Kernel, name: &str) -> Result<()> {
    if cross.col_ids() != ground.col_ids() {
        return Err(Error::Shape(format!(
            "{name} columns must match the ground kernel candidate ids"
        )));
    }
    Ok(())
}

/// Ground symmetry plus cross-kernel column alignment in one call.
pub(crate) fn alignment_checks(ground: &Kernel, cross: &Kernel, name: &str) -> Result<()> {
    check_ground(ground)?;
    check_cross_alignment(ground, cross, name)
}
