//! Linear-matrix-inequality semidefinite programs.
//!
//! ```text
//! minimize    c^T z
//! subject to  B0_j + sum_k z_k B_jk  is PSD   for every block j
//!             E z = f
//! ```
//!
//! Solved by a primal-dual interior-point method on the homogeneous
//! self-dual embedding ([`solve`]); solutions can be re-checked from scratch
//! with [`certify`]. Programs round-trip through a plain text format
//! ([`text`]).

mod certify;
mod ipm;
pub mod text;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use certify::{certify, CertificateReport};
pub use ipm::solve;

/// One symmetric block `B0 + sum_k z_k B_k`, stored by upper-triangle entries.
///
/// Each off-diagonal pair is stored once as `(i, j)` with `i <= j` and stands
/// for both `(i, j)` and `(j, i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LmiBlock {
    side: usize,
    constant: Vec<(usize, usize, f64)>,
    terms: Vec<(usize, usize, usize, f64)>,
}

impl LmiBlock {
    pub fn new(side: usize) -> Self {
        Self {
            side,
            constant: Vec::new(),
            terms: Vec::new(),
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    fn order(i: usize, j: usize) -> (usize, usize) {
        if i <= j {
            (i, j)
        } else {
            (j, i)
        }
    }

    /// Add `value` to the constant matrix at `(i, j)` and `(j, i)`.
    pub fn add_constant(&mut self, i: usize, j: usize, value: f64) {
        assert!(i < self.side && j < self.side, "block entry out of range");
        if value != 0.0 {
            let (a, b) = Self::order(i, j);
            self.constant.push((a, b, value));
        }
    }

    /// Add `value` to the coefficient matrix of variable `var` at `(i, j)` and `(j, i)`.
    pub fn add_term(&mut self, var: usize, i: usize, j: usize, value: f64) {
        assert!(i < self.side && j < self.side, "block entry out of range");
        if value != 0.0 {
            let (a, b) = Self::order(i, j);
            self.terms.push((var, a, b, value));
        }
    }

    pub fn constant_entries(&self) -> &[(usize, usize, f64)] {
        &self.constant
    }

    /// `(var, i, j, value)` entries, possibly with repeats (repeats add up).
    pub fn term_entries(&self) -> &[(usize, usize, usize, f64)] {
        &self.terms
    }

    pub fn max_var(&self) -> Option<usize> {
        self.terms.iter().map(|t| t.0).max()
    }

    /// Dense `B0 + sum_k z_k B_k`.
    pub fn evaluate(&self, z: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.side, self.side);
        for &(i, j, v) in &self.constant {
            m[(i, j)] += v;
            if i != j {
                m[(j, i)] += v;
            }
        }
        for &(k, i, j, v) in &self.terms {
            let w = v * z[k];
            m[(i, j)] += w;
            if i != j {
                m[(j, i)] += w;
            }
        }
        m
    }

    /// Dense constant matrix `B0`.
    pub fn constant_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.side, self.side);
        for &(i, j, v) in &self.constant {
            m[(i, j)] += v;
            if i != j {
                m[(j, i)] += v;
            }
        }
        m
    }

    /// Adds `<B_k, Y>` into `out[k]` for every variable of the block.
    pub fn adjoint_into(&self, y: &DMatrix<f64>, out: &mut [f64]) {
        for &(k, i, j, v) in &self.terms {
            let w = if i == j {
                y[(i, i)]
            } else {
                y[(i, j)] + y[(j, i)]
            };
            out[k] += v * w;
        }
    }

    /// `<B0, Y>`.
    pub fn constant_inner(&self, y: &DMatrix<f64>) -> f64 {
        self.constant
            .iter()
            .map(|&(i, j, v)| {
                if i == j {
                    v * y[(i, i)]
                } else {
                    v * (y[(i, j)] + y[(j, i)])
                }
            })
            .sum()
    }
}

/// Sparse equality row `sum_k coef_k z_k = rhs`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct EqualityRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConicProgram {
    m: usize,
    objective: Vec<f64>,
    blocks: Vec<LmiBlock>,
    equalities: Vec<EqualityRow>,
}

impl ConicProgram {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            objective: vec![0.0; m],
            blocks: Vec::new(),
            equalities: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.m
    }

    pub fn set_objective(&mut self, var: usize, value: f64) {
        self.objective[var] = value;
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn add_block(&mut self, block: LmiBlock) {
        self.blocks.push(block);
    }

    pub fn blocks(&self) -> &[LmiBlock] {
        &self.blocks
    }

    pub fn add_equality(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.equalities.push(EqualityRow { coeffs, rhs });
    }

    pub fn equalities(&self) -> &[EqualityRow] {
        &self.equalities
    }

    /// Check dimensions and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() && self.equalities.is_empty() {
            return Err(Error::Validation(
                "program needs at least one block or equality".into(),
            ));
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite objective coefficient".into()));
        }
        for (j, b) in self.blocks.iter().enumerate() {
            if b.side == 0 {
                return Err(Error::Validation(format!("block {j} has side 0")));
            }
            if let Some(k) = b.max_var() {
                if k >= self.m {
                    return Err(Error::Structure(format!(
                        "block {j} references variable {k} of {}",
                        self.m
                    )));
                }
            }
            let finite = b.constant.iter().all(|e| e.2.is_finite())
                && b.terms.iter().all(|e| e.3.is_finite());
            if !finite {
                return Err(Error::Validation(format!("block {j} has non-finite data")));
            }
        }
        for (r, e) in self.equalities.iter().enumerate() {
            if !e.rhs.is_finite() || e.coeffs.iter().any(|c| !c.1.is_finite()) {
                return Err(Error::Validation(format!(
                    "equality {r} has non-finite data"
                )));
            }
            if let Some(&(k, _)) = e.coeffs.iter().find(|c| c.0 >= self.m) {
                return Err(Error::Structure(format!(
                    "equality {r} references variable {k} of {}",
                    self.m
                )));
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, z: &[f64]) -> f64 {
        self.objective.iter().zip(z).map(|(c, v)| c * v).sum()
    }

    /// `E z - f` per row.
    pub fn equality_residual(&self, z: &[f64]) -> Vec<f64> {
        self.equalities
            .iter()
            .map(|e| e.coeffs.iter().map(|&(k, v)| v * z[k]).sum::<f64>() - e.rhs)
            .collect()
    }

    /// Multiply every objective coefficient by `factor`.
    pub fn scale_objective(&mut self, factor: f64) {
        for c in &mut self.objective {
            *c *= factor;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    /// Farkas certificate found: no `z` satisfies the constraints.
    PrimalInfeasible,
    /// Improving ray found: the objective is unbounded below.
    DualInfeasible,
    MaxIters,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_infeasible(self) -> bool {
        matches!(
            self,
            SolveStatus::PrimalInfeasible | SolveStatus::DualInfeasible
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol_feas: f64,
    /// Bound on [`relative_gap`], enforced both in the caller's units and for
    /// the objective scaled to unit max norm. The second test is the binding
    /// one when `|c|_inf <= 1`, and then rescaling `c` does not move `z`.
    pub tol_gap: f64,
    pub tol_infeas: f64,
    pub max_iters: usize,
    /// Kept for reproducibility records; the method itself is deterministic.
    pub seed: u64,
    pub verbose: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_feas: 1e-8,
            tol_gap: 1e-8,
            tol_infeas: 1e-8,
            max_iters: 200,
            seed: 0,
            verbose: false,
        }
    }
}

/// Solver output. Dual variables satisfy `c = A*(Y) + E^T lambda` at optimality,
/// with dual objective `f^T lambda - sum_j <B0_j, Y_j>`.
#[derive(Clone, Debug)]
pub struct Solution {
    pub status: SolveStatus,
    pub z: Vec<f64>,
    pub block_duals: Vec<DMatrix<f64>>,
    pub eq_duals: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// `||E z - f||_inf / (1 + ||f||_inf)`.
    pub primal_residual: f64,
    /// `||c - A*(Y) - E^T lambda||_inf / (1 + ||c||_inf)`.
    pub dual_residual: f64,
    /// Smallest eigenvalue over all blocks evaluated at `z`.
    pub min_block_eigenvalue: f64,
    pub gap_abs: f64,
    pub gap_rel: f64,
    pub iterations: usize,
}

/// Relative duality gap used throughout: `|p - d| / (1 + |p| + |d|)`.
pub fn relative_gap(primal: f64, dual: f64) -> f64 {
    (primal - dual).abs() / (1.0 + primal.abs() + dual.abs())
}
