use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{relative_gap, ConicProgram, Solution, SolveStatus};
use crate::linalg::min_eigenvalue;

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn dual_residual(prog: &ConicProgram, duals: &[DMatrix<f64>], lambda: &[f64]) -> f64 {
    let mut r = prog.objective().to_vec();
    let mut adj = vec![0.0; prog.num_vars()];
    for (b, y) in prog.blocks().iter().zip(duals) {
        b.adjoint_into(y, &mut adj);
    }
    for (e, l) in prog.equalities().iter().zip(lambda) {
        for &(k, v) in &e.coeffs {
            adj[k] += v * l;
        }
    }
    for (ri, a) in r.iter_mut().zip(&adj) {
        *ri -= a;
    }
    norm_inf(&r) / (1.0 + norm_inf(prog.objective()))
}

fn dual_objective(prog: &ConicProgram, duals: &[DMatrix<f64>], lambda: &[f64]) -> f64 {
    let f: f64 = prog
        .equalities()
        .iter()
        .zip(lambda)
        .map(|(e, l)| e.rhs * l)
        .sum();
    f - prog
        .blocks()
        .iter()
        .zip(duals)
        .map(|(b, y)| b.constant_inner(y))
        .sum::<f64>()
}

pub(crate) fn objective_scale(prog: &ConicProgram) -> f64 {
    let s = norm_inf(prog.objective());
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

/// Fill every derived field of a [`Solution`] from the raw point.
pub(crate) fn evaluate_point(
    prog: &ConicProgram,
    z: Vec<f64>,
    block_duals: Vec<DMatrix<f64>>,
    eq_duals: Vec<f64>,
    status: SolveStatus,
    iterations: usize,
) -> Solution {
    let rhs_norm = prog
        .equalities()
        .iter()
        .map(|e| e.rhs.abs())
        .fold(0.0, f64::max);
    let primal_residual = norm_inf(&prog.equality_residual(&z)) / (1.0 + rhs_norm);
    let dual_residual = dual_residual(prog, &block_duals, &eq_duals);
    let min_block_eigenvalue = prog
        .blocks()
        .iter()
        .map(|b| min_eigenvalue(&b.evaluate(&z)))
        .fold(f64::INFINITY, f64::min);
    let primal_objective = prog.objective_value(&z);
    let dual_objective = dual_objective(prog, &block_duals, &eq_duals);
    Solution {
        status,
        z,
        block_duals,
        eq_duals,
        primal_objective,
        dual_objective,
        primal_residual,
        dual_residual,
        min_block_eigenvalue,
        gap_abs: (primal_objective - dual_objective).abs(),
        gap_rel: relative_gap(primal_objective, dual_objective),
        iterations,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    /// Set when the solution is not an optimal one; nothing else is checked.
    pub refused: Option<String>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// `min_j lambda_min(block_j(z)) / (1 + ||block_j(z)||_max)`.
    pub min_block_eigenvalue: f64,
    pub min_dual_eigenvalue: f64,
    /// `sum_j <block_j(z), Y_j> / (1 + |p| + |d|)`.
    pub complementarity: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub gap_abs: f64,
    pub gap_rel: f64,
    pub feasible: bool,
    pub weak_duality: bool,
    pub passed: bool,
}

/// Recompute residuals, eigenvalues, complementarity and the duality gap
/// of `s` against `prog` from scratch. Verdicts use tolerance `tol`.
pub fn certify(prog: &ConicProgram, s: &Solution, tol: f64) -> CertificateReport {
    let nan = f64::NAN;
    if s.status != SolveStatus::Optimal {
        return CertificateReport {
            refused: Some(format!("solver status {:?}", s.status)),
            primal_residual: nan,
            dual_residual: nan,
            min_block_eigenvalue: nan,
            min_dual_eigenvalue: nan,
            complementarity: nan,
            primal_objective: nan,
            dual_objective: nan,
            gap_abs: nan,
            gap_rel: nan,
            feasible: false,
            weak_duality: false,
            passed: false,
        };
    }
    let e = evaluate_point(
        prog,
        s.z.clone(),
        s.block_duals.clone(),
        s.eq_duals.clone(),
        s.status,
        s.iterations,
    );
    let mut min_rel = f64::INFINITY;
    let mut min_dual = f64::INFINITY;
    let mut comp = 0.0;
    for (b, y) in prog.blocks().iter().zip(&s.block_duals) {
        let m = b.evaluate(&s.z);
        min_rel = min_rel.min(min_eigenvalue(&m) / (1.0 + m.amax()));
        min_dual = min_dual.min(min_eigenvalue(y) / (1.0 + y.amax()));
        comp += m.iter().zip(y.iter()).map(|(a, b)| a * b).sum::<f64>();
    }
    let complementarity = comp.abs() / (1.0 + e.primal_objective.abs() + e.dual_objective.abs());
    let feasible = e.primal_residual <= tol && min_rel >= -tol;
    let weak_duality =
        e.dual_objective <= e.primal_objective + tol * (1.0 + e.primal_objective.abs());
    let gap_rel = e.gap_rel;
    let passed =
        feasible && weak_duality && gap_rel <= tol && e.dual_residual <= tol && min_dual >= -tol;
    CertificateReport {
        refused: None,
        primal_residual: e.primal_residual,
        dual_residual: e.dual_residual,
        min_block_eigenvalue: min_rel,
        min_dual_eigenvalue: min_dual,
        complementarity,
        primal_objective: e.primal_objective,
        dual_objective: e.dual_objective,
        gap_abs: e.gap_abs,
        gap_rel,
        feasible,
        weak_duality,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::super::{solve, LmiBlock, SolveOptions};
    use super::*;

    fn two_by_two() -> ConicProgram {
        let mut p = ConicProgram::new(2);
        p.set_objective(0, 1.0);
        p.set_objective(1, 1.0);
        let mut b = LmiBlock::new(2);
        b.add_constant(0, 1, 1.0);
        b.add_term(0, 0, 0, 1.0);
        b.add_term(1, 1, 1, 1.0);
        p.add_block(b);
        p
    }

    #[test]
    fn certifies_and_flags_tampering() {
        let p = two_by_two();
        let s = solve(&p, &SolveOptions::default()).unwrap();
        let r = certify(&p, &s, 1e-7);
        assert!(r.passed, "{r:?}");
        let mut bad = s.clone();
        bad.z[0] -= 1e-3;
        bad.z[1] -= 1e-3;
        let r = certify(&p, &bad, 1e-7);
        assert!(!r.feasible);
        assert!(!r.passed);
    }

    #[test]
    fn refuses_infeasible() {
        let mut p = ConicProgram::new(1);
        let mut b = LmiBlock::new(1);
        b.add_constant(0, 0, -1.0);
        p.add_block(b);
        let s = solve(&p, &SolveOptions::default()).unwrap();
        let r = certify(&p, &s, 1e-7);
        assert!(r.refused.is_some() && !r.passed);
    }
}
