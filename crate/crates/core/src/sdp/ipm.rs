//! Homogeneous self-dual interior-point method with Nesterov-Todd scaling and
//! a Mehrotra predictor-corrector.
//!
//! Conic form used internally: minimize `c^T x` s.t. `A x + s = b`, `s` in the
//! product of a zero cone (the equalities) and PSD cones (the blocks), where a
//! PSD block has `A_j x = -sum_k x_k B_jk` and `b_j = B0_j`.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector};

use super::{certify::evaluate_point, ConicProgram, Solution, SolveOptions, SolveStatus};
use crate::error::{Error, Result};
use crate::linalg::{independent_rows, min_eigenvalue};

struct Block {
    side: usize,
    b0: DMatrix<f64>,
    has_b0: bool,
    /// per variable: merged upper-triangle entries
    groups: Vec<(usize, Vec<(usize, usize, f64)>)>,
}

impl Block {
    fn new(src: &super::LmiBlock) -> Self {
        let mut t = src.term_entries().to_vec();
        t.sort_by_key(|a| (a.0, a.1, a.2));
        let mut groups: Vec<(usize, Vec<(usize, usize, f64)>)> = Vec::new();
        for (k, i, j, v) in t {
            match groups.last_mut() {
                Some((gk, ents)) if *gk == k => match ents.last_mut() {
                    Some(e) if e.0 == i && e.1 == j => e.2 += v,
                    _ => ents.push((i, j, v)),
                },
                _ => groups.push((k, vec![(i, j, v)])),
            }
        }
        for g in &mut groups {
            g.1.retain(|e| e.2 != 0.0);
        }
        groups.retain(|g| !g.1.is_empty());
        let b0 = src.constant_matrix();
        let has_b0 = b0.iter().any(|v| *v != 0.0);
        Self {
            side: src.side(),
            b0,
            has_b0,
            groups,
        }
    }

    /// `sum_k x_k B_k`
    fn apply(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.side, self.side);
        for (k, ents) in &self.groups {
            let xk = x[*k];
            if xk == 0.0 {
                continue;
            }
            for &(i, j, v) in ents {
                m[(i, j)] += v * xk;
                if i != j {
                    m[(j, i)] += v * xk;
                }
            }
        }
        m
    }

    /// `out_k += <B_k, Y>`
    fn adjoint(&self, y: &DMatrix<f64>, out: &mut [f64]) {
        for (k, ents) in &self.groups {
            let mut acc = 0.0;
            for &(i, j, v) in ents {
                acc += if i == j {
                    v * y[(i, i)]
                } else {
                    v * (y[(i, j)] + y[(j, i)])
                };
            }
            out[*k] += acc;
        }
    }

    /// Adds `tr(B_k V B_l V)` for all variable pairs of the block into `m`.
    fn schur_into(&self, v: &DMatrix<f64>, m: &mut Mat<f64>) {
        let s = self.side;
        let mut pos = vec![usize::MAX; s];
        for (gi, (k, ents)) in self.groups.iter().enumerate() {
            let mut rows: Vec<usize> = ents.iter().flat_map(|e| [e.0, e.1]).collect();
            rows.sort_unstable();
            rows.dedup();
            let nr = rows.len();
            for (ri, &a) in rows.iter().enumerate() {
                pos[a] = ri;
            }
            // P = B_k V stored by column: p[d * nr + ri]
            let mut p = vec![0.0; nr * s];
            for &(a, b, val) in ents {
                let (pa, pb) = (pos[a], pos[b]);
                for d in 0..s {
                    p[d * nr + pa] += val * v[(b, d)];
                }
                if a != b {
                    for d in 0..s {
                        p[d * nr + pb] += val * v[(a, d)];
                    }
                }
            }
            // rows of V restricted to the columns in `rows`: vg[c * nr + ri]
            let mut vg = vec![0.0; nr * s];
            for c in 0..s {
                for (ri, &a) in rows.iter().enumerate() {
                    vg[c * nr + ri] = v[(c, a)];
                }
            }
            for (l, ents2) in &self.groups[gi..] {
                let mut acc = 0.0;
                for &(c, d, w) in ents2 {
                    let t: f64 = vg[c * nr..(c + 1) * nr]
                        .iter()
                        .zip(&p[d * nr..(d + 1) * nr])
                        .map(|(x, y)| x * y)
                        .sum();
                    acc += if c == d { w * t } else { 2.0 * w * t };
                }
                m[(*k, *l)] += acc;
                if k != l {
                    m[(*l, *k)] += acc;
                }
            }
            for &a in &rows {
                pos[a] = usize::MAX;
            }
        }
    }
}

/// Nesterov-Todd scaling of one block: `W = R R^T` with `R^{-1} S R^{-T} = R^T Y R = diag(lambda)`.
struct Scaling {
    r: DMatrix<f64>,
    rinv: DMatrix<f64>,
    lambda: DVector<f64>,
    winv: DMatrix<f64>,
}

fn nt_scaling(s: &DMatrix<f64>, y: &DMatrix<f64>) -> Option<Scaling> {
    let ls = s.clone().cholesky()?.l();
    let ly = y.clone().cholesky()?.l();
    let svd = (ly.transpose() * &ls).svd(true, true);
    let v = svd.v_t?.transpose();
    let lambda = svd.singular_values;
    if lambda.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return None;
    }
    let n = s.nrows();
    let mut r = &ls * &v;
    let mut vt = v.transpose();
    for i in 0..n {
        let f = lambda[i].sqrt();
        r.column_mut(i).scale_mut(1.0 / f);
        vt.row_mut(i).scale_mut(f);
    }
    let lsinv = ls.solve_lower_triangular(&DMatrix::identity(n, n))?;
    let rinv = vt * lsinv;
    let winv = rinv.transpose() * &rinv;
    Some(Scaling {
        r,
        rinv,
        lambda,
        winv,
    })
}

/// Largest step `alpha` keeping `diag(lambda) + alpha * d` PSD.
fn max_step(lambda: &DVector<f64>, d: &DMatrix<f64>) -> f64 {
    let n = lambda.len();
    let mut m = d.clone();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] /= (lambda[i] * lambda[j]).sqrt();
        }
    }
    let m = (&m + m.transpose()) * 0.5;
    let rho = min_eigenvalue(&m);
    if rho < 0.0 {
        -1.0 / rho
    } else {
        f64::INFINITY
    }
}

fn jordan(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    (a * b + b * a) * 0.5
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn sym(a: DMatrix<f64>) -> DMatrix<f64> {
    (&a + a.transpose()) * 0.5
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

struct Kkt {
    m: usize,
    llt: faer::linalg::solvers::Llt<f64>,
    /// equalities, row-scaled
    eq: Vec<Vec<(usize, f64)>>,
    /// M^{-1} E^T (m x p) and Cholesky of E M^{-1} E^T
    x_et: Option<Mat<f64>>,
    se: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl Kkt {
    fn solve_m(&self, r: &[f64]) -> Vec<f64> {
        let b = Mat::from_fn(self.m, 1, |i, _| r[i]);
        let x = self.llt.solve(&b);
        (0..self.m).map(|i| x[(i, 0)]).collect()
    }

    /// Solve `[M E^T; E 0] [x; y] = [r1; u_eq]`.
    fn solve(&self, r1: &[f64], u_eq: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let minv_r = self.solve_m(r1);
        let (Some(xe), Some(se)) = (&self.x_et, &self.se) else {
            return (minv_r, Vec::new());
        };
        let p = self.eq.len();
        let mut rhs = DVector::zeros(p);
        for (i, row) in self.eq.iter().enumerate() {
            rhs[i] = row.iter().map(|&(k, v)| v * minv_r[k]).sum::<f64>() - u_eq[i];
        }
        let y = se.solve(&rhs);
        let mut x = minv_r;
        for k in 0..self.m {
            let mut acc = 0.0;
            for i in 0..p {
                acc += xe[(k, i)] * y[i];
            }
            x[k] -= acc;
        }
        (x, y.iter().copied().collect())
    }
}

struct Work {
    m: usize,
    c: Vec<f64>,
    eq: Vec<Vec<(usize, f64)>>,
    f: Vec<f64>,
    eq_scale: Vec<f64>,
    blocks: Vec<Block>,
}

impl Work {
    fn e_mul(&self, x: &[f64]) -> Vec<f64> {
        self.eq
            .iter()
            .map(|row| row.iter().map(|&(k, v)| v * x[k]).sum())
            .collect()
    }

    fn et_mul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (row, yi) in self.eq.iter().zip(y) {
            for &(k, v) in row {
                out[k] += v * yi;
            }
        }
        out
    }

    fn factor(&self, scalings: &[Scaling]) -> Result<Kkt> {
        let m = self.m;
        let mut mm = Mat::<f64>::zeros(m, m);
        for (b, sc) in self.blocks.iter().zip(scalings) {
            b.schur_into(&sc.winv, &mut mm);
        }
        let maxd = (0..m).map(|i| mm[(i, i)]).fold(0.0, f64::max).max(1e-300);
        let mut reg = 1e-12;
        let llt = loop {
            let mut a = mm.clone();
            for i in 0..m {
                a[(i, i)] += reg * maxd;
            }
            match a.llt(Side::Lower) {
                Ok(l) => break l,
                Err(_) if reg < 1e-4 => reg *= 100.0,
                Err(_) => {
                    return Err(Error::Solver(
                        "Schur complement not positive definite".into(),
                    ))
                }
            }
        };
        drop(mm);
        let p = self.eq.len();
        let mut kkt = Kkt {
            m,
            llt,
            eq: self.eq.clone(),
            x_et: None,
            se: None,
        };
        if p > 0 {
            let et = Mat::from_fn(m, p, |_, _| 0.0);
            let mut et = et;
            for (i, row) in self.eq.iter().enumerate() {
                for &(k, v) in row {
                    et[(k, i)] += v;
                }
            }
            let xe = kkt.llt.solve(&et);
            let mut se = DMatrix::zeros(p, p);
            for (i, row) in self.eq.iter().enumerate() {
                for j in 0..p {
                    se[(i, j)] = row.iter().map(|&(k, v)| v * xe[(k, j)]).sum();
                }
            }
            let se = sym(se);
            let maxd = (0..p).map(|i| se[(i, i)]).fold(0.0, f64::max).max(1e-300);
            let mut reg = 1e-12;
            let chol = loop {
                let mut a = se.clone();
                for i in 0..p {
                    a[(i, i)] += reg * maxd;
                }
                match a.cholesky() {
                    Some(c) => break c,
                    None if reg < 1e-4 => reg *= 100.0,
                    None => {
                        return Err(Error::Solver(
                            "equality Schur complement not positive definite".into(),
                        ))
                    }
                }
            };
            kkt.x_et = Some(xe);
            kkt.se = Some(chol);
        }
        Ok(kkt)
    }
}

#[derive(Clone)]
struct Iterate {
    x: Vec<f64>,
    yeq: Vec<f64>,
    s: Vec<DMatrix<f64>>,
    y: Vec<DMatrix<f64>>,
    tau: f64,
    kappa: f64,
}

struct Direction {
    x: Vec<f64>,
    yeq: Vec<f64>,
    s: Vec<DMatrix<f64>>,
    y: Vec<DMatrix<f64>>,
    tau: f64,
    kappa: f64,
}

/// Solution of one reduced KKT system plus `b^T y` of that solution.
struct KSol {
    x: Vec<f64>,
    yeq: Vec<f64>,
    bty: f64,
}

fn ksolve(
    w: &Work,
    kkt: &Kkt,
    sc: &[Scaling],
    u_x: &[f64],
    u_eq: &[f64],
    u_blk: &[DMatrix<f64>],
    g_blk: Option<&[DMatrix<f64>]>,
) -> KSol {
    // W^-1 (u + A x) W^-1 - g; the `g` part is already in dual space, which
    // keeps its O(1) entries out of the ill-conditioned sandwich
    let dual_of = |j: usize, x: Option<&[f64]>| {
        let (b, s) = (&w.blocks[j], &sc[j]);
        let v = match x {
            Some(x) => &u_blk[j] + b.apply(x),
            None => u_blk[j].clone(),
        };
        let t = &s.winv * v * &s.winv;
        match g_blk {
            Some(g) => t - &g[j],
            None => t,
        }
    };
    let mut r1 = u_x.to_vec();
    let mut adj = vec![0.0; w.m];
    for (j, b) in w.blocks.iter().enumerate() {
        b.adjoint(&dual_of(j, None), &mut adj);
    }
    for (r, a) in r1.iter_mut().zip(&adj) {
        *r -= a;
    }
    let (mut x, mut yeq) = kkt.solve(&r1, u_eq);
    // iterative refinement; the residual is formed as u_x - E^T y - A*(W^-1 (u + A x) W^-1)
    // so the large terms of r1 and M x never cancel against each other
    let residual = |x: &[f64], yeq: &[f64]| {
        let mut res1 = u_x.to_vec();
        let ety = w.et_mul(yeq);
        let mut adj = vec![0.0; w.m];
        for (j, b) in w.blocks.iter().enumerate() {
            b.adjoint(&dual_of(j, Some(x)), &mut adj);
        }
        for k in 0..w.m {
            res1[k] -= ety[k] + adj[k];
        }
        let ex = w.e_mul(x);
        let res2: Vec<f64> = u_eq.iter().zip(&ex).map(|(u, e)| u - e).collect();
        (res1, res2)
    };
    let scale = norm_inf(&r1).max(norm_inf(u_eq)).max(1e-300);
    let (mut res1, mut res2) = residual(&x, &yeq);
    let mut rn = norm_inf(&res1).max(norm_inf(&res2));
    for _ in 0..3 {
        if rn <= 1e-15 * scale {
            break;
        }
        let (dx, dy) = kkt.solve(&res1, &res2);
        let xn: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
        let yn: Vec<f64> = yeq.iter().zip(&dy).map(|(a, b)| a + b).collect();
        let (r1n, r2n) = residual(&xn, &yn);
        let rnn = norm_inf(&r1n).max(norm_inf(&r2n));
        if rnn >= rn {
            break;
        }
        x = xn;
        yeq = yn;
        res1 = r1n;
        res2 = r2n;
        rn = rnn;
    }
    let mut bty: f64 = w.f.iter().zip(&yeq).map(|(a, b)| a * b).sum();
    for (j, b) in w.blocks.iter().enumerate() {
        if b.has_b0 {
            bty -= inner(&b.b0, &dual_of(j, Some(&x)));
        }
    }
    KSol { x, yeq, bty }
}

/// Build the full direction from the two KKT solves and the `tau` equation.
#[allow(clippy::too_many_arguments)]
fn direction(
    w: &Work,
    it: &Iterate,
    sol1: &KSol,
    sol2: &KSol,
    eta: f64,
    r_blk: &[DMatrix<f64>],
    r_tau: f64,
    g_blk: &[DMatrix<f64>],
    d_tk: f64,
    sc: &[Scaling],
) -> Direction {
    let ctx1: f64 = w.c.iter().zip(&sol1.x).map(|(a, b)| a * b).sum();
    let ctx2: f64 = w.c.iter().zip(&sol2.x).map(|(a, b)| a * b).sum();
    let num = -eta * r_tau - ctx2 - sol2.bty - d_tk / it.tau;
    let den = ctx1 + sol1.bty - it.kappa / it.tau;
    let dtau = num / den;
    let dkappa = (d_tk - it.kappa * dtau) / it.tau;
    let dx: Vec<f64> = sol2
        .x
        .iter()
        .zip(&sol1.x)
        .map(|(a, b)| a + dtau * b)
        .collect();
    let dyeq: Vec<f64> = sol2
        .yeq
        .iter()
        .zip(&sol1.yeq)
        .map(|(a, b)| a + dtau * b)
        .collect();
    let mut ds = Vec::with_capacity(w.blocks.len());
    let mut dy = Vec::with_capacity(w.blocks.len());
    for (j, b) in w.blocks.iter().enumerate() {
        let mut s = b.apply(&dx) - &r_blk[j] * eta;
        if b.has_b0 {
            s += &b.b0 * dtau;
        }
        let y = sym(&g_blk[j] - &sc[j].winv * &s * &sc[j].winv);
        ds.push(s);
        dy.push(y);
    }
    Direction {
        x: dx,
        yeq: dyeq,
        s: ds,
        y: dy,
        tau: dtau,
        kappa: dkappa,
    }
}

fn step_length(it: &Iterate, d: &Direction, sc: &[Scaling]) -> f64 {
    let mut alpha = f64::INFINITY;
    for (j, s) in sc.iter().enumerate() {
        let ds = &s.rinv * &d.s[j] * s.rinv.transpose();
        let dy = s.r.transpose() * &d.y[j] * &s.r;
        alpha = alpha.min(max_step(&s.lambda, &ds));
        alpha = alpha.min(max_step(&s.lambda, &dy));
    }
    if d.tau < 0.0 {
        alpha = alpha.min(-it.tau / d.tau);
    }
    if d.kappa < 0.0 {
        alpha = alpha.min(-it.kappa / d.kappa);
    }
    alpha
}

/// Solve an LMI-form SDP. Returns `Err` only for malformed input or
/// rank-deficient equalities; solver trouble is reported through the status.
/// Iterations without progress before giving up.
const STALL_ITERS: usize = 8;
/// Dual residual slack accepted for a stalled iterate, relative to `tol_feas`.
const STALL_DUAL_FACTOR: f64 = 1e3;

pub fn solve(prog: &ConicProgram, opts: &SolveOptions) -> Result<Solution> {
    prog.validate()?;
    let m = prog.num_vars();
    let mut eq = Vec::new();
    let mut f = Vec::new();
    let mut eq_scale = Vec::new();
    for row in prog.equalities() {
        let nrm = row.coeffs.iter().map(|c| c.1 * c.1).sum::<f64>().sqrt();
        if nrm == 0.0 {
            if row.rhs == 0.0 {
                return Err(Error::RankDeficient {
                    rank: 0,
                    rows: prog.equalities().len(),
                });
            }
            return Err(Error::Validation("equality 0 = nonzero".into()));
        }
        eq.push(
            row.coeffs
                .iter()
                .map(|&(k, v)| (k, v / nrm))
                .collect::<Vec<_>>(),
        );
        f.push(row.rhs / nrm);
        eq_scale.push(1.0 / nrm);
    }
    if !eq.is_empty() {
        let kept = independent_rows(&eq, m, 1e-10);
        if kept.len() < eq.len() {
            return Err(Error::RankDeficient {
                rank: kept.len(),
                rows: eq.len(),
            });
        }
    }
    // iterate on c / |c|; stopping tests hold both for the normalized and the
    // caller's objective, and the first binds when |c| <= 1
    let norm_c = norm_inf(prog.objective());
    let cs = super::certify::objective_scale(prog);
    let norm_cs = norm_c / cs;
    let w = Work {
        m,
        c: prog.objective().iter().map(|v| v / cs).collect(),
        eq,
        f,
        eq_scale,
        blocks: prog.blocks().iter().map(Block::new).collect(),
    };
    let nb = w.blocks.len();
    let nu: usize = w.blocks.iter().map(|b| b.side).sum();
    let p = w.eq.len();
    let norm_b = norm_inf(&w.f).max(w.blocks.iter().map(|b| b.b0.amax()).fold(0.0, f64::max));

    let mut it = Iterate {
        x: vec![0.0; m],
        yeq: vec![0.0; p],
        s: w.blocks
            .iter()
            .map(|b| DMatrix::identity(b.side, b.side))
            .collect(),
        y: w.blocks
            .iter()
            .map(|b| DMatrix::identity(b.side, b.side))
            .collect(),
        tau: 1.0,
        kappa: 1.0,
    };

    let mut status = SolveStatus::MaxIters;
    let mut iters = 0;
    let mut small_steps = 0;
    // best iterate by max(pres, dres, gap), returned when not converged
    let mut best: Option<(f64, Iterate)> = None;
    // iterate that meets the primal and gap tolerances with the loosest acceptable
    // dual residual; rounding in the W^-1 sandwiches can floor the dual residual
    // above tol_feas on degenerate programs while the gap keeps closing
    let mut stalled_ok: Option<(f64, Iterate)> = None;
    let mut since_best = 0;
    loop {
        // residuals
        let mut r_x = w.et_mul(&it.yeq);
        {
            let mut adj = vec![0.0; m];
            for (b, y) in w.blocks.iter().zip(&it.y) {
                b.adjoint(y, &mut adj);
            }
            for k in 0..m {
                r_x[k] += -adj[k] + w.c[k] * it.tau;
            }
        }
        let ex = w.e_mul(&it.x);
        let r_eq: Vec<f64> = ex.iter().zip(&w.f).map(|(a, b)| a - b * it.tau).collect();
        let mut r_blk = Vec::with_capacity(nb);
        let mut ax_s = Vec::with_capacity(nb);
        for (j, b) in w.blocks.iter().enumerate() {
            let axs = &it.s[j] - b.apply(&it.x);
            let r = if b.has_b0 {
                &axs - &b.b0 * it.tau
            } else {
                axs.clone()
            };
            r_blk.push(r);
            ax_s.push(axs);
        }
        let ctx: f64 = w.c.iter().zip(&it.x).map(|(a, b)| a * b).sum();
        let ctx_u = ctx * cs;
        let mut bty: f64 = w.f.iter().zip(&it.yeq).map(|(a, b)| a * b).sum();
        for (b, y) in w.blocks.iter().zip(&it.y) {
            if b.has_b0 {
                bty += inner(&b.b0, y);
            }
        }
        let r_tau = ctx + bty + it.kappa;

        let pres = norm_inf(&r_eq).max(r_blk.iter().map(|r| r.amax()).fold(0.0, f64::max))
            / it.tau
            / (1.0 + norm_b);
        let rx = norm_inf(&r_x) / it.tau;
        let dres = (rx / (1.0 + norm_cs)).max(cs * rx / (1.0 + norm_c));
        let pobj = ctx_u / it.tau;
        let dobj = -cs * bty / it.tau;
        let gap =
            super::relative_gap(ctx / it.tau, -bty / it.tau).max(super::relative_gap(pobj, dobj));
        let mu = (it
            .s
            .iter()
            .zip(&it.y)
            .map(|(s, y)| inner(s, y))
            .sum::<f64>()
            + it.tau * it.kappa)
            / (nu as f64 + 1.0);
        if opts.verbose {
            eprintln!(
                "{iters:3} pobj {pobj:+.9e} dobj {dobj:+.9e} pres {pres:.2e} dres {dres:.2e} gap {gap:.2e} mu {mu:.2e} tau {:.2e} kappa {:.2e}",
                it.tau, it.kappa
            );
        }
        if pres <= opts.tol_feas && dres <= opts.tol_feas && gap <= opts.tol_gap {
            status = SolveStatus::Optimal;
            break;
        }
        let merit = pres.max(dres).max(gap);
        let mut improved = false;
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, it.clone()));
            improved = true;
        }
        if pres <= opts.tol_feas && gap <= opts.tol_gap && dres <= STALL_DUAL_FACTOR * opts.tol_feas
        {
            let m2 = pres.max(gap).max(dres / STALL_DUAL_FACTOR);
            if stalled_ok.as_ref().is_none_or(|b| m2 < b.0) {
                stalled_ok = Some((m2, it.clone()));
                improved = true;
            }
        }
        if improved {
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= STALL_ITERS {
                status = SolveStatus::NumericalFailure;
                break;
            }
        }
        if it.tau < it.kappa {
            // Farkas certificate for primal infeasibility: b^T y < 0, A^T y = 0
            if bty < 0.0 {
                let aty: Vec<f64> = r_x.iter().zip(&w.c).map(|(r, c)| r - c * it.tau).collect();
                if norm_inf(&aty) * norm_b.max(1.0) <= opts.tol_infeas * (-bty) {
                    status = SolveStatus::PrimalInfeasible;
                    break;
                }
            }
            if ctx < 0.0 {
                let res = norm_inf(&ex).max(ax_s.iter().map(|r| r.amax()).fold(0.0, f64::max));
                if res <= opts.tol_infeas * (-ctx) {
                    status = SolveStatus::DualInfeasible;
                    break;
                }
            }
        }
        if iters >= opts.max_iters {
            break;
        }
        iters += 1;

        let Some(sc) =
            it.s.iter()
                .zip(&it.y)
                .map(|(s, y)| nt_scaling(s, y))
                .collect::<Option<Vec<_>>>()
        else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let kkt = match w.factor(&sc) {
            Ok(k) => k,
            Err(_) => {
                status = SolveStatus::NumericalFailure;
                break;
            }
        };
        let neg_c: Vec<f64> = w.c.iter().map(|v| -v).collect();
        let b0s: Vec<DMatrix<f64>> = w.blocks.iter().map(|b| b.b0.clone()).collect();
        let sol1 = ksolve(&w, &kkt, &sc, &neg_c, &w.f, &b0s, None);

        // predictor
        let u_x: Vec<f64> = r_x.iter().map(|v| -v).collect();
        let u_eq: Vec<f64> = r_eq.iter().map(|v| -v).collect();
        // affine complementarity target d = -S, whose dual image W^-1 d W^-1 is -Y
        let g_aff: Vec<DMatrix<f64>> = it.y.iter().map(|y| -y).collect();
        let u_blk: Vec<DMatrix<f64>> = r_blk.iter().map(|r| -r).collect();
        let sol2 = ksolve(&w, &kkt, &sc, &u_x, &u_eq, &u_blk, Some(&g_aff));
        let d_tk_aff = -it.tau * it.kappa;
        let aff = direction(
            &w, &it, &sol1, &sol2, 1.0, &r_blk, r_tau, &g_aff, d_tk_aff, &sc,
        );
        let alpha_aff = step_length(&it, &aff, &sc).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3);
        let eta = 1.0 - sigma;

        // corrector
        // the -Lambda^2 part of the target maps to -Y exactly; only the
        // centering and second-order terms go through R^-T . R^-1
        let mut g_cor = Vec::with_capacity(nb);
        for (j, s) in sc.iter().enumerate() {
            let n = s.lambda.len();
            let dst = &s.rinv * &aff.s[j] * s.rinv.transpose();
            let dyt = s.r.transpose() * &aff.y[j] * &s.r;
            let mut rhs = jordan(&dst, &dyt) * -1.0;
            for i in 0..n {
                rhs[(i, i)] += sigma * mu;
            }
            let mut dhat = rhs;
            for a in 0..n {
                for b in 0..n {
                    dhat[(a, b)] *= 2.0 / (s.lambda[a] + s.lambda[b]);
                }
            }
            g_cor.push(sym(s.rinv.transpose() * dhat * &s.rinv - &it.y[j]));
        }
        let d_tk = sigma * mu - it.tau * it.kappa - aff.tau * aff.kappa;
        let u_x: Vec<f64> = r_x.iter().map(|v| -eta * v).collect();
        let u_eq: Vec<f64> = r_eq.iter().map(|v| -eta * v).collect();
        let u_blk: Vec<DMatrix<f64>> = r_blk.iter().map(|r| r * -eta).collect();
        let sol2 = ksolve(&w, &kkt, &sc, &u_x, &u_eq, &u_blk, Some(&g_cor));
        let dir = direction(&w, &it, &sol1, &sol2, eta, &r_blk, r_tau, &g_cor, d_tk, &sc);
        let alpha = (0.99 * step_length(&it, &dir, &sc)).min(1.0);
        if !alpha.is_finite() || alpha < 1e-10 {
            small_steps += 1;
            if small_steps >= 3 {
                status = SolveStatus::NumericalFailure;
                break;
            }
            continue;
        }
        for k in 0..m {
            it.x[k] += alpha * dir.x[k];
        }
        for i in 0..p {
            it.yeq[i] += alpha * dir.yeq[i];
        }
        for j in 0..nb {
            it.s[j] = sym(&it.s[j] + &dir.s[j] * alpha);
            it.y[j] = sym(&it.y[j] + &dir.y[j] * alpha);
        }
        it.tau += alpha * dir.tau;
        it.kappa += alpha * dir.kappa;
        if !(it.tau > 0.0) || !(it.kappa >= 0.0) || !it.tau.is_finite() {
            status = SolveStatus::NumericalFailure;
            break;
        }
    }

    if matches!(
        status,
        SolveStatus::MaxIters | SolveStatus::NumericalFailure
    ) {
        if let Some((_, b)) = stalled_ok {
            it = b;
            status = SolveStatus::Optimal;
        } else if let Some((_, b)) = best {
            it = b;
        }
    }
    // map back to the caller's program
    let (z, duals, lambda) = if status.is_infeasible() {
        // report the certificate direction itself
        let lam: Vec<f64> = it
            .yeq
            .iter()
            .zip(&w.eq_scale)
            .map(|(y, s)| -y * s)
            .collect();
        (it.x.clone(), it.y.clone(), lam)
    } else {
        let t = it.tau;
        let z: Vec<f64> = it.x.iter().map(|v| v / t).collect();
        let y: Vec<DMatrix<f64>> = it.y.iter().map(|y| y * (cs / t)).collect();
        let lam: Vec<f64> = it
            .yeq
            .iter()
            .zip(&w.eq_scale)
            .map(|(y, s)| -y * s * cs / t)
            .collect();
        (z, y, lam)
    };
    Ok(evaluate_point(prog, z, duals, lambda, status, iters))
}

#[cfg(test)]
mod tests {
    use super::super::LmiBlock;
    use super::*;

    #[test]
    fn scalar_block() {
        let mut p = ConicProgram::new(1);
        p.set_objective(0, 1.0);
        let mut b = LmiBlock::new(1);
        b.add_term(0, 0, 0, 1.0);
        p.add_block(b);
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!(s.z[0].abs() < 1e-7);
    }

    #[test]
    fn two_by_two() {
        let mut p = ConicProgram::new(2);
        p.set_objective(0, 1.0);
        p.set_objective(1, 1.0);
        let mut b = LmiBlock::new(2);
        b.add_constant(0, 1, 1.0);
        b.add_term(0, 0, 0, 1.0);
        b.add_term(1, 1, 1, 1.0);
        p.add_block(b);
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.primal_objective - 2.0).abs() < 1e-7);
        assert!((s.z[0] - 1.0).abs() < 1e-4 && (s.z[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn infeasible_block() {
        let mut p = ConicProgram::new(1);
        let mut b = LmiBlock::new(1);
        b.add_constant(0, 0, -1.0);
        p.add_block(b);
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::PrimalInfeasible);
    }

    #[test]
    fn equality_constrained() {
        // minimize z0 + 2 z1 s.t. z0 + z1 = 1, z >= 0 (diagonal block)
        let mut p = ConicProgram::new(2);
        p.set_objective(0, 1.0);
        p.set_objective(1, 2.0);
        let mut b = LmiBlock::new(2);
        b.add_term(0, 0, 0, 1.0);
        b.add_term(1, 1, 1, 1.0);
        p.add_block(b);
        p.add_equality(vec![(0, 1.0), (1, 1.0)], 1.0);
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.primal_objective - 1.0).abs() < 1e-7);
        assert!((s.eq_duals[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn dependent_equalities_rejected() {
        let mut p = ConicProgram::new(2);
        let mut b = LmiBlock::new(1);
        b.add_term(0, 0, 0, 1.0);
        p.add_block(b);
        p.add_equality(vec![(0, 1.0), (1, 1.0)], 1.0);
        p.add_equality(vec![(0, 2.0), (1, 2.0)], 2.0);
        assert!(matches!(
            solve(&p, &SolveOptions::default()),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn unbounded_detected() {
        // minimize -z s.t. [z] >= 0
        let mut p = ConicProgram::new(1);
        p.set_objective(0, -1.0);
        let mut b = LmiBlock::new(1);
        b.add_term(0, 0, 0, 1.0);
        p.add_block(b);
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::DualInfeasible);
    }
}
