//! Pointwise quasiconvex envelopes `W_quasi(F) = inf_{P PSD} W~(F^T F + P)`.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::energy::{
    check_sos_convexity, strain_coords, strain_dim, strain_index, strain_pair, EnergyDensity,
    EnergyKind, SosStatus,
};
use crate::error::{Error, Result};
use crate::linalg::sym_eigen;
use crate::poly::{monomials_up_to, MultiIndex, Polynomial};
use crate::sdp::{self, ConicProgram, LmiBlock, SolveOptions, SolveStatus};

#[derive(Clone, Debug)]
pub struct Envelope {
    pub value: f64,
    /// Minimizing `P`, symmetric `n x n`.
    pub p_star: DMatrix<f64>,
    /// `W~(F^T F + P*)` evaluated directly.
    pub reevaluated: f64,
    pub status: SolveStatus,
    pub iterations: usize,
}

fn psd_block(n: usize, first_var: usize) -> LmiBlock {
    let mut b = LmiBlock::new(n);
    for a in 0..n {
        for c in a..n {
            b.add_term(first_var + strain_index(n, a, c), a, c, 1.0);
        }
    }
    b
}

fn p_matrix(n: usize, p: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |a, b| p[strain_index(n, a, b)])
}

/// Projection formula solved as a linear SDP.
///
/// Quadratic `W~ = 1/2 |L c|^2 + g.c + h` is lifted with the epigraph block
/// `[[I, L(c_F + p)], [., 2u]] PSD`. Higher-degree SOS-convex `W~` goes
/// through a moment lift in `p` whose first moments give `P*`.
pub fn project_envelope(
    f: &DMatrix<f64>,
    energy: &EnergyDensity,
    opts: &SolveOptions,
) -> Result<Envelope> {
    let n = energy.n();
    if f.nrows() != n || f.ncols() != n {
        return Err(Error::Validation(format!("F must be {n}x{n}")));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("F has non-finite entries".into()));
    }
    let c = f.transpose() * f;
    let cf = strain_coords(&c);
    let s = strain_dim(n);
    if let Some((l, g, h)) = energy.quadratic_form() {
        let r = l.nrows();
        // variables: p_0..p_{s-1}, u
        let u = s;
        let mut prog = ConicProgram::new(s + 1);
        prog.set_objective(u, 1.0);
        for k in 0..s {
            prog.set_objective(k, g[k]);
        }
        let mut epi = LmiBlock::new(r + 1);
        for i in 0..r {
            epi.add_constant(i, i, 1.0);
            let lc: f64 = (0..s).map(|k| l[(i, k)] * cf[k]).sum();
            epi.add_constant(i, r, lc);
            for k in 0..s {
                epi.add_term(k, i, r, l[(i, k)]);
            }
        }
        epi.add_term(u, r, r, 2.0);
        prog.add_block(epi);
        prog.add_block(psd_block(n, 0));
        let sol = sdp::solve(&prog, opts)?;
        let offset: f64 = g.iter().zip(&cf).map(|(a, b)| a * b).sum::<f64>() + h;
        let p_star = p_matrix(n, &sol.z[..s]);
        return Ok(no_worse_than_zero(
            Envelope {
                value: sol.primal_objective + offset,
                reevaluated: energy.eval_wtilde(&(&c + &p_star)),
                p_star,
                status: sol.status,
                iterations: sol.iterations,
            },
            energy,
            &c,
        ));
    }
    let cert = check_sos_convexity(energy.wtilde());
    match cert.status {
        SosStatus::Certified => {}
        SosStatus::Refuted => {
            return Err(Error::Validation(
                "strain energy is not SOS convex; projection formula not certified".into(),
            ))
        }
        SosStatus::Indeterminate => {
            return Err(Error::Solver("SOS-convexity check did not converge".into()))
        }
    }
    // W~(c_F + p) as a polynomial in p
    let shift: std::collections::BTreeMap<usize, Polynomial> = (0..s)
        .map(|k| (k, Polynomial::var(s, k) + Polynomial::constant(s, cf[k])))
        .collect();
    let obj = energy.wtilde().compose(s, &shift)?;
    let k = obj.degree().div_ceil(2);
    let moments = monomials_up_to(s, 2 * k);
    let index: std::collections::HashMap<MultiIndex, usize> = moments
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, m)| (m, i))
        .collect();
    let mut prog = ConicProgram::new(moments.len());
    for (alpha, v) in obj.terms() {
        prog.set_objective(index[alpha], v);
    }
    let half = monomials_up_to(s, k);
    let mut mm = LmiBlock::new(half.len());
    for a in 0..half.len() {
        for b in a..half.len() {
            mm.add_term(index[&half[a].mul(&half[b])], a, b, 1.0);
        }
    }
    prog.add_block(mm);
    let mut pb = LmiBlock::new(n);
    for a in 0..n {
        for b in a..n {
            let e = MultiIndex::unit(s, strain_index(n, a, b));
            pb.add_term(index[&e], a, b, 1.0);
        }
    }
    prog.add_block(pb);
    prog.add_equality(vec![(index[&MultiIndex::zero(s)], 1.0)], 1.0);
    let sol = sdp::solve(&prog, opts)?;
    let p: Vec<f64> = (0..s)
        .map(|q| sol.z[index[&MultiIndex::unit(s, q)]])
        .collect();
    let p_star = p_matrix(n, &p);
    Ok(no_worse_than_zero(
        Envelope {
            value: sol.primal_objective,
            reevaluated: energy.eval_wtilde(&(&c + &p_star)),
            p_star,
            status: sol.status,
            iterations: sol.iterations,
        },
        energy,
        &c,
    ))
}

/// `P = 0` is always feasible, so a solver value above `W~(F^T F)` (off by the
/// stopping tolerance when the envelope equals `W`) is replaced by it.
fn no_worse_than_zero(mut env: Envelope, energy: &EnergyDensity, c: &DMatrix<f64>) -> Envelope {
    let w = energy.eval_wtilde(c);
    if env.status == SolveStatus::Optimal && w < env.value {
        env.value = w;
        env.reevaluated = w;
        env.p_star = DMatrix::zeros(c.nrows(), c.ncols());
    }
    env
}

/// Closed form for `W(F) = |F^T F - I|^2` in two dimensions:
/// `sum_i max(s_i^2 - 1, 0)^2` over the singular values of `F`.
pub fn spectral_truncation_envelope(f: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen(&(f.transpose() * f));
    vals.iter().map(|&e| (e - 1.0).max(0.0).powi(2)).sum()
}

/// How envelope values are computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeMethod {
    /// Closed form, SVK with zero first Lame parameter only.
    Spectral,
    /// Semidefinite projection, any SOS-convex strain energy.
    Projection,
}

impl std::str::FromStr for EnvelopeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Self::Spectral),
            "projection" => Ok(Self::Projection),
            other => Err(Error::Validation(format!(
                "unknown envelope method '{other}' (expected spectral or projection)"
            ))),
        }
    }
}

impl EnvelopeMethod {
    /// Spectral when the energy allows it, projection otherwise.
    pub fn preferred(energy: &EnergyDensity) -> Self {
        if spectral_scale(energy).is_some() {
            Self::Spectral
        } else {
            Self::Projection
        }
    }
}

/// `mu / 4` when `W = mu/4 |F^T F - I|^2` in two dimensions.
fn spectral_scale(energy: &EnergyDensity) -> Option<f64> {
    match (energy.kind(), energy.lame()) {
        (EnergyKind::Svk, Some((lam, mu))) if lam == 0.0 && energy.n() == 2 => Some(mu / 4.0),
        _ => None,
    }
}

/// Envelope value of `energy` at `f` by the chosen method.
pub fn envelope_value(
    f: &DMatrix<f64>,
    energy: &EnergyDensity,
    method: EnvelopeMethod,
    opts: &SolveOptions,
) -> Result<f64> {
    match method {
        EnvelopeMethod::Spectral => {
            let scale = spectral_scale(energy).ok_or_else(|| {
                Error::Validation(
                    "the spectral formula only covers two-dimensional SVK with lam = 0; use the projection method"
                        .into(),
                )
            })?;
            Ok(scale * spectral_truncation_envelope(f))
        }
        EnvelopeMethod::Projection => {
            let e = project_envelope(f, energy, opts)?;
            if e.status != SolveStatus::Optimal {
                return Err(Error::Solver(format!(
                    "envelope projection ended with status {:?}",
                    e.status
                )));
            }
            Ok(e.value)
        }
    }
}

/// Uniform grid `lo, ..., hi` with `steps` points (`steps >= 1`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Axis {
    pub fn points(&self) -> Vec<f64> {
        if self.steps <= 1 {
            return vec![self.lo];
        }
        (0..self.steps)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.steps - 1) as f64)
            .collect()
    }

    /// Parses `lo:hi:steps`, optionally prefixed with a `name:` label.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').collect();
        let nums = match parts.len() {
            3 => &parts[..],
            4 => &parts[1..],
            _ => {
                return Err(Error::Validation(format!(
                    "grid axis '{text}' must be lo:hi:steps"
                )))
            }
        };
        let bad = || Error::Validation(format!("bad grid axis '{text}'"));
        let lo: f64 = nums[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = nums[1].trim().parse().map_err(|_| bad())?;
        let steps: usize = nums[2].trim().parse().map_err(|_| bad())?;
        if steps == 0 || !(lo >= 0.0) || !(hi >= lo) {
            return Err(bad());
        }
        Ok(Self { lo, hi, steps })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub s1: f64,
    pub s2: f64,
    pub w: f64,
    pub wquasi: f64,
}

/// `W` and `W_quasi` at `F = diag(s1, s2)` over a grid of singular values.
pub fn envelope_surface(
    s1: &Axis,
    s2: &Axis,
    energy: &EnergyDensity,
    method: EnvelopeMethod,
    opts: &SolveOptions,
) -> Result<Vec<SurfaceRow>> {
    if energy.n() != 2 {
        return Err(Error::Validation("envelope surface needs n = 2".into()));
    }
    let mut rows = Vec::new();
    for &a in &s1.points() {
        for &b in &s2.points() {
            let f = DMatrix::from_row_slice(2, 2, &[a, 0.0, 0.0, b]);
            rows.push(SurfaceRow {
                s1: a,
                s2: b,
                w: energy.eval_w(&f),
                wquasi: envelope_value(&f, energy, method, opts)?,
            });
        }
    }
    Ok(rows)
}

pub fn surface_csv(rows: &[SurfaceRow]) -> String {
    let mut out = String::from("s1,s2,W,Wquasi\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.s1, r.s2, r.w, r.wquasi);
    }
    out
}

/// Strain coordinates of `P` back to a matrix (exposed for callers building `P`).
pub fn strain_matrix(n: usize, coords: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for (i, &v) in coords.iter().enumerate() {
        let (a, b) = strain_pair(n, i);
        m[(a, b)] = v;
        m[(b, a)] = v;
    }
    m
}
