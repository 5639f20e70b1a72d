//! Stored-energy densities `W(Z) = W~(Z^T Z)` that are polynomial and convex
//! in the Cauchy-Green strain `C = Z^T Z`.
//!
//! Strain coordinates: the `s = n(n+1)/2` independent entries of `C`, diagonal
//! first, then the upper off-diagonal entries row by row. For `n = 2` that is
//! `(C11, C22, C12)`. Matrix variables `Z` are flattened row-major.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eigen;
use crate::poly::{monomials_up_to, MultiIndex, Polynomial};
use crate::sdp::{self, ConicProgram, LmiBlock, SolveOptions, SolveStatus};

pub fn strain_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Coordinate of `C_ab` (either order).
pub fn strain_index(n: usize, a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    if a == b {
        return a;
    }
    // count pairs (p, q), p < q, before (a, b)
    let before: usize = (0..a).map(|p| n - 1 - p).sum();
    n + before + (b - a - 1)
}

/// Coordinates back to `(a, b)` with `a <= b`.
pub fn strain_pair(n: usize, idx: usize) -> (usize, usize) {
    for a in 0..n {
        for b in a..n {
            if strain_index(n, a, b) == idx {
                return (a, b);
            }
        }
    }
    panic!("strain index {idx} out of range for n = {n}");
}

/// `C_ab` as polynomials in the flattened `Z` (arity `n^2`).
pub fn gram_substitution(n: usize) -> BTreeMap<usize, Polynomial> {
    let nz = n * n;
    let mut out = BTreeMap::new();
    for idx in 0..strain_dim(n) {
        let (a, b) = strain_pair(n, idx);
        let mut p = Polynomial::zero(nz);
        for j in 0..n {
            p = p + Polynomial::var(nz, j * n + a) * Polynomial::var(nz, j * n + b);
        }
        out.insert(idx, p);
    }
    out
}

/// Strain coordinates of a symmetric matrix.
pub fn strain_coords(c: &DMatrix<f64>) -> Vec<f64> {
    let n = c.nrows();
    (0..strain_dim(n))
        .map(|i| {
            let (a, b) = strain_pair(n, i);
            c[(a, b)]
        })
        .collect()
}

/// Row-major flattening of a square matrix.
pub fn flatten(f: &DMatrix<f64>) -> Vec<f64> {
    let n = f.nrows();
    (0..n * n).map(|k| f[(k / n, k % n)]).collect()
}

/// Voigt-form stiffness matrix `D` acting on `a = (X11, X22, 2 X12)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StiffnessForm {
    pub d: DMatrix<f64>,
    pub lam: Option<f64>,
    pub mu: Option<f64>,
}

impl StiffnessForm {
    pub fn new(d: DMatrix<f64>) -> Result<Self> {
        if d.nrows() != 3 || d.ncols() != 3 {
            return Err(Error::Validation("stiffness matrix must be 3x3".into()));
        }
        if (&d - d.transpose()).amax() > 1e-12 * (1.0 + d.amax()) {
            return Err(Error::Validation("stiffness matrix not symmetric".into()));
        }
        Ok(Self {
            d,
            lam: None,
            mu: None,
        })
    }

    /// Isotropic matrix built from Lame parameters.
    pub fn isotropic(lam: f64, mu: f64) -> Self {
        let d = DMatrix::from_row_slice(
            3,
            3,
            &[
                lam + 2.0 * mu,
                lam,
                0.0,
                lam,
                lam + 2.0 * mu,
                0.0,
                0.0,
                0.0,
                mu,
            ],
        );
        Self {
            d,
            lam: Some(lam),
            mu: Some(mu),
        }
    }

    /// Poisson ratio `lam / (2 (lam + mu))`, when built from Lame parameters.
    pub fn nu(&self) -> Option<f64> {
        match (self.lam, self.mu) {
            (Some(l), Some(m)) => Some(l / (2.0 * (l + m))),
            _ => None,
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        sym_eigen(&self.d).0[0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergyKind {
    Svk,
    Anisotropic,
    Custom,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyDensity {
    n: usize,
    kind: EnergyKind,
    wtilde: Polynomial,
    w: Polynomial,
    p_growth: u32,
    stiffness: Option<StiffnessForm>,
    lame: Option<(f64, f64)>,
}

impl EnergyDensity {
    /// Energy from a polynomial `W~` in the strain coordinates.
    pub fn custom(n: usize, wtilde: Polynomial) -> Result<Self> {
        Self::build(n, EnergyKind::Custom, wtilde, None)
    }

    fn build(
        n: usize,
        kind: EnergyKind,
        wtilde: Polynomial,
        stiffness: Option<StiffnessForm>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Validation("dimension must be positive".into()));
        }
        if wtilde.nvars() != strain_dim(n) {
            return Err(Error::Structure(format!(
                "strain polynomial has arity {} but n = {n} needs {}",
                wtilde.nvars(),
                strain_dim(n)
            )));
        }
        let w = wtilde.compose(n * n, &gram_substitution(n))?;
        let p_growth = w.degree();
        Ok(Self {
            n,
            kind,
            wtilde,
            w,
            p_growth,
            stiffness,
            lame: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> EnergyKind {
        self.kind
    }

    /// `W~` in strain coordinates.
    pub fn wtilde(&self) -> &Polynomial {
        &self.wtilde
    }

    /// `W` in the row-major entries of `Z`.
    pub fn w(&self) -> &Polynomial {
        &self.w
    }

    pub fn p_growth(&self) -> u32 {
        self.p_growth
    }

    pub fn stiffness(&self) -> Option<&StiffnessForm> {
        self.stiffness.as_ref()
    }

    /// `(lam, mu)` for SVK energies.
    pub fn lame(&self) -> Option<(f64, f64)> {
        self.lame
    }

    pub fn eval_w(&self, f: &DMatrix<f64>) -> f64 {
        self.w.evaluate(&flatten(f))
    }

    pub fn eval_wtilde(&self, c: &DMatrix<f64>) -> f64 {
        self.wtilde.evaluate(&strain_coords(c))
    }

    /// Writes `W~(C)` as `1/2 |L c|^2 + g.c + h` when it is quadratic, where
    /// `c` are strain coordinates. Returns `(L, g, h)`; `None` if `W~` has
    /// degree above 2 or an indefinite quadratic part.
    pub fn quadratic_form(&self) -> Option<(DMatrix<f64>, Vec<f64>, f64)> {
        if self.wtilde.degree() > 2 {
            return None;
        }
        let s = strain_dim(self.n);
        let mut q = DMatrix::zeros(s, s);
        let mut g = vec![0.0; s];
        let mut h = 0.0;
        for (alpha, c) in self.wtilde.terms() {
            let e = alpha.exponents();
            let nz: Vec<usize> = (0..s).filter(|&i| e[i] > 0).collect();
            match (alpha.degree(), nz.as_slice()) {
                (0, _) => h += c,
                (1, [i]) => g[*i] += c,
                (2, [i]) => q[(*i, *i)] += 2.0 * c,
                (2, [i, j]) => {
                    q[(*i, *j)] += c;
                    q[(*j, *i)] += c;
                }
                _ => unreachable!(),
            }
        }
        let l = crate::linalg::psd_factor(&q, 1e-12)?;
        Some((l, g, h))
    }
}

/// Saint Venant-Kirchhoff: `W~ = lam/2 (tr E)^2 + mu tr(E^2)`, `E = (C - I)/2`.
pub fn svk_energy(lam: f64, mu: f64, n: usize) -> Result<EnergyDensity> {
    if !(lam >= 0.0 && mu >= 0.0) {
        return Err(Error::Validation(format!(
            "Lame parameters must be nonnegative, got lam = {lam}, mu = {mu}"
        )));
    }
    if lam == 0.0 && mu == 0.0 {
        return Err(Error::Validation("lam and mu cannot both vanish".into()));
    }
    let s = strain_dim(n);
    let e = |a: usize, b: usize| {
        let c = Polynomial::var(s, strain_index(n, a, b));
        if a == b {
            (c - Polynomial::constant(s, 1.0)).scale(0.5)
        } else {
            c.scale(0.5)
        }
    };
    let mut tr = Polynomial::zero(s);
    let mut tr2 = Polynomial::zero(s);
    for a in 0..n {
        tr = tr + e(a, a);
        for b in 0..n {
            tr2 = tr2 + e(a, b).pow(2);
        }
    }
    let wt = tr.pow(2).scale(lam / 2.0) + tr2.scale(mu);
    let stiff = (n == 2).then(|| StiffnessForm::isotropic(lam, mu));
    let mut e = EnergyDensity::build(n, EnergyKind::Svk, wt, stiff)?;
    e.lame = Some((lam, mu));
    Ok(e)
}

/// `W = a^T D a` with `a = (X11, X22, 2 X12)`, `X = C - I` (`n = 2`).
pub fn anisotropic_energy(d: StiffnessForm) -> Result<EnergyDensity> {
    let (vals, _) = sym_eigen(&d.d);
    if vals[0] <= 1e-10 {
        return Err(Error::Validation(format!(
            "stiffness matrix not positive definite: eigenvalue {:e}",
            vals[0]
        )));
    }
    let wt = anisotropic_wtilde(&d.d);
    EnergyDensity::build(2, EnergyKind::Anisotropic, wt, Some(d))
}

/// `a^T D a` with `a = (C11 - 1, C22 - 1, 2 C12)` in strain coordinates, for any
/// symmetric 3x3 `D` (no definiteness check).
pub fn anisotropic_wtilde(d: &DMatrix<f64>) -> Polynomial {
    let s = 3;
    let one = Polynomial::constant(s, 1.0);
    let a = [
        Polynomial::var(s, 0) - one.clone(),
        Polynomial::var(s, 1) - one.clone(),
        Polynomial::var(s, 2).scale(2.0),
    ];
    let mut wt = Polynomial::zero(s);
    for i in 0..3 {
        for j in 0..3 {
            if d[(i, j)] != 0.0 {
                wt = wt + (&a[i] * &a[j]).scale(d[(i, j)]);
            }
        }
    }
    wt
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct EnergyJson {
    kind: EnergyKind,
    #[serde(default = "default_n")]
    n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lam: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mu: Option<f64>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    d: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wtilde: Option<Polynomial>,
}

fn default_n() -> usize {
    2
}

impl Serialize for EnergyDensity {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let st = self.stiffness.as_ref();
        let j = EnergyJson {
            kind: self.kind,
            n: self.n,
            lam: self.lame.map(|l| l.0),
            mu: self.lame.map(|l| l.1),
            d: match self.kind {
                EnergyKind::Anisotropic => {
                    st.map(|s| (0..9).map(|k| s.d[(k / 3, k % 3)]).collect())
                }
                _ => None,
            },
            wtilde: Some(self.wtilde.clone()),
        };
        j.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for EnergyDensity {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = EnergyJson::deserialize(de)?;
        let r = match j.kind {
            EnergyKind::Svk => match (j.lam, j.mu) {
                (Some(l), Some(m)) => svk_energy(l, m, j.n),
                _ => Err(Error::Validation("svk energy needs lam and mu".into())),
            },
            EnergyKind::Anisotropic => match j.d {
                Some(d) if d.len() == 9 => StiffnessForm::new(DMatrix::from_row_slice(3, 3, &d))
                    .and_then(anisotropic_energy),
                _ => Err(Error::Validation("anisotropic energy needs a 3x3 D".into())),
            },
            EnergyKind::Custom => match j.wtilde {
                Some(w) => w
                    .with_arity(strain_dim(j.n))
                    .and_then(|w| EnergyDensity::custom(j.n, w)),
                None => Err(Error::Validation("custom energy needs wtilde".into())),
            },
        };
        r.map_err(D::Error::custom)
    }
}

/// Uniformly random rotation in `SO(n)`.
pub fn random_rotation(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    if n == 2 {
        let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        return DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
    }
    let g = DMatrix::from_fn(n, n, |_, _| gaussian(rng));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for i in 0..n {
        if r[(i, i)] < 0.0 {
            q.column_mut(i).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

pub(crate) fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random();
    (-2.0f64 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub trials: usize,
    pub max_deviation: f64,
    pub passed: bool,
}

/// Compare `W(RF)` with `W(F)` for random rotations and random `F` in `[-2, 2]`.
pub fn check_frame_indifference(e: &EnergyDensity, trials: usize, seed: u64) -> FrameReport {
    check_frame_indifference_of(e.w(), e.n(), trials, seed)
}

/// Same check for a bare polynomial in the row-major entries of `Z`.
pub fn check_frame_indifference_of(
    w: &Polynomial,
    n: usize,
    trials: usize,
    seed: u64,
) -> FrameReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut passed = true;
    for _ in 0..trials.max(1) {
        let r = random_rotation(n, &mut rng);
        let f = DMatrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
        let a = w.evaluate(&flatten(&f));
        let b = w.evaluate(&flatten(&(&r * &f)));
        let dev = (a - b).abs();
        worst = worst.max(dev);
        if dev > 1e-9 * (1.0 + a.abs()) {
            passed = false;
        }
    }
    FrameReport {
        trials: trials.max(1),
        max_deviation: worst,
        passed,
    }
}

/// Matrix of second partial derivatives in strain coordinates.
pub fn hessian(wtilde: &Polynomial) -> Vec<Vec<Polynomial>> {
    let s = wtilde.nvars();
    let grad: Vec<Polynomial> = (0..s)
        .map(|i| wtilde.differentiate(i).expect("variable in range"))
        .collect();
    (0..s)
        .map(|i| {
            (0..s)
                .map(|j| grad[i].differentiate(j).expect("variable in range"))
                .collect()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SosStatus {
    Certified,
    Refuted,
    /// The solver did not settle the question.
    Indeterminate,
}

#[derive(Clone, Debug)]
pub struct SosCertificate {
    pub status: SosStatus,
    /// Smallest Hessian eigenvalue (constant Hessian only).
    pub min_eigenvalue: Option<f64>,
    /// Monomials `v_i m(C)` indexing the Gram matrix, as `(i, m)`.
    pub gram_basis: Vec<(usize, MultiIndex)>,
    /// `F` with Gram matrix `G = F^T F`, or the Hessian factor in the constant case.
    pub factor: Option<DMatrix<f64>>,
}

/// SOS-convexity of `W~`: its Hessian `H(C)` must make `v^T H(C) v` a sum of
/// squares in `(C, v)`.
pub fn check_sos_convexity(wtilde: &Polynomial) -> SosCertificate {
    let s = wtilde.nvars();
    let h = hessian(wtilde);
    let hdeg = h.iter().flatten().map(|p| p.degree()).max().unwrap_or(0);
    let all_zero = h.iter().flatten().all(|p| p.is_zero());
    if all_zero || hdeg == 0 {
        let m = DMatrix::from_fn(s, s, |i, j| h[i][j].constant_term());
        let (vals, _) = sym_eigen(&m);
        let min = vals.first().copied().unwrap_or(0.0);
        let scale = 1.0 + m.amax();
        let ok = min >= -1e-10 * scale;
        return SosCertificate {
            status: if ok {
                SosStatus::Certified
            } else {
                SosStatus::Refuted
            },
            min_eigenvalue: Some(min),
            gram_basis: (0..s).map(|i| (i, MultiIndex::zero(s))).collect(),
            factor: if ok {
                crate::linalg::psd_factor(&m, 1e-10)
            } else {
                None
            },
        };
    }
    let refuted = SosCertificate {
        status: SosStatus::Refuted,
        min_eigenvalue: None,
        gram_basis: Vec::new(),
        factor: None,
    };
    if hdeg % 2 == 1 {
        return refuted;
    }
    // v^T H(C) v in variables (C, v), arity 2s
    let nv = 2 * s;
    let lift: Vec<usize> = (0..s).collect();
    let mut target = Polynomial::zero(nv);
    for i in 0..s {
        for j in 0..s {
            if h[i][j].is_zero() {
                continue;
            }
            let hij = h[i][j].remap(nv, &lift).expect("lift into (C, v)");
            target = target + hij * Polynomial::var(nv, s + i) * Polynomial::var(nv, s + j);
        }
    }
    let half = monomials_up_to(s, hdeg / 2);
    let basis: Vec<(usize, MultiIndex)> = (0..s)
        .flat_map(|i| half.iter().map(move |m| (i, m.clone())))
        .collect();
    let to_full = |i: usize, m: &MultiIndex| {
        let mut e = vec![0u16; nv];
        e[..s].copy_from_slice(m.exponents());
        e[s + i] += 1;
        MultiIndex::new(e)
    };
    let full: Vec<MultiIndex> = basis.iter().map(|(i, m)| to_full(*i, m)).collect();
    let nb = basis.len();
    // one variable per upper-triangle Gram entry
    let mut var_of = vec![vec![0usize; nb]; nb];
    let mut k = 0;
    let mut block = LmiBlock::new(nb);
    for a in 0..nb {
        for b in a..nb {
            var_of[a][b] = k;
            block.add_term(k, a, b, 1.0);
            k += 1;
        }
    }
    let mut prog = ConicProgram::new(k);
    prog.add_block(block);
    let mut rows: BTreeMap<MultiIndex, Vec<(usize, f64)>> = BTreeMap::new();
    for a in 0..nb {
        for b in a..nb {
            let mono = full[a].mul(&full[b]);
            let w = if a == b { 1.0 } else { 2.0 };
            rows.entry(mono).or_default().push((var_of[a][b], w));
        }
    }
    for (alpha, _) in target.terms() {
        if !rows.contains_key(alpha) {
            return refuted;
        }
    }
    for (alpha, coeffs) in rows {
        prog.add_equality(coeffs, target.coeff(&alpha));
    }
    let sol = match sdp::solve(&prog, &SolveOptions::default()) {
        Ok(s) => s,
        Err(_) => {
            return SosCertificate {
                status: SosStatus::Indeterminate,
                min_eigenvalue: None,
                gram_basis: basis,
                factor: None,
            }
        }
    };
    // a feasible Gram matrix is all we need, even if the dual side stalls
    let g = prog.blocks()[0].evaluate(&sol.z);
    let feasible = sol.primal_residual <= 1e-7
        && crate::linalg::min_eigenvalue(&g) >= -1e-8 * (1.0 + g.amax());
    let status = match sol.status {
        SolveStatus::PrimalInfeasible => SosStatus::Refuted,
        _ if feasible => SosStatus::Certified,
        _ => SosStatus::Indeterminate,
    };
    let factor = (status == SosStatus::Certified)
        .then(|| crate::linalg::psd_factor(&g, 1e-8 * (1.0 + g.amax())))
        .flatten();
    SosCertificate {
        status,
        min_eigenvalue: None,
        gram_basis: basis,
        factor,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthSample {
    pub radius: f64,
    /// `min W(F) / |F|^p` on the sphere.
    pub lower: f64,
    /// `max W(F) / (1 + |F|^p)` on the sphere.
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub p: u32,
    pub per_radius: Vec<GrowthSample>,
    /// Candidates from the largest radius: `min` and `max` of `W / |F|^p`.
    pub c1: f64,
    pub c2: f64,
    /// Lower constant collapses toward zero along some direction.
    pub degenerate: bool,
}

/// Sampling-based falsification of `c1 |F|^p <= W(F) <= c2 (1 + |F|^p)`.
///
/// Samples the coordinate axes plus `samples` random directions on spheres of
/// the given radii.
pub fn check_growth(e: &EnergyDensity, samples: usize, radii: &[f64], seed: u64) -> GrowthReport {
    check_growth_of(e.w(), e.p_growth(), e.n(), samples, radii, seed)
}

pub fn check_growth_of(
    w: &Polynomial,
    p: u32,
    n: usize,
    samples: usize,
    radii: &[f64],
    seed: u64,
) -> GrowthReport {
    let nz = n * n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs: Vec<Vec<f64>> = (0..nz)
        .map(|i| (0..nz).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _ in 0..samples.max(1) {
        let v: Vec<f64> = (0..nz).map(|_| gaussian(&mut rng)).collect();
        let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        dirs.push(v.into_iter().map(|x| x / nrm).collect());
    }
    let mut per_radius = Vec::new();
    let (mut c1, mut c2) = (f64::NAN, f64::NAN);
    for &r in radii {
        let rp = r.powi(p as i32);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut lo_p = f64::INFINITY;
        let mut hi_p = f64::NEG_INFINITY;
        for d in &dirs {
            let f: Vec<f64> = d.iter().map(|x| x * r).collect();
            let v = w.evaluate(&f);
            lo = lo.min(v / rp);
            hi = hi.max(v / (1.0 + rp));
            lo_p = lo_p.min(v / rp);
            hi_p = hi_p.max(v / rp);
        }
        per_radius.push(GrowthSample {
            radius: r,
            lower: lo,
            upper: hi,
        });
        c1 = lo_p;
        c2 = hi_p;
    }
    let degenerate = !(c1 > 1e-8 * c2.abs().max(1e-300))
        || per_radius
            .windows(2)
            .last()
            .is_some_and(|w| w[1].lower < 0.5 * w[0].lower);
    GrowthReport {
        p,
        per_radius,
        c1,
        c2,
        degenerate,
    }
}
