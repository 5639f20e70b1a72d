//! Moment relaxations of the occupation-measure LP.
//!
//! Variables are rescaled before anything is assembled: the box maps to
//! `[-1, 1]^n` through `x = c + h * xh`, and `(y, Z) = s * (yh, Zh)` with a data
//! scale `s <= R`, so the truncation ball reads `(s/R)^2 (|yh|^2 + |Zh|^2) <= 1`.
//! Keeping `s` at the size of the boundary data instead of `R` stops the
//! moments from shrinking like `R^-deg` as the radius grows. Moments are those
//! of the occupation measure (mass `|Omega|`) in the rescaled variables.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::energy::EnergyDensity;
use crate::error::{Error, Result};
use crate::linalg::independent_rows;
use crate::poly::{
    integrate_edge, monomials_up_to, BoxDomain, MultiIndex, Polynomial, VariableSpace,
};
use crate::sdp::{ConicProgram, LmiBlock, Solution, SolveOptions, SolveStatus};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Radius {
    Fixed(f64),
    Auto,
}

impl Serialize for Radius {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Radius::Fixed(r) => s.serialize_f64(*r),
            Radius::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for Radius {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(r) => Ok(Radius::Fixed(r)),
            Raw::Text(t) if t == "auto" => Ok(Radius::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "R must be a number or \"auto\", got \"{t}\""
            ))),
        }
    }
}

/// Box domain, boundary deformation and energy of one variational problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub n: usize,
    pub domain: BoxDomain,
    pub energy: EnergyDensity,
    /// `y_d` components as polynomials in `x` (arity `n`).
    pub boundary: Vec<Polynomial>,
    pub radius: Radius,
    pub orders: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct ProblemJson {
    n: usize,
    #[serde(rename = "box")]
    bounds: Vec<[f64; 2]>,
    energy: EnergyDensity,
    boundary: Vec<Polynomial>,
    #[serde(rename = "R")]
    radius: Radius,
    #[serde(default)]
    orders: Vec<u32>,
}

impl Serialize for ProblemSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ProblemJson {
            n: self.n,
            bounds: self.domain.bounds.iter().map(|&(a, b)| [a, b]).collect(),
            energy: self.energy.clone(),
            boundary: self.boundary.clone(),
            radius: self.radius,
            orders: self.orders.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ProblemSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = ProblemJson::deserialize(d)?;
        let domain = BoxDomain::new(j.bounds.iter().map(|b| (b[0], b[1])).collect())
            .map_err(D::Error::custom)?;
        let boundary = j
            .boundary
            .into_iter()
            .map(|p| {
                if p.is_zero() {
                    Ok(Polynomial::zero(j.n))
                } else {
                    Ok(p)
                }
            })
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        let spec = ProblemSpec {
            n: j.n,
            domain,
            energy: j.energy,
            boundary,
            radius: j.radius,
            orders: j.orders,
        };
        spec.validate().map_err(D::Error::custom)?;
        Ok(spec)
    }
}

impl ProblemSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn space(&self) -> VariableSpace {
        VariableSpace::new(self.n).expect("validated dimension")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Validation("n must be positive".into()));
        }
        if self.domain.dim() != self.n {
            return Err(Error::Validation(format!(
                "box has {} axes but n = {}",
                self.domain.dim(),
                self.n
            )));
        }
        if self.energy.n() != self.n {
            return Err(Error::Validation("energy dimension differs from n".into()));
        }
        if self.boundary.len() != self.n {
            return Err(Error::Validation(format!(
                "need {} boundary components, got {}",
                self.n,
                self.boundary.len()
            )));
        }
        for (j, p) in self.boundary.iter().enumerate() {
            if p.nvars() != self.n {
                return Err(Error::Validation(format!(
                    "boundary component {j} must be a polynomial in the {} x variables (arity {})",
                    self.n,
                    p.nvars()
                )));
            }
        }
        if let Radius::Fixed(r) = self.radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Validation(format!("R must be positive, got {r}")));
            }
        }
        if self.orders.contains(&0) {
            return Err(Error::Validation("orders must be at least 1".into()));
        }
        Ok(())
    }

    /// `max(ceil(deg W / 2), 1)`: box and ball constraints are quadratic.
    pub fn r_min(&self) -> u32 {
        self.energy.w().degree().div_ceil(2).max(1)
    }

    /// Sample points on every facet (`per_axis` points per free coordinate).
    fn boundary_samples(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let n = self.n;
        let mut out = Vec::new();
        for facet in self.domain.facets() {
            let free: Vec<usize> = (0..n).filter(|&i| i != facet.axis).collect();
            let count = per_axis.pow(free.len() as u32);
            for idx in 0..count {
                let mut x = vec![0.0; n];
                x[facet.axis] = facet.value;
                let mut rem = idx;
                for &i in &free {
                    let t = (rem % per_axis) as f64 / (per_axis - 1).max(1) as f64;
                    rem /= per_axis;
                    let (lo, hi) = self.domain.bounds[i];
                    x[i] = lo + t * (hi - lo);
                }
                out.push(x);
            }
        }
        out
    }

    /// Sampled `sup |y_d|` over the boundary.
    pub fn boundary_sup(&self) -> f64 {
        self.boundary_samples(65)
            .iter()
            .map(|x| {
                self.boundary
                    .iter()
                    .map(|p| p.evaluate(x).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Sampled `sup |grad y_d|` (Frobenius) over the closed box.
    pub fn boundary_gradient_sup(&self) -> f64 {
        let n = self.n;
        let grads: Vec<Vec<Polynomial>> = self
            .boundary
            .iter()
            .map(|p| {
                (0..n)
                    .map(|i| p.differentiate(i).expect("x variable"))
                    .collect()
            })
            .collect();
        let per: usize = if n <= 2 { 33 } else { 9 };
        let total = per.pow(n as u32);
        let mut best: f64 = 0.0;
        for idx in 0..total {
            let mut rem = idx;
            let x: Vec<f64> = (0..n)
                .map(|i| {
                    let t = (rem % per) as f64 / (per - 1) as f64;
                    rem /= per;
                    let (lo, hi) = self.domain.bounds[i];
                    lo + t * (hi - lo)
                })
                .collect();
            let g: f64 = grads.iter().flatten().map(|p| p.evaluate(&x).powi(2)).sum();
            best = best.max(g.sqrt());
        }
        best
    }

    /// First radius of the automatic schedule.
    pub fn initial_radius(&self) -> f64 {
        4.0 * (1.0 + self.boundary_sup() + self.boundary_gradient_sup())
    }
}

/// Affine change of variables between original and rescaled coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub center: Vec<f64>,
    pub half: Vec<f64>,
    pub radius: f64,
    /// Common scale `s` of `y` and `Z`.
    pub scale: f64,
}

impl Scaling {
    pub fn new(domain: &BoxDomain, radius: f64, scale: f64) -> Self {
        Self {
            center: domain.center(),
            half: domain.half_widths(),
            radius,
            scale: scale.min(radius),
        }
    }

    /// Default scaling for a problem: `s = 1 + sup|y_d| + sup|grad y_d|`, independent of `R`.
    pub fn for_problem(spec: &ProblemSpec, radius: f64) -> Self {
        Self::new(&spec.domain, radius, 0.25 * spec.initial_radius())
    }

    /// No rescaling at all (`c = 0`, `h = 1`, `s = R = 1`).
    pub fn identity(n: usize) -> Self {
        Self {
            center: vec![0.0; n],
            half: vec![1.0; n],
            radius: 1.0,
            scale: 1.0,
        }
    }
}

/// All monomials of degree `<= 2r` in the `(x, y, Z)` variables, graded order.
#[derive(Clone, Debug)]
pub struct MonomialBasis {
    pub space: VariableSpace,
    pub order: u32,
    entries: Vec<MultiIndex>,
    index: HashMap<MultiIndex, usize>,
}

impl MonomialBasis {
    pub fn new(space: VariableSpace, order: u32) -> Self {
        Self::with_arity(space, space.arity(), order)
    }

    fn with_arity(space: VariableSpace, arity: usize, order: u32) -> Self {
        let entries = monomials_up_to(arity, 2 * order);
        let index = entries
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, m)| (m, i))
            .collect();
        Self {
            space,
            order,
            entries,
            index,
        }
    }

    /// Basis over a bare number of variables (used for small examples).
    pub fn over_arity(arity: usize, order: u32) -> Self {
        let space = VariableSpace::new(1).expect("n = 1");
        Self::with_arity(space, arity, order)
    }

    pub fn arity(&self) -> usize {
        self.entries.first().map(|m| m.arity()).unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MultiIndex] {
        &self.entries
    }

    pub fn lookup(&self, m: &MultiIndex) -> Option<usize> {
        self.index.get(m).copied()
    }

    /// Number of monomials of degree `<= d` (a prefix of the basis).
    pub fn prefix(&self, d: u32) -> usize {
        self.entries.partition_point(|m| m.degree() <= d)
    }

    /// `sum_alpha p_alpha z_alpha` as sparse coefficients; errors if `p` has
    /// degree above `2r`.
    pub fn linear_form(&self, p: &Polynomial) -> Result<Vec<(usize, f64)>> {
        let mut out = Vec::with_capacity(p.len());
        for (m, c) in p.terms() {
            let k = self.lookup(m).ok_or_else(|| {
                Error::Structure(format!("monomial {m:?} beyond degree {}", 2 * self.order))
            })?;
            out.push((k, c));
        }
        out.sort_by_key(|e| e.0);
        Ok(out)
    }
}

/// `D phi = sum_i (d phi_i / d x_i + sum_j d phi_i / d y_j * Z_ji)`.
pub fn divergence(phi: &[Polynomial], space: &VariableSpace) -> Result<Polynomial> {
    divergence_scaled(phi, space, &vec![1.0; space.dim()])
}

/// Divergence in rescaled coordinates, `x_i = c_i + h_i xh_i`, where the
/// `x`-derivatives pick up `1 / h_i` and the `y`, `Z` factors of `R` cancel.
pub fn divergence_scaled(
    phi: &[Polynomial],
    space: &VariableSpace,
    half: &[f64],
) -> Result<Polynomial> {
    let n = space.dim();
    if phi.len() != n {
        return Err(Error::Validation(format!(
            "test field needs {n} components"
        )));
    }
    let mut out = Polynomial::zero(space.arity());
    for (i, p) in phi.iter().enumerate() {
        if p.nvars() != space.arity() {
            return Err(Error::Structure(
                "test field must use the full variable space".into(),
            ));
        }
        for (m, _) in p.terms() {
            if space.z_range().any(|v| m.exponents()[v] > 0) {
                return Err(Error::Validation("test fields may not depend on Z".into()));
            }
        }
        out = out + p.differentiate(space.x(i))?.scale(1.0 / half[i]);
        for j in 0..n {
            let dy = p.differentiate(space.y(j))?;
            if !dy.is_zero() {
                out = out + dy * Polynomial::var(space.arity(), space.z(j, i));
            }
        }
    }
    Ok(out)
}

/// `int_{dOmega} phi(x, y_d(x)) . n(x) dsigma`, exact per facet.
pub fn boundary_functional(phi: &[Polynomial], spec: &ProblemSpec) -> Result<f64> {
    boundary_functional_scaled(phi, spec, &Scaling::identity(spec.n))
}

/// Same as [`boundary_functional`] for a test field written in rescaled
/// coordinates `(xh, yh)`.
pub fn boundary_functional_scaled(
    phi: &[Polynomial],
    spec: &ProblemSpec,
    sc: &Scaling,
) -> Result<f64> {
    let subst = boundary_substitution(spec, sc);
    boundary_functional_with(phi, spec, &subst)
}

fn boundary_substitution(spec: &ProblemSpec, sc: &Scaling) -> BTreeMap<usize, Polynomial> {
    let n = spec.n;
    let space = spec.space();
    let mut subst = BTreeMap::new();
    for i in 0..n {
        let xi =
            (Polynomial::var(n, i) - Polynomial::constant(n, sc.center[i])).scale(1.0 / sc.half[i]);
        subst.insert(space.x(i), xi);
        subst.insert(space.y(i), spec.boundary[i].scale(1.0 / sc.scale));
    }
    for v in space.z_range() {
        subst.insert(v, Polynomial::zero(n));
    }
    subst
}

fn boundary_functional_with(
    phi: &[Polynomial],
    spec: &ProblemSpec,
    subst: &BTreeMap<usize, Polynomial>,
) -> Result<f64> {
    let n = spec.n;
    let xv: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    for (i, p) in phi.iter().enumerate() {
        if p.is_zero() {
            continue;
        }
        let q = p.compose(n, subst)?;
        for facet in spec.domain.facets().into_iter().filter(|f| f.axis == i) {
            total += facet.normal_sign * integrate_edge(&q, &xv, &spec.domain, i, facet.value)?;
        }
    }
    Ok(total)
}

/// Test-field monomials: degree `<= 2r - 1` in `(xh, yh)`, plus pure-`xh`
/// monomials of degree `2r` and `2r + 1`, whose divergence still has degree
/// `<= 2r`. The latter pin every `x`-moment to its Lebesgue value.
fn test_monomials(space: &VariableSpace, r: u32) -> Vec<MultiIndex> {
    let n = space.dim();
    let lift = |e: &[u16]| {
        let mut full = vec![0u16; space.arity()];
        full[..e.len()].copy_from_slice(e);
        MultiIndex::new(full)
    };
    let mut out: Vec<MultiIndex> = monomials_up_to(2 * n, 2 * r - 1)
        .iter()
        .map(|m| lift(m.exponents()))
        .collect();
    out.extend(
        monomials_up_to(n, 2 * r + 1)
            .iter()
            .filter(|m| m.degree() >= 2 * r)
            .map(|m| lift(m.exponents())),
    );
    out
}

/// Stokes constraints `l_z(D phi) = b(phi)` for every test field `b e_i`,
/// duplicates included.
pub fn stokes_rows(
    spec: &ProblemSpec,
    basis: &MonomialBasis,
    sc: &Scaling,
) -> Result<Vec<(Vec<(usize, f64)>, f64)>> {
    let space = spec.space();
    let n = spec.n;
    let r = basis.order;
    let subst = boundary_substitution(spec, sc);
    let mut rows = Vec::new();
    for m in test_monomials(&space, r) {
        for i in 0..n {
            let mut phi = vec![Polynomial::zero(space.arity()); n];
            phi[i] = Polynomial::monomial(space.arity(), m.clone(), 1.0);
            let d = divergence_scaled(&phi, &space, &sc.half)?;
            assert!(
                d.degree() <= 2 * r,
                "test field divergence exceeds degree 2r"
            );
            let row = basis.linear_form(&d)?;
            let rhs = boundary_functional_with(&phi, spec, &subst)?;
            rows.push((row, rhs));
        }
    }
    Ok(rows)
}

/// Index table of the localizing matrix of `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalizingStructure {
    pub side: usize,
    /// Upper-triangle entries `(a, b, [(moment index, coefficient)])`.
    pub entries: Vec<(usize, usize, Vec<(usize, f64)>)>,
}

impl LocalizingStructure {
    pub fn to_block(&self) -> LmiBlock {
        let mut b = LmiBlock::new(self.side);
        for (a, c, terms) in &self.entries {
            for &(k, v) in terms {
                b.add_term(k, *a, *c, v);
            }
        }
        b
    }

    /// Dense evaluation at a moment vector.
    pub fn evaluate(&self, z: &[f64]) -> nalgebra::DMatrix<f64> {
        self.to_block().evaluate(z)
    }
}

/// `(beta, gamma) -> sum_delta g_delta z_{beta + gamma + delta}` over the
/// half-basis of degree `r - ceil(deg g / 2)`.
pub fn localizing_structure(
    g: &Polynomial,
    basis: &MonomialBasis,
    r: u32,
) -> Result<LocalizingStructure> {
    let rj = g.degree().div_ceil(2);
    if rj > r {
        return Err(Error::Validation(format!(
            "localizer of degree {} needs order >= {rj}",
            g.degree()
        )));
    }
    let side = basis.prefix(r - rj);
    let half = &basis.entries()[..side];
    let mut entries = Vec::with_capacity(side * (side + 1) / 2);
    for a in 0..side {
        for b in a..side {
            let ab = half[a].mul(&half[b]);
            let mut terms = Vec::with_capacity(g.len());
            for (d, c) in g.terms() {
                let k = basis
                    .lookup(&ab.mul(d))
                    .ok_or_else(|| Error::Structure("localizer entry beyond the basis".into()))?;
                terms.push((k, c));
            }
            entries.push((a, b, terms));
        }
    }
    Ok(LocalizingStructure { side, entries })
}

#[derive(Clone, Debug)]
pub struct MomentRelaxation {
    pub basis: MonomialBasis,
    pub scaling: Scaling,
    /// Block 0 is the moment matrix, then one box localizer per axis, then the ball.
    pub blocks: Vec<(String, LocalizingStructure)>,
    /// Independent Stokes rows.
    pub equalities: Vec<(Vec<(usize, f64)>, f64)>,
    /// Stokes rows before deduplication.
    pub raw_rows: usize,
    pub objective: Vec<(usize, f64)>,
}

impl MomentRelaxation {
    pub fn order(&self) -> u32 {
        self.basis.order
    }

    pub fn to_conic(&self) -> ConicProgram {
        let mut p = ConicProgram::new(self.basis.len());
        for &(k, v) in &self.objective {
            p.set_objective(k, v);
        }
        for (_, b) in &self.blocks {
            p.add_block(b.to_block());
        }
        for (row, rhs) in &self.equalities {
            p.add_equality(row.clone(), *rhs);
        }
        p
    }

    pub fn objective_value(&self, z: &[f64]) -> f64 {
        self.objective.iter().map(|&(k, v)| v * z[k]).sum()
    }

    /// Largest `|row . z - rhs|` over the kept Stokes rows.
    pub fn stokes_residual(&self, z: &[f64]) -> f64 {
        self.equalities
            .iter()
            .map(|(row, rhs)| (row.iter().map(|&(k, v)| v * z[k]).sum::<f64>() - rhs).abs())
            .fold(0.0, f64::max)
    }
}

/// Constraint polynomials in rescaled variables: `1 - xh_i^2` per axis and
/// `1 - rho^2 (|yh|^2 + |Zh|^2)` with `rho = s / R`.
pub fn support_constraints(space: &VariableSpace, rho: f64) -> Vec<(String, Polynomial)> {
    let a = space.arity();
    let one = Polynomial::constant(a, 1.0);
    let mut out = Vec::new();
    for i in 0..space.dim() {
        out.push((
            format!("box x{}", i + 1),
            one.clone() - Polynomial::var(a, space.x(i)).pow(2),
        ));
    }
    let mut ball = one;
    for v in space.y_range().chain(space.z_range()) {
        ball = ball - Polynomial::var(a, v).pow(2).scale(rho * rho);
    }
    out.push(("ball".to_string(), ball));
    out
}

/// `W(Z)` with `Z = s Zh`, in the full rescaled variable space.
pub fn scaled_energy(spec: &ProblemSpec, scale: f64) -> Polynomial {
    let space = spec.space();
    let nz = spec.n * spec.n;
    let mut out = Polynomial::zero(space.arity());
    for (m, c) in spec.energy.w().terms() {
        let mut e = vec![0u16; space.arity()];
        for k in 0..nz {
            e[space.z_range().start + k] = m.exponents()[k];
        }
        out.add_term(MultiIndex::new(e), c * scale.powi(m.degree() as i32));
    }
    out
}

/// Order-`r` relaxation at truncation radius `radius`.
pub fn assemble_relaxation(spec: &ProblemSpec, r: u32, radius: f64) -> Result<MomentRelaxation> {
    spec.validate()?;
    let r_min = spec.r_min();
    if r < r_min {
        return Err(Error::OrderTooLow {
            order: r as usize,
            r_min: r_min as usize,
        });
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Validation(format!(
            "R must be positive, got {radius}"
        )));
    }
    let space = spec.space();
    let basis = MonomialBasis::new(space, r);
    let sc = Scaling::for_problem(spec, radius);
    let mut blocks = vec![(
        "moment".to_string(),
        localizing_structure(&Polynomial::constant(space.arity(), 1.0), &basis, r)?,
    )];
    for (name, g) in support_constraints(&space, sc.scale / sc.radius) {
        blocks.push((name, localizing_structure(&g, &basis, r)?));
    }
    let rows = stokes_rows(spec, &basis, &sc)?;
    let raw_rows = rows.len();
    let coeffs: Vec<Vec<(usize, f64)>> = rows.iter().map(|r| r.0.clone()).collect();
    let kept = independent_rows(&coeffs, basis.len(), 1e-10);
    let equalities = kept.into_iter().map(|i| rows[i].clone()).collect();
    let objective = basis.linear_form(&scaled_energy(spec, sc.scale))?;
    Ok(MomentRelaxation {
        basis,
        scaling: sc,
        blocks,
        equalities,
        raw_rows,
        objective,
    })
}

/// `z_alpha = int_Omega b_alpha(xh(x), y(x)/R, grad y(x)/R) dx` for a polynomial
/// deformation `y` (components in `x`, arity `n`).
pub fn occupation_moments(
    y: &[Polynomial],
    spec: &ProblemSpec,
    basis: &MonomialBasis,
    sc: &Scaling,
) -> Result<Vec<f64>> {
    let n = spec.n;
    let space = spec.space();
    if y.len() != n || y.iter().any(|p| p.nvars() != n) {
        return Err(Error::Validation(format!(
            "deformation needs {n} components in x"
        )));
    }
    // each rescaled variable as a polynomial in x
    let mut var_poly = vec![Polynomial::zero(n); space.arity()];
    for i in 0..n {
        var_poly[space.x(i)] =
            (Polynomial::var(n, i) - Polynomial::constant(n, sc.center[i])).scale(1.0 / sc.half[i]);
        var_poly[space.y(i)] = y[i].scale(1.0 / sc.scale);
    }
    for j in 0..n {
        for i in 0..n {
            var_poly[space.z(j, i)] = y[j].differentiate(i)?.scale(1.0 / sc.scale);
        }
    }
    let bounds = spec.domain.integration_bounds(&(0..n).collect::<Vec<_>>());
    let mut cache: Vec<Polynomial> = Vec::with_capacity(basis.len());
    let mut out = Vec::with_capacity(basis.len());
    for (k, m) in basis.entries().iter().enumerate() {
        let p = if k == 0 {
            Polynomial::constant(n, 1.0)
        } else {
            // peel one variable off and reuse the lower-degree product
            let e = m.exponents();
            let v = e
                .iter()
                .position(|&x| x > 0)
                .expect("non-constant monomial");
            let mut lower = e.to_vec();
            lower[v] -= 1;
            let j = basis
                .lookup(&MultiIndex::new(lower))
                .expect("graded basis is closed");
            &cache[j] * &var_poly[v]
        };
        out.push(p.integrate_box_value(&bounds)?);
        cache.push(p);
    }
    Ok(out)
}

/// One solved relaxation.
#[derive(Clone, Debug)]
pub struct OrderSolve {
    pub relaxation: MomentRelaxation,
    pub solution: Solution,
    /// `l_z(W)`, the relaxation value in original units.
    pub value: f64,
    pub seconds: f64,
}

impl OrderSolve {
    pub fn order(&self) -> u32 {
        self.relaxation.order()
    }

    pub fn radius(&self) -> f64 {
        self.relaxation.scaling.radius
    }

    pub fn status(&self) -> SolveStatus {
        self.solution.status
    }
}

pub fn solve_relaxation(
    spec: &ProblemSpec,
    r: u32,
    radius: f64,
    opts: &SolveOptions,
) -> Result<OrderSolve> {
    let start = Instant::now();
    let relaxation = assemble_relaxation(spec, r, radius)?;
    let solution = crate::sdp::solve(&relaxation.to_conic(), opts)?;
    let value = relaxation.objective_value(&solution.z);
    Ok(OrderSolve {
        relaxation,
        solution,
        value,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Result of the radius doubling schedule.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadiusSchedule {
    pub radius: f64,
    /// `(R, value)` for every solve, in order.
    pub history: Vec<(f64, f64)>,
    pub converged: bool,
}

/// Relative change in the optimum below which the radius is accepted.
pub const RADIUS_REL_TOL: f64 = 1e-5;
/// Doublings tried after the initial radius.
pub const MAX_DOUBLINGS: usize = 6;

/// Double `R` from `R0` until the order-`r` value moves by less than
/// [`RADIUS_REL_TOL`] (relative). Returns the last solve too.
pub fn select_radius(
    spec: &ProblemSpec,
    r: u32,
    opts: &SolveOptions,
) -> Result<(RadiusSchedule, OrderSolve)> {
    let mut radius = spec.initial_radius();
    let mut history = Vec::new();
    let mut last = solve_relaxation(spec, r, radius, opts)?;
    history.push((radius, last.value));
    let mut converged = false;
    for _ in 0..MAX_DOUBLINGS {
        if last.status() != SolveStatus::Optimal {
            break;
        }
        let next = solve_relaxation(spec, r, 2.0 * radius, opts)?;
        history.push((2.0 * radius, next.value));
        if next.status() != SolveStatus::Optimal {
            break;
        }
        let change = (next.value - last.value).abs() / last.value.abs().max(1e-12);
        radius *= 2.0;
        last = next;
        if change < RADIUS_REL_TOL {
            converged = true;
            break;
        }
    }
    Ok((
        RadiusSchedule {
            radius,
            history,
            converged,
        },
        last,
    ))
}

/// Solve every requested order at one common radius, which keeps the bounds
/// comparable across orders. With [`Radius::Auto`] the radius comes from the
/// schedule at the first order.
pub fn run_hierarchy(
    spec: &ProblemSpec,
    orders: &[u32],
    radius: Radius,
    opts: &SolveOptions,
) -> Result<(Option<RadiusSchedule>, Vec<OrderSolve>)> {
    spec.validate()?;
    let r_min = spec.r_min();
    if let Some(&r) = orders.iter().find(|&&r| r < r_min) {
        return Err(Error::OrderTooLow {
            order: r as usize,
            r_min: r_min as usize,
        });
    }
    let mut out = Vec::with_capacity(orders.len());
    let (fixed, schedule) = match radius {
        Radius::Fixed(r) => (r, None),
        Radius::Auto => {
            let Some(&first) = orders.first() else {
                return Ok((None, out));
            };
            let (sch, solve) = select_radius(spec, first, opts)?;
            let r = sch.radius;
            out.push(solve);
            (r, Some(sch))
        }
    };
    for &r in &orders[out.len()..] {
        out.push(solve_relaxation(spec, r, fixed, opts)?);
    }
    Ok((schedule, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::svk_energy;

    fn linear_spec(a: [[f64; 2]; 2]) -> ProblemSpec {
        let b = (0..2)
            .map(|j| Polynomial::var(2, 0).scale(a[j][0]) + Polynomial::var(2, 1).scale(a[j][1]))
            .collect();
        ProblemSpec {
            n: 2,
            domain: BoxDomain::unit(2),
            energy: svk_energy(0.0, 4.0, 2).unwrap(),
            boundary: b,
            radius: Radius::Fixed(10.0),
            orders: vec![2],
        }
    }

    #[test]
    fn basis_sizes() {
        let sp = VariableSpace::new(2).unwrap();
        assert_eq!(MonomialBasis::new(sp, 1).len(), 45);
        assert_eq!(MonomialBasis::new(sp, 2).len(), 495);
        let b = MonomialBasis::new(sp, 2);
        assert_eq!(b.prefix(2), 45);
        let t = MonomialBasis::over_arity(1, 1);
        assert_eq!(t.len(), 3);
    }

    #[test]
    fn divergence_examples() {
        let sp = VariableSpace::new(2).unwrap();
        let a = sp.arity();
        let phi = [Polynomial::var(a, sp.x(0)), Polynomial::zero(a)];
        assert_eq!(divergence(&phi, &sp).unwrap(), Polynomial::constant(a, 1.0));
        let phi = [Polynomial::var(a, sp.y(0)), Polynomial::var(a, sp.y(1))];
        let want = Polynomial::var(a, sp.z(0, 0)) + Polynomial::var(a, sp.z(1, 1));
        assert_eq!(divergence(&phi, &sp).unwrap(), want);
        // psi(x) y_j e_i with psi = x_1^2, j = 1, i = 0
        let psi = Polynomial::var(a, sp.x(0)).pow(2);
        let phi = [&psi * &Polynomial::var(a, sp.y(1)), Polynomial::zero(a)];
        let want = Polynomial::var(a, sp.x(0)).scale(2.0) * Polynomial::var(a, sp.y(1))
            + &psi * &Polynomial::var(a, sp.z(1, 0));
        assert_eq!(divergence(&phi, &sp).unwrap(), want);
        let bad = [Polynomial::var(a, sp.z(0, 0)), Polynomial::zero(a)];
        assert!(divergence(&bad, &sp).is_err());
    }

    #[test]
    fn boundary_functional_examples() {
        let spec = linear_spec([[1.3, 0.2], [-0.4, 0.9]]);
        let sp = spec.space();
        let a = sp.arity();
        let e1 = [Polynomial::constant(a, 1.0), Polynomial::zero(a)];
        assert!(boundary_functional(&e1, &spec).unwrap().abs() < 1e-15);
        let x = [Polynomial::var(a, sp.x(0)), Polynomial::var(a, sp.x(1))];
        assert!((boundary_functional(&x, &spec).unwrap() - 2.0).abs() < 1e-14);
        let y1 = [Polynomial::var(a, sp.y(0)), Polynomial::zero(a)];
        assert!((boundary_functional(&y1, &spec).unwrap() - 1.3).abs() < 1e-14);
    }

    #[test]
    fn stokes_row_count_and_oracle() {
        let spec = linear_spec([[1.15, 0.65], [0.65, 1.15]]);
        let sp = spec.space();
        let b1 = MonomialBasis::new(sp, 1);
        let sc = Scaling::new(&spec.domain, 10.0, 3.0);
        // 5 mixed monomials of degree <= 1, 7 pure-x of degree 2 and 3, two components each
        assert_eq!(stokes_rows(&spec, &b1, &sc).unwrap().len(), 24);
        let b2 = MonomialBasis::new(sp, 2);
        let rows = stokes_rows(&spec, &b2, &sc).unwrap();
        let z = occupation_moments(&spec.boundary, &spec, &b2, &sc).unwrap();
        for (row, rhs) in rows {
            let lhs: f64 = row.iter().map(|&(k, v)| v * z[k]).sum();
            assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn occupation_moment_examples() {
        let a = [[1.15, 0.65], [0.65, 1.15]];
        let spec = linear_spec(a);
        let sp = spec.space();
        let b = MonomialBasis::new(sp, 1);
        let id = Scaling::identity(2);
        let z = occupation_moments(&spec.boundary, &spec, &b, &id).unwrap();
        assert_eq!(z[0], 1.0);
        let z11 = b.lookup(&MultiIndex::unit(sp.arity(), sp.z(0, 0))).unwrap();
        assert!((z[z11] - 1.15).abs() < 1e-15);
        let ident = linear_spec([[1.0, 0.0], [0.0, 1.0]]);
        let z = occupation_moments(&ident.boundary, &ident, &b, &id).unwrap();
        let y1 = b.lookup(&MultiIndex::unit(sp.arity(), sp.y(0))).unwrap();
        assert!((z[y1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn localizer_examples() {
        let b = MonomialBasis::over_arity(1, 1);
        let m = localizing_structure(&Polynomial::constant(1, 1.0), &b, 1).unwrap();
        assert_eq!(m.side, 2);
        let z = [3.0, 5.0, 7.0];
        assert_eq!(
            m.evaluate(&z),
            nalgebra::DMatrix::from_row_slice(2, 2, &[3.0, 5.0, 5.0, 7.0])
        );
        let g = Polynomial::var(1, 0) - Polynomial::var(1, 0).pow(2);
        let l = localizing_structure(&g, &b, 1).unwrap();
        assert_eq!(l.side, 1);
        assert_eq!(l.evaluate(&z)[(0, 0)], 5.0 - 7.0);
        let sp = VariableSpace::new(2).unwrap();
        let b2 = MonomialBasis::new(sp, 2);
        let ball = support_constraints(&sp, 1.0).pop().unwrap().1;
        assert_eq!(localizing_structure(&ball, &b2, 2).unwrap().side, 9);
    }

    #[test]
    fn order_below_minimum_rejected() {
        let spec = linear_spec([[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(spec.r_min(), 2);
        assert!(matches!(
            assemble_relaxation(&spec, 1, 10.0),
            Err(Error::OrderTooLow { order: 1, r_min: 2 })
        ));
        let rel = assemble_relaxation(&spec, 2, 10.0).unwrap();
        assert_eq!(rel.blocks[0].1.side, 45);
        assert!(rel.equalities.len() < rel.raw_rows);
    }

    #[test]
    fn json_round_trip() {
        let spec = linear_spec([[1.15, 0.65], [0.65, 1.15]]);
        let s = serde_json::to_string(&spec).unwrap();
        let back = ProblemSpec::from_json(&s).unwrap();
        assert_eq!(back, spec);
        let auto = s.replace("10.0", "\"auto\"");
        assert_eq!(ProblemSpec::from_json(&auto).unwrap().radius, Radius::Auto);
    }
}
