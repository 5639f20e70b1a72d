//! Conditional-barycenter extraction of a deformation from a moment vector, and
//! re-evaluation of the relaxed objective along it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{MonomialBasis, ProblemSpec, Scaling};
use crate::poly::{monomials_up_to, BoxDomain, MultiIndex, Polynomial};

/// Polynomial deformation `x -> p(x)` on a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeformationField {
    pub components: Vec<Polynomial>,
    pub domain: BoxDomain,
    pub order: u32,
    pub degree: u32,
}

impl DeformationField {
    pub fn new(components: Vec<Polynomial>, domain: BoxDomain) -> Result<Self> {
        let n = domain.dim();
        if components.len() != n || components.iter().any(|p| p.nvars() != n) {
            return Err(Error::Validation(format!(
                "a deformation of a {n}-dimensional box needs {n} components in x"
            )));
        }
        let degree = components.iter().map(|p| p.degree()).max().unwrap_or(0);
        Ok(Self {
            components,
            domain,
            order: 0,
            degree,
        })
    }

    pub fn n(&self) -> usize {
        self.domain.dim()
    }

    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|p| p.evaluate(x)).collect()
    }

    /// Symbolic gradient, `grad[j][i] = d p_j / d x_i`.
    pub fn gradient(&self) -> Vec<Vec<Polynomial>> {
        let n = self.n();
        self.components
            .iter()
            .map(|p| {
                (0..n)
                    .map(|i| p.differentiate(i).expect("x variable"))
                    .collect()
            })
            .collect()
    }

    /// Largest `|p(x) - y_d(x)|` over facet samples (`per_axis` per free coordinate).
    pub fn boundary_trace_error(&self, boundary: &[Polynomial], per_axis: usize) -> f64 {
        let n = self.n();
        let per = per_axis.max(2);
        let mut worst: f64 = 0.0;
        for facet in self.domain.facets() {
            let free: Vec<usize> = (0..n).filter(|&i| i != facet.axis).collect();
            for idx in 0..per.pow(free.len() as u32) {
                let mut x = vec![0.0; n];
                x[facet.axis] = facet.value;
                let mut rem = idx;
                for &i in &free {
                    let t = (rem % per) as f64 / (per - 1) as f64;
                    rem /= per;
                    let (lo, hi) = self.domain.bounds[i];
                    x[i] = lo + t * (hi - lo);
                }
                let d: f64 = self
                    .components
                    .iter()
                    .zip(boundary)
                    .map(|(p, b)| (p.evaluate(&x) - b.evaluate(&x)).powi(2))
                    .sum();
                worst = worst.max(d.sqrt());
            }
        }
        worst
    }
}

/// Least-squares fit `p_j = argmin int |p - y_j|^2 dmu` over degree-`d`
/// polynomials in `x`, i.e. the normal equations with Gram `int phi phi^T dmu`.
/// The Gram needs pure-`x` moments up to degree `2d`, so `d <= r`.
pub fn barycenter(
    z: &[f64],
    basis: &MonomialBasis,
    spec: &ProblemSpec,
    scaling: &Scaling,
    d: u32,
) -> Result<DeformationField> {
    let n = spec.n;
    let space = basis.space;
    let r = basis.order;
    if z.len() != basis.len() {
        return Err(Error::Validation(format!(
            "moment vector has {} entries, basis has {}",
            z.len(),
            basis.len()
        )));
    }
    if d > r || d == 0 {
        return Err(Error::Validation(format!(
            "extraction degree must be in 1..={r} at order {r}, got {d}"
        )));
    }
    let lift = |e: &[u16]| {
        let mut full = vec![0u16; space.arity()];
        full[..n].copy_from_slice(e);
        MultiIndex::new(full)
    };
    let phi = monomials_up_to(n, d);
    let k = phi.len();
    let mut gram = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let m = phi[a].mul(&phi[b]);
            let v = z[basis.lookup(&lift(m.exponents())).expect("degree <= 2r")];
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
    }
    let maxd = (0..k).map(|i| gram[(i, i)]).fold(0.0, f64::max);
    for i in 0..k {
        gram[(i, i)] += 1e-12 * maxd.max(1e-300);
    }
    let chol = gram.clone().cholesky().ok_or_else(|| {
        Error::Conditioning(format!(
            "x-moment Gram matrix of size {k} is not positive definite after 1e-12 regularization"
        ))
    })?;
    // map xh = (x - c) / h back to x
    let mut subst = std::collections::BTreeMap::new();
    for i in 0..n {
        subst.insert(
            i,
            (Polynomial::var(n, i) - Polynomial::constant(n, scaling.center[i]))
                .scale(1.0 / scaling.half[i]),
        );
    }
    let mut components = Vec::with_capacity(n);
    for j in 0..n {
        let rhs = DVector::from_iterator(
            k,
            phi.iter().map(|m| {
                let mut e = lift(m.exponents()).exponents().to_vec();
                e[space.y(j)] += 1;
                z[basis.lookup(&MultiIndex::new(e)).expect("degree <= 2r")]
            }),
        );
        let c = chol.solve(&rhs);
        let mut p = Polynomial::zero(n);
        for (m, &cv) in phi.iter().zip(c.iter()) {
            p.add_term(m.clone(), cv * scaling.scale);
        }
        components.push(p.compose(n, &subst)?);
    }
    let mut field = DeformationField::new(components, spec.domain.clone())?;
    field.order = r;
    field.degree = d;
    Ok(field)
}

/// Midpoint-rule integral of `oracle(grad p(x))` over the box, `grid[i]` cells per axis.
pub fn quasiconvex_objective<O>(field: &DeformationField, oracle: O, grid: &[usize]) -> f64
where
    O: Fn(&DMatrix<f64>) -> f64,
{
    let n = field.n();
    assert_eq!(grid.len(), n, "one cell count per axis");
    let grad = field.gradient();
    let total: usize = grid.iter().product();
    let mut sum = 0.0;
    let mut x = vec![0.0; n];
    for idx in 0..total {
        let mut rem = idx;
        for i in 0..n {
            let (lo, hi) = field.domain.bounds[i];
            let c = rem % grid[i];
            rem /= grid[i];
            x[i] = lo + (c as f64 + 0.5) / grid[i] as f64 * (hi - lo);
        }
        let f = DMatrix::from_fn(n, n, |j, i| grad[j][i].evaluate(&x));
        sum += oracle(&f);
    }
    sum / total as f64 * field.domain.volume()
}

/// One sample of a wireframe line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WirePoint {
    pub line_id: usize,
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Grid lines parallel to each axis at `lines` equally spaced offsets per free
/// coordinate, each sampled at `pts` points, with their images.
pub fn wireframe(field: &DeformationField, lines: usize, pts: usize) -> Vec<WirePoint> {
    let n = field.n();
    let lines = lines.max(2);
    let pts = pts.max(2);
    let b = &field.domain.bounds;
    let mut out = Vec::new();
    let mut line_id = 0;
    for axis in 0..n {
        let free: Vec<usize> = (0..n).filter(|&i| i != axis).collect();
        for idx in 0..lines.pow(free.len() as u32) {
            let mut base = vec![0.0; n];
            let mut rem = idx;
            for &i in &free {
                let s = (rem % lines) as f64 / (lines - 1) as f64;
                rem /= lines;
                base[i] = b[i].0 + s * (b[i].1 - b[i].0);
            }
            for k in 0..pts {
                let t = k as f64 / (pts - 1) as f64;
                let mut x = base.clone();
                x[axis] = b[axis].0 + t * (b[axis].1 - b[axis].0);
                let y = field.evaluate(&x);
                out.push(WirePoint { line_id, t, x, y });
            }
            line_id += 1;
        }
    }
    out
}

/// `line_id,t,x1,..,xn,y1,..,yn` rows with header.
pub fn wireframe_csv(points: &[WirePoint]) -> String {
    let n = points.first().map(|p| p.x.len()).unwrap_or(2);
    let mut s = String::from("line_id,t");
    for i in 1..=n {
        s.push_str(&format!(",x{i}"));
    }
    for i in 1..=n {
        s.push_str(&format!(",y{i}"));
    }
    s.push('\n');
    for p in points {
        s.push_str(&format!("{},{}", p.line_id, p.t));
        for v in p.x.iter().chain(&p.y) {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

/// Diagnostics of one extracted field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub order: u32,
    pub lower_bound: f64,
    pub barycentric_value: f64,
    pub boundary_trace_error: f64,
}
