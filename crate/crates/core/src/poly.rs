//! Sparse multivariate polynomials with real coefficients.
//!
//! Monomials are stored as dense exponent vectors ([`MultiIndex`]) and kept in
//! graded order: lower total degree first, and within one degree the vector
//! with the larger leading exponent first (`1, x1, x2, ..., x1^2, x1 x2, ...`).
//! This is the same order used to enumerate moment bases, so a basis of degree
//! `<= r` is always a prefix of the basis of degree `<= 2r`.
//!
//! Coefficients are `f64`. Normalization removes coefficients that are exactly
//! `0.0` and nothing else.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Exponent vector of a monomial.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    exps: Box<[u16]>,
}

impl MultiIndex {
    pub fn new(exps: Vec<u16>) -> Self {
        Self {
            exps: exps.into_boxed_slice(),
        }
    }

    pub fn zero(arity: usize) -> Self {
        Self::new(vec![0; arity])
    }

    pub fn unit(arity: usize, var: usize) -> Self {
        let mut e = vec![0; arity];
        e[var] = 1;
        Self::new(e)
    }

    #[inline]
    pub fn exponents(&self) -> &[u16] {
        &self.exps
    }

    #[inline]
    pub fn arity(&self) -> usize {
        self.exps.len()
    }

    #[inline]
    pub fn degree(&self) -> u32 {
        self.exps.iter().map(|&e| e as u32).sum()
    }

    pub fn is_constant(&self) -> bool {
        self.exps.iter().all(|&e| e == 0)
    }

    /// Monomial product.
    pub fn mul(&self, other: &MultiIndex) -> MultiIndex {
        debug_assert_eq!(self.arity(), other.arity());
        MultiIndex::new(
            self.exps
                .iter()
                .zip(other.exps.iter())
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn evaluate(&self, point: &[f64]) -> f64 {
        self.exps
            .iter()
            .zip(point)
            .filter(|(&e, _)| e > 0)
            .map(|(&e, &v)| v.powi(e as i32))
            .product()
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| {
            // larger leading exponent sorts first within a degree
            for (a, b) in self.exps.iter().zip(other.exps.iter()) {
                match b.cmp(a) {
                    Ordering::Equal => continue,
                    ord => return ord,
                }
            }
            self.exps.len().cmp(&other.exps.len())
        })
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &self.exps[..])
    }
}

/// Enumerate all exponent vectors of `arity` variables with total degree
/// `<= max_degree`, in graded order.
pub fn monomials_up_to(arity: usize, max_degree: u32) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    let mut buf = vec![0u16; arity];
    for d in 0..=max_degree {
        fill_degree(&mut buf, 0, d, &mut out);
    }
    out
}

fn fill_degree(buf: &mut [u16], pos: usize, remaining: u32, out: &mut Vec<MultiIndex>) {
    if pos + 1 == buf.len() {
        buf[pos] = remaining as u16;
        out.push(MultiIndex::new(buf.to_vec()));
        buf[pos] = 0;
        return;
    }
    if buf.is_empty() {
        if remaining == 0 {
            out.push(MultiIndex::new(Vec::new()));
        }
        return;
    }
    for e in (0..=remaining).rev() {
        buf[pos] = e as u16;
        fill_degree(buf, pos + 1, remaining - e, out);
    }
    buf[pos] = 0;
}

/// Layout of the `(x, y, Z)` variables of an `n`-dimensional problem.
///
/// Indices are dense: `x_i` at `i`, `y_j` at `n + j`, `Z_{j,i}` at
/// `2n + j n + i` (row-major, row = deformation component, column =
/// derivative direction).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VariableSpace {
    n: usize,
}

impl VariableSpace {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Validation(
                "spatial dimension must be positive".into(),
            ));
        }
        Ok(Self { n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn arity(&self) -> usize {
        2 * self.n + self.n * self.n
    }

    pub fn x(&self, i: usize) -> usize {
        assert!(i < self.n);
        i
    }

    pub fn y(&self, j: usize) -> usize {
        assert!(j < self.n);
        self.n + j
    }

    /// Index of `Z_{j,i}`, the derivative of `y_j` along `x_i`.
    pub fn z(&self, j: usize, i: usize) -> usize {
        assert!(j < self.n && i < self.n);
        2 * self.n + j * self.n + i
    }

    pub fn x_range(&self) -> std::ops::Range<usize> {
        0..self.n
    }

    pub fn y_range(&self) -> std::ops::Range<usize> {
        self.n..2 * self.n
    }

    pub fn z_range(&self) -> std::ops::Range<usize> {
        2 * self.n..self.arity()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
}

/// Sparse polynomial in a fixed number of variables.
#[derive(Clone, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<MultiIndex, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Self::monomial(nvars, MultiIndex::zero(nvars), c)
    }

    pub fn var(nvars: usize, index: usize) -> Self {
        assert!(
            index < nvars,
            "variable {index} out of range for arity {nvars}"
        );
        Self::monomial(nvars, MultiIndex::unit(nvars, index), 1.0)
    }

    pub fn monomial(nvars: usize, alpha: MultiIndex, coeff: f64) -> Self {
        assert_eq!(alpha.arity(), nvars);
        let mut terms = BTreeMap::new();
        if coeff != 0.0 {
            terms.insert(alpha, coeff);
        }
        Self { nvars, terms }
    }

    /// Build from `(exponents, coefficient)` pairs; repeated monomials are summed.
    pub fn from_terms<I>(nvars: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (MultiIndex, f64)>,
    {
        let mut p = Self::zero(nvars);
        for (alpha, c) in terms {
            if alpha.arity() != nvars {
                return Err(Error::Structure(format!(
                    "monomial of arity {} in a polynomial of arity {nvars}",
                    alpha.arity()
                )));
            }
            p.add_term(alpha, c);
        }
        Ok(p)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; `0` for the zero polynomial.
    pub fn degree(&self) -> u32 {
        self.terms.keys().next_back().map_or(0, |m| m.degree())
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn coeff(&self, alpha: &MultiIndex) -> f64 {
        self.terms.get(alpha).copied().unwrap_or(0.0)
    }

    /// Constant term.
    pub fn constant_term(&self) -> f64 {
        self.coeff(&MultiIndex::zero(self.nvars))
    }

    pub fn add_term(&mut self, alpha: MultiIndex, c: f64) {
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(alpha);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = *o.get() + c;
                if s == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    /// True when every monomial only uses variables in `vars`.
    pub fn depends_only_on(&self, vars: std::ops::Range<usize>) -> bool {
        self.terms.keys().all(|m| {
            m.exponents()
                .iter()
                .enumerate()
                .all(|(i, &e)| e == 0 || vars.contains(&i))
        })
    }

    fn check_same_space(&self, other: &Polynomial) -> Result<()> {
        if self.nvars != other.nvars {
            return Err(Error::Structure(format!(
                "polynomials live in different variable spaces ({} vs {} variables)",
                self.nvars, other.nvars
            )));
        }
        Ok(())
    }

    pub fn arith(&self, other: &Polynomial, op: ArithOp) -> Result<Polynomial> {
        self.check_same_space(other)?;
        Ok(match op {
            ArithOp::Add => {
                let mut out = self.clone();
                for (m, c) in other.terms() {
                    out.add_term(m.clone(), c);
                }
                out
            }
            ArithOp::Sub => {
                let mut out = self.clone();
                for (m, c) in other.terms() {
                    out.add_term(m.clone(), -c);
                }
                out
            }
            ArithOp::Mul => {
                let mut out = Polynomial::zero(self.nvars);
                for (ma, ca) in self.terms() {
                    for (mb, cb) in other.terms() {
                        out.add_term(ma.mul(mb), ca * cb);
                    }
                }
                out
            }
        })
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut out = Polynomial::zero(self.nvars);
        if s != 0.0 {
            for (m, c) in self.terms() {
                out.add_term(m.clone(), c * s);
            }
        }
        out
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        let mut acc = Polynomial::constant(self.nvars, 1.0);
        for _ in 0..k {
            acc = &acc * self;
        }
        acc
    }

    /// Exact partial derivative with respect to variable `var`.
    pub fn differentiate(&self, var: usize) -> Result<Polynomial> {
        if var >= self.nvars {
            return Err(Error::Structure(format!(
                "variable index {var} out of range for arity {}",
                self.nvars
            )));
        }
        let mut out = Polynomial::zero(self.nvars);
        for (m, c) in self.terms() {
            let e = m.exponents()[var];
            if e == 0 {
                continue;
            }
            let mut exps = m.exponents().to_vec();
            exps[var] -= 1;
            out.add_term(MultiIndex::new(exps), c * e as f64);
        }
        Ok(out)
    }

    /// Direct sum of monomial values at `point` (length must equal the arity).
    pub fn evaluate(&self, point: &[f64]) -> f64 {
        assert_eq!(point.len(), self.nvars, "evaluation point has wrong length");
        self.terms().map(|(m, c)| c * m.evaluate(point)).sum()
    }

    /// Substitute polynomials for variables.
    ///
    /// The result lives in a space of `target_nvars` variables. Variables with
    /// an entry in `subst` are replaced by that polynomial; the others are
    /// passed through unchanged, which requires them to exist in the target.
    pub fn compose(
        &self,
        target_nvars: usize,
        subst: &BTreeMap<usize, Polynomial>,
    ) -> Result<Polynomial> {
        for (&v, q) in subst {
            if v >= self.nvars {
                return Err(Error::Structure(format!(
                    "substitution for variable {v} but arity is {}",
                    self.nvars
                )));
            }
            if q.nvars != target_nvars {
                return Err(Error::Structure(format!(
                    "substituted polynomial for variable {v} has arity {}, expected {target_nvars}",
                    q.nvars
                )));
            }
        }
        // cached powers of each substituted variable
        let mut powers: BTreeMap<usize, Vec<Polynomial>> = BTreeMap::new();
        let mut out = Polynomial::zero(target_nvars);
        for (m, c) in self.terms() {
            let mut pass = vec![0u16; target_nvars];
            let mut factor = Polynomial::constant(target_nvars, c);
            for (v, &e) in m.exponents().iter().enumerate() {
                if e == 0 {
                    continue;
                }
                match subst.get(&v) {
                    Some(q) => {
                        let cache = powers
                            .entry(v)
                            .or_insert_with(|| vec![Polynomial::constant(target_nvars, 1.0)]);
                        while cache.len() <= e as usize {
                            let next = cache.last().unwrap() * q;
                            cache.push(next);
                        }
                        factor = &factor * &cache[e as usize];
                    }
                    None => {
                        if v >= target_nvars {
                            return Err(Error::Structure(format!(
                                "variable {v} passes through but the target has only {target_nvars} variables"
                            )));
                        }
                        pass[v] += e;
                    }
                }
            }
            let shift = MultiIndex::new(pass);
            if shift.is_constant() {
                out = &out + &factor;
            } else {
                for (fm, fc) in factor.terms() {
                    out.add_term(fm.mul(&shift), fc);
                }
            }
        }
        Ok(out)
    }

    /// Re-index variables: variable `i` of `self` becomes `map[i]` in a space
    /// of `target_nvars` variables.
    pub fn remap(&self, target_nvars: usize, map: &[usize]) -> Result<Polynomial> {
        if map.len() != self.nvars {
            return Err(Error::Structure(format!(
                "remap table has {} entries for arity {}",
                map.len(),
                self.nvars
            )));
        }
        if let Some(&bad) = map.iter().find(|&&t| t >= target_nvars) {
            return Err(Error::Structure(format!(
                "remap target {bad} out of range for arity {target_nvars}"
            )));
        }
        let mut out = Polynomial::zero(target_nvars);
        for (m, c) in self.terms() {
            let mut exps = vec![0u16; target_nvars];
            for (i, &e) in m.exponents().iter().enumerate() {
                exps[map[i]] += e;
            }
            out.add_term(MultiIndex::new(exps), c);
        }
        Ok(out)
    }

    /// Integrate out the listed variables over `[lo, hi]` each, monomial by
    /// monomial. The remaining variables pass through; the result stays in the
    /// same space with zero exponents on the integrated variables.
    pub fn integrate_box(&self, bounds: &[(usize, f64, f64)]) -> Result<Polynomial> {
        for &(v, lo, hi) in bounds {
            if v >= self.nvars {
                return Err(Error::Structure(format!(
                    "integration variable {v} out of range for arity {}",
                    self.nvars
                )));
            }
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Validation(
                    "integration bounds must be finite".into(),
                ));
            }
        }
        let mut out = Polynomial::zero(self.nvars);
        for (m, c) in self.terms() {
            let mut exps = m.exponents().to_vec();
            let mut w = c;
            for &(v, lo, hi) in bounds {
                let k = exps[v] as i32;
                w *= (hi.powi(k + 1) - lo.powi(k + 1)) / (k + 1) as f64;
                exps[v] = 0;
            }
            out.add_term(MultiIndex::new(exps), w);
        }
        Ok(out)
    }

    /// Like [`integrate_box`](Self::integrate_box) when every variable is
    /// integrated out; returns the scalar value.
    pub fn integrate_box_value(&self, bounds: &[(usize, f64, f64)]) -> Result<f64> {
        let p = self.integrate_box(bounds)?;
        if p.terms.keys().any(|m| !m.is_constant()) {
            return Err(Error::Structure(
                "polynomial depends on variables outside the integration box".into(),
            ));
        }
        Ok(p.constant_term())
    }

    /// Fix variable `var` to `value`.
    pub fn restrict(&self, var: usize, value: f64) -> Polynomial {
        let mut out = Polynomial::zero(self.nvars);
        for (m, c) in self.terms() {
            let mut exps = m.exponents().to_vec();
            let e = exps[var];
            exps[var] = 0;
            out.add_term(MultiIndex::new(exps), c * value.powi(e as i32));
        }
        out
    }

    /// Set a new arity for the zero polynomial or check an existing one.
    pub fn with_arity(mut self, nvars: usize) -> Result<Polynomial> {
        if self.terms.is_empty() {
            self.nvars = nvars;
            return Ok(self);
        }
        if self.nvars != nvars {
            return Err(Error::Structure(format!(
                "expected a polynomial in {nvars} variables, got {}",
                self.nvars
            )));
        }
        Ok(self)
    }

    /// Maximum absolute coefficient difference.
    pub fn max_coeff_diff(&self, other: &Polynomial) -> f64 {
        let d = self - other;
        d.terms().map(|(_, c)| c.abs()).fold(0.0, f64::max)
    }
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, c) in self.terms() {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{c}")?;
            for (i, &e) in m.exponents().iter().enumerate() {
                match e {
                    0 => {}
                    1 => write!(f, "*v{i}")?,
                    _ => write!(f, "*v{i}^{e}")?,
                }
            }
        }
        Ok(())
    }
}

macro_rules! impl_binop {
    ($trait:ident, $method:ident, $op:expr) => {
        impl std::ops::$trait<&Polynomial> for &Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: &Polynomial) -> Polynomial {
                self.arith(rhs, $op).expect("polynomial arity mismatch")
            }
        }
        impl std::ops::$trait<Polynomial> for Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: Polynomial) -> Polynomial {
                (&self).arith(&rhs, $op).expect("polynomial arity mismatch")
            }
        }
    };
}

impl_binop!(Add, add, ArithOp::Add);
impl_binop!(Sub, sub, ArithOp::Sub);
impl_binop!(Mul, mul, ArithOp::Mul);

impl std::ops::Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

#[derive(Serialize, Deserialize)]
struct TermRepr {
    exponents: Vec<u32>,
    coeff: f64,
}

impl Serialize for Polynomial {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let terms: Vec<TermRepr> = self
            .terms()
            .map(|(m, c)| TermRepr {
                exponents: m.exponents().iter().map(|&e| e as u32).collect(),
                coeff: c,
            })
            .collect();
        terms.serialize(serializer)
    }
}

/// Deserialization infers the arity from the exponent vectors; an empty array
/// gives a zero polynomial of arity 0, to be fixed with
/// [`Polynomial::with_arity`].
impl<'de> Deserialize<'de> for Polynomial {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let terms = Vec::<TermRepr>::deserialize(deserializer)?;
        let nvars = terms.first().map_or(0, |t| t.exponents.len());
        let mut p = Polynomial::zero(nvars);
        for t in terms {
            if t.exponents.len() != nvars {
                return Err(serde::de::Error::custom(
                    "all terms of a polynomial must have the same number of exponents",
                ));
            }
            if !t.coeff.is_finite() {
                return Err(serde::de::Error::custom("non-finite coefficient"));
            }
            let exps = t
                .exponents
                .iter()
                .map(|&e| u16::try_from(e).map_err(serde::de::Error::custom))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            p.add_term(MultiIndex::new(exps), t.coeff);
        }
        Ok(p)
    }
}

/// Axis-aligned box `prod [lo_i, hi_i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub bounds: Vec<(f64, f64)>,
}

impl BoxDomain {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::Validation("box must have at least one axis".into()));
        }
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::Validation(format!(
                    "degenerate box axis {i}: [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { bounds })
    }

    pub fn unit(n: usize) -> Self {
        Self {
            bounds: vec![(0.0, 1.0); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn volume(&self) -> f64 {
        self.bounds.iter().map(|(lo, hi)| hi - lo).product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect()
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.bounds.iter().map(|(lo, hi)| 0.5 * (hi - lo)).collect()
    }

    /// The `2n` facets, each with its outward normal sign.
    pub fn facets(&self) -> Vec<Facet> {
        let mut out = Vec::with_capacity(2 * self.dim());
        for (axis, &(lo, hi)) in self.bounds.iter().enumerate() {
            out.push(Facet {
                axis,
                value: lo,
                normal_sign: -1.0,
            });
            out.push(Facet {
                axis,
                value: hi,
                normal_sign: 1.0,
            });
        }
        out
    }

    /// Bounds for [`Polynomial::integrate_box`] over the x-variables `x_vars`.
    pub fn integration_bounds(&self, x_vars: &[usize]) -> Vec<(usize, f64, f64)> {
        x_vars
            .iter()
            .zip(&self.bounds)
            .map(|(&v, &(lo, hi))| (v, lo, hi))
            .collect()
    }
}

/// Axis-aligned facet `x_axis = value` of a box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Facet {
    pub axis: usize,
    pub value: f64,
    pub normal_sign: f64,
}

/// Exact integral of `p` over a facet of `domain` with respect to surface
/// measure. `x_vars[i]` is the variable index of coordinate `x_i`; `p` may only
/// depend on those variables.
pub fn integrate_edge(
    p: &Polynomial,
    x_vars: &[usize],
    domain: &BoxDomain,
    axis: usize,
    value: f64,
) -> Result<f64> {
    if x_vars.len() != domain.dim() || axis >= domain.dim() {
        return Err(Error::Structure(format!(
            "facet axis {axis} does not belong to a {}-dimensional box",
            domain.dim()
        )));
    }
    let (lo, hi) = domain.bounds[axis];
    if value != lo && value != hi {
        return Err(Error::Structure(format!(
            "x_{axis} = {value} is not a facet of [{lo}, {hi}]"
        )));
    }
    for (m, _) in p.terms() {
        for (v, &e) in m.exponents().iter().enumerate() {
            if e > 0 && !x_vars.contains(&v) {
                return Err(Error::Structure(format!(
                    "edge integrand depends on non-x variable {v}"
                )));
            }
        }
    }
    let fixed = p.restrict(x_vars[axis], value);
    let bounds: Vec<(usize, f64, f64)> = x_vars
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != axis)
        .map(|(i, &v)| (v, domain.bounds[i].0, domain.bounds[i].1))
        .collect();
    fixed.integrate_box_value(&bounds)
}
