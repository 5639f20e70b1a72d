#![allow(dead_code)]

use cgrelax::energy::random_rotation;
use cgrelax::{BoxDomain, ConicProgram, LmiBlock, MultiIndex, Polynomial, ProblemSpec, Radius};
use nalgebra::DMatrix;
use rand::{Rng, RngExt};

pub fn spd(rng: &mut impl Rng, side: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(side, side, |_, _| rng.random_range(-1.0..1.0));
    &g * g.transpose() / side as f64 + DMatrix::identity(side, side) * 0.1
}

/// Strictly feasible primal and dual: `z0` is interior, and `c` is built from
/// a positive definite dual point, so an optimum exists.
pub fn random_feasible_sdp(
    rng: &mut impl Rng,
    sides: &[usize],
    m: usize,
    p: usize,
) -> (ConicProgram, Vec<f64>) {
    assert!(p < m);
    let z0: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut c = vec![0.0; m];
    let mut prog = ConicProgram::new(m);
    for &side in sides {
        let y = spd(rng, side);
        let mut block = LmiBlock::new(side);
        let mut shift = DMatrix::<f64>::zeros(side, side);
        for k in 0..m {
            for _ in 0..side.min(6) {
                let i = rng.random_range(0..side);
                let j = rng.random_range(0..side);
                let v: f64 = rng.random_range(-1.0..1.0);
                block.add_term(k, i, j, v);
                let w = if i == j { y[(i, i)] } else { 2.0 * y[(i, j)] };
                c[k] += v * w;
                shift[(i, j)] += v * z0[k];
                if i != j {
                    shift[(j, i)] += v * z0[k];
                }
            }
        }
        let b0 = spd(rng, side) - shift;
        for i in 0..side {
            for j in i..side {
                block.add_constant(i, j, b0[(i, j)]);
            }
        }
        prog.add_block(block);
    }
    for _ in 0..p {
        let row: Vec<(usize, f64)> = (0..m).map(|k| (k, rng.random_range(-1.0..1.0))).collect();
        let lam: f64 = rng.random_range(-1.0..1.0);
        for &(k, v) in &row {
            c[k] += lam * v;
        }
        let rhs = row.iter().map(|&(k, v)| v * z0[k]).sum();
        prog.add_equality(row, rhs);
    }
    for (k, v) in c.into_iter().enumerate() {
        prog.set_objective(k, v);
    }
    (prog, z0)
}

/// `min z0 + z1` over `[[z0, 1], [1, z1]] PSD`; optimum 2 at `z = (1, 1)`.
pub fn analytic_2x2() -> ConicProgram {
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

pub fn linear_boundary(a: &DMatrix<f64>) -> Vec<Polynomial> {
    let n = a.nrows();
    (0..n)
        .map(|j| {
            let terms = (0..n).map(|i| (MultiIndex::unit(n, i), a[(j, i)]));
            Polynomial::from_terms(n, terms).unwrap()
        })
        .collect()
}

pub fn svk_spec(boundary: Vec<Polynomial>, radius: Radius, orders: Vec<u32>) -> ProblemSpec {
    ProblemSpec {
        n: 2,
        domain: BoxDomain::unit(2),
        energy: cgrelax::svk_energy(0.0, 4.0, 2).unwrap(),
        boundary,
        radius,
        orders,
    }
}

/// `R1 diag(s) R2` with singular values drawn from `lo..hi`.
pub fn random_with_singular_values(rng: &mut impl Rng, lo: f64, hi: f64) -> DMatrix<f64> {
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(2, |_, _| {
        rng.random_range(lo..hi)
    }));
    random_rotation(2, rng) * s * random_rotation(2, rng)
}

pub fn problem(name: &str) -> ProblemSpec {
    let path = format!("{}/../../problems/{name}", env!("CARGO_MANIFEST_DIR"));
    ProblemSpec::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Random polynomial deformation with trace `y_bd` on the boundary of the
/// unit square: `y_bd + b(x) q(x)` with bubble `b = x1(1-x1)x2(1-x2)`.
pub fn random_admissible(
    rng: &mut impl Rng,
    y_bd: &[Polynomial],
    qdeg: u32,
    amp: f64,
) -> Vec<Polynomial> {
    let n = 2;
    let x = |i| Polynomial::var(n, i);
    let one = Polynomial::constant(n, 1.0);
    let bubble = &(&(&x(0) * &(&one - &x(0))) * &x(1)) * &(&one - &x(1));
    y_bd.iter()
        .map(|p| {
            let q = Polynomial::from_terms(
                n,
                cgrelax::poly::monomials_up_to(n, qdeg)
                    .into_iter()
                    .map(|m| (m, rng.random_range(-amp..amp))),
            )
            .unwrap();
            p + &(&bubble * &q)
        })
        .collect()
}

/// SDP with a planted optimum `z*`: each block at `z*` has rank `side/2` and a
/// dual of complementary rank, with dense random data. Such instances have a
/// unique, strictly complementary solution for generic draws.
pub fn well_posed_sdp(
    rng: &mut impl Rng,
    sides: &[usize],
    m: usize,
    p: usize,
) -> (ConicProgram, Vec<f64>) {
    assert!(p < m);
    let z_star: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut c = vec![0.0; m];
    let mut prog = ConicProgram::new(m);
    for &side in sides {
        let q = random_rotation(side, rng);
        let r = side / 2;
        let eig: Vec<f64> = (0..side).map(|_| rng.random_range(0.5..2.0)).collect();
        let diag = |keep: &dyn Fn(usize) -> bool| {
            let d = nalgebra::DVector::from_fn(side, |i, _| if keep(i) { eig[i] } else { 0.0 });
            &q * DMatrix::from_diagonal(&d) * q.transpose()
        };
        let s_star = diag(&|i| i < r);
        let y_star = diag(&|i| i >= r);
        let mut block = LmiBlock::new(side);
        let mut b0 = s_star;
        for k in 0..m {
            let g = DMatrix::from_fn(side, side, |_, _| rng.random_range(-1.0..1.0));
            let bk = (&g + g.transpose()) * 0.5;
            for i in 0..side {
                for j in i..side {
                    block.add_term(k, i, j, bk[(i, j)]);
                }
            }
            c[k] += bk.dot(&y_star);
            b0 -= &bk * z_star[k];
        }
        for i in 0..side {
            for j in i..side {
                block.add_constant(i, j, b0[(i, j)]);
            }
        }
        prog.add_block(block);
    }
    for _ in 0..p {
        let row: Vec<(usize, f64)> = (0..m).map(|k| (k, rng.random_range(-1.0..1.0))).collect();
        let lam: f64 = rng.random_range(-1.0..1.0);
        for &(k, v) in &row {
            c[k] += lam * v;
        }
        let rhs = row.iter().map(|&(k, v)| v * z_star[k]).sum();
        prog.add_equality(row, rhs);
    }
    for (k, v) in c.into_iter().enumerate() {
        prog.set_objective(k, v);
    }
    (prog, z_star)
}
