mod common;

use std::collections::BTreeMap;

use cgrelax::energy::{
    anisotropic_wtilde, check_sos_convexity, random_rotation, strain_coords, SosStatus,
};
use cgrelax::moments::{occupation_moments, solve_relaxation};
use cgrelax::poly::monomials_up_to;
use cgrelax::sdp::{certify, solve};
use cgrelax::*;
use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn int_poly(nvars: usize, max_deg: u32) -> impl Strategy<Value = Polynomial> {
    let monos = monomials_up_to(nvars, max_deg);
    let k = monos.len();
    prop::collection::vec((0..k, -5i32..=5), 0..6).prop_map(move |terms| {
        Polynomial::from_terms(
            nvars,
            terms.into_iter().map(|(i, c)| (monos[i].clone(), c as f64)),
        )
        .unwrap()
    })
}

fn real_poly(nvars: usize, max_deg: u32) -> impl Strategy<Value = Polynomial> {
    let monos = monomials_up_to(nvars, max_deg);
    let k = monos.len();
    prop::collection::vec((0..k, -2.0f64..2.0), 1..8).prop_map(move |terms| {
        Polynomial::from_terms(nvars, terms.into_iter().map(|(i, c)| (monos[i].clone(), c)))
            .unwrap()
    })
}

fn mat2(range: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::array::uniform4(-range..range).prop_map(|a| DMatrix::from_row_slice(2, 2, &a))
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn ring_axioms_exact(a in int_poly(3, 3), b in int_poly(3, 3), c in int_poly(3, 3)) {
        prop_assert_eq!(&(&a * &b) * &c, &a * &(&b * &c));
        prop_assert_eq!(&(&a + &b) * &c, &(&a * &c) + &(&b * &c));
        prop_assert_eq!(&a + &b, &b + &a);
        prop_assert_eq!(&a * &b, &b * &a);
        prop_assert!((&a - &a).is_zero());
    }

    #[test]
    fn product_rule_exact(a in int_poly(3, 3), b in int_poly(3, 3), v in 0usize..3) {
        let lhs = (&a * &b).differentiate(v).unwrap();
        let rhs = &(&a.differentiate(v).unwrap() * &b) + &(&a * &b.differentiate(v).unwrap());
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn compose_commutes_with_evaluate(
        p in real_poly(2, 4),
        q0 in real_poly(3, 2),
        q1 in real_poly(3, 2),
        pt in prop::array::uniform3(-1.0f64..1.0),
    ) {
        let mut subst = BTreeMap::new();
        subst.insert(0, q0.clone());
        subst.insert(1, q1.clone());
        let composed = p.compose(3, &subst).unwrap();
        let direct = p.evaluate(&[q0.evaluate(&pt), q1.evaluate(&pt)]);
        prop_assert!(rel_close(composed.evaluate(&pt), direct, 1e-12));
    }

    #[test]
    fn fundamental_theorem_on_square(p in real_poly(2, 5)) {
        let d = p.differentiate(0).unwrap();
        let lhs = d.integrate_box_value(&[(0, 0.0, 1.0), (1, 0.0, 1.0)]).unwrap();
        let edge = |x: f64| p.restrict(0, x).integrate_box_value(&[(1, 0.0, 1.0)]);
        let rhs = edge(1.0).unwrap() - edge(0.0).unwrap();
        prop_assert!(rel_close(lhs, rhs, 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w_matches_wtilde_of_gram(
        lam in 0.0f64..3.0,
        mu in 0.1f64..5.0,
        d in prop::array::uniform6(-1.0f64..1.0),
        z in mat2(2.0),
    ) {
        let c = z.transpose() * &z;
        let svk = svk_energy(lam, mu, 2).unwrap();
        prop_assert!(rel_close(svk.eval_w(&z), svk.eval_wtilde(&c), 1e-12));
        // diagonally dominated D is positive definite
        let dm = DMatrix::from_row_slice(3, 3, &[4.0 + d[0], d[1], d[2], d[1], 4.0 + d[3], d[4], d[2], d[4], 4.0 + d[5]]);
        let an = anisotropic_energy(StiffnessForm::new(dm).unwrap()).unwrap();
        prop_assert!(rel_close(an.eval_w(&z), an.eval_wtilde(&c), 1e-12));
        prop_assert!(svk.eval_w(&z) >= -1e-12 && an.eval_w(&z) >= -1e-12);
    }

    #[test]
    fn energy_frame_indifferent(lam in 0.0f64..3.0, mu in 0.1f64..5.0, f in mat2(2.0), seed in any::<u64>()) {
        let e = svk_energy(lam, mu, 2).unwrap();
        let r = random_rotation(2, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(rel_close(e.eval_w(&(r * &f)), e.eval_w(&f), 1e-9));
    }

    #[test]
    fn sos_verdict_matches_eigenvalues(d in prop::array::uniform6(-3.0f64..3.0)) {
        let dm = DMatrix::from_row_slice(3, 3, &[d[0], d[1], d[2], d[1], d[3], d[4], d[2], d[4], d[5]]);
        let lmin = cgrelax::linalg::min_eigenvalue(&dm);
        prop_assume!(lmin.abs() > 1e-3);
        let cert = check_sos_convexity(&anisotropic_wtilde(&dm));
        let expected = if lmin > 0.0 { SosStatus::Certified } else { SosStatus::Refuted };
        prop_assert_eq!(cert.status, expected);
    }
}

#[test]
fn svk_zero_poisson_is_squared_strain() {
    let nz = 4;
    let zv = |j: usize, i: usize| Polynomial::var(nz, j * 2 + i);
    let mut expected = Polynomial::zero(nz);
    for a in 0..2 {
        for b in 0..2 {
            let mut cab = &(&zv(0, a) * &zv(0, b)) + &(&zv(1, a) * &zv(1, b));
            if a == b {
                cab = &cab - &Polynomial::constant(nz, 1.0);
            }
            expected = &expected + &(&cab * &cab);
        }
    }
    assert_eq!(svk_energy(0.0, 4.0, 2).unwrap().w(), &expected);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn envelope_below_energy(f in mat2(2.0), lam in 0.0f64..2.0, mu in 0.5f64..4.0) {
        let e = svk_energy(lam, mu, 2).unwrap();
        let v = project_envelope(&f, &e, &SolveOptions::default()).unwrap();
        prop_assert_eq!(v.status, SolveStatus::Optimal);
        prop_assert!(v.value <= e.eval_w(&f) + 1e-8);
    }

    #[test]
    fn envelope_depends_on_gram_only(f in mat2(2.0), seed in any::<u64>(), k in 0usize..4) {
        let e = svk_energy(0.5, 2.0, 2).unwrap();
        let opts = SolveOptions::default();
        let base = project_envelope(&f, &e, &opts).unwrap().value;
        // quarter turns and -I leave F^T F bit-identical
        let exact = [[1.0, 0.0, 0.0, 1.0], [0.0, -1.0, 1.0, 0.0], [-1.0, 0.0, 0.0, -1.0], [0.0, 1.0, -1.0, 0.0]];
        let q = DMatrix::from_row_slice(2, 2, &exact[k]);
        let qf = &q * &f;
        prop_assert_eq!(strain_coords(&(qf.transpose() * &qf)), strain_coords(&(f.transpose() * &f)));
        prop_assert_eq!(project_envelope(&qf, &e, &opts).unwrap().value, base);
        let r = random_rotation(2, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(rel_close(project_envelope(&(r * &f), &e, &opts).unwrap().value, base, 1e-7));
    }

    #[test]
    fn envelope_midpoint_convex(f1 in mat2(2.0), f2 in mat2(2.0)) {
        let e = svk_energy(0.0, 4.0, 2).unwrap();
        let opts = SolveOptions::default();
        let q = |f: &DMatrix<f64>| project_envelope(f, &e, &opts).unwrap().value;
        let mid = (&f1 + &f2) * 0.5;
        prop_assert!(q(&mid) <= 0.5 * (q(&f1) + q(&f2)) + 1e-6);
    }

    #[test]
    fn envelope_fixed_outside_unit_ball(s1 in 1.0f64..2.0, s2 in 1.0f64..2.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_rotation(2, &mut rng) * DMatrix::from_diagonal(&nalgebra::dvector![s1, s2]) * random_rotation(2, &mut rng);
        let e = svk_energy(0.0, 4.0, 2).unwrap();
        let v = project_envelope(&f, &e, &SolveOptions::default()).unwrap().value;
        prop_assert!((v - e.eval_w(&f)).abs() <= 1e-7 * (1.0 + v));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_sdp_weak_duality_and_determinism(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (prog, _) = random_feasible_sdp(&mut rng, &[6, 11], 12, 4);
        let opts = SolveOptions::default();
        let a = solve(&prog, &opts).unwrap();
        prop_assert_eq!(a.status, SolveStatus::Optimal);
        prop_assert!(a.iterations <= 100);
        prop_assert!(a.dual_objective <= a.primal_objective + 1e-7 * (1.0 + a.primal_objective.abs()));
        prop_assert!(certify(&prog, &a, 1e-7).passed);
        let b = solve(&prog, &opts).unwrap();
        prop_assert_eq!(a.iterations, b.iterations);
        prop_assert_eq!(a.z, b.z);
        prop_assert_eq!(a.primal_objective.to_bits(), b.primal_objective.to_bits());
    }

    #[test]
    fn objective_scaling_keeps_argmin(seed in any::<u64>(), lam in 0.25f64..8.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // the argmin is only pinned down when it is unique
        let (mut prog, z_star) = well_posed_sdp(&mut rng, &[5, 8], 10, 3);
        // both solves must stop on the scale-free test: keep |lam c|_inf <= 1
        let norm_c = prog.objective().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prog.scale_objective(0.125 / norm_c);
        let mut scaled = prog.clone();
        scaled.scale_objective(lam);
        let opts = SolveOptions::default();
        let a = solve(&prog, &opts).unwrap();
        let b = solve(&scaled, &opts).unwrap();
        prop_assert_eq!(a.status, SolveStatus::Optimal);
        prop_assert_eq!(b.status, SolveStatus::Optimal);
        let dz = a.z.iter().zip(&b.z).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(dz <= 1e-8, "argmin moved by {}", dz);
        let err = a.z.iter().zip(&z_star).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-5, "planted optimum missed by {}", err);
        prop_assert!(rel_close(b.primal_objective, lam * a.primal_objective, 1e-8));
    }
}

/// Orderings between optimal values are only visible above the stopping
/// tolerance, so these comparisons solve tighter than the default.
fn tight() -> SolveOptions {
    SolveOptions {
        tol_feas: 1e-9,
        tol_gap: 1e-9,
        ..SolveOptions::default()
    }
}

fn one_d_spec(a: f64, b: f64, radius: Radius) -> ProblemSpec {
    let x = Polynomial::var(1, 0);
    let y = &x.scale(a) + &(&x * &(&x - &Polynomial::constant(1, 1.0))).scale(b);
    ProblemSpec {
        n: 1,
        domain: BoxDomain::unit(1),
        energy: svk_energy(0.0, 4.0, 1).unwrap(),
        boundary: vec![y],
        radius,
        orders: vec![2, 3, 4],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn hierarchy_nondecreasing_in_order(a in 0.2f64..1.6, b in -1.0f64..1.0) {
        let spec = one_d_spec(a, b, Radius::Fixed(8.0));
        let opts = tight();
        let vals: Vec<f64> = (2..=4)
            .map(|r| {
                let s = solve_relaxation(&spec, r, 8.0, &opts).unwrap();
                assert_eq!(s.status(), SolveStatus::Optimal);
                s.value
            })
            .collect();
        for w in vals.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-6, "{:?}", vals);
        }
    }

    #[test]
    fn value_nonincreasing_in_radius(a in 0.2f64..1.6, b in -1.0f64..1.0) {
        let spec = one_d_spec(a, b, Radius::Auto);
        let r0 = spec.initial_radius();
        let opts = tight();
        let vals: Vec<f64> = [1.0, 2.0, 4.0]
            .iter()
            .map(|k| solve_relaxation(&spec, 3, k * r0, &opts).unwrap().value)
            .collect();
        for w in vals.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-6 * (1.0 + w[0].abs()), "{:?}", vals);
        }
    }

    #[test]
    fn first_relaxation_dominates_gram_of_boundary(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_with_singular_values(&mut rng, 0.3, 2.0);
        let spec = svk_spec(linear_boundary(&a), Radius::Auto, vec![2]);
        let radius = spec.initial_radius();
        let s = solve_relaxation(&spec, 2, radius, &SolveOptions::default()).unwrap();
        prop_assert_eq!(s.status(), SolveStatus::Optimal);
        let rel = &s.relaxation;
        let space = rel.basis.space;
        let sc = rel.scaling.scale;
        let mut zz = DMatrix::zeros(2, 2);
        for i in 0..2 {
            for k in 0..2 {
                for j in 0..2 {
                    let mut e = vec![0u16; space.arity()];
                    e[space.z(j, i)] += 1;
                    e[space.z(j, k)] += 1;
                    zz[(i, k)] += sc * sc * s.solution.z[rel.basis.lookup(&MultiIndex::new(e)).unwrap()];
                }
            }
        }
        let gap = zz / spec.domain.volume() - a.transpose() * &a;
        prop_assert!(cgrelax::linalg::min_eigenvalue(&gap) >= -1e-6);
    }

    #[test]
    fn stokes_rows_hold_for_admissible_fields(seed in any::<u64>(), qdeg in 0u32..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = problem("svk_quadratic_bc.json");
        let y = random_admissible(&mut rng, &spec.boundary, qdeg, 1.0);
        let rel = assemble_relaxation(&spec, 2, 50.0).unwrap();
        let z = occupation_moments(&y, &spec, &rel.basis, &rel.scaling).unwrap();
        prop_assert!(rel.stokes_residual(&z) <= 1e-9);
    }

    #[test]
    fn barycenter_is_linear_in_moments(seed in any::<u64>(), t in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = problem("svk_quadratic_bc.json");
        let rel = assemble_relaxation(&spec, 2, 50.0).unwrap();
        let y1 = random_admissible(&mut rng, &spec.boundary, 1, 1.0);
        let y2 = random_admissible(&mut rng, &spec.boundary, 1, 1.0);
        let z1 = occupation_moments(&y1, &spec, &rel.basis, &rel.scaling).unwrap();
        let z2 = occupation_moments(&y2, &spec, &rel.basis, &rel.scaling).unwrap();
        let zm: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let b1 = barycenter(&z1, &rel.basis, &spec, &rel.scaling, 2).unwrap();
        let b2 = barycenter(&z2, &rel.basis, &spec, &rel.scaling, 2).unwrap();
        let bm = barycenter(&zm, &rel.basis, &spec, &rel.scaling, 2).unwrap();
        for pt in [[0.1, 0.2], [0.5, 0.5], [0.9, 0.3]] {
            let (v1, v2, vm) = (b1.evaluate(&pt), b2.evaluate(&pt), bm.evaluate(&pt));
            for j in 0..2 {
                prop_assert!((vm[j] - (t * v1[j] + (1.0 - t) * v2[j])).abs() <= 1e-8);
            }
        }
    }
}

#[test]
fn solved_x_moments_are_lebesgue() {
    let spec = problem("svk_quadratic_bc.json");
    let s = solve_relaxation(&spec, 2, 20.0, &SolveOptions::default()).unwrap();
    let rel = &s.relaxation;
    let space = rel.basis.space;
    let sc = &rel.scaling;
    let mut worst = 0.0f64;
    for m in monomials_up_to(2, 4) {
        let mut e = vec![0u16; space.arity()];
        e[..2].copy_from_slice(m.exponents());
        let got = s.solution.z[rel.basis.lookup(&MultiIndex::new(e)).unwrap()];
        // int over the box of prod ((x_i - c_i) / h_i)^k_i
        let mut want = 1.0;
        for i in 0..2 {
            let k = m.exponents()[i] as i32;
            let (lo, hi) = spec.domain.bounds[i];
            let (a, b) = (
                (lo - sc.center[i]) / sc.half[i],
                (hi - sc.center[i]) / sc.half[i],
            );
            want *= sc.half[i] * (b.powi(k + 1) - a.powi(k + 1)) / (k + 1) as f64;
        }
        worst = worst.max((got - want).abs());
    }
    assert!(worst <= 1e-8, "x-moments off by {worst}");
}

#[test]
fn linear_field_recovered_from_its_own_moments() {
    let spec = problem("svk_linear_bc.json");
    let rel = assemble_relaxation(&spec, 2, 10.0).unwrap();
    let z = occupation_moments(&spec.boundary, &spec, &rel.basis, &rel.scaling).unwrap();
    let field = barycenter(&z, &rel.basis, &spec, &rel.scaling, 1).unwrap();
    let a = DMatrix::from_row_slice(2, 2, &[1.15, 0.65, 0.65, 1.15]);
    let x = [0.3, 0.8];
    let want = &a * nalgebra::dvector![x[0], x[1]];
    let got = field.evaluate(&x);
    assert!((got[0] - want[0]).abs() < 1e-9 && (got[1] - want[1]).abs() < 1e-9);
}
