use std::path::PathBuf;

use cgrelax::energy::{
    anisotropic_wtilde, check_frame_indifference, check_growth, check_sos_convexity, SosStatus,
};
use cgrelax::moments::{occupation_moments, solve_relaxation};
use cgrelax::sdp::certify;
use cgrelax::{ProblemSpec, Radius, SolveStatus};
use clap::Args;
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::{
    read_file, write_file, CliResult, Failure, SolverFlags, EXIT_PROPERTY, EXIT_VALIDATION,
};

#[derive(Args)]
pub struct VerifyArgs {
    /// Problem file.
    spec: PathBuf,
    /// Truncation radius for the relaxation checks (default: file value or R0).
    #[arg(long = "R")]
    radius: Option<f64>,
    /// Random trials per sampled check.
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Write verify.json here instead of printing it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    passed: bool,
    detail: Value,
}

#[derive(Serialize)]
struct VerifyReport {
    spec: String,
    seed: u64,
    notes: Vec<String>,
    checks: Vec<Check>,
    configuration_error: Option<String>,
    passed: bool,
}

/// Parse the spec; an anisotropic energy with an indefinite `D` is kept as a
/// custom strain polynomial so the convexity check can refute it.
fn load(text: &str, notes: &mut Vec<String>) -> CliResult<ProblemSpec> {
    match ProblemSpec::from_json(text) {
        Ok(s) => Ok(s),
        Err(first) => {
            let mut v: Value = serde_json::from_str(text).map_err(cgrelax::Error::from)?;
            let d = v
                .pointer("/energy/D")
                .and_then(|d| serde_json::from_value::<Vec<f64>>(d.clone()).ok())
                .filter(|d| {
                    d.len() == 9 && v.pointer("/energy/kind") == Some(&json!("anisotropic"))
                });
            let Some(d) = d else {
                return Err(first.into());
            };
            let wt = anisotropic_wtilde(&DMatrix::from_row_slice(3, 3, &d));
            v["energy"] = json!({"kind": "custom", "n": 2, "wtilde": wt});
            notes.push(format!(
                "energy rejected as given ({first}); checking its strain polynomial directly"
            ));
            Ok(ProblemSpec::from_json(&v.to_string())?)
        }
    }
}

pub fn verify_cmd(a: VerifyArgs) -> CliResult<()> {
    let text = read_file(&a.spec)?;
    let mut notes = Vec::new();
    let spec = load(&text, &mut notes)?;
    let seed = a.solver.seed;
    let opts = a.solver.options();
    let mut checks = Vec::new();

    let frame = check_frame_indifference(&spec.energy, a.trials, seed);
    checks.push(Check {
        name: "frame-indifference",
        passed: frame.passed,
        detail: json!(frame),
    });

    let sos = check_sos_convexity(spec.energy.wtilde());
    checks.push(Check {
        name: "sos-convexity",
        passed: sos.status == SosStatus::Certified,
        detail: json!({"status": sos.status, "min_hessian_eigenvalue": sos.min_eigenvalue}),
    });

    let growth = check_growth(&spec.energy, a.trials, &[1.0, 2.0, 4.0, 8.0, 16.0], seed);
    checks.push(Check {
        name: "growth",
        passed: !growth.degenerate && growth.c1 > 0.0,
        detail: json!(growth),
    });

    let radius = match (a.radius, spec.radius) {
        (Some(r), _) | (None, Radius::Fixed(r)) => r,
        (None, Radius::Auto) => spec.initial_radius(),
    };
    let r = spec.r_min();
    let mut configuration_error = None;
    let rel = cgrelax::assemble_relaxation(&spec, r, radius)?;
    // the boundary polynomials themselves are an admissible deformation
    let z = occupation_moments(&spec.boundary, &spec, &rel.basis, &rel.scaling)?;
    let stokes = rel
        .equalities
        .iter()
        .map(|(row, rhs)| {
            (row.iter().map(|&(k, v)| v * z[k]).sum::<f64>() - rhs).abs() / (1.0 + rhs.abs())
        })
        .fold(0.0, f64::max);
    let min_eig = rel
        .blocks
        .iter()
        .map(|(_, b)| {
            let m = b.evaluate(&z);
            cgrelax::linalg::min_eigenvalue(&m) / (1.0 + m.amax())
        })
        .fold(f64::INFINITY, f64::min);
    let inside = boundary_extension_inside(&spec, radius);
    checks.push(Check {
        name: "occupation-moments",
        passed: stokes <= 1e-9 && (!inside || min_eig >= -1e-8),
        detail: json!({
            "order": r,
            "R": radius,
            "stokes_residual": stokes,
            "min_block_eigenvalue": min_eig,
            "extension_inside_ball": inside,
        }),
    });

    let solve = solve_relaxation(&spec, r, radius, &opts)?;
    let prog = solve.relaxation.to_conic();
    let cert = certify(&prog, &solve.solution, 1e-6);
    if solve.status() == SolveStatus::PrimalInfeasible {
        configuration_error = Some(format!(
            "relaxation at R = {radius} is infeasible: the boundary data leaves the truncation ball"
        ));
    }
    checks.push(Check {
        name: "solver-certificate",
        passed: solve.status() == SolveStatus::Optimal && cert.passed,
        detail: json!({
            "order": r,
            "R": radius,
            "status": solve.status(),
            "value": solve.value,
            "iterations": solve.solution.iterations,
            "certificate": cert,
        }),
    });

    let passed = checks.iter().all(|c| c.passed);
    let report = VerifyReport {
        spec: a.spec.display().to_string(),
        seed,
        notes,
        checks,
        configuration_error: configuration_error.clone(),
        passed,
    };
    let out = serde_json::to_string_pretty(&report).expect("report serializes");
    match &a.out {
        Some(dir) => write_file(&dir.join("verify.json"), &out)?,
        None => println!("{out}"),
    }
    for c in &report.checks {
        eprintln!("{:<20} {}", c.name, if c.passed { "pass" } else { "FAIL" });
    }
    if let Some(msg) = configuration_error {
        return Err(Failure::new(EXIT_VALIDATION, "configuration", msg));
    }
    if !passed {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name)
            .collect();
        return Err(Failure::new(
            EXIT_PROPERTY,
            "property",
            format!("failed checks: {}", failed.join(", ")),
        ));
    }
    Ok(())
}

/// Whether `|y|^2 + |grad y|^2 <= R^2` holds on a sample grid of the box for
/// `y` equal to the boundary polynomials.
fn boundary_extension_inside(spec: &ProblemSpec, radius: f64) -> bool {
    let n = spec.n;
    let grads: Vec<Vec<cgrelax::Polynomial>> = spec
        .boundary
        .iter()
        .map(|p| {
            (0..n)
                .map(|i| p.differentiate(i).expect("x variable"))
                .collect()
        })
        .collect();
    let per: usize = if n <= 2 { 41 } else { 9 };
    (0..per.pow(n as u32)).all(|idx| {
        let mut rem = idx;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = (rem % per) as f64 / (per - 1) as f64;
                rem /= per;
                let (lo, hi) = spec.domain.bounds[i];
                lo + t * (hi - lo)
            })
            .collect();
        let y2: f64 = spec.boundary.iter().map(|p| p.evaluate(&x).powi(2)).sum();
        let g2: f64 = grads.iter().flatten().map(|p| p.evaluate(&x).powi(2)).sum();
        y2 + g2 <= radius * radius
    })
}
