use std::path::PathBuf;

use cgrelax::extract::{
    barycenter, quasiconvex_objective, wireframe, wireframe_csv, ObjectiveReport,
};
use cgrelax::moments::{run_hierarchy, solve_relaxation, OrderSolve, RadiusSchedule};
use cgrelax::sdp::text::write_program;
use cgrelax::sdp::{certify, CertificateReport};
use cgrelax::{
    envelope_value, EnvelopeMethod, Polynomial, ProblemSpec, Radius, SolveOptions, SolveStatus,
};
use clap::Args;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::{
    load_spec, svg, write_file, CliResult, Failure, SolverFlags, EXIT_SOLVER, EXIT_VALIDATION,
};

#[derive(Args)]
pub struct RunArgs {
    /// Problem file.
    spec: PathBuf,
    /// Relaxation orders (repeat or comma-separate); overrides the file.
    #[arg(long, value_delimiter = ',')]
    order: Vec<u32>,
    /// Fixed truncation radius; overrides the file.
    #[arg(long = "R", conflicts_with = "radius_auto")]
    radius: Option<f64>,
    /// Use the automatic radius schedule regardless of the file.
    #[arg(long = "R-auto")]
    radius_auto: bool,
    /// Degree of the extracted deformation (default: the relaxation order).
    #[arg(long)]
    extract_degree: Option<u32>,
    /// Quadrature cells per axis for the barycentric value, "80" or "80x80".
    #[arg(long, default_value = "80x80")]
    grid: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write wireframe.svg.
    #[arg(long)]
    svg: bool,
    /// Write each relaxation as order_<r>.sdp.
    #[arg(long)]
    dump_sdp: bool,
    /// Tolerance of the independent certificate recorded per order.
    #[arg(long, default_value_t = 1e-6)]
    tol_cert: f64,
    /// Solve orders concurrently (fixed radius only).
    #[arg(long)]
    parallel_orders: bool,
    #[arg(long, default_value_t = 7)]
    wire_lines: usize,
    #[arg(long, default_value_t = 80)]
    wire_points: usize,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Serialize)]
pub struct OrderRecord {
    pub r: u32,
    #[serde(rename = "R")]
    pub radius: f64,
    pub data_scale: f64,
    pub moments: usize,
    pub stokes_rows: usize,
    pub stokes_rows_kept: usize,
    pub j_mom: f64,
    pub dual_objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap_rel: f64,
    pub certificate: CertificateReport,
    pub extraction_degree: Option<u32>,
    pub barycentric_value: Option<f64>,
    pub boundary_trace_error: Option<f64>,
    pub objective: Option<ObjectiveReport>,
}

#[derive(Serialize)]
pub struct EnvelopeCheck {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub method: EnvelopeMethod,
    pub envelope_value: f64,
    pub first_relaxation: f64,
    pub difference: f64,
}

#[derive(Serialize)]
pub struct RunReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub timestamp: String,
    pub seed: u64,
    pub spec: ProblemSpec,
    pub radius_schedule: Option<RadiusSchedule>,
    pub envelope_method: EnvelopeMethod,
    pub orders: Vec<OrderRecord>,
    pub monotone: bool,
    pub monotonicity_violations: Vec<String>,
    pub envelope_check: Option<EnvelopeCheck>,
}

fn parse_grid(text: &str, n: usize) -> CliResult<Vec<usize>> {
    let parts: Vec<&str> = text.split('x').collect();
    let nums: Vec<usize> = parts
        .iter()
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::new(EXIT_VALIDATION, "validation", format!("bad grid '{text}'")))?;
    let grid = match nums.len() {
        1 => vec![nums[0]; n],
        k if k == n => nums,
        _ => {
            return Err(Failure::new(
                EXIT_VALIDATION,
                "validation",
                format!("grid needs 1 or {n} sizes"),
            ))
        }
    };
    if grid.contains(&0) {
        return Err(Failure::new(
            EXIT_VALIDATION,
            "validation",
            "grid sizes must be positive",
        ));
    }
    Ok(grid)
}

/// `A` when every boundary component is linear and homogeneous in `x`.
fn linear_boundary(spec: &ProblemSpec) -> Option<DMatrix<f64>> {
    let n = spec.n;
    let linear = |p: &Polynomial| p.terms().all(|(m, _)| m.degree() == 1);
    if !spec.boundary.iter().all(linear) {
        return None;
    }
    Some(DMatrix::from_fn(n, n, |j, i| {
        spec.boundary[j].coeff(&cgrelax::MultiIndex::unit(n, i))
    }))
}

fn solve_orders(
    spec: &ProblemSpec,
    orders: &[u32],
    radius: Radius,
    parallel: bool,
    opts: &SolveOptions,
) -> CliResult<(Option<RadiusSchedule>, Vec<OrderSolve>)> {
    match (radius, parallel) {
        (Radius::Fixed(r), true) if orders.len() > 1 => {
            let r_min = spec.r_min();
            if let Some(&bad) = orders.iter().find(|&&o| o < r_min) {
                return Err(cgrelax::Error::OrderTooLow {
                    order: bad as usize,
                    r_min: r_min as usize,
                }
                .into());
            }
            let results: Vec<_> = std::thread::scope(|s| {
                let handles: Vec<_> = orders
                    .iter()
                    .map(|&o| s.spawn(move || solve_relaxation(spec, o, r, opts)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("order worker panicked"))
                    .collect()
            });
            let solves = results.into_iter().collect::<cgrelax::Result<Vec<_>>>()?;
            Ok((None, solves))
        }
        _ => Ok(run_hierarchy(spec, orders, radius, opts)?),
    }
}

pub fn run_cmd(a: RunArgs) -> CliResult<()> {
    let mut spec = load_spec(&a.spec)?;
    if !a.order.is_empty() {
        spec.orders = a.order.clone();
    }
    if spec.orders.is_empty() {
        spec.orders = vec![spec.r_min()];
    }
    if let Some(r) = a.radius {
        spec.radius = Radius::Fixed(r);
    } else if a.radius_auto {
        spec.radius = Radius::Auto;
    }
    spec.validate()?;
    let grid = parse_grid(&a.grid, spec.n)?;
    if let Some(d) = a.extract_degree {
        if let Some(&r) = spec.orders.iter().find(|&&r| d > r || d == 0) {
            return Err(Failure::new(
                EXIT_VALIDATION,
                "validation",
                format!("extraction degree {d} is outside 1..={r} for order {r}"),
            ));
        }
    }
    let opts = a.solver.options();
    let method = EnvelopeMethod::preferred(&spec.energy);
    let (schedule, solves) = solve_orders(
        &spec,
        &spec.orders.clone(),
        spec.radius,
        a.parallel_orders,
        &opts,
    )?;

    let oracle =
        |f: &DMatrix<f64>| envelope_value(f, &spec.energy, method, &opts).unwrap_or(f64::NAN);
    let mut records = Vec::with_capacity(solves.len());
    let mut last_field = None;
    for s in &solves {
        let r = s.order();
        let prog = s.relaxation.to_conic();
        if a.dump_sdp {
            write_file(&a.out.join(format!("order_{r}.sdp")), &write_program(&prog))?;
        }
        let cert = certify(&prog, &s.solution, a.tol_cert);
        let optimal = s.status() == SolveStatus::Optimal;
        let (mut degree, mut value, mut trace, mut objective) = (None, None, None, None);
        if optimal {
            let d = a.extract_degree.unwrap_or(r);
            let field = barycenter(
                &s.solution.z,
                &s.relaxation.basis,
                &spec,
                &s.relaxation.scaling,
                d,
            )?;
            let q = quasiconvex_objective(&field, oracle, &grid);
            let t = field.boundary_trace_error(&spec.boundary, 81);
            degree = Some(d);
            value = Some(q);
            trace = Some(t);
            objective = Some(ObjectiveReport {
                order: r,
                lower_bound: s.value,
                barycentric_value: q,
                boundary_trace_error: t,
            });
            last_field = Some(field);
        }
        records.push(OrderRecord {
            r,
            radius: s.radius(),
            data_scale: s.relaxation.scaling.scale,
            moments: s.relaxation.basis.len(),
            stokes_rows: s.relaxation.raw_rows,
            stokes_rows_kept: s.relaxation.equalities.len(),
            j_mom: s.value,
            dual_objective: s.solution.dual_objective,
            status: s.status(),
            iterations: s.solution.iterations,
            wall_time_s: s.seconds,
            primal_residual: s.solution.primal_residual,
            dual_residual: s.solution.dual_residual,
            gap_rel: s.solution.gap_rel,
            certificate: cert,
            extraction_degree: degree,
            barycentric_value: value,
            boundary_trace_error: trace,
            objective,
        });
    }

    let mut violations = Vec::new();
    let mut sorted: Vec<&OrderRecord> = records
        .iter()
        .filter(|r| r.status == SolveStatus::Optimal)
        .collect();
    sorted.sort_by_key(|r| r.r);
    for w in sorted.windows(2) {
        if w[1].j_mom < w[0].j_mom - 1e-6 * (1.0 + w[0].j_mom.abs()) {
            violations.push(format!(
                "order {} value {} below order {} value {}",
                w[1].r, w[1].j_mom, w[0].r, w[0].j_mom
            ));
        }
    }

    let envelope_check = linear_boundary(&spec).and_then(|a_mat| {
        let first = sorted.first()?;
        let v = envelope_value(&a_mat, &spec.energy, EnvelopeMethod::Projection, &opts).ok()?;
        let vol = spec.domain.volume();
        Some(EnvelopeCheck {
            a: a_mat
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            method: EnvelopeMethod::Projection,
            envelope_value: v * vol,
            first_relaxation: first.j_mom,
            difference: (first.j_mom - v * vol).abs(),
        })
    });

    let report = RunReport {
        tool: "cgrelax",
        version: env!("CARGO_PKG_VERSION"),
        timestamp: chrono::Utc::now().to_rfc3339(),
        seed: a.solver.seed,
        spec: spec.clone(),
        radius_schedule: schedule,
        envelope_method: method,
        monotone: violations.is_empty(),
        monotonicity_violations: violations,
        orders: records,
        envelope_check,
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&a.out.join("report.json"), &text)?;
    if let Some(field) = &last_field {
        let pts = wireframe(field, a.wire_lines, a.wire_points);
        write_file(&a.out.join("wireframe.csv"), &wireframe_csv(&pts))?;
        if a.svg && spec.n == 2 {
            write_file(&a.out.join("wireframe.svg"), &svg::wireframe(&pts))?;
        }
    }
    for rec in &report.orders {
        eprintln!(
            "order {}: J_mom {:.6} ({:?}, {} iterations, {:.1}s){}",
            rec.r,
            rec.j_mom,
            rec.status,
            rec.iterations,
            rec.wall_time_s,
            rec.barycentric_value
                .map(|v| format!(", barycentric {v:.4}"))
                .unwrap_or_default()
        );
    }
    if let Some(bad) = report
        .orders
        .iter()
        .find(|r| r.status != SolveStatus::Optimal)
    {
        let hint = if bad.status == SolveStatus::PrimalInfeasible {
            " (the truncation radius may be too small for the boundary data)"
        } else {
            ""
        };
        return Err(Failure::new(
            EXIT_SOLVER,
            "solver",
            format!("order {} ended with status {:?}{hint}", bad.r, bad.status),
        ));
    }
    Ok(())
}
