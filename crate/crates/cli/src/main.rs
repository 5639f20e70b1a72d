//! `cgrelax`: run moment relaxations, evaluate envelopes, verify problem files
//! and exchange SDPs in the sparse text format.

mod run;
mod svg;
mod verify;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cgrelax::envelope::{envelope_surface, surface_csv, Axis};
use cgrelax::sdp::text::{read_program, write_program};
use cgrelax::{envelope_value, EnergyDensity, EnvelopeMethod, Error, ProblemSpec, SolveOptions};
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde_json::json;

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;
pub const EXIT_PROPERTY: u8 = 4;

#[derive(Parser)]
#[command(
    name = "cgrelax",
    version,
    about = "Moment-SDP relaxations for stored-energy minimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the relaxation hierarchy of a problem file and extract deformations.
    Run(run::RunArgs),
    /// Evaluate the quasiconvex envelope at one F or over a singular-value grid.
    Envelope(EnvelopeArgs),
    /// Run the property checks on a problem file.
    Verify(verify::VerifyArgs),
    /// Write a relaxation in the sparse SDP text format, or solve a dumped one.
    DumpSdp(DumpArgs),
}

#[derive(Args, Clone, Debug)]
pub struct SolverFlags {
    /// Primal and dual feasibility tolerance.
    #[arg(long, default_value_t = 1e-8)]
    pub tol_feas: f64,
    /// Relative duality gap tolerance.
    #[arg(long, default_value_t = 1e-8)]
    pub tol_gap: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    /// Seed for randomized checks (solves are deterministic).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Print solver iterations to stderr.
    #[arg(long)]
    pub verbose: bool,
}

impl SolverFlags {
    pub fn options(&self) -> SolveOptions {
        SolveOptions {
            tol_feas: self.tol_feas,
            tol_gap: self.tol_gap,
            max_iters: self.max_iters,
            seed: self.seed,
            verbose: self.verbose,
            ..SolveOptions::default()
        }
    }
}

#[derive(Args)]
struct EnvelopeArgs {
    /// Energy JSON, or a problem file whose `energy` entry is used.
    file: PathBuf,
    /// Deformation gradient, rows separated by `;`, e.g. "1.15,0.65;0.65,1.15".
    #[arg(long = "F", allow_hyphen_values = true)]
    f: Option<String>,
    /// Singular-value grid "s1:lo:hi:steps,s2:lo:hi:steps".
    #[arg(long)]
    grid: Option<String>,
    /// spectral or projection; defaults to spectral when the energy allows it.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also render the surface as SVG (grid mode).
    #[arg(long)]
    svg: bool,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args)]
struct DumpArgs {
    /// Problem file to assemble (omit with --load-sdp).
    spec: Option<PathBuf>,
    #[arg(long)]
    order: Option<u32>,
    /// Truncation radius; defaults to the first radius of the automatic schedule.
    #[arg(long = "R")]
    radius: Option<f64>,
    /// Output file (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parse and solve a dumped SDP instead of assembling one.
    #[arg(long)]
    load_sdp: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverFlags,
}

/// Failure carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            kind,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Solver(_) => (EXIT_SOLVER, "solver"),
            Error::Conditioning(_) => (EXIT_SOLVER, "conditioning"),
            Error::OrderTooLow { .. } => (EXIT_VALIDATION, "order-too-low"),
            Error::RankDeficient { .. } => (EXIT_VALIDATION, "rank-deficient"),
            Error::Parse { .. } => (EXIT_VALIDATION, "parse"),
            Error::Json(_) => (EXIT_VALIDATION, "json"),
            Error::Io(_) => (EXIT_VALIDATION, "io"),
            Error::Structure(_) | Error::Validation(_) => (EXIT_VALIDATION, "validation"),
        };
        Failure::new(code, kind, e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

pub fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| Failure::new(EXIT_VALIDATION, "io", format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| {
                Failure::new(EXIT_VALIDATION, "io", format!("{}: {e}", dir.display()))
            })?;
        }
    }
    fs::write(path, text)
        .map_err(|e| Failure::new(EXIT_VALIDATION, "io", format!("{}: {e}", path.display())))
}

pub fn load_spec(path: &Path) -> CliResult<ProblemSpec> {
    Ok(ProblemSpec::from_json(&read_file(path)?)?)
}

fn load_energy(path: &Path) -> CliResult<EnergyDensity> {
    let value: serde_json::Value = serde_json::from_str(&read_file(path)?).map_err(Error::from)?;
    let energy = value.get("energy").cloned().unwrap_or(value);
    Ok(serde_json::from_value(energy).map_err(Error::from)?)
}

fn parse_matrix(text: &str, n: usize) -> CliResult<DMatrix<f64>> {
    let bad = |m: String| Failure::new(EXIT_VALIDATION, "validation", m);
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| bad(format!("bad number '{}' in F", v.trim())))
                })
                .collect()
        })
        .collect::<CliResult<_>>()?;
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(bad(format!("F must be {n}x{n}, rows separated by ';'")));
    }
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(bad("F has non-finite entries".into()));
    }
    Ok(m)
}

fn envelope_cmd(a: EnvelopeArgs) -> CliResult<()> {
    let energy = load_energy(&a.file)?;
    let opts = a.solver.options();
    let method = match &a.method {
        Some(m) => m.parse::<EnvelopeMethod>()?,
        None => EnvelopeMethod::preferred(&energy),
    };
    match (&a.f, &a.grid) {
        (Some(f), None) => {
            let f = parse_matrix(f, energy.n())?;
            let value = envelope_value(&f, &energy, method, &opts)?;
            let rows: Vec<Vec<f64>> = f.row_iter().map(|r| r.iter().copied().collect()).collect();
            let out = json!({
                "F": rows,
                "method": method,
                "W": energy.eval_w(&f),
                "Wquasi": value,
            });
            let text = serde_json::to_string_pretty(&out).expect("plain JSON");
            match &a.out {
                Some(dir) => write_file(&dir.join("envelope.json"), &text)?,
                None => println!("{text}"),
            }
        }
        (None, Some(g)) => {
            let axes: Vec<&str> = g.split(',').collect();
            if axes.len() != 2 {
                return Err(Failure::new(
                    EXIT_VALIDATION,
                    "validation",
                    "grid needs two axes: s1:lo:hi:steps,s2:lo:hi:steps",
                ));
            }
            let s1 = Axis::parse(axes[0])?;
            let s2 = Axis::parse(axes[1])?;
            let rows = envelope_surface(&s1, &s2, &energy, method, &opts)?;
            let csv = surface_csv(&rows);
            match &a.out {
                Some(dir) => {
                    write_file(&dir.join("envelope_surface.csv"), &csv)?;
                    if a.svg {
                        write_file(
                            &dir.join("envelope_surface.svg"),
                            &svg::surface(&rows, s1.steps, s2.steps),
                        )?;
                    }
                }
                None => print!("{csv}"),
            }
        }
        _ => {
            return Err(Failure::new(
                EXIT_VALIDATION,
                "validation",
                "give exactly one of --F or --grid",
            ))
        }
    }
    Ok(())
}

fn dump_cmd(a: DumpArgs) -> CliResult<()> {
    if let Some(path) = &a.load_sdp {
        let prog = read_program(&read_file(path)?)?;
        let sol = cgrelax::sdp::solve(&prog, &a.solver.options())?;
        let cert = cgrelax::sdp::certify(&prog, &sol, 1e-6);
        let out = json!({
            "status": sol.status,
            "objective": sol.primal_objective,
            "dual_objective": sol.dual_objective,
            "gap_rel": sol.gap_rel,
            "primal_residual": sol.primal_residual,
            "dual_residual": sol.dual_residual,
            "iterations": sol.iterations,
            "certificate": cert,
            "z": sol.z,
        });
        let text = serde_json::to_string_pretty(&out).expect("plain JSON");
        match &a.out {
            Some(p) => write_file(p, &text)?,
            None => println!("{text}"),
        }
        if sol.status != cgrelax::SolveStatus::Optimal {
            return Err(Failure::new(
                EXIT_SOLVER,
                "solver",
                format!("solve ended with status {:?}", sol.status),
            ));
        }
        return Ok(());
    }
    let Some(spec_path) = &a.spec else {
        return Err(Failure::new(
            EXIT_VALIDATION,
            "validation",
            "give a problem file or --load-sdp",
        ));
    };
    let spec = load_spec(spec_path)?;
    let r = a
        .order
        .or_else(|| spec.orders.first().copied())
        .unwrap_or_else(|| spec.r_min());
    let radius = match (a.radius, spec.radius) {
        (Some(r), _) | (None, cgrelax::Radius::Fixed(r)) => r,
        (None, cgrelax::Radius::Auto) => spec.initial_radius(),
    };
    let rel = cgrelax::assemble_relaxation(&spec, r, radius)?;
    let header = format!(
        "# order {r}, R {radius:?}, data scale {:?}, {} moments, {} of {} Stokes rows kept\n",
        rel.scaling.scale,
        rel.basis.len(),
        rel.equalities.len(),
        rel.raw_rows
    );
    let text = header + &write_program(&rel.to_conic());
    match &a.out {
        Some(p) => write_file(p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run::run_cmd(a),
        Command::Envelope(a) => envelope_cmd(a),
        Command::Verify(a) => verify::verify_cmd(a),
        Command::DumpSdp(a) => dump_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let err = json!({"error": {"kind": f.kind, "message": f.message, "exit_code": f.code}});
            eprintln!("{err}");
            ExitCode::from(f.code)
        }
    }
}
