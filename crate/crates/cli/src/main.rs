//! `one-lap`: first eigenpairs of the 1-Laplacian on 2D domains.
//!
//! Four modes share one configuration surface (defaults < `--config` TOML <
//! flags):
//!
//! * `solve` — run the penalized continuation solver and write every
//!   artifact: `u.grid`, `sigma_x.grid`, `sigma_y.grid`, `certificate.json`,
//!   `iterations.csv`, `sweep.csv`, plus a one-line summary on stdout.
//! * `oracle` — print the exact Cheeger constant of the configured convex
//!   shape; writes nothing.
//! * `certify` — re-check a stored `(u, σ)` pair against the optimality
//!   system and print the certificate as JSON.
//! * `sweep` — superlevel-set sweep of a stored eigenfunction.
//!
//! Exit codes: 0 success, 2 on any failure to configure or run, 3 when
//! `--strict` is set and the run misses convergence or a certificate
//! threshold (`sup|σ| ≤ 1.05`, extremality gap ≤ 0.05, residual ≤ 0.1).

mod config;
mod fields;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use one_lap_core::certificate::{build_certificate, Certificate};
use one_lap_core::grid::GridDomain;
use one_lap_core::levelset::ratio_sweep;
use one_lap_core::solve::{continuation_solve_full, ContinuationSchedule};
use one_lap_core::Error as CoreError;

use config::RunConfig;

const SUP_BOUND: f64 = 1.05;
const GAP_BOUND: f64 = 0.05;
const RESIDUAL_BOUND: f64 = 0.1;

#[derive(Parser)]
#[command(
    name = "one-lap",
    version,
    about = "First eigenvalue of the 1-Laplacian: penalized solver, dual certificates, Cheeger oracles"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the continuation solver and write all artifacts.
    Solve(SolveArgs),
    /// Print the exact Cheeger constant of the configured shape.
    Oracle(OracleArgs),
    /// Re-check stored (u, sigma) files against the optimality system.
    Certify(CertifyArgs),
    /// Superlevel-set sweep of a stored eigenfunction.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; flags override file values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct ShapeArgs {
    /// Domain shape: disk, square, rectangle, or polygon.
    #[arg(long)]
    shape: Option<String>,
    /// Disk radius.
    #[arg(long)]
    radius: Option<f64>,
    /// Square side length.
    #[arg(long)]
    side: Option<f64>,
    /// Rectangle width.
    #[arg(long)]
    width: Option<f64>,
    /// Rectangle height.
    #[arg(long)]
    height: Option<f64>,
    /// Vertex file for --shape polygon (`x y` per line, # comments).
    #[arg(long, value_name = "FILE")]
    polygon_file: Option<PathBuf>,
}

impl ShapeArgs {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(v) = &self.shape {
            c.shape = v.clone();
        }
        if let Some(v) = self.radius {
            c.radius = v;
        }
        if let Some(v) = self.side {
            c.side = v;
        }
        if let Some(v) = self.width {
            c.width = v;
        }
        if let Some(v) = self.height {
            c.height = v;
        }
        if let Some(v) = &self.polygon_file {
            c.polygon_file = Some(v.clone());
        }
    }
}

#[derive(Args)]
struct ScheduleArgs {
    /// First regularization exponent of the continuation ladder.
    #[arg(long)]
    eps_start: Option<f64>,
    /// Geometric decay of the exponent per stage.
    #[arg(long)]
    eps_factor: Option<f64>,
    /// Ladder floor; a final eps = 0 stage is always appended.
    #[arg(long)]
    eps_floor: Option<f64>,
    /// First penalty weight.
    #[arg(long)]
    n_start: Option<f64>,
    /// Geometric growth of the penalty weight per stage.
    #[arg(long)]
    n_factor: Option<f64>,
    /// Number of distinct penalty weights.
    #[arg(long)]
    n_stages: Option<usize>,
    /// Smoothing delta = delta_scale * eps + delta_floor per stage.
    #[arg(long)]
    delta_scale: Option<f64>,
    /// Smoothing floor (the eps = 0 stages run at exactly this delta).
    #[arg(long)]
    delta_floor: Option<f64>,
    /// Iteration cap per stage.
    #[arg(long)]
    cap: Option<usize>,
    /// Relative projected-gradient tolerance for eps > 0 stages.
    #[arg(long)]
    tol_eps: Option<f64>,
    /// Relative projected-gradient tolerance for eps = 0 stages.
    #[arg(long)]
    tol_final: Option<f64>,
}

impl ScheduleArgs {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(v) = self.eps_start {
            c.eps_start = v;
        }
        if let Some(v) = self.eps_factor {
            c.eps_factor = v;
        }
        if let Some(v) = self.eps_floor {
            c.eps_floor = v;
        }
        if let Some(v) = self.n_start {
            c.n_start = v;
        }
        if let Some(v) = self.n_factor {
            c.n_factor = v;
        }
        if let Some(v) = self.n_stages {
            c.n_stages = v;
        }
        if let Some(v) = self.delta_scale {
            c.delta_scale = v;
        }
        if let Some(v) = self.delta_floor {
            c.delta_floor = v;
        }
        if let Some(v) = self.cap {
            c.cap = v;
        }
        if let Some(v) = self.tol_eps {
            c.tol_eps = v;
        }
        if let Some(v) = self.tol_final {
            c.tol_final = v;
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[command(flatten)]
    shape: ShapeArgs,
    #[command(flatten)]
    sched: ScheduleArgs,
    /// Cells across the shape's bounding box.
    #[arg(long, value_parser = clap::value_parser!(u32).range(4..=4096))]
    resolution: Option<u32>,
    /// Seed for the initial bump's jitter.
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact directory (created if missing).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Number of superlevel sweep levels.
    #[arg(long)]
    levels: Option<usize>,
    /// Exit 3 unless the run converged and the certificate passes.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[command(flatten)]
    shape: ShapeArgs,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Directory holding u.grid, sigma_x.grid, sigma_y.grid.
    #[arg(long, value_name = "DIR", default_value = "out")]
    input: PathBuf,
    /// Penalty weight the multiplier and residual are evaluated at.
    #[arg(long)]
    n: Option<f64>,
    /// Support threshold for the residual (default: 1e-3 of the max).
    #[arg(long)]
    tau: Option<f64>,
    /// Exit 3 unless the certificate passes.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Directory holding u.grid.
    #[arg(long, value_name = "DIR", default_value = "out")]
    input: PathBuf,
    /// Number of superlevel sweep levels.
    #[arg(long)]
    levels: Option<usize>,
    /// Directory sweep.csv is written to (default: the input directory).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Solve(a) => solve(a),
        Cmd::Oracle(a) => oracle(a),
        Cmd::Certify(a) => certify(a),
        Cmd::Sweep(a) => sweep(a),
    }
}

fn cert_to_json(c: &Certificate) -> serde_json::Value {
    serde_json::json!({
        "sup_sigma": c.sup_sigma,
        "extremality_gap": c.extremality_gap,
        "pde_residual": c.pde_residual,
        "mass": c.mass,
        "multiplier": c.multiplier,
        "rayleigh": c.rayleigh,
        "passes": c.within(SUP_BOUND, GAP_BOUND, RESIDUAL_BOUND),
    })
}

fn solve(a: SolveArgs) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(a.cfg.config.as_deref())?;
    cfg.mode = "solve".into();
    a.shape.apply(&mut cfg);
    a.sched.apply(&mut cfg);
    if let Some(v) = a.resolution {
        cfg.resolution = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = &a.out {
        cfg.out = v.clone();
    }
    if let Some(v) = a.levels {
        cfg.levels = v;
    }
    cfg.strict |= a.strict;
    if a.cfg.print_config {
        print!("{}", cfg.to_toml());
        return Ok(ExitCode::SUCCESS);
    }

    let shape = cfg.shape_spec()?;
    let dom = GridDomain::rasterize(&shape, cfg.resolution)
        .context("rasterizing the domain")?;
    let sched = ContinuationSchedule::from_params(&cfg.schedule_params())
        .context("building the continuation schedule")?;
    std::fs::create_dir_all(&cfg.out)
        .with_context(|| format!("creating output directory {}", cfg.out.display()))?;

    let mut iters_csv = String::from("stage,iter,energy,grad_norm,mass,multiplier\n");
    let t0 = Instant::now();
    let report = continuation_solve_full(
        &dom,
        &sched,
        cfg.seed,
        || t0.elapsed().as_secs_f64(),
        |r| {
            writeln!(
                iters_csv,
                "{},{},{},{},{},{}",
                r.stage, r.iter, r.energy, r.grad_norm, r.mass, r.multiplier
            )
            .unwrap();
        },
    )
    .context("solver failed")?;
    let seconds = t0.elapsed().as_secs_f64();

    let (nx, ny, h, origin) = (dom.nx(), dom.ny(), dom.h(), dom.origin());
    fields::write_atomic(
        &cfg.out.join("u.grid"),
        &fields::format_grid(nx, ny, h, origin, report.u.values())?,
    )?;
    fields::write_atomic(
        &cfg.out.join("sigma_x.grid"),
        &fields::format_grid(nx, ny, h, origin, report.sigma.vx())?,
    )?;
    fields::write_atomic(
        &cfg.out.join("sigma_y.grid"),
        &fields::format_grid(nx, ny, h, origin, report.sigma.vy())?,
    )?;
    fields::write_atomic(&cfg.out.join("iterations.csv"), &iters_csv)?;

    // A collapsed field has no certificate and no level sets; the artifacts
    // still appear, holding the degeneracy note / bare header.
    let cert = match build_certificate(&report.u, &report.sigma, cfg.final_n(), None) {
        Ok(c) => Some(c),
        Err(CoreError::DegenerateField { .. }) => None,
        Err(e) => return Err(e).context("building the certificate"),
    };
    let mut sweep_csv = String::from("level,area,perimeter,ratio\n");
    match ratio_sweep(&report.u, cfg.levels) {
        Ok(s) => {
            for k in 0..s.levels.len() {
                writeln!(
                    sweep_csv,
                    "{},{},{},{}",
                    s.levels[k], s.areas[k], s.perimeters[k], s.ratios[k]
                )
                .unwrap();
            }
        }
        Err(CoreError::DegenerateField { .. }) | Err(CoreError::EmptySweep) => {}
        Err(e) => return Err(e).context("sweeping level sets"),
    }
    fields::write_atomic(&cfg.out.join("sweep.csv"), &sweep_csv)?;

    let oracle = cfg.oracle();
    let stages: Vec<serde_json::Value> = report
        .stages
        .iter()
        .zip(report.wall_clock.iter())
        .map(|(s, &sec)| {
            serde_json::json!({
                "eps": s.eps, "n": s.n, "delta": s.delta,
                "iterations": s.iterations, "energy": s.energy,
                "multiplier": s.multiplier, "grad_norm": s.grad_norm,
                "mass": s.mass, "converged": s.converged, "stalled": s.stalled,
                "seconds": sec,
            })
        })
        .collect();
    let doc = serde_json::json!({
        "shape": cfg.shape, "resolution": cfg.resolution, "seed": cfg.seed,
        "lambda": {
            "multiplier": report.lambda_multiplier,
            "rayleigh": report.lambda_rayleigh,
            "energy": report.lambda_energy,
        },
        "oracle": oracle,
        "converged": report.converged,
        "seconds": seconds,
        "certificate": cert.as_ref().map(cert_to_json),
        "stages": stages,
    });
    fields::write_atomic(
        &cfg.out.join("certificate.json"),
        &(serde_json::to_string_pretty(&doc)? + "\n"),
    )?;

    let oracle_str = oracle.map_or("n/a".to_string(), |v| v.to_string());
    println!(
        "lambda_hat={} rayleigh={} energy={} oracle={}",
        report.lambda_multiplier, report.lambda_rayleigh, report.lambda_energy, oracle_str
    );

    let certified = report.converged
        && cert
            .as_ref()
            .is_some_and(|c| c.within(SUP_BOUND, GAP_BOUND, RESIDUAL_BOUND));
    if cfg.strict && !certified {
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn oracle(a: OracleArgs) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(a.cfg.config.as_deref())?;
    cfg.mode = "oracle".into();
    a.shape.apply(&mut cfg);
    if a.cfg.print_config {
        print!("{}", cfg.to_toml());
        return Ok(ExitCode::SUCCESS);
    }
    match cfg.shape.as_str() {
        "disk" => {
            let r = cfg.radius;
            let h = one_lap_core::cheeger::cheeger_constant_disk(r)?;
            let pi = std::f64::consts::PI;
            // The Cheeger set of a disk is the disk itself.
            println!("h={} r={} area={} perimeter={}", h, 1.0 / h, pi * r * r, 2.0 * pi * r);
        }
        "square" | "rectangle" | "polygon" => {
            let poly = match cfg.shape.as_str() {
                "square" => config::rect_polygon(cfg.side, cfg.side)?,
                "rectangle" => config::rect_polygon(cfg.width, cfg.height)?,
                _ => {
                    let path = cfg.polygon_file.as_deref().ok_or_else(|| {
                        anyhow::anyhow!("--shape polygon needs --polygon-file <FILE>")
                    })?;
                    config::read_polygon(path)?
                }
            };
            let r = one_lap_core::cheeger::cheeger_constant(&poly)?;
            println!("h={} r={} area={} perimeter={}", r.h, r.r, r.area, r.perimeter);
        }
        other => anyhow::bail!("unknown shape `{other}`"),
    }
    Ok(ExitCode::SUCCESS)
}

fn certify(a: CertifyArgs) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(a.cfg.config.as_deref())?;
    cfg.mode = "certify".into();
    cfg.strict |= a.strict;
    if a.cfg.print_config {
        print!("{}", cfg.to_toml());
        return Ok(ExitCode::SUCCESS);
    }
    let u = fields::read_scalar(&a.input.join("u.grid"))?;
    let sigma = fields::read_vector(
        u.domain(),
        &a.input.join("sigma_x.grid"),
        &a.input.join("sigma_y.grid"),
    )?;
    let n = a.n.unwrap_or_else(|| cfg.final_n());
    let cert = build_certificate(&u, &sigma, n, a.tau).context("building the certificate")?;
    println!("{}", serde_json::to_string_pretty(&cert_to_json(&cert))?);
    if cfg.strict && !cert.within(SUP_BOUND, GAP_BOUND, RESIDUAL_BOUND) {
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(a: SweepArgs) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(a.cfg.config.as_deref())?;
    cfg.mode = "sweep".into();
    if let Some(v) = a.levels {
        cfg.levels = v;
    }
    if a.cfg.print_config {
        print!("{}", cfg.to_toml());
        return Ok(ExitCode::SUCCESS);
    }
    let u = fields::read_scalar(&a.input.join("u.grid"))?;
    let s = ratio_sweep(&u, cfg.levels).context("sweeping level sets")?;
    let out_dir = a.out.unwrap_or_else(|| a.input.clone());
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let mut csv = String::from("level,area,perimeter,ratio\n");
    for k in 0..s.levels.len() {
        writeln!(csv, "{},{},{},{}", s.levels[k], s.areas[k], s.perimeters[k], s.ratios[k])
            .unwrap();
    }
    fields::write_atomic(&out_dir.join("sweep.csv"), &csv)?;
    println!("best_level={} best_ratio={}", s.best_level, s.best_ratio);
    Ok(ExitCode::SUCCESS)
}
