use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use fracsym::elliptic::{solve_nonlinear, ComparisonReport, Nonlinearity, SymmetrizedPair};
use fracsym::error::check_sigma;
use fracsym::experiments::{bump, emit_report, rel_l2, run_suite, ExperimentConfig, ReportFormat};
use fracsym::extension::{dtn_trace, solve_extension, BoundaryData, ExtensionOptions};
use fracsym::fraclap::{assemble_restricted_with, assemble_spectral, AssemblyOptions};
use fracsym::io::{read_domain, read_field, read_matrix, write_domain, write_field, write_matrix};
use fracsym::parabolic::{evolve, parabolic_concentration_experiment, Source};
use fracsym::rearrange::{
    concentration_report, cross_grid_tolerance, decreasing_rearrangement, spherical_rearrangement,
};
use fracsym::spectral::{
    decay_fit_regime, eigensolve, faber_krahn_sweep_with, lambda1_decay_fit, next_excited_eigenvalue, FkOptions,
};
use fracsym::{Domain, FracError, Result, ScalarField, Shape};

#[derive(Parser)]
#[command(name = "fracsym", version, about = "Restricted fractional Laplacian and symmetrization toolkit")]
struct Cli {
    /// Output format on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Restricted,
    Spectral,
}

#[derive(Clone, Copy, ValueEnum)]
enum EigMethod {
    Dense,
    DecayFit,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExtMode {
    DtnCheck,
    Solve,
}

#[derive(Subcommand)]
enum Command {
    /// Build a lattice domain and write it as JSON.
    Domain {
        /// Shape such as `disk:1`, `lshape:1` or `union-intervals:0,1,2,3`.
        #[arg(long)]
        shape: String,
        /// Cells across the longest side.
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write a field file holding 1 on every cell, ready to edit.
        #[arg(long)]
        template: Option<PathBuf>,
    },
    /// Assemble the operator matrix on a domain.
    Assemble {
        #[arg(long)]
        domain: PathBuf,
        #[arg(long)]
        sigma: f64,
        #[arg(long, value_enum, default_value_t = Kind::Restricted)]
        kind: Kind,
        /// Disable the nearest-neighbour curvature correction.
        #[arg(long)]
        no_curvature: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decreasing rearrangement of a field.
    Rearrange {
        #[arg(long)]
        domain: PathBuf,
        #[arg(long)]
        field: PathBuf,
        /// Write the profile as a two-column CSV.
        #[arg(long)]
        emit: Option<PathBuf>,
        /// Write the spherical rearrangement; its ball domain goes next to it as JSON.
        #[arg(long)]
        spherical: Option<PathBuf>,
        /// Compare the concentration of `field` with this field.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Domain of the comparison field, if different.
        #[arg(long, requires = "compare")]
        compare_domain: Option<PathBuf>,
    },
    /// Solve the stationary problem and compare with the symmetrized one.
    Elliptic {
        #[arg(long)]
        domain: PathBuf,
        #[arg(long)]
        sigma: f64,
        /// Nonlinearity: `linear:c`, `saturating` or `power:m`.
        #[arg(long = "B", default_value = "linear:1")]
        b: String,
        #[arg(long)]
        f: PathBuf,
        /// Write the solution on the domain.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the comparison report here and the two profiles next to it.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evolve the linear problem by implicit time stepping.
    Parabolic {
        #[arg(long)]
        domain: PathBuf,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        u0: PathBuf,
        /// Time-independent source; zero when omitted.
        #[arg(long)]
        f: Option<PathBuf>,
        #[arg(long = "T")]
        t_end: f64,
        #[arg(long)]
        h: f64,
        /// Also evolve the symmetrized problem and compare at every step.
        #[arg(long)]
        compare_symmetrized: bool,
        /// Directory for one CSV per saved time plus `index.json`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Save every k-th step.
        #[arg(long, default_value_t = 1)]
        save_every: usize,
    },
    /// Eigenvalues of an assembled matrix.
    Eig {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, value_enum, default_value_t = EigMethod::Dense)]
        method: EigMethod,
    },
    /// Compare the first eigenvalue of each shape with its Schwarz ball.
    FaberKrahn {
        /// JSON file holding a list of shapes, or shape descriptions separated by `;`.
        #[arg(long)]
        shapes: String,
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5")]
        sigmas: Vec<f64>,
        #[arg(long, default_value_t = 48)]
        n: usize,
        #[arg(long)]
        decay_fit: bool,
        #[arg(long, default_value_t = 0)]
        rayleigh_trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the extension problem or check its Dirichlet-to-Neumann trace.
    Extension {
        #[arg(long)]
        domain: PathBuf,
        #[arg(long)]
        sigma: f64,
        #[arg(long, value_enum, default_value_t = ExtMode::DtnCheck)]
        mode: ExtMode,
        /// Bottom trace; a smooth bump when omitted.
        #[arg(long)]
        g: Option<PathBuf>,
        #[arg(long, default_value_t = 96)]
        layers: usize,
        #[arg(long)]
        z_max: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        pad: Option<f64>,
        /// Relative L² tolerance of the trace check.
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
        /// Write `<prefix>.bin` and `<prefix>.json`.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Run a verification suite from a TOML configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the configuration.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

/// Result of a command: the stdout document and whether its checks held.
struct Outcome {
    value: Value,
    passed: bool,
}

impl Outcome {
    fn ok(value: impl Serialize) -> Result<Self> {
        Ok(Outcome { value: serde_json::to_value(value)?, passed: true })
    }
}

fn load_domain(path: &Path) -> Result<Arc<Domain>> {
    Ok(Arc::new(read_domain(path)?))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn parse_shapes(arg: &str) -> Result<Vec<Shape>> {
    let p = Path::new(arg);
    if p.is_file() {
        return Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?);
    }
    arg.split(';').filter(|s| !s.trim().is_empty()).map(|s| Shape::parse(s.trim())).collect()
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Domain { shape, n, out, template } => {
            let d = Arc::new(Shape::parse(&shape)?.build(n)?);
            write_domain(&out, &d)?;
            if let Some(t) = &template {
                write_field(t, &ScalarField::constant(d.clone(), 1.0))?;
            }
            Outcome::ok(json!({
                "dim": d.dim(),
                "cells": d.len(),
                "spacing": d.spacing(),
                "measure": d.measure(),
                "domain_hash": d.hash(),
                "path": path_str(&out),
                "template": template.as_deref().map(path_str),
            }))
        }
        Command::Assemble { domain, sigma, kind, no_curvature, out } => {
            check_sigma(sigma)?;
            let d = load_domain(&domain)?;
            let a = match kind {
                Kind::Restricted => {
                    assemble_restricted_with(&d, sigma, AssemblyOptions { curvature_correction: !no_curvature })?
                }
                Kind::Spectral => assemble_spectral(&d, sigma)?,
            };
            write_matrix(&out, &a)?;
            let killing = a.killing();
            Outcome::ok(json!({
                "n": a.len(),
                "sigma": sigma,
                "kind": a.kind(),
                "domain_hash": d.hash(),
                "min_killing": killing.iter().copied().fold(f64::INFINITY, f64::min),
                "max_killing": killing.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                "path": path_str(&out),
            }))
        }
        Command::Rearrange { domain, field, emit, spherical, compare, compare_domain } => {
            let d = load_domain(&domain)?;
            let f = read_field(&field, &d)?;
            let profile = decreasing_rearrangement(&f);
            let mut out = json!({
                "cells": d.len(),
                "measure": profile.extent(),
                "max": profile.values().first().copied().unwrap_or(0.0),
                "norm_l1": profile.norm_lp(1.0),
                "norm_l2": profile.norm_lp(2.0),
            });
            if let Some(p) = &emit {
                std::fs::write(p, profile.to_csv())?;
                out["profile"] = json!(path_str(p));
            }
            if let Some(p) = &spherical {
                let fs = spherical_rearrangement(&f);
                let ball_path = sibling(p, "domain.json");
                write_domain(&ball_path, fs.domain())?;
                write_field(p, &fs)?;
                out["spherical"] = json!(path_str(p));
                out["ball_domain"] = json!(path_str(&ball_path));
            }
            if let Some(p) = &compare {
                let dg = match &compare_domain {
                    Some(q) => load_domain(q)?,
                    None => d.clone(),
                };
                let g = decreasing_rearrangement(&read_field(p, &dg)?);
                let tol = cross_grid_tolerance(&profile, &g, d.cell_measure().max(dg.cell_measure()));
                out["comparison"] = serde_json::to_value(concentration_report(&profile, &g, tol)?)?;
            }
            Ok(Outcome { value: out, passed: true })
        }
        Command::Elliptic { domain, sigma, b, f, out, report } => {
            check_sigma(sigma)?;
            let d = load_domain(&domain)?;
            let b = Nonlinearity::parse(&b)?;
            let f = read_field(&f, &d)?;
            let pair = SymmetrizedPair::assemble(&d, sigma)?;
            let fsharp = fracsym::rearrange::spherical_rearrangement_onto(&f, pair.ball.domain().clone());
            let v = solve_nonlinear(&pair.omega, &b, &f, 1.0)?;
            let big_v = solve_nonlinear(&pair.ball, &b, &fsharp, 1.0)?;
            let pv = decreasing_rearrangement(&v);
            let pb = decreasing_rearrangement(&big_v);
            let rep = ComparisonReport::cross_grid(&pv, &pb, d.cell_measure())?;
            if let Some(p) = &out {
                write_field(p, &v)?;
            }
            let mut value = json!({
                "verdict": rep.verdict,
                "max_gap": rep.max_gap,
                "min_gap": rep.min_gap,
                "tolerances": { "cross_grid": rep.tolerance },
                "measure_omega": rep.measure_omega,
                "measure_ball": rep.measure_ball,
            });
            if let Some(p) = &report {
                let po = sibling(p, "omega_profile.csv");
                let pbp = sibling(p, "ball_profile.csv");
                std::fs::write(&po, pv.to_csv())?;
                std::fs::write(&pbp, pb.to_csv())?;
                value["profiles"] = json!({ "omega": path_str(&po), "ball": path_str(&pbp) });
                std::fs::write(p, serde_json::to_string_pretty(&value)?)?;
            }
            Ok(Outcome { passed: rep.verdict.is_less_or_equal(), value })
        }
        Command::Parabolic { domain, sigma, u0, f, t_end, h, compare_symmetrized, out_dir, save_every } => {
            check_sigma(sigma)?;
            if save_every == 0 {
                return Err(FracError::InvalidInput("--save-every must be positive".into()));
            }
            let d = load_domain(&domain)?;
            let u0 = read_field(&u0, &d)?;
            let f = match &f {
                Some(p) => Some(read_field(p, &d)?),
                None => None,
            };
            let source = f.clone().map(Source::Constant).unwrap_or_default();
            let a = fracsym::fraclap::assemble_restricted(&d, sigma)?;
            let traj = evolve(&a, &u0, &source, t_end, h)?;
            let last = traj.states.len() - 1;
            let saved: Vec<usize> = (0..=last).filter(|k| k % save_every == 0 || *k == last).collect();
            let mut value = json!({
                "steps": last,
                "final_time": traj.final_time(),
                "final_norms": {
                    "l1": traj.final_state().norm_l1(),
                    "l2": traj.final_state().norm_l2(),
                    "linf": traj.final_state().norm_linf(),
                },
            });
            if let Some(dir) = &out_dir {
                std::fs::create_dir_all(dir)?;
                let mut index = Vec::new();
                for &k in &saved {
                    let name = format!("u_{k:06}.csv");
                    write_field(&dir.join(&name), &traj.states[k])?;
                    index.push(json!({ "step": k, "t": traj.times[k], "file": name }));
                }
                let idx = json!({ "domain_hash": d.hash(), "sigma": sigma, "h": h, "states": index });
                std::fs::write(dir.join("index.json"), serde_json::to_string_pretty(&idx)?)?;
                value["index"] = json!(path_str(&dir.join("index.json")));
            }
            let mut passed = true;
            if compare_symmetrized {
                let ubar0 = spherical_rearrangement(&u0);
                let fbar = match &f {
                    Some(f) => Source::Constant(fracsym::rearrange::spherical_rearrangement_onto(
                        f,
                        ubar0.domain().clone(),
                    )),
                    None => Source::Zero,
                };
                let rep = parabolic_concentration_experiment(&d, sigma, &u0, &source, &ubar0, &fbar, t_end, h)?;
                passed = rep.all_hold();
                value["comparison"] = serde_json::to_value(&rep)?;
                value["comparison_holds"] = json!(passed);
            }
            Ok(Outcome { value, passed })
        }
        Command::Eig { matrix, k, method } => {
            let a = read_matrix(&matrix)?;
            let res = match method {
                EigMethod::Dense => eigensolve(&a, k)?,
                EigMethod::DecayFit => {
                    let dense = eigensolve(&a, a.len().min(4))?;
                    let u0 = ScalarField::constant(a.domain().clone(), 1.0);
                    let (h, t) = decay_fit_regime(dense.lambda1(), next_excited_eigenvalue(&dense, &u0));
                    lambda1_decay_fit(&a, &u0, t, h)?
                }
            };
            Outcome::ok(res)
        }
        Command::FaberKrahn { shapes, sigmas, n, decay_fit, rayleigh_trials, seed, out } => {
            for &s in &sigmas {
                check_sigma(s)?;
            }
            let shapes = parse_shapes(&shapes)?;
            let entries =
                faber_krahn_sweep_with(&shapes, &sigmas, n, FkOptions { decay_fit, rayleigh_trials, seed })?;
            if let Some(p) = &out {
                std::fs::write(p, serde_json::to_string_pretty(&entries)?)?;
            }
            let passed = entries.iter().all(|e| e.inequality_holds());
            Ok(Outcome { value: serde_json::to_value(&entries)?, passed })
        }
        Command::Extension { domain, sigma, mode, g, layers, z_max, gamma, pad, tolerance, export } => {
            check_sigma(sigma)?;
            let d = load_domain(&domain)?;
            let g = match &g {
                Some(p) => read_field(p, &d)?,
                None => bump(&d),
            };
            let opts = ExtensionOptions { box_pad: pad, z_max, layers, gamma };
            let w = solve_extension(&d, sigma, BoundaryData::DirichletTrace(&g), &opts)?;
            if let Some(prefix) = &export {
                w.export(&prefix.with_extension("bin"), &prefix.with_extension("json"))?;
            }
            let mut value = json!({
                "header": w.header(),
                "decay_ratio": w.decay_ratio,
                "decay_ok": w.decay_ok,
            });
            let mut passed = true;
            if let ExtMode::DtnCheck = mode {
                let reference = fracsym::fraclap::assemble_restricted(&d, sigma)?.apply_field(&g)?;
                let err = rel_l2(dtn_trace(&w)?.values(), reference.values());
                passed = err <= tolerance;
                value["rel_l2_error"] = json!(err);
                value["tolerance"] = json!(tolerance);
                value["passed"] = json!(passed);
            }
            Ok(Outcome { value, passed })
        }
        Command::Run { config, output_dir } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if output_dir.is_some() {
                cfg.output_dir = output_dir;
            }
            let report = run_suite(&cfg)?;
            let mut value = json!({
                "suite": report.suite,
                "passed": report.passed,
                "cases": report.cases.len(),
                "failures": report.failures.len(),
                "invariants": report.invariants,
                "summary_hash": report.summary_hash(),
            });
            if let Some(dir) = &cfg.output_dir {
                let formats = cfg.formats.clone().unwrap_or_else(|| vec![ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown]);
                let files = emit_report(&report, dir, &formats)?;
                value["files"] = json!(files.iter().map(|p| path_str(p)).collect::<Vec<_>>());
            }
            Ok(Outcome { value, passed: report.passed })
        }
    }
}

fn print_text(out: &mut impl Write, v: &Value) -> std::io::Result<()> {
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                writeln!(out, "{k}: {x}")?;
            }
        }
        Value::Array(items) => {
            for x in items {
                writeln!(out, "{x}")?;
            }
        }
        other => writeln!(out, "{other}")?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            let _ = match cli.format {
                Format::Json => writeln!(stdout, "{:#}", out.value),
                Format::Text => print_text(&mut stdout, &out.value),
            };
            if out.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: invariant check failed");
                ExitCode::from(4)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
