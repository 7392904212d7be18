//! Named, reproducible verification suites with JSON, CSV and Markdown reports.
//!
//! A suite is configured by a flat TOML file:
//!
//! ```toml
//! suite = "elliptic-comparison"
//! seed = 1
//! trials = 100
//! n2d = 32
//! sigmas = [0.5, 1.0, 1.5]
//! output_dir = "out/elliptic"
//! formats = ["json", "csv", "markdown"]
//! ```
//!
//! Every case draws its random data from its own ChaCha8 stream, so results
//! do not depend on the worker count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{Domain, ScalarField, Shape};
use crate::elliptic::{elliptic_concentration_with, l1_contraction_check, solve_nonlinear, Nonlinearity, SymmetrizedPair};
use crate::error::{invalid, FracError, Result};
use crate::extension::{
    default_z_max, dtn_trace, extension_comparison, solve_extension, BoundaryData, ExtensionOptions,
};
use crate::fraclap::assemble_restricted;
use crate::parabolic::{crandall_liggett_limit, parabolic_concentration_with, Resolvent, Source};
use crate::quadrature::adaptive;
use crate::random::{case_rng, smoothed_noise};
use crate::rearrange::{
    concentration_report, decreasing_rearrangement, default_convex_family, distribution_function,
    hardy_littlewood_check, same_grid_tolerance, spherical_rearrangement, spherical_rearrangement_onto,
};
use crate::spectral::{eigensolve, faber_krahn_sweep_with, FkOptions};

/// Largest 1D cell count accepted by a suite.
pub const MAX_CELLS_1D: usize = 4096;
/// Largest 2D lattice side accepted by a suite.
pub const MAX_SIDE_2D: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    EllipticComparison,
    ParabolicComparison,
    FaberKrahn,
    DtnConsistency,
    RearrangementProperties,
    ItdConvergence,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::EllipticComparison => "elliptic-comparison",
            Suite::ParabolicComparison => "parabolic-comparison",
            Suite::FaberKrahn => "faber-krahn",
            Suite::DtnConsistency => "dtn-consistency",
            Suite::RearrangementProperties => "rearrangement-properties",
            Suite::ItdConvergence => "itd-convergence",
        }
    }

    /// The mathematical statement exercised by the suite.
    pub fn property(self) -> &'static str {
        match self {
            Suite::EllipticComparison => {
                "elliptic comparison v^# ≺ V on the Schwarz ball, and L1 contraction of B(v)"
            }
            Suite::ParabolicComparison => {
                "parabolic comparison u^#(t) ≺ v(t) at every saved time, with the Lp norm chain"
            }
            Suite::FaberKrahn => "Faber-Krahn inequality λ1(Ω) ≥ λ1(Ω^#), equality only for balls",
            Suite::DtnConsistency => {
                "Dirichlet-to-Neumann map of the extension equals the restricted fractional Laplacian"
            }
            Suite::RearrangementProperties => {
                "equimeasurability, Cavalieri, Hardy-Littlewood and convex-order properties of f*"
            }
            Suite::ItdConvergence => "implicit time discretization converges at first order to the semigroup",
        }
    }

    fn default_shapes(self) -> Vec<&'static str> {
        match self {
            Suite::FaberKrahn => {
                vec!["union-intervals:0,1,2,3", "square:1", "lshape:1", "ellipse:1,0.5", "annulus:0.5,1", "disk:1"]
            }
            Suite::RearrangementProperties => vec!["interval:-1,1", "square:1"],
            Suite::DtnConsistency => vec!["interval:-1,1", "disk:1"],
            Suite::ItdConvergence => vec!["interval:-1,1", "square:1"],
            _ => vec!["union-intervals:0,1,2,3", "interval:-1,1", "square:1", "lshape:1", "ellipse:1,0.5", "annulus:0.5,1"],
        }
    }

    fn default_trials(self) -> usize {
        match self {
            Suite::RearrangementProperties => 500,
            Suite::EllipticComparison => 100,
            Suite::ParabolicComparison => 30,
            _ => 0,
        }
    }

    fn default_n1d(self) -> usize {
        match self {
            Suite::RearrangementProperties => 256,
            Suite::ParabolicComparison | Suite::ItdConvergence | Suite::DtnConsistency => 128,
            _ => 256,
        }
    }

    fn default_n2d(self) -> usize {
        match self {
            Suite::FaberKrahn => 48,
            Suite::ParabolicComparison => 24,
            Suite::ItdConvergence => 16,
            Suite::DtnConsistency => 24,
            _ => 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = FracError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => invalid(format!("unknown report format {other:?}")),
        }
    }
}

/// Suite configuration. Unset keys take suite-specific defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub suite: Suite,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Randomized cases for the suites that draw random data.
    pub trials: Option<usize>,
    /// Resolution of 1D shapes (cells across the longest side).
    pub n1d: Option<usize>,
    /// Resolution of 2D shapes.
    pub n2d: Option<usize>,
    pub sigmas: Option<Vec<f64>>,
    /// Shapes in the `name:p1,p2` syntax of [`Shape::parse`].
    pub shapes: Option<Vec<String>>,
    /// Nonlinearities in the syntax of [`Nonlinearity::parse`].
    pub nonlinearities: Option<Vec<String>>,
    /// Final time of the parabolic suites.
    pub t_end: Option<f64>,
    /// Time step of the parabolic comparison.
    pub step: Option<f64>,
    /// z-layers of the extension solves.
    pub layers: Option<usize>,
    /// Cross-check `λ₁` by semigroup decay in the Faber-Krahn suite.
    pub decay_fit: Option<bool>,
    /// Relative L² tolerance of the Dirichlet-to-Neumann check.
    pub tolerance: Option<f64>,
    pub output_dir: Option<PathBuf>,
    pub formats: Option<Vec<ReportFormat>>,
    pub workers: Option<usize>,
}

fn default_seed() -> u64 {
    1
}

impl ExperimentConfig {
    pub fn new(suite: Suite) -> Self {
        ExperimentConfig {
            suite,
            seed: default_seed(),
            trials: None,
            n1d: None,
            n2d: None,
            sigmas: None,
            shapes: None,
            nonlinearities: None,
            t_end: None,
            step: None,
            layers: None,
            decay_fit: None,
            tolerance: None,
            output_dir: None,
            formats: None,
            workers: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| FracError::InvalidInput(format!("invalid suite configuration: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    fn trials(&self) -> usize {
        self.trials.unwrap_or_else(|| self.suite.default_trials())
    }

    fn n1d(&self) -> usize {
        self.n1d.unwrap_or_else(|| self.suite.default_n1d())
    }

    fn n2d(&self) -> usize {
        self.n2d.unwrap_or_else(|| self.suite.default_n2d())
    }

    fn sigmas(&self) -> Vec<f64> {
        self.sigmas.clone().unwrap_or_else(|| vec![0.5, 1.0, 1.5])
    }

    fn shapes(&self) -> Result<Vec<Shape>> {
        match &self.shapes {
            Some(v) => v.iter().map(|s| Shape::parse(s)).collect(),
            None => self.suite.default_shapes().into_iter().map(Shape::parse).collect(),
        }
    }

    fn nonlinearities(&self) -> Result<Vec<Nonlinearity>> {
        match &self.nonlinearities {
            Some(v) => v.iter().map(|s| Nonlinearity::parse(s)).collect(),
            None => Ok(vec![Nonlinearity::Linear(1.0), Nonlinearity::Saturating]),
        }
    }

    fn resolution(&self, shape: &Shape) -> usize {
        if shape.dim() == 1 {
            self.n1d()
        } else {
            self.n2d()
        }
    }

    /// Worker count: `FRACSYM_WORKERS`, then the `workers` key, then all cores.
    pub fn worker_count(&self) -> Result<usize> {
        if let Ok(v) = std::env::var("FRACSYM_WORKERS") {
            return match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => invalid(format!("FRACSYM_WORKERS must be a positive integer, got {v:?}")),
            };
        }
        Ok(self.workers.unwrap_or(0))
    }

    fn validate(&self) -> Result<()> {
        for &s in &self.sigmas() {
            crate::error::check_sigma(s)?;
        }
        if self.sigmas().is_empty() {
            return invalid("at least one sigma is required");
        }
        if self.shapes()?.is_empty() {
            return invalid("at least one shape is required");
        }
        self.nonlinearities()?;
        if self.n1d() == 0 || self.n2d() == 0 {
            return invalid("resolutions must be positive");
        }
        if matches!(self.t_end, Some(t) if !(t > 0.0 && t.is_finite())) {
            return invalid("t_end must be positive");
        }
        if matches!(self.step, Some(h) if !(h > 0.0 && h.is_finite())) {
            return invalid("step must be positive");
        }
        if self.workers == Some(0) {
            return invalid("workers must be positive");
        }
        Ok(())
    }
}

fn build_capped(shape: &Shape, resolution: usize) -> Result<Arc<Domain>> {
    let d = shape.build(resolution)?;
    let [nx, ny] = d.lattice_shape();
    if d.dim() == 1 && d.len() > MAX_CELLS_1D {
        return invalid(format!("{} cells exceed the 1D cap of {MAX_CELLS_1D}", d.len()));
    }
    if d.dim() == 2 && nx.max(ny) > MAX_SIDE_2D {
        return invalid(format!("a {nx}x{ny} lattice exceeds the 2D cap of {MAX_SIDE_2D}x{MAX_SIDE_2D}"));
    }
    Ok(Arc::new(d))
}

/// Outcome of one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub id: usize,
    pub label: String,
    pub passed: bool,
    pub checks: BTreeMap<String, bool>,
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Data needed to replay a failed randomized case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub case: usize,
    pub label: String,
    pub seed: u64,
    /// ChaCha8 stream of the case.
    pub stream: u64,
    pub failed_checks: Vec<String>,
    pub data: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantSummary {
    pub name: String,
    pub passed: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub property: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub cases: Vec<CaseResult>,
    pub invariants: Vec<InvariantSummary>,
    pub failures: Vec<FailureRecord>,
    pub passed: bool,
}

impl SuiteReport {
    /// SHA-256 of the JSON document, leaving out where the reports are written.
    pub fn summary_hash(&self) -> String {
        let mut report = self.clone();
        report.config.output_dir = None;
        let bytes = serde_json::to_vec(&report).expect("report serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

struct Case {
    result: CaseResult,
    replay: BTreeMap<String, Vec<f64>>,
}

impl Case {
    fn new(id: usize, label: impl Into<String>) -> Self {
        Case {
            result: CaseResult {
                id,
                label: label.into(),
                passed: true,
                checks: BTreeMap::new(),
                metrics: BTreeMap::new(),
                error: None,
            },
            replay: BTreeMap::new(),
        }
    }

    fn check(&mut self, name: &str, ok: bool) {
        let entry = self.result.checks.entry(name.to_string()).or_insert(true);
        *entry &= ok;
        self.result.passed &= ok;
    }

    fn metric(&mut self, name: &str, v: f64) {
        self.result.metrics.insert(name.to_string(), v);
    }

    fn keep(&mut self, name: &str, f: &ScalarField) {
        self.replay.insert(name.to_string(), f.values().to_vec());
    }

    fn fail_with(mut self, e: FracError) -> Self {
        self.result.passed = false;
        self.result.checks.insert("completed".into(), false);
        self.result.error = Some(e.to_string());
        self
    }
}

fn finish(id: usize, label: String, body: impl FnOnce(&mut Case) -> Result<()>) -> Case {
    let mut case = Case::new(id, label);
    match body(&mut case) {
        Ok(()) => case,
        Err(e) => case.fail_with(e),
    }
}

/// Runs a suite with the configured worker count.
pub fn run_suite(cfg: &ExperimentConfig) -> Result<SuiteReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count()?)
        .build()
        .map_err(|e| FracError::InvalidInput(format!("cannot start workers: {e}")))?;
    let cases = pool.install(|| match cfg.suite {
        Suite::RearrangementProperties => rearrangement_suite(cfg),
        Suite::EllipticComparison => elliptic_suite(cfg),
        Suite::ParabolicComparison => parabolic_suite(cfg),
        Suite::FaberKrahn => faber_krahn_suite(cfg),
        Suite::DtnConsistency => dtn_suite(cfg),
        Suite::ItdConvergence => itd_suite(cfg),
    })?;

    let mut totals: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut failures = Vec::new();
    let mut results = Vec::with_capacity(cases.len());
    for case in cases {
        for (name, ok) in &case.result.checks {
            let t = totals.entry(name.clone()).or_default();
            if *ok {
                t.0 += 1;
            } else {
                t.1 += 1;
            }
        }
        if !case.result.passed {
            failures.push(FailureRecord {
                case: case.result.id,
                label: case.result.label.clone(),
                seed: cfg.seed,
                stream: case.result.id as u64,
                failed_checks: case.result.checks.iter().filter(|(_, ok)| !**ok).map(|(n, _)| n.clone()).collect(),
                data: case.replay,
            });
        }
        results.push(case.result);
    }
    let invariants =
        totals.into_iter().map(|(name, (passed, failed))| InvariantSummary { name, passed, failed }).collect();
    Ok(SuiteReport {
        suite: cfg.suite,
        property: cfg.suite.property().to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        passed: failures.is_empty() && !results.is_empty(),
        cases: results,
        invariants,
        failures,
    })
}

fn shape_label(shape: &Shape) -> String {
    shape.name().to_string()
}

/// One step of the lazy lattice random walk, a symmetric doubly stochastic
/// averaging, so that `diffuse(f) ≺ f`.
fn diffuse(f: &ScalarField, steps: usize) -> ScalarField {
    let d = f.domain();
    let nb: &[(isize, isize)] = if d.dim() == 1 { &[(-1, 0), (1, 0)] } else { &[(-1, 0), (1, 0), (0, -1), (0, 1)] };
    let w = 1.0 / (2.0 * nb.len() as f64);
    let mut u = f.values().to_vec();
    for _ in 0..steps {
        u = (0..d.len())
            .map(|i| {
                let (x, y) = d.lattice_coords(i);
                let mut v = u[i];
                for &(dx, dy) in nb {
                    if let Some(j) = d.cell_at(x as isize + dx, y as isize + dy) {
                        v += w * (u[j] - u[i]);
                    }
                }
                v
            })
            .collect();
    }
    f.with_values(u).expect("sizes match")
}

fn convex_forward(f: &ScalarField, g: &ScalarField) -> bool {
    let pf = decreasing_rearrangement(f);
    let pg = decreasing_rearrangement(g);
    let top = pf.norm_lp(f64::INFINITY).max(pg.norm_lp(f64::INFINITY));
    default_convex_family(top, 16).into_iter().all(|phi| {
        let lhs = pf.integrate(|t| phi.eval(t));
        let rhs = pg.integrate(|t| phi.eval(t));
        lhs <= rhs + 1e-12 * (1.0 + rhs.abs())
    })
}

fn ordered(f: &ScalarField, g: &ScalarField) -> Result<bool> {
    let pf = decreasing_rearrangement(f);
    let pg = decreasing_rearrangement(g);
    Ok(concentration_report(&pf, &pg, same_grid_tolerance(&pg))?.verdict.is_less_or_equal())
}

fn rearrangement_suite(cfg: &ExperimentConfig) -> Result<Vec<Case>> {
    let shapes = cfg.shapes()?;
    let domains: Vec<Arc<Domain>> = shapes.iter().map(|s| build_capped(s, cfg.resolution(s))).collect::<Result<_>>()?;
    let seed = cfg.seed;
    Ok((0..cfg.trials())
        .into_par_iter()
        .map(|i| {
            let k = i % shapes.len();
            let d = &domains[k];
            finish(i, format!("{}#{i}", shape_label(&shapes[k])), |case| {
                let mut rng = case_rng(seed, i as u64);
                let f = smoothed_noise(d, &mut rng, 1 + i % 3);
                let g = smoothed_noise(d, &mut rng, 1 + (i / 3) % 3);
                let p = smoothed_noise(d, &mut rng, 2);
                case.keep("f", &f);
                case.keep("g", &g);

                let fs = spherical_rearrangement(&f);
                let levels: Vec<f64> = f.values().iter().step_by((f.len() / 16).max(1)).copied().chain([0.0]).collect();
                let mut equi = true;
                for &k in &levels {
                    equi &= distribution_function(&f, k)? == distribution_function(&fs, k)?;
                }
                case.check("equimeasurable", equi);

                let prof = decreasing_rearrangement(&f);
                let mut worst = 0.0f64;
                for (p_exp, norm) in [(1.0, f.norm_l1()), (2.0, f.norm_l2()), (f64::INFINITY, f.norm_linf())] {
                    worst = worst.max((prof.norm_lp(p_exp) - norm).abs() / norm);
                }
                case.metric("cavalieri_rel_error", worst);
                case.check("cavalieri", worst <= 1e-12);

                let (lhs, rhs) = hardy_littlewood_check(&f, &g)?;
                case.metric("hardy_littlewood_margin", rhs - lhs);
                case.check("hardy_littlewood", lhs <= rhs * (1.0 + 1e-12));

                let dominated = f.with_values(f.values().iter().zip(p.values()).map(|(a, b)| a + b).collect())?;
                let averaged = diffuse(&f, 1 + i % 5);
                let mut pairs = vec![(f.clone(), dominated), (averaged, f.clone())];
                pairs.push((f.clone(), g.clone()));
                pairs.push((g.clone(), f.clone()));
                let mut tested = 0usize;
                let mut forward = true;
                for (idx, (a, b)) in pairs.iter().enumerate() {
                    let ord = ordered(a, b)?;
                    if idx < 2 && !ord {
                        case.check("constructed_pairs_ordered", false);
                    }
                    if ord {
                        tested += 1;
                        forward &= convex_forward(a, b);
                    }
                }
                case.check("constructed_pairs_ordered", true);
                case.metric("ordered_pairs_tested", tested as f64);
                case.check("convex_order_forward", forward);
                Ok(())
            })
        })
        .collect())
}

fn elliptic_suite(cfg: &ExperimentConfig) -> Result<Vec<Case>> {
    let shapes = cfg.shapes()?;
    let sigmas = cfg.sigmas();
    let bs = cfg.nonlinearities()?;
    let domains: Vec<Arc<Domain>> = shapes.iter().map(|s| build_capped(s, cfg.resolution(s))).collect::<Result<_>>()?;
    let keys: Vec<(usize, usize)> =
        (0..shapes.len()).flat_map(|k| (0..sigmas.len()).map(move |j| (k, j))).collect();
    let pairs: Vec<SymmetrizedPair> =
        keys.par_iter().map(|&(k, j)| SymmetrizedPair::assemble(&domains[k], sigmas[j])).collect::<Result<_>>()?;
    let seed = cfg.seed;
    Ok((0..cfg.trials())
        .into_par_iter()
        .map(|i| {
            let k = i % shapes.len();
            let j = (i / shapes.len()) % sigmas.len();
            let b = &bs[(i / (shapes.len() * sigmas.len())) % bs.len()];
            let pair = &pairs[k * sigmas.len() + j];
            let d = &domains[k];
            let label = format!("{} sigma={} B={}", shape_label(&shapes[k]), sigmas[j], b.label());
            finish(i, label, |case| {
                let mut rng = case_rng(seed, i as u64);
                let f = smoothed_noise(d, &mut rng, 1 + i % 3);
                let f2 = smoothed_noise(d, &mut rng, 1 + (i / 3) % 3);
                case.keep("f", &f);
                case.keep("f2", &f2);
                let rep = elliptic_concentration_with(pair, b, &f)?;
                case.metric("max_gap", rep.max_gap);
                case.metric("tolerance", rep.tolerance);
                case.check("comparison", rep.verdict.is_less_or_equal());
                let (lhs, rhs) = l1_contraction_check(&pair.omega, b, &f, &f2)?;
                let margin = rhs - lhs;
                case.metric("contraction_margin", margin);
                case.check("l1_contraction", margin >= -1e-9 * f.norm_l1());
                Ok(())
            })
        })
        .collect())
}

fn parabolic_suite(cfg: &ExperimentConfig) -> Result<Vec<Case>> {
    let shapes = cfg.shapes()?;
    let sigmas = cfg.sigmas();
    let domains: Vec<Arc<Domain>> = shapes.iter().map(|s| build_capped(s, cfg.resolution(s))).collect::<Result<_>>()?;
    let balls: Vec<Arc<Domain>> = domains.iter().map(|d| Arc::new(d.schwarz_ball())).collect();
    let keys: Vec<(usize, usize)> =
        (0..shapes.len()).flat_map(|k| (0..sigmas.len()).map(move |j| (k, j))).collect();
    let ops: Vec<_> = keys
        .par_iter()
        .map(|&(k, j)| Ok((assemble_restricted(&domains[k], sigmas[j])?, assemble_restricted(&balls[k], sigmas[j])?)))
        .collect::<Result<_>>()?;
    let t_end = cfg.t_end.unwrap_or(0.5);
    let h = cfg.step.unwrap_or(0.01);
    let seed = cfg.seed;
    Ok((0..cfg.trials())
        .into_par_iter()
        .map(|i| {
            let k = i % shapes.len();
            let j = (i / shapes.len()) % sigmas.len();
            let (a, a_ball) = &ops[k * sigmas.len() + j];
            let (d, ball) = (&domains[k], &balls[k]);
            finish(i, format!("{} sigma={}", shape_label(&shapes[k]), sigmas[j]), |case| {
                let mut rng = case_rng(seed, i as u64);
                let u0 = smoothed_noise(d, &mut rng, 1 + i % 3);
                let f0 = smoothed_noise(d, &mut rng, 2).map(|v| 0.5 * v);
                case.keep("u0", &u0);
                case.keep("f", &f0);
                let ubar0 = spherical_rearrangement_onto(&u0, ball.clone());
                let fbar = spherical_rearrangement_onto(&f0, ball.clone());
                let rep = parabolic_concentration_with(
                    a,
                    a_ball,
                    &u0,
                    &Source::Constant(f0),
                    &ubar0,
                    &Source::Constant(fbar),
                    t_end,
                    h,
                )?;
                let worst = rep.slices.iter().map(|s| s.max_gap - s.tolerance).fold(f64::NEG_INFINITY, f64::max);
                case.metric("saved_times", rep.slices.len() as f64);
                case.metric("worst_gap_minus_tolerance", worst);
                case.check("comparison", rep.slices.iter().all(|s| s.verdict.is_less_or_equal()));
                case.check("norm_chain", rep.slices.iter().all(|s| s.norm_chain_holds));
                Ok(())
            })
        })
        .collect())
}

fn is_ball(shape: &Shape) -> bool {
    matches!(shape, Shape::Disk { .. } | Shape::Interval { .. })
}

fn faber_krahn_suite(cfg: &ExperimentConfig) -> Result<Vec<Case>> {
    let shapes = cfg.shapes()?;
    let n = cfg.n2d();
    for s in &shapes {
        build_capped(s, n)?;
    }
    let opts = FkOptions { decay_fit: cfg.decay_fit.unwrap_or(true), rayleigh_trials: 4, seed: cfg.seed };
    let entries = faber_krahn_sweep_with(&shapes, &cfg.sigmas(), n, opts)?;
    Ok(entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let ball = is_ball(&shapes[i / cfg.sigmas().len()]);
            let mut case = Case::new(i, format!("{} sigma={}", e.shape, e.sigma));
            case.metric("cells", e.cells as f64);
            case.metric("lambda1_omega", e.lambda1_omega);
            case.metric("lambda1_ball", e.lambda1_ball);
            case.metric("ratio", e.ratio);
            case.metric("tol_grid", e.tol_grid);
            case.metric("lambda1_spectral_omega", e.lambda1_spectral_omega);
            case.check("faber_krahn", e.inequality_holds());
            if ball {
                case.check("ball_equality", e.numerically_equal);
            } else {
                case.check("strict", e.strict());
            }
            if let Some(fit) = e.decay_fit_lambda1 {
                let rel = (fit - e.lambda1_omega) / e.lambda1_omega;
                case.metric("decay_fit_lambda1", fit);
                case.metric("decay_fit_rel_error", rel);
                case.check("decay_fit", rel.abs() <= 0.01);
            }
            if let Some(r) = e.rayleigh_min {
                case.metric("rayleigh_min", r);
                case.check("rayleigh_bound", r >= e.lambda1_omega - 1e-8 * e.lambda1_omega.max(1.0));
            }
            case
        })
        .collect())
}

/// Smooth bump of radius `0.8 r` centred at `c`.
/// Smooth compactly supported bump centered in the bounding box of `d`.
pub fn bump(d: &Arc<Domain>) -> ScalarField {
    let b = d.bounding_box();
    let (cx, cy) = (0.5 * (b.x0 + b.x1), 0.5 * (b.y0 + b.y1));
    let r = 0.4 * (b.x1 - b.x0).min(if d.dim() == 1 { f64::INFINITY } else { b.y1 - b.y0 });
    ScalarField::from_fn(d.clone(), |x, y| {
        let q = ((x - cx).powi(2) + if d.dim() == 1 { 0.0 } else { (y - cy).powi(2) }) / (r * r);
        if q < 1.0 {
            (1.0 - q).powi(3)
        } else {
            0.0
        }
    })
}

/// `‖a − b‖₂ / ‖b‖₂`.
pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Relative L² distance between the extension trace and the matrix operator applied to [`bump`].
pub fn dtn_error(d: &Arc<Domain>, sigma: f64, opts: &ExtensionOptions) -> Result<f64> {
    let g = bump(d);
    let reference = assemble_restricted(d, sigma)?.apply_field(&g)?;
    let w = solve_extension(d, sigma, BoundaryData::DirichletTrace(&g), opts)?;
    Ok(rel_l2(dtn_trace(&w)?.values(), reference.values()))
}

type CaseTask = Box<dyn Fn(&mut Case) -> Result<()> + Send + Sync>;

fn dtn_suite(cfg: &ExperimentConfig) -> Result<Vec<Case>> {
    let shapes = cfg.shapes()?;
    let sigmas = cfg.sigmas();
    let tol = cfg.tolerance.unwrap_or(0.05);
    let layers = cfg.layers.unwrap_or(96);
    let seed = cfg.seed;
    let mut tasks: Vec<(String, CaseTask)> = Vec::new();

    for shape in &shapes {
        let d = build_capped(shape, cfg.resolution(shape))?;
        for &sigma in &sigmas {
            let d = d.clone();
            tasks.push((
                format!("dtn {} sigma={sigma}", shape_label(shape)),
                Box::new(move |case| {
                    let err = dtn_error(&d, sigma, &ExtensionOptions { layers, ..Default::default() })?;
                    case.metric("rel_l2_error", err);
                    case.check("dtn_consistency", err <= tol);
                    Ok(())
                }),
            ));
        }
    }

    let ladder: Vec<(usize, usize, f64)> = vec![(32, 24, 1.0), (64, 48, 1.5), (128, 96, 2.0), (256, 192, 3.0)];
    for &sigma in &sigmas {
        let ladder = ladder.clone();
        tasks.push((
            format!("refinement interval sigma={sigma}"),
            Box::new(move |case| {
                let mut errs = Vec::new();
                for (level, &(n, m, scale)) in ladder.iter().enumerate() {
                    let d = Arc::new(Domain::interval(-1.0, 1.0, n)?);
                    let opts = ExtensionOptions {
                        layers: m,
                        box_pad: Some(3.0 * d.diameter() * scale),
                        z_max: Some(default_z_max(sigma, d.diameter()) * (1.0 + 0.5 * level as f64)),
                        gamma: None,
                    };
                    let e = dtn_error(&d, sigma, &opts)?;
                    case.metric(&format!("error_level_{level}"), e);
                    errs.push(e);
                }
                case.check("monotone_refinement", errs.windows(2).all(|w| w[1] < w[0]));
                Ok(())
            }),
        ));
    }

    tasks.push((
        "poisson kernel sigma=1".into(),
        Box::new(move |case| {
            let d = Arc::new(Domain::interval(-1.0, 1.0, 128)?);
            let g = |x: f64| if x.abs() < 1.0 { (1.0 - x * x).powi(3) } else { 0.0 };
            let w = solve_extension(
                &d,
                1.0,
                BoundaryData::DirichletTrace(&ScalarField::from_fn(d.clone(), |x, _| g(x))),
                &ExtensionOptions { layers, ..Default::default() },
            )?;
            let mut worst = 0.0f64;
            for (j, &z) in w.z.iter().enumerate() {
                if !(0.05..=1.0).contains(&z) {
                    continue;
                }
                let (mut num, mut den) = (0.0, 0.0);
                for (i, c) in w.box_domain.centers().iter().enumerate() {
                    if c[0].abs() > 3.0 {
                        continue;
                    }
                    let x = c[0];
                    let kernel = |xi: f64| g(xi) * z / ((x - xi).powi(2) + z * z) / std::f64::consts::PI;
                    let exact = adaptive(&kernel, -1.0, 1.0, 1e-12);
                    num += (w.slice(j)[i] - exact).powi(2);
                    den += exact * exact;
                }
                worst = worst.max((num / den).sqrt());
            }
            case.metric("worst_slice_rel_l2", worst);
            case.check("poisson_kernel", worst <= 0.02);
            Ok(())
        }),
    ));

    let comparison_shapes = [("union-intervals:0,1,2,3", 48usize), ("lshape:1", 16)];
    for (desc, n) in comparison_shapes {
        for &sigma in &sigmas {
            let shape = Shape::parse(desc)?;
            tasks.push((
                format!("z-diagnostic {} sigma={sigma}", shape_label(&shape)),
                Box::new(move |case| {
                    let d = Arc::new(shape.build(n)?);
                    let b = Nonlinearity::Linear(1.0);
                    let opts = ExtensionOptions { layers: layers.min(48), ..Default::default() };
                    let lo = d.bounding_box().x0;
                    let indicator = ScalarField::from_fn(d.clone(), |x, _| if x < lo + 0.5 { 1.0 } else { 0.0 });
                    let mut rng = case_rng(seed, 1 << 20);
                    let noise = smoothed_noise(&d, &mut rng, 2);
                    let mut worst = f64::NEG_INFINITY;
                    for f in [indicator, noise] {
                        let z = extension_comparison(&d, sigma, &b, &f, &opts)?;
                        worst = worst.max(z.max_z - z.tolerance);
                        case.check("z_nonpositive", z.holds());
                        case.check("z_origin", z.z_at_origin == 0.0);
                        case.check("boundary_relation", z.boundary_min.is_some_and(|v| v >= -z.tolerance));
                        case.metric("residual_max", z.residual_max.max(*case.result.metrics.get("residual_max").unwrap_or(&f64::NEG_INFINITY)));
                    }
                    case.metric("max_z_minus_tolerance", worst);
                    Ok(())
                }),
            ));
        }
    }

    for &sigma in &sigmas {
        tasks.push((
            format!("flux trace vs elliptic sigma={sigma}"),
            Box::new(move |case| {
                let d = Arc::new(Domain::interval(-1.0, 1.0, 128)?);
                let b = Nonlinearity::Saturating;
                let f = ScalarField::from_fn(d.clone(), |x, _| 1.0 - 0.5 * x);
                let v = solve_nonlinear(&assemble_restricted(&d, sigma)?, &b, &f, 1.0)?;
                let w = solve_extension(&d, sigma, BoundaryData::NeumannFlux(&f, &b), &ExtensionOptions { layers: 64, ..Default::default() })?;
                let err = rel_l2(w.trace().values(), v.values());
                case.metric("rel_l2_error", err);
                case.check("flux_consistency", err <= 0.03);
                case.metric("decay_ratio", w.decay_ratio);
                Ok(())
            }),
        ));
    }

    Ok(tasks.into_par_iter().enumerate().map(|(i, (label, body))| finish(i, label, |c| body(c))).collect())
}

fn itd_suite(cfg: &ExperimentConfig) -> Result<Vec<Case>> {
    let shapes = cfg.shapes()?;
    let sigmas = cfg.sigmas();
    let t = cfg.t_end.unwrap_or(0.5);
    let seed = cfg.seed;
    let mut tasks = Vec::new();
    for shape in &shapes {
        let d = build_capped(shape, cfg.resolution(shape))?;
        for &sigma in &sigmas {
            tasks.push((shape_label(shape), d.clone(), sigma));
        }
    }
    Ok(tasks
        .into_par_iter()
        .enumerate()
        .map(|(i, (name, d, sigma))| {
            finish(i, format!("{name} sigma={sigma}"), |case| {
                let a = assemble_restricted(&d, sigma)?;
                let mut rng = case_rng(seed, i as u64);
                let u0 = smoothed_noise(&d, &mut rng, 2);
                case.keep("u0", &u0);
                let rows = crandall_liggett_limit(&a, &u0, t, &[8, 16, 32, 64, 128])?;
                let mut ok = true;
                for (k, w) in rows.windows(2).enumerate() {
                    let ratio = w[0].error / w[1].error;
                    case.metric(&format!("ratio_{k}"), ratio);
                    ok &= (ratio / 2.0 - 1.0).abs() <= 0.15;
                }
                case.metric("finest_error", rows.last().map(|r| r.error).unwrap_or(f64::NAN));
                case.check("first_order", ok);

                let eig = eigensolve(&a, 1)?;
                let lam = eig.lambda1();
                let steps = 20;
                let h = t / steps as f64;
                let r = Resolvent::new(&a, h)?;
                let mut u = eig.psi1.clone();
                for _ in 0..steps {
                    u = r.apply(&u);
                }
                let factor = (1.0 + h * lam).powi(-steps);
                let expected: Vec<f64> = eig.psi1.iter().map(|v| factor * v).collect();
                let err = rel_l2(&u, &expected);
                case.metric("eigenvector_rel_error", err);
                case.check("eigenvector_scalar_formula", err <= 1e-12);
                Ok(())
            })
        })
        .collect())
}

/// Writes the report in the requested formats under `dir`, plus
/// `summary.json` and `failures.json` (empty when every case passed). Returns
/// the written paths.
pub fn emit_report(report: &SuiteReport, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    for fmt in formats {
        match fmt {
            ReportFormat::Json => put("report.json", serde_json::to_string_pretty(report)?)?,
            ReportFormat::Csv => put("cases.csv", to_csv(report))?,
            ReportFormat::Markdown => put("report.md", to_markdown(report))?,
        }
    }
    let summary = serde_json::json!({
        "suite": report.suite,
        "property": report.property,
        "seed": report.seed,
        "passed": report.passed,
        "cases": report.cases.len(),
        "invariants": report.invariants,
        "summary_hash": report.summary_hash(),
    });
    put("summary.json", serde_json::to_string_pretty(&summary)?)?;
    put("failures.json", serde_json::to_string_pretty(&report.failures)?)?;
    Ok(written)
}

fn columns(report: &SuiteReport) -> (Vec<String>, Vec<String>) {
    let mut checks: Vec<String> = report.cases.iter().flat_map(|c| c.checks.keys().cloned()).collect();
    let mut metrics: Vec<String> = report.cases.iter().flat_map(|c| c.metrics.keys().cloned()).collect();
    checks.sort();
    checks.dedup();
    metrics.sort();
    metrics.dedup();
    (checks, metrics)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row per case: `case,label,passed`, then every check (`1`/`0`, empty
/// when not evaluated) and every metric, each group in sorted order.
pub fn to_csv(report: &SuiteReport) -> String {
    let (checks, metrics) = columns(report);
    let mut out = String::from("case,label,passed");
    for c in &checks {
        out.push(',');
        out.push_str(&csv_field(c));
    }
    for m in &metrics {
        out.push(',');
        out.push_str(&csv_field(m));
    }
    out.push('\n');
    for case in &report.cases {
        let _ = write!(out, "{},{},{}", case.id, csv_field(&case.label), u8::from(case.passed));
        for c in &checks {
            out.push(',');
            if let Some(ok) = case.checks.get(c) {
                out.push_str(if *ok { "1" } else { "0" });
            }
        }
        for m in &metrics {
            out.push(',');
            if let Some(v) = case.metrics.get(m) {
                let _ = write!(out, "{v:e}");
            }
        }
        out.push('\n');
    }
    out
}

pub fn to_markdown(report: &SuiteReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {}\n", report.suite.name());
    let _ = writeln!(out, "{}\n", report.property);
    let _ = writeln!(
        out,
        "Seed {}, {} cases, **{}**\n",
        report.seed,
        report.cases.len(),
        if report.passed { "PASS" } else { "FAIL" }
    );
    let _ = writeln!(out, "| invariant | passed | failed |\n|---|---|---|");
    for inv in &report.invariants {
        let _ = writeln!(out, "| {} | {} | {} |", inv.name, inv.passed, inv.failed);
    }
    let (checks, metrics) = columns(report);
    let _ = write!(out, "\n| case | label | passed |");
    for h in checks.iter().chain(&metrics) {
        let _ = write!(out, " {h} |");
    }
    let _ = write!(out, "\n|---|---|---|");
    for _ in checks.iter().chain(&metrics) {
        out.push_str("---|");
    }
    out.push('\n');
    for case in &report.cases {
        let _ = write!(out, "| {} | {} | {} |", case.id, case.label, if case.passed { "yes" } else { "no" });
        for c in &checks {
            let cell = match case.checks.get(c) {
                Some(true) => "yes",
                Some(false) => "no",
                None => "",
            };
            let _ = write!(out, " {cell} |");
        }
        for m in &metrics {
            match case.metrics.get(m) {
                Some(v) => {
                    let _ = write!(out, " {v:.4e} |");
                }
                None => out.push_str(" |"),
            }
        }
        out.push('\n');
    }
    out
}
