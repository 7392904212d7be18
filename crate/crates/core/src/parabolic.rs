//! Implicit time discretization of `u_t + A u = f` and the symmetrized
//! comparison on the Schwarz ball.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{Domain, ScalarField};
use crate::elliptic::{solve_nonlinear, Nonlinearity};
use crate::error::{invalid, FracError, Result};
use crate::fraclap::{assemble_restricted, OperatorMatrix};
use crate::linalg::{self, Factor};
use crate::quadrature::GaussRule;
use crate::rearrange::{
    concentration_report, cross_grid_tolerance, decreasing_rearrangement, is_rearranged, Concentration,
};

type SpaceTimeFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Time-dependent source term.
#[derive(Clone, Default)]
pub enum Source {
    #[default]
    Zero,
    /// Time-independent field.
    Constant(ScalarField),
    /// Closed form `f(x, y, t)`; discretized by its average over each step.
    Function(SpaceTimeFn),
    /// Samples `(t, field)` with increasing times; each step uses the latest
    /// sample at or before its left endpoint.
    Samples(Vec<(f64, ScalarField)>),
}

impl std::fmt::Debug for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Source::Zero => write!(f, "Zero"),
            Source::Constant(_) => write!(f, "Constant"),
            Source::Function(_) => write!(f, "Function"),
            Source::Samples(s) => write!(f, "Samples({})", s.len()),
        }
    }
}

impl Source {
    pub fn function(f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Source::Function(Arc::new(f))
    }

    /// `f_k^{(h)}` on the step `[t0, t1]`.
    pub fn discretize(&self, domain: &Arc<Domain>, t0: f64, t1: f64) -> Result<ScalarField> {
        match self {
            Source::Zero => Ok(ScalarField::zeros(domain.clone())),
            Source::Constant(f) => {
                if !Arc::ptr_eq(f.domain(), domain) && f.domain().hash() != domain.hash() {
                    return invalid("source field lives on a different domain");
                }
                Ok(ScalarField::new(domain.clone(), f.values().to_vec())?)
            }
            Source::Function(f) => {
                let rule = GaussRule::new(4);
                let len = t1 - t0;
                Ok(ScalarField::from_fn(domain.clone(), |x, y| {
                    rule.integrate(t0, t1, |t| f(x, y, t)) / len
                }))
            }
            Source::Samples(samples) => {
                if samples.is_empty() {
                    return invalid("sampled source has no samples");
                }
                let pick = samples.iter().rev().find(|(t, _)| *t <= t0 + 1e-12 * (1.0 + t0.abs()));
                let (_, f) = pick.unwrap_or(&samples[0]);
                Ok(ScalarField::new(domain.clone(), f.values().to_vec())?)
            }
        }
    }
}

/// Discrete trajectory `u_{h,k}` at `t_k = k h`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub h: f64,
    pub times: Vec<f64>,
    pub states: Vec<ScalarField>,
    /// `f_k^{(h)}` for `k = 1..=K`; `sources[k-1]` drives the step to `t_k`.
    pub sources: Vec<ScalarField>,
    /// Horizon requested by the caller (the final time may exceed it by less than `h`).
    pub requested_time: f64,
}

impl Trajectory {
    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn final_state(&self) -> &ScalarField {
        self.states.last().expect("trajectory holds the initial state")
    }

    /// Piecewise-constant interpolant: `u(t) = u_k` for `t ∈ ((k-1)h, kh]`.
    pub fn at(&self, t: f64) -> &ScalarField {
        if t <= 0.0 {
            return &self.states[0];
        }
        let k = ((t / self.h) - 1e-12).ceil().max(0.0) as usize;
        &self.states[k.min(self.states.len() - 1)]
    }

    /// Linear interpolation between saved states, meant for plotting only.
    pub fn at_linear(&self, t: f64) -> ScalarField {
        let s = (t / self.h).clamp(0.0, (self.states.len() - 1) as f64);
        let k = s.floor() as usize;
        if k + 1 >= self.states.len() {
            return self.states[k].clone();
        }
        let w = s - k as f64;
        let a = self.states[k].values();
        let b = self.states[k + 1].values();
        self.states[k].with_values(a.iter().zip(b).map(|(x, y)| (1.0 - w) * x + w * y).collect()).unwrap()
    }
}

/// Factored resolvent `J_h = (I + h A)^{-1}`.
pub struct Resolvent {
    h: f64,
    factor: Factor,
    n: usize,
}

impl Resolvent {
    pub fn new(a: &OperatorMatrix, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return invalid("time step must be positive");
        }
        let n = a.len();
        let m = DMatrix::identity(n, n) + a.matrix() * h;
        Ok(Resolvent { h, factor: linalg::cholesky(m)?, n })
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn apply(&self, rhs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(rhs.len(), self.n);
        self.factor.solve(&DVector::from_column_slice(rhs)).as_slice().to_vec()
    }
}

/// One implicit step `(I + hA)^{-1}(prev + h f_k)`.
pub fn itd_step(a: &OperatorMatrix, h: f64, prev: &ScalarField, f_k: &ScalarField) -> Result<ScalarField> {
    a.check_field(prev)?;
    a.check_field(f_k)?;
    let r = Resolvent::new(a, h)?;
    step_with(a, &r, prev, f_k)
}

fn step_with(a: &OperatorMatrix, r: &Resolvent, prev: &ScalarField, f_k: &ScalarField) -> Result<ScalarField> {
    let h = r.step();
    let rhs: Vec<f64> = prev.values().iter().zip(f_k.values()).map(|(u, f)| u + h * f).collect();
    let u = r.apply(&rhs);
    let au = a.apply(&u);
    let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let res = (0..u.len()).fold(0.0f64, |m, i| m.max((u[i] + h * au[i] - rhs[i]).abs()));
    if res > 1e-9 * scale {
        return Err(FracError::Numerical(format!("implicit step residual {res:e}")));
    }
    prev.with_values(u)
}

fn step_count(t_end: f64, h: f64) -> Result<usize> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return invalid("final time must be positive");
    }
    if !(h > 0.0 && h.is_finite()) {
        return invalid("time step must be positive");
    }
    Ok(((t_end / h) - 1e-9).ceil().max(1.0) as usize)
}

/// Runs the implicit scheme up to `t_end`, rounding the number of steps up.
pub fn evolve(a: &OperatorMatrix, u0: &ScalarField, source: &Source, t_end: f64, h: f64) -> Result<Trajectory> {
    a.check_field(u0)?;
    let steps = step_count(t_end, h)?;
    let r = Resolvent::new(a, h)?;
    let mut times = vec![0.0];
    let mut states = vec![u0.clone()];
    let mut sources = Vec::with_capacity(steps);
    for k in 1..=steps {
        let f_k = source.discretize(a.domain(), (k - 1) as f64 * h, k as f64 * h)?;
        let next = step_with(a, &r, states.last().unwrap(), &f_k)?;
        times.push(k as f64 * h);
        states.push(next);
        sources.push(f_k);
    }
    Ok(Trajectory { h, times, states, sources, requested_time: t_end })
}

/// Experimental nonlinear scheme: each step solves `h A v + B(v) = u_{k-1} + h f_k`
/// and sets `u_k = B(v)`. No comparison result is claimed for it.
pub fn evolve_nonlinear(
    a: &OperatorMatrix,
    b: &Nonlinearity,
    u0: &ScalarField,
    source: &Source,
    t_end: f64,
    h: f64,
) -> Result<Trajectory> {
    a.check_field(u0)?;
    let steps = step_count(t_end, h)?;
    let mut times = vec![0.0];
    let mut states = vec![u0.clone()];
    let mut sources = Vec::with_capacity(steps);
    for k in 1..=steps {
        let f_k = source.discretize(a.domain(), (k - 1) as f64 * h, k as f64 * h)?;
        let prev = states.last().unwrap();
        let rhs = prev.with_values(prev.values().iter().zip(f_k.values()).map(|(u, f)| u + h * f).collect())?;
        let v = solve_nonlinear(a, b, &rhs, h)?;
        states.push(v.map(|x| b.eval(x)));
        times.push(k as f64 * h);
        sources.push(f_k);
    }
    Ok(Trajectory { h, times, states, sources, requested_time: t_end })
}

/// Largest violation of `‖u₁(t)−u₂(t)‖₁ ≤ ‖u₁(s)−u₂(s)‖₁ + ∫ₛᵗ‖f₁−f₂‖₁` over all
/// saved pairs `s < t` (negative or zero when the estimate holds).
pub fn stability_check(t1: &Trajectory, t2: &Trajectory) -> Result<f64> {
    if t1.states.len() != t2.states.len() || (t1.h - t2.h).abs() > 1e-15 * t1.h {
        return invalid("trajectories must share the time grid");
    }
    let cell = t1.states[0].domain().cell_measure();
    let dist = |a: &ScalarField, b: &ScalarField| -> f64 {
        a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).sum::<f64>() * cell
    };
    let d: Vec<f64> = t1.states.iter().zip(&t2.states).map(|(a, b)| dist(a, b)).collect();
    let mut cum = vec![0.0];
    for (a, b) in t1.sources.iter().zip(&t2.sources) {
        let last = *cum.last().unwrap();
        cum.push(last + t1.h * dist(a, b));
    }
    let mut worst = f64::NEG_INFINITY;
    for t in 1..d.len() {
        for s in 0..t {
            worst = worst.max(d[t] - d[s] - (cum[t] - cum[s]));
        }
    }
    Ok(worst)
}

/// Per-step mass balance `((M_k − M_{k−1})/h − ∫f_k, −∫T u_k)`; the two entries
/// coincide for the implicit scheme.
pub fn mass_balance(a: &OperatorMatrix, traj: &Trajectory) -> Vec<(f64, f64)> {
    let cell = a.domain().cell_measure();
    (1..traj.states.len())
        .map(|k| {
            let rate = (traj.states[k].integral() - traj.states[k - 1].integral()) / traj.h - traj.sources[k - 1].integral();
            let flux: f64 = a.killing().iter().zip(traj.states[k].values()).map(|(t, u)| t * u).sum::<f64>() * cell;
            (rate, -flux)
        })
        .collect()
}

/// Exact semigroup `e^{-tA}` through a full eigendecomposition.
pub struct SemigroupOracle {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl SemigroupOracle {
    pub fn new(a: &OperatorMatrix) -> Self {
        let e = linalg::full_eigen(a.matrix());
        SemigroupOracle { values: e.values, vectors: e.vectors }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    pub fn apply(&self, t: f64, u0: &[f64]) -> Vec<f64> {
        if t == 0.0 {
            return u0.to_vec();
        }
        let c = self.vectors.transpose() * DVector::from_column_slice(u0);
        let scaled = DVector::from_iterator(c.len(), c.iter().zip(&self.values).map(|(ci, l)| ci * (-t * l).exp()));
        (&self.vectors * scaled).as_slice().to_vec()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub step: f64,
    pub error: f64,
}

/// `‖(J_{t/n})ⁿ u₀ − e^{−tA} u₀‖₂` for every `n` in `n_list`.
pub fn crandall_liggett_limit(
    a: &OperatorMatrix,
    u0: &ScalarField,
    t: f64,
    n_list: &[usize],
) -> Result<Vec<ConvergenceRow>> {
    a.check_field(u0)?;
    if !(t >= 0.0 && t.is_finite()) {
        return invalid("time must be nonnegative");
    }
    let oracle = SemigroupOracle::new(a);
    let exact = oracle.apply(t, u0.values());
    let cell = a.domain().cell_measure();
    n_list
        .iter()
        .map(|&n| {
            if n == 0 {
                return invalid("step counts must be positive");
            }
            let mut u = u0.values().to_vec();
            if t > 0.0 {
                let r = Resolvent::new(a, t / n as f64)?;
                for _ in 0..n {
                    u = r.apply(&u);
                }
            }
            let err = u.iter().zip(&exact).map(|(x, y)| (x - y).powi(2)).sum::<f64>() * cell;
            Ok(ConvergenceRow { n, step: t / n as f64, error: err.sqrt() })
        })
        .collect()
}

/// Comparison data at one saved time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeSlice {
    pub t: f64,
    pub verdict: Concentration,
    pub max_gap: f64,
    pub tolerance: f64,
    /// `‖u‖_p` for `p = 1, 2, ∞`.
    pub norms_omega: [f64; 3],
    pub norms_ball: [f64; 3],
    pub norm_chain_holds: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParabolicReport {
    pub sigma: f64,
    pub h: f64,
    pub final_time: f64,
    pub slices: Vec<TimeSlice>,
}

impl ParabolicReport {
    pub fn all_hold(&self) -> bool {
        self.slices.iter().all(|s| s.verdict.is_less_or_equal() && s.norm_chain_holds)
    }
}

fn norms(u: &ScalarField) -> [f64; 3] {
    [u.norm_l1(), u.norm_l2(), u.norm_linf()]
}

fn check_order(f: &ScalarField, g: &ScalarField, what: &str) -> Result<()> {
    let pf = decreasing_rearrangement(f);
    let pg = decreasing_rearrangement(g);
    let tol = cross_grid_tolerance(&pf, &pg, f.domain().cell_measure());
    let rep = concentration_report(&pf, &pg, tol)?;
    if rep.verdict.is_less_or_equal() {
        Ok(())
    } else {
        Err(FracError::Hypothesis(format!("{what}: concentration order violated (gap {:e})", rep.max_gap)))
    }
}

/// Evolves `u` on `d` and `v` on the ball carrying `ubar0`, checking the
/// hypotheses `u₀^# ≺ ū₀`, `f_k^# ≺ f̄_k` and reporting `u^# ≺ v` at every step.
#[allow(clippy::too_many_arguments)]
pub fn parabolic_concentration_experiment(
    d: &Arc<Domain>,
    sigma: f64,
    u0: &ScalarField,
    f: &Source,
    ubar0: &ScalarField,
    fbar: &Source,
    t_end: f64,
    h: f64,
) -> Result<ParabolicReport> {
    let a = assemble_restricted(d, sigma)?;
    let a_ball = assemble_restricted(ubar0.domain(), sigma)?;
    parabolic_concentration_with(&a, &a_ball, u0, f, ubar0, fbar, t_end, h)
}

#[allow(clippy::too_many_arguments)]
pub fn parabolic_concentration_with(
    a: &OperatorMatrix,
    a_ball: &OperatorMatrix,
    u0: &ScalarField,
    f: &Source,
    ubar0: &ScalarField,
    fbar: &Source,
    t_end: f64,
    h: f64,
) -> Result<ParabolicReport> {
    a.check_field(u0)?;
    a_ball.check_field(ubar0)?;
    if u0.values().iter().chain(ubar0.values()).any(|v| *v < 0.0) {
        return invalid("initial data must be nonnegative");
    }
    if a_ball.domain().ball_radius().is_none() {
        return invalid("comparison data must live on a Schwarz ball");
    }
    if !is_rearranged(ubar0) {
        return Err(FracError::Hypothesis("ū₀ is not radially rearranged".into()));
    }
    check_order(u0, ubar0, "initial data")?;
    let steps = step_count(t_end, h)?;
    for k in 1..=steps {
        let (t0, t1) = ((k - 1) as f64 * h, k as f64 * h);
        let fk = f.discretize(a.domain(), t0, t1)?;
        let gk = fbar.discretize(a_ball.domain(), t0, t1)?;
        if fk.values().iter().chain(gk.values()).any(|v| *v < 0.0) {
            return invalid("sources must be nonnegative");
        }
        if !is_rearranged(&gk) {
            return Err(FracError::Hypothesis(format!("f̄ is not rearranged on step {k}")));
        }
        check_order(&fk, &gk, "source")?;
    }

    let u = evolve(a, u0, f, t_end, h)?;
    let v = evolve(a_ball, ubar0, fbar, t_end, h)?;
    let cell = a.domain().cell_measure();
    let mut slices = Vec::with_capacity(u.states.len());
    for (k, (uk, vk)) in u.states.iter().zip(&v.states).enumerate() {
        let pu = decreasing_rearrangement(uk);
        let pv = decreasing_rearrangement(vk);
        let tol = cross_grid_tolerance(&pu, &pv, cell);
        let rep = concentration_report(&pu, &pv, tol)?;
        let nu = norms(uk);
        let nv = norms(vk);
        let holds = nu.iter().zip(&nv).all(|(x, y)| *x <= y + tol.max(1e-12 * y.abs()));
        slices.push(TimeSlice {
            t: u.times[k],
            verdict: rep.verdict,
            max_gap: rep.max_gap,
            tolerance: tol,
            norms_omega: nu,
            norms_ball: nv,
            norm_chain_holds: holds,
        });
    }
    Ok(ParabolicReport { sigma: a.sigma(), h, final_time: u.final_time(), slices })
}
