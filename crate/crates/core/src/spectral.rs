//! First eigenvalue of the restricted operator by dense eigensolves, Rayleigh
//! quotients and semigroup decay, plus the Faber–Krahn sweep.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Domain, ScalarField, Shape};
use crate::error::{invalid, FracError, Result};
use crate::fraclap::{assemble_restricted, dirichlet_laplacian, gagliardo_form, OperatorMatrix};
use crate::linalg;
use crate::parabolic::Resolvent;
use crate::random::{case_rng, smoothed_noise};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SpectralMethod {
    Dense,
    DecayFit,
}

/// Diagnostics of a log-linear decay fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Root-mean-square residual of the least-squares line through `log ‖u‖₂`.
    pub residual: f64,
    pub window: (f64, f64),
    pub step: f64,
    pub samples: usize,
    /// `(e^{r h} - 1)/h` for the fitted rate `r`, removing the time-step bias
    /// of a pure mode.
    pub resolvent_corrected: f64,
    /// Estimated time-step bias `r h / 2`.
    pub step_error: f64,
    /// Rate drift between the two halves of the window, a proxy for
    /// contamination by higher modes.
    pub transient_error: f64,
    /// The late state changes sign, so the fitted rate belongs to a higher
    /// mode (initial data orthogonal to the principal eigenfunction).
    pub not_principal: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralResult {
    pub lambda: Vec<f64>,
    /// First eigenfunction, nonnegative and L²-normalized.
    pub psi1: Vec<f64>,
    pub method: SpectralMethod,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fit: Option<FitDiagnostics>,
    /// All computed eigenvectors (L²-normalized), in the order of `lambda`.
    #[serde(skip)]
    pub vectors: Vec<Vec<f64>>,
}

impl SpectralResult {
    pub fn lambda1(&self) -> f64 {
        self.lambda[0]
    }
}

/// Lowest `k` eigenpairs; `ψ₁` is sign-fixed to be nonnegative.
pub fn eigensolve(a: &OperatorMatrix, k: usize) -> Result<SpectralResult> {
    if k == 0 {
        return invalid("at least one eigenpair must be requested");
    }
    let pairs = linalg::lowest_eigenpairs(a.matrix(), k)?;
    let scale = 1.0 / a.domain().cell_measure().sqrt();
    let vectors: Vec<Vec<f64>> = (0..pairs.values.len())
        .map(|c| {
            let col = pairs.vectors.column(c);
            let sign = if col.sum() < 0.0 { -1.0 } else { 1.0 };
            col.iter().map(|v| sign * scale * v).collect()
        })
        .collect();
    Ok(SpectralResult {
        lambda: pairs.values,
        psi1: vectors[0].clone(),
        method: SpectralMethod::Dense,
        fit: None,
        vectors,
    })
}

/// Smallest Rayleigh quotient `E(u)/‖u‖₂²` over the trial fields.
pub fn lambda1_rayleigh_check(a: &OperatorMatrix, trials: &[ScalarField]) -> Result<f64> {
    if trials.is_empty() {
        return invalid("no trial fields");
    }
    let mut best = f64::INFINITY;
    for u in trials {
        let n2 = u.norm_l2().powi(2);
        if n2 == 0.0 {
            return invalid("trial field is identically zero");
        }
        best = best.min(gagliardo_form(a, u)? / n2);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy)]
pub struct DecayFitOptions {
    /// Fractions of `T` delimiting the fitted window.
    pub window: (f64, f64),
}

impl Default for DecayFitOptions {
    fn default() -> Self {
        DecayFitOptions { window: (0.5, 1.0) }
    }
}

/// Fits the decay rate of `‖u(t)‖₂` for the homogeneous evolution from `u0`.
pub fn lambda1_decay_fit(a: &OperatorMatrix, u0: &ScalarField, t_end: f64, h: f64) -> Result<SpectralResult> {
    lambda1_decay_fit_with(a, u0, t_end, h, DecayFitOptions::default())
}

fn line_fit(t: &[f64], y: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    let mt = t.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - mt) * (b - my)).sum();
    let sxx: f64 = t.iter().map(|a| (a - mt).powi(2)).sum();
    let slope = sxy / sxx;
    let rms = (t.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mt)).powi(2)).sum::<f64>() / n).sqrt();
    (slope, rms)
}

pub fn lambda1_decay_fit_with(
    a: &OperatorMatrix,
    u0: &ScalarField,
    t_end: f64,
    h: f64,
    opts: DecayFitOptions,
) -> Result<SpectralResult> {
    let (w0, w1) = opts.window;
    if !(0.0 <= w0 && w0 < w1 && w1 <= 1.0) {
        return invalid("decay window must satisfy 0 <= start < end <= 1");
    }
    if u0.norm_l2() == 0.0 {
        return invalid("initial field is identically zero");
    }
    // The state is renormalized every step and the logarithm of the norm is
    // accumulated separately, so long horizons cannot underflow.
    let steps = ((t_end / h) - 1e-9).ceil().max(1.0) as usize;
    let resolvent = Resolvent::new(a, h)?;
    let cell = a.domain().cell_measure();
    let l2 = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() * cell).sqrt();
    let t_final = steps as f64 * h;
    let (lo, hi) = (w0 * t_final, w1 * t_final);
    let mut u = u0.values().to_vec();
    let mut log_norm = 0.0;
    let mut ts = Vec::new();
    let mut logs = Vec::new();
    for k in 0..=steps {
        if k > 0 {
            u = resolvent.apply(&u);
        }
        let n = l2(&u);
        if !(n > 1e-280 && n.is_finite()) {
            return Err(FracError::Numerical(format!("‖u‖₂ underflowed at t = {}; reduce T", k as f64 * h)));
        }
        log_norm += n.ln();
        u.iter_mut().for_each(|x| *x /= n);
        let t = k as f64 * h;
        if t + 1e-12 >= lo && t <= hi + 1e-12 {
            ts.push(t);
            logs.push(log_norm);
        }
    }
    if ts.len() < 4 {
        return invalid("decay window holds fewer than four time steps; reduce h");
    }
    let (slope, residual) = line_fit(&ts, &logs);
    let rate = -slope;
    let mid = ts.len() / 2;
    let (s1, _) = line_fit(&ts[..=mid], &logs[..=mid]);
    let (s2, _) = line_fit(&ts[mid..], &logs[mid..]);

    let peak = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let pos = u.iter().fold(0.0f64, |m, v| m.max(*v));
    let neg = u.iter().fold(0.0f64, |m, v| m.max(-v));
    let not_principal = pos.min(neg) > 1e-3 * peak;
    let sign = if u.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let psi1: Vec<f64> = u.iter().map(|v| sign * v).collect();
    Ok(SpectralResult {
        lambda: vec![rate],
        psi1: psi1.clone(),
        method: SpectralMethod::DecayFit,
        fit: Some(FitDiagnostics {
            residual,
            window: (lo, hi),
            step: h,
            samples: ts.len(),
            resolvent_corrected: ((rate * h).exp() - 1.0) / h,
            step_error: 0.5 * rate * h,
            transient_error: (s1 - s2).abs(),
            not_principal,
        }),
        vectors: vec![psi1],
    })
}

/// Time step and horizon of the decay-fit regime: `h = 10⁻²/λ₁` and
/// `T = 10/(λ_j − λ₁)`, where `λ_j` is the first higher eigenvalue whose mode
/// is present in the initial data.
pub fn decay_fit_regime(lambda1: f64, next_excited: f64) -> (f64, f64) {
    let h = 1e-2 / lambda1;
    let gap = (next_excited - lambda1).max(1e-3 * lambda1);
    (h, (10.0 / gap).max(20.0 * h))
}

/// First eigenvalue beyond `λ₁` whose eigenvector has a non-negligible
/// projection on `u0`; the last computed one when none does.
pub fn next_excited_eigenvalue(eig: &SpectralResult, u0: &ScalarField) -> f64 {
    let cell = u0.domain().cell_measure();
    let norm = u0.norm_l2();
    for (lam, v) in eig.lambda.iter().zip(&eig.vectors).skip(1) {
        let proj: f64 = v.iter().zip(u0.values()).map(|(a, b)| a * b).sum::<f64>() * cell;
        if proj.abs() > 1e-6 * norm {
            return *lam;
        }
    }
    *eig.lambda.last().unwrap()
}

/// One row of the Faber–Krahn report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FkEntry {
    pub shape: String,
    pub sigma: f64,
    pub n: usize,
    pub cells: usize,
    pub lambda1_omega: f64,
    pub lambda1_ball: f64,
    pub ratio: f64,
    pub tol_grid: f64,
    pub decay_fit_lambda1: Option<f64>,
    /// Smallest Rayleigh quotient over the constant field and random trials.
    pub rayleigh_min: Option<f64>,
    /// `λ₁` of the spectral operator on `Ω`, recorded without any assertion.
    pub lambda1_spectral_omega: f64,
    pub numerically_equal: bool,
}

impl FkEntry {
    /// `ratio ≥ 1 − tol_grid`.
    pub fn inequality_holds(&self) -> bool {
        self.ratio >= 1.0 - self.tol_grid
    }

    /// `ratio − 1 ≥ 5 tol_grid`.
    pub fn strict(&self) -> bool {
        self.ratio - 1.0 >= 5.0 * self.tol_grid
    }
}

/// Relative change of `λ₁` caused by one cell of measure mismatch between `Ω`
/// and its discrete ball, from the scaling `λ₁ ∝ |Ω|^{-σ/N}`.
pub fn tol_grid(dim: usize, sigma: f64, cells_omega: usize, cells_ball: usize) -> f64 {
    let mismatch = (cells_ball as f64 - cells_omega as f64).abs().max(1.0);
    sigma / dim as f64 * mismatch / cells_omega as f64
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FkOptions {
    /// Cross-check `λ₁(Ω)` by semigroup decay.
    pub decay_fit: bool,
    /// Number of random trial fields for the Rayleigh-quotient bound.
    pub rayleigh_trials: usize,
    pub seed: u64,
}

/// Compares `λ₁(Ω)` with `λ₁(Ω^#)` at matched spacing for every shape and `σ`.
pub fn faber_krahn_sweep(shapes: &[Shape], sigmas: &[f64], n: usize) -> Result<Vec<FkEntry>> {
    faber_krahn_sweep_with(shapes, sigmas, n, FkOptions::default())
}

pub fn faber_krahn_sweep_with(shapes: &[Shape], sigmas: &[f64], n: usize, opts: FkOptions) -> Result<Vec<FkEntry>> {
    let cases: Vec<(usize, f64)> =
        (0..shapes.len()).flat_map(|i| sigmas.iter().map(move |&s| (i, s))).collect();
    let domains: Vec<(Arc<Domain>, Arc<Domain>)> = shapes
        .iter()
        .map(|s| {
            let d = Arc::new(s.build(n)?);
            let b = Arc::new(d.schwarz_ball());
            Ok((d, b))
        })
        .collect::<Result<_>>()?;
    cases
        .par_iter()
        .map(|&(i, sigma)| {
            let (d, b) = &domains[i];
            fk_entry(shapes[i].name(), d, b, sigma, n, opts)
        })
        .collect()
}

/// Faber–Krahn entry for an explicit domain and ball.
pub fn fk_entry(
    name: &str,
    d: &Arc<Domain>,
    ball: &Arc<Domain>,
    sigma: f64,
    n: usize,
    opts: FkOptions,
) -> Result<FkEntry> {
    let a = assemble_restricted(d, sigma)?;
    let omega = eigensolve(&a, 4)?;
    let lambda1_ball = if Arc::ptr_eq(d, ball) || d.as_ref() == ball.as_ref() {
        omega.lambda1()
    } else {
        eigensolve(&assemble_restricted(ball, sigma)?, 1)?.lambda1()
    };
    let decay = if opts.decay_fit {
        let u0 = ScalarField::constant(d.clone(), 1.0);
        let (h, t) = decay_fit_regime(omega.lambda[0], next_excited_eigenvalue(&omega, &u0));
        Some(lambda1_decay_fit(&a, &u0, t, h)?.lambda1())
    } else {
        None
    };
    let rayleigh_min = if opts.rayleigh_trials > 0 {
        let mut rng = case_rng(opts.seed, (sigma * 1e6) as u64);
        let mut trials = vec![ScalarField::constant(d.clone(), 1.0)];
        trials.extend((0..opts.rayleigh_trials).map(|_| smoothed_noise(d, &mut rng, 2)));
        Some(lambda1_rayleigh_check(&a, &trials)?)
    } else {
        None
    };
    let spectral = linalg::lowest_eigenpairs(&dirichlet_laplacian(d), 1)?.values[0].powf(sigma / 2.0);
    let tol = tol_grid(d.dim(), sigma, d.len(), ball.len());
    let ratio = omega.lambda1() / lambda1_ball;
    Ok(FkEntry {
        shape: name.to_string(),
        sigma,
        n,
        cells: d.len(),
        lambda1_omega: omega.lambda1(),
        lambda1_ball,
        ratio,
        tol_grid: tol,
        decay_fit_lambda1: decay,
        rayleigh_min,
        lambda1_spectral_omega: spectral,
        numerically_equal: (ratio - 1.0).abs() <= 3.0 * tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fraclap::assemble_spectral;
    use std::f64::consts::PI;

    #[test]
    fn spectral_operator_on_zero_pi() {
        let n = 200;
        let d = Arc::new(Domain::interval(0.0, PI, n).unwrap());
        let a = assemble_spectral(&d, 1.0).unwrap();
        let r = eigensolve(&a, 4).unwrap();
        let h = PI / n as f64;
        for k in 1..=4 {
            let discrete = (4.0 / (h * h) * (k as f64 * h / 2.0).sin().powi(2)).sqrt();
            assert!((r.lambda[k - 1] - discrete).abs() < 1e-9 * discrete);
            assert!((r.lambda[k - 1] - k as f64).abs() < 1e-3 * k as f64);
        }
    }

    #[test]
    fn psi1_is_nonnegative_and_normalized() {
        let d = Arc::new(Shape::Lshape { side: 1.0 }.build(12).unwrap());
        let a = assemble_restricted(&d, 0.7).unwrap();
        let r = eigensolve(&a, 3).unwrap();
        assert!(r.psi1.iter().all(|v| *v >= -1e-8));
        let f = ScalarField::new(d, r.psi1.clone()).unwrap();
        assert!((f.norm_l2() - 1.0).abs() < 1e-12);
        assert!(r.lambda[0] > 0.0 && r.lambda[0] < r.lambda[1]);
        assert!((lambda1_rayleigh_check(&a, &[f]).unwrap() - r.lambda[0]).abs() < 1e-8 * r.lambda[0]);
    }

    #[test]
    fn decay_fit_on_eigenvector_gives_discrete_rate() {
        let d = Arc::new(Domain::interval(-1.0, 1.0, 64).unwrap());
        let a = assemble_restricted(&d, 1.0).unwrap();
        let r = eigensolve(&a, 1).unwrap();
        let psi = ScalarField::new(d, r.psi1.clone()).unwrap();
        let h = 0.01;
        let fit = lambda1_decay_fit(&a, &psi, 1.0, h).unwrap();
        let expected = (1.0 + h * r.lambda1()).ln() / h;
        assert!((fit.lambda1() - expected).abs() < 1e-9 * expected);
        let diag = fit.fit.unwrap();
        assert!((diag.resolvent_corrected - r.lambda1()).abs() < 1e-8 * r.lambda1());
        assert!(!diag.not_principal);
    }

    #[test]
    fn decay_fit_flags_orthogonal_data() {
        let d = Arc::new(Domain::interval(-1.0, 1.0, 64).unwrap());
        let a = assemble_restricted(&d, 1.0).unwrap();
        let r = eigensolve(&a, 2).unwrap();
        let u0 = ScalarField::new(d, r.vectors[1].clone()).unwrap();
        let fit = lambda1_decay_fit(&a, &u0, 1.0, 0.005).unwrap();
        assert!(fit.fit.as_ref().unwrap().not_principal);
        assert!(fit.lambda1() >= 0.98 * r.lambda[1]);
    }

    #[test]
    fn two_intervals_beat_the_ball() {
        let shapes = [Shape::UnionIntervals { intervals: vec![(0.0, 1.0), (2.0, 3.0)] }];
        let rep = faber_krahn_sweep(&shapes, &[0.5], 96).unwrap();
        assert!(rep[0].ratio > 1.0 && rep[0].strict(), "{rep:?}");
    }

    #[test]
    fn ball_against_itself_has_unit_ratio() {
        let rep = faber_krahn_sweep(&[Shape::Interval { a: -1.0, b: 1.0 }], &[1.0], 64).unwrap();
        assert_eq!(rep[0].ratio, 1.0);
        assert!(rep[0].numerically_equal);
    }
}
