//! Dirichlet problems `h (-Δ)^{σ/2} v + B(v) = f` with a monotone nonlinearity.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{Domain, ScalarField};
use crate::error::{invalid, FracError, Result};
use crate::fraclap::{assemble_restricted, OperatorMatrix};
use crate::linalg;
use crate::rearrange::{
    concentration_report, cross_grid_tolerance, decreasing_rearrangement, same_grid_tolerance,
    spherical_rearrangement_onto, Concentration, Profile,
};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Zero-order term `B` of the elliptic problem.
#[derive(Clone)]
pub enum Nonlinearity {
    /// `B(t) = c t`, `c ≥ 0`.
    Linear(f64),
    /// `B(t) = t / (1 + t)`.
    Saturating,
    /// `B(t) = (t + δ)^m - δ^m`, `m ∈ (0, 1)`, `δ > 0`.
    RegularizedPower { m: f64, delta: f64 },
    /// User-supplied `B` and `B'`.
    Custom { name: String, f: ScalarFn, df: ScalarFn },
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// Default regularization for the power nonlinearity.
pub const DEFAULT_POWER_DELTA: f64 = 1e-6;

impl Nonlinearity {
    pub fn linear(c: f64) -> Result<Self> {
        if !(c.is_finite() && c >= 0.0) {
            return invalid(format!("linear coefficient must be finite and nonnegative, got {c}"));
        }
        Ok(Nonlinearity::Linear(c))
    }

    pub fn power(m: f64, delta: f64) -> Result<Self> {
        if !(m > 0.0 && m < 1.0) {
            return invalid(format!("power exponent must lie in (0,1), got {m}"));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return invalid("power regularization must be positive");
        }
        Ok(Nonlinearity::RegularizedPower { m, delta })
    }

    /// Custom concave nonlinearity; `B(0) = 0`, `B' > 0` and `B'' ≤ 0` are
    /// checked on a sample grid of `[0, range]`.
    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
        range: f64,
    ) -> Result<Self> {
        let b = Nonlinearity::Custom { name: name.into(), f: Arc::new(f), df: Arc::new(df) };
        b.validate(range)?;
        Ok(b)
    }

    /// Parses `linear:c`, `saturating`, `power:m[,delta]`.
    pub fn parse(desc: &str) -> Result<Self> {
        let (name, args) = desc.split_once(':').unwrap_or((desc, ""));
        let nums: Vec<f64> = if args.is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| FracError::InvalidInput(format!("bad nonlinearity {desc:?}: {e}")))?
        };
        match name {
            "linear" => Self::linear(nums.first().copied().unwrap_or(0.0)),
            "saturating" => Ok(Nonlinearity::Saturating),
            "power" => Self::power(
                nums.first().copied().unwrap_or(0.5),
                nums.get(1).copied().unwrap_or(DEFAULT_POWER_DELTA),
            ),
            other => invalid(format!("unknown nonlinearity {other:?}")),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Nonlinearity::Linear(c) => format!("linear:{c}"),
            Nonlinearity::Saturating => "saturating".into(),
            Nonlinearity::RegularizedPower { m, delta } => format!("power:{m},{delta}"),
            Nonlinearity::Custom { name, .. } => format!("custom:{name}"),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Nonlinearity::Linear(c) => c * t,
            Nonlinearity::Saturating => t / (1.0 + t),
            Nonlinearity::RegularizedPower { m, delta } => (t + delta).powf(*m) - delta.powf(*m),
            Nonlinearity::Custom { f, .. } => f(t),
        }
    }

    pub fn deriv(&self, t: f64) -> f64 {
        match self {
            Nonlinearity::Linear(c) => *c,
            Nonlinearity::Saturating => 1.0 / ((1.0 + t) * (1.0 + t)),
            Nonlinearity::RegularizedPower { m, delta } => m * (t + delta).powf(m - 1.0),
            Nonlinearity::Custom { df, .. } => df(t),
        }
    }

    pub fn is_linear(&self) -> Option<f64> {
        match self {
            Nonlinearity::Linear(c) => Some(*c),
            _ => None,
        }
    }

    /// Numerical check of `B(0) = 0`, monotonicity and concavity on `[0, range]`.
    pub fn validate(&self, range: f64) -> Result<()> {
        if self.eval(0.0).abs() > 1e-14 {
            return invalid(format!("{}: B(0) must vanish", self.label()));
        }
        let n = 200;
        let pts: Vec<f64> = (0..=n).map(|k| range * k as f64 / n as f64).collect();
        let strictly = self.is_linear().is_none_or(|c| c > 0.0);
        for w in pts.windows(3) {
            let (a, b, c) = (self.eval(w[0]), self.eval(w[1]), self.eval(w[2]));
            if strictly && !(b > a) {
                return invalid(format!("{}: B is not strictly increasing near {}", self.label(), w[1]));
            }
            if c - 2.0 * b + a > 1e-12 * (a.abs() + b.abs() + c.abs() + 1.0) {
                return invalid(format!("{}: B is not concave near {}", self.label(), w[1]));
            }
        }
        Ok(())
    }
}

/// Solves `(A + c I) v = f` by Cholesky factorization.
pub fn solve_linear(a: &OperatorMatrix, c: f64, f: &ScalarField) -> Result<ScalarField> {
    if !(c.is_finite() && c >= 0.0) {
        return invalid("zero-order coefficient must be nonnegative");
    }
    a.check_field(f)?;
    if f.values().iter().any(|v| !v.is_finite()) {
        return invalid("right-hand side is not finite");
    }
    let mut m = a.matrix().clone();
    for i in 0..m.nrows() {
        m[(i, i)] += c;
    }
    let v = linalg::spd_solve(&m, f.values())?;
    let r = linalg::matvec(&m, &v);
    let res = r.iter().zip(f.values()).fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
    if res > 1e-9 * f.norm_linf().max(f64::MIN_POSITIVE) && res > 1e-300 {
        return Err(FracError::Numerical(format!("linear solve residual {res:e} above tolerance")));
    }
    f.with_values(v)
}

/// Nonhomogeneous problem with exterior value `ε` for linear `B(t) = c t`:
/// solves `(A + cI) v = f + cε + ε T`, where `T` is the killing term. The
/// solution equals the homogeneous solution shifted by `ε`.
pub fn solve_epsilon_lifted(a: &OperatorMatrix, c: f64, f: &ScalarField, eps: f64) -> Result<ScalarField> {
    a.check_field(f)?;
    let rhs: Vec<f64> =
        f.values().iter().zip(a.killing()).map(|(fi, ti)| fi + c * eps + eps * ti).collect();
    solve_linear(a, c, &f.with_values(rhs)?)
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub max_iterations: usize,
    /// Residual target relative to `1 + ‖f‖∞`.
    pub tolerance: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { max_iterations: 50, tolerance: 1e-9 }
    }
}

/// Solves `h A v + B(v) = f` for `f ≥ 0` by damped Newton iteration.
pub fn solve_nonlinear(a: &OperatorMatrix, b: &Nonlinearity, f: &ScalarField, h: f64) -> Result<ScalarField> {
    solve_nonlinear_with(a, b, f, h, NewtonOptions::default())
}

pub fn solve_nonlinear_with(
    a: &OperatorMatrix,
    b: &Nonlinearity,
    f: &ScalarField,
    h: f64,
    opts: NewtonOptions,
) -> Result<ScalarField> {
    a.check_field(f)?;
    if !(h > 0.0 && h.is_finite()) {
        return invalid("step parameter h must be positive");
    }
    if f.values().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return invalid("right-hand side must be finite and nonnegative");
    }
    if let Some(c) = b.is_linear() {
        let scaled = f.map(|v| v / h);
        return solve_linear_scaled(a, c / h, &scaled);
    }
    let n = a.len();
    let ha: DMatrix<f64> = a.matrix() * h;
    let target = opts.tolerance * (1.0 + f.norm_linf());
    let residual = |v: &[f64]| -> Vec<f64> {
        let av = &ha * DVector::from_column_slice(v);
        (0..n).map(|i| av[i] + b.eval(v[i]) - f.values()[i]).collect()
    };
    let norm = |r: &[f64]| r.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    let mut v = vec![0.0; n];
    let mut r = residual(&v);
    let mut rn = norm(&r);
    for _ in 0..opts.max_iterations {
        if rn <= target {
            return f.with_values(v);
        }
        let mut jac = ha.clone();
        for i in 0..n {
            jac[(i, i)] += b.deriv(v[i]);
        }
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        let step = linalg::spd_solve(&jac, &neg)?;
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = v.iter().zip(&step).map(|(x, d)| x + t * d).collect();
            let admissible = trial.iter().all(|&x| b.eval(x).is_finite());
            if admissible {
                let rt = residual(&trial);
                let rtn = norm(&rt);
                if rtn < rn || t < 1e-10 {
                    v = trial;
                    r = rt;
                    rn = rtn;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-12 {
                return Err(FracError::Numerical("Newton line search stalled".into()));
            }
        }
    }
    if rn <= target {
        return f.with_values(v);
    }
    Err(FracError::Numerical(format!(
        "Newton iteration did not converge in {} steps (residual {rn:e}); try a larger regularization",
        opts.max_iterations
    )))
}

fn solve_linear_scaled(a: &OperatorMatrix, c: f64, f: &ScalarField) -> Result<ScalarField> {
    solve_linear(a, c, f)
}

/// `(∫[B(v) - B(ṽ)]₊, ∫[f - f̃]₊)` for the solutions of `A v + B(v) = f` and
/// `A ṽ + B(ṽ) = f̃`.
pub fn l1_contraction_check(
    a: &OperatorMatrix,
    b: &Nonlinearity,
    f: &ScalarField,
    f2: &ScalarField,
) -> Result<(f64, f64)> {
    let v = solve_nonlinear(a, b, f, 1.0)?;
    let w = solve_nonlinear(a, b, f2, 1.0)?;
    let cell = f.domain().cell_measure();
    let lhs = v.values().iter().zip(w.values()).map(|(x, y)| (b.eval(*x) - b.eval(*y)).max(0.0)).sum::<f64>() * cell;
    let rhs = f.values().iter().zip(f2.values()).map(|(x, y)| (x - y).max(0.0)).sum::<f64>() * cell;
    Ok((lhs, rhs))
}

/// Result of comparing a solution on `Ω` with the symmetrized solution on `Ω^#`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub verdict: Concentration,
    pub max_gap: f64,
    pub min_gap: f64,
    pub tolerance: f64,
    pub measure_omega: f64,
    pub measure_ball: f64,
    /// Decreasing rearrangement of the solution on `Ω` (step values).
    pub profile_omega: Vec<f64>,
    /// Decreasing rearrangement of the symmetrized solution.
    pub profile_ball: Vec<f64>,
    pub cell_measure: f64,
}

impl ComparisonReport {
    pub fn from_profiles(u: &Profile, v: &Profile, cell_measure: f64, tol: f64) -> Result<Self> {
        let rep = concentration_report(u, v, tol)?;
        Ok(ComparisonReport {
            verdict: rep.verdict,
            max_gap: rep.max_gap,
            min_gap: rep.min_gap,
            tolerance: tol,
            measure_omega: u.extent(),
            measure_ball: v.extent(),
            profile_omega: u.values().to_vec(),
            profile_ball: v.values().to_vec(),
            cell_measure,
        })
    }

    /// Cross-grid tolerance (one cell mass) applied to both profiles.
    pub fn cross_grid(u: &Profile, v: &Profile, cell_measure: f64) -> Result<Self> {
        Self::from_profiles(u, v, cell_measure, cross_grid_tolerance(u, v, cell_measure))
    }
}

/// Operators on `Ω` and on its Schwarz ball at the same spacing.
#[derive(Debug, Clone)]
pub struct SymmetrizedPair {
    pub omega: OperatorMatrix,
    pub ball: OperatorMatrix,
}

impl SymmetrizedPair {
    pub fn assemble(d: &Arc<Domain>, sigma: f64) -> Result<Self> {
        let omega = assemble_restricted(d, sigma)?;
        let ball_domain = Arc::new(d.schwarz_ball());
        let ball = assemble_restricted(&ball_domain, sigma)?;
        Ok(SymmetrizedPair { omega, ball })
    }
}

/// Solves the problem on `Ω` with data `f` and the symmetrized problem on the
/// Schwarz ball with data `f^#`, then compares `v*` with `V*`.
pub fn elliptic_concentration_experiment(
    d: &Arc<Domain>,
    sigma: f64,
    b: &Nonlinearity,
    f: &ScalarField,
) -> Result<ComparisonReport> {
    let pair = SymmetrizedPair::assemble(d, sigma)?;
    elliptic_concentration_with(&pair, b, f)
}

pub fn elliptic_concentration_with(pair: &SymmetrizedPair, b: &Nonlinearity, f: &ScalarField) -> Result<ComparisonReport> {
    let fsharp = spherical_rearrangement_onto(f, pair.ball.domain().clone());
    let v = solve_nonlinear(&pair.omega, b, f, 1.0)?;
    let big_v = solve_nonlinear(&pair.ball, b, &fsharp, 1.0)?;
    let vs = decreasing_rearrangement(&v);
    let bs = decreasing_rearrangement(&big_v);
    ComparisonReport::cross_grid(&vs, &bs, f.domain().cell_measure())
}

/// Radial comparison on a ball: for rearranged data `f₁ ≺ f₂` and linear `B`,
/// returns the verdict for the two solutions (expected LESS or EQUAL).
pub fn radial_comparison_check(
    a_ball: &OperatorMatrix,
    c: f64,
    f1: &ScalarField,
    f2: &ScalarField,
) -> Result<Concentration> {
    let p1 = decreasing_rearrangement(f1);
    let p2 = decreasing_rearrangement(f2);
    let hyp = concentration_report(&p1, &p2, same_grid_tolerance(&p2))?;
    if !hyp.verdict.is_less_or_equal() {
        return Err(FracError::Hypothesis("radial comparison requires f1 ≺ f2".into()));
    }
    let v1 = solve_linear(a_ball, c, f1)?;
    let v2 = solve_linear(a_ball, c, f2)?;
    let q1 = decreasing_rearrangement(&v1);
    let q2 = decreasing_rearrangement(&v2);
    let tol = same_grid_tolerance(&q2).max(1e-9 * q2.norm_lp(1.0));
    Ok(concentration_report(&q1, &q2, tol)?.verdict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Shape;

    fn setup(n: usize, sigma: f64) -> OperatorMatrix {
        let d = Arc::new(Domain::interval(-1.0, 1.0, n).unwrap());
        assemble_restricted(&d, sigma).unwrap()
    }

    #[test]
    fn presets_validate() {
        Nonlinearity::linear(2.0).unwrap().validate(10.0).unwrap();
        Nonlinearity::Saturating.validate(10.0).unwrap();
        Nonlinearity::power(0.5, 1e-3).unwrap().validate(10.0).unwrap();
        assert!(Nonlinearity::linear(-1.0).is_err());
        assert!(Nonlinearity::power(1.5, 1e-3).is_err());
        assert!(Nonlinearity::custom("cube", |t| t * t * t, |t| 3.0 * t * t, 2.0).is_err());
        assert!(Nonlinearity::custom("log", |t: f64| (1.0 + t).ln(), |t| 1.0 / (1.0 + t), 5.0).is_ok());
    }

    #[test]
    fn parse_nonlinearity() {
        assert_eq!(Nonlinearity::parse("linear:1.5").unwrap().is_linear(), Some(1.5));
        assert!(matches!(Nonlinearity::parse("saturating").unwrap(), Nonlinearity::Saturating));
        assert!(matches!(
            Nonlinearity::parse("power:0.3").unwrap(),
            Nonlinearity::RegularizedPower { m, delta } if m == 0.3 && delta == DEFAULT_POWER_DELTA
        ));
        assert!(Nonlinearity::parse("cubic").is_err());
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let a = setup(32, 0.8);
        let z = ScalarField::zeros(a.domain().clone());
        assert!(solve_linear(&a, 1.0, &z).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn manufactured_linear_solution() {
        let a = setup(64, 1.3);
        let g = ScalarField::from_fn(a.domain().clone(), |x, _| (1.0 - x * x) * (2.0 + x));
        let c = 0.7;
        let mut f = a.apply(g.values());
        for (fi, gi) in f.iter_mut().zip(g.values()) {
            *fi += c * gi;
        }
        let v = solve_linear(&a, c, &g.with_values(f).unwrap()).unwrap();
        for (x, y) in v.values().iter().zip(g.values()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn manufactured_nonlinear_solution() {
        let a = setup(64, 0.6);
        let b = Nonlinearity::Saturating;
        let h = 0.3;
        let g = ScalarField::from_fn(a.domain().clone(), |x, _| 1.2 - x * x);
        let ag = a.apply(g.values());
        let f: Vec<f64> = ag.iter().zip(g.values()).map(|(x, y)| h * x + b.eval(*y)).collect();
        let v = solve_nonlinear(&a, &b, &g.with_values(f).unwrap(), h).unwrap();
        for (x, y) in v.values().iter().zip(g.values()) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn linear_nonlinearity_matches_linear_solver() {
        let a = setup(48, 1.0);
        let f = ScalarField::from_fn(a.domain().clone(), |x, _| (x + 1.0).powi(2));
        let h = 0.5;
        let v = solve_nonlinear(&a, &Nonlinearity::Linear(2.0), &f, h).unwrap();
        // h A v + 2 v = f  <=>  (A + (2/h) I) v = f / h
        let w = solve_linear(&a, 2.0 / h, &f.map(|x| x / h)).unwrap();
        for (x, y) in v.values().iter().zip(w.values()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn power_nonlinearity_converges() {
        let a = setup(64, 1.0);
        let b = Nonlinearity::power(0.5, 1e-3).unwrap();
        let f = ScalarField::from_fn(a.domain().clone(), |x, _| 1.0 + x);
        let v = solve_nonlinear(&a, &b, &f, 1.0).unwrap();
        assert!(v.values().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn negative_data_rejected() {
        let a = setup(16, 1.0);
        let f = ScalarField::constant(a.domain().clone(), -1.0);
        assert!(solve_nonlinear(&a, &Nonlinearity::Saturating, &f, 1.0).is_err());
    }

    #[test]
    fn epsilon_lift_is_a_shift() {
        let d = Arc::new(Shape::Lshape { side: 1.0 }.build(10).unwrap());
        let a = assemble_restricted(&d, 0.9).unwrap();
        let f = ScalarField::from_fn(d, |x, y| 1.0 + x * y);
        let c = 1.5;
        let eps = 0.01;
        let lifted = solve_epsilon_lifted(&a, c, &f, eps).unwrap();
        let plain = solve_linear(&a, c, &f).unwrap();
        for (x, y) in lifted.values().iter().zip(plain.values()) {
            assert!((x - y - eps).abs() < 1e-10);
        }
    }

    #[test]
    fn identical_data_contraction_is_zero() {
        let a = setup(32, 1.0);
        let f = ScalarField::from_fn(a.domain().clone(), |x, _| 1.0 - x.abs());
        let (l, r) = l1_contraction_check(&a, &Nonlinearity::Saturating, &f, &f).unwrap();
        assert_eq!((l, r), (0.0, 0.0));
    }

    #[test]
    fn ball_with_radial_data_is_equal() {
        let d = Arc::new(Domain::interval(-1.0, 1.0, 64).unwrap());
        let f = ScalarField::from_fn(d.clone(), |x, _| 1.0 - x * x);
        let rep = elliptic_concentration_experiment(&d, 1.0, &Nonlinearity::Linear(1.0), &f).unwrap();
        assert_eq!(rep.verdict, Concentration::Equal, "{rep:?}");
    }

    #[test]
    fn two_intervals_indicator_is_less() {
        let d = Arc::new(Domain::union_of_intervals(&[(0.0, 1.0), (2.0, 3.0)], 1.0 / 32.0).unwrap());
        let f = ScalarField::constant(d.clone(), 1.0);
        let rep = elliptic_concentration_experiment(&d, 1.0, &Nonlinearity::Linear(0.0), &f).unwrap();
        assert_eq!(rep.verdict, Concentration::Less, "{rep:?}");
    }
}
