//! Distribution functions, decreasing and spherical rearrangements, and the
//! mass-concentration order.
//!
//! Profiles are exact step functions on the measure axis, so every integral in
//! this module is a finite sum and carries no quadrature error.

use std::cmp::Ordering;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{Domain, ScalarField};
use crate::error::{invalid, Result};

/// Non-increasing right-continuous step function on `[0, |Ω|]`, extended by
/// zero beyond its last breakpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    breaks: Vec<f64>,
    values: Vec<f64>,
}

impl Profile {
    /// Builds a profile from step values and widths.
    pub fn from_steps(values: Vec<f64>, widths: &[f64]) -> Result<Self> {
        if values.len() != widths.len() {
            return invalid("profile needs one width per value");
        }
        let mut breaks = Vec::with_capacity(values.len() + 1);
        breaks.push(0.0);
        let mut s = 0.0;
        for &w in widths {
            if !(w > 0.0) {
                return invalid("profile widths must be positive");
            }
            s += w;
            breaks.push(s);
        }
        if values.windows(2).any(|p| p[1] > p[0]) {
            return invalid("profile values must be non-increasing");
        }
        Ok(Profile { breaks, values })
    }

    /// Profile with equal step widths.
    pub fn uniform(values: Vec<f64>, width: f64) -> Result<Self> {
        let widths = vec![width; values.len()];
        Self::from_steps(values, &widths)
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total measure `|Ω|` covered by the profile.
    pub fn extent(&self) -> f64 {
        *self.breaks.last().unwrap_or(&0.0)
    }

    /// Value `f*(s)` (zero beyond the extent).
    pub fn value_at(&self, s: f64) -> f64 {
        if s < 0.0 || s >= self.extent() {
            return 0.0;
        }
        let k = self.breaks.partition_point(|&b| b <= s);
        self.values[k - 1]
    }

    /// `F(s_k) = ∫_0^{s_k} f*` at every breakpoint.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.breaks.len());
        let mut acc = 0.0;
        out.push(0.0);
        for (k, v) in self.values.iter().enumerate() {
            acc += v * (self.breaks[k + 1] - self.breaks[k]);
            out.push(acc);
        }
        out
    }

    /// `∫_0^s f*` for arbitrary `s ≥ 0`.
    pub fn integral_to(&self, s: f64) -> f64 {
        let mut acc = 0.0;
        for (k, v) in self.values.iter().enumerate() {
            let (a, b) = (self.breaks[k], self.breaks[k + 1]);
            if s <= a {
                break;
            }
            acc += v * (b.min(s) - a);
        }
        acc
    }

    /// `∫ Φ(f*)` over the extent.
    pub fn integrate(&self, phi: impl Fn(f64) -> f64) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(k, &v)| phi(v) * (self.breaks[k + 1] - self.breaks[k]))
            .sum()
    }

    pub fn norm_lp(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.values.first().map_or(0.0, |v| v.abs());
        }
        self.integrate(|v| v.abs().powf(p)).powf(1.0 / p)
    }

    /// Two-column CSV `s,value` with one row per step (left breakpoint).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,value\n");
        for (k, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{:.17e},{:.17e}\n", self.breaks[k], v));
        }
        out.push_str(&format!("{:.17e},{:.17e}\n", self.extent(), 0.0));
        out
    }
}

/// `μ_f(k) = |{x ∈ Ω : |f(x)| > k}|`.
pub fn distribution_function(f: &ScalarField, k: f64) -> Result<f64> {
    if !(k >= 0.0) {
        return invalid(format!("distribution function level must be nonnegative, got {k}"));
    }
    let count = f.values().iter().filter(|v| v.abs() > k).count();
    Ok(count as f64 * f.domain().cell_measure())
}

/// Indices of `values` sorted by decreasing `|value|`, ties by index.
fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    idx
}

/// Decreasing rearrangement `f*` of `|f|`.
pub fn decreasing_rearrangement(f: &ScalarField) -> Profile {
    let values: Vec<f64> = descending_order(f.values()).into_iter().map(|i| f.values()[i].abs()).collect();
    let width = f.domain().cell_measure();
    Profile { breaks: (0..=values.len()).map(|k| k as f64 * width).collect(), values }
}

/// Samples a profile on the cells of a ball: the `k`-th cell in radial order
/// receives the `k`-th step value.
pub fn profile_on_ball(profile: &Profile, ball: Arc<Domain>) -> ScalarField {
    let order = ball.radial_order();
    let mut values = vec![0.0; ball.len()];
    for (rank, &cell) in order.iter().enumerate() {
        values[cell] = profile.values.get(rank).copied().unwrap_or(0.0);
    }
    ScalarField::new(ball, values).expect("sizes match")
}

/// Spherical rearrangement `f^#` sampled on the Schwarz ball of `f`'s domain.
pub fn spherical_rearrangement(f: &ScalarField) -> ScalarField {
    let ball = Arc::new(f.domain().schwarz_ball());
    spherical_rearrangement_onto(f, ball)
}

/// Spherical rearrangement onto a given ball lattice (normally the Schwarz
/// ball of the source domain).
pub fn spherical_rearrangement_onto(f: &ScalarField, ball: Arc<Domain>) -> ScalarField {
    profile_on_ball(&decreasing_rearrangement(f), ball)
}

/// Outcome of a mass-concentration comparison `f ≺ g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Concentration {
    Less,
    Greater,
    Equal,
    Incomparable,
}

impl Concentration {
    /// `true` for the verdicts allowed by a comparison theorem `f ≺ g`.
    pub fn is_less_or_equal(self) -> bool {
        matches!(self, Concentration::Less | Concentration::Equal)
    }
}

/// Comparison verdict with the extreme gaps of `F - G`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub verdict: Concentration,
    /// `max_s (F(s) - G(s))`; positive values violate `f ≺ g`.
    pub max_gap: f64,
    /// `min_s (F(s) - G(s))`.
    pub min_gap: f64,
    pub tol: f64,
}

/// Compares `F = ∫_0^s f*` with `G = ∫_0^s g*` at all breakpoints of both profiles.
pub fn concentration_compare(f: &Profile, g: &Profile, tol: f64) -> Result<Concentration> {
    Ok(concentration_report(f, g, tol)?.verdict)
}

pub fn concentration_report(f: &Profile, g: &Profile, tol: f64) -> Result<ConcentrationReport> {
    if !(tol >= 0.0) {
        return invalid(format!("tolerance must be nonnegative, got {tol}"));
    }
    let mut points: Vec<f64> = f.breaks.iter().chain(g.breaks.iter()).copied().collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let mut max_gap = f64::NEG_INFINITY;
    let mut min_gap = f64::INFINITY;
    for &s in &points {
        let d = f.integral_to(s) - g.integral_to(s);
        max_gap = max_gap.max(d);
        min_gap = min_gap.min(d);
    }
    let verdict = if max_gap <= tol && min_gap >= -tol {
        Concentration::Equal
    } else if max_gap <= tol {
        Concentration::Less
    } else if min_gap >= -tol {
        Concentration::Greater
    } else {
        Concentration::Incomparable
    };
    Ok(ConcentrationReport { verdict, max_gap, min_gap, tol })
}

/// Default tolerance for comparisons on a common grid: `1e-10 ‖g‖₁`.
pub fn same_grid_tolerance(g: &Profile) -> f64 {
    1e-10 * g.norm_lp(1.0)
}

/// Default tolerance for comparisons across grids: one cell mass.
pub fn cross_grid_tolerance(f: &Profile, g: &Profile, cell_measure: f64) -> f64 {
    cell_measure * f.norm_lp(f64::INFINITY).max(g.norm_lp(f64::INFINITY))
}

/// Convex nondecreasing test functions for [`convex_order_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConvexTest {
    Identity,
    Square,
    /// `(t - c)₊`
    Hinge(f64),
}

impl ConvexTest {
    pub fn eval(self, t: f64) -> f64 {
        match self {
            ConvexTest::Identity => t,
            ConvexTest::Square => t * t,
            ConvexTest::Hinge(c) => (t - c).max(0.0),
        }
    }
}

/// `t`, `t²` and hinges `(t - c)₊` at `levels` equispaced `c ∈ [0, max]`.
pub fn default_convex_family(max: f64, levels: usize) -> Vec<ConvexTest> {
    let mut fam = vec![ConvexTest::Identity, ConvexTest::Square];
    for k in 0..levels {
        fam.push(ConvexTest::Hinge(max * k as f64 / levels.max(1) as f64));
    }
    fam
}

/// Checks `∫Φ(f*) ≤ ∫Φ(g*) + tol` for every `Φ` in the family.
pub fn convex_order_check(f: &Profile, g: &Profile, family: &[ConvexTest], tol: f64) -> bool {
    family.iter().all(|phi| f.integrate(|t| phi.eval(t)) <= g.integrate(|t| phi.eval(t)) + tol)
}

/// Hardy–Littlewood pair `(∫|fg|, ∫ f* g*)`.
pub fn hardy_littlewood_check(f: &ScalarField, g: &ScalarField) -> Result<(f64, f64)> {
    if !f.same_domain(g) {
        return invalid("Hardy-Littlewood check needs fields on the same domain");
    }
    let cell = f.domain().cell_measure();
    let lhs = f.values().iter().zip(g.values()).map(|(a, b)| (a * b).abs()).sum::<f64>() * cell;
    let fs = decreasing_rearrangement(f);
    let gs = decreasing_rearrangement(g);
    let rhs = fs.values.iter().zip(&gs.values).map(|(a, b)| a * b).sum::<f64>() * cell;
    Ok((lhs, rhs))
}

/// `true` when `f` is radially non-increasing on its (ball) domain, i.e. `f = f^#`
/// up to ties between cells at equal distance.
pub fn is_rearranged(f: &ScalarField) -> bool {
    let order = f.domain().radial_order();
    order.windows(2).all(|p| {
        let (a, b) = (f.values()[p[0]], f.values()[p[1]]);
        a.partial_cmp(&b) != Some(Ordering::Less)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Shape;

    fn unit_cells(values: &[f64]) -> ScalarField {
        let d = Arc::new(Domain::interval(0.0, values.len() as f64, values.len()).unwrap());
        ScalarField::new(d, values.to_vec()).unwrap()
    }

    #[test]
    fn distribution_function_examples() {
        let f = unit_cells(&[2.0, 0.0, 1.0]);
        assert_eq!(distribution_function(&f, 0.5).unwrap(), 2.0);
        assert_eq!(distribution_function(&f, 2.0).unwrap(), 0.0);
        assert!(distribution_function(&f, -1.0).is_err());
    }

    #[test]
    fn decreasing_rearrangement_examples() {
        let p = decreasing_rearrangement(&unit_cells(&[2.0, 0.0, 1.0]));
        assert_eq!(p.values(), &[2.0, 1.0, 0.0]);
        assert_eq!(p.breaks(), &[0.0, 1.0, 2.0, 3.0]);
        let c = decreasing_rearrangement(&unit_cells(&[0.7; 5]));
        assert!(c.values().iter().all(|&v| v == 0.7));
        assert_eq!(c.extent(), 5.0);
    }

    #[test]
    fn concentration_examples() {
        let f = Profile::uniform(vec![1.0, 1.0, 0.0], 1.0).unwrap();
        let g = Profile::uniform(vec![2.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(concentration_compare(&f, &g, 1e-12).unwrap(), Concentration::Less);
        assert_eq!(concentration_compare(&g, &f, 1e-12).unwrap(), Concentration::Greater);
        assert_eq!(concentration_compare(&f, &f, 1e-12).unwrap(), Concentration::Equal);
        let h = Profile::uniform(vec![1.5, 0.2, 0.2], 1.0).unwrap();
        // F = 1,2,2 ; H = 1.5,1.7,1.9
        assert_eq!(concentration_compare(&f, &h, 1e-12).unwrap(), Concentration::Incomparable);
        assert!(concentration_compare(&f, &g, -1.0).is_err());
    }

    #[test]
    fn shorter_profile_is_padded_with_zeros() {
        let f = Profile::uniform(vec![1.0, 1.0], 1.0).unwrap();
        let g = Profile::uniform(vec![1.0, 1.0, 1.0], 1.0).unwrap();
        assert_eq!(concentration_compare(&f, &g, 1e-12).unwrap(), Concentration::Less);
    }

    #[test]
    fn convex_and_hardy_littlewood_examples() {
        let f = Profile::uniform(vec![1.0, 1.0, 0.0], 1.0).unwrap();
        let g = Profile::uniform(vec![2.0, 0.0, 0.0], 1.0).unwrap();
        assert!(convex_order_check(&f, &g, &[ConvexTest::Square], 0.0));
        assert!(convex_order_check(&f, &f, &default_convex_family(2.0, 8), 0.0));
        let (l, r) = hardy_littlewood_check(&unit_cells(&[1.0, 2.0]), &unit_cells(&[3.0, 1.0])).unwrap();
        assert_eq!((l, r), (5.0, 7.0));
        let u = unit_cells(&[0.3, -1.2, 2.0]);
        let (l, r) = hardy_littlewood_check(&u, &u).unwrap();
        assert!((l - r).abs() < 1e-15 && (l - 0.09 - 1.44 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn spherical_rearrangement_of_rearranged_field_is_identity() {
        let d = Arc::new(Shape::Disk { radius: 1.0 }.build(16).unwrap());
        let f = ScalarField::from_fn(d, |x, y| (1.0 - x * x - y * y).max(0.0));
        let fs = spherical_rearrangement(&f);
        assert!(is_rearranged(&fs));
        // Same lattice, same radial values.
        let mut a: Vec<_> = f.values().to_vec();
        let mut b: Vec<_> = fs.values().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
        for (k, c) in fs.domain().centers().iter().enumerate() {
            let exact = (1.0 - c[0] * c[0] - c[1] * c[1]).max(0.0);
            assert!((fs.values()[k] - exact).abs() < 1e-14);
        }
    }

    #[test]
    fn off_center_indicator_becomes_centered_disk() {
        let d = Arc::new(Shape::Square { side: 1.0 }.build(20).unwrap());
        let f = ScalarField::from_fn(d.clone(), |x, y| if x > 0.6 && y > 0.6 { 1.0 } else { 0.0 });
        let fs = spherical_rearrangement(&f);
        let ones = f.values().iter().filter(|&&v| v == 1.0).count();
        let order = fs.domain().radial_order();
        for (rank, &cell) in order.iter().enumerate() {
            assert_eq!(fs.values()[cell], if rank < ones { 1.0 } else { 0.0 });
        }
        assert!((fs.norm_l1() - f.norm_l1()).abs() < 1e-12);
    }
}
