//! Gauss–Legendre rules and a few one-dimensional integration helpers.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Fixed-order Gauss rule on `[a, b]`.
pub struct GaussRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        GaussRule { nodes, weights }
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let m = 0.5 * (a + b);
        let r = 0.5 * (b - a);
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(m + r * x)).sum::<f64>() * r
    }

    /// Tensor-product rule over `[x0, x1] × [y0, y1]`.
    pub fn integrate_2d(&self, x0: f64, x1: f64, y0: f64, y1: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
        let (mx, rx) = (0.5 * (x0 + x1), 0.5 * (x1 - x0));
        let (my, ry) = (0.5 * (y0 + y1), 0.5 * (y1 - y0));
        let mut s = 0.0;
        for (xi, wi) in self.nodes.iter().zip(&self.weights) {
            let x = mx + rx * xi;
            for (yj, wj) in self.nodes.iter().zip(&self.weights) {
                s += wi * wj * f(x, my + ry * yj);
            }
        }
        s * rx * ry
    }
}

/// Adaptive Gauss integration on `[a, b]` by interval bisection.
///
/// Subintervals stop refining once the local error estimate is below their
/// share of `tol` or below rounding level relative to the whole integral.
pub fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let rule = GaussRule::new(10);
    struct Ctx<'a> {
        rule: GaussRule,
        f: &'a dyn Fn(f64) -> f64,
        floor: f64,
    }
    fn rec(cx: &Ctx, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let left = cx.rule.integrate(a, m, cx.f);
        let right = cx.rule.integrate(m, b, cx.f);
        if depth >= 60 || (left + right - whole).abs() <= tol.max(cx.floor) {
            return left + right;
        }
        rec(cx, a, m, left, 0.5 * tol, depth + 1) + rec(cx, m, b, right, 0.5 * tol, depth + 1)
    }
    let whole = rule.integrate(a, b, f);
    let cx = Ctx { rule, f, floor: 1e-15 * whole.abs() };
    rec(&cx, a, b, whole, tol, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_integrates_polynomials_exactly() {
        for n in 1..12 {
            let rule = GaussRule::new(n);
            for deg in 0..(2 * n) {
                let got = rule.integrate(0.0, 1.0, |x| x.powi(deg as i32));
                let exact = 1.0 / (deg as f64 + 1.0);
                assert!((got - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let got = adaptive(&|x: f64| x.powf(-0.5), 0.0, 1.0, 1e-10);
        assert!((got - 2.0).abs() < 1e-7);
    }
}
