//! Lattice integrals of the hypersingular kernel `|t|^{-N-σ}`.
//!
//! Everything here is expressed in lattice units (unit cells centered on the
//! integer points); physical weights follow by the scaling `h^{-σ}`.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_4;
use std::sync::{Mutex, OnceLock};

use crate::quadrature::GaussRule;

/// `∫ |t|^{-N-σ}` over the unit cell at integer `offset`, with the self cell
/// excluded (it only enters through [`self_complement`]).
pub fn cell_weight(dim: usize, sigma: f64, offset: (i64, i64)) -> f64 {
    match dim {
        1 => {
            let j = offset.0.unsigned_abs() as f64;
            assert!(j > 0.0, "self cell has no finite weight");
            ((j - 0.5).powf(-sigma) - (j + 0.5).powf(-sigma)) / sigma
        }
        2 => {
            let (a, b) = (offset.0.abs() as f64, offset.1.abs() as f64);
            assert!(a + b > 0.0, "self cell has no finite weight");
            let p = -(2.0 + sigma) / 2.0;
            cell_integral_2d(a, b, &|x, y| (x * x + y * y).powf(p))
        }
        _ => panic!("unsupported dimension {dim}"),
    }
}

/// `∫_{ℝᴺ ∖ cell₀} |t|^{-N-σ}` where `cell₀` is the unit cell at the origin.
pub fn self_complement(dim: usize, sigma: f64) -> f64 {
    match dim {
        1 => 2.0 * 0.5f64.powf(-sigma) / sigma,
        2 => {
            let ang = GaussRule::new(24).integrate(0.0, FRAC_PI_4, |t| t.cos().powf(sigma));
            8.0 / sigma * 0.5f64.powf(-sigma) * ang
        }
        _ => panic!("unsupported dimension {dim}"),
    }
}

/// Integral over the unit cell centered at `(a, b)` (a, b ≥ 0, not the origin)
/// with recursive subdivision where the cell is close to the singularity.
fn cell_integral_2d(a: f64, b: f64, f: &dyn Fn(f64, f64) -> f64) -> f64 {
    let rule = GaussRule::new(8);
    if a.max(b) >= 4.0 {
        return rule.integrate_2d(a - 0.5, a + 0.5, b - 0.5, b + 0.5, f);
    }
    fn rec(rule: &GaussRule, f: &dyn Fn(f64, f64) -> f64, x0: f64, x1: f64, y0: f64, y1: f64, whole: f64, depth: u32) -> f64 {
        let xm = 0.5 * (x0 + x1);
        let ym = 0.5 * (y0 + y1);
        let parts = [
            rule.integrate_2d(x0, xm, y0, ym, f),
            rule.integrate_2d(xm, x1, y0, ym, f),
            rule.integrate_2d(x0, xm, ym, y1, f),
            rule.integrate_2d(xm, x1, ym, y1, f),
        ];
        let sum: f64 = parts.iter().sum();
        if depth >= 8 || (sum - whole).abs() <= 1e-15 * sum.abs().max(1e-300) {
            return sum;
        }
        rec(rule, f, x0, xm, y0, ym, parts[0], depth + 1)
            + rec(rule, f, xm, x1, y0, ym, parts[1], depth + 1)
            + rec(rule, f, x0, xm, ym, y1, parts[2], depth + 1)
            + rec(rule, f, xm, x1, ym, y1, parts[3], depth + 1)
    }
    let whole = rule.integrate_2d(a - 0.5, a + 0.5, b - 0.5, b + 0.5, f);
    rec(&rule, f, a - 0.5, a + 0.5, b - 0.5, b + 0.5, whole, 0)
}

/// Table of [`cell_weight`] for nonnegative offsets up to `(nx-1, ny-1)`.
#[derive(Debug, Clone)]
pub struct WeightTable {
    ny: usize,
    values: Vec<f64>,
}

impl WeightTable {
    pub fn new(dim: usize, sigma: f64, nx: usize, ny: usize) -> Self {
        let mut values = vec![0.0; nx * ny];
        for a in 0..nx {
            for b in 0..ny {
                if a + b > 0 {
                    values[a * ny + b] = cell_weight(dim, sigma, (a as i64, b as i64));
                }
            }
        }
        WeightTable { ny, values }
    }

    #[inline]
    pub fn get(&self, da: usize, db: usize) -> f64 {
        self.values[da * self.ny + db]
    }
}

/// Leading error constant of piecewise-constant collocation.
///
/// Applying the cell-weight scheme to a smooth `u` differs from the exact
/// operator by `c(N,σ) E h^{2-σ} Δu + O(h^{4-σ})`. `E` is the lattice sum
/// `Σ_j [∫_{cell j} |t|^{2}/(2N) |t|^{-N-σ} - |t_j|²/(2N) w_j]` evaluated for
/// the quadratic `|t|²/(2N)` (whose Laplacian is 1).
pub fn curvature_constant(dim: usize, sigma: f64) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u64), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (dim, sigma.to_bits());
    if let Some(v) = cache.lock().unwrap().get(&key) {
        return *v;
    }
    let v = match dim {
        1 => curvature_constant_1d(sigma),
        2 => curvature_constant_2d(sigma),
        _ => panic!("unsupported dimension {dim}"),
    };
    cache.lock().unwrap().insert(key, v);
    v
}

fn curvature_constant_1d(sigma: f64) -> f64 {
    let s = sigma;
    // Self cell: ∫_{-1/2}^{1/2} t²/2 |t|^{-1-σ}.
    let mut total = 0.5f64.powf(2.0 - s) / (2.0 - s);
    let exact_cells = 4000usize;
    let rule = GaussRule::new(12);
    for j in 1..=exact_cells {
        let jf = j as f64;
        // ∫_{cell j} (t² - j²)/2 · t^{-1-σ}, evaluated without cancellation.
        let cell = rule.integrate(jf - 0.5, jf + 0.5, |t| 0.5 * (t - jf) * (t + jf) * t.powf(-1.0 - s));
        total += 2.0 * cell;
    }
    // Tail: each cell contributes -(1+2σ)/24 j^{-1-σ} per side to leading order.
    let tail_start = exact_cells as f64 + 0.5;
    total -= (1.0 + 2.0 * s) / (12.0 * s) * tail_start.powf(-s);
    total
}

fn curvature_constant_2d(sigma: f64) -> f64 {
    let s = sigma;
    let rule = GaussRule::new(16);
    // Self cell: ∫_{[-1/2,1/2]²} |t|^{-σ}/4.
    let ang = GaussRule::new(24).integrate(0.0, FRAC_PI_4, |t| (0.5 / t.cos()).powf(2.0 - s));
    let mut total = 2.0 * ang / (2.0 - s);
    let radius: i64 = 160;
    let p = -(2.0 + s) / 2.0;
    for a in 0..=radius {
        for b in 0..=a {
            if a == 0 && b == 0 {
                continue;
            }
            let (af, bf) = (a as f64, b as f64);
            let r2j = af * af + bf * bf;
            let f = |x: f64, y: f64| {
                let r2 = x * x + y * y;
                0.25 * (r2 - r2j) * r2.powf(p)
            };
            let cell = if a <= 3 {
                cell_integral_2d(af, bf, &f)
            } else {
                rule.integrate_2d(af - 0.5, af + 0.5, bf - 0.5, bf + 0.5, f)
            };
            // Multiplicity of (±a, ±b) and the swap (b, a).
            let mult = match (a == b, b == 0) {
                (true, _) => 4.0,
                (false, true) => 4.0,
                (false, false) => 8.0,
            };
            total += mult * cell;
        }
    }
    // Tail beyond the square of half-width radius + 1/2: -(1+σ)/24 r^{-2-σ} per cell.
    let ang = GaussRule::new(24).integrate(0.0, FRAC_PI_4, |t| t.cos().powf(s));
    let outer = radius as f64 + 0.5;
    total -= (1.0 + s) / 24.0 * 8.0 / s * outer.powf(-s) * ang;
    total
}
