//! Degenerate extension problem `-z^ν w_zz - Δ_x w = 0` on a truncated
//! half-space, with `z = (y/σ)^σ` and `ν = 2(σ-1)/σ`.
//!
//! The lateral box carries the face-Dirichlet finite-difference Laplacian,
//! whose eigenvectors are discrete sine modes. Each mode `μ` then decouples
//! into the ODE `-W'' + μ z^{-ν} W = 0`, discretized by finite volumes on a
//! graded grid with the weight `z^{-ν}` integrated exactly over every dual
//! cell. The trace flux of the discrete solution is
//! `-w_z(x,0) = (w_0 - w_1)/z_1 + m_0 (-Δ_x w_0)` with `m_0 = ∫_0^{z_1/2} z^{-ν}`.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain::{unit_ball_measure, Domain, Rect, ScalarField};
use crate::elliptic::Nonlinearity;
use crate::error::{check_sigma, invalid, FracError, Result};
use crate::rearrange::spherical_rearrangement_onto;

/// `(κ_σ, θ_σ, ν)` with `κ_σ = 2^{1-σ} Γ(1-σ/2) / Γ(σ/2)` and `θ_σ = σ^{σ-1} κ_σ`.
pub fn extension_constants(sigma: f64) -> Result<(f64, f64, f64)> {
    check_sigma(sigma)?;
    let kappa = 2f64.powf(1.0 - sigma) * libm::tgamma(1.0 - sigma / 2.0) / libm::tgamma(sigma / 2.0);
    let theta = sigma.powf(sigma - 1.0) * kappa;
    Ok((kappa, theta, 2.0 * (sigma - 1.0) / sigma))
}

/// Grading exponent of the default z-grid.
pub const DEFAULT_GAMMA: f64 = 3.0;

/// Default truncation height: the point where `y = σ z^{1/σ}` reaches eight diameters.
pub fn default_z_max(sigma: f64, diameter: f64) -> f64 {
    (8.0 * diameter / sigma).powf(sigma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtensionOptions {
    /// Lateral padding around `Ω`; defaults to three diameters.
    pub box_pad: Option<f64>,
    /// Height of the truncated half-space in `z`; defaults to [`default_z_max`].
    pub z_max: Option<f64>,
    /// Number of z-layers `M`.
    pub layers: usize,
    /// Grading exponent `γ` of `z_j = Z_max (j/M)^γ`.
    pub gamma: Option<f64>,
}

impl Default for ExtensionOptions {
    fn default() -> Self {
        ExtensionOptions { box_pad: None, z_max: None, layers: 96, gamma: None }
    }
}

/// Data imposed at `z = 0`.
#[derive(Debug, Clone, Copy)]
pub enum BoundaryData<'a> {
    /// `w(·, 0) = g` on `Ω` (zero elsewhere).
    DirichletTrace(&'a ScalarField),
    /// `-w_z(·, 0) = θ_σ (f - B(w(·, 0)))` on `Ω`, `w(·, 0) = 0` elsewhere.
    NeumannFlux(&'a ScalarField, &'a Nonlinearity),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DataKind {
    DirichletTrace,
    NeumannFlux,
    Synthetic,
}

/// Discrete extension `w(x_i, z_j)` on the lateral box times the z-grid.
#[derive(Debug, Clone)]
pub struct ExtensionField {
    pub box_domain: Arc<Domain>,
    pub omega: Arc<Domain>,
    /// Box index of every cell of `Ω`, in `Ω`'s cell order.
    pub omega_cells: Vec<usize>,
    pub z: Vec<f64>,
    /// Slice-major values: `values[j * nbox + i] = w(x_i, z_j)`.
    pub values: Vec<f64>,
    pub sigma: f64,
    pub nu: f64,
    pub gamma: f64,
    pub z_max: f64,
    pub kind: DataKind,
    pub nonlinearity: Option<Nonlinearity>,
    /// `max|w(·, z_{M-1})| / max|w(·, 0)|`.
    pub decay_ratio: f64,
    /// `false` when the decay ratio exceeds `10⁻³`, meaning `Z_max` is too small.
    pub decay_ok: bool,
}

/// Header of the binary export.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExtensionHeader {
    pub nx: usize,
    pub ny: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub sigma: f64,
    #[serde(rename = "Zmax")]
    pub z_max: f64,
    pub gamma: f64,
}

impl ExtensionField {
    pub fn nbox(&self) -> usize {
        self.box_domain.len()
    }

    pub fn layers(&self) -> usize {
        self.z.len() - 1
    }

    pub fn slice(&self, j: usize) -> &[f64] {
        let n = self.nbox();
        &self.values[j * n..(j + 1) * n]
    }

    /// `w(·, 0)` restricted to `Ω`.
    pub fn trace(&self) -> ScalarField {
        let s = self.slice(0);
        ScalarField::new(self.omega.clone(), self.omega_cells.iter().map(|&i| s[i]).collect())
            .expect("sizes match")
    }

    /// Field given in closed form on an existing box and z-grid, for tests of
    /// the rearrangement diagnostics.
    pub fn synthetic(
        box_domain: Arc<Domain>,
        z: Vec<f64>,
        sigma: f64,
        f: impl Fn(f64, f64, f64) -> f64,
    ) -> Result<Self> {
        let (_, _, nu) = extension_constants(sigma)?;
        if z.len() < 3 || z[0] != 0.0 || z.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("z-grid must start at 0, increase strictly and hold at least 3 nodes");
        }
        let mut values = Vec::with_capacity(z.len() * box_domain.len());
        for &zj in &z {
            values.extend(box_domain.centers().iter().map(|c| f(c[0], c[1], zj)));
        }
        let z_max = *z.last().unwrap();
        Ok(ExtensionField {
            omega: box_domain.clone(),
            omega_cells: (0..box_domain.len()).collect(),
            box_domain,
            z,
            values,
            sigma,
            nu,
            gamma: 1.0,
            z_max,
            kind: DataKind::Synthetic,
            nonlinearity: None,
            decay_ratio: 0.0,
            decay_ok: true,
        })
    }

    pub fn header(&self) -> ExtensionHeader {
        let [nx, ny] = self.box_domain.lattice_shape();
        ExtensionHeader { nx, ny, m: self.layers(), sigma: self.sigma, z_max: self.z_max, gamma: self.gamma }
    }

    /// Writes the values as little-endian `f64` (slice-major) and the JSON header.
    pub fn export(&self, bin_path: &Path, header_path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(8 * self.values.len());
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(bin_path, bytes)?;
        fs::write(header_path, serde_json::to_string_pretty(&self.header())?)?;
        Ok(())
    }
}

/// Sine eigenbasis of the face-Dirichlet three-point Laplacian on `m` cells,
/// orthonormal columns, with eigenvalues `4/h² sin²(π k / 2m)`.
fn sine_basis(m: usize, h: f64) -> (DMatrix<f64>, Vec<f64>) {
    let mut v = DMatrix::from_fn(m, m, |i, k| {
        (std::f64::consts::PI * (k + 1) as f64 * (i as f64 + 0.5) / m as f64).sin()
    });
    for mut col in v.column_iter_mut() {
        let n = col.norm();
        col /= n;
    }
    let mu = (0..m)
        .map(|k| {
            let s = (std::f64::consts::PI * (k + 1) as f64 / (2.0 * m as f64)).sin();
            4.0 / (h * h) * s * s
        })
        .collect();
    (v, mu)
}

/// Separable solver for one lateral box and z-grid.
struct ModeSolver {
    box_domain: Arc<Domain>,
    omega: Arc<Domain>,
    omega_cells: Vec<usize>,
    nx: usize,
    ny: usize,
    vx: DMatrix<f64>,
    vy: DMatrix<f64>,
    /// Lateral eigenvalue of every mode, index `kx * ny + ky`.
    mu: Vec<f64>,
    z: Vec<f64>,
    /// `W_j / W_0` for every mode, mode-major with `M + 1` entries per mode.
    profiles: Vec<f64>,
    /// Discrete DtN symbol divided by `θ_σ`.
    symbol: Vec<f64>,
    sigma: f64,
    nu: f64,
    gamma: f64,
    z_max: f64,
}

/// `∫_a^b z^{-ν} dz`.
fn weight_integral(a: f64, b: f64, nu: f64) -> f64 {
    let p = 1.0 - nu;
    (b.powf(p) - a.powf(p)) / p
}

/// Dual-cell masses `m_j` of the weight `z^{-ν}`.
fn dual_masses(z: &[f64], nu: f64) -> Vec<f64> {
    let m = z.len() - 1;
    (0..=m)
        .map(|j| {
            let a = if j == 0 { 0.0 } else { 0.5 * (z[j - 1] + z[j]) };
            let b = if j == m { z[m] } else { 0.5 * (z[j] + z[j + 1]) };
            weight_integral(a, b, nu)
        })
        .collect()
}

/// Unit-trace profile of the mode `μ`: solves the tridiagonal system for
/// `W_1..W_{M-1}` with `W_0 = 1`, `W_M = 0`.
fn mode_profile(mu: f64, z: &[f64], mass: &[f64], out: &mut [f64]) {
    let m = z.len() - 1;
    out[0] = 1.0;
    out[m] = 0.0;
    if m < 2 {
        return;
    }
    let n = m - 1;
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    for r in 0..n {
        let j = r + 1;
        let lo = 1.0 / (z[j] - z[j - 1]);
        let hi = 1.0 / (z[j + 1] - z[j]);
        let diag = lo + hi + mu * mass[j];
        let sub = if r > 0 { -lo } else { 0.0 };
        let sup = if r + 1 < n { -hi } else { 0.0 };
        let rhs = if r == 0 { lo } else { 0.0 };
        let denom = diag - sub * if r > 0 { c_prime[r - 1] } else { 0.0 };
        c_prime[r] = sup / denom;
        d_prime[r] = (rhs - sub * if r > 0 { d_prime[r - 1] } else { 0.0 }) / denom;
    }
    out[n] = d_prime[n - 1];
    for r in (0..n - 1).rev() {
        out[r + 1] = d_prime[r] - c_prime[r] * out[r + 2];
    }
}

impl ModeSolver {
    fn new(omega: &Arc<Domain>, sigma: f64, opts: &ExtensionOptions) -> Result<Self> {
        let (_, theta, nu) = extension_constants(sigma)?;
        if opts.layers < 2 {
            return invalid("the z-grid needs at least 2 layers");
        }
        let diam = omega.diameter();
        let pad = opts.box_pad.unwrap_or(3.0 * diam);
        let z_max = opts.z_max.unwrap_or_else(|| default_z_max(sigma, diam));
        let gamma = opts.gamma.unwrap_or(DEFAULT_GAMMA);
        if !(pad >= 0.0 && z_max > 0.0 && gamma >= 1.0) {
            return invalid("box padding must be nonnegative, Z_max positive and gamma at least 1");
        }
        let h = omega.spacing();
        let p = (pad / h).ceil() as usize;
        let [ox, oy] = omega.lattice_shape();
        let lower = omega.lower_corner();
        let (box_domain, nx, ny, py) = if omega.dim() == 1 {
            let nx = ox + 2 * p;
            let a = lower[0] - p as f64 * h;
            (Domain::interval(a, a + nx as f64 * h, nx)?, nx, 1, 0)
        } else {
            let (nx, ny) = (ox + 2 * p, oy + 2 * p);
            let x0 = lower[0] - p as f64 * h;
            let y0 = lower[1] - p as f64 * h;
            let rect = Rect::new(x0, x0 + nx as f64 * h, y0, y0 + ny as f64 * h);
            (Domain::masked_2d(rect, nx, ny, |_, _| true)?, nx, ny, p)
        };
        let omega_cells = (0..omega.len())
            .map(|k| {
                let (ix, iy) = omega.lattice_coords(k);
                (ix + p) * ny + (iy + py)
            })
            .collect();
        let (vx, mux) = sine_basis(nx, h);
        let (vy, muy) = if ny == 1 { (DMatrix::from_element(1, 1, 1.0), vec![0.0]) } else { sine_basis(ny, h) };
        let mu: Vec<f64> = (0..nx * ny).map(|k| mux[k / ny] + muy[k % ny]).collect();

        let m = opts.layers;
        let z: Vec<f64> = (0..=m).map(|j| z_max * (j as f64 / m as f64).powf(gamma)).collect();
        let mass = dual_masses(&z, nu);
        let mut profiles = vec![0.0; mu.len() * (m + 1)];
        let mut symbol = Vec::with_capacity(mu.len());
        for (k, &muk) in mu.iter().enumerate() {
            let out = &mut profiles[k * (m + 1)..(k + 1) * (m + 1)];
            mode_profile(muk, &z, &mass, out);
            symbol.push(((1.0 - out[1]) / z[1] + mass[0] * muk) / theta);
        }
        Ok(ModeSolver {
            box_domain: Arc::new(box_domain),
            omega: omega.clone(),
            omega_cells,
            nx,
            ny,
            vx,
            vy,
            mu,
            z,
            profiles,
            symbol,
            sigma,
            nu,
            gamma,
            z_max,
        })
    }

    fn forward(&self, u: &[f64]) -> Vec<f64> {
        let um = DMatrix::from_row_slice(self.nx, self.ny, u);
        let c = self.vx.transpose() * um * &self.vy;
        c.transpose().as_slice().to_vec()
    }

    fn inverse(&self, c: &[f64]) -> Vec<f64> {
        let cm = DMatrix::from_row_slice(self.nx, self.ny, c);
        let u = &self.vx * cm * self.vy.transpose();
        u.transpose().as_slice().to_vec()
    }

    fn scatter(&self, v: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.mu.len()];
        for (&i, &x) in self.omega_cells.iter().zip(v) {
            u[i] = x;
        }
        u
    }

    /// Discrete DtN map on `Ω` (trace supported in `Ω`, result restricted to `Ω`).
    fn dtn(&self, v: &[f64]) -> Vec<f64> {
        let mut c = self.forward(&self.scatter(v));
        for (ci, s) in c.iter_mut().zip(&self.symbol) {
            *ci *= s;
        }
        let u = self.inverse(&c);
        self.omega_cells.iter().map(|&i| u[i]).collect()
    }

    fn dtn_diagonal(&self) -> Vec<f64> {
        let sx = self.vx.map(|v| v * v);
        let sy = self.vy.map(|v| v * v);
        let s = DMatrix::from_row_slice(self.nx, self.ny, &self.symbol);
        let d = sx * s * sy.transpose();
        let flat = d.transpose().as_slice().to_vec();
        self.omega_cells.iter().map(|&i| flat[i]).collect()
    }

    fn field(&self, trace_box: &[f64], kind: DataKind, b: Option<Nonlinearity>) -> ExtensionField {
        let m = self.z.len() - 1;
        let n = self.mu.len();
        let c = self.forward(trace_box);
        let mut values = vec![0.0; n * (m + 1)];
        let mut ck = vec![0.0; n];
        for j in 0..=m {
            for k in 0..n {
                ck[k] = c[k] * self.profiles[k * (m + 1) + j];
            }
            let slice = if j == 0 { trace_box.to_vec() } else { self.inverse(&ck) };
            values[j * n..(j + 1) * n].copy_from_slice(&slice);
        }
        let top = |j: usize| values[j * n..(j + 1) * n].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let base = top(0);
        let decay_ratio = if base > 0.0 { top(m - 1) / base } else { 0.0 };
        ExtensionField {
            box_domain: self.box_domain.clone(),
            omega: self.omega.clone(),
            omega_cells: self.omega_cells.clone(),
            z: self.z.clone(),
            values,
            sigma: self.sigma,
            nu: self.nu,
            gamma: self.gamma,
            z_max: self.z_max,
            kind,
            nonlinearity: b,
            decay_ratio,
            decay_ok: decay_ratio <= 1e-3,
        }
    }
}

/// Preconditioned conjugate gradients for `(D + diag(shift)) x = b`.
fn pcg(solver: &ModeSolver, diag_d: &[f64], shift: &[f64], b: &[f64], rtol: f64) -> Result<Vec<f64>> {
    let n = b.len();
    let apply = |x: &[f64]| -> Vec<f64> {
        let mut y = solver.dtn(x);
        for i in 0..n {
            y[i] += shift[i] * x[i];
        }
        y
    };
    let pre: Vec<f64> = (0..n).map(|i| 1.0 / (diag_d[i] + shift[i])).collect();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut zv: Vec<f64> = r.iter().zip(&pre).map(|(a, p)| a * p).collect();
    let mut p = zv.clone();
    let mut rz: f64 = r.iter().zip(&zv).map(|(a, b)| a * b).sum();
    for _ in 0..(20 * n).max(200) {
        let ap = apply(&p);
        let alpha = rz / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if r.iter().map(|v| v * v).sum::<f64>().sqrt() <= rtol * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            zv[i] = r[i] * pre[i];
        }
        let rz_new: f64 = r.iter().zip(&zv).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = zv[i] + beta * p[i];
        }
    }
    Err(FracError::Numerical("conjugate gradients did not converge on the trace system".into()))
}

/// Solves the extension problem for the given bottom data.
pub fn solve_extension(
    d: &Arc<Domain>,
    sigma: f64,
    data: BoundaryData<'_>,
    opts: &ExtensionOptions,
) -> Result<ExtensionField> {
    let solver = ModeSolver::new(d, sigma, opts)?;
    match data {
        BoundaryData::DirichletTrace(g) => {
            check_on(d, g)?;
            Ok(solver.field(&solver.scatter(g.values()), DataKind::DirichletTrace, None))
        }
        BoundaryData::NeumannFlux(f, b) => {
            check_on(d, f)?;
            if f.values().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return invalid("flux data must be finite and nonnegative");
            }
            let v = solve_trace_system(&solver, f.values(), b)?;
            Ok(solver.field(&solver.scatter(&v), DataKind::NeumannFlux, Some(b.clone())))
        }
    }
}

fn check_on(d: &Arc<Domain>, f: &ScalarField) -> Result<()> {
    if f.domain().as_ref() != d.as_ref() {
        return invalid("boundary data must live on the extension domain");
    }
    Ok(())
}

/// Damped Newton on `D v + B(v) = f` with conjugate-gradient inner solves.
fn solve_trace_system(solver: &ModeSolver, f: &[f64], b: &Nonlinearity) -> Result<Vec<f64>> {
    let n = f.len();
    let diag = solver.dtn_diagonal();
    if let Some(c) = b.is_linear() {
        return pcg(solver, &diag, &vec![c; n], f, 1e-12);
    }
    let fmax = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let target = 1e-9 * (1.0 + fmax);
    let residual = |v: &[f64]| -> Vec<f64> {
        let dv = solver.dtn(v);
        (0..n).map(|i| dv[i] + b.eval(v[i]) - f[i]).collect()
    };
    let norm = |r: &[f64]| r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut v = vec![0.0; n];
    let mut r = residual(&v);
    let mut rn = norm(&r);
    for _ in 0..50 {
        if rn <= target {
            return Ok(v);
        }
        let shift: Vec<f64> = v.iter().map(|&x| b.deriv(x)).collect();
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        let step = pcg(solver, &diag, &shift, &neg, 1e-12)?;
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = v.iter().zip(&step).map(|(x, s)| x + t * s).collect();
            if trial.iter().all(|&x| b.eval(x).is_finite()) {
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
                return Err(FracError::Numerical("Newton line search stalled on the trace system".into()));
            }
        }
    }
    if rn <= target {
        Ok(v)
    } else {
        Err(FracError::Numerical(format!("Newton on the trace system did not converge (residual {rn:e})")))
    }
}

/// `(-Δ_x) u` on the full box with face-Dirichlet lateral conditions.
fn box_laplacian(d: &Domain, u: &[f64]) -> Vec<f64> {
    let h2 = d.spacing() * d.spacing();
    let nb: &[(isize, isize)] = if d.dim() == 1 { &[(-1, 0), (1, 0)] } else { &[(-1, 0), (1, 0), (0, -1), (0, 1)] };
    (0..d.len())
        .map(|i| {
            let (xi, yi) = d.lattice_coords(i);
            let mut s = 0.0;
            for &(dx, dy) in nb {
                s += match d.cell_at(xi as isize + dx, yi as isize + dy) {
                    Some(j) => u[i] - u[j],
                    None => 2.0 * u[i],
                };
            }
            s / h2
        })
        .collect()
}

/// `-(1/θ_σ) ∂_z w(·, 0)` on `Ω`, using the finite-volume boundary flux of the
/// scheme.
pub fn dtn_trace(w: &ExtensionField) -> Result<ScalarField> {
    if w.kind != DataKind::DirichletTrace {
        return invalid("the trace flux is read from fields solved with Dirichlet trace data");
    }
    let (_, theta, _) = extension_constants(w.sigma)?;
    let w0 = w.slice(0);
    let w1 = w.slice(1);
    let lap = box_laplacian(&w.box_domain, w0);
    let m0 = weight_integral(0.0, 0.5 * w.z[1], w.nu);
    let vals = w
        .omega_cells
        .iter()
        .map(|&i| ((w0[i] - w1[i]) / w.z[1] + m0 * lap[i]) / theta)
        .collect();
    ScalarField::new(w.omega.clone(), vals)
}

/// Comparison diagnostics between the Steiner rearrangements of two fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZDiagnostic {
    pub s: Vec<f64>,
    pub z: Vec<f64>,
    /// `values[j][i] = Z(s_i, z_j)`.
    pub values: Vec<Vec<f64>>,
    pub max_z: f64,
    /// One cell mass of the larger bottom trace.
    pub tolerance: f64,
    /// `max_z |Z(0, z)|`.
    pub z_at_origin: f64,
    /// Largest interior value of `-(z^ν Z_zz + p(s) Z_ss)`.
    pub residual_max: f64,
    /// Smallest value of `Z_z(s,0) - θ_σ ∫₀^s (B(w*) - B(ψ*))` over `s ≤ |Ω|`, with
    /// `Z_z(s,0)` taken from the boundary flux on the top level sets, when both fields
    /// were solved with flux data and the same `B`.
    pub boundary_min: Option<f64>,
}

/// Slice-wise decreasing rearrangement in `x` (values sorted in decreasing order).
pub fn steiner_rearrangement(w: &ExtensionField) -> Vec<Vec<f64>> {
    (0..w.z.len())
        .map(|j| {
            let mut s: Vec<f64> = w.slice(j).iter().map(|v| v.abs()).collect();
            s.sort_by(|a, b| b.total_cmp(a));
            s
        })
        .collect()
}

fn cumulative(sorted: &[f64], len: usize, cell: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(len + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for i in 0..len {
        acc += sorted.get(i).copied().unwrap_or(0.0) * cell;
        out.push(acc);
    }
    out
}

/// `Z(s,z) = ∫₀^s (w*(τ,z) − ψ*(τ,z)) dτ` on the shared grid `s_i = i·|cell|`.
pub fn z_diagnostic(w: &ExtensionField, psi: &ExtensionField) -> Result<ZDiagnostic> {
    if (w.sigma - psi.sigma).abs() > 1e-15 {
        return invalid("fields were solved with different sigma");
    }
    if w.z.len() != psi.z.len() || w.z.iter().zip(&psi.z).any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + a.abs())) {
        return invalid("fields live on different z-grids");
    }
    let cell = w.box_domain.cell_measure();
    if (cell - psi.box_domain.cell_measure()).abs() > 1e-12 * cell || w.box_domain.dim() != psi.box_domain.dim() {
        return invalid("fields live on incompatible lateral grids");
    }
    let dim = w.box_domain.dim();
    let len = w.nbox().max(psi.nbox());
    let sw = steiner_rearrangement(w);
    let sp = steiner_rearrangement(psi);
    let values: Vec<Vec<f64>> = sw
        .iter()
        .zip(&sp)
        .map(|(a, b)| {
            let ca = cumulative(a, len, cell);
            let cb = cumulative(b, len, cell);
            ca.iter().zip(&cb).map(|(x, y)| x - y).collect()
        })
        .collect();
    let s: Vec<f64> = (0..=len).map(|i| i as f64 * cell).collect();
    let z = w.z.clone();
    let max_z = values.iter().flatten().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let z_at_origin = values.iter().fold(0.0f64, |m, row| m.max(row[0].abs()));

    let n = dim as f64;
    let omega_n = unit_ball_measure(dim);
    let p = |s: f64| n * n * omega_n.powf(2.0 / n) * s.powf(2.0 - 2.0 / n);
    let mut residual_max = f64::NEG_INFINITY;
    for j in 1..z.len() - 1 {
        let (h0, h1) = (z[j] - z[j - 1], z[j + 1] - z[j]);
        for i in 1..len {
            let zz = 2.0
                * ((values[j + 1][i] - values[j][i]) / h1 - (values[j][i] - values[j - 1][i]) / h0)
                / (h0 + h1);
            let ss = (values[j][i + 1] - 2.0 * values[j][i] + values[j][i - 1]) / (cell * cell);
            residual_max = residual_max.max(-(z[j].powf(w.nu) * zz + p(s[i]) * ss));
        }
    }

    let boundary_min = match (&w.nonlinearity, &psi.nonlinearity) {
        (Some(b), Some(b2)) if b.label() == b2.label() => {
            let (_, theta, _) = extension_constants(w.sigma)?;
            let (fw, bw) = top_set_sums(w, b);
            let (fp, bp) = top_set_sums(psi, b);
            let mut worst = f64::INFINITY;
            for i in 0..fw.len().min(fp.len()) {
                let dz = fp[i] - fw[i];
                worst = worst.min(dz - theta * (bw[i] - bp[i]));
            }
            Some(worst)
        }
        _ => None,
    };
    let tolerance = cell * sw[0].first().copied().unwrap_or(0.0).max(sp[0].first().copied().unwrap_or(0.0));
    Ok(ZDiagnostic { s, z, values, max_z, tolerance, z_at_origin, residual_max, boundary_min })
}

/// Cumulative sums over the top-`s` cells of `w(·,0)` in `Ω` of the scheme's
/// boundary flux `-w_z(x,0)` and of `B(w(x,0))`, both times the cell measure.
fn top_set_sums(w: &ExtensionField, b: &Nonlinearity) -> (Vec<f64>, Vec<f64>) {
    let w0 = w.slice(0);
    let w1 = w.slice(1);
    let lap = box_laplacian(&w.box_domain, w0);
    let m0 = weight_integral(0.0, 0.5 * w.z[1], w.nu);
    let cell = w.box_domain.cell_measure();
    let mut order = w.omega_cells.clone();
    order.sort_by(|&a, &b| w0[b].total_cmp(&w0[a]).then(a.cmp(&b)));
    let mut flux = vec![0.0];
    let mut bsum = vec![0.0];
    for &i in &order {
        flux.push(flux.last().unwrap() + cell * ((w0[i] - w1[i]) / w.z[1] + m0 * lap[i]));
        bsum.push(bsum.last().unwrap() + cell * b.eval(w0[i]));
    }
    (flux, bsum)
}

impl ZDiagnostic {
    /// `Z ≤ tol` everywhere.
    pub fn holds(&self) -> bool {
        self.max_z <= self.tolerance
    }
}

/// Solves the flux problem with data `f` on `Ω` and with `f^#` on the Schwarz
/// ball, then compares the two extensions.
pub fn extension_comparison(
    d: &Arc<Domain>,
    sigma: f64,
    b: &Nonlinearity,
    f: &ScalarField,
    opts: &ExtensionOptions,
) -> Result<ZDiagnostic> {
    let ball = Arc::new(d.schwarz_ball());
    let fsharp = spherical_rearrangement_onto(f, ball.clone());
    let w = solve_extension(d, sigma, BoundaryData::NeumannFlux(f, b), opts)?;
    let [nx, ny] = w.box_domain.lattice_shape();
    let width = nx.max(ny) as f64 * d.spacing();
    let ball_pad = 0.5 * (width - ball.diameter()).max(0.0);
    let ball_opts = ExtensionOptions { box_pad: Some(ball_pad), z_max: Some(w.z_max), gamma: Some(w.gamma), ..*opts };
    let psi = solve_extension(&ball, sigma, BoundaryData::NeumannFlux(&fsharp, b), &ball_opts)?;
    z_diagnostic(&w, &psi)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct DifferentiationCheck {
    pub max_defect: f64,
    /// Level sets with positive measure were found; the check was skipped.
    pub skipped: bool,
}

/// Compares `∫_{w > w*(s)} ∂_z w dx` with `∂_z ∫₀^s w*(τ,z) dτ` at interior
/// slices, for `s` at the ends of strict level sets.
pub fn first_order_differentiation_check(w: &ExtensionField) -> DifferentiationCheck {
    let cell = w.box_domain.cell_measure();
    let allowed_ties = if w.box_domain.dim() == 1 { 2 } else { 8 };
    let mut worst = 0.0f64;
    for j in 1..w.z.len() - 1 {
        let slice = w.slice(j);
        let mut order: Vec<usize> = (0..slice.len()).collect();
        order.sort_by(|&a, &b| slice[b].total_cmp(&slice[a]));
        let peak = slice[order[0]].abs().max(f64::MIN_POSITIVE);
        let tie = |a: f64, b: f64| (a - b).abs() <= 1e-12 * peak;
        let mut run = 1;
        for k in 1..order.len() {
            let (a, b) = (slice[order[k - 1]], slice[order[k]]);
            if tie(a, b) && a > 1e-12 * peak {
                run += 1;
                if run > allowed_ties {
                    return DifferentiationCheck { max_defect: f64::NAN, skipped: true };
                }
            } else {
                run = 1;
            }
        }
        let dz = w.z[j + 1] - w.z[j - 1];
        let sorted = |jj: usize| {
            let mut s: Vec<f64> = w.slice(jj).to_vec();
            s.sort_by(|a, b| b.total_cmp(a));
            s
        };
        let (up, down) = (sorted(j + 1), sorted(j - 1));
        let (above, below) = (w.slice(j + 1), w.slice(j - 1));
        let mut lhs = 0.0;
        let (mut cu, mut cd) = (0.0, 0.0);
        for k in 0..order.len() {
            let i = order[k];
            if slice[i] <= 1e-12 * peak {
                break;
            }
            lhs += (above[i] - below[i]) / dz * cell;
            cu += up[k] * cell;
            cd += down[k] * cell;
            let level_end = k + 1 == order.len() || !tie(slice[i], slice[order[k + 1]]);
            if level_end {
                worst = worst.max((lhs - (cu - cd) / dz).abs());
            }
        }
    }
    DifferentiationCheck { max_defect: worst, skipped: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_at_sigma_one() {
        let (k, t, nu) = extension_constants(1.0).unwrap();
        assert!((k - 1.0).abs() < 1e-14 && (t - 1.0).abs() < 1e-14 && nu == 0.0);
    }

    #[test]
    fn sine_basis_diagonalizes_laplacian() {
        let d = Domain::interval(0.0, 1.0, 12).unwrap();
        let (v, mu) = sine_basis(12, d.spacing());
        let lap = crate::fraclap::dirichlet_laplacian(&d);
        let check = v.transpose() * lap * &v;
        for i in 0..12 {
            for j in 0..12 {
                let expected = if i == j { mu[i] } else { 0.0 };
                assert!((check[(i, j)] - expected).abs() < 1e-9 * mu[11]);
            }
        }
    }

    #[test]
    fn zero_trace_gives_zero_field() {
        let d = Arc::new(Domain::interval(-1.0, 1.0, 16).unwrap());
        let g = ScalarField::zeros(d.clone());
        let w = solve_extension(&d, 0.7, BoundaryData::DirichletTrace(&g), &ExtensionOptions::default()).unwrap();
        assert!(w.values.iter().all(|v| *v == 0.0));
        assert!(dtn_trace(&w).unwrap().values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn symbol_approximates_power_law() {
        for sigma in [0.5, 1.0, 1.5] {
            let d = Arc::new(Domain::interval(-1.0, 1.0, 64).unwrap());
            let opts = ExtensionOptions { layers: 400, ..Default::default() };
            let s = ModeSolver::new(&d, sigma, &opts).unwrap();
            for k in [5usize, 20, 60] {
                let exact = s.mu[k].powf(sigma / 2.0);
                assert!((s.symbol[k] - exact).abs() < 0.01 * exact, "sigma {sigma} k {k}: {} vs {exact}", s.symbol[k]);
            }
        }
    }

    #[test]
    fn symbol_error_shrinks_with_layers() {
        let d = Arc::new(Domain::interval(-1.0, 1.0, 64).unwrap());
        for sigma in [0.5, 1.0, 1.5] {
            let err = |layers| {
                let s = ModeSolver::new(&d, sigma, &ExtensionOptions { layers, ..Default::default() }).unwrap();
                (10..64).map(|k| (s.symbol[k] / s.mu[k].powf(sigma / 2.0) - 1.0).abs()).fold(0.0, f64::max)
            };
            let (coarse, fine) = (err(48), err(192));
            assert!(fine < 0.5 * coarse, "sigma {sigma}: {coarse} -> {fine}");
        }
    }

    #[test]
    fn maximum_principle_and_linearity() {
        let d = Arc::new(Domain::interval(-1.0, 1.0, 32).unwrap());
        let opts = ExtensionOptions { layers: 48, ..Default::default() };
        let g1 = ScalarField::from_fn(d.clone(), |x, _| 1.0 - x * x);
        let g2 = ScalarField::from_fn(d.clone(), |x, _| (3.0 * x).cos().abs());
        let w1 = solve_extension(&d, 0.8, BoundaryData::DirichletTrace(&g1), &opts).unwrap();
        assert!(w1.values.iter().all(|v| *v >= -1e-12));
        let mix = g1.with_values(g1.values().iter().zip(g2.values()).map(|(a, b)| 2.0 * a + b).collect()).unwrap();
        let w2 = solve_extension(&d, 0.8, BoundaryData::DirichletTrace(&g2), &opts).unwrap();
        let wm = solve_extension(&d, 0.8, BoundaryData::DirichletTrace(&mix), &opts).unwrap();
        let (t1, t2, tm) = (dtn_trace(&w1).unwrap(), dtn_trace(&w2).unwrap(), dtn_trace(&wm).unwrap());
        for i in 0..d.len() {
            let expect = 2.0 * t1.values()[i] + t2.values()[i];
            assert!((tm.values()[i] - expect).abs() < 1e-9 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn flux_problem_reproduces_dirichlet_trace() {
        let d = Arc::new(Domain::interval(-1.0, 1.0, 32).unwrap());
        let opts = ExtensionOptions { layers: 48, ..Default::default() };
        let f = ScalarField::from_fn(d.clone(), |x, _| 1.0 + x);
        let b = Nonlinearity::Saturating;
        let w = solve_extension(&d, 1.2, BoundaryData::NeumannFlux(&f, &b), &opts).unwrap();
        let v = w.trace();
        let w2 = solve_extension(&d, 1.2, BoundaryData::DirichletTrace(&v), &opts).unwrap();
        let t = dtn_trace(&w2).unwrap();
        for i in 0..d.len() {
            let lhs = t.values()[i] + b.eval(v.values()[i]);
            assert!((lhs - f.values()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn identical_fields_give_zero_z() {
        let d = Arc::new(Domain::interval(-1.0, 1.0, 16).unwrap());
        let g = ScalarField::from_fn(d.clone(), |x, _| 1.0 - x.abs());
        let w = solve_extension(&d, 1.0, BoundaryData::DirichletTrace(&g), &ExtensionOptions { layers: 16, ..Default::default() })
            .unwrap();
        let z = z_diagnostic(&w, &w).unwrap();
        assert_eq!(z.max_z, 0.0);
        assert_eq!(z.z_at_origin, 0.0);
        assert!(z.residual_max.abs() < 1e-12);
    }

    #[test]
    fn two_intervals_are_dominated_by_the_ball() {
        let d = Arc::new(Domain::union_of_intervals(&[(0.0, 1.0), (2.0, 3.0)], 1.0 / 48.0).unwrap());
        let f = ScalarField::from_fn(d.clone(), |x, _| if x < 0.5 { 1.0 } else { 0.0 });
        let b = Nonlinearity::linear(1.0).unwrap();
        let z = extension_comparison(&d, 1.0, &b, &f, &ExtensionOptions { layers: 32, ..Default::default() }).unwrap();
        assert!(z.holds(), "max Z {} tol {}", z.max_z, z.tolerance);
        assert_eq!(z.z_at_origin, 0.0);
        assert!(z.boundary_min.unwrap() > -z.tolerance, "{:?} {}", z.boundary_min, z.tolerance);
    }

    #[test]
    fn export_writes_header_and_values() {
        let d = Arc::new(Domain::interval(0.0, 1.0, 4).unwrap());
        let g = ScalarField::constant(d.clone(), 1.0);
        let w = solve_extension(&d, 1.0, BoundaryData::DirichletTrace(&g), &ExtensionOptions { layers: 4, ..Default::default() })
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (bin, json) = (dir.path().join("w.bin"), dir.path().join("w.json"));
        w.export(&bin, &json).unwrap();
        assert_eq!(fs::read(&bin).unwrap().len(), 8 * w.values.len());
        let h: ExtensionHeader = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
        assert_eq!((h.nx, h.ny, h.m), (w.nbox(), 1, 4));
    }

    #[test]
    fn differentiation_check_on_synthetic_fields() {
        let b = Arc::new(Domain::interval(-1.0, 1.0, 40).unwrap());
        let z: Vec<f64> = (0..=20).map(|j| j as f64 * 0.05).collect();
        let sep = ExtensionField::synthetic(b.clone(), z.clone(), 1.0, |x, _, z| (-z).exp() * (1.0 - x * x)).unwrap();
        let r = first_order_differentiation_check(&sep);
        assert!(!r.skipped && r.max_defect < 1e-10);
        let flat = ExtensionField::synthetic(b.clone(), z.clone(), 1.0, |x, _, _| 1.0 - x.abs()).unwrap();
        assert!(first_order_differentiation_check(&flat).max_defect < 1e-12);
        let plateau =
            ExtensionField::synthetic(b, z, 1.0, |x, _, z| (1.0 + z) * (1.0 - x.abs()).min(0.5)).unwrap();
        assert!(first_order_differentiation_check(&plateau).skipped);
    }
}
