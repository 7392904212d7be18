//! Dense matrices for the restricted and spectral fractional Laplacians.
//!
//! The restricted operator acts on null-extensions of cell-wise constant
//! fields. Row `i` collocates the hypersingular integral at the center of cell
//! `i`:
//!
//! * off-diagonal entries are `-c(N,σ) h^{-σ} w(j - i)` with `w` the exact
//!   lattice integral of the kernel over cell `j`;
//! * the diagonal is `c(N,σ) ∫_{ℝᴺ∖cell_i} |x_i - y|^{-N-σ} dy`, which splits
//!   into the interior couplings plus the exterior killing coefficient `T_i`;
//! * an optional nearest-neighbour stencil removes the leading `O(h^{2-σ})`
//!   collocation error (see [`crate::kernel::curvature_constant`]).

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain::{Domain, ScalarField};
use crate::error::{check_sigma, invalid, FracError, Result};
use crate::kernel::{curvature_constant, self_complement, WeightTable};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    Restricted,
    Spectral,
}

/// `c(N,σ) = 2^σ Γ((N+σ)/2) / (π^{N/2} |Γ(-σ/2)|)`, the constant for which the
/// singular integral has Fourier symbol `|ξ|^σ`.
pub fn normalization_constant(dim: usize, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if dim != 1 && dim != 2 {
        return invalid(format!("unsupported dimension {dim}"));
    }
    let n = dim as f64;
    let num = 2f64.powf(sigma) * libm::tgamma((n + sigma) / 2.0);
    let den = PI.powf(n / 2.0) * libm::tgamma(-sigma / 2.0).abs();
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyOptions {
    /// Add the nearest-neighbour stencil cancelling the `h^{2-σ}` error term.
    /// For small `σ` its weight is negative and the stencil is skipped, so the
    /// matrix keeps nonpositive off-diagonal entries.
    pub curvature_correction: bool,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions { curvature_correction: true }
    }
}

#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    domain: Arc<Domain>,
    sigma: f64,
    kind: OperatorKind,
    matrix: DMatrix<f64>,
    killing: Vec<f64>,
    exterior: Vec<f64>,
    options: AssemblyOptions,
}

impl OperatorMatrix {
    /// Wraps an existing matrix (used when reading matrix files).
    pub fn from_parts(domain: Arc<Domain>, sigma: f64, kind: OperatorKind, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != domain.len() || matrix.ncols() != domain.len() {
            return invalid("matrix size does not match the domain");
        }
        let killing: Vec<f64> = matrix.row_iter().map(|r| r.sum()).collect();
        let exterior = killing.clone();
        Ok(OperatorMatrix { domain, sigma, kind, matrix, killing, exterior, options: AssemblyOptions::default() })
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    /// Killing coefficients `T_i` (row sums): the discrete weight of the
    /// exterior Dirichlet condition, so that `A·1_Ω = T`.
    pub fn killing(&self) -> &[f64] {
        &self.killing
    }

    /// The bare exterior integral `c(N,σ) ∫_{ℝᴺ∖Ω} |x_i - y|^{-N-σ} dy`.
    pub fn exterior_integral(&self) -> &[f64] {
        &self.exterior
    }

    pub fn options(&self) -> AssemblyOptions {
        self.options
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        linalg::matvec(&self.matrix, u)
    }

    pub fn apply_field(&self, u: &ScalarField) -> Result<ScalarField> {
        self.check_field(u)?;
        u.with_values(self.apply(u.values()))
    }

    pub(crate) fn check_field(&self, u: &ScalarField) -> Result<()> {
        if u.len() != self.len() || **u.domain() != *self.domain {
            return invalid("field does not live on the operator's domain");
        }
        Ok(())
    }
}

/// Assembles the restricted fractional Laplacian `(-Δ)^{σ/2}` on `d`.
pub fn assemble_restricted(d: &Arc<Domain>, sigma: f64) -> Result<OperatorMatrix> {
    assemble_restricted_with(d, sigma, AssemblyOptions::default())
}

pub fn assemble_restricted_with(d: &Arc<Domain>, sigma: f64, options: AssemblyOptions) -> Result<OperatorMatrix> {
    check_sigma(sigma)?;
    let dim = d.dim();
    let c = normalization_constant(dim, sigma)?;
    let scale = c * d.spacing().powf(-sigma);
    let n = d.len();
    let [nx, ny] = d.lattice_shape();
    let table = WeightTable::new(dim, sigma, nx, ny);
    let coords: Vec<(usize, usize)> = (0..n).map(|k| d.lattice_coords(k)).collect();

    let diag = scale * self_complement(dim, sigma);
    let mut matrix = DMatrix::<f64>::zeros(n, n);
    let mut exterior = vec![0.0; n];
    for j in 0..n {
        let (xj, yj) = coords[j];
        let mut coupled = 0.0;
        for i in 0..n {
            if i == j {
                continue;
            }
            let (xi, yi) = coords[i];
            let w = table.get(xi.abs_diff(xj), yi.abs_diff(yj));
            matrix[(i, j)] = -scale * w;
            coupled += w;
        }
        matrix[(j, j)] = diag;
        exterior[j] = diag - scale * coupled;
    }
    let mut killing = exterior.clone();

    if options.curvature_correction {
        let e = (scale * curvature_constant(dim, sigma)).max(0.0);
        let neighbours: &[(isize, isize)] =
            if dim == 1 { &[(-1, 0), (1, 0)] } else { &[(-1, 0), (1, 0), (0, -1), (0, 1)] };
        for i in 0..n {
            let (xi, yi) = coords[i];
            matrix[(i, i)] += e * neighbours.len() as f64;
            for &(dx, dy) in neighbours {
                match d.cell_at(xi as isize + dx, yi as isize + dy) {
                    Some(j) => matrix[(i, j)] -= e,
                    None => killing[i] += e,
                }
            }
        }
    }

    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(FracError::Numerical("non-finite entry in assembled operator".into()));
    }
    Ok(OperatorMatrix {
        domain: d.clone(),
        sigma,
        kind: OperatorKind::Restricted,
        matrix,
        killing,
        exterior,
        options,
    })
}

/// Five-point (three-point in 1D) Dirichlet Laplacian with the boundary
/// condition imposed on cell faces (ghost value `-u` across each face).
pub fn dirichlet_laplacian(d: &Domain) -> DMatrix<f64> {
    let n = d.len();
    let h2 = d.spacing() * d.spacing();
    let neighbours: &[(isize, isize)] =
        if d.dim() == 1 { &[(-1, 0), (1, 0)] } else { &[(-1, 0), (1, 0), (0, -1), (0, 1)] };
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let (xi, yi) = d.lattice_coords(i);
        for &(dx, dy) in neighbours {
            match d.cell_at(xi as isize + dx, yi as isize + dy) {
                Some(j) => {
                    m[(i, i)] += 1.0 / h2;
                    m[(i, j)] -= 1.0 / h2;
                }
                None => m[(i, i)] += 2.0 / h2,
            }
        }
    }
    m
}

/// Spectral fractional Laplacian: the Dirichlet Laplacian's eigenvalues raised
/// to `σ/2` on the same eigenvectors.
pub fn assemble_spectral(d: &Arc<Domain>, sigma: f64) -> Result<OperatorMatrix> {
    if !(sigma.is_finite() && sigma > 0.0 && sigma <= 2.0) {
        return invalid(format!("sigma must lie in (0,2] for the spectral operator, got {sigma}"));
    }
    let lap = dirichlet_laplacian(d);
    let eig = linalg::full_eigen(&lap);
    if eig.values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(FracError::Numerical("Dirichlet Laplacian eigendecomposition failed".into()));
    }
    let powered: Vec<f64> = eig.values.iter().map(|v| v.powf(sigma / 2.0)).collect();
    let v = &eig.vectors;
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |r, c| v[(r, c)] * powered[c]);
    let mut matrix = &scaled * v.transpose();
    let mt = matrix.transpose();
    matrix = 0.5 * (&matrix + mt);
    OperatorMatrix::from_parts(d.clone(), sigma, OperatorKind::Spectral, matrix)
}

/// `⟨A u, u⟩ · |cell|`, the discrete energy of `u`.
pub fn gagliardo_form(a: &OperatorMatrix, u: &ScalarField) -> Result<f64> {
    if a.kind() != OperatorKind::Restricted {
        return invalid("the Gagliardo form is defined for the restricted operator only");
    }
    a.check_field(u)?;
    let au = a.apply(u.values());
    Ok(au.iter().zip(u.values()).map(|(x, y)| x * y).sum::<f64>() * u.domain().cell_measure())
}

/// The same energy evaluated as a pair sum straight from the kernel weights:
/// `½ Σ_{i≠j} W_ij (u_i - u_j)² + Σ_i T_i u_i²`, times the cell measure.
pub fn gagliardo_double_sum(a: &OperatorMatrix, u: &ScalarField) -> Result<f64> {
    if a.kind() != OperatorKind::Restricted {
        return invalid("the Gagliardo form is defined for the restricted operator only");
    }
    a.check_field(u)?;
    let d = a.domain();
    let dim = d.dim();
    let sigma = a.sigma();
    let scale = normalization_constant(dim, sigma)? * d.spacing().powf(-sigma);
    let [nx, ny] = d.lattice_shape();
    let table = WeightTable::new(dim, sigma, nx, ny);
    let v = u.values();
    let n = v.len();
    let mut pair = 0.0;
    let mut ext = 0.0;
    for i in 0..n {
        let (xi, yi) = d.lattice_coords(i);
        let mut coupled = 0.0;
        for j in 0..n {
            if j == i {
                continue;
            }
            let (xj, yj) = d.lattice_coords(j);
            let w = table.get(xi.abs_diff(xj), yi.abs_diff(yj));
            coupled += w;
            let diff = v[i] - v[j];
            pair += 0.5 * w * diff * diff;
        }
        ext += (self_complement(dim, sigma) - coupled) * v[i] * v[i];
    }
    let mut total = scale * (pair + ext);
    if a.options().curvature_correction {
        let e = (scale * curvature_constant(dim, sigma)).max(0.0);
        let neighbours: &[(isize, isize)] =
            if dim == 1 { &[(-1, 0), (1, 0)] } else { &[(-1, 0), (1, 0), (0, -1), (0, 1)] };
        for i in 0..n {
            let (xi, yi) = d.lattice_coords(i);
            for &(dx, dy) in neighbours {
                // Interior pairs are visited from both ends.
                total += match d.cell_at(xi as isize + dx, yi as isize + dy) {
                    Some(j) => 0.5 * e * (v[i] - v[j]).powi(2),
                    None => e * v[i] * v[i],
                };
            }
        }
    }
    Ok(total * d.cell_measure())
}
