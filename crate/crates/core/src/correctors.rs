//! Periodic correctors `phi_i`, fluxes `q_i`, flux correctors `sigma_i12`
//! and the effective tensor on a torus.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{self, Constraint, SolveOptions, SolveReport, Stiffness};
use crate::grid::Grid;

pub type Matrix2 = [[f64; 2]; 2];

/// Correctors of one coefficient sample on a periodic cell.
#[derive(Debug, Clone)]
pub struct CorrectorSet {
    /// Nodal `phi_i`, mean zero.
    pub phi: [Vec<f64>; 2],
    /// Cell gradients of `phi_i`.
    pub grad_phi: [Vec<[f64; 2]>; 2],
    /// `q_i = a (grad phi_i + e_i) - abar e_i` per cell.
    pub flux: [Vec<[f64; 2]>; 2],
    /// Nodal `sigma_i12`, mean zero (`sigma_i21 = -sigma_i12` is implied).
    pub sigma: [Vec<f64>; 2],
    /// `abar[j][i] = <a (d_j phi_i + delta_ji)>`.
    pub a_eff: Matrix2,
    /// Relative L2 residual of `div sigma_i - q_i`.
    pub sigma_residual: [f64; 2],
    pub cell_size: f64,
    pub reports: Vec<SolveReport>,
}

/// Solve the cell problem `div a (grad phi_i + e_i) = 0` with periodic,
/// mean-zero `phi_i`.
pub fn solve_corrector(
    stiffness: &Stiffness,
    a: &[f64],
    i: usize,
    opts: SolveOptions,
) -> Result<(Vec<f64>, Vec<[f64; 2]>, SolveReport)> {
    let grid = stiffness.grid();
    if stiffness.constraint() != Constraint::PeriodicMeanZero {
        return Err(Error::invalid("correctors live on a periodic torus"));
    }
    let f: Vec<[f64; 2]> = a
        .iter()
        .map(|&c| if i == 0 { [c, 0.0] } else { [0.0, c] })
        .collect();
    let (phi, report) = fem::solve_div_f(stiffness, &f, opts)?;
    let grad = fem::gradient(grid, &phi);
    Ok((phi, grad, report))
}

/// `abar e_i = mean of a (grad phi_i + e_i)`, checked against the ellipticity box.
pub fn effective_tensor(
    a: &[f64],
    grad_phi: &[Vec<[f64; 2]>; 2],
    lambda: Option<f64>,
) -> Result<Matrix2> {
    let n = a.len() as f64;
    let mut m = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let delta = if i == j { 1.0 } else { 0.0 };
            // shifted by the first term so constant integrands average exactly
            let term = |k: usize| a[k] * (grad_phi[i][k][j] + delta);
            let base = term(0);
            m[j][i] = base + (0..a.len()).map(|k| term(k) - base).sum::<f64>() / n;
        }
    }
    if let Some(lam) = lambda {
        check_ellipticity(&m, lam)?;
    }
    Ok(m)
}

/// Rayleigh quotients at `e1`, `e2`, `(e1 + e2)/sqrt 2` must lie in `[lambda, 1/lambda]`.
pub fn check_ellipticity(m: &Matrix2, lambda: f64) -> Result<()> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let slack = 1e-9;
    for xi in [[1.0, 0.0], [0.0, 1.0], [s, s]] {
        let q = xi[0] * (m[0][0] * xi[0] + m[0][1] * xi[1])
            + xi[1] * (m[1][0] * xi[0] + m[1][1] * xi[1]);
        if q < lambda * (1.0 - slack) || q > (1.0 + slack) / lambda {
            return Err(Error::EllipticityViolation(format!(
                "quotient {q} at {xi:?} outside [{lambda}, {}]",
                1.0 / lambda
            )));
        }
    }
    Ok(())
}

/// Solve `-Laplace sigma_i12 = d_1 q_i2 - d_2 q_i1` (periodic, mean zero) on
/// the unit-coefficient stiffness. Returns the nodal potential and the
/// relative L2 residual of `(d_2 sigma, -d_1 sigma) - q_i`.
pub fn solve_flux_corrector(
    laplacian: &Stiffness,
    q: &[[f64; 2]],
    opts: SolveOptions,
) -> Result<(Vec<f64>, f64, SolveReport)> {
    let grid = laplacian.grid();
    let f: Vec<[f64; 2]> = q.iter().map(|v| [v[1], -v[0]]).collect();
    let (sigma, report) = fem::solve_div_f(laplacian, &f, opts)?;
    let residual = flux_residual(grid, &sigma, q);
    Ok((sigma, residual, report))
}

/// `||div sigma_i - q_i|| / ||q_i||` (zero when `q_i` vanishes identically).
pub fn flux_residual(grid: &Grid, sigma: &[f64], q: &[[f64; 2]]) -> f64 {
    let gs = fem::gradient(grid, sigma);
    let mut num = 0.0;
    let mut den = 0.0;
    for (g, qc) in gs.iter().zip(q) {
        num += (g[1] - qc[0]).powi(2) + (-g[0] - qc[1]).powi(2);
        den += qc[0] * qc[0] + qc[1] * qc[1];
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

impl CorrectorSet {
    /// Correctors, fluxes, flux correctors and `abar` of one sample.
    pub fn compute(
        grid: &Grid,
        a: &[f64],
        lambda: Option<f64>,
        opts: SolveOptions,
    ) -> Result<Self> {
        if !grid.is_periodic() {
            return Err(Error::invalid("correctors live on a periodic torus"));
        }
        let stiffness = fem::assemble(grid, a, Constraint::PeriodicMeanZero)?;
        let mut reports = Vec::new();
        let (phi0, g0, r0) = solve_corrector(&stiffness, a, 0, opts)?;
        let (phi1, g1, r1) = solve_corrector(&stiffness, a, 1, opts)?;
        reports.extend([r0, r1]);
        let grad_phi = [g0, g1];
        let a_eff = effective_tensor(a, &grad_phi, lambda)?;
        let flux: [Vec<[f64; 2]>; 2] = std::array::from_fn(|i| {
            a.iter()
                .zip(&grad_phi[i])
                .map(|(&c, g)| {
                    let mut v = [c * g[0], c * g[1]];
                    v[i] += c;
                    [v[0] - a_eff[0][i], v[1] - a_eff[1][i]]
                })
                .collect()
        });
        let laplacian = fem::assemble(grid, &vec![1.0; a.len()], Constraint::PeriodicMeanZero)?;
        let (s0, res0, r2) = solve_flux_corrector(&laplacian, &flux[0], opts)?;
        let (s1, res1, r3) = solve_flux_corrector(&laplacian, &flux[1], opts)?;
        reports.extend([r2, r3]);
        Ok(CorrectorSet {
            phi: [phi0, phi1],
            grad_phi,
            flux,
            sigma: [s0, s1],
            a_eff,
            sigma_residual: [res0, res1],
            cell_size: grid.extent(),
            reports,
        })
    }

    /// `(phi_1, phi_2, sigma_1, sigma_2)` at the cell centers.
    pub fn psi_cells(&self, grid: &Grid) -> Vec<[f64; 4]> {
        let p0 = fem::cell_values(grid, &self.phi[0]);
        let p1 = fem::cell_values(grid, &self.phi[1]);
        let s0 = fem::cell_values(grid, &self.sigma[0]);
        let s1 = fem::cell_values(grid, &self.sigma[1]);
        (0..grid.cell_count())
            .map(|c| [p0[c], p1[c], s0[c], s1[c]])
            .collect()
    }

    /// `|grad phi|` (Frobenius over both directions) per cell.
    pub fn grad_phi_norm(&self) -> Vec<f64> {
        self.grad_phi[0]
            .iter()
            .zip(&self.grad_phi[1])
            .map(|(a, b)| (a[0] * a[0] + a[1] * a[1] + b[0] * b[0] + b[1] * b[1]).sqrt())
            .collect()
    }
}

/// Sample mean of a set of tensors with the standard error of each entry.
pub fn ensemble_tensor(samples: &[Matrix2]) -> Result<(Matrix2, Matrix2)> {
    if samples.is_empty() {
        return Err(Error::InsufficientSamples("no effective tensors".into()));
    }
    let n = samples.len() as f64;
    let mut mean = [[0.0; 2]; 2];
    let mut se = [[0.0; 2]; 2];
    for j in 0..2 {
        for i in 0..2 {
            let m = samples.iter().map(|s| s[j][i]).sum::<f64>() / n;
            mean[j][i] = m;
            if samples.len() > 1 {
                let var = samples.iter().map(|s| (s[j][i] - m).powi(2)).sum::<f64>() / (n - 1.0);
                se[j][i] = (var / n).sqrt();
            }
        }
    }
    Ok((mean, se))
}

/// Harmonic and arithmetic means of a coefficient (Reuss and Voigt bounds).
pub fn voigt_reuss(a: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let harmonic = n / a.iter().map(|x| 1.0 / x).sum::<f64>();
    let arithmetic = a.iter().sum::<f64>() / n;
    (harmonic, arithmetic)
}

/// Growth of corrector oscillations with the radius, averaged over samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SublinearityProfile {
    pub radii: Vec<f64>,
    /// `mean over anchors and samples of avg_{B_2R} |Psi - (Psi)_2R|^(2p)`, then `^(1/p)`.
    pub oscillation: Vec<f64>,
    /// `<|phi(x + R e) - phi(x)|^2>^(1/2)` over anchors, samples, directions.
    pub increment: Vec<f64>,
}

/// Oscillation and increment moments of `(phi, sigma)` at each radius.
///
/// Anchors are cell centers on a stride of `anchor_stride` cells.
pub fn sublinearity_profile(
    grid: &Grid,
    samples: &[CorrectorSet],
    radii: &[f64],
    p: f64,
    anchor_stride: usize,
) -> Result<SublinearityProfile> {
    if samples.is_empty() {
        return Err(Error::InsufficientSamples("no corrector samples".into()));
    }
    let limit = grid.extent() / 4.0;
    for &r in radii {
        if r > limit * (1.0 + 1e-12) {
            return Err(Error::RadiusTooLarge { radius: r, limit });
        }
    }
    let stride = anchor_stride.max(1);
    let n = grid.n();
    let anchors: Vec<(usize, usize)> = (0..n)
        .step_by(stride)
        .flat_map(|j| (0..n).step_by(stride).map(move |i| (i, j)))
        .collect();
    let mut oscillation = Vec::with_capacity(radii.len());
    let mut increment = Vec::with_capacity(radii.len());
    let psis: Vec<Vec<[f64; 4]>> = samples.iter().map(|s| s.psi_cells(grid)).collect();
    for &r in radii {
        let mut osc = 0.0;
        let mut count = 0.0;
        for psi in &psis {
            for &(i, j) in &anchors {
                let center = grid.cell_center(grid.cell_index(i, j));
                osc += ball_oscillation(grid, psi, center, 2.0 * r, p).powf(1.0 / p);
                count += 1.0;
            }
        }
        oscillation.push(osc / count);
        let shift = (r / grid.h()).round() as usize;
        let mut inc = 0.0;
        let mut cnt = 0.0;
        for s in samples {
            for phi in &s.phi {
                for j in 0..n {
                    for i in 0..n {
                        let base = phi[grid.node_index(i, j)];
                        let dx = phi[grid.node_index((i + shift) % n, j)] - base;
                        let dy = phi[grid.node_index(i, (j + shift) % n)] - base;
                        inc += dx * dx + dy * dy;
                        cnt += 2.0;
                    }
                }
            }
        }
        increment.push((inc / cnt).sqrt());
    }
    Ok(SublinearityProfile {
        radii: radii.to_vec(),
        oscillation,
        increment,
    })
}

/// `avg_{B_r(center)} |v - (v)_r|^(2p)` for a vector-valued cell field.
pub fn ball_oscillation<const K: usize>(
    grid: &Grid,
    v: &[[f64; K]],
    center: [f64; 2],
    r: f64,
    p: f64,
) -> f64 {
    let mut mean = [0.0; K];
    let mut count = 0usize;
    grid.for_each_cell_in_ball(center, r, |c| {
        for k in 0..K {
            mean[k] += v[c][k];
        }
        count += 1;
    });
    if count == 0 {
        return 0.0;
    }
    for m in mean.iter_mut() {
        *m /= count as f64;
    }
    let mut acc = 0.0;
    grid.for_each_cell_in_ball(center, r, |c| {
        let d2: f64 = (0..K).map(|k| (v[c][k] - mean[k]).powi(2)).sum();
        acc += d2.powf(p);
    });
    acc / count as f64
}

/// `avg_{B_r(center)} f^(2p)` for a nonnegative cell field.
pub fn ball_power_mean(grid: &Grid, f: &[f64], center: [f64; 2], r: f64, p: f64) -> f64 {
    let mut acc = 0.0;
    let mut count = 0usize;
    grid.for_each_cell_in_ball(center, r, |c| {
        acc += f[c].powf(2.0 * p);
        count += 1;
    });
    if count == 0 {
        0.0
    } else {
        acc / count as f64
    }
}

/// Sublinearity gauge `mu_2(r) = ln(2 + |r|)^(1/2)` in two dimensions and
/// `1` in higher dimensions.
pub fn mu(d: usize, r: f64) -> f64 {
    if d == 2 {
        (2.0 + r.abs()).ln().sqrt()
    } else {
        1.0
    }
}
