//! Boundary cut-offs, rescaled correctors, the variable-radius smoothing
//! operator, the two-scale expansion error, and boundary-layer norms.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correctors::CorrectorSet;
use crate::error::{Error, Result};
use crate::fem;
use crate::grid::Grid;
use crate::minimal_radius::MinimalRadiusField;

/// Boundary cut-offs `eta` (ramp from `3 eps` to `4 eps`) and `eta_tilde`
/// (ramp from `7 eps` to `8 eps`) as functions of the distance to the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct CutoffPair {
    pub eta: Vec<f64>,
    pub eta_tilde: Vec<f64>,
    pub epsilon: f64,
    /// Largest discrete `|grad eta|` over neighboring inside cells.
    pub grad_bound: f64,
}

fn ramp(delta: f64, start: f64, epsilon: f64) -> f64 {
    ((delta - start) / epsilon).clamp(0.0, 1.0)
}

pub fn make_cutoffs(grid: &Grid, epsilon: f64) -> Result<CutoffPair> {
    let mask = grid
        .mask()
        .ok_or_else(|| Error::invalid("cut-offs need a masked domain"))?;
    if !(epsilon > 0.0) || 8.0 * epsilon >= mask.diameter / 2.0 {
        return Err(Error::EpsilonTooLarge {
            epsilon,
            diameter: mask.diameter,
        });
    }
    let eta: Vec<f64> = (0..grid.cell_count())
        .map(|c| {
            if grid.inside(c) {
                ramp(grid.delta(c), 3.0 * epsilon, epsilon)
            } else {
                0.0
            }
        })
        .collect();
    let eta_tilde = (0..grid.cell_count())
        .map(|c| {
            if grid.inside(c) {
                ramp(grid.delta(c), 7.0 * epsilon, epsilon)
            } else {
                0.0
            }
        })
        .collect();
    let grad_bound = discrete_gradient_bound(grid, &eta);
    Ok(CutoffPair {
        eta,
        eta_tilde,
        epsilon,
        grad_bound,
    })
}

impl CutoffPair {
    /// Cut-off pair with `eta = 0` everywhere, which removes the corrector term.
    pub fn vanishing(grid: &Grid, epsilon: f64) -> Self {
        CutoffPair {
            eta: vec![0.0; grid.cell_count()],
            eta_tilde: vec![0.0; grid.cell_count()],
            epsilon,
            grad_bound: 0.0,
        }
    }
}

fn discrete_gradient_bound(grid: &Grid, v: &[f64]) -> f64 {
    let n = grid.n();
    let mut best: f64 = 0.0;
    for c in 0..grid.cell_count() {
        if !grid.inside(c) {
            continue;
        }
        let (i, j) = grid.cell_ij(c);
        for (ni, nj) in [(i + 1, j), (i, j + 1)] {
            if ni < n && nj < n {
                let d = grid.cell_index(ni, nj);
                if grid.inside(d) {
                    best = best.max((v[c] - v[d]).abs() / grid.h());
                }
            }
        }
    }
    best
}

/// Corrector sampled at `x / eps` on a target grid.
#[derive(Debug, Clone)]
pub struct RescaledCorrector {
    pub epsilon: f64,
    /// `phi_i(x / eps)` at the target nodes.
    pub phi: [Vec<f64>; 2],
    /// `phi_i(x / eps)` at the target cell centers.
    pub phi_cells: [Vec<f64>; 2],
    /// `(grad phi_i)(x / eps)` at the target cell centers.
    pub grad: [Vec<[f64; 2]>; 2],
}

/// `phi^eps = phi(. / eps)` with periodic wrapping on the corrector torus.
pub fn rescale_corrector(
    torus: &Grid,
    set: &CorrectorSet,
    epsilon: f64,
    target: &Grid,
) -> Result<RescaledCorrector> {
    if !torus.is_periodic() {
        return Err(Error::invalid("correctors must live on a torus"));
    }
    check_dyadic(target.extent(), epsilon)?;
    let copies = target.extent() / epsilon / torus.extent();
    if copies < 1.0 - 1e-9 || (copies - copies.round()).abs() > 1e-9 {
        return Err(Error::NonDyadicEpsilon(epsilon));
    }
    let micro_h = target.h() / epsilon;
    if torus.h() > micro_h * (1.0 + 1e-9) {
        return Err(Error::MismatchedGrids(format!(
            "corrector spacing {} is coarser than the rescaled target spacing {micro_h}",
            torus.h()
        )));
    }
    let aligned = (torus.h() - micro_h).abs() <= 1e-12 * micro_h;
    let nt = torus.n();
    let m = target.nodes_per_side();
    let mut phi: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut phi_cells: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut grad: [Vec<[f64; 2]>; 2] = [Vec::new(), Vec::new()];
    let torus_cells: [Vec<f64>; 2] = std::array::from_fn(|i| fem::cell_values(torus, &set.phi[i]));
    for i in 0..2 {
        if aligned {
            phi[i] = (0..target.node_count())
                .map(|idx| set.phi[i][torus.node_index((idx % m) % nt, (idx / m) % nt)])
                .collect();
            let cell = |c: usize| {
                let (ci, cj) = target.cell_ij(c);
                torus.cell_index(ci % nt, cj % nt)
            };
            phi_cells[i] = (0..target.cell_count())
                .map(|c| torus_cells[i][cell(c)])
                .collect();
            grad[i] = (0..target.cell_count())
                .map(|c| set.grad_phi[i][cell(c)])
                .collect();
        } else {
            let scale = |p: [f64; 2]| [p[0] / epsilon, p[1] / epsilon];
            phi[i] = (0..target.node_count())
                .map(|idx| fem::interpolate(torus, &set.phi[i], scale(target.node_position(idx))))
                .collect();
            phi_cells[i] = (0..target.cell_count())
                .map(|c| fem::interpolate(torus, &set.phi[i], scale(target.cell_center(c))))
                .collect();
            grad[i] = (0..target.cell_count())
                .map(|c| {
                    fem::interpolate_gradient(torus, &set.phi[i], scale(target.cell_center(c)))
                })
                .collect();
        }
    }
    Ok(RescaledCorrector {
        epsilon,
        phi,
        phi_cells,
        grad,
    })
}

/// Accept `eps = extent * 2^(-k)` for integer `k >= 0`.
pub fn check_dyadic(extent: f64, epsilon: f64) -> Result<u32> {
    let k = (extent / epsilon).log2();
    if !(epsilon > 0.0) || k < -1e-9 || (k - k.round()).abs() > 1e-9 {
        return Err(Error::NonDyadicEpsilon(epsilon));
    }
    Ok(k.round() as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Extension {
    /// Wrap around the bounding square.
    Periodic,
    /// Values outside the grid (or outside the domain) are zero.
    Zero,
}

/// Unnormalized bump `(1 - 4 |y|^2)^3` on `|y| < 1/2`.
#[inline]
pub fn bump(y: f64) -> f64 {
    let t = 1.0 - 4.0 * y * y;
    if t > 0.0 {
        t * t * t
    } else {
        0.0
    }
}

/// `S_{*,eps} f(x) = sum_y zeta_r(x - y) f(y)` with kernel diameter
/// `r = eps * chi(x / eps)` and discrete unit mass.
pub fn smoothing_apply(
    grid: &Grid,
    f: &[f64],
    chi: &MinimalRadiusField,
    epsilon: f64,
    extension: Extension,
) -> Result<Vec<f64>> {
    smoothing_apply_with(
        grid,
        f,
        |x| epsilon * chi.value_at([x[0] / epsilon, x[1] / epsilon]),
        extension,
    )
}

/// Smoothing with an arbitrary kernel-diameter field `r(x)`.
pub fn smoothing_apply_with(
    grid: &Grid,
    f: &[f64],
    diameter: impl Fn([f64; 2]) -> f64 + Sync,
    extension: Extension,
) -> Result<Vec<f64>> {
    let h = grid.h();
    let n = grid.n() as i64;
    let min = 2.0 * h;
    let radii: Vec<f64> = (0..grid.cell_count())
        .map(|c| diameter(grid.cell_center(c)) / 2.0)
        .collect();
    if let Some(&bad) = radii.iter().find(|&&r| r < min) {
        return Err(Error::DegenerateKernel { radius: bad, min });
    }
    let periodic = extension == Extension::Periodic;
    let out = (0..grid.cell_count())
        .into_par_iter()
        .map(|c| {
            if !grid.inside(c) {
                return 0.0;
            }
            let rho = radii[c];
            let (ci, cj) = grid.cell_ij(c);
            let reach = (rho / h).floor() as i64;
            let mut acc = 0.0;
            let mut mass = 0.0;
            for dj in -reach..=reach {
                for di in -reach..=reach {
                    let dist = (di as f64).hypot(dj as f64) * h;
                    if dist >= rho {
                        continue;
                    }
                    let w = bump(dist / (2.0 * rho));
                    mass += w;
                    let (mut x, mut y) = (ci as i64 + di, cj as i64 + dj);
                    if periodic {
                        x = x.rem_euclid(n);
                        y = y.rem_euclid(n);
                    } else if x < 0 || y < 0 || x >= n || y >= n {
                        continue;
                    }
                    let d = grid.cell_index(x as usize, y as usize);
                    if periodic || grid.inside(d) {
                        acc += w * f[d];
                    }
                }
            }
            acc / mass
        })
        .collect();
    Ok(out)
}

/// `||f - S f||_2^2 / (eps^2 sum chi^2(x / eps) |grad f|^2 h^2)`.
pub fn smoothing_ratio(
    grid: &Grid,
    f: &[f64],
    grad_f: &[[f64; 2]],
    chi: &MinimalRadiusField,
    epsilon: f64,
    extension: Extension,
) -> Result<f64> {
    let s = smoothing_apply(grid, f, chi, epsilon, extension)?;
    let h2 = grid.h() * grid.h();
    let mut num = 0.0;
    let mut den = 0.0;
    for c in 0..grid.cell_count() {
        if !grid.inside(c) {
            continue;
        }
        let x = grid.cell_center(c);
        let chi_x = chi.value_at([x[0] / epsilon, x[1] / epsilon]);
        num += (f[c] - s[c]).powi(2) * h2;
        den +=
            epsilon * epsilon * chi_x * chi_x * (grad_f[c][0].powi(2) + grad_f[c][1].powi(2)) * h2;
    }
    Ok(num / den)
}

/// Cell weights `eta d_i ubar` (or their smoothed version) multiplying the
/// rescaled corrector in the expansion.
pub fn corrector_weights(
    grid: &Grid,
    grad_bar: &[[f64; 2]],
    cutoffs: &CutoffPair,
    smoothing: Option<&MinimalRadiusField>,
) -> Result<[Vec<f64>; 2]> {
    let mut w: [Vec<f64>; 2] = std::array::from_fn(|i| {
        (0..grid.cell_count())
            .map(|c| {
                if grid.inside(c) {
                    cutoffs.eta[c] * grad_bar[c][i]
                } else {
                    0.0
                }
            })
            .collect()
    });
    if let Some(chi) = smoothing {
        for wi in w.iter_mut() {
            *wi = smoothing_apply(grid, wi, chi, cutoffs.epsilon, Extension::Zero)?;
        }
    }
    Ok(w)
}

/// Cell field averaged to nodes over the adjacent inside cells.
pub fn cells_to_nodes(grid: &Grid, v: &[f64]) -> Vec<f64> {
    let mut sum = vec![0.0; grid.node_count()];
    let mut count = vec![0.0; grid.node_count()];
    for c in 0..grid.cell_count() {
        if !grid.inside(c) {
            continue;
        }
        for node in grid.cell_nodes(c) {
            sum[node] += v[c];
            count[node] += 1.0;
        }
    }
    sum.iter()
        .zip(&count)
        .map(|(s, &k)| if k > 0.0 { s / k } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExpansionError {
    /// `u_eps - ubar - eps phi_i^eps w_i` at the nodes.
    pub z: Vec<f64>,
    /// Product-rule gradient of `z` per cell.
    pub grad_z: Vec<[f64; 2]>,
    pub l2: f64,
    pub h1: f64,
    pub epsilon: f64,
    pub sample_index: u64,
}

/// Two-scale expansion error of one `(eps, sample)` pair.
pub fn expansion_error(
    grid: &Grid,
    u_eps: &[f64],
    u_bar: &[f64],
    corrector: &RescaledCorrector,
    cutoffs: &CutoffPair,
    smoothing: Option<&MinimalRadiusField>,
    sample_index: u64,
) -> Result<ExpansionError> {
    let nn = grid.node_count();
    if u_eps.len() != nn
        || u_bar.len() != nn
        || corrector.phi[0].len() != nn
        || cutoffs.eta.len() != grid.cell_count()
    {
        return Err(Error::MismatchedGrids(
            "expansion inputs do not share a grid".into(),
        ));
    }
    let eps = cutoffs.epsilon;
    let grad_eps = fem::gradient(grid, u_eps);
    let grad_bar = fem::gradient(grid, u_bar);
    let w = corrector_weights(grid, &grad_bar, cutoffs, smoothing)?;
    let w_nodes: [Vec<f64>; 2] = std::array::from_fn(|i| cells_to_nodes(grid, &w[i]));
    let grad_w: [Vec<[f64; 2]>; 2] = std::array::from_fn(|i| fem::gradient(grid, &w_nodes[i]));
    let z: Vec<f64> = (0..nn)
        .map(|k| {
            u_eps[k]
                - u_bar[k]
                - eps * (corrector.phi[0][k] * w_nodes[0][k] + corrector.phi[1][k] * w_nodes[1][k])
        })
        .collect();
    let grad_z: Vec<[f64; 2]> = (0..grid.cell_count())
        .map(|c| {
            let mut g = [
                grad_eps[c][0] - grad_bar[c][0],
                grad_eps[c][1] - grad_bar[c][1],
            ];
            for i in 0..2 {
                for k in 0..2 {
                    g[k] -= corrector.grad[i][c][k] * w[i][c]
                        + eps * corrector.phi_cells[i][c] * grad_w[i][c][k];
                }
            }
            g
        })
        .collect();
    let l2 = fem::l2_norm_nodal(grid, &z);
    let h1 = fem::l2_norm_vector(grid, &grad_z);
    Ok(ExpansionError {
        z,
        grad_z,
        l2,
        h1,
        epsilon: eps,
        sample_index,
    })
}

/// Relative L2 gap between the product-rule gradient and the Q1 gradient of `z`.
pub fn gradient_identity_gap(grid: &Grid, err: &ExpansionError) -> f64 {
    let direct = fem::gradient(grid, &err.z);
    let diff: Vec<[f64; 2]> = direct
        .iter()
        .zip(&err.grad_z)
        .map(|(a, b)| [a[0] - b[0], a[1] - b[1]])
        .collect();
    let scale = fem::l2_norm_vector(grid, &direct).max(f64::MIN_POSITIVE);
    fem::l2_norm_vector(grid, &diff) / scale
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerNorms {
    pub epsilon: f64,
    /// `||grad ubar||_{L2(O_4eps)}`.
    pub layer: f64,
    /// `||grad^2 ubar delta^(1/2)||_{L2(Omega \ O_eps)}`.
    pub colayer: f64,
    /// `(int_{O_eps} |grad ubar|^(2s'))^(1/(2s'))`.
    pub layer_2s: f64,
    /// `(int_{Omega \ O_eps} |grad^2 ubar|^(2s') delta^(2s'-1))^(1/(2s'))`.
    pub colayer_2s: f64,
}

/// Frobenius norm of the Hessian per cell from differences of the cell
/// gradients: central where both neighbors are inside, one-sided inward otherwise.
pub fn hessian_norm(grid: &Grid, grad: &[[f64; 2]]) -> Vec<f64> {
    let n = grid.n() as i64;
    let h = grid.h();
    let at = |i: i64, j: i64| -> Option<usize> {
        if grid.is_periodic() {
            Some(grid.cell_index(i.rem_euclid(n) as usize, j.rem_euclid(n) as usize))
        } else if i < 0 || j < 0 || i >= n || j >= n {
            None
        } else {
            let c = grid.cell_index(i as usize, j as usize);
            grid.inside(c).then_some(c)
        }
    };
    let diff = |c: usize, di: i64, dj: i64| -> [f64; 2] {
        let (i, j) = grid.cell_ij(c);
        let (i, j) = (i as i64, j as i64);
        match (at(i + di, j + dj), at(i - di, j - dj)) {
            (Some(p), Some(m)) => [
                (grad[p][0] - grad[m][0]) / (2.0 * h),
                (grad[p][1] - grad[m][1]) / (2.0 * h),
            ],
            (Some(p), None) => [(grad[p][0] - grad[c][0]) / h, (grad[p][1] - grad[c][1]) / h],
            (None, Some(m)) => [(grad[c][0] - grad[m][0]) / h, (grad[c][1] - grad[m][1]) / h],
            (None, None) => [0.0, 0.0],
        }
    };
    (0..grid.cell_count())
        .map(|c| {
            if !grid.inside(c) {
                return 0.0;
            }
            let dx = diff(c, 1, 0);
            let dy = diff(c, 0, 1);
            let off = 0.5 * (dx[1] + dy[0]);
            (dx[0] * dx[0] + dy[1] * dy[1] + 2.0 * off * off).sqrt()
        })
        .collect()
}

/// Boundary-layer and interior (distance-weighted Hessian) norms of `ubar`.
/// `s > 1` selects the weighted variants through `s' = s / (s - 1)`.
pub fn layer_colayer_norms(grid: &Grid, u_bar: &[f64], epsilon: f64, s: f64) -> Result<LayerNorms> {
    if grid.mask().is_none() {
        return Err(Error::invalid("layer norms need a masked domain"));
    }
    if !(s > 1.0) {
        return Err(Error::invalid(format!("s = {s} must exceed 1")));
    }
    let s_prime = s / (s - 1.0);
    let q = 2.0 * s_prime;
    let grad = fem::gradient(grid, u_bar);
    let hess = hessian_norm(grid, &grad);
    let h2 = grid.h() * grid.h();
    let mut layer = 0.0;
    let mut colayer = 0.0;
    let mut layer_2s = 0.0;
    let mut colayer_2s = 0.0;
    for c in 0..grid.cell_count() {
        if !grid.inside(c) {
            continue;
        }
        let d = grid.delta(c);
        let g2 = grad[c][0] * grad[c][0] + grad[c][1] * grad[c][1];
        if d <= 4.0 * epsilon {
            layer += g2 * h2;
        }
        if d <= epsilon {
            layer_2s += g2.powf(q / 2.0) * h2;
        } else {
            colayer += hess[c] * hess[c] * d * h2;
            colayer_2s += hess[c].powf(q) * d.powf(q - 1.0) * h2;
        }
    }
    Ok(LayerNorms {
        epsilon,
        layer: layer.sqrt(),
        colayer: colayer.sqrt(),
        layer_2s: layer_2s.powf(1.0 / q),
        colayer_2s: colayer_2s.powf(1.0 / q),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{Constraint, SolveOptions};
    use crate::grid::{Shape, Topology};
    use crate::minimal_radius::MinRadParams;

    fn square(n: usize, extent: f64) -> Grid {
        Grid::with_extent(n, extent, Topology::MaskedDomain, Some(Shape::UnitSquare)).unwrap()
    }

    #[test]
    fn cutoff_ramps() {
        let g = square(128, 2.0);
        let eps = 1.0 / 16.0;
        let c = make_cutoffs(&g, eps).unwrap();
        for k in 0..g.cell_count() {
            let d = g.delta(k);
            if d >= 4.0 * eps {
                assert_eq!(c.eta[k], 1.0);
            }
            if d <= 3.0 * eps {
                assert_eq!(c.eta[k], 0.0);
            }
            assert_eq!((1.0 - c.eta[k]) * c.eta_tilde[k], 0.0);
        }
        assert!((ramp(3.5 * eps, 3.0 * eps, eps) - 0.5).abs() < 1e-15);
        assert!(c.grad_bound * eps <= 4.0);
        assert!(make_cutoffs(&g, 0.125).is_ok());
        assert!(make_cutoffs(&g, 0.25).is_err());
    }

    #[test]
    fn dyadic_check() {
        assert_eq!(check_dyadic(1.0, 0.125).unwrap(), 3);
        assert_eq!(check_dyadic(1.0, 1.0).unwrap(), 0);
        assert!(check_dyadic(1.0, 0.1).is_err());
        assert!(check_dyadic(1.0, 2.0).is_err());
    }

    #[test]
    fn bump_kernel_exact_on_constants_and_linears() {
        let g = Grid::periodic(64, 1.0).unwrap();
        let f = vec![2.5; g.cell_count()];
        let s = smoothing_apply_with(&g, &f, |_| 0.2, Extension::Periodic).unwrap();
        assert!(s.iter().all(|v| (v - 2.5).abs() < 1e-12));
        let lin: Vec<f64> = (0..g.cell_count())
            .map(|c| g.cell_center(c)[0] + 2.0 * g.cell_center(c)[1])
            .collect();
        let s = smoothing_apply_with(&g, &lin, |_| 0.2, Extension::Periodic).unwrap();
        let c = g.cell_index(32, 32);
        assert!((s[c] - lin[c]).abs() < 1e-12);
        assert!(smoothing_apply_with(&g, &lin, |_| 0.05, Extension::Periodic).is_err());
    }

    #[test]
    fn smoothing_uses_minimal_radius_field() {
        let g = Grid::periodic(64, 1.0).unwrap();
        let params = MinRadParams::new(0.9, 2.0, 1.0, 1.0).unwrap();
        let chi = MinimalRadiusField::constant(8.0, 8, 1.6, &params);
        let f = vec![1.0; g.cell_count()];
        let s = smoothing_apply(&g, &f, &chi, 0.125, Extension::Periodic).unwrap();
        assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-12));
        // positivity and linearity
        let a: Vec<f64> = (0..g.cell_count()).map(|c| (c % 5) as f64).collect();
        let b: Vec<f64> = (0..g.cell_count()).map(|c| (c % 3) as f64).collect();
        let sa = smoothing_apply(&g, &a, &chi, 0.125, Extension::Periodic).unwrap();
        let sb = smoothing_apply(&g, &b, &chi, 0.125, Extension::Periodic).unwrap();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - y).collect();
        let sab = smoothing_apply(&g, &ab, &chi, 0.125, Extension::Periodic).unwrap();
        for k in 0..g.cell_count() {
            assert!(sa[k] >= 0.0);
            assert!((sab[k] - (2.0 * sa[k] - sb[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_coefficient_expansion_is_exact() {
        let g = square(32, 1.0);
        let torus = Grid::periodic(32, 32.0).unwrap();
        let set =
            CorrectorSet::compute(&torus, &vec![1.3; 1024], None, SolveOptions::default()).unwrap();
        let eps = 1.0 / 32.0;
        let corr = rescale_corrector(&torus, &set, eps, &g).unwrap();
        let k = fem::assemble(&g, &vec![1.3; 1024], Constraint::DirichletZero).unwrap();
        let load = fem::div_load_fn(&g, |x| [x[0] / 2.0, x[1] / 2.0]);
        let (u, _) = k.solve(&load, None, SolveOptions::default()).unwrap();
        let cut = make_cutoffs(&g, eps).unwrap();
        let err = expansion_error(&g, &u, &u, &corr, &cut, None, 0).unwrap();
        assert!(err.l2 == 0.0 && err.h1 == 0.0);
    }

    #[test]
    fn vanishing_cutoff_leaves_plain_difference() {
        let g = square(16, 1.0);
        let torus = Grid::periodic(16, 2.0).unwrap();
        let a: Vec<f64> = (0..256).map(|c| 1.0 + 0.5 * ((c * 7) % 3) as f64).collect();
        let set = CorrectorSet::compute(&torus, &a, None, SolveOptions::default()).unwrap();
        let corr = rescale_corrector(&torus, &set, 0.5, &g).unwrap();
        let u: Vec<f64> = (0..g.node_count()).map(|k| (k % 11) as f64).collect();
        let v: Vec<f64> = (0..g.node_count()).map(|k| (k % 7) as f64).collect();
        let err =
            expansion_error(&g, &u, &v, &corr, &CutoffPair::vanishing(&g, 0.5), None, 0).unwrap();
        for k in 0..g.node_count() {
            assert_eq!(err.z[k], u[k] - v[k]);
        }
        assert!(gradient_identity_gap(&g, &err) < 1e-12);
    }

    #[test]
    fn rescaling_identity_and_interpolation() {
        let torus = Grid::periodic(8, 1.0).unwrap();
        let a: Vec<f64> = (0..64).map(|c| 1.0 + (c % 5) as f64 * 0.2).collect();
        let set = CorrectorSet::compute(&torus, &a, None, SolveOptions::default()).unwrap();
        let target = square(8, 1.0);
        let corr = rescale_corrector(&torus, &set, 1.0, &target).unwrap();
        for idx in 0..target.node_count() {
            let m = 9;
            let t = torus.node_index((idx % m) % 8, (idx / m) % 8);
            assert_eq!(corr.phi[0][idx], set.phi[0][t]);
        }
        // a finer torus forces interpolation; values at shared nodes agree
        let fine_torus = Grid::periodic(16, 1.0).unwrap();
        let fa: Vec<f64> = (0..256).map(|c| 1.0 + (c % 7) as f64 * 0.1).collect();
        let fine_set =
            CorrectorSet::compute(&fine_torus, &fa, None, SolveOptions::default()).unwrap();
        let corr = rescale_corrector(&fine_torus, &fine_set, 1.0, &target).unwrap();
        assert!(
            (corr.phi[1][target.node_index(2, 4)] - fine_set.phi[1][fine_torus.node_index(4, 8)])
                .abs()
                < 1e-12
        );
        let fine = square(16, 1.0);
        assert!(rescale_corrector(&torus, &set, 1.0, &fine).is_err());
        assert!(rescale_corrector(&torus, &set, 0.3, &fine).is_err());
    }

    #[test]
    fn linear_ubar_has_zero_colayer() {
        let g = square(32, 1.0);
        let u: Vec<f64> = (0..g.node_count())
            .map(|k| 2.0 * g.node_position(k)[0] - g.node_position(k)[1])
            .collect();
        let norms = layer_colayer_norms(&g, &u, 1.0 / 16.0, 2.0).unwrap();
        assert!(norms.colayer.abs() < 1e-10 && norms.colayer_2s.abs() < 1e-10);
        assert!(norms.layer > 0.0);
    }
}
