//! Bilinear (Q1) finite elements for `-div(a grad u) = div f` and
//! `-div(a grad u) = F` on square cells, solved by diagonally preconditioned
//! conjugate gradients.
//!
//! The coefficient is constant per cell and may be a symmetric 2x2 tensor
//! `[a11, a12, a22]`. Element integrals of bilinear shape functions are
//! polynomial of degree two per direction, so the closed forms below coincide
//! with 2x2 Gauss quadrature.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Default relative residual tolerance of the conjugate gradient solver.
pub const DEFAULT_TOL: f64 = 1e-9;

const SX: [f64; 4] = [-1.0, 1.0, -1.0, 1.0];
const SY: [f64; 4] = [-1.0, -1.0, 1.0, 1.0];
const GAUSS: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Constraint {
    /// Homogeneous (or lifted) Dirichlet data on a masked domain.
    DirichletZero,
    /// Periodic unknowns on a torus, normalized to zero mean.
    PeriodicMeanZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: DEFAULT_TOL,
            max_iter: 50_000,
        }
    }
}

/// Symmetric 2x2 tensor stored as `[a11, a12, a22]`.
pub type Tensor = [f64; 3];

pub fn isotropic(a: &[f64]) -> Vec<Tensor> {
    a.iter().map(|&c| [c, 0.0, c]).collect()
}

/// Element stiffness of one square cell (independent of `h` in 2D).
pub fn element_matrix(t: Tensor) -> [[f64; 4]; 4] {
    let mut k = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let xx = SX[i] * SX[j] * if SY[i] == SY[j] { 1.0 / 3.0 } else { 1.0 / 6.0 };
            let yy = SY[i] * SY[j] * if SX[i] == SX[j] { 1.0 / 3.0 } else { 1.0 / 6.0 };
            let xy = SX[i] * SY[j] / 4.0 + SY[i] * SX[j] / 4.0;
            k[i][j] = t[0] * xx + t[1] * xy + t[2] * yy;
        }
    }
    k
}

/// Assembled operator as a nine-point stencil per node.
#[derive(Debug, Clone)]
pub struct Stiffness {
    grid: Grid,
    constraint: Constraint,
    stencil: Vec<[f64; 9]>,
    cols: Vec<[usize; 9]>,
    free: Vec<bool>,
    diag: Vec<f64>,
}

#[inline]
fn slot(di: isize, dj: isize) -> usize {
    ((dj + 1) * 3 + (di + 1)) as usize
}

/// Assemble the stiffness of a scalar per-cell coefficient.
pub fn assemble(grid: &Grid, a: &[f64], constraint: Constraint) -> Result<Stiffness> {
    assemble_tensor(grid, &isotropic(a), constraint)
}

pub fn assemble_tensor(grid: &Grid, a: &[Tensor], constraint: Constraint) -> Result<Stiffness> {
    if a.len() != grid.cell_count() {
        return Err(Error::MismatchedGrids(format!(
            "coefficient has {} cells, grid has {}",
            a.len(),
            grid.cell_count()
        )));
    }
    match (constraint, grid.is_periodic()) {
        (Constraint::PeriodicMeanZero, false) => {
            return Err(Error::invalid("periodic constraint requires a torus"))
        }
        (Constraint::DirichletZero, true) => {
            return Err(Error::invalid(
                "Dirichlet constraint requires a masked domain",
            ))
        }
        _ => {}
    }
    let m = grid.nodes_per_side();
    let periodic = grid.is_periodic();
    let nn = grid.node_count();
    let mut stencil = vec![[0.0; 9]; nn];
    let mut touched = vec![0u8; nn];
    let offsets = [(0isize, 0isize), (1, 0), (0, 1), (1, 1)];
    for c in 0..grid.cell_count() {
        if !grid.inside(c) {
            continue;
        }
        let t = a[c];
        if !(t[0] > 0.0 && t[2] > 0.0 && t[0] * t[2] - t[1] * t[1] > 0.0) {
            return Err(Error::invalid(format!(
                "coefficient not positive definite in cell {c}"
            )));
        }
        let k = element_matrix(t);
        let nodes = grid.cell_nodes(c);
        for (li, &ni) in nodes.iter().enumerate() {
            touched[ni] += 1;
            for lj in 0..4 {
                let di = offsets[lj].0 - offsets[li].0;
                let dj = offsets[lj].1 - offsets[li].1;
                stencil[ni][slot(di, dj)] += k[li][lj];
            }
        }
    }
    let mut cols = vec![[0usize; 9]; nn];
    for (idx, row) in cols.iter_mut().enumerate() {
        let (i, j) = ((idx % m) as isize, (idx / m) as isize);
        for dj in -1..=1isize {
            for di in -1..=1isize {
                let (mut ii, mut jj) = (i + di, j + dj);
                let s = slot(di, dj);
                if periodic {
                    ii = ii.rem_euclid(m as isize);
                    jj = jj.rem_euclid(m as isize);
                    row[s] = jj as usize * m + ii as usize;
                } else if ii < 0 || jj < 0 || ii >= m as isize || jj >= m as isize {
                    row[s] = idx;
                    stencil[idx][s] = 0.0;
                } else {
                    row[s] = jj as usize * m + ii as usize;
                }
            }
        }
    }
    // A node is an unknown only when every adjacent cell belongs to the domain.
    let free: Vec<bool> = if periodic {
        vec![true; nn]
    } else {
        touched.iter().map(|&t| t == 4).collect()
    };
    let diag = stencil.iter().map(|s| s[4]).collect();
    Ok(Stiffness {
        grid: grid.clone(),
        constraint,
        stencil,
        cols,
        free,
        diag,
    })
}

impl Stiffness {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn constraint(&self) -> Constraint {
        self.constraint
    }

    /// Whether node `idx` is an unknown (not fixed by Dirichlet data).
    pub fn is_free(&self, idx: usize) -> bool {
        self.free[idx]
    }

    pub fn free_mask(&self) -> &[bool] {
        &self.free
    }

    /// Stencil coefficients of node `idx`, indexed by `(dj + 1) * 3 + (di + 1)`.
    pub fn stencil(&self, idx: usize) -> &[f64; 9] {
        &self.stencil[idx]
    }

    /// Unconstrained product `K u` over all nodes.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.apply_into(u, &mut out);
        out
    }

    fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        out.par_iter_mut()
            .with_min_len(1024)
            .enumerate()
            .for_each(|(r, o)| {
                let s = &self.stencil[r];
                let c = &self.cols[r];
                let mut acc = 0.0;
                for k in 0..9 {
                    acc += s[k] * u[c[k]];
                }
                *o = acc;
            });
    }

    /// Product restricted to free nodes (fixed rows and columns removed).
    fn apply_free(&self, u: &[f64], out: &mut [f64]) {
        out.par_iter_mut()
            .with_min_len(1024)
            .enumerate()
            .for_each(|(r, o)| {
                if !self.free[r] {
                    *o = 0.0;
                    return;
                }
                let s = &self.stencil[r];
                let c = &self.cols[r];
                let mut acc = 0.0;
                for k in 0..9 {
                    if self.free[c[k]] {
                        acc += s[k] * u[c[k]];
                    }
                }
                *o = acc;
            });
    }

    /// Solve `K u = rhs` on the free nodes with `u = boundary` on fixed nodes
    /// (zero when `boundary` is `None`).
    pub fn solve(
        &self,
        rhs: &[f64],
        boundary: Option<&[f64]>,
        opts: SolveOptions,
    ) -> Result<(Vec<f64>, SolveReport)> {
        let start = Instant::now();
        let nn = self.grid.node_count();
        if rhs.len() != nn {
            return Err(Error::MismatchedGrids(format!(
                "load has {} entries, expected {nn}",
                rhs.len()
            )));
        }
        let mut b: Vec<f64> = rhs.to_vec();
        let mut lift = vec![0.0; nn];
        if let Some(g) = boundary {
            if g.len() != nn {
                return Err(Error::MismatchedGrids("boundary data length".into()));
            }
            for i in 0..nn {
                if !self.free[i] {
                    lift[i] = g[i];
                }
            }
            let kl = self.apply(&lift);
            for i in 0..nn {
                b[i] -= kl[i];
            }
        }
        for i in 0..nn {
            if !self.free[i] {
                b[i] = 0.0;
            }
        }
        let periodic = self.constraint == Constraint::PeriodicMeanZero;
        if periodic {
            project_mean_zero(&mut b);
        }
        let (mut u, report) = self.cg(&b, opts, periodic, start)?;
        for i in 0..nn {
            if !self.free[i] {
                u[i] = lift[i];
            }
        }
        Ok((u, report))
    }

    fn cg(
        &self,
        b: &[f64],
        opts: SolveOptions,
        periodic: bool,
        start: Instant,
    ) -> Result<(Vec<f64>, SolveReport)> {
        let nn = b.len();
        let mut x = vec![0.0; nn];
        let bnorm = dot(b, b).sqrt();
        if bnorm == 0.0 {
            return Ok((
                x,
                SolveReport {
                    iterations: 0,
                    relative_residual: 0.0,
                    wall_time: start.elapsed().as_secs_f64(),
                },
            ));
        }
        let inv_diag: Vec<f64> = self
            .diag
            .iter()
            .zip(&self.free)
            .map(|(&d, &f)| if f && d > 0.0 { 1.0 / d } else { 0.0 })
            .collect();
        let precondition = |r: &[f64], z: &mut Vec<f64>| {
            z.par_iter_mut()
                .with_min_len(4096)
                .enumerate()
                .for_each(|(i, zi)| *zi = r[i] * inv_diag[i]);
            if periodic {
                project_mean_zero(z);
            }
        };
        let mut r = b.to_vec();
        let mut z = vec![0.0; nn];
        precondition(&r, &mut z);
        let mut p = z.clone();
        let mut ap = vec![0.0; nn];
        let mut rz = dot(&r, &z);
        let mut it = 0;
        while it < opts.max_iter {
            self.apply_free(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            axpy(alpha, &p, &mut x);
            axpy(-alpha, &ap, &mut r);
            it += 1;
            if dot(&r, &r).sqrt() / bnorm <= opts.tol {
                break;
            }
            precondition(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            p.par_iter_mut()
                .with_min_len(4096)
                .zip(z.par_iter())
                .for_each(|(pi, &zi)| *pi = zi + beta * *pi);
        }
        if periodic {
            project_mean_zero(&mut x);
        }
        // recompute the true residual to guard against drift
        self.apply_free(&x, &mut ap);
        let mut res: Vec<f64> = b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect();
        if periodic {
            project_mean_zero(&mut res);
        }
        let true_rel = dot(&res, &res).sqrt() / bnorm;
        let report = SolveReport {
            iterations: it,
            relative_residual: true_rel,
            wall_time: start.elapsed().as_secs_f64(),
        };
        if true_rel > opts.tol * 1.5 {
            return Err(Error::SolverFailure { report });
        }
        Ok((x, report))
    }
}

/// Deterministic parallel dot product (fixed chunking, ordered reduction).
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partial.iter().sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.par_iter_mut()
        .with_min_len(4096)
        .zip(x.par_iter())
        .for_each(|(yi, &xi)| *yi += alpha * xi);
}

pub fn project_mean_zero(v: &mut [f64]) {
    let partial: Vec<f64> = v.par_chunks(CHUNK).map(|c| c.iter().sum::<f64>()).collect();
    let mean = partial.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// Load of `div f` for a per-cell constant vector field: `-int f . grad v`.
pub fn div_load(grid: &Grid, f: &[[f64; 2]]) -> Vec<f64> {
    let half_h = grid.h() / 2.0;
    let mut b = vec![0.0; grid.node_count()];
    for c in 0..grid.cell_count() {
        if !grid.inside(c) {
            continue;
        }
        let nodes = grid.cell_nodes(c);
        for k in 0..4 {
            b[nodes[k]] -= half_h * (f[c][0] * SX[k] + f[c][1] * SY[k]);
        }
    }
    b
}

/// Load of a per-cell constant source `F`: `int F v`.
pub fn source_load(grid: &Grid, f: &[f64]) -> Vec<f64> {
    let w = grid.h() * grid.h() / 4.0;
    let mut b = vec![0.0; grid.node_count()];
    for c in 0..grid.cell_count() {
        if !grid.inside(c) {
            continue;
        }
        for node in grid.cell_nodes(c) {
            b[node] += w * f[c];
        }
    }
    b
}

/// Gauss points of a cell: physical positions and reference coordinates.
fn gauss_points(grid: &Grid, c: usize) -> [([f64; 2], [f64; 2]); 4] {
    let (i, j) = grid.cell_ij(c);
    let h = grid.h();
    let mut out = [([0.0; 2], [0.0; 2]); 4];
    for (k, o) in out.iter_mut().enumerate() {
        let xi = GAUSS[k % 2];
        let yi = GAUSS[k / 2];
        *o = ([(i as f64 + xi) * h, (j as f64 + yi) * h], [xi, yi]);
    }
    out
}

#[inline]
fn shape_values(r: [f64; 2]) -> [f64; 4] {
    let (x, y) = (r[0], r[1]);
    [(1.0 - x) * (1.0 - y), x * (1.0 - y), (1.0 - x) * y, x * y]
}

#[inline]
fn shape_gradients(r: [f64; 2], h: f64) -> [[f64; 2]; 4] {
    let (x, y) = (r[0], r[1]);
    [
        [-(1.0 - y) / h, -(1.0 - x) / h],
        [(1.0 - y) / h, -x / h],
        [-y / h, (1.0 - x) / h],
        [y / h, x / h],
    ]
}

/// Load of `div f` for an analytic vector field, by 2x2 Gauss quadrature.
pub fn div_load_fn(grid: &Grid, f: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
    let w = grid.h() * grid.h() / 4.0;
    let mut b = vec![0.0; grid.node_count()];
    for c in 0..grid.cell_count() {
        if !grid.inside(c) {
            continue;
        }
        let nodes = grid.cell_nodes(c);
        for (x, r) in gauss_points(grid, c) {
            let fx = f(x);
            let g = shape_gradients(r, grid.h());
            for k in 0..4 {
                b[nodes[k]] -= w * (fx[0] * g[k][0] + fx[1] * g[k][1]);
            }
        }
    }
    b
}

/// Load of an analytic source, by 2x2 Gauss quadrature.
pub fn source_load_fn(grid: &Grid, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
    let w = grid.h() * grid.h() / 4.0;
    let mut b = vec![0.0; grid.node_count()];
    for c in 0..grid.cell_count() {
        if !grid.inside(c) {
            continue;
        }
        let nodes = grid.cell_nodes(c);
        for (x, r) in gauss_points(grid, c) {
            let fx = f(x);
            let s = shape_values(r);
            for k in 0..4 {
                b[nodes[k]] += w * fx * s[k];
            }
        }
    }
    b
}

/// Solve `-div(a grad u) = div f` for a per-cell vector field `f`.
pub fn solve_div_f(
    stiffness: &Stiffness,
    f: &[[f64; 2]],
    opts: SolveOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let grid = stiffness.grid();
    if f.len() != grid.cell_count() {
        return Err(Error::MismatchedGrids("vector field length".into()));
    }
    stiffness.solve(&div_load(grid, f), None, opts)
}

/// Solve `-div(a grad u) = F` for a per-cell source.
pub fn solve_source(
    stiffness: &Stiffness,
    f: &[f64],
    opts: SolveOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let grid = stiffness.grid();
    if f.len() != grid.cell_count() {
        return Err(Error::MismatchedGrids("source length".into()));
    }
    stiffness.solve(&source_load(grid, f), None, opts)
}

/// Q1 gradient of a nodal field at every cell center.
pub fn gradient(grid: &Grid, u: &[f64]) -> Vec<[f64; 2]> {
    let inv = 1.0 / (2.0 * grid.h());
    (0..grid.cell_count())
        .into_par_iter()
        .with_min_len(1024)
        .map(|c| {
            let [n0, n1, n2, n3] = grid.cell_nodes(c);
            [
                (u[n1] - u[n0] + u[n3] - u[n2]) * inv,
                (u[n2] - u[n0] + u[n3] - u[n1]) * inv,
            ]
        })
        .collect()
}

/// Value of a nodal field at the cell centers.
pub fn cell_values(grid: &Grid, u: &[f64]) -> Vec<f64> {
    (0..grid.cell_count())
        .map(|c| {
            let [n0, n1, n2, n3] = grid.cell_nodes(c);
            0.25 * (u[n0] + u[n1] + u[n2] + u[n3])
        })
        .collect()
}

/// Bilinear interpolation of a nodal field at a point (wrapping on tori).
pub fn interpolate(grid: &Grid, u: &[f64], p: [f64; 2]) -> f64 {
    let (nodes, r) = locate(grid, p);
    let s = shape_values(r);
    (0..4).map(|k| s[k] * u[nodes[k]]).sum()
}

/// Gradient of the bilinear interpolant of a nodal field at a point.
pub fn interpolate_gradient(grid: &Grid, u: &[f64], p: [f64; 2]) -> [f64; 2] {
    let (nodes, r) = locate(grid, p);
    let g = shape_gradients(r, grid.h());
    let mut out = [0.0; 2];
    for k in 0..4 {
        out[0] += g[k][0] * u[nodes[k]];
        out[1] += g[k][1] * u[nodes[k]];
    }
    out
}

fn locate(grid: &Grid, p: [f64; 2]) -> ([usize; 4], [f64; 2]) {
    let h = grid.h();
    let n = grid.n();
    let (mut x, mut y) = (p[0] / h, p[1] / h);
    if grid.is_periodic() {
        x = x.rem_euclid(n as f64);
        y = y.rem_euclid(n as f64);
    } else {
        x = x.clamp(0.0, n as f64);
        y = y.clamp(0.0, n as f64);
    }
    let i = (x.floor() as usize).min(n - 1);
    let j = (y.floor() as usize).min(n - 1);
    (
        grid.cell_nodes(grid.cell_index(i, j)),
        [x - i as f64, y - j as f64],
    )
}

/// `(sum_c a |v|^2 h^2)^(1/2)` over the cells of the domain.
pub fn energy_norm(grid: &Grid, a: &[f64], v: &[[f64; 2]]) -> f64 {
    let h2 = grid.h() * grid.h();
    (0..grid.cell_count())
        .filter(|&c| grid.inside(c))
        .map(|c| a[c] * (v[c][0] * v[c][0] + v[c][1] * v[c][1]) * h2)
        .sum::<f64>()
        .sqrt()
}

/// L2 norm of a per-cell vector field over the domain.
pub fn l2_norm_vector(grid: &Grid, v: &[[f64; 2]]) -> f64 {
    let h2 = grid.h() * grid.h();
    (0..grid.cell_count())
        .filter(|&c| grid.inside(c))
        .map(|c| (v[c][0] * v[c][0] + v[c][1] * v[c][1]) * h2)
        .sum::<f64>()
        .sqrt()
}

/// L2 norm of a per-cell scalar field over the domain.
pub fn l2_norm_cells(grid: &Grid, v: &[f64]) -> f64 {
    let h2 = grid.h() * grid.h();
    (0..grid.cell_count())
        .filter(|&c| grid.inside(c))
        .map(|c| v[c] * v[c] * h2)
        .sum::<f64>()
        .sqrt()
}

/// Exact L2 norm of the bilinear interpolant of a nodal field over the domain.
pub fn l2_norm_nodal(grid: &Grid, u: &[f64]) -> f64 {
    // element mass matrix h^2/36 * [[4,2,2,1],[2,4,1,2],[2,1,4,2],[1,2,2,4]]
    const M: [[f64; 4]; 4] = [
        [4.0, 2.0, 2.0, 1.0],
        [2.0, 4.0, 1.0, 2.0],
        [2.0, 1.0, 4.0, 2.0],
        [1.0, 2.0, 2.0, 4.0],
    ];
    let w = grid.h() * grid.h() / 36.0;
    let mut total = 0.0;
    for c in 0..grid.cell_count() {
        if !grid.inside(c) {
            continue;
        }
        let nodes = grid.cell_nodes(c);
        for i in 0..4 {
            for j in 0..4 {
                total += w * M[i][j] * u[nodes[i]] * u[nodes[j]];
            }
        }
    }
    total.max(0.0).sqrt()
}

/// L2 distance between a nodal field and an analytic function (2x2 Gauss).
pub fn l2_error_fn(grid: &Grid, u: &[f64], exact: impl Fn([f64; 2]) -> f64) -> f64 {
    let w = grid.h() * grid.h() / 4.0;
    let mut total = 0.0;
    for c in 0..grid.cell_count() {
        if !grid.inside(c) {
            continue;
        }
        let nodes = grid.cell_nodes(c);
        for (x, r) in gauss_points(grid, c) {
            let s = shape_values(r);
            let uh: f64 = (0..4).map(|k| s[k] * u[nodes[k]]).sum();
            total += w * (uh - exact(x)).powi(2);
        }
    }
    total.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Shape, Topology};
    use std::f64::consts::PI;

    fn square(n: usize) -> Grid {
        Grid::new(n, Topology::MaskedDomain, Some(Shape::UnitSquare)).unwrap()
    }

    #[test]
    fn reference_element() {
        let k = element_matrix([1.0, 0.0, 1.0]);
        for i in 0..4 {
            assert!((k[i][i] - 2.0 / 3.0).abs() < 1e-15);
            assert!(k[i].iter().sum::<f64>().abs() < 1e-15);
        }
        assert!((k[0][1] + 1.0 / 6.0).abs() < 1e-15);
        assert!((k[0][2] + 1.0 / 6.0).abs() < 1e-15);
        assert!((k[0][3] + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn laplacian_stencil_on_small_torus() {
        let g = Grid::periodic(4, 1.0).unwrap();
        let k = assemble(&g, &[1.0; 16], Constraint::PeriodicMeanZero).unwrap();
        let s = k.stencil(5);
        assert!((s[4] - 8.0 / 3.0).abs() < 1e-14);
        for (idx, v) in s.iter().enumerate() {
            if idx != 4 {
                assert!((v + 1.0 / 3.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradient_exact_for_bilinear() {
        let g = square(8);
        let u: Vec<f64> = (0..g.node_count())
            .map(|i| {
                let p = g.node_position(i);
                p[0] * p[1] + 2.0 * p[0] - p[1]
            })
            .collect();
        let gr = gradient(&g, &u);
        for c in 0..g.cell_count() {
            let x = g.cell_center(c);
            assert!((gr[c][0] - (x[1] + 2.0)).abs() < 1e-12);
            assert!((gr[c][1] - (x[0] - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_load_gives_zero() {
        let g = square(16);
        let k = assemble(&g, &vec![1.0; g.cell_count()], Constraint::DirichletZero).unwrap();
        let (u, rep) =
            solve_div_f(&k, &vec![[0.0; 2]; g.cell_count()], SolveOptions::default()).unwrap();
        assert!(u.iter().all(|&x| x == 0.0));
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn manufactured_solution_second_order() {
        let gfun = |x: [f64; 2]| (PI * x[0]).sin() * (PI * x[1]).sin() / (2.0 * PI * PI);
        let grad = |x: [f64; 2]| {
            [
                (PI * x[0]).cos() * (PI * x[1]).sin() / (2.0 * PI),
                (PI * x[0]).sin() * (PI * x[1]).cos() / (2.0 * PI),
            ]
        };
        let mut errs = Vec::new();
        for n in [16, 32, 64] {
            let g = square(n);
            let k = assemble(&g, &vec![1.0; g.cell_count()], Constraint::DirichletZero).unwrap();
            let (u, rep) = k
                .solve(&div_load_fn(&g, grad), None, SolveOptions::default())
                .unwrap();
            assert!(rep.relative_residual <= 1e-9);
            // weak form int grad u . grad v = -int f . grad v gives u = -g
            errs.push(l2_error_fn(&g, &u, |x| -gfun(x)));
        }
        assert!(
            errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5,
            "{errs:?}"
        );
    }

    #[test]
    fn dirichlet_lift_reproduces_linear_data() {
        let g = square(12);
        let k = assemble(&g, &vec![2.5; g.cell_count()], Constraint::DirichletZero).unwrap();
        let lin: Vec<f64> = (0..g.node_count())
            .map(|i| {
                let p = g.node_position(i);
                3.0 + p[0] - 2.0 * p[1]
            })
            .collect();
        let (u, _) = k
            .solve(
                &vec![0.0; g.node_count()],
                Some(&lin),
                SolveOptions::default(),
            )
            .unwrap();
        assert!(u.iter().zip(&lin).all(|(x, y)| (x - y).abs() < 1e-8));
    }

    #[test]
    fn interpolation_reproduces_bilinear() {
        let g = Grid::periodic(8, 1.0).unwrap();
        let u: Vec<f64> = (0..g.node_count())
            .map(|i| {
                let p = g.node_position(i);
                (2.0 * PI * p[0]).cos()
            })
            .collect();
        let v = interpolate(&g, &u, [1.0 + 0.125, 0.3]);
        assert!((v - (2.0 * PI * 0.125).cos()).abs() < 1e-12);
    }
}
