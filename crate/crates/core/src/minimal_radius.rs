//! Minimal radius: the smallest dyadic scale above which corrector
//! oscillations are `theta`-small, its `1/L`-Lipschitz minorant, the envelope
//! `X_R`, and empirical moments.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::correctors::{ball_oscillation, ball_power_mean, CorrectorSet};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::fmt_f64;
use crate::random_field::stream_rng;

/// `L = max(R0, d - 1, 8)`.
pub fn lipschitz_constant(diameter: f64, d: usize) -> f64 {
    diameter.max(d as f64 - 1.0).max(8.0)
}

/// Dyadic radii `1, 2, 4, ...` up to `r_max`.
pub fn dyadic_radii(r_max: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = 1.0;
    while r <= r_max * (1.0 + 1e-12) {
        out.push(r);
        r *= 2.0;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum MinRadMode {
    /// Floor `theta^(-p)`, plain bracket.
    Simple,
    /// Bracket scaled by the envelope `X_R`, with the `+1` term and exponent
    /// reduced by `kappa`; no floor.
    Smoothed { kappa: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinRadParams {
    pub theta: f64,
    pub p: f64,
    #[serde(default = "default_gamma_prime")]
    pub gamma_prime: f64,
    /// Use `gamma = 1` (admissible for symmetric coefficients).
    #[serde(default = "default_true")]
    pub symmetric: bool,
    /// Lipschitz constant `L` of the regularization.
    pub lipschitz: f64,
    pub radii: Vec<f64>,
}

fn default_gamma_prime() -> f64 {
    1.05
}

fn default_true() -> bool {
    true
}

impl MinRadParams {
    pub fn new(theta: f64, p: f64, diameter: f64, r_max: f64) -> Result<Self> {
        let params = MinRadParams {
            theta,
            p,
            gamma_prime: default_gamma_prime(),
            symmetric: true,
            lipschitz: lipschitz_constant(diameter, 2),
            radii: dyadic_radii(r_max),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::invalid(format!(
                "theta {} not in (0, 1)",
                self.theta
            )));
        }
        if !(self.p >= 1.0) {
            return Err(Error::invalid(format!("p = {} must be at least 1", self.p)));
        }
        if !(self.gamma_prime > 1.0) {
            return Err(Error::invalid("gamma' must exceed 1"));
        }
        if !(self.lipschitz > 0.0) {
            return Err(Error::invalid("Lipschitz constant must be positive"));
        }
        if self.radii.is_empty() || self.radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("radii must be a nonempty increasing list"));
        }
        Ok(())
    }

    pub fn gamma(&self) -> f64 {
        if self.symmetric {
            1.0
        } else {
            self.gamma_prime / (self.gamma_prime - 1.0)
        }
    }

    /// Conjugate exponent `p' = p / (p - 1)` (infinite at `p = 1`).
    pub fn p_prime(&self) -> f64 {
        if self.p == 1.0 {
            f64::INFINITY
        } else {
            self.p / (self.p - 1.0)
        }
    }

    /// Decay exponent `1 / (gamma p')` of the bracket.
    pub fn exponent(&self) -> f64 {
        1.0 / (self.gamma() * self.p_prime())
    }

    /// `theta^(-p)`.
    pub fn floor(&self) -> f64 {
        self.theta.powf(-self.p)
    }

    pub fn r_max(&self) -> f64 {
        *self.radii.last().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiValue {
    pub value: f64,
    pub saturated: bool,
}

/// Unscaled bracket terms at one anchor for every radius:
/// `(avg_{B_2R} |Psi - Psi_2R|^(2p))^(1/p) + (avg_{B_2R} |grad phi|^(2p))^(1/p)`.
pub fn bracket_terms(
    grid: &Grid,
    psi: &[[f64; 4]],
    grad_norm: &[f64],
    anchor: [f64; 2],
    params: &MinRadParams,
) -> Result<Vec<f64>> {
    let limit = grid.extent() / 4.0;
    if params.r_max() > limit * (1.0 + 1e-12) {
        return Err(Error::RadiusTooLarge {
            radius: params.r_max(),
            limit,
        });
    }
    let p = params.p;
    Ok(params
        .radii
        .iter()
        .map(|&r| {
            let osc = ball_oscillation(grid, psi, anchor, 2.0 * r, p).powf(1.0 / p);
            let grad = ball_power_mean(grid, grad_norm, anchor, 2.0 * r, p).powf(1.0 / p);
            osc + grad
        })
        .collect())
}

/// Minimal radius from precomputed bracket terms.
///
/// `envelope[k]` is `sup_{B_R} chi` at `radii[k]`, required in smoothed mode.
pub fn chi_from_terms(
    terms: &[f64],
    params: &MinRadParams,
    mode: MinRadMode,
    envelope: Option<&[f64]>,
) -> Result<ChiValue> {
    let (exponent, plus_one, floor) = match mode {
        MinRadMode::Simple => (params.exponent(), 0.0, params.floor()),
        MinRadMode::Smoothed { kappa } => {
            if envelope.is_none() {
                return Err(Error::invalid("smoothed minimal radius needs the envelope"));
            }
            (params.exponent() - kappa, 1.0, 0.0)
        }
    };
    let kappa = match mode {
        MinRadMode::Smoothed { kappa } => kappa,
        MinRadMode::Simple => 0.0,
    };
    let passes: Vec<bool> = params
        .radii
        .iter()
        .zip(terms)
        .enumerate()
        .map(|(k, (&r, &t))| {
            let x_r = envelope.map_or(1.0, |e| r.powf(-kappa) * e[k]);
            r.powf(-exponent) * x_r * (t + plus_one) <= params.theta
        })
        .collect();
    // smallest l such that every radius from l upward passes
    let mut first = passes.len();
    while first > 0 && passes[first - 1] {
        first -= 1;
    }
    if first == passes.len() {
        return Ok(ChiValue {
            value: params.r_max().max(floor),
            saturated: true,
        });
    }
    Ok(ChiValue {
        value: params.radii[first].max(floor),
        saturated: false,
    })
}

/// Minimal radius of one corrector sample at `anchor`.
pub fn chi_star(
    grid: &Grid,
    set: &CorrectorSet,
    anchor: [f64; 2],
    params: &MinRadParams,
) -> Result<ChiValue> {
    let psi = set.psi_cells(grid);
    let grad = set.grad_phi_norm();
    let terms = bracket_terms(grid, &psi, &grad, anchor, params)?;
    chi_from_terms(&terms, params, MinRadMode::Simple, None)
}

/// Minimal radius on a periodic lattice of anchors, with its Lipschitz minorant.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimalRadiusField {
    pub anchors_per_side: usize,
    /// Distance between neighboring anchors.
    pub spacing: f64,
    pub chi: Vec<f64>,
    pub saturated: Vec<bool>,
    pub regularized: Vec<f64>,
    /// Bracket terms per anchor and radius (kept for re-thresholding).
    pub terms: Vec<Vec<f64>>,
    pub params: MinRadParams,
}

impl MinimalRadiusField {
    /// Anchors at every `stride`-th cell center of the torus.
    pub fn compute(
        grid: &Grid,
        set: &CorrectorSet,
        params: &MinRadParams,
        stride: usize,
    ) -> Result<Self> {
        params.validate()?;
        if !grid.is_periodic() {
            return Err(Error::invalid(
                "minimal radii are computed on the corrector torus",
            ));
        }
        let stride = stride.max(1);
        if !grid.n().is_multiple_of(stride) {
            return Err(Error::invalid(format!(
                "stride {stride} does not divide n = {}",
                grid.n()
            )));
        }
        let m = grid.n() / stride;
        let psi = set.psi_cells(grid);
        let grad = set.grad_phi_norm();
        let terms = anchors(grid, stride)
            .into_iter()
            .map(|a| bracket_terms(grid, &psi, &grad, a, params))
            .collect::<Result<Vec<_>>>()?;
        Self::from_terms(
            m,
            grid.h() * stride as f64,
            terms,
            params,
            MinRadMode::Simple,
        )
    }

    fn from_terms(
        m: usize,
        spacing: f64,
        terms: Vec<Vec<f64>>,
        params: &MinRadParams,
        mode: MinRadMode,
    ) -> Result<Self> {
        let values = terms
            .iter()
            .map(|t| chi_from_terms(t, params, mode, None))
            .collect::<Result<Vec<_>>>()?;
        let chi: Vec<f64> = values.iter().map(|v| v.value).collect();
        let regularized = lipschitz_regularize(&chi, m, spacing, params.lipschitz, true);
        Ok(MinimalRadiusField {
            anchors_per_side: m,
            spacing,
            saturated: values.iter().map(|v| v.saturated).collect(),
            chi,
            regularized,
            terms,
            params: params.clone(),
        })
    }

    /// Field of constant value (degenerate ensembles and tests).
    pub fn constant(
        extent: f64,
        anchors_per_side: usize,
        value: f64,
        params: &MinRadParams,
    ) -> Self {
        let count = anchors_per_side * anchors_per_side;
        MinimalRadiusField {
            anchors_per_side,
            spacing: extent / anchors_per_side as f64,
            chi: vec![value; count],
            saturated: vec![false; count],
            regularized: vec![value; count],
            terms: vec![Vec::new(); count],
            params: params.clone(),
        }
    }

    /// The same bracket terms thresholded with another `theta`.
    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        let mut params = self.params.clone();
        params.theta = theta;
        params.validate()?;
        Self::from_terms(
            self.anchors_per_side,
            self.spacing,
            self.terms.clone(),
            &params,
            MinRadMode::Simple,
        )
    }

    /// Smoothed minimal radius: each bracket is scaled by the envelope
    /// `X_R = R^(-kappa) sup_{B_R} chi_reg` of this field.
    pub fn smoothed(&self, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa < self.params.exponent()) {
            return Err(Error::invalid(format!(
                "kappa {kappa} must lie in (0, {})",
                self.params.exponent()
            )));
        }
        let mode = MinRadMode::Smoothed { kappa };
        let mut values = Vec::with_capacity(self.chi.len());
        for (idx, t) in self.terms.iter().enumerate() {
            let x0 = self.anchor_position(idx);
            let env: Vec<f64> = self
                .params
                .radii
                .iter()
                .map(|&r| self.sup_in_ball(x0, r))
                .collect();
            values.push(chi_from_terms(t, &self.params, mode, Some(&env))?);
        }
        let chi: Vec<f64> = values.iter().map(|v| v.value).collect();
        let regularized = lipschitz_regularize(
            &chi,
            self.anchors_per_side,
            self.spacing,
            self.params.lipschitz,
            true,
        );
        Ok(MinimalRadiusField {
            anchors_per_side: self.anchors_per_side,
            spacing: self.spacing,
            saturated: values.iter().map(|v| v.saturated).collect(),
            chi,
            regularized,
            terms: self.terms.clone(),
            params: self.params.clone(),
        })
    }

    pub fn extent(&self) -> f64 {
        self.spacing * self.anchors_per_side as f64
    }

    pub fn anchor_position(&self, idx: usize) -> [f64; 2] {
        let m = self.anchors_per_side;
        [
            ((idx % m) as f64 + 0.5) * self.spacing,
            ((idx / m) as f64 + 0.5) * self.spacing,
        ]
    }

    /// `sup` of the regularized field over anchors in `B_r(x0)` (periodic).
    pub fn sup_in_ball(&self, x0: [f64; 2], r: f64) -> f64 {
        let e = self.extent();
        let mut best = f64::NEG_INFINITY;
        let mut nearest = (f64::INFINITY, 0usize);
        for idx in 0..self.regularized.len() {
            let a = self.anchor_position(idx);
            let dx = wrap(a[0] - x0[0], e);
            let dy = wrap(a[1] - x0[1], e);
            let d = dx.hypot(dy);
            if d <= r {
                best = best.max(self.regularized[idx]);
            }
            if d < nearest.0 {
                nearest = (d, idx);
            }
        }
        if best.is_finite() {
            best
        } else {
            self.regularized[nearest.1]
        }
    }

    /// Regularized minimal radius at an arbitrary point (periodic bilinear
    /// interpolation between anchors).
    pub fn value_at(&self, x: [f64; 2]) -> f64 {
        let m = self.anchors_per_side;
        let gx = (x[0] / self.spacing - 0.5).rem_euclid(m as f64);
        let gy = (x[1] / self.spacing - 0.5).rem_euclid(m as f64);
        let i0 = (gx.floor() as usize) % m;
        let j0 = (gy.floor() as usize) % m;
        let (tx, ty) = (gx - gx.floor(), gy - gy.floor());
        let (i1, j1) = ((i0 + 1) % m, (j0 + 1) % m);
        let v = |i: usize, j: usize| self.regularized[j * m + i];
        (1.0 - tx) * (1.0 - ty) * v(i0, j0)
            + tx * (1.0 - ty) * v(i1, j0)
            + (1.0 - tx) * ty * v(i0, j1)
            + tx * ty * v(i1, j1)
    }

    /// Fraction of lattice edges (with wrap-around) on which
    /// `|reg(x) - reg(y)| <= |x - y| / L` holds.
    pub fn lipschitz_edge_pass_rate(&self) -> f64 {
        lipschitz_edge_pass_rate(
            &self.regularized,
            self.anchors_per_side,
            self.spacing,
            self.params.lipschitz,
        )
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,y,chi,chi_regularized")?;
        for idx in 0..self.chi.len() {
            let p = self.anchor_position(idx);
            writeln!(
                out,
                "{},{},{},{}",
                fmt_f64(p[0]),
                fmt_f64(p[1]),
                fmt_f64(self.chi[idx]),
                fmt_f64(self.regularized[idx])
            )?;
        }
        Ok(())
    }
}

fn wrap(d: f64, e: f64) -> f64 {
    d - e * (d / e).round()
}

fn anchors(grid: &Grid, stride: usize) -> Vec<[f64; 2]> {
    let n = grid.n();
    (0..n)
        .step_by(stride)
        .flat_map(|j| (0..n).step_by(stride).map(move |i| (i, j)))
        .map(|(i, j)| grid.cell_center(grid.cell_index(i, j)))
        .collect()
}

/// `R^(-kappa) max_{B_R(x0)} chi`.
pub fn envelope_x(field: &MinimalRadiusField, r: f64, x0: [f64; 2], kappa: f64) -> f64 {
    r.powf(-kappa) * field.sup_in_ball(x0, r)
}

/// Largest `1/L`-Lipschitz function below `chi` on an `m x m` lattice:
/// `min_y chi(y) + |x - y| / L` (minimum image when `periodic`).
///
/// Exact: for each distinct value the Euclidean distance transform of its
/// level set is computed; many distinct values fall back to a direct scan.
pub fn lipschitz_regularize(
    chi: &[f64],
    m: usize,
    spacing: f64,
    lipschitz: f64,
    periodic: bool,
) -> Vec<f64> {
    let mut levels: Vec<f64> = chi.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    if levels.len() > 64 {
        return lipschitz_regularize_direct(chi, m, spacing, lipschitz, periodic);
    }
    let mut out = chi.to_vec();
    for &level in &levels {
        let seeds: Vec<bool> = chi.iter().map(|&v| v == level).collect();
        let d2 = squared_distance_transform(&seeds, m, periodic);
        for (o, &d) in out.iter_mut().zip(&d2) {
            let cand = level + d.sqrt() * spacing / lipschitz;
            if cand < *o {
                *o = cand;
            }
        }
    }
    out
}

/// Reference `O(N^2)` inf-convolution.
pub fn lipschitz_regularize_direct(
    chi: &[f64],
    m: usize,
    spacing: f64,
    lipschitz: f64,
    periodic: bool,
) -> Vec<f64> {
    let mf = m as f64;
    (0..chi.len())
        .map(|x| {
            let (xi, xj) = ((x % m) as f64, (x / m) as f64);
            let mut best = chi[x];
            for (y, &cy) in chi.iter().enumerate() {
                if cy >= best {
                    continue;
                }
                let (mut dx, mut dy) = ((y % m) as f64 - xi, (y / m) as f64 - xj);
                if periodic {
                    dx -= mf * (dx / mf).round();
                    dy -= mf * (dy / mf).round();
                }
                let cand = cy + dx.hypot(dy) * spacing / lipschitz;
                if cand < best {
                    best = cand;
                }
            }
            best
        })
        .collect()
}

/// Squared Euclidean distance (in lattice units) to the nearest seed.
fn squared_distance_transform(seeds: &[bool], m: usize, periodic: bool) -> Vec<f64> {
    let inf = 1e30;
    let copies = if periodic { 3 } else { 1 };
    let len = m * copies;
    let mut buf = vec![0.0; len];
    let mut tmp = vec![0.0; len];
    let mut f: Vec<f64> = seeds.iter().map(|&s| if s { 0.0 } else { inf }).collect();
    // rows
    for j in 0..m {
        for c in 0..copies {
            for i in 0..m {
                buf[c * m + i] = f[j * m + i];
            }
        }
        edt_1d(&buf, &mut tmp);
        let off = if periodic { m } else { 0 };
        for i in 0..m {
            f[j * m + i] = tmp[off + i];
        }
    }
    // columns
    for i in 0..m {
        for c in 0..copies {
            for j in 0..m {
                buf[c * m + j] = f[j * m + i];
            }
        }
        edt_1d(&buf, &mut tmp);
        let off = if periodic { m } else { 0 };
        for j in 0..m {
            f[j * m + i] = tmp[off + j];
        }
    }
    f
}

/// One-dimensional squared distance transform (lower envelope of parabolas).
fn edt_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let inf = 1e30;
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    let mut k = 0usize;
    let first = f.iter().position(|&x| x < inf);
    let Some(start) = first else {
        d.iter_mut().for_each(|x| *x = inf);
        return;
    };
    v[0] = start;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in start + 1..n {
        if f[q] >= inf {
            continue;
        }
        loop {
            let p = v[k];
            let s =
                ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0 and the new parabola dominates everywhere
                v[0] = q;
                z[1] = f64::INFINITY;
                break;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    let mut k = 0;
    for (q, dq) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let diff = q as f64 - p as f64;
        *dq = diff * diff + f[p];
    }
}

/// Fraction of 4-neighbor lattice edges satisfying the `1/L` bound.
pub fn lipschitz_edge_pass_rate(values: &[f64], m: usize, spacing: f64, lipschitz: f64) -> f64 {
    let bound = spacing / lipschitz + 1e-12;
    let mut pass = 0usize;
    let mut total = 0usize;
    for j in 0..m {
        for i in 0..m {
            let v = values[j * m + i];
            for (ni, nj) in [((i + 1) % m, j), (i, (j + 1) % m)] {
                total += 1;
                if (v - values[nj * m + ni]).abs() <= bound {
                    pass += 1;
                }
            }
        }
    }
    pass as f64 / total as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub beta: f64,
    pub moment: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl MomentEstimate {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }

    /// Agreement within two combined confidence half-widths.
    pub fn agrees_with(&self, other: &MomentEstimate) -> bool {
        let tol = 2.0 * self.half_width().hypot(other.half_width());
        (self.moment - other.moment).abs() <= tol
    }
}

/// `<chi^beta>` over samples and anchors with 95% bootstrap intervals
/// (samples resampled as units).
pub fn moment_report(
    samples: &[Vec<f64>],
    betas: &[f64],
    n_boot: usize,
    seed: u64,
) -> Result<Vec<MomentEstimate>> {
    if samples.len() < 8 {
        return Err(Error::InsufficientSamples(format!(
            "{} samples, need at least 8",
            samples.len()
        )));
    }
    if let Some(s) = samples.iter().find(|s| s.len() < 16) {
        return Err(Error::InsufficientSamples(format!(
            "{} anchors in a sample, need at least 16",
            s.len()
        )));
    }
    let mut out = Vec::new();
    for (b, &beta) in betas.iter().enumerate() {
        let per_sample: Vec<f64> = samples
            .iter()
            .map(|s| s.iter().map(|x| x.powf(beta)).sum::<f64>() / s.len() as f64)
            .collect();
        let moment = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
        let (lo, hi) = bootstrap_mean_ci(&per_sample, n_boot, seed ^ b as u64);
        out.push(MomentEstimate {
            beta,
            moment,
            ci_low: lo,
            ci_high: hi,
        });
    }
    Ok(out)
}

/// Percentile bootstrap 95% interval of the mean.
pub fn bootstrap_mean_ci(values: &[f64], n_boot: usize, seed: u64) -> (f64, f64) {
    let n = values.len();
    let mut rng = stream_rng(seed, &[0xb007]);
    let mut means: Vec<f64> = (0..n_boot.max(1))
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let q = |f: f64| means[((f * (means.len() - 1) as f64).round() as usize).min(means.len() - 1)];
    (q(0.025), q(0.975))
}
