//! Stationary Gaussian fields by circulant embedding and their squashing into
//! uniformly elliptic scalar coefficients, plus two-valued validation fixtures.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::write_xy_field;

/// Largest fraction of spectral mass that may be clipped before the
/// embedding is declared invalid.
pub const MAX_CLIPPED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Covariance {
    /// `exp(-|x|^2 / l^2)`
    GaussianBump,
    /// `exp(-|x| / l)` cut off at `6 l`
    TruncatedExponential,
}

impl Covariance {
    pub fn eval(&self, r: f64, corr_len: f64) -> f64 {
        match self {
            Covariance::GaussianBump => (-(r * r) / (corr_len * corr_len)).exp(),
            Covariance::TruncatedExponential => {
                if r <= 6.0 * corr_len {
                    (-r / corr_len).exp()
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub lambda: f64,
    pub corr_len: f64,
    #[serde(default = "default_covariance")]
    pub covariance: Covariance,
    pub master_seed: u64,
    pub n_samples: usize,
}

fn default_covariance() -> Covariance {
    Covariance::GaussianBump
}

impl EnsembleSpec {
    pub fn new(lambda: f64, corr_len: f64, master_seed: u64, n_samples: usize) -> Self {
        EnsembleSpec {
            lambda,
            corr_len,
            covariance: Covariance::GaussianBump,
            master_seed,
            n_samples,
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::invalid(format!(
                "lambda {} not in (0, 1)",
                self.lambda
            )));
        }
        if !(self.corr_len >= 2.0 * grid.h() * (1.0 - 1e-12)) {
            return Err(Error::invalid(format!(
                "correlation length {} is below two cells ({})",
                self.corr_len,
                2.0 * grid.h()
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be positive"));
        }
        Ok(())
    }
}

/// Mixes a master seed with a stream of keys (splitmix64 finalizer), so each
/// sample owns an RNG stream independent of evaluation order.
pub fn stream_seed(master_seed: u64, keys: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    keys.iter()
        .fold(mix(master_seed), |acc, &k| mix(acc ^ mix(k)))
}

pub fn stream_rng(master_seed: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master_seed, keys))
}

/// Per-cell scalar coefficient bounded by `[lambda, 1/lambda]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    pub values: Vec<f64>,
    pub sample_index: u64,
    pub lambda: f64,
}

impl CoefficientField {
    pub fn constant(grid: &Grid, c: f64) -> Self {
        CoefficientField {
            values: vec![c; grid.cell_count()],
            sample_index: 0,
            lambda: c.min(1.0 / c),
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn is_elliptic(&self) -> bool {
        let (lo, hi) = self.min_max();
        lo >= self.lambda && hi <= 1.0 / self.lambda
    }

    pub fn write_csv<W: Write>(&self, grid: &Grid, out: W) -> Result<()> {
        write_xy_field(
            out,
            "a",
            (0..grid.cell_count()).map(|i| grid.cell_center(i)),
            &self.values,
        )
    }
}

/// Zero-mean, unit-variance stationary Gaussian field on the periodic cell
/// lattice of `grid`, sampled by circulant embedding.
pub fn sample_gaussian(grid: &Grid, spec: &EnsembleSpec, sample_index: u64) -> Result<Vec<f64>> {
    spec.validate(grid)?;
    let eigen = embedding_spectrum(grid, spec)?;
    let n = grid.n();
    let total = (n * n) as f64;
    let mut rng = stream_rng(spec.master_seed, &[sample_index]);
    let mut w: Vec<Complex64> = eigen
        .iter()
        .map(|&lam| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im) * (lam / total).sqrt()
        })
        .collect();
    fft2(&mut w, n, false);
    Ok(w.into_iter().map(|z| z.re).collect())
}

/// Eigenvalues of the block-circulant covariance matrix (clipped at zero).
pub fn embedding_spectrum(grid: &Grid, spec: &EnsembleSpec) -> Result<Vec<f64>> {
    let n = grid.n();
    let origin = grid.cell_center(0);
    let mut row: Vec<Complex64> = (0..n * n)
        .map(|idx| {
            let r = grid.distance(origin, grid.cell_center(idx));
            let r = if grid.is_periodic() {
                r
            } else {
                // masked grids are sampled on their periodic super-grid
                let d = grid.cell_center(idx);
                let wrap = |x: f64| x - grid.extent() * (x / grid.extent()).round();
                wrap(d[0] - origin[0]).hypot(wrap(d[1] - origin[1]))
            };
            Complex64::new(spec.covariance.eval(r, spec.corr_len), 0.0)
        })
        .collect();
    fft2(&mut row, n, false);
    let mut clipped = 0.0;
    let mut mass = 0.0;
    let eigen: Vec<f64> = row
        .iter()
        .map(|z| {
            mass += z.re.abs();
            if z.re < 0.0 {
                clipped -= z.re;
                0.0
            } else {
                z.re
            }
        })
        .collect();
    let fraction = clipped / mass;
    if fraction > MAX_CLIPPED_FRACTION {
        return Err(Error::EmbeddingFailure {
            clipped_fraction: fraction,
        });
    }
    Ok(eigen)
}

fn fft2(data: &mut [Complex64], n: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    for row in data.chunks_mut(n) {
        fft.process(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..n {
        for j in 0..n {
            column[j] = data[j * n + i];
        }
        fft.process(&mut column);
        for j in 0..n {
            data[j * n + i] = column[j];
        }
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `a = lambda + (1/lambda - lambda) * Phi(g)`.
pub fn to_coefficient(g: &[f64], spec: &EnsembleSpec, sample_index: u64) -> CoefficientField {
    let lam = spec.lambda;
    let span = 1.0 / lam - lam;
    CoefficientField {
        values: g
            .iter()
            .map(|&x| (lam + span * normal_cdf(x)).clamp(lam, 1.0 / lam))
            .collect(),
        sample_index,
        lambda: lam,
    }
}

/// Sample `sample_index` of the ensemble, mapped to a coefficient field.
pub fn sample_coefficient(
    grid: &Grid,
    spec: &EnsembleSpec,
    sample_index: u64,
) -> Result<CoefficientField> {
    let g = sample_gaussian(grid, spec, sample_index)?;
    Ok(to_coefficient(&g, spec, sample_index))
}

/// Independent two-valued cells: each grid cell is `alpha` or `beta` with
/// probability 1/2.
pub fn checkerboard(grid: &Grid, alpha: f64, beta: f64, seed: u64) -> Result<CoefficientField> {
    checkerboard_tiled(grid, alpha, beta, seed, 1)
}

/// Random checkerboard whose squares span `tile x tile` grid cells.
pub fn checkerboard_tiled(
    grid: &Grid,
    alpha: f64,
    beta: f64,
    seed: u64,
    tile: usize,
) -> Result<CoefficientField> {
    if !(alpha > 0.0 && alpha <= beta) {
        return Err(Error::invalid(format!(
            "need 0 < alpha <= beta, got {alpha}, {beta}"
        )));
    }
    let n = grid.n();
    if tile == 0 || !n.is_multiple_of(tile) {
        return Err(Error::invalid(format!(
            "tile {tile} does not divide n = {n}"
        )));
    }
    let m = n / tile;
    let mut rng = stream_rng(seed, &[0xc4ec_4b0a]);
    let squares: Vec<bool> = (0..m * m).map(|_| rng.random::<bool>()).collect();
    let values = (0..grid.cell_count())
        .map(|idx| {
            let (i, j) = grid.cell_ij(idx);
            if squares[(j / tile) * m + i / tile] {
                alpha
            } else {
                beta
            }
        })
        .collect();
    Ok(CoefficientField {
        values,
        sample_index: seed,
        lambda: alpha.min(1.0 / beta).min(1.0),
    })
}

/// Layered medium `a(x_1)` with `stripes` alternating bands, starting with `alpha`.
pub fn laminate(grid: &Grid, alpha: f64, beta: f64, stripes: usize) -> Result<CoefficientField> {
    let n = grid.n();
    if stripes == 0 || !n.is_multiple_of(stripes) {
        return Err(Error::invalid(format!(
            "{stripes} stripes do not divide n = {n}"
        )));
    }
    let width = n / stripes;
    let values = (0..grid.cell_count())
        .map(|idx| {
            let (i, _) = grid.cell_ij(idx);
            if (i / width).is_multiple_of(2) {
                alpha
            } else {
                beta
            }
        })
        .collect();
    let lo = alpha.min(beta);
    let hi = alpha.max(beta);
    Ok(CoefficientField {
        values,
        sample_index: 0,
        lambda: lo.min(1.0 / hi).min(1.0),
    })
}

/// Fraction of `sum_v |c(v)| h^2` contributed by lags beyond `5 l`.
pub fn covariance_tail_fraction(grid: &Grid, spec: &EnsembleSpec) -> f64 {
    let origin = grid.cell_center(0);
    let mut total = 0.0;
    let mut tail = 0.0;
    for idx in 0..grid.cell_count() {
        let r = grid.distance(origin, grid.cell_center(idx));
        let c = spec.covariance.eval(r, spec.corr_len).abs();
        total += c;
        if r > 5.0 * spec.corr_len {
            tail += c;
        }
    }
    tail / total
}
