//! Homogenization commutator `H = int h . (a - abar)(grad u_eps - grad ubar -
//! (grad phi_i)^eps eta d_i ubar)` and the scaling of its fluctuations in `eps`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::correctors::Matrix2;
use crate::error::{Error, Result};
use crate::fit::least_squares;
use crate::grid::Grid;
use crate::random_field::stream_rng;
use crate::two_scale::{CutoffPair, RescaledCorrector};

/// Minimum ensemble size per `eps` for a variance fit.
pub const MIN_FLUCTUATION_SAMPLES: usize = 16;

/// Ensemble size from which centered fourth moments are reported.
pub const HIGHER_MOMENT_SAMPLES: usize = 64;

/// Vector test field per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TestField {
    pub values: Vec<[f64; 2]>,
}

impl TestField {
    /// `direction * sin^2 sin^2` bump on the middle half `[E/4, 3E/4]^2` of
    /// the bounding square; exactly zero elsewhere.
    pub fn bump(grid: &Grid, direction: [f64; 2]) -> Self {
        let e = grid.extent();
        let (lo, hi) = (0.25 * e, 0.75 * e);
        let profile = |t: f64| {
            if t <= lo || t >= hi {
                0.0
            } else {
                (std::f64::consts::PI * (t - lo) / (hi - lo)).sin().powi(2)
            }
        };
        let values = (0..grid.cell_count())
            .map(|c| {
                if !grid.inside(c) {
                    return [0.0; 2];
                }
                let [x, y] = grid.cell_center(c);
                let b = profile(x) * profile(y);
                [b * direction[0], b * direction[1]]
            })
            .collect();
        TestField { values }
    }

    pub fn scaled(&self, t: f64) -> Self {
        TestField {
            values: self.values.iter().map(|v| [t * v[0], t * v[1]]).collect(),
        }
    }

    /// Rejects fields that do not vanish on the layer `O_{2 eps}`.
    pub fn check_support(&self, grid: &Grid, epsilon: f64) -> Result<()> {
        if self.values.len() != grid.cell_count() {
            return Err(Error::MismatchedGrids("test field length".into()));
        }
        for c in 0..grid.cell_count() {
            if grid.inside(c) && grid.delta(c) <= 2.0 * epsilon && self.values[c] != [0.0; 2] {
                let [x, y] = grid.cell_center(c);
                return Err(Error::UnsupportedTestField(format!(
                    "nonzero at ({x}, {y}) within {} of the boundary",
                    2.0 * epsilon
                )));
            }
        }
        Ok(())
    }
}

/// One realization of the commutator.
#[allow(clippy::too_many_arguments)]
pub fn commutator_h(
    grid: &Grid,
    a: &[f64],
    a_bar: &Matrix2,
    grad_eps: &[[f64; 2]],
    grad_bar: &[[f64; 2]],
    corrector: &RescaledCorrector,
    cutoffs: &CutoffPair,
    test: &TestField,
) -> Result<f64> {
    let cells = grid.cell_count();
    if a.len() != cells
        || grad_eps.len() != cells
        || grad_bar.len() != cells
        || corrector.grad[0].len() != cells
    {
        return Err(Error::MismatchedGrids(
            "commutator inputs do not share a grid".into(),
        ));
    }
    test.check_support(grid, cutoffs.epsilon)?;
    let h2 = grid.h() * grid.h();
    let mut total = 0.0;
    for c in 0..cells {
        let t = test.values[c];
        if !grid.inside(c) || t == [0.0; 2] {
            continue;
        }
        let mut v = [
            grad_eps[c][0] - grad_bar[c][0],
            grad_eps[c][1] - grad_bar[c][1],
        ];
        for i in 0..2 {
            let w = cutoffs.eta[c] * grad_bar[c][i];
            v[0] -= corrector.grad[i][c][0] * w;
            v[1] -= corrector.grad[i][c][1] * w;
        }
        // (a - abar) v with abar acting as (abar v)_j = abar[j][i] v_i
        let flux = [
            a[c] * v[0] - (a_bar[0][0] * v[0] + a_bar[0][1] * v[1]),
            a[c] * v[1] - (a_bar[1][0] * v[0] + a_bar[1][1] * v[1]),
        ];
        total += (t[0] * flux[0] + t[1] * flux[1]) * h2;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub epsilon: f64,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (`n - 1` normalization).
    pub std: f64,
    /// `<(H - <H>)^4>^(1/4)`, only with enough samples.
    pub fourth_moment_root: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceFit {
    /// Slope of `ln std(H)` against `ln eps`; absent when every level has
    /// zero variance.
    pub exponent: Option<f64>,
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
    /// Percentile bootstrap 95% interval of the exponent.
    pub ci: Option<(f64, f64)>,
    pub zero_variance: bool,
    pub levels: Vec<LevelStats>,
}

impl VarianceFit {
    pub fn ci_width(&self) -> Option<f64> {
        self.ci.map(|(lo, hi)| hi - lo)
    }
}

pub fn level_stats(epsilon: f64, values: &[f64]) -> LevelStats {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
    let fourth = (n >= HIGHER_MOMENT_SAMPLES)
        .then(|| (values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n as f64).powf(0.25));
    LevelStats {
        epsilon,
        n,
        mean,
        std: var.sqrt(),
        fourth_moment_root: fourth,
    }
}

/// Fits `std(H) ~ eps^s` over the levels, with a bootstrap interval from
/// resampling each level's realizations.
pub fn variance_scaling(
    epsilons: &[f64],
    samples: &[Vec<f64>],
    n_boot: usize,
    seed: u64,
) -> Result<VarianceFit> {
    if epsilons.len() != samples.len() {
        return Err(Error::invalid(format!(
            "{} scales for {} sample sets",
            epsilons.len(),
            samples.len()
        )));
    }
    if epsilons.len() < 3 {
        return Err(Error::InsufficientSamples(format!(
            "need 3 scales, got {}",
            epsilons.len()
        )));
    }
    if let Some(s) = samples.iter().find(|s| s.len() < MIN_FLUCTUATION_SAMPLES) {
        return Err(Error::InsufficientSamples(format!(
            "need {MIN_FLUCTUATION_SAMPLES} samples per scale, got {}",
            s.len()
        )));
    }
    let levels: Vec<LevelStats> = epsilons
        .iter()
        .zip(samples)
        .map(|(&e, s)| level_stats(e, s))
        .collect();
    if levels.iter().all(|l| l.std == 0.0) {
        return Ok(VarianceFit {
            exponent: None,
            intercept: None,
            r_squared: None,
            ci: None,
            zero_variance: true,
            levels,
        });
    }
    let lx: Vec<f64> = epsilons.iter().map(|e| e.ln()).collect();
    let fit = |stds: &[f64]| -> Option<(f64, f64, f64)> {
        if stds.iter().any(|s| !(*s > 0.0)) {
            return None;
        }
        let ly: Vec<f64> = stds.iter().map(|s| s.ln()).collect();
        Some(least_squares(&lx, &ly))
    };
    let stds: Vec<f64> = levels.iter().map(|l| l.std).collect();
    let (slope, intercept, r2) = fit(&stds).ok_or(Error::NonPositiveValue(0.0))?;

    let mut rng = stream_rng(seed, &[0x626f_6f74]);
    let mut slopes = Vec::with_capacity(n_boot);
    let mut buf = Vec::new();
    for _ in 0..n_boot {
        let boot: Vec<f64> = samples
            .iter()
            .zip(epsilons)
            .map(|(s, &e)| {
                buf.clear();
                buf.extend((0..s.len()).map(|_| s[rng.random_range(0..s.len())]));
                level_stats(e, &buf).std
            })
            .collect();
        if let Some((b, _, _)) = fit(&boot) {
            slopes.push(b);
        }
    }
    slopes.sort_by(f64::total_cmp);
    let ci = (!slopes.is_empty()).then(|| {
        let q = |p: f64| {
            slopes[((p * (slopes.len() - 1) as f64).round() as usize).min(slopes.len() - 1)]
        };
        (q(0.025), q(0.975))
    });
    Ok(VarianceFit {
        exponent: Some(slope),
        intercept: Some(intercept),
        r_squared: Some(r2),
        ci,
        zero_variance: false,
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correctors::CorrectorSet;
    use crate::fem::{assemble, gradient, solve_div_f, Constraint, SolveOptions};
    use crate::grid::Shape;
    use crate::random_field::{sample_coefficient, EnsembleSpec};
    use crate::two_scale::{make_cutoffs, rescale_corrector};
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn bump_support_and_rejection() {
        let g = Grid::masked(64, 2.0, Shape::UnitSquare).unwrap();
        let t = TestField::bump(&g, [1.0, 0.0]);
        assert!(t.check_support(&g, 0.125).is_ok());
        assert!(t.check_support(&g, 0.5).is_err());
        let l = Grid::masked(64, 2.0, Shape::LShape).unwrap();
        assert!(TestField::bump(&l, [1.0, 0.0])
            .check_support(&l, 0.125)
            .is_err());
    }

    struct Pipeline {
        grid: Grid,
        a: Vec<f64>,
        a_bar: Matrix2,
        grad_eps: Vec<[f64; 2]>,
        grad_bar: Vec<[f64; 2]>,
        corrector: RescaledCorrector,
        cutoffs: CutoffPair,
    }

    fn pipeline(constant: bool, shift: f64) -> Pipeline {
        let eps = 0.125;
        let grid = Grid::masked(64, 2.0, Shape::UnitSquare).unwrap();
        // finer torus: the rescaled gradient is interpolated from nodal values
        let torus = Grid::periodic(128, 16.0).unwrap();
        let spec = EnsembleSpec::new(0.5, 0.5, 11, 1);
        let a_torus = if constant {
            vec![1.3; torus.cell_count()]
        } else {
            sample_coefficient(&torus, &spec, 0).unwrap().values
        };
        let mut set =
            CorrectorSet::compute(&torus, &a_torus, Some(0.5), SolveOptions::default()).unwrap();
        for phi in set.phi.iter_mut() {
            phi.iter_mut().for_each(|v| *v += shift);
        }
        let corrector = rescale_corrector(&torus, &set, eps, &grid).unwrap();
        let a: Vec<f64> = (0..grid.cell_count())
            .map(|c| {
                let [x, y] = grid.cell_center(c);
                a_torus[torus.locate_cell([x / eps, y / eps])]
            })
            .collect();
        let f: Vec<[f64; 2]> = (0..grid.cell_count())
            .map(|c| {
                let [x, y] = grid.cell_center(c);
                [(x * y).sin(), x - y]
            })
            .collect();
        let k = assemble(&grid, &a, Constraint::DirichletZero).unwrap();
        let (u, _) = solve_div_f(&k, &f, SolveOptions::default()).unwrap();
        let abar_field = vec![set.a_eff[0][0]; grid.cell_count()];
        let kb = assemble(&grid, &abar_field, Constraint::DirichletZero).unwrap();
        let (ub, _) = solve_div_f(&kb, &f, SolveOptions::default()).unwrap();
        Pipeline {
            cutoffs: make_cutoffs(&grid, eps).unwrap(),
            grad_eps: gradient(&grid, &u),
            grad_bar: gradient(&grid, &ub),
            a_bar: set.a_eff,
            grid,
            a,
            corrector,
        }
    }

    fn eval(p: &Pipeline, t: &TestField) -> f64 {
        commutator_h(
            &p.grid,
            &p.a,
            &p.a_bar,
            &p.grad_eps,
            &p.grad_bar,
            &p.corrector,
            &p.cutoffs,
            t,
        )
        .unwrap()
    }

    #[test]
    fn constant_coefficient_gives_zero() {
        let p = pipeline(true, 0.0);
        let t = TestField::bump(&p.grid, [1.0, 1.0]);
        assert_eq!(eval(&p, &t), 0.0);
    }

    #[test]
    fn linear_in_the_test_field() {
        let p = pipeline(false, 0.0);
        let t = TestField::bump(&p.grid, [1.0, 0.5]);
        let h1 = eval(&p, &t);
        assert!(h1 != 0.0);
        assert!((eval(&p, &t.scaled(2.0)) - 2.0 * h1).abs() <= 1e-12 * h1.abs());
        assert_eq!(eval(&p, &t.scaled(0.0)), 0.0);
    }

    #[test]
    fn corrector_anchoring_does_not_matter() {
        let a = eval(
            &pipeline(false, 0.0),
            &TestField::bump(
                &Grid::masked(64, 2.0, Shape::UnitSquare).unwrap(),
                [1.0, 0.0],
            ),
        );
        let b = eval(
            &pipeline(false, 3.7),
            &TestField::bump(
                &Grid::masked(64, 2.0, Shape::UnitSquare).unwrap(),
                [1.0, 0.0],
            ),
        );
        assert!((a - b).abs() <= 1e-9 * a.abs(), "{a} vs {b}");
    }

    fn synthetic(eps: &[f64], n: usize, exponent: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(seed, &[]);
        eps.iter()
            .map(|e| {
                (0..n)
                    .map(|_| {
                        e.powf(exponent)
                            * <StandardNormal as Distribution<f64>>::sample(
                                &StandardNormal,
                                &mut rng,
                            )
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn synthetic_exponent_and_ci_shrinkage() {
        let eps = [0.125, 0.0625, 0.03125];
        let small = variance_scaling(&eps, &synthetic(&eps, 32, 2.0, 1), 400, 5).unwrap();
        let large = variance_scaling(&eps, &synthetic(&eps, 256, 2.0, 1), 400, 5).unwrap();
        let s = large.exponent.unwrap();
        assert!((s - 2.0).abs() < 0.2, "{s}");
        assert!(large.ci_width().unwrap() < small.ci_width().unwrap());
        assert!(small.levels[0].fourth_moment_root.is_none());
        assert!(large.levels[0].fourth_moment_root.is_some());
    }

    #[test]
    fn zero_variance_is_flagged() {
        let eps = [0.125, 0.0625, 0.03125];
        let zeros = vec![vec![0.0; 16]; 3];
        let fit = variance_scaling(&eps, &zeros, 10, 0).unwrap();
        assert!(fit.zero_variance && fit.exponent.is_none());
        assert!(variance_scaling(&eps, &vec![vec![0.0; 8]; 3], 10, 0).is_err());
        assert!(variance_scaling(&eps[..2], &zeros[..2], 10, 0).is_err());
    }
}
