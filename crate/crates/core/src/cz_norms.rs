//! Averaged Calderón–Zygmund functionals, Muckenhoupt weights and the
//! averaging-geometry inequalities relating point values of local averages
//! to averages of local averages.
//!
//! All integrals are cell quadratures over the inside cells. Local averages
//! `avg_{U(x)}` are taken over the cells of `B_rho(x)` inside the domain, where
//! `rho = eps * chi(x / eps)` for minimal-radius balls and `rho = eps` otherwise.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BallAverager, BallRegion, Grid};
use crate::minimal_radius::MinimalRadiusField;
use crate::random_field::stream_rng;

/// Default half-width slack of the admissible exponent window.
pub const DEFAULT_WINDOW_THETA: f64 = 0.05;

/// Minimum ensemble size for the annealed functionals.
pub const MIN_ANNEALED_SAMPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum WeightKind {
    Unit,
    /// `(delta + offset)^sigma`: distance to an enlarged boundary lying
    /// `offset` outside the domain.
    DistancePower {
        sigma: f64,
        offset: f64,
    },
    /// `|x - center|^alpha`.
    RadialPower {
        alpha: f64,
        center: [f64; 2],
    },
}

impl fmt::Display for WeightKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightKind::Unit => write!(f, "unit"),
            WeightKind::DistancePower { sigma, offset } => {
                write!(f, "distance-power({sigma};{offset})")
            }
            WeightKind::RadialPower { alpha, center } => {
                write!(f, "radial-power({alpha};{};{})", center[0], center[1])
            }
        }
    }
}

/// Positive per-cell weight. Cells outside the domain carry the value 1 and
/// never enter an average.
#[derive(Debug, Clone, PartialEq)]
pub struct Weight {
    pub kind: WeightKind,
    pub values: Vec<f64>,
}

impl Weight {
    pub fn unit(grid: &Grid) -> Self {
        Weight {
            kind: WeightKind::Unit,
            values: vec![1.0; grid.cell_count()],
        }
    }

    pub fn distance_power(grid: &Grid, sigma: f64, offset: f64) -> Result<Self> {
        if grid.mask().is_none() {
            return Err(Error::invalid("distance weights need a masked domain"));
        }
        if !(offset > 0.0) {
            return Err(Error::invalid(format!(
                "boundary offset {offset} must be positive"
            )));
        }
        let values = (0..grid.cell_count())
            .map(|c| {
                if grid.inside(c) {
                    (grid.delta(c) + offset).powf(sigma)
                } else {
                    1.0
                }
            })
            .collect();
        Self::checked(WeightKind::DistancePower { sigma, offset }, values)
    }

    pub fn radial_power(grid: &Grid, alpha: f64, center: [f64; 2]) -> Result<Self> {
        let values = (0..grid.cell_count())
            .map(|c| {
                if grid.inside(c) {
                    grid.distance(grid.cell_center(c), center).powf(alpha)
                } else {
                    1.0
                }
            })
            .collect();
        Self::checked(WeightKind::RadialPower { alpha, center }, values)
    }

    fn checked(kind: WeightKind, values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::invalid(format!("weight {kind} takes the value {v}")));
        }
        Ok(Weight { kind, values })
    }
}

/// Random balls: centers at uniformly drawn inside cells, radii log-uniform in
/// `[r_min, r_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallSampler {
    pub n_balls: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub seed: u64,
}

impl BallSampler {
    /// Radii from two cells up to half the domain diameter.
    pub fn for_grid(grid: &Grid, n_balls: usize, seed: u64) -> Self {
        BallSampler {
            n_balls,
            r_min: 2.0 * grid.h(),
            r_max: 0.5 * grid.diameter(),
            seed,
        }
    }

    /// The ball list. A sampler with a larger budget and the same seed
    /// extends the list of a smaller one.
    pub fn balls(&self, grid: &Grid) -> Result<Vec<([f64; 2], f64)>> {
        if !(self.r_min > 0.0 && self.r_max >= self.r_min) {
            return Err(Error::invalid(format!(
                "ball radii [{}, {}] are not a positive interval",
                self.r_min, self.r_max
            )));
        }
        let inside = inside_cells(grid);
        if inside.is_empty() {
            return Err(Error::invalid("grid has no inside cells"));
        }
        let mut rng = stream_rng(self.seed, &[0x6d75_636b]);
        let (l0, l1) = (self.r_min.ln(), self.r_max.ln());
        Ok((0..self.n_balls)
            .map(|_| {
                let c = inside[rng.random_range(0..inside.len())];
                let r = (l0 + (l1 - l0) * rng.random::<f64>()).exp();
                (grid.cell_center(c), r)
            })
            .collect())
    }
}

fn inside_cells(grid: &Grid) -> Vec<usize> {
    (0..grid.cell_count()).filter(|&c| grid.inside(c)).collect()
}

fn region(grid: &Grid) -> BallRegion {
    if grid.is_periodic() {
        BallRegion::FullBall
    } else {
        BallRegion::IntersectDomain
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuckenhouptEstimate {
    pub q: f64,
    /// Largest sampled quotient: a lower bound on the characteristic constant.
    pub constant: f64,
    pub n_balls: usize,
    pub worst_center: [f64; 2],
    pub worst_radius: f64,
}

/// Sampled `A_q` characteristic constant: the largest value of
/// `(avg w)(avg w^(-1/(q-1)))^(q-1)` over the sampled balls, or of
/// `(avg w) max(1/w)` when `q = 1`.
pub fn muckenhoupt_constant(
    grid: &Grid,
    weight: &Weight,
    q: f64,
    sampler: &BallSampler,
) -> Result<MuckenhouptEstimate> {
    if !(q >= 1.0) {
        return Err(Error::invalid(format!(
            "Muckenhoupt exponent q = {q} is below 1"
        )));
    }
    let balls = sampler.balls(grid)?;
    let quotient = BallQuotient::new(grid, weight, q);
    let values: Vec<f64> = balls
        .par_iter()
        .map(|&(c, r)| quotient.eval(c, r))
        .collect();
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (k, &v) in values.iter().enumerate() {
        if v > best.0 {
            best = (v, k);
        }
    }
    let (worst_center, worst_radius) = balls.get(best.1).copied().unwrap_or(([0.0; 2], 0.0));
    Ok(MuckenhouptEstimate {
        q,
        constant: best.0.max(0.0),
        n_balls: balls.len(),
        worst_center,
        worst_radius,
    })
}

/// `A_q` quotient of a weight on arbitrary balls.
pub struct BallQuotient<'g> {
    grid: &'g Grid,
    q: f64,
    direct: BallAverager<'g>,
    dual: Option<BallAverager<'g>>,
    inverse: Vec<f64>,
}

impl<'g> BallQuotient<'g> {
    pub fn new(grid: &'g Grid, weight: &Weight, q: f64) -> Self {
        let reg = region(grid);
        let direct = BallAverager::new(grid, &weight.values, reg);
        let dual = (q > 1.0).then(|| {
            let e = -1.0 / (q - 1.0);
            let w: Vec<f64> = weight.values.iter().map(|v| v.powf(e)).collect();
            BallAverager::new(grid, &w, reg)
        });
        BallQuotient {
            grid,
            q,
            direct,
            dual,
            inverse: weight.values.iter().map(|v| 1.0 / v).collect(),
        }
    }

    /// Quotient on `B_r(center)`; zero for balls with no inside cell.
    pub fn eval(&self, center: [f64; 2], r: f64) -> f64 {
        let Some(avg) = self.direct.average(center, r) else {
            return 0.0;
        };
        match &self.dual {
            Some(dual) => avg * dual.average(center, r).unwrap_or(0.0).powf(self.q - 1.0),
            None => {
                let mut sup = 0.0f64;
                self.grid.for_each_cell_in_ball(center, r, |c| {
                    if self.grid.inside(c) {
                        sup = sup.max(self.inverse[c]);
                    }
                });
                avg * sup
            }
        }
    }
}

/// `A_q` quotient of `|x - center|^alpha` on the fixed ball `B_radius(center)`
/// at each resolution. Grids come from `build(n)`; the center should be a
/// grid node at every resolution.
pub fn radial_quotients(
    build: impl Fn(usize) -> Result<Grid>,
    resolutions: &[usize],
    alpha: f64,
    q: f64,
    center: [f64; 2],
    radius: f64,
) -> Result<Vec<f64>> {
    resolutions
        .iter()
        .map(|&n| {
            let grid = build(n)?;
            let w = Weight::radial_power(&grid, alpha, center)?;
            Ok(BallQuotient::new(&grid, &w, q).eval(center, radius))
        })
        .collect()
}

/// Refinement ladder verdict: the quotient increases at every step and the
/// last step grows it by more than `growth` (relative).
pub fn diverges_under_refinement(quotients: &[f64], growth: f64) -> bool {
    quotients.len() >= 3
        && quotients.windows(2).all(|w| w[1] > w[0])
        && quotients[quotients.len() - 1] > (1.0 + growth) * quotients[quotients.len() - 2]
}

/// Outcome of the sampled subset inequality `w(Q)(|S|/|Q|)^q <= C w(S)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub pairs: usize,
    pub violations: usize,
    /// Largest `w(Q)(|S|/|Q|)^q / (C w(S))`.
    pub worst_ratio: f64,
    pub inflation: f64,
}

impl MonotonicityReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Checks the subset inequality on random pairs `S ⊂ Q` with the constant
/// `constant * inflation`. Subsets cycle through sub-balls, random cell
/// subsets and the lowest-weight cells of `Q`.
pub fn monotonicity_check(
    grid: &Grid,
    weight: &Weight,
    q: f64,
    constant: f64,
    inflation: f64,
    sampler: &BallSampler,
) -> Result<MonotonicityReport> {
    let balls = sampler.balls(grid)?;
    let bound = constant * inflation;
    let ratios: Vec<f64> = balls
        .par_iter()
        .enumerate()
        .map(|(k, &(center, r))| {
            let mut rng = stream_rng(sampler.seed, &[0x7375_6273, k as u64]);
            let mut cells = Vec::new();
            grid.for_each_cell_in_ball(center, r, |c| {
                if grid.inside(c) {
                    cells.push(c);
                }
            });
            if cells.is_empty() {
                return 0.0;
            }
            let subset: Vec<usize> = match k % 3 {
                0 => {
                    let c0 = grid.cell_center(cells[rng.random_range(0..cells.len())]);
                    let r0 = r * rng.random::<f64>();
                    cells
                        .iter()
                        .copied()
                        .filter(|&c| grid.distance(grid.cell_center(c), c0) <= r0)
                        .collect()
                }
                1 => {
                    let keep = rng.random::<f64>();
                    cells
                        .iter()
                        .copied()
                        .filter(|_| rng.random::<f64>() < keep)
                        .collect()
                }
                _ => {
                    let mut sorted = cells.clone();
                    sorted.sort_by(|&a, &b| weight.values[a].total_cmp(&weight.values[b]));
                    let take = rng.random_range(1..=sorted.len());
                    sorted.truncate(take);
                    sorted
                }
            };
            if subset.is_empty() {
                return 0.0;
            }
            let wq: f64 = cells.iter().map(|&c| weight.values[c]).sum();
            let ws: f64 = subset.iter().map(|&c| weight.values[c]).sum();
            let frac = subset.len() as f64 / cells.len() as f64;
            wq * frac.powf(q) / (bound * ws)
        })
        .collect();
    Ok(MonotonicityReport {
        pairs: ratios.len(),
        violations: ratios.iter().filter(|&&v| v > 1.0).count(),
        worst_ratio: ratios.iter().fold(0.0f64, |a, &b| a.max(b)) * inflation,
        inflation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CzFlavor {
    /// Per realization, minimal-radius balls, exponent `p` on both sides.
    QuenchedA,
    /// Ensemble moments, `eps`-balls, exponent `p_bar` on the load.
    AnnealedB,
    /// Ensemble moments, minimal-radius balls, weight, exponent `p` on both sides.
    WeightedC,
    /// Ensemble moments, `eps`-balls, weight, exponent `p_bar` on the load.
    WeightedD,
}

impl CzFlavor {
    pub fn uses_minimal_radius(self) -> bool {
        matches!(self, CzFlavor::QuenchedA | CzFlavor::WeightedC)
    }

    pub fn is_annealed(self) -> bool {
        self != CzFlavor::QuenchedA
    }

    fn load_exponent(self, exps: &CzExponents) -> f64 {
        match self {
            CzFlavor::AnnealedB | CzFlavor::WeightedD => exps.p_bar,
            _ => exps.p,
        }
    }
}

impl fmt::Display for CzFlavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CzFlavor::QuenchedA => "quenched-a",
            CzFlavor::AnnealedB => "annealed-b",
            CzFlavor::WeightedC => "weighted-c",
            CzFlavor::WeightedD => "weighted-d",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CzExponents {
    pub p: f64,
    pub q: f64,
    pub p_bar: f64,
}

impl CzExponents {
    /// `q = p_bar = p`, the quenched setting.
    pub fn quenched(p: f64) -> Self {
        CzExponents { p, q: p, p_bar: p }
    }
}

/// `|1/p - 1/2| <= 1/(2d) + theta`.
pub fn admissible(p: f64, d: usize, theta: f64) -> bool {
    p > 1.0 && (1.0 / p - 0.5).abs() <= 0.5 / d as f64 + theta
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Lhs,
    Rhs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CzFunctional {
    pub side: Side,
    pub flavor: CzFlavor,
    pub p: f64,
    pub q: f64,
    pub p_bar: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CzEvaluation {
    pub lhs: CzFunctional,
    pub rhs: CzFunctional,
    pub epsilon: f64,
    /// Whether every exponent lies in the admissible window.
    pub admissible: bool,
    pub weight_kind: WeightKind,
}

impl CzEvaluation {
    pub fn ratio(&self) -> f64 {
        self.lhs.value / self.rhs.value
    }
}

/// Inputs of one functional evaluation. `loads` and `chi` may hold a single
/// entry shared by all samples.
pub struct CzInput<'a> {
    pub grid: &'a Grid,
    pub gradients: &'a [Vec<[f64; 2]>],
    pub loads: &'a [Vec<[f64; 2]>],
    pub chi: &'a [MinimalRadiusField],
    pub epsilon: f64,
    pub window_theta: f64,
}

/// Both sides of the chosen flavor.
pub fn cz_evaluate(
    input: &CzInput<'_>,
    flavor: CzFlavor,
    exps: CzExponents,
    weight: &Weight,
) -> Result<CzEvaluation> {
    let grid = input.grid;
    let n = input.gradients.len();
    if n == 0 {
        return Err(Error::InsufficientSamples("no gradient fields".into()));
    }
    if flavor.is_annealed() && n < MIN_ANNEALED_SAMPLES {
        return Err(Error::InsufficientSamples(format!(
            "{flavor} needs at least {MIN_ANNEALED_SAMPLES} samples, got {n}"
        )));
    }
    if !(input.loads.len() == 1 || input.loads.len() == n) {
        return Err(Error::invalid(format!(
            "{} loads for {n} samples",
            input.loads.len()
        )));
    }
    if flavor.uses_minimal_radius() && !(input.chi.len() == 1 || input.chi.len() == n) {
        return Err(Error::invalid(format!(
            "{} minimal-radius fields for {n} samples",
            input.chi.len()
        )));
    }
    if !(input.epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    if !(exps.p > 1.0 && exps.q >= 1.0 && exps.p_bar >= exps.p) {
        return Err(Error::invalid(format!("exponents {exps:?} out of range")));
    }
    let cells = grid.cell_count();
    for g in input.gradients.iter().chain(input.loads) {
        if g.len() != cells {
            return Err(Error::MismatchedGrids(format!(
                "field of length {} on {cells} cells",
                g.len()
            )));
        }
    }
    if weight.values.len() != cells {
        return Err(Error::MismatchedGrids("weight length".into()));
    }
    let (q, p_load) = match flavor {
        CzFlavor::QuenchedA => (exps.p, exps.p),
        _ => (exps.q, flavor.load_exponent(&exps)),
    };
    let weighted = matches!(flavor, CzFlavor::WeightedC | CzFlavor::WeightedD);
    let lhs = side_value(
        input,
        flavor,
        input.gradients,
        exps.p,
        q,
        weighted.then_some(weight),
    );
    let rhs = side_value(
        input,
        flavor,
        input.loads,
        p_load,
        q,
        weighted.then_some(weight),
    );
    let theta = input.window_theta;
    let admissible =
        admissible(exps.p, 2, theta) && (!flavor.is_annealed() || admissible(q, 2, theta));
    let functional = |side, value| CzFunctional {
        side,
        flavor,
        p: exps.p,
        q,
        p_bar: exps.p_bar,
        value,
    };
    Ok(CzEvaluation {
        lhs: functional(Side::Lhs, lhs),
        rhs: functional(Side::Rhs, rhs),
        epsilon: input.epsilon,
        admissible,
        weight_kind: if weighted {
            weight.kind
        } else {
            WeightKind::Unit
        },
    })
}

/// Quenched functional (A) for one realization.
pub fn cz_quenched(
    grid: &Grid,
    gradient: &[[f64; 2]],
    load: &[[f64; 2]],
    chi: &MinimalRadiusField,
    epsilon: f64,
    p: f64,
) -> Result<CzEvaluation> {
    let gradients = [gradient.to_vec()];
    let loads = [load.to_vec()];
    let chi = std::slice::from_ref(chi);
    let input = CzInput {
        grid,
        gradients: &gradients,
        loads: &loads,
        chi,
        epsilon,
        window_theta: DEFAULT_WINDOW_THETA,
    };
    cz_evaluate(
        &input,
        CzFlavor::QuenchedA,
        CzExponents::quenched(p),
        &Weight::unit(grid),
    )
}

/// `(sum_x h^2 w(x) <avg_{U(x)} |F|^2)^(p/2)>^(q/p))^(1/q)` over inside cells.
fn side_value(
    input: &CzInput<'_>,
    flavor: CzFlavor,
    fields: &[Vec<[f64; 2]>],
    p: f64,
    q: f64,
    weight: Option<&Weight>,
) -> f64 {
    let grid = input.grid;
    let h2 = grid.h() * grid.h();
    let samples = input.gradients.len();
    let inside = inside_cells(grid);
    let mut moment = vec![0.0; inside.len()];
    for s in 0..samples {
        let field = &fields[if fields.len() == 1 { 0 } else { s }];
        let chi = flavor
            .uses_minimal_radius()
            .then(|| &input.chi[if input.chi.len() == 1 { 0 } else { s }]);
        let averages = local_averages(grid, &squared_norm(field), input.epsilon, chi);
        for (m, a) in moment.iter_mut().zip(averages) {
            *m += a.powf(0.5 * p);
        }
    }
    let total: f64 = inside
        .iter()
        .zip(&moment)
        .map(|(&c, m)| {
            let w = weight.map_or(1.0, |w| w.values[c]);
            w * (m / samples as f64).powf(q / p) * h2
        })
        .sum();
    total.powf(1.0 / q)
}

fn squared_norm(field: &[[f64; 2]]) -> Vec<f64> {
    field.iter().map(|v| v[0] * v[0] + v[1] * v[1]).collect()
}

/// Radius of the averaging ball at `x`.
fn averaging_radius(x: [f64; 2], epsilon: f64, chi: Option<&MinimalRadiusField>) -> f64 {
    chi.map_or(epsilon, |chi| {
        epsilon * chi.value_at([x[0] / epsilon, x[1] / epsilon])
    })
}

/// `avg_{U(x)} f` at every inside cell (in the order of the inside cells).
pub fn local_averages(
    grid: &Grid,
    f: &[f64],
    epsilon: f64,
    chi: Option<&MinimalRadiusField>,
) -> Vec<f64> {
    let averager = BallAverager::new(grid, f, region(grid));
    inside_cells(grid)
        .par_iter()
        .map(|&c| {
            let x = grid.cell_center(c);
            // the center cell always belongs to its own ball
            averager
                .average(x, averaging_radius(x, epsilon, chi))
                .unwrap_or(f[c])
        })
        .collect()
}

/// The three averaging-geometry inequalities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum GeometryMode {
    /// `(avg_{U(x0)} f)^(1/s) <= C avg_{D_5r(X)} (avg_{U(x)} f)^(1/s) dx` for
    /// boundary points `X`, `x0 ∈ D_r(X)` and `r < eps chi(x0/eps) / 4`.
    Pointwise { s: f64 },
    /// `avg_{D_r} f <= C avg_{D_2r} avg_U f <= C^2 avg_{D_7r} f` for
    /// `r >= eps chi(X/eps) / 4`; both quotients are reported.
    Annular,
    /// `int f` against `int avg_U f`.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub mode: GeometryMode,
    /// Largest sampled quotient (for `Global`, the single quotient
    /// `int f / int avg_U f`).
    pub ratio: f64,
    /// Smallest sampled quotient.
    pub min_ratio: f64,
    pub configurations: usize,
}

/// Evaluates one geometry inequality on `n_configs` random configurations.
pub fn geometry_check(
    grid: &Grid,
    f: &[f64],
    chi: &MinimalRadiusField,
    epsilon: f64,
    mode: GeometryMode,
    n_configs: usize,
    seed: u64,
) -> Result<GeometryReport> {
    if f.len() != grid.cell_count() {
        return Err(Error::MismatchedGrids("field length".into()));
    }
    if f.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::invalid("geometry checks need a nonnegative field"));
    }
    let inside = inside_cells(grid);
    let averages = local_averages(grid, f, epsilon, Some(chi));
    let mut avg_field = vec![0.0; grid.cell_count()];
    for (&c, &a) in inside.iter().zip(&averages) {
        avg_field[c] = a;
    }
    if let GeometryMode::Global = mode {
        let total: f64 = inside.iter().map(|&c| f[c]).sum();
        let total_avg: f64 = averages.iter().sum();
        let ratio = if total_avg > 0.0 {
            total / total_avg
        } else {
            1.0
        };
        return Ok(GeometryReport {
            mode,
            ratio,
            min_ratio: ratio,
            configurations: 1,
        });
    }
    let reg = region(grid);
    let plain = BallAverager::new(grid, f, reg);
    let h = grid.h();
    let mut rng = stream_rng(seed, &[0x6765_6f6d]);
    let mut ratios = Vec::with_capacity(n_configs);
    let mut attempts = 0usize;
    while ratios.len() < n_configs && attempts < 100 * n_configs.max(1) {
        attempts += 1;
        let x_b = boundary_point(grid, &mut rng);
        let chi_b = averaging_radius(x_b, epsilon, Some(chi));
        match mode {
            GeometryMode::Pointwise { s } => {
                let r_hi = chi_b / 4.0;
                if r_hi <= 2.0 * h {
                    continue;
                }
                let r = log_uniform(&mut rng, 2.0 * h, r_hi);
                let mut near = Vec::new();
                grid.for_each_cell_in_ball(x_b, r, |c| {
                    if grid.inside(c) {
                        near.push(c);
                    }
                });
                if near.is_empty() {
                    continue;
                }
                let c0 = near[rng.random_range(0..near.len())];
                if r >= averaging_radius(grid.cell_center(c0), epsilon, Some(chi)) / 4.0 {
                    continue;
                }
                let lhs = avg_field[c0].powf(1.0 / s);
                let mut acc = 0.0;
                let mut count = 0usize;
                grid.for_each_cell_in_ball(x_b, 5.0 * r, |c| {
                    if grid.inside(c) {
                        acc += avg_field[c].powf(1.0 / s);
                        count += 1;
                    }
                });
                let rhs = acc / count as f64;
                if rhs > 0.0 {
                    ratios.push(lhs / rhs);
                } else if lhs == 0.0 {
                    ratios.push(1.0);
                } else {
                    ratios.push(f64::INFINITY);
                }
            }
            GeometryMode::Annular => {
                let r_lo = (chi_b / 4.0).max(2.0 * h);
                let r_hi = (0.5 * grid.diameter()).max(r_lo);
                let r = log_uniform(&mut rng, r_lo, r_hi);
                let inner = plain.average(x_b, r);
                let outer = plain.average(x_b, 7.0 * r);
                let middle = ball_mean(grid, &avg_field, x_b, 2.0 * r);
                let (Some(inner), Some(outer), Some(middle)) = (inner, outer, middle) else {
                    continue;
                };
                let quotient = |a: f64, b: f64| {
                    if b > 0.0 {
                        a / b
                    } else if a == 0.0 {
                        1.0
                    } else {
                        f64::INFINITY
                    }
                };
                ratios.push(quotient(inner, middle).max(quotient(middle, outer)));
            }
            GeometryMode::Global => unreachable!(),
        }
    }
    if ratios.is_empty() {
        return Err(Error::invalid(
            "no admissible geometry configuration was found",
        ));
    }
    Ok(GeometryReport {
        mode,
        ratio: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_ratio: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        configurations: ratios.len(),
    })
}

fn ball_mean(grid: &Grid, f: &[f64], center: [f64; 2], r: f64) -> Option<f64> {
    let mut acc = 0.0;
    let mut count = 0usize;
    grid.for_each_cell_in_ball(center, r, |c| {
        if grid.inside(c) {
            acc += f[c];
            count += 1;
        }
    });
    (count > 0).then(|| acc / count as f64)
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp()
}

/// Uniform point on the boundary polygon (by arc length); any point on a torus.
fn boundary_point(grid: &Grid, rng: &mut impl Rng) -> [f64; 2] {
    let Some(mask) = grid.mask() else {
        let e = grid.extent();
        return [e * rng.random::<f64>(), e * rng.random::<f64>()];
    };
    let poly = &mask.polygon;
    let edges: Vec<([f64; 2], [f64; 2], f64)> = (0..poly.len())
        .map(|k| {
            let a = poly[k];
            let b = poly[(k + 1) % poly.len()];
            (a, b, (b[0] - a[0]).hypot(b[1] - a[1]))
        })
        .collect();
    let perimeter: f64 = edges.iter().map(|e| e.2).sum();
    let mut t = perimeter * rng.random::<f64>();
    for &(a, b, len) in &edges {
        if t <= len {
            let s = t / len;
            return [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
        }
        t -= len;
    }
    poly[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble, gradient, solve_div_f, Constraint, SolveOptions};
    use crate::grid::Shape;
    use crate::minimal_radius::MinRadParams;
    use crate::random_field::{sample_coefficient, EnsembleSpec};

    fn chi_const(extent: f64, value: f64) -> MinimalRadiusField {
        let params = MinRadParams::new(0.5, 2.0, extent * std::f64::consts::SQRT_2, 4.0).unwrap();
        MinimalRadiusField::constant(extent, 8, value, &params)
    }

    #[test]
    fn unit_weight_has_constant_one() {
        let g = Grid::masked(64, 1.0, Shape::LShape).unwrap();
        let w = Weight::unit(&g);
        for q in [1.0, 1.5, 2.0, 3.0] {
            let est = muckenhoupt_constant(&g, &w, q, &BallSampler::for_grid(&g, 200, 3)).unwrap();
            assert!(
                (est.constant - 1.0).abs() < 1e-12,
                "q = {q}: {}",
                est.constant
            );
        }
    }

    #[test]
    fn q_below_one_is_rejected() {
        let g = Grid::masked(16, 1.0, Shape::UnitSquare).unwrap();
        let w = Weight::unit(&g);
        assert!(muckenhoupt_constant(&g, &w, 0.5, &BallSampler::for_grid(&g, 10, 1)).is_err());
    }

    #[test]
    fn budget_doubling_extends_the_ball_list() {
        let g = Grid::masked(32, 1.0, Shape::UnitSquare).unwrap();
        let a = BallSampler::for_grid(&g, 50, 9).balls(&g).unwrap();
        let b = BallSampler::for_grid(&g, 100, 9).balls(&g).unwrap();
        assert_eq!(a[..], b[..50]);
    }

    #[test]
    fn radial_power_outside_the_range_diverges() {
        let build = |n| Grid::masked(n, 1.0, Shape::UnitSquare);
        let ns = [32, 64, 128, 256];
        for alpha in [-2.5, 2.5] {
            let qs = radial_quotients(build, &ns, alpha, 2.0, [0.5, 0.5], 0.25).unwrap();
            assert!(
                diverges_under_refinement(&qs, 0.05),
                "alpha = {alpha}: {qs:?}"
            );
        }
        let qs = radial_quotients(build, &ns, 0.5, 2.0, [0.5, 0.5], 0.25).unwrap();
        assert!(!diverges_under_refinement(&qs, 0.05), "{qs:?}");
    }

    #[test]
    fn subset_inequality_holds_for_a_distance_weight() {
        let g = Grid::masked(64, 1.0, Shape::UnitSquare).unwrap();
        let w = Weight::distance_power(&g, 1.0, 2.0 / 16.0).unwrap();
        let est = muckenhoupt_constant(&g, &w, 2.0, &BallSampler::for_grid(&g, 2000, 1)).unwrap();
        let report = monotonicity_check(
            &g,
            &w,
            2.0,
            est.constant,
            1.5,
            &BallSampler::for_grid(&g, 600, 2),
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn coarsening_preserves_the_estimate() {
        // Same balls in physical coordinates, weight sampled at both resolutions.
        let fine = Grid::masked(128, 1.0, Shape::UnitSquare).unwrap();
        let coarse = Grid::masked(64, 1.0, Shape::UnitSquare).unwrap();
        let mut sampler = BallSampler::for_grid(&coarse, 800, 4);
        sampler.r_min = 0.05;
        let c = [0.5, 0.5];
        let a = muckenhoupt_constant(
            &fine,
            &Weight::radial_power(&fine, 1.0, c).unwrap(),
            2.0,
            &sampler,
        )
        .unwrap();
        let b = muckenhoupt_constant(
            &coarse,
            &Weight::radial_power(&coarse, 1.0, c).unwrap(),
            2.0,
            &sampler,
        )
        .unwrap();
        assert!(
            (a.constant / b.constant - 1.0).abs() < 0.1,
            "{} vs {}",
            a.constant,
            b.constant
        );
    }

    #[test]
    fn admissible_window() {
        assert!(admissible(2.0, 2, 0.05));
        assert!(admissible(4.9, 2, 0.05));
        assert!(!admissible(6.0, 2, 0.05));
        assert!(!admissible(1.2, 2, 0.05));
    }

    fn solve(grid: &Grid, a: &[f64], f: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let k = assemble(grid, a, Constraint::DirichletZero).unwrap();
        let (u, _) = solve_div_f(&k, f, SolveOptions::default()).unwrap();
        gradient(grid, &u)
    }

    fn smooth_load(grid: &Grid) -> Vec<[f64; 2]> {
        (0..grid.cell_count())
            .map(|c| {
                let [x, y] = grid.cell_center(c);
                [(3.0 * x).sin() + y, (2.0 * y).cos() * x]
            })
            .collect()
    }

    #[test]
    fn zero_load_gives_zero_lhs_and_homogeneity() {
        let g = Grid::masked(32, 1.0, Shape::UnitSquare).unwrap();
        let spec = EnsembleSpec::new(0.5, 0.1, 5, 1);
        let a = sample_coefficient(&g, &spec, 0).unwrap().values;
        let chi = chi_const(8.0, 1.0);
        let zero = vec![[0.0; 2]; g.cell_count()];
        let grad0 = solve(&g, &a, &zero);
        let e = cz_quenched(&g, &grad0, &zero, &chi, 0.125, 2.0).unwrap();
        assert_eq!(e.lhs.value, 0.0);

        let f = smooth_load(&g);
        let base = cz_quenched(&g, &solve(&g, &a, &f), &f, &chi, 0.125, 2.5)
            .unwrap()
            .ratio();
        for t in [0.5, 2.0, 10.0] {
            let ft: Vec<[f64; 2]> = f.iter().map(|v| [t * v[0], t * v[1]]).collect();
            let r = cz_quenched(&g, &solve(&g, &a, &ft), &ft, &chi, 0.125, 2.5)
                .unwrap()
                .ratio();
            assert!((r / base - 1.0).abs() < 1e-6, "t = {t}: {r} vs {base}");
        }
    }

    #[test]
    fn constant_coefficient_energy_ratio() {
        let g = Grid::masked(32, 1.0, Shape::UnitSquare).unwrap();
        let f = smooth_load(&g);
        let grad = solve(&g, &vec![1.0; g.cell_count()], &f);
        let e = cz_quenched(&g, &grad, &f, &chi_const(8.0, 1.0), 0.125, 2.0).unwrap();
        // energy bound up to the boundary distortion of the averaging weights
        assert!(e.ratio() <= 1.5 && e.ratio() > 0.0, "{}", e.ratio());
    }

    #[test]
    fn degenerate_ensemble_reduces_to_quenched() {
        let g = Grid::masked(32, 1.0, Shape::UnitSquare).unwrap();
        let f = smooth_load(&g);
        let spec = EnsembleSpec::new(0.5, 0.1, 6, 1);
        let a = sample_coefficient(&g, &spec, 0).unwrap().values;
        let grad = solve(&g, &a, &f);
        let eps = 0.125;
        // eps-balls are minimal-radius balls with chi = 1
        let chi = chi_const(8.0, 1.0);
        let quenched = cz_quenched(&g, &grad, &f, &chi, eps, 2.5).unwrap();
        let grads = vec![grad; 8];
        let loads = vec![f];
        let input = CzInput {
            grid: &g,
            gradients: &grads,
            loads: &loads,
            chi: &[],
            epsilon: eps,
            window_theta: DEFAULT_WINDOW_THETA,
        };
        let exps = CzExponents {
            p: 2.0,
            q: 2.5,
            p_bar: 3.0,
        };
        let b = cz_evaluate(&input, CzFlavor::AnnealedB, exps, &Weight::unit(&g)).unwrap();
        assert!((b.lhs.value / quenched.lhs.value - 1.0).abs() < 1e-12);
        assert!((b.rhs.value / quenched.rhs.value - 1.0).abs() < 1e-12);

        let short = CzInput {
            gradients: &grads[..4],
            ..input
        };
        assert!(matches!(
            cz_evaluate(&short, CzFlavor::AnnealedB, exps, &Weight::unit(&g)),
            Err(Error::InsufficientSamples(_))
        ));
    }

    #[test]
    fn global_geometry_is_exact_on_constants() {
        let g = Grid::masked(64, 1.0, Shape::LShape).unwrap();
        let f = vec![3.0; g.cell_count()];
        let r = geometry_check(
            &g,
            &f,
            &chi_const(8.0, 1.5),
            0.125,
            GeometryMode::Global,
            1,
            0,
        )
        .unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn geometry_modes_on_a_spike() {
        let g = Grid::masked(64, 1.0, Shape::UnitSquare).unwrap();
        let mut f = vec![0.0; g.cell_count()];
        f[g.cell_index(1, 20)] = 1.0;
        let chi = chi_const(8.0, 2.0);
        for s in [0.5, 1.0, 2.0] {
            let r =
                geometry_check(&g, &f, &chi, 0.125, GeometryMode::Pointwise { s }, 200, 1).unwrap();
            assert!(r.ratio <= 8.0, "s = {s}: {}", r.ratio);
        }
    }
}
