//! Config-driven experiments: seeded Monte Carlo pipelines across scales,
//! cached per `(eps, sample)` pair, with CSV data and a JSON report.
//!
//! Scale sweeps resolve every `eps` with `cells_per_micro` cells per unit of
//! the fast variable. The corrector torus of a pair covers the domain's
//! bounding square exactly once (side `extent / eps` in micro units, same cell
//! count), so the oscillating coefficient on the domain is the torus
//! coefficient cell for cell.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correctors::{ensemble_tensor, voigt_reuss, CorrectorSet, Matrix2};
use crate::cz_norms::{cz_evaluate, cz_quenched, CzExponents, CzFlavor, CzInput, Weight};
use crate::error::{Error, Result};
use crate::fem::{self, Constraint, SolveOptions, SolveReport};
use crate::fit::{fit_rate, least_squares, RateFit, RateModel};
use crate::fluctuation::{commutator_h, variance_scaling, TestField, VarianceFit};
use crate::grid::{Grid, Shape};
use crate::io::{fmt_f64, parse_f64, read_csv, CsvTable};
use crate::minimal_radius::{moment_report, MinRadParams, MinimalRadiusField, MomentEstimate};
use crate::random_field::{
    checkerboard_tiled, laminate, sample_coefficient, stream_rng, CoefficientField, EnsembleSpec,
};
use crate::two_scale::{
    check_dyadic, expansion_error, layer_colayer_norms, make_cutoffs, rescale_corrector, LayerNorms,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Field,
    Correctors,
    Homogenize,
    Minrad,
    Cz,
    Fluctuation,
    All,
}

impl ExperimentKind {
    fn is_sweep(self) -> bool {
        matches!(
            self,
            ExperimentKind::Homogenize
                | ExperimentKind::Cz
                | ExperimentKind::Fluctuation
                | ExperimentKind::All
        )
    }
}

fn default_cells_per_micro() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    /// Cells per side of the torus for `field`, `correctors` and `minrad`.
    pub n: usize,
    /// Side of the bounding square: macroscopic for sweeps, micro units for
    /// torus experiments.
    pub extent: f64,
    #[serde(default)]
    pub shape: Option<Shape>,
    #[serde(default = "default_cells_per_micro")]
    pub cells_per_micro: usize,
}

/// Coefficient law: the Gaussian ensemble or a deterministic/two-phase fixture.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Fixture {
    #[default]
    Gaussian,
    Constant {
        value: f64,
    },
    Checkerboard {
        alpha: f64,
        beta: f64,
        #[serde(default = "default_tile")]
        tile: usize,
    },
    Laminate {
        alpha: f64,
        beta: f64,
        stripes: usize,
    },
}

fn default_tile() -> usize {
    1
}

impl Fixture {
    pub fn sample(&self, grid: &Grid, spec: &EnsembleSpec, index: u64) -> Result<CoefficientField> {
        match *self {
            Fixture::Gaussian => sample_coefficient(grid, spec, index),
            Fixture::Constant { value } => Ok(CoefficientField::constant(grid, value)),
            Fixture::Checkerboard { alpha, beta, tile } => {
                let seed = crate::random_field::stream_seed(spec.master_seed, &[index]);
                checkerboard_tiled(grid, alpha, beta, seed, tile)
            }
            Fixture::Laminate {
                alpha,
                beta,
                stripes,
            } => laminate(grid, alpha, beta, stripes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinRadBlock {
    pub theta: f64,
    pub p: f64,
    /// Largest dyadic radius, in micro units.
    pub r_max: f64,
    /// Anchor spacing in torus cells.
    pub stride: usize,
}

impl Default for MinRadBlock {
    fn default() -> Self {
        MinRadBlock {
            theta: 0.9,
            p: 2.0,
            r_max: 2.0,
            stride: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExponentsBlock {
    pub p: f64,
    pub q: f64,
    pub p_bar: f64,
    /// Hölder exponent of the weighted layer norms.
    pub s: f64,
    /// Exponents of the quenched functional.
    pub quenched_p: Vec<f64>,
    pub window_theta: f64,
    /// Offset of the enlarged boundary in units of `eps`.
    pub weight_offset: f64,
}

impl Default for ExponentsBlock {
    fn default() -> Self {
        ExponentsBlock {
            p: 2.0,
            q: 2.0,
            p_bar: 3.0,
            s: 2.0,
            quenched_p: vec![1.6, 2.0, 2.5],
            window_theta: crate::cz_norms::DEFAULT_WINDOW_THETA,
            weight_offset: 2.0,
        }
    }
}

/// Manufactured loads `f` of `-div a grad u = div f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoadId {
    /// `f = x / 2`, so `div f = 1`.
    #[default]
    UnitSource,
    /// `f = (sin(pi x / E) cos(pi y / E), 0)`.
    Sine,
}

impl LoadId {
    pub fn eval(self, x: [f64; 2], extent: f64) -> [f64; 2] {
        match self {
            LoadId::UnitSource => [0.5 * x[0], 0.5 * x[1]],
            LoadId::Sine => {
                let k = std::f64::consts::PI / extent;
                [(k * x[0]).sin() * (k * x[1]).cos(), 0.0]
            }
        }
    }

    /// Load sampled at the inside cell centers (zero elsewhere).
    pub fn field(self, grid: &Grid) -> Vec<[f64; 2]> {
        (0..grid.cell_count())
            .map(|c| {
                if grid.inside(c) {
                    self.eval(grid.cell_center(c), grid.extent())
                } else {
                    [0.0; 2]
                }
            })
            .collect()
    }
}

fn default_n_boot() -> usize {
    400
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub grid: GridBlock,
    pub ensemble: EnsembleSpec,
    #[serde(default)]
    pub fixture: Fixture,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub minrad: MinRadBlock,
    #[serde(default)]
    pub exponents: ExponentsBlock,
    #[serde(default)]
    pub load: LoadId,
    pub outputs: PathBuf,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parses and validates a JSON configuration.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let g = &self.grid;
        if !(g.extent > 0.0) {
            return bad(format!("extent {} must be positive", g.extent));
        }
        if self.ensemble.n_samples == 0 {
            return bad("n_samples must be positive".into());
        }
        if !(self.ensemble.lambda > 0.0 && self.ensemble.lambda < 1.0) {
            return bad(format!("lambda {} not in (0, 1)", self.ensemble.lambda));
        }
        if self.experiment.is_sweep() {
            let Some(shape) = g.shape else {
                return bad("scale sweeps need grid.shape".into());
            };
            if self.epsilons.is_empty() {
                return bad("scale sweeps need a nonempty epsilons list".into());
            }
            if g.cells_per_micro == 0 {
                return bad("cells_per_micro must be positive".into());
            }
            let diameter = Grid::masked(8, g.extent, shape)
                .map_err(|e| Error::Config(e.to_string()))?
                .diameter();
            for &eps in &self.epsilons {
                check_dyadic(g.extent, eps).map_err(|e| Error::Config(e.to_string()))?;
                if 8.0 * eps >= diameter / 2.0 {
                    return bad(format!("epsilon {eps} too large for diameter {diameter}"));
                }
                let torus = self
                    .torus_for(eps)
                    .map_err(|e| Error::Config(e.to_string()))?;
                if self.fixture == Fixture::Gaussian {
                    self.ensemble
                        .validate(&torus)
                        .map_err(|e| Error::Config(e.to_string()))?;
                }
            }
        } else {
            let torus = Grid::periodic(g.n, g.extent).map_err(|e| Error::Config(e.to_string()))?;
            if self.fixture == Fixture::Gaussian {
                self.ensemble
                    .validate(&torus)
                    .map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Cells per side of the domain grid at scale `eps`.
    pub fn cells_for(&self, eps: f64) -> usize {
        (self.grid.cells_per_micro as f64 * self.grid.extent / eps).round() as usize
    }

    pub fn domain_for(&self, eps: f64) -> Result<Grid> {
        let shape = self
            .grid
            .shape
            .ok_or_else(|| Error::Config("grid.shape missing".into()))?;
        Grid::masked(self.cells_for(eps), self.grid.extent, shape)
    }

    pub fn torus_for(&self, eps: f64) -> Result<Grid> {
        Grid::periodic(self.cells_for(eps), self.grid.extent / eps)
    }

    /// Torus of the non-sweep experiments.
    pub fn torus(&self) -> Result<Grid> {
        Grid::periodic(self.grid.n, self.grid.extent)
    }

    pub fn minrad_params(&self, diameter: f64) -> Result<MinRadParams> {
        MinRadParams::new(
            self.minrad.theta,
            self.minrad.p,
            diameter,
            self.minrad.r_max,
        )
    }
}

/// Ensemble index of sample `sample` at scale level `level`; levels draw
/// independent realizations.
pub fn pair_index(level: usize, sample: usize) -> u64 {
    ((level as u64) << 32) | sample as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: RateModel,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub fit: RateFit,
    /// Percentile bootstrap 95% interval of the slope.
    pub slope_ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub version: String,
    pub master_seed: u64,
    pub csv: BTreeMap<String, PathBuf>,
    pub fits: BTreeMap<String, FitReport>,
    pub summaries: BTreeMap<String, serde_json::Value>,
    pub stage_seconds: BTreeMap<String, f64>,
    pub wall_seconds: f64,
}

impl ExperimentResult {
    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("result.json"))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Plain-text summary of fits and tables.
    pub fn summary_text(&self) -> String {
        let mut out = format!(
            "homlab {} experiment {:?} seed {} ({:.1} s)\n",
            self.version, self.config.experiment, self.master_seed, self.wall_seconds
        );
        for (name, path) in &self.csv {
            out.push_str(&format!("  table {name}: {}\n", path.display()));
        }
        for (name, f) in &self.fits {
            let ci = f
                .slope_ci
                .map_or(String::new(), |(lo, hi)| format!(" CI [{lo:.3}, {hi:.3}]"));
            out.push_str(&format!(
                "  fit {name}: slope {:.4}{ci} R^2 {:.4} over {} points\n",
                f.fit.slope, f.fit.r_squared, f.fit.points
            ));
        }
        for (name, v) in &self.summaries {
            out.push_str(&format!("  {name}: {v}\n"));
        }
        out
    }
}

/// Runs the configured experiment and writes every table plus `result.json`
/// into the output directory.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let start = Instant::now();
    fs::create_dir_all(&config.outputs)?;
    fs::write(
        config.outputs.join("config.json"),
        serde_json::to_string_pretty(config)?,
    )?;
    let mut result = ExperimentResult {
        config: config.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: config.ensemble.master_seed,
        csv: BTreeMap::new(),
        fits: BTreeMap::new(),
        summaries: BTreeMap::new(),
        stage_seconds: BTreeMap::new(),
        wall_seconds: 0.0,
    };
    let stages: &[ExperimentKind] = match config.experiment {
        ExperimentKind::All => &[
            ExperimentKind::Correctors,
            ExperimentKind::Minrad,
            ExperimentKind::Homogenize,
            ExperimentKind::Cz,
            ExperimentKind::Fluctuation,
        ],
        ref k => std::slice::from_ref(k),
    };
    for &stage in stages {
        let t = Instant::now();
        match stage {
            ExperimentKind::Field => run_field(config, &mut result)?,
            ExperimentKind::Correctors => run_correctors(config, &mut result)?,
            ExperimentKind::Minrad => run_minrad(config, &mut result)?,
            ExperimentKind::Homogenize => run_homogenize(config, &mut result)?,
            ExperimentKind::Cz => run_cz(config, &mut result)?,
            ExperimentKind::Fluctuation => run_fluctuation(config, &mut result)?,
            ExperimentKind::All => unreachable!(),
        }
        result.stage_seconds.insert(
            format!("{stage:?}").to_lowercase(),
            t.elapsed().as_secs_f64(),
        );
    }
    result.wall_seconds = start.elapsed().as_secs_f64();
    fs::write(
        config.outputs.join("result.json"),
        serde_json::to_string_pretty(&result)?,
    )?;
    Ok(result)
}

fn cache_path(config: &ExperimentConfig, stage: &str, key: &str) -> PathBuf {
    config
        .outputs
        .join("cache")
        .join(stage)
        .join(format!("{key}.csv"))
}

/// Rows of one unit of work, read from the cache when a file with the same
/// header exists.
fn cached(path: &Path, header: &[&str]) -> Option<Vec<Vec<String>>> {
    let (h, rows) = read_csv(path).ok()?;
    (h == header && rows.iter().all(|r| r.len() == header.len())).then_some(rows)
}

fn store(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut t = CsvTable::new(header.iter().copied());
    for r in rows {
        t.push(r.clone());
    }
    t.save(path)
}

fn save_table(
    config: &ExperimentConfig,
    result: &mut ExperimentResult,
    name: &str,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<()> {
    let path = config.outputs.join(format!("{name}.csv"));
    store(&path, header, rows)?;
    result.csv.insert(name.to_string(), path);
    Ok(())
}

fn num(s: &str) -> Result<f64> {
    parse_f64(s).ok_or_else(|| Error::invalid(format!("unparsable number `{s}` in a cached table")))
}

fn max_residual(reports: &[SolveReport]) -> f64 {
    reports
        .iter()
        .map(|r| r.relative_residual)
        .fold(0.0, f64::max)
}

fn run_field(config: &ExperimentConfig, result: &mut ExperimentResult) -> Result<()> {
    let torus = config.torus()?;
    let dir = config.outputs.join("fields");
    fs::create_dir_all(&dir)?;
    for s in 0..config.ensemble.n_samples {
        let field = config
            .fixture
            .sample(&torus, &config.ensemble, s as u64)
            .map_err(|e| e.at(format!("sample {s}")))?;
        let path = dir.join(format!("sample_{s}.csv"));
        let mut out = std::io::BufWriter::new(fs::File::create(&path)?);
        field.write_csv(&torus, &mut out)?;
        result.csv.insert(format!("field_{s}"), path);
    }
    Ok(())
}

const CORRECTOR_HEADER: [&str; 8] = [
    "sample",
    "a11",
    "a12",
    "a21",
    "a22",
    "sigma_residual_1",
    "sigma_residual_2",
    "max_residual",
];

fn run_correctors(config: &ExperimentConfig, result: &mut ExperimentResult) -> Result<()> {
    let torus = config.torus()?;
    let n = config.ensemble.n_samples;
    let rows: Vec<Vec<String>> = (0..n)
        .into_par_iter()
        .map(|s| -> Result<Vec<String>> {
            let path = cache_path(config, "correctors", &format!("s{s}"));
            if let Some(mut rows) = cached(&path, &CORRECTOR_HEADER) {
                return Ok(rows.remove(0));
            }
            let a = config.fixture.sample(&torus, &config.ensemble, s as u64)?;
            let set = CorrectorSet::compute(
                &torus,
                &a.values,
                Some(config.ensemble.lambda),
                config.solver,
            )?;
            let m = set.a_eff;
            let row = vec![
                s.to_string(),
                fmt_f64(m[0][0]),
                fmt_f64(m[0][1]),
                fmt_f64(m[1][0]),
                fmt_f64(m[1][1]),
                fmt_f64(set.sigma_residual[0]),
                fmt_f64(set.sigma_residual[1]),
                fmt_f64(max_residual(&set.reports)),
            ];
            store(&path, &CORRECTOR_HEADER, std::slice::from_ref(&row))?;
            Ok(row)
        })
        .enumerate()
        .map(|(s, r)| r.map_err(|e| e.at(format!("corrector sample {s}"))))
        .collect::<Result<_>>()?;
    save_table(config, result, "correctors", &CORRECTOR_HEADER, &rows)?;
    let tensors: Vec<Matrix2> = rows
        .iter()
        .map(|r| Ok([[num(&r[1])?, num(&r[2])?], [num(&r[3])?, num(&r[4])?]]))
        .collect::<Result<_>>()?;
    let (mean, se) = ensemble_tensor(&tensors)?;
    let a = config.fixture.sample(&torus, &config.ensemble, 0)?;
    let (voigt, reuss) = voigt_reuss(&a.values);
    result.summaries.insert(
        "effective_tensor".into(),
        serde_json::json!({ "mean": mean, "standard_error": se, "voigt_sample0": voigt, "reuss_sample0": reuss }),
    );
    Ok(())
}

const MINRAD_HEADER: [&str; 8] = [
    "sample",
    "chi_mean",
    "chi_min",
    "chi_max",
    "floor_ok",
    "monotone_ok",
    "lipschitz_pass_rate",
    "saturated_fraction",
];

/// Minimal-radius field of one torus sample.
pub fn minimal_radius_sample(
    config: &ExperimentConfig,
    torus: &Grid,
    index: u64,
) -> Result<MinimalRadiusField> {
    let a = config.fixture.sample(torus, &config.ensemble, index)?;
    let set = CorrectorSet::compute(
        torus,
        &a.values,
        Some(config.ensemble.lambda),
        config.solver,
    )?;
    let params = config.minrad_params(torus.diameter())?;
    MinimalRadiusField::compute(torus, &set, &params, config.minrad.stride)
}

fn run_minrad(config: &ExperimentConfig, result: &mut ExperimentResult) -> Result<()> {
    let torus = config.torus()?;
    let n = config.ensemble.n_samples;
    let fields: Vec<(Vec<String>, Option<MinimalRadiusField>)> = (0..n)
        .into_par_iter()
        .map(|s| -> Result<_> {
            let path = cache_path(config, "minrad", &format!("s{s}"));
            if let Some(mut rows) = cached(&path, &MINRAD_HEADER) {
                return Ok((rows.remove(0), None));
            }
            let field = minimal_radius_sample(config, &torus, s as u64)?;
            let floor = field.params.floor();
            let floor_ok = field.chi.iter().all(|&c| c >= floor * (1.0 - 1e-12));
            let stricter = field.with_theta(0.5 * field.params.theta)?;
            let monotone_ok = stricter.chi.iter().zip(&field.chi).all(|(a, b)| a >= b);
            let count = field.chi.len() as f64;
            let row = vec![
                s.to_string(),
                fmt_f64(field.regularized.iter().sum::<f64>() / count),
                fmt_f64(
                    field
                        .regularized
                        .iter()
                        .copied()
                        .fold(f64::INFINITY, f64::min),
                ),
                fmt_f64(field.regularized.iter().copied().fold(0.0, f64::max)),
                u8::from(floor_ok).to_string(),
                u8::from(monotone_ok).to_string(),
                fmt_f64(field.lipschitz_edge_pass_rate()),
                fmt_f64(field.saturated.iter().filter(|&&b| b).count() as f64 / count),
            ];
            store(&path, &MINRAD_HEADER, std::slice::from_ref(&row))?;
            let mut out =
                std::io::BufWriter::new(fs::File::create(path.with_extension("field.csv"))?);
            field.write_csv(&mut out)?;
            Ok((row, Some(field)))
        })
        .enumerate()
        .map(|(s, r)| r.map_err(|e| e.at(format!("minimal radius sample {s}"))))
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<String>> = fields.iter().map(|f| f.0.clone()).collect();
    save_table(config, result, "minrad", &MINRAD_HEADER, &rows)?;
    // moments need every field; cached samples are read back from their field tables
    let mut samples = Vec::with_capacity(n);
    for (s, (_, field)) in fields.into_iter().enumerate() {
        match field {
            Some(f) => samples.push(f.regularized),
            None => {
                let path =
                    cache_path(config, "minrad", &format!("s{s}")).with_extension("field.csv");
                let (_, rows) = read_csv(&path)?;
                samples.push(rows.iter().map(|r| num(&r[3])).collect::<Result<_>>()?);
            }
        }
    }
    if samples.len() >= 8 {
        let moments: Vec<MomentEstimate> = moment_report(
            &samples,
            &[1.0, 2.0],
            config.n_boot,
            config.ensemble.master_seed,
        )?;
        result
            .summaries
            .insert("minrad_moments".into(), serde_json::to_value(moments)?);
    }
    Ok(())
}

/// Coefficient and correctors of one sweep pair.
pub struct PairCorrectors {
    pub torus: Grid,
    pub a: CoefficientField,
    pub set: CorrectorSet,
}

pub fn pair_correctors(
    config: &ExperimentConfig,
    level: usize,
    sample: usize,
) -> Result<PairCorrectors> {
    let eps = config.epsilons[level];
    let torus = config.torus_for(eps)?;
    let a = config
        .fixture
        .sample(&torus, &config.ensemble, pair_index(level, sample))?;
    let set = CorrectorSet::compute(
        &torus,
        &a.values,
        Some(config.ensemble.lambda),
        config.solver,
    )?;
    Ok(PairCorrectors { torus, a, set })
}

/// Solution of the oscillating problem on the domain at scale `eps`.
pub fn solve_oscillating(
    config: &ExperimentConfig,
    domain: &Grid,
    a: &[f64],
) -> Result<(Vec<f64>, SolveReport)> {
    let k = fem::assemble(domain, a, Constraint::DirichletZero)?;
    fem::solve_div_f(&k, &config.load.field(domain), config.solver)
}

/// Solution of the effective problem with the symmetric part of `a_bar`.
pub fn solve_effective(
    config: &ExperimentConfig,
    domain: &Grid,
    a_bar: &Matrix2,
) -> Result<(Vec<f64>, SolveReport)> {
    let t = [a_bar[0][0], 0.5 * (a_bar[0][1] + a_bar[1][0]), a_bar[1][1]];
    let k = fem::assemble_tensor(
        domain,
        &vec![t; domain.cell_count()],
        Constraint::DirichletZero,
    )?;
    fem::solve_div_f(&k, &config.load.field(domain), config.solver)
}

/// Area-weighted mean of effective tensors.
///
/// Accumulates deviations from the first tensor so identical inputs pool to
/// exactly that tensor.
pub fn pool_tensors(weighted: &[(f64, Matrix2)]) -> Matrix2 {
    let Some(&(_, base)) = weighted.first() else {
        return [[0.0; 2]; 2];
    };
    let total: f64 = weighted.iter().map(|w| w.0).sum();
    let mut pooled = base;
    for i in 0..2 {
        for j in 0..2 {
            let shift: f64 = weighted
                .iter()
                .map(|(area, m)| area * (m[i][j] - base[i][j]))
                .sum();
            pooled[i][j] += shift / total;
        }
    }
    pooled
}

const TENSOR_HEADER: [&str; 6] = ["area", "a11", "a12", "a21", "a22", "max_residual"];

/// Phase one of a sweep: every pair's effective tensor (cached) and the
/// correctors of the pairs still to be processed. Returns the area-weighted
/// pooled tensor.
fn pooled_tensor(
    config: &ExperimentConfig,
    stage: &str,
    needed: &[Vec<bool>],
) -> Result<(Matrix2, Vec<Vec<Option<PairCorrectors>>>)> {
    let ns = config.ensemble.n_samples;
    let tasks: Vec<(usize, usize)> = (0..config.epsilons.len())
        .flat_map(|l| (0..ns).map(move |s| (l, s)))
        .collect();
    let out: Vec<(Vec<String>, Option<PairCorrectors>)> = tasks
        .par_iter()
        .map(|&(l, s)| -> Result<_> {
            let path = cache_path(config, "tensors", &format!("l{l}_s{s}"));
            let hit = cached(&path, &TENSOR_HEADER);
            if let (Some(mut rows), false) = (hit.clone(), needed[l][s]) {
                return Ok((rows.remove(0), None));
            }
            let pair = pair_correctors(config, l, s)?;
            let m = pair.set.a_eff;
            let area = pair.torus.extent().powi(2);
            let row = match hit {
                Some(mut rows) => rows.remove(0),
                None => {
                    let row = vec![
                        fmt_f64(area),
                        fmt_f64(m[0][0]),
                        fmt_f64(m[0][1]),
                        fmt_f64(m[1][0]),
                        fmt_f64(m[1][1]),
                        fmt_f64(max_residual(&pair.set.reports)),
                    ];
                    store(&path, &TENSOR_HEADER, std::slice::from_ref(&row))?;
                    row
                }
            };
            Ok((row, needed[l][s].then_some(pair)))
        })
        .zip(&tasks)
        .map(|(r, &(l, s))| {
            r.map_err(|e| {
                e.at(format!(
                    "{stage} correctors, epsilon {}, sample {s}",
                    config.epsilons[l]
                ))
            })
        })
        .collect::<Result<_>>()?;
    let mut weighted = Vec::with_capacity(out.len());
    let mut pairs: Vec<Vec<Option<PairCorrectors>>> =
        (0..config.epsilons.len()).map(|_| Vec::new()).collect();
    for ((row, pair), &(l, _)) in out.into_iter().zip(&tasks) {
        let m = [
            [num(&row[1])?, num(&row[2])?],
            [num(&row[3])?, num(&row[4])?],
        ];
        weighted.push((num(&row[0])?, m));
        pairs[l].push(pair);
    }
    let pooled = pool_tensors(&weighted);
    Ok((pooled, pairs))
}

/// String rows of one cached pair.
type Rows = Vec<Vec<String>>;

/// Cached rows of every pair of a sweep stage, and which pairs must run.
fn sweep_cache(
    config: &ExperimentConfig,
    stage: &str,
    header: &[&str],
) -> (Vec<Vec<Option<Rows>>>, Vec<Vec<bool>>) {
    let ns = config.ensemble.n_samples;
    let hits: Vec<Vec<Option<Rows>>> = (0..config.epsilons.len())
        .map(|l| {
            (0..ns)
                .map(|s| cached(&cache_path(config, stage, &format!("l{l}_s{s}")), header))
                .collect()
        })
        .collect();
    let needed = hits
        .iter()
        .map(|lv| lv.iter().map(Option::is_none).collect())
        .collect();
    (hits, needed)
}

const HOMOGENIZE_HEADER: [&str; 9] = [
    "epsilon",
    "sample",
    "l2_error",
    "h1_error",
    "layer_norm",
    "colayer_norm",
    "z_l2",
    "gradient_gap",
    "max_residual",
];

/// Effective solution, its layer norms and the solve report at one level.
struct Effective {
    domain: Grid,
    u_bar: Vec<f64>,
    layers: LayerNorms,
    report: SolveReport,
}

fn effective_level(config: &ExperimentConfig, level: usize, a_bar: &Matrix2) -> Result<Effective> {
    let eps = config.epsilons[level];
    let domain = config.domain_for(eps)?;
    let (u_bar, report) = solve_effective(config, &domain, a_bar)?;
    let layers = layer_colayer_norms(&domain, &u_bar, eps, config.exponents.s)?;
    Ok(Effective {
        domain,
        u_bar,
        layers,
        report,
    })
}

fn run_homogenize(config: &ExperimentConfig, result: &mut ExperimentResult) -> Result<()> {
    let header = &HOMOGENIZE_HEADER;
    let (hits, needed) = sweep_cache(config, "homogenize", header);
    let (a_bar, mut pairs) = pooled_tensor(config, "homogenize", &needed)?;
    let mut rows = Vec::new();
    for (level, &eps) in config.epsilons.iter().enumerate() {
        let ctx = |s: usize| format!("homogenize, epsilon {eps}, sample {s}");
        let eff = if needed[level].iter().any(|&b| b) {
            Some(
                effective_level(config, level, &a_bar)
                    .map_err(|e| e.at(format!("effective problem, epsilon {eps}")))?,
            )
        } else {
            None
        };
        let level_pairs = std::mem::take(&mut pairs[level]);
        let computed: Vec<Vec<Vec<String>>> = level_pairs
            .into_par_iter()
            .enumerate()
            .map(|(s, pair)| -> Result<Vec<Vec<String>>> {
                if let Some(rows) = &hits[level][s] {
                    return Ok(rows.clone());
                }
                let pair = pair.expect("pair correctors computed for uncached pairs");
                let eff = eff.as_ref().expect("effective level computed");
                let row =
                    homogenize_pair(config, level, s, &pair, eff).map_err(|e| e.at(ctx(s)))?;
                store(
                    &cache_path(config, "homogenize", &format!("l{level}_s{s}")),
                    header,
                    std::slice::from_ref(&row),
                )?;
                Ok(vec![row])
            })
            .collect::<Result<_>>()?;
        rows.extend(computed.into_iter().flatten());
    }
    save_table(config, result, "homogenize", header, &rows)?;
    result.summaries.insert(
        "pooled_effective_tensor".into(),
        serde_json::to_value(a_bar)?,
    );

    let diameter = config.domain_for(config.epsilons[0])?.diameter();
    let column = |k: usize| -> Result<Vec<Vec<f64>>> { per_level(config, &rows, k) };
    let l2 = column(2)?;
    let h1 = column(3)?;
    let seed = config.ensemble.master_seed;
    for (name, values, model) in [
        (
            "strong_l2_power_log",
            &l2,
            RateModel::PowerLogGauge { r0: diameter },
        ),
        ("strong_l2_power", &l2, RateModel::Power),
        ("two_scale_h1_power", &h1, RateModel::Power),
    ] {
        if let Some(f) = bootstrap_fit(&config.epsilons, values, model, config.n_boot, seed)? {
            result.fits.insert(name.into(), f);
        }
    }
    let layer: Vec<f64> = column(4)?.iter().map(|v| v[0]).collect();
    let colayer: Vec<f64> = column(5)?.iter().map(|v| v[0]).collect();
    if config.epsilons.len() >= 3 {
        if layer.iter().all(|&v| v > 0.0) {
            let fit = fit_rate(&config.epsilons, &layer, RateModel::Power)?;
            result.fits.insert(
                "layer_power".into(),
                FitReport {
                    model: RateModel::Power,
                    xs: config.epsilons.clone(),
                    ys: layer.clone(),
                    fit,
                    slope_ci: None,
                },
            );
        }
        let lx: Vec<f64> = config.epsilons.iter().map(|e| (1.0 / e).ln()).collect();
        let (slope, intercept, r2) = least_squares(&lx, &colayer);
        result.summaries.insert(
            "colayer_vs_log".into(),
            serde_json::json!({ "slope": slope, "intercept": intercept, "r_squared": r2 }),
        );
    }
    Ok(())
}

fn homogenize_pair(
    config: &ExperimentConfig,
    level: usize,
    sample: usize,
    pair: &PairCorrectors,
    eff: &Effective,
) -> Result<Vec<String>> {
    let eps = config.epsilons[level];
    let domain = &eff.domain;
    let (u, report) = solve_oscillating(config, domain, &pair.a.values)?;
    let cutoffs = make_cutoffs(domain, eps)?;
    let rc = rescale_corrector(&pair.torus, &pair.set, eps, domain)?;
    let err = expansion_error(
        domain,
        &u,
        &eff.u_bar,
        &rc,
        &cutoffs,
        None,
        pair_index(level, sample),
    )?;
    let diff: Vec<f64> = u.iter().zip(&eff.u_bar).map(|(a, b)| a - b).collect();
    let mut reports = pair.set.reports.clone();
    reports.extend([report, eff.report.clone()]);
    Ok(vec![
        fmt_f64(eps),
        sample.to_string(),
        fmt_f64(fem::l2_norm_nodal(domain, &diff)),
        fmt_f64(err.h1),
        fmt_f64(eff.layers.layer),
        fmt_f64(eff.layers.colayer),
        fmt_f64(err.l2),
        fmt_f64(crate::two_scale::gradient_identity_gap(domain, &err)),
        fmt_f64(max_residual(&reports)),
    ])
}

/// Values of column `k` grouped by scale level (rows ordered by level).
fn per_level(config: &ExperimentConfig, rows: &[Vec<String>], k: usize) -> Result<Vec<Vec<f64>>> {
    let ns = config.ensemble.n_samples;
    rows.chunks(ns)
        .map(|chunk| chunk.iter().map(|r| num(&r[k])).collect())
        .collect()
}

/// Fit of the per-level means with a bootstrap interval from resampling each
/// level's samples. `None` when a mean is not positive.
pub fn bootstrap_fit(
    xs: &[f64],
    values: &[Vec<f64>],
    model: RateModel,
    n_boot: usize,
    seed: u64,
) -> Result<Option<FitReport>> {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ys: Vec<f64> = values.iter().map(|v| mean(v)).collect();
    if xs.len() < 3 || ys.iter().any(|&y| !(y > 0.0)) {
        return Ok(None);
    }
    let fit = fit_rate(xs, &ys, model)?;
    let mut rng = stream_rng(seed, &[0x0066_6974]);
    let mut slopes = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        let boot: Vec<f64> = values
            .iter()
            .map(|v| {
                use rand::Rng;
                (0..v.len())
                    .map(|_| v[rng.random_range(0..v.len())])
                    .sum::<f64>()
                    / v.len() as f64
            })
            .collect();
        if let Ok(f) = fit_rate(xs, &boot, model) {
            slopes.push(f.slope);
        }
    }
    slopes.sort_by(f64::total_cmp);
    let slope_ci = (!slopes.is_empty()).then(|| {
        let q = |p: f64| slopes[(p * (slopes.len() - 1) as f64).round() as usize];
        (q(0.025), q(0.975))
    });
    Ok(Some(FitReport {
        model,
        xs: xs.to_vec(),
        ys,
        fit,
        slope_ci,
    }))
}

const CZ_HEADER: [&str; 11] = [
    "flavor",
    "p",
    "q",
    "p_bar",
    "epsilon",
    "sample",
    "lhs",
    "rhs",
    "ratio",
    "weight_kind",
    "admissible",
];

fn cz_row(e: &crate::cz_norms::CzEvaluation, sample: &str) -> Vec<String> {
    vec![
        e.lhs.flavor.to_string(),
        fmt_f64(e.lhs.p),
        fmt_f64(e.lhs.q),
        fmt_f64(e.lhs.p_bar),
        fmt_f64(e.epsilon),
        sample.to_string(),
        fmt_f64(e.lhs.value),
        fmt_f64(e.rhs.value),
        fmt_f64(e.ratio()),
        e.weight_kind.to_string(),
        u8::from(e.admissible).to_string(),
    ]
}

/// Oscillating gradient and minimal-radius field of one pair.
pub struct CzPair {
    pub gradient: Vec<[f64; 2]>,
    pub chi: MinimalRadiusField,
}

pub fn cz_pair(config: &ExperimentConfig, level: usize, sample: usize) -> Result<CzPair> {
    let eps = config.epsilons[level];
    let domain = config.domain_for(eps)?;
    let pair = pair_correctors(config, level, sample)?;
    let (u, _) = solve_oscillating(config, &domain, &pair.a.values)?;
    let params = config.minrad_params(domain.diameter())?;
    let chi = MinimalRadiusField::compute(&pair.torus, &pair.set, &params, config.minrad.stride)?;
    Ok(CzPair {
        gradient: fem::gradient(&domain, &u),
        chi,
    })
}

fn run_cz(config: &ExperimentConfig, result: &mut ExperimentResult) -> Result<()> {
    let ns = config.ensemble.n_samples;
    let ex = &config.exponents;
    let mut rows = Vec::new();
    for (level, &eps) in config.epsilons.iter().enumerate() {
        let domain = config.domain_for(eps)?;
        let load = config.load.field(&domain);
        let ensemble_path = cache_path(config, "cz", &format!("l{level}_ensemble"));
        let annealed = ns >= crate::cz_norms::MIN_ANNEALED_SAMPLES;
        let ensemble_hit = if annealed {
            cached(&ensemble_path, &CZ_HEADER)
        } else {
            Some(Vec::new())
        };
        let pair_rows: Vec<(Vec<Vec<String>>, Option<CzPair>)> = (0..ns)
            .into_par_iter()
            .map(|s| -> Result<_> {
                let path = cache_path(config, "cz", &format!("l{level}_s{s}"));
                let hit = cached(&path, &CZ_HEADER);
                if let (Some(rows), Some(_)) = (&hit, &ensemble_hit) {
                    return Ok((rows.clone(), None));
                }
                let pair = cz_pair(config, level, s)?;
                let rows = match hit {
                    Some(rows) => rows,
                    None => {
                        let rows = ex
                            .quenched_p
                            .iter()
                            .map(|&p| {
                                Ok(cz_row(
                                    &cz_quenched(
                                        &domain,
                                        &pair.gradient,
                                        &load,
                                        &pair.chi,
                                        eps,
                                        p,
                                    )?,
                                    &s.to_string(),
                                ))
                            })
                            .collect::<Result<Vec<_>>>()?;
                        store(&path, &CZ_HEADER, &rows)?;
                        rows
                    }
                };
                Ok((rows, Some(pair)))
            })
            .enumerate()
            .map(|(s, r)| r.map_err(|e| e.at(format!("cz, epsilon {eps}, sample {s}"))))
            .collect::<Result<_>>()?;
        let mut level_pairs = Vec::new();
        for (r, pair) in pair_rows {
            rows.extend(r);
            level_pairs.extend(pair);
        }
        let ensemble_rows = match ensemble_hit {
            Some(r) => r,
            None => {
                let gradients: Vec<Vec<[f64; 2]>> =
                    level_pairs.iter().map(|p| p.gradient.clone()).collect();
                let chi: Vec<MinimalRadiusField> = level_pairs.into_iter().map(|p| p.chi).collect();
                let loads = vec![load.clone()];
                let input = CzInput {
                    grid: &domain,
                    gradients: &gradients,
                    loads: &loads,
                    chi: &chi,
                    epsilon: eps,
                    window_theta: ex.window_theta,
                };
                let exps = CzExponents {
                    p: ex.p,
                    q: ex.q,
                    p_bar: ex.p_bar,
                };
                let weight = Weight::distance_power(&domain, ex.q - 1.0, ex.weight_offset * eps)?;
                let unit = Weight::unit(&domain);
                let r = [
                    (CzFlavor::AnnealedB, &unit),
                    (CzFlavor::WeightedC, &weight),
                    (CzFlavor::WeightedD, &weight),
                ]
                .into_iter()
                .map(|(flavor, w)| Ok(cz_row(&cz_evaluate(&input, flavor, exps, w)?, "ensemble")))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.at(format!("annealed functionals, epsilon {eps}")))?;
                store(&ensemble_path, &CZ_HEADER, &r)?;
                r
            }
        };
        rows.extend(ensemble_rows);
    }
    save_table(config, result, "cz", &CZ_HEADER, &rows)?;
    Ok(())
}

const FLUCTUATION_HEADER: [&str; 4] = ["epsilon", "sample", "h", "max_residual"];

fn run_fluctuation(config: &ExperimentConfig, result: &mut ExperimentResult) -> Result<()> {
    let header = &FLUCTUATION_HEADER;
    let (hits, needed) = sweep_cache(config, "fluctuation", header);
    let (a_bar, mut pairs) = pooled_tensor(config, "fluctuation", &needed)?;
    let mut rows = Vec::new();
    for (level, &eps) in config.epsilons.iter().enumerate() {
        let eff = if needed[level].iter().any(|&b| b) {
            let domain = config.domain_for(eps)?;
            let (u_bar, report) = solve_effective(config, &domain, &a_bar)
                .map_err(|e| e.at(format!("effective problem, epsilon {eps}")))?;
            let test = TestField::bump(&domain, [1.0, 0.0]);
            test.check_support(&domain, eps)?;
            let grad_bar = fem::gradient(&domain, &u_bar);
            Some((domain, grad_bar, report, test))
        } else {
            None
        };
        let level_pairs = std::mem::take(&mut pairs[level]);
        let computed: Vec<Vec<Vec<String>>> = level_pairs
            .into_par_iter()
            .enumerate()
            .map(|(s, pair)| -> Result<Vec<Vec<String>>> {
                if let Some(rows) = &hits[level][s] {
                    return Ok(rows.clone());
                }
                let pair = pair.expect("pair correctors computed for uncached pairs");
                let (domain, grad_bar, bar_report, test) =
                    eff.as_ref().expect("effective level computed");
                let row = (|| -> Result<Vec<String>> {
                    let (u, report) = solve_oscillating(config, domain, &pair.a.values)?;
                    let cutoffs = make_cutoffs(domain, eps)?;
                    let rc = rescale_corrector(&pair.torus, &pair.set, eps, domain)?;
                    let grad_eps = fem::gradient(domain, &u);
                    let h = commutator_h(
                        domain,
                        &pair.a.values,
                        &a_bar,
                        &grad_eps,
                        grad_bar,
                        &rc,
                        &cutoffs,
                        test,
                    )?;
                    let mut reports = pair.set.reports.clone();
                    reports.extend([report, bar_report.clone()]);
                    Ok(vec![
                        fmt_f64(eps),
                        s.to_string(),
                        fmt_f64(h),
                        fmt_f64(max_residual(&reports)),
                    ])
                })()
                .map_err(|e| e.at(format!("fluctuation, epsilon {eps}, sample {s}")))?;
                store(
                    &cache_path(config, "fluctuation", &format!("l{level}_s{s}")),
                    header,
                    std::slice::from_ref(&row),
                )?;
                Ok(vec![row])
            })
            .collect::<Result<_>>()?;
        rows.extend(computed.into_iter().flatten());
    }
    save_table(config, result, "fluctuation", header, &rows)?;
    let samples = per_level(config, &rows, 2)?;
    if samples.len() >= 3 && samples[0].len() >= crate::fluctuation::MIN_FLUCTUATION_SAMPLES {
        let fit: VarianceFit = variance_scaling(
            &config.epsilons,
            &samples,
            config.n_boot,
            config.ensemble.master_seed,
        )?;
        result
            .summaries
            .insert("fluctuation_fit".into(), serde_json::to_value(&fit)?);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_identical_tensors_is_exact() {
        let m = [[0.1 + 0.2, 0.3], [0.3, 0.7]];
        let weighted = vec![(0.37, m), (1.9, m), (2.0 / 3.0, m)];
        assert_eq!(pool_tensors(&weighted), m);
        let mixed = [
            (1.0, [[1.0, 0.0], [0.0, 1.0]]),
            (3.0, [[2.0, 0.0], [0.0, 3.0]]),
        ];
        assert_eq!(pool_tensors(&mixed), [[1.75, 0.0], [0.0, 2.5]]);
    }

    fn sweep_config(kind: ExperimentKind, out: &Path) -> ExperimentConfig {
        ExperimentConfig {
            experiment: kind,
            grid: GridBlock {
                n: 32,
                extent: 1.0,
                shape: Some(Shape::UnitSquare),
                cells_per_micro: 2,
            },
            ensemble: EnsembleSpec::new(0.5, 1.0, 11, 2),
            fixture: Fixture::Gaussian,
            epsilons: vec![0.0625, 0.03125],
            minrad: MinRadBlock::default(),
            exponents: ExponentsBlock::default(),
            load: LoadId::UnitSource,
            outputs: out.to_path_buf(),
            solver: SolveOptions::default(),
            n_boot: 50,
        }
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_keys() {
        let cfg = sweep_config(ExperimentKind::Homogenize, Path::new("out"));
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());
    }

    #[test]
    fn validation_catches_bad_sweeps() {
        let mut cfg = sweep_config(ExperimentKind::Homogenize, Path::new("out"));
        cfg.epsilons = vec![0.3];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.epsilons = vec![0.125];
        assert!(
            matches!(cfg.validate(), Err(Error::Config(_))),
            "8 eps exceeds half the diameter"
        );
        cfg.epsilons = vec![0.0625];
        cfg.grid.shape = None;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn torus_cells_align_with_domain_cells() {
        let cfg = sweep_config(ExperimentKind::Homogenize, Path::new("out"));
        for &eps in &cfg.epsilons {
            let d = cfg.domain_for(eps).unwrap();
            let t = cfg.torus_for(eps).unwrap();
            assert_eq!(d.n(), t.n());
            assert!((t.h() - d.h() / eps).abs() < 1e-12);
        }
    }

    #[test]
    fn homogenize_is_deterministic_and_resumable() {
        let dir = tempfile::tempdir().unwrap();
        let a = sweep_config(ExperimentKind::Homogenize, &dir.path().join("a"));
        let b = sweep_config(ExperimentKind::Homogenize, &dir.path().join("b"));
        run(&a).unwrap();
        run(&b).unwrap();
        let table = |c: &ExperimentConfig| fs::read(c.outputs.join("homogenize.csv")).unwrap();
        assert_eq!(table(&a), table(&b));

        // drop one cached pair and the tensor cache of another: the rerun recomputes them
        fs::remove_file(cache_path(&a, "homogenize", "l1_s0")).unwrap();
        fs::remove_file(cache_path(&a, "tensors", "l0_s1")).unwrap();
        fs::remove_file(a.outputs.join("homogenize.csv")).unwrap();
        run(&a).unwrap();
        assert_eq!(table(&a), table(&b));

        let (header, rows) = read_csv(&a.outputs.join("homogenize.csv")).unwrap();
        assert_eq!(header, HOMOGENIZE_HEADER);
        assert_eq!(rows.len(), 4);
        for r in &rows {
            assert!(num(&r[2]).unwrap() > 0.0);
            assert!(num(&r[8]).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn constant_fixture_has_no_homogenization_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = sweep_config(ExperimentKind::Homogenize, dir.path());
        cfg.fixture = Fixture::Constant { value: 1.5 };
        cfg.ensemble.n_samples = 1;
        let res = run(&cfg).unwrap();
        let a_bar: Matrix2 =
            serde_json::from_value(res.summaries["pooled_effective_tensor"].clone()).unwrap();
        assert!((a_bar[0][0] - 1.5).abs() < 1e-12 && a_bar[0][1].abs() < 1e-12);
        let (_, rows) = read_csv(&cfg.outputs.join("homogenize.csv")).unwrap();
        for r in &rows {
            assert!(num(&r[2]).unwrap() < 1e-8, "{r:?}");
            assert!(num(&r[3]).unwrap() < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn correctors_table_and_report() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = sweep_config(ExperimentKind::Correctors, dir.path());
        cfg.grid.n = 16;
        cfg.grid.extent = 8.0;
        let res = run(&cfg).unwrap();
        let (_, rows) = read_csv(&res.csv["correctors"]).unwrap();
        assert_eq!(rows.len(), 2);
        let loaded = ExperimentResult::load(dir.path()).unwrap();
        assert_eq!(loaded.csv, res.csv);
        assert!(loaded.summary_text().contains("effective_tensor"));
    }

    #[test]
    fn bootstrap_fit_brackets_the_slope() {
        let xs = [0.125, 0.0625, 0.03125];
        let values: Vec<Vec<f64>> = xs.iter().map(|&x| vec![0.9 * x, x, 1.1 * x]).collect();
        let f = bootstrap_fit(&xs, &values, RateModel::Power, 200, 3)
            .unwrap()
            .unwrap();
        assert!((f.fit.slope - 1.0).abs() < 1e-12);
        let (lo, hi) = f.slope_ci.unwrap();
        assert!(lo <= 1.0 + 1e-12 && hi >= 1.0 - 1e-12);
    }
}
