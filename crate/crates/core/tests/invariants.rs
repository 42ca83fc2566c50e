//! Property tests for structural invariants that hold for every input.

use homlab::correctors::{voigt_reuss, CorrectorSet, Matrix2};
use homlab::cz_norms::{muckenhoupt_constant, BallSampler, Weight, WeightKind};
use homlab::experiment::pool_tensors;
use homlab::fem::{self, dot, Constraint, SolveOptions};
use homlab::fit::{fit_rate, RateModel};
use homlab::grid::{Grid, Shape};
use homlab::minimal_radius::{MinRadParams, MinimalRadiusField};
use homlab::random_field::{to_coefficient, EnsembleSpec};
use homlab::two_scale::{smoothing_apply, Extension};
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(24)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn cell_indices_round_trip(n in 4usize..40, i in 0usize..40, j in 0usize..40) {
        let g = Grid::periodic(n, 1.0).unwrap();
        let (i, j) = (i % n, j % n);
        prop_assert_eq!(g.cell_ij(g.cell_index(i, j)), (i, j));
        prop_assert_eq!(g.locate_cell(g.cell_center(g.cell_index(i, j))), g.cell_index(i, j));
    }

    #[test]
    fn torus_distance_is_a_symmetric_short_way(
        ax in 0.0..3.0f64, ay in 0.0..3.0f64, bx in 0.0..3.0f64, by in 0.0..3.0f64,
    ) {
        let g = Grid::periodic(12, 3.0).unwrap();
        let d = g.distance([ax, ay], [bx, by]);
        prop_assert!((d - g.distance([bx, by], [ax, ay])).abs() < 1e-12);
        prop_assert!(d <= 1.5 * 2f64.sqrt() + 1e-12);
    }

    #[test]
    fn coefficients_stay_in_the_ellipticity_band(
        lambda in 0.05..0.95f64,
        g in prop::collection::vec(-8.0..8.0f64, 1..64),
    ) {
        let spec = EnsembleSpec::new(lambda, 1.0, 0, 1);
        let field = to_coefficient(&g, &spec, 0);
        prop_assert!(field.values.iter().all(|&v| v >= lambda && v <= 1.0 / lambda));
    }

    #[test]
    fn periodic_stiffness_is_symmetric_and_kills_constants(
        a in prop::collection::vec(0.2..5.0f64, 36),
        u in prop::collection::vec(-1.0..1.0f64, 36),
        v in prop::collection::vec(-1.0..1.0f64, 36),
    ) {
        let g = Grid::periodic(6, 1.0).unwrap();
        let k = fem::assemble(&g, &a, Constraint::PeriodicMeanZero).unwrap();
        let ku = k.apply(&u);
        let kv = k.apply(&v);
        prop_assert!((dot(&v, &ku) - dot(&u, &kv)).abs() < 1e-10);
        prop_assert!(dot(&u, &ku) >= -1e-12);
        prop_assert!(k.apply(&vec![1.0; 36]).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn effective_tensor_lies_between_reuss_and_voigt(a in prop::collection::vec(0.25..4.0f64, 64)) {
        let g = Grid::periodic(8, 1.0).unwrap();
        let set = CorrectorSet::compute(&g, &a, None, SolveOptions::default()).unwrap();
        let (harmonic, arithmetic) = voigt_reuss(&a);
        let m = set.a_eff;
        for (k, row) in m.iter().enumerate() {
            prop_assert!(row[k] >= harmonic - 1e-7 && row[k] <= arithmetic + 1e-7);
        }
        prop_assert!((m[0][1] - m[1][0]).abs() < 1e-7);
    }

    #[test]
    fn exact_power_laws_are_recovered(slope in 0.2..3.0f64, scale in 0.1..10.0f64, r0 in 1.5..4.0f64) {
        let xs: [f64; 4] = [0.125, 0.0625, 0.03125, 0.015625];
        for model in [RateModel::Power, RateModel::PowerLog { r0 }, RateModel::PowerLogGauge { r0 }] {
            let ys: Vec<f64> = xs.iter().map(|&x| scale * x.powf(slope) * model.divisor(x)).collect();
            let fit = fit_rate(&xs, &ys, model).unwrap();
            prop_assert!((fit.slope - slope).abs() < 1e-9, "{:?}", model);
            prop_assert!((fit.r_squared - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pooled_tensor_is_an_order_free_convex_combination(
        entries in prop::collection::vec((0.1..10.0f64, 0.1..5.0f64, -1.0..1.0f64, 0.1..5.0f64), 1..12),
    ) {
        let weighted: Vec<(f64, Matrix2)> =
            entries.iter().map(|&(w, a, b, c)| (w, [[a, b], [b, c]])).collect();
        let pooled = pool_tensors(&weighted);
        let mut reversed = weighted.clone();
        reversed.reverse();
        let other = pool_tensors(&reversed);
        for i in 0..2 {
            for j in 0..2 {
                let lo = weighted.iter().map(|w| w.1[i][j]).fold(f64::INFINITY, f64::min);
                let hi = weighted.iter().map(|w| w.1[i][j]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(pooled[i][j] >= lo - 1e-12 && pooled[i][j] <= hi + 1e-12);
                prop_assert!((pooled[i][j] - other[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn muckenhoupt_constants_are_at_least_one(
        values in prop::collection::vec(0.05..20.0f64, 256),
        q in 1.0..4.0f64,
    ) {
        let g = Grid::masked(16, 1.0, Shape::UnitSquare).unwrap();
        let weight = Weight { kind: WeightKind::Unit, values };
        let est = muckenhoupt_constant(&g, &weight, q, &BallSampler::for_grid(&g, 40, 3)).unwrap();
        prop_assert!(est.constant >= 1.0 - 1e-12);
    }

    #[test]
    fn periodic_smoothing_preserves_constants(c in -5.0..5.0f64, chi in 1.2..2.0f64) {
        let g = Grid::periodic(32, 1.0).unwrap();
        let params = MinRadParams::new(0.9, 2.0, 8.0, 2.0).unwrap();
        let field = MinimalRadiusField::constant(8.0, 8, chi, &params);
        let out = smoothing_apply(&g, &vec![c; g.cell_count()], &field, 0.125, Extension::Periodic).unwrap();
        prop_assert!(out.iter().all(|v| (v - c).abs() <= 1e-12 * (1.0 + c.abs())));
    }
}
