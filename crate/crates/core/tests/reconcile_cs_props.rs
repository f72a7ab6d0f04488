mod common;

use coherent_core::hierarchy::{build_summing_matrix, HierarchySpec, SummingMatrix};
use coherent_core::reconcile_cs::{
    estimate_w, g_bottom_up, g_middle_out, g_min_trace, g_top_down, min_trace_g, shrinkage_intensity,
    CorrelationVariance, CovarianceEstimate, CovarianceKind, MappingMatrix,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn max_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

/// History totals of a coherent, strictly positive panel.
fn coherent_totals(s: &SummingMatrix, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let b = DVector::from_fn(s.cols(), |_, _| rng.random_range(1.0..100.0));
    (s.entries() * b).iter().copied().collect()
}

fn spd_estimate(rng: &mut ChaCha8Rng, m: usize) -> CovarianceEstimate {
    CovarianceEstimate {
        w: common::random_spd(rng, m),
        lambda: None,
        kind: CovarianceKind::Shrinkage,
    }
}

/// Every unbiased mapping the library builds for `spec`.
fn unbiased_mappings(spec: &HierarchySpec, rng: &mut ChaCha8Rng) -> Vec<MappingMatrix> {
    let s = build_summing_matrix(spec);
    let totals = coherent_totals(&s, rng);
    vec![
        g_bottom_up(&s),
        g_middle_out(spec, spec.depth(), &totals).unwrap(),
        g_min_trace(&s, &CovarianceEstimate::identity(s.rows())).unwrap(),
        g_min_trace(&s, &spd_estimate(rng, s.rows())).unwrap(),
    ]
}

/// Every proportional mapping, which disaggregates from a level above the bottom.
fn proportional_mappings(spec: &HierarchySpec, rng: &mut ChaCha8Rng) -> Vec<MappingMatrix> {
    let s = build_summing_matrix(spec);
    let totals = coherent_totals(&s, rng);
    let mut out = vec![g_top_down(&s, &totals).unwrap()];
    for level in 0..spec.depth() {
        out.push(g_middle_out(spec, level, &totals).unwrap());
    }
    out
}

proptest! {
    #[test]
    fn unbiased_mappings_reproduce_the_summing_matrix(spec in common::hierarchy(12), seed in any::<u64>()) {
        let s = build_summing_matrix(&spec);
        let mut rng = common::rng(seed);
        let identity = DMatrix::identity(s.cols(), s.cols());
        for g in unbiased_mappings(&spec, &mut rng) {
            prop_assert!(max_diff(&(&g.g * s.entries()), &identity) < 1e-9, "{:?}: G·S ≠ I", g.method);
            let sgs = s.entries() * &g.g * s.entries();
            prop_assert!(max_diff(&sgs, s.entries()) < 1e-9, "{:?}: S·G·S ≠ S", g.method);
        }
    }

    #[test]
    fn every_mapping_is_an_idempotent_projection_onto_coherent_forecasts(
        spec in common::hierarchy(12),
        seed in any::<u64>(),
    ) {
        let s = build_summing_matrix(&spec);
        let mut rng = common::rng(seed);
        let mut all = unbiased_mappings(&spec, &mut rng);
        all.extend(proportional_mappings(&spec, &mut rng));
        let y = DVector::from_fn(s.rows(), |_, _| rng.random_range(-50.0..50.0));
        for g in all {
            let p = g.projection(&s);
            prop_assert!(max_diff(&(&p * &p), &p) < 1e-9, "{:?}: (SG)² ≠ SG", g.method);
            let reconciled = &p * &y;
            prop_assert!(s.incoherence(&reconciled) < 1e-9, "{:?}", g.method);
            let again = &p * &reconciled;
            prop_assert!((again - &reconciled).abs().max() < 1e-9);
        }
    }

    #[test]
    fn min_trace_matches_the_constrained_gls_projection(spec in common::hierarchy(5), seed in any::<u64>()) {
        let s = build_summing_matrix(&spec);
        let mut rng = common::rng(seed);
        let w = common::random_spd(&mut rng, s.rows());
        let g = min_trace_g(s.entries(), &w).unwrap();
        let oracle = common::constrained_gls_projection(&common::constraint_matrix(&spec), &w);
        prop_assert!(max_diff(&(s.entries() * g), &oracle) < 1e-8);
    }

    #[test]
    fn min_trace_is_invariant_to_scaling_the_weights(
        spec in common::hierarchy(12),
        seed in any::<u64>(),
        scale in 1e-3f64..1e3,
    ) {
        let s = build_summing_matrix(&spec);
        let mut rng = common::rng(seed);
        let w = common::random_spd(&mut rng, s.rows());
        let g = min_trace_g(s.entries(), &w).unwrap();
        let scaled = min_trace_g(s.entries(), &(&w * scale)).unwrap();
        prop_assert!(max_diff(&g, &scaled) < 1e-8);
    }

    #[test]
    fn shrinkage_intensity_lies_in_the_unit_interval(
        seed in any::<u64>(),
        rows in 3usize..40,
        cols in 2usize..8,
        empirical in any::<bool>(),
    ) {
        let mut rng = common::rng(seed);
        let residuals = common::random_matrix(&mut rng, rows, cols);
        let labels: Vec<String> = (0..cols).map(|i| format!("s{i}")).collect();
        let estimator = if empirical { CorrelationVariance::Empirical } else { CorrelationVariance::Asymptotic };
        let lambda = shrinkage_intensity(&residuals, estimator, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&lambda));
        let w = estimate_w(&residuals, CovarianceKind::Shrinkage, &labels).unwrap();
        prop_assert!(w.w.clone().cholesky().is_some(), "shrunk W must stay positive definite");
    }
}

#[test]
fn proportional_mappings_do_not_reproduce_the_summing_matrix() {
    // Top-down forecasts depend on the root only, so S·G·S has rank one.
    let spec = common::fig1();
    let s = build_summing_matrix(&spec);
    let mut rng = common::rng(3);
    for g in proportional_mappings(&spec, &mut rng) {
        let sgs = s.entries() * &g.g * s.entries();
        assert!(max_diff(&sgs, s.entries()) > 0.1, "{:?}", g.method);
    }
}
