#![allow(dead_code)]

use chrono::{NaiveDate, NaiveDateTime};
use coherent_core::hierarchy::HierarchySpec;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fig1() -> HierarchySpec {
    HierarchySpec::three_level("T", &[("A", &["A1", "A2"]), ("B", &["B1", "B2"])]).unwrap()
}

/// Tree from nested group sizes: each inner vector is one level-1 group,
/// each entry the leaf count of a level-2 subgroup. A single subgroup per
/// group and a single group collapse nothing; depth is always 3 unless
/// `flat` is set, in which case the groups hang leaves directly.
pub fn tree_from_sizes(groups: &[Vec<usize>], flat: bool) -> HierarchySpec {
    let mut nodes = vec!["root".to_string()];
    let mut edges = Vec::new();
    let mut leaf = 0;
    for (g, subs) in groups.iter().enumerate() {
        let gname = format!("g{g}");
        nodes.push(gname.clone());
        edges.push(("root".to_string(), gname.clone()));
        if flat {
            for _ in 0..subs.iter().sum::<usize>() {
                let name = format!("leaf{leaf}");
                leaf += 1;
                nodes.push(name.clone());
                edges.push((gname.clone(), name));
            }
            continue;
        }
        for (s, &count) in subs.iter().enumerate() {
            let sname = format!("g{g}s{s}");
            nodes.push(sname.clone());
            edges.push((gname.clone(), sname.clone()));
            for _ in 0..count {
                let name = format!("leaf{leaf}");
                leaf += 1;
                nodes.push(name.clone());
                edges.push((sname.clone(), name));
            }
        }
    }
    HierarchySpec::new(nodes, edges).unwrap()
}

/// Random hierarchies of depth 1 to 3 with at most `max_bottom` leaves.
pub fn hierarchy(max_bottom: usize) -> impl Strategy<Value = HierarchySpec> {
    let star = (1..=max_bottom).prop_map(|n| {
        let leaves: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let refs: Vec<&str> = leaves.iter().map(String::as_str).collect();
        HierarchySpec::star("root", &refs).unwrap()
    });
    let nested = (prop::collection::vec(prop::collection::vec(1usize..=3, 1..=3), 1..=3), any::<bool>())
        .prop_filter("too many leaves", move |(g, _)| {
            g.iter().flatten().sum::<usize>() <= max_bottom
        })
        .prop_map(|(g, flat)| tree_from_sizes(&g, flat));
    prop_oneof![star, nested]
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Symmetric positive definite with a bounded condition number.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, n, n);
    &a * a.transpose() + DMatrix::identity(n, n) * 0.5
}

pub fn t0() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2021, 4, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap()
}

/// Constraint matrix `C` with `C·y = 0` exactly for coherent `y`:
/// each aggregate row minus the sum of its bottom descendants.
pub fn constraint_matrix(spec: &HierarchySpec) -> DMatrix<f64> {
    let m = spec.m();
    let offset = spec.bottom_offset();
    let mut c = DMatrix::zeros(offset, m);
    for node in 0..offset {
        c[(node, node)] = 1.0;
        for b in spec.bottom_descendants(node) {
            c[(node, offset + b)] = -1.0;
        }
    }
    c
}

/// GLS projection onto `{y : C y = 0}`: `I − W Cᵀ (C W Cᵀ)⁻¹ C`, via LU.
pub fn constrained_gls_projection(c: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    if c.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let inner = (c * w * c.transpose()).lu().try_inverse().expect("C W Cᵀ invertible");
    DMatrix::identity(n, n) - w * c.transpose() * inner * c
}

/// Residuals for every level of `scheme` over `windows` top-level windows,
/// driven by a shared factor so cross-sectional correlations are non-trivial.
pub fn random_residuals(
    spec: &HierarchySpec,
    scheme: &coherent_core::hierarchy::TemporalScheme,
    windows: usize,
    rng: &mut ChaCha8Rng,
) -> coherent_core::base_forecast::ResidualSet {
    use coherent_core::base_forecast::{LevelResiduals, ResidualSet};
    let levels = scheme
        .levels()
        .into_iter()
        .map(|level| {
            let rows = windows * level.slots;
            let common: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
            let values = DMatrix::from_fn(rows, spec.m(), |r, c| {
                common[r] * (1.0 + c as f64 * 0.1) + rng.random_range(-1.0..1.0)
            });
            let step = chrono::Duration::minutes((scheme.base_step_minutes() * level.factor) as i64);
            LevelResiduals {
                factor: level.factor,
                index: (0..rows).collect(),
                timestamps: (0..rows).map(|r| t0() + step * r as i32).collect(),
                values,
            }
        })
        .collect();
    ResidualSet {
        node_ids: spec.nodes().to_vec(),
        levels,
    }
}
