//! Property tests for exact algebraic identities.

use batchmeans::batching::{
    gamma_statistic, make_plan, sample_cov, Allocation, BatchAccumulator, BatchMeansSummary,
};
use batchmeans::calibration::{
    g_of_skeleton, order_statistic_quantile, QuantileKey, ScalingQuantile,
};
use batchmeans::inference::{build_region, contains, marginal_intervals};
use batchmeans::linalg::{cholesky, det_sqrt, quad_form_inv, SymMatrix};
use proptest::prelude::*;

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Determinant by Gaussian elimination with partial pivoting.
fn lu_det(a: &[f64], d: usize) -> f64 {
    let mut a = a.to_vec();
    let mut det = 1.0;
    for c in 0..d {
        let p = (c..d)
            .max_by(|&i, &j| a[i * d + c].abs().total_cmp(&a[j * d + c].abs()))
            .unwrap();
        if a[p * d + c] == 0.0 {
            return 0.0;
        }
        if p != c {
            for k in 0..d {
                a.swap(p * d + k, c * d + k);
            }
            det = -det;
        }
        det *= a[c * d + c];
        for i in (c + 1)..d {
            let f = a[i * d + c] / a[c * d + c];
            for k in c..d {
                a[i * d + k] -= f * a[c * d + k];
            }
        }
    }
    det
}

fn spd(d: usize, entries: &[f64], eps: f64) -> SymMatrix {
    let mut s = SymMatrix::zeros(d).unwrap();
    for row in entries.chunks(d).take(d) {
        s.add_outer(row, 1.0);
    }
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        s.add_outer(&e, eps);
    }
    s
}

fn matrix_strategy() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1usize..7).prop_flat_map(|d| (Just(d), prop::collection::vec(-3.0f64..3.0, d * d)))
}

fn allocation_strategy() -> impl Strategy<Value = Allocation> {
    prop_oneof![
        Just(Allocation::Es),
        (0.5f64..0.95).prop_map(|r| Allocation::ibs(r).unwrap()),
        (0.5f64..0.95).prop_map(|r| Allocation::dbs(r).unwrap()),
    ]
}

/// A path of `t` points in R^d plus a plan for it.
fn path_and_plan() -> impl Strategy<Value = (Vec<Vec<f64>>, usize, Allocation)> {
    (1usize..4, 2usize..9, 0usize..60, allocation_strategy()).prop_flat_map(
        |(d, m, extra, alloc)| {
            let t = m + extra;
            (
                prop::collection::vec(prop::collection::vec(-10.0f64..10.0, d), t),
                Just(m),
                Just(alloc),
            )
        },
    )
}

fn summarize(path: &[Vec<f64>], m: usize, alloc: &Allocation) -> BatchMeansSummary {
    let d = path[0].len();
    let plan = make_plan(path.len(), m, alloc).unwrap();
    let mut acc = BatchAccumulator::new(plan, d).unwrap();
    for x in path {
        acc.feed(x).unwrap();
    }
    acc.finalize().unwrap()
}

fn quantile(d: usize, m: usize, alloc: &Allocation, alpha: f64) -> ScalingQuantile {
    ScalingQuantile {
        alpha_hat: alpha,
        ci_low: alpha,
        ci_high: alpha,
        key: QuantileKey {
            d,
            m,
            allocation: alloc.descriptor(),
            delta: 0.05,
            reps: 10_000,
            base_seed: 0,
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn cholesky_reconstructs((d, a) in matrix_strategy(), eps in 1e-3f64..1.0) {
        let s = spd(d, &a, eps);
        let f = cholesky(&s).unwrap();
        let back = f.reconstruct();
        let err: f64 = back.as_slice().iter().zip(s.as_slice()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-10 * s.frobenius_norm());
        let diag_sq: f64 = f.diag().map(|x| x * x).product();
        prop_assert!(rel_close(det_sqrt(&s).powi(2), diag_sq, 1e-10));
    }

    #[test]
    fn det_sqrt_matches_elimination((d, a) in matrix_strategy(), eps in 1e-2f64..1.0) {
        let s = spd(d, &a, eps);
        let lu = lu_det(s.as_slice(), d);
        prop_assert!((det_sqrt(&s).powi(2) - lu).abs() <= 1e-9 * lu.abs().max(1e-12));
    }

    #[test]
    fn quad_form_nonnegative((d, a) in matrix_strategy(), v in prop::collection::vec(-5.0f64..5.0, 6)) {
        let s = spd(d, &a, 0.1);
        let q = quad_form_inv(&s, &v[..d]).unwrap();
        prop_assert!(q >= 0.0);
        let id = SymMatrix::identity(d).unwrap();
        let norm: f64 = v[..d].iter().map(|x| x * x).sum();
        prop_assert!(rel_close(quad_form_inv(&id, &v[..d]).unwrap(), norm, 1e-12));
    }

    #[test]
    fn plans_partition_exactly(t in 2usize..5000, m in 2usize..60, alloc in allocation_strategy()) {
        prop_assume!(t >= m);
        let plan = make_plan(t, m, &alloc).unwrap();
        let b = plan.boundaries();
        prop_assert_eq!(b.len(), m + 1);
        prop_assert_eq!(b[0], 0);
        prop_assert_eq!(b[m], t);
        prop_assert!(b.windows(2).all(|w| w[0] < w[1]));
        if alloc == Allocation::Es {
            let sizes = plan.sizes();
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
        }
    }

    #[test]
    fn dbs_reverses_ibs(t in 2usize..5000, m in 2usize..40, r in 0.5f64..0.95) {
        prop_assume!(t >= m);
        let ibs = make_plan(t, m, &Allocation::ibs(r).unwrap()).unwrap().sizes();
        let mut dbs = make_plan(t, m, &Allocation::dbs(r).unwrap()).unwrap().sizes();
        dbs.reverse();
        prop_assert_eq!(ibs, dbs);
    }

    #[test]
    fn streaming_matches_offline((path, m, alloc) in path_and_plan()) {
        let summary = summarize(&path, m, &alloc);
        let b = summary.plan().boundaries().to_vec();
        let d = path[0].len();
        let t = path.len();
        for (i, xi) in summary.batch_means().iter().enumerate() {
            let n = (b[i + 1] - b[i]) as f64;
            for k in 0..d {
                let offline: f64 = path[b[i]..b[i + 1]].iter().map(|x| x[k]).sum::<f64>() / n;
                prop_assert!(rel_close(xi[k], offline, 1e-12));
            }
        }
        for k in 0..d {
            let grand: f64 = path.iter().map(|x| x[k]).sum::<f64>() / t as f64;
            prop_assert!(rel_close(summary.mean()[k], grand, 1e-12));
            let weighted: f64 = summary
                .batch_means()
                .iter()
                .zip(summary.plan().sizes())
                .map(|(xi, n)| xi[k] * n as f64 / t as f64)
                .sum();
            prop_assert!(rel_close(weighted, summary.mean()[k], 1e-12));
        }
    }

    #[test]
    fn gamma_vanishes_at_mean((path, m, alloc) in path_and_plan()) {
        let s = summarize(&path, m, &alloc);
        match gamma_statistic(&s, s.mean()) {
            Ok(g) => prop_assert_eq!(g, 0.0),
            Err(e) => prop_assert!(m <= s.dim() || e == batchmeans::Error::DegenerateCovariance),
        }
    }

    #[test]
    fn sample_cov_affine(
        (path, m, alloc) in path_and_plan(),
        a in prop::collection::vec(-2.0f64..2.0, 9),
        c in prop::collection::vec(-50.0f64..50.0, 3),
    ) {
        let s = summarize(&path, m, &alloc);
        let d = s.dim();
        let a: Vec<f64> = (0..d * d).map(|i| a[(i / d) * 3 + i % d]).collect();
        let map = |x: &[f64]| -> Vec<f64> {
            (0..d).map(|i| c[i] + (0..d).map(|j| a[i * d + j] * x[j]).sum::<f64>()).collect()
        };
        let moved = BatchMeansSummary::from_parts(
            s.plan().clone(),
            s.batch_means().iter().map(|x| map(x)).collect(),
            map(s.mean()),
        ).unwrap();
        let lhs = sample_cov(&moved);
        let rhs = sample_cov(&s).congruence(&a).unwrap();
        let scale = rhs.frobenius_norm() + 1.0;
        for (x, y) in lhs.as_slice().iter().zip(rhs.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn gamma_affine_invariant(
        (path, m, alloc) in path_and_plan(),
        shift in prop::collection::vec(-5.0f64..5.0, 3),
        x in prop::collection::vec(-10.0f64..10.0, 3),
    ) {
        let s = summarize(&path, m, &alloc);
        let d = s.dim();
        prop_assume!(m > d);
        let Ok(g0) = gamma_statistic(&s, &x[..d]) else { return Ok(()); };
        // Diagonal scaling plus translation.
        let scale: Vec<f64> = (0..d).map(|k| 0.5 + k as f64).collect();
        let map = |v: &[f64]| -> Vec<f64> { (0..d).map(|k| scale[k] * v[k] + shift[k]).collect() };
        let moved = BatchMeansSummary::from_parts(
            s.plan().clone(),
            s.batch_means().iter().map(|v| map(v)).collect(),
            map(s.mean()),
        ).unwrap();
        let g1 = gamma_statistic(&moved, &map(&x[..d])).unwrap();
        prop_assert!(rel_close(g0, g1, 1e-7));
    }

    #[test]
    fn skeleton_linear_and_drift(
        d in 1usize..4,
        m in 2usize..8,
        raw in prop::collection::vec(-3.0f64..3.0, 24),
        a in prop::collection::vec(-2.0f64..2.0, 9),
        drift in prop::collection::vec(-5.0f64..5.0, 3),
        alloc in allocation_strategy(),
    ) {
        let w = alloc.nominal_weights(m).unwrap();
        let inc: Vec<Vec<f64>> = (0..m).map(|i| (0..d).map(|k| raw[(i * d + k) % raw.len()] * w[i].sqrt()).collect()).collect();
        let g = g_of_skeleton(&inc, &w).unwrap();
        let a: Vec<f64> = (0..d * d).map(|i| a[(i / d) * 3 + i % d]).collect();
        let mapped: Vec<Vec<f64>> = inc.iter().map(|v| (0..d).map(|i| (0..d).map(|j| a[i * d + j] * v[j]).sum()).collect()).collect();
        let lhs = g_of_skeleton(&mapped, &w).unwrap();
        let rhs = g.congruence(&a).unwrap();
        let scale = rhs.frobenius_norm() + 1.0;
        for (x, y) in lhs.as_slice().iter().zip(rhs.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-9 * scale);
        }
        let drifted: Vec<Vec<f64>> = inc.iter().zip(&w).map(|(v, wi)| v.iter().zip(&drift).map(|(x, c)| x + c * wi).collect()).collect();
        let gd = g_of_skeleton(&drifted, &w).unwrap();
        let scale = g.frobenius_norm() + 1.0;
        for (x, y) in gd.as_slice().iter().zip(g.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn one_dimensional_region_is_interval(
        xi in prop::collection::vec(-10.0f64..10.0, 2..12),
        alpha in 0.1f64..20.0,
        probes in prop::collection::vec(-30.0f64..30.0, 20),
    ) {
        let m = xi.len();
        let plan = make_plan(m * 3, m, &Allocation::Es).unwrap();
        let mean = xi.iter().sum::<f64>() / m as f64;
        let s = BatchMeansSummary::from_parts(plan, xi.iter().map(|&v| vec![v]).collect(), vec![mean]).unwrap();
        let q = quantile(1, m, &Allocation::Es, alpha);
        let Ok(region) = build_region(&s, &q) else { return Ok(()); };
        let iv = marginal_intervals(&s, &q).unwrap();
        let half = (region.scale() * region.shape().get(0, 0)).sqrt();
        prop_assert!(rel_close(iv.upper[0] - mean, half, 1e-12));
        prop_assert!(rel_close(mean - iv.lower[0], half, 1e-12));
        for p in probes {
            let near_edge = ((p - mean).abs() - half).abs() < 1e-9 * (1.0 + half);
            if !near_edge {
                prop_assert_eq!(contains(&region, &[p]).unwrap(), iv.covers(0, p));
            }
        }
    }

    #[test]
    fn regions_nest_in_alpha(
        (path, m, alloc) in path_and_plan(),
        a1 in 0.1f64..10.0,
        extra in 0.0f64..10.0,
        probe in prop::collection::vec(-10.0f64..10.0, 3),
    ) {
        let s = summarize(&path, m, &alloc);
        let d = s.dim();
        prop_assume!(m > d);
        let small = build_region(&s, &quantile(d, m, &alloc, a1));
        let large = build_region(&s, &quantile(d, m, &alloc, a1 + extra));
        if let (Ok(small), Ok(large)) = (small, large) {
            if contains(&small, &probe[..d]).unwrap() {
                prop_assert!(contains(&large, &probe[..d]).unwrap());
            }
        }
    }

    #[test]
    fn section_order_is_irrelevant(
        means in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 4..10),
        seed in any::<u64>(),
        x in prop::collection::vec(-5.0f64..5.0, 2),
    ) {
        let m = means.len();
        let build = |v: Vec<Vec<f64>>| {
            let pooled = (0..2).map(|k| v.iter().map(|r| r[k]).sum::<f64>() / m as f64).collect();
            BatchMeansSummary::from_parts(make_plan(m * 5, m, &Allocation::Es).unwrap(), v, pooled).unwrap()
        };
        let mut shuffled = means.clone();
        let mut state = seed;
        for i in (1..m).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        let (a, b) = (build(means), build(shuffled));
        for k in 0..2 {
            prop_assert!(rel_close(a.mean()[k], b.mean()[k], 1e-12));
        }
        for (p, q) in sample_cov(&a).as_slice().iter().zip(sample_cov(&b).as_slice()) {
            prop_assert!(rel_close(*p, *q, 1e-12));
        }
        if let (Ok(ga), Ok(gb)) = (gamma_statistic(&a, &x), gamma_statistic(&b, &x)) {
            prop_assert!(rel_close(ga, gb, 1e-9));
        }
    }

    #[test]
    fn order_statistic_brackets(mut sample in prop::collection::vec(-100.0f64..100.0, 1..400), p in 0.01f64..0.99) {
        let (est, lo, hi) = order_statistic_quantile(&mut sample, p);
        prop_assert!(lo <= est && est <= hi);
        let below = sample.iter().filter(|x| **x <= est).count();
        prop_assert!(below as f64 >= p * sample.len() as f64 - 1e-9);
    }
}
