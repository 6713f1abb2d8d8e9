//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run with `cargo test -p batchmeans --test acceptance`; pass criterion ids
//! (e.g. `c1 c4`) after `--` to run a subset.

use std::time::Instant;

use batchmeans::batching::{
    coordinate_sigmas, gamma_statistic, make_plan, sample_cov, Allocation, BatchAccumulator,
    BatchMeansSummary,
};
use batchmeans::calibration::{
    estimate_alpha, f_quantile, g_of_skeleton, LimitDrawSpec, QuantileCache,
};
use batchmeans::experiments::{
    run_coverage, run_det_study, run_volume_study, CoverageConfig, DetStudyConfig, Method,
    VolumeStudyConfig,
};
use batchmeans::inference::{build_region, contains, marginal_intervals};
use batchmeans::linalg::{det_sqrt, SymMatrix};
use batchmeans::models::{linear_oracle, linspace_params, ModelKind};
use batchmeans::rng::derive_stream;
use batchmeans::sgd::{run_sgd, PathRecorder, SgdRunConfig, StepSchedule};

const SEED: u64 = 42;

/// Tolerance on each quantile-table cell.
const TABLE_TOL: f64 = 0.04;
/// Draws per quantile-table cell and per F cross-check cell.
const TABLE_REPS: usize = 1_000_000;
/// Draws per degeneracy check.
const SKELETON_DRAWS: usize = 10_000;
/// Draws for α and for the determinant average in the volume study.
const VOLUME_REPS: usize = 1_000_000;
/// Calibration draws for the coverage criteria.
const COVERAGE_CAL_REPS: usize = 1_000_000;
/// Coverage band for the desk-scale linear runs.
const COVERAGE_BAND: (f64, f64) = (0.91, 0.985);
/// Upper bound on coverage for the small-T logistic run.
const UNDER_COVERAGE_MAX: f64 = 0.80;
/// Determinant threshold and required fraction in the degeneracy study.
const DET_THRESHOLD: f64 = 1e-6;
const DET_FRACTION: f64 = 0.95;
/// Relative tolerance for floating-point identities.
const IDENTITY_RTOL: f64 = 1e-10;

/// Published 95% quantiles under increasing batch sizes: (d, m, value).
const TABLE: [(usize, usize, f64); 8] = [
    (1, 10, 2.93),
    (2, 10, 2.92),
    (3, 10, 3.13),
    (4, 10, 3.50),
    (1, 40, 1.76),
    (2, 40, 1.55),
    (3, 40, 1.47),
    (4, 40, 1.50),
];

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    summary: String,
}

fn outcome(pass: bool, summary: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        summary: summary.into(),
    }
}

fn table_cells(r: f64, skip: &[(usize, usize)]) -> (bool, f64) {
    let alloc = Allocation::ibs(r).unwrap();
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for (d, m, paper) in TABLE {
        let spec = LimitDrawSpec::from_allocation(d, m, &alloc).unwrap();
        let q = estimate_alpha(&spec, 0.05, TABLE_REPS, SEED).unwrap();
        let diff = (q.alpha_hat - paper).abs();
        let excluded = skip.contains(&(d, m));
        println!(
            "    r={r:.4} d={d} m={m}: alpha={:.4} CI=[{:.4}, {:.4}] published={paper:.2} |diff|={diff:.4}{}",
            q.alpha_hat,
            q.ci_low,
            q.ci_high,
            if excluded { " (reported only)" } else { "" }
        );
        if !excluded {
            ok &= diff <= TABLE_TOL;
            worst = worst.max(diff);
        }
    }
    (ok, worst)
}

fn c1() -> Outcome {
    let (ok, worst) = table_cells(StepSchedule::DEFAULT_EXPONENT, &[]);
    outcome(
        ok,
        format!("quantile table, IBS r=2/3, 8 cells within {TABLE_TOL}: worst |diff| = {worst:.4}"),
    )
}

/// The published table is reproduced by the exponent-2 IBS grid (r = 1/2).
/// The (4, 40) cell is out of line with its neighbours and is reported only.
fn c1_supplement() -> Outcome {
    let (ok, worst) = table_cells(0.5, &[(4, 40)]);
    outcome(
        ok,
        format!("quantile table, IBS r=1/2, 7 cells within {TABLE_TOL}: worst |diff| = {worst:.4}"),
    )
}

fn c2() -> Outcome {
    let mut ok = true;
    for (d, m) in [(1, 10), (2, 20), (3, 30)] {
        let spec = LimitDrawSpec::from_allocation(d, m, &Allocation::Es).unwrap();
        let q = estimate_alpha(&spec, 0.05, TABLE_REPS, SEED).unwrap();
        let f = f_quantile(d, m - d, 0.95).unwrap();
        let hit = q.ci_low <= f && f <= q.ci_high;
        println!(
            "    d={d} m={m}: alpha={:.4} CI=[{:.4}, {:.4}] F={f:.4} {}",
            q.alpha_hat,
            q.ci_low,
            q.ci_high,
            if hit { "bracketed" } else { "missed" }
        );
        ok &= hit;
    }
    outcome(
        ok,
        "even split: quantile CI brackets the F(d, m-d) 95% quantile",
    )
}

fn c3() -> Outcome {
    let mut ok = true;
    for d in [1usize, 2, 5, 10] {
        let mut ms: Vec<usize> = (2..=d).collect();
        ms.push(d + 1);
        for m in ms {
            let w = vec![1.0 / m as f64; m];
            let mut stream = derive_stream(SEED, (d * 1000 + m) as u64);
            let mut zero = 0usize;
            for _ in 0..SKELETON_DRAWS {
                let inc: Vec<Vec<f64>> = (0..m)
                    .map(|i| {
                        let mut v = vec![0.0; d];
                        stream.fill_std_normal(&mut v);
                        v.iter().map(|x| x * w[i].sqrt()).collect()
                    })
                    .collect();
                let g = g_of_skeleton(&inc, &w).unwrap();
                zero += (det_sqrt(&g) == 0.0) as usize;
            }
            let expect_zero = m <= d;
            let good = if expect_zero {
                zero == SKELETON_DRAWS
            } else {
                zero == 0
            };
            println!("    d={d} m={m}: {zero}/{SKELETON_DRAWS} zero determinants");
            ok &= good;
        }
    }
    outcome(ok, "rank law: det g = 0 iff m <= d (10^4 draws per (d, m))")
}

fn coverage(
    model: ModelKind,
    d: usize,
    t: usize,
    m: usize,
    alloc: Allocation,
    seed: u64,
) -> (f64, f64) {
    let config = CoverageConfig {
        m,
        allocation: alloc,
        replications: 300,
        base_seed: seed,
        calibration_reps: COVERAGE_CAL_REPS,
        calibration_seed: SEED,
        ..CoverageConfig::new(model, d, t, Method::BmJoint)
    };
    let report = run_coverage(&config, &mut QuantileCache::in_memory()).unwrap();
    println!("    {}", report.summary_line());
    (report.coverage, report.half_width)
}

fn c4() -> Outcome {
    let r = StepSchedule::DEFAULT_EXPONENT;
    let ibs = Allocation::ibs(r).unwrap();
    let dbs = Allocation::dbs(r).unwrap();
    let (p_ibs, _) = coverage(ModelKind::Linear, 2, 100_000, 30, ibs.clone(), 7);
    let (p_es, _) = coverage(ModelKind::Linear, 2, 100_000, 30, Allocation::Es, 7);
    let (p_small, h_small) = coverage(ModelKind::Linear, 2, 10_000, 30, ibs, 7);
    let (p_dbs, h_dbs) = coverage(ModelKind::Linear, 2, 10_000, 30, dbs, 7);
    let band = |p: f64| (COVERAGE_BAND.0..=COVERAGE_BAND.1).contains(&p);
    let ordered = p_small - p_dbs > h_small + h_dbs;
    outcome(
        band(p_ibs) && band(p_es) && ordered,
        format!(
            "linear d=2 coverage: IBS {p_ibs:.3}, ES {p_es:.3} in [{}, {}]; T=10^4 IBS {p_small:.3} vs DBS {p_dbs:.3} (gap must exceed {:.3})",
            COVERAGE_BAND.0,
            COVERAGE_BAND.1,
            h_small + h_dbs
        ),
    )
}

fn c5() -> Outcome {
    let alloc = Allocation::ibs(StepSchedule::DEFAULT_EXPONENT).unwrap();
    let (p, h) = coverage(ModelKind::Logistic, 3, 10_000, 40, alloc, 7);
    outcome(
        p <= UNDER_COVERAGE_MAX,
        format!("logistic d=3 T=10^4 m=40: coverage {p:.3} ± {h:.3} <= {UNDER_COVERAGE_MAX}"),
    )
}

fn c6() -> Outcome {
    let study = |d: usize| {
        let config = DetStudyConfig {
            replications: 200,
            base_seed: SEED,
            ..DetStudyConfig::new(ModelKind::Logistic, d, 18, 100_000)
        };
        run_det_study(&config).unwrap()
    };
    let below20 = study(20).fraction_below(DET_THRESHOLD);
    let above10 = 1.0 - study(10).fraction_below(DET_THRESHOLD);
    outcome(
        below20 >= DET_FRACTION && above10 >= DET_FRACTION,
        format!(
            "det(T S) with m=18: d=20 {:.1}% below {DET_THRESHOLD:e}, d=10 {:.1}% above (need {:.0}%)",
            100.0 * below20,
            100.0 * above10,
            100.0 * DET_FRACTION
        ),
    )
}

fn c7() -> Outcome {
    let mut ok = true;
    let mut cache = QuantileCache::in_memory();
    for d in [1usize, 2, 5] {
        let mut m_list = vec![d + 5, 20, 40, 100];
        m_list.dedup();
        let config = VolumeStudyConfig {
            d,
            m_list,
            allocation: Allocation::ibs(StepSchedule::DEFAULT_EXPONENT).unwrap(),
            delta: 0.05,
            reps: VOLUME_REPS,
            base_seed: SEED,
        };
        let study = run_volume_study(&config, &mut cache).unwrap();
        for row in &study.rows {
            println!(
                "    d={d} m={}: v={:.4} se={:.4}",
                row.m, row.v, row.std_error
            );
        }
        for pair in study.rows.windows(2) {
            let gap = pair[0].v - pair[1].v;
            let se = pair[0].std_error.hypot(pair[1].std_error);
            ok &= gap > 2.0 * se;
        }
    }
    outcome(
        ok,
        "volume factor strictly decreasing in m beyond 2 standard errors",
    )
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= IDENTITY_RTOL * (1.0 + a.abs().max(b.abs()))
}

fn c8() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    // Streaming against offline batch means on a recorded path.
    let d = 3;
    let t = 5_000;
    let plan = make_plan(t, 12, &Allocation::ibs(2.0 / 3.0).unwrap()).unwrap();
    let mut acc = BatchAccumulator::new(plan.clone(), d).unwrap();
    let mut rec = PathRecorder::default();
    let mut oracle = linear_oracle(linspace_params(d).unwrap());
    run_sgd(
        &mut oracle,
        &SgdRunConfig::new(d, t),
        &mut derive_stream(SEED, 0),
        &mut (&mut acc, &mut rec),
    )
    .unwrap();
    let summary = acc.finalize().unwrap();
    let b = plan.boundaries();
    let mut streaming_ok = true;
    for (i, xi) in summary.batch_means().iter().enumerate() {
        let n = (b[i + 1] - b[i]) as f64;
        for k in 0..d {
            let offline = rec.path[b[i]..b[i + 1]].iter().map(|x| x[k]).sum::<f64>() / n;
            streaming_ok &= close(xi[k], offline);
        }
    }
    check("streaming == offline", streaming_ok);

    let sizes = plan.sizes();
    let mut mean_ok = true;
    for k in 0..d {
        let weighted: f64 = summary
            .batch_means()
            .iter()
            .zip(&sizes)
            .map(|(xi, &n)| xi[k] * n as f64 / t as f64)
            .sum();
        mean_ok &= close(weighted, summary.mean()[k]);
    }
    check("mean identity", mean_ok);
    check(
        "gamma at mean",
        gamma_statistic(&summary, summary.mean()).unwrap() == 0.0,
    );

    // d = 1: region and marginal interval coincide.
    let plan1 = make_plan(40, 8, &Allocation::Es).unwrap();
    let mut s1 = derive_stream(SEED, 1);
    let xi: Vec<Vec<f64>> = (0..8).map(|_| vec![s1.std_normal()]).collect();
    let xbar = vec![xi.iter().map(|v| v[0]).sum::<f64>() / 8.0];
    let one = BatchMeansSummary::from_parts(plan1, xi, xbar).unwrap();
    let spec = LimitDrawSpec::from_allocation(1, 8, &Allocation::Es).unwrap();
    let q = estimate_alpha(&spec, 0.05, 10_000, SEED).unwrap();
    let region = build_region(&one, &q).unwrap();
    let iv = marginal_intervals(&one, &q).unwrap();
    let half = (region.scale() * region.shape().get(0, 0)).sqrt();
    let mut eq =
        close(iv.upper[0], one.mean()[0] + half) && close(iv.lower[0], one.mean()[0] - half);
    for j in -40..=40 {
        let x = one.mean()[0] + j as f64 * half / 20.0 * 1.0001;
        eq &= contains(&region, &[x]).unwrap() == iv.covers(0, x);
    }
    check("d=1 region == interval", eq);

    // Affine maps of batch means and skeletons.
    let a = [1.0, 0.5, -0.3, 0.0, 2.0, 0.7, 0.2, -0.1, 1.5];
    let c = [3.0, -1.0, 0.25];
    let map = |x: &[f64]| -> Vec<f64> {
        (0..3)
            .map(|i| c[i] + (0..3).map(|j| a[3 * i + j] * x[j]).sum::<f64>())
            .collect()
    };
    let moved = BatchMeansSummary::from_parts(
        summary.plan().clone(),
        summary.batch_means().iter().map(|v| map(v)).collect(),
        map(summary.mean()),
    )
    .unwrap();
    let lhs = sample_cov(&moved);
    let rhs = sample_cov(&summary).congruence(&a).unwrap();
    check("sample_cov affine", mat_close(&lhs, &rhs));
    check("sigmas translation", {
        let shifted = BatchMeansSummary::from_parts(
            summary.plan().clone(),
            summary
                .batch_means()
                .iter()
                .map(|v| v.iter().zip(&c).map(|(x, y)| x + y).collect())
                .collect(),
            summary.mean().iter().zip(&c).map(|(x, y)| x + y).collect(),
        )
        .unwrap();
        coordinate_sigmas(&shifted)
            .iter()
            .zip(coordinate_sigmas(&summary))
            .all(|(p, q)| close(*p, q))
    });

    let w: [f64; 4] = [0.1, 0.2, 0.3, 0.4];
    let mut s2 = derive_stream(SEED, 2);
    let inc: Vec<Vec<f64>> = w
        .iter()
        .map(|wi| (0..3).map(|_| s2.std_normal() * wi.sqrt()).collect())
        .collect();
    let g = g_of_skeleton(&inc, &w).unwrap();
    let linear: Vec<Vec<f64>> = inc
        .iter()
        .map(|v| {
            (0..3)
                .map(|i| (0..3).map(|j| a[3 * i + j] * v[j]).sum())
                .collect()
        })
        .collect();
    check(
        "g linear",
        mat_close(
            &g_of_skeleton(&linear, &w).unwrap(),
            &g.congruence(&a).unwrap(),
        ),
    );
    let drift: Vec<Vec<f64>> = inc
        .iter()
        .zip(&w)
        .map(|(v, wi)| v.iter().zip(&c).map(|(x, ci)| x + ci * wi).collect())
        .collect();
    check(
        "g drift",
        mat_close(&g_of_skeleton(&drift, &w).unwrap(), &g),
    );

    // Thread-count invariance.
    let pool = |n: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
    };
    let cov_cfg = CoverageConfig {
        replications: 24,
        m: 10,
        calibration_reps: 20_000,
        ..CoverageConfig::new(ModelKind::Logistic, 2, 3_000, Method::BmJoint)
    };
    let run_all = || {
        let mut cache = QuantileCache::in_memory();
        let cov = run_coverage(&cov_cfg, &mut cache).unwrap();
        let sec = run_coverage(
            &CoverageConfig {
                method: Method::Sectioning,
                ..cov_cfg.clone()
            },
            &mut cache,
        )
        .unwrap();
        let vol = run_volume_study(
            &VolumeStudyConfig {
                d: 2,
                m_list: vec![7, 12],
                allocation: Allocation::Es,
                delta: 0.05,
                reps: 20_000,
                base_seed: 9,
            },
            &mut cache,
        )
        .unwrap();
        let det = run_det_study(&DetStudyConfig {
            replications: 12,
            ..DetStudyConfig::new(ModelKind::Linear, 3, 6, 2_000)
        })
        .unwrap();
        (cov, sec, vol, det)
    };
    let one_thread = pool(1).install(run_all);
    let three_threads = pool(3).install(run_all);
    check("thread invariance", one_thread == three_threads);

    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "exact identities and thread-count invariance".to_string()
        } else {
            format!("exact identities: failed {}", failures.join(", "))
        },
    )
}

fn mat_close(x: &SymMatrix, y: &SymMatrix) -> bool {
    x.as_slice()
        .iter()
        .zip(y.as_slice())
        .all(|(p, q)| close(*p, *q))
}

fn main() {
    let selected: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria: [Criterion; 9] = [
        ("c1", c1),
        ("c1-supplement", c1_supplement),
        ("c2", c2),
        ("c3", c3),
        ("c4", c4),
        ("c5", c5),
        ("c6", c6),
        ("c7", c7),
        ("c8", c8),
    ];
    let mut failed = 0;
    for (id, run) in criteria {
        if !selected.is_empty() && !selected.iter().any(|s| id.starts_with(s.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "{verdict} [{id}] {} ({:.1}s)",
            o.summary,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!o.pass);
    }
    println!("SKIP [c9] exact published coverage cells and HiGrad rows are out of scope");
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
