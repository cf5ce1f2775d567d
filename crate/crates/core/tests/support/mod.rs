//! Random instance generators and invariant checkers shared by the property
//! tests and the acceptance suite. Every checker draws from the given RNG
//! only, so a case is reproducible from its seed.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use gramdet::cli::{cmd_score, ScoreArgs, ScoringFlags};
use gramdet::dataset::{
    blackwell_joint, class_member_joint, decompose_joint, hamming_distance, misreport_matrix,
    ordering_holds, DistTable, Labels, MatrixClass, MisreportCounts, OrderingSpec,
};
use gramdet::ingest::{
    load_dataset, quantile_bucketize, write_dataset, BucketizerSpec, LabelMap, LoadedObservations,
    ObsKind, RunConfig,
};
use gramdet::kernels::{kernel_matrix, label_gram, KernelSpec, ObservationSet};
use gramdet::matcore::{Mat, PredicateKind, StructuralPredicate};
use gramdet::scoring::{gram_score, plugin_score, ExperimentMatrix};
use gramdet::simulate::{corrupt, run_trials, MixedParams, PolicySpec, TrialConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seed for every randomized suite.
pub const CI_SEED: u64 = 0x006A_7DE7_2025;

pub type Check = fn(&mut ChaCha8Rng) -> Result<(), String>;

pub struct Property {
    pub module: &'static str,
    pub name: &'static str,
    pub cases: u32,
    pub check: Check,
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Runs `p` for its case count through proptest with a seed fixed by
/// `seed` and the property name.
pub fn run_property(p: &Property, seed: u64) -> Result<(), String> {
    let mut bytes = [0u8; 32];
    let tag = p
        .name
        .bytes()
        .fold(seed, |h, b| gramdet::seeds::mix64(h ^ b as u64));
    for (i, chunk) in bytes.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&gramdet::seeds::derive_seed(tag, i as u64).to_le_bytes());
    }
    let config = Config {
        cases: p.cases,
        failure_persistence: None,
        max_shrink_iters: 0,
        ..Config::default()
    };
    let mut runner =
        TestRunner::new_with_rng(config, TestRng::from_seed(RngAlgorithm::ChaCha, &bytes));
    runner
        .run(&any::<u64>(), |case| {
            let mut rng = ChaCha8Rng::seed_from_u64(case);
            (p.check)(&mut rng).map_err(TestCaseError::fail)
        })
        .map_err(|e| format!("{}::{}: {e}", p.module, p.name))
}

// ---------------------------------------------------------------- generators

pub fn uniform_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random_range(lo..hi)).unwrap()
}

pub fn col_stochastic(rng: &mut ChaCha8Rng, k: usize, d: usize) -> Mat {
    let m = uniform_mat(rng, k, d, 0.02, 1.0);
    let sums = m.col_sums();
    Mat::from_fn(k, d, |i, j| m[(i, j)] / sums[j]).unwrap()
}

/// Column-stochastic `k×d` experiment with `det(PᵀP) > 1e-12`.
pub fn p_indep(rng: &mut ChaCha8Rng, k: usize, d: usize) -> ExperimentMatrix {
    p_indep_margin(rng, k, d, 1e-12)
}

pub fn p_indep_margin(rng: &mut ChaCha8Rng, k: usize, d: usize, margin: f64) -> ExperimentMatrix {
    loop {
        let p = col_stochastic(rng, k, d);
        if p.t_matmul(&p).unwrap().det().unwrap() > margin {
            return ExperimentMatrix::new(p).unwrap();
        }
    }
}

pub fn simplex(rng: &mut ChaCha8Rng, d: usize, lo: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..d).map(|_| rng.random_range(lo..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Random joint matrix with positive entries summing to 1.
pub fn joint(rng: &mut ChaCha8Rng, d: usize) -> Mat {
    let m = uniform_mat(rng, d, d, 0.01, 1.0);
    m.scale(1.0 / m.sum())
}

/// Joint matrix with true marginal `q_x` whose rows put share `diag` (per
/// row, drawn from `diag_range`) on the diagonal.
pub fn diagonal_heavy(rng: &mut ChaCha8Rng, q_x: &[f64], diag_range: (f64, f64)) -> Mat {
    let d = q_x.len();
    let mut q = Mat::zeros(d, d);
    for i in 0..d {
        let share = if d == 1 {
            1.0
        } else {
            rng.random_range(diag_range.0..diag_range.1)
        };
        let off = simplex(rng, d.max(2) - 1, 0.01);
        let mut o = off.iter();
        for j in 0..d {
            q[(i, j)] = if i == j {
                q_x[i] * share
            } else {
                q_x[i] * (1.0 - share) * o.next().unwrap()
            };
        }
    }
    q
}

pub fn reg_joint(rng: &mut ChaCha8Rng, d: usize) -> Mat {
    let q_x = simplex(rng, d, 0.3);
    diagonal_heavy(rng, &q_x, (0.6, 0.95))
}

/// Column-stochastic garbling `(1−ε)I + εR` with `ε ∈ (0.05, 0.6)`.
pub fn garbling(rng: &mut ChaCha8Rng, d: usize) -> Mat {
    let eps = rng.random_range(0.05..0.6);
    let r = col_stochastic(rng, d, d);
    Mat::identity(d)
        .scale(1.0 - eps)
        .add(&r.scale(eps))
        .unwrap()
}

/// `Q·Tᵀ`: the joint whose report conditionals are `T` applied to `Q`'s.
pub fn garble(q: &Mat, t: &Mat) -> Mat {
    q.matmul(&t.transpose()).unwrap()
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Labels {
    Labels::new((0..n).map(|_| rng.random_range(1..=d)).collect(), d).unwrap()
}

/// Each label replaced with probability `p` by a uniform other label.
pub fn flip(rng: &mut ChaCha8Rng, truth: &Labels, p: f64) -> Labels {
    let d = truth.d();
    let v = truth
        .values()
        .iter()
        .map(|&x| {
            if d > 1 && rng.random_bool(p) {
                let o = rng.random_range(1..d);
                if o >= x {
                    o + 1
                } else {
                    o
                }
            } else {
                x
            }
        })
        .collect();
    Labels::new(v, d).unwrap()
}

pub fn sample_categorical(rng: &mut ChaCha8Rng, truth: &Labels, p: &Mat) -> ObservationSet {
    let ids = truth
        .values()
        .iter()
        .map(|&x| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for y in 0..p.rows() {
                acc += p[(y, x - 1)];
                if u < acc {
                    return y + 1;
                }
            }
            p.rows()
        })
        .collect();
    ObservationSet::categorical(ids, p.rows()).unwrap()
}

fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

// ---------------------------------------------------------------- matcore

fn det_product(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let d = rng.random_range(1..=6);
    let a = uniform_mat(rng, d, d, -1.0, 1.0);
    let b = uniform_mat(rng, d, d, -1.0, 1.0);
    let lhs = ok(ok(a.matmul(&b))?.det())?;
    let rhs = ok(a.det())? * ok(b.det())?;
    ensure!(
        (lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1e-12),
        "det(AB)={lhs} det(A)det(B)={rhs}"
    );
    Ok(())
}

fn det_gram_singular_values(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let c = rng.random_range(1..=6);
    let r = rng.random_range(c..=c + 3);
    let m = uniform_mat(rng, r, c, -1.0, 1.0);
    let det = ok(ok(m.t_matmul(&m))?.det())?;
    let prod: f64 = m.singular_values().iter().map(|s| s * s).product();
    ensure!(rel_close(det, prod, 1e-8), "det(mᵀm)={det} Πσ²={prod}");
    Ok(())
}

fn spectral_norm_top_singular(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let r = rng.random_range(1..=7);
    let c = rng.random_range(1..=7);
    let m = uniform_mat(rng, r, c, -1.0, 1.0);
    let sn = m.spectral_norm();
    let top = m.singular_values()[0];
    ensure!(rel_close(sn, top, 1e-7), "spectral {sn} vs σ₁ {top}");
    Ok(())
}

fn inverse_round_trip(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let d = rng.random_range(1..=6);
    let m = uniform_mat(rng, d, d, -1.0, 1.0);
    let sv = m.singular_values();
    if sv[d - 1] == 0.0 || sv[0] / sv[d - 1] > 1e6 {
        return Ok(());
    }
    let inv = ok(m.inverse())?;
    let err = ok(ok(m.matmul(&inv))?.max_abs_diff(&Mat::identity(d)))?;
    ensure!(err <= 1e-9, "‖m·m⁻¹ − I‖∞ = {err}");
    Ok(())
}

fn stochastic_nonperm_det_below_one(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let d = rng.random_range(2..=6);
    let t = col_stochastic(rng, d, d);
    if t.matches(StructuralPredicate::with_default_tol(
        PredicateKind::Permutation,
    )) {
        return Ok(());
    }
    let det = ok(t.det())?;
    ensure!(
        det.abs() < 1.0,
        "|det| = {} for a non-permutation stochastic matrix",
        det.abs()
    );
    Ok(())
}

// ---------------------------------------------------------------- dataset

fn strict_order_on(items: &[Labels], truth: &Labels, spec: &OrderingSpec) -> Result<(), String> {
    let rel = |a: &Labels, b: &Labels| ok(ordering_holds(truth, a, b, spec)).map(|v| v.holds);
    for a in items {
        ensure!(!rel(a, a)?, "{spec:?} is reflexive");
        for b in items {
            if rel(a, b)? {
                ensure!(!rel(b, a)?, "{spec:?} is not asymmetric");
                for c in items {
                    if rel(b, c)? {
                        ensure!(rel(a, c)?, "{spec:?} is not transitive");
                    }
                }
            }
        }
    }
    Ok(())
}

fn random_dist_table(rng: &mut ChaCha8Rng, d: usize) -> DistTable {
    let mut t = Mat::zeros(d, d);
    for i in 0..d {
        for j in (i + 1)..d {
            let v = rng.random_range(0.1..3.0);
            t[(i, j)] = v;
            t[(j, i)] = v;
        }
    }
    DistTable::new(t).unwrap()
}

fn ordering_strict_partial_order(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let d = rng.random_range(2..=4);
    let n = rng.random_range(8..=30);
    let truth = random_labels(rng, n, d);
    let mut items = vec![truth.clone()];
    for _ in 0..3 {
        let p = rng.random_range(0.0..0.5);
        items.push(flip(rng, &truth, p));
    }
    let alpha = rng.random_range(0.3..=1.0);
    strict_order_on(&items, &truth, &OrderingSpec::Exact)?;
    strict_order_on(&items, &truth, &ok(OrderingSpec::hamming(alpha))?)?;
    strict_order_on(
        &items,
        &truth,
        &ok(OrderingSpec::dist(random_dist_table(rng, d), alpha))?,
    )?;
    strict_order_on(&items, &truth, &OrderingSpec::Blackwell)?;

    // Blackwell on a garbling chain a → b → c inside the regular class
    let qa = reg_joint(rng, d);
    let qb = garble(&qa, &garbling(rng, d));
    let qc = garble(&qb, &garbling(rng, d));
    let reg = |q: &Mat| class_member_joint(q, MatrixClass::Reg);
    if reg(&qb) && reg(&qc) {
        ensure!(blackwell_joint(&qa, &qb).holds, "a over b");
        ensure!(blackwell_joint(&qb, &qc).holds, "b over c");
        ensure!(blackwell_joint(&qa, &qc).holds, "transitivity a over c");
        ensure!(!blackwell_joint(&qb, &qa).holds, "asymmetry b over a");
        ensure!(!blackwell_joint(&qa, &qa).holds, "irreflexivity");
    }
    Ok(())
}

fn ordering_refinement(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let d = rng.random_range(2..=4);
    let n = rng.random_range(10..=40);
    let truth = random_labels(rng, n, d);
    let pr = rng.random_range(0.0..0.4);
    let report = flip(rng, &truth, pr);
    let qr = ok(misreport_matrix(&truth, &report))?.q();
    let both_reg = class_member_joint(&qr, MatrixClass::Reg)
        && class_member_joint(&ok(misreport_matrix(&truth, &truth))?.q(), MatrixClass::Reg);
    if both_reg
        && ok(ordering_holds(
            &truth,
            &truth,
            &report,
            &OrderingSpec::Exact,
        ))?
        .holds
    {
        ensure!(
            ok(ordering_holds(
                &truth,
                &truth,
                &report,
                &OrderingSpec::Blackwell
            ))?
            .holds,
            "exact without blackwell"
        );
    }

    // blackwell ⇒ hamming(1) on regular joints
    let qa = reg_joint(rng, d);
    let qb = garble(&qa, &garbling(rng, d));
    if class_member_joint(&qb, MatrixClass::Reg) && blackwell_joint(&qa, &qb).holds {
        ensure!(
            qa.trace() > qb.trace(),
            "blackwell pair with Tr {} <= {}",
            qa.trace(),
            qb.trace()
        );
    }

    // a smaller factor is the stricter relation
    let (pa, pb) = (rng.random_range(0.0..0.5), rng.random_range(0.0..0.5));
    let a = flip(rng, &truth, pa);
    let b = flip(rng, &truth, pb);
    let hi = rng.random_range(0.2..=1.0);
    let lo = rng.random_range(0.1..=hi);
    let table = random_dist_table(rng, d);
    for (strict, loose) in [
        (
            ok(OrderingSpec::hamming(lo))?,
            ok(OrderingSpec::hamming(hi))?,
        ),
        (
            ok(OrderingSpec::dist(table.clone(), lo))?,
            ok(OrderingSpec::dist(table, hi))?,
        ),
    ] {
        if ok(ordering_holds(&truth, &a, &b, &strict))?.holds {
            ensure!(
                ok(ordering_holds(&truth, &a, &b, &loose))?.holds,
                "{lo}-order without {hi}-order"
            );
        }
    }
    Ok(())
}

fn random_counts(rng: &mut ChaCha8Rng, d: usize) -> MisreportCounts {
    let rows: Vec<Vec<u64>> = (0..d)
        .map(|_| {
            (0..d)
                .map(|_| {
                    if rng.random_bool(0.2) {
                        0
                    } else {
                        rng.random_range(0..20)
                    }
                })
                .collect()
        })
        .collect();
    let mut rows = rows;
    if rows.iter().flatten().all(|&c| c == 0) {
        rows[0][0] = 1;
    }
    MisreportCounts::from_counts(&rows).unwrap()
}

fn decompose_reconstruction(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let d = rng.random_range(1..=6);
    let q = random_counts(rng, d).q();
    let f = decompose_joint(&q);
    for i in 0..d {
        for j in 0..d {
            let a = f.q_x[i] * f.q_xhat_given_x[(j, i)];
            let b = f.q_xhat[j] * f.q_x_given_xhat[(i, j)];
            ensure!(
                (a - q[(i, j)]).abs() <= 1e-12,
                "q_x·q(x̂|x) mismatch at ({i},{j})"
            );
            ensure!(
                (b - q[(i, j)]).abs() <= 1e-12,
                "q_x̂·q(x|x̂) mismatch at ({i},{j})"
            );
        }
    }
    ensure!(
        (f.q_x.iter().sum::<f64>() - 1.0).abs() <= 1e-12,
        "q_x does not sum to 1"
    );
    ensure!(
        (f.q_xhat.iter().sum::<f64>() - 1.0).abs() <= 1e-12,
        "q_x̂ does not sum to 1"
    );
    for s in f
        .q_xhat_given_x
        .col_sums()
        .into_iter()
        .chain(f.q_x_given_xhat.col_sums())
    {
        ensure!((s - 1.0).abs() <= 1e-12, "conditional column sums to {s}");
    }
    Ok(())
}

fn hamming_via_trace(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let d = rng.random_range(1..=6);
    let n = rng.random_range(1..=60);
    let truth = random_labels(rng, n, d);
    let pr = rng.random_range(0.0..1.0);
    let report = flip(rng, &truth, pr);
    let counts = ok(misreport_matrix(&truth, &report))?;
    let h = ok(hamming_distance(&truth, &report))? as u64;
    let diag: u64 = (0..d).map(|i| counts.count(i, i)).sum();
    ensure!(
        h == counts.mismatches() && h == n as u64 - diag,
        "hamming {h} vs N − diag {}",
        n as u64 - diag
    );
    ensure!(
        (h as f64 / n as f64 - (1.0 - counts.trace())).abs() <= 1e-12,
        "1 − Tr(Q) mismatch"
    );
    Ok(())
}

fn bounded_ratio(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let d = rng.random_range(2..=6);
    let l: f64 = rng.random_range(1.0..4.0);
    let w: Vec<f64> = (0..d).map(|_| rng.random_range(1.0..=l)).collect();
    let s: f64 = w.iter().sum();
    let q_x: Vec<f64> = w.iter().map(|v| v / s).collect();
    let q = Mat::diag(&q_x);
    ensure!(
        class_member_joint(&q, MatrixClass::Balanced { l }),
        "constructed q_x is not {l}-balanced"
    );
    let (df, lf) = (d as f64, l);
    let lo = 1.0 / (lf * df - lf + 1.0);
    let hi = lf / (df + lf - 1.0);
    for &a in &q_x {
        ensure!(
            a >= lo - 1e-12 && a <= hi + 1e-12,
            "q_x(i)={a} outside [{lo}, {hi}]"
        );
    }
    Ok(())
}

/// Dominant joint with marginal `q_x` and total off-diagonal mass `delta`,
/// spread randomly over rows and columns.
pub fn joint_with_offdiag(rng: &mut ChaCha8Rng, q_x: &[f64], delta: f64) -> Mat {
    let d = q_x.len();
    let shares = simplex(rng, d, 0.05);
    let mut q = Mat::diag(q_x);
    if d == 1 {
        return q;
    }
    for i in 0..d {
        let di = delta * shares[i];
        let split = simplex(rng, d - 1, 0.05);
        let mut s = split.iter();
        for j in 0..d {
            if j != i {
                q[(i, j)] = di * s.next().unwrap();
            }
        }
        q[(i, i)] = q_x[i] - di;
    }
    q
}

fn det_hamming_bracket(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let d = rng.random_range(2..=6);
    let q_x = simplex(rng, d, 0.3);
    let min_q = q_x.iter().copied().fold(f64::INFINITY, f64::min);
    let max_q = q_x.iter().copied().fold(0.0, f64::max);
    let delta = rng.random_range(0.0..min_q / 4.0);
    let q = joint_with_offdiag(rng, &q_x, delta);
    ensure!(
        class_member_joint(&q, MatrixClass::Dom),
        "constructed Q is not dominant"
    );
    let delta = 1.0 - q.trace();
    let ratio = ok(q.det())? / q_x.iter().product::<f64>();
    let e = 8.0 * d as f64 * delta * delta / (min_q * min_q);
    let lower = (1.0 - e) * (1.0 - delta / min_q);
    let upper = (1.0 + e) * (1.0 - delta / (2.0 * max_q));
    ensure!(
        ratio >= lower - 1e-12 && ratio <= upper + 1e-12,
        "ratio {ratio} outside [{lower}, {upper}]"
    );
    Ok(())
}

// ---------------------------------------------------------------- kernels

/// A kernel together with its outcome matrix over `k` outcomes.
fn random_kernel(
    rng: &mut ChaCha8Rng,
    k: usize,
    p: &Mat,
    which: usize,
) -> (KernelSpec, Option<Mat>) {
    let d = p.cols();
    match which {
        0 => (KernelSpec::Delta, None),
        1 => {
            // injective: k linearly independent feature vectors of width ≥ k
            let width = k + rng.random_range(0..3);
            let rows: Vec<Vec<f64>> = (0..k)
                .map(|i| {
                    (0..width)
                        .map(|j| {
                            if i == j {
                                1.0
                            } else {
                                rng.random_range(-0.3..0.3)
                            }
                        })
                        .collect()
                })
                .collect();
            let outcomes = ObservationSet::from_rows(&rows).unwrap();
            (
                KernelSpec::Linear,
                Some(kernel_matrix(&KernelSpec::Linear, &outcomes).unwrap()),
            )
        }
        2 => {
            let width = rng.random_range(1..=4);
            let rows: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..width).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let spec = KernelSpec::rbf(rng.random_range(0.5..3.0)).unwrap();
            let outcomes = ObservationSet::from_rows(&rows).unwrap();
            (spec, Some(kernel_matrix(&spec, &outcomes).unwrap()))
        }
        _ => {
            // pseudo-posterior outcomes from a full-support prior
            let prior = simplex(rng, d, 0.2);
            let rows: Vec<Vec<f64>> = (0..k)
                .map(|y| {
                    let w: Vec<f64> = (0..d).map(|x| p[(y, x)] * prior[x]).collect();
                    let s: f64 = w.iter().sum();
                    w.into_iter().map(|v| v / s).collect()
                })
                .collect();
            let outcomes = ObservationSet::from_rows(&rows).unwrap();
            let spec = KernelSpec::PseudoPosterior;
            (spec, Some(kernel_matrix(&spec, &outcomes).unwrap()))
        }
    }
}

fn label_gram_symmetric_psd(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let d = rng.random_range(1..=5);
    let k = rng.random_range(1..=6);
    let p = ok(ExperimentMatrix::new(col_stochastic(rng, k, d)))?;
    for which in 0..4 {
        let (spec, kmat) = random_kernel(rng, k, p.matrix(), which);
        let g = ok(label_gram(&p, &spec, kmat.as_ref()))?.into_matrix();
        ensure!(g.is_symmetric(0.0), "{spec} gram not symmetric");
        let scale = g.max_abs().max(1e-300);
        for ev in ok(g.symmetric_eigenvalues())? {
            ensure!(ev >= -1e-9 * scale, "{spec} gram eigenvalue {ev}");
        }
    }
    Ok(())
}

fn label_gram_positive_definite_on_indep(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let d = rng.random_range(1..=4);
    let k = rng.random_range(d..=d + 2);
    let p = p_indep(rng, k, d);
    // the pseudo-posterior gram is quartic in P; near the 1e-12 membership
    // edge its smallest eigenvalue is below double rounding of its entries
    let p_wide = p_indep_margin(rng, k, d, 1e-6);
    for which in 0..4 {
        let p = if which == 3 { &p_wide } else { &p };
        let (spec, kmat) = random_kernel(rng, k, p.matrix(), which);
        let det = ok(ok(label_gram(p, &spec, kmat.as_ref()))?.matrix().det())?;
        ensure!(
            det > 0.0,
            "{spec} gram det {det} on an independent experiment"
        );
    }
    Ok(())
}

fn delta_gram_match_probabilities(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let d = rng.random_range(1..=5);
    let k = rng.random_range(1..=6);
    let p = ok(ExperimentMatrix::new(col_stochastic(rng, k, d)))?;
    let g = ok(label_gram(&p, &KernelSpec::Delta, None))?.into_matrix();
    let pm = p.matrix();
    for x in 0..d {
        for x2 in 0..d {
            let want: f64 = (0..k).map(|y| pm[(y, x)] * pm[(y, x2)]).sum();
            ensure!(
                (g[(x, x2)] - want).abs() <= 1e-12,
                "G({x},{x2})={} want {want}",
                g[(x, x2)]
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- scoring

/// `gram_score(P,Q)` against `det(PᵀP)·det(Q)²` for one random instance.
pub fn multiplicativity(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let d = rng.random_range(2..=6);
    let k = rng.random_range(d..=d + 2);
    let p = p_indep(rng, k, d);
    let q = joint(rng, d);
    let score = ok(gram_score(&p, &q, &KernelSpec::Delta, None))?;
    let pm = p.matrix();
    let want = ok(ok(pm.t_matmul(pm))?.det())? * ok(q.det())?.powi(2);
    ensure!(
        rel_close(score, want, 1e-9),
        "score {score} vs det(PᵀP)det(Q)² {want}"
    );
    Ok(())
}

/// Returns `None` for ties, else whether the gram order matches the
/// `det(QᵀQ)` order.
pub fn agnostic_instance(rng: &mut ChaCha8Rng) -> Result<Option<bool>, String> {
    let d = rng.random_range(2..=6);
    let k = rng.random_range(d..=d + 2);
    let p = p_indep(rng, k, d);
    let (q1, q2) = (joint(rng, d), joint(rng, d));
    let s1 = ok(gram_score(&p, &q1, &KernelSpec::Delta, None))?;
    let s2 = ok(gram_score(&p, &q2, &KernelSpec::Delta, None))?;
    let r1 = ok(ok(q1.t_matmul(&q1))?.det())?;
    let r2 = ok(ok(q2.t_matmul(&q2))?.det())?;
    if rel_close(r1, r2, 1e-9) {
        return Ok(None);
    }
    Ok(Some((s1 > s2) == (r1 > r2) && s1 != s2))
}

fn experiment_agnostic(rng: &mut ChaCha8Rng) -> Result<(), String> {
    match agnostic_instance(rng)? {
        Some(false) => Err("gram order differs from det(QᵀQ) order".into()),
        _ => Ok(()),
    }
}

/// Truthful joint versus a non-permutation joint with the same marginal.
pub fn exact_instance(rng: &mut ChaCha8Rng, d: usize) -> Result<bool, String> {
    let k = rng.random_range(d..=d + 2);
    let p = p_indep(rng, k, d);
    let q_x = simplex(rng, d, 0.2);
    let truthful = Mat::diag(&q_x);
    let other = diagonal_heavy(rng, &q_x, (0.0, 1.0));
    ensure!(
        class_member_joint(&other, MatrixClass::NonPerm),
        "constructed joint is a permutation"
    );
    let s_t = ok(gram_score(&p, &truthful, &KernelSpec::Delta, None))?;
    let s_o = ok(gram_score(&p, &other, &KernelSpec::Delta, None))?;
    Ok(s_t > s_o)
}

fn exact_ordering_preserved(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let d = rng.random_range(2..=6);
    ensure!(exact_instance(rng, d)?, "truthful report not scored higher");
    Ok(())
}

/// Regular joint versus a regular garbling of it; `None` when the garbling
/// leaves the regular class.
pub fn blackwell_instance(rng: &mut ChaCha8Rng, d: usize) -> Result<Option<bool>, String> {
    let k = rng.random_range(d..=d + 2);
    let p = p_indep(rng, k, d);
    let q = reg_joint(rng, d);
    let g = garble(&q, &garbling(rng, d));
    if !class_member_joint(&g, MatrixClass::Reg) {
        return Ok(None);
    }
    let s = ok(gram_score(&p, &q, &KernelSpec::Delta, None))?;
    let sg = ok(gram_score(&p, &g, &KernelSpec::Delta, None))?;
    Ok(Some(s > sg))
}

fn blackwell_monotone(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let d = rng.random_range(2..=6);
    match blackwell_instance(rng, d)? {
        Some(false) => Err("garbled report not scored lower".into()),
        _ => Ok(()),
    }
}

/// Two dominant joints in the `(L, 1/(64L²d²))` class whose Hamming
/// fractions differ by a factor above `4L`; returns whether the better one
/// has the larger gram score and larger `det(Q)²`.
pub fn hamming_instance(rng: &mut ChaCha8Rng, l: f64, d: usize) -> Result<bool, String> {
    let w: Vec<f64> = (0..d).map(|_| rng.random_range(1.0..=l)).collect();
    let s: f64 = w.iter().sum();
    let q_x: Vec<f64> = w.iter().map(|v| v / s).collect();
    let cap = 1.0 / (64.0 * l * l * (d * d) as f64);
    let delta_worse = rng.random_range(cap * 0.01..cap);
    let delta_better = rng.random_range(0.0..delta_worse / (4.0 * l));
    let better = joint_with_offdiag(rng, &q_x, delta_better);
    let worse = joint_with_offdiag(rng, &q_x, delta_worse);
    let class = MatrixClass::BalancedDelta { l, delta: cap };
    ensure!(
        class_member_joint(&better, class) && class_member_joint(&worse, class),
        "constructed pair outside the class"
    );
    let k = rng.random_range(d..=d + 2);
    let p = p_indep(rng, k, d);
    let sb = ok(gram_score(&p, &better, &KernelSpec::Delta, None))?;
    let sw = ok(gram_score(&p, &worse, &KernelSpec::Delta, None))?;
    let db = ok(better.det())?.powi(2);
    let dw = ok(worse.det())?.powi(2);
    Ok(sb > sw && db > dw)
}

fn approx_hamming_preserved(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let l = rng.random_range(1.0..3.0);
    let d = rng.random_range(2..=4);
    ensure!(
        hamming_instance(rng, l, d)?,
        "Hamming-better report not scored higher (L={l}, d={d})"
    );
    Ok(())
}

fn delta_equals_linear_one_hot(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let d = rng.random_range(1..=4);
    let k = rng.random_range(1..=5);
    let n = rng.random_range(d..=80);
    let report = random_labels(rng, n, d);
    let p = col_stochastic(rng, k, d);
    let obs = sample_categorical(rng, &report, &p);
    let a = ok(plugin_score(&report, &obs, &KernelSpec::Delta))?;
    let b = ok(plugin_score(
        &report,
        &ok(obs.one_hot())?,
        &KernelSpec::Linear,
    ))?;
    ensure!(
        (a.value - b.value).abs() <= 1e-12,
        "delta {} vs linear one-hot {}",
        a.value,
        b.value
    );
    ensure!(a.degenerate == b.degenerate, "degenerate flags differ");
    Ok(())
}

fn permutations(d: usize) -> Vec<Vec<usize>> {
    if d == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(d - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, d - 1);
            out.push(q);
        }
    }
    out
}

fn sign(p: &[usize]) -> f64 {
    let mut s = 1.0;
    for i in 0..p.len() {
        for j in (i + 1)..p.len() {
            if p[i] > p[j] {
                s = -s;
            }
        }
    }
    s
}

/// Exact expectation of the stratified estimator for the report `x̂` with
/// delta kernel: every observation vector `y` weighted by its probability
/// under `P` given the truth, and, per `y`, every admissible choice of the
/// Col records, the Row records and σ weighted uniformly.
pub fn stratified_enumeration(truth: &Labels, report: &Labels, p: &Mat) -> f64 {
    let n = truth.len();
    let d = report.d();
    let k = p.rows();
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); d];
    for (i, &x) in report.values().iter().enumerate() {
        by_label[x - 1].push(i);
    }
    if by_label.iter().any(|v| v.len() < 2) {
        return 0.0;
    }
    let q: Vec<f64> = by_label.iter().map(|v| v.len() as f64 / n as f64).collect();
    let perms = permutations(d);
    let fact: f64 = (1..=d).map(|i| i as f64).product();

    // all (Col, Row) choices: one ordered pair of distinct records per label
    let mut choices: Vec<Vec<(usize, usize)>> = vec![vec![]];
    for idx in &by_label {
        let mut next = Vec::new();
        for c in &choices {
            for &a in idx {
                for &b in idx {
                    if a != b {
                        let mut e = c.clone();
                        e.push((a, b));
                        next.push(e);
                    }
                }
            }
        }
        choices = next;
    }

    let mut total = 0.0;
    let mut y = vec![0usize; n];
    loop {
        let prob: f64 = (0..n).map(|i| p[(y[i], truth.values()[i] - 1)]).product();
        if prob > 0.0 {
            let mut inner = 0.0;
            for c in &choices {
                for s in &perms {
                    let mut v = fact * sign(s);
                    for i in 0..d {
                        let j = s[i];
                        let (_, row_i) = c[i];
                        let (col_j, _) = c[j];
                        v *= if y[row_i] == y[col_j] { 1.0 } else { 0.0 } * q[i] * q[j];
                    }
                    inner += v;
                }
            }
            total += prob * inner / (choices.len() * perms.len()) as f64;
        }
        // next y in k^n
        let mut pos = 0;
        loop {
            if pos == n {
                return total;
            }
            y[pos] += 1;
            if y[pos] < k {
                break;
            }
            y[pos] = 0;
            pos += 1;
        }
    }
}

fn stratified_unbiased_at_truth(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let d = rng.random_range(1..=2);
    let per = rng.random_range(2..=8 / d);
    let mut values: Vec<usize> = (1..=d).flat_map(|x| std::iter::repeat_n(x, per)).collect();
    values.shuffle(rng);
    let truth = ok(Labels::new(values, d))?;
    let k = if truth.len() > 6 {
        2
    } else {
        rng.random_range(2..=3)
    };
    let p = col_stochastic(rng, k, d);
    let oracle = stratified_enumeration(&truth, &truth, &p);
    let q = Mat::diag(&truth.frequencies());
    let want = ok(gram_score(
        &ok(ExperimentMatrix::new(p))?,
        &q,
        &KernelSpec::Delta,
        None,
    ))?;
    ensure!(
        (oracle - want).abs() <= 1e-10,
        "enumerated expectation {oracle} vs det(QᵀGQ) {want}"
    );
    Ok(())
}

// ---------------------------------------------------------------- simulate

fn zero_corruption_identity(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let d = rng.random_range(2..=6);
    let n = rng.random_range(1..=50);
    let truth = random_labels(rng, n, d);
    let p = ok(ExperimentMatrix::new(col_stochastic(rng, d, d)))?;
    for policy in PolicySpec::all_default() {
        let out = ok(corrupt(&truth, 0.0, &policy, Some(&p), rng.random()))?;
        ensure!(out == truth, "{policy} changed labels at p=0");
    }
    Ok(())
}

fn mixed_policy_rows(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let d = rng.random_range(2..=6);
    let params = MixedParams::default();
    let (mut diag, mut off) = (0.0, 0.0);
    for _ in 0..100 {
        let pi = ok(params.sample_policy(d, rng))?;
        for i in 0..d {
            let s: f64 = pi.row(i).iter().sum();
            ensure!((s - 1.0).abs() <= 1e-12, "row {i} sums to {s}");
            for j in 0..d {
                ensure!(pi[(i, j)] > 0.0, "zero entry in π");
                if i == j {
                    diag += pi[(i, j)];
                } else {
                    off += pi[(i, j)];
                }
            }
        }
    }
    let mean_diag = diag / (100 * d) as f64;
    let mean_off = off / (100 * d * (d - 1)) as f64;
    ensure!(
        mean_diag > mean_off,
        "mean diagonal {mean_diag} <= mean off-diagonal {mean_off}"
    );
    Ok(())
}

// ---------------------------------------------------------------- ingest

fn label_name(rng: &mut ChaCha8Rng) -> String {
    const CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-.";
    let len = rng.random_range(1..=6);
    (0..len)
        .map(|_| CHARS[rng.random_range(0..CHARS.len())] as char)
        .collect()
}

fn round_trip(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let n = rng.random_range(1..=40);
    let d = rng.random_range(1..=5);
    let mut pool: Vec<String> = Vec::new();
    while pool.len() < d {
        let s = label_name(rng);
        if !pool.contains(&s) && s != "report" && s != "truth" {
            pool.push(s);
        }
    }
    let with_truth = rng.random_bool(0.5);
    let mut map = LabelMap::new();
    let mut truth = Vec::new();
    let mut report = Vec::new();
    for _ in 0..n {
        if with_truth {
            truth.push(map.id(&pool[rng.random_range(0..d)]));
        }
        report.push(map.id(&pool[rng.random_range(0..d)]));
    }
    let dd = map.len();
    let report = ok(Labels::new(report, dd))?;
    let truth = if with_truth {
        Some(ok(Labels::new(truth, dd))?)
    } else {
        None
    };

    let (obs, kind) = if rng.random_bool(0.5) {
        let k = rng.random_range(1..=4);
        let mut names = LabelMap::new();
        let outcome_pool: Vec<String> = (0..k).map(|i| format!("o{i}")).collect();
        let ids = (0..n)
            .map(|_| names.id(&outcome_pool[rng.random_range(0..k)]))
            .collect();
        (
            LoadedObservations {
                obs: ok(ObservationSet::categorical(ids, names.len()))?,
                outcome_names: names.names().to_vec(),
                columns: vec!["y".into()],
            },
            ObsKind::Categorical,
        )
    } else {
        let width = rng.random_range(1..=4);
        let data: Vec<f64> = (0..n * width)
            .map(|_| {
                let m: f64 = rng.random_range(-1.0..1.0);
                m * 10f64.powi(rng.random_range(-12..12))
            })
            .collect();
        (
            LoadedObservations {
                obs: ok(ObservationSet::embedding(width, data))?,
                outcome_names: vec![],
                columns: (0..width).map(|i| format!("e{i}")).collect(),
            },
            ObsKind::Embedding,
        )
    };
    let dir = ok(tempfile::tempdir())?;
    let path = dir.path().join("data.csv");
    ok(write_dataset(
        &path,
        &report,
        truth.as_ref(),
        Some(&obs),
        &map,
    ))?;
    let mut reread = LabelMap::new();
    let ds = ok(load_dataset(&path, kind, &mut reread))?;
    ensure!(reread.names() == map.names(), "label names changed");
    ensure!(ds.report == report, "report changed");
    ensure!(ds.truth == truth, "truth changed");
    ensure!(
        ds.observations.as_ref() == Some(&obs),
        "observations changed"
    );
    Ok(())
}

fn distinct_series(rng: &mut ChaCha8Rng, b: usize) -> Vec<f64> {
    let n = rng.random_range(b..=b + 60);
    let mut v: Vec<f64> = (0..n)
        .map(|i| i as f64 * rng.random_range(0.5..2.0) + rng.random_range(0.0..0.4))
        .collect();
    // strictly increasing before the shuffle, so all distinct
    for i in 1..n {
        if v[i] <= v[i - 1] {
            v[i] = v[i - 1] + 0.1;
        }
    }
    v.shuffle(rng);
    v
}

fn bucket_alphabet(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let b = rng.random_range(2..=8);
    let s = distinct_series(rng, b);
    let labels = ok(quantile_bucketize(&s, ok(BucketizerSpec::new(b))?))?;
    let mut seen: Vec<usize> = labels.values().to_vec();
    seen.sort();
    seen.dedup();
    ensure!(
        seen == (1..=b).collect::<Vec<_>>(),
        "alphabet {seen:?} for B={b}, N={}",
        s.len()
    );
    Ok(())
}

fn bucket_occupancy(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let b = rng.random_range(2..=8);
    let s = distinct_series(rng, b);
    let labels = ok(quantile_bucketize(&s, ok(BucketizerSpec::new(b))?))?;
    let occ = labels.occurrences();
    let (lo, hi) = (occ.iter().min().unwrap(), occ.iter().max().unwrap());
    ensure!(hi - lo <= 1, "occupancies {occ:?} for N={}", s.len());
    Ok(())
}

// ---------------------------------------------------------------- baselines and cli

fn paired_comparison(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let d = rng.random_range(2..=4);
    let n = rng.random_range(30..=150);
    let mut cfg = TrialConfig::categorical(d, n, PolicySpec::Uniform, 2, rng.random());
    cfg.p_levels = vec![0.0, rng.random_range(0.1..0.5)];
    let policy = PolicySpec::all_default()[rng.random_range(0..6)];
    cfg.policy = policy;
    let res = ok(gramdet::baselines::compare_scores(
        &cfg,
        &[policy],
        &["chi2-mi".parse().unwrap()],
    ))?;
    let trials = ok(run_trials(&cfg))?;
    ensure!(
        res.means("gram", &policy) == trials.mean_scores(),
        "gram column differs from run_trials"
    );
    Ok(())
}

fn cli_score_wrapper(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let d = rng.random_range(1..=4);
    let n = rng.random_range(d..=60);
    let report = random_labels(rng, n, d);
    let p = col_stochastic(rng, 3, d);
    let obs = sample_categorical(rng, &report, &p);
    let mut map = LabelMap::new();
    for i in 1..=d {
        map.id(&format!("L{i}"));
    }
    let loaded = LoadedObservations {
        obs: obs.clone(),
        outcome_names: (1..=3).map(|i| format!("y{i}")).collect(),
        columns: vec!["y".into()],
    };
    let dir = ok(tempfile::tempdir())?;
    let input = dir.path().join("in.csv");
    ok(write_dataset(&input, &report, None, Some(&loaded), &map))?;
    let args = ScoreArgs {
        input: input.clone(),
        flags: ScoringFlags::default(),
        output: Some(dir.path().join("out.json")),
    };
    let (outcome, _) = ok(cmd_score(&args, &RunConfig::default()))?;
    let mut reread = LabelMap::new();
    let ds = ok(load_dataset(&input, ObsKind::Auto, &mut reread))?;
    let lib = ok(plugin_score(
        &ds.report,
        &ds.observations.unwrap().obs,
        &KernelSpec::Delta,
    ))?;
    ensure!(
        outcome.report == lib,
        "cli {:?} vs library {:?}",
        outcome.report,
        lib
    );
    Ok(())
}

/// Every randomized invariant with its case budget; budgets sum to 10⁴.
pub fn properties() -> Vec<Property> {
    macro_rules! p {
        ($m:literal, $f:ident, $c:expr) => {
            Property {
                module: $m,
                name: stringify!($f),
                cases: $c,
                check: $f,
            }
        };
    }
    vec![
        p!("matcore", det_product, 500),
        p!("matcore", det_gram_singular_values, 500),
        p!("matcore", spectral_norm_top_singular, 450),
        p!("matcore", inverse_round_trip, 500),
        p!("matcore", stochastic_nonperm_det_below_one, 400),
        p!("dataset", ordering_strict_partial_order, 400),
        p!("dataset", ordering_refinement, 400),
        p!("dataset", decompose_reconstruction, 400),
        p!("dataset", hamming_via_trace, 400),
        p!("dataset", bounded_ratio, 400),
        p!("dataset", det_hamming_bracket, 400),
        p!("kernels", label_gram_symmetric_psd, 400),
        p!("kernels", label_gram_positive_definite_on_indep, 400),
        p!("kernels", delta_gram_match_probabilities, 400),
        p!("scoring", multiplicativity, 500),
        p!("scoring", experiment_agnostic, 500),
        p!("scoring", exact_ordering_preserved, 400),
        p!("scoring", blackwell_monotone, 400),
        p!("scoring", approx_hamming_preserved, 400),
        p!("scoring", delta_equals_linear_one_hot, 300),
        p!("scoring", stratified_unbiased_at_truth, 50),
        p!("simulate", zero_corruption_identity, 300),
        p!("simulate", mixed_policy_rows, 100),
        p!("ingest", round_trip, 200),
        p!("ingest", bucket_alphabet, 400),
        p!("ingest", bucket_occupancy, 400),
        p!("baselines", paired_comparison, 50),
        p!("cli", cli_score_wrapper, 50),
    ]
}
