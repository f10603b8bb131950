//! End-to-end runs checked against straight-line reimplementations that share
//! no code with the library beyond data generation.

#![allow(clippy::needless_range_loop)]

use noreplace::datagen::{self, GenSpec, Spectrum};
use noreplace::distributed::{self, DistConfig};
use noreplace::sgd::{self, Averaging, SgdConfig, StepRule};
use noreplace::svrg::{self, EpochOutput, SvrgConfig};
use noreplace::{par, Dataset, Objective, RidgeProblem, SamplerKind};
use proptest::prelude::*;

fn data(m: usize, d: usize, seed: u64) -> Dataset {
    let mut spec = GenSpec::new(m, d, seed);
    spec.spectrum = Spectrum::Geometric { ratio: 0.7 };
    datagen::generate(&spec).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient of `1/2 (<w,x> - y)^2 + lh/2 ||w||^2`.
fn point_grad(data: &Dataset, lh: f64, i: usize, w: &[f64]) -> Vec<f64> {
    let x = data.row(i);
    let r = dot(w, x) - data.label(i);
    x.iter().zip(w).map(|(xk, wk)| r * xk + lh * wk).collect()
}

/// Solves `(Xbar + lh I) w = (1/m) sum y_i x_i` by Gaussian elimination with
/// partial pivoting.
fn normal_equations(data: &Dataset, lh: f64) -> Vec<f64> {
    let (m, d) = (data.m(), data.d());
    let mut a = vec![vec![0.0; d + 1]; d];
    for i in 0..m {
        let x = data.row(i);
        for r in 0..d {
            for c in 0..d {
                a[r][c] += x[r] * x[c] / m as f64;
            }
            a[r][d] += data.label(i) * x[r] / m as f64;
        }
    }
    for (r, row) in a.iter_mut().enumerate() {
        row[r] += lh;
    }
    for col in 0..d {
        let piv = (col..d)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        for r in col + 1..d {
            let f = a[r][col] / a[col][col];
            for c in col..=d {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut w = vec![0.0; d];
    for r in (0..d).rev() {
        let s: f64 = (r + 1..d).map(|c| a[r][c] * w[c]).sum();
        w[r] = (a[r][d] - s) / a[r][r];
    }
    w
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-300);
    diff / scale
}

#[test]
fn ridge_minimizer_matches_normal_equations() {
    for (m, d, lh) in [(40, 3, 0.01), (500, 12, 0.001), (30, 30, 0.1)] {
        let ds = data(m, d, m as u64);
        let p = RidgeProblem::new(ds.clone(), lh).unwrap();
        let w = normal_equations(&ds, lh);
        assert!(rel_err(&p.optimum().unwrap().w, &w) < 1e-10, "m={m} d={d}");
    }
}

#[test]
fn sgd_matches_replayed_reference() {
    let ds = data(300, 6, 2);
    let lh = 0.02;
    let p = RidgeProblem::new(ds.clone(), lh).unwrap();
    let lambda = p.strong_convexity();
    let radius = 3.0;
    for sampler in [SamplerKind::SingleShuffle, SamplerKind::WithReplacement] {
        let cfg = SgdConfig::new(250, StepRule::StronglyConvex { lambda }, radius, sampler, 9);
        let tr = sgd::run_sgd(&p, &cfg).unwrap();

        let mut w = vec![0.0; 6];
        let mut sum = [0.0; 6];
        for (k, &i) in tr.indices.iter().enumerate() {
            for (s, v) in sum.iter_mut().zip(&w) {
                *s += v;
            }
            let eta = 2.0 / (lambda * (k + 1) as f64);
            let g = point_grad(&ds, lh, i, &w);
            for (v, gk) in w.iter_mut().zip(&g) {
                *v -= eta * gk;
            }
            let n = dot(&w, &w).sqrt();
            if n > radius {
                w.iter_mut().for_each(|v| *v *= radius / n);
            }
        }
        let avg: Vec<f64> = sum.iter().map(|s| s / 250.0).collect();
        assert!(rel_err(&tr.w_avg, &avg) < 1e-12, "{sampler:?}");
    }
}

#[test]
fn svrg_matches_replayed_reference() {
    let ds = data(200, 5, 3);
    let lh = 0.05;
    let p = RidgeProblem::new(ds.clone(), lh).unwrap();
    let (eta, big_t, epochs) = (0.1, 150, 4);
    let cfg = SvrgConfig::new(eta, big_t, epochs, SamplerKind::ReshufflePerEpoch, 4);
    let tr = svrg::run_svrg(&p, &cfg).unwrap();

    let mut snap = vec![0.0; 5];
    for e in 0..epochs {
        let mut mu = [0.0; 5];
        for i in 0..ds.m() {
            for (a, g) in mu.iter_mut().zip(point_grad(&ds, lh, i, &snap)) {
                *a += g / ds.m() as f64;
            }
        }
        let mut w = snap.clone();
        let mut sum = [0.0; 5];
        for &i in &tr.indices[e * big_t..(e + 1) * big_t] {
            for (s, v) in sum.iter_mut().zip(&w) {
                *s += v;
            }
            let gw = point_grad(&ds, lh, i, &w);
            let gs = point_grad(&ds, lh, i, &snap);
            for k in 0..5 {
                w[k] -= eta * (gw[k] - gs[k] + mu[k]);
            }
        }
        snap = sum.iter().map(|s| s / big_t as f64).collect();
    }
    assert!(rel_err(&tr.w, &snap) < 1e-10);
    // The epoch suboptimalities agree with a direct objective difference.
    let wstar = normal_equations(&ds, lh);
    let f = |w: &[f64]| {
        (0..ds.m())
            .map(|i| 0.5 * (dot(w, ds.row(i)) - ds.label(i)).powi(2) + 0.5 * lh * dot(w, w))
            .sum::<f64>()
            / ds.m() as f64
    };
    let direct = f(&snap) - f(&wstar);
    assert!((tr.final_subopt() - direct).abs() <= 1e-9 * direct.abs().max(1e-12) + 1e-14);
}

#[test]
fn svrg_random_iterate_output_is_reproducible() {
    let p = RidgeProblem::new(data(100, 4, 5), 0.05).unwrap();
    let mut cfg = SvrgConfig::new(0.1, 40, 3, SamplerKind::WithReplacement, 6);
    cfg.epoch_output = EpochOutput::RandomIterate;
    let a = svrg::run_svrg(&p, &cfg).unwrap();
    let b = svrg::run_svrg(&p, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.final_subopt() < a.initial_subopt);
}

#[test]
fn distributed_on_generated_file_matches_single_machine_when_k_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.txt");
    datagen::save(&data(240, 4, 7), &path).unwrap();
    let p = RidgeProblem::new(datagen::load(&path, false).unwrap(), 0.05).unwrap();
    let svrg_cfg = SvrgConfig::new(0.1, 30, 6, SamplerKind::SingleShuffle, 8);
    let cfg = DistConfig {
        machines: 1,
        svrg: svrg_cfg,
        threaded: false,
    };
    let (dt, log) = distributed::run_distributed_svrg(&p, &cfg).unwrap();
    let order = distributed::matched_permutation(&distributed::shards_for(p.m(), &cfg).unwrap()).unwrap();
    let st = svrg::run_svrg_with_order(&p, &cfg.svrg, &order).unwrap();
    assert_eq!(dt.subopt, st.subopt);
    assert_eq!(log.rounds, 12);
    assert_eq!(log.floats, 12 * 4);
}

#[test]
fn parallel_and_sequential_maps_agree_on_seed_sweeps() {
    let p = RidgeProblem::new(data(120, 4, 10), 0.05).unwrap();
    let mut cfg = SgdConfig::new(
        100,
        StepRule::InverseSqrt { eta0: 0.5 },
        5.0,
        SamplerKind::SingleShuffle,
        1,
    );
    cfg.averaging = Averaging::Suffix;
    let run = |s: usize| {
        let mut c = cfg.clone();
        c.stream = s as u64;
        sgd::run_sgd(&p, &c).unwrap().avg_subopt
    };
    assert_eq!(par::map_indexed(12, run), par::map_sequential(12, run));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn single_shuffle_sgd_visits_each_point_once(m in 2usize..60, seed in any::<u64>()) {
        let p = RidgeProblem::new(data(m, 3, seed % 1000), 0.1).unwrap();
        let cfg = SgdConfig::new(m, StepRule::Fixed { eta: 0.05 }, 10.0, SamplerKind::SingleShuffle, seed);
        let tr = sgd::run_sgd(&p, &cfg).unwrap();
        let mut idx = tr.indices.clone();
        idx.sort_unstable();
        prop_assert_eq!(idx, (0..m).collect::<Vec<_>>());
    }

    #[test]
    fn suboptimality_is_nonnegative(seed in any::<u64>(), scale in -3.0f64..3.0) {
        let p = RidgeProblem::new(data(50, 4, 11), 0.01).unwrap();
        let w: Vec<f64> = (0..4).map(|k| scale * ((seed >> (8 * k)) & 0xff) as f64 / 255.0).collect();
        prop_assert!(p.suboptimality(&w).unwrap() >= 0.0);
    }
}
