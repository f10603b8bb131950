//! Stochastic variance-reduced gradient with with- or without-replacement
//! inner sampling.
//!
//! Each epoch takes a full gradient `mu = grad F(snap)` at the snapshot, then
//! runs `T` unconstrained inner steps
//!
//! ```text
//! w <- w - eta (grad f_i(w) - grad f_i(snap) + mu)
//! ```
//!
//! starting from `w = snap`. The next snapshot is the mean of the `T` iterates
//! visited before each step (the starting point included, the point after the
//! last step excluded), or one of them chosen uniformly.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::{Objective, RidgeProblem};
use crate::rng::CounterRng;
use crate::sampling::{Permutation, Sampler, SamplerKind};

/// Floor on the denominator of [`epoch_decrease_ratio`].
pub const RATIO_FLOOR: f64 = 1e-14;

/// Fork tag of the generator that picks the random epoch output.
pub(crate) const PICK_TAG: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpochOutput {
    #[default]
    Average,
    RandomIterate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrgConfig {
    pub eta: f64,
    /// Inner steps per epoch (`T`).
    pub epoch_len: usize,
    /// Number of epochs (`S`).
    pub epochs: usize,
    #[serde(default)]
    pub epoch_output: EpochOutput,
    pub sampler: SamplerKind,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
    /// Abort when an iterate's suboptimality exceeds the problem's uniform
    /// safety bound (ridge with `lambda, eta < 1`).
    #[serde(default = "default_true")]
    pub check_safety_bound: bool,
}

fn default_true() -> bool {
    true
}

impl SvrgConfig {
    pub fn new(eta: f64, epoch_len: usize, epochs: usize, sampler: SamplerKind, seed: u64) -> Self {
        SvrgConfig {
            eta,
            epoch_len,
            epochs,
            epoch_output: EpochOutput::Average,
            sampler,
            seed,
            stream: 0,
            check_safety_bound: true,
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::invalid(format!("step size must be > 0, got {}", self.eta)));
        }
        if self.epoch_len == 0 || self.epochs == 0 {
            return Err(Error::invalid("epoch length and epoch count must be >= 1"));
        }
        if self.sampler == SamplerKind::SingleShuffle && self.epoch_len.saturating_mul(self.epochs) > m {
            return Err(Error::invalid(format!(
                "single-shuffle sampling needs S*T <= m, got {}*{} > {m}",
                self.epochs, self.epoch_len
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    /// `F(0) - F(w*)`.
    pub initial_subopt: f64,
    /// `F(snap_{s+1}) - F(w*)` after each epoch.
    pub subopt: Vec<f64>,
    /// Largest suboptimality among the inner iterates of each epoch (the
    /// snapshots only, for problems without a cheap exact suboptimality).
    pub max_inner_subopt: Vec<f64>,
    pub stochastic_grads: Vec<usize>,
    pub full_grads: Vec<usize>,
    /// Point-gradient evaluations in total: `m` per full gradient, two per
    /// inner step.
    pub point_grad_evals: usize,
    /// Inner-loop indices in draw order.
    pub indices: Vec<usize>,
    /// Final snapshot.
    pub w: Vec<f64>,
}

impl EpochTrace {
    fn new(initial_subopt: f64, epochs: usize, epoch_len: usize) -> Self {
        EpochTrace {
            initial_subopt,
            subopt: Vec::with_capacity(epochs),
            max_inner_subopt: Vec::with_capacity(epochs),
            stochastic_grads: Vec::with_capacity(epochs),
            full_grads: Vec::with_capacity(epochs),
            point_grad_evals: 0,
            indices: Vec::with_capacity(epochs * epoch_len),
            w: Vec::new(),
        }
    }

    pub fn final_subopt(&self) -> f64 {
        self.subopt.last().copied().unwrap_or(self.initial_subopt)
    }

    pub fn epochs(&self) -> usize {
        self.subopt.len()
    }
}

/// `2 S ln(5T) + ln(4/lambda)`: a probability-one bound on the log
/// suboptimality of every iterate during the first `S` epochs of ridge SVRG
/// started at zero, for `lambda, eta` in `(0, 1)`.
pub fn appendix_b_bound(epoch_len: usize, epochs: usize, lambda: f64) -> f64 {
    2.0 * epochs as f64 * (5.0 * epoch_len as f64).ln() + (4.0 / lambda).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendedParams {
    pub eta: f64,
    pub epoch_len: usize,
    pub epochs: usize,
    /// Sample size needed to run all epochs on fresh points.
    pub m_required: usize,
    pub warning: Option<String>,
}

/// `eta = 1/c`, `T = ceil(9/(eta lambda))`, `S = ceil(log_4(9/eps))`.
pub fn recommended_params(problem: &RidgeProblem, epsilon: f64, c: f64) -> Result<RecommendedParams> {
    recommended_params_for(problem.strong_convexity(), problem.data().m(), epsilon, c)
}

/// [`recommended_params`] from the strong-convexity constant and sample size.
pub fn recommended_params_for(lambda: f64, m: usize, epsilon: f64, c: f64) -> Result<RecommendedParams> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if !(c >= 1.0) || !c.is_finite() {
        return Err(Error::invalid(format!("c must be >= 1, got {c}")));
    }
    if !(lambda > 0.0) {
        return Err(Error::SingularHessian { lambda });
    }
    let eta = 1.0 / c;
    let epoch_len = robust_ceil(9.0 / (eta * lambda)).max(1.0) as usize;
    let target = 9.0 / epsilon;
    let mut epochs = 0usize;
    while 4f64.powi(epochs as i32) < target * (1.0 - 1e-12) {
        epochs += 1;
    }
    let m_required = 2 * epochs * epoch_len;
    let warning = (m < m_required).then(|| {
        let msg = format!(
            "m = {m} is below the recommended sample size m ≥ 2·S·T = {m_required} \
             (S = {epochs}, T = {epoch_len}); later epochs reuse data points"
        );
        warn!("{msg}");
        msg
    });
    Ok(RecommendedParams {
        eta,
        epoch_len,
        epochs,
        m_required,
        warning,
    })
}

/// Ceiling that ignores relative rounding noise below 1e-12.
fn robust_ceil(x: f64) -> f64 {
    (x * (1.0 - 1e-12)).ceil()
}

/// `subopt(s+1) / max(subopt(s), 1e-14)` over the sequence initial, epoch 1, ...
pub fn epoch_decrease_ratio(trace: &EpochTrace) -> Vec<f64> {
    let mut seq = Vec::with_capacity(trace.subopt.len() + 1);
    seq.push(trace.initial_subopt);
    seq.extend_from_slice(&trace.subopt);
    seq.windows(2).map(|w| w[1] / w[0].max(RATIO_FLOOR)).collect()
}

pub fn run_svrg<O: Objective + ?Sized>(problem: &O, config: &SvrgConfig) -> Result<EpochTrace> {
    let m = problem.m();
    config.validate(m)?;
    let rng = CounterRng::new(config.seed, config.stream);
    let mut sampler = Sampler::new(config.sampler, m, config.epoch_len, rng)?;
    run_from(problem, config, &vec![0.0; problem.d()], &mut || sampler.next_index())
}

/// Single-shuffle run along an explicit ordering.
pub fn run_svrg_with_order<O: Objective + ?Sized>(
    problem: &O,
    config: &SvrgConfig,
    order: &Permutation,
) -> Result<EpochTrace> {
    if order.len() != problem.m() {
        return Err(Error::DimensionMismatch {
            expected: problem.m(),
            got: order.len(),
        });
    }
    let mut cfg = config.clone();
    cfg.sampler = SamplerKind::SingleShuffle;
    cfg.validate(problem.m())?;
    let mut sampler = Sampler::from_permutation(order.clone());
    run_from(problem, &cfg, &vec![0.0; problem.d()], &mut || sampler.next_index())
}

/// [`run_svrg`] started from an arbitrary first snapshot.
pub fn run_svrg_from_point<O: Objective + ?Sized>(
    problem: &O,
    config: &SvrgConfig,
    start: &[f64],
) -> Result<EpochTrace> {
    problem.check_dim(start)?;
    let m = problem.m();
    config.validate(m)?;
    let rng = CounterRng::new(config.seed, config.stream);
    let mut sampler = Sampler::new(config.sampler, m, config.epoch_len, rng)?;
    run_from(problem, config, start, &mut || sampler.next_index())
}

fn run_from<O: Objective + ?Sized>(
    problem: &O,
    config: &SvrgConfig,
    start: &[f64],
    next: &mut dyn FnMut() -> Result<usize>,
) -> Result<EpochTrace> {
    let m = problem.m();
    let d = problem.d();
    let all: Vec<usize> = (0..m).collect();
    let mut state = EpochState::new(problem, config, start)?;
    let mut mu = vec![0.0; d];
    for epoch in 1..=config.epochs {
        problem.mean_gradient_over(&all, &state.snap, &mut mu);
        state.run_epoch(problem, config, epoch, &mu, next)?;
    }
    Ok(state.finish())
}

/// Epoch-by-epoch driver shared with the distributed simulator.
pub(crate) struct EpochState {
    pub(crate) snap: Vec<f64>,
    trace: EpochTrace,
    pick_rng: CounterRng,
    w: Vec<f64>,
    sum: Vec<f64>,
    dir: Vec<f64>,
    gsnap: Vec<f64>,
    picked: Vec<f64>,
}

impl EpochState {
    pub(crate) fn new<O: Objective + ?Sized>(problem: &O, config: &SvrgConfig, start: &[f64]) -> Result<Self> {
        let d = problem.d();
        let initial = problem.suboptimality(start)?;
        Ok(EpochState {
            snap: start.to_vec(),
            trace: EpochTrace::new(initial, config.epochs, config.epoch_len),
            pick_rng: CounterRng::new(config.seed, config.stream).fork(PICK_TAG),
            w: vec![0.0; d],
            sum: vec![0.0; d],
            dir: vec![0.0; d],
            gsnap: vec![0.0; d],
            picked: vec![0.0; d],
        })
    }

    /// One epoch given the full gradient `mu` at the current snapshot.
    pub(crate) fn run_epoch<O: Objective + ?Sized>(
        &mut self,
        problem: &O,
        config: &SvrgConfig,
        epoch: usize,
        mu: &[f64],
        next: &mut dyn FnMut() -> Result<usize>,
    ) -> Result<()> {
        let big_t = config.epoch_len;
        let log_bound = if config.check_safety_bound {
            problem.svrg_log_safety_bound(big_t, epoch, config.eta)
        } else {
            None
        };
        let pick = match config.epoch_output {
            EpochOutput::Average => None,
            EpochOutput::RandomIterate => Some(self.pick_rng.below(big_t)),
        };
        self.w.copy_from_slice(&self.snap);
        self.sum.iter_mut().for_each(|s| *s = 0.0);
        let mut max_sub = f64::NEG_INFINITY;

        for step in 0..big_t {
            if let Some(s) = problem.fast_suboptimality(&self.w) {
                max_sub = max_sub.max(s);
                check_bound(s, log_bound, epoch, step + 1)?;
            }
            match pick {
                None => linalg::axpy(1.0, &self.w, &mut self.sum),
                Some(j) if j == step => self.picked.copy_from_slice(&self.w),
                Some(_) => {}
            }
            let i = next()?;
            self.trace.indices.push(i);
            self.dir.iter_mut().for_each(|v| *v = 0.0);
            self.gsnap.iter_mut().for_each(|v| *v = 0.0);
            problem.add_gradient_unchecked(i, &self.w, &mut self.dir);
            problem.add_gradient_unchecked(i, &self.snap, &mut self.gsnap);
            for ((v, g), n) in self.dir.iter_mut().zip(&self.gsnap).zip(mu) {
                *v = (*v - g) + n;
            }
            linalg::axpy(-config.eta, &self.dir, &mut self.w);
            if self.w.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    epoch: Some(epoch),
                    step: step + 1,
                });
            }
        }

        match pick {
            None => {
                let inv = big_t as f64;
                for (s, a) in self.snap.iter_mut().zip(&self.sum) {
                    *s = a / inv;
                }
            }
            Some(_) => self.snap.copy_from_slice(&self.picked),
        }
        let sub = problem.suboptimality(&self.snap)?;
        if !sub.is_finite() {
            return Err(Error::NonFinite {
                epoch: Some(epoch),
                step: big_t,
            });
        }
        check_bound(sub, log_bound, epoch, big_t)?;
        max_sub = max_sub.max(sub);
        self.trace.subopt.push(sub);
        self.trace.max_inner_subopt.push(max_sub);
        self.trace.stochastic_grads.push(big_t);
        self.trace.full_grads.push(1);
        self.trace.point_grad_evals += problem.m() + 2 * big_t;
        Ok(())
    }

    pub(crate) fn finish(mut self) -> EpochTrace {
        self.trace.w = self.snap;
        self.trace
    }
}

fn check_bound(sub: f64, log_bound: Option<f64>, epoch: usize, step: usize) -> Result<()> {
    if let Some(lb) = log_bound {
        if sub > 0.0 && (sub.ln() > lb || !sub.is_finite()) {
            return Err(Error::SafetyBoundExceeded {
                epoch,
                step,
                log_subopt: sub.ln(),
                log_bound: lb,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Dataset;
    use approx::assert_relative_eq;

    fn p1() -> RidgeProblem {
        let data = Dataset::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![1.0, 0.0]).unwrap();
        RidgeProblem::new(data, 0.5).unwrap()
    }

    fn random_ridge(m: usize, d: usize, lambda_hat: f64, seed: u64) -> RidgeProblem {
        let mut rng = CounterRng::new(seed, 11);
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| rng.next_f64() - 0.5).collect();
                let n = linalg::norm(&v).max(1e-9);
                let r = rng.next_f64();
                v.iter().map(|x| x / n * r).collect()
            })
            .collect();
        let y = (0..m).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
        RidgeProblem::new(Dataset::from_rows(&rows, y).unwrap(), lambda_hat).unwrap()
    }

    #[test]
    fn hand_computed_two_steps() {
        let p = p1();
        let cfg = SvrgConfig::new(0.1, 2, 1, SamplerKind::SingleShuffle, 0);
        let tr = run_svrg_with_order(&p, &cfg, &Permutation::from_order(vec![0, 1]).unwrap()).unwrap();
        // w2 = (0.05, 0), w3 = (0.0975, 0); snapshot = mean(w1, w2) = (0.025, 0)
        assert_relative_eq!(tr.w[0], 0.025, epsilon = 1e-15);
        assert_eq!(tr.w[1], 0.0);
        assert_relative_eq!(tr.subopt[0], 0.1128125, epsilon = 1e-14);
        assert_eq!(tr.indices, vec![0, 1]);
    }

    #[test]
    fn first_inner_step_is_full_gradient_step() {
        let p = random_ridge(30, 4, 0.1, 1);
        let cfg = SvrgConfig::new(0.3, 2, 1, SamplerKind::SingleShuffle, 0);
        let tr = run_svrg_with_order(&p, &cfg, &Permutation::identity(30)).unwrap();
        let g = p.full_gradient(&[0.0; 4]).unwrap();
        // snapshot = (w1 + w2) / 2 with w1 = 0 and w2 = -eta grad F(0)
        for k in 0..4 {
            assert_eq!(tr.w[k], (0.0 - 0.3 * g[k]) / 2.0);
        }
    }

    #[test]
    fn random_iterate_output_is_a_visited_point() {
        let p = random_ridge(30, 2, 0.1, 1);
        let mut cfg = SvrgConfig::new(0.3, 3, 1, SamplerKind::SingleShuffle, 5);
        cfg.epoch_output = EpochOutput::RandomIterate;
        let tr = run_svrg(&p, &cfg).unwrap();
        let mut w = vec![0.0; 2];
        let mut visited = vec![w.clone()];
        let mu = p.full_gradient(&w).unwrap();
        for &i in &tr.indices[..2] {
            let a = p.point_gradient(i, &w).unwrap();
            let b = p.point_gradient(i, &[0.0, 0.0]).unwrap();
            for k in 0..2 {
                w[k] -= 0.3 * ((a[k] - b[k]) + mu[k]);
            }
            visited.push(w.clone());
        }
        assert!(visited.iter().any(|v| v == &tr.w));
    }

    #[test]
    fn optimum_is_a_fixed_point() {
        let p = random_ridge(40, 3, 0.2, 2);
        let wstar = p.optimum().unwrap().w.clone();
        let cfg = SvrgConfig::new(0.5, 10, 3, SamplerKind::WithReplacement, 3);
        let tr = run_svrg_from_point(&p, &cfg, &wstar).unwrap();
        for (a, b) in tr.w.iter().zip(&wstar) {
            assert!((a - b).abs() <= 1e-14, "{a} vs {b}");
        }
        assert!(tr.subopt.iter().all(|&s| s.abs() <= 1e-20));
    }

    #[test]
    fn zero_labels_stay_at_zero() {
        let mut p = random_ridge(20, 3, 0.3, 4);
        let data = Dataset::new(3, p.data().features().to_vec(), vec![0.0; 20]).unwrap();
        p = RidgeProblem::new(data, 0.3).unwrap();
        let cfg = SvrgConfig::new(0.5, 5, 3, SamplerKind::ReshufflePerEpoch, 3);
        let tr = run_svrg(&p, &cfg).unwrap();
        assert_eq!(tr.initial_subopt, 0.0);
        assert!(tr.subopt.iter().all(|&s| s == 0.0));
        assert!(epoch_decrease_ratio(&tr).iter().all(|&r| r == 0.0));
    }

    #[test]
    fn counts_and_no_revisits() {
        let p = random_ridge(100, 3, 0.1, 5);
        let cfg = SvrgConfig::new(0.5, 20, 5, SamplerKind::SingleShuffle, 8);
        let tr = run_svrg(&p, &cfg).unwrap();
        assert_eq!(tr.stochastic_grads, vec![20; 5]);
        assert_eq!(tr.full_grads, vec![1; 5]);
        assert_eq!(tr.point_grad_evals, 5 * (100 + 40));
        let mut seen = tr.indices.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 100);
    }

    #[test]
    fn converges_on_random_ridge() {
        let p = random_ridge(400, 5, 0.1, 6);
        let cfg = SvrgConfig::new(0.5, 50, 8, SamplerKind::SingleShuffle, 1);
        let tr = run_svrg(&p, &cfg).unwrap();
        assert!(tr.final_subopt() < 1e-3 * tr.initial_subopt);
        assert!(tr.max_inner_subopt.iter().zip(&tr.subopt).all(|(a, b)| a >= b));
    }

    #[test]
    fn config_errors() {
        let p = p1();
        assert!(run_svrg(&p, &SvrgConfig::new(0.0, 1, 1, SamplerKind::WithReplacement, 0)).is_err());
        assert!(run_svrg(&p, &SvrgConfig::new(0.1, 0, 1, SamplerKind::WithReplacement, 0)).is_err());
        assert!(run_svrg(&p, &SvrgConfig::new(0.1, 2, 2, SamplerKind::SingleShuffle, 0)).is_err());
    }

    #[test]
    fn divergence_reports_epoch_and_step() {
        let p = random_ridge(30, 3, 0.01, 7);
        let mut cfg = SvrgConfig::new(1e3, 30, 3, SamplerKind::WithReplacement, 1);
        cfg.check_safety_bound = false;
        let err = run_svrg(&p, &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFinite { epoch: Some(_), .. }), "{err}");
        // lambda, eta < 1 but steps large enough to blow up: the bound fires first
        let cfg = SvrgConfig::new(0.99, 30, 3, SamplerKind::WithReplacement, 1);
        match run_svrg(&p, &cfg) {
            Ok(tr) => {
                let lb = appendix_b_bound(30, 3, p.strong_convexity());
                assert!(tr.max_inner_subopt.iter().all(|s| s.ln() <= lb));
            }
            Err(e) => assert!(matches!(e, Error::SafetyBoundExceeded { .. })),
        }
    }

    #[test]
    fn bound_examples() {
        assert_relative_eq!(
            appendix_b_bound(9000, 5, 0.01),
            10.0 * 45000f64.ln() + 400f64.ln(),
            epsilon = 1e-12
        );
        assert!((appendix_b_bound(9000, 5, 0.01) - 113.13).abs() < 0.01);
        assert!((appendix_b_bound(1, 1, 0.5) - 5.298).abs() < 1e-3);
        assert!(appendix_b_bound(2, 1, 0.5) > appendix_b_bound(1, 1, 0.5));
        assert!(appendix_b_bound(1, 2, 0.5) > appendix_b_bound(1, 1, 0.5));
        assert!(appendix_b_bound(1, 1, 0.25) > appendix_b_bound(1, 1, 0.5));
    }

    #[test]
    fn recommended_examples() {
        let r = recommended_params_for(0.01, 10, 0.01, 10.0).unwrap();
        assert_eq!((r.eta, r.epoch_len, r.epochs), (0.1, 9000, 5));
        assert_eq!(r.m_required, 90_000);
        assert!(r.warning.as_deref().unwrap().contains("m ≥ 2·S·T"));
        assert_eq!(recommended_params_for(0.01, 10, 0.5625, 10.0).unwrap().epochs, 2);
        assert!(recommended_params_for(0.01, 10, 2.25, 10.0).is_err());
        assert!(recommended_params_for(0.01, 10, 0.0, 10.0).is_err());
        assert_eq!(recommended_params_for(1.0, 1000, 0.5, 1.0).unwrap().epoch_len, 9);
        assert!(recommended_params_for(1.0, 1000, 0.5, 1.0).unwrap().warning.is_none());
    }

    #[test]
    fn ratio_sequence() {
        let tr = EpochTrace {
            initial_subopt: 1.0,
            subopt: vec![0.25, 0.0625, 0.0],
            max_inner_subopt: vec![],
            stochastic_grads: vec![],
            full_grads: vec![],
            point_grad_evals: 0,
            indices: vec![],
            w: vec![],
        };
        assert_eq!(epoch_decrease_ratio(&tr), vec![0.25, 0.25, 0.0]);
        let mut short = tr.clone();
        short.subopt.clear();
        assert!(epoch_decrease_ratio(&short).is_empty());
    }
}
