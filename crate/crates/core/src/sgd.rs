//! Projected stochastic (sub)gradient descent over a permuted or i.i.d. stream.
//!
//! `w_1 = 0`, then `w_{t+1} = P(w_t - eta_t g_t)` with `g_t` a subgradient of
//! `f_{i_t}` at `w_t` and `P` the projection onto the ball of radius
//! `radius`. The reported iterate is the running average of `w_1, ..., w_t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, norm};
use crate::par;
use crate::problem::Objective;
use crate::rng::CounterRng;
use crate::sampling::{self, Sampler, SamplerKind, MAX_ENUMERATION};
use crate::stats;

/// Largest `m` accepted by [`decomposition_check`].
pub const MAX_DECOMPOSITION_M: usize = 7;
const _: () = assert!(MAX_DECOMPOSITION_M <= MAX_ENUMERATION);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum StepRule {
    /// `eta_t = 2 / (lambda t)`
    StronglyConvex {
        lambda: f64,
    },
    Fixed {
        eta: f64,
    },
    /// `eta_t = eta0 / sqrt(t)`
    InverseSqrt {
        eta0: f64,
    },
}

impl StepRule {
    /// Step size at 1-based iteration `t`.
    #[inline]
    pub fn eta(&self, t: usize) -> f64 {
        match *self {
            StepRule::StronglyConvex { lambda } => 2.0 / (lambda * t as f64),
            StepRule::Fixed { eta } => eta,
            StepRule::InverseSqrt { eta0 } => eta0 / (t as f64).sqrt(),
        }
    }

    fn validate(&self) -> Result<()> {
        let p = match *self {
            StepRule::StronglyConvex { lambda } => lambda,
            StepRule::Fixed { eta } => eta,
            StepRule::InverseSqrt { eta0 } => eta0,
        };
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::invalid(format!("step-size parameter must be > 0, got {p}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    /// Mean of all iterates `w_1..w_t`.
    #[default]
    Uniform,
    /// Mean of the last `ceil(t/2)` iterates.
    Suffix,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Record {
    #[default]
    EveryIteration,
    /// Only at these iteration counts (1-based, within `1..=T`).
    At(Vec<usize>),
}

impl Record {
    fn wants(&self, t: usize) -> bool {
        match self {
            Record::EveryIteration => true,
            Record::At(ts) => ts.contains(&t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    /// Iteration count `T`.
    pub steps: usize,
    pub step_rule: StepRule,
    /// Projection radius of the domain ball.
    pub radius: f64,
    pub seed: u64,
    pub stream: u64,
    pub sampler: SamplerKind,
    #[serde(default)]
    pub averaging: Averaging,
    #[serde(default)]
    pub record: Record,
}

impl SgdConfig {
    pub fn new(steps: usize, step_rule: StepRule, radius: f64, sampler: SamplerKind, seed: u64) -> Self {
        SgdConfig {
            steps,
            step_rule,
            radius,
            seed,
            stream: 0,
            sampler,
            averaging: Averaging::Uniform,
            record: Record::EveryIteration,
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("SGD needs T >= 1"));
        }
        if self.sampler == SamplerKind::SingleShuffle && self.steps > m {
            return Err(Error::invalid(format!(
                "single-shuffle sampling allows T <= m, got T = {} > m = {m}",
                self.steps
            )));
        }
        if !(self.radius > 0.0) {
            return Err(Error::invalid("projection radius must be > 0"));
        }
        self.step_rule.validate()
    }
}

/// Per-run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    /// Recorded iteration counts.
    pub t: Vec<usize>,
    /// `F(avg_t) - F(w*)` at each recorded `t`.
    pub avg_subopt: Vec<f64>,
    /// `F(w_t) - F(w*)` at each recorded `t`.
    pub iterate_subopt: Vec<f64>,
    /// `(1/T) sum_t (F(w_t) - F(w*))`, when every iterate was evaluated.
    pub mean_iterate_subopt: Option<f64>,
    /// Final averaged iterate.
    pub w_avg: Vec<f64>,
    /// `sum_t f_{i_t}(w_t) - f_{i_t}(w*)`.
    pub regret: f64,
    pub gradient_evals: usize,
    /// Sampled indices in draw order.
    pub indices: Vec<usize>,
}

impl Trace {
    pub fn final_avg_subopt(&self) -> Option<f64> {
        self.avg_subopt.last().copied()
    }
}

/// One projected step in place. `grad` is scratch of length `d`. Returns
/// false if the unprojected point is not finite.
#[inline]
pub(crate) fn sgd_step<O: Objective + ?Sized>(
    problem: &O,
    i: usize,
    t: usize,
    rule: &StepRule,
    radius: f64,
    w: &mut [f64],
    grad: &mut [f64],
) -> bool {
    grad.iter_mut().for_each(|g| *g = 0.0);
    problem.add_gradient_unchecked(i, w, grad);
    linalg::axpy(-rule.eta(t), grad, w);
    // the norm overflows long before the coordinates do
    let finite = linalg::norm(w).is_finite();
    linalg::project_ball(w, radius);
    finite
}

pub fn run_sgd<O: Objective + ?Sized>(problem: &O, config: &SgdConfig) -> Result<Trace> {
    let m = problem.m();
    config.validate(m)?;
    let rng = CounterRng::new(config.seed, config.stream);
    let sampler = Sampler::new(config.sampler, m, m, rng)?;
    run_with_sampler(problem, config, sampler)
}

/// [`run_sgd`] over an explicit ordering (single pass, `T <= m`).
pub fn run_sgd_with_order<O: Objective + ?Sized>(
    problem: &O,
    config: &SgdConfig,
    order: sampling::Permutation,
) -> Result<Trace> {
    if order.len() != problem.m() {
        return Err(Error::DimensionMismatch {
            expected: problem.m(),
            got: order.len(),
        });
    }
    let mut cfg = config.clone();
    cfg.sampler = SamplerKind::SingleShuffle;
    cfg.validate(problem.m())?;
    run_with_sampler(problem, &cfg, Sampler::from_permutation(order))
}

fn run_with_sampler<O: Objective + ?Sized>(problem: &O, config: &SgdConfig, mut sampler: Sampler) -> Result<Trace> {
    let d = problem.d();
    let m = problem.m();
    let opt = problem.optimum()?;
    let wstar_norm = norm(&opt.w);
    if wstar_norm > config.radius * (1.0 + 1e-12) {
        return Err(Error::ProjectionExcludesOptimum {
            radius: config.radius,
            wstar_norm,
        });
    }
    let big_t = config.steps;
    let eval_all = problem.fast_suboptimality(&opt.w).is_some() || config.record == Record::EveryIteration;
    let keep_prefix = config.averaging == Averaging::Suffix;

    let mut w = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut sum = vec![0.0; d];
    let mut prefix: Vec<Vec<f64>> = if keep_prefix { vec![vec![0.0; d]] } else { Vec::new() };
    let mut avg = vec![0.0; d];
    let mut trace = Trace {
        t: Vec::new(),
        avg_subopt: Vec::new(),
        iterate_subopt: Vec::new(),
        mean_iterate_subopt: None,
        w_avg: Vec::new(),
        regret: 0.0,
        gradient_evals: 0,
        indices: Vec::with_capacity(big_t),
    };
    let mut iterate_sum = 0.0;
    let mut seen = vec![false; m];

    for t in 1..=big_t {
        let i = sampler.next_index()?;
        if config.sampler.is_without_replacement() && trace.indices.len() < m {
            assert!(
                !seen[i],
                "without-replacement sampler repeated index {i} within the first m draws"
            );
            seen[i] = true;
        }
        trace.indices.push(i);

        // w_t enters the average before it is updated.
        linalg::axpy(1.0, &w, &mut sum);
        if keep_prefix {
            prefix.push(sum.clone());
        }
        trace.regret += problem.loss_unchecked(i, &w) - problem.loss_unchecked(i, &opt.w);

        let wants = config.record.wants(t);
        if eval_all || wants {
            let s = problem.suboptimality(&w)?;
            iterate_sum += s;
            if wants {
                match config.averaging {
                    Averaging::Uniform => {
                        for (a, s) in avg.iter_mut().zip(&sum) {
                            *a = s / t as f64;
                        }
                    }
                    Averaging::Suffix => {
                        let k = t.div_ceil(2);
                        let lo = &prefix[t - k];
                        for ((a, s), l) in avg.iter_mut().zip(&sum).zip(lo) {
                            *a = (s - l) / k as f64;
                        }
                    }
                }
                trace.t.push(t);
                trace.avg_subopt.push(problem.suboptimality(&avg)?);
                trace.iterate_subopt.push(s);
            }
        }

        let finite = sgd_step(problem, i, t, &config.step_rule, config.radius, &mut w, &mut grad);
        trace.gradient_evals += 1;
        if !finite {
            return Err(Error::NonFinite { epoch: None, step: t });
        }
    }

    if eval_all {
        trace.mean_iterate_subopt = Some(iterate_sum / big_t as f64);
    }
    trace.w_avg = match config.averaging {
        Averaging::Uniform => sum.iter().map(|s| s / big_t as f64).collect(),
        Averaging::Suffix => {
            let k = big_t.div_ceil(2);
            sum.iter()
                .zip(&prefix[big_t - k])
                .map(|(s, l)| (s - l) / k as f64)
                .collect()
        }
    };
    Ok(trace)
}

/// Monte-Carlo mean and standard error of the averaged-iterate suboptimality
/// over `n_seeds` runs, one per stream `0..n_seeds` of `config.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub t: Vec<usize>,
    pub mean: Vec<f64>,
    /// Absent for a single seed.
    pub se: Option<Vec<f64>>,
    pub n_seeds: usize,
}

pub fn average_suboptimality_over_seeds<O: Objective + ?Sized>(
    problem: &O,
    config: &SgdConfig,
    n_seeds: usize,
) -> Result<SeedSummary> {
    if n_seeds == 0 {
        return Err(Error::invalid("need at least one seed"));
    }
    let traces = par::try_map_indexed(n_seeds, |s| {
        let mut cfg = config.clone();
        cfg.stream = s as u64;
        run_sgd(problem, &cfg)
    })?;
    let t = traces[0].t.clone();
    let mut mean = Vec::with_capacity(t.len());
    let mut se = Vec::with_capacity(t.len());
    let mut column = vec![0.0; n_seeds];
    for k in 0..t.len() {
        for (c, tr) in column.iter_mut().zip(&traces) {
            *c = tr.avg_subopt[k];
        }
        let s = stats::mean_se(&column);
        mean.push(s.mean);
        se.push(s.se.unwrap_or(f64::NAN));
    }
    Ok(SeedSummary {
        t,
        mean,
        se: (n_seeds >= 2).then_some(se),
        n_seeds,
    })
}

/// The three exact expectations of the regret/prefix-suffix decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    /// `E[(1/T) sum_t F(w_t) - F(w*)]`
    pub lhs: f64,
    /// `E[(1/T) sum_t f_{s(t)}(w_t) - f_{s(t)}(w*)]`
    pub regret_term: f64,
    /// `(1/(mT)) sum_{t=2..T} (t-1) E[F_{1:t-1}(w_t) - F_{t:m}(w_t)]`
    pub prefix_suffix_term: f64,
}

impl Decomposition {
    pub fn residual(&self) -> f64 {
        (self.lhs - self.regret_term - self.prefix_suffix_term).abs()
    }
}

/// Iterates `w_1..w_T` of projected SGD along `order[..T]`.
pub fn sgd_iterates<O: Objective + ?Sized>(
    problem: &O,
    order: &[usize],
    steps: usize,
    rule: &StepRule,
    radius: f64,
) -> Vec<Vec<f64>> {
    let d = problem.d();
    let mut w = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut out = Vec::with_capacity(steps);
    for (t, &i) in order.iter().take(steps).enumerate() {
        out.push(w.clone());
        let _ = sgd_step(problem, i, t + 1, rule, radius, &mut w, &mut grad);
    }
    out
}

/// Computes the decomposition exactly by enumerating all `m!` orderings
/// (single-shuffle sampling, `m <= 7`).
pub fn decomposition_check<O: Objective + ?Sized>(problem: &O, config: &SgdConfig) -> Result<Decomposition> {
    let m = problem.m();
    if m > MAX_DECOMPOSITION_M {
        return Err(Error::EnumerationTooLarge {
            m,
            max: MAX_DECOMPOSITION_M,
        });
    }
    let mut cfg = config.clone();
    cfg.sampler = SamplerKind::SingleShuffle;
    cfg.validate(m)?;
    let opt = problem.optimum()?;
    let big_t = cfg.steps;
    let tf = big_t as f64;
    let mf = m as f64;

    let (mut lhs, mut regret, mut ps) = (0.0, 0.0, 0.0);
    let mut count = 0usize;
    for order in sampling::enumerate_permutations(m)? {
        let iterates = sgd_iterates(problem, &order, big_t, &cfg.step_rule, cfg.radius);
        let (mut l, mut r, mut p) = (0.0, 0.0, 0.0);
        for (k, w) in iterates.iter().enumerate() {
            let t = k + 1;
            let losses: Vec<f64> = (0..m).map(|i| problem.loss_unchecked(i, w)).collect();
            l += problem.objective_unchecked(w) - opt.value;
            let i = order[k];
            r += losses[i] - problem.loss_unchecked(i, &opt.w);
            if t >= 2 {
                let seen = order[..t - 1].iter().map(|&j| losses[j]).sum::<f64>() / (t - 1) as f64;
                let unseen = order[t - 1..].iter().map(|&j| losses[j]).sum::<f64>() / (m - t + 1) as f64;
                p += (t - 1) as f64 * (seen - unseen);
            }
        }
        lhs += l / tf;
        regret += r / tf;
        ps += p / (mf * tf);
        count += 1;
    }
    let n = count as f64;
    Ok(Decomposition {
        lhs: lhs / n,
        regret_term: regret / n,
        prefix_suffix_term: ps / n,
    })
}
