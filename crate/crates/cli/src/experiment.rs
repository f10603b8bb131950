//! Serializable experiment descriptions and their execution.
//!
//! A result file embeds the [`Experiment`] that produced it; running the same
//! experiment again yields the same numbers.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use noreplace::datagen::{self, GenSpec};
use noreplace::distributed::{self, DistConfig};
use noreplace::linalg;
use noreplace::problem::{LipschitzLinearProblem, LossKind, Objective, RidgeProblem};
use noreplace::sgd::{self, SgdConfig, StepRule};
use noreplace::stats;
use noreplace::svrg::{self, SvrgConfig};
use noreplace::verify::{self, ConcentrationSpec, FunctionClass, RademacherSpec};
use noreplace::{par, CounterRng, Dataset, SamplerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSource {
    File { path: PathBuf, normalize: bool },
    Synthetic { spec: GenSpec },
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::File { path, normalize } => {
                datagen::load(path, *normalize).with_context(|| format!("reading {}", path.display()))
            }
            DataSource::Synthetic { spec } => Ok(datagen::generate(spec)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub data: DataSource,
    pub lambda_hat: f64,
}

impl ProblemConfig {
    pub fn build(&self) -> Result<RidgeProblem> {
        Ok(RidgeProblem::new(self.data.load()?, self.lambda_hat)?)
    }
}

/// Points for the linear-class complexity estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum PointSource {
    File { path: PathBuf, normalize: bool },
    UnitVectors { m: usize, d: usize, seed: u64 },
}

impl PointSource {
    fn load(&self) -> Result<Vec<Vec<f64>>> {
        match self {
            PointSource::File { path, normalize } => {
                let data = datagen::load(path, *normalize).with_context(|| format!("reading {}", path.display()))?;
                Ok((0..data.m()).map(|i| data.row(i).to_vec()).collect())
            }
            PointSource::UnitVectors { m, d, seed } => Ok(unit_vectors(*m, *d, *seed)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "lemma", rename_all = "kebab-case")]
pub enum Check {
    Key {
        m: usize,
        rules: usize,
        seed: u64,
    },
    Theorem1 {
        m: usize,
        d: usize,
        seed: u64,
    },
    RademacherLinear {
        m: usize,
        d: usize,
        samples: usize,
        seed: u64,
    },
    Contraction {
        m: usize,
        members: usize,
        samples: usize,
        seed: u64,
    },
    Product {
        m: usize,
        members: usize,
        samples: usize,
        seed: u64,
    },
    Matrix {
        m: usize,
        d: usize,
        shift: f64,
        alpha: f64,
        trials: usize,
        seed: u64,
    },
    AppendixSum {
        m_max: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Experiment {
    Gen {
        spec: GenSpec,
    },
    Sgd {
        problem: ProblemConfig,
        sgd: SgdConfig,
        seeds: usize,
    },
    Svrg {
        problem: ProblemConfig,
        svrg: SvrgConfig,
        seeds: usize,
    },
    Dist {
        problem: ProblemConfig,
        dist: DistConfig,
    },
    Verify {
        check: Check,
    },
    Rademacher {
        points: PointSource,
        radius: f64,
        s: usize,
        u: usize,
        samples: usize,
        seed: u64,
    },
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Gen { .. } => "gen",
            Experiment::Sgd { .. } => "sgd",
            Experiment::Svrg { .. } => "svrg",
            Experiment::Dist { .. } => "dist",
            Experiment::Verify { .. } => "verify",
            Experiment::Rademacher { .. } => "rademacher",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Experiment::Gen { spec } => spec.seed,
            Experiment::Sgd { sgd, .. } => sgd.seed,
            Experiment::Svrg { svrg, .. } => svrg.seed,
            Experiment::Dist { dist, .. } => dist.svrg.seed,
            Experiment::Verify { check } => match check {
                Check::Key { seed, .. }
                | Check::Theorem1 { seed, .. }
                | Check::RademacherLinear { seed, .. }
                | Check::Contraction { seed, .. }
                | Check::Product { seed, .. }
                | Check::Matrix { seed, .. } => *seed,
                Check::AppendixSum { .. } => 0,
            },
            Experiment::Rademacher { seed, .. } => *seed,
        }
    }
}

/// Tabular output, one JSON value per cell (`null` renders as an empty CSV
/// field).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Payload {
    Table(Table),
    Dataset(Dataset),
    Summary,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub payload: Payload,
    pub summary: Value,
    /// Human-readable lines for stderr.
    pub notes: Vec<String>,
    /// `Some(false)` when a verification gate failed.
    pub passed: Option<bool>,
}

impl Report {
    fn new(payload: Payload, summary: Value) -> Self {
        Report {
            payload,
            summary,
            notes: Vec::new(),
            passed: None,
        }
    }
}

fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

pub fn run(exp: &Experiment) -> Result<Report> {
    match exp {
        Experiment::Gen { spec } => {
            let data = datagen::generate(spec)?;
            let summary = json!({ "m": data.m(), "d": data.d() });
            Ok(Report::new(Payload::Dataset(data), summary))
        }
        Experiment::Sgd { problem, sgd, seeds } => run_sgd(problem, sgd, *seeds),
        Experiment::Svrg { problem, svrg, seeds } => run_svrg(problem, svrg, *seeds),
        Experiment::Dist { problem, dist } => run_dist(problem, dist),
        Experiment::Verify { check } => run_check(check),
        Experiment::Rademacher {
            points,
            radius,
            s,
            u,
            samples,
            seed,
        } => {
            let x = points.load()?;
            let spec = RademacherSpec {
                class: FunctionClass::LinearBall { x, radius: *radius },
                s: *s,
                u: *u,
                samples: *samples,
                seed: *seed,
                stream: 0,
            };
            let e = verify::rademacher_estimate(&spec)?;
            let bound = verify::linear_ball_bound(*radius, *s, *u);
            let mut r = Report::new(
                Payload::Summary,
                json!({ "estimate": num(e.estimate), "se": num(e.se), "p": num(e.p), "samples": e.samples, "bound": num(bound) }),
            );
            r.notes.push(format!(
                "estimate {:.6} (se {:.2e}), closed-form bound {bound:.6}",
                e.estimate, e.se
            ));
            Ok(r)
        }
    }
}

fn run_sgd(problem: &ProblemConfig, cfg: &SgdConfig, seeds: usize) -> Result<Report> {
    let p = problem.build()?;
    let s = sgd::average_suboptimality_over_seeds(&p, cfg, seeds)?;
    let mut table = Table::new(&["t", "mean_subopt", "se"]);
    for (k, &t) in s.t.iter().enumerate() {
        let se = s.se.as_ref().map_or(Value::Null, |v| num(v[k]));
        table.rows.push(vec![t.into(), num(s.mean[k]), se]);
    }
    let last = s.mean.last().copied().unwrap_or(f64::NAN);
    let summary = json!({
        "m": p.m(),
        "d": p.d(),
        "lambda": num(p.strong_convexity()),
        "seeds": seeds,
        "final_mean_subopt": num(last),
    });
    let mut r = Report::new(Payload::Table(table), summary);
    r.notes
        .push(format!("final mean suboptimality {last:.4e} over {seeds} seed(s)"));
    Ok(r)
}

fn run_svrg(problem: &ProblemConfig, cfg: &SvrgConfig, seeds: usize) -> Result<Report> {
    if seeds == 0 {
        bail!("need at least one seed");
    }
    let p = problem.build()?;
    let traces = par::try_map_indexed(seeds, |s| {
        let mut c = cfg.clone();
        c.stream = s as u64;
        svrg::run_svrg(&p, &c)
    })?;
    let mut table = Table::new(&["epoch", "mean_subopt", "se"]);
    let mut column = vec![0.0; seeds];
    for e in 0..=cfg.epochs {
        for (c, t) in column.iter_mut().zip(&traces) {
            *c = if e == 0 { t.initial_subopt } else { t.subopt[e - 1] };
        }
        let ms = stats::mean_se(&column);
        table
            .rows
            .push(vec![e.into(), num(ms.mean), ms.se.map_or(Value::Null, num)]);
    }
    let finals: Vec<f64> = traces.iter().map(|t| t.final_subopt()).collect();
    let last = stats::mean_se(&finals).mean;
    let summary = json!({
        "m": p.m(),
        "d": p.d(),
        "lambda": num(p.strong_convexity()),
        "seeds": seeds,
        "point_grad_evals": traces[0].point_grad_evals,
        "final_mean_subopt": num(last),
    });
    let mut r = Report::new(Payload::Table(table), summary);
    r.notes.push(format!(
        "final mean suboptimality {last:.4e} after {} epochs",
        cfg.epochs
    ));
    Ok(r)
}

fn run_dist(problem: &ProblemConfig, cfg: &DistConfig) -> Result<Report> {
    let p = problem.build()?;
    let (trace, log) = distributed::run_distributed_svrg(&p, cfg)?;
    let report = distributed::comm_cost_report(&log, Some(&trace));
    let mut table = Table::new(&["epoch", "subopt", "rounds", "floats"]);
    table
        .rows
        .push(vec![0.into(), num(trace.initial_subopt), 0.into(), 0.into()]);
    let (mut rounds, mut floats) = (0, 0);
    for (e, c) in log.per_epoch.iter().enumerate() {
        rounds += c.rounds;
        floats += c.floats;
        table
            .rows
            .push(vec![(e + 1).into(), num(trace.subopt[e]), rounds.into(), floats.into()]);
    }
    let summary = json!({
        "m": p.m(),
        "d": p.d(),
        "machines": cfg.machines,
        "lambda": num(p.strong_convexity()),
        "final_subopt": num(trace.final_subopt()),
        "comm": report,
    });
    let mut r = Report::new(Payload::Table(table), summary);
    r.notes.push(format!(
        "{} machines: {} rounds, {} floats ({} bytes); final suboptimality {:.4e}",
        cfg.machines,
        report.rounds,
        report.floats,
        report.bytes,
        trace.final_subopt()
    ));
    Ok(r)
}

pub fn point_count(points: &PointSource) -> Result<usize> {
    Ok(points.load()?.len())
}

pub fn unit_vectors(m: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = CounterRng::new(seed, 0);
    (0..m)
        .map(|_| loop {
            let v: Vec<f64> = (0..d).map(|_| rng.next_f64() - 0.5).collect();
            let n = linalg::norm(&v);
            if n > 1e-12 {
                break v.iter().map(|a| a / n).collect();
            }
        })
        .collect()
}

/// Vectors with uniform directions and norms uniform in `[0, 1)`.
fn ball_vectors(m: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut radii = CounterRng::new(seed, 1);
    unit_vectors(m, d, seed)
        .into_iter()
        .map(|v| {
            let r = radii.next_f64();
            v.iter().map(|a| a * r).collect()
        })
        .collect()
}

fn cube_class(members: usize, m: usize, rng: &mut CounterRng) -> Vec<Vec<f64>> {
    (0..members)
        .map(|_| (0..m).map(|_| 2.0 * rng.next_f64() - 1.0).collect())
        .collect()
}

fn split(m: usize) -> (usize, usize) {
    let s = (m / 2).max(1);
    (s, m - s)
}

fn gate(mut r: Report, pass: bool, line: String) -> Report {
    r.notes.push(line);
    r.passed = Some(pass);
    r
}

fn run_check(check: &Check) -> Result<Report> {
    let r = match *check {
        Check::Key { m, rules, seed } => {
            let mut worst: f64 = 0.0;
            for k in 0..rules as u64 {
                for t in 1..=m {
                    worst = worst.max(verify::key_lemma_check(m, t, verify::hashed_rule(seed.wrapping_add(k)))?.gap());
                }
            }
            let pass = worst <= 1e-12;
            gate(
                Report::new(
                    Payload::Summary,
                    json!({ "m": m, "rules": rules, "max_gap": num(worst), "tolerance": 1e-12, "passed": pass }),
                ),
                pass,
                format!("max |lhs - rhs| = {worst:.3e} over {rules} rules, t = 1..{m} (tolerance 1e-12)"),
            )
        }
        Check::Theorem1 { m, d, seed } => {
            let ridge = RidgeProblem::new(datagen::generate(&GenSpec::new(m, d, seed))?, 0.1)?;
            let mut spec = GenSpec::new(m, d, seed.wrapping_add(1));
            spec.noise = 0.0;
            spec.w_true_norm = 0.9;
            let g = datagen::generate_with_truth(&spec)?;
            let abs = LipschitzLinearProblem::new(g.data, LossKind::Absolute, 0.0, 1.0)?.with_reference(g.w_true)?;
            let lambda = ridge.strong_convexity();
            let mut worst: f64 = 0.0;
            for t in 1..=m {
                let cfg = SgdConfig::new(
                    t,
                    StepRule::StronglyConvex { lambda },
                    10.0,
                    SamplerKind::SingleShuffle,
                    seed,
                );
                worst = worst.max(sgd::decomposition_check(&ridge, &cfg)?.residual());
                let cfg = SgdConfig::new(
                    t,
                    StepRule::InverseSqrt { eta0: 0.5 },
                    1.0,
                    SamplerKind::SingleShuffle,
                    seed,
                );
                worst = worst.max(sgd::decomposition_check(&abs, &cfg)?.residual());
            }
            let pass = worst <= 1e-10;
            gate(
                Report::new(Payload::Summary, json!({ "m": m, "d": d, "max_residual": num(worst), "tolerance": 1e-10, "passed": pass })),
                pass,
                format!("max |lhs - regret - prefix/suffix| = {worst:.3e}, T = 1..{m}, ridge and absolute loss (tolerance 1e-10)"),
            )
        }
        Check::RademacherLinear { m, d, samples, seed } => {
            let (s, u) = split(m);
            let x = unit_vectors(m, d, seed);
            let e = verify::rademacher_estimate(&RademacherSpec {
                class: FunctionClass::LinearBall { x, radius: 1.0 },
                s,
                u,
                samples,
                seed: seed.wrapping_add(1),
                stream: 0,
            })?;
            let bound = verify::linear_ball_bound(1.0, s, u);
            let pass = e.estimate <= bound + 3.0 * e.se;
            gate(
                Report::new(
                    Payload::Summary,
                    json!({ "m": m, "d": d, "estimate": num(e.estimate), "se": num(e.se), "bound": num(bound), "passed": pass }),
                ),
                pass,
                format!(
                    "estimate {:.5} (se {:.2e}) vs bound {bound:.5} + 3 se",
                    e.estimate, e.se
                ),
            )
        }
        Check::Contraction {
            m,
            members,
            samples,
            seed,
        } => {
            let mut rng = CounterRng::new(seed, 0);
            let class = cube_class(members, m, &mut rng);
            let (s, u) = split(m);
            let pe = verify::contraction_check(&class, |i, z| (z + i as f64).sin(), 1.0, s, u, samples, seed)?;
            paired_report(pe, "R(g o V)", "R(V)")
        }
        Check::Product {
            m,
            members,
            samples,
            seed,
        } => {
            let mut rng = CounterRng::new(seed, 0);
            let v = cube_class(members, m, &mut rng);
            let sc = cube_class(members, m, &mut rng);
            let (s, u) = split(m);
            let pe = verify::product_class_check(&v, &sc, s, u, samples, seed)?;
            paired_report(pe, "R(V*S)", "B_S R(V) + B_V R(S)")
        }
        Check::Matrix {
            m,
            d,
            shift,
            alpha,
            trials,
            seed,
        } => {
            let spec = matrix_spec(m, d, shift, alpha, trials, seed);
            let rep = verify::matrix_concentration_check(&spec)?;
            let bound = rep.failure_bound.min(1.0);
            let pass = rep.violation_rate <= bound;
            let balanced = rep.balanced_deviation();
            gate(
                Report::new(
                    Payload::Summary,
                    json!({
                        "m": m,
                        "gamma": num(rep.gamma),
                        "gamma_hat": num(rep.gamma_hat),
                        "violations": rep.violations,
                        "violation_rate": num(rep.violation_rate),
                        "failure_bound": num(rep.failure_bound),
                        "balanced_deviation": num(balanced),
                        "balanced_threshold": num(rep.threshold[m / 2 - 1]),
                        "passed": pass,
                    }),
                ),
                pass,
                format!(
                    "{} of {} trials exceeded a threshold (allowed rate {bound:.3e}); deviation at s = m/2: {balanced:.4}",
                    rep.violations, trials
                ),
            )
        }
        Check::AppendixSum { m_max } => {
            let scan = verify::appendix_sum_check(m_max)?;
            let pass = scan.worst_ratio <= 1.0;
            let mut summary = serde_json::to_value(scan)?;
            summary["passed"] = pass.into();
            gate(
                Report::new(Payload::Summary, summary),
                pass,
                format!(
                    "worst ratio {:.6} at m = {}, T = {} over {} pairs (must be <= 1)",
                    scan.worst_ratio, scan.worst_m, scan.worst_t, scan.pairs
                ),
            )
        }
    };
    Ok(r)
}

fn paired_report(pe: verify::PairedEstimate, lhs: &str, rhs: &str) -> Report {
    let pass = pe.lhs_within(3.0);
    let mut summary = serde_json::to_value(pe).expect("plain struct");
    summary["passed"] = pass.into();
    gate(
        Report::new(Payload::Summary, summary),
        pass,
        format!(
            "{lhs} = {:.5} vs {rhs} = {:.5}; difference se {:.2e} (lhs <= rhs + 3 se)",
            pe.lhs, pe.rhs, pe.diff_se
        ),
    )
}

/// Matrix-check inputs generated from `(m, d, seed)`.
fn matrix_spec(m: usize, d: usize, shift: f64, alpha: f64, trials: usize, seed: u64) -> ConcentrationSpec {
    ConcentrationSpec {
        x: ball_vectors(m, d, seed),
        shift,
        alpha,
        trials,
        seed: seed.wrapping_add(1),
        stream: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_round_trips_through_json() {
        let exp = Experiment::Verify {
            check: Check::Key {
                m: 4,
                rules: 2,
                seed: 9,
            },
        };
        let s = serde_json::to_string(&exp).unwrap();
        assert!(s.contains("\"command\":\"verify\""));
        assert_eq!(serde_json::from_str::<Experiment>(&s).unwrap(), exp);
    }

    #[test]
    fn unit_vectors_have_unit_norm() {
        for v in unit_vectors(20, 3, 1) {
            assert!((linalg::norm(&v) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn key_check_passes_small() {
        let r = run_check(&Check::Key {
            m: 4,
            rules: 3,
            seed: 1,
        })
        .unwrap();
        assert_eq!(r.passed, Some(true));
    }
}
