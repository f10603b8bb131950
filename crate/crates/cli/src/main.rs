//! `noreplace` command-line front end.
//!
//! Exit codes: 0 on success, 1 on runtime errors (including failed
//! verification gates), 2 on usage errors.

mod experiment;
mod output;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;

use noreplace::datagen::{GenSpec, Spectrum};
use noreplace::distributed::DistConfig;
use noreplace::sgd::{Averaging, Record, SgdConfig, StepRule};
use noreplace::svrg::{self, EpochOutput, SvrgConfig};
use noreplace::{linalg, par, Objective, SamplerKind};

use experiment::{Check, DataSource, Experiment, PointSource, ProblemConfig};
use output::Format;

#[derive(Parser, Debug)]
#[command(
    name = "noreplace",
    version,
    about = "Stochastic gradient experiments with and without replacement"
)]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for repetitions (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output format; tables default to csv, summaries to json.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic regression dataset in sparse text format.
    Gen(GenArgs),
    /// Projected SGD on a ridge problem, averaged over seeds.
    Sgd(SgdArgs),
    /// SVRG on a ridge problem, averaged over seeds.
    Svrg(SvrgArgs),
    /// Simulated distributed SVRG over k machines.
    Dist(DistArgs),
    /// Numerical check of one of the supporting inequalities.
    Verify(VerifyArgs),
    /// Monte-Carlo complexity estimate of a linear class.
    Rademacher(RademacherArgs),
    /// Re-run the experiment embedded in a result file.
    Rerun { file: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SpectrumArg {
    Uniform,
    Geometric,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 1000)]
    m: usize,
    #[arg(long, default_value_t = 10)]
    d: usize,
    #[arg(long, value_enum, default_value = "uniform")]
    spectrum: SpectrumArg,
    /// Variance decay per coordinate for the geometric spectrum.
    #[arg(long, default_value_t = 0.8)]
    ratio: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Norm of the planted weights.
    #[arg(long, default_value_t = 1.0)]
    w_norm: f64,
}

impl GenArgs {
    fn spec(&self, seed: u64) -> GenSpec {
        let mut spec = GenSpec::new(self.m, self.d, seed);
        spec.spectrum = match self.spectrum {
            SpectrumArg::Uniform => Spectrum::Uniform,
            SpectrumArg::Geometric => Spectrum::Geometric { ratio: self.ratio },
        };
        spec.noise = self.noise;
        spec.w_true_norm = self.w_norm;
        spec
    }
}

#[derive(Args, Debug)]
struct ProblemArgs {
    /// Sparse text dataset (`label idx:val ...`); synthetic data otherwise.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Rescale features and labels into the unit ball.
    #[arg(long, requires = "data")]
    normalize: bool,
    #[command(flatten)]
    gen: GenArgs,
    /// Seed of the synthetic data (defaults to --seed).
    #[arg(long)]
    data_seed: Option<u64>,
    /// Ridge regularization added to every loss.
    #[arg(long, default_value_t = 0.01)]
    lambda_hat: f64,
}

impl ProblemArgs {
    fn config(&self, seed: u64) -> ProblemConfig {
        let data = match &self.data {
            Some(path) => DataSource::File {
                path: path.clone(),
                normalize: self.normalize,
            },
            None => DataSource::Synthetic {
                spec: self.gen.spec(self.data_seed.unwrap_or(seed)),
            },
        };
        ProblemConfig {
            data,
            lambda_hat: self.lambda_hat,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SamplerArg {
    #[value(alias = "iid")]
    WithReplacement,
    #[value(alias = "no-replacement", alias = "without-replacement")]
    SingleShuffle,
    #[value(alias = "reshuffle")]
    ReshufflePerEpoch,
}

impl From<SamplerArg> for SamplerKind {
    fn from(s: SamplerArg) -> Self {
        match s {
            SamplerArg::WithReplacement => SamplerKind::WithReplacement,
            SamplerArg::SingleShuffle => SamplerKind::SingleShuffle,
            SamplerArg::ReshufflePerEpoch => SamplerKind::ReshufflePerEpoch,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StepArg {
    /// 2 / (lambda t)
    StronglyConvex,
    /// constant --eta
    Fixed,
    /// --eta / sqrt(t)
    InverseSqrt,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AveragingArg {
    Uniform,
    Suffix,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OutputArg {
    Average,
    RandomIterate,
}

impl From<OutputArg> for EpochOutput {
    fn from(o: OutputArg) -> Self {
        match o {
            OutputArg::Average => EpochOutput::Average,
            OutputArg::RandomIterate => EpochOutput::RandomIterate,
        }
    }
}

#[derive(Args, Debug)]
struct SgdArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, value_enum, default_value = "single-shuffle")]
    sampler: SamplerArg,
    /// Step-size rule.
    #[arg(long, value_enum, default_value = "strongly-convex")]
    steps: StepArg,
    /// Step size (fixed) or its scale (inverse-sqrt).
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    /// Iterations (defaults to m).
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    /// Projection radius (defaults to max(1/sqrt(lambda), 2 ||w*||)).
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long, value_enum, default_value = "uniform")]
    averaging: AveragingArg,
    /// Record every k-th iteration (and the last).
    #[arg(long, default_value_t = 1)]
    every: usize,
}

#[derive(Args, Debug)]
struct SvrgArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, value_enum, default_value = "reshuffle-per-epoch")]
    sampler: SamplerArg,
    #[arg(long, conflicts_with = "auto_params")]
    eta: Option<f64>,
    /// Inner steps per epoch (defaults to m).
    #[arg(long = "T", conflicts_with = "auto_params")]
    t: Option<usize>,
    /// Epochs.
    #[arg(long = "S", conflicts_with = "auto_params")]
    s: Option<usize>,
    /// Derive eta, T and S from --eps and --c.
    #[arg(long)]
    auto_params: bool,
    /// Target suboptimality for --auto-params.
    #[arg(long, default_value_t = 0.01)]
    eps: f64,
    /// Step-size constant for --auto-params (eta = 1/c).
    #[arg(long, default_value_t = 10.0)]
    c: f64,
    #[arg(long, value_enum, default_value = "average")]
    output: OutputArg,
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    /// Do not abort when an iterate exceeds the uniform safety bound.
    #[arg(long)]
    no_safety_check: bool,
}

#[derive(Args, Debug)]
struct DistArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Machine count k.
    #[arg(long, default_value_t = 4)]
    machines: usize,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    /// Batch length per epoch.
    #[arg(long = "T", default_value_t = 100)]
    t: usize,
    /// Epochs.
    #[arg(long = "S", default_value_t = 10)]
    s: usize,
    #[arg(long, value_enum, default_value = "average")]
    output: OutputArg,
    /// Compute machine-local gradients on separate threads.
    #[arg(long)]
    threaded: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Lemma {
    Key,
    Theorem1,
    RademacherLinear,
    Contraction,
    Product,
    Matrix,
    AppendixSum,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, value_enum)]
    lemma: Lemma,
    /// Problem size (for appendix-sum: the largest m scanned).
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    /// Random value rules (key).
    #[arg(long, default_value_t = 20)]
    rules: usize,
    /// Class members (contraction, product).
    #[arg(long, default_value_t = 20)]
    members: usize,
    /// Monte-Carlo samples.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Random splits (matrix).
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// Confidence parameter (matrix).
    #[arg(long, default_value_t = 12.0)]
    alpha: f64,
    /// Shift added to the second moment (matrix).
    #[arg(long, default_value_t = 0.01)]
    shift: f64,
}

#[derive(Args, Debug)]
struct RademacherArgs {
    /// Points from a sparse text dataset; random unit vectors otherwise.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    normalize: bool,
    #[arg(long, default_value_t = 100)]
    m: usize,
    #[arg(long, default_value_t = 10)]
    d: usize,
    /// Ball radius of the weight vectors.
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    /// Split sizes (default: m/2 and the rest).
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    u: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn execute(cli: Cli) -> Result<ExitCode> {
    par::configure_threads(cli.threads);
    let (exp, default_fmt) = match cli.command {
        Command::Rerun { ref file } => {
            let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
            output::parse_result(&text)?
        }
        ref cmd => {
            let exp = resolve(cmd, cli.seed)?;
            let f = output::default_format(&exp);
            (exp, f)
        }
    };
    let format = cli.format.unwrap_or(default_fmt);
    eprintln!("config: {}", serde_json::to_string(&exp)?);
    eprintln!("seed: {}", exp.seed());

    let report = experiment::run(&exp)?;
    let text = output::render(&exp, &report, format)?;
    match &cli.out {
        Some(path) => fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    for note in &report.notes {
        eprintln!("{}: {note}", exp.name());
    }
    if report.passed == Some(false) {
        eprintln!("{}: check FAILED", exp.name());
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

/// Turns parsed flags into a fully specified experiment.
fn resolve(cmd: &Command, seed: u64) -> Result<Experiment> {
    Ok(match cmd {
        Command::Gen(g) => Experiment::Gen { spec: g.spec(seed) },
        Command::Sgd(a) => {
            let problem = a.problem.config(seed);
            let p = problem.build()?;
            let lambda = p.strong_convexity();
            let rule = match a.steps {
                StepArg::StronglyConvex => StepRule::StronglyConvex { lambda },
                StepArg::Fixed => StepRule::Fixed { eta: a.eta },
                StepArg::InverseSqrt => StepRule::InverseSqrt { eta0: a.eta },
            };
            let radius = match a.radius {
                Some(r) => r,
                None => (1.0 / lambda.sqrt()).max(2.0 * linalg::norm(&p.optimum()?.w)),
            };
            let steps = a.t.unwrap_or(p.m());
            let mut sgd = SgdConfig::new(steps, rule, radius, a.sampler.into(), seed);
            sgd.averaging = match a.averaging {
                AveragingArg::Uniform => Averaging::Uniform,
                AveragingArg::Suffix => Averaging::Suffix,
            };
            if a.every == 0 {
                bail!("--every must be >= 1");
            }
            if a.every > 1 {
                let mut grid: Vec<usize> = (a.every..=steps).step_by(a.every).collect();
                if grid.last() != Some(&steps) {
                    grid.push(steps);
                }
                sgd.record = Record::At(grid);
            }
            Experiment::Sgd {
                problem,
                sgd,
                seeds: a.seeds,
            }
        }
        Command::Svrg(a) => {
            let problem = a.problem.config(seed);
            let p = problem.build()?;
            let mut sampler: SamplerKind = a.sampler.into();
            let (eta, epoch_len, epochs) = if a.auto_params {
                // A sample-size shortfall is logged as a warning by the library.
                let rec = svrg::recommended_params(&p, a.eps, a.c)?;
                if sampler == SamplerKind::SingleShuffle && rec.epochs * rec.epoch_len > p.m() {
                    warn!(
                        "S*T = {} exceeds m = {}; using reshuffle-per-epoch sampling",
                        rec.epochs * rec.epoch_len,
                        p.m()
                    );
                    sampler = SamplerKind::ReshufflePerEpoch;
                }
                eprintln!(
                    "auto-params: eta = {}, T = {}, S = {}",
                    rec.eta, rec.epoch_len, rec.epochs
                );
                (rec.eta, rec.epoch_len, rec.epochs)
            } else {
                (a.eta.unwrap_or(0.1), a.t.unwrap_or(p.m()), a.s.unwrap_or(10))
            };
            let mut svrg = SvrgConfig::new(eta, epoch_len, epochs, sampler, seed);
            svrg.epoch_output = a.output.into();
            svrg.check_safety_bound = !a.no_safety_check;
            svrg.validate(p.m())?;
            Experiment::Svrg {
                problem,
                svrg,
                seeds: a.seeds,
            }
        }
        Command::Dist(a) => {
            let mut svrg = SvrgConfig::new(a.eta, a.t, a.s, SamplerKind::SingleShuffle, seed);
            svrg.epoch_output = a.output.into();
            Experiment::Dist {
                problem: a.problem.config(seed),
                dist: DistConfig {
                    machines: a.machines,
                    svrg,
                    threaded: a.threaded,
                },
            }
        }
        Command::Verify(a) => {
            let check = match a.lemma {
                Lemma::Key => Check::Key {
                    m: a.m.unwrap_or(5),
                    rules: a.rules,
                    seed,
                },
                Lemma::Theorem1 => Check::Theorem1 {
                    m: a.m.unwrap_or(5),
                    d: a.d.unwrap_or(3),
                    seed,
                },
                Lemma::RademacherLinear => Check::RademacherLinear {
                    m: a.m.unwrap_or(100),
                    d: a.d.unwrap_or(10),
                    samples: a.samples,
                    seed,
                },
                Lemma::Contraction => Check::Contraction {
                    m: a.m.unwrap_or(20),
                    members: a.members,
                    samples: a.samples,
                    seed,
                },
                Lemma::Product => Check::Product {
                    m: a.m.unwrap_or(20),
                    members: a.members,
                    samples: a.samples,
                    seed,
                },
                Lemma::Matrix => Check::Matrix {
                    m: a.m.unwrap_or(100),
                    d: a.d.unwrap_or(5),
                    shift: a.shift,
                    alpha: a.alpha,
                    trials: a.trials,
                    seed,
                },
                Lemma::AppendixSum => Check::AppendixSum {
                    m_max: a.m.unwrap_or(2000),
                },
            };
            Experiment::Verify { check }
        }
        Command::Rademacher(a) => {
            let points = match &a.data {
                Some(path) => PointSource::File {
                    path: path.clone(),
                    normalize: a.normalize,
                },
                None => PointSource::UnitVectors { m: a.m, d: a.d, seed },
            };
            let m = match &points {
                PointSource::File { .. } => experiment::point_count(&points)?,
                PointSource::UnitVectors { m, .. } => *m,
            };
            let s = a.s.unwrap_or((m / 2).max(1));
            let u = a.u.unwrap_or(m.saturating_sub(s));
            Experiment::Rademacher {
                points,
                radius: a.radius,
                s,
                u,
                samples: a.samples,
                seed,
            }
        }
        Command::Rerun { .. } => unreachable!("handled by the caller"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn sgd_flags_resolve() {
        let cli = Cli::try_parse_from([
            "noreplace",
            "sgd",
            "--m",
            "50",
            "--d",
            "3",
            "--sampler",
            "no-replacement",
            "--T",
            "40",
            "--seeds",
            "2",
            "--seed",
            "7",
        ])
        .unwrap();
        let exp = resolve(&cli.command, cli.seed).unwrap();
        let Experiment::Sgd { sgd, seeds, .. } = exp else {
            panic!("wrong command")
        };
        assert_eq!(sgd.steps, 40);
        assert_eq!(sgd.seed, 7);
        assert_eq!(sgd.sampler, SamplerKind::SingleShuffle);
        assert_eq!(seeds, 2);
    }

    #[test]
    fn auto_params_conflict_with_explicit_eta() {
        assert!(Cli::try_parse_from(["noreplace", "svrg", "--auto-params", "--eta", "0.1"]).is_err());
    }

    #[test]
    fn every_builds_grid_ending_at_t() {
        let cli = Cli::try_parse_from([
            "noreplace",
            "sgd",
            "--m",
            "30",
            "--d",
            "2",
            "--T",
            "25",
            "--every",
            "10",
        ])
        .unwrap();
        let Experiment::Sgd { sgd, .. } = resolve(&cli.command, cli.seed).unwrap() else {
            panic!()
        };
        assert_eq!(sgd.record, Record::At(vec![10, 20, 25]));
    }
}
