//! Monte-Carlo estimates of the transductive Rademacher complexity
//!
//! ```text
//! R_{s,u}(V) = (1/s + 1/u) E[sup_{v in V} sum_i r_i v_i]
//! ```
//!
//! with independent `r_i` equal to `+1` or `-1` with probability
//! `p = su/(s+u)^2` each and `0` otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::par;
use crate::rng::CounterRng;

/// Samples per Monte-Carlo block.
pub const MC_BLOCK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FunctionClass {
    /// Explicit members, each an `m`-vector.
    FiniteSet(Vec<Vec<f64>>),
    /// `{(<w, x_1>, ..., <w, x_m>) : ||w|| <= radius}`.
    LinearBall { x: Vec<Vec<f64>>, radius: f64 },
}

impl FunctionClass {
    pub fn m(&self) -> usize {
        match self {
            FunctionClass::FiniteSet(v) => v.first().map_or(0, Vec::len),
            FunctionClass::LinearBall { x, .. } => x.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            FunctionClass::FiniteSet(v) => {
                if v.is_empty() {
                    return Err(Error::EmptyClass);
                }
                check_members(v)
            }
            FunctionClass::LinearBall { x, radius } => {
                if x.is_empty() {
                    return Err(Error::EmptyClass);
                }
                if !(*radius >= 0.0) {
                    return Err(Error::invalid("ball radius must be >= 0"));
                }
                let d = x[0].len();
                if let Some(bad) = x.iter().find(|r| r.len() != d) {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: bad.len(),
                    });
                }
                Ok(())
            }
        }
    }

    /// `sup_{v in V} sum_i r_i v_i`, exactly.
    pub fn sup(&self, r: &[i8]) -> f64 {
        match self {
            FunctionClass::FiniteSet(v) => finite_sup(v, r),
            FunctionClass::LinearBall { x, radius } => {
                let mut acc = vec![0.0; x[0].len()];
                for (row, &ri) in x.iter().zip(r) {
                    if ri != 0 {
                        let sgn = f64::from(ri);
                        for (a, b) in acc.iter_mut().zip(row) {
                            *a += sgn * b;
                        }
                    }
                }
                radius * norm(&acc)
            }
        }
    }
}

fn check_members(v: &[Vec<f64>]) -> Result<()> {
    let m = v[0].len();
    if let Some(bad) = v.iter().find(|r| r.len() != m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: bad.len(),
        });
    }
    Ok(())
}

fn finite_sup(v: &[Vec<f64>], r: &[i8]) -> f64 {
    v.iter()
        .map(|member| member.iter().zip(r).map(|(a, &ri)| f64::from(ri) * a).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RademacherSpec {
    pub class: FunctionClass,
    pub s: usize,
    pub u: usize,
    pub samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub se: f64,
    pub p: f64,
    pub samples: usize,
}

/// Two estimators evaluated on the same `r` draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedEstimate {
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_se: f64,
    pub rhs_se: f64,
    /// Standard error of `lhs - rhs` under pairing.
    pub diff_se: f64,
    pub samples: usize,
}

impl PairedEstimate {
    /// One-sided gate `lhs <= rhs + 3 se(lhs - rhs)`.
    pub fn lhs_within(&self, n_se: f64) -> bool {
        self.lhs <= self.rhs + n_se * self.diff_se
    }
}

/// `sqrt(2) B (1/sqrt(s) + 1/sqrt(u))`, the closed-form bound for the linear
/// class over a ball of radius `B` and vectors of norm at most one.
pub fn linear_ball_bound(radius: f64, s: usize, u: usize) -> f64 {
    2f64.sqrt() * radius * (1.0 / (s as f64).sqrt() + 1.0 / (u as f64).sqrt())
}

fn split_weights(m: usize, s: usize, u: usize) -> Result<(f64, f64)> {
    if s == 0 || u == 0 || s + u != m {
        return Err(Error::invalid(format!(
            "need s, u >= 1 and s + u = m = {m}, got s = {s}, u = {u}"
        )));
    }
    let (sf, uf) = (s as f64, u as f64);
    Ok((sf * uf / ((sf + uf) * (sf + uf)), 1.0 / sf + 1.0 / uf))
}

#[inline]
fn draw_r(rng: &mut CounterRng, p: f64, r: &mut [i8]) {
    for v in r.iter_mut() {
        let x = rng.next_f64();
        *v = if x < p {
            1
        } else if x < 2.0 * p {
            -1
        } else {
            0
        };
    }
}

/// Running mean and sum of squared deviations, mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, o: Moments) -> Moments {
        if self.n == 0.0 {
            return o;
        }
        if o.n == 0.0 {
            return self;
        }
        let n = self.n + o.n;
        let delta = o.mean - self.mean;
        Moments {
            n,
            mean: self.mean + delta * o.n / n,
            m2: self.m2 + o.m2 + delta * delta * self.n * o.n / n,
        }
    }

    fn se(&self) -> f64 {
        if self.n < 2.0 {
            return f64::NAN;
        }
        (self.m2 / (self.n - 1.0) / self.n).sqrt()
    }
}

/// Runs `f` on `samples` draws of `r` and returns moments of its two outputs
/// and of their difference.
fn mc_paired<F>(m: usize, p: f64, samples: usize, seed: u64, stream: u64, f: F) -> [Moments; 3]
where
    F: Fn(&[i8]) -> (f64, f64) + Sync,
{
    let blocks = samples.div_ceil(MC_BLOCK);
    let base = CounterRng::new(seed, stream);
    let parts = par::map_indexed(blocks, |b| {
        let mut rng = base.fork(b as u64);
        let n = MC_BLOCK.min(samples - b * MC_BLOCK);
        let mut r = vec![0i8; m];
        let mut acc = [Moments::default(); 3];
        for _ in 0..n {
            draw_r(&mut rng, p, &mut r);
            let (x, y) = f(&r);
            acc[0].push(x);
            acc[1].push(y);
            acc[2].push(x - y);
        }
        acc
    });
    parts.into_iter().fold([Moments::default(); 3], |a, b| {
        [a[0].merge(b[0]), a[1].merge(b[1]), a[2].merge(b[2])]
    })
}

pub fn rademacher_estimate(spec: &RademacherSpec) -> Result<Estimate> {
    spec.class.validate()?;
    let m = spec.class.m();
    let (p, scale) = split_weights(m, spec.s, spec.u)?;
    if spec.samples == 0 {
        return Err(Error::invalid("need at least one Monte-Carlo sample"));
    }
    let [mo, _, _] = mc_paired(m, p, spec.samples, spec.seed, spec.stream, |r| (spec.class.sup(r), 0.0));
    Ok(Estimate {
        estimate: scale * mo.mean,
        se: scale * mo.se(),
        p,
        samples: spec.samples,
    })
}

/// Compares `R(g o V)` with `L R(V)` for coordinate maps `g(i, z)` that are
/// `L`-Lipschitz on the values the class takes. The Lipschitz constant is
/// checked on all member pairs before sampling.
pub fn contraction_check<G>(
    class: &[Vec<f64>],
    map: G,
    lipschitz: f64,
    s: usize,
    u: usize,
    samples: usize,
    seed: u64,
) -> Result<PairedEstimate>
where
    G: Fn(usize, f64) -> f64 + Sync,
{
    if class.is_empty() {
        return Err(Error::EmptyClass);
    }
    check_members(class)?;
    let m = class[0].len();
    for i in 0..m {
        for a in class {
            for b in class {
                let lhs = (map(i, a[i]) - map(i, b[i])).abs();
                if lhs > lipschitz * (a[i] - b[i]).abs() + 1e-12 {
                    return Err(Error::invalid(format!(
                        "map {i} is not {lipschitz}-Lipschitz on the class values"
                    )));
                }
            }
        }
    }
    let mapped: Vec<Vec<f64>> = class
        .iter()
        .map(|v| v.iter().enumerate().map(|(i, &z)| map(i, z)).collect())
        .collect();
    let (p, scale) = split_weights(m, s, u)?;
    let mo = mc_paired(m, p, samples, seed, 0, |r| {
        (finite_sup(&mapped, r), lipschitz * finite_sup(class, r))
    });
    Ok(paired(mo, scale, samples))
}

/// Compares `R(V * S)` (coordinatewise products) with
/// `B_S R(V) + B_V R(S)`, where `B` is the largest absolute coordinate.
pub fn product_class_check(
    v: &[Vec<f64>],
    s_class: &[Vec<f64>],
    s: usize,
    u: usize,
    samples: usize,
    seed: u64,
) -> Result<PairedEstimate> {
    if v.is_empty() || s_class.is_empty() {
        return Err(Error::EmptyClass);
    }
    check_members(v)?;
    check_members(s_class)?;
    let m = v[0].len();
    if s_class[0].len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: s_class[0].len(),
        });
    }
    let bound = |c: &[Vec<f64>]| c.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs()));
    let (b_v, b_s) = (bound(v), bound(s_class));
    let product: Vec<Vec<f64>> = v
        .iter()
        .flat_map(|a| {
            s_class
                .iter()
                .map(move |b| a.iter().zip(b).map(|(x, y)| x * y).collect())
        })
        .collect();
    let (p, scale) = split_weights(m, s, u)?;
    let mo = mc_paired(m, p, samples, seed, 0, |r| {
        (
            finite_sup(&product, r),
            b_s * finite_sup(v, r) + b_v * finite_sup(s_class, r),
        )
    });
    Ok(paired(mo, scale, samples))
}

fn paired(mo: [Moments; 3], scale: f64, samples: usize) -> PairedEstimate {
    PairedEstimate {
        lhs: scale * mo[0].mean,
        rhs: scale * mo[1].mean,
        lhs_se: scale * mo[0].se(),
        rhs_se: scale * mo[1].se(),
        diff_se: scale * mo[2].se(),
        samples,
    }
}
