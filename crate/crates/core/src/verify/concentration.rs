//! Prefix/suffix concentration of whitened rank-one matrices.
//!
//! With `A = Xbar + gamma_hat I` and `M_i = A^{-1/2} x_i x_i^T A^{-1/2}`, a
//! random permutation splits the `M_i` into a prefix of length `s` and the
//! remaining suffix. The deviation
//!
//! ```text
//! || (1/s) sum_{i<=s} M_sigma(i) - (1/(m-s)) sum_{i>s} M_sigma(i) ||
//! ```
//!
//! should stay below `(a/sqrt(g))(1/sqrt(s) + 1/sqrt(m-s)) + (a/g)(1/s + 1/(m-s))`
//! for every `s` except with probability at most `4 d m exp(-a/2)`, where `g`
//! is the smallest eigenvalue of `A` and `a` is the confidence parameter.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::par;
use crate::rng::CounterRng;
use crate::sampling;

/// Eigenvalue floor of the inverse square root.
pub const INV_SQRT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationSpec {
    /// Data vectors, norms at most one.
    pub x: Vec<Vec<f64>>,
    /// Shift `gamma_hat >= 0` added to the second moment.
    pub shift: f64,
    /// Confidence parameter, `>= 2`.
    pub alpha: f64,
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    /// Smallest eigenvalue of `Xbar + gamma_hat I`.
    pub gamma: f64,
    pub gamma_hat: f64,
    /// Trials in which some split exceeded its threshold.
    pub violations: usize,
    pub violation_rate: f64,
    /// `4 d m exp(-alpha/2)`.
    pub failure_bound: f64,
    /// Entry `s - 1`: largest deviation over trials at split `s`.
    pub max_deviation: Vec<f64>,
    /// Entry `s - 1`: the threshold at split `s`.
    pub threshold: Vec<f64>,
}

impl ConcentrationReport {
    /// Largest deviation at the balanced split `s = floor(m/2)`.
    pub fn balanced_deviation(&self) -> f64 {
        let m = self.max_deviation.len() + 1;
        self.max_deviation[m / 2 - 1]
    }
}

/// Whitened summands and the constants they depend on.
#[derive(Debug, Clone)]
pub struct Whitened {
    pub gamma: f64,
    /// `A^{-1/2}`.
    pub inv_sqrt: DMatrix<f64>,
    /// `u_i = A^{-1/2} x_i`, so `M_i = u_i u_i^T`.
    pub u: Vec<DVector<f64>>,
}

impl Whitened {
    /// `(1/m) sum_i M_i`.
    pub fn mean_summand(&self) -> DMatrix<f64> {
        let d = self.inv_sqrt.nrows();
        let mut acc = DMatrix::zeros(d, d);
        for u in &self.u {
            acc.ger(1.0, u, u, 1.0);
        }
        acc / self.u.len() as f64
    }
}

pub fn whiten(x: &[Vec<f64>], shift: f64) -> Result<Whitened> {
    let m = x.len();
    if m == 0 {
        return Err(Error::invalid("need at least one data vector"));
    }
    if !(shift >= 0.0) {
        return Err(Error::invalid("shift must be >= 0"));
    }
    let d = x[0].len();
    let mut moment = DMatrix::<f64>::zeros(d, d);
    for row in x {
        if row.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: row.len(),
            });
        }
        if linalg::norm(row) > 1.0 + 1e-12 {
            return Err(Error::InvalidDataset("data vectors must have norm <= 1".into()));
        }
        let v = DVector::from_column_slice(row);
        moment.ger(1.0 / m as f64, &v, &v, 1.0);
    }
    let a = moment + DMatrix::identity(d, d) * shift;
    let gamma = linalg::sym_eigenvalues(&a)[0];
    if !(gamma > 0.0) {
        return Err(Error::SingularShift { gamma });
    }
    let inv_sqrt = linalg::inverse_sqrt_psd(&a, INV_SQRT_FLOOR);
    let u = x
        .iter()
        .map(|row| &inv_sqrt * DVector::from_column_slice(row))
        .collect();
    Ok(Whitened { gamma, inv_sqrt, u })
}

pub fn threshold(alpha: f64, gamma: f64, m: usize, s: usize) -> f64 {
    let (sf, rf) = (s as f64, (m - s) as f64);
    alpha / gamma.sqrt() * (1.0 / sf.sqrt() + 1.0 / rf.sqrt()) + alpha / gamma * (1.0 / sf + 1.0 / rf)
}

pub fn matrix_concentration_check(spec: &ConcentrationSpec) -> Result<ConcentrationReport> {
    let m = spec.x.len();
    if m < 2 {
        return Err(Error::invalid("need m >= 2"));
    }
    if !(spec.alpha >= 2.0) {
        return Err(Error::invalid(format!("alpha must be >= 2, got {}", spec.alpha)));
    }
    if spec.trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    let w = whiten(&spec.x, spec.shift)?;
    let d = w.inv_sqrt.nrows();
    let thresholds: Vec<f64> = (1..m).map(|s| threshold(spec.alpha, w.gamma, m, s)).collect();
    let mut total = DMatrix::<f64>::zeros(d, d);
    for u in &w.u {
        total.ger(1.0, u, u, 1.0);
    }

    let base = CounterRng::new(spec.seed, spec.stream);
    let per_trial = par::try_map_indexed(spec.trials, |trial| -> Result<(bool, Vec<f64>)> {
        let mut rng = base.fork(trial as u64);
        let order = sampling::shuffle(m, &mut rng)?.into_vec();
        let mut prefix = DMatrix::<f64>::zeros(d, d);
        let mut dev = Vec::with_capacity(m - 1);
        let mut violated = false;
        for s in 1..m {
            let u = &w.u[order[s - 1]];
            prefix.ger(1.0, u, u, 1.0);
            let mut diff = &prefix / s as f64 - (&total - &prefix) / (m - s) as f64;
            linalg::symmetrize(&mut diff);
            let n = linalg::sym_spectral_norm(&diff);
            violated |= n > thresholds[s - 1];
            dev.push(n);
        }
        Ok((violated, dev))
    })?;

    let mut max_deviation = vec![0.0f64; m - 1];
    let mut violations = 0;
    for (v, dev) in &per_trial {
        violations += usize::from(*v);
        for (a, b) in max_deviation.iter_mut().zip(dev) {
            *a = a.max(*b);
        }
    }
    Ok(ConcentrationReport {
        gamma: w.gamma,
        gamma_hat: spec.shift,
        violations,
        violation_rate: violations as f64 / spec.trials as f64,
        failure_bound: 4.0 * d as f64 * m as f64 * (-spec.alpha / 2.0).exp(),
        max_deviation,
        threshold: thresholds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn vectors(m: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = CounterRng::new(seed, 4);
        (0..m)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| rng.next_f64() - 0.5).collect();
                let n = linalg::norm(&v);
                let r = rng.next_f64();
                v.iter().map(|x| x / n * r).collect()
            })
            .collect()
    }

    #[test]
    fn identical_summands_never_deviate() {
        let spec = ConcentrationSpec {
            x: vec![vec![1.0]; 10],
            shift: 0.0,
            alpha: 2.0,
            trials: 20,
            seed: 1,
            stream: 0,
        };
        let r = matrix_concentration_check(&spec).unwrap();
        assert_relative_eq!(r.gamma, 1.0, epsilon = 1e-15);
        assert!(r.max_deviation.iter().all(|&x| x <= 1e-12));
        assert_eq!(r.violations, 0);
    }

    #[test]
    fn mean_summand_is_whitened_moment() {
        let x = vectors(60, 4, 2);
        let w = whiten(&x, 0.05).unwrap();
        let mut moment = DMatrix::<f64>::zeros(4, 4);
        for row in &x {
            let v = DVector::from_column_slice(row);
            moment += &v * v.transpose() / 60.0;
        }
        let expected = &w.inv_sqrt * moment * &w.inv_sqrt;
        let got = w.mean_summand();
        assert!((got.clone() - expected).abs().max() <= 1e-10);
        assert!(linalg::sym_spectral_norm(&got) <= 1.0 + 1e-12);
    }

    #[test]
    fn singular_shift_rejected() {
        let spec = ConcentrationSpec {
            x: vec![vec![1.0, 0.0]; 4],
            shift: 0.0,
            alpha: 4.0,
            trials: 1,
            seed: 0,
            stream: 0,
        };
        assert!(matches!(
            matrix_concentration_check(&spec),
            Err(Error::SingularShift { .. })
        ));
    }

    #[test]
    fn random_data_within_threshold() {
        let spec = ConcentrationSpec {
            x: vectors(80, 3, 3),
            shift: 0.05,
            alpha: 12.0,
            trials: 50,
            seed: 3,
            stream: 0,
        };
        let r = matrix_concentration_check(&spec).unwrap();
        assert!(r.gamma > 0.0 && r.gamma < 1.0);
        assert_eq!(r.violations, 0);
        assert_eq!(r.max_deviation.len(), 79);
        assert!(r.violation_rate <= r.failure_bound.min(1.0));
        assert!(r.balanced_deviation() > 0.0);
    }

    #[test]
    fn threshold_is_symmetric_in_split() {
        assert_relative_eq!(
            threshold(12.0, 0.1, 100, 30),
            threshold(12.0, 0.1, 100, 70),
            epsilon = 1e-12
        );
    }
}
