//! Exhaustive check of the prefix/suffix identity for values that may depend
//! on the already-visited prefix of a random permutation.
//!
//! For values `s_1..s_m` fixed once `sigma(1..t-1)` is known,
//!
//! ```text
//! E[(1/m) sum_i s_i - s_sigma(t)] = ((t-1)/m) E[s_{1:t-1} - s_{t:m}]
//! ```
//!
//! where `s_{a:b}` averages `s` over positions `a..b` of the permutation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{mix64, CounterRng};
use crate::sampling;

/// Largest `m` accepted by [`key_lemma_check`].
pub const MAX_KEY_LEMMA_M: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyLemma {
    pub lhs: f64,
    pub rhs: f64,
}

impl KeyLemma {
    pub fn gap(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

/// `rule(prefix, i)` gives `s_i` after the positions in `prefix` (length
/// `t - 1`) have been revealed. Both sides are exact averages over all `m!`
/// permutations.
pub fn key_lemma_check<F>(m: usize, t: usize, rule: F) -> Result<KeyLemma>
where
    F: Fn(&[usize], usize) -> f64,
{
    if m > MAX_KEY_LEMMA_M {
        return Err(Error::EnumerationTooLarge {
            m,
            max: MAX_KEY_LEMMA_M,
        });
    }
    if m == 0 || t == 0 || t > m {
        return Err(Error::invalid(format!("need 1 <= t <= m, got t = {t}, m = {m}")));
    }
    let mf = m as f64;
    let mut s = vec![0.0; m];
    let (mut lhs, mut rhs, mut count) = (0.0, 0.0, 0usize);
    for order in sampling::enumerate_permutations(m)? {
        let prefix = &order[..t - 1];
        for (i, v) in s.iter_mut().enumerate() {
            *v = rule(prefix, i);
        }
        let mean = s.iter().sum::<f64>() / mf;
        lhs += mean - s[order[t - 1]];
        if t > 1 {
            let seen = prefix.iter().map(|&i| s[i]).sum::<f64>() / (t - 1) as f64;
            let unseen = order[t - 1..].iter().map(|&i| s[i]).sum::<f64>() / (m - t + 1) as f64;
            rhs += seen - unseen;
        }
        count += 1;
    }
    let n = count as f64;
    Ok(KeyLemma {
        lhs: lhs / n,
        rhs: (t - 1) as f64 / mf * rhs / n,
    })
}

/// A pseudo-random value rule: `s_i` is a uniform draw in `[-1, 1)` keyed by
/// `(seed, prefix, i)`, so it depends arbitrarily on the revealed prefix
/// (order included).
pub fn hashed_rule(seed: u64) -> impl Fn(&[usize], usize) -> f64 {
    move |prefix: &[usize], i: usize| {
        let mut h = mix64(seed ^ 0xA076_1D64_78BD_642F);
        for &j in prefix {
            h = mix64(h ^ (j as u64 + 1));
        }
        let mut rng = CounterRng::new(h, i as u64);
        2.0 * rng.next_f64() - 1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_values_give_zero() {
        let vals = [1.0, 2.0, 3.0];
        let r = key_lemma_check(3, 2, |_, i| vals[i]).unwrap();
        assert!(r.lhs.abs() < 1e-15);
        assert!(r.rhs.abs() < 1e-15);
    }

    #[test]
    fn first_position_is_exactly_zero() {
        let r = key_lemma_check(5, 1, hashed_rule(3)).unwrap();
        assert!(r.lhs.abs() < 1e-15);
        assert_eq!(r.rhs, 0.0);
    }

    #[test]
    fn adaptive_rules_satisfy_identity() {
        for seed in 0..5 {
            for m in 2..=5 {
                for t in 1..=m {
                    let r = key_lemma_check(m, t, hashed_rule(seed)).unwrap();
                    assert!(r.gap() <= 1e-12, "m={m} t={t} {r:?}");
                }
            }
        }
    }

    #[test]
    fn prefix_dependent_spike() {
        let r = key_lemma_check(3, 2, |prefix, i| if prefix == [0] && i == 1 { 5.0 } else { 0.0 }).unwrap();
        assert!(r.gap() <= 1e-12);
    }

    #[test]
    fn argument_errors() {
        assert!(matches!(
            key_lemma_check(9, 1, |_, _| 0.0),
            Err(Error::EnumerationTooLarge { .. })
        ));
        assert!(key_lemma_check(3, 0, |_, _| 0.0).is_err());
        assert!(key_lemma_check(3, 4, |_, _| 0.0).is_err());
    }
}
