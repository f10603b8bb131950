//! Numeric scan of the elementary inequality
//!
//! ```text
//! (1/(mT)) sum_{t=2..T} (t-1) (1/sqrt(t-1) + 1/sqrt(m-t+1)) <= 2/sqrt(m),   1 <= T <= m.
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// The left-hand side for one `(m, T)`; zero for `T = 1`.
pub fn appendix_sum_value(m: usize, big_t: usize) -> f64 {
    assert!(big_t >= 1 && big_t <= m, "need 1 <= T <= m");
    let acc: f64 = (2..=big_t).map(|t| term(m, t)).sum();
    acc / (m as f64 * big_t as f64)
}

#[inline]
fn term(m: usize, t: usize) -> f64 {
    let k = (t - 1) as f64;
    k * (1.0 / k.sqrt() + 1.0 / ((m - t + 1) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppendixScan {
    /// Largest `value / (2/sqrt(m))` over the scan.
    pub worst_ratio: f64,
    pub worst_m: usize,
    pub worst_t: usize,
    pub pairs: usize,
}

/// Scans every `2 <= m <= m_max` and `1 <= T <= m`, with running sums so each
/// `m` costs `O(m)`.
pub fn appendix_sum_check(m_max: usize) -> Result<AppendixScan> {
    if m_max < 2 {
        return Err(Error::invalid("need m_max >= 2"));
    }
    let per_m = par::map_indexed(m_max - 1, |k| {
        let m = k + 2;
        let scale = (m as f64).sqrt() / 2.0;
        let mut acc = 0.0;
        let mut best = (0.0f64, 1usize);
        for big_t in 2..=m {
            acc += term(m, big_t);
            let ratio = acc / (m as f64 * big_t as f64) * scale;
            if ratio > best.0 {
                best = (ratio, big_t);
            }
        }
        (best.0, m, best.1)
    });
    let mut scan = AppendixScan {
        worst_ratio: 0.0,
        worst_m: 2,
        worst_t: 1,
        pairs: (2..=m_max).sum(),
    };
    for (ratio, m, t) in per_m {
        if ratio > scan.worst_ratio {
            scan.worst_ratio = ratio;
            scan.worst_m = m;
            scan.worst_t = t;
        }
    }
    Ok(scan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn four_by_four() {
        let direct = (1.0 + 1.0 / 3f64.sqrt() + 2.0 * (2.0 / 2f64.sqrt()) + 3.0 * (1.0 / 3f64.sqrt() + 1.0)) / 16.0;
        assert_relative_eq!(appendix_sum_value(4, 4), direct, epsilon = 1e-15);
        assert!((appendix_sum_value(4, 4) - 0.5711).abs() < 1e-4);
    }

    #[test]
    fn single_step_is_empty() {
        assert_eq!(appendix_sum_value(7, 1), 0.0);
    }

    #[test]
    fn scan_agrees_with_direct_evaluation() {
        let scan = appendix_sum_check(60).unwrap();
        let mut worst: f64 = 0.0;
        for m in 2..=60 {
            for t in 1..=m {
                worst = worst.max(appendix_sum_value(m, t) * (m as f64).sqrt() / 2.0);
            }
        }
        assert_relative_eq!(scan.worst_ratio, worst, max_relative = 1e-12);
        assert!(scan.worst_ratio <= 1.0);
        assert!(appendix_sum_check(1).is_err());
    }
}
