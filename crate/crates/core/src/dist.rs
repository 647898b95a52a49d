//! Log-space probability primitives.
//!
//! Everything that feeds a log-weight goes through here so the
//! `0 log 0 == 0` convention is applied in exactly one place. Factorials are
//! always log-gamma based, never integer factorials, so populations up to
//! 10^7 and beyond are fine.

use crate::types::TypeError;
use rand::Rng;
use statrs::distribution::{Binomial, DiscreteCDF};
use statrs::function::factorial::ln_factorial;

/// `x * ln(y)` with the convention that `x == 0` yields 0 even when `y == 0`.
#[inline]
pub fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// `log(k!)` via log-gamma.
#[inline]
pub fn log_factorial(k: u64) -> f64 {
    ln_factorial(k)
}

/// Log multinomial coefficient `log(n! / (c_1! ... c_m! (n - sum c)!))`.
///
/// The residual category `n - sum(counts)` is implicit, so `counts` may sum
/// to anything up to `n`.
pub fn log_multinomial_coeff(n: u64, counts: &[u64]) -> Result<f64, TypeError> {
    let total: u64 = counts.iter().sum();
    if total > n {
        return Err(TypeError::CountExceedsPopulation { total, n });
    }
    let mut out = log_factorial(n) - log_factorial(n - total);
    for &c in counts {
        out -= log_factorial(c);
    }
    Ok(out)
}

/// Log pmf of `Bin(n, p)` at `k`, with exact handling of `p` in `{0, 1}`.
pub fn binomial_log_pmf(k: u64, n: u64, p: f64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    if p <= 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if p >= 1.0 {
        return if k == n { 0.0 } else { f64::NEG_INFINITY };
    }
    log_factorial(n) - log_factorial(k) - log_factorial(n - k)
        + k as f64 * p.ln()
        + (n - k) as f64 * (1.0 - p).ln()
}

/// Log pmf of `Mult(n, probs)` at `counts` (which must sum to `n`).
pub fn multinomial_log_pmf(counts: &[u64], probs: &[f64]) -> f64 {
    debug_assert_eq!(counts.len(), probs.len());
    let n: u64 = counts.iter().sum();
    let mut out = log_factorial(n);
    for (&c, &p) in counts.iter().zip(probs) {
        if c == 0 {
            continue;
        }
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        out += c as f64 * p.ln() - log_factorial(c);
    }
    out
}

/// CDF of `Bin(n, p)` at `k`.
pub fn binomial_cdf(k: u64, n: u64, p: f64) -> f64 {
    if p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return if k >= n { 1.0 } else { 0.0 };
    }
    if n == 0 {
        return 1.0;
    }
    // statrs wants (p, n)
    let b = Binomial::new(p, n).expect("validated binomial parameters");
    b.cdf(k)
}

/// Smallest `k` with `P(X <= k) >= prob` for `X ~ Bin(n, p)`.
///
/// Exact binary search over the support; no normal approximation, since
/// `n * p` can be tiny early in an epidemic.
pub fn binomial_quantile(prob: f64, n: u64, p: f64) -> u64 {
    debug_assert!((0.0..=1.0).contains(&prob));
    if p <= 0.0 || n == 0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    if prob <= 0.0 {
        return 0;
    }
    let (mut lo, mut hi) = (0u64, n);
    if binomial_cdf(lo, n, p) >= prob {
        return lo;
    }
    // invariant: cdf(lo) < prob <= cdf(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if binomial_cdf(mid, n, p) >= prob {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Draw from `Bin(n, p)`.
pub fn sample_binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    let d = rand_distr::Binomial::new(n, p).expect("validated binomial parameters");
    rng.sample(d)
}

/// Draw from `Mult(n, probs)` by chained binomials.
///
/// `probs` need not be exactly normalized; the chain conditions on the
/// remaining mass at every step, so small drift is absorbed.
pub fn sample_multinomial<R: Rng + ?Sized>(rng: &mut R, n: u64, probs: &[f64]) -> Vec<u64> {
    let m = probs.len();
    let mut out = vec![0u64; m];
    let mut remaining = n;
    let mut mass_left: f64 = probs.iter().sum();
    for i in 0..m {
        if remaining == 0 {
            break;
        }
        if i == m - 1 {
            out[i] = remaining;
            break;
        }
        let p = if mass_left > 0.0 {
            (probs[i] / mass_left).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let draw = sample_binomial(rng, remaining, p);
        out[i] = draw;
        remaining -= draw;
        mass_left -= probs[i];
    }
    out
}
