//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn choose(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    (1..=k).fold(1.0, |acc, j| acc * f64::from(n - k + j) / f64::from(j))
}

/// Binomial(n, p) mass at k by the textbook formula.
pub fn binomial_pmf(n: u32, k: u32, p: f64) -> f64 {
    choose(n, k) * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}

/// Probability of `total` cumulative infections after `d` generations,
/// summing over every vector in `{0..=s0}^d` scored by the product of
/// one-generation binomial transitions. Impossible vectors score zero on
/// their own, so no composition logic is involved.
pub fn brute_force_incomplete(total: u32, s0: u32, i0: u32, sar: f64, d: u32) -> f64 {
    let mut sum = 0.0;
    let mut v = vec![0u32; d as usize];
    loop {
        if v.iter().sum::<u32>() == total {
            let mut s = s0 as i64;
            let mut infectious = i0;
            let mut p = 1.0;
            for &c in &v {
                if i64::from(c) > s {
                    p = 0.0;
                    break;
                }
                let pi = 1.0 - (1.0 - sar).powi(infectious as i32);
                p *= binomial_pmf(s as u32, c, pi);
                s -= i64::from(c);
                infectious = c;
            }
            sum += p;
        }
        // odometer over {0..=s0}^d
        let mut k = 0;
        loop {
            if k == v.len() {
                return sum;
            }
            if v[k] < s0 {
                v[k] += 1;
                break;
            }
            v[k] = 0;
            k += 1;
        }
    }
}

/// Pearson chi-square goodness-of-fit p-value. Cells with expected count
/// below 5 are pooled; zero-probability cells must be empty.
pub fn chisq_gof_pvalue(observed: &[usize], probs: &[f64]) -> f64 {
    let n: usize = observed.iter().sum();
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut pool = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        let e = p * n as f64;
        if p == 0.0 {
            assert_eq!(o, 0, "observed count in an impossible cell");
            continue;
        }
        if e < 5.0 {
            pool.0 += o as f64;
            pool.1 += e;
        } else {
            bins.push((o as f64, e));
        }
    }
    if pool.1 > 0.0 {
        if pool.1 >= 5.0 || bins.is_empty() {
            bins.push(pool);
        } else {
            let last = bins.last_mut().unwrap();
            last.0 += pool.0;
            last.1 += pool.1;
        }
    }
    if bins.len() < 2 {
        return 1.0;
    }
    let stat: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dist = ChiSquared::new((bins.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}
