//! Same-source test for two traces of long uniform random strings.
//!
//! Both traces are cut into blocks of width `w` separated by gaps of width
//! `w`. For traces of one source the block sums are strongly correlated, so
//! the squared differences are small; for independent sources each squared
//! difference has mean about w/2. Medians of group sums make the statistic
//! robust to the occasional badly shifted block.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::channels::{binomial_draw, RetentionMap};
use crate::error::{Error, Result};
use crate::estimators::lower_median;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    /// Block width.
    pub w: usize,
    /// Blocks per group.
    pub g: usize,
    /// "Same" iff D < factor * g * w / 2.
    pub factor: f64,
    /// Number of groups to use; all full groups when `None`.
    pub groups: Option<usize>,
}

pub const ASYMPTOTIC_CW: f64 = 100.0;
pub const ASYMPTOTIC_CG: f64 = 96.0;

impl OracleParams {
    /// w = c_w n^(1/4) sqrt(ln n / q), g = c_g / q^2, factor 1 - q/4, where
    /// n is the number of cells (strings have length sqrt(n)).
    pub fn with_constants(n: usize, q: f64, c_w: f64, c_g: f64) -> Self {
        let nf = n.max(2) as f64;
        Self {
            w: ((c_w * nf.powf(0.25) * (nf.ln() / q).sqrt()).round() as usize).max(1),
            g: ((c_g / (q * q)).ceil() as usize).max(1),
            factor: 1.0 - q / 4.0,
            groups: None,
        }
    }

    pub fn asymptotic(n: usize, q: f64) -> Self {
        Self::with_constants(n, q, ASYMPTOTIC_CW, ASYMPTOTIC_CG)
    }

    pub fn threshold(&self) -> f64 {
        self.factor * self.g as f64 * self.w as f64 / 2.0
    }

    /// Blocks available in a trace of nominal length `len`.
    pub fn blocks_for(&self, len: usize) -> usize {
        len / (2 * self.w)
    }
}

/// Nominal trace length of a length-`n` source under retention `q`.
pub fn nominal_length(n: usize, q: f64) -> usize {
    (n as f64 * q).floor() as usize
}

/// Z_i = (X_i - Y_i)^2 over the blocks [2wi, 2wi + w), positions beyond a
/// trace counting as zero.
pub fn block_statistics(t: &BitString, u: &BitString, w: usize, blocks: usize) -> Vec<u64> {
    let sum = |s: &BitString, a: usize| {
        let (lo, hi) = (a.min(s.len()), (a + w).min(s.len()));
        s.count_ones_range(lo, hi) as i64
    };
    (0..blocks)
        .map(|i| {
            let d = sum(t, 2 * w * i) - sum(u, 2 * w * i);
            (d * d) as u64
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OracleVerdict {
    pub same: bool,
    pub d: f64,
    pub threshold: f64,
}

/// Median-of-group-sums test; `n` is the source string length.
pub fn same_source_oracle(t: &BitString, u: &BitString, n: usize, q: f64, params: &OracleParams) -> Result<OracleVerdict> {
    let blocks = params.blocks_for(nominal_length(n, q));
    let mut groups = blocks / params.g.max(1);
    if let Some(cap) = params.groups {
        groups = groups.min(cap);
    }
    if groups == 0 {
        return Err(Error::StringTooShort { len: n, w: params.w, g: params.g });
    }
    let z = block_statistics(t, u, params.w, groups * params.g);
    let mut sums: Vec<f64> = z.chunks_exact(params.g).map(|c| c.iter().sum::<u64>() as f64).collect();
    let d = lower_median(&mut sums);
    let threshold = params.threshold();
    Ok(OracleVerdict { same: d < threshold, d, threshold })
}

/// Source positions landing in each block of a trace.
pub fn block_sources(map: &RetentionMap, w: usize, blocks: usize) -> Vec<&[usize]> {
    (0..blocks)
        .map(|i| {
            let lo = (2 * w * i).min(map.kept.len());
            let hi = (2 * w * i + w).min(map.kept.len());
            &map.kept[lo..hi]
        })
        .collect()
}

/// Whether some source position falls in block i of one trace and block
/// j != i of the other.
pub fn blocks_cross(a: &RetentionMap, b: &RetentionMap, w: usize, blocks: usize) -> bool {
    let mut owner = std::collections::HashMap::new();
    for (i, src) in block_sources(a, w, blocks).into_iter().enumerate() {
        for &s in src {
            owner.insert(s, i);
        }
    }
    block_sources(b, w, blocks)
        .into_iter()
        .enumerate()
        .any(|(j, src)| src.iter().any(|s| owner.get(s).is_some_and(|&i| i != j)))
}

/// Sample mean and variance of (A - B)^2 for A, B iid Bin(h, 1/2).
pub fn binomial_difference_moments<R: RngCore + ?Sized>(h: u64, draws: usize, rng: &mut R) -> (f64, f64) {
    let (mut s, mut s2) = (0.0f64, 0.0f64);
    for _ in 0..draws {
        let d = binomial_draw(h, 0.5, rng) as f64 - binomial_draw(h, 0.5, rng) as f64;
        let c = d * d;
        s += c;
        s2 += c * c;
    }
    let n = draws as f64;
    let mean = s / n;
    (mean, (s2 - n * mean * mean) / (n - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{delete_sequence, random_string, trace_rng, ChannelParams};

    #[test]
    fn block_examples() {
        let x: BitString = "1101001110".parse().unwrap();
        assert!(block_statistics(&x, &x, 2, 3).iter().all(|&z| z == 0));
        let ones = BitString::ones(40);
        let zeros = BitString::zeros(40);
        assert_eq!(block_statistics(&ones, &zeros, 4, 5), vec![16; 5]);
        // short traces are padded with zeros
        assert_eq!(block_statistics(&BitString::ones(5), &zeros, 4, 2), vec![16, 0]);
    }

    #[test]
    fn independent_block_mean() {
        let (w, n) = (64usize, 256usize);
        let mut rng = trace_rng(1, 0);
        let trials = 10_000;
        let mut total = 0.0;
        for _ in 0..trials {
            let a = random_string(n, 0.5, &mut rng);
            let b = random_string(n, 0.5, &mut rng);
            total += block_statistics(&a, &b, w, 1)[0] as f64;
        }
        let mean = total / trials as f64;
        assert!((mean - w as f64 / 2.0).abs() <= 3.0 * (w as f64).sqrt(), "{mean}");
    }

    #[test]
    fn identical_traces_are_same() {
        let p = OracleParams { w: 8, g: 4, factor: 0.875, groups: None };
        let x = random_string(400, 0.5, &mut trace_rng(2, 0));
        let v = same_source_oracle(&x, &x, 400, 1.0, &p).unwrap();
        assert!(v.same && v.d == 0.0);
        assert!(matches!(
            same_source_oracle(&x, &x, 40, 1.0, &p),
            Err(Error::StringTooShort { .. })
        ));
    }

    #[test]
    fn oracle_separates_at_moderate_length() {
        let n = 1 << 22;
        let q = 0.5;
        let p = OracleParams { w: (1.41 * (n as f64).sqrt()) as usize, g: 32, factor: 0.8, groups: None };
        let ch = ChannelParams::symmetric(1.0 - q).unwrap();
        let mut errors = 0;
        for run in 0..10u64 {
            let mut rng = trace_rng(3, run);
            let x = random_string(n, 0.5, &mut rng);
            let y = random_string(n, 0.5, &mut rng);
            let (t, _) = delete_sequence(&x, ch, &mut rng);
            let (u, _) = delete_sequence(&x, ch, &mut rng);
            let (v, _) = delete_sequence(&y, ch, &mut rng);
            errors += !same_source_oracle(&t, &u, n, q, &p).unwrap().same as usize;
            errors += same_source_oracle(&t, &v, n, q, &p).unwrap().same as usize;
        }
        assert!(errors <= 2, "{errors}");
    }

    #[test]
    fn asymptotic_parameters() {
        let p = OracleParams::asymptotic(1 << 20, 0.5);
        assert_eq!(p.g, 384);
        assert!((p.factor - 0.875).abs() < 1e-12);
        // 100 * 32 * sqrt(2 ln 2^20)
        assert_eq!(p.w, (100.0 * 32.0 * (2.0 * 20.0 * 2f64.ln()).sqrt()).round() as usize);
    }

    #[test]
    fn crossing_blocks() {
        let a = RetentionMap { kept: (0..20).collect() };
        assert!(!blocks_cross(&a, &a, 3, 3));
        // source 6 opens block 1 of a and block 0 of the shifted map
        let shifted = RetentionMap { kept: (6..26).collect() };
        assert!(blocks_cross(&a, &shifted, 3, 3));
    }

    #[test]
    fn difference_moments() {
        let (m, v) = binomial_difference_moments(100, 200_000, &mut trace_rng(4, 0));
        assert!((m - 50.0).abs() / 50.0 < 0.02, "{m}");
        assert!(v <= 100.0 * 100.0 / 2.0);
    }
}
