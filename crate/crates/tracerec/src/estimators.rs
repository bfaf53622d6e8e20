//! Small statistics shared by the reconstruction algorithms.

use crate::bits::{BitString, DenseGrid};
use crate::error::{Error, Result};

/// Estimates `n` from iid Bin(n, 1/2) samples as `round(2 * mean)`, rounding
/// halves away from zero. Computed in integers, so the answer is exact.
pub fn binomial_mean_estimate(samples: &[u64]) -> Result<u64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("binomial mean of no samples".into()));
    }
    let s = samples.len() as u128;
    let sum: u128 = samples.iter().map(|&x| x as u128).sum();
    // floor(2 sum / s + 1/2)
    Ok(((4 * sum + s) / (2 * s)) as u64)
}

/// Estimates `n` from iid Bin(n, q) samples as `round(mean / q)`.
pub fn binomial_mean_estimate_q(samples: &[u64], q: f64) -> Result<u64> {
    if q == 0.5 {
        return binomial_mean_estimate(samples);
    }
    if samples.is_empty() {
        return Err(Error::InvalidInput("binomial mean of no samples".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidInput(format!("retention {q} must lie in (0, 1]")));
    }
    let sum: u128 = samples.iter().map(|&x| x as u128).sum();
    let mean = sum as f64 / samples.len() as f64;
    Ok((mean / q).round() as u64)
}

/// Number of ones before the first zero.
pub fn leading_ones(trace: &BitString) -> usize {
    for (wi, &w) in trace.words().iter().enumerate() {
        if w != !0 {
            return (wi * 64 + w.trailing_ones() as usize).min(trace.len());
        }
    }
    trace.len()
}

/// Fraction of traces holding a one at each position of a grid, with
/// positions outside a trace counted as zero.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionMeans {
    pub dims: Vec<usize>,
    /// Number of traces with a one at each cell.
    pub counts: Vec<u64>,
    pub traces: u64,
}

impl PositionMeans {
    pub fn values(&self) -> Vec<f64> {
        let m = self.traces.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / m).collect()
    }

    pub fn value(&self, flat: usize) -> f64 {
        self.counts[flat] as f64 / self.traces.max(1) as f64
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            counts: vec![0; dims.iter().product()],
            traces: 0,
        }
    }

    /// Adds one grid trace. Errors if the trace exceeds the target extents.
    pub fn add_grid<G: DenseGrid + ?Sized>(&mut self, trace: &G) -> Result<()> {
        let shape = trace.shape();
        if shape.len() != self.dims.len() || shape.iter().zip(&self.dims).any(|(a, b)| a > b) {
            return Err(Error::InvalidInput(format!(
                "trace extents {shape:?} exceed target {:?}",
                self.dims
            )));
        }
        let cells = trace.cells();
        if cells.is_empty() {
            self.traces += 1;
            return Ok(());
        }
        let k = shape.len();
        let mut idx = vec![0usize; k];
        let tst = crate::bits::strides(&self.dims);
        for (i, &b) in cells.iter().enumerate() {
            if b == 1 {
                crate::bits::unflatten(i, &shape, &mut idx);
                let flat: usize = idx.iter().zip(&tst).map(|(a, s)| a * s).sum();
                self.counts[flat] += 1;
            }
        }
        self.traces += 1;
        Ok(())
    }

    pub fn add_string(&mut self, trace: &BitString) -> Result<()> {
        if self.dims.len() != 1 || trace.len() > self.dims[0] {
            return Err(Error::InvalidInput(format!(
                "trace of length {} exceeds target {:?}",
                trace.len(),
                self.dims
            )));
        }
        for p in trace.ones_positions() {
            self.counts[p] += 1;
        }
        self.traces += 1;
        Ok(())
    }
}

/// Positional means of string traces padded to length `n`.
pub fn empirical_position_means(traces: &[BitString], n: usize) -> Result<PositionMeans> {
    let mut pm = PositionMeans::zeros(&[n]);
    for t in traces {
        pm.add_string(t)?;
    }
    Ok(pm)
}

/// Positional means of matrix or tensor traces padded to `dims`.
pub fn empirical_grid_means<G: DenseGrid>(traces: &[G], dims: &[usize]) -> Result<PositionMeans> {
    let mut pm = PositionMeans::zeros(dims);
    for t in traces {
        pm.add_grid(t)?;
    }
    Ok(pm)
}

/// Splits `blocks` into consecutive groups of `g`, sums each full group and
/// returns the lower median of the sums. A trailing partial group is ignored.
pub fn median_of_sums(blocks: &[f64], g: usize) -> Result<f64> {
    if g == 0 || blocks.len() < g {
        return Err(Error::InvalidInput(format!(
            "need at least one group of {g} blocks, got {}",
            blocks.len()
        )));
    }
    let mut sums: Vec<f64> = blocks.chunks_exact(g).map(|c| c.iter().sum()).collect();
    Ok(lower_median(&mut sums))
}

pub(crate) fn lower_median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{binomial_draw, delete_sequence_trace, trace_rng, ChannelParams};
    use proptest::prelude::*;
    use rand::RngCore;

    #[test]
    fn mean_estimate_examples() {
        assert_eq!(binomial_mean_estimate(&[5, 5, 5]).unwrap(), 10);
        assert_eq!(binomial_mean_estimate(&[3, 4]).unwrap(), 7);
        // 2 * 1.25 = 2.5 rounds away from zero
        assert_eq!(binomial_mean_estimate(&[1, 1, 1, 2]).unwrap(), 3);
        assert!(binomial_mean_estimate(&[]).is_err());
        assert_eq!(binomial_mean_estimate_q(&[3, 3], 0.3).unwrap(), 10);
    }

    #[test]
    fn mean_estimate_recovers_twelve() {
        // s = 8 n^{2+eps} with n = 12, eps = 1
        let s = 8 * 12usize.pow(3);
        let ok = (0..1000u64)
            .filter(|&run| {
                let mut rng = trace_rng(21, run);
                let xs: Vec<u64> = (0..s).map(|_| binomial_draw(12, 0.5, &mut rng)).collect();
                binomial_mean_estimate(&xs).unwrap() == 12
            })
            .count();
        assert!(ok >= 999, "{ok}/1000");
    }

    #[test]
    fn leading_ones_examples() {
        let l = |s: &str| leading_ones(&s.parse().unwrap());
        assert_eq!(l("110100"), 2);
        assert_eq!(l("0111"), 0);
        assert_eq!(l("1111"), 4);
        assert_eq!(l(""), 0);
        assert_eq!(l(&"1".repeat(130)), 130);
        assert_eq!(l(&format!("{}0", "1".repeat(70))), 70);
    }

    #[test]
    fn position_means_examples() {
        let t: Vec<BitString> = vec!["11".parse().unwrap()];
        assert_eq!(empirical_position_means(&t, 4).unwrap().values(), vec![1.0, 1.0, 0.0, 0.0]);
        let t: Vec<BitString> = vec!["1".parse().unwrap(), "01".parse().unwrap()];
        assert_eq!(empirical_position_means(&t, 2).unwrap().values(), vec![0.5, 0.5]);
        assert!(empirical_position_means(&t, 1).is_err());
        let x: BitString = "1".parse().unwrap();
        let p = ChannelParams::symmetric(0.5).unwrap();
        let traces: Vec<BitString> = (0..100_000)
            .map(|i| delete_sequence_trace(&x, p, &mut trace_rng(2, i)))
            .collect();
        let v = empirical_position_means(&traces, 1).unwrap().values()[0];
        assert!((v - 0.5).abs() <= 0.01, "{v}");
    }

    #[test]
    fn grid_means_pad_with_zeros() {
        let a: crate::bits::BitMatrix = "1x2:11".parse().unwrap();
        let b: crate::bits::BitMatrix = "2x1:1;1".parse().unwrap();
        let pm = empirical_grid_means(&[a, b], &[2, 2]).unwrap();
        assert_eq!(pm.values(), vec![1.0, 0.5, 0.5, 0.0]);
        let big: crate::bits::BitMatrix = "3x1:1;1;1".parse().unwrap();
        assert!(empirical_grid_means(&[big], &[2, 2]).is_err());
    }

    #[test]
    fn median_examples() {
        assert_eq!(median_of_sums(&[1.0, 2.0, 3.0, 4.0], 2).unwrap(), 3.0);
        assert_eq!(median_of_sums(&[2.5; 9], 3).unwrap(), 7.5);
        assert!(median_of_sums(&[1.0], 2).is_err());
    }

    #[test]
    fn median_of_squared_differences() {
        // blocks (A - B)^2 with A, B ~ Bin(50, 1/2); g = 96 / q^2 at q = 1/2
        let (h, g) = (50u64, 384usize);
        let mut means = Vec::new();
        for run in 0..1000u64 {
            let mut rng = trace_rng(31, run);
            let blocks: Vec<f64> = (0..g * 5)
                .map(|_| {
                    let a = binomial_draw(h, 0.5, &mut rng) as f64;
                    let b = binomial_draw(h, 0.5, &mut rng) as f64;
                    (a - b) * (a - b)
                })
                .collect();
            means.push(median_of_sums(&blocks, g).unwrap() / g as f64);
        }
        let avg = means.iter().sum::<f64>() / means.len() as f64;
        assert!((avg - 25.0).abs() <= 3.0, "{avg}");
        assert!(means.iter().all(|m| (m - 25.0).abs() <= 6.0));
    }

    proptest! {
        #[test]
        fn translation_consistent(xs in prop::collection::vec(0u64..1000, 1..50), c in 0u64..1000) {
            let shifted: Vec<u64> = xs.iter().map(|x| x + c).collect();
            prop_assert_eq!(binomial_mean_estimate(&shifted).unwrap(), binomial_mean_estimate(&xs).unwrap() + 2 * c);
        }

        #[test]
        fn leading_ones_prefix(bits in prop::collection::vec(0u8..2, 0..200)) {
            let x = BitString::from_bits(bits.iter().copied());
            let want = bits.iter().take_while(|&&b| b == 1).count();
            prop_assert_eq!(leading_ones(&x), want);
            if x.is_empty() || x.get(0) == 1 {
                let y = BitString::from_bits(std::iter::once(1).chain(bits.iter().copied()));
                prop_assert_eq!(leading_ones(&y), 1 + want);
            }
        }

        #[test]
        fn means_are_fractions(seed in any::<u64>(), m in 1usize..20) {
            let mut rng = trace_rng(seed, 0);
            let traces: Vec<BitString> = (0..m)
                .map(|_| {
                    let len = (rng.next_u64() % 10) as usize;
                    crate::channels::random_string(len, 0.5, &mut rng)
                })
                .collect();
            let pm = empirical_position_means(&traces, 10).unwrap();
            for (c, v) in pm.counts.iter().zip(pm.values()) {
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert_eq!(v * m as f64, *c as f64);
            }
        }

        #[test]
        fn median_ignores_order_within_groups(mut xs in prop::collection::vec(0.0f64..100.0, 4..40), g in 1usize..4) {
            let a = median_of_sums(&xs, g).unwrap();
            for c in xs.chunks_mut(g) {
                c.reverse();
            }
            prop_assert!((median_of_sums(&xs, g).unwrap() - a).abs() < 1e-9);
        }
    }
}
