//! k-decks: occurrence counts of every length-k subsequence.
//!
//! A key encodes a binary string u of length k as an integer whose most
//! significant of the k bits is the first character of u, so "01" is 1 and
//! "10" is 2.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use rand::seq::index;
use rand::Rng;
use serde::Serialize;

use crate::bits::BitString;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KDeck {
    pub k: usize,
    /// Only nonzero counts are stored.
    pub counts: BTreeMap<u64, BigUint>,
}

impl KDeck {
    pub fn empty(k: usize) -> Self {
        Self { k, counts: BTreeMap::new() }
    }

    pub fn get(&self, key: u64) -> BigUint {
        self.counts.get(&key).cloned().unwrap_or_default()
    }

    pub fn total(&self) -> BigUint {
        self.counts.values().sum()
    }

    pub fn key_string(&self, key: u64) -> String {
        key_string(key, self.k)
    }

    /// Counts keyed by the subsequence written as a 0/1 string.
    pub fn to_string_map(&self) -> BTreeMap<String, String> {
        self.counts
            .iter()
            .map(|(&u, c)| (self.key_string(u), c.to_string()))
            .collect()
    }

    /// Sum over all keys of |f_u - g_u|.
    pub fn l1_distance(&self, other: &KDeck) -> BigUint {
        let mut d = BigUint::default();
        let keys = self.counts.keys().chain(other.counts.keys());
        let mut seen: Vec<u64> = keys.copied().collect();
        seen.sort_unstable();
        seen.dedup();
        for u in seen {
            let (a, b) = (self.get(u), other.get(u));
            d += if a > b { a - b } else { b - a };
        }
        d
    }
}

pub fn key_string(key: u64, k: usize) -> String {
    (0..k).map(|i| if key >> (k - 1 - i) & 1 == 1 { '1' } else { '0' }).collect()
}

pub fn key_of(u: &BitString) -> u64 {
    u.iter().fold(0, |acc, b| acc << 1 | b as u64)
}

/// C(n, k) as an arbitrary-precision integer.
pub fn choose(n: usize, k: usize) -> BigUint {
    if k > n {
        return BigUint::default();
    }
    let k = k.min(n - k);
    let mut c = BigUint::from(1u32);
    for i in 0..k {
        c *= n - i;
        c /= i + 1;
    }
    c
}

/// Exact deck by a joint dynamic program: after reading a prefix of x,
/// `dp[j][u]` counts the occurrences of the length-j string u as a subsequence.
pub fn exact_kdeck(x: &BitString, k: usize) -> Result<KDeck> {
    let n = x.len();
    if k > n {
        return Err(Error::InvalidInput(format!("k = {k} exceeds length {n}")));
    }
    if k > 20 {
        return Err(Error::InvalidInput(format!("k = {k} too large for a dense deck")));
    }
    // u128 holds C(n, k) for every n < 2^32 when k is small, but not in
    // general; fall back to big integers once the total may overflow.
    let fits = choose(n, k) < BigUint::from(u128::MAX);
    let counts = if fits {
        deck_dp::<u128>(x, k).into_iter().map(BigUint::from).collect()
    } else {
        deck_dp::<BigUint>(x, k)
    };
    let mut deck = KDeck::empty(k);
    for (u, c) in counts.into_iter().enumerate() {
        if c != BigUint::default() {
            deck.counts.insert(u as u64, c);
        }
    }
    Ok(deck)
}

fn deck_dp<C>(x: &BitString, k: usize) -> Vec<C>
where
    C: Clone + Default + for<'a> std::ops::AddAssign<&'a C> + From<u8>,
{
    let mut dp: Vec<Vec<C>> = (0..=k).map(|j| vec![C::default(); 1 << j]).collect();
    dp[0][0] = C::from(1);
    for (i, b) in x.iter().enumerate() {
        for j in (1..=k.min(i + 1)).rev() {
            let (lo, hi) = dp.split_at_mut(j);
            for (u, c) in lo[j - 1].iter().enumerate() {
                hi[0][u << 1 | b as usize] += c;
            }
        }
    }
    dp.pop().unwrap()
}

/// Sample count 3 n^{2k} ln(n^k) from the learning argument.
pub fn asymptotic_sample_count(n: usize, k: usize) -> f64 {
    let n = n as f64;
    3.0 * n.powi(2 * k as i32) * (k as f64 * n.ln())
}

/// Estimates the deck of a length-`n` source from traces: one uniform
/// k-subsequence from each trace of length at least k, `r` samples in all,
/// each count scaled by C(n, k) / r and rounded half up.
pub fn sampled_kdeck<R: Rng + ?Sized>(
    traces: &[BitString],
    k: usize,
    r: usize,
    n: usize,
    rng: &mut R,
) -> Result<KDeck> {
    if r == 0 {
        return Err(Error::InvalidInput("sample count must be positive".into()));
    }
    let usable = traces.iter().filter(|t| t.len() >= k).count();
    if usable < r {
        return Err(Error::InsufficientTraces { usable, needed: r });
    }
    let mut hits: BTreeMap<u64, u64> = BTreeMap::new();
    for t in traces.iter().filter(|t| t.len() >= k).take(r) {
        let mut idx = index::sample(rng, t.len(), k).into_vec();
        idx.sort_unstable();
        let u = idx.iter().fold(0u64, |acc, &i| acc << 1 | t.get(i) as u64);
        *hits.entry(u).or_default() += 1;
    }
    let total = choose(n, k);
    let r_big = BigUint::from(r);
    let mut deck = KDeck::empty(k);
    for (u, x) in hits {
        // round(x C / r) = floor((2 x C + r) / (2 r))
        let est = (BigUint::from(2 * x) * &total + &r_big) / (BigUint::from(2u32) * &r_big);
        if est != BigUint::default() {
            deck.counts.insert(u, est);
        }
    }
    Ok(deck)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Choice {
    X,
    Y,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeckVerdict {
    pub choice: Choice,
    pub tie: bool,
    pub dist_x: BigUint,
    pub dist_y: BigUint,
}

/// Picks whichever of x, y has the exact deck closer in L1 to the sampled
/// deck. Ties go to x.
pub fn distinguish_by_deck<R: Rng + ?Sized>(
    x: &BitString,
    y: &BitString,
    traces: &[BitString],
    k: usize,
    r: usize,
    rng: &mut R,
) -> Result<DeckVerdict> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput("candidates must have equal length".into()));
    }
    let est = sampled_kdeck(traces, k, r, x.len(), rng)?;
    let dist_x = est.l1_distance(&exact_kdeck(x, k)?);
    let dist_y = est.l1_distance(&exact_kdeck(y, k)?);
    let tie = dist_x == dist_y;
    let choice = if dist_y < dist_x { Choice::Y } else { Choice::X };
    Ok(DeckVerdict { choice, tie, dist_x, dist_y })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{delete_sequence_trace, trace_rng, ChannelParams};
    use proptest::prelude::*;

    fn s(x: &str) -> BitString {
        x.parse().unwrap()
    }

    fn as_map(d: &KDeck) -> Vec<(String, u64)> {
        d.counts
            .iter()
            .map(|(&u, c)| (d.key_string(u), u64::try_from(c).unwrap()))
            .collect()
    }

    // every index k-subset, counted directly
    fn brute(x: &BitString, k: usize) -> BTreeMap<u64, u64> {
        let n = x.len();
        let mut out = BTreeMap::new();
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let u = (0..n)
                .filter(|&i| mask >> i & 1 == 1)
                .fold(0u64, |acc, i| acc << 1 | x.get(i) as u64);
            *out.entry(u).or_insert(0) += 1;
        }
        out
    }

    #[test]
    fn deck_examples() {
        assert_eq!(as_map(&exact_kdeck(&s("111"), 2).unwrap()), vec![("11".into(), 3)]);
        assert_eq!(
            as_map(&exact_kdeck(&s("101"), 2).unwrap()),
            vec![("01".into(), 1), ("10".into(), 1), ("11".into(), 1)]
        );
        assert_eq!(
            as_map(&exact_kdeck(&s("1001100"), 1).unwrap()),
            vec![("0".into(), 4), ("1".into(), 3)]
        );
        assert!(exact_kdeck(&s("10"), 3).is_err());
    }

    #[test]
    fn deck_matches_enumeration_small() {
        for n in 0..=10usize {
            for bits in 0u32..(1 << n) {
                let x = BitString::from_bits((0..n).map(|i| (bits >> i & 1) as u8));
                for k in 0..=n.min(4) {
                    let d = exact_kdeck(&x, k).unwrap();
                    let got: BTreeMap<u64, u64> =
                        d.counts.iter().map(|(&u, c)| (u, u64::try_from(c).unwrap())).collect();
                    assert_eq!(got, brute(&x, k), "x={x:?} k={k}");
                }
            }
        }
    }

    #[test]
    fn totals_are_binomial() {
        let mut rng = trace_rng(3, 0);
        for n in 0..=20 {
            for k in 0..=n.min(5) {
                let x = crate::channels::random_string(n, 0.5, &mut rng);
                assert_eq!(exact_kdeck(&x, k).unwrap().total(), choose(n, k));
            }
        }
        // past 64 bits
        let x = crate::channels::random_string(150, 0.5, &mut rng);
        assert_eq!(exact_kdeck(&x, 16).unwrap().total(), choose(150, 16));
        assert!(choose(150, 16) > BigUint::from(u64::MAX));
        let x = crate::channels::random_string(60, 0.5, &mut rng);
        let big = deck_dp::<BigUint>(&x, 10);
        let small: Vec<BigUint> = deck_dp::<u128>(&x, 10).into_iter().map(BigUint::from).collect();
        assert_eq!(big, small);
    }

    #[test]
    fn sampled_examples() {
        let p = ChannelParams::symmetric(0.5).unwrap();
        let ones = BitString::ones(8);
        let traces: Vec<BitString> = (0..500).map(|i| delete_sequence_trace(&ones, p, &mut trace_rng(4, i))).collect();
        let d = sampled_kdeck(&traces, 3, 200, 8, &mut trace_rng(5, 0)).unwrap();
        assert_eq!(as_map(&d), vec![("111".into(), 56)]);
        assert!(matches!(
            sampled_kdeck(&traces, 3, 10_000, 8, &mut trace_rng(5, 0)),
            Err(Error::InsufficientTraces { .. })
        ));
    }

    #[test]
    fn sampled_deck_recovers_101010() {
        let x = s("101010");
        let exact = exact_kdeck(&x, 2).unwrap();
        let p = ChannelParams::symmetric(0.5).unwrap();
        let ok = (0..100u64)
            .filter(|&run| {
                let traces: Vec<BitString> = (0..25_000)
                    .map(|i| delete_sequence_trace(&x, p, &mut trace_rng(100 + run, i)))
                    .collect();
                sampled_kdeck(&traces, 2, 20_000, 6, &mut trace_rng(200 + run, 0)).unwrap() == exact
            })
            .count();
        assert!(ok >= 99, "{ok}/100");
    }

    #[test]
    fn boundary_deletion_leaves_usable_traces() {
        let (n, k) = (20usize, 4usize);
        let p = ChannelParams::symmetric(1.0 - k as f64 / n as f64).unwrap();
        let x = BitString::zeros(n);
        let m = 20_000;
        let usable = (0..m)
            .filter(|&i| delete_sequence_trace(&x, p, &mut trace_rng(6, i as u64)).len() >= k)
            .count();
        assert!(usable as f64 / m as f64 >= 0.3);
    }

    #[test]
    fn distinguisher() {
        let x = s("0110");
        let p = ChannelParams::symmetric(0.3).unwrap();
        let traces: Vec<BitString> = (0..8000).map(|i| delete_sequence_trace(&x, p, &mut trace_rng(7, i))).collect();
        let v = distinguish_by_deck(&x, &x, &traces, 3, 4000, &mut trace_rng(8, 0)).unwrap();
        assert!(v.tie);
        assert_ne!(exact_kdeck(&x, 3).unwrap(), exact_kdeck(&s("1001"), 3).unwrap());
        let v = distinguish_by_deck(&s("1001"), &x, &traces, 3, 4000, &mut trace_rng(8, 0)).unwrap();
        assert_eq!(v.choice, Choice::Y);
        assert!(!v.tie);
    }

    proptest! {
        #[test]
        fn reversal_and_complement(bits in prop::collection::vec(0u8..2, 0..16), k in 0usize..5) {
            let x = BitString::from_bits(bits.iter().copied());
            prop_assume!(k <= x.len());
            let d = exact_kdeck(&x, k).unwrap();
            let rev = exact_kdeck(&x.reversed(), k).unwrap();
            let comp = exact_kdeck(&x.complemented(), k).unwrap();
            let mask = if k == 0 { 0 } else { u64::MAX >> (64 - k) };
            for (&u, c) in &d.counts {
                let ru = u.reverse_bits() >> (64 - k.max(1)) & mask;
                let ru = if k == 0 { 0 } else { ru };
                prop_assert_eq!(&rev.get(ru), c);
                prop_assert_eq!(&comp.get(!u & mask), c);
            }
            prop_assert_eq!(rev.counts.len(), d.counts.len());
            prop_assert_eq!(comp.counts.len(), d.counts.len());
        }
    }
}
