//! Sparse strings via binomial mixtures.
//!
//! A string is determined by its run profile: for each zero, the number of
//! ones before it. After the austere reduction, the leading-ones count of a
//! trace is a draw from the uniform mixture of Bin(r_i, q1) over that profile,
//! so learning the mixture exactly recovers the string.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::channels::{reduce_to_austere, ChannelParams};
use crate::error::{Error, Result};
use crate::estimators::leading_ones;

/// Default cap on the number of candidate mixtures scored by [`learn_mixture`].
pub const DEFAULT_CANDIDATE_CAP: u128 = 10_000_000;

/// Sorted ones-before-each-zero counts of a string.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunProfile {
    pub counts: Vec<u32>,
    /// Upper bound on every count (the number of ones in the string).
    pub k: u32,
}

impl RunProfile {
    pub fn zeros(&self) -> usize {
        self.counts.len()
    }
}

pub fn profile_from_string(x: &BitString) -> RunProfile {
    let mut ones = 0u32;
    let mut counts = Vec::with_capacity(x.count_zeros());
    for b in x.iter() {
        if b == 1 {
            ones += 1;
        } else {
            counts.push(ones);
        }
    }
    RunProfile { counts, k: ones }
}

/// Inverse of [`profile_from_string`]; trailing ones pad the total to `k`.
pub fn string_from_profile(profile: &RunProfile, k: u32) -> Result<BitString> {
    let mut counts = profile.counts.clone();
    counts.sort_unstable();
    if let Some(&r) = counts.last() {
        if r > k {
            return Err(Error::InvalidInput(format!("profile entry {r} exceeds k = {k}")));
        }
    }
    let mut out = BitString::with_capacity(counts.len() + k as usize);
    let mut placed = 0;
    for r in counts {
        while placed < r {
            out.push(1);
            placed += 1;
        }
        out.push(0);
    }
    while placed < k {
        out.push(1);
        placed += 1;
    }
    Ok(out)
}

/// Mixture of Bin(a_t, q) with weights `weights[t] / denom`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinomialMixture {
    pub support: Vec<u32>,
    pub weights: Vec<u64>,
    pub denom: u64,
    pub q: f64,
}

impl BinomialMixture {
    pub fn new(support: Vec<u32>, weights: Vec<u64>, denom: u64, q: f64) -> Result<Self> {
        if support.is_empty() || support.len() != weights.len() {
            return Err(Error::InvalidInput("support and weights must be nonempty and aligned".into()));
        }
        if !support.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput("support must be strictly increasing".into()));
        }
        if weights.contains(&0) || weights.iter().sum::<u64>() != denom {
            return Err(Error::InvalidInput(format!(
                "weights {weights:?} must be positive and sum to {denom}"
            )));
        }
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::InvalidInput(format!("q = {q} is not a probability")));
        }
        Ok(Self { support, weights, denom, q })
    }

    /// Single component Bin(a, q).
    pub fn single(a: u32, q: f64) -> Self {
        Self { support: vec![a], weights: vec![1], denom: 1, q }
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i] as f64 / self.denom as f64
    }

    pub fn max_support(&self) -> u32 {
        *self.support.last().expect("nonempty support")
    }
}

fn choose_u64(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut c = 1u64;
    for i in 0..k {
        c = c * (n - i) / (i + 1);
    }
    c
}

fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64 / (i + 1) as f64).ln()).sum()
}

/// P[Bin(a, q) = t]; exact coefficients up to a = 60, log space beyond.
pub fn binomial_pmf(a: u32, q: f64, t: u32) -> f64 {
    if t > a {
        return 0.0;
    }
    let (a64, t64) = (a as u64, t as u64);
    if q == 0.0 {
        return (t == 0) as u8 as f64;
    }
    if q == 1.0 {
        return (t == a) as u8 as f64;
    }
    if a <= 60 {
        choose_u64(a64, t64) as f64 * q.powi(t as i32) * (1.0 - q).powi((a - t) as i32)
    } else {
        (ln_choose(a64, t64) + t as f64 * q.ln() + (a - t) as f64 * (1.0 - q).ln()).exp()
    }
}

pub fn mixture_pmf(m: &BinomialMixture, t: u32) -> f64 {
    m.support
        .iter()
        .enumerate()
        .map(|(i, &a)| m.weight(i) * binomial_pmf(a, m.q, t))
        .sum()
}

/// Sum over t of |pmf_a(t) - pmf_b(t)|, i.e. twice the usual total variation.
pub fn mixture_tv_distance(a: &BinomialMixture, b: &BinomialMixture) -> f64 {
    let top = a.max_support().max(b.max_support());
    (0..=top)
        .map(|t| (mixture_pmf(a, t) - mixture_pmf(b, t)).abs())
        .sum()
}

/// Search space and budget for [`learn_mixture`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSearch {
    /// Largest support value.
    pub a: u32,
    /// Largest number of components.
    pub d: usize,
    /// Weights are multiples of `1 / denom`.
    pub denom: u64,
    pub q: f64,
    pub cap: u128,
}

fn binom_u128(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = match c.checked_mul((n - i) as u128) {
            Some(v) => v / (i + 1) as u128,
            None => return u128::MAX,
        };
    }
    c
}

/// Number of candidate mixtures in the search space.
pub fn candidate_count(s: &MixtureSearch) -> u128 {
    (1..=s.d.min(s.a as usize + 1))
        .map(|j| {
            binom_u128(s.a as u64 + 1, j as u64)
                .saturating_mul(binom_u128(s.denom.saturating_sub(1), j as u64 - 1))
        })
        .fold(0u128, |acc, x| acc.saturating_add(x))
}

/// Whether q meets the sufficient condition q >= sqrt(log(n) / a) (up to constants).
pub fn q_condition_met(q: f64, a: u32, n: usize) -> bool {
    a == 0 || q * q * a as f64 >= (n.max(2) as f64).ln()
}

struct Learner<'a> {
    emp: &'a [f64],
    table: Vec<Vec<f64>>,
    denom: u64,
    best: Option<(f64, Vec<u32>, Vec<u64>)>,
    mix: Vec<f64>,
}

impl Learner<'_> {
    fn score(&mut self, support: &[u32], weights: &[u64]) {
        for v in self.mix.iter_mut() {
            *v = 0.0;
        }
        for (&a, &w) in support.iter().zip(weights) {
            let wf = w as f64 / self.denom as f64;
            for (t, p) in self.table[a as usize].iter().enumerate() {
                self.mix[t] += wf * p;
            }
        }
        let dist: f64 = self.mix.iter().zip(self.emp).map(|(m, e)| (m - e).abs()).sum();
        let better = match &self.best {
            None => true,
            Some((b, _, _)) => dist < b - 1e-12,
        };
        if better {
            self.best = Some((dist, support.to_vec(), weights.to_vec()));
        }
    }

    fn compositions(&mut self, support: &[u32], weights: &mut Vec<u64>, left: u64) {
        let parts = support.len() - weights.len();
        if parts == 1 {
            weights.push(left);
            self.score(support, weights);
            weights.pop();
            return;
        }
        for w in 1..=left - (parts as u64 - 1) {
            weights.push(w);
            self.compositions(support, weights, left - w);
            weights.pop();
        }
    }

    fn supports(&mut self, support: &mut Vec<u32>, next: u32, a: u32, d: usize) {
        for s in next..=a {
            support.push(s);
            if support.len() as u64 <= self.denom {
                let sup = support.clone();
                self.compositions(&sup, &mut Vec::new(), self.denom);
            }
            if support.len() < d {
                self.supports(support, s + 1, a, d);
            }
            support.pop();
        }
    }
}

/// Returns the grid mixture closest in summed absolute pmf difference (over
/// t in [0, a]) to the empirical distribution of `samples`. Candidates are
/// enumerated in lexicographic (support, weights) order and the first minimum
/// wins.
pub fn learn_mixture(samples: &[u64], search: &MixtureSearch) -> Result<BinomialMixture> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples to learn from".into()));
    }
    if search.d == 0 || search.denom == 0 {
        return Err(Error::InvalidInput("need d >= 1 and a positive weight grid".into()));
    }
    let count = candidate_count(search);
    if count > search.cap {
        return Err(Error::BudgetExceeded { count, cap: search.cap });
    }
    let a = search.a;
    let mut emp = vec![0.0; a as usize + 1];
    for &x in samples {
        if x <= a as u64 {
            emp[x as usize] += 1.0;
        }
    }
    let s = samples.len() as f64;
    emp.iter_mut().for_each(|e| *e /= s);
    let table = (0..=a)
        .map(|ai| (0..=a).map(|t| binomial_pmf(ai, search.q, t)).collect())
        .collect();
    let mut l = Learner {
        emp: &emp,
        table,
        denom: search.denom,
        best: None,
        mix: vec![0.0; a as usize + 1],
    };
    l.supports(&mut Vec::new(), 0, a, search.d);
    let (_, support, weights) = l.best.expect("at least one candidate");
    BinomialMixture::new(support, weights, search.denom, search.q)
}

/// Reconstructs a k-sparse string of length `n` from (p0, p1) channel traces.
///
/// `rng` drives the austere reduction (which zero each trace keeps).
pub fn reconstruct_sparse<R: RngCore + ?Sized>(
    traces: &[BitString],
    n: usize,
    k: usize,
    params: ChannelParams,
    cap: u128,
    rng: &mut R,
) -> Result<BitString> {
    if k > n {
        return Err(Error::InvalidInput(format!("k = {k} exceeds n = {n}")));
    }
    if k == 0 {
        return Ok(BitString::zeros(n));
    }
    let n0 = n - k;
    if n0 == 0 {
        return Ok(BitString::ones(n));
    }
    let samples: Vec<u64> = traces
        .iter()
        .filter_map(|t| reduce_to_austere(t, rng))
        .map(|t| leading_ones(&t) as u64)
        .collect();
    if samples.is_empty() {
        return Err(Error::InsufficientTraces { usable: 0, needed: 1 });
    }
    let search = MixtureSearch {
        a: k as u32,
        d: (k + 1).min(n0),
        denom: n0 as u64,
        q: params.q1(),
        cap,
    };
    let mix = learn_mixture(&samples, &search)?;
    profile_from_mixture(&mix, n0, k)
}

/// Expands a mixture with weights on the 1/n0 grid into a run profile string.
pub fn profile_from_mixture(mix: &BinomialMixture, n0: usize, k: usize) -> Result<BitString> {
    let mut counts = Vec::with_capacity(n0);
    for (i, &a) in mix.support.iter().enumerate() {
        let copies = mix.weight(i) * n0 as f64;
        let r = copies.round();
        if (copies - r).abs() > 1e-9 {
            return Err(Error::Reconstruction(format!(
                "weight {} is not a multiple of 1/{n0}",
                mix.weight(i)
            )));
        }
        counts.extend(std::iter::repeat_n(a, r as usize));
    }
    if counts.len() != n0 {
        return Err(Error::Reconstruction(format!(
            "profile has {} zeros, expected {n0}",
            counts.len()
        )));
    }
    string_from_profile(&RunProfile { counts, k: k as u32 }, k as u32)
}
