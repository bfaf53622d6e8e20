//! Deletion channels and random source generators.
//!
//! Every trace draws from its own ChaCha8 substream: the key comes from the
//! master seed and the stream id is the trace index, so traces can be
//! generated in any order (or in parallel) without changing the output.
//!
//! Retention decisions compare a fresh `u64` against `q * 2^64`. The single
//! exception is `q = 1/2`, where a whole random word is used as a keep mask.
//! Strings, matrices and tensors share that rule, so an order-1 tensor and a
//! string see exactly the same deletions for the same stream.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::bits::{BitMatrix, BitString, BitTensor};
use crate::error::{Error, Result};

/// Per-symbol deletion probabilities of a (p0, p1) channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub p0: f64,
    pub p1: f64,
}

impl ChannelParams {
    pub fn new(p0: f64, p1: f64) -> Result<Self> {
        for (name, p) in [("p0", p0), ("p1", p1)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidInput(format!(
                    "{name} = {p} is not a probability"
                )));
            }
        }
        Ok(Self { p0, p1 })
    }

    pub fn symmetric(p: f64) -> Result<Self> {
        Self::new(p, p)
    }

    pub fn q0(&self) -> f64 {
        1.0 - self.p0
    }

    pub fn q1(&self) -> f64 {
        1.0 - self.p1
    }

    pub fn is_symmetric(&self) -> bool {
        self.p0 == self.p1
    }
}

/// Original indices that survived deletion, per axis. Test instrumentation
/// only; reconstruction code never receives it.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetentionMap {
    pub kept: Vec<usize>,
}

impl RetentionMap {
    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }
}

/// SplitMix64 finaliser, used to derive per-trial seeds from a master seed.
pub fn mix_seed(master: u64, salt: u64) -> u64 {
    let mut z = master ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The RNG substream for trace `index` under `seed`.
pub fn trace_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index);
    r
}

/// Cheap repeated access to the substreams of one seed.
#[derive(Clone)]
pub struct TraceStreams {
    base: ChaCha8Rng,
}

impl TraceStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            base: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Identical to `trace_rng(seed, index)`.
    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut r = self.base.clone();
        r.set_stream(index);
        r
    }
}

#[derive(Clone, Copy)]
enum Keep {
    Never,
    Always,
    Half,
    Below(u64),
}

impl Keep {
    fn new(q: f64) -> Self {
        if q <= 0.0 {
            Keep::Never
        } else if q >= 1.0 {
            Keep::Always
        } else if q == 0.5 {
            Keep::Half
        } else {
            Keep::Below((q * 18_446_744_073_709_551_616.0) as u64)
        }
    }

    #[inline]
    fn draw<R: RngCore + ?Sized>(self, rng: &mut R) -> bool {
        match self {
            Keep::Never => false,
            Keep::Always => true,
            Keep::Half => rng.next_u64() >> 63 == 1,
            Keep::Below(t) => rng.next_u64() < t,
        }
    }
}

/// Packed keep-mask for `n` positions, each retained with probability `q`.
pub fn retention_mask<R: RngCore + ?Sized>(n: usize, q: f64, rng: &mut R) -> Vec<u64> {
    let words = n.div_ceil(64);
    let keep = Keep::new(q);
    let mut out = match keep {
        Keep::Never => vec![0; words],
        Keep::Always => vec![!0; words],
        Keep::Half => (0..words).map(|_| rng.next_u64()).collect(),
        Keep::Below(_) => {
            let mut v = vec![0u64; words];
            for i in 0..n {
                if keep.draw(rng) {
                    v[i / 64] |= 1 << (i % 64);
                }
            }
            v
        }
    };
    if !n.is_multiple_of(64) {
        if let Some(w) = out.last_mut() {
            *w &= (1u64 << (n % 64)) - 1;
        }
    }
    out
}

fn mask_indices(mask: &[u64]) -> Vec<usize> {
    let mut out = Vec::new();
    for (wi, &w) in mask.iter().enumerate() {
        let mut w = w;
        while w != 0 {
            out.push(wi * 64 + w.trailing_zeros() as usize);
            w &= w - 1;
        }
    }
    out
}

#[inline]
fn pext_soft(w: u64, mut m: u64) -> u64 {
    let mut out = 0;
    let mut k = 0;
    while m != 0 {
        let b = m.trailing_zeros();
        out |= ((w >> b) & 1) << k;
        k += 1;
        m &= m - 1;
    }
    out
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "bmi2")]
unsafe fn pext_hw(w: u64, m: u64) -> u64 {
    std::arch::x86_64::_pext_u64(w, m)
}

fn compact(x: &BitString, mask: &[u64]) -> BitString {
    let kept: usize = mask.iter().map(|w| w.count_ones() as usize).sum();
    let mut out = BitString::with_capacity(kept);
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("bmi2") {
        for (&w, &m) in x.words().iter().zip(mask) {
            // SAFETY: bmi2 support was checked at runtime.
            out.push_word(unsafe { pext_hw(w, m) }, m.count_ones());
        }
        return out;
    }
    for (&w, &m) in x.words().iter().zip(mask) {
        out.push_word(pext_soft(w, m), m.count_ones());
    }
    out
}

/// Trace of `x` through a (p0, p1) deletion channel, without the retention map.
pub fn delete_sequence_trace<R: RngCore + ?Sized>(
    x: &BitString,
    params: ChannelParams,
    rng: &mut R,
) -> BitString {
    if params.is_symmetric() {
        let mask = retention_mask(x.len(), params.q0(), rng);
        return compact(x, &mask);
    }
    let k0 = Keep::new(params.q0());
    let k1 = Keep::new(params.q1());
    let mut out = BitString::with_capacity(x.len());
    for b in x.iter() {
        let keep = if b == 1 { k1.draw(rng) } else { k0.draw(rng) };
        if keep {
            out.push(b);
        }
    }
    out
}

/// Sends `x` through a (p0, p1) deletion channel.
pub fn delete_sequence<R: RngCore + ?Sized>(
    x: &BitString,
    params: ChannelParams,
    rng: &mut R,
) -> (BitString, RetentionMap) {
    if params.is_symmetric() {
        let mask = retention_mask(x.len(), params.q0(), rng);
        let kept = mask_indices(&mask);
        return (compact(x, &mask), RetentionMap { kept });
    }
    let k0 = Keep::new(params.q0());
    let k1 = Keep::new(params.q1());
    let mut out = BitString::with_capacity(x.len());
    let mut kept = Vec::new();
    for (i, b) in x.iter().enumerate() {
        let keep = if b == 1 { k1.draw(rng) } else { k0.draw(rng) };
        if keep {
            out.push(b);
            kept.push(i);
        }
    }
    (out, RetentionMap { kept })
}

/// Keeps exactly one uniformly chosen zero of `x` and deletes each one with
/// probability `p1`.
pub fn austere_channel<R: RngCore + ?Sized>(
    x: &BitString,
    p1: f64,
    rng: &mut R,
) -> Result<BitString> {
    if !(0.0..=1.0).contains(&p1) {
        return Err(Error::InvalidInput(format!("p1 = {p1} is not a probability")));
    }
    let zeros = x.count_zeros();
    if zeros == 0 {
        return Err(Error::InvalidInput(
            "austere channel needs at least one zero".into(),
        ));
    }
    let chosen = rng.random_range(0..zeros);
    let k1 = Keep::new(1.0 - p1);
    let mut out = BitString::new();
    let mut zi = 0;
    for b in x.iter() {
        if b == 1 {
            if k1.draw(rng) {
                out.push(1);
            }
        } else {
            if zi == chosen {
                out.push(0);
            }
            zi += 1;
        }
    }
    Ok(out)
}

/// Turns a (p0, p1) trace into an austere trace by keeping one random zero.
/// Returns `None` when the trace has no zero and must be discarded.
pub fn reduce_to_austere<R: RngCore + ?Sized>(trace: &BitString, rng: &mut R) -> Option<BitString> {
    let zeros = trace.count_zeros();
    if zeros == 0 {
        return None;
    }
    let chosen = rng.random_range(0..zeros);
    let mut out = BitString::with_capacity(trace.count_ones() + 1);
    let mut zi = 0;
    for b in trace.iter() {
        if b == 1 {
            out.push(1);
        } else {
            if zi == chosen {
                out.push(0);
            }
            zi += 1;
        }
    }
    Some(out)
}

/// Deletes rows, then columns, of `x`, each independently with probability `p`.
pub fn delete_matrix<R: RngCore + ?Sized>(
    x: &BitMatrix,
    p: f64,
    rng: &mut R,
) -> (BitMatrix, RetentionMap, RetentionMap) {
    let q = 1.0 - p;
    let rows = mask_indices(&retention_mask(x.rows(), q, rng));
    let cols = mask_indices(&retention_mask(x.cols(), q, rng));
    select_matrix(x, rows, cols)
}

/// As [`delete_matrix`], drawing row and column decisions from separate streams.
pub fn delete_matrix_split<R: RngCore + ?Sized, S: RngCore + ?Sized>(
    x: &BitMatrix,
    p: f64,
    row_rng: &mut R,
    col_rng: &mut S,
) -> (BitMatrix, RetentionMap, RetentionMap) {
    let q = 1.0 - p;
    let rows = mask_indices(&retention_mask(x.rows(), q, row_rng));
    let cols = mask_indices(&retention_mask(x.cols(), q, col_rng));
    select_matrix(x, rows, cols)
}

fn select_matrix(
    x: &BitMatrix,
    rows: Vec<usize>,
    cols: Vec<usize>,
) -> (BitMatrix, RetentionMap, RetentionMap) {
    let mut bits = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        let row = x.row(r);
        bits.extend(cols.iter().map(|&c| row[c]));
    }
    let t = BitMatrix::new(rows.len(), cols.len(), bits).expect("shape is consistent");
    (t, RetentionMap { kept: rows }, RetentionMap { kept: cols })
}

/// Deletes every axis-aligned slice of `t` independently with probability `p`,
/// axis by axis.
pub fn delete_tensor<R: RngCore + ?Sized>(
    t: &BitTensor,
    p: f64,
    rng: &mut R,
) -> (BitTensor, Vec<RetentionMap>) {
    let q = 1.0 - p;
    let keep: Vec<Vec<usize>> = t
        .dims()
        .iter()
        .map(|&n| mask_indices(&retention_mask(n, q, rng)))
        .collect();
    let trace = t.select(&keep);
    (
        trace,
        keep.into_iter().map(|kept| RetentionMap { kept }).collect(),
    )
}

pub fn random_string<R: RngCore + ?Sized>(n: usize, eta: f64, rng: &mut R) -> BitString {
    BitString::from_words(retention_mask(n, eta, rng), n)
}

pub fn random_matrix<R: RngCore + ?Sized>(
    rows: usize,
    cols: usize,
    eta: f64,
    rng: &mut R,
) -> BitMatrix {
    let s = random_string(rows * cols, eta, rng);
    BitMatrix::new(rows, cols, s.to_vec()).expect("shape is consistent")
}

pub fn random_tensor<R: RngCore + ?Sized>(dims: &[usize], eta: f64, rng: &mut R) -> BitTensor {
    let n = dims.iter().product();
    let s = random_string(n, eta, rng);
    BitTensor::new(dims.to_vec(), s.to_vec()).expect("shape is consistent")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    String,
    Matrix,
    Tensor,
}

/// A source of any supported shape.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "bits", rename_all = "lowercase")]
pub enum Input {
    String(BitString),
    Matrix(BitMatrix),
    Tensor(BitTensor),
}

/// Draws an iid Ber(eta) source of the requested kind.
pub fn random_input<R: RngCore + ?Sized>(
    kind: InputKind,
    dims: &[usize],
    eta: f64,
    rng: &mut R,
) -> Result<Input> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidInput(format!("eta = {eta} is not a probability")));
    }
    match kind {
        InputKind::String => match dims {
            [n] => Ok(Input::String(random_string(*n, eta, rng))),
            _ => Err(Error::InvalidInput(format!("string needs one extent, got {dims:?}"))),
        },
        InputKind::Matrix => match dims {
            [r, c] => Ok(Input::Matrix(random_matrix(*r, *c, eta, rng))),
            _ => Err(Error::InvalidInput(format!("matrix needs two extents, got {dims:?}"))),
        },
        InputKind::Tensor => Ok(Input::Tensor(random_tensor(dims, eta, rng))),
    }
}

/// A trace kept only as its length and the positions of its ones.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SparseTrace {
    pub len: u32,
    pub ones: SmallVec<[u32; 4]>,
}

impl SparseTrace {
    pub fn from_bits(s: &BitString) -> Self {
        Self {
            len: s.len() as u32,
            ones: s.ones_positions().map(|p| p as u32).collect(),
        }
    }

    pub fn to_bits(&self) -> BitString {
        let ones: Vec<usize> = self.ones.iter().map(|&p| p as usize).collect();
        BitString::from_ones(self.len as usize, &ones).expect("ones lie inside the trace")
    }
}

/// Access to trace length and one positions, for algorithms that only look at
/// the ones.
pub trait OnesTrace {
    fn trace_len(&self) -> usize;
    fn visit_ones(&self, f: &mut dyn FnMut(usize));
}

impl OnesTrace for BitString {
    fn trace_len(&self) -> usize {
        self.len()
    }
    fn visit_ones(&self, f: &mut dyn FnMut(usize)) {
        for p in self.ones_positions() {
            f(p);
        }
    }
}

impl OnesTrace for SparseTrace {
    fn trace_len(&self) -> usize {
        self.len as usize
    }
    fn visit_ones(&self, f: &mut dyn FnMut(usize)) {
        for &p in &self.ones {
            f(p as usize);
        }
    }
}

/// Bin(n, q) draw; exact bit counting when q = 1/2.
pub fn binomial_draw<R: RngCore + ?Sized>(n: u64, q: f64, rng: &mut R) -> u64 {
    if n == 0 || q <= 0.0 {
        return 0;
    }
    if q >= 1.0 {
        return n;
    }
    if q == 0.5 {
        let mut c = 0u64;
        let mut left = n;
        while left >= 64 {
            c += rng.next_u64().count_ones() as u64;
            left -= 64;
        }
        if left > 0 {
            c += (rng.next_u64() & ((1u64 << left) - 1)).count_ones() as u64;
        }
        return c;
    }
    Binomial::new(n, q).expect("valid binomial").sample(rng)
}

/// Samples a trace of the sparse string of length `n` with ones at `ones`
/// (sorted, distinct) by drawing each zero run's survivors at once. Returns
/// the trace and, for each received one, the index of its source one.
///
/// The output has the same distribution as [`delete_sequence`] on the
/// expanded string, but consumes randomness differently.
pub fn sparse_trace<R: RngCore + ?Sized>(
    ones: &[usize],
    n: usize,
    params: ChannelParams,
    rng: &mut R,
) -> (SparseTrace, SmallVec<[u32; 4]>) {
    let (q0, k1) = (params.q0(), Keep::new(params.q1()));
    let mut t = SparseTrace::default();
    let mut labels = SmallVec::new();
    let mut prev = 0usize;
    let mut len = 0u64;
    for (j, &p) in ones.iter().enumerate() {
        len += binomial_draw((p - prev) as u64, q0, rng);
        if k1.draw(rng) {
            t.ones.push(len as u32);
            labels.push(j as u32);
            len += 1;
        }
        prev = p + 1;
    }
    len += binomial_draw((n - prev) as u64, q0, rng);
    t.len = len as u32;
    (t, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::RngCore;

    #[test]
    fn identity_and_erasure() {
        let x: BitString = "1011001".parse().unwrap();
        let mut rng = trace_rng(1, 0);
        let (t, m) = delete_sequence(&x, ChannelParams::symmetric(0.0).unwrap(), &mut rng);
        assert_eq!(t, x);
        assert_eq!(m.kept, (0..7).collect::<Vec<_>>());
        let (t, m) = delete_sequence(&x, ChannelParams::symmetric(1.0).unwrap(), &mut rng);
        assert!(t.is_empty() && m.is_empty());
        let (t, _) = delete_sequence(&x, ChannelParams::new(0.0, 0.0).unwrap(), &mut rng);
        assert_eq!(t, x);
    }

    #[test]
    fn all_ones_mean_length() {
        let x = BitString::ones(1000);
        let p = ChannelParams::symmetric(0.5).unwrap();
        let streams = TraceStreams::new(11);
        let trials = 100_000;
        let total: usize = (0..trials)
            .map(|i| delete_sequence_trace(&x, p, &mut streams.stream(i)).len())
            .sum();
        let mean = total as f64 / trials as f64;
        assert!((mean - 500.0).abs() <= 5.0, "mean {mean}");
    }

    #[test]
    fn asymmetric_mean_length_within_five_sigma() {
        let x = BitString::ones(200);
        let p = ChannelParams::new(0.9, 0.3).unwrap();
        let trials = 10_000u64;
        let total: usize = (0..trials)
            .map(|i| delete_sequence_trace(&x, p, &mut trace_rng(5, i)).len())
            .sum();
        let mean = total as f64 / trials as f64;
        let sd = (200.0 * 0.7 * 0.3 / trials as f64).sqrt();
        assert!((mean - 140.0).abs() <= 5.0 * sd, "mean {mean}");
    }

    #[test]
    fn streams_match_trace_rng() {
        let s = TraceStreams::new(42);
        for i in [0u64, 1, 999] {
            let a: Vec<u64> = (0..4).map({
                let mut r = s.stream(i);
                move |_| r.next_u64()
            }).collect();
            let mut r2 = trace_rng(42, i);
            let b: Vec<u64> = (0..4).map(|_| r2.next_u64()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn austere_examples() {
        let mut rng = trace_rng(3, 0);
        assert_eq!(austere_channel(&"0".parse().unwrap(), 0.7, &mut rng).unwrap().to_string(), "0");
        assert_eq!(
            austere_channel(&"1101".parse().unwrap(), 0.0, &mut rng).unwrap().to_string(),
            "1101"
        );
        assert!(austere_channel(&"111".parse().unwrap(), 0.2, &mut rng).is_err());
        // Both zeros of "100" follow the one, so the output never varies.
        let x: BitString = "100".parse().unwrap();
        for i in 0..100 {
            assert_eq!(austere_channel(&x, 0.0, &mut trace_rng(9, i)).unwrap().to_string(), "10");
        }
        // With the one between the zeros the kept zero is visible.
        let x: BitString = "010".parse().unwrap();
        let n = 100_000;
        let mut hits = 0;
        for i in 0..n {
            let t = austere_channel(&x, 0.0, &mut trace_rng(9, i)).unwrap().to_string();
            assert!(t == "10" || t == "01");
            hits += (t == "10") as u32;
        }
        let f = hits as f64 / n as f64;
        assert!((f - 0.5).abs() <= 0.01, "freq {f}");
    }

    #[test]
    fn reduce_examples() {
        let mut rng = trace_rng(3, 1);
        assert!(reduce_to_austere(&"111".parse().unwrap(), &mut rng).is_none());
        assert_eq!(reduce_to_austere(&"101".parse().unwrap(), &mut rng).unwrap().to_string(), "101");
        for i in 0..50 {
            let out = reduce_to_austere(&"1001".parse().unwrap(), &mut trace_rng(4, i)).unwrap();
            assert_eq!(out.to_string(), "101");
        }
    }

    #[test]
    fn matrix_examples() {
        let x = BitMatrix::identity(2);
        let mut rng = trace_rng(1, 1);
        assert_eq!(delete_matrix(&x, 0.0, &mut rng).0, x);
        let (t, r, c) = delete_matrix(&x, 1.0, &mut rng);
        assert_eq!((t.rows(), t.cols(), r.len(), c.len()), (0, 0, 0, 0));
        let n = 100_000;
        let full = (0..n)
            .filter(|&i| delete_matrix(&x, 0.5, &mut trace_rng(2, i)).0 == x)
            .count();
        let f = full as f64 / n as f64;
        assert!((f - 0.0625).abs() <= 0.005, "freq {f}");
    }

    #[test]
    fn matrix_transpose_commutes() {
        let mut g = trace_rng(77, 0);
        let x = random_matrix(7, 5, 0.5, &mut g);
        for i in 0..20 {
            let (a, _, _) = delete_matrix_split(&x, 0.4, &mut trace_rng(1, i), &mut trace_rng(2, i));
            let (b, _, _) =
                delete_matrix_split(&x.transpose(), 0.4, &mut trace_rng(2, i), &mut trace_rng(1, i));
            assert_eq!(b.transpose(), a);
        }
    }

    // P(nonempty trace) for 2x2x2 all ones: enumerate the 2^6 line patterns.
    #[test]
    fn tensor_nonempty_probability() {
        let mut exact = 0.0;
        for pat in 0u32..64 {
            let kept = |axis: u32| (pat >> (2 * axis)) & 3;
            let nonempty = (0..3).all(|a| kept(a) != 0);
            if nonempty {
                exact += 0.5f64.powi(6);
            }
        }
        assert!((exact - 0.421875).abs() < 1e-15);
        let t = BitTensor::new(vec![2, 2, 2], vec![1; 8]).unwrap();
        let n = 100_000;
        let hits = (0..n)
            .filter(|&i| !delete_tensor(&t, 0.5, &mut trace_rng(8, i)).0.is_empty())
            .count();
        let f = hits as f64 / n as f64;
        assert!((f - exact).abs() < 0.01, "freq {f}");
    }

    #[test]
    fn order_one_tensor_is_a_string() {
        let mut g = trace_rng(5, 5);
        let x = random_string(150, 0.5, &mut g);
        let t = BitTensor::new(vec![150], x.to_vec()).unwrap();
        for (i, p) in [0.5, 0.3].into_iter().enumerate() {
            let (a, _) = delete_sequence(&x, ChannelParams::symmetric(p).unwrap(), &mut trace_rng(6, i as u64));
            let (b, _) = delete_tensor(&t, p, &mut trace_rng(6, i as u64));
            assert_eq!(a.to_vec(), b.bits());
        }
        assert_eq!(delete_tensor(&t, 0.0, &mut g).0, t);
    }

    #[test]
    fn random_input_extremes() {
        let mut g = trace_rng(1, 2);
        assert_eq!(random_string(300, 0.0, &mut g).count_ones(), 0);
        assert_eq!(random_string(300, 1.0, &mut g).count_ones(), 300);
        let s = random_string(10_000, 0.5, &mut g);
        assert!((s.count_ones() as f64 / 1e4 - 0.5).abs() <= 0.02);
        match random_input(InputKind::Matrix, &[3, 4], 1.0, &mut g).unwrap() {
            Input::Matrix(m) => assert_eq!(m.bits().iter().map(|&b| b as usize).sum::<usize>(), 12),
            _ => unreachable!(),
        }
        assert!(random_input(InputKind::String, &[2, 2], 0.5, &mut g).is_err());
    }

    #[test]
    fn sparse_sampler_matches_dense_channel() {
        // Mean and variance of the received position of each one.
        let ones = [30usize, 90];
        let n = 150;
        let x = BitString::from_ones(n, &ones).unwrap();
        for params in [ChannelParams::symmetric(0.5).unwrap(), ChannelParams::new(0.3, 0.6).unwrap()] {
            let trials = 40_000u64;
            let mut dense = [0.0f64; 3];
            let mut sparse = [0.0f64; 3];
            for i in 0..trials {
                let a = SparseTrace::from_bits(&delete_sequence_trace(&x, params, &mut trace_rng(1, i)));
                let (b, _) = sparse_trace(&ones, n, params, &mut trace_rng(2, i));
                for (acc, t) in [(&mut dense, a), (&mut sparse, b)] {
                    acc[0] += t.len as f64;
                    acc[1] += t.ones.len() as f64;
                    acc[2] += t.ones.first().map_or(0.0, |&p| p as f64);
                }
            }
            for k in 0..3 {
                let (d, s) = (dense[k] / trials as f64, sparse[k] / trials as f64);
                assert!((d - s).abs() < 0.03 * d.max(1.0), "stat {k}: {d} vs {s}");
            }
        }
    }

    #[test]
    fn sparse_labels_point_at_sources() {
        let ones = [5usize, 40, 41];
        for i in 0..200 {
            let (t, l) = sparse_trace(&ones, 60, ChannelParams::symmetric(0.5).unwrap(), &mut trace_rng(3, i));
            assert_eq!(t.ones.len(), l.len());
            assert!(l.windows(2).all(|w| w[0] < w[1]));
            assert!(t.ones.iter().all(|&p| p < t.len));
        }
    }

    proptest! {
        #[test]
        fn retention_map_reproduces_trace(bits in prop::collection::vec(0u8..2, 0..200),
                                          p0 in 0.0f64..1.0, p1 in 0.0f64..1.0, seed in any::<u64>()) {
            let x = BitString::from_bits(bits.iter().copied());
            for params in [ChannelParams::new(p0, p1).unwrap(), ChannelParams::symmetric(p0).unwrap()] {
                let (t, m) = delete_sequence(&x, params, &mut trace_rng(seed, 0));
                prop_assert!(m.kept.windows(2).all(|w| w[0] < w[1]));
                prop_assert_eq!(m.len(), t.len());
                for (j, &i) in m.kept.iter().enumerate() {
                    prop_assert_eq!(x.get(i), t.get(j));
                }
                let (t2, _) = delete_sequence(&x, params, &mut trace_rng(seed, 0));
                prop_assert_eq!(t2, t.clone());
                prop_assert_eq!(delete_sequence_trace(&x, params, &mut trace_rng(seed, 0)), t);
            }
        }

        #[test]
        fn matrix_maps_are_consistent(r in 0usize..6, c in 0usize..6, p in 0.0f64..1.0, seed in any::<u64>()) {
            let x = random_matrix(r, c, 0.5, &mut trace_rng(seed, 1));
            let (t, rm, cm) = delete_matrix(&x, p, &mut trace_rng(seed, 2));
            prop_assert_eq!((t.rows(), t.cols()), (rm.len(), cm.len()));
            for (i, &ri) in rm.kept.iter().enumerate() {
                for (j, &cj) in cm.kept.iter().enumerate() {
                    prop_assert_eq!(t.get(i, j), x.get(ri, cj));
                }
            }
            prop_assert_eq!(delete_matrix(&x, 0.0, &mut trace_rng(seed, 3)).0, x);
        }
    }
}
