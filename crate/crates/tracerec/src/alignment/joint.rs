//! Joint alignment of grid traces against a growing consensus profile.
//!
//! Line-by-line oracles need long lines. For small grids we instead align a
//! whole trace at once: a monotone map per axis from trace lines to profile
//! lines, chosen so that no mapped bit disagrees with the profile. Axis 0 is
//! searched with a beam; each state keeps, for every remaining trace line
//! (flattened over the other axes), the set of profile positions still
//! compatible, and the longest common subsequence of these sets bounds what
//! the other axes can still match. Traces are merged into the profile in
//! order of confidence, then every trace is realigned against the final
//! profile.

use serde::{Deserialize, Serialize};

use crate::bits::{strides, unflatten, BitTensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointParams {
    /// Beam width of the axis-0 search.
    pub beam: usize,
    /// Weight of the lines still to place in the beam score.
    pub lookahead: f64,
    /// Beam states fully decoded at the end.
    pub finalists: usize,
    /// Merge when agreements reach `merge_ratio` bits per bit of alignment
    /// freedom.
    pub merge_ratio: f64,
    /// Realignment passes after all merges.
    pub refine: usize,
}

impl Default for JointParams {
    fn default() -> Self {
        Self {
            beam: 100,
            lookahead: 0.8,
            finalists: 3,
            merge_ratio: 1.6,
            refine: 2,
        }
    }
}

/// Vote counts per cell of the consensus.
#[derive(Clone, Debug)]
pub struct Profile {
    pub shape: Vec<usize>,
    pub counts: Vec<[u32; 2]>,
}

impl Profile {
    fn from_trace(t: &BitTensor) -> Self {
        let counts = t.bits().iter().map(|&b| if b == 1 { [0, 1] } else { [1, 0] }).collect();
        Self { shape: t.dims().to_vec(), counts }
    }

    pub fn value(&self, flat: usize) -> Option<u8> {
        let [z, o] = self.counts[flat];
        match o.cmp(&z) {
            std::cmp::Ordering::Greater => Some(1),
            std::cmp::Ordering::Less => Some(0),
            std::cmp::Ordering::Equal => None,
        }
    }
}

/// Per-axis maps from trace lines to profile lines, -1 for unmatched.
pub type AxisMaps = Vec<Vec<i32>>;

#[derive(Clone, Debug)]
pub struct JointAlignment {
    pub profile: Profile,
    /// Final maps per trace; `None` for empty traces or traces whose best
    /// alignment disagrees with the consensus.
    pub maps: Vec<Option<AxisMaps>>,
    /// Traces never merged while the profile was built.
    pub unmerged: usize,
}

struct Indexed<'a> {
    t: &'a BitTensor,
    idx: Vec<u32>,
}

impl<'a> Indexed<'a> {
    fn new(t: &'a BitTensor) -> Self {
        let shape = t.dims();
        let k = shape.len();
        let mut idx = vec![0u32; t.len() * k];
        let mut ix = vec![0usize; k];
        for i in 0..t.len() {
            unflatten(i, shape, &mut ix);
            for d in 0..k {
                idx[i * k + d] = ix[d] as u32;
            }
        }
        Self { t, idx }
    }

    fn at(&self, i: usize) -> &[u32] {
        let k = self.t.order();
        &self.idx[i * k..(i + 1) * k]
    }
}

fn words(n: usize) -> usize {
    n.div_ceil(64)
}

/// Bit-parallel LCS length between the trace lines and profile positions,
/// where `masks` marks, for each trace line, the compatible positions.
fn lcs_len(masks: &[u64], rows: usize, w: usize, n: usize) -> u32 {
    let mut v = vec![!0u64; w];
    for b in 0..rows {
        let m = &masks[b * w..(b + 1) * w];
        let mut carry = 0u64;
        for k in 0..w {
            let u = v[k] & m[k];
            let (s1, c1) = v[k].overflowing_add(u);
            let (s2, c2) = s1.overflowing_add(carry);
            carry = (c1 | c2) as u64;
            v[k] = s2 | (v[k] & !m[k]);
        }
    }
    (0..n).filter(|&j| v[j / 64] >> (j % 64) & 1 == 0).count() as u32
}

/// Monotone partial matching of `a` items to `n` slots maximizing the summed
/// positive weights.
fn monotone_match(wt: &[i64], a: usize, n: usize) -> Vec<i32> {
    let cols = n + 1;
    let mut d = vec![0i64; (a + 1) * cols];
    for i in 0..a {
        for j in 0..n {
            let skip = d[i * cols + j + 1].max(d[(i + 1) * cols + j]);
            let w = wt[i * n + j];
            let take = if w > 0 { d[i * cols + j] + w } else { i64::MIN };
            d[(i + 1) * cols + j + 1] = skip.max(take);
        }
    }
    let mut f = vec![-1; a];
    let (mut i, mut j) = (a, n);
    while i > 0 && j > 0 {
        let cur = d[i * cols + j];
        let w = wt[(i - 1) * n + j - 1];
        if w > 0 && cur == d[(i - 1) * cols + j - 1] + w {
            f[i - 1] = (j - 1) as i32;
            i -= 1;
            j -= 1;
        } else if cur == d[(i - 1) * cols + j] {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    f
}

/// Number of mapped bits agreeing with the consensus, or `None` if any
/// mapped bit contradicts it.
fn agreement(b: &Indexed, p: &Profile, maps: &AxisMaps) -> Option<u32> {
    let ps = strides(&p.shape);
    let mut s = 0;
    'cell: for (i, &bit) in b.t.bits().iter().enumerate() {
        let mut flat = 0;
        for (d, &x) in b.at(i).iter().enumerate() {
            let k = maps[d][x as usize];
            if k < 0 {
                continue 'cell;
            }
            flat += k as usize * ps[d];
        }
        match p.value(flat) {
            Some(v) if v == bit => s += 1,
            Some(_) => return None,
            None => {}
        }
    }
    Some(s)
}

const VETO: i64 = -1_000_000_000;

/// Coordinate ascent: rematch one axis at a time with the others fixed.
fn polish(b: &Indexed, p: &Profile, mut maps: AxisMaps) -> (Option<u32>, AxisMaps) {
    let k = b.t.order();
    let ps = strides(&p.shape);
    let shape = b.t.dims();
    let mut best = agreement(b, p, &maps).map_or(-1, |x| x as i64);
    let mut stall = 0;
    let mut d = 0;
    for _ in 0..6 * k {
        let (nb, np) = (shape[d], p.shape[d]);
        let mut wt = vec![0i64; nb * np];
        'cell: for (i, &bit) in b.t.bits().iter().enumerate() {
            let ix = b.at(i);
            let mut base = 0;
            for e in 0..k {
                if e == d {
                    continue;
                }
                let kk = maps[e][ix[e] as usize];
                if kk < 0 {
                    continue 'cell;
                }
                base += kk as usize * ps[e];
            }
            let row = ix[d] as usize * np;
            for kk in 0..np {
                let w = &mut wt[row + kk];
                if *w <= VETO / 2 {
                    continue;
                }
                match p.value(base + kk * ps[d]) {
                    Some(v) if v == bit => *w += 1,
                    Some(_) => *w = VETO,
                    None => {}
                }
            }
        }
        let mut trial = maps.clone();
        trial[d] = monotone_match(&wt, nb, np);
        let sc = agreement(b, p, &trial).map_or(-1, |x| x as i64);
        if sc > best {
            best = sc;
            maps = trial;
            stall = 0;
        } else {
            stall += 1;
            if stall >= k {
                break;
            }
        }
        d = (d + 1) % k;
    }
    ((best >= 0).then_some(best as u32), maps)
}

struct State {
    f: Vec<i32>,
    last: i32,
    matched: u32,
    masks: Vec<u64>,
    score: f64,
}

/// Best disagreement-free alignment of a trace to the profile.
fn align(b: &Indexed, p: &Profile, params: &JointParams) -> (Option<u32>, AxisMaps) {
    let shape = b.t.dims();
    let k = shape.len();
    let rb: usize = shape[1..].iter().product();
    let rp: usize = p.shape[1..].iter().product();
    let w = words(rp);
    // eq[s][bit]: profile positions in slice s compatible with `bit`
    let mut eq = vec![[vec![0u64; w], vec![0u64; w]]; p.shape[0]];
    for (s, e) in eq.iter_mut().enumerate() {
        for j in 0..rp {
            let bit = 1u64 << (j % 64);
            match p.value(s * rp + j) {
                None => {
                    e[0][j / 64] |= bit;
                    e[1][j / 64] |= bit;
                }
                Some(x) => e[x as usize][j / 64] |= bit,
            }
        }
    }
    let full: Vec<u64> = (0..w)
        .map(|x| if (x + 1) * 64 <= rp { !0 } else { (1u64 << (rp - x * 64)) - 1 })
        .collect();
    let mut states = vec![State {
        f: Vec::new(),
        last: -1,
        matched: 0,
        masks: (0..rb).flat_map(|_| full.iter().copied()).collect(),
        score: 0.0,
    }];
    let n0 = shape[0];
    let bits = b.t.bits();
    for a in 0..n0 {
        let rem = params.lookahead * (n0 - a - 1) as f64;
        let mut next: Vec<State> = Vec::new();
        for s in &states {
            let g = lcs_len(&s.masks, rb, w, rp);
            let mut f = s.f.clone();
            f.push(-1);
            next.push(State {
                f,
                last: s.last,
                matched: s.matched,
                masks: s.masks.clone(),
                score: (s.matched as f64 + rem) * g as f64,
            });
            for kk in (s.last + 1) as usize..p.shape[0] {
                let mut m = s.masks.clone();
                for j in 0..rb {
                    let e = &eq[kk][bits[a * rb + j] as usize];
                    for x in 0..w {
                        m[j * w + x] &= e[x];
                    }
                }
                let g = lcs_len(&m, rb, w, rp);
                let mut f = s.f.clone();
                f.push(kk as i32);
                next.push(State {
                    f,
                    last: kk as i32,
                    matched: s.matched + 1,
                    masks: m,
                    score: ((s.matched + 1) as f64 + rem) * g as f64,
                });
            }
        }
        next.sort_by(|x, y| y.score.total_cmp(&x.score));
        next.truncate(params.beam.max(1));
        states = next;
    }
    let mut best: Option<(Option<u32>, AxisMaps)> = None;
    for s in states.iter().take(params.finalists.max(1)) {
        // decode the flattened LCS, then read off per-axis votes
        let at = |r: usize, j: usize| s.masks[r * w + j / 64] >> (j % 64) & 1 == 1;
        let cols = rp + 1;
        let mut d = vec![0u32; (rb + 1) * cols];
        for i in 0..rb {
            for j in 0..rp {
                d[(i + 1) * cols + j + 1] = d[i * cols + j + 1]
                    .max(d[(i + 1) * cols + j])
                    .max(d[i * cols + j] + at(i, j) as u32);
            }
        }
        let mut pairs = Vec::new();
        let (mut i, mut j) = (rb, rp);
        while i > 0 && j > 0 {
            if at(i - 1, j - 1) && d[i * cols + j] == d[(i - 1) * cols + j - 1] + 1 {
                pairs.push((i - 1, j - 1));
                i -= 1;
                j -= 1;
            } else if d[i * cols + j] == d[(i - 1) * cols + j] {
                i -= 1;
            } else {
                j -= 1;
            }
        }
        let mut maps = vec![s.f.clone()];
        let (mut bi, mut pi) = (vec![0; k - 1], vec![0; k - 1]);
        for ax in 1..k {
            let (nb, np) = (shape[ax], p.shape[ax]);
            let mut votes = vec![0i64; nb * np];
            for &(x, y) in &pairs {
                unflatten(x, &shape[1..], &mut bi);
                unflatten(y, &p.shape[1..], &mut pi);
                votes[bi[ax - 1] * np + pi[ax - 1]] += 1;
            }
            maps.push(monotone_match(&votes, nb, np));
        }
        let (sc, mp) = polish(b, p, maps);
        let better = match &best {
            None => true,
            Some((bs, _)) => sc.map_or(-1, |x| x as i64) > bs.map_or(-1, |x| x as i64),
        };
        if better {
            best = Some((sc, mp));
        }
    }
    best.unwrap()
}

// Interleave profile lines with the trace's unmatched lines along one axis.
fn merge_axis(np: usize, f: &[i32]) -> Vec<(Option<usize>, Option<usize>)> {
    let mut out = Vec::new();
    let mut k = 0usize;
    let mut pending: Vec<usize> = Vec::new();
    let flush = |out: &mut Vec<(Option<usize>, Option<usize>)>, k: &mut usize, upto: usize, pending: &mut Vec<usize>| {
        // unmatched trace lines are only inserted where no profile line is skipped
        if *k == upto {
            out.extend(pending.iter().map(|&b| (None, Some(b))));
        }
        out.extend((*k..upto).map(|x| (Some(x), None)));
        *k = upto;
        pending.clear();
    };
    for (a, &fa) in f.iter().enumerate() {
        if fa >= 0 {
            flush(&mut out, &mut k, fa as usize, &mut pending);
            out.push((Some(fa as usize), Some(a)));
            k += 1;
        } else {
            pending.push(a);
        }
    }
    flush(&mut out, &mut k, np, &mut pending);
    out
}

fn merge(p: &mut Profile, b: &BitTensor, maps: &AxisMaps) {
    let k = b.order();
    let orders: Vec<_> = (0..k).map(|d| merge_axis(p.shape[d], &maps[d])).collect();
    let shape: Vec<usize> = orders.iter().map(Vec::len).collect();
    let total: usize = shape.iter().product();
    let (ps, bs) = (strides(&p.shape), strides(b.dims()));
    let mut counts = vec![[0u32; 2]; total];
    let mut ix = vec![0; k];
    for (i, c) in counts.iter_mut().enumerate() {
        unflatten(i, &shape, &mut ix);
        let (mut po, mut bo) = (Some(0), Some(0));
        for d in 0..k {
            let (pp, bb) = orders[d][ix[d]];
            po = po.zip(pp).map(|(a, x)| a + x * ps[d]);
            bo = bo.zip(bb).map(|(a, x)| a + x * bs[d]);
        }
        if let Some(po) = po {
            *c = p.counts[po];
        }
        if let Some(bo) = bo {
            c[b.bits()[bo] as usize] += 1;
        }
    }
    p.shape = shape;
    p.counts = counts;
}

fn log2_choose(n: usize, k: usize) -> f64 {
    (0..k).map(|i| ((n - i) as f64 / (i + 1) as f64).log2()).sum()
}

/// Bits needed to describe a monotone interleaving of trace and profile lines.
fn freedom(b: &BitTensor, p: &Profile) -> f64 {
    b.dims().iter().zip(&p.shape).map(|(&x, &y)| log2_choose(x + y, x)).sum()
}

/// Builds a consensus profile from the traces and aligns every trace to it.
pub fn joint_align(traces: &[BitTensor], params: &JointParams) -> JointAlignment {
    let m = traces.len();
    let indexed: Vec<Indexed> = traces.iter().map(Indexed::new).collect();
    let mut order: Vec<usize> = (0..m).filter(|&j| !traces[j].is_empty()).collect();
    if order.is_empty() {
        return JointAlignment {
            profile: Profile { shape: vec![0; traces.first().map_or(0, BitTensor::order)], counts: Vec::new() },
            maps: vec![None; m],
            unmerged: 0,
        };
    }
    order.sort_by_key(|&j| (std::cmp::Reverse(traces[j].len()), j));
    let mut p = Profile::from_trace(&traces[order[0]]);
    let mut pending: Vec<usize> = order[1..].to_vec();
    // merge the most confident traces first, rescoring after every sweep
    loop {
        let mut scored: Vec<(u64, usize)> = pending
            .iter()
            .map(|&j| {
                let s = align(&indexed[j], &p, params).0.unwrap_or(0) as f64;
                ((s / freedom(&traces[j], &p) * 1000.0) as u64, j)
            })
            .collect();
        scored.sort_by(|a, b| b.cmp(a));
        let mut merged = false;
        let mut rest = Vec::new();
        for &(s, j) in &scored {
            if (s as f64) < params.merge_ratio * 1000.0 {
                rest.push(j);
                continue;
            }
            let (s2, maps) = align(&indexed[j], &p, params);
            if s2.is_some_and(|x| x as f64 >= params.merge_ratio * freedom(&traces[j], &p)) {
                merge(&mut p, &traces[j], &maps);
                merged = true;
            } else {
                rest.push(j);
            }
        }
        pending = rest;
        if !merged || pending.is_empty() {
            break;
        }
    }
    let unmerged = pending.len();
    let recount = |p: &Profile, maps: &[Option<AxisMaps>]| {
        let ps = strides(&p.shape);
        let mut counts = vec![[0u32; 2]; p.counts.len()];
        for (j, mp) in maps.iter().enumerate() {
            let Some(mp) = mp else { continue };
            'cell: for (i, &bit) in traces[j].bits().iter().enumerate() {
                let mut f = 0;
                for (d, &x) in indexed[j].at(i).iter().enumerate() {
                    let kk = mp[d][x as usize];
                    if kk < 0 {
                        continue 'cell;
                    }
                    f += kk as usize * ps[d];
                }
                counts[f][bit as usize] += 1;
            }
        }
        counts
    };
    let mut maps: Vec<Option<AxisMaps>> = vec![None; m];
    for _ in 0..params.refine {
        for &j in &order {
            maps[j] = Some(align(&indexed[j], &p, params).1);
        }
        p.counts = recount(&p, &maps);
    }
    // keep only traces that agree with the final consensus everywhere
    for &j in &order {
        let mp = match maps[j].take() {
            Some(mp) => mp,
            None => align(&indexed[j], &p, params).1,
        };
        maps[j] = agreement(&indexed[j], &p, &mp).map(|_| mp);
    }
    JointAlignment { profile: p, maps, unmerged }
}
