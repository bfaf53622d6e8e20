//! Reconstruction of strings whose ones are separated by long zero runs.
//!
//! Every received one becomes a vertex carrying its position `z` in its trace
//! and the trace index `t`. Ones from the same source position land close to
//! each other on the `z` axis, so clustering the vertices by a distance
//! threshold recovers the correspondence. [`find_positions`] does this in one
//! level; [`recur_gap`] refines clusters level by level, re-centering each
//! trace's positions on its first one in the cluster and discarding traces
//! whose span inside a cluster is suspiciously short.
//!
//! Hidden labels (which source one a vertex came from) are only used by the
//! instrumentation helpers at the bottom of this module.

use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::channels::OnesTrace;
use crate::error::{Error, Result};
use crate::estimators::{binomial_mean_estimate_q, lower_median};

/// Received ones of a batch of traces, in trace order then position order.
#[derive(Clone, Debug, Default)]
pub struct VertexSet {
    pub z: Vec<u32>,
    pub t: Vec<u32>,
    pub traces: usize,
}

impl VertexSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_traces<T: OnesTrace>(traces: &[T]) -> Self {
        let mut vs = Self::new();
        for tr in traces {
            vs.push_trace(tr);
        }
        vs
    }

    pub fn push_trace<T: OnesTrace + ?Sized>(&mut self, trace: &T) {
        let t = self.traces as u32;
        trace.visit_ones(&mut |p| {
            self.z.push(p as u32);
            self.t.push(t);
        });
        self.traces += 1;
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// Connected components of the graph joining entries in the same group whose
/// positions differ by at most `tau / divisor`.
///
/// On a line this is gap cutting: sort by (group, position) and split
/// wherever the group changes or consecutive positions are too far apart.
/// Components are returned in (group, smallest position) order, each listing
/// entry indices in position order.
pub fn components_by_threshold(
    positions: &[i64],
    tau: f64,
    divisor: f64,
    groups: Option<&[u32]>,
) -> Vec<Vec<usize>> {
    let n = positions.len();
    if let Some(g) = groups {
        assert_eq!(g.len(), n, "one group id per position");
    }
    let group = |i: usize| groups.map_or(0, |g| g[i]);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by_key(|&i| (group(i), positions[i], i));
    let limit = tau / divisor;
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (j, &i) in order.iter().enumerate() {
        let split = j == 0 || {
            let prev = order[j - 1];
            group(prev) != group(i) || (positions[i] - positions[prev]) as f64 > limit
        };
        if split {
            out.push(Vec::new());
        }
        out.last_mut().unwrap().push(i);
    }
    out
}

/// Tuning knobs for [`find_positions`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FindParams {
    /// Edge threshold is `edge_const * sqrt(n ln(m n^3))`.
    pub edge_const: f64,
    /// Retention probability of the channel (symmetric).
    pub q: f64,
    /// Number of ones, if known; otherwise estimated from trace weights.
    pub k: Option<usize>,
}

impl Default for FindParams {
    fn default() -> Self {
        Self {
            edge_const: std::f64::consts::SQRT_2,
            q: 0.5,
            k: None,
        }
    }
}

pub fn find_positions_threshold(n: usize, m: usize, edge_const: f64) -> f64 {
    let (n, m) = (n.max(1) as f64, m.max(1) as f64);
    edge_const * (n * (m * n * n * n).ln()).sqrt()
}

/// Whether the gap meets the FindPositions separation `4 sqrt(2 n ln(m n^3))`.
pub fn find_positions_precondition(n: usize, g: usize, m: usize) -> bool {
    g as f64 >= 4.0 * find_positions_threshold(n, m, std::f64::consts::SQRT_2)
}

/// k estimated as round(mean ones per trace / q).
pub fn estimate_ones(vertices: usize, traces: usize, q: f64) -> usize {
    if traces == 0 {
        return 0;
    }
    (vertices as f64 / traces as f64 / q).round() as usize
}

/// One-level clustering of received ones. Returns the sorted estimated
/// positions (0-based) of the ones of the source.
pub fn find_positions<T: OnesTrace>(traces: &[T], n: usize, params: &FindParams) -> Result<Vec<u64>> {
    let vs = VertexSet::from_traces(traces);
    find_positions_vertices(&vs, n, params)
}

pub fn find_positions_vertices(vs: &VertexSet, n: usize, params: &FindParams) -> Result<Vec<u64>> {
    let k = params
        .k
        .unwrap_or_else(|| estimate_ones(vs.len(), vs.traces, params.q));
    let pos: Vec<i64> = vs.z.iter().map(|&z| z as i64).collect();
    let tau = find_positions_threshold(n, vs.traces, params.edge_const);
    let comps = components_by_threshold(&pos, tau, 1.0, None);
    if comps.len() != k {
        return Err(Error::ComponentCountMismatch {
            found: comps.len(),
            expected: k,
        });
    }
    comps
        .iter()
        .map(|c| {
            let zs: Vec<u64> = c.iter().map(|&i| vs.z[i] as u64).collect();
            binomial_mean_estimate_q(&zs, params.q)
        })
        .collect()
}

/// Thresholds and constants of the hierarchical clustering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapParams {
    /// tau_1 .. tau_D; the number of levels is `thresholds.len()`.
    pub thresholds: Vec<f64>,
    /// Vertices are joined when positions differ by at most tau_d / divisor.
    pub edge_divisor: f64,
    /// Length filter drops spans of length <= L - filter_const sqrt(L ln(kmn)).
    pub filter_const: f64,
    /// Minimum number of retained samples per position estimate.
    pub min_retained: usize,
    pub q: f64,
}

pub const TAU1_CONST: f64 = 4.0 * std::f64::consts::SQRT_2;
pub const TAUD_CONST: f64 = 80.0;
pub const FILTER_CONST: f64 = 2.0 * std::f64::consts::SQRT_2;

impl GapParams {
    /// tau_1 = 4 sqrt(2 n ln(nmk)), tau_d = 80 sqrt(k tau_{d-1} ln(mnk)).
    pub fn asymptotic(n: usize, m: usize, k: usize, levels: usize) -> Self {
        let l = ((n.max(1) * m.max(1) * k.max(1)) as f64).ln();
        let mut th: Vec<f64> = Vec::with_capacity(levels);
        for d in 0..levels {
            let tau = if d == 0 {
                TAU1_CONST * (n as f64 * l).sqrt()
            } else {
                TAUD_CONST * (k as f64 * th[d - 1] * l).sqrt()
            };
            th.push(tau);
        }
        Self {
            thresholds: th,
            edge_divisor: 4.0,
            filter_const: FILTER_CONST,
            min_retained: 100,
            q: 0.5,
        }
    }

    pub fn levels(&self) -> usize {
        self.thresholds.len()
    }
}

/// One cluster at one level.
#[derive(Clone, Debug, Default)]
pub struct Component {
    /// Index of the enclosing component one level up.
    pub parent: Option<usize>,
    /// Vertex ids clustered here, ascending (so grouped by trace).
    pub vertices: Vec<u32>,
    /// Vertex ids surviving the length filter.
    pub survivors: Vec<u32>,
    /// Longest per-trace span r - l + 1.
    pub max_len: u32,
    pub cutoff: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Level {
    pub tau: f64,
    pub components: Vec<Component>,
}

#[derive(Clone, Debug, Default)]
pub struct ClusterForest {
    pub levels: Vec<Level>,
    pub traces: usize,
}

impl ClusterForest {
    pub fn leaves(&self) -> &[Component] {
        self.levels.last().map_or(&[], |l| &l.components)
    }
}

/// Runs of equal trace index inside an ascending vertex id list.
fn trace_runs<'a>(ids: &'a [u32], vs: &'a VertexSet) -> impl Iterator<Item = &'a [u32]> + 'a {
    let mut rest = ids;
    std::iter::from_fn(move || {
        if rest.is_empty() {
            return None;
        }
        let t = vs.t[rest[0] as usize];
        let end = rest.iter().position(|&v| vs.t[v as usize] != t).unwrap_or(rest.len());
        let (head, tail) = rest.split_at(end);
        rest = tail;
        Some(head)
    })
}

/// Hierarchical clustering with per-level length filters.
pub fn recur_gap<T: OnesTrace>(traces: &[T], n: usize, k: usize, params: &GapParams) -> ClusterForest {
    recur_gap_vertices(&VertexSet::from_traces(traces), n, k, params)
}

pub fn recur_gap_vertices(vs: &VertexSet, n: usize, k: usize, params: &GapParams) -> ClusterForest {
    let log_kmn = ((k.max(1) * vs.traces.max(1)) as f64 * n.max(1) as f64).ln();
    let mut active: Vec<u32> = (0..vs.len() as u32).collect();
    let mut pos: Vec<i64> = vs.z.iter().map(|&z| z as i64).collect();
    let mut group: Vec<u32> = vec![0; active.len()];
    let mut forest = ClusterForest {
        levels: Vec::with_capacity(params.levels()),
        traces: vs.traces,
    };
    for (d, &tau) in params.thresholds.iter().enumerate() {
        let apos: Vec<i64> = active.iter().map(|&v| pos[v as usize]).collect();
        let groups = if d == 0 { None } else { Some(&group[..]) };
        let comps = components_by_threshold(&apos, tau, params.edge_divisor, groups);
        let mut level = Level {
            tau,
            components: Vec::with_capacity(comps.len()),
        };
        let mut next_active = Vec::new();
        let mut next_group = Vec::new();
        for (ci, members) in comps.iter().enumerate() {
            let parent = if d == 0 { None } else { Some(group[members[0]] as usize) };
            let mut ids: Vec<u32> = members.iter().map(|&i| active[i]).collect();
            ids.sort_unstable();
            let mut max_len = 0u32;
            for run in trace_runs(&ids, vs) {
                let (lo, hi) = (vs.z[run[0] as usize], vs.z[*run.last().unwrap() as usize]);
                max_len = max_len.max(hi - lo + 1);
            }
            let l = max_len as f64;
            let cutoff = l - params.filter_const * (l * log_kmn).sqrt();
            let mut survivors = Vec::new();
            for run in trace_runs(&ids, vs) {
                let lo = vs.z[run[0] as usize];
                let len = vs.z[*run.last().unwrap() as usize] - lo + 1;
                if len as f64 > cutoff {
                    for &v in run {
                        survivors.push(v);
                        pos[v as usize] = (vs.z[v as usize] - lo) as i64;
                        next_active.push(v);
                        next_group.push(ci as u32);
                    }
                }
            }
            level.components.push(Component {
                parent,
                vertices: ids,
                survivors,
                max_len,
                cutoff,
            });
        }
        forest.levels.push(level);
        active = next_active;
        group = next_group;
    }
    forest
}

/// Whether the gap meets the RecurGap requirement g >= 2 tau_D.
pub fn gap_precondition(g: usize, params: &GapParams) -> bool {
    params.thresholds.last().is_some_and(|&t| g as f64 >= 2.0 * t)
}

fn mean_z(ids: &[u32], vs: &VertexSet) -> f64 {
    if ids.is_empty() {
        return f64::INFINITY;
    }
    ids.iter().map(|&v| vs.z[v as usize] as f64).sum::<f64>() / ids.len() as f64
}

/// Children of every component, ordered by mean received position.
fn children(forest: &ClusterForest, vs: &VertexSet) -> Vec<Vec<Vec<usize>>> {
    let mut out: Vec<Vec<Vec<usize>>> = forest
        .levels
        .iter()
        .map(|l| vec![Vec::new(); l.components.len()])
        .collect();
    for d in 1..forest.levels.len() {
        for (ci, c) in forest.levels[d].components.iter().enumerate() {
            out[d - 1][c.parent.expect("non-root has parent")].push(ci);
        }
        let level = &forest.levels[d];
        for list in out[d - 1].iter_mut() {
            list.sort_by(|&a, &b| {
                mean_z(&level.components[a].survivors, vs)
                    .total_cmp(&mean_z(&level.components[b].survivors, vs))
            });
        }
    }
    out
}

/// For every leaf, the leaves whose ones a trace must contain before it is
/// used to estimate that leaf's position: the designated endpoints of each
/// ancestor, where a block's designated set is the union of those of its first
/// and last sub-blocks (a single sub-block passes its own set up).
pub fn designated_sets(forest: &ClusterForest, vs: &VertexSet) -> Vec<Vec<usize>> {
    let depth = forest.levels.len();
    if depth == 0 {
        return Vec::new();
    }
    let kids = children(forest, vs);
    // des[d][c]: designated leaves of component c at level d
    let mut des: Vec<Vec<Vec<usize>>> = vec![Vec::new(); depth];
    des[depth - 1] = (0..forest.levels[depth - 1].components.len()).map(|c| vec![c]).collect();
    for d in (0..depth - 1).rev() {
        des[d] = kids[d]
            .iter()
            .map(|ch| match ch.as_slice() {
                [] => Vec::new(),
                [only] => des[d + 1][*only].clone(),
                [first, .., last] => {
                    let mut s = des[d + 1][*first].clone();
                    s.extend(des[d + 1][*last].iter().copied());
                    s
                }
            })
            .collect();
    }
    let leaves = &forest.levels[depth - 1].components;
    (0..leaves.len())
        .map(|leaf| {
            let mut set = Vec::new();
            let mut d = depth - 1;
            let mut c = leaf;
            while d > 0 {
                c = forest.levels[d].components[c].parent.unwrap();
                d -= 1;
                set.extend(des[d][c].iter().copied());
            }
            set.sort_unstable();
            set.dedup();
            set
        })
        .collect()
}

fn presence(ids: &[u32], vs: &VertexSet) -> Vec<u64> {
    let mut bits = vec![0u64; vs.traces.div_ceil(64)];
    for &v in ids {
        let t = vs.t[v as usize] as usize;
        bits[t / 64] |= 1 << (t % 64);
    }
    bits
}

/// Traces retained for each leaf: those holding a vertex in every designated
/// leaf. Returned as packed bitsets over trace indices.
pub fn retained_traces(forest: &ClusterForest, vs: &VertexSet) -> Vec<Vec<u64>> {
    let leaves = forest.leaves();
    let present: Vec<Vec<u64>> = leaves.iter().map(|c| presence(&c.survivors, vs)).collect();
    designated_sets(forest, vs)
        .iter()
        .map(|set| {
            let mut keep = vec![!0u64; vs.traces.div_ceil(64)];
            for &s in set {
                for (k, p) in keep.iter_mut().zip(&present[s]) {
                    *k &= p;
                }
            }
            keep
        })
        .collect()
}

/// Position estimates per leaf, together with the sample counts they used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DebiasReport {
    pub positions: Vec<u64>,
    pub retained: Vec<usize>,
}

/// Estimates every leaf's source position from traces that contain all its
/// designated ones. A designated one to the left is known to be present, so
/// z - |S_L| ~ Bin(p - |S_L|, q).
pub fn debias_and_estimate(forest: &ClusterForest, vs: &VertexSet, params: &GapParams) -> Result<DebiasReport> {
    let leaves = forest.leaves();
    let sets = designated_sets(forest, vs);
    let keep = retained_traces(forest, vs);
    let order: Vec<f64> = leaves.iter().map(|c| mean_z(&c.survivors, vs)).collect();
    let mut idx: Vec<usize> = (0..leaves.len()).collect();
    idx.sort_by(|&a, &b| order[a].total_cmp(&order[b]));
    let mut positions = Vec::with_capacity(leaves.len());
    let mut retained = Vec::with_capacity(leaves.len());
    for &u in &idx {
        let left = sets[u].iter().filter(|&&s| order[s] < order[u]).count() as u64;
        let samples: Vec<u64> = leaves[u]
            .survivors
            .iter()
            .filter(|&&v| {
                let t = vs.t[v as usize] as usize;
                keep[u][t / 64] >> (t % 64) & 1 == 1
            })
            .map(|&v| (vs.z[v as usize] as u64).saturating_sub(left))
            .collect();
        if samples.len() < params.min_retained.max(1) {
            return Err(Error::InsufficientSurvivors {
                component: u,
                kept: samples.len(),
                need: params.min_retained.max(1),
            });
        }
        positions.push(left + binomial_mean_estimate_q(&samples, params.q)?);
        retained.push(samples.len());
    }
    Ok(DebiasReport { positions, retained })
}

/// Full gapped pipeline: cluster, debias, estimate, and lay the ones out in a
/// string of length `n`.
pub fn reconstruct_gapped<T: OnesTrace>(traces: &[T], n: usize, k: usize, params: &GapParams) -> Result<BitString> {
    let vs = VertexSet::from_traces(traces);
    let forest = recur_gap_vertices(&vs, n, k, params);
    if forest.leaves().len() != k {
        return Err(Error::ComponentCountMismatch {
            found: forest.leaves().len(),
            expected: k,
        });
    }
    if k == 0 {
        return Ok(BitString::zeros(n));
    }
    let rep = debias_and_estimate(&forest, &vs, params)?;
    let pos: Vec<usize> = rep.positions.iter().map(|&p| p as usize).collect();
    if pos.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Reconstruction(format!("estimated positions {pos:?} collide")));
    }
    BitString::from_ones(n, &pos).map_err(|e| Error::Reconstruction(e.to_string()))
}

/// Maximum-likelihood run length t from observed lengths distributed as
/// Bin(t, q) conditioned on being at least one.
pub fn run_length_mle(observed: &[u64], q: f64, max_t: u64) -> Result<u64> {
    if observed.is_empty() || observed.contains(&0) {
        return Err(Error::InvalidInput("run lengths must be positive and nonempty".into()));
    }
    let lo = *observed.iter().max().unwrap();
    let hi = max_t.max(lo);
    let mut lnfact = vec![0.0f64; hi as usize + 1];
    for i in 1..=hi as usize {
        lnfact[i] = lnfact[i - 1] + (i as f64).ln();
    }
    let mut hist: Vec<(u64, f64)> = Vec::new();
    let mut sorted = observed.to_vec();
    sorted.sort_unstable();
    for &x in &sorted {
        match hist.last_mut() {
            Some((v, c)) if *v == x => *c += 1.0,
            _ => hist.push((x, 1.0)),
        }
    }
    let nobs = observed.len() as f64;
    let sum: f64 = observed.iter().map(|&x| x as f64).sum();
    let (lq, lp) = (q.ln(), (1.0 - q).ln());
    let ll = |t: u64| -> f64 {
        let tt = t as usize;
        let comb: f64 = hist
            .iter()
            .map(|&(x, c)| c * (lnfact[tt] - lnfact[x as usize] - lnfact[tt - x as usize]))
            .sum();
        let norm = (1.0 - (1.0 - q).powi(t as i32)).ln();
        comb + sum * lq + (t as f64 * nobs - sum) * lp - nobs * norm
    };
    let mut best = (lo, ll(lo));
    for t in lo + 1..=hi {
        let v = ll(t);
        if v > best.1 {
            best = (t, v);
        }
    }
    Ok(best.0)
}

/// Options for [`reconstruct_runs`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunsParams {
    /// Absolute clustering threshold on collapsed positions.
    pub edge_threshold: f64,
    /// Use only traces showing every run instead of clustering.
    pub exact_runs: bool,
    pub q: f64,
    pub min_retained: usize,
}

impl RunsParams {
    pub fn for_length(n: usize, m: usize) -> Self {
        Self {
            edge_threshold: find_positions_threshold(n, m, std::f64::consts::SQRT_2),
            exact_runs: false,
            q: 0.5,
            min_retained: 100,
        }
    }
}

// (collapsed position, run length) of each 1-run of a trace
fn collapse(trace: &BitString) -> Vec<(u64, u64)> {
    let mut out = Vec::new();
    let (mut zeros, mut runs) = (0u64, 0u64);
    let mut cur = 0u64;
    for b in trace.iter() {
        if b == 1 {
            cur += 1;
        } else {
            if cur > 0 {
                out.push((zeros + runs, cur));
                runs += 1;
                cur = 0;
            }
            zeros += 1;
        }
    }
    if cur > 0 {
        out.push((zeros + runs, cur));
    }
    out
}

/// Reconstructs a string whose zero runs are long compared to its number of
/// runs: collapse each 1-run of each trace to a single one, locate the
/// collapsed ones, then recover the zero counts with the binomial mean
/// estimator and each 1-run length by maximum likelihood.
pub fn reconstruct_runs(traces: &[BitString], n: usize, params: &RunsParams) -> Result<BitString> {
    let collapsed: Vec<Vec<(u64, u64)>> = traces.iter().map(collapse).collect();
    // assignment[t][i] = run index of the i-th collapsed one of trace t
    let (r, assignment): (usize, Vec<Vec<Option<usize>>>) = if params.exact_runs {
        let r = collapsed.iter().map(Vec::len).max().unwrap_or(0);
        let asg = collapsed
            .iter()
            .map(|c| {
                if c.len() == r {
                    (0..r).map(Some).collect()
                } else {
                    vec![None; c.len()]
                }
            })
            .collect();
        (r, asg)
    } else {
        let mut owner = Vec::new();
        let mut pos = Vec::new();
        for (t, c) in collapsed.iter().enumerate() {
            for (i, &(p, _)) in c.iter().enumerate() {
                owner.push((t, i));
                pos.push(p as i64);
            }
        }
        let comps = components_by_threshold(&pos, params.edge_threshold, 1.0, None);
        let mut asg: Vec<Vec<Option<usize>>> = collapsed.iter().map(|c| vec![None; c.len()]).collect();
        for (j, comp) in comps.iter().enumerate() {
            for &e in comp {
                let (t, i) = owner[e];
                asg[t][i] = Some(j);
            }
        }
        (comps.len(), asg)
    };
    if r == 0 {
        return Ok(BitString::zeros(n));
    }
    let mut zero_samples: Vec<Vec<u64>> = vec![Vec::new(); r];
    let mut len_samples: Vec<Vec<u64>> = vec![Vec::new(); r];
    for (c, asg) in collapsed.iter().zip(&assignment) {
        // the run labels seen in this trace, in order; a prefix 0..j is needed
        let mut prefix = 0usize;
        for (&(p, len), a) in c.iter().zip(asg) {
            let Some(j) = *a else { continue };
            len_samples[j].push(len);
            if j == prefix {
                zero_samples[j].push(p - j as u64);
                prefix += 1;
            }
        }
    }
    let mut zeros_before = Vec::with_capacity(r);
    let mut lengths = Vec::with_capacity(r);
    for j in 0..r {
        if zero_samples[j].len() < params.min_retained.max(1) {
            return Err(Error::InsufficientSurvivors {
                component: j,
                kept: zero_samples[j].len(),
                need: params.min_retained.max(1),
            });
        }
        zeros_before.push(binomial_mean_estimate_q(&zero_samples[j], params.q)?);
        lengths.push(run_length_mle(&len_samples[j], params.q, n as u64)?);
    }
    let total_ones: u64 = lengths.iter().sum();
    if total_ones > n as u64 {
        return Err(Error::Reconstruction("estimated runs exceed the length".into()));
    }
    let total_zeros = n as u64 - total_ones;
    if zeros_before.windows(2).any(|w| w[0] > w[1]) || zeros_before[r - 1] > total_zeros {
        return Err(Error::Reconstruction(format!(
            "zero counts {zeros_before:?} are not consistent"
        )));
    }
    let mut x = BitString::with_capacity(n);
    let mut placed = 0u64;
    for j in 0..r {
        while placed < zeros_before[j] {
            x.push(0);
            placed += 1;
        }
        for _ in 0..lengths[j] {
            x.push(1);
        }
    }
    while placed < total_zeros {
        x.push(0);
        placed += 1;
    }
    Ok(x)
}

/// Options for [`reconstruct_random_sparse`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomSparseParams {
    /// Edge threshold is `2 a sqrt(n ln n)`.
    pub a: f64,
    /// Largest number of ones a component may hold.
    pub max_component_ones: usize,
    pub q: f64,
    pub min_retained: usize,
}

impl RandomSparseParams {
    /// Component bound 12 a c ln n.
    pub fn new(n: usize, a: f64, c: f64) -> Self {
        Self {
            a,
            max_component_ones: ((12.0 * a * c * (n.max(2) as f64).ln()).ceil() as usize).max(1),
            q: 0.5,
            min_retained: 100,
        }
    }
}

struct FullTrace {
    t: u32,
    first: u32,
    last: u32,
}

/// Reconstructs a string with iid Ber(eta) entries for small eta by
/// clustering received ones, keeping traces that show every one of a
/// cluster (or of two neighbouring clusters), and estimating each zero run.
pub fn reconstruct_random_sparse<T: OnesTrace>(traces: &[T], n: usize, params: &RandomSparseParams) -> Result<BitString> {
    let vs = VertexSet::from_traces(traces);
    if vs.is_empty() {
        return Ok(BitString::zeros(n));
    }
    let pos: Vec<i64> = vs.z.iter().map(|&z| z as i64).collect();
    let nn = n.max(2) as f64;
    let tau = 2.0 * params.a * (nn * nn.ln()).sqrt();
    let comps = components_by_threshold(&pos, tau, 1.0, None);
    let need = params.min_retained.max(1);
    let mut gaps_by_comp: Vec<Vec<u64>> = Vec::new();
    let mut full: Vec<Vec<FullTrace>> = Vec::new();
    for (ci, comp) in comps.iter().enumerate() {
        let mut ids: Vec<u32> = comp.iter().map(|&i| i as u32).collect();
        ids.sort_unstable();
        let ones = trace_runs(&ids, &vs).map(<[u32]>::len).max().unwrap_or(0);
        if ones > params.max_component_ones {
            return Err(Error::AmbiguousComponent {
                ones,
                bound: params.max_component_ones,
            });
        }
        let mut inner: Vec<Vec<u64>> = vec![Vec::new(); ones.saturating_sub(1)];
        let mut fl = Vec::new();
        for run in trace_runs(&ids, &vs) {
            if run.len() != ones {
                continue;
            }
            for (i, w) in run.windows(2).enumerate() {
                inner[i].push((vs.z[w[1] as usize] - vs.z[w[0] as usize] - 1) as u64);
            }
            fl.push(FullTrace {
                t: vs.t[run[0] as usize],
                first: vs.z[run[0] as usize],
                last: vs.z[*run.last().unwrap() as usize],
            });
        }
        if fl.len() < need {
            return Err(Error::InsufficientSurvivors { component: ci, kept: fl.len(), need });
        }
        let est = inner
            .iter()
            .map(|s| binomial_mean_estimate_q(s, params.q))
            .collect::<Result<Vec<_>>>()?;
        gaps_by_comp.push(est);
        full.push(fl);
    }
    // zeros before the first one
    let lead: Vec<u64> = full[0].iter().map(|f| f.first as u64).collect();
    let mut x = BitString::with_capacity(n);
    let lead = binomial_mean_estimate_q(&lead, params.q)?;
    for _ in 0..lead {
        x.push(0);
    }
    for ci in 0..comps.len() {
        x.push(1);
        for &g in &gaps_by_comp[ci] {
            for _ in 0..g {
                x.push(0);
            }
            x.push(1);
        }
        if ci + 1 < comps.len() {
            let (a, b) = (&full[ci], &full[ci + 1]);
            let mut between = Vec::new();
            let (mut i, mut j) = (0, 0);
            while i < a.len() && j < b.len() {
                match a[i].t.cmp(&b[j].t) {
                    std::cmp::Ordering::Less => i += 1,
                    std::cmp::Ordering::Greater => j += 1,
                    std::cmp::Ordering::Equal => {
                        if b[j].first > a[i].last {
                            between.push((b[j].first - a[i].last - 1) as u64);
                        }
                        i += 1;
                        j += 1;
                    }
                }
            }
            if between.len() < need {
                return Err(Error::InsufficientSurvivors { component: ci, kept: between.len(), need });
            }
            for _ in 0..binomial_mean_estimate_q(&between, params.q)? {
                x.push(0);
            }
        }
        if x.len() > n {
            return Err(Error::Reconstruction(format!("estimate overruns length {n}")));
        }
    }
    while x.len() < n {
        x.push(0);
    }
    Ok(x)
}

/// Robust location of a position list, used in diagnostics.
pub fn median_position(zs: &[u32]) -> f64 {
    let mut v: Vec<f64> = zs.iter().map(|&z| z as f64).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    lower_median(&mut v)
}

/// No hidden label is split across two components of one level.
pub fn consistency_holds(forest: &ClusterForest, labels: &[u32]) -> bool {
    forest.levels.iter().all(|level| {
        let mut owner: std::collections::HashMap<u32, usize> = std::collections::HashMap::new();
        level.components.iter().enumerate().all(|(ci, c)| {
            let mut seen: Vec<u32> = c.vertices.iter().map(|&v| labels[v as usize]).collect();
            seen.sort_unstable();
            seen.dedup();
            seen.into_iter().all(|y| *owner.entry(y).or_insert(ci) == ci)
        })
    })
}

/// Every component satisfies max_len <= 2 k tau_d.
pub fn length_bound_holds(forest: &ClusterForest, k: usize) -> bool {
    forest.levels.iter().all(|level| {
        level
            .components
            .iter()
            .all(|c| c.max_len as f64 <= 2.0 * k as f64 * level.tau)
    })
}

/// Every trace holding both endpoint labels of a component keeps its
/// vertices through that component's filter.
pub fn filter_complete(forest: &ClusterForest, vs: &VertexSet, labels: &[u32]) -> bool {
    forest.levels.iter().all(|level| {
        level.components.iter().all(|c| {
            let (Some(lo), Some(hi)) = (
                c.vertices.iter().map(|&v| labels[v as usize]).min(),
                c.vertices.iter().map(|&v| labels[v as usize]).max(),
            ) else {
                return true;
            };
            let kept = presence(&c.survivors, vs);
            trace_runs(&c.vertices, vs).all(|run| {
                let has = |y: u32| run.iter().any(|&v| labels[v as usize] == y);
                let t = vs.t[run[0] as usize] as usize;
                !(has(lo) && has(hi)) || kept[t / 64] >> (t % 64) & 1 == 1
            })
        })
    })
}

/// Every leaf holds a single hidden label.
pub fn leaves_pure(forest: &ClusterForest, labels: &[u32]) -> bool {
    forest.leaves().iter().all(|c| {
        let mut it = c.survivors.iter().map(|&v| labels[v as usize]);
        match it.next() {
            None => true,
            Some(y) => it.all(|x| x == y),
        }
    })
}
