//! Seeded Monte Carlo experiments and the trace file format.
//!
//! An [`ExperimentSpec`] names an algorithm, a source shape, a channel, the
//! number of traces per trial and the number of trials. Trial `t` derives its
//! own seed from the master seed; trace `i` of that trial uses stream `i` of
//! the trial seed, the source and any auxiliary randomness use two reserved
//! streams. Results are written as JSON lines in trial order, followed by a
//! summary record, so a rerun with the same spec reproduces the output byte
//! for byte (wall times are only recorded on request).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::alignment::{reconstruct_random_grid, Matcher};
use crate::bits::{hamming_distance, BitMatrix, BitString, BitTensor};
use crate::channels::{
    delete_matrix, delete_sequence_trace, delete_tensor, mix_seed, random_input, random_string, sparse_trace,
    trace_rng, ChannelParams, Input, InputKind, SparseTrace,
};
use crate::error::{Error, Result};
use crate::estimators::PositionMeans;
use crate::gap::{
    find_positions, reconstruct_gapped, reconstruct_random_sparse, reconstruct_runs, FindParams, GapParams,
    RandomSparseParams, RunsParams,
};
use crate::kdeck::{distinguish_by_deck, Choice};
use crate::mean_trace::{tournament_from_means, Candidates, DEFAULT_TOURNAMENT_BUDGET};
use crate::sparse::reconstruct_sparse;

/// Stream ids reserved for the source and for algorithm randomness.
pub const SOURCE_STREAM: u64 = u64::MAX;
pub const AUX_STREAM: u64 = u64::MAX - 1;

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "TRACEREC_THREADS";

fn default_cap() -> u64 {
    1 << 24
}

fn default_levels() -> usize {
    1
}

fn default_flips() -> usize {
    1
}

fn default_budget() -> u64 {
    DEFAULT_TOURNAMENT_BUDGET as u64
}

fn default_align() -> Matcher {
    Matcher::Joint(Default::default())
}

fn default_eta() -> f64 {
    0.5
}

/// Algorithm under test together with its constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Algorithm {
    /// k-sparse strings through the binomial mixture learner.
    Sparse {
        k: usize,
        #[serde(default = "default_cap")]
        cap: u64,
    },
    /// One-level clustering of ones separated by at least `gap` zeros.
    FindPositions {
        k: usize,
        gap: usize,
        #[serde(default)]
        params: Option<FindParams>,
    },
    /// Hierarchical clustering with debiasing; `params` defaults to the
    /// asymptotic thresholds with `levels` levels.
    Gap {
        k: usize,
        gap: usize,
        #[serde(default = "default_levels")]
        levels: usize,
        #[serde(default)]
        params: Option<GapParams>,
    },
    /// `runs` 1-runs of length 1..=max_run separated by at least `gap` zeros.
    Runs {
        runs: usize,
        max_run: usize,
        gap: usize,
        #[serde(default)]
        params: Option<RunsParams>,
    },
    /// Ber(eta) sources; edge threshold `2 a sqrt(n ln n)`, component bound
    /// `12 a c ln n`.
    RandomSparse { a: f64, c: f64 },
    /// Distinguish the source from a copy with `flips` bits flipped using
    /// `r` sampled k-subsequences.
    Kdeck {
        k: usize,
        r: usize,
        #[serde(default = "default_flips")]
        flips: usize,
    },
    /// Expected-trace tournament over every grid of the source shape.
    Matrix {
        #[serde(default = "default_budget")]
        budget: u64,
    },
    RandomMatrix {
        #[serde(default = "default_align")]
        align: Matcher,
    },
    RandomTensor {
        #[serde(default = "default_align")]
        align: Matcher,
    },
}

impl Algorithm {
    pub fn id(&self) -> &'static str {
        match self {
            Algorithm::Sparse { .. } => "sparse",
            Algorithm::FindPositions { .. } => "find-positions",
            Algorithm::Gap { .. } => "gap",
            Algorithm::Runs { .. } => "runs",
            Algorithm::RandomSparse { .. } => "random-sparse",
            Algorithm::Kdeck { .. } => "kdeck",
            Algorithm::Matrix { .. } => "matrix",
            Algorithm::RandomMatrix { .. } => "random-matrix",
            Algorithm::RandomTensor { .. } => "random-tensor",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub algorithm: Algorithm,
    /// Source extents: `[n]` for strings, `[rows, cols]` for matrices.
    pub dims: Vec<usize>,
    pub channel: ChannelParams,
    /// Traces per trial.
    pub m: usize,
    pub trials: usize,
    pub seed: u64,
    /// Density of random sources.
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Fixed source for every trial instead of a random one.
    #[serde(default)]
    pub source: Option<Input>,
    /// Record wall times (output is then no longer reproducible).
    #[serde(default)]
    pub timing: bool,
}

impl ExperimentSpec {
    /// Checks counts, shapes and channel compatibility.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::InvalidInput(format!("field `{field}`: {msg}")));
        if self.m == 0 {
            return bad("m", "must be positive".into());
        }
        if self.trials == 0 {
            return bad("trials", "must be positive".into());
        }
        if self.dims.is_empty() || self.dims.contains(&0) {
            return bad("dims", format!("extents must be positive, got {:?}", self.dims));
        }
        ChannelParams::new(self.channel.p0, self.channel.p1).map_err(|e| Error::InvalidInput(format!("field `channel`: {e}")))?;
        if !(0.0..=1.0).contains(&self.eta) {
            return bad("eta", format!("{} is not a probability", self.eta));
        }
        if self.algorithm.id() != "sparse" && !self.channel.is_symmetric() {
            return bad("channel", format!("{} needs a symmetric channel", self.algorithm.id()));
        }
        let n = self.dims[0];
        let order = match &self.algorithm {
            Algorithm::Matrix { .. } => None,
            Algorithm::RandomMatrix { .. } => Some(2),
            Algorithm::RandomTensor { .. } => None,
            _ => Some(1),
        };
        if let Some(o) = order {
            if self.dims.len() != o {
                return bad("dims", format!("{} needs {o} extents, got {:?}", self.algorithm.id(), self.dims));
            }
        }
        match &self.algorithm {
            Algorithm::Sparse { k, cap } => {
                if *k > n {
                    return bad("algorithm.k", format!("{k} exceeds n = {n}"));
                }
                if *cap == 0 {
                    return bad("algorithm.cap", "must be positive".into());
                }
            }
            Algorithm::FindPositions { k, gap, .. } | Algorithm::Gap { k, gap, .. } => {
                if *k == 0 || k.saturating_sub(1).saturating_mul(*gap + 1) >= n {
                    return bad("algorithm.k", format!("{k} ones with gap {gap} do not fit in n = {n}"));
                }
                if let Algorithm::Gap { levels: 0, params: None, .. } = &self.algorithm {
                    return bad("algorithm.levels", "must be positive".into());
                }
            }
            Algorithm::Runs { runs, max_run, gap, .. } => {
                if *runs == 0 || *max_run == 0 {
                    return bad("algorithm.runs", "runs and max_run must be positive".into());
                }
                if runs * max_run + (runs - 1) * gap > n {
                    return bad("algorithm.runs", format!("{runs} runs do not fit in n = {n}"));
                }
            }
            Algorithm::RandomSparse { a, c } => {
                if *a <= 0.0 || *c <= 0.0 {
                    return bad("algorithm.a", "a and c must be positive".into());
                }
            }
            Algorithm::Kdeck { k, r, flips } => {
                if *k == 0 || *k > n || *r == 0 {
                    return bad("algorithm.k", format!("need 0 < k <= n and r > 0, got k = {k}, r = {r}"));
                }
                if *flips == 0 || *flips > n {
                    return bad("algorithm.flips", format!("{flips} not in 1..={n}"));
                }
            }
            Algorithm::Matrix { budget }
                if *budget == 0 => {
                    return bad("algorithm.budget", "must be positive".into());
                }
            _ => {}
        }
        if let Some(src) = &self.source {
            let (kind, dims) = input_shape(src);
            if dims != self.dims {
                return bad("source", format!("{kind:?} source has extents {dims:?}, spec has {:?}", self.dims));
            }
        }
        Ok(())
    }

    /// sha256 of the canonical JSON (sorted keys, no whitespace), hex encoded.
    pub fn hash(&self) -> String {
        let v = serde_json::to_value(self).expect("spec serializes");
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        mix_seed(self.seed, trial as u64)
    }
}

/// Outcome of one trial. `hamming` is `Some(0)` exactly when `success`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialResult {
    pub record: &'static str,
    pub spec_hash: String,
    pub seed: u64,
    pub trial: usize,
    pub trial_seed: u64,
    pub success: bool,
    /// Cells where output and truth differ, counting a length mismatch as
    /// differing cells; `None` when the algorithm returned an error.
    pub hamming: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
    pub diagnostics: BTreeMap<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub record: &'static str,
    pub spec_hash: String,
    pub seed: u64,
    pub algorithm: &'static str,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub errors: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub summary: Summary,
    pub trials: Vec<TrialResult>,
}

fn input_shape(x: &Input) -> (InputKind, Vec<usize>) {
    match x {
        Input::String(s) => (InputKind::String, vec![s.len()]),
        Input::Matrix(m) => (InputKind::Matrix, vec![m.rows(), m.cols()]),
        Input::Tensor(t) => (InputKind::Tensor, t.dims().to_vec()),
    }
}

/// Differing cells of two grids, with cells outside the common box
/// counted as differing.
pub fn grid_distance(a: &BitTensor, b: &BitTensor) -> usize {
    if a.dims() == b.dims() {
        return a.bits().iter().zip(b.bits()).filter(|(x, y)| x != y).count();
    }
    if a.order() != b.order() {
        return a.len().max(b.len());
    }
    let common: Vec<usize> = a.dims().iter().zip(b.dims()).map(|(x, y)| *x.min(y)).collect();
    let keep: Vec<Vec<usize>> = common.iter().map(|&n| (0..n).collect()).collect();
    let (ca, cb) = (a.select(&keep), b.select(&keep));
    let inner = ca.bits().iter().zip(cb.bits()).filter(|(x, y)| x != y).count();
    inner + (a.len() - ca.len()) + (b.len() - cb.len())
}

/// Uniform sorted positions in [0, n) with consecutive positions at least
/// `gap + 1` apart, i.e. at least `gap` zeros between ones.
pub fn gapped_positions<R: Rng + ?Sized>(n: usize, k: usize, gap: usize, rng: &mut R) -> Vec<usize> {
    let slack = n - (k - 1) * gap;
    let mut base = index::sample(rng, slack, k).into_vec();
    base.sort_unstable();
    base.iter().enumerate().map(|(i, &b)| b + i * gap).collect()
}

/// `runs` 1-runs of uniform length in 1..=max_run with at least `gap` zeros
/// between them, placed uniformly.
pub fn gapped_runs<R: Rng + ?Sized>(n: usize, runs: usize, max_run: usize, gap: usize, rng: &mut R) -> BitString {
    let lens: Vec<usize> = (0..runs).map(|_| rng.random_range(1..=max_run)).collect();
    let used: usize = lens.iter().sum::<usize>() + (runs - 1) * gap;
    // stars and bars over the runs+1 free slots
    let mut cuts = index::sample(rng, n - used + runs, runs).into_vec();
    cuts.sort_unstable();
    let mut x = BitString::zeros(n);
    let mut pos = 0usize;
    let mut prev_cut = 0usize;
    for (i, (&c, &l)) in cuts.iter().zip(&lens).enumerate() {
        pos += c - prev_cut + if i > 0 { gap } else { 0 };
        prev_cut = c + 1;
        for j in pos..pos + l {
            x.set(j, 1);
        }
        pos += l;
    }
    x
}

/// One trace per stream index of the source `x`.
pub fn simulate(x: &Input, channel: ChannelParams, m: usize, seed: u64) -> Result<Vec<Input>> {
    if !matches!(x, Input::String(_)) && !channel.is_symmetric() {
        return Err(Error::InvalidInput("grid channels delete whole slices and need p0 = p1".into()));
    }
    Ok((0..m)
        .map(|i| {
            let mut rng = trace_rng(seed, i as u64);
            match x {
                Input::String(s) => Input::String(delete_sequence_trace(s, channel, &mut rng)),
                Input::Matrix(a) => Input::Matrix(delete_matrix(a, channel.p0, &mut rng).0),
                Input::Tensor(t) => Input::Tensor(delete_tensor(t, channel.p0, &mut rng).0),
            }
        })
        .collect())
}

struct Outcome {
    hamming: std::result::Result<usize, Error>,
    diagnostics: BTreeMap<String, Value>,
}

fn diag<const N: usize>(pairs: [(&str, Value); N]) -> BTreeMap<String, Value> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn string_traces(x: &BitString, ch: ChannelParams, m: usize, seed: u64) -> Vec<BitString> {
    (0..m).map(|i| delete_sequence_trace(x, ch, &mut trace_rng(seed, i as u64))).collect()
}

fn sparse_traces(ones: &[usize], n: usize, ch: ChannelParams, m: usize, seed: u64) -> Vec<SparseTrace> {
    (0..m).map(|i| sparse_trace(ones, n, ch, &mut trace_rng(seed, i as u64)).0).collect()
}

fn ones_of(x: &BitString) -> Vec<usize> {
    x.ones_positions().collect()
}

fn string_source(spec: &ExperimentSpec, rng: &mut impl Rng) -> BitString {
    match &spec.source {
        Some(Input::String(s)) => s.clone(),
        _ => {
            let n = spec.dims[0];
            match &spec.algorithm {
                Algorithm::Sparse { k, .. } => {
                    BitString::from_ones(n, &index::sample(rng, n, *k).into_vec()).expect("positions in range")
                }
                Algorithm::FindPositions { k, gap, .. } | Algorithm::Gap { k, gap, .. } => {
                    BitString::from_ones(n, &gapped_positions(n, *k, *gap, rng)).expect("positions in range")
                }
                Algorithm::Runs { runs, max_run, gap, .. } => gapped_runs(n, *runs, *max_run, *gap, rng),
                _ => random_string(n, spec.eta, rng),
            }
        }
    }
}

fn grid_source(spec: &ExperimentSpec, rng: &mut impl Rng) -> BitTensor {
    match &spec.source {
        Some(Input::Matrix(a)) => a.to_tensor(),
        Some(Input::Tensor(t)) => t.clone(),
        Some(Input::String(s)) => BitTensor::new(vec![s.len()], s.to_vec()).expect("shape is consistent"),
        None => match random_input(InputKind::Tensor, &spec.dims, spec.eta, rng).expect("eta validated") {
            Input::Tensor(t) => t,
            _ => unreachable!(),
        },
    }
}

fn positions_distance(found: &[u64], truth: &[usize], n: usize) -> usize {
    let mut est = BitString::zeros(n);
    for &p in found {
        if (p as usize) < n {
            est.set(p as usize, 1);
        }
    }
    let t = BitString::from_ones(n, truth).expect("positions in range");
    hamming_distance(&est, &t) + found.iter().filter(|&&p| p as usize >= n).count()
}

fn run_trial(spec: &ExperimentSpec, trial_seed: u64) -> Outcome {
    let mut src_rng = trace_rng(trial_seed, SOURCE_STREAM);
    let mut aux = trace_rng(trial_seed, AUX_STREAM);
    let ch = spec.channel;
    let (m, n) = (spec.m, spec.dims[0]);
    let q = ch.q1();
    let done = |r: Result<usize>, d| Outcome { hamming: r, diagnostics: d };
    match &spec.algorithm {
        Algorithm::Sparse { k, cap } => {
            let x = string_source(spec, &mut src_rng);
            let traces = string_traces(&x, ch, m, trial_seed);
            let r = reconstruct_sparse(&traces, n, *k, ch, *cap as u128, &mut aux);
            done(r.map(|y| hamming_distance(&x, &y)), BTreeMap::new())
        }
        Algorithm::FindPositions { k, params, .. } => {
            let x = string_source(spec, &mut src_rng);
            let ones = ones_of(&x);
            let traces = sparse_traces(&ones, n, ch, m, trial_seed);
            let p = params.unwrap_or(FindParams { k: Some(*k), ..Default::default() });
            let p = FindParams { q, ..p };
            let r = find_positions(&traces, n, &p);
            let found = r.as_ref().map(Vec::len).unwrap_or(0);
            done(r.map(|f| positions_distance(&f, &ones, n)), diag([("ones_found", json!(found))]))
        }
        Algorithm::Gap { k, levels, params, .. } => {
            let x = string_source(spec, &mut src_rng);
            let ones = ones_of(&x);
            let traces = sparse_traces(&ones, n, ch, m, trial_seed);
            let mut p = params.clone().unwrap_or_else(|| GapParams::asymptotic(n, m, *k, *levels));
            p.q = q;
            let r = reconstruct_gapped(&traces, n, *k, &p);
            done(r.map(|y| hamming_distance(&x, &y)), diag([("levels", json!(p.levels()))]))
        }
        Algorithm::Runs { params, .. } => {
            let x = string_source(spec, &mut src_rng);
            let traces = string_traces(&x, ch, m, trial_seed);
            let p = RunsParams { q, ..params.unwrap_or_else(|| RunsParams::for_length(n, m)) };
            let r = reconstruct_runs(&traces, n, &p);
            done(r.map(|y| hamming_distance(&x, &y)), BTreeMap::new())
        }
        Algorithm::RandomSparse { a, c } => {
            let x = string_source(spec, &mut src_rng);
            let ones = ones_of(&x);
            let traces = sparse_traces(&ones, n, ch, m, trial_seed);
            let p = RandomSparseParams { q, ..RandomSparseParams::new(n, *a, *c) };
            let r = reconstruct_random_sparse(&traces, n, &p);
            done(r.map(|y| hamming_distance(&x, &y)), diag([("ones", json!(ones.len()))]))
        }
        Algorithm::Kdeck { k, r, flips } => {
            let x = string_source(spec, &mut src_rng);
            let mut y = x.clone();
            for i in index::sample(&mut src_rng, n, *flips) {
                y.set(i, 1 - y.get(i));
            }
            let traces = string_traces(&x, ch, m, trial_seed);
            match distinguish_by_deck(&x, &y, &traces, *k, *r, &mut aux) {
                Ok(v) => {
                    let h = if v.choice == Choice::X && !v.tie { 0 } else { *flips };
                    done(Ok(h), diag([("tie", json!(v.tie)), ("dist_x", json!(v.dist_x.to_string())), ("dist_y", json!(v.dist_y.to_string()))]))
                }
                Err(e) => done(Err(e), BTreeMap::new()),
            }
        }
        Algorithm::Matrix { budget } => {
            let x = grid_source(spec, &mut src_rng);
            let mut means = PositionMeans::zeros(x.dims());
            let mut fill = || -> Result<()> {
                for i in 0..m {
                    let (t, _) = delete_tensor(&x, ch.p0, &mut trace_rng(trial_seed, i as u64));
                    means.add_grid(&t)?;
                }
                Ok(())
            };
            let r = fill().and_then(|_| tournament_from_means(&means.values(), x.dims(), &Candidates::All, q, *budget as u128));
            match r {
                Ok(t) => done(Ok(grid_distance(&x, &t.winner)), diag([("distance", json!(t.distance)), ("candidates", json!(t.candidates as u64))])),
                Err(e) => done(Err(e), BTreeMap::new()),
            }
        }
        Algorithm::RandomMatrix { align } | Algorithm::RandomTensor { align } => {
            let x = grid_source(spec, &mut src_rng);
            let traces: Vec<BitTensor> =
                (0..m).map(|i| delete_tensor(&x, ch.p0, &mut trace_rng(trial_seed, i as u64)).0).collect();
            match reconstruct_random_grid(&traces, x.dims(), q, align) {
                Ok(g) => {
                    let d = &g.diagnostics;
                    done(
                        Ok(grid_distance(&x, &g.tensor)),
                        diag([
                            ("groups", json!(d.groups)),
                            ("unassigned_lines", json!(d.unassigned_lines)),
                            ("contradictions", json!(d.contradictions)),
                            ("rejected_traces", json!(d.rejected_traces)),
                        ]),
                    )
                }
                Err(e) => done(Err(e), BTreeMap::new()),
            }
        }
    }
}

/// Worker count from [`THREADS_ENV`], else the available parallelism.
pub fn default_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&t: &usize| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs every trial, streaming one JSON line per trial (in trial order) and
/// then the summary line to `out`.
pub fn run_experiment_to<W: Write>(spec: &ExperimentSpec, threads: usize, out: &mut W) -> Result<ExperimentReport> {
    spec.validate()?;
    let hash = spec.hash();
    let next = AtomicUsize::new(0);
    let threads = threads.clamp(1, spec.trials);
    let mut results: Vec<TrialResult> = Vec::with_capacity(spec.trials);
    let io_err = |e: std::io::Error| Error::InvalidInput(format!("cannot write results: {e}"));
    std::thread::scope(|s| -> Result<()> {
        let (tx, rx) = mpsc::channel::<TrialResult>();
        for _ in 0..threads {
            let tx = tx.clone();
            let (next, hash) = (&next, &hash);
            s.spawn(move || loop {
                let t = next.fetch_add(1, Ordering::Relaxed);
                if t >= spec.trials {
                    break;
                }
                let seed = spec.trial_seed(t);
                let start = Instant::now();
                let o = run_trial(spec, seed);
                let wall = start.elapsed().as_secs_f64() * 1e3;
                let (success, hamming, error) = match o.hamming {
                    Ok(h) => (h == 0, Some(h), None),
                    Err(e) => (false, None, Some(e.to_string())),
                };
                let r = TrialResult {
                    record: "trial",
                    spec_hash: hash.clone(),
                    seed: spec.seed,
                    trial: t,
                    trial_seed: seed,
                    success,
                    hamming,
                    error,
                    wall_ms: spec.timing.then_some(wall),
                    diagnostics: o.diagnostics,
                };
                if tx.send(r).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        // reorder so lines come out by trial index
        let mut pending = BTreeMap::new();
        for r in rx {
            pending.insert(r.trial, r);
            while let Some(r) = pending.remove(&results.len()) {
                writeln!(out, "{}", serde_json::to_string(&r).expect("result serializes")).map_err(io_err)?;
                results.push(r);
            }
        }
        Ok(())
    })?;
    let successes = results.iter().filter(|r| r.success).count();
    let summary = Summary {
        record: "summary",
        spec_hash: hash,
        seed: spec.seed,
        algorithm: spec.algorithm.id(),
        trials: spec.trials,
        successes,
        success_rate: successes as f64 / spec.trials as f64,
        errors: results.iter().filter(|r| r.error.is_some()).count(),
        mean_ms: spec
            .timing
            .then(|| results.iter().filter_map(|r| r.wall_ms).sum::<f64>() / spec.trials as f64),
    };
    writeln!(out, "{}", serde_json::to_string(&summary).expect("summary serializes")).map_err(io_err)?;
    out.flush().map_err(io_err)?;
    Ok(ExperimentReport { summary, trials: results })
}

/// [`run_experiment_to`] with the default worker count, discarding output.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    run_experiment_to(spec, default_threads(), &mut std::io::sink())
}

/// First line of a trace file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub kind: InputKind,
    pub dims: Vec<usize>,
    pub channel: ChannelParams,
    pub seed: u64,
    pub count: usize,
}

/// Writes the header as JSON, then one trace per line: strings as 0/1,
/// grids as `RxC:rows` with `;` between rows and `|` repeated once per
/// enclosing axis between higher slices.
pub fn write_traces<W: Write>(out: &mut W, header: &TraceHeader, traces: &[Input]) -> std::io::Result<()> {
    writeln!(out, "{}", serde_json::to_string(header).expect("header serializes"))?;
    for t in traces {
        match t {
            Input::String(s) => writeln!(out, "{s}")?,
            Input::Matrix(a) => writeln!(out, "{a}")?,
            Input::Tensor(x) => writeln!(out, "{x}")?,
        }
    }
    Ok(())
}

pub fn read_traces<R: BufRead>(input: R) -> Result<(TraceHeader, Vec<Input>)> {
    let mut lines = input.lines();
    let io = |e: std::io::Error| Error::InvalidInput(format!("cannot read traces: {e}"));
    let head = lines.next().ok_or_else(|| Error::InvalidInput("empty trace file".into()))?.map_err(io)?;
    let header: TraceHeader =
        serde_json::from_str(&head).map_err(|e| Error::InvalidInput(format!("bad trace header: {e}")))?;
    let mut traces = Vec::with_capacity(header.count);
    for line in lines {
        let line = line.map_err(io)?;
        let t = match header.kind {
            InputKind::String => Input::String(line.trim().parse()?),
            InputKind::Matrix => Input::Matrix(line.parse::<BitMatrix>()?),
            InputKind::Tensor => Input::Tensor(line.parse::<BitTensor>()?),
        };
        traces.push(t);
    }
    if traces.len() != header.count {
        return Err(Error::InvalidInput(format!("header promises {} traces, file has {}", header.count, traces.len())));
    }
    Ok((header, traces))
}

/// Grid view of a trace of any kind.
pub fn input_to_tensor(x: &Input) -> BitTensor {
    match x {
        Input::String(s) => BitTensor::new(vec![s.len()], s.to_vec()).expect("shape is consistent"),
        Input::Matrix(a) => a.to_tensor(),
        Input::Tensor(t) => t.clone(),
    }
}

/// Outcome of one oracle-equivalence suite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suite: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest deviation from the oracle (absolute for floats, 0/1 for exact
    /// comparisons).
    pub max_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Expected trace by averaging over every row and column deletion pattern.
pub fn brute_expected_matrix(x: &BitMatrix, q: f64) -> Vec<f64> {
    let (r, c) = (x.rows(), x.cols());
    let p = 1.0 - q;
    let mut out = vec![0.0; r * c];
    for rm in 0u64..1 << r {
        for cm in 0u64..1 << c {
            let kept = (rm.count_ones() + cm.count_ones()) as i32;
            let w = q.powi(kept) * p.powi((r + c) as i32 - kept);
            let rows: Vec<usize> = (0..r).filter(|i| rm >> i & 1 == 1).collect();
            let cols: Vec<usize> = (0..c).filter(|j| cm >> j & 1 == 1).collect();
            for (i, &a) in rows.iter().enumerate() {
                for (j, &b) in cols.iter().enumerate() {
                    out[i * c + j] += w * x.get(a, b) as f64;
                }
            }
        }
    }
    out
}

/// DP expected traces against enumeration for every rows x cols matrix.
pub fn verify_expected_trace(rows: usize, cols: usize, ps: &[f64]) -> VerifyReport {
    let tol = 1e-12;
    let (mut cases, mut failures, mut worst) = (0, 0, 0.0f64);
    for &p in ps {
        for idx in 0..1u64 << (rows * cols) {
            let x = BitMatrix::from_index(rows, cols, idx);
            let dp = crate::mean_trace::expected_trace_matrix(&x, 1.0 - p).values;
            let err = dp.iter().zip(brute_expected_matrix(&x, 1.0 - p)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(err);
            failures += (err > tol) as usize;
            cases += 1;
        }
    }
    VerifyReport { suite: "expected-trace", cases, failures, max_error: worst, tolerance: tol, pass: failures == 0 }
}

/// k-deck by enumerating index subsets.
pub fn brute_kdeck(x: &BitString, k: usize) -> BTreeMap<u64, u64> {
    let n = x.len();
    let mut deck = BTreeMap::new();
    for set in 0u64..1 << n {
        if set.count_ones() as usize == k {
            let key = (0..n).filter(|i| set >> i & 1 == 1).fold(0u64, |acc, i| acc << 1 | x.get(i) as u64);
            *deck.entry(key).or_default() += 1;
        }
    }
    deck
}

/// Exact decks against enumeration for every string with n <= max_n and
/// k <= max_k.
pub fn verify_kdeck(max_n: usize, max_k: usize) -> VerifyReport {
    let (mut cases, mut failures) = (0, 0);
    for n in 1..=max_n {
        for k in 1..=max_k.min(n) {
            for v in 0u64..1 << n {
                let x = BitString::from_bits((0..n).map(|i| (v >> (n - 1 - i) & 1) as u8));
                let got: BTreeMap<u64, u64> = crate::kdeck::exact_kdeck(&x, k)
                    .map(|d| d.counts.iter().map(|(&a, c)| (a, u64::try_from(c.clone()).unwrap_or(u64::MAX))).collect())
                    .unwrap_or_default();
                failures += (got != brute_kdeck(&x, k)) as usize;
                cases += 1;
            }
        }
    }
    VerifyReport { suite: "kdeck", cases, failures, max_error: (failures > 0) as u8 as f64, tolerance: 0.0, pass: failures == 0 }
}

/// Relative error of the sample mean of (A - B)^2 against h/2 and the
/// variance bound h^2/2.
pub fn verify_binomial_difference(hs: &[u64], draws: usize, seed: u64) -> VerifyReport {
    let tol = 0.01;
    let (mut failures, mut worst) = (0, 0.0f64);
    for (i, &h) in hs.iter().enumerate() {
        let (mean, var) = crate::alignment::oracle::binomial_difference_moments(h, draws, &mut trace_rng(seed, i as u64));
        let rel = (mean - h as f64 / 2.0).abs() / (h as f64 / 2.0);
        worst = worst.max(rel);
        failures += (rel > tol || var > (h * h) as f64 / 2.0) as usize;
    }
    VerifyReport { suite: "binomial-difference", cases: hs.len(), failures, max_error: worst, tolerance: tol, pass: failures == 0 }
}
