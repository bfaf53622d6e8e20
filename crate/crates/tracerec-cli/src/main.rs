use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use tracerec::alignment::{reconstruct_random_grid, JointParams, Matcher, OracleParams};
use tracerec::channels::{random_input, trace_rng, ChannelParams, Input, InputKind};
use tracerec::gap::{
    reconstruct_gapped, reconstruct_random_sparse, reconstruct_runs, GapParams, RandomSparseParams, RunsParams,
};
use tracerec::harness::{
    default_threads, grid_distance, input_to_tensor, read_traces, run_experiment_to, simulate, verify_binomial_difference,
    verify_expected_trace, verify_kdeck, write_traces, ExperimentSpec, TraceHeader, VerifyReport, AUX_STREAM,
    SOURCE_STREAM,
};
use tracerec::kdeck::{distinguish_by_deck, exact_kdeck, sampled_kdeck, Choice, KDeck};
use tracerec::mean_trace::{tournament_reconstruct, Candidates};
use tracerec::sparse::reconstruct_sparse;
use tracerec::{BitString, BitTensor, Error};

#[derive(Parser)]
#[command(name = "tracerec", version, about = "Trace reconstruction under deletion channels")]
struct Cli {
    /// Write output here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Emit traces of a given or random source as a trace file.
    Simulate(SimulateArgs),
    /// Reconstruct a k-sparse string.
    Sparse(SparseArgs),
    /// Reconstruct a string whose ones are separated by long gaps.
    Gap(GapArgs),
    /// Reconstruct a string with few runs and long zero runs.
    Runs(RunsArgs),
    /// Reconstruct a random string of low density.
    RandomSparse(RandomSparseArgs),
    /// Exact, compared, sampled or distinguishing k-decks.
    Kdeck(KdeckArgs),
    /// Expected-trace tournament over all small grids.
    Matrix(MatrixArgs),
    /// Alignment reconstruction of a random matrix.
    RandomMatrix(GridArgs),
    /// Alignment reconstruction of a random tensor.
    RandomTensor(GridArgs),
    /// Run oracle-equivalence suites.
    Verify(VerifyArgs),
    /// Run a seeded experiment described by a JSON spec file.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct ChannelArgs {
    /// Deletion probability of every symbol (or slice).
    #[arg(long, conflicts_with_all = ["p0", "p1"])]
    p: Option<f64>,
    #[arg(long, requires = "p1")]
    p0: Option<f64>,
    #[arg(long, requires = "p0")]
    p1: Option<f64>,
}

impl ChannelArgs {
    fn params(&self) -> Result<Option<ChannelParams>, Fail> {
        Ok(match (self.p, self.p0, self.p1) {
            (Some(p), _, _) => Some(ChannelParams::symmetric(p)?),
            (None, Some(a), Some(b)) => Some(ChannelParams::new(a, b)?),
            _ => None,
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    String,
    Matrix,
    Tensor,
}

impl From<Kind> for InputKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::String => InputKind::String,
            Kind::Matrix => InputKind::Matrix,
            Kind::Tensor => InputKind::Tensor,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "string")]
    kind: Kind,
    /// Source as 0/1 text (strings) or `RxC:rows` (grids); random if absent.
    #[arg(long)]
    input: Option<String>,
    /// Extents of a random source, comma separated.
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
    /// Density of a random source.
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
    #[command(flatten)]
    channel: ChannelArgs,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TraceArgs {
    /// Trace file written by `simulate`.
    #[arg(long)]
    traces: PathBuf,
    /// Source to compare against; a mismatch exits with status 1.
    #[arg(long)]
    truth: Option<String>,
}

#[derive(Args)]
struct SparseArgs {
    #[command(flatten)]
    t: TraceArgs,
    #[arg(long)]
    k: usize,
    /// Candidate budget of the mixture search.
    #[arg(long, default_value_t = 1 << 24)]
    cap: u64,
    /// Seed of the reduction randomness.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GapArgs {
    #[command(flatten)]
    t: TraceArgs,
    #[arg(long)]
    k: usize,
    /// Levels of the default thresholds.
    #[arg(long, default_value_t = 1)]
    levels: usize,
    /// Explicit thresholds tau_1,...,tau_D.
    #[arg(long, value_delimiter = ',')]
    tau: Vec<f64>,
    #[arg(long)]
    filter_const: Option<f64>,
    #[arg(long)]
    edge_divisor: Option<f64>,
    #[arg(long)]
    min_retained: Option<usize>,
}

#[derive(Args)]
struct RunsArgs {
    #[command(flatten)]
    t: TraceArgs,
    #[arg(long)]
    edge_threshold: Option<f64>,
    /// Use only traces showing every run.
    #[arg(long)]
    exact_runs: bool,
    #[arg(long)]
    min_retained: Option<usize>,
}

#[derive(Args)]
struct RandomSparseArgs {
    #[command(flatten)]
    t: TraceArgs,
    #[arg(long, default_value_t = 0.25)]
    a: f64,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
}

#[derive(Args)]
struct KdeckArgs {
    /// Compute decks exactly from `--input` (and `--other`).
    #[arg(long, conflicts_with = "traces")]
    exact: bool,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    input: Option<String>,
    /// Second string to compare with or distinguish from.
    #[arg(long)]
    other: Option<String>,
    /// Estimate the deck from this trace file.
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Sampled k-subsequences.
    #[arg(long)]
    r: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MatrixArgs {
    #[command(flatten)]
    t: TraceArgs,
    #[arg(long, default_value_t = 1 << 24)]
    budget: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatcherKind {
    Joint,
    Oracle,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    t: TraceArgs,
    #[arg(long, value_enum, default_value = "joint")]
    matcher: MatcherKind,
    /// Oracle block width constant.
    #[arg(long, default_value_t = 1.0)]
    cw: f64,
    /// Oracle group size constant.
    #[arg(long, default_value_t = 4.0)]
    cg: f64,
    /// Oracle threshold factor; 1 - q/4 by default.
    #[arg(long)]
    factor: Option<f64>,
    #[arg(long)]
    beam: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Suite {
    ExpectedTrace,
    Kdeck,
    BinomialDifference,
    All,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value = "all")]
    suite: Suite,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON file with the ExperimentSpec fields; flags below override it.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[command(flatten)]
    channel: ChannelArgs,
    /// Record wall times (makes output non-reproducible).
    #[arg(long)]
    timing: bool,
    /// Worker threads; defaults to TRACEREC_THREADS or the core count.
    #[arg(long)]
    threads: Option<usize>,
}

enum Fail {
    /// Bad arguments or files: exit 2.
    Invalid(String),
    /// The algorithm gave up or got it wrong: exit 1.
    Failed(String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        if e.is_invalid_input() {
            Fail::Invalid(e.to_string())
        } else {
            Fail::Failed(e.to_string())
        }
    }
}

impl From<io::Error> for Fail {
    fn from(e: io::Error) -> Self {
        Fail::Invalid(e.to_string())
    }
}

type Out = Box<dyn Write>;

fn emit(out: &mut Out, v: &Value) -> Result<(), Fail> {
    writeln!(out, "{v}")?;
    Ok(())
}

fn load(path: &Path) -> Result<(TraceHeader, Vec<Input>), Fail> {
    let f = File::open(path).map_err(|e| Fail::Invalid(format!("{}: {e}", path.display())))?;
    Ok(read_traces(BufReader::new(f))?)
}

fn load_strings(path: &Path) -> Result<(TraceHeader, Vec<BitString>), Fail> {
    let (h, traces) = load(path)?;
    let strings = traces
        .into_iter()
        .map(|t| match t {
            Input::String(s) => Ok(s),
            _ => Err(Fail::Invalid("expected a string trace file".into())),
        })
        .collect::<Result<_, _>>()?;
    Ok((h, strings))
}

fn parse_source(text: &str, kind: InputKind) -> Result<Input, Fail> {
    Ok(match kind {
        InputKind::String => Input::String(text.parse()?),
        InputKind::Matrix => Input::Matrix(text.parse()?),
        InputKind::Tensor => Input::Tensor(text.parse()?),
    })
}

/// Adds the truth comparison to `record` and fails on a mismatch.
fn finish(out: &mut Out, mut record: Map<String, Value>, got: &BitTensor, truth: Option<&str>) -> Result<(), Fail> {
    let mut failed = None;
    if let Some(t) = truth {
        let want: BitTensor = match t.parse::<BitString>() {
            Ok(s) if got.order() == 1 => BitTensor::new(vec![s.len()], s.to_vec())?,
            _ => t.parse()?,
        };
        let h = grid_distance(&want, got);
        record.insert("success".into(), json!(h == 0));
        record.insert("hamming".into(), json!(h));
        if h != 0 {
            failed = Some(format!("output differs from the truth in {h} cells"));
        }
    }
    emit(out, &Value::Object(record))?;
    match failed {
        Some(msg) => Err(Fail::Failed(msg)),
        None => Ok(()),
    }
}

fn string_record(cmd: &str, n: usize, m: usize, x: &BitString) -> Map<String, Value> {
    let mut r = Map::new();
    r.insert("command".into(), json!(cmd));
    r.insert("n".into(), json!(n));
    r.insert("traces".into(), json!(m));
    r.insert("output".into(), json!(x.to_string()));
    r
}

fn as_tensor(x: &BitString) -> BitTensor {
    BitTensor::new(vec![x.len()], x.to_vec()).expect("shape is consistent")
}

fn deck_json(d: &KDeck) -> Value {
    let map: Map<String, Value> = d
        .to_string_map()
        .into_iter()
        .map(|(k, v)| {
            let v = v.parse::<u64>().map(Value::from).unwrap_or(Value::String(v));
            (k, v)
        })
        .collect();
    Value::Object(map)
}

fn run(cli: Cli) -> Result<(), Fail> {
    let mut out: Out = match &cli.out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Fail::Invalid(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let r = dispatch(cli.cmd, &mut out);
    out.flush()?;
    r
}

fn dispatch(cmd: Cmd, out: &mut Out) -> Result<(), Fail> {
    match cmd {
        Cmd::Simulate(a) => {
            let channel = a.channel.params()?.ok_or_else(|| Fail::Invalid("give --p or both --p0 and --p1".into()))?;
            let kind: InputKind = a.kind.into();
            let source = match &a.input {
                Some(text) => parse_source(text, kind)?,
                None => {
                    if a.dims.is_empty() {
                        return Err(Fail::Invalid("give --input or --dims".into()));
                    }
                    random_input(kind, &a.dims, a.eta, &mut trace_rng(a.seed, SOURCE_STREAM))?
                }
            };
            let traces = simulate(&source, channel, a.m, a.seed)?;
            let dims = input_to_tensor(&source).dims().to_vec();
            let header = TraceHeader { kind, dims, channel, seed: a.seed, count: a.m };
            write_traces(out, &header, &traces)?;
            Ok(())
        }
        Cmd::Sparse(a) => {
            let (h, traces) = load_strings(&a.t.traces)?;
            let n = h.dims[0];
            let x = reconstruct_sparse(&traces, n, a.k, h.channel, a.cap as u128, &mut trace_rng(a.seed, AUX_STREAM))?;
            if !tracerec::sparse::q_condition_met(h.channel.q1(), a.k as u32, n) {
                eprintln!("warning: retention {} is below the sufficient level for k = {}", h.channel.q1(), a.k);
            }
            finish(out, string_record("sparse", n, traces.len(), &x), &as_tensor(&x), a.t.truth.as_deref())
        }
        Cmd::Gap(a) => {
            let (h, traces) = load_strings(&a.t.traces)?;
            let (n, m) = (h.dims[0], traces.len());
            let mut p = GapParams::asymptotic(n, m, a.k, a.levels.max(1));
            if !a.tau.is_empty() {
                p.thresholds = a.tau.clone();
            }
            if let Some(v) = a.filter_const {
                p.filter_const = v;
            }
            if let Some(v) = a.edge_divisor {
                p.edge_divisor = v;
            }
            if let Some(v) = a.min_retained {
                p.min_retained = v;
            }
            p.q = h.channel.q1();
            let x = reconstruct_gapped(&traces, n, a.k, &p)?;
            finish(out, string_record("gap", n, m, &x), &as_tensor(&x), a.t.truth.as_deref())
        }
        Cmd::Runs(a) => {
            let (h, traces) = load_strings(&a.t.traces)?;
            let (n, m) = (h.dims[0], traces.len());
            let mut p = RunsParams { q: h.channel.q1(), exact_runs: a.exact_runs, ..RunsParams::for_length(n, m) };
            if let Some(v) = a.edge_threshold {
                p.edge_threshold = v;
            }
            if let Some(v) = a.min_retained {
                p.min_retained = v;
            }
            let x = reconstruct_runs(&traces, n, &p)?;
            finish(out, string_record("runs", n, m, &x), &as_tensor(&x), a.t.truth.as_deref())
        }
        Cmd::RandomSparse(a) => {
            let (h, traces) = load_strings(&a.t.traces)?;
            let (n, m) = (h.dims[0], traces.len());
            let p = RandomSparseParams { q: h.channel.q1(), ..RandomSparseParams::new(n, a.a, a.c) };
            let x = reconstruct_random_sparse(&traces, n, &p)?;
            finish(out, string_record("random-sparse", n, m, &x), &as_tensor(&x), a.t.truth.as_deref())
        }
        Cmd::Kdeck(a) => kdeck(a, out),
        Cmd::Matrix(a) => {
            let (h, traces) = load(&a.t.traces)?;
            let grids: Vec<BitTensor> = traces.iter().map(input_to_tensor).collect();
            let r = tournament_reconstruct(&grids, &h.dims, &Candidates::All, h.channel.q1(), a.budget as u128)?;
            let mut rec = Map::new();
            rec.insert("command".into(), json!("matrix"));
            rec.insert("traces".into(), json!(grids.len()));
            rec.insert("output".into(), json!(r.winner.to_string()));
            rec.insert("distance".into(), json!(r.distance));
            rec.insert("candidates".into(), json!(r.candidates as u64));
            finish(out, rec, &r.winner, a.t.truth.as_deref())
        }
        Cmd::RandomMatrix(a) => grid(a, "random-matrix", Some(2), out),
        Cmd::RandomTensor(a) => grid(a, "random-tensor", None, out),
        Cmd::Verify(a) => {
            let mut reports: Vec<VerifyReport> = Vec::new();
            if matches!(a.suite, Suite::ExpectedTrace | Suite::All) {
                reports.push(verify_expected_trace(3, 3, &[0.3, 0.5]));
            }
            if matches!(a.suite, Suite::Kdeck | Suite::All) {
                reports.push(verify_kdeck(12, 4));
            }
            if matches!(a.suite, Suite::BinomialDifference | Suite::All) {
                reports.push(verify_binomial_difference(&[10, 100, 1000], 1_000_000, 0));
            }
            for r in &reports {
                emit(out, &serde_json::to_value(r).expect("report serializes"))?;
            }
            match reports.iter().find(|r| !r.pass) {
                Some(r) => Err(Fail::Failed(format!("suite {} failed", r.suite))),
                None => Ok(()),
            }
        }
        Cmd::Experiment(a) => {
            let text = std::fs::read_to_string(&a.spec).map_err(|e| Fail::Invalid(format!("{}: {e}", a.spec.display())))?;
            let mut spec: ExperimentSpec =
                serde_json::from_str(&text).map_err(|e| Fail::Invalid(format!("{}: {e}", a.spec.display())))?;
            if let Some(v) = a.seed {
                spec.seed = v;
            }
            if let Some(v) = a.trials {
                spec.trials = v;
            }
            if let Some(v) = a.m {
                spec.m = v;
            }
            if let Some(v) = a.eta {
                spec.eta = v;
            }
            if let Some(c) = a.channel.params()? {
                spec.channel = c;
            }
            spec.timing |= a.timing;
            run_experiment_to(&spec, a.threads.unwrap_or_else(default_threads), out)?;
            Ok(())
        }
    }
}

fn kdeck(a: KdeckArgs, out: &mut Out) -> Result<(), Fail> {
    let input: Option<BitString> = a.input.as_deref().map(str::parse).transpose()?;
    let other: Option<BitString> = a.other.as_deref().map(str::parse).transpose()?;
    if let Some(path) = &a.traces {
        let (h, traces) = load_strings(path)?;
        let r = a.r.unwrap_or(traces.len());
        let mut rng = trace_rng(a.seed, AUX_STREAM);
        return match (input, other) {
            (Some(x), Some(y)) => {
                let v = distinguish_by_deck(&x, &y, &traces, a.k, r, &mut rng)?;
                let pick = if v.choice == Choice::X { &x } else { &y };
                emit(
                    out,
                    &json!({
                        "command": "kdeck", "k": a.k, "r": r,
                        "choice": pick.to_string(), "tie": v.tie,
                        "dist_x": v.dist_x.to_string(), "dist_y": v.dist_y.to_string(),
                    }),
                )
            }
            (None, None) => {
                let d = sampled_kdeck(&traces, a.k, r, h.dims[0], &mut rng)?;
                emit(out, &json!({"command": "kdeck", "k": a.k, "r": r, "deck": deck_json(&d)}))
            }
            _ => Err(Fail::Invalid("distinguishing needs both --input and --other".into())),
        };
    }
    if !a.exact {
        return Err(Fail::Invalid("give --exact or --traces".into()));
    }
    let x = input.ok_or_else(|| Fail::Invalid("--exact needs --input".into()))?;
    let dx = exact_kdeck(&x, a.k)?;
    let mut rec = json!({"command": "kdeck", "k": a.k, "input": x.to_string(), "deck": deck_json(&dx)});
    if let Some(y) = other {
        let dy = exact_kdeck(&y, a.k)?;
        rec["other"] = json!(y.to_string());
        rec["other_deck"] = deck_json(&dy);
        rec["equal"] = json!(dx == dy);
        rec["l1"] = json!(dx.l1_distance(&dy).to_string());
    }
    emit(out, &rec)
}

fn grid(a: GridArgs, cmd: &str, order: Option<usize>, out: &mut Out) -> Result<(), Fail> {
    let (h, traces) = load(&a.t.traces)?;
    if order.is_some_and(|o| o != h.dims.len()) {
        return Err(Fail::Invalid(format!("{cmd} needs a matrix trace file")));
    }
    let q = h.channel.q1();
    let matcher = match a.matcher {
        MatcherKind::Joint => {
            let d = JointParams::default();
            Matcher::Joint(JointParams { beam: a.beam.unwrap_or(d.beam), ..d })
        }
        MatcherKind::Oracle => {
            let cells: usize = h.dims.iter().product();
            let mut p = OracleParams::with_constants(cells, q, a.cw, a.cg);
            if let Some(f) = a.factor {
                p.factor = f;
            }
            Matcher::Oracle(p)
        }
    };
    let grids: Vec<BitTensor> = traces.iter().map(input_to_tensor).collect();
    let r = reconstruct_random_grid(&grids, &h.dims, q, &matcher)?;
    let mut rec = Map::new();
    rec.insert("command".into(), json!(cmd));
    rec.insert("traces".into(), json!(grids.len()));
    rec.insert("output".into(), json!(r.tensor.to_string()));
    rec.insert("diagnostics".into(), serde_json::to_value(&r.diagnostics).expect("diagnostics serialize"));
    finish(out, rec, &r.tensor, a.t.truth.as_deref())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Fail::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
