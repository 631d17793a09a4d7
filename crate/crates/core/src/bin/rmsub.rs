//! Command-line front end: encoder search, rank reports, simulation and
//! weight training.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rmsub::construct::{
    encoder_search, encoder_search_sampled, subcode_generator, CodeSpec, Objective,
    DEFAULT_SEARCH_GUARD,
};
use rmsub::decode::{Aggregation, Decoder, RpaConfig, RpaKind};
use rmsub::project::{build_projection_tree, leaf_ranks, memory_report, write_rank_report};
use rmsub::prune::PruneStrategy;
use rmsub::sim::{parse_grid, run_point, snr_to_sigma, ChannelKind, SimResult, SnrMetric, StopRule};
use rmsub::train::{pick_training_snr, train_with_progress, GradientMode, TrainConfig, WeightState};
use rmsub::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "rmsub", version, about = "Reed-Muller subcodes and projection-aggregation decoding")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Search the extra-row selection of an RM subcode and export its generator.
    #[command(args_override_self = true)]
    Construct(ConstructArgs),
    /// Report projected leaf ranks, the L metric and leaf storage.
    #[command(args_override_self = true)]
    Ranks(RanksArgs),
    /// Monte-Carlo BLER/BER simulation.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// Learn projection weights for weighted soft-subRPA.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Per-position bit-error profile at one operating point.
    #[command(args_override_self = true)]
    Profile(SimulateArgs),
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// File of `key=value` lines mirroring the long flags; flags given on
    /// the command line take precedence.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ConstructArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    r: usize,
    #[arg(long)]
    k: usize,
    /// minl, maxl or minl-subspaces:Q0.
    #[arg(long, default_value = "minl", value_parser = parse_objective)]
    objective: Objective,
    /// Export this comma-separated selection instead of searching.
    #[arg(long, value_delimiter = ',')]
    selection: Option<Vec<usize>>,
    /// Maximum number of selections for exhaustive search.
    #[arg(long, default_value_t = DEFAULT_SEARCH_GUARD)]
    guard: u128,
    /// Use random-restart local search with this many restarts.
    #[arg(long)]
    sampled: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Generator file to write (stdout when absent).
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// CSV of every scored selection.
    #[arg(long)]
    candidates: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RanksArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    /// Generator file.
    #[arg(long, short)]
    generator: PathBuf,
    #[arg(long, default_value = "full")]
    prune: PruneStrategy,
    /// Also build the tree and report stored leaf bits.
    #[arg(long)]
    memory: bool,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum DecoderName {
    Map,
    Fht,
    Subrpa,
    SoftSubrpa,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum AggregationName {
    Soft,
    Logsum,
}

impl From<AggregationName> for Aggregation {
    fn from(a: AggregationName) -> Self {
        match a {
            AggregationName::Soft => Aggregation::Soft,
            AggregationName::Logsum => Aggregation::LogSum,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ChannelName {
    Awgn,
    Bsc,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long, short)]
    generator: PathBuf,
    #[arg(long, value_enum, default_value = "soft-subrpa")]
    decoder: DecoderName,
    #[arg(long, value_enum, default_value = "soft")]
    aggregation: AggregationName,
    /// full, minrank:P, maxrank:P, random:P:SEED, weights:FILE:P or plan:FILE.
    #[arg(long, default_value = "full")]
    prune: PruneStrategy,
    /// Weight file for weighted aggregation on the full tree.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    nmax: usize,
    /// Keep iterating even when decisions stop changing.
    #[arg(long)]
    no_early_exit: bool,
    #[arg(long, value_enum, default_value = "awgn")]
    channel: ChannelName,
    /// `a:b:step` in dB for AWGN, or crossover probabilities for BSC.
    #[arg(long, default_value = "0:4:1", allow_hyphen_values = true)]
    snr_grid: String,
    #[arg(long, default_value = "snr")]
    metric: SnrMetric,
    #[arg(long, default_value_t = 100_000)]
    min_trials: u64,
    #[arg(long, default_value_t = 100)]
    min_errors: u64,
    #[arg(long, default_value_t = 1_000_000)]
    max_trials: u64,
    /// Run exactly this many trials per point.
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long, default_value_t = 1000)]
    batch: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Result CSV (stdout when absent).
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Bit-error profile CSV.
    #[arg(long)]
    profile_output: Option<PathBuf>,
    /// Worker threads (all cores when absent).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum GradientName {
    Reverse,
    Fd,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long, short)]
    generator: PathBuf,
    #[arg(long, default_value_t = 15)]
    q0: usize,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    adam_eps: f64,
    #[arg(long, default_value_t = 2000)]
    iterations: usize,
    /// Training SNR in dB; when absent it is searched as the full-projection
    /// soft-subRPA operating point at `--target-bler` plus `--snr-offset`.
    #[arg(long, allow_hyphen_values = true)]
    snr_db: Option<f64>,
    #[arg(long, default_value = "snr")]
    metric: SnrMetric,
    #[arg(long, default_value_t = 1e-3)]
    target_bler: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    snr_offset: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    nmax: usize,
    #[arg(long, value_enum, default_value = "soft")]
    aggregation: AggregationName,
    #[arg(long, value_enum, default_value = "reverse")]
    gradient: GradientName,
    #[arg(long, default_value_t = 1e-3)]
    fd_step: f64,
    /// Weight file to write (stdout when absent).
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// CSV of the loss per iteration.
    #[arg(long)]
    loss_output: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

fn parse_objective(s: &str) -> std::result::Result<Objective, String> {
    match s.split_once(':') {
        None if s == "minl" => Ok(Objective::MinL),
        None if s == "maxl" => Ok(Objective::MaxL),
        Some(("minl-subspaces", q0)) => q0
            .parse()
            .map(Objective::MinLOnSubspaces)
            .map_err(|_| format!("bad subspace count {q0:?}")),
        _ => Err(format!("unknown objective {s:?}; expected minl, maxl or minl-subspaces:Q0")),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::InvalidParameter(format!("cannot create {}: {e}", path.display())))
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_spec(path: &Path) -> Result<CodeSpec> {
    let f = File::open(path)
        .map_err(|e| Error::InvalidParameter(format!("cannot open {}: {e}", path.display())))?;
    CodeSpec::read_from(BufReader::new(f))
}

fn read_weights(path: &Path) -> Result<WeightState> {
    let f = File::open(path)
        .map_err(|e| Error::InvalidParameter(format!("cannot open {}: {e}", path.display())))?;
    WeightState::read_from(BufReader::new(f))
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run_construct(a: ConstructArgs) -> Result<()> {
    let spec = if let Some(sel) = &a.selection {
        subcode_generator(a.m, a.r, a.k, sel)?
    } else {
        let res = match a.sampled {
            Some(restarts) => encoder_search_sampled(a.m, a.r, a.k, a.objective, restarts, a.seed)?,
            None => encoder_search(a.m, a.r, a.k, a.objective, a.guard)?,
        };
        let scores = res.distinct_scores_desc();
        let (lo, hi) = (&res.candidates[res.argmin], &res.candidates[res.argmax]);
        eprintln!(
            "searched {} selections: min L {} {:?}, max L {} {:?}, distinct scores {}",
            res.candidates.len(),
            lo.l_full,
            lo.selection,
            hi.l_full,
            hi.selection,
            scores.len()
        );
        let best = res.best();
        eprintln!(
            "best: selection {:?} L {}{}",
            best.selection,
            best.l_full,
            best.l_subset.map_or(String::new(), |s| format!(" subset score {s}"))
        );
        if let Some(path) = &a.candidates {
            let mut w = create(path)?;
            writeln!(w, "selection,l_full,l_subset")?;
            for c in &res.candidates {
                let sel: Vec<String> = c.selection.iter().map(usize::to_string).collect();
                let sub = c.l_subset.map_or(String::new(), |s| s.to_string());
                writeln!(w, "{},{},{}", sel.join(" "), c.l_full, sub)?;
            }
            w.flush()?;
        }
        subcode_generator(a.m, a.r, a.k, &best.selection)?
    };
    let mut w = sink(a.output.as_deref())?;
    spec.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

fn run_ranks(a: RanksArgs) -> Result<()> {
    let spec = read_spec(&a.generator)?;
    let plan = a.prune.build(&spec)?;
    let ranks = leaf_ranks(spec.generator(), spec.m, spec.r, plan.as_ref())?;
    let memory = if a.memory {
        Some(memory_report(&build_projection_tree(&spec, plan.as_ref())?))
    } else {
        None
    };
    let mut w = sink(a.output.as_deref())?;
    write_rank_report(&ranks, memory.as_ref(), &mut w)?;
    w.flush()?;
    Ok(())
}

fn build_decoder(a: &SimulateArgs, spec: &CodeSpec) -> Result<Decoder> {
    let config = RpaConfig {
        n_max: a.nmax,
        inner_iterations: Vec::new(),
        early_exit: !a.no_early_exit,
    };
    let rpa = |kind: RpaKind| -> Result<Decoder> {
        let plan = a.prune.build(spec)?;
        let tree = build_projection_tree(spec, plan.as_ref())?;
        let weights = match &a.weights {
            Some(path) => {
                if kind == RpaKind::Hard {
                    return Err(Error::InvalidParameter(
                        "weights apply to soft-subrpa only".into(),
                    ));
                }
                Some(read_weights(path)?.tree_weights(&tree)?)
            }
            None => None,
        };
        Ok(Decoder::Rpa {
            tree,
            kind,
            config: config.clone(),
            weights,
        })
    };
    match a.decoder {
        DecoderName::Map => Decoder::map(spec),
        DecoderName::Fht => Decoder::fht(spec),
        DecoderName::Subrpa => rpa(RpaKind::Hard),
        DecoderName::SoftSubrpa => rpa(RpaKind::Soft(a.aggregation.into())),
    }
}

fn simulate(a: &SimulateArgs) -> Result<(CodeSpec, SimResult)> {
    set_threads(a.threads)?;
    let spec = read_spec(&a.generator)?;
    let decoder = build_decoder(a, &spec)?;
    let grid = parse_grid(&a.snr_grid).map_err(Error::InvalidParameter)?;
    let stop = match a.trials {
        Some(t) => StopRule { batch: a.batch, ..StopRule::fixed(t) },
        None => StopRule {
            min_trials: a.min_trials,
            min_errors: a.min_errors,
            max_trials: a.max_trials,
            batch: a.batch,
        },
    };
    let mut points = Vec::with_capacity(grid.len());
    for &x in &grid {
        let channel = match a.channel {
            ChannelName::Awgn => ChannelKind::Awgn {
                sigma: snr_to_sigma(a.metric, x, spec.n, spec.k),
            },
            ChannelName::Bsc => ChannelKind::Bsc { p: x },
        };
        let p = run_point(&spec, &decoder, channel, stop, a.seed)?;
        eprintln!(
            "{} {x}: {} trials, {} block errors, BLER {:.4e}, {:.1}s",
            match a.channel {
                ChannelName::Awgn => a.metric.to_string(),
                ChannelName::Bsc => "p".into(),
            },
            p.trials,
            p.block_errors,
            p.bler(),
            p.seconds
        );
        points.push(p);
    }
    Ok((spec, SimResult { points }))
}

fn run_simulate(a: SimulateArgs) -> Result<()> {
    let (_, res) = simulate(&a)?;
    let mut w = sink(a.output.as_deref())?;
    res.write_csv(&mut w)?;
    w.flush()?;
    if let Some(path) = &a.profile_output {
        let mut w = create(path)?;
        res.write_profile(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn run_profile(a: SimulateArgs) -> Result<()> {
    let (_, res) = simulate(&a)?;
    let mut w = sink(a.profile_output.as_deref().or(a.output.as_deref()))?;
    res.write_profile(&mut w)?;
    w.flush()?;
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    set_threads(a.threads)?;
    let spec = read_spec(&a.generator)?;
    let snr_db = match a.snr_db {
        Some(v) => v,
        None => {
            let v = pick_training_snr(&spec, a.target_bler, a.snr_offset, a.metric, -5.0, 15.0, 20_000, a.seed)?;
            eprintln!("training {} {v:.3} dB", a.metric);
            v
        }
    };
    let config = TrainConfig {
        batch_size: a.batch_size,
        snr_db,
        metric: a.metric,
        learning_rate: a.lr,
        beta1: a.beta1,
        beta2: a.beta2,
        adam_eps: a.adam_eps,
        iterations: a.iterations,
        epsilon: a.epsilon,
        q0: a.q0,
        seed: a.seed,
        n_max: a.nmax,
        aggregation: a.aggregation.into(),
        gradient: match a.gradient {
            GradientName::Reverse => GradientMode::Reverse,
            GradientName::Fd => GradientMode::FiniteDifference { step: a.fd_step },
        },
        ..TrainConfig::default()
    };
    let tree = build_projection_tree(&spec, None)?;
    let every = (a.iterations / 20).max(1);
    let out = train_with_progress(&spec, &tree, &config, None, &mut |it, loss| {
        if it % every == 0 {
            eprintln!("iteration {it}: loss {loss:.5}");
        }
    })?;
    if let Some(path) = &a.loss_output {
        let mut w = create(path)?;
        writeln!(w, "iteration,loss")?;
        for (i, l) in out.losses.iter().enumerate() {
            writeln!(w, "{i},{l}")?;
        }
        w.flush()?;
    }
    let mut state = out.state;
    state.meta.insert("aggregation".into(), format!("{:?}", a.aggregation).to_lowercase());
    let mut w = sink(a.output.as_deref())?;
    state.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Expands `--config FILE` into flags placed before the user's own flags,
/// so later (user) occurrences override the file.
fn expand_config(args: Vec<String>) -> std::result::Result<Vec<String>, String> {
    let pos = args.iter().position(|a| a == "--config" || a.starts_with("--config="));
    let Some(pos) = pos else { return Ok(args) };
    let (path, consumed) = match args[pos].strip_prefix("--config=") {
        Some(p) => (p.to_string(), 1),
        None => (
            args.get(pos + 1).cloned().ok_or("--config needs a file")?,
            2,
        ),
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read config {path}: {e}"))?;
    let mut injected = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{path}:{}: expected key=value", i + 1))?;
        let key = key.trim().replace('_', "-");
        match value.trim() {
            "true" => injected.push(format!("--{key}")),
            "false" => {}
            v => {
                injected.push(format!("--{key}"));
                injected.push(v.to_string());
            }
        }
    }
    let mut rest = args;
    rest.drain(pos..pos + consumed);
    // Insert right after the subcommand name.
    let at = 2.min(rest.len());
    rest.splice(at..at, injected);
    Ok(rest)
}

fn main() -> ExitCode {
    let args = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let text = e.render().to_string();
            eprintln!("{}", text.lines().next().unwrap_or("error: invalid arguments"));
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.command {
        Command::Construct(a) => run_construct(a),
        Command::Ranks(a) => run_ranks(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Train(a) => run_train(a),
        Command::Profile(a) => run_profile(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
