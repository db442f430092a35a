//! Command-line surface. Exit codes: 0 on success, 2 for configuration or
//! usage errors, 3 for runtime failures. Everything a run writes lands
//! under its output directory, and reruns with the same config and seed
//! produce byte-identical artifacts.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use allocnas::checkpoint::{restore_supernet, save_checkpoint, CheckpointMeta};
use allocnas::config::ExperimentConfig;
use allocnas::cost::CostSpec;
use allocnas::error::{Error, Result};
use allocnas::report;
use allocnas::search::{
    enumerate_space, greedy_block_search, reweighted_size, EvalCounter, LookupScorer, SearchSpace,
};
use allocnas::supernet::{ActiveSet, Allocation, BlockFamily, SuperNet};
use allocnas::transfer::{
    evaluate, finetune_supernet_target, motivation_sweep, run_full_transfer,
    train_supernet_source, InheritedEval,
};

#[derive(Parser)]
#[command(
    name = "allocnas",
    version,
    about = "Joint architecture-and-weight transfer learning at desk scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the super-network on the source task with random suffix drop
    TrainSupernet(TrainSupernetArgs),
    /// Fine-tune a source-trained super-network on the target task
    FinetuneTarget(FinetuneTargetArgs),
    /// Greedy block search, either live against a checkpoint or replayed
    /// from a recorded score table
    Search(SearchArgs),
    /// Full pipeline: source training, target fine-tuning, search, weight
    /// search per budget, optional fixed-architecture baseline
    Transfer(TransferArgs),
    /// Evaluate a checkpoint on a task split
    Evaluate(EvaluateArgs),
    /// List every allocation within a budget
    Enumerate(EnumerateArgs),
    /// Price an allocation in multiply-accumulates
    Flops(FlopsArgs),
    /// Effective-receptive-field mass for one or more active sets
    Erf(ErfArgs),
    /// Train same-size architectures on source and target independently
    /// and compare their rankings
    MotivationSweep(MotivationSweepArgs),
    /// Summarize a finished run directory and verify its manifest
    Report(ReportArgs),
}

#[derive(Args)]
struct TrainSupernetArgs {
    /// Experiment description (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: the config's out_dir)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FinetuneTargetArgs {
    #[arg(long)]
    config: PathBuf,
    /// Source-trained super-network checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    /// Experiment description; required unless --replay is used with
    /// --super and --budget
    #[arg(long)]
    config: Option<PathBuf>,
    /// Target-fine-tuned super-network checkpoint (live scoring)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// CSV of recorded `allocation,score` rows to search over instead of a
    /// checkpoint
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Per-stage bounds, e.g. 8,10,36,14 (replay mode)
    #[arg(long = "super")]
    super_alloc: Option<String>,
    /// Size budget (replay mode)
    #[arg(long)]
    budget: Option<f64>,
    /// Per-stage size weights, e.g. 1,1,1,1 (replay mode; default unit)
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TransferArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskSide {
    Source,
    Target,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitName {
    Val,
    Train,
    All,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Which task of the pair to evaluate on
    #[arg(long, value_enum, default_value_t = TaskSide::Target)]
    task: TaskSide,
    #[arg(long, value_enum, default_value_t = SplitName::Val)]
    split: SplitName,
    /// Evaluate a sub-network instead of the full allocation, e.g. 1,2,2,1
    #[arg(long)]
    active: Option<String>,
}

#[derive(Args)]
struct EnumerateArgs {
    /// Per-stage bounds, e.g. 2,2,2
    #[arg(long = "super")]
    super_alloc: String,
    #[arg(long)]
    budget: f64,
    /// Per-stage size weights (default: every block counts 1)
    #[arg(long)]
    weights: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyName {
    Bottleneck,
    Inverted,
}

impl From<FamilyName> for BlockFamily {
    fn from(f: FamilyName) -> Self {
        match f {
            FamilyName::Bottleneck => BlockFamily::Bottleneck,
            FamilyName::Inverted => BlockFamily::Inverted,
        }
    }
}

#[derive(Args)]
struct FlopsArgs {
    #[arg(long, value_enum)]
    family: FamilyName,
    /// Blocks per stage, e.g. 3,4,6,3
    #[arg(long)]
    alloc: String,
    /// Input extent in pixels
    #[arg(long)]
    input: usize,
    #[arg(long, default_value_t = 1000)]
    classes: usize,
}

#[derive(Args)]
struct ErfArgs {
    /// Checkpoint to analyze; omit to analyze a fresh network from --config
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Active set rows to measure, e.g. --active 1,1,1,1 --active 3,4,6,3
    /// (default: the shallowest and the full network)
    #[arg(long)]
    active: Vec<String>,
}

#[derive(Args)]
struct MotivationSweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Equal-size allocations to compare, e.g. --alloc 3-2-1-1 --alloc
    /// 2-2-2-1 (default: five spread-out shapes of seven blocks over four
    /// stages)
    #[arg(long = "alloc")]
    allocs: Vec<String>,
    /// Comma-separated seeds (default 1,2,3,4,5)
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory containing manifest.json
    #[arg(long)]
    run: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code: u8 = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 3 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::TrainSupernet(args) => cmd_train_supernet(args),
        Command::FinetuneTarget(args) => cmd_finetune_target(args),
        Command::Search(args) => cmd_search(args),
        Command::Transfer(args) => cmd_transfer(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Enumerate(args) => cmd_enumerate(args),
        Command::Flops(args) => cmd_flops(args),
        Command::Erf(args) => cmd_erf(args),
        Command::MotivationSweep(args) => cmd_motivation_sweep(args),
        Command::Report(args) => cmd_report(args),
    }
}

/// Loads and validates a config; any failure here is a usage error.
fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).map_err(|e| match e {
        Error::Config(_) => e,
        other => Error::config(other.to_string()),
    })
}

fn config_base_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn out_dir(config: &ExperimentConfig, flag: &Option<PathBuf>) -> Result<PathBuf> {
    let dir = flag.clone().unwrap_or_else(|| config.out_dir.clone());
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// `"3,4,6,3"` or `"3-4-6-3"` to an allocation.
fn parse_alloc(text: &str) -> Result<Allocation> {
    let counts = text
        .split(|c| c == ',' || c == '-')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| Error::config(format!("bad allocation {text:?}")))
        })
        .collect::<Result<Vec<usize>>>()?;
    Allocation::new(counts).map_err(|e| Error::config(e.to_string()))
}

fn parse_weights(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("bad weights {text:?}")))
        })
        .collect()
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<u64>()
                .map_err(|_| Error::config(format!("bad seeds {text:?}")))
        })
        .collect()
}

fn net_meta(net: &SuperNet, seed: u64, phase: &str) -> CheckpointMeta {
    CheckpointMeta {
        allocation: net.alloc().clone(),
        kind: *net.kind(),
        seed,
        phase: phase.to_string(),
        num_classes: net.num_classes(),
        input_channels: net.input_channels(),
        input_extent: net.input_extent(),
    }
}

fn print_metrics(label: &str, metrics: &allocnas::transfer::Metrics) {
    println!(
        "{label}: loss {:.4}, top-1 {:.4} over {} examples",
        metrics.loss, metrics.top1_accuracy, metrics.n_examples
    );
}

fn cmd_train_supernet(args: TrainSupernetArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let inputs = config.resolve(&config_base_dir(&args.config))?;
    let dir = out_dir(&config, &args.out)?;
    let mut rng = allocnas::rng::derive_rng(inputs.seed, "supernet/init");
    let shape = inputs.source.images.shape().to_vec();
    let mut net = SuperNet::build(
        inputs.kind,
        inputs.super_alloc.clone(),
        inputs.source.classes,
        shape[1],
        shape[2],
        &mut rng,
    )?;
    let mut train_rng = allocnas::rng::derive_rng(inputs.seed, "supernet/source");
    let outcome = train_supernet_source(
        &mut net,
        &inputs.source,
        &inputs.schedules.supernet_source,
        &mut train_rng,
    )?;
    let path = dir.join("supernet_source.spnw");
    save_checkpoint(&path, &net_meta(&net, inputs.seed, "supernet-source"), &net.params)?;
    print_metrics("before", &outcome.before);
    print_metrics("after", &outcome.after);
    println!("steps: {}", outcome.steps);
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_finetune_target(args: FinetuneTargetArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let inputs = config.resolve(&config_base_dir(&args.config))?;
    let dir = out_dir(&config, &args.out)?;
    let (_, mut net) = restore_supernet(&args.checkpoint)?;
    let mut rng = allocnas::rng::derive_rng(inputs.seed, "supernet/target");
    let outcome = finetune_supernet_target(
        &mut net,
        &inputs.target,
        &inputs.schedules.supernet_target,
        true,
        &mut rng,
    )?;
    let path = dir.join("supernet_target.spnw");
    save_checkpoint(&path, &net_meta(&net, inputs.seed, "supernet-target"), &net.params)?;
    print_metrics("before", &outcome.before);
    print_metrics("after", &outcome.after);
    println!("steps: {}", outcome.steps);
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_search(args: SearchArgs) -> Result<()> {
    let trace = if let Some(replay) = &args.replay {
        let bounds = parse_alloc(args.super_alloc.as_deref().ok_or_else(|| {
            Error::config("--replay needs --super bounds")
        })?)?;
        let budget = args
            .budget
            .ok_or_else(|| Error::config("--replay needs --budget"))?;
        let weights = match &args.weights {
            Some(w) => parse_weights(w)?,
            None => vec![1.0; bounds.stages()],
        };
        let space = SearchSpace::weighted(bounds, budget, weights)?;
        let scorer = LookupScorer::from_csv_file(replay)?;
        let counter = EvalCounter::new(&scorer);
        greedy_block_search(&space, &counter)?
    } else {
        let config_path = args
            .config
            .as_ref()
            .ok_or_else(|| Error::config("search needs --config or --replay"))?;
        let checkpoint = args
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::config("live search needs --checkpoint"))?;
        let config = load_config(config_path)?;
        let inputs = config.resolve(&config_base_dir(config_path))?;
        let (_, net) = restore_supernet(checkpoint)?;
        if net.alloc() != &inputs.super_alloc {
            return Err(Error::config(format!(
                "checkpoint allocation {} does not match config bounds {}",
                net.alloc(),
                inputs.super_alloc
            )));
        }
        let space = SearchSpace::weighted(
            inputs.super_alloc.clone(),
            inputs.budget,
            inputs.weights.clone(),
        )?;
        let scorer = InheritedEval {
            net: &net,
            target: &inputs.target,
        };
        let counter = EvalCounter::new(&scorer);
        greedy_block_search(&space, &counter)?
    };
    print!("{}", trace.to_csv());
    println!(
        "# final {} after {} evaluations, {} tie-breaks",
        trace.chain.last().expect("non-empty chain"),
        trace.eval_count,
        trace.tie_breaks
    );
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(report::TRACE_FILE);
        std::fs::write(&path, trace.to_csv()).map_err(|e| Error::io(&path, e))?;
        println!("# wrote {}", path.display());
    }
    Ok(())
}

fn cmd_transfer(args: TransferArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let inputs = config.resolve(&config_base_dir(&args.config))?;
    let dir = out_dir(&config, &args.out)?;
    let run = run_full_transfer(&inputs)?;
    report::emit_run(&run, &config.hash(), &dir)?;
    if let Some(failure) = &run.report.failure {
        return Err(Error::Phase(format!(
            "{failure} (partial report written to {})",
            dir.display()
        )));
    }
    for row in &run.report.per_budget {
        println!(
            "budget {:>6}: {} target top-1 {:.4}",
            row.size, row.allocation, row.outcome.target_metrics.top1_accuracy
        );
    }
    if let Some(baseline) = &run.report.baseline {
        println!(
            "baseline     : {} target top-1 {:.4}",
            baseline.allocation, baseline.outcome.target_metrics.top1_accuracy
        );
    }
    println!("wrote {}", dir.join(report::MANIFEST_FILE).display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let inputs = config.resolve(&config_base_dir(&args.config))?;
    let (_, net) = restore_supernet(&args.checkpoint)?;
    let task = match args.task {
        TaskSide::Source => &inputs.source,
        TaskSide::Target => &inputs.target,
    };
    let all: Vec<usize>;
    let indices: &[usize] = match args.split {
        SplitName::Val => &task.val,
        SplitName::Train => &task.train,
        SplitName::All => {
            all = (0..task.n()).collect();
            &all
        }
    };
    let active = match &args.active {
        Some(text) => ActiveSet::new(parse_alloc(text)?.as_slice().to_vec())?,
        None => ActiveSet::full(net.alloc()),
    };
    let metrics = evaluate(&net, task, indices, &active)?;
    println!(
        "{}",
        serde_json::to_string(&metrics).map_err(|e| Error::contract(e.to_string()))?
    );
    Ok(())
}

fn cmd_enumerate(args: EnumerateArgs) -> Result<()> {
    let bounds = parse_alloc(&args.super_alloc)?;
    let weights = match &args.weights {
        Some(w) => parse_weights(w)?,
        None => vec![1.0; bounds.stages()],
    };
    let space = SearchSpace::weighted(bounds, args.budget, weights.clone())?;
    for alloc in enumerate_space(&space)? {
        println!("{},{}", alloc, reweighted_size(&alloc, &weights)?);
    }
    Ok(())
}

fn cmd_flops(args: FlopsArgs) -> Result<()> {
    let alloc = parse_alloc(&args.alloc)?;
    let family: BlockFamily = args.family.into();
    let spec = match family {
        BlockFamily::Bottleneck => CostSpec::bottleneck_reference(args.input, args.classes)?,
        BlockFamily::Inverted => CostSpec::inverted_reference(args.input, args.classes)?,
    };
    if alloc.stages() != spec.stages() {
        return Err(Error::config(format!(
            "allocation {alloc} has {} stages, pricing covers {}",
            alloc.stages(),
            spec.stages()
        )));
    }
    let total = spec.model_flops(&alloc)?;
    println!("total_macs,{total}");
    println!(
        "family,{}",
        match family {
            BlockFamily::Bottleneck => "bottleneck",
            BlockFamily::Inverted => "inverted",
        }
    );
    println!("allocation,{alloc}");
    println!("input,{}", args.input);
    println!("fixed_macs,{}", spec.fixed_flops());
    for stage in 0..spec.stages() {
        println!(
            "stage_{}_block_macs,{}",
            stage + 1,
            spec.block_flops(stage)
        );
    }
    Ok(())
}

fn cmd_erf(args: ErfArgs) -> Result<()> {
    let net = match (&args.checkpoint, &args.config) {
        (Some(path), _) => restore_supernet(path)?.1,
        (None, Some(config_path)) => {
            let config = load_config(config_path)?;
            let inputs = config.resolve(&config_base_dir(config_path))?;
            let shape = inputs.source.images.shape().to_vec();
            let mut rng = allocnas::rng::derive_rng(inputs.seed, "supernet/init");
            SuperNet::build(
                inputs.kind,
                inputs.super_alloc,
                inputs.source.classes,
                shape[1],
                shape[2],
                &mut rng,
            )?
        }
        (None, None) => return Err(Error::config("erf needs --checkpoint or --config")),
    };
    let mut rows: Vec<ActiveSet> = Vec::new();
    if args.active.is_empty() {
        rows.push(ActiveSet::new(vec![1; net.alloc().stages()])?);
        rows.push(ActiveSet::full(net.alloc()));
    } else {
        for text in &args.active {
            rows.push(ActiveSet::new(parse_alloc(text)?.as_slice().to_vec())?);
        }
    }
    println!("active,outer_response,total_response,outer_fraction");
    for active in rows {
        if !active.fits_within(net.alloc()) {
            return Err(Error::config(format!(
                "active set exceeds the network's allocation {}",
                net.alloc()
            )));
        }
        let erf = net.compute_erf(&active)?;
        let fraction = if erf.total_response > 0.0 {
            erf.outer_response / erf.total_response
        } else {
            0.0
        };
        let label: Vec<String> = active.as_slice().iter().map(|n| n.to_string()).collect();
        println!(
            "{},{},{},{}",
            label.join("-"),
            erf.outer_response,
            erf.total_response,
            fraction
        );
    }
    Ok(())
}

/// Five spread-out shapes of seven blocks, front-loaded through back-loaded.
const DEFAULT_SWEEP: [[usize; 4]; 5] = [
    [3, 2, 1, 1],
    [2, 2, 2, 1],
    [1, 2, 2, 2],
    [1, 1, 2, 3],
    [2, 1, 1, 3],
];

fn cmd_motivation_sweep(args: MotivationSweepArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let inputs = config.resolve(&config_base_dir(&args.config))?;
    let dir = out_dir(&config, &args.out)?;
    let allocs: Vec<Allocation> = if args.allocs.is_empty() {
        if inputs.super_alloc.stages() != 4 {
            return Err(Error::config(
                "default sweep allocations are 4-stage; pass --alloc for other shapes",
            ));
        }
        DEFAULT_SWEEP
            .iter()
            .map(|a| Allocation::new(a.to_vec()))
            .collect::<Result<_>>()?
    } else {
        args.allocs
            .iter()
            .map(|text| parse_alloc(text))
            .collect::<Result<_>>()?
    };
    let seeds = match &args.seeds {
        Some(text) => parse_seeds(text)?,
        None => vec![1, 2, 3, 4, 5],
    };
    let outcome = motivation_sweep(
        &allocs,
        inputs.kind,
        &inputs.source,
        &inputs.target,
        &inputs.schedules.child_source,
        &inputs.schedules.child_target,
        &seeds,
    )?;
    report::emit_sweep(&outcome, &dir)?;
    for seed in &outcome.per_seed {
        println!(
            "seed {}: spearman {:.3}, source best {}, target best {}",
            seed.seed, seed.spearman, seed.source_argmax, seed.target_argmax
        );
    }
    println!(
        "rank inversions: {} of {} seeds",
        outcome.rank_inversions(),
        outcome.per_seed.len()
    );
    println!("wrote {}", dir.join(report::SWEEP_FILE).display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let manifest_path = args.run.join(report::MANIFEST_FILE);
    let text =
        std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: report::Manifest =
        serde_json::from_str(&text).map_err(|e| Error::config(format!("manifest: {e}")))?;
    println!("config hash: {}", manifest.config_hash);
    println!("seed: {}", manifest.seed);
    let mut bad = Vec::new();
    for (name, digest) in &manifest.artifacts {
        let path = args.run.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if &report::sha256_hex(&bytes) != digest {
            bad.push(name.clone());
        }
    }
    let report_path = args.run.join(report::REPORT_FILE);
    if report_path.exists() {
        let text = std::fs::read_to_string(&report_path).map_err(|e| Error::io(&report_path, e))?;
        let run_report: allocnas::transfer::TransferReport =
            serde_json::from_str(&text).map_err(|e| Error::config(format!("report: {e}")))?;
        if let Some(failure) = &run_report.failure {
            println!("status: partial ({failure})");
        } else {
            println!("status: complete");
        }
        for row in &run_report.per_budget {
            println!(
                "budget {:>6}: {} target top-1 {:.4}",
                row.size, row.allocation, row.outcome.target_metrics.top1_accuracy
            );
        }
        if let Some(baseline) = &run_report.baseline {
            println!(
                "baseline     : {} target top-1 {:.4}",
                baseline.allocation, baseline.outcome.target_metrics.top1_accuracy
            );
        }
    }
    if bad.is_empty() {
        println!("manifest: ok ({} artifacts)", manifest.artifacts.len());
        Ok(())
    } else {
        Err(Error::Phase(format!(
            "artifact digests changed since the run: {}",
            bad.join(", ")
        )))
    }
}
