//! The end-to-end pipeline: source super-network training with random
//! suffix drop, target fine-tuning, greedy architecture search scored by
//! inherited-weight validation accuracy, per-budget weight search
//! (source-then-target fine-tuning of the inherited child), and the
//! fixed-architecture baseline.
//!
//! Every multi-phase operation takes a single seed and derives one stream
//! per phase by label, so whole pipelines are bit-reproducible.

use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::TaskSpec;
use crate::error::{Error, Result};
use crate::rng::{derive_rng, derive_seed};
use crate::search::{
    greedy_block_search, EvalCounter, Scorer, SearchSpace, SearchTrace,
};
use crate::supernet::{sample_active_set, ActiveSet, Allocation, BlockKind, SuperNet};
use crate::tensor::{sgd_step, Tape, TrainSchedule};

/// Evaluation batch size. GroupNorm statistics are per-sample, so batching
/// never changes results; this only caps tape memory.
pub const EVAL_BATCH: usize = 64;

/// Validation-set summary for one model on one split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean cross-entropy (no label smoothing).
    pub loss: f64,
    pub top1_accuracy: f64,
    pub n_examples: usize,
}

impl Metrics {
    pub fn validate(&self) -> Result<()> {
        if !(self.loss >= 0.0) || !self.loss.is_finite() {
            return Err(Error::contract(format!("loss {} must be >= 0", self.loss)));
        }
        if !(0.0..=1.0).contains(&self.top1_accuracy) {
            return Err(Error::contract(format!(
                "accuracy {} outside [0, 1]",
                self.top1_accuracy
            )));
        }
        if self.n_examples == 0 {
            return Err(Error::contract("metrics over zero examples"));
        }
        Ok(())
    }
}

/// Whether training iterations sample a suffix-drop active set or run the
/// whole network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DropMode {
    Sample,
    Off,
}

/// Mean loss and top-1 accuracy of the masked network over the given sample
/// indices. Deterministic: fixed batching, no augmentation, no dropout.
pub fn evaluate(
    net: &SuperNet,
    task: &TaskSpec,
    indices: &[usize],
    active: &ActiveSet,
) -> Result<Metrics> {
    if indices.is_empty() {
        return Err(Error::contract("evaluate: empty split"));
    }
    if task.classes != net.num_classes() {
        return Err(Error::contract(format!(
            "evaluate: task has {} classes, head has {}",
            task.classes,
            net.num_classes()
        )));
    }
    let mut total_loss = 0.0f64;
    let mut correct = 0usize;
    for chunk in indices.chunks(EVAL_BATCH) {
        let (images, labels) = task.batch(chunk)?;
        let mut tape = Tape::new();
        let logits = net.forward_logits(&mut tape, &images, active)?;
        let loss = tape.softmax_cross_entropy(logits, &labels, 0.0)?;
        total_loss += tape.scalar_f64(loss)? * chunk.len() as f64;
        let vals = tape.value(logits);
        let k = vals.shape()[1];
        for (row, &label) in labels.iter().enumerate() {
            let r = &vals.data()[row * k..(row + 1) * k];
            let mut best = 0;
            for j in 1..k {
                if r[j] > r[best] {
                    best = j;
                }
            }
            if best == label {
                correct += 1;
            }
        }
    }
    let n = indices.len();
    let metrics = Metrics {
        loss: total_loss / n as f64,
        top1_accuracy: correct as f64 / n as f64,
        n_examples: n,
    };
    metrics.validate()?;
    Ok(metrics)
}

/// Evaluates with every block active.
pub fn evaluate_full(net: &SuperNet, task: &TaskSpec, indices: &[usize]) -> Result<Metrics> {
    evaluate(net, task, indices, &ActiveSet::full(net.alloc()))
}

/// Shared minibatch-SGD loop. Per epoch: shuffle the train split, walk it in
/// `batch_size` chunks (the last chunk may be short); per iteration under
/// `DropMode::Sample`: draw a fresh active set. Returns the step count.
fn train_loop(
    net: &mut SuperNet,
    task: &TaskSpec,
    sched: &TrainSchedule,
    drop: DropMode,
    phase: &str,
    rng: &mut impl Rng,
) -> Result<usize> {
    sched.validate()?;
    if task.train.is_empty() {
        return Err(Error::contract(format!("{phase}: empty train split")));
    }
    if task.classes != net.num_classes() {
        return Err(Error::contract(format!(
            "{phase}: task has {} classes, head has {}",
            task.classes,
            net.num_classes()
        )));
    }
    let full = ActiveSet::full(net.alloc());
    let mut order: Vec<usize> = task.train.clone();
    let mut steps = 0usize;
    for epoch in 0..sched.epochs {
        let lr = sched.lr_at(epoch);
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for (step, chunk) in order.chunks(sched.batch_size).enumerate() {
            let active = match drop {
                DropMode::Sample => sample_active_set(net.alloc(), rng),
                DropMode::Off => full.clone(),
            };
            let (images, labels) = task.batch(chunk)?;
            let mut tape = Tape::new();
            let logits = net.forward_logits(&mut tape, &images, &active)?;
            let loss = tape.softmax_cross_entropy(logits, &labels, sched.label_smoothing)?;
            let loss_val = tape.scalar_f64(loss)?;
            if !loss_val.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            tape.backward(loss, &mut net.params)?;
            sgd_step(&mut net.params, lr, sched.momentum, sched.weight_decay)?;
            steps += 1;
        }
    }
    Ok(steps)
}

/// Validation metrics straddling one training phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseOutcome {
    pub before: Metrics,
    pub after: Metrics,
    pub steps: usize,
}

/// Trains the super-network on the source task with suffix drop on: every
/// iteration runs a freshly sampled per-stage prefix.
pub fn train_supernet_source(
    net: &mut SuperNet,
    source: &TaskSpec,
    sched: &TrainSchedule,
    rng: &mut impl Rng,
) -> Result<PhaseOutcome> {
    let before = evaluate_full(net, source, &source.val)?;
    let steps = train_loop(net, source, sched, DropMode::Sample, "supernet-source", rng)?;
    let after = evaluate_full(net, source, &source.val)?;
    Ok(PhaseOutcome { before, after, steps })
}

/// Fine-tunes the super-network on the target task, still with suffix drop
/// (keeps all sub-paths comparable at search time). If the label spaces
/// differ the head is re-initialized, which `allow_head_reinit = false`
/// turns into a contract error.
pub fn finetune_supernet_target(
    net: &mut SuperNet,
    target: &TaskSpec,
    sched: &TrainSchedule,
    allow_head_reinit: bool,
    rng: &mut impl Rng,
) -> Result<PhaseOutcome> {
    if target.classes != net.num_classes() {
        if !allow_head_reinit {
            return Err(Error::contract(format!(
                "target has {} classes but head has {} and re-init is disabled",
                target.classes,
                net.num_classes()
            )));
        }
        net.reinit_head(target.classes, rng)?;
    }
    let before = evaluate_full(net, target, &target.val)?;
    let steps = train_loop(net, target, sched, DropMode::Sample, "supernet-target", rng)?;
    let after = evaluate_full(net, target, &target.val)?;
    Ok(PhaseOutcome { before, after, steps })
}

/// Result of the two-phase child fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSearchOutcome {
    /// Source validation metrics after the source phase.
    pub source_metrics: Metrics,
    /// Target validation metrics after the target phase: the headline
    /// number.
    pub target_metrics: Metrics,
    pub source_steps: usize,
    pub target_steps: usize,
}

/// Sequential source-then-target fine-tuning of a (typically inherited)
/// child network, with no suffix drop: the child is its own full
/// architecture. The head is re-initialized at the task switch when the
/// label spaces differ.
pub fn weight_search(
    child: &mut SuperNet,
    source: &TaskSpec,
    target: &TaskSpec,
    source_sched: &TrainSchedule,
    target_sched: &TrainSchedule,
    seed: u64,
) -> Result<WeightSearchOutcome> {
    if child.num_classes() != source.classes {
        return Err(Error::contract(format!(
            "weight_search: child head has {} classes, source task {}",
            child.num_classes(),
            source.classes
        )));
    }
    let mut src_rng = derive_rng(seed, "weight-search/source");
    let source_steps = train_loop(
        child,
        source,
        source_sched,
        DropMode::Off,
        "weight-search-source",
        &mut src_rng,
    )?;
    let source_metrics = evaluate_full(child, source, &source.val)?;

    if target.classes != child.num_classes() {
        let mut head_rng = derive_rng(seed, "weight-search/head");
        child.reinit_head(target.classes, &mut head_rng)?;
    }
    let mut tgt_rng = derive_rng(seed, "weight-search/target");
    let target_steps = train_loop(
        child,
        target,
        target_sched,
        DropMode::Off,
        "weight-search-target",
        &mut tgt_rng,
    )?;
    let target_metrics = evaluate_full(child, target, &target.val)?;
    Ok(WeightSearchOutcome {
        source_metrics,
        target_metrics,
        source_steps,
        target_steps,
    })
}

/// From-scratch reference branch: builds a fresh network with the given
/// allocation and runs the same source-then-target fine-tuning as the
/// searched child. The allocation must match the searched allocation's
/// reweighted size.
#[allow(clippy::too_many_arguments)]
pub fn fixed_arch_baseline(
    alloc: &Allocation,
    searched: &Allocation,
    weights: &[f64],
    kind: BlockKind,
    source: &TaskSpec,
    target: &TaskSpec,
    source_sched: &TrainSchedule,
    target_sched: &TrainSchedule,
    seed: u64,
) -> Result<(SuperNet, WeightSearchOutcome)> {
    let a = crate::search::reweighted_size(alloc, weights)?;
    let b = crate::search::reweighted_size(searched, weights)?;
    if (a - b).abs() > 1e-9 * a.abs().max(1.0) {
        return Err(Error::contract(format!(
            "baseline {alloc} (size {a}) does not match searched {searched} (size {b})"
        )));
    }
    let shape = source.images.shape();
    let mut init_rng = derive_rng(seed, "baseline/init");
    let mut net = SuperNet::build(
        kind,
        alloc.clone(),
        source.classes,
        shape[1],
        shape[2],
        &mut init_rng,
    )?;
    let outcome = weight_search(
        &mut net,
        source,
        target,
        source_sched,
        target_sched,
        derive_seed(seed, "baseline/train"),
    )?;
    Ok((net, outcome))
}

/// Greedy-search scorer: masks the (target-fine-tuned) super-network to the
/// candidate allocation and reads top-1 accuracy on the target validation
/// split. Forward passes only; the network is never mutated.
pub struct InheritedEval<'a> {
    pub net: &'a SuperNet,
    pub target: &'a TaskSpec,
}

impl Scorer for InheritedEval<'_> {
    fn score(&self, alloc: &Allocation) -> Result<f64> {
        let active = ActiveSet::new(alloc.as_slice().to_vec())?;
        let metrics = evaluate(self.net, self.target, &self.target.val, &active)?;
        Ok(metrics.top1_accuracy)
    }
}

// ── full pipeline ───────────────────────────────────────────────────────

/// Everything `run_full_transfer` needs, already resolved (tasks rendered
/// and split, weights derived).
#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub source: TaskSpec,
    pub target: TaskSpec,
    pub kind: BlockKind,
    pub super_alloc: Allocation,
    pub budget: f64,
    /// Per-stage size weights (unit or FLOPs-derived).
    pub weights: Vec<f64>,
    pub baseline_alloc: Option<Allocation>,
    pub schedules: ScheduleSet,
    pub seed: u64,
    /// Train chain children from scratch instead of inheriting.
    pub from_scratch: bool,
}

/// One training schedule per pipeline phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSet {
    pub supernet_source: TrainSchedule,
    pub supernet_target: TrainSchedule,
    pub child_source: TrainSchedule,
    pub child_target: TrainSchedule,
    /// Source schedule for the from-scratch baseline (usually the supernet
    /// and child source epochs combined, so total exposure matches).
    pub baseline_source: TrainSchedule,
}

impl ScheduleSet {
    pub fn validate(&self) -> Result<()> {
        self.supernet_source.validate()?;
        self.supernet_target.validate()?;
        self.child_source.validate()?;
        self.child_target.validate()?;
        self.baseline_source.validate()
    }
}

/// Final metrics for one chain entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub allocation: Allocation,
    pub size: f64,
    /// Search-time score (masked-supernet accuracy); `None` for the seed
    /// entry, which greedy never evaluates.
    pub search_score: Option<f64>,
    pub outcome: WeightSearchOutcome,
}

/// Weight digests proving the search phase left the super-network intact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Purity {
    pub digest_before_search: String,
    pub digest_after_search: String,
}

impl Purity {
    pub fn intact(&self) -> bool {
        self.digest_before_search == self.digest_after_search
    }
}

/// Everything the pipeline produced. Wall-clock timings stay out of the
/// serialized form so reports are byte-reproducible; they are exposed
/// separately through [`TransferRun::timings`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub seed: u64,
    pub super_alloc: Allocation,
    pub budget: f64,
    pub weights: Vec<f64>,
    pub supernet_source: Option<PhaseOutcome>,
    pub supernet_target: Option<PhaseOutcome>,
    pub trace: Option<SearchTrace>,
    pub purity: Option<Purity>,
    pub per_budget: Vec<BudgetRow>,
    pub baseline: Option<BudgetRow>,
    /// `Some("phase: error")` when a phase failed and the report is partial.
    pub failure: Option<String>,
}

impl TransferReport {
    /// Hard structural checks for a complete (non-partial) report.
    pub fn validate_complete(&self) -> Result<()> {
        if let Some(f) = &self.failure {
            return Err(Error::contract(format!("partial report: {f}")));
        }
        let trace = self
            .trace
            .as_ref()
            .ok_or_else(|| Error::contract("report missing search trace"))?;
        if self.per_budget.len() != trace.chain.len() {
            return Err(Error::contract(format!(
                "{} per-budget rows for {} chain entries",
                self.per_budget.len(),
                trace.chain.len()
            )));
        }
        if self.supernet_source.is_none() || self.supernet_target.is_none() {
            return Err(Error::contract("report missing supernet metrics"));
        }
        match &self.purity {
            Some(p) if p.intact() => {}
            Some(_) => return Err(Error::contract("search mutated supernet weights")),
            None => return Err(Error::contract("report missing purity digests")),
        }
        Ok(())
    }

    /// Final (largest-budget) row.
    pub fn searched(&self) -> Option<&BudgetRow> {
        self.per_budget.last()
    }
}

/// A finished pipeline run: the deterministic report plus wall-clock
/// timings and the terminal network snapshots.
pub struct TransferRun {
    pub report: TransferReport,
    /// `(phase label, seconds)` in execution order.
    pub timings: Vec<(String, f64)>,
    /// Source-trained super-network (the inheritance donor), if that phase
    /// completed.
    pub source_net: Option<SuperNet>,
    /// Target-fine-tuned super-network (the search host), if that phase
    /// completed.
    pub target_net: Option<SuperNet>,
    /// Final child for the largest budget, if weight search completed.
    pub final_child: Option<SuperNet>,
}

/// Runs the whole pipeline. Precondition violations return `Err`; phase
/// failures mid-run produce a partial report carrying a failure marker.
pub fn run_full_transfer(inputs: &PipelineInputs) -> Result<TransferRun> {
    inputs.source.validate()?;
    inputs.target.validate()?;
    if inputs.source.val.is_empty() || inputs.target.val.is_empty() {
        return Err(Error::contract("both tasks need validation splits"));
    }
    inputs.schedules.validate()?;
    let space = SearchSpace::weighted(
        inputs.super_alloc.clone(),
        inputs.budget,
        inputs.weights.clone(),
    )?;
    let shape = inputs.source.images.shape().to_vec();
    let seed = inputs.seed;

    let mut report = TransferReport {
        seed,
        super_alloc: inputs.super_alloc.clone(),
        budget: inputs.budget,
        weights: inputs.weights.clone(),
        supernet_source: None,
        supernet_target: None,
        trace: None,
        purity: None,
        per_budget: Vec::new(),
        baseline: None,
        failure: None,
    };
    let mut run = TransferRun {
        report: report.clone(),
        timings: Vec::new(),
        source_net: None,
        target_net: None,
        final_child: None,
    };
    macro_rules! phase {
        ($label:expr, $body:expr) => {{
            let started = Instant::now();
            let result = $body;
            run.timings
                .push(($label.to_string(), started.elapsed().as_secs_f64()));
            match result {
                Ok(v) => v,
                Err(e) => {
                    report.failure = Some(format!("{}: {e}", $label));
                    run.report = report;
                    return Ok(run);
                }
            }
        }};
    }

    // source training
    let mut net = phase!("supernet-source", {
        let mut init_rng = derive_rng(seed, "supernet/init");
        SuperNet::build(
            inputs.kind,
            inputs.super_alloc.clone(),
            inputs.source.classes,
            shape[1],
            shape[2],
            &mut init_rng,
        )
        .and_then(|mut net| {
            let mut rng = derive_rng(seed, "supernet/source");
            let outcome = train_supernet_source(
                &mut net,
                &inputs.source,
                &inputs.schedules.supernet_source,
                &mut rng,
            )?;
            Ok((net, outcome))
        })
        .map(|(net, outcome)| {
            report.supernet_source = Some(outcome);
            net
        })
    });
    let source_snapshot = net.clone();
    run.source_net = Some(source_snapshot.clone());

    // target fine-tuning (the search host); inheritance still comes from
    // the source snapshot
    phase!("supernet-target", {
        let mut rng = derive_rng(seed, "supernet/target");
        finetune_supernet_target(
            &mut net,
            &inputs.target,
            &inputs.schedules.supernet_target,
            true,
            &mut rng,
        )
        .map(|outcome| {
            report.supernet_target = Some(outcome);
        })
    });
    run.target_net = Some(net.clone());

    // greedy search on frozen weights
    let trace = phase!("search", {
        let digest_before = net.digest();
        let scorer = InheritedEval {
            net: &net,
            target: &inputs.target,
        };
        let counter = EvalCounter::new(&scorer);
        greedy_block_search(&space, &counter).map(|trace| {
            report.purity = Some(Purity {
                digest_before_search: digest_before,
                digest_after_search: net.digest(),
            });
            report.trace = Some(trace.clone());
            trace
        })
    });

    // weight search for every budget on the chain
    for (i, alloc) in trace.chain.iter().enumerate() {
        let label = format!("weight-search/{alloc}");
        let child_seed = derive_seed(seed, &format!("child/{alloc}"));
        let (child, outcome) = phase!(&label, {
            let built = if inputs.from_scratch {
                let mut rng = derive_rng(child_seed, "scratch-init");
                SuperNet::build(
                    inputs.kind,
                    alloc.clone(),
                    inputs.source.classes,
                    shape[1],
                    shape[2],
                    &mut rng,
                )
            } else {
                source_snapshot.inherit_weights(alloc)
            };
            built.and_then(|mut child| {
                let outcome = weight_search(
                    &mut child,
                    &inputs.source,
                    &inputs.target,
                    &inputs.schedules.child_source,
                    &inputs.schedules.child_target,
                    child_seed,
                )?;
                Ok((child, outcome))
            })
        });
        report.per_budget.push(BudgetRow {
            allocation: alloc.clone(),
            size: trace.sizes[i],
            search_score: trace.scores[i],
            outcome,
        });
        if i + 1 == trace.chain.len() {
            run.final_child = Some(child);
        }
    }

    // fixed-architecture baseline against the searched (final) allocation
    if let Some(baseline_alloc) = &inputs.baseline_alloc {
        let searched = trace.chain.last().expect("non-empty chain").clone();
        let outcome = phase!("baseline", {
            fixed_arch_baseline(
                baseline_alloc,
                &searched,
                &inputs.weights,
                inputs.kind,
                &inputs.source,
                &inputs.target,
                &inputs.schedules.baseline_source,
                &inputs.schedules.child_target,
                derive_seed(seed, "baseline"),
            )
        });
        report.baseline = Some(BudgetRow {
            allocation: baseline_alloc.clone(),
            size: crate::search::reweighted_size(baseline_alloc, &inputs.weights)?,
            search_score: None,
            outcome: outcome.1,
        });
    }

    run.report = report;
    Ok(run)
}

// ── motivation sweep ────────────────────────────────────────────────────

/// One (allocation, seed) cell of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub allocation: Allocation,
    pub seed: u64,
    pub source_val_acc: f64,
    pub target_val_acc: f64,
}

/// Per-seed summary: rank agreement between source and target scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSeedSummary {
    pub seed: u64,
    pub spearman: f64,
    pub source_argmax: Allocation,
    pub target_argmax: Allocation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub per_seed: Vec<SweepSeedSummary>,
}

impl SweepOutcome {
    /// Seeds where the best source architecture is not the best target
    /// architecture.
    pub fn rank_inversions(&self) -> usize {
        self.per_seed
            .iter()
            .filter(|s| s.source_argmax != s.target_argmax)
            .count()
    }

    /// `allocation,seed,source_val_acc,target_val_acc` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("allocation,seed,source_val_acc,target_val_acc\n");
        for row in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                row.allocation, row.seed, row.source_val_acc, row.target_val_acc
            );
        }
        s
    }
}

/// Trains every allocation from scratch on the source, fine-tunes it on the
/// target, and records both validation accuracies: the "same size,
/// different architecture, different ranking" experiment.
pub fn motivation_sweep(
    allocs: &[Allocation],
    kind: BlockKind,
    source: &TaskSpec,
    target: &TaskSpec,
    source_sched: &TrainSchedule,
    target_sched: &TrainSchedule,
    seeds: &[u64],
) -> Result<SweepOutcome> {
    if allocs.len() < 2 {
        return Err(Error::contract("sweep needs >= 2 allocations"));
    }
    if seeds.is_empty() {
        return Err(Error::contract("sweep needs >= 1 seed"));
    }
    let size = allocs[0].total_blocks();
    for a in allocs {
        if a.total_blocks() != size {
            return Err(Error::contract(format!(
                "sweep allocations must share one size: {} vs {a}",
                allocs[0]
            )));
        }
    }
    let shape = source.images.shape().to_vec();
    let mut rows = Vec::new();
    let mut per_seed = Vec::new();
    for &seed in seeds {
        let mut source_accs = Vec::with_capacity(allocs.len());
        let mut target_accs = Vec::with_capacity(allocs.len());
        for alloc in allocs {
            let cell_seed = derive_seed(seed, &format!("sweep/{alloc}"));
            let mut init_rng = derive_rng(cell_seed, "init");
            let mut net = SuperNet::build(
                kind,
                alloc.clone(),
                source.classes,
                shape[1],
                shape[2],
                &mut init_rng,
            )?;
            let outcome = weight_search(
                &mut net,
                source,
                target,
                source_sched,
                target_sched,
                cell_seed,
            )?;
            source_accs.push(outcome.source_metrics.top1_accuracy);
            target_accs.push(outcome.target_metrics.top1_accuracy);
            rows.push(SweepRow {
                allocation: alloc.clone(),
                seed,
                source_val_acc: outcome.source_metrics.top1_accuracy,
                target_val_acc: outcome.target_metrics.top1_accuracy,
            });
        }
        let argmax = |vals: &[f64]| {
            let mut best = 0;
            for i in 1..vals.len() {
                if vals[i] > vals[best] {
                    best = i;
                }
            }
            best
        };
        per_seed.push(SweepSeedSummary {
            seed,
            spearman: spearman(&source_accs, &target_accs),
            source_argmax: allocs[argmax(&source_accs)].clone(),
            target_argmax: allocs[argmax(&target_accs)].clone(),
        });
    }
    Ok(SweepOutcome { rows, per_seed })
}

/// Average ranks (1-based, ties averaged).
fn ranks(vals: &[f64]) -> Vec<f64> {
    let n = vals.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).expect("finite scores"));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && vals[idx[j + 1]] == vals[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average-ties ranks. Zero when either side
/// has no variance.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for i in 0..a.len() {
        let da = ra[i] - mean;
        let db = rb[i] - mean;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return 0.0;
    }
    cov / (var_a * var_b).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_task, ClassDef, DomainKind, DomainSpec, ShapeKind, ShiftParams};

    fn tiny_task(seed: u64, n: usize, classes: usize) -> TaskSpec {
        let shapes = [
            ShapeKind::Disk,
            ShapeKind::Square,
            ShapeKind::Triangle,
            ShapeKind::Cross,
        ];
        let spec = DomainSpec {
            kind: DomainKind::SyntheticShapes,
            image_extent: 16,
            channels: 1,
            n_classes: classes,
            n_samples: n,
            seed,
            shift: ShiftParams {
                rotation: (-0.3, 0.3),
                scale: (0.55, 0.7),
                freq_scale: 1.0,
                center_jitter: 0.05,
                noise_std: 0.01,
            },
            classes: (0..classes)
                .map(|i| ClassDef {
                    shape: shapes[i % shapes.len()],
                    freq_band: 0.0,
                })
                .collect(),
        };
        let task = synth_task(&spec).unwrap();
        crate::data::split(task, 0.25, &mut derive_rng(seed, "tiny-split")).unwrap()
    }

    fn tiny_net(seed: u64, classes: usize, alloc: &[usize]) -> SuperNet {
        SuperNet::build(
            BlockKind {
                base_width: 8,
                ..BlockKind::bottleneck()
            },
            Allocation::new(alloc.to_vec()).unwrap(),
            classes,
            1,
            16,
            &mut derive_rng(seed, "tiny-net"),
        )
        .unwrap()
    }

    fn quick_sched(epochs: usize, lr: f32) -> TrainSchedule {
        TrainSchedule {
            epochs,
            batch_size: 16,
            base_lr: lr,
            lr_drop_epochs: vec![],
            lr_drop_factor: 10.0,
            warmup_epochs: 0,
            weight_decay: 0.0,
            momentum: 0.9,
            label_smoothing: 0.0,
        }
    }

    #[test]
    fn constant_logits_hit_chance_and_ln_k() {
        let task = tiny_task(1, 32, 4);
        let mut net = tiny_net(1, 4, &[1, 1]);
        for name in ["head.fc.w", "head.fc.b"] {
            let p = net.params.get_mut(name).unwrap();
            p.value.data_mut().fill(0.0);
        }
        let all: Vec<usize> = (0..task.n()).collect();
        let m = evaluate_full(&net, &task, &all).unwrap();
        assert_eq!(m.top1_accuracy, 0.25);
        assert!((m.loss - (4.0f64).ln()).abs() < 1e-6, "loss {}", m.loss);
        assert_eq!(m.n_examples, 32);
    }

    #[test]
    fn evaluate_matches_per_sample_aggregation() {
        let task = tiny_task(2, 10, 2);
        let net = tiny_net(2, 2, &[2, 1]);
        let indices: Vec<usize> = (0..10).collect();
        let batch = evaluate_full(&net, &task, &indices).unwrap();
        let mut correct = 0;
        let mut loss_sum = 0.0;
        let active = ActiveSet::full(net.alloc());
        for &i in &indices {
            let m = evaluate(&net, &task, &[i], &active).unwrap();
            loss_sum += m.loss;
            if m.top1_accuracy == 1.0 {
                correct += 1;
            }
        }
        assert_eq!(batch.top1_accuracy, correct as f64 / 10.0);
        assert!((batch.loss - loss_sum / 10.0).abs() < 1e-9);
        let again = evaluate_full(&net, &task, &indices).unwrap();
        assert_eq!(batch, again);
    }

    #[test]
    fn zero_lr_epoch_leaves_values_unchanged() {
        let task = tiny_task(3, 24, 3);
        let mut net = tiny_net(3, 3, &[2, 2]);
        let before = net.digest();
        let outcome = train_supernet_source(
            &mut net,
            &task,
            &quick_sched(1, 0.0),
            &mut derive_rng(3, "train"),
        )
        .unwrap();
        assert_eq!(net.digest(), before);
        assert_eq!(outcome.before, outcome.after);
        assert!(outcome.steps > 0);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let task = tiny_task(4, 24, 3);
        let run = |seed: u64| {
            let mut net = tiny_net(4, 3, &[2, 2]);
            train_supernet_source(
                &mut net,
                &task,
                &quick_sched(1, 0.05),
                &mut derive_rng(seed, "train"),
            )
            .unwrap();
            net.digest()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn supernet_training_improves_source_accuracy() {
        let task = tiny_task(5, 160, 3);
        let mut net = tiny_net(5, 3, &[2, 2]);
        let outcome = train_supernet_source(
            &mut net,
            &task,
            &quick_sched(8, 0.05),
            &mut derive_rng(5, "train"),
        )
        .unwrap();
        assert!(
            outcome.after.top1_accuracy > outcome.before.top1_accuracy,
            "{:?}",
            outcome
        );
        assert!(outcome.after.loss < outcome.before.loss, "{outcome:?}");
    }

    #[test]
    fn finetune_zero_epochs_is_identity_and_checks_classes() {
        let target = tiny_task(6, 24, 3);
        let mut net = tiny_net(6, 3, &[2, 2]);
        let before = net.digest();
        finetune_supernet_target(
            &mut net,
            &target,
            &quick_sched(0, 0.05),
            true,
            &mut derive_rng(6, "ft"),
        )
        .unwrap();
        assert_eq!(net.digest(), before);

        let mismatched = tiny_task(6, 24, 4);
        let err = finetune_supernet_target(
            &mut net,
            &mismatched,
            &quick_sched(0, 0.05),
            false,
            &mut derive_rng(6, "ft"),
        )
        .unwrap_err();
        assert!(err.to_string().contains("re-init"), "{err}");
        // with re-init allowed the head swaps and the backbone survives
        finetune_supernet_target(
            &mut net,
            &mismatched,
            &quick_sched(0, 0.05),
            true,
            &mut derive_rng(6, "ft"),
        )
        .unwrap();
        assert_eq!(net.num_classes(), 4);
        assert_ne!(net.digest(), before);
    }

    #[test]
    fn weight_search_zero_epochs_equals_direct_eval() {
        let source = tiny_task(7, 24, 3);
        let target = tiny_task(8, 24, 3); // same label-space arity
        let parent = tiny_net(7, 3, &[2, 2]);
        let mut child = parent
            .inherit_weights(&Allocation::new(vec![1, 2]).unwrap())
            .unwrap();
        let direct = evaluate_full(&child, &target, &target.val).unwrap();
        let outcome = weight_search(
            &mut child,
            &source,
            &target,
            &quick_sched(0, 0.05),
            &quick_sched(0, 0.05),
            99,
        )
        .unwrap();
        assert_eq!(outcome.target_metrics, direct);
        assert_eq!(outcome.source_steps, 0);
        assert_eq!(outcome.target_steps, 0);
    }

    #[test]
    fn weight_search_requires_source_head() {
        let source = tiny_task(9, 24, 3);
        let target = tiny_task(9, 24, 3);
        let mut child = tiny_net(9, 5, &[1, 1]);
        let err = weight_search(
            &mut child,
            &source,
            &target,
            &quick_sched(0, 0.05),
            &quick_sched(0, 0.05),
            1,
        )
        .unwrap_err();
        assert!(err.to_string().contains("classes"), "{err}");
    }

    #[test]
    fn baseline_rejects_size_mismatch() {
        let source = tiny_task(10, 24, 3);
        let target = tiny_task(11, 24, 3);
        let err = fixed_arch_baseline(
            &Allocation::new(vec![1, 1]).unwrap(),
            &Allocation::new(vec![2, 1]).unwrap(),
            &[1.0, 1.0],
            BlockKind { base_width: 8, ..BlockKind::bottleneck() },
            &source,
            &target,
            &quick_sched(0, 0.05),
            &quick_sched(0, 0.05),
            1,
        )
        .unwrap_err();
        assert!(err.to_string().contains("does not match"), "{err}");
    }

    #[test]
    fn search_never_mutates_weights() {
        let target = tiny_task(12, 32, 2);
        let net = tiny_net(12, 2, &[2, 2]);
        let before = net.digest();
        let scorer = InheritedEval { net: &net, target: &target };
        let counter = EvalCounter::new(&scorer);
        let space = SearchSpace::unit(net.alloc().clone(), 3);
        let trace = greedy_block_search(&space, &counter).unwrap();
        assert_eq!(net.digest(), before);
        assert_eq!(trace.chain.len(), 2);
        assert!(counter.count() > 0);
    }

    #[test]
    fn sweep_checks_sizes_and_counts_rows() {
        let source = tiny_task(13, 32, 2);
        let target = tiny_task(14, 32, 2);
        let kind = BlockKind { base_width: 8, ..BlockKind::bottleneck() };
        let bad = motivation_sweep(
            &[
                Allocation::new(vec![1, 2]).unwrap(),
                Allocation::new(vec![2, 2]).unwrap(),
            ],
            kind,
            &source,
            &target,
            &quick_sched(0, 0.05),
            &quick_sched(0, 0.05),
            &[1],
        );
        assert!(bad.is_err());

        let out = motivation_sweep(
            &[
                Allocation::new(vec![1, 2]).unwrap(),
                Allocation::new(vec![2, 1]).unwrap(),
            ],
            kind,
            &source,
            &target,
            &quick_sched(0, 0.05),
            &quick_sched(0, 0.05),
            &[1, 2],
        )
        .unwrap();
        assert_eq!(out.rows.len(), 4);
        assert_eq!(out.per_seed.len(), 2);
        for s in &out.per_seed {
            assert!((-1.0..=1.0).contains(&s.spearman));
        }
        let csv = out.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("allocation,seed,source_val_acc,target_val_acc\n"));
    }

    #[test]
    fn full_pipeline_wiring_with_zero_epochs() {
        let source = tiny_task(20, 32, 3);
        let target = tiny_task(21, 32, 2);
        let schedules = ScheduleSet {
            supernet_source: quick_sched(0, 0.05),
            supernet_target: quick_sched(0, 0.05),
            child_source: quick_sched(0, 0.05),
            child_target: quick_sched(0, 0.05),
            baseline_source: quick_sched(0, 0.05),
        };
        let inputs = PipelineInputs {
            source,
            target,
            kind: BlockKind { base_width: 8, ..BlockKind::bottleneck() },
            super_alloc: Allocation::new(vec![2, 2]).unwrap(),
            budget: 3.0,
            weights: vec![1.0, 1.0],
            baseline_alloc: Some(Allocation::new(vec![2, 1]).unwrap()),
            schedules,
            seed: 42,
            from_scratch: false,
        };
        let run = run_full_transfer(&inputs).unwrap();
        let report = &run.report;
        assert!(report.failure.is_none(), "{:?}", report.failure);
        report.validate_complete().unwrap();
        let trace = report.trace.as_ref().unwrap();
        assert_eq!(trace.chain.len(), 2); // budgets 2 and 3
        assert_eq!(report.per_budget.len(), 2);
        assert!(report.per_budget[0].search_score.is_none());
        assert!(report.per_budget[1].search_score.is_some());
        assert_eq!(report.baseline.as_ref().unwrap().size, 3.0);
        assert!(run.final_child.is_some());
        assert!(run.timings.len() >= 5);
        // weight search ran zero epochs, so children still carry inherited
        // weights: the searched row's target metrics equal direct eval of
        // the inherited child with a reinitialized 2-class head
        assert_eq!(
            run.final_child.as_ref().unwrap().num_classes(),
            inputs.target.classes
        );

        // byte-identical reports across reruns
        let again = run_full_transfer(&inputs).unwrap();
        let a = serde_json::to_string(&run.report).unwrap();
        let b = serde_json::to_string(&again.report).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pipeline_marks_partial_failure() {
        let source = tiny_task(22, 32, 3);
        let target = tiny_task(23, 32, 2);
        let schedules = ScheduleSet {
            supernet_source: quick_sched(0, 0.05),
            supernet_target: quick_sched(0, 0.05),
            child_source: quick_sched(0, 0.05),
            child_target: quick_sched(0, 0.05),
            baseline_source: quick_sched(0, 0.05),
        };
        // five stages cannot fit a 16-pixel input (resolution halves per
        // stage), so the build inside the first phase fails
        let inputs = PipelineInputs {
            source,
            target,
            kind: BlockKind { base_width: 8, ..BlockKind::bottleneck() },
            super_alloc: Allocation::new(vec![1, 1, 1, 1, 1]).unwrap(),
            budget: 5.0,
            weights: vec![1.0; 5],
            baseline_alloc: None,
            schedules,
            seed: 1,
            from_scratch: false,
        };
        let run = run_full_transfer(&inputs).unwrap();
        let failure = run.report.failure.as_ref().expect("partial report");
        assert!(failure.starts_with("supernet-source:"), "{failure}");
        assert!(run.report.validate_complete().is_err());
        assert!(run.report.per_budget.is_empty());
    }

    #[test]
    fn spearman_reference_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 3.0, 1.0]), -1.0);
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
        // hand-computed with one tie: ranks a = [1.5, 1.5, 3], b = [1, 2, 3]
        let rho = spearman(&[4.0, 4.0, 9.0], &[1.0, 2.0, 3.0]);
        assert!((rho - 0.866_025_4).abs() < 1e-6, "rho {rho}");
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[10.0, 10.0, 5.0]), vec![2.5, 2.5, 1.0]);
        assert_eq!(ranks(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 2.0]);
    }
}
