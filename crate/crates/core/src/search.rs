//! Allocation search: enumeration, greedy chain growth, exhaustive and
//! random baselines.
//!
//! The search space is the set of allocations bounded stage-wise by a
//! super-network allocation, at a given size budget. Sizes are reweighted:
//! stage `i` contributes `weights[i] * n_i`, so a budget can be denominated
//! either in blocks (unit weights) or in FLOPs-normalized units
//! ([`crate::cost::CostSpec::derive_weights`]).
//!
//! Greedy search starts at `[1, ..., 1]` and repeatedly adds the single block
//! whose stage maximizes the evaluation score, until no stage fits the
//! budget. Each prefix of the resulting chain is the search's answer for the
//! corresponding smaller budget, which is what makes the whole chain cost
//! `O(C * ns)` evaluations instead of one exponential sweep per budget.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::supernet::Allocation;

/// Hard ceiling on materialized/evaluated search spaces.
pub const EXHAUSTIVE_GUARD: usize = 100_000;

/// Absolute slack used for budget comparisons, scaled to the budget.
fn budget_eps(budget: f64) -> f64 {
    1e-9 * budget.abs().max(1.0)
}

/// Evaluation-parallelism cap from `ALLOCNAS_THREADS` (default 1). Applies
/// to candidate scoring inside one greedy step; everything else is serial.
pub fn thread_cap() -> usize {
    std::env::var("ALLOCNAS_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Scores one allocation. Implementations must be thread-safe; greedy may
/// fan candidate evaluations out across threads.
pub trait Scorer: Sync {
    fn score(&self, alloc: &Allocation) -> Result<f64>;
}

impl<F> Scorer for F
where
    F: Fn(&Allocation) -> f64 + Sync,
{
    fn score(&self, alloc: &Allocation) -> Result<f64> {
        Ok(self(alloc))
    }
}

/// Wraps a scorer with an evaluation counter (the side channel every search
/// op reports its cost through) and a finiteness check.
pub struct EvalCounter<'a> {
    scorer: &'a dyn Scorer,
    count: AtomicUsize,
}

impl<'a> EvalCounter<'a> {
    pub fn new(scorer: &'a dyn Scorer) -> Self {
        EvalCounter {
            scorer,
            count: AtomicUsize::new(0),
        }
    }

    pub fn eval(&self, alloc: &Allocation) -> Result<f64> {
        self.count.fetch_add(1, Ordering::Relaxed);
        match self.scorer.score(alloc) {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(v) => Err(Error::EvalFailed {
                allocation: alloc.to_string(),
                source: Box::new(Error::NonFinite {
                    context: format!("score {v}"),
                }),
            }),
            Err(e) => Err(Error::EvalFailed {
                allocation: alloc.to_string(),
                source: Box::new(e),
            }),
        }
    }

    /// Evaluations since construction (or the last reset).
    pub fn count(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.count.store(0, Ordering::Relaxed);
    }
}

/// Stage-bounded, budgeted allocation space.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    pub bounds: Allocation,
    pub budget: f64,
    pub weights: Vec<f64>,
}

impl SearchSpace {
    /// Unit weights: the budget counts blocks.
    pub fn unit(bounds: Allocation, blocks: usize) -> Self {
        let ns = bounds.stages();
        SearchSpace {
            bounds,
            budget: blocks as f64,
            weights: vec![1.0; ns],
        }
    }

    /// Real-valued per-stage weights (all positive).
    pub fn weighted(bounds: Allocation, budget: f64, weights: Vec<f64>) -> Result<Self> {
        let space = SearchSpace {
            bounds,
            budget,
            weights,
        };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.bounds.stages() {
            return Err(Error::contract(format!(
                "{} weights for {} stages",
                self.weights.len(),
                self.bounds.stages()
            )));
        }
        if self.weights.iter().any(|w| !(w > &0.0) || !w.is_finite()) {
            return Err(Error::contract(format!(
                "weights must be positive and finite, got {:?}",
                self.weights
            )));
        }
        if !self.budget.is_finite() {
            return Err(Error::contract("budget must be finite"));
        }
        Ok(())
    }

    pub fn has_unit_weights(&self) -> bool {
        self.weights.iter().all(|&w| w == 1.0)
    }

    /// Reweighted size of an allocation under this space's weights.
    pub fn size_of(&self, alloc: &Allocation) -> Result<f64> {
        reweighted_size(alloc, &self.weights)
    }

    /// Smallest possible size: `[1, ..., 1]`.
    pub fn min_size(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn max_size(&self) -> f64 {
        self.weights
            .iter()
            .zip(self.bounds.as_slice())
            .map(|(w, &n)| w * n as f64)
            .sum()
    }

    fn infeasible(&self) -> Error {
        Error::InfeasibleBudget {
            budget: self.budget,
            bounds: self.bounds.as_slice().to_vec(),
            min_size: self.min_size(),
            max_size: self.max_size(),
        }
    }
}

/// `sum_i weights[i] * alloc[i]`.
pub fn reweighted_size(alloc: &Allocation, weights: &[f64]) -> Result<f64> {
    if weights.len() != alloc.stages() {
        return Err(Error::contract(format!(
            "{} weights for allocation {alloc}",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w > &0.0) || !w.is_finite()) {
        return Err(Error::contract("weights must be positive and finite"));
    }
    Ok(alloc
        .as_slice()
        .iter()
        .zip(weights)
        .map(|(&n, w)| n as f64 * w)
        .sum())
}

/// One-block extensions of `alloc` that stay within `bounds`, in stage
/// order. Budget filtering is the caller's job.
pub fn successor_candidates(alloc: &Allocation, bounds: &Allocation) -> Result<Vec<Allocation>> {
    if !alloc.fits_within(bounds) {
        return Err(Error::contract(format!(
            "allocation {alloc} exceeds bounds {bounds}"
        )));
    }
    let mut out = Vec::new();
    for stage in 0..alloc.stages() {
        if alloc.get(stage) < bounds.get(stage) {
            out.push(alloc.bumped(stage)?);
        }
    }
    Ok(out)
}

/// Materializes the space in lexicographic order.
///
/// With unit weights the members are the allocations whose block total equals
/// the budget exactly. With general weights exact equality is measure-zero,
/// so the members are the budget-maximal allocations instead: those that fit
/// and cannot take one more block in any stage without overshooting.
///
/// An infeasible budget (nothing qualifies) is flagged as
/// [`Error::InfeasibleBudget`]; spaces larger than [`EXHAUSTIVE_GUARD`] abort
/// with [`Error::SpaceTooLarge`].
pub fn enumerate_space(space: &SearchSpace) -> Result<Vec<Allocation>> {
    space.validate()?;
    let ns = space.bounds.stages();
    let eps = budget_eps(space.budget);
    let unit = space.has_unit_weights();
    // suffix sums for pruning
    let mut min_rest = vec![0.0f64; ns + 1];
    let mut max_rest = vec![0.0f64; ns + 1];
    for i in (0..ns).rev() {
        min_rest[i] = min_rest[i + 1] + space.weights[i];
        max_rest[i] = max_rest[i + 1] + space.weights[i] * space.bounds.get(i) as f64;
    }
    if min_rest[0] > space.budget + eps {
        return Err(space.infeasible());
    }

    struct Dfs<'s> {
        space: &'s SearchSpace,
        eps: f64,
        unit: bool,
        min_rest: Vec<f64>,
        max_rest: Vec<f64>,
        current: Vec<usize>,
        out: Vec<Allocation>,
    }

    impl Dfs<'_> {
        fn run(&mut self, stage: usize, acc: f64) -> Result<()> {
            let ns = self.space.bounds.stages();
            if stage == ns {
                if self.unit {
                    if (acc - self.space.budget).abs() > self.eps {
                        return Ok(());
                    }
                } else {
                    // keep only budget-maximal allocations
                    for i in 0..ns {
                        if self.current[i] < self.space.bounds.get(i)
                            && acc + self.space.weights[i] <= self.space.budget + self.eps
                        {
                            return Ok(());
                        }
                    }
                }
                if self.out.len() >= EXHAUSTIVE_GUARD {
                    return Err(Error::SpaceTooLarge {
                        size: (EXHAUSTIVE_GUARD as u128) + 1, // lower bound; enumeration aborted
                        limit: EXHAUSTIVE_GUARD as u128,
                    });
                }
                self.out.push(Allocation::new(self.current.clone())?);
                return Ok(());
            }
            for n in 1..=self.space.bounds.get(stage) {
                let acc2 = acc + self.space.weights[stage] * n as f64;
                if acc2 + self.min_rest[stage + 1] > self.space.budget + self.eps {
                    break; // larger n only gets worse
                }
                if self.unit && acc2 + self.max_rest[stage + 1] < self.space.budget - self.eps {
                    continue; // cannot reach the budget from here
                }
                self.current[stage] = n;
                self.run(stage + 1, acc2)?;
            }
            Ok(())
        }
    }

    let mut dfs = Dfs {
        space,
        eps,
        unit,
        min_rest,
        max_rest,
        current: vec![1; ns],
        out: Vec::new(),
    };
    dfs.run(0, 0.0)?;
    if dfs.out.is_empty() {
        return Err(space.infeasible());
    }
    Ok(dfs.out)
}

/// Chain of allocations produced by greedy search, one entry per budget from
/// `[1, ..., 1]` up to the largest size that fits.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SearchTrace {
    pub chain: Vec<Allocation>,
    /// Score of each entry; the seed is never evaluated, so `scores[0]` is
    /// `None`.
    pub scores: Vec<Option<f64>>,
    /// Reweighted size of each entry.
    pub sizes: Vec<f64>,
    /// Cumulative evaluation count after each entry was chosen.
    pub evals_after_step: Vec<usize>,
    pub eval_count: usize,
    /// Number of exact score ties broken by the lowest-stage rule.
    pub tie_breaks: usize,
}

impl SearchTrace {
    /// Checks the nestedness invariant: each entry extends the previous one
    /// by exactly one block in exactly one stage.
    pub fn validate(&self) -> Result<()> {
        if self.chain.is_empty() {
            return Err(Error::contract("empty search trace"));
        }
        let n = self.chain.len();
        if self.scores.len() != n || self.sizes.len() != n || self.evals_after_step.len() != n {
            return Err(Error::contract("search trace column lengths disagree"));
        }
        for w in self.chain.windows(2) {
            let (prev, next) = (&w[0], &w[1]);
            if !prev.fits_within(next) {
                return Err(Error::contract(format!(
                    "trace not nested: {prev} then {next}"
                )));
            }
            if next.total_blocks() != prev.total_blocks() + 1 {
                return Err(Error::contract(format!(
                    "trace step {prev} -> {next} adds {} blocks, want exactly 1",
                    next.total_blocks() as i64 - prev.total_blocks() as i64
                )));
            }
        }
        Ok(())
    }

    /// Final (largest) entry and its score.
    pub fn best(&self) -> (&Allocation, Option<f64>) {
        let last = self.chain.len() - 1;
        (&self.chain[last], self.scores[last])
    }

    /// `step,budget,allocation,score,evals_so_far` rows. Scores are printed
    /// with Rust's shortest-roundtrip float formatting, so output is
    /// byte-stable across runs.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,budget,allocation,score,evals_so_far\n");
        for i in 0..self.chain.len() {
            let score = match self.scores[i] {
                Some(v) => format!("{v}"),
                None => String::new(),
            };
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                i, self.sizes[i], self.chain[i], score, self.evals_after_step[i]
            ));
        }
        s
    }
}

/// Greedy block search from `[1, ..., 1]`: each step evaluates every
/// one-block extension that fits the budget and keeps the best, breaking
/// exact ties toward the lowest stage index. Stops when nothing fits.
///
/// Candidate evaluations within one step run on up to `ALLOCNAS_THREADS`
/// threads; results and the chain are identical regardless of thread count.
pub fn greedy_block_search(space: &SearchSpace, eval: &EvalCounter) -> Result<SearchTrace> {
    greedy_block_search_with_threads(space, eval, thread_cap())
}

pub fn greedy_block_search_with_threads(
    space: &SearchSpace,
    eval: &EvalCounter,
    threads: usize,
) -> Result<SearchTrace> {
    space.validate()?;
    let ns = space.bounds.stages();
    let eps = budget_eps(space.budget);
    let seed = Allocation::ones(ns)?;
    let seed_size = space.size_of(&seed)?;
    if seed_size > space.budget + eps {
        return Err(space.infeasible());
    }
    let start_evals = eval.count();
    let mut chain = vec![seed];
    let mut scores: Vec<Option<f64>> = vec![None];
    let mut sizes = vec![seed_size];
    let mut evals_after_step = vec![0usize];
    let mut tie_breaks = 0usize;

    loop {
        let phi = chain.last().unwrap();
        let phi_size = *sizes.last().unwrap();
        let mut cands: Vec<(Allocation, f64)> = Vec::new();
        for stage in 0..ns {
            if phi.get(stage) < space.bounds.get(stage) {
                let size = phi_size + space.weights[stage];
                if size <= space.budget + eps {
                    cands.push((phi.bumped(stage)?, size));
                }
            }
        }
        if cands.is_empty() {
            break;
        }
        let allocs: Vec<Allocation> = cands.iter().map(|(a, _)| a.clone()).collect();
        let results = evaluate_candidates(&allocs, eval, threads);
        let mut vals = Vec::with_capacity(results.len());
        for r in results {
            vals.push(r?);
        }
        let mut best_idx = 0;
        for i in 1..vals.len() {
            if vals[i] > vals[best_idx] {
                best_idx = i;
            }
        }
        let best_val = vals[best_idx];
        tie_breaks += vals.iter().filter(|&&v| v == best_val).count() - 1;
        chain.push(cands[best_idx].0.clone());
        scores.push(Some(best_val));
        sizes.push(cands[best_idx].1);
        evals_after_step.push(eval.count() - start_evals);
    }

    let trace = SearchTrace {
        chain,
        scores,
        sizes,
        evals_after_step,
        eval_count: eval.count() - start_evals,
        tie_breaks,
    };
    trace.validate()?;
    Ok(trace)
}

fn evaluate_candidates(
    cands: &[Allocation],
    eval: &EvalCounter,
    threads: usize,
) -> Vec<Result<f64>> {
    let threads = threads.max(1).min(cands.len().max(1));
    if threads <= 1 || cands.len() <= 1 {
        return cands.iter().map(|a| eval.eval(a)).collect();
    }
    let chunk = cands.len().div_ceil(threads);
    let mut results: Vec<Option<Result<f64>>> = (0..cands.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (cand_chunk, res_chunk) in cands.chunks(chunk).zip(results.chunks_mut(chunk)) {
            scope.spawn(move || {
                for (a, slot) in cand_chunk.iter().zip(res_chunk.iter_mut()) {
                    *slot = Some(eval.eval(a));
                }
            });
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("candidate evaluation slot not filled"))
        .collect()
}

/// Evaluates the whole space and returns the best allocation (first in
/// lexicographic order among exact ties) with its score.
pub fn exhaustive_search(space: &SearchSpace, eval: &EvalCounter) -> Result<(Allocation, f64)> {
    let all = enumerate_space(space)?;
    let mut best: Option<(usize, f64)> = None;
    for (i, alloc) in all.iter().enumerate() {
        let v = eval.eval(alloc)?;
        if best.map_or(true, |(_, bv)| v > bv) {
            best = Some((i, v));
        }
    }
    let (i, v) = best.expect("enumerate_space returned a non-empty list");
    Ok((all[i].clone(), v))
}

/// Best of `trials` distinct uniform samples (without replacement, so
/// `trials >= |space|` degenerates to exhaustive search up to ordering).
pub fn random_search(
    space: &SearchSpace,
    eval: &EvalCounter,
    trials: usize,
    rng: &mut impl rand::Rng,
) -> Result<(Allocation, f64)> {
    if trials == 0 {
        return Err(Error::contract("random_search: trials must be >= 1"));
    }
    let mut pool = enumerate_space(space)?;
    let k = trials.min(pool.len());
    // partial Fisher-Yates: the first k entries become the sample
    for i in 0..k {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, alloc) in pool[..k].iter().enumerate() {
        let v = eval.eval(alloc)?;
        if best.map_or(true, |(_, bv)| v > bv) {
            best = Some((i, v));
        }
    }
    let (i, v) = best.unwrap();
    Ok((pool[i].clone(), v))
}

/// Replays recorded scores: a known allocation returns its recorded value;
/// an unknown one scores strictly below every recorded value, ranked by how
/// many recorded allocations contain it. That fallback keeps greedy walks
/// inside the cone of the recorded chain without ever beating a real entry.
pub struct LookupScorer {
    table: BTreeMap<Allocation, f64>,
    floor: f64,
}

impl LookupScorer {
    pub fn new(entries: impl IntoIterator<Item = (Allocation, f64)>) -> Result<Self> {
        let mut table = BTreeMap::new();
        for (alloc, score) in entries {
            if !score.is_finite() {
                return Err(Error::contract(format!(
                    "lookup scorer: non-finite score for {alloc}"
                )));
            }
            if table.insert(alloc.clone(), score).is_some() {
                return Err(Error::contract(format!(
                    "lookup scorer: duplicate allocation {alloc}"
                )));
            }
        }
        if table.is_empty() {
            return Err(Error::contract("lookup scorer: no entries"));
        }
        let min = table.values().cloned().fold(f64::INFINITY, f64::min);
        Ok(LookupScorer {
            table,
            floor: min - 1.0,
        })
    }

    /// Parses `allocation,score` lines (either `1-3-4-4` or quoted comma
    /// form); `#` comments and an optional `allocation,score` header are
    /// skipped.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("allocation") {
                continue;
            }
            let (alloc_part, score_part) = line.rsplit_once(',').ok_or_else(|| {
                Error::contract(format!("lookup csv line {}: want allocation,score", lineno + 1))
            })?;
            let alloc: Allocation = alloc_part.trim().trim_matches('"').parse()?;
            let score: f64 = score_part.trim().parse().map_err(|_| {
                Error::contract(format!("lookup csv line {}: bad score {score_part:?}", lineno + 1))
            })?;
            entries.push((alloc, score));
        }
        LookupScorer::new(entries)
    }

    pub fn from_csv_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl Scorer for LookupScorer {
    fn score(&self, alloc: &Allocation) -> Result<f64> {
        if let Some(&v) = self.table.get(alloc) {
            return Ok(v);
        }
        let contained = self
            .table
            .keys()
            .filter(|k| alloc.fits_within(k))
            .count();
        Ok(self.floor + contained as f64 / (self.table.len() + 1) as f64)
    }
}
