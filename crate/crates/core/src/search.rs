//! Stage search, greedy operation search and their brute-force oracle.
//!
//! Stage search scores every budget-feasible stage code with plain
//! convolutions and keeps the best. Operation search then fixes that stage
//! code and decides one block at a time, keeping the top `K` partial codes;
//! a partial code is scored by averaging over completions of the blocks not
//! yet decided.
//!
//! Ties are broken toward the lexicographically smallest code at every cut.
//! Candidates within one step may be scored on several threads; scores are
//! merged by candidate index before ranking, so the worker count never
//! changes the outcome.

use std::cmp::Ordering;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_traits::ToPrimitive;
use rayon::prelude::*;

use crate::arch::{
    validate_stage_code, Architecture, BackboneFamily, OperationAssignment, StageAllocation,
};
use crate::budget::{is_within_budget, weighted_block_count, Weight};
use crate::error::{Error, Result};
use crate::eval::{evaluate_full, Completions, Evaluator, PartialScorer};
use crate::keytree::KeyTree;
use crate::space::{enumerate_allocations, operation_space_size, AllocationSpace};
use crate::NUM_OPS;

#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    /// Beam width `K` of the operation search.
    pub beam_width: usize,
    pub completions: Completions,
    pub seed: u64,
    /// Operation codes each block may choose from.
    pub ops: Vec<u8>,
    /// Block decisions between checkpoint writes; 0 disables checkpoints.
    pub checkpoint_interval: usize,
    pub checkpoint_path: Option<PathBuf>,
    /// Share completion samples among all candidates of a beam step.
    pub paired_sampling: bool,
    /// Scoring threads. Never affects results.
    pub workers: usize,
    /// Largest operation space brute force will enumerate.
    pub max_candidates: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            beam_width: 3,
            completions: Completions::Sampled(20),
            seed: 0,
            ops: vec![0, 1, 2],
            checkpoint_interval: 0,
            checkpoint_path: None,
            paired_sampling: false,
            workers: 1,
            max_candidates: 1_000_000,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::InvalidArgument(
                "beam width must be at least 1".into(),
            ));
        }
        if self.completions == Completions::Sampled(0) {
            return Err(Error::InvalidArgument(
                "completions must be at least 1".into(),
            ));
        }
        let mut sorted = self.ops.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.is_empty() || sorted.len() != self.ops.len() || sorted != self.ops {
            return Err(Error::InvalidArgument(format!(
                "operation set {:?} must be nonempty, sorted and without duplicates",
                self.ops
            )));
        }
        if sorted.iter().any(|&o| o >= NUM_OPS) {
            return Err(Error::InvalidArgument(format!(
                "operation codes must be below {NUM_OPS}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SearchKind {
    Stage,
    Operation,
    BruteForce,
    Hierarchical,
}

impl SearchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SearchKind::Stage => "stage",
            SearchKind::Operation => "operation",
            SearchKind::BruteForce => "brute_force",
            SearchKind::Hierarchical => "hierarchical",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "stage" => Ok(SearchKind::Stage),
            "operation" => Ok(SearchKind::Operation),
            "brute_force" => Ok(SearchKind::BruteForce),
            "hierarchical" => Ok(SearchKind::Hierarchical),
            other => Err(Error::InvalidArgument(format!(
                "unknown search kind {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub stage_code: StageAllocation,
    pub op_code: OperationAssignment,
    pub score: f64,
}

/// Surviving partial codes after one block decision.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamStep {
    pub block: usize,
    pub evaluated: usize,
    pub kept: Vec<(Vec<u8>, f64)>,
}

/// Weighted block counts of everything a search scored.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetAudit {
    pub target: Weight,
    pub tolerance: Weight,
    pub checked: usize,
    pub violations: usize,
    pub min_weighted: Weight,
    pub max_weighted: Weight,
}

impl BudgetAudit {
    fn of<'a>(
        family: &BackboneFamily,
        target: Weight,
        tolerance: Weight,
        codes: impl IntoIterator<Item = &'a StageAllocation>,
    ) -> Result<Self> {
        let mut audit = BudgetAudit {
            target,
            tolerance,
            checked: 0,
            violations: 0,
            min_weighted: target,
            max_weighted: target,
        };
        for (i, tau) in codes.into_iter().enumerate() {
            let w = weighted_block_count(family, tau)?;
            if i == 0 {
                audit.min_weighted = w;
                audit.max_weighted = w;
            }
            audit.min_weighted = audit.min_weighted.min(w);
            audit.max_weighted = audit.max_weighted.max(w);
            audit.checked += 1;
            if !is_within_budget(tau, family, target, tolerance) {
                audit.violations += 1;
            }
        }
        Ok(audit)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchReport {
    pub kind: SearchKind,
    pub winner: Architecture,
    pub winner_score: f64,
    /// Best first. Stage search keeps every candidate, operation search the
    /// final beam, brute force the best [`BRUTE_FORCE_RANKED`].
    pub ranked: Vec<Candidate>,
    pub beam_steps: Vec<BeamStep>,
    pub audit: BudgetAudit,
    pub config: SearchConfig,
    pub wall_time: Duration,
    pub stage_report: Option<Box<SearchReport>>,
    pub op_report: Option<Box<SearchReport>>,
}

pub const BRUTE_FORCE_RANKED: usize = 100;

/// Higher score first, then the smaller code.
fn rank<C: Ord>(a: (&C, f64), b: (&C, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

/// Scores items on `workers` threads, returning results in input order.
struct Scorer {
    pool: Option<rayon::ThreadPool>,
}

impl Scorer {
    fn new(workers: usize) -> Result<Self> {
        let pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Scorer { pool })
    }

    fn map<T, F>(&self, items: &[T], f: F) -> Result<Vec<f64>>
    where
        T: Sync,
        F: Fn(&T) -> Result<f64> + Sync + Send,
    {
        let results: Vec<Result<f64>> = match &self.pool {
            Some(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            None => items.iter().map(&f).collect(),
        };
        results.into_iter().collect()
    }
}

/// Best stage code of `space` under plain convolutions.
pub fn stage_search(
    space: &AllocationSpace,
    evaluator: &dyn Evaluator,
    config: &SearchConfig,
) -> Result<SearchReport> {
    config.validate()?;
    let start = Instant::now();
    let codes = enumerate_allocations(space);
    if codes.is_empty() {
        return Err(Error::NoCandidates);
    }
    let family = &space.family;
    let archs: Vec<Architecture> = codes.iter().map(|t| family.plain(t.clone())).collect();
    let scores =
        Scorer::new(config.workers)?.map(&archs, |a| evaluate_full(evaluator, a, config.seed))?;

    let mut ranked: Vec<Candidate> = archs
        .into_iter()
        .zip(scores)
        .map(|(a, score)| Candidate {
            stage_code: a.stage_code,
            op_code: a.op_code,
            score,
        })
        .collect();
    ranked.sort_by(|a, b| rank((&a.stage_code, a.score), (&b.stage_code, b.score)));
    let audit = BudgetAudit::of(family, space.budget, space.tolerance, &codes)?;
    let best = &ranked[0];
    Ok(SearchReport {
        kind: SearchKind::Stage,
        winner: Architecture::new(
            family.clone(),
            best.stage_code.clone(),
            best.op_code.clone(),
        ),
        winner_score: best.score,
        ranked,
        beam_steps: Vec::new(),
        audit,
        config: config.clone(),
        wall_time: start.elapsed(),
        stage_report: None,
        op_report: None,
    })
}

/// Resumable state of a greedy operation search.
#[derive(Clone, Debug, PartialEq)]
pub struct GreedyState {
    pub family: String,
    pub stage_code: StageAllocation,
    /// Index of the next block to decide.
    pub next_block: usize,
    pub beam: Vec<(Vec<u8>, f64)>,
    pub steps: Vec<BeamStep>,
    /// Config fields that determine the trajectory.
    pub seed: u64,
    pub beam_width: usize,
    pub completions: Completions,
    pub ops: Vec<u8>,
    pub paired_sampling: bool,
}

impl GreedyState {
    fn fresh(family: &BackboneFamily, stage_code: &StageAllocation, config: &SearchConfig) -> Self {
        GreedyState {
            family: family.name.clone(),
            stage_code: stage_code.clone(),
            next_block: 0,
            beam: Vec::new(),
            steps: Vec::new(),
            seed: config.seed,
            beam_width: config.beam_width,
            completions: config.completions,
            ops: config.ops.clone(),
            paired_sampling: config.paired_sampling,
        }
    }

    fn check_matches(&self, family: &BackboneFamily, config: &SearchConfig) -> Result<()> {
        let expected = GreedyState::fresh(family, &self.stage_code, config);
        let same = self.family == expected.family
            && self.seed == expected.seed
            && self.beam_width == expected.beam_width
            && self.completions == expected.completions
            && self.ops == expected.ops
            && self.paired_sampling == expected.paired_sampling;
        if same {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "checkpoint was written with a different family or search configuration".into(),
            ))
        }
    }

    pub fn to_keytree(&self) -> KeyTree {
        let mut root = KeyTree::node();
        root.leaf("family", &self.family)
            .leaf("stage_code", &self.stage_code)
            .leaf("next_block", self.next_block)
            .leaf("seed", self.seed)
            .leaf("beam_width", self.beam_width)
            .leaf("completions", completions_text(self.completions))
            .leaf("ops", OperationAssignment::new(self.ops.clone()))
            .leaf("paired_sampling", self.paired_sampling);
        root.child("beam", entries_tree(&self.beam));
        for step in &self.steps {
            let mut s = entries_tree(&step.kept);
            if let KeyTree::Node(entries) = &mut s {
                entries.insert(0, ("block".into(), KeyTree::Leaf(step.block.to_string())));
                entries.insert(
                    1,
                    (
                        "evaluated".into(),
                        KeyTree::Leaf(step.evaluated.to_string()),
                    ),
                );
            }
            root.child("step", s);
        }
        root
    }

    pub fn from_keytree(tree: &KeyTree) -> Result<Self> {
        let steps = tree
            .all("step")
            .map(|s| {
                Ok(BeamStep {
                    block: parse_num(s.require("block")?)?,
                    evaluated: parse_num(s.require("evaluated")?)?,
                    kept: parse_entries(s)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GreedyState {
            family: tree.require("family")?.to_string(),
            stage_code: tree.require("stage_code")?.parse()?,
            next_block: parse_num(tree.require("next_block")?)?,
            beam: parse_entries(tree.require_node("beam")?)?,
            steps,
            seed: parse_num(tree.require("seed")?)?,
            beam_width: parse_num(tree.require("beam_width")?)?,
            completions: parse_completions(tree.require("completions")?)?,
            ops: tree
                .require("ops")?
                .parse::<OperationAssignment>()?
                .codes()
                .to_vec(),
            paired_sampling: parse_num(tree.require("paired_sampling")?)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::report::write_atomic(path, self.to_keytree().render().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_keytree(&KeyTree::parse(&text, &path.display().to_string())?)
    }
}

fn entries_tree(entries: &[(Vec<u8>, f64)]) -> KeyTree {
    let mut node = KeyTree::node();
    for (code, score) in entries {
        // `{}` on f64 prints the shortest text that parses back exactly.
        node.leaf(
            "entry",
            format!("{} {}", OperationAssignment::new(code.clone()), score),
        );
    }
    node
}

fn parse_entries(node: &KeyTree) -> Result<Vec<(Vec<u8>, f64)>> {
    node.all("entry")
        .map(|e| {
            let text = e.as_leaf().unwrap_or_default();
            let (code, score) = text
                .rsplit_once(' ')
                .ok_or_else(|| Error::parse(text, "expected `[codes] score`"))?;
            let code: OperationAssignment = code.parse()?;
            Ok((code.codes().to_vec(), parse_num(score)?))
        })
        .collect()
}

pub(crate) fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::parse(s, "bad number"))
}

pub fn completions_text(c: Completions) -> String {
    match c {
        Completions::Sampled(n) => n.to_string(),
        Completions::Exhaustive => "exhaustive".to_string(),
    }
}

pub fn parse_completions(s: &str) -> Result<Completions> {
    match s.trim() {
        "exhaustive" => Ok(Completions::Exhaustive),
        n => Ok(Completions::Sampled(parse_num(n)?)),
    }
}

/// Beam search over operation codes for a fixed stage code.
pub fn greedy_op_search(
    family: &Arc<BackboneFamily>,
    stage_code: &StageAllocation,
    evaluator: &dyn Evaluator,
    config: &SearchConfig,
) -> Result<SearchReport> {
    let state = GreedyState::fresh(family, stage_code, config);
    run_greedy(family, state, evaluator, config)
}

/// Continues a search from a checkpoint written by [`greedy_op_search`].
/// Produces the same report as an uninterrupted run.
pub fn resume_op_search(
    family: &Arc<BackboneFamily>,
    checkpoint: &Path,
    evaluator: &dyn Evaluator,
    config: &SearchConfig,
) -> Result<SearchReport> {
    let state = GreedyState::load(checkpoint)?;
    state.check_matches(family, config)?;
    run_greedy(family, state, evaluator, config)
}

fn run_greedy(
    family: &Arc<BackboneFamily>,
    mut state: GreedyState,
    evaluator: &dyn Evaluator,
    config: &SearchConfig,
) -> Result<SearchReport> {
    config.validate()?;
    validate_stage_code(family, &state.stage_code)?;
    let start = Instant::now();
    let stage_code = state.stage_code.clone();
    let blocks = family.choice_block_count(&stage_code);
    let scorer = Scorer::new(config.workers)?;
    let partial = PartialScorer {
        evaluator,
        family,
        stage_code: &stage_code,
        ops: &config.ops,
        completions: config.completions,
        paired: config.paired_sampling,
    };

    while state.next_block < blocks {
        let block = state.next_block;
        let parents: Vec<Vec<u8>> = if state.beam.is_empty() {
            vec![Vec::new()]
        } else {
            state.beam.iter().map(|(c, _)| c.clone()).collect()
        };
        let extended: Vec<Vec<u8>> = parents
            .iter()
            .flat_map(|p| {
                config.ops.iter().map(move |&op| {
                    let mut c = p.clone();
                    c.push(op);
                    c
                })
            })
            .collect();
        let last = block + 1 == blocks;
        let scores = scorer.map(&extended, |code| {
            if last {
                let arch = Architecture::new(
                    family.clone(),
                    stage_code.clone(),
                    OperationAssignment::new(code.clone()),
                );
                evaluate_full(evaluator, &arch, config.seed)
            } else {
                partial.score(code, config.seed)
            }
        })?;
        let mut scored: Vec<(Vec<u8>, f64)> = extended.into_iter().zip(scores).collect();
        let evaluated = scored.len();
        scored.sort_by(|a, b| rank((&a.0, a.1), (&b.0, b.1)));
        scored.truncate(config.beam_width);
        state.steps.push(BeamStep {
            block,
            evaluated,
            kept: scored.clone(),
        });
        state.beam = scored;
        state.next_block += 1;

        if let Some(path) = &config.checkpoint_path {
            let interval = config.checkpoint_interval;
            if interval > 0 && state.next_block.is_multiple_of(interval) {
                state.save(path)?;
            }
        }
    }

    if state.beam.is_empty() {
        return Err(Error::InvalidArgument(
            "stage code has no choice blocks".into(),
        ));
    }
    let ranked: Vec<Candidate> = state
        .beam
        .iter()
        .map(|(code, score)| Candidate {
            stage_code: stage_code.clone(),
            op_code: OperationAssignment::new(code.clone()),
            score: *score,
        })
        .collect();
    let best = &ranked[0];
    let target = weighted_block_count(family, &stage_code)?;
    let audit = BudgetAudit::of(family, target, Weight::from_integer(0), [&stage_code])?;
    Ok(SearchReport {
        kind: SearchKind::Operation,
        winner: Architecture::new(family.clone(), stage_code.clone(), best.op_code.clone()),
        winner_score: best.score,
        ranked,
        beam_steps: state.steps,
        audit,
        config: config.clone(),
        wall_time: start.elapsed(),
        stage_report: None,
        op_report: None,
    })
}

/// Scores every operation code of `stage_code`.
pub fn brute_force_search(
    family: &Arc<BackboneFamily>,
    stage_code: &StageAllocation,
    evaluator: &dyn Evaluator,
    config: &SearchConfig,
) -> Result<SearchReport> {
    config.validate()?;
    validate_stage_code(family, stage_code)?;
    let start = Instant::now();
    let blocks = family.choice_block_count(stage_code);
    let radix = config.ops.len();
    let size = operation_space_size(blocks, radix as u32);
    let total = match size.to_u64() {
        Some(n) if n <= config.max_candidates => n as usize,
        _ => {
            return Err(Error::SpaceTooLarge {
                size,
                max: config.max_candidates,
            })
        }
    };
    // Index k spelled in base |ops|, most significant digit first, so index
    // order is lexicographic code order.
    let code_of = |mut k: usize| {
        let mut code = vec![0u8; blocks];
        for slot in code.iter_mut().rev() {
            *slot = config.ops[k % radix];
            k /= radix;
        }
        code
    };
    let indices: Vec<usize> = (0..total).collect();
    let scores = Scorer::new(config.workers)?.map(&indices, |&k| {
        let arch = Architecture::new(
            family.clone(),
            stage_code.clone(),
            OperationAssignment::new(code_of(k)),
        );
        evaluate_full(evaluator, &arch, config.seed)
    })?;

    let mut order = indices;
    let by_rank = |a: &usize, b: &usize| rank((a, scores[*a]), (b, scores[*b]));
    let keep = BRUTE_FORCE_RANKED.min(total);
    if keep < total {
        order.select_nth_unstable_by(keep - 1, by_rank);
        order.truncate(keep);
    }
    order.sort_by(by_rank);
    let ranked: Vec<Candidate> = order
        .iter()
        .map(|&k| Candidate {
            stage_code: stage_code.clone(),
            op_code: OperationAssignment::new(code_of(k)),
            score: scores[k],
        })
        .collect();
    let best = &ranked[0];
    let target = weighted_block_count(family, stage_code)?;
    let audit = BudgetAudit::of(family, target, Weight::from_integer(0), [stage_code])?;
    Ok(SearchReport {
        kind: SearchKind::BruteForce,
        winner: Architecture::new(family.clone(), stage_code.clone(), best.op_code.clone()),
        winner_score: best.score,
        ranked,
        beam_steps: Vec::new(),
        audit,
        config: config.clone(),
        wall_time: start.elapsed(),
        stage_report: None,
        op_report: None,
    })
}

/// Stage search, then operation search on the winning stage code.
pub fn hierarchical_search(
    space: &AllocationSpace,
    evaluator: &dyn Evaluator,
    config: &SearchConfig,
) -> Result<SearchReport> {
    let start = Instant::now();
    let stage = stage_search(space, evaluator, config)?;
    let op = greedy_op_search(&space.family, &stage.winner.stage_code, evaluator, config)?;
    Ok(SearchReport {
        kind: SearchKind::Hierarchical,
        winner: op.winner.clone(),
        winner_score: op.winner_score,
        ranked: vec![op.ranked[0].clone()],
        beam_steps: Vec::new(),
        audit: stage.audit.clone(),
        config: config.clone(),
        wall_time: start.elapsed(),
        stage_report: Some(Box::new(stage)),
        op_report: Some(Box::new(op)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::builtin_family;
    use crate::eval::{synth, EvaluatorSpec, SeparableUtility, TableEvaluator};
    use crate::space::BranchSet;
    use num_bigint::BigUint;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn w(n: i64) -> Weight {
        Weight::from_integer(n)
    }

    fn resnet50_space() -> AllocationSpace {
        AllocationSpace::with_default_branches(builtin_family("resnet_bottleneck").unwrap(), w(16))
            .unwrap()
    }

    /// A 3-block family: one stage holding three blocks.
    fn three_blocks() -> (Arc<BackboneFamily>, StageAllocation) {
        let mut f = (*builtin_family("resnet_basic").unwrap()).clone();
        f.num_stages = 1;
        f.stage_weights.truncate(1);
        f.channel_plan.truncate(1);
        f.stage_strides.truncate(1);
        f.baseline = vec![3].into();
        (Arc::new(f), vec![3].into())
    }

    #[test]
    fn table_winner_is_published_code() {
        let space = resnet50_space();
        let mut table = TableEvaluator::new(Some(0.30));
        table.insert(&space.family.plain(vec![3, 4, 6, 3].into()), 0.365);
        table.insert(&space.family.plain(vec![1, 3, 5, 7].into()), 0.374);
        let r = stage_search(
            &space,
            &EvaluatorSpec::Table(table),
            &SearchConfig::default(),
        )
        .unwrap();
        assert_eq!(r.winner.stage_code.counts(), &[1, 3, 5, 7]);
        assert_eq!(r.winner_score, 0.374);
        assert_eq!(r.ranked[1].stage_code.counts(), &[3, 4, 6, 3]);
        assert_eq!(r.audit.violations, 0);
        assert_eq!(r.audit.checked, r.ranked.len());
    }

    #[test]
    fn constant_evaluator_picks_smallest_code() {
        let space = resnet50_space();
        let spec = EvaluatorSpec::Separable(SeparableUtility::constant(0.3, 4, 23, 60));
        let r = stage_search(&space, &spec, &SearchConfig::default()).unwrap();
        assert_eq!(r.winner.stage_code, enumerate_allocations(&space)[0]);
    }

    #[test]
    fn empty_space_has_no_candidates() {
        let space = AllocationSpace::with_default_branches(
            builtin_family("resnet_bottleneck").unwrap(),
            w(3),
        )
        .unwrap();
        let spec = EvaluatorSpec::Separable(SeparableUtility::constant(0.3, 4, 23, 60));
        assert!(matches!(
            stage_search(&space, &spec, &SearchConfig::default()),
            Err(Error::NoCandidates)
        ));
    }

    #[test]
    fn separable_three_blocks() {
        let (f, tau) = three_blocks();
        let mut u = SeparableUtility::constant(0.0, 1, 3, 3);
        u.ops = vec![[0.0, 0.1, 0.5], [0.4, 0.2, 0.0], [0.1, 0.3, 0.2]];
        let spec = EvaluatorSpec::Separable(u);
        let r = greedy_op_search(&f, &tau, &spec, &SearchConfig::default()).unwrap();
        assert_eq!(r.winner.op_code.codes(), &[2, 0, 1]);
        assert_eq!(r.beam_steps.len(), 3);
        assert_eq!(r.beam_steps[0].evaluated, 3);
        assert_eq!(r.beam_steps[1].evaluated, 9);
        assert!(r.beam_steps.iter().all(|s| s.kept.len() == 3));
    }

    #[test]
    fn single_block_is_exhaustive() {
        let mut f = (*builtin_family("resnet_basic").unwrap()).clone();
        f.num_stages = 1;
        f.stage_weights.truncate(1);
        f.channel_plan.truncate(1);
        f.stage_strides.truncate(1);
        f.baseline = vec![1].into();
        let f = Arc::new(f);
        let mut u = SeparableUtility::constant(0.0, 1, 1, 1);
        u.ops = vec![[0.1, 0.7, 0.3]];
        let spec = EvaluatorSpec::Separable(u);
        for k in 1..=4 {
            let config = SearchConfig {
                beam_width: k,
                ..SearchConfig::default()
            };
            let r = greedy_op_search(&f, &vec![1].into(), &spec, &config).unwrap();
            assert_eq!(r.winner.op_code.codes(), &[1]);
        }
    }

    #[test]
    fn brute_force_limits() {
        let f = builtin_family("resnet_bottleneck").unwrap();
        let spec = EvaluatorSpec::Separable(SeparableUtility::constant(0.0, 4, 10, 16));
        let err = brute_force_search(
            &f,
            &vec![3, 4, 6, 3].into(),
            &spec,
            &SearchConfig::default(),
        )
        .unwrap_err();
        match err {
            Error::SpaceTooLarge { size, max } => {
                assert_eq!(size, BigUint::from(43_046_721u64));
                assert_eq!(max, 1_000_000);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn brute_force_constant_is_all_zeros() {
        let (f, _) = three_blocks();
        let spec = EvaluatorSpec::Separable(SeparableUtility::constant(0.0, 1, 3, 3));
        let r = brute_force_search(&f, &vec![2].into(), &spec, &SearchConfig::default()).unwrap();
        assert_eq!(r.winner.op_code.codes(), &[0, 0]);
        assert_eq!(r.ranked.len(), 9);
    }

    #[test]
    fn brute_force_ranking_is_complete_order() {
        let f = builtin_family("resnet_basic").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let spec = synth::random_interaction(&mut rng, 4, 10, 8, 10);
        let r = brute_force_search(
            &f,
            &vec![2, 2, 2, 2].into(),
            &spec,
            &SearchConfig::default(),
        )
        .unwrap();
        assert_eq!(r.ranked.len(), BRUTE_FORCE_RANKED);
        assert!(r.ranked.windows(2).all(|p| p[0].score >= p[1].score));
        // No unlisted code beats the last listed one.
        let last = r.ranked.last().unwrap().score;
        let mut above = 0;
        for k in 0..6561usize {
            let mut code = vec![0u8; 8];
            let mut x = k;
            for slot in code.iter_mut().rev() {
                *slot = (x % 3) as u8;
                x /= 3;
            }
            let a = Architecture::new(f.clone(), vec![2, 2, 2, 2].into(), code.into());
            if spec.evaluate(&a, 0).unwrap() > last {
                above += 1;
            }
        }
        assert!(above < BRUTE_FORCE_RANKED);
    }

    #[test]
    fn greedy_with_full_beam_equals_brute_force() {
        let f = builtin_family("resnet_basic").unwrap();
        let tau: StageAllocation = vec![1, 1, 1, 2].into();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let spec = synth::random_interaction(&mut rng, 4, 10, 5, 15);
            let config = SearchConfig {
                beam_width: 243,
                completions: Completions::Exhaustive,
                ..SearchConfig::default()
            };
            let g = greedy_op_search(&f, &tau, &spec, &config).unwrap();
            let b = brute_force_search(&f, &tau, &spec, &config).unwrap();
            assert_eq!(g.winner, b.winner);
            assert_eq!(g.winner_score, b.winner_score);
        }
    }

    #[test]
    fn workers_do_not_change_results() {
        let space = resnet50_space();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = EvaluatorSpec::noisy(
            EvaluatorSpec::Separable(synth::random_separable(&mut rng, 4, 23, 60)),
            0.002,
        )
        .unwrap();
        let one = SearchConfig {
            seed: 99,
            ..SearchConfig::default()
        };
        let many = SearchConfig {
            workers: 6,
            ..one.clone()
        };
        let a = hierarchical_search(&space, &spec, &one).unwrap();
        let b = hierarchical_search(&space, &spec, &many).unwrap();
        assert_eq!(a.winner, b.winner);
        assert_eq!(
            a.stage_report.unwrap().ranked,
            b.stage_report.unwrap().ranked
        );
        assert_eq!(
            a.op_report.unwrap().beam_steps,
            b.op_report.unwrap().beam_steps
        );
    }

    #[test]
    fn checkpoint_resume_reproduces_trajectory() {
        let f = builtin_family("resnet_bottleneck").unwrap();
        let tau: StageAllocation = vec![1, 3, 5, 7].into();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = EvaluatorSpec::noisy(synth::random_interaction(&mut rng, 4, 10, 16, 30), 0.001)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("beam.ckpt");
        let base = SearchConfig {
            seed: 4,
            ..SearchConfig::default()
        };
        let full = greedy_op_search(&f, &tau, &spec, &base).unwrap();

        // Stop after the checkpoint at block 10 by truncating a copy.
        let checkpointed = SearchConfig {
            checkpoint_interval: 5,
            checkpoint_path: Some(path.clone()),
            ..base.clone()
        };
        greedy_op_search(&f, &tau, &spec, &checkpointed).unwrap();
        let mut state = GreedyState::load(&path).unwrap();
        assert_eq!(state.next_block, 15);
        state.steps.truncate(10);
        state.beam = state.steps[9].kept.clone();
        state.next_block = 10;
        state.save(&path).unwrap();

        let resumed = resume_op_search(&f, &path, &spec, &base).unwrap();
        assert_eq!(resumed.winner, full.winner);
        assert_eq!(resumed.winner_score.to_bits(), full.winner_score.to_bits());
        assert_eq!(resumed.beam_steps, full.beam_steps);

        let other = SearchConfig { seed: 5, ..base };
        assert!(resume_op_search(&f, &path, &spec, &other).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = [
            SearchConfig {
                beam_width: 0,
                ..SearchConfig::default()
            },
            SearchConfig {
                completions: Completions::Sampled(0),
                ..SearchConfig::default()
            },
            SearchConfig {
                ops: vec![],
                ..SearchConfig::default()
            },
            SearchConfig {
                ops: vec![0, 3],
                ..SearchConfig::default()
            },
            SearchConfig {
                ops: vec![1, 0],
                ..SearchConfig::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn restricted_operation_set() {
        let (f, tau) = three_blocks();
        let mut u = SeparableUtility::constant(0.0, 1, 3, 3);
        u.ops = vec![[0.0, 0.1, 0.5], [0.4, 0.2, 0.0], [0.1, 0.3, 0.2]];
        let config = SearchConfig {
            ops: vec![0, 1],
            ..SearchConfig::default()
        };
        let r = greedy_op_search(&f, &tau, &EvaluatorSpec::Separable(u), &config).unwrap();
        assert_eq!(r.winner.op_code.codes(), &[1, 0, 1]);
    }

    #[test]
    fn hierarchical_constant() {
        let space = AllocationSpace::new(
            builtin_family("resnet_basic").unwrap(),
            vec![BranchSet::range(1, 10); 4],
            w(8),
            w(0),
        )
        .unwrap();
        let spec = EvaluatorSpec::Separable(SeparableUtility::constant(0.1, 4, 10, 40));
        let r = hierarchical_search(&space, &spec, &SearchConfig::default()).unwrap();
        assert_eq!(r.winner.stage_code.counts(), &[1, 1, 1, 5]);
        assert_eq!(r.winner.op_code, OperationAssignment::zeros(8));
        assert!(r.stage_report.is_some() && r.op_report.is_some());
    }
}
