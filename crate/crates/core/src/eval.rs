//! Evaluators: scoring functions over architectures that stand in for
//! validation accuracy of a trained supernet.
//!
//! Built-in kinds live in [`EvaluatorSpec`]; anything implementing
//! [`Evaluator`] can be plugged into the searches. Scores are fractions, so
//! 37.4 AP is `0.374`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::arch::{
    parse_codes, validate_architecture, Architecture, BackboneFamily, OperationAssignment,
    StageAllocation,
};
use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::NUM_OPS;

/// A scoring function over full architectures.
///
/// Implementations must be deterministic in `(arch, seed)`; noiseless ones
/// ignore the seed.
pub trait Evaluator: Send + Sync {
    fn evaluate(&self, arch: &Architecture, seed: u64) -> Result<f64>;

    /// Short human-readable description, echoed into reports.
    fn describe(&self) -> String {
        "custom".to_string()
    }
}

/// Additive utilities: `base + stage terms + per-block operation terms`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparableUtility {
    pub base: f64,
    /// Per stage, utility of each allowed block count.
    pub stage: Vec<BTreeMap<u32, f64>>,
    /// Per choice block, utility of each operation code.
    pub ops: Vec<[f64; NUM_OPS as usize]>,
}

impl SeparableUtility {
    /// All-zero utilities covering counts `1..=max_count` and `blocks` blocks.
    pub fn constant(base: f64, num_stages: usize, max_count: u32, blocks: usize) -> Self {
        SeparableUtility {
            base,
            stage: vec![(1..=max_count).map(|c| (c, 0.0)).collect(); num_stages],
            ops: vec![[0.0; NUM_OPS as usize]; blocks],
        }
    }

    pub fn stage_utility(&self, tau: &StageAllocation) -> Result<f64> {
        if tau.len() != self.stage.len() {
            return Err(Error::Uncovered(format!(
                "{}-stage code {tau} (table has {} stages)",
                tau.len(),
                self.stage.len()
            )));
        }
        let mut total = 0.0;
        for (i, (&count, table)) in tau.counts().iter().zip(&self.stage).enumerate() {
            total += table
                .get(&count)
                .ok_or_else(|| Error::Uncovered(format!("stage {i} with {count} blocks")))?;
        }
        Ok(total)
    }

    pub fn op_utility(&self, block: usize, op: u8) -> Result<f64> {
        self.ops
            .get(block)
            .and_then(|row| row.get(op as usize))
            .copied()
            .ok_or_else(|| Error::Uncovered(format!("block {block} operation {op}")))
    }

    pub fn score(&self, arch: &Architecture) -> Result<f64> {
        let mut total = self.base + self.stage_utility(&arch.stage_code)?;
        for (block, &op) in arch.op_code.codes().iter().enumerate() {
            total += self.op_utility(block, op)?;
        }
        Ok(total)
    }

    /// Per-block best operation among `allowed`, smallest code on ties. This
    /// is the exact maximizer of the operation terms.
    pub fn best_ops(&self, blocks: usize, allowed: &[u8]) -> Result<OperationAssignment> {
        (0..blocks)
            .map(|b| {
                let mut best = (f64::NEG_INFINITY, u8::MAX);
                for &op in allowed {
                    let u = self.op_utility(b, op)?;
                    if u > best.0 || (u == best.0 && op < best.1) {
                        best = (u, op);
                    }
                }
                Ok(best.1)
            })
            .collect::<Result<Vec<_>>>()
            .map(OperationAssignment::new)
    }
}

/// Bonus added when block `first.0` uses op `first.1` and block `second.0`
/// uses op `second.1`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBonus {
    pub first: (usize, u8),
    pub second: (usize, u8),
    pub bonus: f64,
}

/// Explicit architecture to score mapping.
#[derive(Clone, Debug, PartialEq)]
pub struct TableEvaluator {
    entries: BTreeMap<String, f64>,
    default: Option<f64>,
}

impl TableEvaluator {
    pub fn new(default: Option<f64>) -> Self {
        TableEvaluator {
            entries: BTreeMap::new(),
            default,
        }
    }

    pub fn insert(&mut self, arch: &Architecture, score: f64) {
        self.entries.insert(arch.to_string(), score);
    }

    pub fn get(&self, arch: &Architecture) -> Option<f64> {
        self.entries.get(&arch.to_string()).copied()
    }

    pub fn default_score(&self) -> Option<f64> {
        self.default
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reads `stage_code / op_code<TAB>score` records. A `default<TAB>score`
    /// line sets the fallback; blank lines and `#` comments are skipped.
    pub fn load(path: &Path, family: &Arc<BackboneFamily>) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut table = TableEvaluator::new(None);
        let fail = |line: usize, reason: String| Error::Format {
            path: path.display().to_string(),
            line,
            reason,
        };
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, score) = trimmed
                .rsplit_once('\t')
                .ok_or_else(|| fail(i + 1, "expected `codes<TAB>score`".into()))?;
            let score: f64 = score
                .trim()
                .parse()
                .map_err(|_| fail(i + 1, format!("bad score {score:?}")))?;
            if key.trim() == "default" {
                table.default = Some(score);
            } else {
                let arch = parse_codes(key, family).map_err(|e| fail(i + 1, e.to_string()))?;
                table.insert(&arch, score);
            }
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        if let Some(d) = self.default {
            text.push_str(&format!("default\t{d}\n"));
        }
        for (key, score) in &self.entries {
            text.push_str(&format!("{key}\t{score}\n"));
        }
        crate::report::write_atomic(path, text.as_bytes())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EvaluatorSpec {
    Separable(SeparableUtility),
    Interaction {
        base: SeparableUtility,
        pairs: Vec<PairBonus>,
    },
    Table(TableEvaluator),
    NoisyWrapper {
        inner: Box<EvaluatorSpec>,
        stddev: f64,
    },
}

impl EvaluatorSpec {
    pub fn noisy(inner: EvaluatorSpec, stddev: f64) -> Result<Self> {
        if !(stddev.is_finite() && stddev >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise stddev must be nonnegative, got {stddev}"
            )));
        }
        Ok(EvaluatorSpec::NoisyWrapper {
            inner: Box::new(inner),
            stddev,
        })
    }

    /// The noiseless evaluator underneath any noise wrappers.
    pub fn noiseless(&self) -> &EvaluatorSpec {
        match self {
            EvaluatorSpec::NoisyWrapper { inner, .. } => inner.noiseless(),
            other => other,
        }
    }

    fn score(&self, arch: &Architecture, seed: u64) -> Result<f64> {
        match self {
            EvaluatorSpec::Separable(u) => u.score(arch),
            EvaluatorSpec::Interaction { base, pairs } => {
                let ops = arch.op_code.codes();
                let mut total = base.score(arch)?;
                for p in pairs {
                    if ops.get(p.first.0) == Some(&p.first.1)
                        && ops.get(p.second.0) == Some(&p.second.1)
                    {
                        total += p.bonus;
                    }
                }
                Ok(total)
            }
            EvaluatorSpec::Table(t) => t
                .get(arch)
                .or(t.default)
                .ok_or_else(|| Error::MissingEntry(arch.to_string())),
            EvaluatorSpec::NoisyWrapper { inner, stddev } => {
                let clean = inner.score(arch, seed)?;
                if *stddev == 0.0 {
                    return Ok(clean);
                }
                let mut rng =
                    rng::stream(rng::derive_tagged(seed, Domain::Noise, arch_words(arch)));
                let normal =
                    Normal::new(0.0, *stddev).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                Ok(clean + normal.sample(&mut rng))
            }
        }
    }
}

impl Evaluator for EvaluatorSpec {
    fn evaluate(&self, arch: &Architecture, seed: u64) -> Result<f64> {
        self.score(arch, seed)
    }

    fn describe(&self) -> String {
        match self {
            EvaluatorSpec::Separable(u) => format!("separable(blocks={})", u.ops.len()),
            EvaluatorSpec::Interaction { base, pairs } => {
                format!(
                    "interaction(blocks={},pairs={})",
                    base.ops.len(),
                    pairs.len()
                )
            }
            EvaluatorSpec::Table(t) => match t.default {
                Some(d) => format!("table(entries={},default={d})", t.len()),
                None => format!("table(entries={})", t.len()),
            },
            EvaluatorSpec::NoisyWrapper { inner, stddev } => {
                format!("noisy(stddev={stddev},{})", inner.describe())
            }
        }
    }
}

fn arch_words(arch: &Architecture) -> impl Iterator<Item = u64> + '_ {
    let stages = arch.stage_code.counts().iter().map(|&c| u64::from(c));
    let ops = arch.op_code.codes().iter().map(|&o| u64::from(o));
    std::iter::once(arch.stage_code.len() as u64)
        .chain(stages)
        .chain(ops)
}

/// Scores a validated full architecture.
pub fn evaluate_full(evaluator: &dyn Evaluator, arch: &Architecture, seed: u64) -> Result<f64> {
    validate_architecture(arch)?;
    evaluator.evaluate(arch, seed)
}

/// How unselected blocks of a partial code are filled in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Completions {
    /// Average over this many uniform random completions.
    Sampled(u32),
    /// Average over every completion.
    Exhaustive,
}

impl Default for Completions {
    fn default() -> Self {
        Completions::Sampled(20)
    }
}

/// Scores partial operation codes for one fixed stage code.
pub struct PartialScorer<'a> {
    pub evaluator: &'a dyn Evaluator,
    pub family: &'a Arc<BackboneFamily>,
    pub stage_code: &'a StageAllocation,
    /// Operation codes completions are drawn from.
    pub ops: &'a [u8],
    pub completions: Completions,
    /// Share one completion stream among all prefixes of the same length
    /// instead of drawing a fresh stream per prefix.
    pub paired: bool,
}

impl PartialScorer<'_> {
    pub fn blocks(&self) -> usize {
        self.family.choice_block_count(self.stage_code)
    }

    fn stream_seed(&self, prefix: &[u8], seed: u64) -> u64 {
        if self.paired {
            rng::derive_tagged(seed, Domain::Completion, [u64::MAX, prefix.len() as u64])
        } else {
            let words =
                std::iter::once(prefix.len() as u64).chain(prefix.iter().map(|&o| u64::from(o)));
            rng::derive_tagged(seed, Domain::Completion, words)
        }
    }

    /// Mean score of the completions of `prefix`.
    pub fn score(&self, prefix: &[u8], seed: u64) -> Result<f64> {
        let blocks = self.blocks();
        if prefix.len() >= blocks {
            return Err(Error::PrefixComplete(blocks));
        }
        if self.ops.is_empty() || self.ops.iter().any(|&o| o >= NUM_OPS) {
            return Err(Error::InvalidArgument(format!(
                "operation set {:?} must be a nonempty subset of 0..{NUM_OPS}",
                self.ops
            )));
        }
        if let Some(position) = prefix.iter().position(|&o| o >= NUM_OPS) {
            return Err(Error::OutOfRangeCode {
                position,
                value: i64::from(prefix[position]),
            });
        }
        let stream_seed = self.stream_seed(prefix, seed);
        let mut codes = prefix.to_vec();
        codes.resize(blocks, 0);
        let mut arch = Architecture::new(
            self.family.clone(),
            self.stage_code.clone(),
            OperationAssignment::new(codes),
        );
        validate_architecture(&arch)?;
        let free = prefix.len()..blocks;

        let mut total = 0.0;
        let mut n = 0u64;
        match self.completions {
            Completions::Sampled(0) => {
                return Err(Error::InvalidArgument(
                    "completions must be at least 1".into(),
                ))
            }
            Completions::Sampled(c) => {
                let mut rng = rng::stream(stream_seed);
                for k in 0..u64::from(c) {
                    let mut codes = arch.op_code.codes().to_vec();
                    for slot in &mut codes[free.clone()] {
                        *slot = self.ops[rng.random_range(0..self.ops.len())];
                    }
                    arch.op_code = OperationAssignment::new(codes);
                    total += self
                        .evaluator
                        .evaluate(&arch, rng::derive(stream_seed, [k]))?;
                    n += 1;
                }
            }
            Completions::Exhaustive => {
                // Odometer over indices into `ops` for the free blocks.
                let mut digits = vec![0usize; free.len()];
                loop {
                    let mut codes = arch.op_code.codes().to_vec();
                    for (slot, &d) in codes[free.clone()].iter_mut().zip(&digits) {
                        *slot = self.ops[d];
                    }
                    arch.op_code = OperationAssignment::new(codes);
                    total += self
                        .evaluator
                        .evaluate(&arch, rng::derive(stream_seed, [n]))?;
                    n += 1;
                    let mut i = digits.len();
                    loop {
                        if i == 0 {
                            return Ok(total / n as f64);
                        }
                        i -= 1;
                        digits[i] += 1;
                        if digits[i] < self.ops.len() {
                            break;
                        }
                        digits[i] = 0;
                    }
                }
            }
        }
        Ok(total / n as f64)
    }
}

/// Mean score of `prefix` completed uniformly over all three operations,
/// with an independent completion stream per prefix.
pub fn evaluate_partial(
    evaluator: &dyn Evaluator,
    family: &Arc<BackboneFamily>,
    stage_code: &StageAllocation,
    prefix: &[u8],
    completions: Completions,
    seed: u64,
) -> Result<f64> {
    PartialScorer {
        evaluator,
        family,
        stage_code,
        ops: &[0, 1, 2],
        completions,
        paired: false,
    }
    .score(prefix, seed)
}

/// Random evaluators for tests, benchmarks and the CLI.
pub mod synth {
    use super::*;

    /// Utilities drawn uniformly: stage terms in `[0, 0.02)`, operation terms
    /// in `[0, 0.01)`, base `0.3`.
    pub fn random_separable<R: Rng + ?Sized>(
        rng: &mut R,
        num_stages: usize,
        max_count: u32,
        blocks: usize,
    ) -> SeparableUtility {
        SeparableUtility {
            base: 0.3,
            stage: (0..num_stages)
                .map(|_| {
                    (1..=max_count)
                        .map(|c| (c, rng.random::<f64>() * 0.02))
                        .collect()
                })
                .collect(),
            ops: (0..blocks)
                .map(|_| std::array::from_fn(|_| rng.random::<f64>() * 0.01))
                .collect(),
        }
    }

    /// Separable utilities plus `pairs` random pairwise bonuses in
    /// `[-0.01, 0.01)` between distinct blocks.
    pub fn random_interaction<R: Rng + ?Sized>(
        rng: &mut R,
        num_stages: usize,
        max_count: u32,
        blocks: usize,
        pairs: usize,
    ) -> EvaluatorSpec {
        let base = random_separable(rng, num_stages, max_count, blocks);
        let pairs = if blocks < 2 {
            Vec::new()
        } else {
            (0..pairs)
                .map(|_| {
                    let a = rng.random_range(0..blocks);
                    let mut b = rng.random_range(0..blocks - 1);
                    if b >= a {
                        b += 1;
                    }
                    PairBonus {
                        first: (a, rng.random_range(0..NUM_OPS)),
                        second: (b, rng.random_range(0..NUM_OPS)),
                        bonus: rng.random::<f64>() * 0.02 - 0.01,
                    }
                })
                .collect()
        };
        EvaluatorSpec::Interaction { base, pairs }
    }

    /// A fixed, hand-shaped surrogate: concave gains from extra blocks,
    /// larger in deeper stages, and dilation that helps late blocks and
    /// hurts early ones.
    pub fn surrogate(family: &BackboneFamily, max_count: u32, blocks: usize) -> SeparableUtility {
        let n = family.num_stages;
        let stage = (0..n)
            .map(|i| {
                let gain = 0.01 * (1.0 + i as f64) / n as f64;
                (1..=max_count)
                    .map(|c| (c, gain * f64::from(c).ln()))
                    .collect()
            })
            .collect();
        // Depth is measured against the baseline network, so a block's
        // utilities do not depend on how large the table is.
        let reference = family.choice_block_count(&family.baseline).max(1);
        let ops = (0..blocks)
            .map(|b| {
                let depth = (b as f64 + 0.5) / reference as f64;
                let slope = 0.002 * (depth - 0.4);
                [0.0, slope, 2.0 * slope - 0.0005]
            })
            .collect();
        SeparableUtility {
            base: 0.35,
            stage,
            ops,
        }
    }

    /// Writes every architecture in `archs` with its score to a table file.
    pub fn write_table<W: Write>(
        out: &mut W,
        entries: &[(Architecture, f64)],
        default: Option<f64>,
    ) -> std::io::Result<()> {
        if let Some(d) = default {
            writeln!(out, "default\t{d}")?;
        }
        for (arch, score) in entries {
            writeln!(out, "{arch}\t{score}")?;
        }
        Ok(())
    }
}
