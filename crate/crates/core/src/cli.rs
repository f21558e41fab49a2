//! The `realloc-nas` command line.
//!
//! Settings come from flags, then an optional key-tree config file
//! (`--config`), then `REALLOC_NAS_SEED` for the seed, then defaults. Flags
//! always win. Exit codes: 0 success, 2 usage or validation error, 3
//! infeasible space, 4 I/O.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{builtin_family, parse_codes, Architecture, BackboneFamily, StageAllocation};
use crate::budget::{backbone_cost, weight_to_f64, weighted_block_count, BudgetModel, Weight};
use crate::error::{Error, Result};
use crate::eval::{synth, EvaluatorSpec, SeparableUtility, TableEvaluator};
use crate::keytree::KeyTree;
use crate::report::{self, RunRecord};
use crate::rf;
use crate::search::{
    brute_force_search, greedy_op_search, hierarchical_search, parse_completions, resume_op_search,
    stage_search, SearchConfig, SearchReport,
};
use crate::space::{
    count_allocations, default_branch_sets, enumerate_allocations, AllocationSpace, BranchSet,
};

pub const SEED_ENV: &str = "REALLOC_NAS_SEED";

#[derive(Parser, Debug)]
#[command(
    name = "realloc-nas",
    version,
    about = "Reallocate a fixed block budget across backbone stages and dilation choices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// List every stage code within the budget, then the count.
    Enumerate(SpaceArgs),
    /// Weighted block count and relative cost of an architecture.
    Cost(CostArgs),
    /// Per-stage theoretical receptive field and effective radius, as CSV.
    Erf(ErfArgs),
    /// Score every stage code in the space with plain convolutions.
    SearchStage(SearchArgs),
    /// Greedy beam search over dilation codes for a fixed stage code.
    SearchOp(SearchArgs),
    /// Stage search followed by operation search on the winner.
    SearchHier(SearchArgs),
    /// Exhaustive operation search for a fixed stage code.
    SearchBrute(SearchArgs),
    /// Check every published stage and operation code.
    VerifyCodes,
    /// Write a scatter CSV from report files.
    Scatter(ScatterArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct SpaceArgs {
    /// Backbone family: resnet_basic, resnet_bottleneck, resnext, mobilenetv2.
    #[arg(long)]
    family: Option<String>,
    /// Block budget N: integer, fraction (33/2) or decimal.
    #[arg(long)]
    budget: Option<String>,
    /// Allowed deviation from the budget.
    #[arg(long)]
    tolerance: Option<String>,
    /// Override one branch set, as `<stage>=[counts]` with 1-based stage.
    #[arg(long = "branch-set", value_name = "STAGE=[..]")]
    branch_set: Vec<String>,
    /// Key-tree config file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct CostArgs {
    #[arg(long)]
    family: String,
    /// `[stage code] / [op code]`.
    #[arg(long, conflicts_with = "stage")]
    code: Option<String>,
    /// Stage code alone; operations default to normal convs.
    #[arg(long)]
    stage: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    ref_cost: f64,
    #[arg(long, default_value_t = 0.0)]
    overhead: f64,
}

#[derive(Args, Debug, Clone)]
struct ErfArgs {
    #[arg(long)]
    family: String,
    #[arg(long, conflicts_with = "stage")]
    code: Option<String>,
    #[arg(long)]
    stage: Option<String>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
struct SearchArgs {
    #[command(flatten)]
    space: SpaceArgs,
    /// Stage code for operation searches.
    #[arg(long)]
    stage: Option<String>,
    /// constant, surrogate, random, random-interaction or table.
    #[arg(long)]
    evaluator: Option<String>,
    /// Score table file; implies `--evaluator table`.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Seed for the random evaluators.
    #[arg(long)]
    evaluator_seed: Option<u64>,
    /// Gaussian noise added to every evaluation.
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Beam width K.
    #[arg(long, short = 'k')]
    beam_width: Option<usize>,
    /// Completions per partial code, or `exhaustive`.
    #[arg(long)]
    completions: Option<String>,
    /// Share completion samples among candidates of one beam step.
    #[arg(long)]
    paired_sampling: bool,
    /// Operation codes to search over, e.g. `[0,1]`.
    #[arg(long)]
    ops: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    max_candidates: Option<u64>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    checkpoint_interval: Option<usize>,
    /// Continue an operation search from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Report file to write.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Name of the run in reports and scatter CSV.
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    ref_cost: Option<f64>,
    #[arg(long)]
    overhead: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct ScatterArgs {
    #[arg(long)]
    output: PathBuf,
    reports: Vec<PathBuf>,
}

/// Runs the CLI with process stdout/stderr and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            if code == 0 {
                let _ = write!(out, "{}", e.render());
            } else {
                let _ = write!(err, "{}", e.render());
            }
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        // A closed pipe (`realloc-nas enumerate | head`) is not an error.
        Err(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::BrokenPipe => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32> {
    let w = |e: std::io::Error| Error::io("<stdout>", e);
    match command {
        Command::Enumerate(args) => {
            let file = load_config(args.config.as_deref())?;
            let space = resolve_space(&args, &file)?;
            let codes = enumerate_allocations(&space);
            debug_assert_eq!(codes.len() as u128, count_allocations(&space));
            for c in &codes {
                writeln!(out, "{c}").map_err(w)?;
            }
            writeln!(out, "count: {}", codes.len()).map_err(w)?;
            Ok(0)
        }
        Command::Cost(args) => {
            let family = builtin_family(&args.family)?;
            let arch = arch_from(&family, args.code.as_deref(), args.stage.as_deref())?;
            let model = BudgetModel::new(args.ref_cost, args.overhead)?;
            let weighted = weighted_block_count(&family, &arch.stage_code)?;
            writeln!(out, "architecture: {arch}").map_err(w)?;
            writeln!(out, "weighted_blocks: {}", weight_to_f64(&weighted)).map_err(w)?;
            writeln!(out, "cost: {:.6}", backbone_cost(&arch, &model)?).map_err(w)?;
            Ok(0)
        }
        Command::Erf(args) => {
            let family = builtin_family(&args.family)?;
            let arch = arch_from(&family, args.code.as_deref(), args.stage.as_deref())?;
            let mut csv = String::from("stage,trf,erf_radius\n");
            for f in rf::stage_fields(&arch)? {
                csv.push_str(&format!("{},{},{:.6}\n", f.stage, f.trf, f.erf_radius));
            }
            match args.output {
                Some(path) => report::write_atomic(&path, csv.as_bytes())?,
                None => out.write_all(csv.as_bytes()).map_err(w)?,
            }
            Ok(0)
        }
        Command::SearchStage(args) => run_search(SearchMode::Stage, &args, out),
        Command::SearchOp(args) => run_search(SearchMode::Op, &args, out),
        Command::SearchHier(args) => run_search(SearchMode::Hierarchical, &args, out),
        Command::SearchBrute(args) => run_search(SearchMode::Brute, &args, out),
        Command::VerifyCodes => {
            let checks = crate::golden::verify_all();
            let mut failed = 0;
            for c in &checks {
                let tag = if c.passed { "ok  " } else { "FAIL" };
                writeln!(out, "{tag} {}: {}", c.name, c.detail).map_err(w)?;
                failed += usize::from(!c.passed);
            }
            writeln!(
                out,
                "{} of {} codes verified",
                checks.len() - failed,
                checks.len()
            )
            .map_err(w)?;
            Ok(if failed == 0 { 0 } else { 2 })
        }
        Command::Scatter(args) => {
            let records = args
                .reports
                .iter()
                .map(|p| report::read_report(p))
                .collect::<Result<Vec<_>>>()?;
            report::export_scatter(&records, &args.output)?;
            writeln!(
                out,
                "wrote {} rows to {}",
                records.len(),
                args.output.display()
            )
            .map_err(w)?;
            Ok(0)
        }
    }
}

fn arch_from(
    family: &Arc<BackboneFamily>,
    code: Option<&str>,
    stage: Option<&str>,
) -> Result<Architecture> {
    match (code, stage) {
        (Some(code), _) => parse_codes(code, family),
        (None, Some(stage)) => {
            let full: StageAllocation = stage.parse()?;
            let tau = family.stage_code_from_full(full.counts())?;
            let arch = family.plain(tau);
            crate::arch::validate_architecture(&arch)?;
            Ok(arch)
        }
        (None, None) => Err(Error::InvalidArgument("give --code or --stage".into())),
    }
}

fn load_config(path: Option<&Path>) -> Result<KeyTree> {
    match path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            KeyTree::parse(&text, &path.display().to_string())
        }
        None => Ok(KeyTree::node()),
    }
}

/// Flag value if given, else the config file value.
fn pick(flag: Option<String>, file: &KeyTree, key: &str) -> Option<String> {
    flag.or_else(|| file.get_leaf(key).map(str::to_string))
}

fn pick_num<T: std::str::FromStr>(flag: Option<T>, file: &KeyTree, key: &str) -> Result<Option<T>> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => file
            .get_leaf(key)
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("config {key}: bad value {s:?}")))
            })
            .transpose(),
    }
}

/// Parses an integer, fraction or finite decimal into an exact rational.
pub fn parse_weight(text: &str) -> Result<Weight> {
    let t = text.trim();
    if let Ok(w) = t.parse::<Weight>() {
        return Ok(w);
    }
    let bad = || Error::InvalidArgument(format!("bad budget value {text:?}"));
    let (int, frac) = t.split_once('.').ok_or_else(bad)?;
    if frac.is_empty() || frac.len() > 12 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let negative = int.starts_with('-');
    let whole: i64 = if int.is_empty() || int == "-" {
        0
    } else {
        int.parse().map_err(|_| bad())?
    };
    let denom = 10i64.pow(frac.len() as u32);
    let numer: i64 = frac.parse().map_err(|_| bad())?;
    let frac = Weight::new(numer, denom);
    Ok(if negative {
        Weight::from_integer(whole) - frac
    } else {
        Weight::from_integer(whole) + frac
    })
}

fn resolve_family(args: &SpaceArgs, file: &KeyTree) -> Result<Arc<BackboneFamily>> {
    let name = pick(args.family.clone(), file, "family")
        .ok_or_else(|| Error::InvalidArgument("--family is required".into()))?;
    builtin_family(&name)
}

fn resolve_space(args: &SpaceArgs, file: &KeyTree) -> Result<AllocationSpace> {
    let family = resolve_family(args, file)?;
    let budget = match pick(args.budget.clone(), file, "budget") {
        Some(b) => parse_weight(&b)?,
        None => crate::budget::weighted_block_count(&family, &family.baseline)?,
    };
    let tolerance = match pick(args.tolerance.clone(), file, "tolerance") {
        Some(t) => parse_weight(&t)?,
        None => Weight::from_integer(0),
    };
    let mut sets = default_branch_sets(&family)?;
    let mut overrides: Vec<String> = Vec::new();
    if let Some(node) = file.get("branch_sets") {
        for (key, value) in node.entries() {
            if let Some(v) = value.as_leaf() {
                overrides.push(format!("{}={v}", key.trim_start_matches("stage")));
            }
        }
    }
    overrides.extend(args.branch_set.iter().cloned());
    for o in &overrides {
        let (stage, list) = o.split_once('=').ok_or_else(|| {
            Error::InvalidArgument(format!("branch set {o:?}: expected STAGE=[..]"))
        })?;
        let stage: usize = stage
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("branch set {o:?}: bad stage")))?;
        if stage == 0 || stage > sets.len() {
            return Err(Error::StageOutOfRange {
                index: stage,
                stages: sets.len(),
            });
        }
        let counts: StageAllocation = list.parse()?;
        sets[stage - 1] = BranchSet::new(counts.counts().to_vec())?;
    }
    let space = AllocationSpace::new(family, sets, budget, tolerance)?;
    let (lo, hi) = space.achievable_range();
    if budget + tolerance < lo || budget - tolerance > hi {
        return Err(Error::NoCandidates);
    }
    Ok(space)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SearchMode {
    Stage,
    Op,
    Hierarchical,
    Brute,
}

fn build_evaluator(
    args: &SearchArgs,
    file: &KeyTree,
    family: &Arc<BackboneFamily>,
    max_count: u32,
    blocks: usize,
) -> Result<EvaluatorSpec> {
    let table = args
        .table
        .clone()
        .or_else(|| file.get_leaf("table").map(PathBuf::from));
    let kind = pick(args.evaluator.clone(), file, "evaluator").unwrap_or_else(|| {
        if table.is_some() {
            "table".to_string()
        } else {
            "surrogate".to_string()
        }
    });
    let evaluator_seed = pick_num(args.evaluator_seed, file, "evaluator_seed")?.unwrap_or(0);
    let n = family.num_stages;
    let spec = match kind.as_str() {
        "constant" => {
            EvaluatorSpec::Separable(SeparableUtility::constant(0.0, n, max_count, blocks))
        }
        "surrogate" => EvaluatorSpec::Separable(synth::surrogate(family, max_count, blocks)),
        "random" => {
            let mut rng = ChaCha8Rng::seed_from_u64(evaluator_seed);
            EvaluatorSpec::Separable(synth::random_separable(&mut rng, n, max_count, blocks))
        }
        "random-interaction" => {
            let mut rng = ChaCha8Rng::seed_from_u64(evaluator_seed);
            synth::random_interaction(&mut rng, n, max_count, blocks, 2 * blocks)
        }
        "table" => {
            let path = table.ok_or_else(|| {
                Error::InvalidArgument("--evaluator table needs --table PATH".into())
            })?;
            EvaluatorSpec::Table(TableEvaluator::load(&path, family)?)
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown evaluator {other:?}"
            )));
        }
    };
    match pick_num(args.noise_std, file, "noise_std")? {
        Some(s) if s != 0.0 => EvaluatorSpec::noisy(spec, s),
        Some(_) | None => Ok(spec),
    }
}

fn build_config(args: &SearchArgs, file: &KeyTree) -> Result<SearchConfig> {
    let defaults = SearchConfig::default();
    let seed = match pick_num(args.seed, file, "seed")? {
        Some(s) => s,
        None => match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("{SEED_ENV}={v:?} is not a u64")))?,
            Err(_) => defaults.seed,
        },
    };
    let completions = match pick(args.completions.clone(), file, "completions") {
        Some(c) => parse_completions(&c)?,
        None => defaults.completions,
    };
    let ops = match pick(args.ops.clone(), file, "ops") {
        Some(o) => o
            .parse::<crate::arch::OperationAssignment>()?
            .codes()
            .to_vec(),
        None => defaults.ops,
    };
    let paired =
        args.paired_sampling || pick_num::<bool>(None, file, "paired_sampling")?.unwrap_or(false);
    let checkpoint_path = args
        .checkpoint
        .clone()
        .or_else(|| file.get_leaf("checkpoint").map(PathBuf::from));
    let interval = pick_num(args.checkpoint_interval, file, "checkpoint_interval")?
        .unwrap_or(if checkpoint_path.is_some() { 1 } else { 0 });
    let config = SearchConfig {
        beam_width: pick_num(args.beam_width, file, "beam_width")?.unwrap_or(defaults.beam_width),
        completions,
        seed,
        ops,
        checkpoint_interval: interval,
        checkpoint_path,
        paired_sampling: paired,
        workers: pick_num(args.workers, file, "workers")?.unwrap_or(defaults.workers),
        max_candidates: pick_num(args.max_candidates, file, "max_candidates")?
            .unwrap_or(defaults.max_candidates),
    };
    config.validate()?;
    Ok(config)
}

fn run_search(mode: SearchMode, args: &SearchArgs, out: &mut dyn Write) -> Result<i32> {
    let w = |e: std::io::Error| Error::io("<stdout>", e);
    let file = load_config(args.space.config.as_deref())?;
    let config = build_config(args, &file)?;
    let family = resolve_family(&args.space, &file)?;
    let model = BudgetModel::new(
        pick_num(args.ref_cost, &file, "ref_cost")?.unwrap_or(1.0),
        pick_num(args.overhead, &file, "overhead")?.unwrap_or(0.0),
    )?;

    let (space, stage) = match mode {
        SearchMode::Stage | SearchMode::Hierarchical => {
            (Some(resolve_space(&args.space, &file)?), None)
        }
        SearchMode::Op | SearchMode::Brute => {
            let text = pick(args.stage.clone(), &file, "stage")
                .ok_or_else(|| Error::InvalidArgument("--stage is required".into()))?;
            let full: StageAllocation = text.parse()?;
            let tau = family.stage_code_from_full(full.counts())?;
            crate::arch::validate_stage_code(&family, &tau)?;
            (None, Some(tau))
        }
    };

    // Evaluator tables must cover every stage code and block the search can touch.
    let default_sets = default_branch_sets(&family)?;
    let mut max_count = default_sets.iter().map(BranchSet::max).max().unwrap_or(1);
    let mut blocks = family.fixed_prefix_blocks
        + default_sets.iter().map(|s| s.max() as usize).sum::<usize>()
        + family.fixed_suffix_blocks;
    if let Some(space) = &space {
        max_count = max_count.max(
            space
                .branch_sets
                .iter()
                .map(BranchSet::max)
                .max()
                .unwrap_or(1),
        );
        blocks = blocks.max(space.max_choice_blocks());
    }
    if let Some(tau) = &stage {
        max_count = max_count.max(tau.counts().iter().copied().max().unwrap_or(1));
        blocks = blocks.max(family.choice_block_count(tau));
    }
    let evaluator = build_evaluator(args, &file, &family, max_count, blocks)?;

    let report: SearchReport = match (mode, &space, &stage) {
        (SearchMode::Stage, Some(space), _) => stage_search(space, &evaluator, &config)?,
        (SearchMode::Hierarchical, Some(space), _) => {
            hierarchical_search(space, &evaluator, &config)?
        }
        (SearchMode::Op, _, Some(tau)) => {
            let resume = args
                .resume
                .clone()
                .or_else(|| file.get_leaf("resume").map(PathBuf::from));
            match resume {
                Some(path) => resume_op_search(&family, &path, &evaluator, &config)?,
                None => greedy_op_search(&family, tau, &evaluator, &config)?,
            }
        }
        (SearchMode::Brute, _, Some(tau)) => brute_force_search(&family, tau, &evaluator, &config)?,
        _ => unreachable!("search mode and inputs are resolved together"),
    };

    let label = pick(args.label.clone(), &file, "label").unwrap_or_else(|| family.name.clone());
    let record = RunRecord::new(label, space.as_ref(), model, &evaluator, report);
    let r = &record.report;
    writeln!(out, "family: {}", family.name).map_err(w)?;
    writeln!(out, "evaluator: {}", record.evaluator).map_err(w)?;
    if let Some(space) = &space {
        writeln!(
            out,
            "budget: {} (tolerance {}), {} candidates",
            space.budget,
            space.tolerance,
            r.stage_report.as_deref().unwrap_or(r).audit.checked
        )
        .map_err(w)?;
    }
    writeln!(out, "winner: {}", r.winner).map_err(w)?;
    writeln!(out, "score: {:.6}", r.winner_score).map_err(w)?;
    let weighted = weighted_block_count(&family, &r.winner.stage_code)?;
    writeln!(
        out,
        "weighted_blocks: {}  cost: {:.6}",
        weight_to_f64(&weighted),
        crate::budget::cost_of_weighted(&weighted, &model)
    )
    .map_err(w)?;
    let output = args
        .output
        .clone()
        .or_else(|| file.get_leaf("output").map(PathBuf::from));
    if let Some(path) = output {
        report::write_report(&record, &path)?;
        writeln!(out, "report: {}", path.display()).map_err(w)?;
    }
    Ok(0)
}
