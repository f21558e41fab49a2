//! C ABI for realloc-nas.
//!
//! Objects cross the boundary as opaque handles created by `rn_*_new` /
//! `rn_*_builtin` style constructors and released with the matching
//! `rn_*_free`. Every fallible function returns an [`RnStatus`]; on failure
//! a description is available from [`rn_last_error`] on the same thread.
//! Strings returned through `char **` out-parameters are owned by the caller
//! and must be released with [`rn_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use realloc_nas::arch::{builtin_family, validate_architecture};
use realloc_nas::eval::{synth, SeparableUtility, TableEvaluator};
use realloc_nas::report::{render_report, write_report, RunRecord};
use realloc_nas::rf::{arch_to_layer_chain, theoretical_rf};
use realloc_nas::search::resume_op_search;
use realloc_nas::{
    backbone_cost, brute_force_search, count_allocations, enumerate_allocations, format_codes,
    greedy_op_search, hierarchical_search, parse_codes, stage_search, AllocationSpace,
    Architecture, BackboneFamily, BudgetModel, Completions, Error, EvaluatorSpec, SearchConfig,
    StageAllocation, Weight,
};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RnStatus {
    Ok = 0,
    /// Null pointer, non-UTF-8 string or out-of-range parameter.
    InvalidArgument = 1,
    /// Code text could not be parsed.
    Parse = 2,
    /// A code or family violates its invariants.
    Validation = 3,
    /// No stage code meets the budget.
    NoCandidates = 4,
    /// Brute force was asked for more candidates than allowed.
    SpaceTooLarge = 5,
    /// The evaluator cannot score a requested architecture.
    Evaluator = 6,
    Io = 7,
    /// A Rust panic was caught at the boundary.
    Panic = 8,
}

impl From<&Error> for RnStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Parse { .. } | Error::OutOfRangeCode { .. } | Error::Format { .. } => {
                RnStatus::Parse
            }
            Error::Validation(_)
            | Error::UnknownFamily(_)
            | Error::InvalidFamily { .. }
            | Error::InvalidSpace(_) => RnStatus::Validation,
            Error::NoCandidates => RnStatus::NoCandidates,
            Error::SpaceTooLarge { .. } => RnStatus::SpaceTooLarge,
            Error::MissingEntry(_) | Error::Uncovered(_) => RnStatus::Evaluator,
            Error::Io { .. } | Error::Csv(_) => RnStatus::Io,
            _ => RnStatus::InvalidArgument,
        }
    }
}

/// Backbone family handle.
pub struct RnFamily(Arc<BackboneFamily>);

/// Allocation space handle.
pub struct RnSpace(AllocationSpace);

/// Evaluator handle.
pub struct RnEvaluator(EvaluatorSpec);

/// Finished search run.
pub struct RnReport(RunRecord);

/// Search settings. Obtain defaults from [`rn_search_config_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct RnSearchConfig {
    pub beam_width: u32,
    /// Sampled completions per partial code; 0 means every completion.
    pub completions: u32,
    pub seed: u64,
    pub workers: u32,
    pub paired_sampling: bool,
    pub max_candidates: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
}

struct Fail(RnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(RnStatus::from(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(RnStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording failures and catching panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            RnStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            RnStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| invalid(format!("{what} is null")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| invalid(format!("{what} is null")))
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

fn c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| invalid("string contains NUL"))
}

/// Full `[stage] / [ops]` text, or a bare stage code with normal convs.
fn architecture(text: &str, family: &Arc<BackboneFamily>) -> Result<Architecture, Fail> {
    if text.contains('/') {
        return Ok(parse_codes(text, family)?);
    }
    let full: StageAllocation = text.parse()?;
    let arch = family.plain(family.stage_code_from_full(full.counts())?);
    validate_architecture(&arch).map_err(Error::from)?;
    Ok(arch)
}

fn weight(num: i64, den: i64) -> Result<Weight, Fail> {
    if den <= 0 {
        return Err(invalid(format!(
            "budget denominator must be positive, got {den}"
        )));
    }
    Ok(Weight::new(num, den))
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn rn_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn rn_version() -> *const c_char {
    static VERSION: &CStr =
        match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
            Ok(s) => s,
            Err(_) => c"unknown",
        };
    VERSION.as_ptr()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a string from a `char **` out-parameter of this
/// library that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn rn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Looks up a built-in family: `resnet_basic`, `resnet_bottleneck`,
/// `resnext` or `mobilenetv2`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rn_family_builtin(
    name: *const c_char,
    out: *mut *mut RnFamily,
) -> RnStatus {
    guard(|| {
        let out = self::out(out, "out")?;
        let family = builtin_family(str_arg(name, "name")?)?;
        *out = boxed(RnFamily(family));
        Ok(())
    })
}

/// # Safety
/// `family` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rn_family_free(family: *mut RnFamily) {
    if !family.is_null() {
        drop(Box::from_raw(family));
    }
}

/// Number of searchable stages.
///
/// # Safety
/// `family` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rn_family_num_stages(family: *const RnFamily, out: *mut u32) -> RnStatus {
    guard(|| {
        *self::out(out, "out")? = handle(family, "family")?.0.num_stages as u32;
        Ok(())
    })
}

/// Parses and validates `[stage code] / [op code]` (or a bare stage code)
/// and writes the canonical text to `*normalized`.
///
/// # Safety
/// `family` must be a live handle, `text` NUL-terminated, `normalized` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_parse_codes(
    family: *const RnFamily,
    text: *const c_char,
    normalized: *mut *mut c_char,
) -> RnStatus {
    guard(|| {
        let normalized = out(normalized, "normalized")?;
        let arch = architecture(str_arg(text, "text")?, &handle(family, "family")?.0)?;
        *normalized = c_string(format_codes(&arch))?;
        Ok(())
    })
}

/// Relative backbone cost of a code under `fixed_overhead + ref_cost * weighted blocks`.
///
/// # Safety
/// `family` must be a live handle, `text` NUL-terminated, `cost` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_cost(
    family: *const RnFamily,
    text: *const c_char,
    ref_cost: f64,
    fixed_overhead: f64,
    cost: *mut f64,
) -> RnStatus {
    guard(|| {
        let cost = out(cost, "cost")?;
        let arch = architecture(str_arg(text, "text")?, &handle(family, "family")?.0)?;
        *cost = backbone_cost(&arch, &BudgetModel::new(ref_cost, fixed_overhead)?)?;
        Ok(())
    })
}

/// Theoretical receptive field at the output of searchable stage `stage`
/// (1-based; 0 is the stem).
///
/// # Safety
/// `family` must be a live handle, `text` NUL-terminated, `trf` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_theoretical_rf(
    family: *const RnFamily,
    text: *const c_char,
    stage: u32,
    trf: *mut u64,
) -> RnStatus {
    guard(|| {
        let trf = out(trf, "trf")?;
        let arch = architecture(str_arg(text, "text")?, &handle(family, "family")?.0)?;
        *trf = theoretical_rf(&arch_to_layer_chain(&arch, stage as usize)?);
        Ok(())
    })
}

/// Space of stage codes with the family's default branch sets and weighted
/// block count within `tolerance` of `budget`, both given as fractions.
///
/// # Safety
/// `family` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_space_new(
    family: *const RnFamily,
    budget_num: i64,
    budget_den: i64,
    tolerance_num: i64,
    tolerance_den: i64,
    out: *mut *mut RnSpace,
) -> RnStatus {
    guard(|| {
        let out = self::out(out, "out")?;
        let mut space = AllocationSpace::with_default_branches(
            handle(family, "family")?.0.clone(),
            weight(budget_num, budget_den)?,
        )?;
        space.tolerance = weight(tolerance_num, tolerance_den)?;
        if space.tolerance < Weight::from_integer(0) {
            return Err(invalid("tolerance must be nonnegative"));
        }
        *out = boxed(RnSpace(space));
        Ok(())
    })
}

/// # Safety
/// `space` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rn_space_free(space: *mut RnSpace) {
    if !space.is_null() {
        drop(Box::from_raw(space));
    }
}

/// Number of stage codes in the space.
///
/// # Safety
/// `space` must be a live handle and `count` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_space_count(space: *const RnSpace, count: *mut u64) -> RnStatus {
    guard(|| {
        let count = out(count, "count")?;
        let n = count_allocations(&handle(space, "space")?.0);
        *count = u64::try_from(n).map_err(|_| invalid(format!("{n} codes overflow 64 bits")))?;
        Ok(())
    })
}

/// All stage codes, one per line in lexicographic order.
///
/// # Safety
/// `space` must be a live handle and `codes` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_space_codes(
    space: *const RnSpace,
    codes: *mut *mut c_char,
) -> RnStatus {
    guard(|| {
        let codes = out(codes, "codes")?;
        let mut text = String::new();
        for tau in enumerate_allocations(&handle(space, "space")?.0) {
            text.push_str(&tau.to_string());
            text.push('\n');
        }
        *codes = c_string(text)?;
        Ok(())
    })
}

fn coverage(family: &BackboneFamily) -> (u32, usize) {
    // Large enough for any code the default branch sets can produce.
    let sets = realloc_nas::space::default_branch_sets(family).ok();
    let max_count = sets
        .as_ref()
        .and_then(|s| s.iter().map(|b| b.max()).max())
        .unwrap_or(32);
    let blocks = family.fixed_prefix_blocks
        + family.fixed_suffix_blocks
        + sets.map_or(128, |s| s.iter().map(|b| b.max() as usize).sum());
    (max_count, blocks)
}

/// Evaluator that scores every architecture `base`.
///
/// # Safety
/// `family` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_evaluator_constant(
    family: *const RnFamily,
    base: f64,
    out: *mut *mut RnEvaluator,
) -> RnStatus {
    guard(|| {
        let out = self::out(out, "out")?;
        let f = &handle(family, "family")?.0;
        let (max_count, blocks) = coverage(f);
        let u = SeparableUtility::constant(base, f.num_stages, max_count, blocks);
        *out = boxed(RnEvaluator(EvaluatorSpec::Separable(u)));
        Ok(())
    })
}

/// The built-in hand-shaped surrogate evaluator.
///
/// # Safety
/// `family` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_evaluator_surrogate(
    family: *const RnFamily,
    out: *mut *mut RnEvaluator,
) -> RnStatus {
    guard(|| {
        let out = self::out(out, "out")?;
        let f = &handle(family, "family")?.0;
        let (max_count, blocks) = coverage(f);
        *out = boxed(RnEvaluator(EvaluatorSpec::Separable(synth::surrogate(
            f, max_count, blocks,
        ))));
        Ok(())
    })
}

/// Score table read from a `code<TAB>score` file.
///
/// # Safety
/// `family` must be a live handle, `path` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_evaluator_table(
    family: *const RnFamily,
    path: *const c_char,
    out: *mut *mut RnEvaluator,
) -> RnStatus {
    guard(|| {
        let out = self::out(out, "out")?;
        let table = TableEvaluator::load(
            Path::new(str_arg(path, "path")?),
            &handle(family, "family")?.0,
        )?;
        *out = boxed(RnEvaluator(EvaluatorSpec::Table(table)));
        Ok(())
    })
}

/// A copy of `inner` with Gaussian noise of standard deviation `stddev`
/// added to every evaluation. `inner` stays owned by the caller.
///
/// # Safety
/// `inner` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_evaluator_noisy(
    inner: *const RnEvaluator,
    stddev: f64,
    out: *mut *mut RnEvaluator,
) -> RnStatus {
    guard(|| {
        let out = self::out(out, "out")?;
        let spec = EvaluatorSpec::noisy(handle(inner, "inner")?.0.clone(), stddev)?;
        *out = boxed(RnEvaluator(spec));
        Ok(())
    })
}

/// # Safety
/// `evaluator` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rn_evaluator_free(evaluator: *mut RnEvaluator) {
    if !evaluator.is_null() {
        drop(Box::from_raw(evaluator));
    }
}

/// Default search settings.
#[no_mangle]
pub extern "C" fn rn_search_config_default() -> RnSearchConfig {
    let d = SearchConfig::default();
    RnSearchConfig {
        beam_width: d.beam_width as u32,
        completions: match d.completions {
            Completions::Sampled(n) => n,
            Completions::Exhaustive => 0,
        },
        seed: d.seed,
        workers: d.workers as u32,
        paired_sampling: d.paired_sampling,
        max_candidates: d.max_candidates,
    }
}

unsafe fn config_arg(config: *const RnSearchConfig) -> Result<SearchConfig, Fail> {
    let c = match config.as_ref() {
        Some(c) => *c,
        None => rn_search_config_default(),
    };
    let config = SearchConfig {
        beam_width: c.beam_width as usize,
        completions: match c.completions {
            0 => Completions::Exhaustive,
            n => Completions::Sampled(n),
        },
        seed: c.seed,
        workers: c.workers.max(1) as usize,
        paired_sampling: c.paired_sampling,
        max_candidates: c.max_candidates,
        ..SearchConfig::default()
    };
    config.validate()?;
    Ok(config)
}

/// Search over a space. `kind` is 0 for stage search, 1 for hierarchical
/// (stage then operation) search. `config` may be NULL for defaults.
///
/// # Safety
/// Handles must be live, `config` NULL or readable, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_search_space(
    space: *const RnSpace,
    evaluator: *const RnEvaluator,
    config: *const RnSearchConfig,
    kind: u32,
    out: *mut *mut RnReport,
) -> RnStatus {
    guard(|| {
        let out = self::out(out, "out")?;
        let space = &handle(space, "space")?.0;
        let eval = &handle(evaluator, "evaluator")?.0;
        let config = config_arg(config)?;
        let report = match kind {
            0 => stage_search(space, eval, &config)?,
            1 => hierarchical_search(space, eval, &config)?,
            k => return Err(invalid(format!("unknown space search kind {k}"))),
        };
        *out = boxed(RnReport(RunRecord::new(
            "ffi",
            Some(space),
            BudgetModel::default(),
            eval,
            report,
        )));
        Ok(())
    })
}

/// Operation search for a fixed stage code. `kind` is 0 for greedy beam
/// search, 1 for brute force. `stage` is the searchable or full stage code.
///
/// # Safety
/// Handles must be live, `stage` NUL-terminated, `config` NULL or readable,
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_search_ops(
    family: *const RnFamily,
    stage: *const c_char,
    evaluator: *const RnEvaluator,
    config: *const RnSearchConfig,
    kind: u32,
    out: *mut *mut RnReport,
) -> RnStatus {
    guard(|| {
        let out = self::out(out, "out")?;
        let family = &handle(family, "family")?.0;
        let eval = &handle(evaluator, "evaluator")?.0;
        let full: StageAllocation = str_arg(stage, "stage")?.parse()?;
        let tau = family.stage_code_from_full(full.counts())?;
        let config = config_arg(config)?;
        let report = match kind {
            0 => greedy_op_search(family, &tau, eval, &config)?,
            1 => brute_force_search(family, &tau, eval, &config)?,
            k => return Err(invalid(format!("unknown operation search kind {k}"))),
        };
        *out = boxed(RnReport(RunRecord::new(
            "ffi",
            None,
            BudgetModel::default(),
            eval,
            report,
        )));
        Ok(())
    })
}

/// Continues a greedy operation search from a checkpoint file.
///
/// # Safety
/// Handles must be live, `checkpoint` NUL-terminated, `config` NULL or
/// readable, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_search_ops_resume(
    family: *const RnFamily,
    checkpoint: *const c_char,
    evaluator: *const RnEvaluator,
    config: *const RnSearchConfig,
    out: *mut *mut RnReport,
) -> RnStatus {
    guard(|| {
        let out = self::out(out, "out")?;
        let family = &handle(family, "family")?.0;
        let eval = &handle(evaluator, "evaluator")?.0;
        let config = config_arg(config)?;
        let report = resume_op_search(
            family,
            Path::new(str_arg(checkpoint, "checkpoint")?),
            eval,
            &config,
        )?;
        *out = boxed(RnReport(RunRecord::new(
            "ffi",
            None,
            BudgetModel::default(),
            eval,
            report,
        )));
        Ok(())
    })
}

/// # Safety
/// `report` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rn_report_free(report: *mut RnReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Winning architecture as `[stage code] / [op code]` and its score.
///
/// # Safety
/// `report` must be a live handle; `code` and `score` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_report_winner(
    report: *const RnReport,
    code: *mut *mut c_char,
    score: *mut f64,
) -> RnStatus {
    guard(|| {
        let code = out(code, "code")?;
        let score = out(score, "score")?;
        let r = &handle(report, "report")?.0.report;
        *code = c_string(format_codes(&r.winner))?;
        *score = r.winner_score;
        Ok(())
    })
}

/// The full report in the key-tree text format.
///
/// # Safety
/// `report` must be a live handle and `text` writable.
#[no_mangle]
pub unsafe extern "C" fn rn_report_text(
    report: *const RnReport,
    text: *mut *mut c_char,
) -> RnStatus {
    guard(|| {
        let text = out(text, "text")?;
        *text = c_string(render_report(&handle(report, "report")?.0))?;
        Ok(())
    })
}

/// Writes the report atomically to `path`.
///
/// # Safety
/// `report` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rn_report_write(report: *const RnReport, path: *const c_char) -> RnStatus {
    guard(|| {
        write_report(
            &handle(report, "report")?.0,
            Path::new(str_arg(path, "path")?),
        )?;
        Ok(())
    })
}
