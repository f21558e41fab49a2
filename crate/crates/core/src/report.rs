//! Run records, report files and scatter CSV export.
//!
//! A report file has two top-level sections. `payload` is a pure function of
//! the configuration, seed and evaluator, so two runs with the same inputs
//! produce byte-identical payloads. `meta` holds what legitimately varies
//! between runs: timestamps, wall times and the worker count.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use crate::arch::{
    parse_int_list, Architecture, BackboneFamily, OperationAssignment, StageAllocation, StemLayer,
};
use crate::budget::{cost_of_weighted, weight_to_f64, weighted_block_count, BudgetModel, Weight};
use crate::error::{Error, Result};
use crate::eval::Evaluator;
use crate::keytree::KeyTree;
use crate::search::{
    completions_text, parse_completions, parse_num, BeamStep, BudgetAudit, Candidate, SearchConfig,
    SearchKind, SearchReport,
};
use crate::space::{AllocationSpace, BranchSet};

/// Branch sets and budget of the space a stage search ran over.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceRecord {
    pub branch_sets: Vec<BranchSet>,
    pub budget: Weight,
    pub tolerance: Weight,
}

impl From<&AllocationSpace> for SpaceRecord {
    fn from(space: &AllocationSpace) -> Self {
        SpaceRecord {
            branch_sets: space.branch_sets.clone(),
            budget: space.budget,
            tolerance: space.tolerance,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub label: String,
    pub tool_version: String,
    pub family: Arc<BackboneFamily>,
    pub space: Option<SpaceRecord>,
    pub budget_model: BudgetModel,
    pub evaluator: String,
    pub seed: u64,
    pub report: SearchReport,
    pub created_unix: u64,
}

impl RunRecord {
    /// Wraps a finished search. Scores are rounded to six decimals, the
    /// precision of the report file, so a written record reads back equal.
    pub fn new(
        label: impl Into<String>,
        space: Option<&AllocationSpace>,
        budget_model: BudgetModel,
        evaluator: &dyn Evaluator,
        mut report: SearchReport,
    ) -> Self {
        canonicalize(&mut report);
        RunRecord {
            label: label.into(),
            tool_version: crate::VERSION.to_string(),
            family: report.winner.family.clone(),
            space: space.map(SpaceRecord::from),
            budget_model,
            evaluator: evaluator.describe(),
            seed: report.config.seed,
            report,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    /// Every code in the report re-validates and meets the recorded budget.
    pub fn validate(&self) -> Result<()> {
        let mut reports = vec![&self.report];
        while let Some(r) = reports.pop() {
            crate::arch::validate_architecture(&r.winner)?;
            for c in &r.ranked {
                let arch =
                    Architecture::new(self.family.clone(), c.stage_code.clone(), c.op_code.clone());
                crate::arch::validate_architecture(&arch)?;
                if let Some(space) = &self.space {
                    if !crate::budget::is_within_budget(
                        &c.stage_code,
                        &self.family,
                        space.budget,
                        space.tolerance,
                    ) {
                        return Err(Error::InvalidArgument(format!(
                            "candidate {arch} is outside the recorded budget"
                        )));
                    }
                }
            }
            reports.extend(r.stage_report.as_deref());
            reports.extend(r.op_report.as_deref());
        }
        Ok(())
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn canonicalize(report: &mut SearchReport) {
    report.winner_score = round6(report.winner_score);
    for c in &mut report.ranked {
        c.score = round6(c.score);
    }
    for step in &mut report.beam_steps {
        for (_, s) in &mut step.kept {
            *s = round6(*s);
        }
    }
    for sub in [&mut report.stage_report, &mut report.op_report]
        .into_iter()
        .flatten()
    {
        canonicalize(sub);
    }
}

fn score_text(x: f64) -> String {
    format!("{x:.6}")
}

fn weights_text(ws: &[Weight]) -> String {
    let items: Vec<String> = ws.iter().map(|w| w.to_string()).collect();
    format!("[{}]", items.join(","))
}

fn parse_weights(text: &str) -> Result<Vec<Weight>> {
    let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let inner = compact
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| Error::parse(text, "expected a bracketed list"))?;
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|s| {
            s.parse::<Weight>()
                .map_err(|_| Error::parse(text, format!("bad weight {s:?}")))
        })
        .collect()
}

fn parse_weight(text: &str) -> Result<Weight> {
    text.trim()
        .parse()
        .map_err(|_| Error::parse(text, "bad rational"))
}

fn u32_list(text: &str) -> Result<Vec<u32>> {
    parse_int_list(text)?
        .into_iter()
        .map(|v| u32::try_from(v).map_err(|_| Error::parse(text, format!("bad count {v}"))))
        .collect()
}

fn list_text<T: ToString>(items: &[T]) -> String {
    let items: Vec<String> = items.iter().map(ToString::to_string).collect();
    format!("[{}]", items.join(","))
}

pub fn family_tree(f: &BackboneFamily) -> KeyTree {
    let stem: Vec<String> = f
        .stem
        .iter()
        .map(|l| format!("{}s{}", l.kernel, l.stride))
        .collect();
    let mut t = KeyTree::node();
    t.leaf("name", &f.name)
        .leaf("num_stages", f.num_stages)
        .leaf("block_kind", f.block_kind)
        .leaf("stage_weights", weights_text(&f.stage_weights))
        .leaf("fixed_prefix_blocks", f.fixed_prefix_blocks)
        .leaf("fixed_suffix_blocks", f.fixed_suffix_blocks)
        .leaf("channel_plan", list_text(&f.channel_plan))
        .leaf("stage_strides", list_text(&f.stage_strides))
        .leaf("stem", format!("[{}]", stem.join(",")))
        .leaf("baseline", &f.baseline);
    t
}

pub fn family_from_tree(t: &KeyTree) -> Result<BackboneFamily> {
    let stem_text = t.require("stem")?;
    let inner = stem_text
        .trim()
        .trim_start_matches('[')
        .trim_end_matches(']');
    let stem = inner
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let (k, st) = s
                .trim()
                .split_once('s')
                .ok_or_else(|| Error::parse(stem_text, "expected `<kernel>s<stride>`"))?;
            Ok(StemLayer {
                kernel: parse_num(k)?,
                stride: parse_num(st)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let family = BackboneFamily {
        name: t.require("name")?.to_string(),
        num_stages: parse_num(t.require("num_stages")?)?,
        block_kind: t.require("block_kind")?.parse()?,
        stage_weights: parse_weights(t.require("stage_weights")?)?,
        fixed_prefix_blocks: parse_num(t.require("fixed_prefix_blocks")?)?,
        fixed_suffix_blocks: parse_num(t.require("fixed_suffix_blocks")?)?,
        channel_plan: u32_list(t.require("channel_plan")?)?,
        stage_strides: u32_list(t.require("stage_strides")?)?,
        stem,
        baseline: t.require("baseline")?.parse()?,
    };
    family.validate()?;
    Ok(family)
}

fn config_tree(c: &SearchConfig) -> KeyTree {
    let mut t = KeyTree::node();
    t.leaf("beam_width", c.beam_width)
        .leaf("completions", completions_text(c.completions))
        .leaf("seed", c.seed)
        .leaf("ops", list_text(&c.ops))
        .leaf("paired_sampling", c.paired_sampling)
        .leaf("checkpoint_interval", c.checkpoint_interval)
        .leaf("max_candidates", c.max_candidates);
    t
}

fn config_from_tree(t: &KeyTree, meta: &KeyTree) -> Result<SearchConfig> {
    Ok(SearchConfig {
        beam_width: parse_num(t.require("beam_width")?)?,
        completions: parse_completions(t.require("completions")?)?,
        seed: parse_num(t.require("seed")?)?,
        ops: t
            .require("ops")?
            .parse::<OperationAssignment>()?
            .codes()
            .to_vec(),
        paired_sampling: parse_num(t.require("paired_sampling")?)?,
        checkpoint_interval: parse_num(t.require("checkpoint_interval")?)?,
        max_candidates: parse_num(t.require("max_candidates")?)?,
        workers: parse_num(meta.require("workers")?)?,
        checkpoint_path: meta.get_leaf("checkpoint_path").map(PathBuf::from),
    })
}

fn audit_tree(a: &BudgetAudit) -> KeyTree {
    let mut t = KeyTree::node();
    t.leaf("target", a.target)
        .leaf("tolerance", a.tolerance)
        .leaf("checked", a.checked)
        .leaf("violations", a.violations)
        .leaf("min_weighted", a.min_weighted)
        .leaf("max_weighted", a.max_weighted);
    t
}

fn audit_from_tree(t: &KeyTree) -> Result<BudgetAudit> {
    Ok(BudgetAudit {
        target: parse_weight(t.require("target")?)?,
        tolerance: parse_weight(t.require("tolerance")?)?,
        checked: parse_num(t.require("checked")?)?,
        violations: parse_num(t.require("violations")?)?,
        min_weighted: parse_weight(t.require("min_weighted")?)?,
        max_weighted: parse_weight(t.require("max_weighted")?)?,
    })
}

fn search_tree(r: &SearchReport) -> KeyTree {
    let mut t = KeyTree::node();
    t.leaf("kind", r.kind.as_str())
        .leaf("stage_code", &r.winner.stage_code)
        .leaf("op_code", &r.winner.op_code)
        .leaf("winner_score", score_text(r.winner_score))
        .child("audit", audit_tree(&r.audit));
    for c in &r.ranked {
        let mut ct = KeyTree::node();
        ct.leaf("code", format!("{} / {}", c.stage_code, c.op_code))
            .leaf("score", score_text(c.score));
        t.child("candidate", ct);
    }
    for s in &r.beam_steps {
        let mut st = KeyTree::node();
        st.leaf("block", s.block).leaf("evaluated", s.evaluated);
        for (code, score) in &s.kept {
            st.leaf(
                "entry",
                format!("{} {}", list_text(code), score_text(*score)),
            );
        }
        t.child("step", st);
    }
    if let Some(sub) = &r.stage_report {
        t.child("stage_search", search_tree(sub));
    }
    if let Some(sub) = &r.op_report {
        t.child("op_search", search_tree(sub));
    }
    t
}

fn wall_times(r: &SearchReport, meta: &mut KeyTree) {
    meta.leaf("wall_time_ns", r.wall_time.as_nanos());
    if let Some(sub) = &r.stage_report {
        meta.leaf("stage_wall_time_ns", sub.wall_time.as_nanos());
    }
    if let Some(sub) = &r.op_report {
        meta.leaf("op_wall_time_ns", sub.wall_time.as_nanos());
    }
}

fn duration(meta: &KeyTree, key: &str) -> Result<Duration> {
    Ok(Duration::from_nanos(parse_num(meta.require(key)?)?))
}

fn search_from_tree(
    t: &KeyTree,
    family: &Arc<BackboneFamily>,
    config: &SearchConfig,
    wall_time: Duration,
    meta: &KeyTree,
) -> Result<SearchReport> {
    let candidates = t
        .all("candidate")
        .map(|c| {
            let code = c.require("code")?;
            let (stage, ops) = code
                .split_once('/')
                .ok_or_else(|| Error::parse(code, "expected `stage / ops`"))?;
            Ok(Candidate {
                stage_code: stage.parse()?,
                op_code: ops.parse()?,
                score: parse_num(c.require("score")?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let steps = t
        .all("step")
        .map(|s| {
            let kept = s
                .all("entry")
                .map(|e| {
                    let text = e.as_leaf().unwrap_or_default();
                    let (code, score) = text
                        .rsplit_once(' ')
                        .ok_or_else(|| Error::parse(text, "expected `[codes] score`"))?;
                    let code: OperationAssignment = code.parse()?;
                    Ok((code.codes().to_vec(), parse_num(score)?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(BeamStep {
                block: parse_num(s.require("block")?)?,
                evaluated: parse_num(s.require("evaluated")?)?,
                kept,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let stage_code: StageAllocation = t.require("stage_code")?.parse()?;
    let op_code: OperationAssignment = t.require("op_code")?.parse()?;
    let stage_report = match t.get("stage_search") {
        Some(sub) => Some(Box::new(search_from_tree(
            sub,
            family,
            config,
            duration(meta, "stage_wall_time_ns")?,
            meta,
        )?)),
        None => None,
    };
    let op_report = match t.get("op_search") {
        Some(sub) => Some(Box::new(search_from_tree(
            sub,
            family,
            config,
            duration(meta, "op_wall_time_ns")?,
            meta,
        )?)),
        None => None,
    };
    Ok(SearchReport {
        kind: SearchKind::parse(t.require("kind")?)?,
        winner: Architecture::new(family.clone(), stage_code, op_code),
        winner_score: parse_num(t.require("winner_score")?)?,
        ranked: candidates,
        beam_steps: steps,
        audit: audit_from_tree(t.require_node("audit")?)?,
        config: config.clone(),
        wall_time,
        stage_report,
        op_report,
    })
}

/// The deterministic `payload` section.
pub fn payload_tree(record: &RunRecord) -> KeyTree {
    let mut p = KeyTree::node();
    p.leaf("label", &record.label)
        .leaf("tool_version", &record.tool_version)
        .leaf("seed", record.seed)
        .leaf("evaluator", &record.evaluator)
        .child("family", family_tree(&record.family));
    if let Some(space) = &record.space {
        let mut s = KeyTree::node();
        s.leaf("budget", space.budget)
            .leaf("tolerance", space.tolerance);
        for set in &space.branch_sets {
            s.leaf("branch_set", list_text(set.counts()));
        }
        p.child("space", s);
    }
    let mut bm = KeyTree::node();
    bm.leaf(
        "reference_block_cost",
        record.budget_model.reference_block_cost,
    )
    .leaf("fixed_overhead", record.budget_model.fixed_overhead);
    p.child("budget_model", bm)
        .child("config", config_tree(&record.report.config))
        .child("search", search_tree(&record.report));
    p
}

pub fn payload_text(record: &RunRecord) -> String {
    payload_tree(record).render()
}

pub fn render_report(record: &RunRecord) -> String {
    let mut meta = KeyTree::node();
    meta.leaf("created_unix", record.created_unix)
        .leaf("workers", record.report.config.workers);
    if let Some(path) = &record.report.config.checkpoint_path {
        meta.leaf("checkpoint_path", path.display());
    }
    wall_times(&record.report, &mut meta);
    let mut root = KeyTree::node();
    root.child("meta", meta)
        .child("payload", payload_tree(record));
    format!("# realloc-nas run record\n{}", root.render())
}

pub fn parse_report(text: &str, source: &str) -> Result<RunRecord> {
    let with_source = |e: Error| match e {
        Error::Format { path, line, reason } if path.is_empty() => Error::Format {
            path: source.to_string(),
            line,
            reason,
        },
        other => other,
    };
    (|| {
        let root = KeyTree::parse(text, source)?;
        let meta = root.require_node("meta")?;
        let p = root.require_node("payload")?;
        let family = Arc::new(family_from_tree(p.require_node("family")?)?);
        let space = match p.get("space") {
            Some(s) => Some(SpaceRecord {
                budget: parse_weight(s.require("budget")?)?,
                tolerance: parse_weight(s.require("tolerance")?)?,
                branch_sets: s
                    .all("branch_set")
                    .map(|b| BranchSet::new(u32_list(b.as_leaf().unwrap_or_default())?))
                    .collect::<Result<Vec<_>>>()?,
            }),
            None => None,
        };
        let bm = p.require_node("budget_model")?;
        let config = config_from_tree(p.require_node("config")?, meta)?;
        let report = search_from_tree(
            p.require_node("search")?,
            &family,
            &config,
            duration(meta, "wall_time_ns")?,
            meta,
        )?;
        Ok(RunRecord {
            label: p.require("label")?.to_string(),
            tool_version: p.require("tool_version")?.to_string(),
            family,
            space,
            budget_model: BudgetModel::new(
                parse_num(bm.require("reference_block_cost")?)?,
                parse_num(bm.require("fixed_overhead")?)?,
            )?,
            evaluator: p.require("evaluator")?.to_string(),
            seed: parse_num(p.require("seed")?)?,
            report,
            created_unix: parse_num(meta.require("created_unix")?)?,
        })
    })()
    .map_err(with_source)
}

pub fn write_report(record: &RunRecord, path: &Path) -> Result<()> {
    write_atomic(path, render_report(record).as_bytes())
}

pub fn read_report(path: &Path) -> Result<RunRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_report(&text, &path.display().to_string())
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place. A failed write leaves no partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub const SCATTER_HEADER: [&str; 4] = ["name", "weighted_blocks", "cost", "score"];

/// One CSV row per record winner. Scores are written as percentages.
pub fn scatter_csv(records: &[RunRecord]) -> Result<Vec<u8>> {
    if let Some(first) = records.first() {
        if records.iter().any(|r| r.budget_model != first.budget_model) {
            return Err(Error::MixedBudgetModels);
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SCATTER_HEADER)?;
    for r in records {
        let weighted = weighted_block_count(&r.family, &r.report.winner.stage_code)?;
        let cost = cost_of_weighted(&weighted, &r.budget_model);
        w.write_record([
            r.label.clone(),
            format!("{}", weight_to_f64(&weighted)),
            format!("{cost:.6}"),
            format!("{:.4}", r.report.winner_score * 100.0),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::io(PathBuf::from("<csv>"), e.into_error()))
}

pub fn export_scatter(records: &[RunRecord], path: &Path) -> Result<()> {
    write_atomic(path, &scatter_csv(records)?)
}
