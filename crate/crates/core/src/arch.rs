//! Architecture genotypes and backbone families.
//!
//! An [`Architecture`] is a stage code (blocks per searchable stage) plus an
//! operation code (one dilation choice per block). The text form used in
//! reports and on the command line is two bracketed lists joined by `/`:
//!
//! ```text
//! [1,3,5,7] / [0,0,1,0,0,0,1,2,0,0,1,0,2,1,1,2]
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_rational::Ratio;

use crate::budget::Weight;
use crate::error::{Error, Result};
use crate::NUM_OPS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockKind {
    /// Two 3x3 convs; the second one carries the dilation.
    Basic,
    /// 1x1, 3x3, 1x1; the center conv carries the dilation.
    Bottleneck,
    /// Bottleneck with a grouped center conv (ResNeXt).
    GroupedBottleneck,
    /// 1x1 expand, depthwise 3x3, 1x1 project (MobileNetV2).
    InvertedResidual,
}

impl BlockKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockKind::Basic => "basic",
            BlockKind::Bottleneck => "bottleneck",
            BlockKind::GroupedBottleneck => "grouped_bottleneck",
            BlockKind::InvertedResidual => "inverted_residual",
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "basic" => Ok(BlockKind::Basic),
            "bottleneck" => Ok(BlockKind::Bottleneck),
            "grouped_bottleneck" => Ok(BlockKind::GroupedBottleneck),
            "inverted_residual" => Ok(BlockKind::InvertedResidual),
            other => Err(Error::InvalidArgument(format!(
                "unknown block kind {other:?}"
            ))),
        }
    }
}

/// A fixed (non-searchable) layer ahead of the first stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StemLayer {
    pub kernel: u32,
    pub stride: u32,
}

/// Parametric description of a backbone series.
///
/// `stage_weights` is the cost of one block in each stage relative to a
/// reference block. Channel counts double whenever resolution halves, so for
/// ResNet-style families every weight is 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneFamily {
    pub name: String,
    pub num_stages: usize,
    pub block_kind: BlockKind,
    pub stage_weights: Vec<Weight>,
    /// Blocks before the first searchable stage (one block each).
    pub fixed_prefix_blocks: usize,
    /// Blocks after the last searchable stage (one block each).
    pub fixed_suffix_blocks: usize,
    pub channel_plan: Vec<u32>,
    /// Stride applied by the first block of each stage.
    pub stage_strides: Vec<u32>,
    pub stem: Vec<StemLayer>,
    /// Stage code of the hand-designed reference network.
    pub baseline: StageAllocation,
}

impl BackboneFamily {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::InvalidFamily {
            name: self.name.clone(),
            reason,
        };
        if self.num_stages == 0 {
            return Err(fail("no searchable stages".into()));
        }
        for (what, len) in [
            ("stage_weights", self.stage_weights.len()),
            ("channel_plan", self.channel_plan.len()),
            ("stage_strides", self.stage_strides.len()),
        ] {
            if len != self.num_stages {
                return Err(fail(format!(
                    "{what} has {len} entries, expected {}",
                    self.num_stages
                )));
            }
        }
        if let Some(i) = self
            .stage_weights
            .iter()
            .position(|w| *w <= Weight::from_integer(0))
        {
            return Err(fail(format!("stage weight {i} is not positive")));
        }
        if self.stage_strides.contains(&0) || self.stem.iter().any(|l| l.stride == 0) {
            return Err(fail("strides must be at least 1".into()));
        }
        if self.stem.iter().any(|l| l.kernel % 2 == 0) {
            return Err(fail("stem kernels must be odd".into()));
        }
        check_stage_code(self, &self.baseline).map_err(|v| fail(format!("baseline: {v}")))
    }

    /// Number of blocks that carry an operation choice under `tau`.
    pub fn choice_block_count(&self, tau: &StageAllocation) -> usize {
        self.fixed_prefix_blocks + tau.total_blocks() as usize + self.fixed_suffix_blocks
    }

    /// Per-stage block vector including the fixed one-block prefix and suffix
    /// stages, e.g. `[1,1,2,3,4,3,3,1,1,1]` for the MobileNetV2 baseline.
    pub fn full_block_vector(&self, tau: &StageAllocation) -> Vec<u32> {
        let mut v = vec![1; self.fixed_prefix_blocks];
        v.extend_from_slice(tau.counts());
        v.extend(std::iter::repeat_n(1, self.fixed_suffix_blocks));
        v
    }

    /// Inverse of [`full_block_vector`](Self::full_block_vector). Accepts a
    /// plain searchable stage code as well.
    pub fn stage_code_from_full(&self, full: &[u32]) -> Result<StageAllocation> {
        if full.len() == self.num_stages {
            return Ok(StageAllocation::new(full.to_vec()));
        }
        let expected = self.fixed_prefix_blocks + self.num_stages + self.fixed_suffix_blocks;
        if full.len() != expected {
            return Err(Violation::StageCountMismatch {
                expected: self.num_stages,
                found: full.len(),
            }
            .into());
        }
        let fixed = full[..self.fixed_prefix_blocks]
            .iter()
            .chain(&full[self.fixed_prefix_blocks + self.num_stages..]);
        if fixed.clone().any(|&c| c != 1) {
            return Err(Error::InvalidArgument(format!(
                "fixed stem and tail stages of {} must hold one block each",
                self.name
            )));
        }
        Ok(StageAllocation::new(
            full[self.fixed_prefix_blocks..self.fixed_prefix_blocks + self.num_stages].to_vec(),
        ))
    }

    /// Architecture with every block using a normal (dilation 1) conv.
    pub fn plain(self: &Arc<Self>, tau: StageAllocation) -> Architecture {
        let ops = OperationAssignment::zeros(self.choice_block_count(&tau));
        Architecture::new(self.clone(), tau, ops)
    }
}

/// Blocks per searchable stage.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct StageAllocation(Vec<u32>);

impl StageAllocation {
    pub fn new(counts: Vec<u32>) -> Self {
        StageAllocation(counts)
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total_blocks(&self) -> u32 {
        self.0.iter().sum()
    }
}

impl From<Vec<u32>> for StageAllocation {
    fn from(v: Vec<u32>) -> Self {
        StageAllocation(v)
    }
}

impl fmt::Display for StageAllocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_list(f, &self.0)
    }
}

impl FromStr for StageAllocation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let values = parse_int_list(s)?;
        values
            .into_iter()
            .map(|v| u32::try_from(v).map_err(|_| Error::parse(s, format!("bad block count {v}"))))
            .collect::<Result<Vec<_>>>()
            .map(StageAllocation)
    }
}

/// One operation code per choice block; code `c` selects dilation `c + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct OperationAssignment(Vec<u8>);

impl OperationAssignment {
    pub fn new(ops: Vec<u8>) -> Self {
        OperationAssignment(ops)
    }

    pub fn zeros(len: usize) -> Self {
        OperationAssignment(vec![0; len])
    }

    pub fn codes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dilation(&self, block: usize) -> u32 {
        u32::from(self.0[block]) + 1
    }
}

impl From<Vec<u8>> for OperationAssignment {
    fn from(v: Vec<u8>) -> Self {
        OperationAssignment(v)
    }
}

impl fmt::Display for OperationAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_list(f, &self.0)
    }
}

impl FromStr for OperationAssignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_int_list(s)?
            .into_iter()
            .enumerate()
            .map(|(position, value)| {
                if (0..i64::from(NUM_OPS)).contains(&value) {
                    Ok(value as u8)
                } else {
                    Err(Error::OutOfRangeCode { position, value })
                }
            })
            .collect::<Result<Vec<_>>>()
            .map(OperationAssignment)
    }
}

/// A concrete subnetwork: family, stage code and operation code.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub family: Arc<BackboneFamily>,
    pub stage_code: StageAllocation,
    pub op_code: OperationAssignment,
}

impl Architecture {
    pub fn new(
        family: Arc<BackboneFamily>,
        stage_code: StageAllocation,
        op_code: OperationAssignment,
    ) -> Self {
        Architecture {
            family,
            stage_code,
            op_code,
        }
    }

    pub fn choice_block_count(&self) -> usize {
        self.family.choice_block_count(&self.stage_code)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} / {}", self.stage_code, self.op_code)
    }
}

/// First violated architecture invariant.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum Violation {
    #[error("stage code has {found} entries, family expects {expected}")]
    StageCountMismatch { expected: usize, found: usize },
    #[error("stage {stage} has zero blocks")]
    ZeroBlockStage { stage: usize },
    #[error("operation code has {found} entries, architecture has {expected} choice blocks")]
    LengthMismatch { expected: usize, found: usize },
    #[error("operation code {value} at position {position} is out of range")]
    BadCode { position: usize, value: u8 },
}

fn check_stage_code(family: &BackboneFamily, tau: &StageAllocation) -> Result<(), Violation> {
    if tau.len() != family.num_stages {
        return Err(Violation::StageCountMismatch {
            expected: family.num_stages,
            found: tau.len(),
        });
    }
    if let Some(stage) = tau.counts().iter().position(|&c| c == 0) {
        return Err(Violation::ZeroBlockStage { stage });
    }
    Ok(())
}

pub fn validate_stage_code(
    family: &BackboneFamily,
    tau: &StageAllocation,
) -> Result<(), Violation> {
    check_stage_code(family, tau)
}

pub fn validate_architecture(arch: &Architecture) -> Result<(), Violation> {
    check_stage_code(&arch.family, &arch.stage_code)?;
    let expected = arch.choice_block_count();
    if arch.op_code.len() != expected {
        return Err(Violation::LengthMismatch {
            expected,
            found: arch.op_code.len(),
        });
    }
    if let Some(position) = arch.op_code.codes().iter().position(|&c| c >= NUM_OPS) {
        return Err(Violation::BadCode {
            position,
            value: arch.op_code.codes()[position],
        });
    }
    Ok(())
}

/// Parses `"[stage,...] / [op,...]"` and validates the result against `family`.
///
/// The stage list may be given either as the searchable stage code or as the
/// full block vector including fixed stem and tail stages.
pub fn parse_codes(text: &str, family: &Arc<BackboneFamily>) -> Result<Architecture> {
    let (stage_text, op_text) = text
        .split_once('/')
        .ok_or_else(|| Error::parse(text, "expected `[stage code] / [operation code]`"))?;
    if op_text.contains('/') {
        return Err(Error::parse(text, "more than one `/` separator"));
    }
    let full: StageAllocation = stage_text.parse()?;
    let op_code: OperationAssignment = op_text.parse()?;
    let stage_code = family.stage_code_from_full(full.counts())?;
    let arch = Architecture::new(family.clone(), stage_code, op_code);
    validate_architecture(&arch)?;
    Ok(arch)
}

pub fn format_codes(arch: &Architecture) -> String {
    arch.to_string()
}

/// Parses a bracketed, comma separated integer list. Whitespace is ignored.
pub fn parse_int_list(text: &str) -> Result<Vec<i64>> {
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
        .map(|item| {
            item.parse::<i64>()
                .map_err(|_| Error::parse(text, format!("bad integer {item:?}")))
        })
        .collect()
}

fn write_list<T: fmt::Display>(f: &mut fmt::Formatter<'_>, items: &[T]) -> fmt::Result {
    f.write_str("[")?;
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(",")?;
        }
        write!(f, "{item}")?;
    }
    f.write_str("]")
}

fn uniform(n: usize) -> Vec<Weight> {
    vec![Weight::from_integer(1); n]
}

fn resnet(name: &str, kind: BlockKind, channels: [u32; 4], baseline: [u32; 4]) -> BackboneFamily {
    BackboneFamily {
        name: name.to_string(),
        num_stages: 4,
        block_kind: kind,
        stage_weights: uniform(4),
        fixed_prefix_blocks: 0,
        fixed_suffix_blocks: 0,
        channel_plan: channels.to_vec(),
        stage_strides: vec![1, 2, 2, 2],
        // 7x7/2 conv followed by 3x3/2 max pooling.
        stem: vec![
            StemLayer {
                kernel: 7,
                stride: 2,
            },
            StemLayer {
                kernel: 3,
                stride: 2,
            },
        ],
        baseline: StageAllocation::new(baseline.to_vec()),
    }
}

fn mobilenetv2() -> BackboneFamily {
    BackboneFamily {
        name: "mobilenetv2".to_string(),
        num_stages: 5,
        block_kind: BlockKind::InvertedResidual,
        stage_weights: vec![
            Ratio::new(3, 2),
            Weight::from_integer(1),
            Weight::from_integer(1),
            Ratio::new(3, 4),
            Ratio::new(5, 4),
        ],
        fixed_prefix_blocks: 2,
        fixed_suffix_blocks: 3,
        channel_plan: vec![24, 32, 64, 96, 160],
        stage_strides: vec![2, 2, 2, 1, 2],
        stem: vec![StemLayer {
            kernel: 3,
            stride: 2,
        }],
        baseline: StageAllocation::new(vec![2, 3, 4, 3, 3]),
    }
}

/// The built-in families, keyed by name.
pub fn builtin_families() -> BTreeMap<String, Arc<BackboneFamily>> {
    [
        resnet(
            "resnet_basic",
            BlockKind::Basic,
            [64, 128, 256, 512],
            [2, 2, 2, 2],
        ),
        resnet(
            "resnet_bottleneck",
            BlockKind::Bottleneck,
            [256, 512, 1024, 2048],
            [3, 4, 6, 3],
        ),
        resnet(
            "resnext",
            BlockKind::GroupedBottleneck,
            [256, 512, 1024, 2048],
            [3, 4, 6, 3],
        ),
        mobilenetv2(),
    ]
    .into_iter()
    .map(|f| (f.name.clone(), Arc::new(f)))
    .collect()
}

pub fn builtin_family(name: &str) -> Result<Arc<BackboneFamily>> {
    builtin_families()
        .remove(name)
        .ok_or_else(|| Error::UnknownFamily(name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn family(name: &str) -> Arc<BackboneFamily> {
        builtin_family(name).unwrap()
    }

    #[test]
    fn builtins_are_valid() {
        let families = builtin_families();
        for name in [
            "resnet_basic",
            "resnet_bottleneck",
            "resnext",
            "mobilenetv2",
        ] {
            families[name].validate().unwrap();
        }
        assert_eq!(
            families["resnet_bottleneck"].baseline.counts(),
            &[3, 4, 6, 3]
        );
        assert_eq!(families["resnet_basic"].baseline.counts(), &[2, 2, 2, 2]);
        let mv2 = &families["mobilenetv2"];
        assert_eq!(
            mv2.full_block_vector(&mv2.baseline),
            vec![1, 1, 2, 3, 4, 3, 3, 1, 1, 1]
        );
        assert_eq!(mv2.choice_block_count(&mv2.baseline), 20);
    }

    #[test]
    fn resnet_weights_are_uniform() {
        for name in ["resnet_basic", "resnet_bottleneck", "resnext"] {
            assert!(family(name)
                .stage_weights
                .iter()
                .all(|w| *w == Weight::from_integer(1)));
        }
    }

    #[test]
    fn cr_resnet50_validates() {
        let f = family("resnet_bottleneck");
        let arch = Architecture::new(
            f,
            vec![1, 3, 5, 7].into(),
            vec![0, 0, 1, 0, 0, 0, 1, 2, 0, 0, 1, 0, 2, 1, 1, 2].into(),
        );
        assert_eq!(validate_architecture(&arch), Ok(()));
    }

    #[test]
    fn short_op_code_is_length_mismatch() {
        let arch = Architecture::new(
            family("resnet_basic"),
            vec![1, 1, 2, 4].into(),
            OperationAssignment::zeros(7),
        );
        assert_eq!(
            validate_architecture(&arch),
            Err(Violation::LengthMismatch {
                expected: 8,
                found: 7
            })
        );
    }

    #[test]
    fn zero_block_stage() {
        let arch = Architecture::new(
            family("resnet_bottleneck"),
            vec![0, 4, 6, 6].into(),
            OperationAssignment::zeros(16),
        );
        assert_eq!(
            validate_architecture(&arch),
            Err(Violation::ZeroBlockStage { stage: 0 })
        );
    }

    #[test]
    fn bad_code_reported() {
        let arch = Architecture::new(
            family("resnet_basic"),
            vec![2, 2, 2, 2].into(),
            vec![0, 0, 0, 3, 0, 0, 0, 0].into(),
        );
        assert_eq!(
            validate_architecture(&arch),
            Err(Violation::BadCode {
                position: 3,
                value: 3
            })
        );
    }

    #[test]
    fn parse_cr_resnet101() {
        let f = family("resnet_bottleneck");
        let arch = parse_codes(
            "[2,3,17,11] / [0,0,0,0,0,0,1,0,1,0,0,0,2,0,0,0,1,0,1,0,1,0,1,1,0,0,1,0,1,2,0,1,1]",
            &f,
        )
        .unwrap();
        assert_eq!(arch.stage_code.counts(), &[2, 3, 17, 11]);
        assert_eq!(arch.op_code.len(), 33);
        assert_eq!(arch.op_code.codes()[12], 2);
    }

    #[test]
    fn parse_plain_resnet18() {
        let f = family("resnet_basic");
        let arch = parse_codes(" [ 2, 2,2,2 ]/[0,0,0,0,0,0,0,0] ", &f).unwrap();
        assert_eq!(arch, f.plain(vec![2, 2, 2, 2].into()));
        assert_eq!(format_codes(&arch), "[2,2,2,2] / [0,0,0,0,0,0,0,0]");
    }

    #[test]
    fn parse_rejects_out_of_range() {
        let f = family("resnet_basic");
        let err = parse_codes("[1,1,2,4] / [0,0,1,0,1,0,2,9]", &f).unwrap_err();
        assert!(matches!(
            err,
            Error::OutOfRangeCode {
                position: 7,
                value: 9
            }
        ));
    }

    #[test]
    fn parse_rejects_malformed() {
        let f = family("resnet_basic");
        for text in [
            "[1,1,2,4]",
            "[1,1,2,4] / 0,0",
            "[1,1,2,4] / [0,0] / [0]",
            "[1,a,2,4] / [0]",
            "[1,1,2,4 / [0,0,1,0,1,0,2,1]",
        ] {
            assert!(
                matches!(parse_codes(text, &f), Err(Error::Parse { .. })),
                "{text}"
            );
        }
        assert!(matches!(
            parse_codes("[1,1,2] / [0,0,0,0]", &f),
            Err(Error::Validation(Violation::StageCountMismatch { .. }))
        ));
    }

    #[test]
    fn parse_mobilenet_full_vector() {
        let f = family("mobilenetv2");
        let arch = parse_codes(
            "[1,1,2,2,3,4,4,1,1,1] / [0,1,0,1,0,2,0,1,1,0,0,1,1,0,1,1,0,2,0,0]",
            &f,
        )
        .unwrap();
        assert_eq!(arch.stage_code.counts(), &[2, 2, 3, 4, 4]);
        assert!(parse_codes("[2,1,2,2,3,4,4,1,1,1] / []", &f).is_err());
    }
}
