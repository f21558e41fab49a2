//! Published reference and reallocated codes, used by `verify-codes` and the
//! golden tests.

use crate::arch::{
    builtin_family, validate_architecture, Architecture, OperationAssignment, StageAllocation,
};
use crate::budget::{weighted_block_count, Weight};
use crate::error::Result;

/// A baseline stage code and its reallocated counterpart.
#[derive(Clone, Debug)]
pub struct StagePair {
    pub model: &'static str,
    pub family: &'static str,
    /// Block vector as published; for MobileNetV2 this includes the fixed
    /// stem and tail stages.
    pub baseline: &'static [u32],
    pub reallocated: &'static [u32],
    pub budget: Weight,
}

#[derive(Clone, Debug)]
pub struct FinalCode {
    pub model: &'static str,
    pub family: &'static str,
    pub stage: &'static [u32],
    pub ops: &'static [u8],
}

pub fn stage_pairs() -> Vec<StagePair> {
    let n = Weight::from_integer;
    vec![
        StagePair {
            model: "MobileNetV2",
            family: "mobilenetv2",
            baseline: &[1, 1, 2, 3, 4, 3, 3, 1, 1, 1],
            reallocated: &[1, 1, 2, 2, 3, 4, 4, 1, 1, 1],
            budget: n(16),
        },
        StagePair {
            model: "ResNet18",
            family: "resnet_basic",
            baseline: &[2, 2, 2, 2],
            reallocated: &[1, 1, 2, 4],
            budget: n(8),
        },
        StagePair {
            model: "ResNet50",
            family: "resnet_bottleneck",
            baseline: &[3, 4, 6, 3],
            reallocated: &[1, 3, 5, 7],
            budget: n(16),
        },
        StagePair {
            model: "ResNet101",
            family: "resnet_bottleneck",
            baseline: &[3, 4, 23, 3],
            reallocated: &[2, 3, 17, 11],
            budget: n(33),
        },
        StagePair {
            model: "ResNeXt50",
            family: "resnext",
            baseline: &[3, 4, 6, 3],
            reallocated: &[2, 2, 6, 6],
            budget: n(16),
        },
        StagePair {
            model: "ResNeXt101",
            family: "resnext",
            baseline: &[3, 4, 23, 3],
            reallocated: &[3, 4, 15, 11],
            budget: n(33),
        },
    ]
}

pub fn final_codes() -> Vec<FinalCode> {
    vec![
        FinalCode {
            model: "CR-MobileNetV2",
            family: "mobilenetv2",
            stage: &[1, 1, 2, 2, 3, 4, 4, 1, 1, 1],
            ops: &[0, 1, 0, 1, 0, 2, 0, 1, 1, 0, 0, 1, 1, 0, 1, 1, 0, 2, 0, 0],
        },
        FinalCode {
            model: "CR-ResNet18",
            family: "resnet_basic",
            stage: &[1, 1, 2, 4],
            ops: &[0, 0, 1, 0, 1, 0, 2, 1],
        },
        FinalCode {
            model: "CR-ResNet50",
            family: "resnet_bottleneck",
            stage: &[1, 3, 5, 7],
            ops: &[0, 0, 1, 0, 0, 0, 1, 2, 0, 0, 1, 0, 2, 1, 1, 2],
        },
        FinalCode {
            model: "CR-ResNet101",
            family: "resnet_bottleneck",
            stage: &[2, 3, 17, 11],
            ops: &[
                0, 0, 0, 0, 0, 0, 1, 0, 1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 1, 0, 1, 0, 1, 1, 0, 0, 1, 0,
                1, 2, 0, 1, 1,
            ],
        },
    ]
}

impl FinalCode {
    pub fn architecture(&self) -> Result<Architecture> {
        let family = builtin_family(self.family)?;
        let stage = family.stage_code_from_full(self.stage)?;
        Ok(Architecture::new(
            family,
            stage,
            OperationAssignment::new(self.ops.to_vec()),
        ))
    }
}

/// Outcome of checking one published code.
#[derive(Clone, Debug, PartialEq)]
pub struct GoldenCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Validates every published code and its block budget.
pub fn verify_all() -> Vec<GoldenCheck> {
    let mut out = Vec::new();
    for pair in stage_pairs() {
        let result = (|| -> Result<String> {
            let family = builtin_family(pair.family)?;
            let base = family.stage_code_from_full(pair.baseline)?;
            let realloc = family.stage_code_from_full(pair.reallocated)?;
            validate_architecture(&family.plain(base.clone()))?;
            validate_architecture(&family.plain(realloc.clone()))?;
            let wb = weighted_block_count(&family, &base)?;
            let wr = weighted_block_count(&family, &realloc)?;
            if wb != pair.budget || wr != pair.budget {
                return Err(crate::Error::InvalidArgument(format!(
                    "weighted counts {wb} and {wr}, expected {}",
                    pair.budget
                )));
            }
            Ok(format!("{base} -> {realloc}, weighted blocks {wr}"))
        })();
        out.push(check(format!("stage {}", pair.model), result));
    }
    for code in final_codes() {
        let result = code.architecture().and_then(|arch| {
            validate_architecture(&arch)?;
            Ok(format!(
                "{arch} ({} choice blocks)",
                arch.choice_block_count()
            ))
        });
        out.push(check(format!("final {}", code.model), result));
    }
    out
}

fn check(name: String, result: Result<String>) -> GoldenCheck {
    match result {
        Ok(detail) => GoldenCheck {
            name,
            passed: true,
            detail,
        },
        Err(e) => GoldenCheck {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

/// Stage code of a published pair, searchable stages only.
pub fn searchable(pair: &StagePair, reallocated: bool) -> Result<StageAllocation> {
    let family = builtin_family(pair.family)?;
    family.stage_code_from_full(if reallocated {
        pair.reallocated
    } else {
        pair.baseline
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_published_codes_verify() {
        let checks = verify_all();
        assert_eq!(checks.len(), 10);
        for c in &checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn final_code_lengths() {
        let lengths: Vec<usize> = final_codes().iter().map(|c| c.ops.len()).collect();
        assert_eq!(lengths, vec![20, 8, 16, 33]);
        for c in final_codes() {
            assert_eq!(c.architecture().unwrap().choice_block_count(), c.ops.len());
        }
    }
}
