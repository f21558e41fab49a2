//! Block budgets and the relative cost model.
//!
//! A block costs the same at every resolution because each downsampling step
//! doubles the channel count, so moving blocks between stages keeps the
//! backbone cost fixed. Families with irregular channel plans carry
//! fractional per-stage weights, which are kept as exact rationals.

use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive};

use crate::arch::{
    validate_architecture, Architecture, BackboneFamily, StageAllocation, Violation,
};
use crate::error::{Error, Result};

/// Exact per-stage block weight.
pub type Weight = Ratio<i64>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BudgetModel {
    /// Cost of one weight-1 block.
    pub reference_block_cost: f64,
    /// Stem, neck and head cost, constant across reallocations.
    pub fixed_overhead: f64,
}

impl BudgetModel {
    pub fn new(reference_block_cost: f64, fixed_overhead: f64) -> Result<Self> {
        if !(reference_block_cost.is_finite() && reference_block_cost > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "reference block cost must be positive, got {reference_block_cost}"
            )));
        }
        if !(fixed_overhead.is_finite() && fixed_overhead >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "fixed overhead must be nonnegative, got {fixed_overhead}"
            )));
        }
        Ok(BudgetModel {
            reference_block_cost,
            fixed_overhead,
        })
    }
}

impl Default for BudgetModel {
    fn default() -> Self {
        BudgetModel {
            reference_block_cost: 1.0,
            fixed_overhead: 0.0,
        }
    }
}

/// `sum(stage_weights[i] * tau[i])`.
pub fn weighted_block_count(family: &BackboneFamily, tau: &StageAllocation) -> Result<Weight> {
    if tau.len() != family.stage_weights.len() {
        return Err(Violation::StageCountMismatch {
            expected: family.stage_weights.len(),
            found: tau.len(),
        }
        .into());
    }
    Ok(weighted_sum(&family.stage_weights, tau.counts()))
}

pub(crate) fn weighted_sum(weights: &[Weight], counts: &[u32]) -> Weight {
    weights
        .iter()
        .zip(counts)
        .map(|(w, &c)| w * i64::from(c))
        .sum()
}

pub fn weight_to_f64(w: &Weight) -> f64 {
    w.to_f64().unwrap_or(f64::NAN)
}

/// Relative backbone cost. Dilation adds no parameters or multiply-adds, so
/// the operation code does not enter.
pub fn backbone_cost(arch: &Architecture, model: &BudgetModel) -> Result<f64> {
    validate_architecture(arch)?;
    let weighted = weighted_block_count(&arch.family, &arch.stage_code)?;
    Ok(cost_of_weighted(&weighted, model))
}

pub fn cost_of_weighted(weighted: &Weight, model: &BudgetModel) -> f64 {
    model.fixed_overhead + model.reference_block_cost * weight_to_f64(weighted)
}

/// Whether `tau` meets the block budget `target` within `tolerance`.
/// A stage code of the wrong length is never within budget.
pub fn is_within_budget(
    tau: &StageAllocation,
    family: &BackboneFamily,
    target: Weight,
    tolerance: Weight,
) -> bool {
    match weighted_block_count(family, tau) {
        Ok(w) => (w - target).abs() <= tolerance,
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{builtin_family, OperationAssignment};

    fn w(n: i64) -> Weight {
        Weight::from_integer(n)
    }

    #[test]
    fn mobilenet_weighted_counts() {
        let mv2 = builtin_family("mobilenetv2").unwrap();
        // 1.5*2 + 3 + 4 + 0.75*3 + 1.25*3 = 3 + 3 + 4 + 2.25 + 3.75
        assert_eq!(
            weighted_block_count(&mv2, &vec![2, 3, 4, 3, 3].into()).unwrap(),
            w(16)
        );
        // 1.5*2 + 2 + 3 + 0.75*4 + 1.25*4 = 3 + 2 + 3 + 3 + 5
        assert_eq!(
            weighted_block_count(&mv2, &vec![2, 2, 3, 4, 4].into()).unwrap(),
            w(16)
        );
        assert_eq!(
            weighted_block_count(&mv2, &vec![1, 1, 1, 1, 1].into()).unwrap(),
            Ratio::new(11, 2)
        );
    }

    #[test]
    fn uniform_weighted_count_is_sum() {
        let r = builtin_family("resnet_bottleneck").unwrap();
        assert_eq!(
            weighted_block_count(&r, &vec![3, 4, 6, 3].into()).unwrap(),
            w(16)
        );
        assert!(weighted_block_count(&r, &vec![3, 4, 6].into()).is_err());
    }

    #[test]
    fn reallocation_keeps_cost() {
        let r = builtin_family("resnet_bottleneck").unwrap();
        let model = BudgetModel::new(4.1, 30.0).unwrap();
        let base = backbone_cost(&r.plain(vec![3, 4, 6, 3].into()), &model).unwrap();
        let cr = backbone_cost(&r.plain(vec![1, 3, 5, 7].into()), &model).unwrap();
        assert_eq!(base.to_bits(), cr.to_bits());
    }

    #[test]
    fn dilation_is_free() {
        let r = builtin_family("resnet_basic").unwrap();
        let model = BudgetModel::new(2.5, 1.0).unwrap();
        let zeros = Architecture::new(
            r.clone(),
            vec![2, 2, 2, 2].into(),
            OperationAssignment::zeros(8),
        );
        let twos = Architecture::new(r, vec![2, 2, 2, 2].into(), vec![2; 8].into());
        assert_eq!(
            backbone_cost(&zeros, &model).unwrap(),
            backbone_cost(&twos, &model).unwrap()
        );
    }

    #[test]
    fn cost_without_overhead() {
        let r = builtin_family("resnet_basic").unwrap();
        let model = BudgetModel::new(3.25, 0.0).unwrap();
        let cost = backbone_cost(&r.plain(vec![1, 1, 1, 1].into()), &model).unwrap();
        assert_eq!(cost, 4.0 * 3.25);
    }

    #[test]
    fn budget_predicate() {
        let r = builtin_family("resnet_bottleneck").unwrap();
        assert!(is_within_budget(
            &vec![2, 3, 17, 11].into(),
            &r,
            w(33),
            w(0)
        ));
        assert!(!is_within_budget(&vec![3, 4, 6, 4].into(), &r, w(16), w(0)));
        assert!(is_within_budget(&vec![3, 4, 6, 4].into(), &r, w(16), w(1)));
        assert!(!is_within_budget(&vec![3, 4, 6].into(), &r, w(13), w(0)));
        let mv2 = builtin_family("mobilenetv2").unwrap();
        assert!(is_within_budget(
            &vec![2, 2, 3, 4, 4].into(),
            &mv2,
            w(16),
            w(0)
        ));
    }

    #[test]
    fn model_rejects_bad_parameters() {
        assert!(BudgetModel::new(0.0, 0.0).is_err());
        assert!(BudgetModel::new(1.0, -1.0).is_err());
        assert!(BudgetModel::new(f64::NAN, 0.0).is_err());
    }
}
