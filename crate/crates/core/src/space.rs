//! The stage reallocation space: per-stage branch sets under a block budget.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_bigint::BigUint;
use num_traits::Signed;

use crate::arch::{BackboneFamily, BlockKind, StageAllocation};
use crate::budget::{weighted_sum, Weight};
use crate::error::{Error, Result};

/// Allowed block counts for one stage, strictly increasing, all at least 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BranchSet(Vec<u32>);

impl BranchSet {
    pub fn new(counts: Vec<u32>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidSpace("empty branch set".into()));
        }
        if counts[0] < 1 {
            return Err(Error::InvalidSpace(
                "branch sets must start at 1 or more".into(),
            ));
        }
        if counts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSpace(format!(
                "branch set {counts:?} is not strictly increasing"
            )));
        }
        Ok(BranchSet(counts))
    }

    pub fn range(lo: u32, hi: u32) -> Self {
        BranchSet((lo..=hi).collect())
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub fn min(&self) -> u32 {
        self.0[0]
    }

    pub fn max(&self) -> u32 {
        self.0[self.0.len() - 1]
    }

    pub fn contains(&self, count: u32) -> bool {
        self.0.binary_search(&count).is_ok()
    }
}

/// Branch sets shared by the ResNet and ResNeXt series.
pub fn resnet_series_branch_sets() -> Vec<BranchSet> {
    vec![
        BranchSet::range(1, 10),
        BranchSet::range(1, 10),
        BranchSet(vec![2, 3, 5, 6, 9, 11, 14, 17, 20, 23]),
        BranchSet(vec![2, 3, 4, 6, 7, 9, 11, 13, 15, 17]),
    ]
}

pub fn mobilenetv2_branch_sets() -> Vec<BranchSet> {
    vec![
        BranchSet::range(1, 5),
        BranchSet::range(1, 5),
        BranchSet::range(3, 7),
        BranchSet::range(2, 6),
        BranchSet::range(2, 6),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct AllocationSpace {
    pub family: Arc<BackboneFamily>,
    pub branch_sets: Vec<BranchSet>,
    pub budget: Weight,
    pub tolerance: Weight,
}

impl AllocationSpace {
    pub fn new(
        family: Arc<BackboneFamily>,
        branch_sets: Vec<BranchSet>,
        budget: Weight,
        tolerance: Weight,
    ) -> Result<Self> {
        if branch_sets.len() != family.num_stages {
            return Err(Error::InvalidSpace(format!(
                "{} branch sets for a {}-stage family",
                branch_sets.len(),
                family.num_stages
            )));
        }
        if tolerance < Weight::from_integer(0) {
            return Err(Error::InvalidSpace("negative tolerance".into()));
        }
        Ok(AllocationSpace {
            family,
            branch_sets,
            budget,
            tolerance,
        })
    }

    /// Default branch sets for `family` with an exact budget.
    pub fn with_default_branches(family: Arc<BackboneFamily>, budget: Weight) -> Result<Self> {
        let sets = default_branch_sets(&family)?;
        Self::new(family, sets, budget, Weight::from_integer(0))
    }

    /// Smallest and largest weighted block counts reachable from the branch sets.
    pub fn achievable_range(&self) -> (Weight, Weight) {
        let mins: Vec<u32> = self.branch_sets.iter().map(BranchSet::min).collect();
        let maxs: Vec<u32> = self.branch_sets.iter().map(BranchSet::max).collect();
        (
            weighted_sum(&self.family.stage_weights, &mins),
            weighted_sum(&self.family.stage_weights, &maxs),
        )
    }

    pub fn contains(&self, tau: &StageAllocation) -> bool {
        tau.len() == self.branch_sets.len()
            && tau
                .counts()
                .iter()
                .zip(&self.branch_sets)
                .all(|(&c, set)| set.contains(c))
            && crate::budget::is_within_budget(tau, &self.family, self.budget, self.tolerance)
    }

    /// Largest block count of any stage code in the space, counting fixed blocks.
    pub fn max_choice_blocks(&self) -> usize {
        let stage_max: u32 = self.branch_sets.iter().map(BranchSet::max).sum();
        self.family.fixed_prefix_blocks + stage_max as usize + self.family.fixed_suffix_blocks
    }
}

pub fn default_branch_sets(family: &BackboneFamily) -> Result<Vec<BranchSet>> {
    match (family.block_kind, family.num_stages) {
        (BlockKind::InvertedResidual, 5) => Ok(mobilenetv2_branch_sets()),
        (BlockKind::Basic | BlockKind::Bottleneck | BlockKind::GroupedBottleneck, 4) => {
            Ok(resnet_series_branch_sets())
        }
        _ => Err(Error::InvalidSpace(format!(
            "no default branch sets for family {}",
            family.name
        ))),
    }
}

/// Every stage code in the space, in lexicographic order.
pub fn enumerate_allocations(space: &AllocationSpace) -> Vec<StageAllocation> {
    let weights = &space.family.stage_weights;
    let n = space.branch_sets.len();
    // Weighted min/max still reachable from stages i.. onward.
    let mut rest_min = vec![Weight::from_integer(0); n + 1];
    let mut rest_max = vec![Weight::from_integer(0); n + 1];
    for i in (0..n).rev() {
        rest_min[i] = rest_min[i + 1] + weights[i] * i64::from(space.branch_sets[i].min());
        rest_max[i] = rest_max[i + 1] + weights[i] * i64::from(space.branch_sets[i].max());
    }
    let lo = space.budget - space.tolerance;
    let hi = space.budget + space.tolerance;

    let mut out = Vec::new();
    let mut current = Vec::with_capacity(n);
    let mut walk = Walk {
        space,
        rest_min: &rest_min,
        rest_max: &rest_max,
        lo,
        hi,
        out: &mut out,
    };
    walk.descend(0, Weight::from_integer(0), &mut current);
    out
}

struct Walk<'a> {
    space: &'a AllocationSpace,
    rest_min: &'a [Weight],
    rest_max: &'a [Weight],
    lo: Weight,
    hi: Weight,
    out: &'a mut Vec<StageAllocation>,
}

impl Walk<'_> {
    fn descend(&mut self, stage: usize, partial: Weight, current: &mut Vec<u32>) {
        if stage == self.space.branch_sets.len() {
            if partial >= self.lo && partial <= self.hi {
                self.out.push(StageAllocation::new(current.clone()));
            }
            return;
        }
        let weight = self.space.family.stage_weights[stage];
        for &count in self.space.branch_sets[stage].counts() {
            let with = partial + weight * i64::from(count);
            // Counts increase, so once the minimum overshoots, stop.
            if with + self.rest_min[stage + 1] > self.hi {
                break;
            }
            if with + self.rest_max[stage + 1] < self.lo {
                continue;
            }
            current.push(count);
            self.descend(stage + 1, with, current);
            current.pop();
        }
    }
}

/// Number of stage codes in the space, by dynamic programming over the
/// distribution of partial weighted sums. Does not share code with
/// [`enumerate_allocations`].
pub fn count_allocations(space: &AllocationSpace) -> u128 {
    let mut ways: BTreeMap<Weight, u128> = BTreeMap::new();
    ways.insert(Weight::from_integer(0), 1);
    for (set, weight) in space.branch_sets.iter().zip(&space.family.stage_weights) {
        let mut next = BTreeMap::new();
        for (sum, n) in &ways {
            for &count in set.counts() {
                *next.entry(sum + weight * i64::from(count)).or_insert(0) += n;
            }
        }
        ways = next;
    }
    ways.into_iter()
        .filter(|(sum, _)| (sum - space.budget).abs() <= space.tolerance)
        .map(|(_, n)| n)
        .sum()
}

/// `num_ops ^ blocks`, exactly.
pub fn operation_space_size(blocks: usize, num_ops: u32) -> BigUint {
    BigUint::from(num_ops).pow(blocks as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::builtin_family;

    fn w(n: i64) -> Weight {
        Weight::from_integer(n)
    }

    fn resnet_space(n: i64) -> AllocationSpace {
        AllocationSpace::with_default_branches(builtin_family("resnet_bottleneck").unwrap(), w(n))
            .unwrap()
    }

    fn uniform_space(sets: Vec<BranchSet>, n: i64) -> AllocationSpace {
        AllocationSpace::new(builtin_family("resnet_basic").unwrap(), sets, w(n), w(0)).unwrap()
    }

    /// Plain nested loops over the full product, no pruning.
    fn brute(space: &AllocationSpace) -> Vec<StageAllocation> {
        let mut all: Vec<Vec<u32>> = vec![vec![]];
        for set in &space.branch_sets {
            all = all
                .into_iter()
                .flat_map(|p| {
                    set.counts().iter().map(move |&c| {
                        let mut q = p.clone();
                        q.push(c);
                        q
                    })
                })
                .collect();
        }
        all.into_iter()
            .map(StageAllocation::new)
            .filter(|t| {
                crate::budget::is_within_budget(t, &space.family, space.budget, space.tolerance)
            })
            .collect()
    }

    #[test]
    fn branch_set_invariants() {
        assert!(BranchSet::new(vec![]).is_err());
        assert!(BranchSet::new(vec![0, 1]).is_err());
        assert!(BranchSet::new(vec![2, 2]).is_err());
        assert!(BranchSet::new(vec![3, 1]).is_err());
        assert!(BranchSet::new(vec![1, 4, 9]).is_ok());
    }

    #[test]
    fn resnet18_budget_contains_published_codes() {
        let codes = enumerate_allocations(&resnet_space(8));
        assert!(codes.contains(&vec![1, 1, 2, 4].into()));
        assert!(codes.contains(&vec![2, 2, 2, 2].into()));
    }

    #[test]
    fn resnet50_budget_contains_published_codes() {
        let codes = enumerate_allocations(&resnet_space(16));
        for c in [[3, 4, 6, 3], [1, 3, 5, 7], [2, 2, 6, 6]] {
            assert!(codes.contains(&c.to_vec().into()), "{c:?}");
        }
    }

    #[test]
    fn tiny_binary_space() {
        let sets = || vec![BranchSet::range(1, 2); 4];
        let four = enumerate_allocations(&uniform_space(sets(), 4));
        assert_eq!(four, vec![StageAllocation::new(vec![1, 1, 1, 1])]);
        let five = enumerate_allocations(&uniform_space(sets(), 5));
        assert_eq!(five.len(), 4);
        assert_eq!(five, brute(&uniform_space(sets(), 5)));
        assert_eq!(five[0].counts(), &[1, 1, 1, 2]);
        assert_eq!(five[3].counts(), &[2, 1, 1, 1]);
    }

    #[test]
    fn unconstrained_count_is_binomial() {
        let space = uniform_space(vec![BranchSet::range(1, 30); 4], 33);
        // C(32, 3)
        assert_eq!(count_allocations(&space), 32 * 31 * 30 / 6);
        assert_eq!(enumerate_allocations(&space).len(), 4960);
    }

    #[test]
    fn compositions_of_eight() {
        let space = uniform_space(vec![BranchSet::range(1, 10); 4], 8);
        assert_eq!(count_allocations(&space), 35);
        assert_eq!(enumerate_allocations(&space).len(), 35);
    }

    #[test]
    fn infeasible_budget_is_empty() {
        let space = resnet_space(5);
        assert_eq!(count_allocations(&space), 0);
        assert!(enumerate_allocations(&space).is_empty());
        let space = resnet_space(1000);
        assert_eq!(count_allocations(&space), 0);
        assert!(enumerate_allocations(&space).is_empty());
    }

    #[test]
    fn enumeration_matches_brute_force_on_defaults() {
        for n in [8, 16, 20, 33, 40] {
            let space = resnet_space(n);
            let fast = enumerate_allocations(&space);
            assert_eq!(fast, brute(&space), "N={n}");
            assert_eq!(fast.len() as u128, count_allocations(&space));
        }
    }

    #[test]
    fn mobilenet_space_with_fractional_weights() {
        let mv2 = builtin_family("mobilenetv2").unwrap();
        let space = AllocationSpace::with_default_branches(mv2, w(16)).unwrap();
        let codes = enumerate_allocations(&space);
        assert!(codes.contains(&vec![2, 3, 4, 3, 3].into()));
        assert!(codes.contains(&vec![2, 2, 3, 4, 4].into()));
        assert_eq!(codes, brute(&space));
        assert_eq!(codes.len() as u128, count_allocations(&space));

        let loose = AllocationSpace::new(
            space.family.clone(),
            space.branch_sets.clone(),
            w(16),
            Weight::new(1, 4),
        )
        .unwrap();
        assert!(enumerate_allocations(&loose).len() > codes.len());
        assert_eq!(enumerate_allocations(&loose), brute(&loose));
    }

    #[test]
    fn operation_space_sizes() {
        assert_eq!(operation_space_size(16, 3), BigUint::from(43_046_721u64));
        assert_eq!(operation_space_size(0, 3), BigUint::from(1u32));
        assert_eq!(operation_space_size(8, 3), BigUint::from(6561u32));
    }

    #[test]
    fn achievable_range_of_resnet_series() {
        let (lo, hi) = resnet_space(16).achievable_range();
        assert_eq!(lo, w(1 + 1 + 2 + 2));
        assert_eq!(hi, w(10 + 10 + 23 + 17));
    }
}
