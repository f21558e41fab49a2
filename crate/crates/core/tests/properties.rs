//! Randomized invariants, each checked against a direct computation.

use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;

use realloc_nas::arch::builtin_family;
use realloc_nas::eval::{PartialScorer, SeparableUtility};
use realloc_nas::rf::{erf_profile, theoretical_rf, Layer, LayerChain};
use realloc_nas::space::BranchSet;
use realloc_nas::{
    backbone_cost, count_allocations, enumerate_allocations, format_codes, greedy_op_search,
    parse_codes, AllocationSpace, Architecture, BackboneFamily, BudgetModel, Completions,
    EvaluatorSpec, SearchConfig, StageAllocation, Weight,
};

const FAMILIES: [&str; 4] = [
    "resnet_basic",
    "resnet_bottleneck",
    "resnext",
    "mobilenetv2",
];

fn family_strategy() -> impl Strategy<Value = Arc<BackboneFamily>> {
    (0..FAMILIES.len()).prop_map(|i| builtin_family(FAMILIES[i]).unwrap())
}

fn arch_strategy() -> impl Strategy<Value = Architecture> {
    family_strategy().prop_flat_map(|f| {
        prop::collection::vec(1u32..=6, f.num_stages).prop_flat_map(move |counts| {
            let f = f.clone();
            let tau: StageAllocation = counts.into();
            let blocks = f.choice_block_count(&tau);
            prop::collection::vec(0u8..3, blocks)
                .prop_map(move |ops| Architecture::new(f.clone(), tau.clone(), ops.into()))
        })
    })
}

fn layer_strategy() -> impl Strategy<Value = (u32, u32, u32)> {
    (
        prop::sample::select(vec![1u32, 3, 5, 7]),
        1u32..=2,
        1u32..=3,
    )
}

fn chain_of(layers: &[(u32, u32, u32)]) -> LayerChain {
    LayerChain::new(
        layers
            .iter()
            .map(|&(k, s, d)| Layer::new(k, s, d).unwrap())
            .collect(),
    )
    .unwrap()
}

/// Weight of a stage code in quarter blocks, from the published weights.
fn quarters(family: &BackboneFamily, counts: &[u32]) -> i64 {
    let per: &[i64] = if family.name == "mobilenetv2" {
        &[6, 4, 4, 3, 5]
    } else {
        &[4, 4, 4, 4]
    };
    counts.iter().zip(per).map(|(&c, q)| i64::from(c) * q).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn code_text_round_trips(arch in arch_strategy()) {
        let text = format_codes(&arch);
        let back = parse_codes(&text, &arch.family).unwrap();
        prop_assert_eq!(back, arch);
    }

    #[test]
    fn enumeration_matches_filtered_box(
        f in family_strategy(),
        sets in prop::collection::vec(prop::collection::btree_set(1u32..=7, 1..5), 5),
        budget_q in 8i64..80,
        loose in any::<bool>(),
    ) {
        let sets: Vec<BranchSet> = sets[..f.num_stages]
            .iter()
            .map(|s| BranchSet::new(s.iter().copied().collect()).unwrap())
            .collect();
        let tolerance = if loose { Weight::new(1, 4) } else { Weight::from_integer(0) };
        let space = AllocationSpace::new(f.clone(), sets.clone(), Weight::new(budget_q, 4), tolerance).unwrap();
        let listed = enumerate_allocations(&space);

        // Oracle: every point of the product of branch sets, filtered.
        let mut expected = BTreeSet::new();
        let mut stack: Vec<Vec<u32>> = vec![Vec::new()];
        while let Some(prefix) = stack.pop() {
            if prefix.len() == sets.len() {
                if (quarters(&f, &prefix) - budget_q).abs() <= if loose { 1 } else { 0 } {
                    expected.insert(prefix);
                }
                continue;
            }
            for &c in sets[prefix.len()].counts() {
                let mut next = prefix.clone();
                next.push(c);
                stack.push(next);
            }
        }

        prop_assert_eq!(listed.len() as u128, count_allocations(&space));
        prop_assert!(listed.windows(2).all(|p| p[0] < p[1]));
        let got: BTreeSet<Vec<u32>> = listed.iter().map(|t| t.counts().to_vec()).collect();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn raising_dilation_or_kernel_grows_trf(
        layers in prop::collection::vec(layer_strategy(), 1..8),
        at in any::<prop::sample::Index>(),
    ) {
        let i = at.index(layers.len());
        let base = theoretical_rf(&chain_of(&layers));
        let mut dilated = layers.clone();
        dilated[i].2 += 1;
        let mut widened = layers.clone();
        widened[i].0 += 2;
        prop_assert!(theoretical_rf(&chain_of(&widened)) > base);
        if layers[i].0 > 1 {
            prop_assert!(theoretical_rf(&chain_of(&dilated)) > base);
        }
    }

    #[test]
    fn erf_profile_shape(
        layers in prop::collection::vec(layer_strategy(), 0..7),
        pad in 0usize..4,
    ) {
        let chain = chain_of(&layers);
        let trf = theoretical_rf(&chain);
        let erf = erf_profile(&chain, trf as usize + 2 * pad).unwrap();
        let p = &erf.profile;
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9);
        prop_assert!(p.iter().all(|&m| m >= 0.0));
        for i in 0..p.len() {
            prop_assert!((p[i] - p[p.len() - 1 - i]).abs() <= 1e-12);
        }
        prop_assert!(erf.effective_radius <= (trf as f64 - 1.0) / 2.0 + 1e-12);
    }

    #[test]
    fn appending_a_spatial_layer_widens_erf(
        layers in prop::collection::vec(layer_strategy(), 0..6),
        extra in (prop::sample::select(vec![3u32, 5, 7]), 1u32..=2, 1u32..=3),
    ) {
        let a = chain_of(&layers);
        let mut longer = layers.clone();
        longer.push(extra);
        let b = chain_of(&longer);
        let ra = erf_profile(&a, theoretical_rf(&b) as usize).unwrap().effective_radius;
        let rb = erf_profile(&b, theoretical_rf(&b) as usize).unwrap().effective_radius;
        prop_assert!(rb > ra);
    }

    #[test]
    fn cost_tracks_weighted_count(
        arch in arch_strategy(),
        stage in any::<prop::sample::Index>(),
        ref_cost in 0.1f64..10.0,
        overhead in 0.0f64..50.0,
    ) {
        let model = BudgetModel::new(ref_cost, overhead).unwrap();
        let cost = backbone_cost(&arch, &model).unwrap();
        let expected = overhead + ref_cost * quarters(&arch.family, arch.stage_code.counts()) as f64 / 4.0;
        prop_assert!((cost - expected).abs() <= 1e-9 * expected.max(1.0));

        // One more block in any stage costs strictly more.
        let mut counts = arch.stage_code.counts().to_vec();
        let i = stage.index(counts.len());
        counts[i] += 1;
        let bigger = arch.family.plain(counts.into());
        prop_assert!(backbone_cost(&bigger, &model).unwrap() > cost);
    }

    #[test]
    fn greedy_is_optimal_for_separable_utilities(
        rows in prop::collection::vec(prop::array::uniform3(0.0f64..1.0), 1..7),
        k in 1usize..4,
        exhaustive in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let mut family = (*builtin_family("resnet_basic").unwrap()).clone();
        family.num_stages = 1;
        family.stage_weights.truncate(1);
        family.channel_plan.truncate(1);
        family.stage_strides.truncate(1);
        family.baseline = vec![rows.len() as u32].into();
        let family = Arc::new(family);
        let tau: StageAllocation = vec![rows.len() as u32].into();

        let mut u = SeparableUtility::constant(0.1, 1, rows.len() as u32, rows.len());
        u.ops = rows.clone();
        let config = SearchConfig {
            beam_width: k,
            completions: if exhaustive { Completions::Exhaustive } else { Completions::Sampled(5) },
            paired_sampling: !exhaustive,
            seed,
            ..SearchConfig::default()
        };
        let r = greedy_op_search(&family, &tau, &EvaluatorSpec::Separable(u), &config).unwrap();
        let expected: Vec<u8> = rows
            .iter()
            .map(|row| (0..3).fold(0usize, |b, o| if row[o] > row[b] { o } else { b }) as u8)
            .collect();
        prop_assert_eq!(r.winner.op_code.codes(), expected.as_slice());
    }
}

#[test]
fn noise_is_centered_with_requested_spread() {
    let family = builtin_family("resnet_basic").unwrap();
    let arch = family.plain(vec![2, 2, 2, 2].into());
    let clean = 0.3125;
    let sigma = 0.02;
    let spec = EvaluatorSpec::noisy(
        EvaluatorSpec::Separable(SeparableUtility::constant(clean, 4, 2, 8)),
        sigma,
    )
    .unwrap();
    let n = 10_000u64;
    let draws: Vec<f64> = (0..n)
        .map(|seed| realloc_nas::evaluate_full(&spec, &arch, seed).unwrap())
        .collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!(
        (mean - clean).abs() < 4.0 * sigma / (n as f64).sqrt(),
        "mean {mean}"
    );
    // The sample variance of n normals has relative standard error sqrt(2/(n-1)).
    let rel = (var / (sigma * sigma) - 1.0).abs();
    assert!(
        rel < 4.0 * (2.0 / (n - 1) as f64).sqrt(),
        "variance ratio off by {rel}"
    );
    // Same seed, same draw.
    assert_eq!(
        realloc_nas::evaluate_full(&spec, &arch, 17).unwrap(),
        realloc_nas::evaluate_full(&spec, &arch, 17).unwrap()
    );
}

#[test]
fn exhaustive_partial_score_is_exact_mean() {
    let family = builtin_family("resnet_basic").unwrap();
    let tau: StageAllocation = vec![1, 1, 1, 1].into();
    let mut u = SeparableUtility::constant(0.0, 4, 1, 4);
    u.ops = vec![
        [0.0, 0.3, 0.6],
        [0.1, 0.2, 0.9],
        [0.0, 0.0, 0.3],
        [0.5, 0.1, 0.0],
    ];
    let spec = EvaluatorSpec::Separable(u);
    let scorer = PartialScorer {
        evaluator: &spec,
        family: &family,
        stage_code: &tau,
        ops: &[0, 1, 2],
        completions: Completions::Exhaustive,
        paired: false,
    };
    // Prefix [2, 0]: 0.6 + 0.1 plus the means of the two free rows.
    let expected = 0.6 + 0.1 + 0.3 / 3.0 + 0.6 / 3.0;
    let got = scorer.score(&[2, 0], 0).unwrap();
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
}
