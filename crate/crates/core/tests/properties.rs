use std::collections::BTreeSet;

use proptest::prelude::*;
use tcbm_core::bank::{
    build_macro_bank, cooccurrence_clusters, coverage, init_cbl, next_concepts, CooccurrenceParams, IndexLabeler,
    MicroAnnotation, MicroClusters,
};
use tcbm_core::data::{ConceptMatrix, EmbeddingDataset, Record, Split};
use tcbm_core::importance::ConceptScore;
use tcbm_core::pipeline::{should_stop_performance, should_stop_residual_ma};

fn dataset(n: usize) -> EmbeddingDataset {
    let records = (0..n)
        .map(|i| Record {
            id: format!("t{i}"),
            split: Split::Train,
            label: 0,
            embedding: vec![1.0],
            text: None,
        })
        .collect();
    EmbeddingDataset::new(records, None, None).unwrap()
}

fn binary_matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = ConceptMatrix> {
    (1..=max_rows, 2..=max_cols).prop_flat_map(|(n, p)| {
        prop::collection::vec(prop::collection::vec(0u8..=1, p), n)
            .prop_map(move |rows| ConceptMatrix::new((0..p as u32).collect(), rows).unwrap())
    })
}

fn scores_for(values: &[f64]) -> Vec<ConceptScore> {
    values.iter().enumerate().map(|(c, &s)| ConceptScore::new(c as u32, s, 1.0)).collect()
}

/// Concepts `0..p` partitioned by `assignment` (group index per concept).
fn groups_from(assignment: &[usize]) -> Vec<Vec<u32>> {
    let g = assignment.iter().max().map_or(0, |m| m + 1);
    (0..g)
        .map(|k| (0..assignment.len() as u32).filter(|&c| assignment[c as usize] == k).collect::<Vec<_>>())
        .filter(|v| !v.is_empty())
        .collect()
}

proptest! {
    #[test]
    fn presence_matrix_follows_membership(
        owner in prop::collection::vec(-1i32..3, 6..20),
        texts in prop::collection::vec(prop::collection::vec(0usize..20, 0..5), 1..12),
    ) {
        let micro: Vec<String> = (0..owner.len()).map(|i| format!("m{i:02}")).collect();
        let clusters: Vec<Vec<usize>> = (0..3)
            .map(|k| (0..owner.len()).filter(|&i| owner[i] == k).collect::<Vec<_>>())
            .filter(|c| !c.is_empty())
            .collect();
        prop_assume!(!clusters.is_empty());
        let noise = (0..owner.len()).filter(|&i| owner[i] < 0).collect();
        let mc = MicroClusters {
            reduced: (0..owner.len()).map(|i| vec![i as f64, 0.0]).collect(),
            micro: micro.clone(),
            clusters: clusters.clone(),
            noise,
        };
        let ds = dataset(texts.len());
        let anns: Vec<MicroAnnotation> = texts
            .iter()
            .enumerate()
            .map(|(i, ts)| MicroAnnotation::new(
                format!("t{i}"),
                ts.iter().map(|&t| micro.get(t).cloned().unwrap_or_else(|| format!("unseen{t}"))),
            ))
            .collect();
        let bank = build_macro_bank(&mc, &anns, &ds, &IndexLabeler).unwrap();
        for (i, ann) in anns.iter().enumerate() {
            for (j, concept) in bank.concepts.iter().enumerate() {
                let hit = ann.topics.iter().any(|t| concept.members.contains(t));
                prop_assert_eq!(bank.matrix.get(i, j) == 1, hit);
            }
        }
    }

    #[test]
    fn init_cbl_is_minimal_and_coverage_monotone(
        m in binary_matrix(30, 8),
        raw_scores in prop::collection::vec(0.0f64..1.0, 8),
        assignment in prop::collection::vec(0usize..4, 8),
        target in 0.05f64..=1.0,
    ) {
        let p = m.num_concepts();
        let scores = scores_for(&raw_scores[..p]);
        let groups = groups_from(&assignment[..p]);
        let init = init_cbl(&scores, &groups, &m, target).unwrap();
        let prefix: Vec<f64> = (1..=init.selected.len()).map(|l| coverage(&m, &init.selected[..l])).collect();
        prop_assert!(prefix.windows(2).all(|w| w[0] <= w[1]));
        let unique: BTreeSet<u32> = init.selected.iter().copied().collect();
        prop_assert_eq!(unique.len(), init.selected.len());
        if init.reached_target {
            prop_assert!(*prefix.last().unwrap() >= target);
            if prefix.len() > 1 {
                prop_assert!(prefix[prefix.len() - 2] < target);
            }
        } else {
            prop_assert_eq!(init.selected.len(), p);
        }
    }

    #[test]
    fn next_concepts_takes_best_unused_per_group(
        raw_scores in prop::collection::vec(0.0f64..1.0, 8),
        assignment in prop::collection::vec(0usize..4, 8),
        used in prop::collection::vec(any::<bool>(), 8),
    ) {
        let scores = scores_for(&raw_scores);
        let groups = groups_from(&assignment);
        let current: Vec<u32> = (0..8u32).filter(|&c| used[c as usize]).collect();
        let next = next_concepts(&groups, &scores, &current);
        let expected: BTreeSet<u32> = groups
            .iter()
            .filter_map(|g| {
                g.iter()
                    .filter(|c| !used[**c as usize])
                    .max_by(|a, b| raw_scores[**a as usize].total_cmp(&raw_scores[**b as usize]).then(b.cmp(a)))
                    .copied()
            })
            .collect();
        prop_assert_eq!(next.iter().copied().collect::<BTreeSet<_>>(), expected);
        prop_assert!(next.iter().all(|c| !current.contains(c)));
    }

    #[test]
    fn cooccurrence_groups_are_permutation_equivariant(
        base in prop::collection::vec(prop::collection::vec(0u8..=1, 4), 12..30),
        copies in prop::collection::vec(0usize..4, 2..6),
        perm_seed in any::<u64>(),
    ) {
        // duplicated columns give the clustering real structure
        let mut cols: Vec<usize> = (0..4).collect();
        cols.extend(copies);
        let p = cols.len();
        let rows: Vec<Vec<u8>> = base.iter().map(|r| cols.iter().map(|&c| r[c]).collect()).collect();
        let m = ConceptMatrix::new((0..p as u32).collect(), rows.clone()).unwrap();

        let mut order: Vec<usize> = (0..p).collect();
        let mut s = perm_seed;
        for i in (1..p).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let permuted_rows: Vec<Vec<u8>> = rows.iter().map(|r| order.iter().map(|&j| r[j]).collect()).collect();
        let permuted = ConceptMatrix::new(order.iter().map(|&j| j as u32).collect(), permuted_rows).unwrap();

        let params = CooccurrenceParams::default();
        let as_sets = |g: Vec<Vec<u32>>| -> BTreeSet<BTreeSet<u32>> { g.into_iter().map(|v| v.into_iter().collect()).collect() };
        prop_assert_eq!(
            as_sets(cooccurrence_clusters(&m, &params).unwrap()),
            as_sets(cooccurrence_clusters(&permuted, &params).unwrap())
        );
    }

    #[test]
    fn performance_rule_is_monotone(simple in 0.0f64..1.0, residual in 0.0f64..1.0, eps in 0.0f64..1.0, up in 0.0f64..0.5, down in 0.0f64..0.5) {
        if should_stop_performance(simple, residual, eps) {
            prop_assert!(should_stop_performance(simple + up, residual, eps));
            prop_assert!(should_stop_performance(simple, residual - down, eps));
        }
    }

    #[test]
    fn strictly_decreasing_history_never_stops(start in 0.5f64..1.0, steps in prop::collection::vec(0.001f64..0.05, 0..12)) {
        let mut history = vec![start];
        for s in steps {
            let last = *history.last().unwrap();
            history.push(last - s);
        }
        prop_assert!(!should_stop_residual_ma(&history, 4));
    }
}
