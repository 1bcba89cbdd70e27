use std::collections::HashSet;

use poiverify::annindex::{
    brute_force_knn, dot, random_unit_vectors, AnnForest, AnnQueryBudget, EmbeddingTable, Scored,
};
use poiverify::Error;
use proptest::prelude::*;

fn recall(got: &[Scored], truth: &[Scored]) -> f64 {
    let t: HashSet<u64> = truth.iter().map(|s| s.id).collect();
    got.iter().filter(|s| t.contains(&s.id)).count() as f64 / truth.len() as f64
}

/// Exact top-k by a plain sort, independent of the library's selection.
fn oracle_knn(table: &EmbeddingTable, q: &[f32], k: usize) -> Vec<(u64, f64)> {
    let mut all: Vec<(u64, f64)> = (0..table.len())
        .map(|i| (table.ids()[i], dot(table.vector(i), q)))
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

#[test]
fn brute_force_matches_sorted_oracle() {
    let table = random_unit_vectors(2000, 24, 1);
    let queries = random_unit_vectors(25, 24, 2);
    for i in 0..queries.len() {
        let q = queries.vector(i);
        let got: Vec<(u64, f64)> = brute_force_knn(&table, q, 15)
            .unwrap()
            .into_iter()
            .map(|s| (s.id, s.score))
            .collect();
        assert_eq!(got, oracle_knn(&table, q, 15));
    }
}

#[test]
fn single_leaf_tree_reproduces_brute_force_bit_for_bit() {
    let table = random_unit_vectors(1000, 32, 3);
    let forest = AnnForest::build(table.clone(), 1, 1000, 4).unwrap();
    assert_eq!(forest.stats().leaves, 1);
    let queries = random_unit_vectors(50, 32, 5);
    for i in 0..queries.len() {
        let q = queries.vector(i);
        for k in [1, 10, 100] {
            let a = forest
                .query(q, AnnQueryBudget { k, search_nodes: 1 })
                .unwrap();
            let b = brute_force_knn(&table, q, k).unwrap();
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.id, y.id);
                assert_eq!(x.score.to_bits(), y.score.to_bits());
            }
        }
    }
}

#[test]
fn leaf_depth_is_logarithmic() {
    let n = 10_000;
    let cap = 32;
    let forest = AnnForest::build(random_unit_vectors(n, 64, 6), 16, cap, 7).unwrap();
    let stats = forest.stats();
    let bound = 3.0 * ((n / cap) as f64).log2();
    assert!(stats.mean_leaf_depth <= bound, "{stats:?} bound {bound}");
    for t in 0..forest.n_trees() {
        assert!(forest
            .leaves(t)
            .iter()
            .all(|l| !l.is_empty() && l.len() <= cap));
    }
}

#[test]
fn recall_at_ten_and_budget_monotonicity() {
    let table = random_unit_vectors(10_000, 64, 8);
    let forest = AnnForest::build(table.clone(), 16, 32, 9).unwrap();
    let queries = random_unit_vectors(100, 64, 10);
    let truths: Vec<Vec<Scored>> = (0..queries.len())
        .map(|i| brute_force_knn(&table, queries.vector(i), 10).unwrap())
        .collect();
    let mean_recall = |budget: usize| {
        (0..queries.len())
            .map(|i| {
                let got = forest
                    .query(
                        queries.vector(i),
                        AnnQueryBudget {
                            k: 10,
                            search_nodes: budget,
                        },
                    )
                    .unwrap();
                recall(&got, &truths[i])
            })
            .sum::<f64>()
            / queries.len() as f64
    };
    let at_2048 = mean_recall(2048);
    assert!(at_2048 >= 0.90, "recall@10 {at_2048}");
    let curve: Vec<f64> = [256, 1024, 4096].into_iter().map(mean_recall).collect();
    assert!(curve.windows(2).all(|w| w[1] + 0.01 >= w[0]), "{curve:?}");
}

#[test]
fn building_is_deterministic_per_seed() {
    let table = random_unit_vectors(1500, 16, 11);
    let a = AnnForest::build(table.clone(), 4, 16, 12).unwrap();
    let b = AnnForest::build(table.clone(), 4, 16, 12).unwrap();
    assert_eq!(a, b);
    let c = AnnForest::build(table, 4, 16, 13).unwrap();
    assert_ne!(a, c);
}

#[test]
fn saved_forest_answers_identically() {
    let table = random_unit_vectors(3000, 32, 14);
    let forest = AnnForest::build(table, 8, 16, 15).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("forest.bin");
    forest
        .write_to(std::fs::File::create(&path).unwrap())
        .unwrap();
    let back =
        AnnForest::read_from(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(back.seed(), 15);
    let queries = random_unit_vectors(40, 32, 16);
    for i in 0..queries.len() {
        let budget = AnnQueryBudget {
            k: 10,
            search_nodes: 200,
        };
        let a = forest.query(queries.vector(i), budget).unwrap();
        let b = back.query(queries.vector(i), budget).unwrap();
        assert_eq!(a.len(), b.len());
        assert!(a
            .iter()
            .zip(&b)
            .all(|(x, y)| x.id == y.id && x.score.to_bits() == y.score.to_bits()));
    }
}

#[test]
fn small_databases() {
    let one = random_unit_vectors(1, 8, 17);
    let forest = AnnForest::build(one.clone(), 3, 4, 0).unwrap();
    let hits = forest
        .query(
            one.vector(0),
            AnnQueryBudget {
                k: 5,
                search_nodes: 3,
            },
        )
        .unwrap();
    assert_eq!(hits.len(), 1);
    assert_eq!(hits[0].id, 0);

    let table = random_unit_vectors(20, 8, 18);
    let forest = AnnForest::build(table.clone(), 2, 4, 1).unwrap();
    let q = random_unit_vectors(1, 8, 19);
    let all = forest
        .query(
            q.vector(0),
            AnnQueryBudget {
                k: 50,
                search_nodes: 1000,
            },
        )
        .unwrap();
    assert_eq!(all, brute_force_knn(&table, q.vector(0), 50).unwrap());
    assert_eq!(all.len(), 20);
}

#[test]
fn malformed_queries_are_rejected() {
    let table = random_unit_vectors(50, 8, 20);
    let forest = AnnForest::build(table, 2, 4, 1).unwrap();
    let budget = AnnQueryBudget {
        k: 3,
        search_nodes: 16,
    };
    assert!(matches!(
        forest.query(&[1.0, 0.0], budget),
        Err(Error::Integrity(_))
    ));
    assert!(forest.query(&[0.5; 8], budget).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn query_results_are_sorted_distinct_and_exact(seed in 0u64..500, n in 1usize..300, k in 1usize..20, budget in 2usize..64) {
        let table = random_unit_vectors(n, 6, seed);
        let forest = AnnForest::build(table.clone(), 2, 8, seed).unwrap();
        let q = random_unit_vectors(1, 6, seed + 1000);
        let hits = forest.query(q.vector(0), AnnQueryBudget { k, search_nodes: budget }).unwrap();
        prop_assert!(!hits.is_empty() && hits.len() <= k.min(n));
        let ids: HashSet<u64> = hits.iter().map(|h| h.id).collect();
        prop_assert_eq!(ids.len(), hits.len());
        prop_assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
        for h in &hits {
            let row = table.ids().iter().position(|&x| x == h.id).unwrap();
            prop_assert_eq!(h.score, dot(table.vector(row), q.vector(0)));
        }
    }
}
