use std::time::Duration;

use poiverify::annindex::{ForestParams, Scored};
use poiverify::evalbench::{measure_qps, run_benchmark, sr_at_k, test_requests, BenchConfig};
use poiverify::model::{generate_corpus, CorpusParams};
use poiverify::pipeline::{
    PipelineConfig, Variant, VerificationResult, Verifier, DEFAULT_GEO_PRECISION,
};
use poiverify::signboard::ChannelParams;
use poiverify::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn result(ids: &[u64]) -> VerificationResult {
    VerificationResult {
        variant: Variant::V2,
        ranked: ids
            .iter()
            .enumerate()
            .map(|(i, &id)| Scored {
                id,
                score: -(i as f64),
            })
            .collect(),
        stage_timings: Vec::new(),
    }
}

fn sleep_10ms(_: &u32) -> poiverify::Result<()> {
    std::thread::sleep(Duration::from_millis(10));
    Ok(())
}

#[test]
fn stub_service_rate_is_measured_within_tolerance() {
    let reqs: Vec<u32> = (0..110).collect();
    let one = measure_qps(&reqs, 1, 10, sleep_10ms).unwrap();
    assert!(one.is_valid());
    assert_eq!(one.timed_requests, 100);
    assert!((one.qps - 100.0).abs() <= 15.0, "qps {}", one.qps);

    let two = measure_qps(&reqs, 2, 10, sleep_10ms).unwrap();
    assert_eq!(
        two.per_worker.iter().map(|w| w.completed).sum::<usize>(),
        100
    );
    assert!(two.qps >= 1.5 * one.qps, "{} vs {}", two.qps, one.qps);
}

#[test]
fn outputs_follow_request_order() {
    let reqs: Vec<u64> = (0..64).collect();
    let m = measure_qps(&reqs, 3, 4, |&x| Ok(x * x)).unwrap();
    assert_eq!(m.warmup, 4);
    for (i, out) in m.outputs.iter().enumerate() {
        assert_eq!(*out, Some((i * i) as u64));
    }
    assert!(measure_qps(&reqs, 0, 0, |&x| Ok(x)).is_err());
    assert!(measure_qps(&reqs, 1, 64, |&x| Ok(x)).is_err());
    assert!(measure_qps::<u64, u64, _>(&[], 1, 0, |&x| Ok(x)).is_err());
}

#[test]
fn fixture_of_six_first_and_four_second_place_hits() {
    let mut rs: Vec<_> = (0..6).map(|i| (result(&[i, 99]), i)).collect();
    rs.extend((6..10).map(|i| (result(&[99, i]), i)));
    assert_eq!(sr_at_k(&rs, 1).unwrap(), 0.6);
    assert_eq!(sr_at_k(&rs, 3).unwrap(), 1.0);
}

proptest! {
    #[test]
    fn sr_is_monotone_and_order_free(
        rankings in prop::collection::vec((prop::collection::vec(0u64..20, 0..8), 0u64..20), 1..40),
        seed in any::<u64>(),
    ) {
        let mut rs: Vec<_> = rankings
            .into_iter()
            .map(|(mut ids, truth)| {
                ids.sort_unstable();
                ids.dedup();
                (result(&ids), truth)
            })
            .collect();
        let sr: Vec<f64> = [1, 3, 5].into_iter().map(|k| sr_at_k(&rs, k).unwrap()).collect();
        prop_assert!(sr[0] <= sr[1] && sr[1] <= sr[2]);
        rs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(sr_at_k(&rs, 1).unwrap(), sr[0]);
        prop_assert_eq!(sr_at_k(&rs, 5).unwrap(), sr[2]);
    }
}

fn small_verifier(with_embedding: bool) -> (poiverify::model::Corpus, Verifier) {
    let corpus = generate_corpus(&CorpusParams {
        n_pois: 80,
        views_per_poi: 2,
        ..Default::default()
    })
    .unwrap();
    let params = with_embedding
        .then(|| poiverify::embedder::EmbedderParams::init(Default::default(), 2).unwrap());
    let verifier = Verifier::assemble(
        &corpus,
        ChannelParams::default().build().unwrap(),
        params,
        ForestParams::default(),
        DEFAULT_GEO_PRECISION,
        PipelineConfig::default(),
    )
    .unwrap();
    (corpus, verifier)
}

#[test]
fn report_covers_every_variant_and_is_reproducible() {
    let (corpus, verifier) = small_verifier(true);
    let cfg = BenchConfig {
        max_queries: Some(40),
        workers: 2,
        warmup_fraction: 0.1,
    };
    let a = run_benchmark(&corpus, &verifier, &Variant::ALL, &cfg).unwrap();
    let b = run_benchmark(&corpus, &verifier, &Variant::ALL, &cfg).unwrap();
    assert_eq!(a.config_fingerprint, b.config_fingerprint);
    assert_eq!(a.warmup, 4);
    for v in Variant::ALL {
        let (ra, rb) = (a.row(v).unwrap(), b.row(v).unwrap());
        assert_eq!(ra.n_queries, 40);
        assert_eq!((ra.sr1, ra.sr3, ra.sr5), (rb.sr1, rb.sr3, rb.sr5));
        assert!(ra.sr1 <= ra.sr3 && ra.sr3 <= ra.sr5);
        assert!(ra.qps > 0.0);
        assert_eq!(ra.per_worker.len(), 2);
    }
    let table = a.to_table();
    for v in Variant::ALL {
        assert!(table.lines().any(|l| l.starts_with(&format!("{v} "))));
    }
    assert!(table.contains("expert"));
    let json = serde_json::to_string(&a).unwrap();
    assert_eq!(
        serde_json::from_str::<poiverify::evalbench::EvalReport>(&json).unwrap(),
        a
    );

    let other = run_benchmark(
        &corpus,
        &verifier,
        &Variant::ALL,
        &BenchConfig {
            max_queries: Some(30),
            ..cfg
        },
    )
    .unwrap();
    assert_ne!(other.config_fingerprint, a.config_fingerprint);
}

#[test]
fn embedding_rows_need_parameters() {
    let (corpus, verifier) = small_verifier(false);
    let cfg = BenchConfig {
        max_queries: Some(10),
        ..Default::default()
    };
    let err = run_benchmark(&corpus, &verifier, &Variant::ALL, &cfg).unwrap_err();
    assert!(matches!(err, Error::Dependency(_)));
    let staged = run_benchmark(&corpus, &verifier, &[Variant::V1, Variant::V1Star], &cfg).unwrap();
    assert_eq!(staged.rows.len(), 2);
}

#[test]
fn requests_are_spread_over_the_test_split() {
    let (corpus, _) = small_verifier(false);
    let all = test_requests(&corpus, None);
    let some = test_requests(&corpus, Some(7));
    assert_eq!(some.len(), 7);
    assert_eq!(some[0].1, all[0].1);
    assert!(some
        .iter()
        .all(|(r, t)| all.iter().any(|(a, u)| a == r && u == t)));
    assert_eq!(test_requests(&corpus, Some(usize::MAX)).len(), all.len());
}
