use ndarray::Array2;
use poiverify::embedder::{
    attention_weights, cross_attention_fuse, embed, geo_features, gradcheck, image_features, train,
    triplet_loss, EmbedderHyper, EmbedderParams, TrainConfig, PARAMS_VERSION,
};
use poiverify::geoindex::{geohash_decode_str, geohash_encode};
use poiverify::model::{generate_corpus, CorpusParams, GeoPoint, SignboardImage};
use poiverify::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, l: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((l, d), |_| rng.gen_range(-2.0..2.0))
}

fn random_image(rng: &mut ChaCha8Rng) -> SignboardImage {
    let v: Vec<f64> = (0..SignboardImage::LEN).map(|_| rng.gen()).collect();
    SignboardImage::from_intensities(&v).unwrap()
}

fn hyper(l: usize, d: usize) -> EmbedderHyper {
    EmbedderHyper { l, d, gamma: 0.2 }
}

#[test]
fn single_position_attention_passes_values_through() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for d in [1, 4, 32] {
        let params = EmbedderParams::init(hyper(1, d), d as u64).unwrap();
        let g = random_matrix(&mut rng, 1, d);
        let i = random_matrix(&mut rng, 1, d);
        let (fused_i, fused_g) = cross_attention_fuse(&g, &i, &params).unwrap();
        let v_i = i.dot(&params.u);
        let v_g = g.dot(&params.w);
        for (a, b) in fused_i
            .iter()
            .zip(v_i.iter())
            .chain(fused_g.iter().zip(v_g.iter()))
        {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn attention_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (l, d) in [(2, 3), (8, 32), (12, 5)] {
        let params = EmbedderParams::init(hyper(l, d), 9).unwrap();
        let (a, b) = attention_weights(
            &random_matrix(&mut rng, l, d),
            &random_matrix(&mut rng, l, d),
            &params,
        )
        .unwrap();
        for m in [a, b] {
            assert_eq!(m.dim(), (l, l));
            for row in m.rows() {
                assert!(row.iter().all(|&x| x >= 0.0));
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn fuse_rejects_mismatched_shapes() {
    let params = EmbedderParams::init(hyper(3, 4), 0).unwrap();
    let ok = Array2::zeros((3, 4));
    assert!(matches!(
        cross_attention_fuse(&Array2::zeros((2, 4)), &ok, &params),
        Err(Error::Parameter(_))
    ));
    assert!(cross_attention_fuse(&ok, &Array2::zeros((3, 5)), &params).is_err());
}

#[test]
fn blank_image_with_zero_biases_gives_zero_features() {
    let params = EmbedderParams::init(hyper(8, 32), 4).unwrap();
    assert!(params
        .conv1_b
        .iter()
        .chain(&params.conv2_b)
        .chain(&params.proj_b)
        .all(|&b| b == 0.0));
    let f = image_features(&SignboardImage::zeros(), &params);
    assert_eq!(f.dim(), (8, 32));
    assert!(f.iter().all(|&x| x == 0.0));
}

#[test]
fn same_geohash_cell_gives_same_location_features() {
    let params = EmbedderParams::init(hyper(6, 8), 1).unwrap();
    let p = GeoPoint::new(116.35, 39.91).unwrap();
    let cell = geohash_decode_str(geohash_encode(p, 6).unwrap().as_str()).unwrap();
    let q = GeoPoint::new(
        cell.min_lon + 0.9 * (cell.max_lon - cell.min_lon),
        cell.min_lat + 0.1 * (cell.max_lat - cell.min_lat),
    )
    .unwrap();
    assert_eq!(
        geo_features(p, &params).unwrap(),
        geo_features(q, &params).unwrap()
    );
    let far = GeoPoint::new(116.40, 39.95).unwrap();
    assert_ne!(
        geo_features(p, &params).unwrap(),
        geo_features(far, &params).unwrap()
    );
}

#[test]
fn embeddings_are_unit_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = EmbedderParams::init(EmbedderHyper::default(), 5).unwrap();
    for _ in 0..20 {
        let p = GeoPoint::new(rng.gen_range(-170.0..170.0), rng.gen_range(-80.0..80.0)).unwrap();
        let m = embed(&random_image(&mut rng), p, &params).unwrap();
        assert_eq!(m.dim(), 64);
        let norm = m.dot(&m).sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}

#[test]
fn all_zero_parameters_are_degenerate() {
    let params = EmbedderParams::zeros(hyper(2, 2)).unwrap();
    let err = embed(
        &SignboardImage::zeros(),
        GeoPoint::new(1.0, 1.0).unwrap(),
        &params,
    )
    .unwrap_err();
    assert!(matches!(err, Error::DegenerateEmbedding(_)));
}

#[test]
fn gradients_agree_with_finite_differences() {
    for (l, d) in [(2, 2), (2, 4), (3, 2), (3, 4)] {
        for seed in 10..13 {
            for b in gradcheck::check_gradients(l, d, seed, 4).unwrap() {
                assert!(
                    b.probes == 4 && b.max_rel_err <= 1e-4,
                    "l={l} d={d} seed={seed}: {b:?}"
                );
            }
        }
    }
}

#[test]
fn parameter_blob_roundtrip_is_exact() {
    let params = EmbedderParams::init(hyper(4, 6), 8).unwrap();
    let mut buf = Vec::new();
    params.write_to(&mut buf).unwrap();
    let back = EmbedderParams::read_from(buf.as_slice()).unwrap();
    assert_eq!(back, params);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = random_image(&mut rng);
    let p = GeoPoint::new(116.3, 39.9).unwrap();
    assert_eq!(
        embed(&img, p, &params).unwrap(),
        embed(&img, p, &back).unwrap()
    );

    let mut wrong = buf.clone();
    wrong[8..12].copy_from_slice(&(PARAMS_VERSION + 1).to_le_bytes());
    assert!(matches!(
        EmbedderParams::read_from(wrong.as_slice()),
        Err(Error::Version { .. })
    ));
    assert!(EmbedderParams::read_from(&buf[..buf.len() - 1]).is_err());
    let mut longer = buf.clone();
    longer.push(0);
    assert!(EmbedderParams::read_from(longer.as_slice()).is_err());
}

#[test]
fn zero_learning_rate_leaves_parameters_and_loss_unchanged() {
    let corpus = generate_corpus(&CorpusParams {
        n_pois: 12,
        views_per_poi: 2,
        ..Default::default()
    })
    .unwrap();
    let init = EmbedderParams::init(hyper(4, 4), 2).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        lr: 0.0,
        ..Default::default()
    };
    let out = train(&corpus, init.clone(), &cfg).unwrap();
    assert_eq!(out.params, init);
    assert!(
        out.loss_trace.windows(2).all(|w| w[0] == w[1]),
        "{:?}",
        out.loss_trace
    );
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let corpus = generate_corpus(&CorpusParams {
        n_pois: 30,
        views_per_poi: 3,
        ..Default::default()
    })
    .unwrap();
    let init = EmbedderParams::init(hyper(8, 8), 2).unwrap();
    let cfg = TrainConfig {
        epochs: 4,
        ..Default::default()
    };
    let a = train(&corpus, init.clone(), &cfg).unwrap();
    let b = train(&corpus, init, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.loss_trace, b.loss_trace);
    assert!(a.loss_trace[3] < a.loss_trace[0]);
}

#[test]
fn training_needs_two_multi_view_pois() {
    let corpus = generate_corpus(&CorpusParams {
        n_pois: 1,
        views_per_poi: 4,
        ..Default::default()
    })
    .unwrap();
    let init = EmbedderParams::init(hyper(2, 2), 0).unwrap();
    assert!(matches!(
        train(&corpus, init, &TrainConfig::default()),
        Err(Error::Parameter(_))
    ));
}

fn unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn triplet_loss_contract_on_random_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let n = rng.gen_range(1..16);
        let (m, p, q) = (unit(&mut rng, n), unit(&mut rng, n), unit(&mut rng, n));
        let gamma = rng.gen_range(0.0..1.0);
        let loss = triplet_loss(&m, &p, &q, gamma).unwrap();
        assert!(loss >= 0.0);
        let gap = cos(&m, &p) - cos(&m, &q);
        assert_eq!(
            loss == 0.0,
            gap >= gamma,
            "gap {gap} gamma {gamma} loss {loss}"
        );
    }
}

proptest! {
    #[test]
    fn embedding_is_invariant_within_a_cell(shift_lon in 0.0f64..1.0, shift_lat in 0.0f64..1.0) {
        let params = EmbedderParams::init(hyper(5, 4), 6).unwrap();
        let cell = geohash_decode_str("wx4g0").unwrap();
        let p = GeoPoint::new(
            cell.min_lon + shift_lon * (cell.max_lon - cell.min_lon) * 0.999,
            cell.min_lat + shift_lat * (cell.max_lat - cell.min_lat) * 0.999,
        ).unwrap();
        let img = SignboardImage::filled(0.3);
        let c = cell.center();
        prop_assert_eq!(embed(&img, p, &params).unwrap(), embed(&img, c, &params).unwrap());
    }
}
