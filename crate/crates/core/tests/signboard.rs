use std::collections::BTreeMap;

use poiverify::glyph::{self, GlyphId, ALPHABET_SIZE};
use poiverify::model::{render_signboard, Perturbation, SignStyle, SignboardImage};
use poiverify::signboard::{
    fit_corrector, levenshtein, name_similarity, ocr_read, outline_feature, read_signboard_text,
    NameCorrector, OcrChannel, EPSILON,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_name(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let len = rng.gen_range(min..=max);
    (0..len)
        .map(|_| glyph::glyph_char(rng.gen_range(0..ALPHABET_SIZE) as GlyphId))
        .collect()
}

fn render(
    name: &str,
    style: SignStyle,
    pert: Perturbation,
    rng: &mut ChaCha8Rng,
) -> SignboardImage {
    render_signboard(&glyph::encode_name(name).unwrap(), style, pert, rng)
}

fn noisy(rng: &mut ChaCha8Rng) -> Perturbation {
    Perturbation {
        shift_px: rng.gen_range(-1..=1),
        contrast: rng.gen_range(0.7..1.0),
        pixel_sigma: 0.05,
    }
}

#[test]
fn outline_separates_same_board_from_other_boards() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut same_board, mut same_name, mut other) = (0.0, 0.0, 0.0);
    let trials = 1000;
    let mut same_board_wins = 0;
    for _ in 0..trials {
        let name = random_name(&mut rng, 4, 10);
        let style = SignStyle::random(&mut rng);
        let mut restyled = SignStyle::random(&mut rng);
        while restyled == style {
            restyled = SignStyle::random(&mut rng);
        }
        let a = outline_feature(&render(&name, style, noisy(&mut rng), &mut rng));
        let b = outline_feature(&render(&name, style, noisy(&mut rng), &mut rng));
        let c = outline_feature(&render(&name, restyled, noisy(&mut rng), &mut rng));
        let d = outline_feature(&render(
            &random_name(&mut rng, 4, 10),
            SignStyle::random(&mut rng),
            noisy(&mut rng),
            &mut rng,
        ));
        let (ab, ac) = (a.cosine(&b), a.cosine(&c));
        same_board += ab;
        same_name += ac;
        other += a.cosine(&d);
        same_board_wins += usize::from(ab > ac);
    }
    let n = trials as f64;
    let (same_board, same_name, other) = (same_board / n, same_name / n, other / n);
    assert!(
        same_board > same_name && same_board > other,
        "{same_board} {same_name} {other}"
    );
    assert!(same_board_wins as f64 / n >= 0.9, "{same_board_wins}");
}

#[test]
fn outline_ignores_contrast() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let name = random_name(&mut rng, 3, 12);
        let style = SignStyle::random(&mut rng);
        let base = outline_feature(&render(&name, style, Perturbation::NONE, &mut rng));
        let faded = Perturbation {
            contrast: rng.gen_range(0.4..1.0),
            ..Perturbation::NONE
        };
        let other = outline_feature(&render(&name, style, faded, &mut rng));
        assert!(base.cosine(&other) >= 0.999, "{}", base.cosine(&other));
    }
}

#[test]
fn clean_boards_read_back_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let name = random_name(&mut rng, 1, 13);
        let img = render(
            &name,
            SignStyle::random(&mut rng),
            Perturbation::NONE,
            &mut rng,
        );
        assert_eq!(read_signboard_text(&img), name);
    }
}

#[test]
fn ocr_is_deterministic_and_identity_channel_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ch = OcrChannel::with_confusable_substitutions(0.2, 0.05, 0.05, 3, 9).unwrap();
    let id = OcrChannel::identity(9);
    for _ in 0..200 {
        let name = random_name(&mut rng, 2, 10);
        let img = SignboardImage::filled(rng.gen());
        assert_eq!(ocr_read(&img, &name, &ch), ocr_read(&img, &name, &ch));
        assert_eq!(ocr_read(&img, &name, &id), name);
    }
}

proptest! {
    #[test]
    fn similarity_is_a_normalized_edit_distance(a in "[A-Z0-9]{0,8}", b in "[A-Z0-9]{0,8}", c in "[A-Z0-9]{0,8}") {
        let s = name_similarity(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(s, name_similarity(&b, &a));
        prop_assert_eq!(s == 1.0, a == b);
        prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        prop_assert!(levenshtein(&a, &b) <= a.len().max(b.len()));
    }
}

/// P(observed | truth) summed over every alignment path. At each slot the
/// channel may insert a glyph, or stop inserting and then delete or
/// substitute the next true glyph; after the last glyph it must stop.
fn path_sum(c: &NameCorrector, truth: &[GlyphId], observed: &[GlyphId]) -> f64 {
    let stop = c.channel_prob(EPSILON, EPSILON);
    let mut total = 0.0;
    if let Some((&o, rest)) = observed.split_first() {
        total += c.channel_prob(EPSILON, o as usize) * path_sum(c, truth, rest);
    }
    match truth.split_first() {
        None if observed.is_empty() => total += stop,
        None => {}
        Some((&t, trest)) => {
            total += stop * c.channel_prob(t as usize, EPSILON) * path_sum(c, trest, observed);
            if let Some((&o, orest)) = observed.split_first() {
                total += stop * c.channel_prob(t as usize, o as usize) * path_sum(c, trest, orest);
            }
        }
    }
    total
}

fn corrupt(rng: &mut ChaCha8Rng, name: &str) -> String {
    let mut chars: Vec<char> = name.chars().collect();
    if rng.gen_bool(0.6) {
        let i = rng.gen_range(0..chars.len());
        chars[i] = glyph::glyph_char(rng.gen_range(0..ALPHABET_SIZE) as GlyphId);
    }
    if chars.len() > 1 && rng.gen_bool(0.2) {
        chars.remove(rng.gen_range(0..chars.len()));
    }
    if rng.gen_bool(0.2) {
        let i = rng.gen_range(0..=chars.len());
        chars.insert(
            i,
            glyph::glyph_char(rng.gen_range(0..ALPHABET_SIZE) as GlyphId),
        );
    }
    chars.into_iter().collect()
}

#[test]
fn exhaustive_correction_is_the_posterior_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let size = rng.gen_range(1..=100);
        let lexicon: Vec<(String, u64)> = (0..size)
            .map(|_| (random_name(&mut rng, 2, 5), rng.gen_range(1..30)))
            .collect();
        let pairs: Vec<(String, String)> = (0..200)
            .map(|_| {
                let t = random_name(&mut rng, 2, 6);
                (corrupt(&mut rng, &t), t)
            })
            .collect();
        let c = fit_corrector(&pairs, &lexicon).unwrap();
        let mut prior: BTreeMap<&str, u64> = BTreeMap::new();
        for (n, k) in &lexicon {
            *prior.entry(n.as_str()).or_default() += k;
        }
        for _ in 0..8 {
            let base = &lexicon[rng.gen_range(0..lexicon.len())].0;
            let obs = if rng.gen_bool(0.7) {
                corrupt(&mut rng, base)
            } else {
                random_name(&mut rng, 1, 5)
            };
            let o = glyph::encode_name(&obs).unwrap();
            let score =
                |n: &str| prior[n] as f64 * path_sum(&c, &glyph::encode_name(n).unwrap(), &o);
            let best = prior.keys().map(|n| score(n)).fold(0.0, f64::max);
            let got = c.correct(&obs, c.lexicon_len()).unwrap();
            let got_score = score(&got.name);
            assert!(
                got_score >= best * (1.0 - 1e-9),
                "{obs}: got {} ({got_score}), best {best}",
                got.name
            );
        }
    }
}
