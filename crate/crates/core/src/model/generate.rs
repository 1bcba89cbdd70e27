use std::collections::HashSet;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::{render_signboard, Perturbation, SignStyle};
use super::{destination, Corpus, GeoPoint, PoiRecord, Region, Split, StreetViewSubmission};
use crate::error::{param, Result};
use crate::glyph::{self, GlyphId, ALPHABET_SIZE};

/// Perturbations applied to submissions relative to the archived POI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    /// Standard deviation of additive Gaussian pixel noise.
    pub pixel_sigma: f64,
    /// Horizontal shift is uniform in `-max_shift_px..=max_shift_px`.
    pub max_shift_px: u32,
    pub contrast_min: f64,
    pub contrast_max: f64,
    /// Shot positions are uniform in a disk of this radius around the POI.
    pub jitter_max_km: f64,
}

impl NoiseParams {
    pub const NONE: Self = Self {
        pixel_sigma: 0.0,
        max_shift_px: 0,
        contrast_min: 1.0,
        contrast_max: 1.0,
        jitter_max_km: 0.0,
    };

    fn validate(&self) -> Result<()> {
        let ok = self.pixel_sigma >= 0.0
            && self.pixel_sigma.is_finite()
            && self.contrast_min > 0.0
            && self.contrast_min <= self.contrast_max
            && self.contrast_max.is_finite()
            && self.jitter_max_km >= 0.0
            && self.jitter_max_km < 100.0;
        if ok {
            Ok(())
        } else {
            param(format!("invalid noise parameters {self:?}"))
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Perturbation {
        let m = self.max_shift_px as i32;
        Perturbation {
            shift_px: if m > 0 { rng.gen_range(-m..=m) } else { 0 },
            contrast: if self.contrast_max > self.contrast_min {
                rng.gen_range(self.contrast_min..=self.contrast_max)
            } else {
                self.contrast_min
            },
            pixel_sigma: self.pixel_sigma,
        }
    }
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            pixel_sigma: 0.1,
            max_shift_px: 4,
            contrast_min: 0.7,
            contrast_max: 1.3,
            jitter_max_km: 0.25,
        }
    }
}

/// How POI names are drawn.
///
/// A fraction of POIs belong to chains whose names come from a small
/// Zipf-weighted lexicon, so popular names repeat across the map. All other
/// POIs get fresh, unique names.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LexiconParams {
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a POI takes a chain name.
    pub chain_fraction: f64,
    /// Chain lexicon size as a fraction of the POI count (at least one name).
    pub chain_lexicon_ratio: f64,
    pub zipf_exponent: f64,
}

impl Default for LexiconParams {
    fn default() -> Self {
        Self {
            min_len: 4,
            max_len: 10,
            chain_fraction: 0.12,
            chain_lexicon_ratio: 0.01,
            zipf_exponent: 1.0,
        }
    }
}

/// Everything that determines a generated corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusParams {
    pub seed: u64,
    /// POIs shared by the train and valid splits.
    pub n_pois: usize,
    /// Train submissions per train/valid POI. Valid POIs get half as many
    /// (rounded down); test POIs get one and a half times as many.
    pub views_per_poi: usize,
    pub region: Region,
    pub noise: NoiseParams,
    pub lexicon: LexiconParams,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            seed: 1,
            n_pois: 500,
            views_per_poi: 4,
            region: Region::default(),
            noise: NoiseParams::default(),
            lexicon: LexiconParams::default(),
        }
    }
}

/// Test POIs per train/valid POI (12,000 test vs 50,000 train/valid).
const TEST_POI_RATIO: f64 = 12.0 / 50.0;

impl CorpusParams {
    pub fn n_test_pois(&self) -> usize {
        (self.n_pois as f64 * TEST_POI_RATIO).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pois == 0 || self.views_per_poi == 0 {
            return param("n_pois and views_per_poi must be at least 1");
        }
        self.region.validate()?;
        self.noise.validate()?;
        let lx = &self.lexicon;
        if lx.min_len == 0
            || lx.min_len > lx.max_len
            || lx.max_len > super::render::MAX_RENDERED_GLYPHS
            || !(0.0..=1.0).contains(&lx.chain_fraction)
            || lx.chain_lexicon_ratio < 0.0
            || lx.zipf_exponent < 0.0
        {
            return param(format!("invalid lexicon parameters {lx:?}"));
        }
        Ok(())
    }
}

/// Generates a synthetic corpus. Output is a pure function of `params`.
pub fn generate_corpus(params: &CorpusParams) -> Result<Corpus> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n_test = params.n_test_pois();
    let total = params.n_pois + n_test;

    let names = sample_names(total, &params.lexicon, &mut rng);
    let region = params.region;
    let mut pois = Vec::with_capacity(total);
    let mut styles = Vec::with_capacity(total);
    for (i, name) in names.into_iter().enumerate() {
        let location = GeoPoint {
            lon: rng.gen_range(region.min_lon..region.max_lon),
            lat: rng.gen_range(region.min_lat..region.max_lat),
        };
        let style = SignStyle::random(&mut rng);
        let glyphs = glyph::encode_name(&name).expect("generated names use the alphabet");
        let signboard = render_signboard(&glyphs, style, Perturbation::NONE, &mut rng);
        pois.push(PoiRecord {
            id: i as u64 + 1,
            name,
            location,
            signboard,
        });
        styles.push((glyphs, style));
    }

    let views = params.views_per_poi;
    let mut submissions = Vec::new();
    for (i, poi) in pois.iter().enumerate() {
        let plan: &[(Split, usize)] = if i < params.n_pois {
            &[(Split::Train, views), (Split::Valid, views / 2)]
        } else {
            &[(Split::Test, views + views / 2)]
        };
        let (glyphs, style) = &styles[i];
        for &(split, count) in plan {
            for _ in 0..count {
                let shot_location = jitter(poi.location, params.noise.jitter_max_km, &mut rng);
                let pert = params.noise.sample(&mut rng);
                let signboard = render_signboard(glyphs, *style, pert, &mut rng);
                submissions.push(StreetViewSubmission {
                    truth_id: poi.id,
                    shot_location,
                    signboard,
                    split,
                });
            }
        }
    }
    Ok(Corpus { pois, submissions })
}

fn jitter<R: Rng + ?Sized>(p: GeoPoint, max_km: f64, rng: &mut R) -> GeoPoint {
    if max_km <= 0.0 {
        return p;
    }
    // sqrt for uniform density over the disk
    let dist = max_km * rng.gen::<f64>().sqrt();
    let bearing = rng.gen_range(0.0..std::f64::consts::TAU);
    destination(p, dist, bearing)
}

fn random_name<R: Rng + ?Sized>(lx: &LexiconParams, rng: &mut R) -> String {
    let len = rng.gen_range(lx.min_len..=lx.max_len);
    let glyphs: Vec<GlyphId> = (0..len)
        .map(|_| rng.gen_range(0..ALPHABET_SIZE) as GlyphId)
        .collect();
    glyph::decode_name(&glyphs)
}

fn sample_names<R: Rng + ?Sized>(n: usize, lx: &LexiconParams, rng: &mut R) -> Vec<String> {
    let mut used = HashSet::new();
    let mut fresh = |rng: &mut R| loop {
        let name = random_name(lx, rng);
        if used.insert(name.clone()) {
            return name;
        }
    };
    let chain_size = ((n as f64 * lx.chain_lexicon_ratio).round() as usize).max(1);
    let chains: Vec<String> = (0..chain_size).map(|_| fresh(rng)).collect();
    let weights: Vec<f64> = (1..=chain_size)
        .map(|k| (k as f64).powf(-lx.zipf_exponent))
        .collect();
    let zipf = WeightedIndex::new(&weights).expect("positive weights");
    (0..n)
        .map(|_| {
            if rng.gen_bool(lx.chain_fraction) {
                chains[zipf.sample(rng)].clone()
            } else {
                fresh(rng)
            }
        })
        .collect()
}
