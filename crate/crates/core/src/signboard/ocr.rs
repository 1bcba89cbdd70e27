use std::io::{BufRead, Write};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{param, Error, Result};
use crate::glyph::{self, GlyphId, ALPHABET_SIZE};
use crate::jsonl;
use crate::model::SignboardImage;

const ROW_TOLERANCE: f64 = 1e-9;

/// Parameters of a channel built by [`OcrChannel::with_confusable_substitutions`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub p_sub: f64,
    pub p_delete: f64,
    pub p_insert: f64,
    pub partners: usize,
    pub seed: u64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            p_sub: 0.08,
            p_delete: 0.02,
            p_insert: 0.02,
            partners: 3,
            seed: 11,
        }
    }
}

impl ChannelParams {
    pub fn build(&self) -> Result<OcrChannel> {
        OcrChannel::with_confusable_substitutions(
            self.p_sub,
            self.p_delete,
            self.p_insert,
            self.partners,
            self.seed,
        )
    }
}

/// Simulated character recognizer.
///
/// For each glyph of the depicted text the channel may first insert a
/// uniformly random glyph (probability `p_insert`), then either drops the
/// glyph (`p_delete`) or emits a glyph drawn from its confusion row. One more
/// insertion slot follows the last glyph.
#[derive(Debug, Clone, PartialEq)]
pub struct OcrChannel {
    confusion: Vec<f64>,
    p_delete: f64,
    p_insert: f64,
    seed: u64,
}

impl OcrChannel {
    /// `confusion` is a row-major 64×64 matrix; row `t` is the output
    /// distribution for true glyph `t`.
    pub fn new(confusion: Vec<f64>, p_delete: f64, p_insert: f64, seed: u64) -> Result<Self> {
        if confusion.len() != ALPHABET_SIZE * ALPHABET_SIZE {
            return param("confusion matrix must be 64×64");
        }
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(p_delete) || !prob(p_insert) || !confusion.iter().all(|&p| prob(p)) {
            return param("channel probabilities must lie in [0, 1]");
        }
        for row in confusion.chunks(ALPHABET_SIZE) {
            if (row.iter().sum::<f64>() - 1.0).abs() > ROW_TOLERANCE {
                return param("confusion rows must sum to 1");
            }
        }
        Ok(Self {
            confusion,
            p_delete,
            p_insert,
            seed,
        })
    }

    /// A channel that never errs.
    pub fn identity(seed: u64) -> Self {
        Self::with_confusable_substitutions(0.0, 0.0, 0.0, 1, seed)
            .expect("identity channel is valid")
    }

    /// Substitutions spread evenly over each glyph's `partners` most similar
    /// glyphs, with total substitution probability `p_sub`.
    pub fn with_confusable_substitutions(
        p_sub: f64,
        p_delete: f64,
        p_insert: f64,
        partners: usize,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_sub) || partners == 0 {
            return param("p_sub must lie in [0, 1] and partners must be positive");
        }
        let mut m = vec![0.0; ALPHABET_SIZE * ALPHABET_SIZE];
        for t in 0..ALPHABET_SIZE {
            m[t * ALPHABET_SIZE + t] = 1.0 - p_sub;
            for o in glyph::confusable(t as GlyphId, partners) {
                m[t * ALPHABET_SIZE + o as usize] += p_sub / partners as f64;
            }
        }
        Self::new(m, p_delete, p_insert, seed)
    }

    /// Probability that true glyph `t` is read as `o` (given it is not deleted).
    pub fn confusion(&self, t: GlyphId, o: GlyphId) -> f64 {
        self.confusion[t as usize * ALPHABET_SIZE + o as usize]
    }

    pub fn confusion_row(&self, t: GlyphId) -> &[f64] {
        let start = t as usize * ALPHABET_SIZE;
        &self.confusion[start..start + ALPHABET_SIZE]
    }

    pub fn p_delete(&self) -> f64 {
        self.p_delete
    }

    pub fn p_insert(&self) -> f64 {
        self.p_insert
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Mean off-diagonal mass of the confusion rows.
    pub fn substitution_rate(&self) -> f64 {
        (0..ALPHABET_SIZE)
            .map(|t| 1.0 - self.confusion[t * ALPHABET_SIZE + t])
            .sum::<f64>()
            / ALPHABET_SIZE as f64
    }

    fn sample_row<R: Rng>(&self, t: GlyphId, rng: &mut R) -> GlyphId {
        let row = self.confusion_row(t);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (o, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return o as GlyphId;
            }
        }
        // rounding left u above the cumulative sum; take the last non-zero entry
        row.iter().rposition(|&p| p > 0.0).unwrap_or(t as usize) as GlyphId
    }
}

fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Reads `truth_name` off `img` through the channel.
///
/// The result is a deterministic function of the image, the name and the
/// channel seed, so repeated or concurrent reads of the same input agree.
/// Characters outside the glyph alphabet pass through unchanged.
pub fn ocr_read(img: &SignboardImage, truth_name: &str, ch: &OcrChannel) -> String {
    let h = fnv1a(
        truth_name.as_bytes(),
        fnv1a(img.levels(), 0xcbf2_9ce4_8422_2325),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(h ^ ch.seed.rotate_left(17));
    let mut out = String::with_capacity(truth_name.len() + 2);
    let maybe_insert = |rng: &mut ChaCha8Rng, out: &mut String| {
        if ch.p_insert > 0.0 && rng.gen_bool(ch.p_insert) {
            out.push(glyph::glyph_char(rng.gen_range(0..ALPHABET_SIZE) as GlyphId));
        }
    };
    for c in truth_name.chars() {
        maybe_insert(&mut rng, &mut out);
        let Some(t) = glyph::glyph_index(c) else {
            out.push(c);
            continue;
        };
        if ch.p_delete > 0.0 && rng.gen_bool(ch.p_delete) {
            continue;
        }
        out.push(glyph::glyph_char(ch.sample_row(t, &mut rng)));
    }
    maybe_insert(&mut rng, &mut out);
    out
}

pub const CHANNEL_FORMAT: &str = "poiverify-ocr-channel";
pub const CHANNEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ChannelLine {
    ConfusionRow { glyph: String, probs: Vec<f64> },
}

impl OcrChannel {
    /// Writes the channel in the versioned line-delimited JSON container:
    /// a header carrying `p_delete`, `p_insert` and `seed`, then one
    /// `confusion_row` record per glyph in alphabet order.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let mut meta = Map::new();
        meta.insert("p_delete".into(), Value::from(self.p_delete));
        meta.insert("p_insert".into(), Value::from(self.p_insert));
        meta.insert("seed".into(), Value::from(self.seed));
        jsonl::write_header(&mut w, CHANNEL_FORMAT, CHANNEL_VERSION, meta)?;
        for t in 0..ALPHABET_SIZE {
            jsonl::write_record(
                &mut w,
                &ChannelLine::ConfusionRow {
                    glyph: glyph::glyph_char(t as GlyphId).to_string(),
                    probs: self.confusion_row(t as GlyphId).to_vec(),
                },
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = jsonl::read_header(&mut lines, CHANNEL_FORMAT, CHANNEL_VERSION)?;
        let num = |k: &str| {
            header
                .get(k)
                .and_then(Value::as_f64)
                .ok_or_else(|| Error::Format(format!("channel header lacks {k}")))
        };
        let seed = header
            .get("seed")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Format("channel header lacks seed".into()))?;
        let mut confusion = Vec::with_capacity(ALPHABET_SIZE * ALPHABET_SIZE);
        for t in 0..ALPHABET_SIZE {
            let ChannelLine::ConfusionRow { glyph: g, probs } =
                jsonl::next_record(&mut lines, CHANNEL_FORMAT)?
                    .ok_or_else(|| Error::Format("truncated channel file".into()))?;
            if g.chars().next().and_then(glyph::glyph_index) != Some(t as GlyphId)
                || probs.len() != ALPHABET_SIZE
            {
                return Err(Error::Format(format!("bad confusion row {t}")));
            }
            confusion.extend(probs);
        }
        Self::new(confusion, num("p_delete")?, num("p_insert")?, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_name(rng: &mut ChaCha8Rng, len: usize) -> String {
        (0..len)
            .map(|_| glyph::glyph_char(rng.gen_range(0..ALPHABET_SIZE) as GlyphId))
            .collect()
    }

    #[test]
    fn identity_channel_is_identity() {
        let ch = OcrChannel::identity(7);
        let img = SignboardImage::zeros();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let name = sample_name(&mut rng, 9);
            assert_eq!(ocr_read(&img, &name, &ch), name);
        }
    }

    #[test]
    fn certain_deletion_erases_everything() {
        let ch = OcrChannel::with_confusable_substitutions(0.0, 1.0, 0.0, 1, 3).unwrap();
        assert_eq!(ocr_read(&SignboardImage::zeros(), "Hello9", &ch), "");
    }

    #[test]
    fn deterministic_per_input() {
        let ch = OcrChannel::with_confusable_substitutions(0.3, 0.1, 0.1, 3, 11).unwrap();
        let img = SignboardImage::filled(0.5);
        let a = ocr_read(&img, "Shopfront", &ch);
        assert_eq!(a, ocr_read(&img, "Shopfront", &ch));
    }

    #[test]
    fn substitution_rate_matches_configuration() {
        // Monte Carlo over 10^5 glyphs with indels disabled.
        let rate = 0.08;
        let ch = OcrChannel::with_confusable_substitutions(rate, 0.0, 0.0, 3, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (mut glyphs, mut subs) = (0usize, 0usize);
        let mut level = 0u8;
        while glyphs < 100_000 {
            let name = sample_name(&mut rng, 10);
            level = level.wrapping_add(1);
            let img = SignboardImage::filled(level as f64 / 255.0);
            let read = ocr_read(&img, &name, &ch);
            assert_eq!(read.chars().count(), 10);
            subs += name
                .chars()
                .zip(read.chars())
                .filter(|(a, b)| a != b)
                .count();
            glyphs += 10;
        }
        let measured = subs as f64 / glyphs as f64;
        assert!((measured - rate).abs() <= 0.01, "measured {measured}");
    }

    #[test]
    fn rejects_invalid_matrices() {
        assert!(OcrChannel::new(vec![0.0; 10], 0.0, 0.0, 0).is_err());
        let mut m = vec![0.0; ALPHABET_SIZE * ALPHABET_SIZE];
        assert!(OcrChannel::new(m.clone(), 0.0, 0.0, 0).is_err());
        for t in 0..ALPHABET_SIZE {
            m[t * ALPHABET_SIZE + t] = 1.0;
        }
        assert!(OcrChannel::new(m.clone(), 1.5, 0.0, 0).is_err());
        assert!(OcrChannel::new(m, 0.1, 0.1, 0).is_ok());
    }

    #[test]
    fn jsonl_roundtrip() {
        let ch = OcrChannel::with_confusable_substitutions(0.07, 0.02, 0.03, 3, 42).unwrap();
        let mut buf = Vec::new();
        ch.write_jsonl(&mut buf).unwrap();
        assert_eq!(OcrChannel::read_jsonl(buf.as_slice()).unwrap(), ch);
    }
}
