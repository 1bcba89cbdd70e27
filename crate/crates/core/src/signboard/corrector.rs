use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{param, Error, Result};
use crate::glyph::{self, GlyphId, ALPHABET_SIZE};
use crate::jsonl;

/// Index of the empty symbol in the estimated channel: column ε of a glyph
/// row is its deletion probability; row ε holds insertion probabilities, and
/// its ε column is the probability of not inserting at a slot.
pub const EPSILON: usize = ALPHABET_SIZE;
const SYMBOLS: usize = ALPHABET_SIZE + 1;

/// Lexicon lookup with a noisy-channel error model learnt from
/// (OCR output, true name) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct NameCorrector {
    entries: Vec<LexiconEntry>,
    total_count: u64,
    /// Row-major SYMBOLS × SYMBOLS, rows sum to 1.
    channel: Vec<f64>,
    /// Lexicon indices by first glyph, most frequent first.
    buckets: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq)]
struct LexiconEntry {
    name: String,
    glyphs: Vec<GlyphId>,
    count: u64,
}

/// Result of [`NameCorrector::correct`].
#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub name: String,
    /// ln P(name) + ln P(noisy | name).
    pub log_score: f64,
    /// Posterior of `name` among the lexicon entries that were scored.
    pub posterior: f64,
    pub scored: usize,
}

/// Aligns `truth` to `noisy` by minimum unit-cost edit distance and returns
/// the operations from the start: `(Some(t), Some(o))` substitution or match,
/// `(Some(t), None)` deletion, `(None, Some(o))` insertion. Among optimal
/// alignments substitutions are preferred over insertions and deletions.
pub(crate) fn align(
    truth: &[GlyphId],
    noisy: &[GlyphId],
) -> Vec<(Option<GlyphId>, Option<GlyphId>)> {
    let (n, m) = (truth.len(), noisy.len());
    let w = m + 1;
    let mut dp = vec![0u32; (n + 1) * w];
    for i in 0..=n {
        dp[i * w] = i as u32;
    }
    for (j, cell) in dp[..w].iter_mut().enumerate() {
        *cell = j as u32;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[(i - 1) * w + j - 1] + u32::from(truth[i - 1] != noisy[j - 1]);
            let del = dp[(i - 1) * w + j] + 1;
            let ins = dp[i * w + j - 1] + 1;
            dp[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0
            && j > 0
            && here == dp[(i - 1) * w + j - 1] + u32::from(truth[i - 1] != noisy[j - 1])
        {
            ops.push((Some(truth[i - 1]), Some(noisy[j - 1])));
            i -= 1;
            j -= 1;
        } else if i > 0 && here == dp[(i - 1) * w + j] + 1 {
            ops.push((Some(truth[i - 1]), None));
            i -= 1;
        } else {
            ops.push((None, Some(noisy[j - 1])));
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

fn encode(name: &str) -> Result<Vec<GlyphId>> {
    glyph::encode_name(name).ok_or_else(|| {
        Error::Parameter(format!(
            "name {name:?} uses characters outside the glyph alphabet"
        ))
    })
}

/// Fits the channel as the add-one-smoothed maximum-likelihood estimate over
/// character alignments of `pairs` (noisy, true), and stores `lexicon` with
/// its frequencies as the prior over names.
pub fn fit_corrector(
    pairs: &[(String, String)],
    lexicon: &[(String, u64)],
) -> Result<NameCorrector> {
    if pairs.is_empty() {
        return param("fit_corrector needs at least one (noisy, true) pair");
    }
    let mut counts = vec![1.0f64; SYMBOLS * SYMBOLS];
    for (noisy, truth) in pairs {
        let (noisy, truth) = (encode(noisy)?, encode(truth)?);
        for (t, o) in align(&truth, &noisy) {
            let row = t.map_or(EPSILON, usize::from);
            let col = o.map_or(EPSILON, usize::from);
            counts[row * SYMBOLS + col] += 1.0;
        }
        // every slot ends with a "stop inserting" event
        counts[EPSILON * SYMBOLS + EPSILON] += (truth.len() + 1) as f64;
    }
    for row in counts.chunks_mut(SYMBOLS) {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
    }
    NameCorrector::from_parts(counts, lexicon)
}

impl NameCorrector {
    /// Builds a corrector from an explicit channel matrix ((65 × 65), rows
    /// summing to 1, index 64 = ε) and a lexicon with counts. Repeated names
    /// have their counts merged.
    pub fn from_parts(channel: Vec<f64>, lexicon: &[(String, u64)]) -> Result<Self> {
        if channel.len() != SYMBOLS * SYMBOLS {
            return param("channel must be a 65×65 matrix");
        }
        for row in channel.chunks(SYMBOLS) {
            if row.iter().any(|p| !(0.0..=1.0).contains(p))
                || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9
            {
                return param("channel rows must be probability distributions");
            }
        }
        let mut merged: HashMap<&str, u64> = HashMap::new();
        for (name, count) in lexicon {
            if name.is_empty() {
                return param("lexicon names must be non-empty");
            }
            *merged.entry(name.as_str()).or_default() += count;
        }
        let mut entries = Vec::with_capacity(merged.len());
        for (name, count) in merged {
            if count == 0 {
                continue;
            }
            entries.push(LexiconEntry {
                name: name.to_owned(),
                glyphs: encode(name)?,
                count,
            });
        }
        entries.sort_by(|a, b| a.name.cmp(&b.name));
        let total_count = entries.iter().map(|e| e.count).sum();
        let mut buckets = vec![Vec::new(); ALPHABET_SIZE];
        for (i, e) in entries.iter().enumerate() {
            buckets[e.glyphs[0] as usize].push(i as u32);
        }
        for b in &mut buckets {
            b.sort_by(|&x, &y| {
                let (x, y) = (&entries[x as usize], &entries[y as usize]);
                y.count.cmp(&x.count).then_with(|| x.name.cmp(&y.name))
            });
        }
        Ok(Self {
            entries,
            total_count,
            channel,
            buckets,
        })
    }

    pub fn lexicon_len(&self) -> usize {
        self.entries.len()
    }

    /// Lexicon entries and counts in name order.
    pub fn lexicon(&self) -> impl Iterator<Item = (&str, u64)> {
        self.entries.iter().map(|e| (e.name.as_str(), e.count))
    }

    /// Estimated P(column | row); index [`EPSILON`] is the empty symbol.
    pub fn channel_prob(&self, row: usize, col: usize) -> f64 {
        self.channel[row * SYMBOLS + col]
    }

    pub fn channel_row(&self, row: usize) -> &[f64] {
        &self.channel[row * SYMBOLS..(row + 1) * SYMBOLS]
    }

    /// P(noisy | truth): total probability over all alignments of the
    /// estimated channel, where each slot (before every true glyph and after
    /// the last) emits any number of insertions and then stops.
    pub fn likelihood(&self, truth: &[GlyphId], noisy: &[GlyphId]) -> f64 {
        let (n, m) = (truth.len(), noisy.len());
        let stop = self.channel[EPSILON * SYMBOLS + EPSILON];
        let ins = |o: GlyphId| self.channel[EPSILON * SYMBOLS + o as usize];
        let w = m + 1;
        let mut f = vec![0.0f64; (n + 1) * w];
        f[0] = 1.0;
        for i in 0..=n {
            for j in 0..=m {
                let mut v = if i == 0 && j == 0 { 1.0 } else { 0.0 };
                if j > 0 {
                    v += f[i * w + j - 1] * ins(noisy[j - 1]);
                }
                if i > 0 {
                    let row = truth[i - 1] as usize * SYMBOLS;
                    v += f[(i - 1) * w + j] * stop * self.channel[row + EPSILON];
                    if j > 0 {
                        v += f[(i - 1) * w + j - 1]
                            * stop
                            * self.channel[row + noisy[j - 1] as usize];
                    }
                }
                f[i * w + j] = v;
            }
        }
        f[n * w + m] * stop
    }

    fn prior(&self, entry: &LexiconEntry) -> f64 {
        entry.count as f64 / self.total_count as f64
    }

    /// Lexicon indices considered for `noisy` under a beam of `beam`.
    fn candidates(&self, noisy: &[GlyphId], beam: usize) -> Vec<u32> {
        if beam >= self.entries.len() {
            return (0..self.entries.len() as u32).collect();
        }
        // Visit first-glyph buckets in order of how likely their glyph is to
        // be read as the observed first glyph.
        let mut order: Vec<usize> = (0..ALPHABET_SIZE).collect();
        match noisy.first() {
            Some(&o) => order.sort_by(|&a, &b| {
                self.channel[b * SYMBOLS + o as usize]
                    .total_cmp(&self.channel[a * SYMBOLS + o as usize])
                    .then(a.cmp(&b))
            }),
            None => order.sort_by_key(|&g| std::cmp::Reverse(self.buckets[g].len())),
        }
        let len = noisy.len();
        let mut out = Vec::with_capacity(beam);
        'outer: for g in order {
            for &idx in &self.buckets[g] {
                if self.entries[idx as usize].glyphs.len().abs_diff(len) <= 2 {
                    out.push(idx);
                    if out.len() == beam {
                        break 'outer;
                    }
                }
            }
        }
        out
    }

    /// Maximizes P(entry) · P(noisy | entry) over the lexicon.
    ///
    /// With `beam >= lexicon size` every entry is scored. Otherwise at most
    /// `beam` entries are scored, drawn from the first-glyph buckets most
    /// compatible with the observed first glyph and restricted to lengths
    /// within ±2 of the observation. Ties go to the lexicographically
    /// smaller name.
    pub fn correct(&self, noisy: &str, beam: usize) -> Result<Correction> {
        if self.entries.is_empty() {
            return Err(Error::State("name corrector has an empty lexicon".into()));
        }
        if beam == 0 {
            return param("beam must be at least 1");
        }
        let observed = encode(noisy)?;
        let candidates = self.candidates(&observed, beam);
        if candidates.is_empty() {
            return Ok(Correction {
                name: noisy.to_owned(),
                log_score: f64::NEG_INFINITY,
                posterior: 0.0,
                scored: 0,
            });
        }
        let mut best: Option<(f64, usize)> = None;
        let mut joint = Vec::with_capacity(candidates.len());
        for &idx in &candidates {
            let e = &self.entries[idx as usize];
            let p = self.prior(e) * self.likelihood(&e.glyphs, &observed);
            joint.push(p);
            let better = match best {
                None => true,
                Some((bp, bi)) => p > bp || (p == bp && e.name < self.entries[bi].name),
            };
            if better {
                best = Some((p, idx as usize));
            }
        }
        let (p, idx) = best.expect("at least one candidate");
        let total: f64 = joint.iter().sum();
        Ok(Correction {
            name: self.entries[idx].name.clone(),
            log_score: p.ln(),
            posterior: if total > 0.0 { p / total } else { 0.0 },
            scored: candidates.len(),
        })
    }
}

/// Free-function form of [`NameCorrector::correct`].
pub fn correct_name(noisy: &str, corr: &NameCorrector, beam: usize) -> Result<Correction> {
    corr.correct(noisy, beam)
}

pub const CORRECTOR_FORMAT: &str = "poiverify-corrector";
pub const CORRECTOR_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum CorrectorLine {
    /// `from` is a glyph, or "" for ε.
    ChannelRow {
        from: String,
        probs: Vec<f64>,
    },
    Lexicon {
        name: String,
        count: u64,
    },
}

impl NameCorrector {
    /// Versioned line-delimited JSON: header, 65 `channel_row` records
    /// (glyphs in alphabet order, then ε as `""`), then `lexicon` records in
    /// name order. Each row's `probs` are indexed by glyph with ε last.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let mut meta = Map::new();
        meta.insert("symbols".into(), Value::from(SYMBOLS));
        meta.insert("lexicon".into(), Value::from(self.entries.len()));
        jsonl::write_header(&mut w, CORRECTOR_FORMAT, CORRECTOR_VERSION, meta)?;
        for row in 0..SYMBOLS {
            let from = if row == EPSILON {
                String::new()
            } else {
                glyph::glyph_char(row as GlyphId).to_string()
            };
            jsonl::write_record(
                &mut w,
                &CorrectorLine::ChannelRow {
                    from,
                    probs: self.channel_row(row).to_vec(),
                },
            )?;
        }
        for e in &self.entries {
            jsonl::write_record(
                &mut w,
                &CorrectorLine::Lexicon {
                    name: e.name.clone(),
                    count: e.count,
                },
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        jsonl::read_header(&mut lines, CORRECTOR_FORMAT, CORRECTOR_VERSION)?;
        let mut channel = Vec::with_capacity(SYMBOLS * SYMBOLS);
        let mut lexicon = Vec::new();
        let mut rows = 0;
        while let Some(line) = jsonl::next_record(&mut lines, CORRECTOR_FORMAT)? {
            match line {
                CorrectorLine::ChannelRow { from, probs } => {
                    let expected = if rows == EPSILON {
                        String::new()
                    } else {
                        glyph::glyph_char(rows as GlyphId).to_string()
                    };
                    if rows >= SYMBOLS
                        || from != expected
                        || probs.len() != SYMBOLS
                        || !lexicon.is_empty()
                    {
                        return Err(Error::Format(format!("unexpected channel row {rows}")));
                    }
                    channel.extend(probs);
                    rows += 1;
                }
                CorrectorLine::Lexicon { name, count } => lexicon.push((name, count)),
            }
        }
        if rows != SYMBOLS {
            return Err(Error::Format(format!(
                "expected {SYMBOLS} channel rows, found {rows}"
            )));
        }
        Self::from_parts(channel, &lexicon)
    }
}
