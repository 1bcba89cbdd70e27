//! The four verification variants over one archive.
//!
//! * `v1`: radius filter, OCR with name correction, rank by name similarity.
//! * `v1*`: as `v1`, with a top tie on name score broken by outline features.
//! * `v2`: embed the request and take the nearest archived embeddings.
//! * `v2*`: fetch `k_rerank` neighbours and re-rank them the `v1*` way.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annindex::{
    normalized_f32, AnnForest, AnnQueryBudget, EmbeddingTable, ForestParams, Scored,
};
use crate::embedder::{embed, EmbedderParams};
use crate::error::{param, Error, Result};
use crate::geoindex::SpatialIndex;
use crate::model::{Corpus, GeoPoint, PoiRecord, SignboardImage, Split};
use crate::signboard::{
    fit_corrector, name_similarity, ocr_read, outline_feature, read_signboard_text, NameCorrector,
    OcrChannel, OutlineFeature,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "v1")]
    V1,
    #[serde(rename = "v1*")]
    V1Star,
    #[serde(rename = "v2")]
    V2,
    #[serde(rename = "v2*")]
    V2Star,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::V1, Variant::V1Star, Variant::V2, Variant::V2Star];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::V1 => "v1",
            Variant::V1Star => "v1*",
            Variant::V2 => "v2",
            Variant::V2Star => "v2*",
        }
    }

    pub fn needs_embedding(self) -> bool {
        matches!(self, Variant::V2 | Variant::V2Star)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::Parameter(format!(
                    "unknown variant {s:?} (expected v1, v1*, v2 or v2*)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationRequest {
    pub signboard: SignboardImage,
    pub shot_location: GeoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub nanos: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub variant: Variant,
    /// Best first; scores never increase and ids are distinct.
    pub ranked: Vec<Scored>,
    pub stage_timings: Vec<StageTiming>,
}

impl VerificationResult {
    pub fn top_id(&self) -> Option<u64> {
        self.ranked.first().map(|s| s.id)
    }
}

struct Stopwatch {
    last: Instant,
    timings: Vec<StageTiming>,
}

impl Stopwatch {
    fn start() -> Self {
        Self {
            last: Instant::now(),
            timings: Vec::with_capacity(4),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage: stage.to_owned(),
            nanos: (now - self.last).as_nanos() as u64,
        });
        self.last = now;
    }
}

/// Knobs shared by the variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Stage-one search radius.
    pub r_km: f64,
    /// Length of the returned ranking.
    pub k_out: usize,
    /// Neighbours re-ranked by `v2*`.
    pub k_rerank: usize,
    /// Corrector beam; `None` scores the whole lexicon.
    pub beam: Option<usize>,
    /// Tree nodes expanded per ANN query.
    pub search_nodes: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            r_km: 0.3,
            k_out: 5,
            k_rerank: 10,
            beam: None,
            search_nodes: 1024,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_km > 0.0 && self.r_km.is_finite()) {
            return param(format!("r_km must be positive, got {}", self.r_km));
        }
        if self.k_out == 0 || self.k_rerank == 0 {
            return param("k_out and k_rerank must be at least 1");
        }
        if self.beam == Some(0) {
            return param("beam must be at least 1");
        }
        Ok(())
    }

    fn beam(&self) -> usize {
        self.beam.unwrap_or(usize::MAX)
    }
}

/// Archived names and outline descriptors, looked up by POI id.
#[derive(Debug, Clone)]
pub struct PoiCatalog {
    index: HashMap<u64, usize>,
    names: Vec<String>,
    outlines: Vec<OutlineFeature>,
}

impl PoiCatalog {
    pub fn build(pois: &[PoiRecord]) -> Result<Self> {
        let mut index = HashMap::with_capacity(pois.len());
        for (i, p) in pois.iter().enumerate() {
            if index.insert(p.id, i).is_some() {
                return Err(Error::Integrity(format!("duplicate POI id {}", p.id)));
            }
        }
        Ok(Self {
            index,
            names: pois.iter().map(|p| p.name.clone()).collect(),
            outlines: pois
                .par_iter()
                .map(|p| outline_feature(&p.signboard))
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    fn slot(&self, id: u64) -> Result<usize> {
        self.index
            .get(&id)
            .copied()
            .ok_or_else(|| Error::Integrity(format!("POI {id} is missing from the catalog")))
    }

    pub fn name(&self, id: u64) -> Result<&str> {
        Ok(&self.names[self.slot(id)?])
    }

    pub fn outline(&self, id: u64) -> Result<&OutlineFeature> {
        Ok(&self.outlines[self.slot(id)?])
    }

    /// Name frequencies over the archive, the corrector's prior.
    pub fn lexicon(&self) -> Vec<(String, u64)> {
        name_counts(self.names.iter().map(String::as_str))
    }
}

fn name_counts<'a>(names: impl Iterator<Item = &'a str>) -> Vec<(String, u64)> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for n in names {
        *counts.entry(n).or_default() += 1;
    }
    let mut out: Vec<(String, u64)> = counts.into_iter().map(|(n, c)| (n.to_owned(), c)).collect();
    out.sort();
    out
}

/// Fits the name corrector from OCR reads of every archived POI and of every
/// train/valid submission, against the archive's name frequencies.
pub fn fit_corpus_corrector(corpus: &Corpus, ch: &OcrChannel) -> Result<NameCorrector> {
    let names: HashMap<u64, &str> = corpus
        .pois
        .iter()
        .map(|p| (p.id, p.name.as_str()))
        .collect();
    let mut pairs: Vec<(String, String)> = corpus
        .pois
        .par_iter()
        .map(|p| (ocr_read(&p.signboard, &p.name, ch), p.name.clone()))
        .collect();
    let subs: Vec<_> = corpus
        .submissions
        .iter()
        .filter(|s| s.split != Split::Test)
        .collect();
    let more: Result<Vec<(String, String)>> = subs
        .par_iter()
        .map(|s| {
            let truth = names.get(&s.truth_id).ok_or_else(|| {
                Error::Integrity(format!("submission refers to unknown POI {}", s.truth_id))
            })?;
            Ok((ocr_read(&s.signboard, truth, ch), (*truth).to_owned()))
        })
        .collect();
    pairs.extend(more?);
    fit_corrector(
        &pairs,
        &name_counts(corpus.pois.iter().map(|p| p.name.as_str())),
    )
}

/// Unit `f32` embeddings of every archived POI from its canonical signboard
/// and true location.
pub fn embed_pois(pois: &[PoiRecord], params: &EmbedderParams) -> Result<EmbeddingTable> {
    let vectors: Result<Vec<Vec<f32>>> = pois
        .par_iter()
        .map(|p| {
            let m = embed(&p.signboard, p.location, params)?;
            normalized_f32(m.as_slice())
                .ok_or_else(|| Error::DegenerateEmbedding(format!("POI {} embeds to zero", p.id)))
        })
        .collect();
    EmbeddingTable::from_pairs(
        params.embedding_dim(),
        pois.iter()
            .map(|p| p.id)
            .zip(vectors?.iter().map(|v| v.as_slice())),
    )
}

/// What `v1` and `v1*` read off the request signboard.
#[derive(Debug, Clone, PartialEq)]
pub struct NameEvidence {
    pub recognized: String,
    pub corrected: String,
}

fn read_name(
    req: &VerificationRequest,
    ch: &OcrChannel,
    corr: &NameCorrector,
    beam: usize,
) -> Result<NameEvidence> {
    let text = read_signboard_text(&req.signboard);
    let recognized = ocr_read(&req.signboard, &text, ch);
    let corrected = corr.correct(&recognized, beam)?.name;
    Ok(NameEvidence {
        recognized,
        corrected,
    })
}

fn by_score_then_id(a: &Scored, b: &Scored) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

/// Reorders the leading group of equal scores by outline cosine to the
/// request, descending, keeping the input order among equal cosines.
fn outline_tiebreak(
    ranked: &mut [Scored],
    query: &OutlineFeature,
    catalog: &PoiCatalog,
) -> Result<()> {
    let Some(top) = ranked.first().map(|s| s.score) else {
        return Ok(());
    };
    let tied = ranked.iter().take_while(|s| s.score == top).count();
    if tied < 2 {
        return Ok(());
    }
    let mut keyed = Vec::with_capacity(tied);
    for s in &ranked[..tied] {
        keyed.push((query.cosine(catalog.outline(s.id)?), *s));
    }
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (slot, (_, s)) in ranked.iter_mut().zip(keyed) {
        *slot = s;
    }
    Ok(())
}

/// Everything the staged variants read.
#[derive(Clone, Copy)]
pub struct StagedParts<'a> {
    pub spatial: &'a SpatialIndex,
    pub catalog: &'a PoiCatalog,
    pub channel: &'a OcrChannel,
    pub corrector: &'a NameCorrector,
}

/// Everything the embedding variants read.
#[derive(Clone, Copy)]
pub struct EmbeddingParts<'a> {
    pub params: &'a EmbedderParams,
    pub forest: &'a AnnForest,
}

fn staged(
    req: &VerificationRequest,
    parts: StagedParts<'_>,
    cfg: &PipelineConfig,
    outline: bool,
) -> Result<VerificationResult> {
    cfg.validate()?;
    let mut sw = Stopwatch::start();
    let nearby = parts.spatial.radius_query(req.shot_location, cfg.r_km)?;
    sw.lap("geo");
    let variant = if outline {
        Variant::V1Star
    } else {
        Variant::V1
    };
    if nearby.is_empty() {
        return Ok(VerificationResult {
            variant,
            ranked: Vec::new(),
            stage_timings: sw.timings,
        });
    }
    let evidence = read_name(req, parts.channel, parts.corrector, cfg.beam())?;
    sw.lap("ocr");
    let mut ranked = Vec::with_capacity(nearby.len());
    for n in &nearby {
        ranked.push(Scored {
            id: n.id,
            score: name_similarity(&evidence.corrected, parts.catalog.name(n.id)?),
        });
    }
    ranked.sort_by(by_score_then_id);
    if outline {
        outline_tiebreak(&mut ranked, &outline_feature(&req.signboard), parts.catalog)?;
    }
    ranked.truncate(cfg.k_out);
    sw.lap("rank");
    Ok(VerificationResult {
        variant,
        ranked,
        stage_timings: sw.timings,
    })
}

/// Radius filter, OCR plus correction, then name similarity with ties by id.
pub fn verify_v1(
    req: &VerificationRequest,
    parts: StagedParts<'_>,
    cfg: &PipelineConfig,
) -> Result<VerificationResult> {
    staged(req, parts, cfg, false)
}

/// `v1` with the top name tie broken by outline similarity.
pub fn verify_v1star(
    req: &VerificationRequest,
    parts: StagedParts<'_>,
    cfg: &PipelineConfig,
) -> Result<VerificationResult> {
    staged(req, parts, cfg, true)
}

fn ann_neighbours(
    req: &VerificationRequest,
    parts: EmbeddingParts<'_>,
    k: usize,
    search_nodes: usize,
) -> Result<Vec<Scored>> {
    if parts.params.embedding_dim() != parts.forest.dim() {
        return Err(Error::Integrity(format!(
            "embedder produces {}-dimensional vectors but the forest holds {}",
            parts.params.embedding_dim(),
            parts.forest.dim()
        )));
    }
    let m = embed(&req.signboard, req.shot_location, parts.params)?;
    let q = normalized_f32(m.as_slice())
        .ok_or_else(|| Error::DegenerateEmbedding("request embeds to zero".into()))?;
    let budget = AnnQueryBudget {
        k,
        search_nodes: search_nodes.max(parts.forest.n_trees()),
    };
    parts.forest.query(&q, budget)
}

/// Single ANN pass over the archived embeddings.
pub fn verify_v2(
    req: &VerificationRequest,
    parts: EmbeddingParts<'_>,
    cfg: &PipelineConfig,
) -> Result<VerificationResult> {
    cfg.validate()?;
    let mut sw = Stopwatch::start();
    let ranked = ann_neighbours(req, parts, cfg.k_out, cfg.search_nodes)?;
    sw.lap("ann");
    Ok(VerificationResult {
        variant: Variant::V2,
        ranked,
        stage_timings: sw.timings,
    })
}

/// ANN retrieval of `k_rerank` neighbours, re-ranked by name similarity to
/// the corrected OCR read. A top tie on name score goes to outline
/// similarity; remaining ties keep the ANN order. Scores are name scores.
pub fn verify_v2star(
    req: &VerificationRequest,
    emb: EmbeddingParts<'_>,
    staged: StagedParts<'_>,
    cfg: &PipelineConfig,
) -> Result<VerificationResult> {
    cfg.validate()?;
    let mut sw = Stopwatch::start();
    let hits = ann_neighbours(req, emb, cfg.k_rerank, cfg.search_nodes)?;
    sw.lap("ann");
    if hits.is_empty() {
        return Ok(VerificationResult {
            variant: Variant::V2Star,
            ranked: hits,
            stage_timings: sw.timings,
        });
    }
    let evidence = read_name(req, staged.channel, staged.corrector, cfg.beam())?;
    sw.lap("ocr");
    // hits arrive by ANN score then id, so a stable sort on the name score
    // leaves ties in ANN order
    let mut ranked = Vec::with_capacity(hits.len());
    for h in &hits {
        ranked.push(Scored {
            id: h.id,
            score: name_similarity(&evidence.corrected, staged.catalog.name(h.id)?),
        });
    }
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    outline_tiebreak(
        &mut ranked,
        &outline_feature(&req.signboard),
        staged.catalog,
    )?;
    ranked.truncate(cfg.k_out);
    sw.lap("rank");
    Ok(VerificationResult {
        variant: Variant::V2Star,
        ranked,
        stage_timings: sw.timings,
    })
}

/// All artifacts of one archive, able to serve any variant whose inputs are
/// present. Immutable once built and safe to share across threads.
pub struct Verifier {
    pub spatial: SpatialIndex,
    pub catalog: PoiCatalog,
    pub channel: OcrChannel,
    pub corrector: NameCorrector,
    pub params: Option<EmbedderParams>,
    pub forest: Option<AnnForest>,
    pub config: PipelineConfig,
}

/// Geohash precision of the stage-one index by default; cells are about
/// 1.2 km × 0.6 km, comfortably above the default radius.
pub const DEFAULT_GEO_PRECISION: usize = 6;

impl Verifier {
    /// Builds every index over `corpus.pois`. The forest is built only when
    /// embedder parameters are given.
    pub fn assemble(
        corpus: &Corpus,
        channel: OcrChannel,
        params: Option<EmbedderParams>,
        forest: ForestParams,
        geo_precision: usize,
        config: PipelineConfig,
    ) -> Result<Self> {
        config.validate()?;
        let forest = match &params {
            Some(p) => Some(AnnForest::build_with(embed_pois(&corpus.pois, p)?, forest)?),
            None => None,
        };
        Ok(Self {
            spatial: SpatialIndex::build(&corpus.pois, geo_precision)?,
            catalog: PoiCatalog::build(&corpus.pois)?,
            corrector: fit_corpus_corrector(corpus, &channel)?,
            channel,
            params,
            forest,
            config,
        })
    }

    pub fn staged_parts(&self) -> StagedParts<'_> {
        StagedParts {
            spatial: &self.spatial,
            catalog: &self.catalog,
            channel: &self.channel,
            corrector: &self.corrector,
        }
    }

    pub fn embedding_parts(&self) -> Result<EmbeddingParts<'_>> {
        let params = self
            .params
            .as_ref()
            .ok_or_else(|| Error::Dependency("trained embedder parameters".into()))?;
        let forest = self
            .forest
            .as_ref()
            .ok_or_else(|| Error::Dependency("ANN forest".into()))?;
        Ok(EmbeddingParts { params, forest })
    }

    pub fn verify(
        &self,
        variant: Variant,
        req: &VerificationRequest,
    ) -> Result<VerificationResult> {
        match variant {
            Variant::V1 => verify_v1(req, self.staged_parts(), &self.config),
            Variant::V1Star => verify_v1star(req, self.staged_parts(), &self.config),
            Variant::V2 => verify_v2(req, self.embedding_parts()?, &self.config),
            Variant::V2Star => verify_v2star(
                req,
                self.embedding_parts()?,
                self.staged_parts(),
                &self.config,
            ),
        }
    }
}
