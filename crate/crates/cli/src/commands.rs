//! Subcommand implementations. Each reads its inputs through the manifest
//! and records what it writes.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use log::info;
use poiverify::annindex::{AnnForest, FOREST_VERSION};
use poiverify::embedder::{train, EmbedderParams, PARAMS_VERSION};
use poiverify::evalbench::{run_benchmark, EvalReport, REPORT_VERSION};
use poiverify::geoindex::SpatialIndex;
use poiverify::model::{
    generate_corpus, read_corpus, write_corpus, Corpus, GeoPoint, SignboardImage, Split,
    CORPUS_VERSION,
};
use poiverify::pipeline::{
    embed_pois, fit_corpus_corrector, PoiCatalog, Variant, VerificationRequest, VerificationResult,
    Verifier,
};
use poiverify::signboard::{NameCorrector, OcrChannel, CHANNEL_VERSION, CORRECTOR_VERSION};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{ArtifactKind, Manifest};

/// One verification request as it travels on the wire or sits in a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireRequest {
    /// Base64 of the 4096 row-major 8-bit intensity levels.
    pub signboard: String,
    pub lon: f64,
    pub lat: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
}

impl WireRequest {
    pub fn from_request(req: &VerificationRequest, variant: Option<Variant>) -> Self {
        Self {
            signboard: req.signboard.to_base64(),
            lon: req.shot_location.lon,
            lat: req.shot_location.lat,
            variant,
        }
    }

    pub fn to_request(&self) -> CliResult<VerificationRequest> {
        let signboard = SignboardImage::from_base64(&self.signboard)
            .map_err(|e| CliError::Usage(format!("signboard: {e}")))?;
        let shot_location = GeoPoint::new(self.lon, self.lat)?;
        Ok(VerificationRequest {
            signboard,
            shot_location,
        })
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    dir: &'a Path,
    manifest: Manifest,
    fingerprint: String,
}

impl<'a> Ctx<'a> {
    fn open(cfg: &'a RunConfig) -> CliResult<Self> {
        cfg.validate()?;
        let dir = cfg.paths.dir.as_path();
        let manifest = Manifest::load(&cfg.paths.resolve(&cfg.paths.manifest))?;
        Ok(Self {
            cfg,
            dir,
            manifest,
            fingerprint: cfg.fingerprint(),
        })
    }

    fn path(&self, kind: ArtifactKind) -> CliResult<std::path::PathBuf> {
        self.manifest.verified_path(kind, self.dir)
    }

    fn record(&mut self, kind: ArtifactKind, file: &str, version: u32) -> CliResult<()> {
        self.manifest
            .record(kind, self.dir, file, version, &self.fingerprint)?;
        self.manifest
            .save(&self.cfg.paths.resolve(&self.cfg.paths.manifest))
    }

    fn corpus(&self) -> CliResult<Corpus> {
        let f = File::open(self.path(ArtifactKind::Corpus)?)?;
        read_corpus(BufReader::new(f)).map_err(|e| CliError::corrupt("corpus", e))
    }

    fn channel(&self) -> CliResult<OcrChannel> {
        let f = File::open(self.path(ArtifactKind::Channel)?)?;
        OcrChannel::read_jsonl(BufReader::new(f)).map_err(|e| CliError::corrupt("OCR channel", e))
    }

    fn corrector(&self) -> CliResult<NameCorrector> {
        let f = File::open(self.path(ArtifactKind::Corrector)?)?;
        NameCorrector::read_jsonl(BufReader::new(f))
            .map_err(|e| CliError::corrupt("name corrector", e))
    }

    fn params(&self) -> CliResult<EmbedderParams> {
        let f = File::open(self.path(ArtifactKind::Params)?)?;
        EmbedderParams::read_from(BufReader::new(f))
            .map_err(|e| CliError::corrupt("embedder parameters", e))
    }

    fn forest(&self) -> CliResult<AnnForest> {
        let f = File::open(self.path(ArtifactKind::Forest)?)?;
        AnnForest::read_from(BufReader::new(f)).map_err(|e| CliError::corrupt("ANN forest", e))
    }

    fn create(&self, file: &str) -> CliResult<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.dir.join(file))?))
    }
}

fn finish(mut w: BufWriter<File>) -> CliResult<()> {
    w.flush()?;
    w.into_inner()
        .map_err(|e| CliError::Runtime(e.to_string()))?
        .sync_all()?;
    Ok(())
}

/// Generates the corpus and the OCR channel. Existing outputs are kept
/// unless `force` is set.
pub fn cmd_generate(cfg: &RunConfig, force: bool) -> CliResult<String> {
    let mut ctx = Ctx::open(cfg)?;
    fs::create_dir_all(ctx.dir)?;
    let p = &cfg.paths;
    for name in [&p.corpus, &p.channel] {
        let path = p.resolve(name);
        if path.exists() && !force {
            return Err(CliError::Usage(format!(
                "{} already exists; pass --force to overwrite",
                path.display()
            )));
        }
    }
    let corpus = generate_corpus(&cfg.corpus)?;
    let mut w = ctx.create(&p.corpus)?;
    write_corpus(&corpus, &mut w)?;
    finish(w)?;
    ctx.record(ArtifactKind::Corpus, &p.corpus, CORPUS_VERSION)?;
    let mut w = ctx.create(&p.channel)?;
    cfg.ocr.build()?.write_jsonl(&mut w)?;
    finish(w)?;
    ctx.record(ArtifactKind::Channel, &p.channel, CHANNEL_VERSION)?;
    Ok(format!(
        "generated {} POIs and {} submissions (duplicate-name rate {:.3}) in {}",
        corpus.pois.len(),
        corpus.submissions.len(),
        corpus.duplicate_name_rate(),
        ctx.dir.display()
    ))
}

pub fn cmd_train(cfg: &RunConfig) -> CliResult<String> {
    let mut ctx = Ctx::open(cfg)?;
    let corpus = ctx.corpus()?;
    let init = EmbedderParams::init(cfg.embedder.hyper, cfg.embedder.init_seed)?;
    let out = train(&corpus, init, &cfg.embedder.train)?;
    let mut w = ctx.create(&cfg.paths.params)?;
    out.params.write_to(&mut w)?;
    finish(w)?;
    ctx.record(ArtifactKind::Params, &cfg.paths.params, PARAMS_VERSION)?;
    let first = out.loss_trace.first().copied().unwrap_or(0.0);
    let last = out.loss_trace.last().copied().unwrap_or(0.0);
    Ok(format!(
        "trained on {} triplets for {} epochs: mean loss {first:.5} -> {last:.5}",
        out.triplets,
        out.loss_trace.len()
    ))
}

/// Fits the corrector and builds the forest over the archive's embeddings.
pub fn cmd_build_index(cfg: &RunConfig) -> CliResult<String> {
    let mut ctx = Ctx::open(cfg)?;
    let corpus = ctx.corpus()?;
    let channel = ctx.channel()?;
    let params = ctx.params()?;
    let corrector = fit_corpus_corrector(&corpus, &channel)?;
    let mut w = ctx.create(&cfg.paths.corrector)?;
    corrector.write_jsonl(&mut w)?;
    finish(w)?;
    ctx.record(
        ArtifactKind::Corrector,
        &cfg.paths.corrector,
        CORRECTOR_VERSION,
    )?;
    let forest = AnnForest::build_with(embed_pois(&corpus.pois, &params)?, cfg.ann)?;
    let stats = forest.stats();
    let mut w = ctx.create(&cfg.paths.forest)?;
    forest.write_to(&mut w)?;
    finish(w)?;
    ctx.record(ArtifactKind::Forest, &cfg.paths.forest, FOREST_VERSION)?;
    Ok(format!(
        "indexed {} POIs in {} trees ({} leaves, mean depth {:.2}); lexicon of {} names",
        forest.len(),
        forest.n_trees(),
        stats.leaves,
        stats.mean_leaf_depth,
        corrector.lexicon_len()
    ))
}

/// Loads everything a verifier needs. Embedding artifacts are loaded only
/// when `with_embedding` is set.
pub fn load_verifier(cfg: &RunConfig, with_embedding: bool) -> CliResult<(Corpus, Verifier)> {
    let ctx = Ctx::open(cfg)?;
    let corpus = ctx.corpus()?;
    let (params, forest) = if with_embedding {
        let params = ctx.params()?;
        let forest = ctx.forest()?;
        if params.embedding_dim() != forest.dim() {
            return Err(CliError::Corruption(format!(
                "embedder emits {} dimensions but the forest holds {}",
                params.embedding_dim(),
                forest.dim()
            )));
        }
        (Some(params), Some(forest))
    } else {
        (None, None)
    };
    let verifier = Verifier {
        spatial: SpatialIndex::build(&corpus.pois, cfg.geo.precision)?,
        catalog: PoiCatalog::build(&corpus.pois)?,
        channel: ctx.channel()?,
        corrector: ctx.corrector()?,
        params,
        forest,
        config: cfg.pipeline,
    };
    Ok((corpus, verifier))
}

/// Where `verify` takes its request from.
pub enum VerifyInput {
    Wire(WireRequest),
    /// The n-th test-split submission of the corpus.
    TestIndex(usize),
}

pub fn cmd_verify(cfg: &RunConfig, input: VerifyInput) -> CliResult<VerificationResult> {
    let variant = match &input {
        VerifyInput::Wire(w) => w.variant.unwrap_or(cfg.variant),
        VerifyInput::TestIndex(_) => cfg.variant,
    };
    let (corpus, verifier) = load_verifier(cfg, variant.needs_embedding())?;
    let req = match input {
        VerifyInput::Wire(w) => w.to_request()?,
        VerifyInput::TestIndex(n) => {
            let s = corpus.submissions_in(Split::Test).nth(n).ok_or_else(|| {
                CliError::Usage(format!("the corpus has no test submission #{n}"))
            })?;
            VerificationRequest {
                signboard: s.signboard.clone(),
                shot_location: s.shot_location,
            }
        }
    };
    Ok(verifier.verify(variant, &req)?)
}

pub fn cmd_bench(cfg: &RunConfig, variants: &[Variant]) -> CliResult<EvalReport> {
    let needs_embedding = variants.iter().any(|v| v.needs_embedding());
    let (corpus, verifier) = load_verifier(cfg, needs_embedding)?;
    let report = run_benchmark(&corpus, &verifier, variants, &cfg.bench)?;
    let mut ctx = Ctx::open(cfg)?;
    let mut w = ctx.create(&cfg.paths.report)?;
    serde_json::to_writer_pretty(&mut w, &report).map_err(|e| CliError::Runtime(e.to_string()))?;
    w.write_all(b"\n")?;
    finish(w)?;
    ctx.record(ArtifactKind::Report, &cfg.paths.report, REPORT_VERSION)?;
    info!(
        "report written to {}",
        cfg.paths.resolve(&cfg.paths.report).display()
    );
    Ok(report)
}
