//! Run configuration: one JSON document covering every command.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use poiverify::annindex::ForestParams;
use poiverify::embedder::{EmbedderHyper, TrainConfig};
use poiverify::evalbench::{fingerprint, BenchConfig};
use poiverify::model::CorpusParams;
use poiverify::pipeline::{PipelineConfig, Variant, DEFAULT_GEO_PRECISION};
use poiverify::signboard::ChannelParams;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeoConfig {
    pub precision: usize,
}

impl Default for GeoConfig {
    fn default() -> Self {
        Self {
            precision: DEFAULT_GEO_PRECISION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub hyper: EmbedderHyper,
    pub train: TrainConfig,
    pub init_seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            hyper: EmbedderHyper::default(),
            train: TrainConfig::default(),
            init_seed: 3,
        }
    }
}

/// Artifact file names, relative to `dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dir: PathBuf,
    pub corpus: String,
    pub channel: String,
    pub corrector: String,
    pub params: String,
    pub forest: String,
    pub report: String,
    pub manifest: String,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("artifacts"),
            corpus: "corpus.jsonl".into(),
            channel: "channel.jsonl".into(),
            corrector: "corrector.jsonl".into(),
            params: "embedder.bin".into(),
            forest: "forest.bin".into(),
            report: "report.json".into(),
            manifest: "manifest.json".into(),
        }
    }
}

impl Paths {
    pub fn resolve(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn names(&self) -> [&str; 7] {
        [
            &self.corpus,
            &self.channel,
            &self.corrector,
            &self.params,
            &self.forest,
            &self.report,
            &self.manifest,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub corpus: CorpusParams,
    pub ocr: ChannelParams,
    pub geo: GeoConfig,
    pub embedder: EmbedderConfig,
    pub ann: ForestParams,
    pub pipeline: PipelineConfig,
    pub bench: BenchConfig,
    /// Variant used by `verify` and as the service default.
    pub variant: Variant,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            corpus: CorpusParams::default(),
            ocr: ChannelParams::default(),
            geo: GeoConfig::default(),
            embedder: EmbedderConfig::default(),
            ann: ForestParams::default(),
            pipeline: PipelineConfig::default(),
            bench: BenchConfig::default(),
            variant: Variant::V2Star,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Re-checks every owning module's constraints.
    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(CliError::Usage(format!(
                "config schema version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.corpus.validate()?;
        self.ocr.build()?;
        if !(1..=poiverify::geoindex::MAX_PRECISION).contains(&self.geo.precision) {
            return Err(CliError::Usage(format!(
                "geo precision {} out of range",
                self.geo.precision
            )));
        }
        self.embedder.hyper.validate()?;
        self.embedder.train.validate()?;
        if self.ann.n_trees == 0 || self.ann.leaf_cap == 0 {
            return Err(CliError::Usage(
                "ann n_trees and leaf_cap must be positive".into(),
            ));
        }
        if self.pipeline.search_nodes < self.ann.n_trees {
            return Err(CliError::Usage(
                "pipeline search_nodes must be at least ann n_trees".into(),
            ));
        }
        self.pipeline.validate()?;
        self.bench.validate()?;
        let names = self.paths.names();
        let distinct: HashSet<&str> = names.iter().copied().collect();
        if distinct.len() != names.len() || names.iter().any(|n| n.is_empty()) {
            return Err(CliError::Usage(
                "artifact paths must be non-empty and distinct".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the effective configuration.
    pub fn fingerprint(&self) -> String {
        fingerprint(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let json = serde_json::to_string_pretty(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.fingerprint(), c.fingerprint());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c: RunConfig =
            serde_json::from_str(r#"{"corpus": {"n_pois": 40}, "variant": "v1*"}"#).unwrap();
        assert_eq!(c.corpus.n_pois, 40);
        assert_eq!(c.corpus.views_per_poi, 4);
        assert_eq!(c.variant, Variant::V1Star);
    }

    #[test]
    fn rejects_clashing_paths_and_bad_schema() {
        let mut c = RunConfig::default();
        c.paths.forest = c.paths.params.clone();
        assert!(matches!(c.validate(), Err(CliError::Usage(_))));
        let c = RunConfig {
            schema_version: 9,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
