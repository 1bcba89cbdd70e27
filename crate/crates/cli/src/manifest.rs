//! Artifact manifest: the record of what each command produced, used to
//! check dependencies and detect corrupted files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Corpus,
    Channel,
    Corrector,
    Params,
    Forest,
    Report,
}

impl ArtifactKind {
    pub fn describe(self) -> &'static str {
        match self {
            ArtifactKind::Corpus => "corpus (run `generate`)",
            ArtifactKind::Channel => "OCR channel (run `generate`)",
            ArtifactKind::Corrector => "name corrector (run `build-index`)",
            ArtifactKind::Params => "trained embedder parameters (run `train`)",
            ArtifactKind::Forest => "ANN forest (run `build-index`)",
            ArtifactKind::Report => "benchmark report (run `bench`)",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// File name relative to the manifest's directory.
    pub path: String,
    pub format_version: u32,
    pub sha256: String,
    pub config_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub artifacts: BTreeMap<ArtifactKind, ArtifactEntry>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            version: MANIFEST_VERSION,
            artifacts: BTreeMap::new(),
        }
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    /// Reads the manifest at `path`; a missing file is an empty manifest.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Self::default()),
            Err(e) => return Err(e.into()),
        };
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| CliError::corrupt("manifest", e))?;
        if m.version != MANIFEST_VERSION {
            return Err(CliError::Corruption(format!(
                "manifest version {} is not supported (expected {MANIFEST_VERSION})",
                m.version
            )));
        }
        Ok(m)
    }

    /// Writes through a temporary file so a crash never leaves half a manifest.
    pub fn save(&self, path: &Path) -> CliResult<()> {
        let tmp = path.with_extension("json.tmp");
        let mut f = fs::File::create(&tmp)?;
        serde_json::to_writer_pretty(&mut f, self).map_err(|e| CliError::Runtime(e.to_string()))?;
        f.write_all(b"\n")?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Hashes `file` (inside `dir`) and records it under `kind`.
    pub fn record(
        &mut self,
        kind: ArtifactKind,
        dir: &Path,
        file: &str,
        format_version: u32,
        config_fingerprint: &str,
    ) -> CliResult<()> {
        let sha256 = sha256_file(&dir.join(file))?;
        self.artifacts.insert(
            kind,
            ArtifactEntry {
                path: file.to_owned(),
                format_version,
                sha256,
                config_fingerprint: config_fingerprint.to_owned(),
            },
        );
        Ok(())
    }

    /// Path of a recorded artifact after checking that the file exists and
    /// still has the recorded hash.
    pub fn verified_path(&self, kind: ArtifactKind, dir: &Path) -> CliResult<PathBuf> {
        let entry = self
            .artifacts
            .get(&kind)
            .ok_or_else(|| CliError::Dependency(kind.describe().to_owned()))?;
        let path = dir.join(&entry.path);
        if !path.exists() {
            return Err(CliError::Dependency(format!(
                "{} is listed in the manifest but {} does not exist",
                kind.describe(),
                path.display()
            )));
        }
        let actual = sha256_file(&path)?;
        if actual != entry.sha256 {
            return Err(CliError::Corruption(format!(
                "{} ({}) does not match its manifest hash",
                kind.describe(),
                path.display()
            )));
        }
        Ok(path)
    }

    pub fn has(&self, kind: ArtifactKind) -> bool {
        self.artifacts.contains_key(&kind)
    }
}
