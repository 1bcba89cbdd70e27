//! Corpus persistence as versioned line-delimited JSON.
//!
//! ```text
//! {"format":"poiverify-corpus","version":1,"pois":N,"submissions":M}
//! {"record":"poi","id":1,"name":"Ab3x","lon":116.31,"lat":39.92,"signboard":"<base64>"}
//! {"record":"submission","truth_id":1,"lon":116.31,"lat":39.92,"signboard":"<base64>","split":"train"}
//! ```
//!
//! All POI lines precede all submission lines. `signboard` is the standard
//! padded base64 of the 4096 row-major 8-bit intensity levels.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Corpus, GeoPoint, PoiRecord, SignboardImage, Split, StreetViewSubmission};
use crate::error::{Error, Result};
use crate::jsonl;

pub const CORPUS_FORMAT: &str = "poiverify-corpus";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Line {
    Poi {
        id: u64,
        name: String,
        lon: f64,
        lat: f64,
        signboard: String,
    },
    Submission {
        truth_id: u64,
        lon: f64,
        lat: f64,
        signboard: String,
        split: Split,
    },
}

pub fn write_corpus<W: Write>(corpus: &Corpus, mut w: W) -> Result<()> {
    let mut meta = Map::new();
    meta.insert("pois".into(), Value::from(corpus.pois.len()));
    meta.insert("submissions".into(), Value::from(corpus.submissions.len()));
    jsonl::write_header(&mut w, CORPUS_FORMAT, CORPUS_VERSION, meta)?;
    for p in &corpus.pois {
        jsonl::write_record(
            &mut w,
            &Line::Poi {
                id: p.id,
                name: p.name.clone(),
                lon: p.location.lon,
                lat: p.location.lat,
                signboard: p.signboard.to_base64(),
            },
        )?;
    }
    for s in &corpus.submissions {
        jsonl::write_record(
            &mut w,
            &Line::Submission {
                truth_id: s.truth_id,
                lon: s.shot_location.lon,
                lat: s.shot_location.lat,
                signboard: s.signboard.to_base64(),
                split: s.split,
            },
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a corpus and validates its invariants.
pub fn read_corpus<R: BufRead>(r: R) -> Result<Corpus> {
    let mut lines = r.lines();
    let header = jsonl::read_header(&mut lines, CORPUS_FORMAT, CORPUS_VERSION)?;
    let count = |key: &str| header.get(key).and_then(|v| v.as_u64()).map(|v| v as usize);
    let mut corpus = Corpus {
        pois: Vec::with_capacity(count("pois").unwrap_or(0)),
        submissions: Vec::with_capacity(count("submissions").unwrap_or(0)),
    };
    while let Some(line) = jsonl::next_record::<_, Line>(&mut lines, CORPUS_FORMAT)? {
        match line {
            Line::Poi {
                id,
                name,
                lon,
                lat,
                signboard,
            } => {
                if !corpus.submissions.is_empty() {
                    return Err(Error::Format("POI record after submission records".into()));
                }
                corpus.pois.push(PoiRecord {
                    id,
                    name,
                    location: GeoPoint::new(lon, lat)?,
                    signboard: SignboardImage::from_base64(&signboard)?,
                });
            }
            Line::Submission {
                truth_id,
                lon,
                lat,
                signboard,
                split,
            } => corpus.submissions.push(StreetViewSubmission {
                truth_id,
                shot_location: GeoPoint::new(lon, lat)?,
                signboard: SignboardImage::from_base64(&signboard)?,
                split,
            }),
        }
    }
    for (key, actual) in [
        ("pois", corpus.pois.len()),
        ("submissions", corpus.submissions.len()),
    ] {
        if let Some(expected) = count(key) {
            if expected != actual {
                return Err(Error::Format(format!(
                    "header declares {expected} {key}, file holds {actual}"
                )));
            }
        }
    }
    corpus.validate()?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_corpus, CorpusParams};

    #[test]
    fn roundtrip_is_exact() {
        let c = generate_corpus(&CorpusParams {
            n_pois: 12,
            ..CorpusParams::default()
        })
        .unwrap();
        let mut buf = Vec::new();
        write_corpus(&c, &mut buf).unwrap();
        let back = read_corpus(buf.as_slice()).unwrap();
        assert_eq!(back, c);
        let mut again = Vec::new();
        write_corpus(&back, &mut again).unwrap();
        assert_eq!(again, buf);
        let first = std::str::from_utf8(&buf).unwrap().lines().next().unwrap();
        assert!(first.starts_with(r#"{"format":"poiverify-corpus","version":1,"#));
    }

    #[test]
    fn rejects_wrong_version_and_truncation() {
        let c = generate_corpus(&CorpusParams {
            n_pois: 2,
            ..CorpusParams::default()
        })
        .unwrap();
        let mut buf = Vec::new();
        write_corpus(&c, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let bumped = text.replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(
            read_corpus(bumped.as_bytes()),
            Err(Error::Version { found: 2, .. })
        ));
        let truncated: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
        assert!(read_corpus(truncated.as_bytes()).is_err());
        assert!(read_corpus("".as_bytes()).is_err());
    }
}
