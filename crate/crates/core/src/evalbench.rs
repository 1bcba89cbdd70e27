//! Accuracy (SR@K) and throughput (QPS) measurement for the variants.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{param, Error, Result};
use crate::model::{Corpus, Split};
use crate::pipeline::{PipelineConfig, Variant, VerificationRequest, VerificationResult, Verifier};

pub const REPORT_VERSION: u32 = 1;

/// Human expert mappers, as a fixed reference row: accuracy and requests
/// per second. These are quoted figures and are never measured here.
pub const EXPERT_REFERENCE: (f64, f64) = (0.9452, 0.007);

/// Fraction of results whose top `k` ids contain the truth. An empty
/// ranking is a miss.
pub fn sr_at_k(results: &[(VerificationResult, u64)], k: usize) -> Result<f64> {
    if results.is_empty() {
        return param("SR@K needs at least one result");
    }
    if k == 0 {
        return param("k must be at least 1");
    }
    let hits = results
        .iter()
        .filter(|(r, truth)| r.ranked.iter().take(k).any(|s| s.id == *truth))
        .count();
    Ok(hits as f64 / results.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkerStats {
    pub completed: usize,
    pub qps: f64,
}

/// Outcome of a closed-loop run. When a call fails the run stops early and
/// `aborted` carries the first error; the counts are then partial.
#[derive(Debug, Clone)]
pub struct QpsMeasurement<T> {
    pub qps: f64,
    pub timed_requests: usize,
    pub warmup: usize,
    pub wall: Duration,
    pub per_worker: Vec<WorkerStats>,
    /// Output of every request in input order; `None` where not run.
    pub outputs: Vec<Option<T>>,
    pub aborted: Option<String>,
}

impl<T> QpsMeasurement<T> {
    pub fn is_valid(&self) -> bool {
        self.aborted.is_none()
    }
}

/// Runs every request through `call` with `workers` closed-loop issuers;
/// each worker takes the next request as soon as its previous one returns.
/// The first `warmup` requests run before the clock starts and are excluded
/// from the rate.
pub fn measure_qps<R, T, F>(
    requests: &[R],
    workers: usize,
    warmup: usize,
    call: F,
) -> Result<QpsMeasurement<T>>
where
    R: Sync,
    T: Send,
    F: Fn(&R) -> Result<T> + Sync,
{
    if requests.is_empty() {
        return param("QPS measurement needs at least one request");
    }
    if workers == 0 {
        return param("worker count must be at least 1");
    }
    if warmup >= requests.len() {
        return param("warmup must leave at least one timed request");
    }
    let outputs: Vec<Mutex<Option<T>>> = requests.iter().map(|_| Mutex::new(None)).collect();
    let failed = AtomicBool::new(false);
    let first_error: Mutex<Option<String>> = Mutex::new(None);

    let run = |range: std::ops::Range<usize>| -> (Duration, Vec<usize>) {
        let next = AtomicUsize::new(range.start);
        let start = Instant::now();
        let counts = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|_| {
                    scope.spawn(|| {
                        let mut done = 0;
                        while !failed.load(Ordering::Relaxed) {
                            let i = next.fetch_add(1, Ordering::Relaxed);
                            if i >= range.end {
                                break;
                            }
                            match call(&requests[i]) {
                                Ok(out) => {
                                    *outputs[i].lock().expect("output slot") = Some(out);
                                    done += 1;
                                }
                                Err(e) => {
                                    failed.store(true, Ordering::Relaxed);
                                    first_error
                                        .lock()
                                        .expect("error slot")
                                        .get_or_insert(e.to_string());
                                }
                            }
                        }
                        done
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        (start.elapsed(), counts)
    };

    if warmup > 0 {
        run(0..warmup);
    }
    let (wall, counts) = if failed.load(Ordering::Relaxed) {
        (Duration::ZERO, vec![0; workers])
    } else {
        run(warmup..requests.len())
    };
    let secs = wall.as_secs_f64().max(f64::MIN_POSITIVE);
    let timed: usize = counts.iter().sum();
    Ok(QpsMeasurement {
        qps: timed as f64 / secs,
        timed_requests: timed,
        warmup,
        wall,
        per_worker: counts
            .into_iter()
            .map(|completed| WorkerStats {
                completed,
                qps: completed as f64 / secs,
            })
            .collect(),
        outputs: outputs
            .into_iter()
            .map(|m| m.into_inner().expect("output slot"))
            .collect(),
        aborted: first_error.into_inner().expect("error slot"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Upper bound on test requests; they are taken evenly spaced over the
    /// test split. `None` uses all of them.
    pub max_queries: Option<usize>,
    pub workers: usize,
    /// Share of the request list run before timing starts.
    pub warmup_fraction: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            max_queries: Some(2000),
            workers: 1,
            warmup_fraction: 0.1,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 || self.max_queries == Some(0) {
            return param("workers and max_queries must be at least 1");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return param("warmup_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_pois: usize,
    pub n_submissions: usize,
    pub n_test_submissions: usize,
    pub duplicate_name_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub variant: Variant,
    pub sr1: f64,
    pub sr3: f64,
    pub sr5: f64,
    pub qps: f64,
    pub n_queries: usize,
    pub per_worker: Vec<WorkerStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub config_fingerprint: String,
    pub corpus_stats: CorpusStats,
    pub workers: usize,
    pub warmup: usize,
    pub wall_clock_secs: f64,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn row(&self, v: Variant) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// Fixed-width table, one line per variant plus the expert reference.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<24} {:>7} {:>7} {:>7} {:>11} {:>8}",
            "variant", "SR@1", "SR@3", "SR@5", "QPS", "queries"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<24} {:>7.4} {:>7.4} {:>7.4} {:>11.2} {:>8}",
                r.variant.as_str(),
                r.sr1,
                r.sr3,
                r.sr5,
                r.qps,
                r.n_queries
            );
        }
        let _ = writeln!(
            s,
            "{:<24} {:>7.4} {:>7} {:>7} {:>11.3} {:>8}",
            "expert (quoted, not run)", EXPERT_REFERENCE.0, "-", "-", EXPERT_REFERENCE.1, "-"
        );
        let _ = writeln!(
            s,
            "{} POIs, {} workers, {} warmup requests excluded, fingerprint {}",
            self.corpus_stats.n_pois,
            self.workers,
            self.warmup,
            &self.config_fingerprint[..12.min(self.config_fingerprint.len())]
        );
        s
    }
}

/// Test-split requests with their truth ids, evenly thinned to `max`.
pub fn test_requests(corpus: &Corpus, max: Option<usize>) -> Vec<(VerificationRequest, u64)> {
    let all: Vec<_> = corpus.submissions_in(Split::Test).collect();
    let n = max.map_or(all.len(), |m| m.min(all.len()));
    (0..n)
        .map(|i| {
            let s = all[i * all.len() / n];
            (
                VerificationRequest {
                    signboard: s.signboard.clone(),
                    shot_location: s.shot_location,
                },
                s.truth_id,
            )
        })
        .collect()
}

/// SHA-256 over the JSON of the settings that shape a report.
pub fn fingerprint<T: Serialize>(settings: &T) -> Result<String> {
    let bytes = serde_json::to_vec(settings)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Evaluates `variants` on one shared list of test requests.
pub fn run_benchmark(
    corpus: &Corpus,
    verifier: &Verifier,
    variants: &[Variant],
    cfg: &BenchConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    for v in variants {
        if v.needs_embedding() {
            verifier.embedding_parts()?;
        }
    }
    let requests = test_requests(corpus, cfg.max_queries);
    if requests.is_empty() {
        return param("the corpus has no test submissions");
    }
    let warmup = ((requests.len() as f64 * cfg.warmup_fraction) as usize).min(requests.len() - 1);
    let started = Instant::now();
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        let m = measure_qps(&requests, cfg.workers, warmup, |(req, _)| {
            verifier.verify(v, req)
        })?;
        if let Some(e) = &m.aborted {
            return Err(Error::State(format!(
                "{v} aborted after {} timed requests: {e}",
                m.timed_requests
            )));
        }
        let results: Vec<(VerificationResult, u64)> = m
            .outputs
            .into_iter()
            .zip(&requests)
            .map(|(out, (_, truth))| (out.expect("every request ran"), *truth))
            .collect();
        rows.push(EvalRow {
            variant: v,
            sr1: sr_at_k(&results, 1)?,
            sr3: sr_at_k(&results, 3)?,
            sr5: sr_at_k(&results, 5)?,
            qps: m.qps,
            n_queries: results.len(),
            per_worker: m.per_worker,
        });
    }
    #[derive(Serialize)]
    struct Settings<'a> {
        bench: &'a BenchConfig,
        pipeline: &'a PipelineConfig,
        variants: &'a [Variant],
        n_pois: usize,
        n_submissions: usize,
    }
    let config_fingerprint = fingerprint(&Settings {
        bench: cfg,
        pipeline: &verifier.config,
        variants,
        n_pois: corpus.pois.len(),
        n_submissions: corpus.submissions.len(),
    })?;
    Ok(EvalReport {
        version: REPORT_VERSION,
        config_fingerprint,
        corpus_stats: CorpusStats {
            n_pois: corpus.pois.len(),
            n_submissions: corpus.submissions.len(),
            n_test_submissions: corpus.submissions_in(Split::Test).count(),
            duplicate_name_rate: corpus.duplicate_name_rate(),
        },
        workers: cfg.workers,
        warmup,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annindex::Scored;

    fn result(ids: &[u64]) -> VerificationResult {
        VerificationResult {
            variant: Variant::V1,
            ranked: ids.iter().map(|&id| Scored { id, score: 1.0 }).collect(),
            stage_timings: Vec::new(),
        }
    }

    #[test]
    fn hand_enumerated_fixture() {
        let mut rs: Vec<_> = (0..6).map(|i| (result(&[i, 100]), i)).collect();
        rs.extend((6..10).map(|i| (result(&[100, i]), i)));
        assert_eq!(sr_at_k(&rs, 1).unwrap(), 0.6);
        assert_eq!(sr_at_k(&rs, 3).unwrap(), 1.0);
        assert_eq!(sr_at_k(&rs, 5).unwrap(), 1.0);
        let empty = vec![(result(&[]), 1)];
        assert_eq!(sr_at_k(&empty, 5).unwrap(), 0.0);
        assert!(sr_at_k(&[], 1).is_err());
    }

    #[test]
    fn failure_aborts_with_partial_stats() {
        let reqs: Vec<usize> = (0..50).collect();
        let m = measure_qps(
            &reqs,
            2,
            5,
            |&i| if i == 30 { param("boom") } else { Ok(i) },
        )
        .unwrap();
        assert!(!m.is_valid());
        assert!(m.timed_requests < 45);
        assert!(m.outputs[..5].iter().all(Option::is_some));
    }
}
