use std::collections::BTreeMap;

use log::{info, warn};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::triplet_loss_grad;
use super::network::{backward, forward};
use super::EmbedderParams;
use crate::error::{param, Result};
use crate::model::{Corpus, Split};

/// Mini-batch gradient descent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// The step size is multiplied by this every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub seed: u64,
    /// Train on at most this many POIs (those with the smallest ids).
    pub max_pois: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch: 64,
            lr: 0.05,
            lr_decay: 0.5,
            decay_every: 5,
            seed: 7,
            max_pois: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.decay_every == 0 {
            return param("batch and decay_every must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite())
            || !(self.lr_decay > 0.0 && self.lr_decay.is_finite())
        {
            return param("lr must be non-negative and lr_decay positive");
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EmbedderParams,
    /// Mean triplet loss of each epoch, measured as the epoch runs.
    pub loss_trace: Vec<f64>,
    /// Train POIs left out because they have a single view.
    pub skipped_pois: usize,
    pub triplets: usize,
}

/// Submission indices (anchor, positive, negative).
type Triplet = [usize; 3];

fn sample_triplets(groups: &[Vec<usize>], rng: &mut ChaCha8Rng) -> Vec<Triplet> {
    let mut out = Vec::new();
    for (gi, views) in groups.iter().enumerate() {
        for &anchor in views {
            for &positive in views {
                if positive == anchor {
                    continue;
                }
                let mut other = rng.gen_range(0..groups.len() - 1);
                if other >= gi {
                    other += 1;
                }
                let negative = *groups[other].choose(rng).expect("groups are non-empty");
                out.push([anchor, positive, negative]);
            }
        }
    }
    out
}

/// Trains on the train split with the cosine triplet loss.
///
/// Every ordered pair of distinct train views of a POI forms an
/// (anchor, positive) pair, completed by a negative view of a uniformly
/// chosen other POI. The triplet set is drawn once; each epoch visits it in
/// a fresh shuffled order in batches, stepping against the summed gradient
/// of each batch.
/// The result depends only on the inputs and `cfg.seed`.
pub fn train(corpus: &Corpus, init: EmbedderParams, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut by_poi: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, s) in corpus.submissions.iter().enumerate() {
        if s.split == Split::Train {
            by_poi.entry(s.truth_id).or_default().push(i);
        }
    }
    let cap = cfg.max_pois.unwrap_or(usize::MAX);
    let mut skipped = 0;
    let groups: Vec<Vec<usize>> = by_poi
        .into_values()
        .take(cap)
        .filter(|v| {
            let keep = v.len() >= 2;
            skipped += usize::from(!keep);
            keep
        })
        .collect();
    if skipped > 0 {
        warn!("skipped {skipped} train POIs with a single view");
    }
    if groups.len() < 2 {
        return param("training needs at least two POIs with two or more train views");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let triplets = sample_triplets(&groups, &mut rng);
    let gamma = init.hyper.gamma;
    let mut params = init;
    let mut grads = EmbedderParams::zeros(params.hyper)?;
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    let mut losses = vec![0.0; triplets.len()];
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch) {
            grads.fill_zero();
            for &t in batch {
                let fw = triplets[t].map(|i| {
                    let s = &corpus.submissions[i];
                    forward(&s.signboard, s.shot_location, &params)
                });
                let [a, p, n] = fw;
                let (a, p, n) = (a?, p?, n?);
                let (loss, [da, dp, dn]) = triplet_loss_grad(
                    a.embedding.as_slice(),
                    p.embedding.as_slice(),
                    n.embedding.as_slice(),
                    gamma,
                )?;
                losses[t] = loss;
                if loss > 0.0 {
                    backward(&a, &da, &params, &mut grads);
                    backward(&p, &dp, &params, &mut grads);
                    backward(&n, &dn, &params, &mut grads);
                }
            }
            if lr > 0.0 {
                params.add_scaled(&grads, -lr);
            }
        }
        // summed in triplet order so the trace does not depend on the shuffle
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        info!("epoch {} mean loss {mean:.5} (lr {lr})", epoch + 1);
        trace.push(mean);
    }
    params.round_to_f32();
    if !params.is_finite() {
        return Err(crate::Error::State(
            "training diverged to non-finite parameters".into(),
        ));
    }
    Ok(TrainOutcome {
        params,
        loss_trace: trace,
        skipped_pois: skipped,
        triplets: triplets.len(),
    })
}
