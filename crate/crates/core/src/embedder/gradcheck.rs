//! Central finite-difference audit of the hand-written backward pass.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{
    activation_signature, backward, forward, triplet_loss, triplet_loss_grad, EmbedderHyper,
    EmbedderParams, Trace, PARAM_BLOCKS,
};
use crate::error::Result;
use crate::glyph::{GlyphId, ALPHABET_SIZE};
use crate::model::{render_signboard, GeoPoint, Perturbation, Region, SignStyle, SignboardImage};

/// Central-difference steps, tried in order until the activation pattern
/// is the same on both sides.
pub const FD_STEPS: [f64; 3] = [1e-5, 1e-6, 1e-7];
/// Denominator floor of the relative error, so that gradients at the level of
/// rounding noise do not produce spurious failures.
pub const REL_ERR_FLOOR: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub block: &'static str,
    pub probes: usize,
    /// Probes dropped because the perturbation moved a ReLU across its kink.
    pub skipped: usize,
    pub max_rel_err: f64,
}

fn random_sample(rng: &mut ChaCha8Rng) -> (SignboardImage, GeoPoint) {
    let len = rng.gen_range(3..=10);
    let glyphs: Vec<GlyphId> = (0..len)
        .map(|_| rng.gen_range(0..ALPHABET_SIZE) as GlyphId)
        .collect();
    let style = SignStyle::random(rng);
    let pert = Perturbation {
        shift_px: rng.gen_range(-4..=4),
        contrast: rng.gen_range(0.7..=1.3),
        pixel_sigma: 0.05,
    };
    let img = render_signboard(&glyphs, style, pert, rng);
    let r = Region::default();
    let p = GeoPoint {
        lon: rng.gen_range(r.min_lon..r.max_lon),
        lat: rng.gen_range(r.min_lat..r.max_lat),
    };
    (img, p)
}

struct Problem {
    samples: Vec<(SignboardImage, GeoPoint)>,
}

impl Problem {
    fn traces(&self, params: &EmbedderParams) -> Result<Vec<Trace>> {
        self.samples
            .iter()
            .map(|(img, p)| forward(img, *p, params))
            .collect()
    }

    fn loss(&self, traces: &[Trace], gamma: f64) -> Result<f64> {
        triplet_loss(
            traces[0].embedding.as_slice(),
            traces[1].embedding.as_slice(),
            traces[2].embedding.as_slice(),
            gamma,
        )
    }
}

/// Checks the gradient of a triplet loss over three random inputs with
/// respect to `probes` randomly chosen entries of every parameter block.
///
/// The margin is raised to 3 so the hinge is always active and every block
/// receives gradient.
pub fn check_gradients(l: usize, d: usize, seed: u64, probes: usize) -> Result<Vec<BlockCheck>> {
    let hyper = EmbedderHyper { l, d, gamma: 3.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = EmbedderParams::init(hyper, seed)?;
    // non-zero biases exercise more of the activation pattern
    for b in [&mut params.conv1_b, &mut params.conv2_b, &mut params.proj_b] {
        b.iter_mut().for_each(|x| *x = rng.gen_range(-0.1..0.1));
    }
    let problem = Problem {
        samples: (0..3).map(|_| random_sample(&mut rng)).collect(),
    };

    let traces = problem.traces(&params)?;
    let (_, dms) = triplet_loss_grad(
        traces[0].embedding.as_slice(),
        traces[1].embedding.as_slice(),
        traces[2].embedding.as_slice(),
        hyper.gamma,
    )?;
    let mut grads = EmbedderParams::zeros(hyper)?;
    for (t, dm) in traces.iter().zip(&dms) {
        backward(t, dm, &params, &mut grads);
    }
    let base_sig: Vec<u64> = traces.iter().map(activation_signature).collect();
    // geo-table rows that are actually looked up; the rest have zero gradient
    let used_geo: Vec<usize> = traces
        .iter()
        .flat_map(|t| {
            t.symbols
                .iter()
                .enumerate()
                .map(|(pos, &s)| (s * l + pos) * d)
        })
        .collect();

    let mut report = Vec::new();
    for (bi, name) in PARAM_BLOCKS.iter().enumerate() {
        let len = params.blocks()[bi].len();
        let mut check = BlockCheck {
            block: name,
            probes: 0,
            skipped: 0,
            max_rel_err: 0.0,
        };
        let mut attempts = 0;
        while check.probes < probes && attempts < probes * 20 {
            attempts += 1;
            let idx = if *name == "geo_table" && rng.gen_bool(0.75) {
                used_geo[rng.gen_range(0..used_geo.len())] + rng.gen_range(0..d)
            } else {
                rng.gen_range(0..len)
            };
            let orig = params.blocks()[bi][idx];
            let mut eval = |v: f64| -> Result<(f64, bool)> {
                params.blocks_mut()[bi][idx] = v;
                let t = problem.traces(&params)?;
                let same = t
                    .iter()
                    .map(activation_signature)
                    .eq(base_sig.iter().copied());
                Ok((problem.loss(&t, hyper.gamma)?, same))
            };
            // shrink the step until neither side crosses a ReLU kink
            let mut numeric = None;
            for h in FD_STEPS {
                let (up, same_up) = eval(orig + h)?;
                let (down, same_down) = eval(orig - h)?;
                if same_up && same_down {
                    numeric = Some((up - down) / (2.0 * h));
                    break;
                }
            }
            params.blocks_mut()[bi][idx] = orig;
            let Some(numeric) = numeric else {
                check.skipped += 1;
                continue;
            };
            let analytic = grads.blocks()[bi][idx];
            check.max_rel_err = check.max_rel_err.max(relative_error(analytic, numeric));
            check.probes += 1;
        }
        report.push(check);
    }
    Ok(report)
}
