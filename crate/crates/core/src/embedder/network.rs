use ndarray::{Array2, Axis};

use super::{
    EmbedderParams, FeatureMatrix, MultimodalEmbedding, CONV1_OUT, CONV2_COLS, CONV2_OUT,
    CONV2_ROWS, POOLED_DIM,
};
use crate::error::{param, Error, Result};
use crate::geoindex::geohash_encode;
use crate::model::{GeoPoint, SignboardImage, SIGN_HEIGHT, SIGN_WIDTH};

const C1_ROWS: usize = SIGN_HEIGHT / 2;
const C1_COLS: usize = SIGN_WIDTH / 2;

/// Intermediate values of one forward pass, kept for [`backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    input: Vec<f64>,
    /// Pre-activation of conv1, `[8][16][64]`.
    z1: Vec<f64>,
    a1: Vec<f64>,
    /// Pre-activation of conv2, `[16][8][32]`.
    z2: Vec<f64>,
    /// `[l][128]`.
    pooled: Vec<f64>,
    pub g_prime: FeatureMatrix,
    pub(crate) symbols: Vec<usize>,
    pub i_prime: FeatureMatrix,
    fuse: FuseTrace,
    raw_norm: f64,
    pub embedding: MultimodalEmbedding,
}

#[derive(Debug, Clone)]
struct FuseTrace {
    q_g: Array2<f64>,
    k_i: Array2<f64>,
    /// Row-wise softmax of S, weights of the image queries over geo keys.
    a: Array2<f64>,
    /// Row-wise softmax of Sᵀ.
    b: Array2<f64>,
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

/// 3×3, stride 2, zero padding 1.
fn conv_s2(
    input: &[f64],
    (cin, h, w): (usize, usize, usize),
    weights: &[f64],
    bias: &[f64],
    cout: usize,
) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; cout * oh * ow];
    for co in 0..cout {
        let plane = &mut out[co * oh * ow..(co + 1) * oh * ow];
        plane.fill(bias[co]);
        for ci in 0..cin {
            let src = &input[ci * h * w..(ci + 1) * h * w];
            let k = &weights[(co * cin + ci) * 9..(co * cin + ci + 1) * 9];
            for y in 0..oh {
                for ky in 0..3 {
                    let iy = (2 * y + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let row = &src[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut plane[y * ow..(y + 1) * ow];
                    let (k0, k1, k2) = (k[ky * 3], k[ky * 3 + 1], k[ky * 3 + 2]);
                    // x = 0 touches the left padding
                    dst[0] += k1 * row[0] + k2 * row[1];
                    for (x, d) in dst.iter_mut().enumerate().skip(1) {
                        let ix = 2 * x;
                        *d += k0 * row[ix - 1] + k1 * row[ix] + k2 * row[ix + 1];
                    }
                }
            }
        }
    }
    out
}

/// Accumulates filter and bias gradients of [`conv_s2`] and, if requested,
/// the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv_s2_backward(
    input: &[f64],
    (cin, h, w): (usize, usize, usize),
    weights: &[f64],
    cout: usize,
    dz: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut dinput: Option<&mut [f64]>,
) {
    let (oh, ow) = (h / 2, w / 2);
    for co in 0..cout {
        let plane = &dz[co * oh * ow..(co + 1) * oh * ow];
        db[co] += plane.iter().sum::<f64>();
        for ci in 0..cin {
            let src = &input[ci * h * w..(ci + 1) * h * w];
            let base = (co * cin + ci) * 9;
            for y in 0..oh {
                let g = &plane[y * ow..(y + 1) * ow];
                for ky in 0..3 {
                    let iy = (2 * y + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    let row = &src[iy * w..(iy + 1) * w];
                    let (mut s0, mut s1, mut s2) = (0.0, g[0] * row[0], g[0] * row[1]);
                    for (x, &gx) in g.iter().enumerate().skip(1) {
                        let ix = 2 * x;
                        s0 += gx * row[ix - 1];
                        s1 += gx * row[ix];
                        s2 += gx * row[ix + 1];
                    }
                    dw[base + ky * 3] += s0;
                    dw[base + ky * 3 + 1] += s1;
                    dw[base + ky * 3 + 2] += s2;
                    if let Some(din) = dinput.as_deref_mut() {
                        let (k0, k1, k2) = (
                            weights[base + ky * 3],
                            weights[base + ky * 3 + 1],
                            weights[base + ky * 3 + 2],
                        );
                        let drow = &mut din[ci * h * w + iy * w..ci * h * w + (iy + 1) * w];
                        drow[0] += g[0] * k1;
                        drow[1] += g[0] * k2;
                        for (x, &gx) in g.iter().enumerate().skip(1) {
                            let ix = 2 * x;
                            drow[ix - 1] += gx * k0;
                            drow[ix] += gx * k1;
                            drow[ix + 1] += gx * k2;
                        }
                    }
                }
            }
        }
    }
}

/// Column range of conv2 output pooled into position `p`.
fn column_group(p: usize, l: usize) -> std::ops::Range<usize> {
    p * CONV2_COLS / l..(p + 1) * CONV2_COLS / l
}

struct ImageTrace {
    input: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    pooled: Vec<f64>,
    g_prime: FeatureMatrix,
}

fn image_forward(img: &SignboardImage, params: &EmbedderParams) -> ImageTrace {
    let (l, d) = (params.hyper.l, params.hyper.d);
    let input = img.intensities();
    let z1 = conv_s2(
        &input,
        (1, SIGN_HEIGHT, SIGN_WIDTH),
        &params.conv1_w,
        &params.conv1_b,
        CONV1_OUT,
    );
    let a1 = relu(&z1);
    let z2 = conv_s2(
        &a1,
        (CONV1_OUT, C1_ROWS, C1_COLS),
        &params.conv2_w,
        &params.conv2_b,
        CONV2_OUT,
    );

    // Average each column group over its columns; rows and channels stay
    // separate features.
    let mut pooled = vec![0.0; l * POOLED_DIM];
    for p in 0..l {
        let cols = column_group(p, l);
        let n = cols.len() as f64;
        for c in 0..CONV2_OUT {
            for r in 0..CONV2_ROWS {
                let row = &z2[(c * CONV2_ROWS + r) * CONV2_COLS..][..CONV2_COLS];
                let s: f64 = row[cols.clone()].iter().map(|&x| x.max(0.0)).sum();
                pooled[p * POOLED_DIM + c * CONV2_ROWS + r] = s / n;
            }
        }
    }

    let mut g_prime = Array2::zeros((l, d));
    for p in 0..l {
        let feat = &pooled[p * POOLED_DIM..(p + 1) * POOLED_DIM];
        for j in 0..d {
            let wrow = &params.proj_w[(p * d + j) * POOLED_DIM..][..POOLED_DIM];
            g_prime[[p, j]] =
                params.proj_b[p * d + j] + wrow.iter().zip(feat).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    ImageTrace {
        input,
        z1,
        a1,
        z2,
        pooled,
        g_prime,
    }
}

/// Signboard feature matrix G′ (`l × d`): two stride-2 convolutions with
/// ReLU, average pooling of column groups down to `l` positions, and a
/// separate affine map of each position to `d` features.
pub fn image_features(img: &SignboardImage, params: &EmbedderParams) -> FeatureMatrix {
    image_forward(img, params).g_prime
}

fn geo_symbols(p: GeoPoint, l: usize) -> Result<Vec<usize>> {
    Ok(geohash_encode(p, l)?.digits().map(usize::from).collect())
}

fn geo_lookup(symbols: &[usize], params: &EmbedderParams) -> FeatureMatrix {
    let (l, d) = (params.hyper.l, params.hyper.d);
    let mut m = Array2::zeros((l, d));
    for (pos, &s) in symbols.iter().enumerate() {
        let start = (s * l + pos) * d;
        m.row_mut(pos)
            .iter_mut()
            .zip(&params.geo_table[start..start + d])
            .for_each(|(dst, &v)| *dst = v);
    }
    m
}

/// Location feature matrix I′ (`l × d`): row `p` is the table entry for the
/// `p`-th character of the length-`l` geohash.
pub fn geo_features(p: GeoPoint, params: &EmbedderParams) -> Result<FeatureMatrix> {
    if !p.is_valid() {
        return param(format!("invalid location {p:?}"));
    }
    Ok(geo_lookup(&geo_symbols(p, params.hyper.l)?, params))
}

fn softmax_rows(s: &Array2<f64>) -> Array2<f64> {
    let mut out = s.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    out
}

/// Given the softmax output `p` and the gradient w.r.t. it, returns the
/// gradient w.r.t. the logits.
fn softmax_rows_backward(p: &Array2<f64>, dp: &Array2<f64>) -> Array2<f64> {
    let mut ds = p * dp;
    for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
        let dot = row.sum();
        row.zip_mut_with(&prow, |v, &pv| *v -= pv * dot);
    }
    ds
}

fn check_shapes(
    g_prime: &FeatureMatrix,
    i_prime: &FeatureMatrix,
    params: &EmbedderParams,
) -> Result<()> {
    let want = (params.hyper.l, params.hyper.d);
    if g_prime.dim() != want || i_prime.dim() != want {
        return param(format!(
            "cross-attention expects {want:?} inputs, got {:?} and {:?}",
            g_prime.dim(),
            i_prime.dim()
        ));
    }
    Ok(())
}

fn fuse_forward(
    g_prime: &FeatureMatrix,
    i_prime: &FeatureMatrix,
    params: &EmbedderParams,
) -> (FuseTrace, Array2<f64>, Array2<f64>) {
    let scale = 1.0 / (params.hyper.d as f64).sqrt();
    let q_g = g_prime.dot(&params.w);
    let k_i = i_prime.dot(&params.u);
    let s = q_g.dot(&k_i.t()) * scale;
    let a = softmax_rows(&s);
    let b = softmax_rows(&s.t().to_owned());
    let i = a.dot(&k_i);
    let g = b.dot(&q_g);
    (FuseTrace { q_g, k_i, a, b }, i, g)
}

/// Bidirectional cross-attention.
///
/// With `Q_G = G′W` and `K_I = V_I = I′U` (and symmetrically `Q_I = I′U`,
/// `K_G = V_G = G′W`), returns `I = softmax(Q_G K_Iᵀ/√d) V_I` and
/// `G = softmax(Q_I K_Gᵀ/√d) V_G`, softmax taken row-wise.
pub fn cross_attention_fuse(
    g_prime: &FeatureMatrix,
    i_prime: &FeatureMatrix,
    params: &EmbedderParams,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    check_shapes(g_prime, i_prime, params)?;
    let (_, i, g) = fuse_forward(g_prime, i_prime, params);
    Ok((i, g))
}

/// The two attention matrices `(A, B)` behind [`cross_attention_fuse`]:
/// `A = softmax(Q_G K_Iᵀ/√d)` and `B = softmax(Q_I K_Gᵀ/√d)`.
pub fn attention_weights(
    g_prime: &FeatureMatrix,
    i_prime: &FeatureMatrix,
    params: &EmbedderParams,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_shapes(g_prime, i_prime, params)?;
    let (t, _, _) = fuse_forward(g_prime, i_prime, params);
    Ok((t.a, t.b))
}

/// Gradients of the fused outputs flow back to the inputs (returned as
/// `(dG′, dI′)`) and to `W`, `U` (accumulated into `grads`).
fn fuse_backward(
    t: &FuseTrace,
    g_prime: &FeatureMatrix,
    i_prime: &FeatureMatrix,
    d_i: &Array2<f64>,
    d_g: &Array2<f64>,
    params: &EmbedderParams,
    grads: &mut EmbedderParams,
) -> (Array2<f64>, Array2<f64>) {
    let scale = 1.0 / (params.hyper.d as f64).sqrt();
    // I = A K_I
    let d_a = d_i.dot(&t.k_i.t());
    let mut d_ki = t.a.t().dot(d_i);
    // G = B Q_G
    let d_b = d_g.dot(&t.q_g.t());
    let mut d_qg = t.b.t().dot(d_g);
    // A = softmax(S), B = softmax(Sᵀ)
    let d_s = softmax_rows_backward(&t.a, &d_a) + softmax_rows_backward(&t.b, &d_b).t();
    // S = Q_G K_Iᵀ · scale
    d_qg += &(d_s.dot(&t.k_i) * scale);
    d_ki += &(d_s.t().dot(&t.q_g) * scale);
    grads.w += &g_prime.t().dot(&d_qg);
    grads.u += &i_prime.t().dot(&d_ki);
    (d_qg.dot(&params.w.t()), d_ki.dot(&params.u.t()))
}

/// Backward pass of [`cross_attention_fuse`]: given upstream gradients of
/// `I` and `G`, accumulates into `grads.w` and `grads.u` and returns the
/// gradients with respect to `G′` and `I′`.
pub fn cross_attention_backward(
    g_prime: &FeatureMatrix,
    i_prime: &FeatureMatrix,
    d_i: &FeatureMatrix,
    d_g: &FeatureMatrix,
    params: &EmbedderParams,
    grads: &mut EmbedderParams,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    check_shapes(g_prime, i_prime, params)?;
    check_shapes(d_i, d_g, params)?;
    let (t, _, _) = fuse_forward(g_prime, i_prime, params);
    Ok(fuse_backward(&t, g_prime, i_prime, d_i, d_g, params, grads))
}

/// Full forward pass, keeping what [`backward`] needs.
pub fn forward(img: &SignboardImage, p: GeoPoint, params: &EmbedderParams) -> Result<Trace> {
    if !p.is_valid() {
        return param(format!("invalid location {p:?}"));
    }
    let im = image_forward(img, params);
    let symbols = geo_symbols(p, params.hyper.l)?;
    let i_prime = geo_lookup(&symbols, params);
    let (fuse, i, g) = fuse_forward(&im.g_prime, &i_prime, params);
    let mut raw = i.mean_axis(Axis(0)).expect("l ≥ 1").to_vec();
    raw.extend(g.mean_axis(Axis(0)).expect("l ≥ 1").iter());
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::DegenerateEmbedding(format!(
            "pre-normalization norm {norm}"
        )));
    }
    raw.iter_mut().for_each(|x| *x /= norm);
    Ok(Trace {
        input: im.input,
        z1: im.z1,
        a1: im.a1,
        z2: im.z2,
        pooled: im.pooled,
        g_prime: im.g_prime,
        symbols,
        i_prime,
        fuse,
        raw_norm: norm,
        embedding: MultimodalEmbedding(raw),
    })
}

/// Unit-length multimodal embedding of a signboard seen at `p`.
pub fn embed(
    img: &SignboardImage,
    p: GeoPoint,
    params: &EmbedderParams,
) -> Result<MultimodalEmbedding> {
    Ok(forward(img, p, params)?.embedding)
}

/// Accumulates into `grads` the gradient of a scalar whose gradient with
/// respect to the unit embedding of `trace` is `d_m`.
pub fn backward(trace: &Trace, d_m: &[f64], params: &EmbedderParams, grads: &mut EmbedderParams) {
    let (l, d) = (params.hyper.l, params.hyper.d);
    let m = &trace.embedding.0;
    assert_eq!(d_m.len(), 2 * d, "gradient has the wrong dimension");

    // m = raw / |raw|
    let proj: f64 = m.iter().zip(d_m).map(|(a, b)| a * b).sum();
    let d_raw: Vec<f64> = m
        .iter()
        .zip(d_m)
        .map(|(&mi, &gi)| (gi - mi * proj) / trace.raw_norm)
        .collect();
    // row means
    let inv_l = 1.0 / l as f64;
    let d_i = Array2::from_shape_fn((l, d), |(_, j)| d_raw[j] * inv_l);
    let d_g = Array2::from_shape_fn((l, d), |(_, j)| d_raw[d + j] * inv_l);

    let (d_gp, d_ip) = fuse_backward(
        &trace.fuse,
        &trace.g_prime,
        &trace.i_prime,
        &d_i,
        &d_g,
        params,
        grads,
    );

    for (pos, &s) in trace.symbols.iter().enumerate() {
        let start = (s * l + pos) * d;
        grads.geo_table[start..start + d]
            .iter_mut()
            .zip(d_ip.row(pos))
            .for_each(|(g, &v)| *g += v);
    }

    // G′[p] = proj_w[p] · pooled[p] + proj_b[p]
    let mut d_pooled = vec![0.0; l * POOLED_DIM];
    for pos in 0..l {
        let feat = &trace.pooled[pos * POOLED_DIM..(pos + 1) * POOLED_DIM];
        let dfeat = &mut d_pooled[pos * POOLED_DIM..(pos + 1) * POOLED_DIM];
        for j in 0..d {
            let g = d_gp[[pos, j]];
            let k = pos * d + j;
            grads.proj_b[k] += g;
            let gw = &mut grads.proj_w[k * POOLED_DIM..(k + 1) * POOLED_DIM];
            let wrow = &params.proj_w[k * POOLED_DIM..(k + 1) * POOLED_DIM];
            for f in 0..POOLED_DIM {
                gw[f] += g * feat[f];
                dfeat[f] += g * wrow[f];
            }
        }
    }

    // pooling and ReLU
    let mut dz2 = vec![0.0; trace.z2.len()];
    for pos in 0..l {
        let cols = column_group(pos, l);
        let n = cols.len() as f64;
        for c in 0..CONV2_OUT {
            for r in 0..CONV2_ROWS {
                let g = d_pooled[pos * POOLED_DIM + c * CONV2_ROWS + r] / n;
                let base = (c * CONV2_ROWS + r) * CONV2_COLS;
                for col in cols.clone() {
                    if trace.z2[base + col] > 0.0 {
                        dz2[base + col] = g;
                    }
                }
            }
        }
    }

    let mut da1 = vec![0.0; trace.a1.len()];
    conv_s2_backward(
        &trace.a1,
        (CONV1_OUT, C1_ROWS, C1_COLS),
        &params.conv2_w,
        CONV2_OUT,
        &dz2,
        &mut grads.conv2_w,
        &mut grads.conv2_b,
        Some(&mut da1),
    );
    for (g, &z) in da1.iter_mut().zip(&trace.z1) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
    conv_s2_backward(
        &trace.input,
        (1, SIGN_HEIGHT, SIGN_WIDTH),
        &params.conv1_w,
        CONV1_OUT,
        &da1,
        &mut grads.conv1_w,
        &mut grads.conv1_b,
        None,
    );
}

/// Hash of the ReLU on/off pattern of a forward pass. Finite-difference
/// probes whose two sides disagree on it straddle a kink and are not
/// comparable with the analytic gradient.
pub fn activation_signature(trace: &Trace) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for z in trace.z1.iter().chain(&trace.z2) {
        h ^= u64::from(*z > 0.0);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}
