use crate::model::{SignboardImage, SIGN_HEIGHT, SIGN_WIDTH};

pub const OUTLINE_DIM: usize = 64;
const GRID: usize = 8;
const BLOCK_H: usize = SIGN_HEIGHT / GRID;
const BLOCK_W: usize = SIGN_WIDTH / GRID;

/// Block-averaged Sobel gradient magnitude, unit length unless the image has
/// no gradient at all.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlineFeature(pub [f64; OUTLINE_DIM]);

impl OutlineFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// Cosine similarity; 0 when either side is the zero vector.
    pub fn cosine(&self, other: &Self) -> f64 {
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        let na = self.0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = other.0.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }
}

/// Outline descriptor of a signboard: Sobel magnitude with replicated
/// borders, averaged over an 8×8 grid of 4×16 blocks, flattened row-major and
/// L2-normalized. A constant image yields all zeros.
pub fn outline_feature(img: &SignboardImage) -> OutlineFeature {
    let px = |r: isize, c: isize| {
        let r = r.clamp(0, SIGN_HEIGHT as isize - 1) as usize;
        let c = c.clamp(0, SIGN_WIDTH as isize - 1) as usize;
        img.get(r, c)
    };
    let mut grid = [0.0f64; OUTLINE_DIM];
    for r in 0..SIGN_HEIGHT as isize {
        for c in 0..SIGN_WIDTH as isize {
            // differences first so flat regions give exactly zero
            let gx = (px(r - 1, c + 1) - px(r - 1, c - 1))
                + 2.0 * (px(r, c + 1) - px(r, c - 1))
                + (px(r + 1, c + 1) - px(r + 1, c - 1));
            let gy = (px(r + 1, c - 1) - px(r - 1, c - 1))
                + 2.0 * (px(r + 1, c) - px(r - 1, c))
                + (px(r + 1, c + 1) - px(r - 1, c + 1));
            let cell = (r as usize / BLOCK_H) * GRID + c as usize / BLOCK_W;
            grid[cell] += gx.hypot(gy);
        }
    }
    let area = (BLOCK_H * BLOCK_W) as f64;
    grid.iter_mut().for_each(|v| *v /= area);
    let norm = grid.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        grid.iter_mut().for_each(|v| *v /= norm);
    }
    OutlineFeature(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glyph;
    use crate::model::{render_signboard, Perturbation, SignStyle};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_image_gives_zero_vector() {
        let f = outline_feature(&SignboardImage::filled(0.4));
        assert!(f.is_zero());
        assert_eq!(f.cosine(&f), 0.0);
    }

    #[test]
    fn self_similarity_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = glyph::encode_name("Pharmacy").unwrap();
        let img = render_signboard(&g, SignStyle::default(), Perturbation::NONE, &mut rng);
        let f = outline_feature(&img);
        assert!((f.cosine(&f) - 1.0).abs() < 1e-12);
        let norm: f64 = f.0.iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(f, outline_feature(&img));
    }
}
