use base64::Engine as _;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::glyph::{self, GlyphId, GLYPH_PX};

pub const SIGN_HEIGHT: usize = 32;
pub const SIGN_WIDTH: usize = 128;

pub(crate) const BACKGROUND: f64 = 0.1;
pub(crate) const INK: f64 = 0.9;

/// Left edge of the first glyph before any shift.
pub const TEXT_X0: usize = 16;
/// Top row of the text line.
pub const TEXT_Y0: usize = 12;
/// Glyphs beyond this count are clipped by the renderer.
pub const MAX_RENDERED_GLYPHS: usize = 13;

const BAR_Y: usize = 6;
const BAR_H: usize = 2;
const BAR_W: usize = 10;
const UNDERLINE_Y: usize = 22;

/// A 32×128 grayscale signboard. Intensities are stored as 8-bit levels,
/// intensity = level / 255.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SignboardImage {
    levels: Vec<u8>,
}

impl std::fmt::Debug for SignboardImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mean = self.levels.iter().map(|&l| l as f64).sum::<f64>() / self.levels.len() as f64;
        write!(
            f,
            "SignboardImage({SIGN_HEIGHT}x{SIGN_WIDTH}, mean level {mean:.1})"
        )
    }
}

impl SignboardImage {
    pub const LEN: usize = SIGN_HEIGHT * SIGN_WIDTH;

    pub fn from_levels(levels: Vec<u8>) -> Result<Self> {
        if levels.len() != Self::LEN {
            return Err(Error::Format(format!(
                "signboard must have {} pixels, got {}",
                Self::LEN,
                levels.len()
            )));
        }
        Ok(Self { levels })
    }

    /// Quantizes intensities (clamped to [0, 1]) to 8-bit levels.
    pub fn from_intensities(values: &[f64]) -> Result<Self> {
        Self::from_levels(values.iter().map(|&v| quantize(v)).collect())
    }

    /// Uniform image with every pixel at `intensity`.
    pub fn filled(intensity: f64) -> Self {
        Self {
            levels: vec![quantize(intensity); Self::LEN],
        }
    }

    pub fn zeros() -> Self {
        Self::filled(0.0)
    }

    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.levels[row * SIGN_WIDTH + col] as f64 / 255.0
    }

    pub fn intensities(&self) -> Vec<f64> {
        self.levels.iter().map(|&l| l as f64 / 255.0).collect()
    }

    /// Base64 (standard alphabet, padded) of the row-major level bytes.
    pub fn to_base64(&self) -> String {
        base64::engine::general_purpose::STANDARD.encode(&self.levels)
    }

    pub fn from_base64(s: &str) -> Result<Self> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(s)
            .map_err(|e| Error::Format(format!("signboard base64: {e}")))?;
        Self::from_levels(bytes)
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Decoration that distinguishes signboards of POIs sharing a name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignStyle {
    /// Distance of the frame from the canvas edge, 0..=3.
    pub frame_inset: u8,
    /// Frame line width, 1..=2.
    pub frame_thickness: u8,
    /// Horizontal slot (0..8) of the short bar above the text.
    pub bar_slot: u8,
    pub underline: bool,
}

impl SignStyle {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            frame_inset: rng.gen_range(0..=3),
            frame_thickness: rng.gen_range(1..=2),
            bar_slot: rng.gen_range(0..8),
            underline: rng.gen_bool(0.5),
        }
    }
}

impl Default for SignStyle {
    fn default() -> Self {
        Self {
            frame_inset: 1,
            frame_thickness: 1,
            bar_slot: 0,
            underline: false,
        }
    }
}

/// Photometric and geometric perturbation applied when rendering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub shift_px: i32,
    pub contrast: f64,
    pub pixel_sigma: f64,
}

impl Perturbation {
    pub const NONE: Self = Self {
        shift_px: 0,
        contrast: 1.0,
        pixel_sigma: 0.0,
    };
}

/// Renders a signboard for `glyphs` in `style`.
///
/// The content (frame, bar, underline, text) is drawn shifted horizontally by
/// `pert.shift_px`, then intensities are contrast-scaled about 0.5, Gaussian
/// noise is added, and the result is clamped and quantized.
pub fn render_signboard<R: Rng + ?Sized>(
    glyphs: &[GlyphId],
    style: SignStyle,
    pert: Perturbation,
    rng: &mut R,
) -> SignboardImage {
    let mut canvas = vec![BACKGROUND; SignboardImage::LEN];
    let shift = pert.shift_px;
    let mut ink = |row: usize, col: i64| {
        let c = col + shift as i64;
        if (0..SIGN_WIDTH as i64).contains(&c) && row < SIGN_HEIGHT {
            canvas[row * SIGN_WIDTH + c as usize] = INK;
        }
    };

    let inset = style.frame_inset as usize;
    let thick = style.frame_thickness as usize;
    for t in 0..thick {
        let (top, bottom) = (inset + t, SIGN_HEIGHT - 1 - inset - t);
        let (left, right) = (inset + t, SIGN_WIDTH - 1 - inset - t);
        for c in inset..SIGN_WIDTH - inset {
            ink(top, c as i64);
            ink(bottom, c as i64);
        }
        for r in inset..SIGN_HEIGHT - inset {
            ink(r, left as i64);
            ink(r, right as i64);
        }
    }

    let bar_x = TEXT_X0 + 12 * style.bar_slot as usize;
    for r in BAR_Y..BAR_Y + BAR_H {
        for c in bar_x..bar_x + BAR_W {
            ink(r, c as i64);
        }
    }

    let shown = &glyphs[..glyphs.len().min(MAX_RENDERED_GLYPHS)];
    for (k, &g) in shown.iter().enumerate() {
        let bm = glyph::bitmap(g);
        let x0 = TEXT_X0 + k * GLYPH_PX;
        for r in 0..GLYPH_PX {
            for c in 0..GLYPH_PX {
                if bm[r * GLYPH_PX + c] {
                    ink(TEXT_Y0 + r, (x0 + c) as i64);
                }
            }
        }
    }
    if style.underline && !shown.is_empty() {
        for c in TEXT_X0..TEXT_X0 + shown.len() * GLYPH_PX {
            ink(UNDERLINE_Y, c as i64);
        }
    }

    if pert.contrast != 1.0 {
        for v in canvas.iter_mut() {
            *v = 0.5 + pert.contrast * (*v - 0.5);
        }
    }
    if pert.pixel_sigma > 0.0 {
        let normal = Normal::new(0.0, pert.pixel_sigma).expect("finite sigma");
        for v in canvas.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    SignboardImage::from_intensities(&canvas).expect("canvas has fixed size")
}
