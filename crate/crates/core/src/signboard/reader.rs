use crate::glyph::{self, GlyphId, ALPHABET_SIZE, GLYPH_PX};
use crate::model::{SignboardImage, MAX_RENDERED_GLYPHS, SIGN_WIDTH, TEXT_X0, TEXT_Y0};

const MAX_SHIFT: i32 = 4;
// Rows between the decoration bar and the text line. Only vertical frame
// strokes ink them.
const BLANK_ROWS: [usize; 2] = [9, 10];
// Columns the text line can occupy under any shift.
const WINDOW: std::ops::Range<i32> =
    TEXT_X0 as i32 - MAX_SHIFT..(TEXT_X0 + MAX_RENDERED_GLYPHS * GLYPH_PX) as i32 + MAX_SHIFT;

/// Recovers the depicted text by template matching against the glyph font.
///
/// Background and ink levels come from a blank band, so contrast changes do
/// not matter, and columns crossed by the frame are ignored. Each of the
/// eight cell phases tiles the text window; the phase with the lowest total
/// cost wins. Shifts eight pixels apart share a phase, so leading blank cells
/// are skipped. Reading stops at the first blank after the text.
pub fn read_signboard_text(img: &SignboardImage) -> String {
    let band =
        |c: usize| BLANK_ROWS.iter().map(|&r| img.get(r, c)).sum::<f64>() / BLANK_ROWS.len() as f64;
    // contrast is applied about 0.5, so background sits below it and ink above
    let frame: Vec<bool> = (0..SIGN_WIDTH).map(|c| band(c) > 0.5).collect();
    let clear: Vec<usize> = (0..SIGN_WIDTH).filter(|&c| !frame[c]).collect();
    let bg = if clear.is_empty() {
        0.5
    } else {
        clear.iter().map(|&c| band(c)).sum::<f64>() / clear.len() as f64
    };
    let ink = 1.0 - bg;
    let px = |r: usize, c: i32| -> Option<f64> {
        let c = c as usize;
        (!frame[c]).then(|| img.get(TEXT_Y0 + r, c))
    };

    let mut best: Option<(f64, Vec<Option<GlyphId>>)> = None;
    for phase in -MAX_SHIFT..MAX_SHIFT {
        let first = TEXT_X0 as i32 + phase;
        let mut x0 = first - GLYPH_PX as i32 * ((first - WINDOW.start) / GLYPH_PX as i32);
        // pixels left of the first full cell must be background
        let mut total: f64 = (WINDOW.start..x0)
            .flat_map(|c| (0..GLYPH_PX).filter_map(move |r| px(r, c)))
            .map(|v| (v - bg).powi(2))
            .sum();
        let mut cells = Vec::new();
        while x0 + GLYPH_PX as i32 <= WINDOW.end {
            let (cost, g) = match_cell(&px, x0, bg, ink);
            total += cost;
            cells.push(g);
            x0 += GLYPH_PX as i32;
        }
        total += (x0..WINDOW.end)
            .flat_map(|c| (0..GLYPH_PX).filter_map(move |r| px(r, c)))
            .map(|v| (v - bg).powi(2))
            .sum::<f64>();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, cells));
        }
    }
    let (_, cells) = best.expect("phase range is non-empty");
    cells
        .into_iter()
        .skip_while(Option::is_none)
        .map_while(|g| g.map(glyph::glyph_char))
        .take(MAX_RENDERED_GLYPHS)
        .collect()
}

/// Best template for the cell whose left edge is `x0`; `None` is blank.
fn match_cell(
    px: &impl Fn(usize, i32) -> Option<f64>,
    x0: i32,
    bg: f64,
    ink: f64,
) -> (f64, Option<GlyphId>) {
    let mut cell = [None; GLYPH_PX * GLYPH_PX];
    for r in 0..GLYPH_PX {
        for c in 0..GLYPH_PX {
            cell[r * GLYPH_PX + c] = px(r, x0 + c as i32);
        }
    }
    let blank: f64 = cell.iter().flatten().map(|v| (v - bg).powi(2)).sum();
    let mut best = (blank, None);
    for g in 0..ALPHABET_SIZE as GlyphId {
        let bm = glyph::bitmap(g);
        let sse: f64 = cell
            .iter()
            .zip(bm.iter())
            .filter_map(|(v, &on)| v.map(|v| (v - if on { ink } else { bg }).powi(2)))
            .sum();
        if sse < best.0 {
            best = (sse, Some(g));
        }
    }
    best
}
