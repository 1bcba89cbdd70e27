//! The fixed glyph alphabet POI names are written in, and the 8×8 bitmap
//! used to draw each glyph on a signboard.

use std::sync::OnceLock;

/// Number of glyphs in the alphabet.
pub const ALPHABET_SIZE: usize = 64;

/// Side length of a glyph bitmap in pixels.
pub const GLYPH_PX: usize = 8;

const ALPHABET: &[u8; ALPHABET_SIZE] =
    b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789&-";

// Ink is confined to a 6×7 box so neighbouring glyphs never touch.
const INK_COLS: usize = 6;
const INK_ROWS: usize = 7;
const MIN_GLYPH_DISTANCE: u32 = 8;
const BITMAP_SEED: u64 = 0x5eed_0f61_7970;

/// Index of a glyph within the alphabet.
pub type GlyphId = u8;

/// Returns the glyph index of `c`, if `c` belongs to the alphabet.
pub fn glyph_index(c: char) -> Option<GlyphId> {
    let table = reverse_table();
    let code = c as u32;
    if code < 128 {
        let idx = table[code as usize];
        (idx != u8::MAX).then_some(idx)
    } else {
        None
    }
}

/// Returns the character drawn by glyph `g`.
pub fn glyph_char(g: GlyphId) -> char {
    ALPHABET[g as usize] as char
}

/// Converts a name into glyph indices, or `None` if it uses a foreign character.
pub fn encode_name(name: &str) -> Option<Vec<GlyphId>> {
    name.chars().map(glyph_index).collect()
}

pub fn decode_name(glyphs: &[GlyphId]) -> String {
    glyphs.iter().map(|&g| glyph_char(g)).collect()
}

/// True if every character of `name` is in the alphabet.
pub fn is_valid_name(name: &str) -> bool {
    name.chars().all(|c| glyph_index(c).is_some())
}

/// 8×8 bitmap of glyph `g`, row-major, `true` = ink.
pub fn bitmap(g: GlyphId) -> &'static [bool; GLYPH_PX * GLYPH_PX] {
    &bitmaps()[g as usize]
}

/// Pixel Hamming distance between two glyph bitmaps.
pub fn bitmap_distance(a: GlyphId, b: GlyphId) -> u32 {
    bitmap(a)
        .iter()
        .zip(bitmap(b).iter())
        .filter(|(x, y)| x != y)
        .count() as u32
}

/// The `n` glyphs whose bitmaps are closest to `g` (excluding `g`), nearest first,
/// ties broken by glyph index.
pub fn confusable(g: GlyphId, n: usize) -> Vec<GlyphId> {
    let mut others: Vec<(u32, GlyphId)> = (0..ALPHABET_SIZE as GlyphId)
        .filter(|&o| o != g)
        .map(|o| (bitmap_distance(g, o), o))
        .collect();
    others.sort_unstable();
    others.into_iter().take(n).map(|(_, o)| o).collect()
}

fn reverse_table() -> &'static [u8; 128] {
    static TABLE: OnceLock<[u8; 128]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [u8::MAX; 128];
        for (i, &c) in ALPHABET.iter().enumerate() {
            t[c as usize] = i as u8;
        }
        t
    })
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

// Procedural font: each glyph is a random 6×7 pattern, redrawn until it is at
// least MIN_GLYPH_DISTANCE pixels away from every earlier glyph.
fn bitmaps() -> &'static [[bool; GLYPH_PX * GLYPH_PX]; ALPHABET_SIZE] {
    static BITMAPS: OnceLock<[[bool; GLYPH_PX * GLYPH_PX]; ALPHABET_SIZE]> = OnceLock::new();
    BITMAPS.get_or_init(|| {
        let mut state = BITMAP_SEED;
        let mut out = [[false; GLYPH_PX * GLYPH_PX]; ALPHABET_SIZE];
        for g in 0..ALPHABET_SIZE {
            loop {
                let mut bm = [false; GLYPH_PX * GLYPH_PX];
                let bits = splitmix64(&mut state);
                for r in 0..INK_ROWS {
                    for c in 0..INK_COLS {
                        let bit = r * INK_COLS + c;
                        bm[r * GLYPH_PX + c + 1] = (bits >> bit) & 1 == 1;
                    }
                }
                let ink = bm.iter().filter(|&&b| b).count();
                if !(14..=28).contains(&ink) {
                    continue;
                }
                let far_enough = out[..g].iter().all(|prev| {
                    prev.iter().zip(bm.iter()).filter(|(a, b)| a != b).count() as u32
                        >= MIN_GLYPH_DISTANCE
                });
                if far_enough {
                    out[g] = bm;
                    break;
                }
            }
        }
        out
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alphabet_roundtrip() {
        for g in 0..ALPHABET_SIZE as GlyphId {
            assert_eq!(glyph_index(glyph_char(g)), Some(g));
        }
        assert_eq!(glyph_index('!'), None);
        assert_eq!(glyph_index('é'), None);
        assert_eq!(decode_name(&encode_name("Ab9-").unwrap()), "Ab9-");
    }

    #[test]
    fn bitmaps_are_distinct_and_bounded() {
        for a in 0..ALPHABET_SIZE as GlyphId {
            let bm = bitmap(a);
            // spacing column 0 and 7, spacing row 7
            for r in 0..GLYPH_PX {
                assert!(!bm[r * GLYPH_PX]);
                assert!(!bm[r * GLYPH_PX + 7]);
            }
            assert!((0..GLYPH_PX).all(|c| !bm[7 * GLYPH_PX + c]));
            for b in 0..a {
                assert!(bitmap_distance(a, b) >= MIN_GLYPH_DISTANCE);
            }
        }
    }

    #[test]
    fn confusable_is_sorted_by_distance() {
        let c = confusable(5, 3);
        assert_eq!(c.len(), 3);
        assert!(!c.contains(&5));
        assert!(bitmap_distance(5, c[0]) <= bitmap_distance(5, c[1]));
        assert!(bitmap_distance(5, c[1]) <= bitmap_distance(5, c[2]));
    }
}
