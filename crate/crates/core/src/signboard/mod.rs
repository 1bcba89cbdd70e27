//! Text evidence from signboards: a simulated OCR channel, a noisy-channel
//! name corrector, name similarity, and outline descriptors used to tell
//! same-named POIs apart.

mod corrector;
mod ocr;
mod outline;
mod reader;

pub use corrector::{
    correct_name, fit_corrector, Correction, NameCorrector, CORRECTOR_FORMAT, CORRECTOR_VERSION,
    EPSILON,
};
pub use ocr::{ocr_read, ChannelParams, OcrChannel, CHANNEL_FORMAT, CHANNEL_VERSION};
pub use outline::{outline_feature, OutlineFeature, OUTLINE_DIM};
pub use reader::read_signboard_text;

/// Levenshtein distance over characters.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_slices(&a, &b)
}

pub(crate) fn levenshtein_slices<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = diag + usize::from(ca != cb);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(diag + 1);
        }
    }
    row[b.len()]
}

/// 1 − Levenshtein(a, b) / max(|a|, |b|); two empty names are identical.
pub fn name_similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein_slices(&a, &b) as f64 / longest as f64
}
