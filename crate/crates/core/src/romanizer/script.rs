//! Script tags and codepoint-range detection.

use serde::{Deserialize, Serialize};

/// Writing-system tag, ISO-15924 style. `Common` (code `Zyyy`) covers
/// digits, punctuation, whitespace and combining marks; `Unknown` (`Zzzz`)
/// anything outside every known range. `ToyA`/`ToyB` are synthetic cipher
/// scripts living in the private-use area, used for controlled two-script
/// experiments with exact ground-truth transliteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScriptTag {
    Latn,
    Cyrl,
    Grek,
    Deva,
    Arab,
    Hani,
    ToyA,
    ToyB,
    #[serde(rename = "Zyyy", alias = "Common")]
    Common,
    #[serde(rename = "Zzzz", alias = "Unknown")]
    Unknown,
}

impl ScriptTag {
    pub fn code(self) -> &'static str {
        match self {
            ScriptTag::Latn => "Latn",
            ScriptTag::Cyrl => "Cyrl",
            ScriptTag::Grek => "Grek",
            ScriptTag::Deva => "Deva",
            ScriptTag::Arab => "Arab",
            ScriptTag::Hani => "Hani",
            ScriptTag::ToyA => "ToyA",
            ScriptTag::ToyB => "ToyB",
            ScriptTag::Common => "Zyyy",
            ScriptTag::Unknown => "Zzzz",
        }
    }

    pub fn from_code(code: &str) -> Option<ScriptTag> {
        match code {
            "Latn" => Some(ScriptTag::Latn),
            "Cyrl" => Some(ScriptTag::Cyrl),
            "Grek" => Some(ScriptTag::Grek),
            "Deva" => Some(ScriptTag::Deva),
            "Arab" => Some(ScriptTag::Arab),
            "Hani" => Some(ScriptTag::Hani),
            "ToyA" => Some(ScriptTag::ToyA),
            "ToyB" => Some(ScriptTag::ToyB),
            "Zyyy" | "Common" => Some(ScriptTag::Common),
            "Zzzz" | "Unknown" => Some(ScriptTag::Unknown),
            _ => None,
        }
    }
}

impl std::fmt::Display for ScriptTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

/// Inclusive codepoint range mapped to one script.
#[derive(Debug, Clone, Copy)]
pub struct ScriptRange {
    pub lo: u32,
    pub hi: u32,
    pub tag: ScriptTag,
}

const fn r(lo: u32, hi: u32, tag: ScriptTag) -> ScriptRange {
    ScriptRange { lo, hi, tag }
}

/// Built-in detection table: disjoint, sorted ascending by `lo`.
/// Deliberately coarse — block-level, not the full Unicode script property.
pub const BUILTIN_RANGES: &[ScriptRange] = &[
    r(0x0009, 0x000D, ScriptTag::Common),  // control whitespace
    r(0x0020, 0x0040, ScriptTag::Common),  // space, punctuation, digits
    r(0x0041, 0x005A, ScriptTag::Latn),    // A-Z
    r(0x005B, 0x0060, ScriptTag::Common),
    r(0x0061, 0x007A, ScriptTag::Latn),    // a-z
    r(0x007B, 0x007E, ScriptTag::Common),
    r(0x00A0, 0x00BF, ScriptTag::Common),  // Latin-1 punctuation and signs
    r(0x00C0, 0x00D6, ScriptTag::Latn),
    r(0x00D7, 0x00D7, ScriptTag::Common),  // multiplication sign
    r(0x00D8, 0x00F6, ScriptTag::Latn),
    r(0x00F7, 0x00F7, ScriptTag::Common),  // division sign
    r(0x00F8, 0x024F, ScriptTag::Latn),    // Latin-1 tail, Extended-A/B
    r(0x0300, 0x036F, ScriptTag::Common),  // combining diacritical marks
    r(0x0370, 0x03FF, ScriptTag::Grek),
    r(0x0400, 0x052F, ScriptTag::Cyrl),    // Cyrillic + supplement
    r(0x0600, 0x06FF, ScriptTag::Arab),
    r(0x0750, 0x077F, ScriptTag::Arab),    // Arabic supplement
    r(0x0900, 0x097F, ScriptTag::Deva),
    r(0x1E00, 0x1EFF, ScriptTag::Latn),    // Latin extended additional
    r(0x1F00, 0x1FFF, ScriptTag::Grek),    // Greek extended
    r(0x2000, 0x206F, ScriptTag::Common),  // general punctuation
    r(0x3400, 0x4DBF, ScriptTag::Hani),    // CJK extension A
    r(0x4E00, 0x9FFF, ScriptTag::Hani),
    r(0xE000, 0xE019, ScriptTag::ToyA),
    r(0xE100, 0xE119, ScriptTag::ToyB),
];

/// Script of a single codepoint; `Unknown` when no range matches.
pub fn script_of(c: char) -> ScriptTag {
    let cp = c as u32;
    let mut lo = 0usize;
    let mut hi = BUILTIN_RANGES.len();
    while lo < hi {
        let mid = (lo + hi) / 2;
        let range = &BUILTIN_RANGES[mid];
        if cp < range.lo {
            hi = mid;
        } else if cp > range.hi {
            lo = mid + 1;
        } else {
            return range.tag;
        }
    }
    ScriptTag::Unknown
}

/// Majority script over the non-Common codepoints of `text`. Ties go to the
/// first-encountered script; codepoints outside every range vote for
/// `Unknown`. Returns `Common` for text containing only Common codepoints
/// and `Unknown` for empty text.
pub fn detect_script(text: &str) -> ScriptTag {
    let mut counts: Vec<(ScriptTag, usize)> = Vec::new();
    let mut saw_common = false;
    for c in text.chars() {
        let tag = script_of(c);
        if tag == ScriptTag::Common {
            saw_common = true;
            continue;
        }
        match counts.iter_mut().find(|(t, _)| *t == tag) {
            Some((_, n)) => *n += 1,
            None => counts.push((tag, 1)),
        }
    }
    match counts.iter().max_by_key(|(_, n)| *n) {
        // max_by_key returns the last maximal element; scan manually to keep
        // the first-encountered winner instead.
        Some(_) => {
            let mut best = counts[0];
            for &(tag, n) in &counts[1..] {
                if n > best.1 {
                    best = (tag, n);
                }
            }
            best.0
        }
        None if saw_common => ScriptTag::Common,
        None => ScriptTag::Unknown,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_are_sorted_and_disjoint() {
        for w in BUILTIN_RANGES.windows(2) {
            assert!(w[0].lo <= w[0].hi);
            assert!(w[0].hi < w[1].lo, "{:?} overlaps {:?}", w[0], w[1]);
        }
    }

    #[test]
    fn detect_basic() {
        assert_eq!(detect_script("abc"), ScriptTag::Latn);
        assert_eq!(detect_script(""), ScriptTag::Unknown);
        assert_eq!(detect_script("привет!"), ScriptTag::Cyrl);
        assert_eq!(detect_script("123 ,.!"), ScriptTag::Common);
        assert_eq!(detect_script("αβγ"), ScriptTag::Grek);
    }

    #[test]
    fn detect_majority_and_tie_break() {
        assert_eq!(detect_script("abcде"), ScriptTag::Latn); // 3 Latn vs 2 Cyrl
        assert_eq!(detect_script("aб"), ScriptTag::Latn); // tie, first encountered
        assert_eq!(detect_script("бa"), ScriptTag::Cyrl);
    }

    #[test]
    fn detect_unknown_codepoints() {
        // Hangul is outside every built-in range.
        assert_eq!(detect_script("\u{AC00}\u{AC01}"), ScriptTag::Unknown);
    }

    #[test]
    fn toy_ranges() {
        assert_eq!(script_of('\u{E000}'), ScriptTag::ToyA);
        assert_eq!(script_of('\u{E105}'), ScriptTag::ToyB);
        assert_eq!(script_of('\u{E050}'), ScriptTag::Unknown);
    }

    #[test]
    fn script_codes_round_trip() {
        for tag in [
            ScriptTag::Latn,
            ScriptTag::ToyA,
            ScriptTag::Common,
            ScriptTag::Unknown,
        ] {
            assert_eq!(ScriptTag::from_code(tag.code()), Some(tag));
        }
        assert_eq!(ScriptTag::Common.code(), "Zyyy");
    }
}
