//! Rule-based universal romanization.
//!
//! Detects the script of a text from codepoint ranges and maps it to ASCII
//! Latin with per-script replacement rules, longest match first. Latin input
//! passes through with combining diacritics stripped (canonical
//! decomposition, marks dropped), so `salón` becomes `salon`. Output is
//! lowercased unless configured otherwise. Everything here is a pure
//! function over immutable loaded tables and safe to call from any thread.

mod rules;
mod script;

use thiserror::Error;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

pub use rules::{encipher_toy, Rule, RuleSet, RuleTable, TOY_A_BASE, TOY_B_BASE};
pub use script::{detect_script, script_of, ScriptRange, ScriptTag, BUILTIN_RANGES};

#[derive(Debug, Error)]
pub enum RomanizerError {
    #[error("rule file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate rule for source {rule:?} in script {script}")]
    DuplicateRule { script: ScriptTag, rule: String },
    #[error("non-ASCII replacement {replacement:?} for source {rule:?} in script {script}")]
    NonAsciiReplacement {
        script: ScriptTag,
        rule: String,
        replacement: String,
    },
    #[error("invalid rule table: {0}")]
    RuleTableInvalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What to do with a codepoint no rule covers and that is neither ASCII nor
/// whitespace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fallback {
    /// Drop the codepoint and log a warning. Keeps output tokenizer-friendly.
    #[default]
    Drop,
    /// Emit `<u+XXXX>`.
    Escape,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RomanizeOptions {
    /// Preserve letter case instead of lowercasing the output.
    pub keep_case: bool,
    pub fallback: Fallback,
}

/// A loaded rule set plus romanization options.
pub struct Romanizer {
    rules: RuleSet,
    opts: RomanizeOptions,
}

impl Romanizer {
    /// Built-in tables (Latn specials, Cyrl, Grek, ToyA/ToyB ciphers),
    /// default options.
    pub fn builtin() -> Self {
        Romanizer {
            rules: RuleSet::builtin(),
            opts: RomanizeOptions::default(),
        }
    }

    pub fn new(rules: RuleSet, opts: RomanizeOptions) -> Self {
        Romanizer { rules, opts }
    }

    pub fn load(path: &std::path::Path, opts: RomanizeOptions) -> Result<Self, RomanizerError> {
        Ok(Romanizer {
            rules: RuleSet::load(path)?,
            opts,
        })
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    /// Map `text` to ASCII Latin.
    ///
    /// Pipeline: canonical decomposition, combining marks dropped, optional
    /// lowercasing, then per-script rules longest-match-first left-to-right.
    /// ASCII and whitespace pass through; anything else unmatched goes to
    /// the configured fallback.
    pub fn romanize(&self, text: &str) -> String {
        let mut chars: Vec<char> = text.nfd().filter(|c| !is_combining_mark(*c)).collect();
        if !self.opts.keep_case {
            chars = chars.into_iter().flat_map(|c| c.to_lowercase()).collect();
        }

        let mut out = String::with_capacity(chars.len());
        let mut pos = 0;
        while pos < chars.len() {
            if let Some((matched, replacement)) = self.rules.match_at(&chars, pos) {
                out.push_str(replacement);
                pos += matched;
                continue;
            }
            let c = chars[pos];
            pos += 1;
            if c.is_whitespace() || c.is_ascii() {
                out.push(c);
                continue;
            }
            // Case-folded retry so keep-case mode still romanizes uppercase
            // sources against lowercase tables.
            if self.opts.keep_case {
                let lowered: Vec<char> = c.to_lowercase().collect();
                if lowered != [c] {
                    if let Some((len, replacement)) = self.rules.match_at(&lowered, 0) {
                        if len == lowered.len() {
                            out.push_str(&title_case(replacement));
                            continue;
                        }
                    }
                }
            }
            match self.opts.fallback {
                Fallback::Drop => {
                    log::warn!("romanize: dropping unmapped codepoint U+{:04X}", c as u32)
                }
                Fallback::Escape => {
                    out.push_str(&format!("<u+{:04x}>", c as u32));
                }
            }
        }
        out
    }
}

fn title_case(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rom() -> Romanizer {
        Romanizer::builtin()
    }

    #[test]
    fn ascii_is_fixed_point() {
        assert_eq!(rom().romanize("hello world"), "hello world");
    }

    #[test]
    fn strips_diacritics() {
        assert_eq!(rom().romanize("salón"), "salon");
        assert_eq!(rom().romanize("Ça va, naïve café"), "ca va, naive cafe");
    }

    #[test]
    fn non_decomposable_latin_letters() {
        assert_eq!(rom().romanize("søren ßœ"), "soren ssoe");
    }

    #[test]
    fn cyrillic_basic() {
        assert_eq!(rom().romanize("мир"), "mir");
        assert_eq!(rom().romanize("привет"), "privet");
        assert_eq!(rom().romanize("щука"), "shchuka");
    }

    #[test]
    fn greek_basic() {
        assert_eq!(rom().romanize("ψυχή"), "psychi");
    }

    #[test]
    fn lowercases_by_default() {
        assert_eq!(rom().romanize("Мир Hello"), "mir hello");
    }

    #[test]
    fn keep_case_title_cases_replacements() {
        let r = Romanizer::new(
            RuleSet::builtin(),
            RomanizeOptions {
                keep_case: true,
                ..Default::default()
            },
        );
        assert_eq!(r.romanize("Мир Hello"), "Mir Hello");
    }

    #[test]
    fn unknown_codepoints_drop_by_default() {
        assert_eq!(rom().romanize("a中b"), "ab");
    }

    #[test]
    fn unknown_codepoints_escape_mode() {
        let r = Romanizer::new(
            RuleSet::builtin(),
            RomanizeOptions {
                fallback: Fallback::Escape,
                ..Default::default()
            },
        );
        assert_eq!(r.romanize("a中b"), "a<u+4e2d>b");
    }

    #[test]
    fn cipher_round_trip() {
        let enc = encipher_toy("the quick brown fox", ScriptTag::ToyA);
        assert_eq!(detect_script(&enc), ScriptTag::ToyA);
        assert_eq!(rom().romanize(&enc), "the quick brown fox");
        let enc_b = encipher_toy("jumps over", ScriptTag::ToyB);
        assert_eq!(rom().romanize(&enc_b), "jumps over");
    }

    #[test]
    fn load_errors() {
        let ok = RuleSet::parse("@script Cyrl\nа\ta\nб\tb\nв\tv\n").unwrap();
        assert_eq!(ok.tables()[0].len(), 3);

        let err = RuleSet::parse("@script Cyrl\nщ\té\n").unwrap_err();
        assert!(matches!(err, RomanizerError::NonAsciiReplacement { .. }), "{err}");

        let err = RuleSet::parse("@script Cyrl\nщ\tshch\nщ\tsch\n").unwrap_err();
        assert!(matches!(err, RomanizerError::DuplicateRule { .. }), "{err}");

        let err = RuleSet::parse("щ\tshch\n").unwrap_err();
        assert!(matches!(err, RomanizerError::Parse { line: 1, .. }), "{err}");

        let err = RuleSet::parse("@script Cyrl\nno-tab-here\n").unwrap_err();
        assert!(matches!(err, RomanizerError::Parse { line: 2, .. }), "{err}");

        let err = RuleSet::parse("@script Qaai\n").unwrap_err();
        assert!(matches!(err, RomanizerError::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn duplicate_across_scripts_is_allowed() {
        let set = RuleSet::parse("@script Cyrl\nх\tkh\n@script Grek\nχ\tch\n").unwrap();
        assert_eq!(set.tables().len(), 2);
    }

    #[test]
    fn longest_match_wins() {
        let set = RuleSet::parse("@script Cyrl\nс\ts\nсч\tsch\n").unwrap();
        let r = Romanizer::new(set, RomanizeOptions::default());
        assert_eq!(r.romanize("сч"), "sch");
    }

    #[test]
    fn idempotent_on_samples() {
        let r = rom();
        for s in ["привет мир!", "salón", "a中b", "ΣΟΦΙΑ", "mixed привет text"] {
            let once = r.romanize(s);
            assert_eq!(r.romanize(&once), once, "not idempotent on {s:?}");
        }
    }

    #[test]
    fn output_is_ascii_or_preserved_whitespace() {
        let r = rom();
        for s in ["привет\tмир", "salón\u{00A0}x", "αβγ δε"] {
            for c in r.romanize(s).chars() {
                assert!(c.is_ascii() || c.is_whitespace(), "bad output char {c:?}");
            }
        }
    }

    #[test]
    fn detect_of_romanized_is_latin_common_or_unknown() {
        let r = rom();
        for s in ["привет!", "", "É 123", "中中中"] {
            let tag = detect_script(&r.romanize(s));
            assert!(
                matches!(tag, ScriptTag::Latn | ScriptTag::Common | ScriptTag::Unknown),
                "{s:?} -> {tag}"
            );
        }
    }

    #[test]
    fn shipped_tables_emit_no_tone_marks_or_digits() {
        for table in RuleSet::builtin().tables() {
            for rule in &table.rules {
                for c in rule.replacement.chars() {
                    assert!(
                        c.is_ascii_lowercase(),
                        "replacement {:?} in {} contains {c:?}",
                        rule.replacement,
                        table.script
                    );
                }
            }
        }
    }
}
