//! Transliteration rule tables: parsing, validation, lookup.

use std::collections::HashMap;
use std::path::Path;

use super::script::ScriptTag;
use super::RomanizerError;

/// Lowest codepoint of the ToyA cipher block (a-z map to 26 consecutive
/// private-use codepoints).
pub const TOY_A_BASE: u32 = 0xE000;
/// Lowest codepoint of the ToyB cipher block.
pub const TOY_B_BASE: u32 = 0xE100;

/// One source-sequence → ASCII replacement rule.
#[derive(Debug, Clone)]
pub struct Rule {
    pub source: Vec<char>,
    pub replacement: String,
}

/// Ordered rules for one script. Validation sorts longest-source-first so no
/// shorter rule can shadow a longer one.
#[derive(Debug, Clone)]
pub struct RuleTable {
    pub script: ScriptTag,
    pub rules: Vec<Rule>,
}

impl RuleTable {
    pub fn new(script: ScriptTag, rules: Vec<Rule>) -> Result<Self, RomanizerError> {
        let mut table = RuleTable { script, rules };
        table.validate()?;
        Ok(table)
    }

    fn validate(&mut self) -> Result<(), RomanizerError> {
        let mut seen: HashMap<Vec<char>, ()> = HashMap::new();
        for rule in &self.rules {
            if rule.source.is_empty() {
                return Err(RomanizerError::RuleTableInvalid(format!(
                    "{}: empty rule source",
                    self.script
                )));
            }
            if !rule.replacement.chars().all(|c| (c as u32) <= 0x7F) {
                return Err(RomanizerError::NonAsciiReplacement {
                    script: self.script,
                    rule: rule.source.iter().collect(),
                    replacement: rule.replacement.clone(),
                });
            }
            if seen.insert(rule.source.clone(), ()).is_some() {
                return Err(RomanizerError::DuplicateRule {
                    script: self.script,
                    rule: rule.source.iter().collect(),
                });
            }
        }
        // Longest-match-first order; ties broken by source for determinism.
        self.rules
            .sort_by(|a, b| b.source.len().cmp(&a.source.len()).then(a.source.cmp(&b.source)));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Bijection from the 26 lowercase Latin letters into a private-use
    /// cipher block. The table maps cipher codepoints back to letters, so
    /// romanizing enciphered text recovers the original exactly.
    pub fn cipher(script: ScriptTag) -> RuleTable {
        let base = match script {
            ScriptTag::ToyA => TOY_A_BASE,
            ScriptTag::ToyB => TOY_B_BASE,
            _ => panic!("cipher tables exist only for ToyA/ToyB"),
        };
        let rules = (0..26u32)
            .map(|i| Rule {
                source: vec![char::from_u32(base + i).unwrap()],
                replacement: char::from_u32('a' as u32 + i).unwrap().to_string(),
            })
            .collect();
        RuleTable::new(script, rules).expect("cipher table is valid by construction")
    }
}

/// Encipher lowercase Latin letters of `text` into the given toy script.
/// Non-letter characters pass through unchanged.
pub fn encipher_toy(text: &str, script: ScriptTag) -> String {
    let base = match script {
        ScriptTag::ToyA => TOY_A_BASE,
        ScriptTag::ToyB => TOY_B_BASE,
        _ => panic!("cipher scripts are ToyA/ToyB"),
    };
    text.chars()
        .map(|c| {
            if c.is_ascii_lowercase() {
                char::from_u32(base + (c as u32 - 'a' as u32)).unwrap()
            } else {
                c
            }
        })
        .collect()
}

/// All loaded rule tables plus a first-char index for longest-match scans.
#[derive(Debug, Clone)]
pub struct RuleSet {
    tables: Vec<RuleTable>,
    by_first: HashMap<char, Vec<(Vec<char>, String)>>,
}

impl RuleSet {
    pub fn from_tables(tables: Vec<RuleTable>) -> Result<Self, RomanizerError> {
        let mut by_first: HashMap<char, Vec<(Vec<char>, String)>> = HashMap::new();
        for table in &tables {
            for rule in &table.rules {
                by_first
                    .entry(rule.source[0])
                    .or_default()
                    .push((rule.source.clone(), rule.replacement.clone()));
            }
        }
        for bucket in by_first.values_mut() {
            bucket.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
        }
        Ok(RuleSet { tables, by_first })
    }

    /// Parse the rule-file format: `@script TAG` headers, `source<TAB>repl`
    /// lines, `#` comments, blank lines ignored.
    pub fn parse(content: &str) -> Result<Self, RomanizerError> {
        let mut tables: Vec<(ScriptTag, Vec<Rule>)> = Vec::new();
        for (idx, raw) in content.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches(['\r', '\n']);
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(tag_str) = line.strip_prefix("@script") {
                let tag_str = tag_str.trim();
                let tag = ScriptTag::from_code(tag_str).ok_or(RomanizerError::Parse {
                    line: line_no,
                    msg: format!("unknown script tag {tag_str:?}"),
                })?;
                tables.push((tag, Vec::new()));
                continue;
            }
            let (source, replacement) = line.split_once('\t').ok_or(RomanizerError::Parse {
                line: line_no,
                msg: "expected <source><TAB><replacement>".to_string(),
            })?;
            if source.is_empty() {
                return Err(RomanizerError::Parse {
                    line: line_no,
                    msg: "empty source".to_string(),
                });
            }
            let current = tables.last_mut().ok_or(RomanizerError::Parse {
                line: line_no,
                msg: "rule before any @script header".to_string(),
            })?;
            current.1.push(Rule {
                source: source.chars().collect(),
                replacement: replacement.to_string(),
            });
        }
        let tables = tables
            .into_iter()
            .map(|(script, rules)| RuleTable::new(script, rules))
            .collect::<Result<Vec<_>, _>>()?;
        RuleSet::from_tables(tables)
    }

    pub fn load(path: &Path) -> Result<Self, RomanizerError> {
        let content = std::fs::read_to_string(path)?;
        Self::parse(&content)
    }

    /// Embedded default tables (Latn specials, Cyrl, Grek) plus the ToyA and
    /// ToyB cipher tables.
    pub fn builtin() -> Self {
        let mut set =
            Self::parse(include_str!("default_rules.tsv")).expect("embedded tables are valid");
        let mut tables = set.tables;
        tables.push(RuleTable::cipher(ScriptTag::ToyA));
        tables.push(RuleTable::cipher(ScriptTag::ToyB));
        set = Self::from_tables(tables).expect("cipher tables are valid");
        set
    }

    pub fn tables(&self) -> &[RuleTable] {
        &self.tables
    }

    /// Longest rule matching `chars[pos..]`, as (source length, replacement).
    pub fn match_at(&self, chars: &[char], pos: usize) -> Option<(usize, &str)> {
        let bucket = self.by_first.get(&chars[pos])?;
        for (source, replacement) in bucket {
            if pos + source.len() <= chars.len() && chars[pos..pos + source.len()] == source[..] {
                return Some((source.len(), replacement));
            }
        }
        None
    }

    /// Largest replacement length over all rules (the K of the output
    /// length bound).
    pub fn max_replacement_len(&self) -> usize {
        self.tables
            .iter()
            .flat_map(|t| t.rules.iter())
            .map(|r| r.replacement.chars().count())
            .max()
            .unwrap_or(1)
            .max(1)
    }
}
