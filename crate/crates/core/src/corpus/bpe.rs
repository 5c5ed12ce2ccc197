//! Byte-level BPE vocabulary shared across original and transliterated text.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CorpusError;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;
pub const MASK_ID: usize = 4;
const N_SPECIALS: usize = 5;

/// Position role inside an encoded sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Cls,
    Sep,
    Pad,
    Content,
    Mask,
}

/// Token ids plus per-position roles. Starts with `[cls]`, ends with `[sep]`
/// before padding, never longer than the `max_len` it was encoded with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub roles: Vec<Role>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Positions holding real content (role Content or Mask).
    pub fn content_positions(&self) -> Vec<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| matches!(r, Role::Content | Role::Mask))
            .map(|(i, _)| i)
            .collect()
    }

    /// Positions that are not padding.
    pub fn attended_positions(&self) -> Vec<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| !matches!(r, Role::Pad))
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    specials: BTreeMap<String, usize>,
    /// Byte strings for ids 5.., id order.
    tokens: Vec<Vec<u8>>,
    /// Learned merges as (left id, right id), in order.
    merges: Vec<[usize; 2]>,
}

/// Byte-level BPE vocabulary. Ids are dense: the five specials are fixed at
/// 0..=4, single-byte tokens follow in byte order, merged tokens after that
/// in the order they were learned.
#[derive(Debug, Clone)]
pub struct Vocab {
    /// Token byte strings for ids >= 5 (specials carry no bytes).
    tokens: Vec<Vec<u8>>,
    merges: Vec<(usize, usize)>,
    lookup: HashMap<Vec<u8>, usize>,
    max_token_len: usize,
}

impl Vocab {
    pub fn size(&self) -> usize {
        N_SPECIALS + self.tokens.len()
    }

    pub fn merges(&self) -> &[(usize, usize)] {
        &self.merges
    }

    fn token_bytes(&self, id: usize) -> Option<&[u8]> {
        id.checked_sub(N_SPECIALS)
            .and_then(|i| self.tokens.get(i))
            .map(|v| v.as_slice())
    }

    /// Learn merges on the union of original texts and transliterations.
    ///
    /// The base alphabet is every byte occurring in the corpus; merges are
    /// counted within whitespace-separated words and never cross word
    /// boundaries. Ties on the merge count are broken by the lexicographic
    /// order of the candidate pair's byte strings, which makes training
    /// fully deterministic. The `seed` parameter is accepted for interface
    /// stability but the result does not depend on it.
    pub fn train<S: AsRef<str>>(
        corpus: &[S],
        target_size: usize,
        _seed: u64,
    ) -> Result<Vocab, CorpusError> {
        if corpus.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        // Base alphabet: all bytes seen anywhere (including whitespace so
        // that encoding can reproduce the raw line).
        let mut alphabet: BTreeSet<u8> = BTreeSet::new();
        let mut words: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
        for s in corpus {
            let s = s.as_ref();
            alphabet.extend(s.bytes());
            for w in s.split_whitespace() {
                *words.entry(w.as_bytes().to_vec()).or_insert(0) += 1;
            }
        }
        if N_SPECIALS + alphabet.len() > target_size {
            return Err(CorpusError::InsufficientData {
                alphabet: alphabet.len(),
                target: target_size,
            });
        }

        let mut tokens: Vec<Vec<u8>> = alphabet.iter().map(|b| vec![*b]).collect();
        let byte_id: HashMap<u8, usize> = alphabet
            .iter()
            .enumerate()
            .map(|(i, b)| (*b, N_SPECIALS + i))
            .collect();

        // Words as id sequences, deterministic order (sorted by bytes).
        let mut reprs: Vec<(Vec<usize>, u64)> = words
            .iter()
            .map(|(w, freq)| (w.iter().map(|b| byte_id[b]).collect(), *freq))
            .collect();

        let mut merges: Vec<(usize, usize)> = Vec::new();
        while N_SPECIALS + tokens.len() < target_size {
            let mut counts: HashMap<(usize, usize), u64> = HashMap::new();
            for (ids, freq) in &reprs {
                for w in ids.windows(2) {
                    *counts.entry((w[0], w[1])).or_insert(0) += freq;
                }
            }
            let bytes_of = |id: usize| -> &[u8] { &tokens[id - N_SPECIALS] };
            let best = counts.iter().fold(None, |acc: Option<((usize, usize), u64)>, (&pair, &count)| {
                match acc {
                    None => Some((pair, count)),
                    Some((bp, bc)) => {
                        let better = count > bc
                            || (count == bc
                                && (bytes_of(pair.0), bytes_of(pair.1))
                                    < (bytes_of(bp.0), bytes_of(bp.1)));
                        if better {
                            Some((pair, count))
                        } else {
                            Some((bp, bc))
                        }
                    }
                }
            });
            let (pair, count) = match best {
                Some(b) => b,
                None => break,
            };
            if count < 2 {
                break;
            }
            let mut merged = tokens[pair.0 - N_SPECIALS].clone();
            merged.extend_from_slice(&tokens[pair.1 - N_SPECIALS]);
            let new_id = N_SPECIALS + tokens.len();
            tokens.push(merged);
            merges.push(pair);
            for (ids, _) in reprs.iter_mut() {
                let mut i = 0;
                let mut out = Vec::with_capacity(ids.len());
                while i < ids.len() {
                    if i + 1 < ids.len() && ids[i] == pair.0 && ids[i + 1] == pair.1 {
                        out.push(new_id);
                        i += 2;
                    } else {
                        out.push(ids[i]);
                        i += 1;
                    }
                }
                *ids = out;
            }
        }

        let lookup = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), N_SPECIALS + i))
            .collect();
        let max_token_len = tokens.iter().map(|t| t.len()).max().unwrap_or(1);
        Ok(Vocab {
            tokens,
            merges,
            lookup,
            max_token_len,
        })
    }

    /// Greedy longest-match tokenization over raw bytes; bytes outside the
    /// vocabulary become `[unk]`, so encoding never fails.
    fn tokenize_bytes(&self, bytes: &[u8]) -> Vec<usize> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            let mut matched = None;
            let max = self.max_token_len.min(bytes.len() - i);
            for len in (1..=max).rev() {
                if let Some(&id) = self.lookup.get(&bytes[i..i + len]) {
                    matched = Some((id, len));
                    break;
                }
            }
            match matched {
                Some((id, len)) => {
                    out.push(id);
                    i += len;
                }
                None => {
                    out.push(UNK_ID);
                    i += 1;
                }
            }
        }
        out
    }

    /// Encode with `[cls]`/`[sep]` framing, truncated to `max_len` and
    /// padded with `[pad]`.
    pub fn encode(&self, text: &str, max_len: usize) -> TokenSequence {
        assert!(max_len >= 2, "max_len must fit [cls] and [sep]");
        let mut content = self.tokenize_bytes(text.as_bytes());
        content.truncate(max_len - 2);
        let mut ids = Vec::with_capacity(max_len);
        let mut roles = Vec::with_capacity(max_len);
        ids.push(CLS_ID);
        roles.push(Role::Cls);
        for id in content {
            ids.push(id);
            roles.push(Role::Content);
        }
        ids.push(SEP_ID);
        roles.push(Role::Sep);
        while ids.len() < max_len {
            ids.push(PAD_ID);
            roles.push(Role::Pad);
        }
        TokenSequence { ids, roles }
    }

    /// Concatenate content-token bytes back into a string. Specials are
    /// skipped; `[unk]` renders as U+FFFD.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut bytes = Vec::new();
        for &id in ids {
            match id {
                PAD_ID | CLS_ID | SEP_ID | MASK_ID => {}
                UNK_ID => bytes.extend_from_slice("\u{FFFD}".as_bytes()),
                _ => {
                    if let Some(t) = self.token_bytes(id) {
                        bytes.extend_from_slice(t);
                    }
                }
            }
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            specials: [
                ("pad".to_string(), PAD_ID),
                ("unk".to_string(), UNK_ID),
                ("cls".to_string(), CLS_ID),
                ("sep".to_string(), SEP_ID),
                ("mask".to_string(), MASK_ID),
            ]
            .into_iter()
            .collect(),
            tokens: self.tokens.clone(),
            merges: self.merges.iter().map(|&(a, b)| [a, b]).collect(),
        };
        serde_json::to_string_pretty(&file).expect("vocab serializes")
    }

    pub fn from_json(json: &str) -> Result<Vocab, CorpusError> {
        let file: VocabFile =
            serde_json::from_str(json).map_err(|e| CorpusError::VocabFormat(e.to_string()))?;
        let expected: BTreeMap<String, usize> = [
            ("pad".to_string(), PAD_ID),
            ("unk".to_string(), UNK_ID),
            ("cls".to_string(), CLS_ID),
            ("sep".to_string(), SEP_ID),
            ("mask".to_string(), MASK_ID),
        ]
        .into_iter()
        .collect();
        if file.specials != expected {
            return Err(CorpusError::VocabFormat(
                "special token ids must be pad=0 unk=1 cls=2 sep=3 mask=4".to_string(),
            ));
        }
        let size = N_SPECIALS + file.tokens.len();
        for m in &file.merges {
            if m[0] >= size || m[1] >= size {
                return Err(CorpusError::VocabFormat(format!(
                    "merge {m:?} references id outside vocabulary of {size}"
                )));
            }
        }
        let lookup = file
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), N_SPECIALS + i))
            .collect();
        let max_token_len = file.tokens.iter().map(|t| t.len()).max().unwrap_or(1);
        Ok(Vocab {
            tokens: file.tokens,
            merges: file.merges.iter().map(|m| (m[0], m[1])).collect(),
            lookup,
            max_token_len,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab, CorpusError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
