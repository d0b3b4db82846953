//! Word-level vocabulary and tokenizer.

use std::collections::HashMap;
use std::io::BufRead;

use crate::error::{HydraError, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const RESERVED: [&str; 3] = ["[PAD]", "[UNK]", "[CLS]"];
pub const DEFAULT_MIN_FREQ: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps words seen at least `min_freq` times, ordered by descending
    /// frequency and then lexicographically. Tokens containing whitespace
    /// cannot be stored one per line and are skipped.
    pub fn build<I, S>(words: I, min_freq: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for w in words {
            *counts.entry(w.as_ref().to_lowercase()).or_default() += 1;
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| {
                *c >= min_freq.max(1)
                    && !w.is_empty()
                    && !w.contains(char::is_whitespace)
                    && !RESERVED.contains(&w.as_str())
            })
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_words(kept.into_iter().map(|(w, _)| w))
    }

    fn from_words(words: impl IntoIterator<Item = String>) -> Self {
        let mut v = Vocabulary {
            words: RESERVED.iter().map(|s| s.to_string()).collect(),
            ids: HashMap::new(),
        };
        for (i, w) in v.words.iter().enumerate() {
            v.ids.insert(w.clone(), i);
        }
        for w in words {
            if !v.ids.contains_key(&w) {
                v.ids.insert(w.clone(), v.words.len());
                v.words.push(w);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Exact match first (so reserved tokens resolve), then lowercased.
    pub fn id(&self, word: &str) -> usize {
        self.ids
            .get(word)
            .or_else(|| self.ids.get(&word.to_lowercase()))
            .copied()
            .unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    /// CLS followed by the ids of pre-split words.
    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        std::iter::once(CLS)
            .chain(words.iter().map(|w| self.id(w.as_ref())))
            .collect()
    }

    /// One word per line; line `k` (0-based) holds id `k + 3`.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for w in &self.words[RESERVED.len()..] {
            out.push_str(w);
            out.push('\n');
        }
        out
    }

    pub fn read(input: impl BufRead) -> Result<Self> {
        let mut words = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| HydraError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if line.is_empty() || line.contains(char::is_whitespace) {
                return Err(HydraError::Parse {
                    line: i + 1,
                    message: "vocabulary entries must be single non-empty tokens".into(),
                });
            }
            words.push(line);
        }
        let n = words.len();
        let v = Self::from_words(words);
        if v.len() != n + RESERVED.len() {
            return Err(HydraError::Parse {
                line: 0,
                message: "duplicate vocabulary entries".into(),
            });
        }
        Ok(v)
    }
}

/// Lowercased words; punctuation characters become tokens of their own.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut cur = String::new();
        for c in chunk.chars() {
            if c.is_alphanumeric() {
                cur.extend(c.to_lowercase());
            } else {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// CLS plus word ids, truncated to `max_len` positions in total.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    let mut ids = vocab.encode_words(&split_words(text));
    ids.truncate(max_len.max(2));
    ids
}
