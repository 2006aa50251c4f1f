//! Lowercasing word/punctuation tokenizer with a frequency-capped vocabulary.
//!
//! Special and label strings are reserved, case-sensitive and atomic: each
//! maps to exactly one id no matter how the surrounding text is split.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const YES: usize = 4;
pub const NO: usize = 5;
pub const OPTION_A: usize = 6;
pub const OPTION_B: usize = 7;

pub const RESERVED: [&str; 8] = ["<pad>", "<bos>", "<eos>", "<unk>", "Yes.", "No.", "[A].", "[B]."];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece<'a> {
    Reserved(usize),
    Word(String),
    Punct(&'a str),
}

fn pieces(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut i = 0;
    let bytes = text.as_bytes();
    while i < text.len() {
        let rest = &text[i..];
        let ch = rest.chars().next().expect("non-empty remainder");
        if ch.is_whitespace() {
            i += ch.len_utf8();
            continue;
        }
        let at_boundary = i == 0 || !bytes[i - 1].is_ascii_alphanumeric();
        if at_boundary {
            if let Some(id) = RESERVED.iter().position(|r| rest.starts_with(r)) {
                out.push(Piece::Reserved(id));
                i += RESERVED[id].len();
                continue;
            }
        }
        if ch.is_ascii_alphanumeric() {
            let end = rest.find(|c: char| !c.is_ascii_alphanumeric()).unwrap_or(rest.len());
            out.push(Piece::Word(rest[..end].to_ascii_lowercase()));
            i += end;
        } else {
            let w = ch.len_utf8();
            out.push(Piece::Punct(&rest[..w]));
            i += w;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TokenizerRecord", into = "TokenizerRecord")]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct TokenizerRecord {
    tokens: Vec<String>,
}

impl TryFrom<TokenizerRecord> for Tokenizer {
    type Error = Error;

    fn try_from(rec: TokenizerRecord) -> Result<Self> {
        if rec.tokens.len() < RESERVED.len() || rec.tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Parse("vocabulary does not start with the reserved tokens".into()));
        }
        Tokenizer::from_tokens(rec.tokens)
    }
}

impl From<Tokenizer> for TokenizerRecord {
    fn from(t: Tokenizer) -> Self {
        TokenizerRecord { tokens: t.tokens }
    }
}

impl Tokenizer {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Parse(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Builds a vocabulary: reserved tokens, then corpus pieces by descending
    /// frequency (first occurrence breaks ties), capped at `max_vocab` total.
    pub fn fit<S: AsRef<str>>(corpus: &[S], max_vocab: usize) -> Self {
        let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
        let mut order = 0usize;
        for line in corpus {
            for piece in pieces(line.as_ref()) {
                let key = match piece {
                    Piece::Reserved(_) => continue,
                    Piece::Word(w) => w,
                    Piece::Punct(p) => p.to_string(),
                };
                let entry = counts.entry(key).or_insert_with(|| {
                    order += 1;
                    (0, order)
                });
                entry.0 += 1;
            }
        }
        let mut ranked: Vec<(String, usize, usize)> = counts.into_iter().map(|(k, (c, o))| (k, c, o)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        let room = max_vocab.saturating_sub(RESERVED.len());
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().take(room).map(|(k, ..)| k))
            .collect();
        Self::from_tokens(tokens).expect("fitted vocabulary has unique entries")
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        pieces(text)
            .into_iter()
            .map(|p| match p {
                Piece::Reserved(id) => id,
                Piece::Word(w) => self.id(&w).unwrap_or(UNK),
                Piece::Punct(s) => self.id(s).unwrap_or(UNK),
            })
            .collect()
    }

    /// Space-joined token strings; ids outside the vocabulary decode as `<unk>`.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Canonical spacing of `text` as the tokenizer sees it (lowercased,
    /// one space between pieces).
    pub fn normalize(text: &str) -> String {
        pieces(text)
            .into_iter()
            .map(|p| match p {
                Piece::Reserved(id) => RESERVED[id].to_string(),
                Piece::Word(w) => w,
                Piece::Punct(s) => s.to_string(),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}
