//! Byte-level BPE tokenizer with the classifier's special tokens.
//!
//! Ids `0..256` are raw bytes, followed by the five special tokens, followed
//! by one id per learned merge. Merge ties during training go to the pair
//! with the lowest ids.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const FORMAT_TAG: &str = "vulnhunter-bpe/1";
pub const BYTE_ALPHABET: usize = 256;
pub const SPECIAL_TOKENS: [&str; 5] = ["[CLS]", "[CLS_TYPE]", "[SEP]", "[PAD]", "[UNK]"];
pub const DEFAULT_MAX_SEQ_LEN: usize = 512;

pub const CLS: u32 = BYTE_ALPHABET as u32;
pub const CLS_TYPE: u32 = CLS + 1;
pub const SEP: u32 = CLS + 2;
pub const PAD: u32 = CLS + 3;
pub const UNK: u32 = CLS + 4;
const FIRST_MERGE_ID: u32 = CLS + SPECIAL_TOKENS.len() as u32;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("vocab_size {0} leaves no room for merges (minimum {min})", min = FIRST_MERGE_ID + 1)]
    VocabTooSmall(usize),
    #[error("no training texts")]
    NoTexts,
    #[error("unknown token id {0}")]
    UnknownId(u32),
    #[error("unsupported vocab format {0:?}")]
    Format(String),
    #[error("malformed vocab: {0}")]
    Malformed(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Which special tokens frame the content.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeqMode {
    /// `[CLS] [CLS_TYPE] … [SEP]` for the multi-task classifier.
    DualCls,
    /// `[CLS] … [SEP]` for the detector and the regressor.
    SingleCls,
}

impl SeqMode {
    pub fn prefix(self) -> &'static [u32] {
        match self {
            SeqMode::DualCls => &[CLS, CLS_TYPE],
            SeqMode::SingleCls => &[CLS],
        }
    }

    pub fn n_specials(self) -> usize {
        self.prefix().len() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// 1-based source line of each position, -1 for special tokens.
    pub line_of: Vec<i32>,
    pub mode: SeqMode,
    pub truncated: bool,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    format: String,
    vocab_size: usize,
    specials: Vec<(String, u32)>,
    merges: Vec<[u32; 2]>,
}

/// Trained BPE vocabulary. Immutable after training.
#[derive(Debug, Clone)]
pub struct Vocab {
    vocab_size: usize,
    merges: Vec<(u32, u32)>,
    /// Bytes of every non-special id, indexed by id.
    token_bytes: Vec<Vec<u8>>,
    ranks: HashMap<(u32, u32), u32>,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.vocab_size == other.vocab_size && self.merges == other.merges
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Newline,
    Space,
    Word,
    Punct,
}

fn class_of(b: u8) -> Class {
    match b {
        b'\n' | b'\r' => Class::Newline,
        b' ' | b'\t' | 0x0b | 0x0c => Class::Space,
        b'_' | b'0'..=b'9' | b'a'..=b'z' | b'A'..=b'Z' | 0x80..=0xff => Class::Word,
        _ => Class::Punct,
    }
}

/// Split into byte ranges: newline runs, whitespace runs, and word/punct runs
/// that absorb one preceding space.
fn pretokenize(bytes: &[u8]) -> Vec<(usize, usize)> {
    let run_end = |from: usize, class: Class| {
        let mut j = from;
        while j < bytes.len() && class_of(bytes[j]) == class {
            j += 1;
        }
        j
    };
    let mut chunks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let class = class_of(bytes[i]);
        if class != Class::Space {
            let end = run_end(i, class);
            chunks.push((i, end));
            i = end;
            continue;
        }
        let j = run_end(i, Class::Space);
        let next = bytes.get(j).map(|&b| class_of(b));
        if matches!(next, Some(Class::Word | Class::Punct)) && bytes[j - 1] == b' ' {
            if j - 1 > i {
                chunks.push((i, j - 1));
            }
            let end = run_end(j, next.unwrap());
            chunks.push((j - 1, end));
            i = end;
        } else {
            chunks.push((i, j));
            i = j;
        }
    }
    chunks
}

fn apply_merges(ranks: &HashMap<(u32, u32), u32>, symbols: &mut Vec<u32>) {
    while symbols.len() > 1 {
        let best = symbols
            .windows(2)
            .filter_map(|w| ranks.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1]))))
            .min();
        let Some((rank, pair)) = best else { break };
        let merged = FIRST_MERGE_ID + rank;
        let mut out = Vec::with_capacity(symbols.len());
        let mut k = 0;
        while k < symbols.len() {
            if k + 1 < symbols.len() && (symbols[k], symbols[k + 1]) == pair {
                out.push(merged);
                k += 2;
            } else {
                out.push(symbols[k]);
                k += 1;
            }
        }
        *symbols = out;
    }
}

impl Vocab {
    fn from_merges(vocab_size: usize, merges: Vec<(u32, u32)>) -> Result<Self, TokenizerError> {
        let mut token_bytes: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        token_bytes.extend(std::iter::repeat_n(Vec::new(), SPECIAL_TOKENS.len()));
        let mut ranks = HashMap::new();
        for (rank, &(a, b)) in merges.iter().enumerate() {
            let next = FIRST_MERGE_ID + rank as u32;
            for id in [a, b] {
                if (CLS..FIRST_MERGE_ID).contains(&id) || id >= next {
                    return Err(TokenizerError::Malformed(format!(
                        "merge {rank} references invalid id {id}"
                    )));
                }
            }
            let mut bytes = token_bytes[a as usize].clone();
            bytes.extend_from_slice(&token_bytes[b as usize]);
            token_bytes.push(bytes);
            ranks.insert((a, b), rank as u32);
        }
        Ok(Self {
            vocab_size,
            merges,
            token_bytes,
            ranks,
        })
    }

    /// Learn merges until the vocabulary reaches `vocab_size` or no adjacent
    /// pair is left.
    pub fn train<S: AsRef<str>>(texts: &[S], vocab_size: usize) -> Result<Self, TokenizerError> {
        if vocab_size <= FIRST_MERGE_ID as usize {
            return Err(TokenizerError::VocabTooSmall(vocab_size));
        }
        if texts.is_empty() {
            return Err(TokenizerError::NoTexts);
        }
        let mut freq: HashMap<&[u8], u64> = HashMap::new();
        for text in texts {
            let bytes = text.as_ref().as_bytes();
            for (s, e) in pretokenize(bytes) {
                *freq.entry(&bytes[s..e]).or_default() += 1;
            }
        }
        let mut words: Vec<(Vec<u32>, u64)> = freq
            .into_iter()
            .map(|(w, c)| (w.iter().map(|&b| b as u32).collect(), c))
            .collect();
        words.sort();

        let n_merges = vocab_size - FIRST_MERGE_ID as usize;
        let mut merges = Vec::with_capacity(n_merges);
        for rank in 0..n_merges {
            let mut pairs: HashMap<(u32, u32), u64> = HashMap::new();
            for (w, c) in &words {
                for p in w.windows(2) {
                    *pairs.entry((p[0], p[1])).or_default() += c;
                }
            }
            let Some((&pair, _)) = pairs.iter().max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0))) else {
                break;
            };
            let new_id = FIRST_MERGE_ID + rank as u32;
            for (w, _) in words.iter_mut() {
                if w.len() < 2 {
                    continue;
                }
                let mut out = Vec::with_capacity(w.len());
                let mut k = 0;
                while k < w.len() {
                    if k + 1 < w.len() && (w[k], w[k + 1]) == pair {
                        out.push(new_id);
                        k += 2;
                    } else {
                        out.push(w[k]);
                        k += 1;
                    }
                }
                *w = out;
            }
            merges.push(pair);
        }
        Self::from_merges(vocab_size, merges)
    }

    /// Configured vocabulary size (embedding rows of a model using it).
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Number of ids actually defined.
    pub fn len(&self) -> usize {
        self.token_bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn is_special(id: u32) -> bool {
        (CLS..FIRST_MERGE_ID).contains(&id)
    }

    pub fn special_name(id: u32) -> Option<&'static str> {
        Self::is_special(id).then(|| SPECIAL_TOKENS[(id - CLS) as usize])
    }

    /// Bytes of a non-special token.
    pub fn token(&self, id: u32) -> Option<&[u8]> {
        if Self::is_special(id) {
            return None;
        }
        self.token_bytes.get(id as usize).map(Vec::as_slice)
    }

    /// Token bytes → id for every non-special token.
    pub fn token_table(&self) -> HashMap<Vec<u8>, u32> {
        self.token_bytes
            .iter()
            .enumerate()
            .filter(|(id, _)| !Self::is_special(*id as u32))
            .map(|(id, b)| (b.clone(), id as u32))
            .collect()
    }

    /// Content tokens of `text` with the 1-based line of each token's first
    /// byte.
    pub fn tokenize(&self, text: &str) -> Vec<(u32, i32)> {
        let bytes = text.as_bytes();
        let mut out = Vec::new();
        let mut line = 1i32;
        let mut pos = 0usize;
        for (s, e) in pretokenize(bytes) {
            let mut symbols: Vec<u32> = bytes[s..e].iter().map(|&b| b as u32).collect();
            apply_merges(&self.ranks, &mut symbols);
            for id in symbols {
                out.push((id, line));
                let len = self.token_bytes[id as usize].len();
                line += bytes[pos..pos + len].iter().filter(|&&b| b == b'\n').count() as i32;
                pos += len;
            }
        }
        out
    }

    /// Frame `text` with the mode's special tokens, keeping at most
    /// `max_seq_len` positions. Truncation drops trailing content and keeps
    /// `[SEP]` last.
    pub fn encode(&self, text: &str, mode: SeqMode, max_seq_len: usize) -> TokenSequence {
        let content = self.tokenize(text);
        let capacity = max_seq_len.saturating_sub(mode.n_specials());
        let truncated = content.len() > capacity;
        let mut ids: Vec<u32> = mode.prefix().to_vec();
        let mut line_of: Vec<i32> = vec![-1; ids.len()];
        for &(id, line) in content.iter().take(capacity) {
            ids.push(id);
            line_of.push(line);
        }
        ids.push(SEP);
        line_of.push(-1);
        TokenSequence {
            ids,
            line_of,
            mode,
            truncated,
        }
    }

    /// Concatenate the bytes of all non-special ids.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut bytes = Vec::new();
        for &id in ids {
            if Self::is_special(id) {
                continue;
            }
            let tok = self.token_bytes.get(id as usize).ok_or(TokenizerError::UnknownId(id))?;
            bytes.extend_from_slice(tok);
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            format: FORMAT_TAG.to_string(),
            vocab_size: self.vocab_size,
            specials: SPECIAL_TOKENS
                .iter()
                .enumerate()
                .map(|(i, s)| (s.to_string(), CLS + i as u32))
                .collect(),
            merges: self.merges.iter().map(|&(a, b)| [a, b]).collect(),
        };
        serde_json::to_string(&file).expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TokenizerError> {
        let file: VocabFile = serde_json::from_str(text)?;
        if file.format != FORMAT_TAG {
            return Err(TokenizerError::Format(file.format));
        }
        for (i, (name, id)) in file.specials.iter().enumerate() {
            if SPECIAL_TOKENS.get(i) != Some(&name.as_str()) || *id != CLS + i as u32 {
                return Err(TokenizerError::Malformed(format!("special token {name}={id}")));
            }
        }
        let merges = file.merges.into_iter().map(|[a, b]| (a, b)).collect();
        Self::from_merges(file.vocab_size, merges)
    }

    /// SHA-256 of the serialized vocabulary; checkpoints refer to it.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
