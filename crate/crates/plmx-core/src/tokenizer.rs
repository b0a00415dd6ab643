//! Corpus-driven vocabulary and text ↔ id-sequence conversion.
//!
//! Tokenization is character-level by default: the target corpora mix
//! scripts and romanization freely, so characters keep the out-of-vocab
//! rate manageable without a trained subword model. A whitespace word-level
//! mode is available behind a flag. Unicode is handled at the level of
//! scalar values (code points), not bytes or grapheme clusters.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SEP: usize = 2;
pub const CLS: usize = 3;

/// Number of reserved special ids (PAD, UNK, SEP, CLS).
pub const NUM_SPECIALS: usize = 4;

/// Tokenization granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenMode {
    Char,
    Word,
}

impl TokenMode {
    pub fn name(self) -> &'static str {
        match self {
            TokenMode::Char => "char",
            TokenMode::Word => "word",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "char" => Ok(TokenMode::Char),
            "word" => Ok(TokenMode::Word),
            other => Err(Error::Parse(format!("unknown token mode {other:?}"))),
        }
    }
}

/// Immutable token ↔ id mapping. Ids are dense: 0..3 are the specials,
/// corpus tokens start at 4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: BTreeMap<String, usize>,
    id_to_token: Vec<String>,
    mode: TokenMode,
}

fn split_tokens(text: &str, mode: TokenMode) -> Vec<String> {
    match mode {
        TokenMode::Char => text.chars().map(|c| c.to_string()).collect(),
        TokenMode::Word => text.split_whitespace().map(|w| w.to_string()).collect(),
    }
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>, mode: TokenMode) -> Result<Self> {
        let mut token_to_id = BTreeMap::new();
        for (i, tok) in tokens.iter().enumerate() {
            if token_to_id.insert(tok.clone(), NUM_SPECIALS + i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Vocab { token_to_id, id_to_token: tokens, mode })
    }

    pub fn mode(&self) -> TokenMode {
        self.mode
    }

    /// Total id count including the four specials.
    pub fn size(&self) -> usize {
        NUM_SPECIALS + self.id_to_token.len()
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token_of(&self, id: usize) -> Option<&str> {
        id.checked_sub(NUM_SPECIALS)
            .and_then(|i| self.id_to_token.get(i))
            .map(String::as_str)
    }

    /// Renders the vocab file: one escaped token per line, line number =
    /// id - 4, LF endings. Specials are implicit.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for tok in &self.id_to_token {
            out.push_str(&escape_token(tok));
            out.push('\n');
        }
        out
    }

    /// Parses the vocab file format produced by [`Vocab::to_file_string`].
    pub fn from_file_str(content: &str, mode: TokenMode) -> Result<Self> {
        let mut tokens = Vec::new();
        for (lineno, line) in content.lines().enumerate() {
            let tok = unescape_token(line)
                .map_err(|e| Error::Parse(format!("vocab line {}: {e}", lineno + 1)))?;
            tokens.push(tok);
        }
        Vocab::from_tokens(tokens, mode)
    }

    /// FNV-1a hash of the rendered vocabulary plus the token mode; stored in
    /// model files so a model is never run against the wrong vocab.
    pub fn hash64(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(self.mode.name().as_bytes());
        eat(b"\0");
        eat(self.to_file_string().as_bytes());
        h
    }
}

fn escape_token(tok: &str) -> String {
    let mut out = String::with_capacity(tok.len());
    for c in tok.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            _ => out.push(c),
        }
    }
    out
}

fn unescape_token(line: &str) -> core::result::Result<String, String> {
    let mut out = String::with_capacity(line.len());
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('t') => out.push('\t'),
            Some(other) => return Err(format!("unknown escape \\{other}")),
            None => return Err("dangling backslash".to_string()),
        }
    }
    Ok(out)
}

/// Builds a vocabulary from a corpus: tokens ranked by frequency
/// (descending) with first-occurrence order breaking ties, tokens seen
/// fewer than `min_freq` times excluded, at most `max_size - 4` kept.
pub fn build_vocab(
    corpus: &[String],
    max_size: usize,
    min_freq: usize,
    mode: TokenMode,
) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::Data("build_vocab: empty corpus".into()));
    }
    if max_size < NUM_SPECIALS + 1 {
        return Err(Error::Parameter(format!(
            "build_vocab: max_size must be ≥ {}, got {max_size}",
            NUM_SPECIALS + 1
        )));
    }
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new(); // (count, first occurrence)
    let mut position = 0usize;
    for text in corpus {
        for tok in split_tokens(text, mode) {
            let entry = counts.entry(tok).or_insert((0, position));
            entry.0 += 1;
            position += 1;
        }
    }
    let mut ranked: Vec<(String, usize, usize)> = counts
        .into_iter()
        .filter(|(_, (count, _))| *count >= min_freq.max(1))
        .map(|(tok, (count, first))| (tok, count, first))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    ranked.truncate(max_size - NUM_SPECIALS);
    Vocab::from_tokens(ranked.into_iter().map(|(tok, _, _)| tok).collect(), mode)
}

/// A single text converted to ids, always ending with SEP then CLS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub ids: Vec<usize>,
    /// Unpadded length (equals `ids.len()` until padding).
    pub length: usize,
    /// True for real tokens, false for PAD (all true until padding).
    pub attention_pad_mask: Vec<bool>,
}

/// Converts text to ids: tokens map through the vocab (UNK when absent),
/// the sequence is truncated to `max_len - 2`, and SEP, CLS are appended.
pub fn encode(text: &str, vocab: &Vocab, max_len: usize) -> Result<Encoded> {
    if max_len < 3 {
        return Err(Error::Parameter(format!(
            "encode: max_len must be ≥ 3 to fit a token plus SEP and CLS, got {max_len}"
        )));
    }
    let mut ids: Vec<usize> = split_tokens(text, vocab.mode())
        .into_iter()
        .map(|tok| vocab.id_of(&tok).unwrap_or(UNK))
        .take(max_len - 2)
        .collect();
    ids.push(SEP);
    ids.push(CLS);
    let length = ids.len();
    Ok(Encoded { ids, length, attention_pad_mask: alloc::vec![true; length] })
}

/// Maps ids back to text, dropping all special ids.
pub fn decode(ids: &[usize], vocab: &Vocab) -> Result<String> {
    let mut out = String::new();
    let mut first_word = true;
    for &id in ids {
        if id >= vocab.size() {
            return Err(Error::Index(format!(
                "decode: id {id} out of range for vocab of size {}",
                vocab.size()
            )));
        }
        if id < NUM_SPECIALS {
            continue;
        }
        let tok = vocab.token_of(id).expect("id in range");
        match vocab.mode() {
            TokenMode::Char => out.push_str(tok),
            TokenMode::Word => {
                if !first_word {
                    out.push(' ');
                }
                out.push_str(tok);
                first_word = false;
            }
        }
    }
    Ok(out)
}

/// A rectangular batch of id rows plus the matching real-token mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaddedBatch {
    pub ids: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
    pub width: usize,
}

/// Right-pads every row with PAD to the longest row in the batch.
pub fn pad_batch(batch: &[Encoded]) -> Result<PaddedBatch> {
    if batch.is_empty() {
        return Err(Error::Data("pad_batch: empty batch".into()));
    }
    let width = batch.iter().map(|e| e.ids.len()).max().unwrap();
    let mut ids = Vec::with_capacity(batch.len());
    let mut mask = Vec::with_capacity(batch.len());
    for enc in batch {
        let mut row = enc.ids.clone();
        let mut mrow = alloc::vec![true; row.len()];
        row.resize(width, PAD);
        mrow.resize(width, false);
        ids.push(row);
        mask.push(mrow);
    }
    Ok(PaddedBatch { ids, mask, width })
}

/// Encodes a whole corpus in order.
pub fn encode_corpus(corpus: &[String], vocab: &Vocab, max_len: usize) -> Result<Vec<Encoded>> {
    corpus.iter().map(|t| encode(t, vocab, max_len)).collect()
}

/// Shuffled 0..n index vector, deterministic for a fixed RNG state.
pub fn shuffled_indices(n: usize, rng: &mut SplitMix64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    idx
}
