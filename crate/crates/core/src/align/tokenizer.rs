//! BERT-style tokenization: one token per CJK character or punctuation mark,
//! greedy longest-match WordPiece for other runs, with code-point spans.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AlignError, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

const MAX_CHARS_PER_WORD: usize = 100;

/// Encoder input for one sentence. Delimiter tokens have `special_mask`
/// set and a `(0, 0)` span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub ids: Vec<u32>,
    pub char_spans: Vec<(usize, usize)>,
    pub special_mask: Vec<bool>,
    /// Character offset where the text was cut to fit the length limit.
    pub truncated_at: Option<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Indices of the non-special tokens.
    pub fn content(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| !self.special_mask[i])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct WordPieceVocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl From<Vec<String>> for WordPieceVocab {
    fn from(tokens: Vec<String>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        WordPieceVocab { tokens, ids }
    }
}

impl From<WordPieceVocab> for Vec<String> {
    fn from(v: WordPieceVocab) -> Self {
        v.tokens
    }
}

impl WordPieceVocab {
    /// Reads a `vocab.txt` (one token per line, id = line number).
    pub fn from_file(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| AlignError::Vocab(format!("{}: {e}", path.display())))?;
        let vocab = WordPieceVocab::from(content.lines().map(str::to_string).collect::<Vec<_>>());
        vocab.check_specials()?;
        Ok(vocab)
    }

    /// Character-level vocabulary for the stand-in encoder: every character
    /// seen in `texts` (lowercased), plus `##` continuations for characters
    /// inside non-CJK word runs.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut pieces = BTreeSet::new();
        for text in texts {
            for piece in basic_split(text) {
                match piece {
                    Piece::Single(_, c) => {
                        pieces.insert(c.to_string());
                    }
                    Piece::Word(_, chars) => {
                        for (k, c) in chars.iter().enumerate() {
                            pieces.insert(if k == 0 { c.to_string() } else { format!("##{c}") });
                        }
                    }
                }
            }
        }
        let mut tokens: Vec<String> = [PAD, UNK, CLS, SEP].iter().map(|s| s.to_string()).collect();
        tokens.extend(pieces);
        WordPieceVocab::from(tokens)
    }

    fn check_specials(&self) -> Result<()> {
        for special in [PAD, UNK, CLS, SEP] {
            if !self.ids.contains_key(special) {
                return Err(AlignError::Vocab(format!("vocabulary lacks {special}")));
            }
        }
        Ok(())
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub vocab: WordPieceVocab,
    /// Maximum sequence length including both delimiters.
    pub max_len: usize,
}

impl Tokenizer {
    pub fn new(vocab: WordPieceVocab, max_len: usize) -> Result<Self> {
        vocab.check_specials()?;
        if max_len < 3 {
            return Err(AlignError::Vocab(format!("max_len {max_len} leaves no room for content")));
        }
        Ok(Tokenizer { vocab, max_len })
    }

    fn special(&self, token: &str) -> u32 {
        self.vocab.id(token).expect("specials checked at construction")
    }

    pub fn pad_id(&self) -> u32 {
        self.special(PAD)
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        if text.is_empty() {
            return Err(AlignError::EmptyText);
        }
        let mut content: Vec<(String, u32, (usize, usize))> = Vec::new();
        for piece in basic_split(text) {
            match piece {
                Piece::Single(at, c) => {
                    let s = c.to_string();
                    let id = self.vocab.id(&s).unwrap_or_else(|| self.special(UNK));
                    let tok = if id == self.special(UNK) { UNK.to_string() } else { s };
                    content.push((tok, id, (at, at + 1)));
                }
                Piece::Word(at, chars) => self.wordpiece(at, &chars, &mut content),
            }
        }
        let budget = self.max_len - 2;
        let truncated_at = if content.len() > budget {
            let cut = content[budget].2 .0;
            log::warn!(
                "sentence of {} tokens truncated to {budget} at character {cut}",
                content.len()
            );
            content.truncate(budget);
            Some(cut)
        } else {
            None
        };
        let mut seq = TokenSequence {
            tokens: vec![CLS.to_string()],
            ids: vec![self.special(CLS)],
            char_spans: vec![(0, 0)],
            special_mask: vec![true],
            truncated_at,
        };
        for (tok, id, span) in content {
            seq.tokens.push(tok);
            seq.ids.push(id);
            seq.char_spans.push(span);
            seq.special_mask.push(false);
        }
        seq.tokens.push(SEP.to_string());
        seq.ids.push(self.special(SEP));
        seq.char_spans.push((0, 0));
        seq.special_mask.push(true);
        Ok(seq)
    }

    fn wordpiece(&self, at: usize, chars: &[char], out: &mut Vec<(String, u32, (usize, usize))>) {
        let unk = || (UNK.to_string(), self.special(UNK), (at, at + chars.len()));
        if chars.len() > MAX_CHARS_PER_WORD {
            out.push(unk());
            return;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let mut candidate: String = chars[start..end].iter().collect();
                if start > 0 {
                    candidate.insert_str(0, "##");
                }
                if let Some(id) = self.vocab.id(&candidate) {
                    found = Some((candidate, id));
                    break;
                }
                end -= 1;
            }
            let Some((piece, id)) = found else {
                out.push(unk());
                return;
            };
            pieces.push((piece, id, (at + start, at + end)));
            start = end;
        }
        out.extend(pieces);
    }
}

enum Piece {
    Single(usize, char),
    Word(usize, Vec<char>),
}

fn lower(c: char) -> char {
    let mut it = c.to_lowercase();
    match (it.next(), it.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF
        | 0x3400..=0x4DBF
        | 0x20000..=0x2A6DF
        | 0x2A700..=0x2B73F
        | 0x2B740..=0x2B81F
        | 0x2B820..=0x2CEAF
        | 0xF900..=0xFAFF
        | 0x2F800..=0x2FA1F)
}

pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c as u32,
            0x2000..=0x206F
            | 0x3000..=0x303F
            | 0xFF01..=0xFF0F
            | 0xFF1A..=0xFF20
            | 0xFF3B..=0xFF40
            | 0xFF5B..=0xFF65
            | 0x00A1..=0x00BF)
}

/// Splits into single-character pieces (CJK, punctuation) and word runs,
/// dropping whitespace and control characters. Offsets are code points.
fn basic_split(text: &str) -> Vec<Piece> {
    let mut out = Vec::new();
    let mut word: Option<(usize, Vec<char>)> = None;
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() || c.is_control() {
            out.extend(word.take().map(|(at, w)| Piece::Word(at, w)));
        } else if is_cjk(c) || is_punctuation(c) {
            out.extend(word.take().map(|(at, w)| Piece::Word(at, w)));
            out.push(Piece::Single(i, lower(c)));
        } else {
            word.get_or_insert_with(|| (i, Vec::new())).1.push(lower(c));
        }
    }
    out.extend(word.map(|(at, w)| Piece::Word(at, w)));
    out
}
