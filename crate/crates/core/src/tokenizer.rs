//! Character-level Spanish text normalization and the fixed 37-symbol vocabulary.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Deref;

use sha2::{Digest, Sha256};
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::error::{Error, Result};

pub const VOCAB_SIZE: usize = 37;
pub const BLANK_ID: usize = 0;
pub const SPACE_ID: usize = 1;
pub const EOS_ID: usize = 36;

const BLANK_TOKEN: &str = "<blank>";
const SPACE_TOKEN: &str = "<space>";
const EOS_TOKEN: &str = "<eos>";

/// Ordered symbol inventory. Index 0 is the CTC blank, the last index is the end-of-sentence
/// marker, and every other entry is a single character.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    char_to_id: HashMap<char, usize>,
    blank_id: usize,
    space_id: usize,
    eos_id: usize,
}

impl Vocabulary {
    /// The canonical Spanish inventory: blank, space, a-z, á é í ó ú ü, ñ, apostrophe, eos.
    pub fn spanish() -> Self {
        let mut symbols = vec![BLANK_TOKEN.to_string(), SPACE_TOKEN.to_string()];
        symbols.extend(('a'..='z').map(String::from));
        symbols.extend(['á', 'é', 'í', 'ó', 'ú', 'ü', 'ñ', '\''].iter().map(|c| c.to_string()));
        symbols.push(EOS_TOKEN.to_string());
        Self::from_symbols(symbols).expect("canonical vocabulary is well formed")
    }

    /// Builds a vocabulary from one token per entry, using the `<blank>`, `<space>` and
    /// `<eos>` markers for the special symbols.
    pub fn from_symbols(symbols: Vec<String>) -> Result<Self> {
        if symbols.len() != VOCAB_SIZE {
            return Err(Error::invalid(format!(
                "vocabulary must have {VOCAB_SIZE} symbols, found {}",
                symbols.len()
            )));
        }
        let mut char_to_id = HashMap::new();
        let (mut blank_id, mut space_id, mut eos_id) = (None, None, None);
        for (id, sym) in symbols.iter().enumerate() {
            match sym.as_str() {
                BLANK_TOKEN => blank_id = Some(id),
                SPACE_TOKEN => {
                    space_id = Some(id);
                    char_to_id.insert(' ', id);
                }
                EOS_TOKEN => eos_id = Some(id),
                other => {
                    let mut chars = other.chars();
                    let ch = match (chars.next(), chars.next()) {
                        (Some(c), None) => c,
                        _ => {
                            return Err(Error::invalid(format!(
                                "symbol {other:?} at line {id} is not a single character"
                            )))
                        }
                    };
                    if char_to_id.insert(ch, id).is_some() {
                        return Err(Error::invalid(format!("duplicate symbol {other:?}")));
                    }
                }
            }
        }
        let (Some(blank_id), Some(space_id), Some(eos_id)) = (blank_id, space_id, eos_id) else {
            return Err(Error::invalid("vocabulary is missing <blank>, <space> or <eos>"));
        };
        if blank_id != BLANK_ID || eos_id != EOS_ID {
            return Err(Error::invalid(format!(
                "<blank> must be id {BLANK_ID} and <eos> id {EOS_ID}"
            )));
        }
        Ok(Self {
            symbols,
            char_to_id,
            blank_id,
            space_id,
            eos_id,
        })
    }

    /// Parses the one-symbol-per-line file format.
    pub fn from_text(text: &str) -> Result<Self> {
        let symbols = text
            .lines()
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        Self::from_symbols(symbols)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.symbols {
            out.push_str(s);
            out.push('\n');
        }
        out
    }

    /// Short content hash embedded in every artifact built against this vocabulary.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        let mut hex = String::with_capacity(16);
        for b in &digest[..8] {
            write!(hex, "{b:02x}").unwrap();
        }
        hex
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn blank_id(&self) -> usize {
        self.blank_id
    }

    pub fn space_id(&self) -> usize {
        self.space_id
    }

    pub fn eos_id(&self) -> usize {
        self.eos_id
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id_of(&self, ch: char) -> Option<usize> {
        self.char_to_id.get(&ch).copied()
    }

    pub fn contains(&self, ch: char) -> bool {
        self.char_to_id.contains_key(&ch)
    }

    pub fn encode(&self, text: &str) -> Result<TokenSeq> {
        text.chars()
            .enumerate()
            .map(|(position, ch)| {
                self.id_of(ch)
                    .ok_or(Error::OutOfVocabulary { ch, position })
            })
            .collect::<Result<Vec<_>>>()
            .map(TokenSeq)
    }

    /// Inverse of [`Vocabulary::encode`]. An eos id terminates the output.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::with_capacity(ids.len());
        for &id in ids {
            if id == self.eos_id {
                break;
            }
            if id == self.blank_id {
                return Err(Error::BlankInLabels(id));
            }
            if id >= self.symbols.len() {
                return Err(Error::InvalidToken {
                    id,
                    size: self.symbols.len(),
                });
            }
            if id == self.space_id {
                out.push(' ');
            } else {
                out.push_str(&self.symbols[id]);
            }
        }
        Ok(out)
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::spanish()
    }
}

/// A label sequence: vocabulary ids without blanks.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct TokenSeq(pub Vec<usize>);

impl TokenSeq {
    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }
}

impl Deref for TokenSeq {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for TokenSeq {
    fn from(ids: Vec<usize>) -> Self {
        TokenSeq(ids)
    }
}

fn is_punctuation(ch: char) -> bool {
    matches!(
        get_general_category(ch),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    ) || ch == '¡'
        || ch == '¿'
}

fn strip_accent(ch: char) -> char {
    match ch {
        'á' => 'a',
        'é' => 'e',
        'í' => 'i',
        'ó' => 'o',
        'ú' | 'ü' => 'u',
        other => other,
    }
}

/// Lowercases, removes punctuation, collapses whitespace and optionally strips the acute
/// accents and diaeresis (never the tilde of `ñ`).
pub fn normalize_text(raw: &str, strip_accents: bool) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for ch in raw.chars().flat_map(char::to_lowercase) {
        if is_punctuation(ch) {
            continue;
        }
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        out.push(if strip_accents { strip_accent(ch) } else { ch });
    }
    out
}

/// Normalized text together with the characters the vocabulary cannot represent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Normalized {
    pub text: String,
    /// (character position in `text`, character)
    pub rejected: Vec<(usize, char)>,
}

impl Normalized {
    pub fn is_clean(&self) -> bool {
        self.rejected.is_empty()
    }
}

pub fn normalize_for(vocab: &Vocabulary, raw: &str, strip_accents: bool) -> Normalized {
    let text = normalize_text(raw, strip_accents);
    let rejected = text
        .chars()
        .enumerate()
        .filter(|(_, c)| !vocab.contains(*c))
        .collect();
    Normalized { text, rejected }
}
