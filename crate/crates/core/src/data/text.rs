//! Script-agnostic tokenizer and vocabulary.
//!
//! Whitespace separates tokens; every punctuation or symbol character is its
//! own token; every CJK ideograph or kana is its own token. Offsets are
//! half-open character (code point) ranges into the input, matching SQuAD's
//! `answer_start` convention.

use std::collections::HashMap;
use std::path::Path;

use unicode_general_category::{get_general_category, GeneralCategory as Gc};

use crate::error::{Error, Result};

/// Half-open character range `[start, end)`.
pub type CharSpan = (usize, usize);

pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // hiragana, katakana
        | 0x3400..=0x4DBF    // CJK extension A
        | 0x4E00..=0x9FFF    // CJK unified ideographs
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0x20000..=0x2FA1F) // supplementary ideographs
}

/// Unicode punctuation and symbol categories.
pub fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        Gc::ConnectorPunctuation
            | Gc::DashPunctuation
            | Gc::OpenPunctuation
            | Gc::ClosePunctuation
            | Gc::InitialPunctuation
            | Gc::FinalPunctuation
            | Gc::OtherPunctuation
            | Gc::MathSymbol
            | Gc::CurrencySymbol
            | Gc::ModifierSymbol
            | Gc::OtherSymbol
    )
}

/// Splits `text` into token character spans.
pub fn split_spans(text: &str) -> Vec<CharSpan> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                spans.push((s, i));
            }
        } else if is_cjk(c) || is_punctuation(c) {
            if let Some(s) = start.take() {
                spans.push((s, i));
            }
            spans.push((i, i + 1));
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        spans.push((s, text.chars().count()));
    }
    spans
}

/// Substring by character range.
pub fn char_slice(text: &str, span: CharSpan) -> &str {
    let (start, end) = span;
    let mut indices = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let b0 = indices.nth(start).unwrap_or(text.len());
    let b1 = if end > start {
        indices.nth(end - start - 1).unwrap_or(text.len())
    } else {
        b0
    };
    &text[b0..b1]
}

/// Token surface strings of `text`.
pub fn split_words(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    split_spans(text)
        .into_iter()
        .map(|(s, e)| chars[s..e].iter().collect())
        .collect()
}

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SEP: usize = 2;
pub const MASK: usize = 3;
pub const NUM_RESERVED: usize = 4;
pub const RESERVED_SYMBOLS: [&str; NUM_RESERVED] = ["[PAD]", "[UNK]", "[SEP]", "[MASK]"];

/// Symbol table with four reserved ids: `[PAD]`=0, `[UNK]`=1, `[SEP]`=2,
/// `[MASK]`=3. Lookups are case-folded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds from `texts`, keeping the `max_size - 4` most frequent symbols
    /// (ties broken lexicographically).
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Result<Self> {
        if max_size <= NUM_RESERVED {
            return Err(Error::Config(format!("vocab size {max_size} leaves no room past reserved ids")));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in texts {
            for w in split_words(t) {
                *counts.entry(w.to_lowercase()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !RESERVED_SYMBOLS.contains(&w.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - NUM_RESERVED);
        let symbols = RESERVED_SYMBOLS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(w, _)| w))
            .collect();
        Ok(Self::from_symbols(symbols))
    }

    fn from_symbols(symbols: Vec<String>) -> Self {
        let index = symbols.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Vocab { symbols, index }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> usize {
        self.index.get(&symbol.to_lowercase()).copied().unwrap_or(UNK)
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn is_reserved(id: usize) -> bool {
        id < NUM_RESERVED
    }

    /// One symbol per line, line number = id.
    pub fn to_text(&self) -> String {
        let mut s = self.symbols.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let symbols: Vec<String> = text.lines().map(String::from).collect();
        if symbols.len() < NUM_RESERVED || symbols[..NUM_RESERVED] != RESERVED_SYMBOLS {
            return Err(Error::Format("vocab file must start with the four reserved symbols".into()));
        }
        let v = Self::from_symbols(symbols);
        if v.index.len() != v.symbols.len() {
            return Err(Error::Format("vocab file repeats a symbol".into()));
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Token ids and character offsets of `text`.
pub fn tokenize(text: &str, vocab: &Vocab) -> (Vec<usize>, Vec<CharSpan>) {
    let chars: Vec<char> = text.chars().collect();
    let spans = split_spans(text);
    let ids = spans
        .iter()
        .map(|&(s, e)| vocab.id(&chars[s..e].iter().collect::<String>()))
        .collect();
    (ids, spans)
}
