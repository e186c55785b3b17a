use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{Alphabet, Dataset, Lexicon};

/// Default number of span sentinels.
pub const DEFAULT_SENTINELS: usize = 50;

/// Number of reserved ids that precede the sentinels.
pub const RESERVED_BASE: usize = 6;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Symbol {
    Pad,
    Bos,
    Eos,
    Unk,
    Mask,
    /// Stands in for the tag bundle on self-supervised instances.
    Task,
    /// Span sentinel; each masked span in one T5 source gets its own.
    Sentinel(u16),
    Tag(String),
    Char(char),
}

const RESERVED_SURFACE: [&str; 6] = ["<pad>", "<s>", "</s>", "<unk>", "@", "[TASK]"];

impl Symbol {
    pub fn is_reserved(&self) -> bool {
        !matches!(self, Symbol::Tag(_) | Symbol::Char(_))
    }

    /// Text form. Data symbols that could be read as a reserved symbol are
    /// escaped with a backslash, so rendering never loses information.
    pub fn surface(&self) -> String {
        match self {
            Symbol::Pad => RESERVED_SURFACE[0].into(),
            Symbol::Bos => RESERVED_SURFACE[1].into(),
            Symbol::Eos => RESERVED_SURFACE[2].into(),
            Symbol::Unk => RESERVED_SURFACE[3].into(),
            Symbol::Mask => RESERVED_SURFACE[4].into(),
            Symbol::Task => RESERVED_SURFACE[5].into(),
            Symbol::Sentinel(i) => format!("<X{i}>"),
            Symbol::Char(c) => escape_char(*c),
            Symbol::Tag(t) => {
                let collides = RESERVED_SURFACE.contains(&t.as_str())
                    || t.starts_with('\\')
                    || (t.starts_with("<X") && t.ends_with('>'));
                if collides {
                    format!("\\{t}")
                } else {
                    t.clone()
                }
            }
        }
    }
}

/// Escapes the characters that introduce reserved symbols in rendered sequences.
pub(crate) fn escape_char(c: char) -> String {
    match c {
        '@' | '<' | '[' | '\\' => format!("\\{c}"),
        c => c.to_string(),
    }
}

/// Dense bijection between symbols and integer ids.
///
/// Layout: `PAD BOS EOS UNK MASK TASK SENT_0 .. SENT_{K-1}`, then tags in
/// lexicographic order, then characters by code point.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    symbols: Vec<Symbol>,
    ids: HashMap<Symbol, u32>,
    sentinels: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    sentinels: usize,
    symbols: Vec<Symbol>,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        Vocabulary::from_symbols(r.symbols, r.sentinels)
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            sentinels: v.sentinels,
            symbols: v.symbols,
        }
    }
}

impl Vocabulary {
    pub fn build(dataset: &Dataset, lexicon: &Lexicon, sentinel_count: usize) -> Self {
        let tags = dataset.iter().flat_map(|ex| ex.tags().iter().cloned());
        let words = dataset
            .iter()
            .flat_map(|ex| [ex.lemma(), ex.target()])
            .chain(lexicon.words());
        Self::from_parts(tags, words.flat_map(str::chars), sentinel_count)
    }

    pub fn from_parts(
        tags: impl IntoIterator<Item = String>,
        chars: impl IntoIterator<Item = char>,
        sentinel_count: usize,
    ) -> Self {
        let tags: BTreeSet<String> = tags.into_iter().collect();
        let chars: BTreeSet<char> = chars.into_iter().collect();
        let mut symbols = vec![
            Symbol::Pad,
            Symbol::Bos,
            Symbol::Eos,
            Symbol::Unk,
            Symbol::Mask,
            Symbol::Task,
        ];
        symbols.extend((0..sentinel_count).map(|i| Symbol::Sentinel(i as u16)));
        symbols.extend(tags.into_iter().map(Symbol::Tag));
        symbols.extend(chars.into_iter().map(Symbol::Char));
        Self::from_symbols(symbols, sentinel_count)
    }

    fn from_symbols(symbols: Vec<Symbol>, sentinels: usize) -> Self {
        let ids = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Vocabulary {
            symbols,
            ids,
            sentinels,
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn sentinel_count(&self) -> usize {
        self.sentinels
    }

    pub fn id(&self, symbol: &Symbol) -> Option<u32> {
        self.ids.get(symbol).copied()
    }

    pub fn symbol(&self, id: u32) -> Option<&Symbol> {
        self.symbols.get(id as usize)
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub const PAD: u32 = 0;
    pub const BOS: u32 = 1;
    pub const EOS: u32 = 2;
    pub const UNK: u32 = 3;
    pub const MASK: u32 = 4;
    pub const TASK: u32 = 5;

    pub fn sentinel(&self, i: usize) -> Option<u32> {
        (i < self.sentinels).then(|| (RESERVED_BASE + i) as u32)
    }

    /// Character id, or `UNK` when the character is out of vocabulary.
    pub fn char_id(&self, c: char) -> u32 {
        self.id(&Symbol::Char(c)).unwrap_or(Self::UNK)
    }

    pub fn tag_id(&self, tag: &str) -> u32 {
        self.id(&Symbol::Tag(tag.to_string())).unwrap_or(Self::UNK)
    }

    pub fn alphabet(&self) -> Alphabet {
        self.symbols
            .iter()
            .filter_map(|s| match s {
                Symbol::Char(c) => Some(*c),
                _ => None,
            })
            .collect()
    }

    /// Concatenates the character ids back into a string. Non-character
    /// symbols are rendered by their surface form.
    pub fn decode_chars(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| match self.symbol(id) {
                Some(Symbol::Char(c)) => c.to_string(),
                Some(other) => other.surface(),
                None => Symbol::Unk.surface(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{InflectionExample, LexiconEntry, Pos};

    #[test]
    fn empty_corpora_reserved_only() {
        let v = Vocabulary::build(&Dataset::default(), &Lexicon::default(), 2);
        assert_eq!(v.len(), 8);
        assert_eq!(v.id(&Symbol::Sentinel(1)), Some(7));
        assert_eq!(v.sentinel(2), None);
    }

    #[test]
    fn ordering_reserved_tags_chars() {
        let d = Dataset::new(vec![InflectionExample::new("ab", vec!["PST".into()], "ab", Pos::Other).unwrap()]);
        let v = Vocabulary::build(&d, &Lexicon::default(), 2);
        assert_eq!(v.id(&Symbol::Tag("PST".into())), Some(8));
        assert_eq!(v.char_id('a'), 9);
        assert_eq!(v.char_id('b'), 10);
        assert_eq!(v.char_id('z'), Vocabulary::UNK);
    }

    #[test]
    fn deterministic_and_bijective() {
        let lex = Lexicon::new(
            ["zeta", "alpha", "ünï"]
                .iter()
                .map(|w| LexiconEntry::new(*w).unwrap())
                .collect(),
        );
        let a = Vocabulary::build(&Dataset::default(), &lex, DEFAULT_SENTINELS);
        let b = Vocabulary::build(&Dataset::default(), &lex, DEFAULT_SENTINELS);
        assert_eq!(a, b);
        for (i, s) in a.symbols().iter().enumerate() {
            assert_eq!(a.id(s), Some(i as u32));
        }
    }

    #[test]
    fn colliding_data_symbols_are_escaped_not_dropped() {
        let d = Dataset::new(vec![InflectionExample::new(
            "a@b",
            vec!["[TASK]".into(), "@".into()],
            "a@b",
            Pos::Other,
        )
        .unwrap()]);
        let v = Vocabulary::build(&d, &Lexicon::default(), 1);
        assert_eq!(v.len(), 7 + 2 + 3);
        let task_tag = v.id(&Symbol::Tag("[TASK]".into())).unwrap();
        assert_ne!(task_tag, Vocabulary::TASK);
        assert_eq!(v.symbol(task_tag).unwrap().surface(), "\\[TASK]");
        assert_eq!(Symbol::Char('@').surface(), "\\@");
        assert_eq!(Symbol::Mask.surface(), "@");
    }

    #[test]
    fn serde_round_trip() {
        let lex = Lexicon::new(vec![LexiconEntry::new("hello").unwrap()]);
        let v = Vocabulary::build(&Dataset::default(), &lex, 3);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.char_id('h'), v.char_id('h'));
    }
}
