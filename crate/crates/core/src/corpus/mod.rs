//! Supervised and unlabeled word data: types, file formats, subsampling,
//! corpus statistics and symbol vocabularies.

mod io;
mod sample;
mod stats;
mod vocab;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    load_lexicon, load_segmented, load_supervised, parse_lexicon, parse_segmented,
    parse_supervised, write_lexicon, write_segmented, write_supervised,
};
pub use sample::{sample_lexicon, sample_supervised, LexiconSampling};
pub use stats::{corpus_stats, StatsRecord};
pub use vocab::{Symbol, Vocabulary, DEFAULT_SENTINELS, RESERVED_BASE};

/// Coarse part of speech used for per-POS sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pos {
    Noun,
    Verb,
    Adj,
    Other,
}

impl Pos {
    /// Parses a UD (`NOUN`) or UniMorph (`N`) label. Anything unrecognised is `Other`.
    pub fn parse(label: &str) -> Pos {
        match label.trim().to_ascii_uppercase().as_str() {
            "N" | "NOUN" => Pos::Noun,
            "V" | "VERB" => Pos::Verb,
            "ADJ" => Pos::Adj,
            _ => Pos::Other,
        }
    }

    /// First tag in the bundle that names a part of speech.
    pub fn from_tags<S: AsRef<str>>(tags: &[S]) -> Pos {
        tags.iter()
            .map(|t| Pos::parse(t.as_ref()))
            .find(|p| *p != Pos::Other)
            .unwrap_or(Pos::Other)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Pos::Noun => "N",
            Pos::Verb => "V",
            Pos::Adj => "ADJ",
            Pos::Other => "OTHER",
        }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered character inventory of a language.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    symbols: Vec<char>,
}

impl Alphabet {
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        words.into_iter().flat_map(str::chars).collect()
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn contains(&self, c: char) -> bool {
        self.index_of(c).is_some()
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.symbols.binary_search(&c).ok()
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

impl FromIterator<char> for Alphabet {
    fn from_iter<I: IntoIterator<Item = char>>(iter: I) -> Self {
        let set: BTreeSet<char> = iter.into_iter().collect();
        Alphabet {
            symbols: set.into_iter().collect(),
        }
    }
}

/// Identifies the rows of one paradigm. Inflection files carry no explicit
/// paradigm key, so rows sharing lemma and POS are grouped together.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParadigmId {
    pub lemma: String,
    pub pos: Pos,
}

/// A supervised triple: lemma, tag bundle and inflected target.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InflectionExample {
    lemma: String,
    tags: Vec<String>,
    target: String,
    pos: Pos,
}

impl InflectionExample {
    pub fn new(
        lemma: impl Into<String>,
        tags: Vec<String>,
        target: impl Into<String>,
        pos: Pos,
    ) -> Result<Self> {
        let lemma = lemma.into();
        let target = target.into();
        if lemma.is_empty() {
            return Err(Error::Config("empty lemma".into()));
        }
        if target.is_empty() {
            return Err(Error::Config(format!("empty target for lemma {lemma:?}")));
        }
        if tags.is_empty() || tags.iter().any(String::is_empty) {
            return Err(Error::Config(format!("empty tag in bundle for lemma {lemma:?}")));
        }
        Ok(InflectionExample {
            lemma,
            tags,
            target,
            pos,
        })
    }

    pub fn lemma(&self) -> &str {
        &self.lemma
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    /// Tag bundle in file form (`V;PST`).
    pub fn tag_bundle(&self) -> String {
        self.tags.join(";")
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn pos(&self) -> Pos {
        self.pos
    }

    pub fn paradigm_id(&self) -> ParadigmId {
        ParadigmId {
            lemma: self.lemma.clone(),
            pos: self.pos,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    examples: Vec<InflectionExample>,
}

impl Dataset {
    pub fn new(examples: Vec<InflectionExample>) -> Self {
        Dataset { examples }
    }

    pub fn examples(&self) -> &[InflectionExample] {
        &self.examples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, InflectionExample> {
        self.examples.iter()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

impl From<Vec<InflectionExample>> for Dataset {
    fn from(examples: Vec<InflectionExample>) -> Self {
        Dataset { examples }
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a InflectionExample;
    type IntoIter = std::slice::Iter<'a, InflectionExample>;

    fn into_iter(self) -> Self::IntoIter {
        self.examples.iter()
    }
}

/// An unlabeled word, optionally with oracle morph boundaries.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LexiconEntry {
    word: String,
    segments: Option<Vec<String>>,
    pos: Option<Pos>,
}

impl LexiconEntry {
    pub fn new(word: impl Into<String>) -> Result<Self> {
        let word = word.into();
        if word.is_empty() {
            return Err(Error::Config("empty lexicon word".into()));
        }
        Ok(LexiconEntry {
            word,
            segments: None,
            pos: None,
        })
    }

    /// Builds a segmented entry. The segments must be non-empty and spell the word exactly.
    pub fn segmented(word: impl Into<String>, segments: Vec<String>) -> Result<Self> {
        let word = word.into();
        if word.is_empty() {
            return Err(Error::Config("empty lexicon word".into()));
        }
        if segments.is_empty() || segments.iter().any(String::is_empty) {
            return Err(Error::Segmentation(format!("{word:?} has an empty segment")));
        }
        let joined: String = segments.concat();
        if joined != word {
            return Err(Error::Segmentation(format!(
                "segments {:?} spell {joined:?}, not {word:?}",
                segments.join("-")
            )));
        }
        Ok(LexiconEntry {
            word,
            segments: Some(segments),
            pos: None,
        })
    }

    pub fn with_pos(mut self, pos: Pos) -> Self {
        self.pos = Some(pos);
        self
    }

    pub fn word(&self) -> &str {
        &self.word
    }

    pub fn segments(&self) -> Option<&[String]> {
        self.segments.as_deref()
    }

    pub fn pos(&self) -> Option<Pos> {
        self.pos
    }

    pub fn char_len(&self) -> usize {
        self.word.chars().count()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    entries: Vec<LexiconEntry>,
}

impl Lexicon {
    pub fn new(entries: Vec<LexiconEntry>) -> Self {
        Lexicon { entries }
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LexiconEntry> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(LexiconEntry::word)
    }
}

impl From<Vec<LexiconEntry>> for Lexicon {
    fn from(entries: Vec<LexiconEntry>) -> Self {
        Lexicon { entries }
    }
}

impl<'a> IntoIterator for &'a Lexicon {
    type Item = &'a LexiconEntry;
    type IntoIter = std::slice::Iter<'a, LexiconEntry>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}
