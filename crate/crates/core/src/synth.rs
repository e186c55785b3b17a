//! A small synthetic agglutinative language: CV-syllable stems followed by
//! four suffix slots (number, case, possessor, definiteness).

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, InflectionExample, Lexicon, LexiconEntry, Pos};
use crate::error::{Error, Result};

const CONSONANTS: &[char] = &['p', 't', 'k', 'b', 'd', 'g', 'm', 'n', 's', 'l', 'r', 'v'];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];

/// `(tag, suffix)` choices per slot, in surface order. The first choice of
/// every slot is the citation value.
pub const SLOTS: [&[(&str, &str)]; 4] = [
    &[("SG", ""), ("PL", "ta")],
    &[("NOM", ""), ("ACC", "mi"), ("DAT", "ke"), ("LOC", "so"), ("ABL", "den")],
    &[("NPSS", ""), ("PSS1", "ru"), ("PSS2", "ni")],
    &[("INDF", ""), ("DEF", "la")],
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub unlabeled: usize,
    /// Stems used by the labeled splits.
    pub stems: usize,
    /// How many of `stems` appear only in dev and test; zero shares every
    /// stem across splits.
    pub heldout_stems: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train: 500,
            dev: 100,
            test: 100,
            unlabeled: 1000,
            stems: 150,
            heldout_stems: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthLanguage {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    /// Inflected forms of stems outside the labeled splits, with their
    /// morpheme segmentation.
    pub unlabeled: Lexicon,
}

/// Slot choice indices, one per slot.
pub type Combo = [usize; 4];

pub fn all_combos() -> Vec<Combo> {
    let mut out = Vec::new();
    for a in 0..SLOTS[0].len() {
        for b in 0..SLOTS[1].len() {
            for c in 0..SLOTS[2].len() {
                for d in 0..SLOTS[3].len() {
                    out.push([a, b, c, d]);
                }
            }
        }
    }
    out
}

pub fn tags(combo: Combo) -> Vec<String> {
    std::iter::once("N".to_string())
        .chain(combo.iter().zip(SLOTS).map(|(&i, slot)| slot[i].0.to_string()))
        .collect()
}

/// Stem followed by the non-empty suffixes of `combo`.
pub fn morphemes(stem: &str, combo: Combo) -> Vec<String> {
    std::iter::once(stem.to_string())
        .chain(
            combo
                .iter()
                .zip(SLOTS)
                .map(|(&i, slot)| slot[i].1)
                .filter(|s| !s.is_empty())
                .map(str::to_string),
        )
        .collect()
}

pub fn inflect(stem: &str, combo: Combo) -> String {
    morphemes(stem, combo).concat()
}

fn stem<R: Rng + ?Sized>(rng: &mut R) -> String {
    let syllables = rng.gen_range(2..=3);
    (0..syllables)
        .flat_map(|_| [*CONSONANTS.choose(rng).unwrap(), *VOWELS.choose(rng).unwrap()])
        .collect()
}

/// Distinct stems; any suffix-looking stem is allowed since the suffix
/// strings are themselves CV-shaped.
pub fn stems<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let s = stem(rng);
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    out
}

pub fn generate<R: Rng + ?Sized>(config: &SynthConfig, rng: &mut R) -> Result<SynthLanguage> {
    let combos = all_combos();
    let labeled = config.train + config.dev + config.test;
    let shared = config.stems.saturating_sub(config.heldout_stems);
    let capacity_ok = if config.heldout_stems == 0 {
        labeled <= config.stems * combos.len()
    } else {
        config.train <= shared * combos.len()
            && config.dev + config.test <= config.heldout_stems.min(config.stems) * combos.len()
    };
    if !capacity_ok {
        return Err(Error::Capacity(format!(
            "{labeled} labeled pairs requested from {} stems",
            config.stems
        )));
    }
    let unlabeled_stems = config.unlabeled.div_ceil(4).max(1);
    let all_stems = stems(config.stems + unlabeled_stems, rng);
    let (labeled_stems, other_stems) = all_stems.split_at(config.stems);

    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut order = Vec::with_capacity(labeled);
    while order.len() < labeled {
        let stem_range = match (config.heldout_stems, order.len() < config.train) {
            (0, _) => 0..config.stems,
            (_, true) => 0..shared,
            (_, false) => shared..config.stems,
        };
        let key = (rng.gen_range(stem_range), rng.gen_range(0..combos.len()));
        if pairs.insert(key) {
            order.push(key);
        }
    }
    let example = |&(s, c): &(usize, usize)| {
        let stem = &labeled_stems[s];
        InflectionExample::new(stem.clone(), tags(combos[c]), inflect(stem, combos[c]), Pos::Noun)
    };
    let split = |range: std::ops::Range<usize>| -> Result<Dataset> {
        Ok(Dataset::new(order[range].iter().map(example).collect::<Result<_>>()?))
    };
    let train = split(0..config.train)?;
    let dev = split(config.train..config.train + config.dev)?;
    let test = split(config.train + config.dev..labeled)?;

    let mut words = BTreeSet::new();
    let mut unlabeled = Vec::with_capacity(config.unlabeled);
    while unlabeled.len() < config.unlabeled {
        let stem = other_stems.choose(rng).unwrap();
        let combo = *combos.choose(rng).unwrap();
        let word = inflect(stem, combo);
        if words.insert(word.clone()) {
            unlabeled.push(LexiconEntry::segmented(word, morphemes(stem, combo))?.with_pos(Pos::Noun));
        }
    }
    Ok(SynthLanguage {
        train,
        dev,
        test,
        unlabeled: Lexicon::new(unlabeled),
    })
}
