use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{Dataset, Lexicon};

/// Size and diversity figures for a supervised set plus its unlabeled words.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub samples: usize,
    /// Unique word forms over lemmas, targets and lexicon words.
    pub types: usize,
    /// Lower median of character lengths over every form occurrence.
    pub median_len: usize,
    /// Unique character bigrams plus unique character trigrams over the types.
    pub ngrams: usize,
}

impl StatsRecord {
    pub const TSV_HEADER: &'static str = "samples\ttypes\tmed_len\tngrams";

    pub fn to_tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}",
            self.samples, self.types, self.median_len, self.ngrams
        )
    }
}

pub fn corpus_stats(dataset: &Dataset, lexicon: &Lexicon) -> StatsRecord {
    let forms: Vec<&str> = dataset
        .iter()
        .flat_map(|ex| [ex.lemma(), ex.target()])
        .chain(lexicon.words())
        .collect();
    if forms.is_empty() {
        return StatsRecord::default();
    }

    let mut lengths: Vec<usize> = forms.iter().map(|f| f.chars().count()).collect();
    lengths.sort_unstable();
    let median_len = lengths[(lengths.len() - 1) / 2];

    let types: HashSet<&str> = forms.iter().copied().collect();
    let mut bigrams: HashSet<&[char]> = HashSet::new();
    let mut trigrams: HashSet<&[char]> = HashSet::new();
    let chars: Vec<Vec<char>> = types.iter().map(|t| t.chars().collect()).collect();
    for word in &chars {
        bigrams.extend(word.windows(2));
        trigrams.extend(word.windows(3));
    }

    StatsRecord {
        samples: dataset.len() + lexicon.len(),
        types: types.len(),
        median_len,
        ngrams: bigrams.len() + trigrams.len(),
    }
}
