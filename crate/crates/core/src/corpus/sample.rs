use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::{Dataset, Lexicon, LexiconEntry, ParadigmId, Pos};
use crate::error::{Error, Result};

/// Parts of speech that supervised sampling draws from, in output order.
const SAMPLED_POS: [Pos; 3] = [Pos::Noun, Pos::Verb, Pos::Adj];

/// Draws up to `per_pos` examples for each of noun, verb and adjective.
///
/// Paradigms are visited in shuffled order and taken whole, in file order,
/// until the quota is met; the last paradigm is truncated if it overshoots.
/// Rows with any other part of speech are not sampled.
pub fn sample_supervised<R: Rng + ?Sized>(full: &Dataset, per_pos: usize, rng: &mut R) -> Dataset {
    let mut out = Vec::new();
    for pos in SAMPLED_POS {
        let mut order: Vec<ParadigmId> = Vec::new();
        let mut rows: HashMap<ParadigmId, Vec<usize>> = HashMap::new();
        for (i, ex) in full.iter().enumerate().filter(|(_, ex)| ex.pos() == pos) {
            let id = ex.paradigm_id();
            rows.entry(id.clone())
                .or_insert_with(|| {
                    order.push(id);
                    Vec::new()
                })
                .push(i);
        }
        if order.is_empty() {
            continue;
        }
        order.shuffle(rng);
        let mut taken = 0;
        'paradigms: for id in &order {
            for &i in &rows[id] {
                if taken == per_pos {
                    break 'paradigms;
                }
                out.push(full.examples()[i].clone());
                taken += 1;
            }
        }
    }
    Dataset::new(out)
}

/// Options for [`sample_lexicon`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LexiconSampling {
    pub size: usize,
    pub with_replacement: bool,
    /// Keep only entries whose POS is in the set; untagged entries are dropped.
    pub pos_filter: Option<BTreeSet<Pos>>,
    /// Without replacement, return the whole pool instead of failing when it
    /// holds fewer than `size` types.
    pub allow_short: bool,
}

impl LexiconSampling {
    pub fn new(size: usize) -> Self {
        LexiconSampling {
            size,
            with_replacement: false,
            pos_filter: None,
            allow_short: true,
        }
    }
}

/// Uniformly samples word types from `pool`.
///
/// Duplicated words in the pool count once. Without replacement the result
/// never repeats a word; with replacement it may.
pub fn sample_lexicon<R: Rng + ?Sized>(
    pool: &Lexicon,
    opts: &LexiconSampling,
    rng: &mut R,
) -> Result<Lexicon> {
    let mut seen = HashSet::new();
    let types: Vec<&LexiconEntry> = pool
        .iter()
        .filter(|e| match &opts.pos_filter {
            Some(filter) => e.pos().is_some_and(|p| filter.contains(&p)),
            None => true,
        })
        .filter(|e| seen.insert(e.word()))
        .collect();

    let picked: Vec<LexiconEntry> = if opts.with_replacement {
        if types.is_empty() && opts.size > 0 {
            return Err(Error::Capacity(format!(
                "cannot draw {} words from an empty pool",
                opts.size
            )));
        }
        (0..opts.size)
            .map(|_| types[rng.gen_range(0..types.len())].clone())
            .collect()
    } else {
        let amount = if opts.size > types.len() {
            if !opts.allow_short {
                return Err(Error::Capacity(format!(
                    "requested {} unique words but the pool has {}",
                    opts.size,
                    types.len()
                )));
            }
            types.len()
        } else {
            opts.size
        };
        index::sample(rng, types.len(), amount)
            .into_iter()
            .map(|i| types[i].clone())
            .collect()
    };
    Ok(Lexicon::new(picked))
}
