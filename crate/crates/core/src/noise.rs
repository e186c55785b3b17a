//! Self-supervised instances built from unlabeled words.
//!
//! An auxiliary objective pairs a corrupted copy of a word with the original
//! word as the target. Three objectives are supported: autoencoding (no
//! corruption), character masked language modeling, and T5-style span
//! corruption on the source side. The corrupted units are sampled uniformly
//! or with most of the probability mass on the final or initial third of the
//! word, and are either masked or deleted. Units are characters, or whole
//! morphs when the lexicon carries oracle segmentations.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Alphabet, LexiconEntry, Vocabulary};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[serde(rename = "ae")]
    Autoencode,
    Cmlm,
    T5,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Iid,
    Suffix,
    Prefix,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Corruption {
    Mask,
    Delete,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Char,
    Segment,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, $( $variant:expr => $name:literal ),+ $(,)?) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                $( if self == $variant { return $name; } )+
                unreachable!()
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $( $name => Ok($variant), )+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " {:?}"), other))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

keyword_enum!(Objective, "objective", Objective::Autoencode => "ae", Objective::Cmlm => "cmlm", Objective::T5 => "t5");
keyword_enum!(Strategy, "strategy", Strategy::Iid => "iid", Strategy::Suffix => "suffix", Strategy::Prefix => "prefix");
keyword_enum!(Corruption, "corruption mode", Corruption::Mask => "mask", Corruption::Delete => "delete");
keyword_enum!(Granularity, "granularity", Granularity::Char => "char", Granularity::Segment => "segment");

/// Probabilities of the corrupting and random-replacement branches of the
/// per-character CMLM draw; the remainder leaves the character unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplacementMix {
    pub corrupt: f64,
    pub random: f64,
}

impl ReplacementMix {
    pub const STANDARD: ReplacementMix = ReplacementMix {
        corrupt: 0.8,
        random: 0.1,
    };
    /// Always takes the corrupting branch.
    pub const ALWAYS_CORRUPT: ReplacementMix = ReplacementMix {
        corrupt: 1.0,
        random: 0.0,
    };

    pub fn keep(&self) -> f64 {
        1.0 - self.corrupt - self.random
    }
}

impl Default for ReplacementMix {
    fn default() -> Self {
        Self::STANDARD
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub objective: Objective,
    pub strategy: Strategy,
    pub corruption: Corruption,
    pub granularity: Granularity,
    /// Fraction of units sampled per word.
    pub rate: f64,
    /// Probability mass on the terminal third for the skewed strategies.
    pub tail_mass: f64,
    pub mix: ReplacementMix,
}

impl NoiseSpec {
    pub const DEFAULT_RATE: f64 = 0.25;
    pub const DEFAULT_TAIL_MASS: f64 = 0.95;

    pub fn new(
        objective: Objective,
        strategy: Strategy,
        corruption: Corruption,
        granularity: Granularity,
    ) -> Self {
        NoiseSpec {
            objective,
            strategy,
            corruption,
            granularity,
            rate: Self::DEFAULT_RATE,
            tail_mass: Self::DEFAULT_TAIL_MASS,
            mix: ReplacementMix::STANDARD,
        }
    }

    pub fn autoencode() -> Self {
        Self::new(Objective::Autoencode, Strategy::Iid, Corruption::Mask, Granularity::Char)
    }

    pub fn with_rate(mut self, rate: f64) -> Self {
        self.rate = rate;
        self
    }

    pub fn with_mix(mut self, mix: ReplacementMix) -> Self {
        self.mix = mix;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate <= 1.0) {
            return Err(Error::Config(format!("rate {} outside (0, 1]", self.rate)));
        }
        if !(0.0..=1.0).contains(&self.tail_mass) {
            return Err(Error::Config(format!("tail mass {} outside [0, 1]", self.tail_mass)));
        }
        let ReplacementMix { corrupt, random } = self.mix;
        if corrupt < 0.0 || random < 0.0 || corrupt + random > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "replacement mix {corrupt}/{random} is not a distribution"
            )));
        }
        Ok(())
    }

    /// Canonical name, e.g. `cmlm-iid-mask-char`, or `ae`.
    pub fn name(&self) -> String {
        match self.objective {
            Objective::Autoencode => "ae".into(),
            _ => format!(
                "{}-{}-{}-{}",
                self.objective, self.strategy, self.corruption, self.granularity
            ),
        }
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Parses `objective[-strategy[-corruption[-granularity]]]`; omitted parts
/// default to `iid`, `mask` and `char`.
impl FromStr for NoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('-').collect();
        if parts.len() > 4 {
            return Err(Error::Config(format!("malformed noise spec {s:?}")));
        }
        let objective: Objective = parts[0].parse()?;
        let strategy = parts.get(1).map_or(Ok(Strategy::Iid), |p| p.parse())?;
        let corruption = parts.get(2).map_or(Ok(Corruption::Mask), |p| p.parse())?;
        let granularity = parts.get(3).map_or(Ok(Granularity::Char), |p| p.parse())?;
        Ok(NoiseSpec::new(objective, strategy, corruption, granularity))
    }
}

/// One symbol of a noised source sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoiseToken {
    Char(char),
    Mask,
    Sentinel(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoisedPair {
    pub source: Vec<NoiseToken>,
    /// Always the uncorrupted word.
    pub target: String,
    /// Sampled unit indices, ascending.
    pub positions: Vec<usize>,
}

impl NoisedPair {
    /// Source text with masks as `@`, sentinels as `<X0>`, `<X1>`, ... and
    /// colliding literal characters backslash-escaped.
    pub fn render_source(&self) -> String {
        let mut out = String::new();
        for token in &self.source {
            match token {
                NoiseToken::Char(c) => out.push_str(&crate::corpus::Symbol::Char(*c).surface()),
                NoiseToken::Mask => out.push('@'),
                NoiseToken::Sentinel(i) => out.push_str(&format!("<X{i}>")),
            }
        }
        out
    }

    pub fn source_ids(&self, vocab: &Vocabulary) -> Vec<u32> {
        self.source
            .iter()
            .map(|t| match t {
                NoiseToken::Char(c) => vocab.char_id(*c),
                NoiseToken::Mask => Vocabulary::MASK,
                NoiseToken::Sentinel(i) => vocab.sentinel(*i).unwrap_or(Vocabulary::UNK),
            })
            .collect()
    }
}

pub fn unit_count(entry: &LexiconEntry, granularity: Granularity) -> Result<usize> {
    match granularity {
        Granularity::Char => Ok(entry.char_len()),
        Granularity::Segment => entry.segments().map(<[String]>::len).ok_or_else(|| {
            Error::Config(format!(
                "segment granularity needs a segmented entry, {:?} has none",
                entry.word()
            ))
        }),
    }
}

/// `max(1, round_half_up(rate * n))`, capped at `n`.
pub fn units_to_sample(n: usize, rate: f64) -> usize {
    let k = (rate * n as f64 + 0.5 + 1e-9).floor() as usize;
    k.clamp(1, n.max(1))
}

/// Length of the terminal region for the skewed strategies.
pub fn tail_len(n: usize) -> usize {
    n.div_ceil(3)
}

/// Unnormalised single-draw weight of each index under `strategy`.
pub fn position_weights(n: usize, strategy: Strategy, tail_mass: f64) -> Vec<f64> {
    let tail = tail_len(n);
    let head = n - tail;
    let (tail_w, head_w) = if head == 0 {
        (1.0 / n as f64, 0.0)
    } else {
        (tail_mass / tail as f64, (1.0 - tail_mass) / head as f64)
    };
    (0..n)
        .map(|i| match strategy {
            Strategy::Iid => 1.0,
            Strategy::Suffix => {
                if i >= head {
                    tail_w
                } else {
                    head_w
                }
            }
            Strategy::Prefix => {
                if i < tail {
                    tail_w
                } else {
                    head_w
                }
            }
        })
        .collect()
}

/// Samples `units_to_sample(n, rate)` distinct indices in `0..n`, one at a
/// time, each from the strategy distribution renormalised over the indices
/// not yet taken. Returned in ascending order.
pub fn sample_positions<R: Rng + ?Sized>(n: usize, spec: &NoiseSpec, rng: &mut R) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let k = units_to_sample(n, spec.rate);
    let mut weights = position_weights(n, spec.strategy, spec.tail_mass);
    let mut taken = vec![false; n];
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = None;
            for (i, w) in weights.iter().enumerate() {
                if *w > 0.0 {
                    chosen = Some(i);
                    if u < *w {
                        break;
                    }
                    u -= w;
                }
            }
            chosen.expect("positive total weight")
        } else {
            // Only zero-weight indices remain: fall back to uniform.
            let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        taken[pick] = true;
        weights[pick] = 0.0;
        out.push(pick);
    }
    out.sort_unstable();
    out
}

fn check_positions(positions: &[usize], n: usize) -> Result<()> {
    let mut sorted = positions.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != positions.len() || sorted.last().is_some_and(|&p| p >= n) {
        return Err(Error::Config(format!(
            "positions {positions:?} are not distinct indices below {n}"
        )));
    }
    Ok(())
}

/// Character spans `[start, end)` of each unit.
fn unit_spans(entry: &LexiconEntry, granularity: Granularity) -> Result<Vec<(usize, usize)>> {
    match granularity {
        Granularity::Char => Ok((0..entry.char_len()).map(|i| (i, i + 1)).collect()),
        Granularity::Segment => {
            let segments = entry.segments().ok_or_else(|| {
                Error::Config(format!("{:?} has no segmentation", entry.word()))
            })?;
            let mut start = 0;
            Ok(segments
                .iter()
                .map(|s| {
                    let end = start + s.chars().count();
                    let span = (start, end);
                    start = end;
                    span
                })
                .collect())
        }
    }
}

/// Marks the characters covered by the sampled units.
fn affected_chars(entry: &LexiconEntry, positions: &[usize], granularity: Granularity) -> Result<Vec<bool>> {
    let spans = unit_spans(entry, granularity)?;
    check_positions(positions, spans.len())?;
    let mut affected = vec![false; entry.char_len()];
    for &p in positions {
        let (s, e) = spans[p];
        affected[s..e].iter_mut().for_each(|a| *a = true);
    }
    Ok(affected)
}

fn random_other<R: Rng + ?Sized>(original: char, alphabet: &Alphabet, rng: &mut R) -> char {
    let symbols = alphabet.symbols();
    match alphabet.index_of(original) {
        Some(skip) if symbols.len() > 1 => {
            let i = rng.gen_range(0..symbols.len() - 1);
            symbols[if i >= skip { i + 1 } else { i }]
        }
        Some(_) => original,
        None if symbols.is_empty() => original,
        None => symbols[rng.gen_range(0..symbols.len())],
    }
}

/// CMLM corruption: every character of every sampled unit independently
/// takes the corrupting branch (mask or delete), is replaced by a different
/// random alphabet character, or is kept.
pub fn corrupt_cmlm<R: Rng + ?Sized>(
    entry: &LexiconEntry,
    positions: &[usize],
    spec: &NoiseSpec,
    alphabet: &Alphabet,
    rng: &mut R,
) -> Result<NoisedPair> {
    let affected = affected_chars(entry, positions, spec.granularity)?;
    let mut source = Vec::with_capacity(affected.len());
    for (c, hit) in entry.word().chars().zip(affected) {
        if !hit {
            source.push(NoiseToken::Char(c));
            continue;
        }
        let u: f64 = rng.gen();
        if u < spec.mix.corrupt {
            if spec.corruption == Corruption::Mask {
                source.push(NoiseToken::Mask);
            }
        } else if u < spec.mix.corrupt + spec.mix.random {
            source.push(NoiseToken::Char(random_other(c, alphabet, rng)));
        } else {
            source.push(NoiseToken::Char(c));
        }
    }
    Ok(NoisedPair {
        source,
        target: entry.word().to_string(),
        positions: sorted(positions),
    })
}

/// T5 span corruption: each maximal run of adjacent sampled units becomes
/// one sentinel, numbered left to right, or is removed in delete mode.
pub fn corrupt_t5(
    entry: &LexiconEntry,
    positions: &[usize],
    spec: &NoiseSpec,
    sentinel_count: usize,
) -> Result<NoisedPair> {
    let spans = unit_spans(entry, spec.granularity)?;
    check_positions(positions, spans.len())?;
    let mut sampled = vec![false; spans.len()];
    for &p in positions {
        sampled[p] = true;
    }
    let chars: Vec<char> = entry.word().chars().collect();
    let mut source = Vec::with_capacity(chars.len());
    let mut runs = 0;
    for (u, &(s, e)) in spans.iter().enumerate() {
        if !sampled[u] {
            source.extend(chars[s..e].iter().map(|&c| NoiseToken::Char(c)));
        } else if spec.corruption == Corruption::Mask && (u == 0 || !sampled[u - 1]) {
            if runs == sentinel_count {
                return Err(Error::Capacity(format!(
                    "{:?} needs more than {sentinel_count} sentinels",
                    entry.word()
                )));
            }
            source.push(NoiseToken::Sentinel(runs));
            runs += 1;
        }
    }
    Ok(NoisedPair {
        source,
        target: entry.word().to_string(),
        positions: sorted(positions),
    })
}

fn sorted(positions: &[usize]) -> Vec<usize> {
    let mut p = positions.to_vec();
    p.sort_unstable();
    p
}

pub fn make_autoencode(entry: &LexiconEntry) -> NoisedPair {
    NoisedPair {
        source: entry.word().chars().map(NoiseToken::Char).collect(),
        target: entry.word().to_string(),
        positions: Vec::new(),
    }
}

/// Produces auxiliary instances for one noise configuration.
#[derive(Clone, Debug)]
pub struct Noiser {
    spec: NoiseSpec,
    alphabet: Alphabet,
    sentinel_count: usize,
}

impl Noiser {
    pub fn new(spec: NoiseSpec, vocab: &Vocabulary) -> Result<Self> {
        Self::with_alphabet(spec, vocab.alphabet(), vocab.sentinel_count())
    }

    pub fn with_alphabet(spec: NoiseSpec, alphabet: Alphabet, sentinel_count: usize) -> Result<Self> {
        spec.validate()?;
        Ok(Noiser {
            spec,
            alphabet,
            sentinel_count,
        })
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn noise<R: Rng + ?Sized>(&self, entry: &LexiconEntry, rng: &mut R) -> Result<NoisedPair> {
        if self.spec.objective == Objective::Autoencode {
            return Ok(make_autoencode(entry));
        }
        let n = unit_count(entry, self.spec.granularity)?;
        let positions = sample_positions(n, &self.spec, rng);
        match self.spec.objective {
            Objective::Cmlm => corrupt_cmlm(entry, &positions, &self.spec, &self.alphabet, rng),
            Objective::T5 => corrupt_t5(entry, &positions, &self.spec, self.sentinel_count),
            Objective::Autoencode => unreachable!(),
        }
    }
}

/// One-shot form of [`Noiser::noise`].
pub fn noise_example<R: Rng + ?Sized>(
    entry: &LexiconEntry,
    spec: &NoiseSpec,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<NoisedPair> {
    Noiser::new(*spec, vocab)?.noise(entry, rng)
}
