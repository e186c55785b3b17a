//! Surface segmentation from canonical segmentation.
//!
//! A canonical analysis such as `chug-ed` restores underlying morph forms and
//! so need not spell the surface word `chugged`. The word is aligned against
//! the boundary-free canonical string with a minimum edit-distance alignment,
//! and each canonical boundary is projected onto the surface position right
//! after the operation that consumed the canonical character preceding it.
//! When that character was matched or substituted, the cut falls after its
//! surface partner; when it was inserted, the cut falls where the insertion
//! happened.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignKind {
    Match,
    Substitute,
    /// Source character with no target counterpart.
    Delete,
    /// Target character with no source counterpart.
    Insert,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AlignmentOp {
    pub kind: AlignKind,
    pub source_index: Option<usize>,
    pub target_index: Option<usize>,
}

impl AlignmentOp {
    fn pair(kind: AlignKind, i: usize, j: usize) -> Self {
        AlignmentOp {
            kind,
            source_index: Some(i),
            target_index: Some(j),
        }
    }

    pub fn cost(&self) -> usize {
        usize::from(self.kind != AlignKind::Match)
    }
}

/// Total unit cost of an alignment.
pub fn alignment_cost(ops: &[AlignmentOp]) -> usize {
    ops.iter().map(AlignmentOp::cost).sum()
}

/// Minimum-cost alignment of `source` to `target` with unit edit costs.
///
/// Among co-optimal alignments the backtrace prefers, at every step,
/// match over substitution over deletion over insertion.
pub fn levenshtein_align<T: PartialEq>(source: &[T], target: &[T]) -> Vec<AlignmentOp> {
    let (n, m) = (source.len(), target.len());
    let width = m + 1;
    let mut dist = vec![0usize; (n + 1) * width];
    for j in 0..=m {
        dist[j] = j;
    }
    for i in 1..=n {
        dist[i * width] = i;
        for j in 1..=m {
            let diag = dist[(i - 1) * width + j - 1] + usize::from(source[i - 1] != target[j - 1]);
            let up = dist[(i - 1) * width + j] + 1;
            let left = dist[i * width + j - 1] + 1;
            dist[i * width + j] = diag.min(up).min(left);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dist[i * width + j];
        if i > 0 && j > 0 {
            let diag = dist[(i - 1) * width + j - 1];
            if source[i - 1] == target[j - 1] && diag == here {
                ops.push(AlignmentOp::pair(AlignKind::Match, i - 1, j - 1));
                i -= 1;
                j -= 1;
                continue;
            }
            if source[i - 1] != target[j - 1] && diag + 1 == here {
                ops.push(AlignmentOp::pair(AlignKind::Substitute, i - 1, j - 1));
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dist[(i - 1) * width + j] + 1 == here {
            ops.push(AlignmentOp {
                kind: AlignKind::Delete,
                source_index: Some(i - 1),
                target_index: None,
            });
            i -= 1;
        } else {
            ops.push(AlignmentOp {
                kind: AlignKind::Insert,
                source_index: None,
                target_index: Some(j - 1),
            });
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

/// A partition of a word into contiguous segments, given by cut positions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurfaceSegmentation {
    word: String,
    /// Character offsets, strictly increasing, each in `1..len`.
    boundaries: Vec<usize>,
}

impl SurfaceSegmentation {
    pub fn new(word: impl Into<String>, mut boundaries: Vec<usize>) -> Self {
        let word = word.into();
        let len = word.chars().count();
        boundaries.retain(|&b| b > 0 && b < len);
        boundaries.sort_unstable();
        boundaries.dedup();
        SurfaceSegmentation { word, boundaries }
    }

    pub fn word(&self) -> &str {
        &self.word
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn segments(&self) -> Vec<String> {
        let chars: Vec<char> = self.word.chars().collect();
        let mut out = Vec::with_capacity(self.boundaries.len() + 1);
        let mut start = 0;
        for &b in self.boundaries.iter().chain(std::iter::once(&chars.len())) {
            out.push(chars[start..b].iter().collect());
            start = b;
        }
        out
    }

    pub fn render(&self, separator: char) -> String {
        self.segments().join(&separator.to_string())
    }
}

impl fmt::Display for SurfaceSegmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render('-'))
    }
}

/// Outcome of projecting one canonical segmentation onto its surface word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentProjection {
    pub segmentation: SurfaceSegmentation,
    /// Internal canonical boundaries that produced no distinct surface cut,
    /// e.g. because the whole canonical morph was unrealised on the surface.
    pub lost_boundaries: usize,
    pub alignment: Vec<AlignmentOp>,
}

/// Splits a canonical segmentation into its characters and the boundary
/// offsets, counted in characters.
fn split_canonical(canonical: &str, separator: char) -> Result<(Vec<char>, Vec<usize>)> {
    let mut chars = Vec::new();
    let mut boundaries = Vec::new();
    let mut previous_was_separator = false;
    for c in canonical.chars() {
        if c == separator {
            if previous_was_separator {
                return Err(Error::Segmentation(format!(
                    "{canonical:?} has adjacent boundary symbols"
                )));
            }
            boundaries.push(chars.len());
            previous_was_separator = true;
        } else {
            chars.push(c);
            previous_was_separator = false;
        }
    }
    Ok((chars, boundaries))
}

pub fn surface_segment(word: &str, canonical: &str, separator: char) -> Result<SurfaceSegmentation> {
    project_segmentation(word, canonical, separator).map(|p| p.segmentation)
}

pub fn project_segmentation(
    word: &str,
    canonical: &str,
    separator: char,
) -> Result<SegmentProjection> {
    if word.is_empty() {
        return Err(Error::Segmentation("empty surface word".into()));
    }
    if word.contains(separator) {
        return Err(Error::Segmentation(format!(
            "surface word {word:?} contains the boundary symbol {separator:?}"
        )));
    }
    let surface: Vec<char> = word.chars().collect();
    let (target, boundaries) = split_canonical(canonical, separator)?;
    let alignment = levenshtein_align(&surface, &target);

    // consumed[j]: surface characters consumed once target[j] has been aligned.
    let mut consumed = vec![0usize; target.len()];
    let mut surface_pos = 0;
    for op in &alignment {
        if op.source_index.is_some() {
            surface_pos += 1;
        }
        if let Some(j) = op.target_index {
            consumed[j] = surface_pos;
        }
    }

    let internal: Vec<usize> = boundaries
        .iter()
        .copied()
        .filter(|&b| b > 0 && b < target.len())
        .collect();
    let cuts: Vec<usize> = internal.iter().map(|&b| consumed[b - 1]).collect();
    let segmentation = SurfaceSegmentation::new(word, cuts);
    let lost_boundaries = internal.len() - segmentation.boundaries().len();
    Ok(SegmentProjection {
        segmentation,
        lost_boundaries,
        alignment,
    })
}
