//! Trigram copy analysis of predictions and aggregation of run results.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};

/// All distinct contiguous 3-character substrings.
pub fn char_trigrams(word: &str) -> BTreeSet<String> {
    let chars: Vec<char> = word.chars().collect();
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

/// Trigrams of every target form in `train`.
pub fn train_trigrams(train: &Dataset) -> BTreeSet<String> {
    train.iter().flat_map(|e| char_trigrams(e.target())).collect()
}

/// Both fractions are `None` when the prediction has no trigrams.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopyRecord {
    pub id: usize,
    pub copy_pct: Option<f64>,
    pub train_pct: Option<f64>,
}

fn share(of: &BTreeSet<String>, within: &BTreeSet<String>) -> Option<f64> {
    if of.is_empty() {
        return None;
    }
    Some(of.intersection(within).count() as f64 / of.len() as f64)
}

pub fn copy_record(id: usize, prediction: &str, lemma: &str, train_trigrams: &BTreeSet<String>) -> CopyRecord {
    let pred = char_trigrams(prediction);
    CopyRecord {
        id,
        copy_pct: share(&pred, &char_trigrams(lemma)),
        train_pct: share(&pred, train_trigrams),
    }
}

/// One line of a predictions file: `lemma<TAB>tags<TAB>gold<TAB>pred`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub lemma: String,
    pub tags: String,
    pub gold: String,
    pub pred: String,
}

pub fn parse_predictions<R: BufRead>(reader: R, path: &Path) -> Result<Vec<PredictionRow>> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        // The prediction may legitimately be empty, which drops the last tab
        // in some editors; accept three columns as an empty prediction.
        let pred = match cols.len() {
            4 => cols[3],
            3 => "",
            n => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("expected 4 columns, found {n}"),
                })
            }
        };
        rows.push(PredictionRow {
            lemma: cols[0].to_string(),
            tags: cols[1].to_string(),
            gold: cols[2].to_string(),
            pred: pred.to_string(),
        });
    }
    Ok(rows)
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(BufReader::new(file), path)
}

pub fn write_predictions<W: Write>(mut out: W, rows: &[PredictionRow]) -> std::io::Result<()> {
    for r in rows {
        writeln!(out, "{}\t{}\t{}\t{}", r.lemma, r.tags, r.gold, r.pred)?;
    }
    Ok(())
}

/// Means over the defined records of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopyMeans {
    pub copy_pct: Option<f64>,
    pub train_pct: Option<f64>,
    pub defined: usize,
}

impl CopyMeans {
    pub fn of(records: &[CopyRecord]) -> Self {
        let mean = |f: fn(&CopyRecord) -> Option<f64>| {
            let xs: Vec<f64> = records.iter().filter_map(f).collect();
            (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
        };
        CopyMeans {
            copy_pct: mean(|r| r.copy_pct),
            train_pct: mean(|r| r.train_pct),
            defined: records.iter().filter(|r| r.copy_pct.is_some()).count(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisagreementReport {
    pub examples: usize,
    pub disagreements: usize,
    pub a: CopyMeans,
    pub b: CopyMeans,
    pub records_a: Vec<CopyRecord>,
    pub records_b: Vec<CopyRecord>,
}

fn check_row(row: &PredictionRow, dev: &crate::corpus::InflectionExample, i: usize, which: &str) -> Result<()> {
    if row.lemma != dev.lemma() || row.tags != dev.tag_bundle() || row.gold != dev.target() {
        return Err(Error::Alignment(format!(
            "row {} of predictions {which} ({} {}) does not match dev example ({} {})",
            i + 1,
            row.lemma,
            row.tags,
            dev.lemma(),
            dev.tag_bundle()
        )));
    }
    Ok(())
}

/// Copy statistics of two models restricted to the dev examples where
/// their predictions differ.
pub fn disagreement_analysis(
    preds_a: &[PredictionRow],
    preds_b: &[PredictionRow],
    dev: &Dataset,
    train: &Dataset,
) -> Result<DisagreementReport> {
    if preds_a.len() != dev.len() || preds_b.len() != dev.len() {
        return Err(Error::Alignment(format!(
            "{} and {} predictions for {} dev examples",
            preds_a.len(),
            preds_b.len(),
            dev.len()
        )));
    }
    let trigrams = train_trigrams(train);
    let (mut records_a, mut records_b) = (Vec::new(), Vec::new());
    for (i, ((a, b), ex)) in preds_a.iter().zip(preds_b).zip(dev).enumerate() {
        check_row(a, ex, i, "a")?;
        check_row(b, ex, i, "b")?;
        if a.pred != b.pred {
            records_a.push(copy_record(i, &a.pred, ex.lemma(), &trigrams));
            records_b.push(copy_record(i, &b.pred, ex.lemma(), &trigrams));
        }
    }
    Ok(DisagreementReport {
        examples: dev.len(),
        disagreements: records_a.len(),
        a: CopyMeans::of(&records_a),
        b: CopyMeans::of(&records_b),
        records_a,
        records_b,
    })
}

/// Cross-language summary: means pooled over every disagreement, and the
/// mean of per-language means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossLanguage {
    pub pooled_a: CopyMeans,
    pub pooled_b: CopyMeans,
    pub macro_a: CopyMeans,
    pub macro_b: CopyMeans,
    pub languages: usize,
}

fn macro_mean(means: &[&CopyMeans]) -> CopyMeans {
    let mean = |f: fn(&CopyMeans) -> Option<f64>| {
        let xs: Vec<f64> = means.iter().filter_map(|m| f(m)).collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    };
    CopyMeans {
        copy_pct: mean(|m| m.copy_pct),
        train_pct: mean(|m| m.train_pct),
        defined: means.iter().map(|m| m.defined).sum(),
    }
}

pub fn across_languages(reports: &[DisagreementReport]) -> CrossLanguage {
    let all_a: Vec<CopyRecord> = reports.iter().flat_map(|r| r.records_a.clone()).collect();
    let all_b: Vec<CopyRecord> = reports.iter().flat_map(|r| r.records_b.clone()).collect();
    CrossLanguage {
        pooled_a: CopyMeans::of(&all_a),
        pooled_b: CopyMeans::of(&all_b),
        macro_a: macro_mean(&reports.iter().map(|r| &r.a).collect::<Vec<_>>()),
        macro_b: macro_mean(&reports.iter().map(|r| &r.b).collect::<Vec<_>>()),
        languages: reports.len(),
    }
}

/// Accuracy of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub language: String,
    pub dataset: String,
    pub setup: String,
    pub accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mark {
    None,
    Best,
    Second,
}

/// Accuracies of every setup for one `(language, dataset)` group, or the
/// mean over languages when `language` is `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub language: Option<String>,
    /// Aligned with `ResultsTable::setups`.
    pub values: Vec<Option<f64>>,
    pub marks: Vec<Mark>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub setups: Vec<String>,
    /// Per dataset: language rows in name order followed by the mean row.
    pub rows: Vec<ResultRow>,
}

fn marks(values: &[Option<f64>]) -> Vec<Mark> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    let best = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Competition ranking: a tie for best leaves no second place.
    let second = if present.iter().filter(|&&v| v == best).count() > 1 {
        f64::NAN
    } else {
        present.iter().copied().filter(|&v| v < best).fold(f64::NEG_INFINITY, f64::max)
    };
    values
        .iter()
        .map(|v| match v {
            Some(v) if *v == best => Mark::Best,
            Some(v) if *v == second => Mark::Second,
            _ => Mark::None,
        })
        .collect()
}

/// Groups runs by dataset and language. Repeated runs of one cell are
/// averaged; the mean row of a dataset averages the language cells of each
/// setup.
pub fn aggregate(results: &[RunResult]) -> ResultsTable {
    let setups: Vec<String> = results.iter().map(|r| r.setup.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut cells: BTreeMap<(&str, &str), BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    for r in results {
        cells
            .entry((&r.dataset, &r.language))
            .or_default()
            .entry(&r.setup)
            .or_default()
            .push(r.accuracy);
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let mut rows = Vec::new();
    let datasets: BTreeSet<&str> = cells.keys().map(|k| k.0).collect();
    for dataset in datasets {
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); setups.len()];
        for ((_, language), by_setup) in cells.range((dataset, "")..).take_while(|(k, _)| k.0 == dataset) {
            let values: Vec<Option<f64>> = setups
                .iter()
                .map(|s| by_setup.get(s.as_str()).map(|xs| mean(xs)))
                .collect();
            for (col, v) in columns.iter_mut().zip(&values) {
                col.extend(v);
            }
            rows.push(ResultRow {
                dataset: dataset.to_string(),
                language: Some(language.to_string()),
                marks: marks(&values),
                values,
            });
        }
        let values: Vec<Option<f64>> = columns.iter().map(|c| (!c.is_empty()).then(|| mean(c))).collect();
        rows.push(ResultRow {
            dataset: dataset.to_string(),
            language: None,
            marks: marks(&values),
            values,
        });
    }
    ResultsTable { setups, rows }
}

impl ResultsTable {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Markdown with one table per dataset; accuracies as percentages, best
    /// in bold and second best underlined.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let mut current: Option<&str> = None;
        for row in &self.rows {
            if current != Some(row.dataset.as_str()) {
                if current.is_some() {
                    out.push('\n');
                }
                current = Some(&row.dataset);
                let _ = writeln!(out, "## {}\n", row.dataset);
                let _ = writeln!(out, "| language | {} |", self.setups.join(" | "));
                let _ = writeln!(out, "|---|{}", "---:|".repeat(self.setups.len()));
            }
            let cells: Vec<String> = row
                .values
                .iter()
                .zip(&row.marks)
                .map(|(v, m)| match (v, m) {
                    (None, _) => "-".to_string(),
                    (Some(v), Mark::Best) => format!("**{:.2}**", v * 100.0),
                    (Some(v), Mark::Second) => format!("<u>{:.2}</u>", v * 100.0),
                    (Some(v), Mark::None) => format!("{:.2}", v * 100.0),
                })
                .collect();
            let name = row.language.as_deref().unwrap_or("mean");
            let _ = writeln!(out, "| {name} | {} |", cells.join(" | "));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{InflectionExample, Pos};
    use proptest::prelude::*;

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn trigram_sets() {
        assert_eq!(char_trigrams("walked"), set(&["wal", "alk", "lke", "ked"]));
        assert!(char_trigrams("ab").is_empty());
        assert_eq!(char_trigrams("aaaa"), set(&["aaa"]));
    }

    #[test]
    fn copy_records() {
        let none = BTreeSet::new();
        assert_eq!(copy_record(0, "walked", "walk", &none).copy_pct, Some(0.5));
        assert_eq!(copy_record(0, "walk", "walk", &none).copy_pct, Some(1.0));
        let r = copy_record(0, "xyz", "walk", &set(&["wal"]));
        assert_eq!((r.copy_pct, r.train_pct), (Some(0.0), Some(0.0)));
        let r = copy_record(0, "ab", "walk", &none);
        assert_eq!((r.copy_pct, r.train_pct), (None, None));
    }

    fn example(lemma: &str, target: &str) -> InflectionExample {
        InflectionExample::new(lemma, vec!["V".into(), "PST".into()], target, Pos::Verb).unwrap()
    }

    fn rows(dev: &Dataset, preds: &[&str]) -> Vec<PredictionRow> {
        dev.iter()
            .zip(preds)
            .map(|(e, p)| PredictionRow {
                lemma: e.lemma().into(),
                tags: e.tag_bundle(),
                gold: e.target().into(),
                pred: p.to_string(),
            })
            .collect()
    }

    #[test]
    fn identical_predictions() {
        let dev = Dataset::new(vec![example("walk", "walked")]);
        let a = rows(&dev, &["walked"]);
        let r = disagreement_analysis(&a, &a, &dev, &dev).unwrap();
        assert_eq!(r.disagreements, 0);
        assert_eq!(r.a.copy_pct, None);
    }

    #[test]
    fn hand_computed_disagreements() {
        let train = Dataset::new(vec![example("jump", "jumped"), example("sing", "sang")]);
        // train trigrams: jum ump mpe ped san ang
        let dev = Dataset::new(vec![
            example("walk", "walked"),
            example("talk", "talked"),
            example("ring", "rang"),
            example("play", "played"),
            example("go", "went"),
        ]);
        let a = rows(&dev, &["walked", "talk", "ring", "played", "went"]);
        let b = rows(&dev, &["wanged", "taped", "rang", "plang", "went"]);
        let r = disagreement_analysis(&a, &b, &dev, &train).unwrap();
        assert_eq!(r.disagreements, 4);
        // a: walked 2/4 copy 0/4 train; talk 1 / 0; ring 1 / 0; played 2/4 / 0
        assert!((r.a.copy_pct.unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(r.a.train_pct, Some(0.0));
        // b: wanged {wan ang nge ged} copy 0 train 1/4; taped {tap ape ped} 0, 1/3;
        // rang {ran ang} 0, 1/2; plang {pla lan ang} 1/3, 1/3
        let copy_b = (0.0 + 0.0 + 0.0 + 1.0 / 3.0) / 4.0;
        let train_b = (0.25 + 1.0 / 3.0 + 0.5 + 1.0 / 3.0) / 4.0;
        assert!((r.b.copy_pct.unwrap() - copy_b).abs() < 1e-12);
        assert!((r.b.train_pct.unwrap() - train_b).abs() < 1e-12);
    }

    #[test]
    fn misaligned_predictions() {
        let dev = Dataset::new(vec![example("walk", "walked"), example("talk", "talked")]);
        let a = rows(&dev, &["x", "y"]);
        let mut b = a.clone();
        b.swap(0, 1);
        assert!(matches!(disagreement_analysis(&a, &b, &dev, &dev), Err(Error::Alignment(_))));
        assert!(disagreement_analysis(&a[..1], &a, &dev, &dev).is_err());
    }

    #[test]
    fn pooled_and_macro_means_differ() {
        let report = |copies: &[f64]| {
            let records: Vec<CopyRecord> = copies
                .iter()
                .map(|&c| CopyRecord {
                    id: 0,
                    copy_pct: Some(c),
                    train_pct: Some(c),
                })
                .collect();
            DisagreementReport {
                examples: copies.len(),
                disagreements: copies.len(),
                a: CopyMeans::of(&records),
                b: CopyMeans::of(&records),
                records_a: records.clone(),
                records_b: records,
            }
        };
        let x = across_languages(&[report(&[1.0]), report(&[0.0, 0.0, 0.0])]);
        assert_eq!(x.pooled_a.copy_pct, Some(0.25));
        assert_eq!(x.macro_a.copy_pct, Some(0.5));
    }

    fn run(language: &str, setup: &str, accuracy: f64) -> RunResult {
        RunResult {
            language: language.into(),
            dataset: "ud-1k".into(),
            setup: setup.into(),
            accuracy,
        }
    }

    #[test]
    fn aggregate_marks_and_means() {
        assert!(aggregate(&[]).is_empty());
        let single = aggregate(&[run("deu", "ae", 0.8)]);
        assert_eq!(single.rows.last().unwrap().values, [Some(0.8)]);

        let t = aggregate(&[
            run("deu", "ae", 0.8),
            run("deu", "base", 0.7),
            run("deu", "t5", 0.6),
            run("fin", "ae", 0.5),
            run("fin", "base", 0.9),
            run("fin", "t5", 0.9),
        ]);
        assert_eq!(t.setups, ["ae", "base", "t5"]);
        assert_eq!(t.rows[0].marks, [Mark::Best, Mark::Second, Mark::None]);
        assert_eq!(t.rows[1].marks, [Mark::None, Mark::Best, Mark::Best]);
        let mean = &t.rows[2];
        assert_eq!(mean.language, None);
        assert!((mean.values[0].unwrap() - 0.65).abs() < 1e-12);
        assert_eq!(mean.marks, [Mark::None, Mark::Best, Mark::Second]);
        let md = t.to_markdown();
        assert!(md.contains("| deu | **80.00** | <u>70.00</u> | 60.00 |"), "{md}");
        assert!(md.contains("| mean | 65.00 | **80.00** | <u>75.00</u> |"), "{md}");
    }

    #[test]
    fn prediction_file_round_trip() {
        let rows = vec![PredictionRow {
            lemma: "walk".into(),
            tags: "V;PST".into(),
            gold: "walked".into(),
            pred: String::new(),
        }];
        let mut buf = Vec::new();
        write_predictions(&mut buf, &rows).unwrap();
        assert_eq!(parse_predictions(&buf[..], Path::new("p")).unwrap(), rows);
        assert!(parse_predictions(&b"a\tb\n"[..], Path::new("p")).is_err());
    }

    fn naive_share(pred: &str, reference: &[String]) -> Option<f64> {
        let chars: Vec<char> = pred.chars().collect();
        let mut seen: Vec<String> = Vec::new();
        for i in 0..chars.len().saturating_sub(2) {
            let t: String = chars[i..i + 3].iter().collect();
            if !seen.contains(&t) {
                seen.push(t);
            }
        }
        if seen.is_empty() {
            return None;
        }
        let mut hits = 0;
        for t in &seen {
            let mut found = false;
            for r in reference {
                let rc: Vec<char> = r.chars().collect();
                for j in 0..rc.len().saturating_sub(2) {
                    if rc[j..j + 3].iter().collect::<String>() == *t {
                        found = true;
                    }
                }
            }
            if found {
                hits += 1;
            }
        }
        Some(hits as f64 / seen.len() as f64)
    }

    proptest! {
        #[test]
        fn copy_matches_double_loop(pred in "[abc]{0,8}", lemma in "[abc]{0,8}", train in prop::collection::vec("[abc]{0,6}", 0..5)) {
            let train_set: Dataset = Dataset::new(
                train.iter().filter(|t| !t.is_empty()).map(|t| example("x", t)).collect(),
            );
            let targets: Vec<String> = train_set.iter().map(|e| e.target().to_string()).collect();
            let r = copy_record(0, &pred, &lemma, &train_trigrams(&train_set));
            prop_assert_eq!(r.copy_pct, naive_share(&pred, &[lemma.clone()]));
            prop_assert_eq!(r.train_pct, naive_share(&pred, &targets));

            let doubled = Dataset::new(train_set.iter().chain(train_set.iter()).cloned().collect());
            prop_assert_eq!(train_trigrams(&doubled), train_trigrams(&train_set));
        }
    }
}
