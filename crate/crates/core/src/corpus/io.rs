use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{Dataset, InflectionExample, Lexicon, LexiconEntry, Pos};
use crate::error::{Error, Result};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Yields `(line_number, line)` for non-blank lines, with `\r` stripped.
fn lines<'a, R: BufRead + 'a>(
    reader: R,
    path: &'a Path,
) -> impl Iterator<Item = Result<(usize, String)>> + 'a {
    reader
        .lines()
        .enumerate()
        .filter_map(move |(i, line)| match line {
            Err(e) => Some(Err(Error::io(path, e))),
            Ok(l) => {
                let l = l.strip_suffix('\r').unwrap_or(&l).to_string();
                if l.trim().is_empty() {
                    None
                } else {
                    Some(Ok((i + 1, l)))
                }
            }
        })
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads `lemma<TAB>target<TAB>tag;tag;...` rows with an optional fourth POS column.
pub fn load_supervised(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    parse_supervised(open(path)?, path)
}

pub fn parse_supervised<R: BufRead>(reader: R, path: &Path) -> Result<Dataset> {
    let mut examples = Vec::new();
    for item in lines(reader, path) {
        let (n, line) = item?;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 || cols.len() > 4 {
            return Err(parse_error(
                path,
                n,
                format!("expected 3 or 4 tab-separated columns, found {}", cols.len()),
            ));
        }
        let tags: Vec<String> = cols[2].split(';').map(str::to_string).collect();
        let pos = match cols.get(3) {
            Some(p) => Pos::parse(p),
            None => Pos::from_tags(&tags),
        };
        let example = InflectionExample::new(cols[0], tags, cols[1], pos)
            .map_err(|e| parse_error(path, n, e.to_string()))?;
        examples.push(example);
    }
    Ok(Dataset::new(examples))
}

/// Reads one word per line (optionally `word<TAB>pos`), dropping words shorter
/// than `min_len` characters and, with `web_filter`, tokens containing `@` or `www`.
pub fn load_lexicon(path: impl AsRef<Path>, min_len: usize, web_filter: bool) -> Result<Lexicon> {
    let path = path.as_ref();
    parse_lexicon(open(path)?, path, min_len, web_filter)
}

pub fn parse_lexicon<R: BufRead>(
    reader: R,
    path: &Path,
    min_len: usize,
    web_filter: bool,
) -> Result<Lexicon> {
    let mut entries = Vec::new();
    for item in lines(reader, path) {
        let (n, line) = item?;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() > 2 {
            return Err(parse_error(
                path,
                n,
                format!("expected a word and an optional POS, found {} columns", cols.len()),
            ));
        }
        let word = cols[0];
        if word.chars().count() < min_len || word.is_empty() {
            continue;
        }
        if web_filter && (word.contains('@') || word.contains("www")) {
            continue;
        }
        let mut entry = LexiconEntry::new(word).map_err(|e| parse_error(path, n, e.to_string()))?;
        if let Some(p) = cols.get(1) {
            entry = entry.with_pos(Pos::parse(p));
        }
        entries.push(entry);
    }
    Ok(Lexicon::new(entries))
}

/// Reads `word<TAB>seg` rows where `seg` separates morphs with `separator`.
/// Every row must be a surface segmentation of its word.
pub fn load_segmented(path: impl AsRef<Path>, separator: char) -> Result<Lexicon> {
    let path = path.as_ref();
    parse_segmented(open(path)?, path, separator)
}

pub fn parse_segmented<R: BufRead>(reader: R, path: &Path, separator: char) -> Result<Lexicon> {
    let mut entries = Vec::new();
    for item in lines(reader, path) {
        let (n, line) = item?;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 || cols.len() > 3 {
            return Err(parse_error(
                path,
                n,
                format!("expected word, segmentation and optional POS, found {} columns", cols.len()),
            ));
        }
        let segments: Vec<String> = cols[1].split(separator).map(str::to_string).collect();
        let mut entry = LexiconEntry::segmented(cols[0], segments)
            .map_err(|e| parse_error(path, n, e.to_string()))?;
        if let Some(p) = cols.get(2) {
            entry = entry.with_pos(Pos::parse(p));
        }
        entries.push(entry);
    }
    Ok(Lexicon::new(entries))
}

pub fn write_supervised<W: Write>(mut out: W, dataset: &Dataset) -> std::io::Result<()> {
    for ex in dataset {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            ex.lemma(),
            ex.target(),
            ex.tag_bundle(),
            ex.pos()
        )?;
    }
    Ok(())
}

pub fn write_lexicon<W: Write>(mut out: W, lexicon: &Lexicon) -> std::io::Result<()> {
    for entry in lexicon {
        match entry.pos() {
            Some(p) => writeln!(out, "{}\t{}", entry.word(), p)?,
            None => writeln!(out, "{}", entry.word())?,
        }
    }
    Ok(())
}

/// Writes segmented entries as `word<TAB>seg`; unsegmented entries get a single morph.
pub fn write_segmented<W: Write>(
    mut out: W,
    lexicon: &Lexicon,
    separator: char,
) -> std::io::Result<()> {
    let sep = separator.to_string();
    for entry in lexicon {
        let seg = match entry.segments() {
            Some(s) => s.join(&sep),
            None => entry.word().to_string(),
        };
        writeln!(out, "{}\t{}", entry.word(), seg)?;
    }
    Ok(())
}
