//! Tab-separated token files.
//!
//! ```text
//! # scheme=dynamic aux=n+1,dist
//! the	D	r+2~NP~NONE	r-1	1
//! dog	N	r-1~S~NONE	DUMMY	2
//! barks	V	DUMMY~DUMMY~VP	PAD	PAD
//!
//! ```
//!
//! One token per line: word, POS, main label, then one column per
//! auxiliary track named in the header. Sentences end with a blank line.

#![allow(clippy::tabs_in_doc_comments)]

use std::fmt::Write as _;

use thiserror::Error;

use crate::auxlabels::{AuxError, AuxKind, AuxTrack};
use crate::encodings::{EncodedSentence, LabelError, Scheme, TagLabel};
use crate::treebank::Sentence;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeqSentence {
    pub encoded: EncodedSentence,
    pub aux: Vec<AuxTrack>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeqFile {
    pub scheme: Scheme,
    pub aux_kinds: Vec<AuxKind>,
    pub sentences: Vec<SeqSentence>,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("line {line}: {kind}")]
pub struct SeqFileError {
    pub line: usize,
    pub kind: SeqErrorKind,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum SeqErrorKind {
    #[error("missing header line '# scheme=<scheme> aux=<list>'")]
    MissingHeader,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("expected {expected} columns, found {found}")]
    ColumnCount { expected: usize, found: usize },
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Aux(#[from] AuxError),
}

fn header(scheme: Scheme, aux: &[AuxKind]) -> String {
    let names: Vec<String> = aux.iter().map(ToString::to_string).collect();
    format!("# scheme={} aux={}", scheme, names.join(","))
}

fn parse_header(line: &str) -> Result<(Scheme, Vec<AuxKind>), SeqErrorKind> {
    let body = line
        .strip_prefix('#')
        .ok_or(SeqErrorKind::MissingHeader)?
        .trim();
    let mut scheme = None;
    let mut aux = Vec::new();
    for field in body.split_whitespace() {
        match field.split_once('=') {
            Some(("scheme", value)) => {
                scheme = Some(value.parse::<Scheme>()?);
            }
            Some(("aux", value)) => {
                for name in value.split(',').filter(|s| !s.is_empty() && *s != "none") {
                    aux.push(name.parse::<AuxKind>()?);
                }
            }
            _ => return Err(SeqErrorKind::Header(format!("unknown field '{field}'"))),
        }
    }
    let scheme = scheme.ok_or_else(|| SeqErrorKind::Header("no scheme given".to_owned()))?;
    Ok((scheme, aux))
}

pub fn write(file: &SeqFile) -> String {
    let mut out = header(file.scheme, &file.aux_kinds);
    out.push('\n');
    for sentence in &file.sentences {
        let enc = &sentence.encoded;
        for t in 0..enc.labels.len() {
            write!(
                out,
                "{}\t{}\t{}",
                enc.sentence.words[t], enc.sentence.pos[t], enc.labels[t]
            )
            .unwrap();
            for track in &sentence.aux {
                write!(out, "\t{}", track.values[t]).unwrap();
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

pub fn read(text: &str) -> Result<SeqFile, SeqFileError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (scheme, aux_kinds) = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((line, l)) => {
                break parse_header(l).map_err(|kind| SeqFileError { line, kind })?
            }
            None => {
                return Err(SeqFileError {
                    line: 1,
                    kind: SeqErrorKind::MissingHeader,
                })
            }
        }
    };
    let columns = 3 + aux_kinds.len();

    let mut sentences = Vec::new();
    let mut rows: Vec<Vec<&str>> = Vec::new();
    let flush = |rows: &mut Vec<Vec<&str>>, sentences: &mut Vec<SeqSentence>| {
        if rows.is_empty() {
            return;
        }
        let take = |col: usize| rows.iter().map(|r| r[col].to_owned()).collect::<Vec<_>>();
        let sentence = Sentence {
            words: take(0),
            pos: take(1),
        };
        let aux = aux_kinds
            .iter()
            .enumerate()
            .map(|(i, kind)| AuxTrack {
                kind: *kind,
                values: take(3 + i),
            })
            .collect();
        let labels = rows.iter().map(|r| r[2].parse().unwrap()).collect();
        sentences.push(SeqSentence {
            encoded: EncodedSentence {
                sentence,
                labels,
                scheme,
            },
            aux,
        });
        rows.clear();
    };

    for (line, l) in lines {
        if l.trim().is_empty() {
            flush(&mut rows, &mut sentences);
            continue;
        }
        if l.starts_with('#') {
            continue;
        }
        let row: Vec<&str> = l.split('\t').collect();
        if row.len() != columns {
            return Err(SeqFileError {
                line,
                kind: SeqErrorKind::ColumnCount {
                    expected: columns,
                    found: row.len(),
                },
            });
        }
        row[2].parse::<TagLabel>().map_err(|e| SeqFileError {
            line,
            kind: e.into(),
        })?;
        rows.push(row);
    }
    flush(&mut rows, &mut sentences);

    Ok(SeqFile {
        scheme,
        aux_kinds,
        sentences,
    })
}

/// Read tagged input for prediction: word and POS in the first two
/// tab-separated columns, further columns ignored, blank line between
/// sentences, `#` lines skipped. A `.seq` file is valid input.
pub fn read_tagged(text: &str) -> Result<Vec<Sentence>, SeqFileError> {
    let mut out = Vec::new();
    let mut current = Sentence {
        words: Vec::new(),
        pos: Vec::new(),
    };
    for (i, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            if !current.words.is_empty() {
                out.push(std::mem::replace(
                    &mut current,
                    Sentence {
                        words: Vec::new(),
                        pos: Vec::new(),
                    },
                ));
            }
            continue;
        }
        if l.starts_with('#') {
            continue;
        }
        let mut cols = l.split('\t');
        match (cols.next(), cols.next()) {
            (Some(w), Some(p)) if !w.is_empty() && !p.is_empty() => {
                current.words.push(w.to_owned());
                current.pos.push(p.to_owned());
            }
            _ => {
                return Err(SeqFileError {
                    line: i + 1,
                    kind: SeqErrorKind::ColumnCount {
                        expected: 2,
                        found: l.split('\t').count(),
                    },
                })
            }
        }
    }
    if !current.words.is_empty() {
        out.push(current);
    }
    Ok(out)
}
