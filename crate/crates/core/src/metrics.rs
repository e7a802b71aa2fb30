//! Labelled bracketing scores, per-`n` diagnostics and label-space
//! statistics.
//!
//! The bracket scorer is a simplified EVALB: spans of every internal node
//! except preterminals are compared as multisets of `(label, start, end)`.
//! Nothing is deleted or relabelled unless [`EvalOptions`] asks for it.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encodings::{EncodedSentence, NComponent};
use crate::exec::Execution;
use crate::treebank::{Tree, CHAIN_SEPARATOR};

/// POS tags removed by COLLINS-style punctuation deletion.
pub const COLLINS_PUNCT: &[&str] = &["''", "``", ".", ":", ","];

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("gold tree has {gold} tokens but predicted tree has {pred}")]
    LeafCountMismatch { gold: usize, pred: usize },
    #[error("{gold} gold sentences but {pred} predicted sentences")]
    CorpusSizeMismatch { gold: usize, pred: usize },
    #[error("sentence {index}: gold has {gold} labels but prediction has {pred}")]
    SentenceLengthMismatch {
        index: usize,
        gold: usize,
        pred: usize,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Drop tokens whose POS tag is in `punct_tags` before extracting spans.
    pub delete_punct: bool,
    pub punct_tags: Vec<String>,
    /// Strip functional tags from nonterminals on both sides.
    pub strip_functional: bool,
}

impl EvalOptions {
    pub fn collins() -> Self {
        EvalOptions {
            delete_punct: true,
            punct_tags: COLLINS_PUNCT.iter().map(|s| s.to_string()).collect(),
            strip_functional: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BracketScore {
    pub matched: usize,
    pub gold_total: usize,
    pub pred_total: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl BracketScore {
    pub fn from_counts(matched: usize, gold_total: usize, pred_total: usize) -> Self {
        let (precision, recall, f1) = prf(matched, gold_total, pred_total);
        BracketScore {
            matched,
            gold_total,
            pred_total,
            precision,
            recall,
            f1,
        }
    }

    /// Micro-average: add up counts, then recompute the ratios.
    pub fn merge(&self, other: &BracketScore) -> BracketScore {
        BracketScore::from_counts(
            self.matched + other.matched,
            self.gold_total + other.gold_total,
            self.pred_total + other.pred_total,
        )
    }
}

fn prf(matched: usize, gold: usize, pred: usize) -> (f64, f64, f64) {
    // Two bracket-free trees agree perfectly.
    if gold == 0 && pred == 0 {
        return (1.0, 1.0, 1.0);
    }
    let p = if pred == 0 {
        0.0
    } else {
        matched as f64 / pred as f64
    };
    let r = if gold == 0 {
        0.0
    } else {
        matched as f64 / gold as f64
    };
    let f = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f)
}

/// A labelled span `[start, end)` over token positions.
pub type Span = (String, usize, usize);

/// Labelled spans of all internal nodes above the preterminals. Joined
/// unary-chain labels contribute one span per chain member.
pub fn spans(tree: &Tree, options: &EvalOptions) -> Vec<Span> {
    let keep = |pos: &str| !(options.delete_punct && options.punct_tags.iter().any(|p| p == pos));
    let tree = if options.strip_functional {
        tree.strip_functional()
    } else {
        tree.clone()
    };

    fn walk(tree: &Tree, keep: &dyn Fn(&str) -> bool, next: &mut usize, out: &mut Vec<Span>) {
        match tree {
            Tree::Leaf { pos, .. } => {
                if keep(pos) {
                    *next += 1;
                }
            }
            Tree::Internal { label, children } => {
                let start = *next;
                for child in children {
                    walk(child, keep, next, out);
                }
                if *next > start {
                    for part in label.split(CHAIN_SEPARATOR) {
                        out.push((part.to_owned(), start, *next));
                    }
                }
            }
        }
    }

    let mut out = Vec::new();
    walk(&tree, &keep, &mut 0, &mut out);
    out
}

/// Size of the multiset intersection.
fn multiset_matches(gold: &[Span], pred: &[Span]) -> usize {
    let mut counts: HashMap<&Span, usize> = HashMap::new();
    for span in gold {
        *counts.entry(span).or_default() += 1;
    }
    let mut matched = 0;
    for span in pred {
        if let Some(c) = counts.get_mut(span) {
            if *c > 0 {
                *c -= 1;
                matched += 1;
            }
        }
    }
    matched
}

pub fn bracket_score(gold: &Tree, predicted: &Tree) -> Result<BracketScore, MetricsError> {
    bracket_score_with(gold, predicted, &EvalOptions::default())
}

pub fn bracket_score_with(
    gold: &Tree,
    predicted: &Tree,
    options: &EvalOptions,
) -> Result<BracketScore, MetricsError> {
    let (g, p) = (gold.num_leaves(), predicted.num_leaves());
    if g != p {
        return Err(MetricsError::LeafCountMismatch { gold: g, pred: p });
    }
    let gold_spans = spans(gold, options);
    let pred_spans = spans(predicted, options);
    Ok(BracketScore::from_counts(
        multiset_matches(&gold_spans, &pred_spans),
        gold_spans.len(),
        pred_spans.len(),
    ))
}

/// Micro-averaged score over aligned corpora.
pub fn corpus_score(
    gold: &[Tree],
    predicted: &[Tree],
    options: &EvalOptions,
    exec: Execution,
) -> Result<BracketScore, MetricsError> {
    if gold.len() != predicted.len() {
        return Err(MetricsError::CorpusSizeMismatch {
            gold: gold.len(),
            pred: predicted.len(),
        });
    }
    let per_sentence = exec.map_range(gold.len(), |i| {
        bracket_score_with(&gold[i], &predicted[i], options)
    });
    per_sentence
        .into_iter()
        .try_fold(BracketScore::from_counts(0, 0, 0), |acc, s| {
            Ok(acc.merge(&s?))
        })
}

/// Precision, recall and F1 of one class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub true_positives: usize,
    pub gold_count: usize,
    pub pred_count: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Classification scores of the `n` component, one entry per distinct `n`
/// value seen in either corpus. All positions count, including the last.
pub fn per_n_f1(
    gold: &[EncodedSentence],
    predicted: &[EncodedSentence],
) -> Result<BTreeMap<NComponent, ClassScore>, MetricsError> {
    if gold.len() != predicted.len() {
        return Err(MetricsError::CorpusSizeMismatch {
            gold: gold.len(),
            pred: predicted.len(),
        });
    }
    let mut counts: BTreeMap<NComponent, (usize, usize, usize)> = BTreeMap::new();
    for (index, (g, p)) in gold.iter().zip(predicted).enumerate() {
        if g.labels.len() != p.labels.len() {
            return Err(MetricsError::SentenceLengthMismatch {
                index,
                gold: g.labels.len(),
                pred: p.labels.len(),
            });
        }
        for (gl, pl) in g.labels.iter().zip(&p.labels) {
            counts.entry(gl.n).or_default().1 += 1;
            counts.entry(pl.n).or_default().2 += 1;
            if gl.n == pl.n {
                counts.entry(gl.n).or_default().0 += 1;
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|(n, (tp, gold_count, pred_count))| {
            let (precision, recall, f1) = prf(tp, gold_count, pred_count);
            (
                n,
                ClassScore {
                    true_positives: tp,
                    gold_count,
                    pred_count,
                    precision,
                    recall,
                    f1,
                },
            )
        })
        .collect())
}

/// Label inventory of a corpus.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpaceStats {
    pub total_distinct: usize,
    /// Occurrences per label. Decomposed inventories prefix each value with
    /// its component (`N:`, `C:`, `U:`).
    pub freq_histogram: BTreeMap<String, usize>,
    /// Distinct values per component: `|N|`, `|C|`, `|U|`.
    pub component_sizes: [usize; 3],
}

impl LabelSpaceStats {
    /// Fraction of distinct labels that occur at most `threshold` times.
    pub fn rare_fraction(&self, threshold: usize) -> f64 {
        if self.freq_histogram.is_empty() {
            return 0.0;
        }
        let rare = self
            .freq_histogram
            .values()
            .filter(|&&c| c <= threshold)
            .count();
        rare as f64 / self.freq_histogram.len() as f64
    }
}

/// Count distinct labels. With `decomposed`, the inventory is the union of
/// the three component inventories, so `total_distinct` is `|N|+|C|+|U|`.
pub fn label_space_stats(corpus: &[EncodedSentence], decomposed: bool) -> LabelSpaceStats {
    let mut histogram: BTreeMap<String, usize> = BTreeMap::new();
    let mut components: [HashSet<String>; 3] = Default::default();
    for label in corpus.iter().flat_map(|s| &s.labels) {
        let parts = [
            label.n.to_string(),
            label.c_token().to_owned(),
            label.u_token().to_owned(),
        ];
        if decomposed {
            for (prefix, part) in ["N:", "C:", "U:"].iter().zip(&parts) {
                *histogram.entry(format!("{prefix}{part}")).or_default() += 1;
            }
        } else {
            *histogram.entry(label.to_string()).or_default() += 1;
        }
        for (set, part) in components.iter_mut().zip(parts) {
            set.insert(part);
        }
    }
    LabelSpaceStats {
        total_distinct: histogram.len(),
        freq_histogram: histogram,
        component_sizes: [
            components[0].len(),
            components[1].len(),
            components[2].len(),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encodings::TagLabel;
    use crate::treebank::{parse_bracketed, Sentence};

    fn tree(s: &str) -> Tree {
        parse_bracketed(s).unwrap().remove(0)
    }

    #[test]
    fn identical_trees_score_one() {
        let t = tree("(S (NP (D the) (N dog)) (VP (V barks)))");
        let s = bracket_score(&t, &t).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn partial_overlap() {
        let gold = tree("(S (NP (D the) (N dog)) (VP (V barks)))");
        let pred = tree("(S (NP (D the)) (VP (N dog) (V barks)))");
        let s = bracket_score(&gold, &pred).unwrap();
        assert_eq!((s.matched, s.gold_total, s.pred_total), (1, 3, 3));
        assert!((s.f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn flat_prediction_matches_root() {
        let gold = tree("(S (NP (D the) (N dog)) (VP (V barks)))");
        let pred = tree("(S (D the) (N dog) (V barks))");
        let s = bracket_score(&gold, &pred).unwrap();
        assert_eq!(s.matched, 1);
        assert!((s.f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn leaf_count_mismatch() {
        let a = tree("(S (A a) (B b))");
        let b = tree("(S (A a))");
        assert_eq!(
            bracket_score(&a, &b),
            Err(MetricsError::LeafCountMismatch { gold: 2, pred: 1 })
        );
    }

    #[test]
    fn unary_duplicates_are_multiset_members() {
        let gold = tree("(S (S (A a) (B b)))");
        let pred = tree("(S (A a) (B b))");
        let s = bracket_score(&gold, &pred).unwrap();
        assert_eq!((s.matched, s.gold_total, s.pred_total), (1, 2, 1));
        let joined = tree("(S+S (A a) (B b))");
        let s = bracket_score(&gold, &joined).unwrap();
        assert_eq!(s.f1, 1.0);
    }

    #[test]
    fn collins_options() {
        let gold = tree("(S (NP-SBJ (D the) (N dog)) (VP (V barks)) (. .))");
        let pred = tree("(S (NP (D the) (N dog)) (VP (V barks) (. .)))");
        assert!(bracket_score(&gold, &pred).unwrap().f1 < 1.0);
        let s = bracket_score_with(&gold, &pred, &EvalOptions::collins()).unwrap();
        assert_eq!(s.f1, 1.0);
    }

    fn encoded(ns: &[&str]) -> EncodedSentence {
        let len = ns.len();
        EncodedSentence {
            sentence: Sentence::new(vec!["w".into(); len], vec!["P".into(); len]).unwrap(),
            labels: ns
                .iter()
                .map(|n| TagLabel {
                    n: n.parse().unwrap(),
                    c: Some("S".into()),
                    u: String::new(),
                })
                .collect(),
            scheme: crate::encodings::Scheme::Relative,
        }
    }

    #[test]
    fn per_n_identity_and_confusion() {
        let gold = vec![encoded(&["r+2", "r-3", "DUMMY"])];
        let scores = per_n_f1(&gold, &gold).unwrap();
        assert!(scores.values().all(|s| s.f1 == 1.0));

        let pred = vec![encoded(&["r+2", "r-2", "DUMMY"])];
        let scores = per_n_f1(&gold, &pred).unwrap();
        assert_eq!(scores[&NComponent::Relative(-3)].f1, 0.0);
        assert_eq!(scores[&NComponent::Relative(-2)].precision, 0.0);
        assert_eq!(scores[&NComponent::Relative(2)].f1, 1.0);

        assert!(matches!(
            per_n_f1(&gold, &[encoded(&["r+1", "DUMMY"])]),
            Err(MetricsError::SentenceLengthMismatch { index: 0, .. })
        ));
        assert!(per_n_f1(&gold, &[]).is_err());
    }

    #[test]
    fn label_space_counts() {
        let sentence = EncodedSentence {
            sentence: Sentence::new(vec!["a".into(), "b".into()], vec!["P".into(), "P".into()])
                .unwrap(),
            labels: vec![
                "r+2~NP~NONE".parse().unwrap(),
                "DUMMY~DUMMY~NONE".parse().unwrap(),
            ],
            scheme: crate::encodings::Scheme::Relative,
        };
        let full = label_space_stats(std::slice::from_ref(&sentence), false);
        assert_eq!(full.total_distinct, 2);
        let decomposed = label_space_stats(&[sentence], true);
        assert_eq!(decomposed.total_distinct, 5);
        assert_eq!(decomposed.component_sizes, [2, 2, 1]);
        assert_eq!(full.rare_fraction(5), 1.0);
        assert_eq!(LabelSpaceStats::default().rare_fraction(5), 0.0);
    }
}
