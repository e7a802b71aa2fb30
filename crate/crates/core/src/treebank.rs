//! Bracketed constituent trees: reading, writing and light normalization.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Separator used when unary chains are joined into a single label.
pub const CHAIN_SEPARATOR: char = '+';

/// An n-ary constituent tree.
///
/// Leaves are preterminals: they carry the POS tag and the word together,
/// so a `Leaf` always spans exactly one token.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tree {
    Internal { label: String, children: Vec<Tree> },
    Leaf { pos: String, word: String },
}

impl Tree {
    pub fn internal(label: impl Into<String>, children: Vec<Tree>) -> Self {
        assert!(!children.is_empty(), "internal node without children");
        Tree::Internal {
            label: label.into(),
            children,
        }
    }

    pub fn leaf(pos: impl Into<String>, word: impl Into<String>) -> Self {
        Tree::Leaf {
            pos: pos.into(),
            word: word.into(),
        }
    }

    /// Node label: the nonterminal for internal nodes, the POS tag for leaves.
    pub fn label(&self) -> &str {
        match self {
            Tree::Internal { label, .. } => label,
            Tree::Leaf { pos, .. } => pos,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Tree::Leaf { .. })
    }

    pub fn children(&self) -> &[Tree] {
        match self {
            Tree::Internal { children, .. } => children,
            Tree::Leaf { .. } => &[],
        }
    }

    /// Leaves in left-to-right order as `(pos, word)` pairs.
    pub fn leaves(&self) -> Vec<(&str, &str)> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<(&'a str, &'a str)>) {
        match self {
            Tree::Internal { children, .. } => {
                for child in children {
                    child.collect_leaves(out);
                }
            }
            Tree::Leaf { pos, word } => out.push((pos, word)),
        }
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            Tree::Internal { children, .. } => children.iter().map(Tree::num_leaves).sum(),
            Tree::Leaf { .. } => 1,
        }
    }

    /// Height in nodes: a preterminal has depth 1, an internal node one more
    /// than its deepest child. Words are not counted.
    pub fn depth(&self) -> usize {
        match self {
            Tree::Internal { children, .. } => {
                1 + children.iter().map(Tree::depth).max().unwrap_or(0)
            }
            Tree::Leaf { .. } => 1,
        }
    }

    /// The tagged sentence under this tree.
    pub fn sentence(&self) -> Sentence {
        let (pos, words) = self
            .leaves()
            .into_iter()
            .map(|(p, w)| (p.to_owned(), w.to_owned()))
            .unzip();
        Sentence { words, pos }
    }

    /// Strip functional annotations and coindexation from nonterminals,
    /// e.g. `NP-SBJ-1` becomes `NP` and `PP=2` becomes `PP`. Labels that
    /// start with a dash (`-NONE-`, `-LRB-`) are left alone. POS tags are
    /// never touched.
    pub fn strip_functional(&self) -> Tree {
        match self {
            Tree::Internal { label, children } => Tree::Internal {
                label: strip_label(label).to_owned(),
                children: children.iter().map(Tree::strip_functional).collect(),
            },
            leaf => leaf.clone(),
        }
    }
}

fn strip_label(label: &str) -> &str {
    if label.starts_with('-') {
        return label;
    }
    match label.find(['-', '=']) {
        Some(0) | None => label,
        Some(idx) => &label[..idx],
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tree::Internal { label, children } => {
                write!(f, "({}", label)?;
                for child in children {
                    write!(f, " {}", child)?;
                }
                write!(f, ")")
            }
            Tree::Leaf { pos, word } => write!(f, "({} {})", pos, word),
        }
    }
}

/// Single-line bracketed form with single spaces and no trailing newline.
pub fn serialize(tree: &Tree) -> String {
    tree.to_string()
}

/// A tokenized sentence with one POS tag per token.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sentence {
    pub words: Vec<String>,
    pub pos: Vec<String>,
}

impl Sentence {
    pub fn new(words: Vec<String>, pos: Vec<String>) -> Result<Self, SentenceError> {
        if words.is_empty() {
            return Err(SentenceError::Empty);
        }
        if words.len() != pos.len() {
            return Err(SentenceError::LengthMismatch {
                words: words.len(),
                tags: pos.len(),
            });
        }
        Ok(Sentence { words, pos })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum SentenceError {
    #[error("sentence is empty")]
    Empty,
    #[error("{words} words but {tags} POS tags")]
    LengthMismatch { words: usize, tags: usize },
}

/// Error produced while reading bracketed trees. Offsets are byte offsets
/// into the input text.
#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("unexpected end of input at byte {offset}: unbalanced parentheses")]
    UnexpectedEof { offset: usize },
    #[error("unmatched ')' at byte {offset}")]
    UnmatchedClose { offset: usize },
    #[error("empty constituent at byte {offset}")]
    EmptyConstituent { offset: usize },
    #[error("constituent '{label}' at byte {offset} has no children")]
    NoChildren { label: String, offset: usize },
    #[error("expected '(' at byte {offset}, found '{found}'")]
    ExpectedOpen { offset: usize, found: String },
    #[error("preterminal '{pos}' at byte {offset} has more than one word")]
    MultiWordLeaf { pos: String, offset: usize },
    #[error("constituent at byte {offset} mixes words and subtrees")]
    MixedChildren { offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::UnexpectedEof { offset }
            | ParseError::UnmatchedClose { offset }
            | ParseError::EmptyConstituent { offset }
            | ParseError::NoChildren { offset, .. }
            | ParseError::ExpectedOpen { offset, .. }
            | ParseError::MultiWordLeaf { offset, .. }
            | ParseError::MixedChildren { offset } => *offset,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Token<'a> {
    Open,
    Close,
    Atom(&'a str),
}

struct Lexer<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Lexer { text, pos: 0 }
    }

    fn skip_ws(&mut self) {
        let rest = &self.text[self.pos..];
        let trimmed = rest.trim_start();
        self.pos += rest.len() - trimmed.len();
    }

    /// Next token and its starting offset.
    fn next(&mut self) -> Option<(usize, Token<'a>)> {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.text[start..];
        let c = rest.chars().next()?;
        match c {
            '(' => {
                self.pos += 1;
                Some((start, Token::Open))
            }
            ')' => {
                self.pos += 1;
                Some((start, Token::Close))
            }
            _ => {
                let len = rest
                    .find(|c: char| c.is_whitespace() || c == '(' || c == ')')
                    .unwrap_or(rest.len());
                self.pos += len;
                Some((start, Token::Atom(&rest[..len])))
            }
        }
    }

    fn peek(&mut self) -> Option<(usize, Token<'a>)> {
        let save = self.pos;
        let tok = self.next();
        self.pos = save;
        tok
    }
}

/// Read every top-level bracketed tree in `text`.
///
/// An unlabeled outer wrapper with a single child, as found in raw PTB
/// files (`( (S ...) )`), is removed.
pub fn parse_bracketed(text: &str) -> Result<Vec<Tree>, ParseError> {
    let mut lexer = Lexer::new(text);
    let mut trees = Vec::new();
    while let Some((offset, tok)) = lexer.peek() {
        match tok {
            Token::Open => trees.push(parse_top(&mut lexer)?),
            Token::Close => return Err(ParseError::UnmatchedClose { offset }),
            Token::Atom(a) => {
                return Err(ParseError::ExpectedOpen {
                    offset,
                    found: a.to_owned(),
                })
            }
        }
    }
    Ok(trees)
}

fn parse_top(lexer: &mut Lexer<'_>) -> Result<Tree, ParseError> {
    let (open_at, _) = lexer.next().expect("peeked an opening bracket");
    match lexer.peek() {
        // Unlabeled wrapper: "( (S ...) )".
        Some((_, Token::Open)) => {
            let mut children = Vec::new();
            while let Some((_, Token::Open)) = lexer.peek() {
                children.push(parse_node(lexer)?);
            }
            expect_close(lexer)?;
            if children.len() == 1 {
                Ok(children.pop().unwrap())
            } else {
                Ok(Tree::Internal {
                    label: String::new(),
                    children,
                })
            }
        }
        _ => parse_after_open(lexer, open_at),
    }
}

fn parse_node(lexer: &mut Lexer<'_>) -> Result<Tree, ParseError> {
    match lexer.next() {
        Some((offset, Token::Open)) => parse_after_open(lexer, offset),
        Some((offset, Token::Close)) => Err(ParseError::UnmatchedClose { offset }),
        Some((offset, Token::Atom(a))) => Err(ParseError::ExpectedOpen {
            offset,
            found: a.to_owned(),
        }),
        None => Err(ParseError::UnexpectedEof {
            offset: lexer.text.len(),
        }),
    }
}

fn parse_after_open(lexer: &mut Lexer<'_>, open_at: usize) -> Result<Tree, ParseError> {
    let label = match lexer.next() {
        Some((_, Token::Atom(a))) => a.to_owned(),
        Some((_, Token::Close)) => return Err(ParseError::EmptyConstituent { offset: open_at }),
        Some((offset, Token::Open)) => {
            return Err(ParseError::ExpectedOpen {
                offset,
                found: "(".to_owned(),
            })
        }
        None => {
            return Err(ParseError::UnexpectedEof {
                offset: lexer.text.len(),
            })
        }
    };

    match lexer.peek() {
        Some((_, Token::Atom(word))) => {
            lexer.next();
            match lexer.peek() {
                Some((_, Token::Close)) => {
                    lexer.next();
                    Ok(Tree::Leaf {
                        pos: label,
                        word: word.to_owned(),
                    })
                }
                Some((_, Token::Atom(_))) => Err(ParseError::MultiWordLeaf {
                    pos: label,
                    offset: open_at,
                }),
                Some((_, Token::Open)) => Err(ParseError::MixedChildren { offset: open_at }),
                None => Err(ParseError::UnexpectedEof {
                    offset: lexer.text.len(),
                }),
            }
        }
        Some((_, Token::Close)) => Err(ParseError::NoChildren {
            label,
            offset: open_at,
        }),
        Some((_, Token::Open)) => {
            let mut children = Vec::new();
            loop {
                match lexer.peek() {
                    Some((_, Token::Open)) => children.push(parse_node(lexer)?),
                    Some((_, Token::Close)) => {
                        lexer.next();
                        break;
                    }
                    Some((_, Token::Atom(_))) => {
                        return Err(ParseError::MixedChildren { offset: open_at })
                    }
                    None => {
                        return Err(ParseError::UnexpectedEof {
                            offset: lexer.text.len(),
                        })
                    }
                }
            }
            Ok(Tree::Internal { label, children })
        }
        None => Err(ParseError::UnexpectedEof {
            offset: lexer.text.len(),
        }),
    }
}

fn expect_close(lexer: &mut Lexer<'_>) -> Result<(), ParseError> {
    match lexer.next() {
        Some((_, Token::Close)) => Ok(()),
        Some((offset, Token::Atom(_))) => Err(ParseError::MixedChildren { offset }),
        Some((offset, Token::Open)) => Err(ParseError::ExpectedOpen {
            offset,
            found: "(".to_owned(),
        }),
        None => Err(ParseError::UnexpectedEof {
            offset: lexer.text.len(),
        }),
    }
}

/// Convert a byte offset into a 1-based `(line, column)` pair.
pub fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(offset, |nl| offset - nl - 1) + 1;
    (line, col)
}
