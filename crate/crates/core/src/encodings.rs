//! Tree linearizations: one `(n, c, u)` label per token.
//!
//! * `n` is the number of nonterminal levels a token shares with the next
//!   token, stored either relative to the previous token's count or on a
//!   top-down absolute scale.
//! * `c` is the label of the lowest common ancestor of the two tokens.
//! * `u` is the unary chain sitting directly on top of the token's
//!   preterminal.
//!
//! The last token has no successor and gets a dummy `n` and `c`.
//!
//! Encoding works on a collapsed view of the tree: chains of internal nodes
//! that each have a single internal child are merged into one node whose
//! label joins the chain with `+`, and nonterminals that dominate a single
//! preterminal are folded into the token's `u`. In that view every
//! remaining internal node has at least two children, which is what makes
//! the label sequence an exact description of the tree.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::treebank::{Sentence, Tree, CHAIN_SEPARATOR};

/// Largest absolute level at which the dynamic encoder may switch scales.
pub const DYNAMIC_MAX_LEVEL: usize = 3;
/// The relative value must drop at least this far for the switch.
pub const DYNAMIC_MAX_RELATIVE: i64 = -2;
/// Label given to nodes whose nonterminal is unknown after decoding.
pub const PLACEHOLDER_LABEL: &str = "X";

pub const DUMMY: &str = "DUMMY";
pub const NO_UNARY: &str = "NONE";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    Relative,
    Absolute,
    Dynamic,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Relative, Scheme::Absolute, Scheme::Dynamic];
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Relative => "relative",
            Scheme::Absolute => "absolute",
            Scheme::Dynamic => "dynamic",
        })
    }
}

impl FromStr for Scheme {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relative" => Ok(Scheme::Relative),
            "absolute" => Ok(Scheme::Absolute),
            "dynamic" => Ok(Scheme::Dynamic),
            _ => Err(LabelError::Scheme(s.to_owned())),
        }
    }
}

/// The `n` part of a label. The scale is part of the value, so decoding
/// never needs to know which encoder produced a label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NComponent {
    Relative(i64),
    Absolute(usize),
    Dummy,
}

impl NComponent {
    pub fn is_dummy(&self) -> bool {
        matches!(self, NComponent::Dummy)
    }
}

impl fmt::Display for NComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NComponent::Relative(k) => write!(f, "r{:+}", k),
            NComponent::Absolute(k) => write!(f, "a{}", k),
            NComponent::Dummy => f.write_str(DUMMY),
        }
    }
}

impl FromStr for NComponent {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || LabelError::NToken(s.to_owned());
        if s == DUMMY {
            return Ok(NComponent::Dummy);
        }
        if let Some(v) = s.strip_prefix('r') {
            return v.parse().map(NComponent::Relative).map_err(|_| bad());
        }
        if let Some(v) = s.strip_prefix('a') {
            let level: usize = v.parse().map_err(|_| bad())?;
            if level == 0 || v.starts_with('+') {
                return Err(bad());
            }
            return Ok(NComponent::Absolute(level));
        }
        Err(bad())
    }
}

/// One token's label.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TagLabel {
    pub n: NComponent,
    /// Lowest common ancestor label; `None` is the dummy.
    pub c: Option<String>,
    /// `+`-joined leaf unary chain, empty when there is none.
    pub u: String,
}

impl TagLabel {
    pub fn dummy(u: impl Into<String>) -> Self {
        TagLabel {
            n: NComponent::Dummy,
            c: None,
            u: u.into(),
        }
    }

    /// Surface form of the `c` component.
    pub fn c_token(&self) -> &str {
        self.c.as_deref().unwrap_or(DUMMY)
    }

    /// Surface form of the `u` component.
    pub fn u_token(&self) -> &str {
        if self.u.is_empty() {
            NO_UNARY
        } else {
            &self.u
        }
    }

    pub fn parse_c(token: &str) -> Option<String> {
        (token != DUMMY).then(|| token.to_owned())
    }

    pub fn parse_u(token: &str) -> String {
        if token == NO_UNARY {
            String::new()
        } else {
            token.to_owned()
        }
    }
}

impl fmt::Display for TagLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}~{}~{}", self.n, self.c_token(), self.u_token())
    }
}

impl FromStr for TagLabel {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split('~');
        let (Some(n), Some(c), Some(u), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(LabelError::Surface(s.to_owned()));
        };
        if c.is_empty() || u.is_empty() {
            return Err(LabelError::Surface(s.to_owned()));
        }
        Ok(TagLabel {
            n: n.parse()?,
            c: TagLabel::parse_c(c),
            u: TagLabel::parse_u(u),
        })
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum LabelError {
    #[error("malformed label '{0}', expected <n>~<c>~<u>")]
    Surface(String),
    #[error("malformed n component '{0}'")]
    NToken(String),
    #[error("unknown encoding scheme '{0}'")]
    Scheme(String),
}

/// A sentence with one label per token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSentence {
    pub sentence: Sentence,
    pub labels: Vec<TagLabel>,
    pub scheme: Scheme,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("token pair index {index} out of range for a sentence of {len} tokens")]
    IndexOutOfRange { index: usize, len: usize },
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("cannot decode an empty sentence")]
    Empty,
    #[error("{words} words but {labels} labels")]
    LengthMismatch { words: usize, labels: usize },
}

/// Collapsed view of a tree used for encoding and decoding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Skeleton {
    Node {
        label: String,
        children: Vec<Skeleton>,
    },
    Token {
        pos: String,
        word: String,
        /// Leaf unary chain, outermost first.
        chain: Vec<String>,
    },
}

impl Skeleton {
    pub(crate) fn from_tree(tree: &Tree) -> Skeleton {
        match tree {
            Tree::Leaf { pos, word } => Skeleton::Token {
                pos: pos.clone(),
                word: word.clone(),
                chain: Vec::new(),
            },
            Tree::Internal { label, children } if children.len() == 1 => {
                match Skeleton::from_tree(&children[0]) {
                    Skeleton::Token {
                        pos,
                        word,
                        mut chain,
                    } => {
                        chain.insert(0, label.clone());
                        Skeleton::Token { pos, word, chain }
                    }
                    Skeleton::Node {
                        label: inner,
                        children,
                    } => Skeleton::Node {
                        label: format!("{label}{CHAIN_SEPARATOR}{inner}"),
                        children,
                    },
                }
            }
            Tree::Internal { label, children } => Skeleton::Node {
                label: label.clone(),
                children: children.iter().map(Skeleton::from_tree).collect(),
            },
        }
    }

    pub(crate) fn into_tree(self) -> Tree {
        match self {
            Skeleton::Token { pos, word, chain } => {
                chain
                    .into_iter()
                    .rev()
                    .fold(Tree::Leaf { pos, word }, |tree, label| Tree::Internal {
                        label,
                        children: vec![tree],
                    })
            }
            Skeleton::Node { label, children } => {
                let children: Vec<Tree> = children.into_iter().map(Skeleton::into_tree).collect();
                let mut chain = label.split(CHAIN_SEPARATOR).rev();
                let innermost = chain.next().unwrap_or_default().to_owned();
                chain.fold(
                    Tree::Internal {
                        label: innermost,
                        children,
                    },
                    |tree, label| Tree::Internal {
                        label: label.to_owned(),
                        children: vec![tree],
                    },
                )
            }
        }
    }

    /// Leaf unary chain of every token, `+`-joined.
    pub(crate) fn unary_chains(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit_tokens(&mut |chain| out.push(chain.join("+")));
        out
    }

    fn visit_tokens(&self, f: &mut impl FnMut(&[String])) {
        match self {
            Skeleton::Token { chain, .. } => f(chain),
            Skeleton::Node { children, .. } => {
                for child in children {
                    child.visit_tokens(f);
                }
            }
        }
    }

    /// For each adjacent token pair, the number of shared nonterminal levels
    /// (root = 1) and the label of their lowest common ancestor.
    ///
    /// Every pair boundary falls between two consecutive children of exactly
    /// one node, which is the pair's lowest common ancestor.
    pub(crate) fn pair_levels(&self) -> Vec<(usize, String)> {
        fn walk(node: &Skeleton, depth: usize, out: &mut Vec<(usize, String)>) {
            if let Skeleton::Node { label, children } = node {
                for (i, child) in children.iter().enumerate() {
                    if i > 0 {
                        out.push((depth, label.clone()));
                    }
                    walk(child, depth + 1, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, 1, &mut out);
        out
    }

    /// Bottom-up split priorities: tokens are 0, nodes are one more than
    /// their highest child. Returns the root priority and, per adjacent
    /// token pair, the priority of the pair's lowest common ancestor.
    pub(crate) fn split_priorities(&self) -> (usize, Vec<usize>) {
        fn walk(node: &Skeleton, out: &mut Vec<usize>) -> usize {
            match node {
                Skeleton::Token { .. } => 0,
                Skeleton::Node { children, .. } => {
                    let mut boundaries = Vec::with_capacity(children.len() - 1);
                    let mut highest = 0;
                    for (i, child) in children.iter().enumerate() {
                        if i > 0 {
                            boundaries.push(out.len());
                            out.push(0);
                        }
                        highest = highest.max(walk(child, out));
                    }
                    let priority = highest + 1;
                    for slot in boundaries {
                        out[slot] = priority;
                    }
                    priority
                }
            }
        }
        let mut out = Vec::new();
        let root = walk(self, &mut out);
        (root, out)
    }
}

/// Number of nonterminal levels shared by tokens `index` and `index + 1`
/// (0-based), and the label of their lowest common ancestor.
///
/// Preterminals and leaf unary chains do not count; the root is level 1.
pub fn common_ancestors(tree: &Tree, index: usize) -> Result<(usize, String), EncodeError> {
    let len = tree.num_leaves();
    if index + 1 >= len {
        return Err(EncodeError::IndexOutOfRange { index, len });
    }
    Ok(Skeleton::from_tree(tree).pair_levels().swap_remove(index))
}

pub fn encode(tree: &Tree, scheme: Scheme) -> EncodedSentence {
    let skeleton = Skeleton::from_tree(tree);
    let pairs = skeleton.pair_levels();
    let chains = skeleton.unary_chains();

    let mut labels = Vec::with_capacity(chains.len());
    let mut previous = 0usize;
    for (t, u) in chains.into_iter().enumerate() {
        let Some((level, lca)) = pairs.get(t) else {
            labels.push(TagLabel::dummy(u));
            continue;
        };
        let relative = *level as i64 - previous as i64;
        let n = match scheme {
            Scheme::Relative => NComponent::Relative(relative),
            Scheme::Absolute => NComponent::Absolute(*level),
            Scheme::Dynamic => {
                if *level <= DYNAMIC_MAX_LEVEL && relative <= DYNAMIC_MAX_RELATIVE {
                    NComponent::Absolute(*level)
                } else {
                    NComponent::Relative(relative)
                }
            }
        };
        labels.push(TagLabel {
            n,
            c: Some(lca.clone()),
            u,
        });
        previous = *level;
    }

    EncodedSentence {
        sentence: tree.sentence(),
        labels,
        scheme,
    }
}

pub fn encode_relative(tree: &Tree) -> EncodedSentence {
    encode(tree, Scheme::Relative)
}

pub fn encode_absolute(tree: &Tree) -> EncodedSentence {
    encode(tree, Scheme::Absolute)
}

pub fn encode_dynamic(tree: &Tree) -> EncodedSentence {
    encode(tree, Scheme::Dynamic)
}

/// Shared-level counts implied by a label sequence, after repair.
///
/// Relative values accumulate from a virtual level 0 before the first
/// token. Each count is clamped to `1..=len-1`: the root is always shared,
/// and a collapsed tree over `len` tokens has fewer than `len` levels. A
/// dummy `n` before the last token keeps the previous level.
pub fn absolute_levels(labels: &[TagLabel]) -> Vec<usize> {
    let pairs = labels.len().saturating_sub(1);
    let ceiling = pairs.max(1) as i64;
    let mut levels = Vec::with_capacity(pairs);
    let mut previous = 0i64;
    for label in &labels[..pairs] {
        let raw = match label.n {
            NComponent::Relative(k) => previous.saturating_add(k),
            NComponent::Absolute(k) => k.min(i64::MAX as usize) as i64,
            NComponent::Dummy => previous,
        };
        let level = raw.clamp(1, ceiling);
        levels.push(level as usize);
        previous = level;
    }
    levels
}

/// Rebuild a tree from a labelled sentence.
///
/// Any label sequence of the right length decodes to a well-formed tree:
/// levels are repaired by [`absolute_levels`], the first label assigned to
/// a node wins, and nodes that never receive a label are called `X`. The
/// `n` and `c` of the last token are ignored.
pub fn decode(encoded: &EncodedSentence) -> Result<Tree, DecodeError> {
    decode_labels(&encoded.sentence, &encoded.labels)
}

pub fn decode_labels(sentence: &Sentence, labels: &[TagLabel]) -> Result<Tree, DecodeError> {
    let len = sentence.words.len();
    if len == 0 {
        return Err(DecodeError::Empty);
    }
    if labels.len() != len || sentence.pos.len() != len {
        return Err(DecodeError::LengthMismatch {
            words: len,
            labels: labels.len(),
        });
    }

    let token = |t: usize| Skeleton::Token {
        pos: sentence.pos[t].clone(),
        word: sentence.words[t].clone(),
        chain: labels[t]
            .u
            .split(CHAIN_SEPARATOR)
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
            .collect(),
    };

    if len == 1 {
        return Ok(token(0).into_tree());
    }

    struct Open {
        label: Option<String>,
        children: Vec<Skeleton>,
    }
    impl Open {
        fn close(self) -> Skeleton {
            Skeleton::Node {
                label: self.label.unwrap_or_else(|| PLACEHOLDER_LABEL.to_owned()),
                children: self.children,
            }
        }
    }

    let levels = absolute_levels(labels);
    // stack[i] is the open node at level i + 1.
    let mut stack: Vec<Open> = Vec::new();
    for t in 0..len {
        let before = if t == 0 { 0 } else { levels[t - 1] };
        let after = levels.get(t).copied().unwrap_or(0);
        let attach = before.max(after);
        while stack.len() < attach {
            stack.push(Open {
                label: None,
                children: Vec::new(),
            });
        }
        stack[attach - 1].children.push(token(t));

        if t + 1 < len {
            let lca = &mut stack[after - 1];
            if lca.label.is_none() {
                let label = match labels[t].c.as_deref() {
                    Some(c) if !c.is_empty() => c,
                    _ => PLACEHOLDER_LABEL,
                };
                lca.label = Some(label.to_owned());
            }
            while stack.len() > after {
                let node = stack.pop().unwrap().close();
                stack.last_mut().unwrap().children.push(node);
            }
        }
    }
    while stack.len() > 1 {
        let node = stack.pop().unwrap().close();
        stack.last_mut().unwrap().children.push(node);
    }
    Ok(stack.pop().unwrap().close().into_tree())
}
