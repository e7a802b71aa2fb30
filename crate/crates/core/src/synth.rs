//! Seeded synthetic treebanks.
//!
//! [`random_tree`] draws arbitrary shapes over a caller-supplied nonterminal
//! alphabet and is meant for property tests: it produces unary chains of
//! every kind and deep constituents that close several levels at once.
//! [`Pcfg`] samples from a small English-like grammar whose words carry
//! enough signal for a tagger to learn from.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::treebank::Tree;

const POS_TAGS: &[&str] = &["T0", "T1", "T2", "T3", "T4", "T5", "T6", "T7"];

/// Default alphabet for property tests.
pub const DEFAULT_ALPHABET: &[&str] = &["S", "NP", "VP", "PP", "ADJP", "SBAR", "ADVP", "QP"];

/// Draw a random tree.
///
/// The tree has at most `max_leaves` words and its [`Tree::depth`] is at
/// most `max_depth`. The same seed always yields the same tree.
pub fn random_tree(seed: u64, max_leaves: usize, max_depth: usize, alphabet: &[&str]) -> Tree {
    assert!(max_leaves >= 1, "max_leaves must be at least 1");
    assert!(max_depth >= 1, "max_depth must be at least 1");
    assert!(!alphabet.is_empty(), "nonterminal alphabet is empty");

    let mut gen = Generator {
        rng: ChaCha8Rng::seed_from_u64(seed),
        alphabet,
        next_word: 0,
    };
    let leaves = if max_depth == 1 {
        1
    } else {
        gen.rng.random_range(1..=max_leaves)
    };
    gen.subtree(leaves, max_depth)
}

struct Generator<'a> {
    rng: ChaCha8Rng,
    alphabet: &'a [&'a str],
    next_word: usize,
}

impl Generator<'_> {
    fn label(&mut self) -> String {
        (*self.alphabet.choose(&mut self.rng).unwrap()).to_owned()
    }

    fn preterminal(&mut self) -> Tree {
        let pos = *POS_TAGS.choose(&mut self.rng).unwrap();
        let word = format!("w{}", self.next_word);
        self.next_word += 1;
        Tree::leaf(pos, word)
    }

    /// Length of a unary chain to put on top of a node, bounded by `room`.
    fn chain_length(&mut self, room: usize, p_start: f64) -> usize {
        let mut len = 0;
        if room > 0 && self.rng.random_bool(p_start) {
            len = 1;
            while len < room && self.rng.random_bool(0.35) {
                len += 1;
            }
        }
        len
    }

    fn wrap(&mut self, mut tree: Tree, chain: usize) -> Tree {
        for _ in 0..chain {
            let label = self.label();
            tree = Tree::internal(label, vec![tree]);
        }
        tree
    }

    fn subtree(&mut self, leaves: usize, budget: usize) -> Tree {
        debug_assert!(budget >= 1);
        if leaves == 1 {
            let chain = self.chain_length(budget - 1, 0.35);
            let leaf = self.preterminal();
            return self.wrap(leaf, chain);
        }
        debug_assert!(budget >= 2);

        // Intermediate unary chain: must leave room for this node and its
        // preterminals.
        let chain = self.chain_length(budget - 2, 0.12);
        let budget = budget - chain;

        let children = if budget == 2 {
            (0..leaves).map(|_| self.preterminal()).collect()
        } else {
            let parts = self.split(leaves);
            parts
                .into_iter()
                .map(|size| self.subtree(size, budget - 1))
                .collect()
        };
        let label = self.label();
        let node = Tree::internal(label, children);
        self.wrap(node, chain)
    }

    /// Split `leaves` (≥ 2) into 2..=4 positive parts. Uneven splits are
    /// favoured so that long spines, and therefore deep closings, show up.
    fn split(&mut self, leaves: usize) -> Vec<usize> {
        let max_parts = leaves.min(4);
        let parts = self.rng.random_range(2..=max_parts);
        let mut sizes = vec![1; parts];
        let mut rest = leaves - parts;
        match self.rng.random_range(0..3) {
            // Heavy first child: long left spine closed abruptly.
            0 => sizes[0] += rest,
            // Heavy last child: right-branching.
            1 => sizes[parts - 1] += rest,
            _ => {
                while rest > 0 {
                    let i = self.rng.random_range(0..parts);
                    sizes[i] += 1;
                    rest -= 1;
                }
            }
        }
        sizes
    }
}

/// A right-hand side: symbols paired with a weight.
struct Rule {
    lhs: &'static str,
    rhs: &'static [&'static str],
    weight: f64,
    recursive: bool,
}

const fn rule(
    lhs: &'static str,
    rhs: &'static [&'static str],
    weight: f64,
    recursive: bool,
) -> Rule {
    Rule {
        lhs,
        rhs,
        weight,
        recursive,
    }
}

const GRAMMAR: &[Rule] = &[
    rule("S", &["NP", "VP"], 0.75, false),
    rule("S", &["ADVP", "NP", "VP"], 0.1, false),
    rule("S", &["S", "CC", "S"], 0.05, true),
    rule("S", &["NP", "VP", "PU"], 0.1, false),
    rule("NP", &["DT", "NN"], 0.35, false),
    rule("NP", &["DT", "JJ", "NN"], 0.15, false),
    rule("NP", &["NNP"], 0.15, false),
    rule("NP", &["PRP"], 0.1, false),
    rule("NP", &["NP", "PP"], 0.15, true),
    rule("NP", &["DT", "ADJP", "NN"], 0.1, true),
    rule("ADJP", &["RB", "JJ"], 1.0, false),
    rule("VP", &["VB", "NP"], 0.35, false),
    rule("VP", &["VB"], 0.15, false),
    rule("VP", &["VB", "NP", "PP"], 0.2, true),
    rule("VP", &["MD", "VP"], 0.1, true),
    rule("VP", &["VB", "SBAR"], 0.1, true),
    rule("VP", &["VB", "PP"], 0.1, true),
    rule("PP", &["IN", "NP"], 1.0, true),
    rule("SBAR", &["C", "S"], 1.0, true),
    rule("ADVP", &["RB"], 1.0, false),
];

const LEXICON: &[(&str, &[&str])] = &[
    (
        "DT",
        &["the", "a", "this", "that", "every", "some", "no", "each"],
    ),
    (
        "NN",
        &[
            "dog", "cat", "park", "house", "man", "woman", "tree", "river", "book", "car",
            "garden", "city", "child", "teacher", "window", "table", "letter", "road", "hill",
            "song", "ship", "bird", "idea", "market", "bridge", "story", "kitchen", "field",
            "horse", "lamp",
        ],
    ),
    (
        "NNP",
        &[
            "Anna", "Boris", "Clara", "Dmitri", "Elena", "Farid", "Greta", "Hugo", "Ines", "Jonas",
            "Kira", "Lars",
        ],
    ),
    ("PRP", &["she", "he", "they", "we", "it", "you"]),
    (
        "JJ",
        &[
            "old", "green", "quiet", "small", "bright", "heavy", "strange", "warm", "tall",
            "empty", "proud", "slow",
        ],
    ),
    (
        "VB",
        &[
            "saw", "liked", "found", "watched", "built", "carried", "painted", "followed",
            "visited", "opened", "heard", "sold", "wrote", "crossed", "climbed", "noticed", "sang",
            "slept", "laughed", "waited",
        ],
    ),
    ("MD", &["will", "could", "might", "should", "must"]),
    (
        "IN",
        &[
            "in", "near", "with", "behind", "under", "over", "from", "beside", "across",
        ],
    ),
    ("C", &["that", "because", "while", "if", "although"]),
    ("CC", &["and", "but", "or"]),
    (
        "RB",
        &[
            "very", "quite", "really", "rather", "never", "often", "soon",
        ],
    ),
    ("PU", &[".", "!"]),
];

/// A small probabilistic grammar over English-like words.
#[derive(Clone, Debug)]
pub struct Pcfg {
    /// Recursive rules are disabled below this depth.
    pub max_depth: usize,
    /// Samples longer than this are rejected and redrawn.
    pub max_leaves: usize,
}

impl Default for Pcfg {
    fn default() -> Self {
        Pcfg {
            max_depth: 8,
            max_leaves: 30,
        }
    }
}

impl Pcfg {
    pub fn sample(&self, rng: &mut impl Rng) -> Tree {
        loop {
            let tree = self.expand("S", 1, rng);
            if tree.num_leaves() <= self.max_leaves {
                return tree;
            }
        }
    }

    /// `count` trees drawn from one seeded stream.
    pub fn corpus(&self, seed: u64, count: usize) -> Vec<Tree> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| self.sample(&mut rng)).collect()
    }

    fn expand(&self, symbol: &str, depth: usize, rng: &mut impl Rng) -> Tree {
        if let Some((_, words)) = LEXICON.iter().find(|(pos, _)| *pos == symbol) {
            return Tree::leaf(symbol, *words.choose(rng).unwrap());
        }

        let allow_recursion = depth < self.max_depth;
        let mut candidates: Vec<&Rule> = GRAMMAR
            .iter()
            .filter(|r| r.lhs == symbol && (allow_recursion || !r.recursive))
            .collect();
        if candidates.is_empty() {
            // PP and SBAR only have recursive rules; their children stop.
            candidates = GRAMMAR.iter().filter(|r| r.lhs == symbol).collect();
        }
        let total: f64 = candidates.iter().map(|r| r.weight).sum();
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = candidates[candidates.len() - 1];
        for r in &candidates {
            if pick < r.weight {
                chosen = r;
                break;
            }
            pick -= r.weight;
        }

        let children = chosen
            .rhs
            .iter()
            .map(|child| self.expand(child, depth + 1, rng))
            .collect();
        Tree::internal(symbol, children)
    }
}
