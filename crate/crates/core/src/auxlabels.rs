//! Auxiliary supervision tracks: neighbouring `n` labels and syntactic
//! distances.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encodings::{EncodedSentence, Skeleton};
use crate::treebank::Tree;

/// Value used where a track has nothing to say for a token.
pub const PAD: &str = "PAD";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AuxKind {
    /// The `n` label of the token `k` positions away.
    ShiftedN(i64),
    /// Split priority of the lowest common ancestor with the next token.
    SyntacticDistance,
}

impl fmt::Display for AuxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AuxKind::ShiftedN(k) => write!(f, "n{:+}", k),
            AuxKind::SyntacticDistance => f.write_str("dist"),
        }
    }
}

impl FromStr for AuxKind {
    type Err = AuxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "dist" {
            return Ok(AuxKind::SyntacticDistance);
        }
        let k: i64 = s
            .strip_prefix('n')
            .filter(|v| v.starts_with(['+', '-']))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| AuxError::UnknownKind(s.to_owned()))?;
        if k == 0 {
            return Err(AuxError::ZeroShift);
        }
        Ok(AuxKind::ShiftedN(k))
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum AuxError {
    #[error("a shift of 0 duplicates the main task")]
    ZeroShift,
    #[error("unknown auxiliary task '{0}', expected n+K, n-K or dist")]
    UnknownKind(String),
}

/// One auxiliary label per token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxTrack {
    pub kind: AuxKind,
    pub values: Vec<String>,
}

/// `values[t]` is the `n` token of `labels[t + k]`, or [`PAD`] when that
/// position falls outside the sentence.
pub fn shifted_n(encoded: &EncodedSentence, k: i64) -> Result<AuxTrack, AuxError> {
    if k == 0 {
        return Err(AuxError::ZeroShift);
    }
    let len = encoded.labels.len() as i64;
    let values = (0..len)
        .map(|t| {
            let source = t + k;
            if (0..len).contains(&source) {
                encoded.labels[source as usize].n.to_string()
            } else {
                PAD.to_owned()
            }
        })
        .collect();
    Ok(AuxTrack {
        kind: AuxKind::ShiftedN(k),
        values,
    })
}

/// Syntactic distance of each token: the split priority of its lowest
/// common ancestor with the next token, computed on the collapsed tree.
/// Tokens, together with their preterminal and leaf unary chain, have
/// priority 0. The last token gets [`PAD`].
pub fn syntactic_distances(tree: &Tree) -> AuxTrack {
    let (_, pairs) = Skeleton::from_tree(tree).split_priorities();
    let mut values: Vec<String> = pairs.into_iter().map(|p| p.to_string()).collect();
    values.push(PAD.to_owned());
    AuxTrack {
        kind: AuxKind::SyntacticDistance,
        values,
    }
}

/// Priority of the root of the collapsed tree.
pub fn root_priority(tree: &Tree) -> usize {
    Skeleton::from_tree(tree).split_priorities().0
}

/// Cap distance values at `cap`; `PAD` is left alone.
pub fn cap_distances(track: &mut AuxTrack, cap: usize) {
    if track.kind != AuxKind::SyntacticDistance {
        return;
    }
    for value in &mut track.values {
        if let Ok(d) = value.parse::<usize>() {
            if d > cap {
                *value = cap.to_string();
            }
        }
    }
}

/// Build the track of the given kind.
pub fn track(kind: AuxKind, tree: &Tree, encoded: &EncodedSentence) -> AuxTrack {
    match kind {
        AuxKind::ShiftedN(k) => shifted_n(encoded, k).expect("AuxKind never holds a zero shift"),
        AuxKind::SyntacticDistance => syntactic_distances(tree),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encodings::encode_relative;
    use crate::treebank::parse_bracketed;

    fn tree(s: &str) -> Tree {
        parse_bracketed(s).unwrap().remove(0)
    }

    #[test]
    fn shifts() {
        let enc = encode_relative(&tree("(S (NP (D the) (N dog)) (VP (V barks)))"));
        assert_eq!(shifted_n(&enc, 1).unwrap().values, ["r-1", "DUMMY", "PAD"]);
        assert_eq!(shifted_n(&enc, -1).unwrap().values, ["PAD", "r+2", "r-1"]);
        assert_eq!(shifted_n(&enc, 0), Err(AuxError::ZeroShift));

        let single = encode_relative(&tree("(X (N a))"));
        assert_eq!(shifted_n(&single, 1).unwrap().values, ["PAD"]);
    }

    #[test]
    fn shifting_back_recovers_interior() {
        let enc = encode_relative(&tree("(S (A (B b) (C c)) (D d) (E (F f) (G g)))"));
        let main: Vec<String> = enc.labels.iter().map(|l| l.n.to_string()).collect();
        let forward = shifted_n(&enc, 1).unwrap().values;
        let back = shifted_n(&enc, -1).unwrap().values;
        for t in 1..main.len() - 1 {
            assert_eq!(forward[t - 1], main[t]);
            assert_eq!(back[t + 1], main[t]);
        }
    }

    #[test]
    fn distances() {
        let t = tree("(S (NP (D the) (N dog)) (VP (V barks)))");
        // VP dominates a single preterminal, so it is part of the token.
        assert_eq!(syntactic_distances(&t).values, ["1", "2", "PAD"]);
        assert_eq!(root_priority(&t), 2);

        let flat = tree("(S (A a) (B b) (C c))");
        assert_eq!(syntactic_distances(&flat).values, ["1", "1", "PAD"]);

        let t = tree("(S (A a) (VP (V saw) (NP (D the) (N dog))))");
        assert_eq!(syntactic_distances(&t).values, ["3", "2", "1", "PAD"]);
        assert_eq!(root_priority(&t), 3);
    }

    #[test]
    fn kinds_parse() {
        assert_eq!("n+1".parse::<AuxKind>().unwrap(), AuxKind::ShiftedN(1));
        assert_eq!("n-1".parse::<AuxKind>().unwrap(), AuxKind::ShiftedN(-1));
        assert_eq!(
            "dist".parse::<AuxKind>().unwrap(),
            AuxKind::SyntacticDistance
        );
        assert_eq!(AuxKind::ShiftedN(-2).to_string(), "n-2");
        assert!("n1".parse::<AuxKind>().is_err());
        assert_eq!("n+0".parse::<AuxKind>(), Err(AuxError::ZeroShift));
    }

    #[test]
    fn capping() {
        let mut track = syntactic_distances(&tree("(S (A a) (VP (V saw) (NP (D the) (N dog))))"));
        cap_distances(&mut track, 2);
        assert_eq!(track.values, ["2", "2", "1", "PAD"]);
    }
}
