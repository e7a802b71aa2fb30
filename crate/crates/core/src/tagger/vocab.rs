use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Dense string ↔ id mapping, ids in insertion order from 0.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    entries: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Id of `entry`, inserting it if needed.
    pub fn add(&mut self, entry: &str) -> usize {
        if let Some(&id) = self.index.get(entry) {
            return id;
        }
        let id = self.entries.len();
        self.entries.push(entry.to_owned());
        self.index.insert(entry.to_owned(), id);
        id
    }

    pub fn id(&self, entry: &str) -> Option<usize> {
        self.index.get(entry).copied()
    }

    pub fn get(&self, id: usize) -> &str {
        &self.entries[id]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }
}

impl FromIterator<String> for Vocab {
    fn from_iter<I: IntoIterator<Item = String>>(iter: I) -> Self {
        let mut vocab = Vocab::new();
        for entry in iter {
            vocab.add(&entry);
        }
        vocab
    }
}

impl Serialize for Vocab {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.entries.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let entries = Vec::<String>::deserialize(deserializer)?;
        let vocab: Vocab = entries.iter().cloned().collect();
        if vocab.len() != entries.len() {
            return Err(serde::de::Error::custom("duplicate vocabulary entry"));
        }
        Ok(vocab)
    }
}

/// Input vocabulary (words or POS tags) with reserved ids for unknown
/// items and sentence padding. Reserved ids are positional, so a real
/// entry spelled like a reserved marker still gets its own id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputVocab {
    entries: Vocab,
}

impl InputVocab {
    pub const UNKNOWN: usize = 0;
    pub const BEGIN: usize = 1;
    pub const END: usize = 2;
    const RESERVED: usize = 3;

    pub fn add(&mut self, entry: &str) -> usize {
        self.entries.add(entry) + Self::RESERVED
    }

    pub fn id(&self, entry: &str) -> usize {
        self.entries
            .id(entry)
            .map_or(Self::UNKNOWN, |id| id + Self::RESERVED)
    }

    /// Number of ids, reserved ones included.
    pub fn len(&self) -> usize {
        self.entries.len() + Self::RESERVED
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}
