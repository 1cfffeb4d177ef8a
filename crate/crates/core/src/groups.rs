//! Functional object groups: category pairs whose members are expected to
//! sit close together (bed and nightstand, desk and chair, ...).

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::vocab::normalize_category;

const DEFAULT_GROUPS: &str = include_str!("../data/functional_groups.json");

#[derive(Serialize, Deserialize)]
struct GroupsFile {
    pairs: Vec<(String, String)>,
}

/// Symmetric set of category pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FunctionalGroups {
    pairs: BTreeSet<(String, String)>,
}

impl FunctionalGroups {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: AsRef<str>,
        B: AsRef<str>,
    {
        let mut g = Self::new();
        for (a, b) in pairs {
            g.insert(a.as_ref(), b.as_ref());
        }
        g
    }

    pub fn insert(&mut self, a: &str, b: &str) {
        let (a, b) = (normalize_category(a), normalize_category(b));
        self.pairs.insert((a.clone(), b.clone()));
        self.pairs.insert((b, a));
    }

    pub fn contains(&self, a: &str, b: &str) -> bool {
        self.pairs.contains(&(normalize_category(a), normalize_category(b)))
    }

    pub fn len(&self) -> usize {
        self.pairs.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GroupsFile = serde_json::from_str(text)?;
        Ok(Self::from_pairs(file.pairs))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let pairs = self
            .pairs
            .iter()
            .filter(|(a, b)| a <= b)
            .cloned()
            .collect();
        Ok(serde_json::to_string_pretty(&GroupsFile { pairs })?)
    }
}

impl Default for GroupsFile {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_GROUPS).expect("bundled functional groups parse")
    }
}

/// The bundled default groups.
pub fn default_groups() -> FunctionalGroups {
    FunctionalGroups::from_pairs(GroupsFile::default().pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn membership_is_symmetric() {
        let g = default_groups();
        assert!(g.contains("double bed", "nightstand"));
        assert!(g.contains("nightstand", "double_bed"));
        assert!(g.contains("dining chair", "dining table"));
        assert!(!g.contains("double bed", "dining chair"));
    }

    #[test]
    fn json_round_trip() {
        let g = default_groups();
        let back = FunctionalGroups::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(g, back);
    }
}
