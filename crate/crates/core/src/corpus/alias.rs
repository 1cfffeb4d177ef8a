//! Editable mapping from dataset category labels to vocabulary names.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::Result;
use crate::vocab::{normalize_category, CategoryVocabulary};

const DEFAULT_ALIASES: &str = include_str!("../../data/front_aliases.json");

/// Raw label -> candidate categories in preference order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AliasTable {
    map: BTreeMap<String, Vec<String>>,
}

fn key(raw: &str) -> String {
    raw.trim().to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

impl AliasTable {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(text)?;
        Ok(Self {
            map: raw
                .into_iter()
                .map(|(k, v)| (key(&k), v.iter().map(|c| normalize_category(c)).collect()))
                .collect(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn candidates(&self, raw: &str) -> Vec<String> {
        let k = key(raw);
        match self.map.get(&k) {
            Some(c) => c.clone(),
            None => vec![normalize_category(&k)],
        }
    }

    /// First candidate present in `vocab`.
    pub fn resolve(&self, raw: &str, vocab: &CategoryVocabulary) -> Option<String> {
        self.candidates(raw)
            .into_iter()
            .find(|c| vocab.index_of(c).is_some())
    }

    /// First candidate of a listed label; unlisted labels resolve to
    /// themselves only if some built-in vocabulary knows them.
    pub fn resolve_any(&self, raw: &str) -> Option<String> {
        if let Some(c) = self.map.get(&key(raw)) {
            return c.first().cloned();
        }
        let reg = crate::vocab::SceneRegistry::builtin();
        let c = normalize_category(raw);
        let known = reg
            .scene_types()
            .any(|t| reg.get(t).is_ok_and(|s| s.vocabulary.index_of(&c).is_some()));
        known.then_some(c)
    }
}

impl Default for AliasTable {
    fn default() -> Self {
        Self::from_json(DEFAULT_ALIASES).expect("bundled alias table parses")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{SceneRegistry, SceneType};

    #[test]
    fn resolves_against_scene_vocabulary() {
        let a = AliasTable::default();
        let reg = SceneRegistry::builtin();
        let bed = &reg.get(&SceneType::Bedroom).unwrap().vocabulary;
        let living = &reg.get(&SceneType::LivingRoom).unwrap().vocabulary;
        assert_eq!(a.resolve("Dining Chair", bed).as_deref(), Some("chair"));
        assert_eq!(a.resolve("Dining Chair", living).as_deref(), Some("dining chair"));
        assert_eq!(a.resolve("King-size Bed", bed).as_deref(), Some("double bed"));
        assert_eq!(a.resolve("Spaceship", bed), None);
    }
}
