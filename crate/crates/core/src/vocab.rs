//! Scene types, category vocabularies, relation predicates and human actions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Room type a scene is synthesized for.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SceneType {
    Bedroom,
    LivingRoom,
    DiningRoom,
    /// A scene type registered at runtime by name.
    Custom(String),
}

impl SceneType {
    pub fn name(&self) -> &str {
        match self {
            SceneType::Bedroom => "bedroom",
            SceneType::LivingRoom => "living_room",
            SceneType::DiningRoom => "dining_room",
            SceneType::Custom(name) => name,
        }
    }

    /// Human-readable phrase used in natural-language prompts ("living room").
    pub fn phrase(&self) -> String {
        self.name().replace('_', " ")
    }
}

impl fmt::Display for SceneType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SceneType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        Ok(match norm.as_str() {
            "bedroom" => SceneType::Bedroom,
            "living_room" | "livingroom" => SceneType::LivingRoom,
            "dining_room" | "diningroom" => SceneType::DiningRoom,
            "" => return Err(Error::InvalidInput("empty scene type".into())),
            _ => SceneType::Custom(norm),
        })
    }
}

impl Serialize for SceneType {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for SceneType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Ordered list of object categories for one scene type.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryVocabulary {
    pub scene_type: SceneType,
    categories: Vec<String>,
}

impl CategoryVocabulary {
    pub fn new(scene_type: SceneType, categories: Vec<String>) -> Result<Self> {
        if categories.is_empty() {
            return Err(Error::InvalidInput(format!(
                "vocabulary for {scene_type} is empty"
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &categories {
            if !seen.insert(c.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate category '{c}' in {scene_type} vocabulary"
                )));
            }
        }
        Ok(Self {
            scene_type,
            categories,
        })
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.categories
    }

    pub fn name(&self, index: usize) -> &str {
        &self.categories[index]
    }

    /// Case-insensitive lookup; underscores and spaces are interchangeable.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        let norm = normalize_category(name);
        self.categories.iter().position(|c| *c == norm)
    }
}

/// Canonical category spelling: lowercase words separated by single spaces.
pub fn normalize_category(name: &str) -> String {
    name.to_lowercase()
        .replace('_', " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

const BEDROOM: [&str; 21] = [
    "armchair",
    "bookshelf",
    "cabinet",
    "ceiling lamp",
    "chair",
    "children cabinet",
    "coffee table",
    "desk",
    "double bed",
    "dressing chair",
    "dressing table",
    "kids bed",
    "nightstand",
    "pendant lamp",
    "shelf",
    "single bed",
    "sofa",
    "stool",
    "table",
    "tv stand",
    "wardrobe",
];

const LIVING_DINING: [&str; 24] = [
    "armchair",
    "bookshelf",
    "cabinet",
    "ceiling lamp",
    "chaise longue sofa",
    "chinese chair",
    "coffee table",
    "console table",
    "corner side table",
    "desk",
    "dining chair",
    "dining table",
    "l shaped sofa",
    "lazy sofa",
    "lounge chair",
    "loveseat sofa",
    "multi seat sofa",
    "pendant lamp",
    "round end table",
    "shelf",
    "stool",
    "tv stand",
    "wardrobe",
    "wine cabinet",
];

/// Vocabulary and object-count range of a registered scene type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneTypeSpec {
    pub vocabulary: CategoryVocabulary,
    pub min_objects: usize,
    pub max_objects: usize,
}

impl SceneTypeSpec {
    pub fn scene_type(&self) -> &SceneType {
        &self.vocabulary.scene_type
    }
}

/// Registry of known scene types. The three built-ins mirror the
/// 3D-FRONT evaluation splits.
#[derive(Clone, Debug)]
pub struct SceneRegistry {
    specs: BTreeMap<SceneType, SceneTypeSpec>,
}

impl SceneRegistry {
    pub fn builtin() -> Self {
        let mut specs = BTreeMap::new();
        let owned = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        for (ty, cats, max) in [
            (SceneType::Bedroom, owned(&BEDROOM), 12),
            (SceneType::LivingRoom, owned(&LIVING_DINING), 21),
            (SceneType::DiningRoom, owned(&LIVING_DINING), 21),
        ] {
            let vocabulary = CategoryVocabulary::new(ty.clone(), cats).expect("builtin vocab");
            specs.insert(
                ty,
                SceneTypeSpec {
                    vocabulary,
                    min_objects: 3,
                    max_objects: max,
                },
            );
        }
        Self { specs }
    }

    pub fn register(&mut self, spec: SceneTypeSpec) -> Result<()> {
        if spec.min_objects == 0 || spec.min_objects > spec.max_objects {
            return Err(Error::InvalidInput(format!(
                "invalid object-count range {}..={} for {}",
                spec.min_objects,
                spec.max_objects,
                spec.scene_type()
            )));
        }
        self.specs.insert(spec.scene_type().clone(), spec);
        Ok(())
    }

    pub fn get(&self, ty: &SceneType) -> Result<&SceneTypeSpec> {
        self.specs
            .get(ty)
            .ok_or_else(|| Error::UnknownSceneType(ty.to_string()))
    }

    pub fn scene_types(&self) -> impl Iterator<Item = &SceneType> {
        self.specs.keys()
    }
}

/// Spatial relation between two objects. `None` means no relation holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationPredicate {
    LeftOf,
    RightOf,
    InFrontOf,
    Behind,
    CloselyLeftOf,
    CloselyRightOf,
    CloselyInFrontOf,
    CloselyBehind,
    Above,
    Below,
    None,
}

impl RelationPredicate {
    /// Number of predicates, `None` included.
    pub const COUNT: usize = 11;

    pub const ALL: [RelationPredicate; 11] = [
        RelationPredicate::LeftOf,
        RelationPredicate::RightOf,
        RelationPredicate::InFrontOf,
        RelationPredicate::Behind,
        RelationPredicate::CloselyLeftOf,
        RelationPredicate::CloselyRightOf,
        RelationPredicate::CloselyInFrontOf,
        RelationPredicate::CloselyBehind,
        RelationPredicate::Above,
        RelationPredicate::Below,
        RelationPredicate::None,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn inverse(self) -> Self {
        inverse_predicate(self)
    }

    pub fn is_directional(self) -> bool {
        self.index() < 8
    }

    /// Canonical English phrase, as emitted in captions.
    pub fn phrase(self) -> &'static str {
        use RelationPredicate::*;
        match self {
            LeftOf => "to the left of",
            RightOf => "to the right of",
            InFrontOf => "in front of",
            Behind => "behind",
            CloselyLeftOf => "closely to the left of",
            CloselyRightOf => "closely to the right of",
            CloselyInFrontOf => "closely in front of",
            CloselyBehind => "closely behind",
            Above => "above",
            Below => "below",
            None => "unrelated to",
        }
    }
}

/// Maps a predicate to the one that holds with subject and object swapped.
pub fn inverse_predicate(p: RelationPredicate) -> RelationPredicate {
    use RelationPredicate::*;
    match p {
        LeftOf => RightOf,
        RightOf => LeftOf,
        InFrontOf => Behind,
        Behind => InFrontOf,
        CloselyLeftOf => CloselyRightOf,
        CloselyRightOf => CloselyLeftOf,
        CloselyInFrontOf => CloselyBehind,
        CloselyBehind => CloselyInFrontOf,
        Above => Below,
        Below => Above,
        None => None,
    }
}

/// Kind of contact a human makes with an object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HumanAction {
    Sitting,
    Lying,
    Touching,
    #[serde(rename = "none")]
    NoneAction,
}

impl HumanAction {
    pub const COUNT: usize = 4;
    pub const ALL: [HumanAction; 4] = [
        HumanAction::Sitting,
        HumanAction::Lying,
        HumanAction::Touching,
        HumanAction::NoneAction,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn word(self) -> &'static str {
        match self {
            HumanAction::Sitting => "sitting",
            HumanAction::Lying => "lying",
            HumanAction::Touching => "touching",
            HumanAction::NoneAction => "None",
        }
    }

    /// Parses one word of a model reply ("sitting", "None", ...).
    pub fn parse_word(word: &str) -> Option<Self> {
        let w = word
            .trim()
            .trim_matches(|c: char| !c.is_ascii_alphanumeric())
            .to_ascii_lowercase();
        match w.as_str() {
            "sitting" | "sit" => Some(HumanAction::Sitting),
            "lying" | "lie" => Some(HumanAction::Lying),
            "touching" | "touch" => Some(HumanAction::Touching),
            "none" | "nothing" => Some(HumanAction::NoneAction),
            _ => Option::None,
        }
    }
}
