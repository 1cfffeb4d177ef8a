//! Room templates driving the procedural generator.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assembly::FurnitureTable;
use crate::error::{Error, Result};
use crate::vocab::CategoryVocabulary;

const BUNDLED: &str = include_str!("../../data/corpus_templates.json");

/// Weighted category choice.
pub type Choices = Vec<(String, f64)>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Back against a random wall, facing into the room.
    Wall,
    /// Anywhere on the floor, in one of the four axis-aligned orientations.
    Free,
    /// Hanging from the ceiling.
    Ceiling,
}

/// Side of the anchor (in the anchor's own frame) a member goes to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Front,
    Back,
    Above,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Align {
    /// Back faces flush.
    Back,
    #[default]
    Center,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Facing {
    /// Same orientation as the anchor.
    #[default]
    Same,
    /// Front turned towards the anchor.
    Toward,
    /// Front turned away from the anchor.
    Away,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    pub width: [f64; 2],
    pub depth: [f64; 2],
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorTemplate {
    pub choices: Choices,
    pub placement: Placement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberTemplate {
    pub choices: Choices,
    pub probability: f64,
    pub side: Side,
    #[serde(default)]
    pub align: Align,
    /// Clearance to the anchor, drawn uniformly from the range.
    #[serde(default)]
    pub gap: [f64; 2],
    #[serde(default)]
    pub facing: Facing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupTemplate {
    pub name: String,
    pub probability: f64,
    pub anchor: AnchorTemplate,
    pub members: Vec<MemberTemplate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleTemplate {
    pub choices: Choices,
    pub probability: f64,
    pub placement: Placement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneTemplate {
    pub room: RoomSpec,
    pub groups: Vec<GroupTemplate>,
    pub singles: Vec<SingleTemplate>,
}

impl SceneTemplate {
    /// Checks ranges and that every category is known to `vocab` and to the
    /// furniture table.
    pub fn validate(&self, vocab: &CategoryVocabulary, table: &FurnitureTable) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(format!("template for {}: {msg}", vocab.scene_type)));
        let r = &self.room;
        if !(r.width[0] > 0.0 && r.width[0] <= r.width[1] && r.depth[0] > 0.0 && r.depth[0] <= r.depth[1] && r.height > 0.0)
        {
            return bad("invalid room extents".into());
        }
        let check_choices = |c: &Choices| -> Result<()> {
            if c.is_empty() || c.iter().any(|(_, w)| !(*w > 0.0)) {
                return bad("empty choice list or non-positive weight".into());
            }
            for (cat, _) in c {
                if vocab.index_of(cat).is_none() || table.get(cat).is_none() {
                    return bad(format!("unknown category '{cat}'"));
                }
            }
            Ok(())
        };
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        for g in &self.groups {
            if !prob_ok(g.probability) {
                return bad(format!("group '{}' has probability {}", g.name, g.probability));
            }
            check_choices(&g.anchor.choices)?;
            if g.anchor.placement == Placement::Ceiling {
                return bad(format!("group '{}' anchor cannot hang from the ceiling", g.name));
            }
            for m in &g.members {
                check_choices(&m.choices)?;
                if !prob_ok(m.probability) || !(m.gap[0] >= 0.0 && m.gap[0] <= m.gap[1]) {
                    return bad(format!("member of group '{}' has an invalid probability or gap", g.name));
                }
            }
        }
        for s in &self.singles {
            check_choices(&s.choices)?;
            if !prob_ok(s.probability) {
                return bad("single with invalid probability".into());
            }
        }
        Ok(())
    }
}

/// Templates keyed by scene type name.
pub fn bundled_templates() -> BTreeMap<String, SceneTemplate> {
    serde_json::from_str(BUNDLED).expect("bundled templates parse")
}

pub fn load_templates(path: &Path) -> Result<BTreeMap<String, SceneTemplate>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
