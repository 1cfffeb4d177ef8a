//! Rigid human pose proxies and their placement on contact objects.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Layout, OrientedBox};
use crate::scene::{PlacedHuman, PoseId};
use crate::vocab::{normalize_category, HumanAction};

const DEFAULT_POSES: &str = include_str!("../../data/poses.json");

/// Gap between a standing human and the face of the object it touches.
const TOUCH_GAP: f64 = 0.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
}

/// One pose proxy: its action and the body's bounding box in the pose frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanPoseAsset {
    pub pose_id: PoseId,
    pub action: HumanAction,
    pub footprint: Footprint,
}

impl HumanPoseAsset {
    pub fn local_box(&self) -> OrientedBox {
        OrientedBox::new(self.footprint.center, self.footprint.half_extents, [1.0, 0.0])
    }
}

#[derive(Deserialize, Serialize)]
struct PoseFile {
    poses: Vec<HumanPoseAsset>,
    sit_at_table: Vec<String>,
    half_lie: Vec<String>,
}

/// The five poses plus the category dispatch lists.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseLibrary {
    poses: Vec<HumanPoseAsset>,
    sit_at_table: BTreeSet<String>,
    half_lie: BTreeSet<String>,
}

impl PoseLibrary {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: PoseFile = serde_json::from_str(text)?;
        let mut poses = Vec::with_capacity(5);
        for id in PoseId::ALL {
            let mut matching = file.poses.iter().filter(|p| p.pose_id == id);
            match (matching.next(), matching.next()) {
                (Some(p), None) => poses.push(p.clone()),
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "pose library needs exactly one {id:?} entry"
                    )))
                }
            }
        }
        if file.poses.len() != 5 {
            return Err(Error::InvalidInput("pose library must hold exactly five poses".into()));
        }
        Ok(Self {
            poses,
            sit_at_table: file.sit_at_table.iter().map(|c| normalize_category(c)).collect(),
            half_lie: file.half_lie.iter().map(|c| normalize_category(c)).collect(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, id: PoseId) -> &HumanPoseAsset {
        let i = PoseId::ALL.iter().position(|&p| p == id).expect("listed");
        &self.poses[i]
    }

    pub fn poses(&self) -> &[HumanPoseAsset] {
        &self.poses
    }

    /// Pose used for `action` on an object of `category`.
    pub fn pose_for(&self, category: &str, action: HumanAction) -> Option<PoseId> {
        let c = normalize_category(category);
        match action {
            HumanAction::NoneAction => None,
            HumanAction::Sitting if self.sit_at_table.contains(&c) => Some(PoseId::SitArmsOnTable),
            HumanAction::Sitting => Some(PoseId::SitHandsAtSides),
            HumanAction::Lying if self.half_lie.contains(&c) => Some(PoseId::HalfLie),
            HumanAction::Lying => Some(PoseId::LieHandsBehindHead),
            HumanAction::Touching => Some(PoseId::StandTouch),
        }
    }
}

impl Default for PoseLibrary {
    fn default() -> Self {
        Self::from_json(DEFAULT_POSES).expect("bundled pose library parses")
    }
}

/// Places the human for object `index`. Sitting and lying poses share the
/// object's translation and yaw; a touching human stands in front of the
/// object's face, turned to face it.
pub fn place_human(
    poses: &PoseLibrary,
    category: &str,
    action: HumanAction,
    layout: &Layout,
    index: usize,
) -> Option<PlacedHuman> {
    let pose_id = poses.pose_for(category, action)?;
    let pose = poses.get(pose_id);
    let fp = &pose.footprint;
    let layout_h = match pose_id {
        PoseId::StandTouch => {
            let depth = layout.s[1] + fp.half_extents[1] + TOUCH_GAP;
            let mut t = layout.local_to_world([0.0, depth, 0.0]);
            t[2] = layout.t[2] - layout.s[2] + fp.half_extents[2];
            Layout {
                t,
                s: fp.half_extents,
                rot: [-layout.rot[0], -layout.rot[1]],
            }
        }
        _ => Layout {
            t: layout.t,
            s: fp.half_extents,
            rot: layout.rot,
        },
    };
    Some(PlacedHuman {
        pose_id,
        contact_object_index: index,
        layout: layout_h,
        offset: fp.center,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::FurnitureTable;
    use crate::geometry::boxes_intersect_3d;
    use std::f64::consts::PI;

    #[test]
    fn no_action_no_human() {
        let l = Layout::new([0.0, 0.0, 2.5], [0.25, 0.25, 0.3], 0.0);
        assert!(place_human(&PoseLibrary::default(), "pendant lamp", HumanAction::NoneAction, &l, 0).is_none());
    }

    #[test]
    fn touching_wardrobe_faces_it() {
        let l = Layout::new([1.0, 2.0, 1.1], [0.6, 0.3, 1.1], 0.0);
        let h = place_human(&PoseLibrary::default(), "wardrobe", HumanAction::Touching, &l, 3).unwrap();
        assert_eq!(h.pose_id, PoseId::StandTouch);
        assert!((h.layout.yaw().abs() - PI).abs() < 1e-12);
        assert!(h.layout.t[1] > 2.3);
        assert!(!boxes_intersect_3d(&h.world_box(), &l.to_box()));
        assert_eq!(h.contact_object_index, 3);
    }

    #[test]
    fn lying_on_sofa_is_half_lie_sharing_pose() {
        let l = Layout::new([0.5, -1.0, 0.4], [0.9, 0.42, 0.4], 0.7);
        let h = place_human(&PoseLibrary::default(), "sofa", HumanAction::Lying, &l, 0).unwrap();
        assert_eq!(h.pose_id, PoseId::HalfLie);
        assert_eq!(h.layout.t, l.t);
        assert_eq!(h.layout.rot, l.rot);
        let b = place_human(&PoseLibrary::default(), "double bed", HumanAction::Lying, &l, 0).unwrap();
        assert_eq!(b.pose_id, PoseId::LieHandsBehindHead);
    }

    #[test]
    fn sitting_dispatch() {
        let p = PoseLibrary::default();
        assert_eq!(p.pose_for("chair", HumanAction::Sitting), Some(PoseId::SitArmsOnTable));
        assert_eq!(p.pose_for("armchair", HumanAction::Sitting), Some(PoseId::SitHandsAtSides));
    }

    #[test]
    fn sit_and_lie_poses_touch_their_object() {
        let poses = PoseLibrary::default();
        let table = FurnitureTable::default();
        for cat in table.categories() {
            let spec = table.get(cat).unwrap();
            for action in [HumanAction::Sitting, HumanAction::Lying] {
                for yaw in [0.0, 0.5, PI / 2.0, 2.0, PI] {
                    let l = Layout::new([0.3, -0.2, spec.size[2]], spec.size, yaw);
                    let h = place_human(&poses, cat, action, &l, 0).unwrap();
                    assert!(boxes_intersect_3d(&h.world_box(), &l.to_box()), "{cat} {action:?}");
                }
            }
        }
    }

    #[test]
    fn library_has_five_poses() {
        let p = PoseLibrary::default();
        assert_eq!(p.poses().len(), 5);
        for id in PoseId::ALL {
            assert_eq!(p.get(id).pose_id, id);
        }
    }
}
