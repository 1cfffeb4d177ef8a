//! Scene graphs and assembled scenes, plus the canonical scene JSON format.

use serde::ser::SerializeSeq;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::geometry::{Layout, OrientedBox};
use crate::vocab::{HumanAction, RelationPredicate, SceneType};

/// One graph node: category index, feature-code index and human action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectNode {
    pub category: usize,
    pub feature_code: usize,
    pub action: HumanAction,
}

/// Objects plus a dense matrix of directed relations. `edge(i, j)` is the
/// relation of node `i` with respect to node `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub nodes: Vec<ObjectNode>,
    edges: Vec<RelationPredicate>,
}

impl SceneGraph {
    pub fn new(nodes: Vec<ObjectNode>) -> Self {
        let n = nodes.len();
        Self {
            nodes,
            edges: vec![RelationPredicate::None; n * n],
        }
    }

    pub fn from_parts(nodes: Vec<ObjectNode>, edges: Vec<RelationPredicate>) -> Result<Self> {
        if edges.len() != nodes.len() * nodes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} edges for {} nodes",
                edges.len(),
                nodes.len()
            )));
        }
        Ok(Self { nodes, edges })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge(&self, i: usize, j: usize) -> RelationPredicate {
        self.edges[i * self.nodes.len() + j]
    }

    pub fn edges(&self) -> &[RelationPredicate] {
        &self.edges
    }

    /// Sets `edge(i, j) = p` and `edge(j, i) = inverse(p)`.
    pub fn set_edge(&mut self, i: usize, j: usize, p: RelationPredicate) {
        let n = self.nodes.len();
        if i == j {
            return;
        }
        self.edges[i * n + j] = p;
        self.edges[j * n + i] = p.inverse();
    }

    /// Whether the diagonal is `None` and every edge is the inverse of its
    /// transpose.
    pub fn is_symmetric(&self) -> bool {
        let n = self.nodes.len();
        (0..n).all(|i| {
            self.edge(i, i) == RelationPredicate::None
                && (0..n).all(|j| i == j || self.edge(i, j) == self.edge(j, i).inverse())
        })
    }

    /// Copy with nodes reordered so that new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.nodes.len();
        let nodes = perm.iter().map(|&p| self.nodes[p]).collect();
        let mut edges = vec![RelationPredicate::None; n * n];
        for i in 0..n {
            for j in 0..n {
                edges[i * n + j] = self.edge(perm[i], perm[j]);
            }
        }
        Self { nodes, edges }
    }
}

/// The five rigid human pose proxies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseId {
    SitHandsAtSides,
    SitArmsOnTable,
    LieHandsBehindHead,
    HalfLie,
    StandTouch,
}

impl PoseId {
    pub const ALL: [PoseId; 5] = [
        PoseId::SitHandsAtSides,
        PoseId::SitArmsOnTable,
        PoseId::LieHandsBehindHead,
        PoseId::HalfLie,
        PoseId::StandTouch,
    ];
}

/// A human in contact with one scene object. `layout` is the pose frame;
/// its `s` holds the footprint half-extents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedHuman {
    pub pose_id: PoseId,
    pub contact_object_index: usize,
    #[serde(serialize_with = "ser_layout")]
    pub layout: Layout,
    /// Footprint box center in the pose frame.
    #[serde(skip_serializing, default)]
    pub offset: [f64; 3],
}

impl PlacedHuman {
    /// World-space footprint box.
    pub fn world_box(&self) -> OrientedBox {
        let c = self.layout.local_to_world(self.offset);
        OrientedBox::new(c, self.layout.s, self.layout.rot)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub category: String,
    pub feature_code: usize,
    pub action: HumanAction,
    #[serde(serialize_with = "ser_layout")]
    pub layout: Layout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asset_id: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub seed: u64,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimization: Option<crate::optimizer::OptimizationReport>,
}

/// A fully instantiated scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_type: SceneType,
    pub objects: Vec<SceneObject>,
    #[serde(default)]
    pub humans: Vec<PlacedHuman>,
    #[serde(default)]
    pub meta: SceneMeta,
}

impl Scene {
    pub fn empty(scene_type: SceneType) -> Self {
        Self {
            scene_type,
            objects: Vec::new(),
            humans: Vec::new(),
            meta: SceneMeta::default(),
        }
    }

    /// Canonical JSON text (pretty printed, floats with 6 decimals).
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses scene JSON and restores pose offsets from `poses`.
    pub fn from_json(text: &str, poses: &crate::assembly::PoseLibrary) -> Result<Self> {
        let mut scene: Scene = serde_json::from_str(text)?;
        for h in &mut scene.humans {
            if h.contact_object_index >= scene.objects.len() {
                return Err(Error::InvalidInput(format!(
                    "human contact index {} out of range",
                    h.contact_object_index
                )));
            }
            h.offset = poses.get(h.pose_id).footprint.center;
        }
        for o in &mut scene.objects {
            o.category = crate::vocab::normalize_category(&o.category);
        }
        Ok(scene)
    }

    pub fn object_boxes(&self) -> Vec<OrientedBox> {
        self.objects.iter().map(|o| o.layout.to_box()).collect()
    }
}

/// Formats a float with exactly six decimals; `-0.000000` becomes `0.000000`.
pub fn fixed6(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

fn ser_fixed_slice<S: Serializer>(xs: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(xs.len()))?;
    for &x in xs {
        if !x.is_finite() {
            return Err(serde::ser::Error::custom("non-finite float in scene"));
        }
        let raw = RawValue::from_string(fixed6(x)).map_err(serde::ser::Error::custom)?;
        seq.serialize_element(&raw)?;
    }
    seq.end()
}

fn ser_layout<S: Serializer>(l: &Layout, s: S) -> std::result::Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct Fixed<'a> {
        #[serde(serialize_with = "ser_fixed_slice")]
        t: &'a [f64],
        #[serde(serialize_with = "ser_fixed_slice")]
        s: &'a [f64],
        #[serde(serialize_with = "ser_fixed_slice")]
        rot: &'a [f64],
    }
    Fixed {
        t: &l.t,
        s: &l.s,
        rot: &l.rot,
    }
    .serialize(s)
}

/// Rounds a layout to the precision the JSON format stores.
pub fn quantize_layout(l: &Layout) -> Layout {
    let q = |x: f64| fixed6(x).parse::<f64>().unwrap_or(x);
    Layout {
        t: l.t.map(q),
        s: l.s.map(q),
        rot: l.rot.map(q),
    }
}
