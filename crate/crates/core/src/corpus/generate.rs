//! Procedural scene generator and caption sampler.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::template::{Align, Choices, Facing, GroupTemplate, Placement, SceneTemplate, Side, SingleTemplate};
use super::{SceneRecord, Split};
use crate::assembly::{place_human, AssemblyKit, FurnitureTable, STYLES};
use crate::error::{Error, Result};
use crate::eval::{label_relation, scene_stats, RelationRuleConfig};
use crate::geometry::{boxes_intersect_3d, Layout};
use crate::groups::{default_groups, FunctionalGroups};
use crate::par::{map_range, Parallelism};
use crate::prompt::{render_sentence, ActionRuleTable, Triplet};
use crate::scene::{quantize_layout, Scene, SceneGraph, SceneObject, ObjectNode};
use crate::util::{fnv1a64, stream_rng};
use crate::vocab::{CategoryVocabulary, HumanAction, RelationPredicate, SceneRegistry, SceneType};

/// Unit rotation pairs for quarter turns; turn `q` is yaw `q * pi / 2`.
const QUARTER: [[f64; 2]; 4] = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];

/// Clearance between a wall and the back of a wall-mounted object.
const WALL_GAP: f64 = 0.02;
const PLACEMENT_TRIES: usize = 25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub scene_type: SceneType,
    pub seed: u64,
    /// Relative per-axis size jitter around the nominal furniture size.
    pub size_jitter: f64,
    /// Chance that a caption mention carries the object's style word.
    pub adjective_prob: f64,
    /// Expected fraction of records tagged `test`.
    pub test_fraction: f64,
    /// Whole-scene retries before giving up on one record.
    pub max_attempts: usize,
    /// In-group footprint overlap tolerated between a human and an object.
    pub beta: f64,
    pub template: SceneTemplate,
}

impl GeneratorConfig {
    /// Defaults with the bundled template for `scene_type`.
    pub fn new(scene_type: SceneType, seed: u64) -> Result<Self> {
        let template = super::template::bundled_templates()
            .remove(scene_type.name())
            .ok_or_else(|| Error::UnknownSceneType(scene_type.name().to_string()))?;
        Ok(Self {
            scene_type,
            seed,
            size_jitter: 0.08,
            adjective_prob: 0.5,
            test_fraction: 0.1,
            max_attempts: 400,
            beta: 0.05,
            template,
        })
    }

    /// Stable hex digest of the configuration, stored in corpus headers.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a64(json.as_bytes()))
    }
}

/// Seed-stable train/test assignment by record id.
pub fn split_for(id: &str, test_fraction: f64) -> Split {
    let bucket = fnv1a64(id.as_bytes()) % 1_000_000;
    if (bucket as f64) < test_fraction * 1_000_000.0 {
        Split::Test
    } else {
        Split::Train
    }
}

fn choose<'a>(choices: &'a Choices, rng: &mut impl Rng) -> &'a str {
    let total: f64 = choices.iter().map(|c| c.1).sum();
    let mut u = rng.random::<f64>() * total;
    for (name, w) in choices {
        if u < *w {
            return name;
        }
        u -= w;
    }
    &choices[choices.len() - 1].0
}

fn rotate(q: usize, v: [f64; 2]) -> [f64; 2] {
    let [c, s] = QUARTER[q % 4];
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

struct Room {
    w: f64,
    d: f64,
    h: f64,
}

impl Room {
    fn contains(&self, l: &Layout) -> bool {
        let b = l.to_box();
        b.footprint()
            .iter()
            .all(|p| p[0].abs() <= self.w / 2.0 + 1e-9 && p[1].abs() <= self.d / 2.0 + 1e-9)
            && l.t[2] + l.s[2] <= self.h + 1e-9
    }
}

struct Ctx<'a> {
    cfg: &'a GeneratorConfig,
    vocab: &'a CategoryVocabulary,
    table: FurnitureTable,
    rules: ActionRuleTable,
    groups: FunctionalGroups,
    kit: &'a AssemblyKit,
}

#[derive(Clone)]
struct Placed {
    category: String,
    layout: Layout,
    style: String,
}

impl Ctx<'_> {
    fn size(&self, cat: &str, rng: &mut impl Rng) -> [f64; 3] {
        let nominal = self.table.get(cat).expect("validated category").size;
        let j = self.cfg.size_jitter;
        nominal.map(|s| s * (1.0 + j * (2.0 * rng.random::<f64>() - 1.0)))
    }

    fn ceiling(&self, cat: &str) -> bool {
        self.table.get(cat).is_some_and(|s| s.mount == crate::assembly::Mount::Ceiling)
    }

    fn z_for(&self, cat: &str, s: [f64; 3], room: &Room) -> f64 {
        if self.ceiling(cat) {
            room.h - s[2]
        } else {
            s[2]
        }
    }

    /// Anchor pose for a placement mode: position and quarter turn.
    fn anchor_pose(&self, placement: Placement, s: [f64; 3], room: &Room, rng: &mut impl Rng) -> ([f64; 2], usize) {
        match placement {
            Placement::Wall => {
                // Wall k: 0 south (faces +y), 1 east (faces -x), 2 north, 3 west.
                let wall = rng.random_range(0..4usize);
                let (len, half_depth) = if wall % 2 == 0 { (room.w, room.d / 2.0) } else { (room.d, room.w / 2.0) };
                let span = (len / 2.0 - s[0]).max(0.0);
                let u = rng.random_range(-span..=span);
                let inward = half_depth - WALL_GAP - s[1];
                let (pos, q) = match wall {
                    0 => ([u, -inward], 0),
                    1 => ([inward, u], 1),
                    2 => ([-u, inward], 2),
                    _ => ([-inward, -u], 3),
                };
                (pos, q)
            }
            Placement::Free | Placement::Ceiling => {
                let q = rng.random_range(0..4usize);
                let r = s[0].max(s[1]);
                let x = (room.w / 2.0 - r).max(0.0);
                let y = (room.d / 2.0 - r).max(0.0);
                ([rng.random_range(-x..=x), rng.random_range(-y..=y)], q)
            }
        }
    }

    fn fits(&self, cand: &Layout, placed: &[Placed], room: &Room) -> bool {
        room.contains(cand) && placed.iter().all(|p| !boxes_intersect_3d(&p.layout.to_box(), &cand.to_box()))
    }

    fn style(&self, rng: &mut impl Rng) -> String {
        STYLES.choose(rng).expect("styles").to_string()
    }

    fn try_group(&self, g: &GroupTemplate, placed: &mut Vec<Placed>, room: &Room, rng: &mut ChaCha8Rng) -> bool {
        let anchor_cat = choose(&g.anchor.choices, rng).to_string();
        let mut members: Vec<(usize, String)> = Vec::new();
        for (i, m) in g.members.iter().enumerate() {
            if rng.random::<f64>() < m.probability {
                members.push((i, choose(&m.choices, rng).to_string()));
            }
        }
        let a_s = self.size(&anchor_cat, rng);
        let m_s: Vec<[f64; 3]> = members.iter().map(|(_, c)| self.size(c, rng)).collect();
        for _ in 0..PLACEMENT_TRIES {
            let (pos, q) = self.anchor_pose(g.anchor.placement, a_s, room, rng);
            let anchor = Layout {
                t: [pos[0], pos[1], self.z_for(&anchor_cat, a_s, room)],
                s: a_s,
                rot: QUARTER[q],
            };
            let mut group = vec![Placed {
                category: anchor_cat.clone(),
                layout: anchor,
                style: self.style(rng),
            }];
            let mut ok = self.fits(&anchor, placed, room);
            for ((mi, cat), s) in members.iter().zip(&m_s) {
                if !ok {
                    break;
                }
                let m = &g.members[*mi];
                let gap = rng.random_range(m.gap[0]..=m.gap[1]);
                let rel = match (m.facing, m.side) {
                    (Facing::Same, _) | (_, Side::Above) => 0,
                    (Facing::Toward, Side::Left) | (Facing::Away, Side::Right) => 3,
                    (Facing::Toward, Side::Right) | (Facing::Away, Side::Left) => 1,
                    (Facing::Toward, Side::Front) | (Facing::Away, Side::Back) => 2,
                    (Facing::Toward, Side::Back) | (Facing::Away, Side::Front) => 0,
                };
                // Member half-extents along the anchor's local axes.
                let (ex, ey) = if rel % 2 == 1 { (s[1], s[0]) } else { (s[0], s[1]) };
                let back_y = match m.align {
                    Align::Back => -a_s[1] + ey,
                    Align::Center => 0.0,
                };
                let local = match m.side {
                    Side::Left => [-(a_s[0] + gap + ex), back_y],
                    Side::Right => [a_s[0] + gap + ex, back_y],
                    Side::Front => [0.0, a_s[1] + gap + ey],
                    Side::Back => [0.0, -(a_s[1] + gap + ey)],
                    Side::Above => [0.0, 0.0],
                };
                let off = rotate(q, local);
                let z = if m.side == Side::Above || self.ceiling(cat) {
                    room.h - s[2]
                } else {
                    s[2]
                };
                let l = Layout {
                    t: [pos[0] + off[0], pos[1] + off[1], z],
                    s: *s,
                    rot: QUARTER[(q + rel) % 4],
                };
                let all: Vec<Placed> = placed.iter().chain(&group).cloned().collect();
                ok = self.fits(&l, &all, room);
                group.push(Placed {
                    category: cat.clone(),
                    layout: l,
                    style: self.style(rng),
                });
            }
            if ok {
                let mut trial = placed.clone();
                trial.extend(group);
                if self.humans_ok(&trial) {
                    *placed = trial;
                    return true;
                }
            }
        }
        false
    }

    fn try_single(&self, t: &SingleTemplate, placed: &mut Vec<Placed>, room: &Room, rng: &mut ChaCha8Rng) -> bool {
        let cat = choose(&t.choices, rng).to_string();
        let s = self.size(&cat, rng);
        for _ in 0..PLACEMENT_TRIES {
            let (pos, q) = self.anchor_pose(t.placement, s, room, rng);
            let l = Layout {
                t: [pos[0], pos[1], self.z_for(&cat, s, room)],
                s,
                rot: QUARTER[q],
            };
            if self.fits(&l, placed, room) {
                let mut trial = placed.clone();
                trial.push(Placed {
                    category: cat.clone(),
                    layout: l,
                    style: self.style(rng),
                });
                if self.humans_ok(&trial) {
                    *placed = trial;
                    return true;
                }
            }
        }
        false
    }

    fn action(&self, cat: &str) -> HumanAction {
        self.rules.lookup(&self.cfg.scene_type, cat)
    }

    fn scene_of(&self, placed: &[Placed]) -> Scene {
        let mut scene = Scene::empty(self.cfg.scene_type.clone());
        for (i, p) in placed.iter().enumerate() {
            let action = self.action(&p.category);
            if let Some(h) = place_human(&self.kit.poses, &p.category, action, &p.layout, i) {
                scene.humans.push(h);
            }
            scene.objects.push(SceneObject {
                category: p.category.clone(),
                feature_code: 0,
                action,
                layout: p.layout,
                asset_id: None,
            });
        }
        scene
    }

    fn humans_ok(&self, placed: &[Placed]) -> bool {
        let st = scene_stats(&self.scene_of(placed), &self.groups, self.cfg.beta);
        st.human_violations == 0
    }

    fn generate_one(&self, index: usize) -> Result<SceneRecord> {
        let spec_range = SceneRegistry::builtin()
            .get(&self.cfg.scene_type)
            .map(|s| (s.min_objects, s.max_objects))
            .unwrap_or((3, 12));
        let mut rng = stream_rng(self.cfg.seed, index as u64);
        let t = &self.cfg.template;
        for _ in 0..self.cfg.max_attempts {
            let room = Room {
                w: rng.random_range(t.room.width[0]..=t.room.width[1]),
                d: rng.random_range(t.room.depth[0]..=t.room.depth[1]),
                h: t.room.height,
            };
            let mut placed = Vec::new();
            let mut failed = false;
            for g in &t.groups {
                if rng.random::<f64>() >= g.probability {
                    continue;
                }
                if !self.try_group(g, &mut placed, &room, &mut rng) && g.probability >= 1.0 {
                    failed = true;
                    break;
                }
            }
            if failed {
                continue;
            }
            for s in &t.singles {
                if rng.random::<f64>() < s.probability {
                    self.try_single(s, &mut placed, &room, &mut rng);
                }
            }
            if placed.len() < spec_range.0 || placed.len() > spec_range.1 {
                continue;
            }
            for p in &mut placed {
                p.layout = quantize_layout(&p.layout);
            }
            let scene = self.scene_of(&placed);
            let st = scene_stats(&scene, &self.groups, self.cfg.beta);
            let interactive = scene.objects.iter().any(|o| o.action != HumanAction::NoneAction);
            if st.collisions > 0 || st.human_violations > 0 || !interactive {
                continue;
            }
            return Ok(self.record(index, &placed, &mut rng));
        }
        Err(Error::InvalidInput(format!(
            "could not generate record {index} of {} within {} attempts",
            self.cfg.scene_type, self.cfg.max_attempts
        )))
    }

    fn record(&self, index: usize, placed: &[Placed], rng: &mut ChaCha8Rng) -> SceneRecord {
        let n = placed.len();
        let nodes = placed
            .iter()
            .map(|p| ObjectNode {
                category: self.vocab.index_of(&p.category).expect("validated category"),
                feature_code: self.kit.feature_code(&p.category, std::slice::from_ref(&p.style)),
                action: self.action(&p.category),
            })
            .collect();
        let layouts: Vec<Layout> = placed.iter().map(|p| p.layout).collect();
        let graph = graph_from_layouts(nodes, &layouts);
        let styles: Vec<String> = placed.iter().map(|p| p.style.clone()).collect();
        let (caption, triplets) = make_caption(&graph, self.vocab, &styles, self.cfg.adjective_prob, rng);
        let id = format!("{}-{:016x}-{index:06}", self.cfg.scene_type.name(), self.cfg.seed);
        debug_assert_eq!(graph.len(), n);
        SceneRecord {
            split: split_for(&id, self.cfg.test_fraction),
            id,
            scene_type: self.cfg.scene_type.clone(),
            graph,
            layouts,
            styles,
            caption,
            triplets,
        }
    }
}

/// Graph whose edge `(i, j)` is the relation of object `i` with respect to
/// object `j` as labeled from the layouts.
pub fn graph_from_layouts(nodes: Vec<ObjectNode>, layouts: &[Layout]) -> SceneGraph {
    let n = layouts.len();
    let cfg = RelationRuleConfig::default();
    let mut edges = vec![RelationPredicate::None; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                edges[i * n + j] = label_relation(&layouts[j], &layouts[i], &cfg);
            }
        }
    }
    SceneGraph::from_parts(nodes, edges).expect("square edge matrix")
}

fn noun_phrase(adjs: &[String], noun: &str) -> String {
    let mut words: Vec<&str> = adjs.iter().map(String::as_str).collect();
    words.push(noun);
    let phrase = words.join(" ");
    let art = if phrase.starts_with(['a', 'e', 'i', 'o', 'u']) { "an" } else { "a" };
    format!("{art} {phrase}")
}

/// Samples one or two relation triplets of the graph and renders them.
///
/// A category mentioned in the caption always refers to the same object,
/// and the two mentions of one sentence have different categories, which is
/// how the prompt parser binds mentions to instances.
pub fn make_caption(
    graph: &SceneGraph,
    vocab: &CategoryVocabulary,
    styles: &[String],
    adjective_prob: f64,
    rng: &mut impl Rng,
) -> (String, Vec<Triplet>) {
    let n = graph.len();
    let cat = |i: usize| graph.nodes[i].category;
    let candidates: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && cat(i) != cat(j) && graph.edge(i, j) != RelationPredicate::None)
        .collect();
    let adjs = |i: usize, rng: &mut dyn rand::RngCore| -> Vec<String> {
        match styles.get(i) {
            Some(s) if !s.is_empty() && rng.random::<f64>() < adjective_prob => vec![s.clone()],
            _ => Vec::new(),
        }
    };
    if candidates.is_empty() {
        if n == 0 {
            return (String::new(), Vec::new());
        }
        let i = rng.random_range(0..n);
        let a = adjs(i, rng);
        return (format!("There is {}.", noun_phrase(&a, vocab.name(cat(i)))), Vec::new());
    }
    let mut chosen = vec![*candidates.choose(rng).expect("non-empty")];
    if rng.random::<f64>() < 0.5 {
        let (a, b) = chosen[0];
        let bound: BTreeMap<usize, usize> = [(cat(a), a), (cat(b), b)].into();
        let consistent = |i: usize| bound.get(&cat(i)).is_none_or(|&k| k == i);
        let second: Vec<(usize, usize)> = candidates
            .iter()
            .copied()
            .filter(|&(i, j)| !(i == a && j == b) && !(i == b && j == a) && consistent(i) && consistent(j))
            .collect();
        if let Some(&c) = second.choose(rng) {
            chosen.push(c);
        }
    }
    let mut sentences = Vec::new();
    let mut triplets = Vec::new();
    for (i, j) in chosen {
        let p = graph.edge(i, j);
        let (si, oj) = (vocab.name(cat(i)), vocab.name(cat(j)));
        let (ai, aj) = (adjs(i, rng), adjs(j, rng));
        sentences.push(render_sentence(&ai, si, p, &aj, oj));
        triplets.push(Triplet {
            subject: si.to_string(),
            predicate: p,
            object: oj.to_string(),
        });
    }
    (sentences.join(" "), triplets)
}

/// Generates `count` records. Record `k` depends only on the config and
/// `k`, so results are identical in sequential and parallel mode.
pub fn generate_corpus(
    cfg: &GeneratorConfig,
    count: usize,
    kit: &AssemblyKit,
    mode: Parallelism,
) -> Result<Vec<SceneRecord>> {
    if count == 0 {
        return Err(Error::InvalidInput("corpus size must be at least 1".into()));
    }
    let registry = SceneRegistry::builtin();
    let vocab = &registry.get(&cfg.scene_type)?.vocabulary;
    let table = FurnitureTable::default();
    cfg.template.validate(vocab, &table)?;
    let ctx = Ctx {
        cfg,
        vocab,
        table,
        rules: ActionRuleTable::default(),
        groups: default_groups(),
        kit,
    };
    map_range(count, mode, |k| ctx.generate_one(k)).into_iter().collect()
}
