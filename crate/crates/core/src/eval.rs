//! Geometric relation rules, iRecall and scene statistics.
//!
//! Relations are evaluated in the shared room frame: `x` grows to the
//! right, `y` grows towards the front, `z` is up. `check_relation(a, b, p)`
//! asks whether `b` stands in relation `p` to the reference object `a`.
//! Each inverse pair is implemented once and the other member swaps the
//! arguments, so `check(a, b, p) == check(b, a, inverse(p))` holds exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geometry::{boxes_intersect_3d, footprint_overlap_area, footprints_intersect, Layout};
use crate::groups::FunctionalGroups;
use crate::prompt::Triplet;
use crate::scene::Scene;
use crate::vocab::RelationPredicate;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationRuleConfig {
    /// Centroid distance below which directional relations become "closely".
    pub d_close: f64,
    /// Dead zone for directional offsets.
    pub epsilon: f64,
    /// Slack when testing vertical separation for above/below.
    pub vertical_margin: f64,
}

impl Default for RelationRuleConfig {
    fn default() -> Self {
        Self {
            d_close: 1.0,
            epsilon: 0.05,
            vertical_margin: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Direction {
    Left,
    Front,
}

/// Direction of `b` from `a` along the dominant horizontal axis, if it is
/// the negative-x (left) or positive-y (front) half.
fn direction(a: &Layout, b: &Layout, cfg: &RelationRuleConfig) -> Option<Direction> {
    let dx = b.t[0] - a.t[0];
    let dy = b.t[1] - a.t[1];
    if dx.abs() >= dy.abs() {
        (dx < -cfg.epsilon).then_some(Direction::Left)
    } else {
        (dy > cfg.epsilon).then_some(Direction::Front)
    }
}

fn is_close(a: &Layout, b: &Layout, cfg: &RelationRuleConfig) -> bool {
    let dx = b.t[0] - a.t[0];
    let dy = b.t[1] - a.t[1];
    dx.hypot(dy) < cfg.d_close
}

/// `b` is entirely above `a` (within the margin) and their footprints overlap.
fn above(a: &Layout, b: &Layout, cfg: &RelationRuleConfig) -> bool {
    let gap = (b.t[2] - b.s[2]) - (a.t[2] + a.s[2]);
    gap >= -cfg.vertical_margin
        && b.t[2] > a.t[2]
        && footprints_intersect(&a.to_box(), &b.to_box())
}

pub fn check_relation(a: &Layout, b: &Layout, p: RelationPredicate, cfg: &RelationRuleConfig) -> bool {
    use RelationPredicate::*;
    let dir = |a: &Layout, b: &Layout, d: Direction, close: bool| {
        direction(a, b, cfg) == Some(d) && is_close(a, b, cfg) == close
    };
    match p {
        LeftOf => dir(a, b, Direction::Left, false),
        RightOf => dir(b, a, Direction::Left, false),
        InFrontOf => dir(a, b, Direction::Front, false),
        Behind => dir(b, a, Direction::Front, false),
        CloselyLeftOf => dir(a, b, Direction::Left, true),
        CloselyRightOf => dir(b, a, Direction::Left, true),
        CloselyInFrontOf => dir(a, b, Direction::Front, true),
        CloselyBehind => dir(b, a, Direction::Front, true),
        Above => above(a, b, cfg),
        Below => above(b, a, cfg),
        None => RelationPredicate::ALL[..10]
            .iter()
            .all(|&q| !check_relation(a, b, q, cfg)),
    }
}

/// The single predicate describing `b` relative to `a`: above/below take
/// precedence over directions, `None` when nothing holds.
pub fn label_relation(a: &Layout, b: &Layout, cfg: &RelationRuleConfig) -> RelationPredicate {
    use RelationPredicate::*;
    [
        Above,
        Below,
        LeftOf,
        RightOf,
        InFrontOf,
        Behind,
        CloselyLeftOf,
        CloselyRightOf,
        CloselyInFrontOf,
        CloselyBehind,
    ]
    .into_iter()
    .find(|&p| check_relation(a, b, p, cfg))
    .unwrap_or(None)
}

/// Whether the scene realizes `<subject, predicate, object>` for some pair
/// of distinct objects with those categories.
pub fn triplet_satisfied(t: &Triplet, scene: &Scene, cfg: &RelationRuleConfig) -> bool {
    let subj = crate::vocab::normalize_category(&t.subject);
    let obj = crate::vocab::normalize_category(&t.object);
    scene.objects.iter().enumerate().any(|(i, s)| {
        s.category == subj
            && scene.objects.iter().enumerate().any(|(j, o)| {
                i != j && o.category == obj && check_relation(&o.layout, &s.layout, t.predicate, cfg)
            })
    })
}

/// Fraction of triplets realized in the scene; 1.0 for an empty list.
pub fn irecall(triplets: &[Triplet], scene: &Scene, cfg: &RelationRuleConfig) -> f64 {
    if triplets.is_empty() {
        return 1.0;
    }
    let hits = triplets
        .iter()
        .filter(|t| triplet_satisfied(t, scene, cfg))
        .count();
    hits as f64 / triplets.len() as f64
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneStats {
    /// Pairs of distinct objects whose boxes intersect.
    pub collisions: usize,
    /// Human/object pairs that break the human-aware placement rules.
    pub human_violations: usize,
    pub category_histogram: BTreeMap<String, usize>,
}

/// Whether human `h`'s box against object `j` violates the placement rules:
/// any intersection with a same-category or out-of-group object, or an
/// in-group footprint overlap of at least `beta`.
pub fn human_object_violation(
    scene: &Scene,
    h: usize,
    j: usize,
    groups: &FunctionalGroups,
    beta: f64,
) -> bool {
    let human = &scene.humans[h];
    if human.contact_object_index == j {
        return false;
    }
    let hb = human.world_box();
    let ob = scene.objects[j].layout.to_box();
    if !boxes_intersect_3d(&hb, &ob) {
        return false;
    }
    let contact = &scene.objects[human.contact_object_index].category;
    let other = &scene.objects[j].category;
    if contact == other || !groups.contains(contact, other) {
        return true;
    }
    footprint_overlap_area(&hb, &ob) >= beta
}

pub fn scene_stats(scene: &Scene, groups: &FunctionalGroups, beta: f64) -> SceneStats {
    let boxes = scene.object_boxes();
    let mut stats = SceneStats::default();
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            if boxes_intersect_3d(&boxes[i], &boxes[j]) {
                stats.collisions += 1;
            }
        }
    }
    for h in 0..scene.humans.len() {
        for j in 0..scene.objects.len() {
            if human_object_violation(scene, h, j, groups, beta) {
                stats.human_violations += 1;
            }
        }
    }
    for o in &scene.objects {
        *stats.category_histogram.entry(o.category.clone()).or_default() += 1;
    }
    stats
}

/// Aggregate metrics over a set of synthesized scenes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenes: usize,
    pub triplets: usize,
    pub triplets_satisfied: usize,
    /// Satisfied triplets over all triplets.
    pub irecall: f64,
    pub mean_objects: f64,
    pub mean_humans: f64,
    pub collisions_per_scene: f64,
    pub human_violations_per_scene: f64,
}

impl EvalReport {
    pub fn from_scenes<'a, I>(items: I, cfg: &RelationRuleConfig, groups: &FunctionalGroups, beta: f64) -> Self
    where
        I: IntoIterator<Item = (&'a Scene, &'a [Triplet])>,
    {
        let mut r = EvalReport::default();
        let (mut objects, mut humans, mut coll, mut viol) = (0usize, 0usize, 0usize, 0usize);
        for (scene, triplets) in items {
            r.scenes += 1;
            r.triplets += triplets.len();
            r.triplets_satisfied += triplets
                .iter()
                .filter(|t| triplet_satisfied(t, scene, cfg))
                .count();
            let s = scene_stats(scene, groups, beta);
            objects += scene.objects.len();
            humans += scene.humans.len();
            coll += s.collisions;
            viol += s.human_violations;
        }
        let per = |x: usize| if r.scenes == 0 { 0.0 } else { x as f64 / r.scenes as f64 };
        r.irecall = if r.triplets == 0 {
            1.0
        } else {
            r.triplets_satisfied as f64 / r.triplets as f64
        };
        r.mean_objects = per(objects);
        r.mean_humans = per(humans);
        r.collisions_per_scene = per(coll);
        r.human_violations_per_scene = per(viol);
        r
    }

    /// Aligned two-column text table.
    pub fn to_table(&self) -> String {
        let rows = [
            ("scenes", self.scenes.to_string()),
            ("triplets", self.triplets.to_string()),
            ("triplets satisfied", self.triplets_satisfied.to_string()),
            ("iRecall", format!("{:.4}", self.irecall)),
            ("objects / scene", format!("{:.3}", self.mean_objects)),
            ("humans / scene", format!("{:.3}", self.mean_humans)),
            ("collisions / scene", format!("{:.3}", self.collisions_per_scene)),
            ("violations / scene", format!("{:.3}", self.human_violations_per_scene)),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v:>10}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{SceneObject, SceneMeta};
    use crate::vocab::{HumanAction, SceneType};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn at(x: f64, y: f64, z: f64) -> Layout {
        Layout::new([x, y, z], [0.4, 0.4, 0.4], 0.0)
    }

    #[test]
    fn left_of_by_offset() {
        let cfg = RelationRuleConfig::default();
        let a = at(0.0, 0.0, 0.4);
        let b = at(-2.0, 0.0, 0.4);
        assert!(check_relation(&a, &b, RelationPredicate::LeftOf, &cfg));
        assert!(!check_relation(&a, &b, RelationPredicate::CloselyLeftOf, &cfg));
        assert!(check_relation(&b, &a, RelationPredicate::RightOf, &cfg));
        assert_eq!(label_relation(&a, &b, &cfg), RelationPredicate::LeftOf);
    }

    #[test]
    fn lamp_above_table() {
        let cfg = RelationRuleConfig::default();
        let table = Layout::new([0.0, 0.0, 0.375], [0.6, 0.4, 0.375], 0.0);
        let lamp = Layout::new([0.1, 0.0, 1.875], [0.2, 0.2, 0.2], 0.0);
        assert!(check_relation(&table, &lamp, RelationPredicate::Above, &cfg));
        assert!(!check_relation(&table, &lamp, RelationPredicate::Below, &cfg));
        assert_eq!(label_relation(&table, &lamp, &cfg), RelationPredicate::Above);
    }

    fn random_layout(rng: &mut ChaCha8Rng) -> Layout {
        Layout::new(
            [rng.random_range(-2.5..2.5), rng.random_range(-2.5..2.5), rng.random_range(0.0..2.5)],
            [rng.random_range(0.05..1.0), rng.random_range(0.05..1.0), rng.random_range(0.05..1.0)],
            rng.random_range(-3.2..3.2),
        )
    }

    #[test]
    fn inverse_pair_consistency_on_random_pairs() {
        let cfg = RelationRuleConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let (a, b) = (random_layout(&mut rng), random_layout(&mut rng));
            for p in RelationPredicate::ALL {
                assert_eq!(
                    check_relation(&a, &b, p, &cfg),
                    check_relation(&b, &a, p.inverse(), &cfg),
                    "{p:?} {a:?} {b:?}"
                );
            }
            let directional = RelationPredicate::ALL[..8]
                .iter()
                .filter(|&&p| check_relation(&a, &b, p, &cfg))
                .count();
            assert!(directional <= 1);
            assert_eq!(label_relation(&b, &a, &cfg), label_relation(&a, &b, &cfg).inverse());
        }
    }

    fn scene_of(objs: &[(&str, Layout)]) -> Scene {
        Scene {
            scene_type: SceneType::Bedroom,
            objects: objs
                .iter()
                .map(|(c, l)| SceneObject {
                    category: c.to_string(),
                    feature_code: 0,
                    action: HumanAction::NoneAction,
                    layout: *l,
                    asset_id: None,
                })
                .collect(),
            humans: vec![],
            meta: SceneMeta::default(),
        }
    }

    #[test]
    fn irecall_extremes() {
        let cfg = RelationRuleConfig::default();
        let scene = scene_of(&[("double bed", at(-2.0, 0.0, 0.4)), ("nightstand", at(0.0, 0.0, 0.4))]);
        let t = |p| Triplet {
            subject: "double bed".into(),
            predicate: p,
            object: "nightstand".into(),
        };
        assert_eq!(irecall(&[t(RelationPredicate::LeftOf)], &scene, &cfg), 1.0);
        assert_eq!(irecall(&[t(RelationPredicate::Above), t(RelationPredicate::RightOf)], &scene, &cfg), 0.0);
        assert_eq!(irecall(&[], &scene, &cfg), 1.0);
        let half = irecall(&[t(RelationPredicate::LeftOf), t(RelationPredicate::Below)], &scene, &cfg);
        assert_eq!(half, 0.5);
    }

    #[test]
    fn irecall_monotone_under_added_satisfied_triplet() {
        let cfg = RelationRuleConfig::default();
        let scene = scene_of(&[("double bed", at(-2.0, 0.0, 0.4)), ("nightstand", at(0.0, 0.0, 0.4))]);
        let good = Triplet {
            subject: "double bed".into(),
            predicate: RelationPredicate::LeftOf,
            object: "nightstand".into(),
        };
        let bad = Triplet {
            predicate: RelationPredicate::Behind,
            ..good.clone()
        };
        let base = irecall(&[bad.clone()], &scene, &cfg);
        assert!(irecall(&[bad, good], &scene, &cfg) >= base);
    }

    #[test]
    fn stats_of_empty_and_coincident() {
        let g = FunctionalGroups::new();
        let s = scene_stats(&scene_of(&[]), &g, 0.05);
        assert_eq!((s.collisions, s.human_violations), (0, 0));
        assert!(s.category_histogram.is_empty());
        let s = scene_stats(&scene_of(&[("desk", at(0.0, 0.0, 0.4)), ("desk", at(0.0, 0.0, 0.4))]), &g, 0.05);
        assert_eq!(s.collisions, 1);
        assert_eq!(s.category_histogram["desk"], 2);
    }

    #[test]
    fn collisions_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let n = rng.random_range(0..10);
            let objs: Vec<(&str, Layout)> = (0..n).map(|_| ("chair", random_layout(&mut rng))).collect();
            let scene = scene_of(&objs);
            let mut expected = 0;
            for i in 0..n {
                for j in 0..n {
                    if i < j && boxes_intersect_3d(&objs[i].1.to_box(), &objs[j].1.to_box()) {
                        expected += 1;
                    }
                }
            }
            assert_eq!(scene_stats(&scene, &FunctionalGroups::new(), 0.05).collisions, expected);
        }
    }

    #[test]
    fn report_table_lists_irecall() {
        let r = EvalReport {
            scenes: 2,
            irecall: 0.75,
            ..Default::default()
        };
        let table = r.to_table();
        assert!(table.contains("iRecall"));
        assert!(table.contains("0.7500"));
    }
}
