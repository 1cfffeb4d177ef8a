//! Human-aware scene refinement.
//!
//! For each human (in index order) and each other object (in index order)
//! whose box intersects the human's box:
//!
//! * an object of the contact object's category is pushed away;
//! * an object in a functional group with the contact object is pushed away
//!   only when the footprint overlap reaches `beta`;
//! * anything else is removed, together with its own human.
//!
//! Passes repeat until one makes no change, so knock-on collisions caused by
//! a move are caught by the next pass.

use serde::{Deserialize, Serialize};

use crate::geometry::{boxes_intersect_3d, footprint_overlap_area, OrientedBox};
use crate::groups::FunctionalGroups;
use crate::scene::Scene;

/// Resolution of the binary refinement of a move distance.
const MOVE_TOLERANCE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Footprint-overlap threshold (m^2) for in-group collisions.
    pub beta: f64,
    /// Granularity (m) of push-away moves.
    pub max_move_step: f64,
    /// Move attempts before an object is declared stuck.
    pub max_attempts: usize,
    /// Upper bound on full passes.
    pub max_passes: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta: 0.05,
            max_move_step: 0.1,
            max_attempts: 100,
            max_passes: 4,
            seed: 0,
        }
    }
}

/// Per-object permission used by the zero-shot editing modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protection {
    /// May be moved or removed.
    Free,
    /// May be moved but never removed.
    Movable,
    /// Never touched.
    Locked,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    MovedSameCategory,
    MovedInGroup,
    /// Out-of-group intruder that may not be removed, pushed instead.
    MovedOutOfGroup,
    Removed,
    /// Push-away failed within the attempt budget.
    RemovedNoConvergence,
    KeptBelowThreshold,
    KeptProtected,
}

impl Rule {
    pub fn changes_scene(self) -> bool {
        !matches!(self, Rule::KeptBelowThreshold | Rule::KeptProtected)
    }
}

/// One decision. `human` and `object` index the scene as it was at the
/// start of `pass` (1-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub pass: usize,
    pub human: usize,
    pub object: usize,
    pub rule: Rule,
    pub displacement: [f64; 2],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub entries: Vec<ReportEntry>,
    /// Passes run, including the final one that changed nothing.
    pub passes: usize,
    pub converged: bool,
}

impl OptimizationReport {
    /// True when no object was moved or removed.
    pub fn is_noop(&self) -> bool {
        !self.entries.iter().any(|e| e.rule.changes_scene())
    }

    /// Entries that moved or removed something in `pass`.
    pub fn changes_in_pass(&self, pass: usize) -> usize {
        self.entries
            .iter()
            .filter(|e| e.pass == pass && e.rule.changes_scene())
            .count()
    }

    pub fn removed(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e.rule, Rule::Removed | Rule::RemovedNoConvergence))
            .count()
    }
}

/// Runs passes with every object [`Protection::Free`].
pub fn optimize_scene(scene: &Scene, groups: &FunctionalGroups, cfg: &OptimizerConfig) -> (Scene, OptimizationReport) {
    optimize_scene_protected(scene, groups, cfg, &vec![Protection::Free; scene.objects.len()])
}

pub fn optimize_scene_protected(
    scene: &Scene,
    groups: &FunctionalGroups,
    cfg: &OptimizerConfig,
    protection: &[Protection],
) -> (Scene, OptimizationReport) {
    let mut scene = scene.clone();
    let mut protection = protection.to_vec();
    protection.resize(scene.objects.len(), Protection::Free);
    let mut report = OptimizationReport::default();
    for pass in 1..=cfg.max_passes.max(1) {
        report.passes = pass;
        let changed = run_pass(&mut scene, &mut protection, groups, cfg, pass, &mut report.entries);
        if !changed {
            report.converged = true;
            break;
        }
    }
    (scene, report)
}

fn horizontal_direction(from: &OrientedBox, to: &OrientedBox, fallback: &OrientedBox) -> [f64; 2] {
    for src in [from, fallback] {
        let d = [to.center[0] - src.center[0], to.center[1] - src.center[1]];
        let n = d[0].hypot(d[1]);
        if n > 1e-9 {
            return [d[0] / n, d[1] / n];
        }
    }
    [1.0, 0.0]
}

/// Smallest push along `dir` (a multiple of `step`, then refined down to
/// `MOVE_TOLERANCE`) that separates `obj` from `human`.
fn push_distance(human: &OrientedBox, obj: &OrientedBox, dir: [f64; 2], cfg: &OptimizerConfig) -> Option<f64> {
    let clear = |d: f64| !boxes_intersect_3d(human, &obj.translated([dir[0] * d, dir[1] * d, 0.0]));
    let step = cfg.max_move_step.max(MOVE_TOLERANCE);
    let k = (1..=cfg.max_attempts).find(|&k| clear(k as f64 * step))?;
    let (mut lo, mut hi) = ((k - 1) as f64 * step, k as f64 * step);
    while hi - lo > MOVE_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if clear(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

fn run_pass(
    scene: &mut Scene,
    protection: &mut Vec<Protection>,
    groups: &FunctionalGroups,
    cfg: &OptimizerConfig,
    pass: usize,
    log: &mut Vec<ReportEntry>,
) -> bool {
    let n = scene.objects.len();
    let mut alive = vec![true; n];
    let mut moved = vec![false; n];
    let mut changed = false;
    for h in 0..scene.humans.len() {
        let contact = scene.humans[h].contact_object_index;
        if !alive[contact] {
            continue;
        }
        for j in 0..n {
            if j == contact || !alive[j] {
                continue;
            }
            let hb = scene.humans[h].world_box();
            let ob = scene.objects[j].layout.to_box();
            if !boxes_intersect_3d(&hb, &ob) {
                continue;
            }
            let mut entry = |rule: Rule, displacement: [f64; 2]| {
                log.push(ReportEntry {
                    pass,
                    human: h,
                    object: j,
                    rule,
                    displacement,
                })
            };
            let c_contact = &scene.objects[contact].category;
            let c_other = &scene.objects[j].category;
            let rule = if c_contact == c_other {
                Rule::MovedSameCategory
            } else if groups.contains(c_contact, c_other) {
                if footprint_overlap_area(&hb, &ob) < cfg.beta {
                    entry(Rule::KeptBelowThreshold, [0.0; 2]);
                    continue;
                }
                Rule::MovedInGroup
            } else {
                match protection[j] {
                    Protection::Free if !moved[j] => {
                        alive[j] = false;
                        changed = true;
                        entry(Rule::Removed, [0.0; 2]);
                        continue;
                    }
                    Protection::Free => {
                        // already moved in this pass; the next pass decides
                        entry(Rule::KeptProtected, [0.0; 2]);
                        continue;
                    }
                    _ => Rule::MovedOutOfGroup,
                }
            };
            if protection[j] == Protection::Locked {
                entry(Rule::KeptProtected, [0.0; 2]);
                continue;
            }
            let contact_box = scene.objects[contact].layout.to_box();
            let dir = horizontal_direction(&hb, &ob, &contact_box);
            match push_distance(&hb, &ob, dir, cfg) {
                Some(d) => {
                    let delta = [dir[0] * d, dir[1] * d];
                    for k in 0..2 {
                        scene.objects[j].layout.t[k] += delta[k];
                    }
                    for other in scene.humans.iter_mut().filter(|x| x.contact_object_index == j) {
                        for k in 0..2 {
                            other.layout.t[k] += delta[k];
                        }
                    }
                    moved[j] = true;
                    changed = true;
                    entry(rule, delta);
                }
                None if protection[j] == Protection::Free && !moved[j] => {
                    alive[j] = false;
                    changed = true;
                    entry(Rule::RemovedNoConvergence, [0.0; 2]);
                }
                None => entry(Rule::KeptProtected, [0.0; 2]),
            }
        }
    }
    if alive.iter().any(|&a| !a) {
        compact(scene, protection, &alive);
    }
    changed
}

/// Drops dead objects and their humans, renumbering contact indices.
fn compact(scene: &mut Scene, protection: &mut Vec<Protection>, alive: &[bool]) {
    let mut remap = vec![usize::MAX; alive.len()];
    let mut next = 0;
    for (i, &a) in alive.iter().enumerate() {
        if a {
            remap[i] = next;
            next += 1;
        }
    }
    let mut i = 0;
    scene.objects.retain(|_| {
        i += 1;
        alive[i - 1]
    });
    let mut i = 0;
    protection.retain(|_| {
        i += 1;
        alive[i - 1]
    });
    scene.humans.retain(|h| alive[h.contact_object_index]);
    for h in &mut scene.humans {
        h.contact_object_index = remap[h.contact_object_index];
    }
}

/// Human/object pairs that still break the placement rules.
pub fn postcondition_violations(scene: &Scene, groups: &FunctionalGroups, beta: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for h in 0..scene.humans.len() {
        for j in 0..scene.objects.len() {
            if crate::eval::human_object_violation(scene, h, j, groups, beta) {
                out.push((h, j));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{place_human, PoseLibrary};
    use crate::geometry::Layout;
    use crate::groups::default_groups;
    use crate::scene::SceneObject;
    use crate::vocab::{HumanAction, SceneType};

    fn obj(cat: &str, action: HumanAction, l: Layout) -> SceneObject {
        SceneObject {
            category: cat.into(),
            feature_code: 0,
            action,
            layout: l,
            asset_id: None,
        }
    }

    fn scene(objects: Vec<SceneObject>) -> Scene {
        let poses = PoseLibrary::default();
        let mut s = Scene::empty(SceneType::Bedroom);
        s.humans = objects
            .iter()
            .enumerate()
            .filter_map(|(i, o)| place_human(&poses, &o.category, o.action, &o.layout, i))
            .collect();
        s.objects = objects;
        s
    }

    #[test]
    fn empty_scene_untouched() {
        let s = scene(vec![obj("desk", HumanAction::NoneAction, Layout::new([0.0, 0.0, 0.38], [0.6, 0.3, 0.38], 0.0))]);
        let (out, report) = optimize_scene(&s, &default_groups(), &OptimizerConfig::default());
        assert_eq!(out, s);
        assert!(report.entries.is_empty() && report.is_noop());
    }

    #[test]
    fn same_category_chair_is_pushed_away() {
        let a = Layout::new([0.0, 0.0, 0.45], [0.25, 0.25, 0.45], 0.0);
        let b = Layout::new([0.2, 0.35, 0.45], [0.25, 0.25, 0.45], 0.0);
        let s = scene(vec![
            obj("chair", HumanAction::Sitting, a),
            obj("chair", HumanAction::NoneAction, b),
        ]);
        let (out, report) = optimize_scene(&s, &default_groups(), &OptimizerConfig::default());
        assert_eq!(out.objects.len(), 2);
        assert_eq!(out.objects[0].layout, a);
        assert_ne!(out.objects[1].layout, b);
        assert!(!boxes_intersect_3d(&out.humans[0].world_box(), &out.objects[1].layout.to_box()));
        assert_eq!(report.entries[0].rule, Rule::MovedSameCategory);
        assert!(report.converged);
    }

    #[test]
    fn small_in_group_overlap_is_kept() {
        let sofa = Layout::new([0.0, 0.0, 0.4], [0.9, 0.42, 0.4], 0.0);
        let poses = PoseLibrary::default();
        let h = place_human(&poses, "sofa", HumanAction::Lying, &sofa, 0).unwrap();
        let hb = h.world_box();
        // coffee table straddling the human's footprint edge by a thin strip
        let edge = hb.center[1] + hb.half_extents[1];
        let table = Layout::new([0.0, edge + 0.3 - 0.02, 0.22], [0.5, 0.3, 0.22], 0.0);
        let area = footprint_overlap_area(&hb, &table.to_box());
        assert!(area > 0.0 && area < 0.05, "{area}");
        let s = scene(vec![
            obj("sofa", HumanAction::Lying, sofa),
            obj("coffee table", HumanAction::NoneAction, table),
        ]);
        let (out, report) = optimize_scene(&s, &default_groups(), &OptimizerConfig::default());
        assert_eq!(out, s);
        assert_eq!(report.entries[0].rule, Rule::KeptBelowThreshold);
        assert!(report.is_noop());
    }

    #[test]
    fn out_of_group_intruder_is_removed() {
        let bed = Layout::new([0.0, 0.0, 0.45], [0.95, 1.05, 0.45], 0.0);
        let chair = Layout::new([0.1, 0.2, 0.45], [0.23, 0.25, 0.45], 0.0);
        let s = scene(vec![
            obj("double bed", HumanAction::Lying, bed),
            obj("dining chair", HumanAction::Sitting, chair),
        ]);
        let (out, report) = optimize_scene(&s, &default_groups(), &OptimizerConfig::default());
        assert_eq!(out.objects.len(), 1);
        assert_eq!(out.humans.len(), 1);
        assert_eq!(out.humans[0].contact_object_index, 0);
        assert_eq!(report.removed(), 1);
    }

    #[test]
    fn locked_objects_stay() {
        let bed = Layout::new([0.0, 0.0, 0.45], [0.95, 1.05, 0.45], 0.0);
        let chair = Layout::new([0.1, 0.2, 0.45], [0.23, 0.25, 0.45], 0.0);
        let s = scene(vec![
            obj("double bed", HumanAction::Lying, bed),
            obj("dining chair", HumanAction::NoneAction, chair),
        ]);
        let cfg = OptimizerConfig::default();
        let (out, report) = optimize_scene_protected(&s, &default_groups(), &cfg, &[Protection::Locked; 2]);
        assert_eq!(out, s);
        assert!(report.is_noop());
        let (out, _) = optimize_scene_protected(&s, &default_groups(), &cfg, &[Protection::Movable; 2]);
        assert_eq!(out.objects.len(), 2);
        assert!(postcondition_violations(&out, &default_groups(), cfg.beta).is_empty());
    }

    #[test]
    fn second_run_is_a_noop() {
        let a = Layout::new([0.0, 0.0, 0.45], [0.25, 0.25, 0.45], 0.0);
        let b = Layout::new([0.1, 0.3, 0.45], [0.25, 0.25, 0.45], 0.3);
        let c = Layout::new([-0.2, 0.4, 0.45], [0.25, 0.25, 0.45], 0.0);
        let s = scene(vec![
            obj("chair", HumanAction::Sitting, a),
            obj("chair", HumanAction::Sitting, b),
            obj("chair", HumanAction::Sitting, c),
        ]);
        let groups = default_groups();
        let cfg = OptimizerConfig::default();
        let (once, r1) = optimize_scene(&s, &groups, &cfg);
        assert!(r1.converged);
        assert!(postcondition_violations(&once, &groups, cfg.beta).is_empty());
        let (twice, r2) = optimize_scene(&once, &groups, &cfg);
        assert_eq!(once, twice);
        assert!(r2.is_noop());
    }
}
