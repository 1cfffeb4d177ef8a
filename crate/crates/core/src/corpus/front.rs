//! 3D-FRONT house ingestion.
//!
//! Expected layout: a directory of house files `<uid>.json`, each with a
//! `furniture` list (`uid`, `jid`, `category` or `title`, optional `bbox`
//! with full extents) and `scene.room[*]` entries carrying `type`,
//! `instanceid` and `children` (`ref` to a furniture uid, `pos`, `rot` as an
//! `[x, y, z, w]` quaternion, `scale`). Coordinates are y-up with object
//! origins at the bottom center and model fronts facing `+z`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::{graph_from_layouts, make_caption, split_for, AliasTable, SceneRecord};
use crate::assembly::{AssemblyKit, FurnitureTable};
use crate::error::{Error, Result};
use crate::geometry::Layout;
use crate::prompt::ActionRuleTable;
use crate::scene::{quantize_layout, ObjectNode};
use crate::util::{fnv1a64, stream_rng};
use crate::vocab::{SceneRegistry, SceneType};

#[derive(Deserialize)]
struct House {
    uid: Option<String>,
    #[serde(default)]
    furniture: Vec<Furniture>,
    scene: Option<SceneBlock>,
}

#[derive(Deserialize)]
struct Furniture {
    uid: String,
    jid: Option<String>,
    category: Option<String>,
    title: Option<String>,
    bbox: Option<[f64; 3]>,
}

#[derive(Deserialize)]
struct SceneBlock {
    #[serde(default)]
    room: Vec<Room>,
}

#[derive(Deserialize)]
struct Room {
    #[serde(rename = "type")]
    kind: String,
    instanceid: String,
    #[serde(default)]
    children: Vec<Child>,
}

#[derive(Deserialize)]
struct Child {
    #[serde(rename = "ref")]
    reference: String,
    pos: [f64; 3],
    rot: [f64; 4],
    #[serde(default = "unit_scale")]
    scale: [f64; 3],
}

fn unit_scale() -> [f64; 3] {
    [1.0; 3]
}

fn squash(s: &str) -> String {
    s.chars().filter(char::is_ascii_alphanumeric).collect::<String>().to_ascii_lowercase()
}

fn room_matches(kind: &str, ty: &SceneType) -> bool {
    let k = squash(kind);
    match ty {
        SceneType::Bedroom => k.contains("bedroom"),
        SceneType::LivingRoom => k.contains("livingroom") || k.contains("livingdiningroom"),
        SceneType::DiningRoom => k.contains("diningroom"),
        SceneType::Custom(name) => k == squash(name),
    }
}

/// Options for [`ingest_3dfront`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrontOptions {
    pub seed: u64,
    pub test_fraction: f64,
    pub adjective_prob: f64,
}

impl Default for FrontOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            test_fraction: 0.04,
            adjective_prob: 0.0,
        }
    }
}

/// Reads every room of `scene_type` from a 3D-FRONT directory. Objects whose
/// label does not map into the vocabulary are skipped with a warning, as are
/// rooms whose remaining object count is outside the scene type's range.
pub fn ingest_3dfront(
    dir: &Path,
    scene_type: &SceneType,
    aliases: &AliasTable,
    kit: &AssemblyKit,
    opts: FrontOptions,
) -> Result<Vec<SceneRecord>> {
    if !dir.is_dir() {
        return Err(Error::MissingDataset(dir.to_path_buf()));
    }
    let registry = SceneRegistry::builtin();
    let spec = registry.get(scene_type)?;
    let vocab = &spec.vocabulary;
    let table = FurnitureTable::default();
    let rules = ActionRuleTable::default();
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::MissingDataset(dir.to_path_buf()));
    }
    let mut out = Vec::new();
    for file in files {
        let house: House = serde_json::from_str(&std::fs::read_to_string(&file)?).map_err(|e| Error::Parse {
            path: file.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let house_id = house
            .uid
            .clone()
            .unwrap_or_else(|| file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
        let furniture: BTreeMap<&str, &Furniture> = house.furniture.iter().map(|f| (f.uid.as_str(), f)).collect();
        for room in house.scene.iter().flat_map(|s| &s.room) {
            if !room_matches(&room.kind, scene_type) {
                continue;
            }
            let mut cats = Vec::new();
            let mut layouts = Vec::new();
            let mut codes = Vec::new();
            for child in &room.children {
                let Some(f) = furniture.get(child.reference.as_str()) else {
                    continue;
                };
                let Some(raw) = f.category.as_deref().or(f.title.as_deref()) else {
                    continue;
                };
                let Some(cat) = aliases.resolve(raw, vocab) else {
                    log::warn!("{house_id}/{}: skipping unmapped object '{raw}'", room.instanceid);
                    continue;
                };
                let asset = f.jid.as_deref().and_then(|j| kit.catalog.get(j));
                let half = match (f.bbox, asset) {
                    (Some(b), _) => [b[0] / 2.0, b[2] / 2.0, b[1] / 2.0],
                    (None, Some(a)) => a.size,
                    (None, None) => table.get(&cat).map(|s| s.size).unwrap_or([0.4; 3]),
                };
                let sc = child.scale;
                let s = [half[0] * sc[0].abs(), half[1] * sc[2].abs(), half[2] * sc[1].abs()];
                let [_, qy, _, qw] = child.rot;
                let yaw = 2.0 * qy.atan2(qw) + std::f64::consts::PI;
                let p = child.pos;
                layouts.push(Layout::new([p[0], -p[2], p[1] + s[2]], s, yaw));
                codes.push(match asset {
                    Some(a) => kit.codebook.quantize(&a.feature),
                    None => kit.feature_code(&cat, &[]),
                });
                cats.push(cat);
            }
            if cats.len() < spec.min_objects || cats.len() > spec.max_objects {
                log::warn!(
                    "{house_id}/{}: {} usable objects, outside {}..={}",
                    room.instanceid,
                    cats.len(),
                    spec.min_objects,
                    spec.max_objects
                );
                continue;
            }
            let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for l in &layouts {
                for c in l.to_box().footprint() {
                    for k in 0..2 {
                        lo[k] = lo[k].min(c[k]);
                        hi[k] = hi[k].max(c[k]);
                    }
                }
            }
            let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
            let layouts: Vec<Layout> = layouts
                .into_iter()
                .map(|mut l| {
                    l.t[0] -= center[0];
                    l.t[1] -= center[1];
                    quantize_layout(&l)
                })
                .collect();
            let nodes = cats
                .iter()
                .zip(&codes)
                .map(|(c, &f)| ObjectNode {
                    category: vocab.index_of(c).expect("resolved against vocab"),
                    feature_code: f,
                    action: rules.lookup(scene_type, c),
                })
                .collect();
            let graph = graph_from_layouts(nodes, &layouts);
            let id = format!("{house_id}/{}", room.instanceid);
            let styles = vec![String::new(); layouts.len()];
            let mut rng = stream_rng(opts.seed, fnv1a64(id.as_bytes()));
            let (caption, triplets) = make_caption(&graph, vocab, &styles, opts.adjective_prob, &mut rng);
            out.push(SceneRecord {
                split: split_for(&id, opts.test_fraction),
                id,
                scene_type: scene_type.clone(),
                graph,
                layouts,
                styles,
                caption,
                triplets,
            });
        }
    }
    Ok(out)
}
