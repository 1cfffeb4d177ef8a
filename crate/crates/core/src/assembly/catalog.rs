//! Asset catalog and three-stage retrieval (category, feature, size).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{dot, edit_distance, hashed_unit_vector, normalize, stream_rng};
use crate::vocab::{normalize_category, SceneRegistry};

use super::codebook::DEFAULT_FEATURE_DIM;

const FURNITURE: &str = include_str!("../../data/furniture.json");

pub const DEFAULT_K_TOP: usize = 5;

pub const STYLES: [&str; 8] = [
    "modern", "classic", "wooden", "white", "black", "grey", "rustic", "minimalist",
];

/// Weight of the category direction in an asset feature, relative to style.
const CATEGORY_WEIGHT: f64 = 0.6;
const FEATURE_NOISE: f64 = 0.15;
const VARIANTS_PER_STYLE: usize = 2;
const SIZE_JITTER: f64 = 0.12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mount {
    #[default]
    Floor,
    Ceiling,
}

/// Nominal half-extents of one furniture category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FurnitureSpec {
    pub size: [f64; 3],
    #[serde(default)]
    pub mount: Mount,
}

/// Category -> nominal size table.
#[derive(Clone, Debug, PartialEq)]
pub struct FurnitureTable {
    specs: BTreeMap<String, FurnitureSpec>,
}

impl FurnitureTable {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, FurnitureSpec> = serde_json::from_str(text)?;
        let specs = raw
            .into_iter()
            .map(|(k, v)| (normalize_category(&k), v))
            .collect();
        Ok(Self { specs })
    }

    pub fn get(&self, category: &str) -> Option<&FurnitureSpec> {
        self.specs.get(&normalize_category(category))
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.specs.keys().map(String::as_str)
    }
}

impl Default for FurnitureTable {
    fn default() -> Self {
        Self::from_json(FURNITURE).expect("bundled furniture table parses")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Asset {
    pub id: String,
    pub category: String,
    pub feature: Vec<f64>,
    pub size: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<PathBuf>,
}

/// Immutable asset collection with a per-category index.
#[derive(Clone, Debug, PartialEq)]
pub struct AssetCatalog {
    assets: Vec<Asset>,
    by_category: BTreeMap<String, Vec<usize>>,
}

/// Feature of a category rendered in the given style words.
pub fn style_feature(category: &str, adjectives: &[String]) -> Vec<f64> {
    let dim = DEFAULT_FEATURE_DIM;
    let mut v: Vec<f64> = hashed_unit_vector(&normalize_category(category), dim)
        .into_iter()
        .map(|x| x * CATEGORY_WEIGHT)
        .collect();
    if !adjectives.is_empty() {
        let w = 1.0 / adjectives.len() as f64;
        for adj in adjectives {
            let s = hashed_unit_vector(&format!("style:{}", adj.to_lowercase()), dim);
            v.iter_mut().zip(s).for_each(|(a, b)| *a += w * b);
        }
    }
    normalize(&mut v);
    v
}

impl AssetCatalog {
    pub fn new(mut assets: Vec<Asset>) -> Result<Self> {
        for a in &mut assets {
            a.category = normalize_category(&a.category);
            normalize(&mut a.feature);
            if a.size.iter().any(|&s| !(s > 0.0)) || a.feature.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("asset '{}' has invalid size or feature", a.id)));
            }
        }
        assets.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = assets.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::InvalidInput(format!("duplicate asset id '{}'", w[0].id)));
        }
        let mut by_category: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, a) in assets.iter().enumerate() {
            by_category.entry(a.category.clone()).or_default().push(i);
        }
        Ok(Self { assets, by_category })
    }

    /// Categories x styles x size jitter, over every built-in vocabulary.
    pub fn procedural(seed: u64) -> Self {
        let table = FurnitureTable::default();
        let registry = SceneRegistry::builtin();
        let mut cats: Vec<String> = registry
            .scene_types()
            .flat_map(|t| registry.get(t).expect("listed").vocabulary.names().to_vec())
            .collect();
        cats.sort();
        cats.dedup();
        let mut assets = Vec::new();
        for cat in &cats {
            let nominal = table.get(cat).map_or([0.4, 0.4, 0.4], |s| s.size);
            let mut rng = stream_rng(seed, crate::util::fnv1a64(cat.as_bytes()));
            for style in STYLES {
                let base = style_feature(cat, &[style.to_string()]);
                for v in 0..VARIANTS_PER_STYLE {
                    let mut feature: Vec<f64> = base
                        .iter()
                        .map(|x| x + FEATURE_NOISE * rng.sample::<f64, _>(rand_distr::StandardNormal) / (DEFAULT_FEATURE_DIM as f64).sqrt())
                        .collect();
                    normalize(&mut feature);
                    let size = nominal.map(|s| s * (1.0 + SIZE_JITTER * (2.0 * rng.random::<f64>() - 1.0)));
                    assets.push(Asset {
                        id: format!("{}-{style}-{v}", cat.replace(' ', "_")),
                        category: cat.clone(),
                        feature,
                        size,
                        mesh: None,
                    });
                }
            }
        }
        Self::new(assets).expect("procedural catalog is valid")
    }

    pub fn assets(&self) -> &[Asset] {
        &self.assets
    }

    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Asset> {
        self.assets
            .binary_search_by(|a| a.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.assets[i])
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.by_category.keys().map(String::as_str)
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.assets.iter().map(|a| a.feature.clone()).collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.assets)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Category present in the catalog closest to `category` by edit
    /// distance (ties by name).
    pub fn nearest_category(&self, category: &str) -> Option<&str> {
        let c = normalize_category(category);
        self.by_category
            .keys()
            .min_by_key(|k| (edit_distance(&c, k), (*k).clone()))
            .map(String::as_str)
    }
}

/// Retrieves an asset: filter by category, rank by cosine similarity to
/// `feature` (ties by id), keep the best `k_top`, then pick the closest
/// size (ties by id). An unknown category falls back to the nearest
/// category name.
pub fn retrieve_object<'a>(
    category: &str,
    feature: &[f64],
    size: [f64; 3],
    catalog: &'a AssetCatalog,
    k_top: usize,
) -> Result<&'a Asset> {
    let c = normalize_category(category);
    let ids = match catalog.by_category.get(&c) {
        Some(ids) => ids,
        None => {
            let near = catalog
                .nearest_category(&c)
                .ok_or_else(|| Error::EmptyCategory(c.clone()))?;
            log::warn!("no assets for '{c}'; retrieving from '{near}'");
            &catalog.by_category[near]
        }
    };
    let mut q = feature.to_vec();
    normalize(&mut q);
    let mut ranked: Vec<(f64, &Asset)> = ids
        .iter()
        .map(|&i| (dot(&catalog.assets[i].feature, &q), &catalog.assets[i]))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.id.cmp(&b.1.id)));
    ranked.truncate(k_top.max(1));
    let size_dist = |a: &Asset| {
        a.size
            .iter()
            .zip(&size)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    ranked
        .into_iter()
        .map(|(_, a)| a)
        .min_by(|a, b| size_dist(a).total_cmp(&size_dist(b)).then_with(|| a.id.cmp(&b.id)))
        .ok_or(Error::EmptyCategory(c))
}

#[derive(Deserialize)]
struct FutureModelInfo {
    model_id: String,
    #[serde(default)]
    category: Option<String>,
    #[serde(default)]
    style: Option<String>,
    #[serde(default)]
    theme: Option<String>,
    #[serde(default)]
    material: Option<String>,
}

/// Axis-aligned half-extents of the vertices in an OBJ file, converted from
/// the y-up asset frame to z-up.
fn obj_half_extents(path: &Path) -> Option<[f64; 3]> {
    let text = std::fs::read_to_string(path).ok()?;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for line in text.lines() {
        let mut it = line.split_whitespace();
        if it.next() != Some("v") {
            continue;
        }
        let v: Vec<f64> = it.take(3).filter_map(|x| x.parse().ok()).collect();
        if v.len() == 3 {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
    }
    if !lo[0].is_finite() {
        return None;
    }
    let h = [0.5 * (hi[0] - lo[0]), 0.5 * (hi[1] - lo[1]), 0.5 * (hi[2] - lo[2])];
    Some([h[0], h[2], h[1]].map(|x| x.max(crate::geometry::MIN_HALF_EXTENT)))
}

/// Builds a catalog from a 3D-FUTURE directory: `model_info.json` at the
/// root and one `<model_id>/raw_model.obj` per model. Categories go through
/// `aliases`; features are derived from the style/theme/material tags.
pub fn ingest_3dfuture(dir: &Path, aliases: &crate::corpus::AliasTable) -> Result<AssetCatalog> {
    let info = dir.join("model_info.json");
    if !info.is_file() {
        return Err(Error::MissingDataset(info));
    }
    let records: Vec<FutureModelInfo> = serde_json::from_str(&std::fs::read_to_string(&info)?)?;
    let table = FurnitureTable::default();
    let mut assets = Vec::new();
    for r in records {
        let Some(raw) = r.category.as_deref() else {
            continue;
        };
        let Some(cat) = aliases.resolve_any(raw) else {
            log::warn!("skipping model {}: unmapped category '{raw}'", r.model_id);
            continue;
        };
        let mesh = dir.join(&r.model_id).join("raw_model.obj");
        let size = obj_half_extents(&mesh)
            .or_else(|| table.get(&cat).map(|s| s.size))
            .unwrap_or([0.4, 0.4, 0.4]);
        let tags: Vec<String> = [r.style, r.theme, r.material]
            .into_iter()
            .flatten()
            .filter(|t| !t.is_empty())
            .collect();
        assets.push(Asset {
            id: r.model_id,
            feature: style_feature(&cat, &tags),
            category: cat,
            size,
            mesh: mesh.is_file().then_some(mesh),
        });
    }
    AssetCatalog::new(assets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn asset(id: &str, cat: &str, feature: Vec<f64>, size: [f64; 3]) -> Asset {
        Asset {
            id: id.into(),
            category: cat.into(),
            feature,
            size,
            mesh: None,
        }
    }

    #[test]
    fn single_asset_category() {
        let cat = AssetCatalog::new(vec![
            asset("a", "desk", vec![1.0, 0.0], [1.0; 3]),
            asset("b", "chair", vec![0.0, 1.0], [0.3; 3]),
        ])
        .unwrap();
        let got = retrieve_object("desk", &[0.0, 1.0], [5.0; 3], &cat, 5).unwrap();
        assert_eq!(got.id, "a");
    }

    #[test]
    fn size_stage_decides_equal_cosine() {
        let cat = AssetCatalog::new(vec![
            asset("big", "desk", vec![1.0, 0.0], [2.0; 3]),
            asset("small", "desk", vec![1.0, 0.0], [1.0; 3]),
        ])
        .unwrap();
        let got = retrieve_object("desk", &[1.0, 0.0], [1.1, 1.0, 1.0], &cat, 5).unwrap();
        assert_eq!(got.id, "small");
    }

    #[test]
    fn unknown_category_falls_back_by_name() {
        let cat = AssetCatalog::new(vec![asset("a", "double bed", vec![1.0], [1.0; 3])]).unwrap();
        assert_eq!(retrieve_object("double beds", &[1.0], [1.0; 3], &cat, 5).unwrap().id, "a");
        let empty = AssetCatalog::new(vec![]).unwrap();
        assert!(matches!(
            retrieve_object("desk", &[1.0], [1.0; 3], &empty, 5),
            Err(Error::EmptyCategory(_))
        ));
    }

    #[test]
    fn procedural_catalog_covers_vocabularies() {
        let cat = AssetCatalog::procedural(0);
        let registry = SceneRegistry::builtin();
        for t in registry.scene_types() {
            for name in registry.get(t).unwrap().vocabulary.names() {
                assert!(cat.categories().any(|c| c == name), "{name}");
            }
        }
        assert_eq!(cat, AssetCatalog::procedural(0));
        let back = AssetCatalog::from_json(&cat.to_json().unwrap()).unwrap();
        assert_eq!(back.len(), cat.len());
    }

    #[test]
    fn furniture_table_covers_vocabularies() {
        let table = FurnitureTable::default();
        let registry = SceneRegistry::builtin();
        for t in registry.scene_types() {
            for name in registry.get(t).unwrap().vocabulary.names() {
                assert!(table.get(name).is_some(), "{name}");
            }
        }
    }

    #[test]
    fn style_adjectives_steer_retrieval() {
        let cat = AssetCatalog::procedural(0);
        let q = style_feature("wardrobe", &["wooden".to_string()]);
        let got = retrieve_object("wardrobe", &q, [0.6, 0.3, 1.1], &cat, 2).unwrap();
        assert!(got.id.contains("wooden"), "{}", got.id);
    }
}
