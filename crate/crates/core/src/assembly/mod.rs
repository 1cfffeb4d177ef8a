//! Turning a clean graph plus layouts into a scene: asset retrieval, the
//! feature codebook, and human pose placement.

mod catalog;
mod codebook;
mod human;

pub use catalog::{
    ingest_3dfuture, retrieve_object, style_feature, Asset, AssetCatalog, FurnitureSpec,
    FurnitureTable, Mount, DEFAULT_K_TOP, STYLES,
};
pub use codebook::{
    fit_codebook, quantization_error, quantize_feature, FeatureCodebook, DEFAULT_CODEBOOK_SIZE,
    DEFAULT_FEATURE_DIM,
};
pub use human::{place_human, Footprint, HumanPoseAsset, PoseLibrary};

use crate::error::{Error, Result};
use crate::geometry::Layout;
use crate::scene::{Scene, SceneGraph, SceneObject};
use crate::vocab::{CategoryVocabulary, HumanAction};

/// Everything retrieval needs, loaded once.
#[derive(Clone, Debug)]
pub struct AssemblyKit {
    pub catalog: AssetCatalog,
    pub codebook: FeatureCodebook,
    pub poses: PoseLibrary,
    pub k_top: usize,
}

impl AssemblyKit {
    /// Procedural catalog with a codebook fitted to its features.
    pub fn procedural(seed: u64) -> Result<Self> {
        Self::from_catalog(AssetCatalog::procedural(seed), seed)
    }

    /// Kit over an existing catalog; the codebook is fitted with `seed`.
    pub fn from_catalog(catalog: AssetCatalog, seed: u64) -> Result<Self> {
        let codebook = fit_codebook(&catalog.features(), DEFAULT_CODEBOOK_SIZE, seed)?;
        Ok(Self {
            catalog,
            codebook,
            poses: PoseLibrary::default(),
            k_top: DEFAULT_K_TOP,
        })
    }

    /// Feature code for a category in the given style words.
    pub fn feature_code(&self, category: &str, adjectives: &[String]) -> usize {
        self.codebook.quantize(&style_feature(category, adjectives))
    }
}

/// Fits assets and humans to a graph and its layouts.
pub fn assemble_scene(
    graph: &SceneGraph,
    layouts: &[Layout],
    vocab: &CategoryVocabulary,
    kit: &AssemblyKit,
) -> Result<Scene> {
    if layouts.len() != graph.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} layouts for {} nodes",
            layouts.len(),
            graph.len()
        )));
    }
    let mut scene = Scene::empty(vocab.scene_type.clone());
    for (i, (node, layout)) in graph.nodes.iter().zip(layouts).enumerate() {
        if node.category >= vocab.len() || node.feature_code >= kit.codebook.len() {
            return Err(Error::InvalidInput(format!("node {i} has out-of-range attributes")));
        }
        let category = vocab.name(node.category).to_string();
        let asset = retrieve_object(
            &category,
            kit.codebook.entry(node.feature_code),
            layout.s,
            &kit.catalog,
            kit.k_top,
        )?;
        if node.action != HumanAction::NoneAction {
            if let Some(h) = place_human(&kit.poses, &category, node.action, layout, i) {
                scene.humans.push(h);
            }
        }
        scene.objects.push(SceneObject {
            category,
            feature_code: node.feature_code,
            action: node.action,
            layout: *layout,
            asset_id: Some(asset.id.clone()),
        });
    }
    Ok(scene)
}

/// Re-places every human from its object's current layout and action.
pub fn replace_humans(scene: &mut Scene, poses: &PoseLibrary) {
    scene.humans = scene
        .objects
        .iter()
        .enumerate()
        .filter_map(|(i, o)| place_human(poses, &o.category, o.action, &o.layout, i))
        .collect();
}
