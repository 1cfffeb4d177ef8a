//! Text-conditioned indoor scene synthesis with human-aware refinement.
//!
//! The pipeline runs in three stages:
//!
//! 1. a prompt is parsed into a partial scene graph and completed by a
//!    discrete (absorbing-mask) graph diffusion model ([`graph_diffusion`]);
//! 2. a continuous diffusion model attaches a layout to every node
//!    ([`layout_diffusion`]) and assets plus human pose proxies are retrieved
//!    ([`assembly`]);
//! 3. collisions between humans and furniture are resolved
//!    ([`optimizer`]).
//!
//! Models are trained on a procedural corpus ([`corpus`]) and evaluated with
//! geometric relation checks ([`eval`]).

pub mod assembly;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod graph_diffusion;
pub mod groups;
pub mod layout_diffusion;
pub mod neural;
pub mod optimizer;
pub mod pipeline;
pub mod par;
pub mod prompt;
pub mod scene;
pub mod util;
pub mod vocab;

pub use error::{Error, Result};
pub use geometry::{boxes_intersect_3d, footprint_overlap_area, Layout, OrientedBox};
pub use groups::FunctionalGroups;
pub use scene::{ObjectNode, PlacedHuman, PoseId, Scene, SceneGraph, SceneObject};
pub use vocab::{
    inverse_predicate, CategoryVocabulary, HumanAction, RelationPredicate, SceneRegistry,
    SceneType,
};
