//! Training and evaluation scenes: the procedural generator, 3D-FRONT
//! ingestion and the newline-delimited JSON corpus format.
//!
//! A corpus file starts with one header object followed by one
//! [`SceneRecord`] per line.

mod alias;
mod front;
mod generate;
mod template;

pub use alias::AliasTable;
pub use front::{ingest_3dfront, FrontOptions};
pub use generate::{generate_corpus, graph_from_layouts, make_caption, split_for, GeneratorConfig};
pub use template::{
    bundled_templates, load_templates, Align, AnchorTemplate, Choices, Facing, GroupTemplate,
    MemberTemplate, Placement, RoomSpec, SceneTemplate, Side, SingleTemplate,
};

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assembly::{place_human, PoseLibrary};
use crate::error::{Error, Result};
use crate::geometry::Layout;
use crate::prompt::Triplet;
use crate::scene::{Scene, SceneGraph, SceneObject};
use crate::vocab::{CategoryVocabulary, SceneType};

pub const CORPUS_FORMAT: &str = "hoisynth-corpus";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One scene with its ground-truth graph, layouts and caption.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub id: String,
    pub scene_type: SceneType,
    pub split: Split,
    pub graph: SceneGraph,
    pub layouts: Vec<Layout>,
    /// Style word per object; empty strings when unknown.
    pub styles: Vec<String>,
    pub caption: String,
    pub triplets: Vec<Triplet>,
}

impl SceneRecord {
    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }

    /// The record as an assembled scene (no asset ids), with humans placed
    /// on every interactive object.
    pub fn to_scene(&self, vocab: &CategoryVocabulary, poses: &PoseLibrary) -> Result<Scene> {
        if self.layouts.len() != self.graph.len() {
            return Err(Error::ShapeMismatch(format!(
                "record {} has {} layouts for {} nodes",
                self.id,
                self.layouts.len(),
                self.graph.len()
            )));
        }
        let mut scene = Scene::empty(self.scene_type.clone());
        for (i, (node, layout)) in self.graph.nodes.iter().zip(&self.layouts).enumerate() {
            if node.category >= vocab.len() {
                return Err(Error::InvalidInput(format!("record {} has category {}", self.id, node.category)));
            }
            let category = vocab.name(node.category).to_string();
            if let Some(h) = place_human(poses, &category, node.action, layout, i) {
                scene.humans.push(h);
            }
            scene.objects.push(SceneObject {
                category,
                feature_code: node.feature_code,
                action: node.action,
                layout: *layout,
                asset_id: None,
            });
        }
        Ok(scene)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusHeader {
    pub format: String,
    pub version: u32,
    /// Digest of the generator configuration, or a source description.
    pub generator: String,
    pub records: usize,
}

impl CorpusHeader {
    pub fn new(generator: impl Into<String>, records: usize) -> Self {
        Self {
            format: CORPUS_FORMAT.to_string(),
            version: CORPUS_VERSION,
            generator: generator.into(),
            records,
        }
    }
}

pub fn write_corpus<W: Write>(mut w: W, generator: &str, records: &[SceneRecord]) -> Result<()> {
    serde_json::to_writer(&mut w, &CorpusHeader::new(generator, records.len()))?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a corpus; `label` names the source in parse errors.
pub fn read_corpus<R: BufRead>(r: R, label: &str) -> Result<(CorpusHeader, Vec<SceneRecord>)> {
    let err = |line: usize, message: String| Error::Parse {
        path: label.to_string(),
        line,
        message,
    };
    let mut lines = r.lines().enumerate();
    let header: CorpusHeader = match lines.next() {
        Some((_, l)) => serde_json::from_str(&l?).map_err(|e| err(1, format!("bad header: {e}")))?,
        None => return Err(err(1, "empty file".into())),
    };
    if header.format != CORPUS_FORMAT || header.version != CORPUS_VERSION {
        return Err(err(1, format!("unsupported format {} v{}", header.format, header.version)));
    }
    let mut records = Vec::with_capacity(header.records);
    let mut last = 1;
    for (i, l) in lines {
        let l = l?;
        last = i + 1;
        if l.trim().is_empty() {
            continue;
        }
        let rec: SceneRecord = serde_json::from_str(&l).map_err(|e| err(i + 1, e.to_string()))?;
        records.push(rec);
    }
    if records.len() != header.records {
        return Err(err(
            last,
            format!("header announces {} records, found {}", header.records, records.len()),
        ));
    }
    Ok((header, records))
}

pub fn save_corpus(path: &Path, generator: &str, records: &[SceneRecord]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_corpus(BufWriter::new(f), generator, records)
}

pub fn load_corpus(path: &Path) -> Result<(CorpusHeader, Vec<SceneRecord>)> {
    let f = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingDataset(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    read_corpus(BufReader::new(f), &path.display().to_string())
}
