//! Command implementations behind the `hoisynth` binary.

pub mod config;
pub mod export;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hoisynth::assembly::{AssemblyKit, AssetCatalog};
use hoisynth::corpus::{
    generate_corpus, ingest_3dfront, load_corpus, save_corpus, AliasTable, FrontOptions,
    GeneratorConfig, SceneRecord, Split,
};
use hoisynth::eval::{EvalReport, RelationRuleConfig};
use hoisynth::graph_diffusion::{DiscreteSchedule, GraphDiffusion};
use hoisynth::layout_diffusion::{LayoutDiffusion, LayoutSchedule};
use hoisynth::neural::{Profile, TrainConfig};
use hoisynth::pipeline::{fit_graph, fit_layout, SynthRequest, Synthesizer};
use hoisynth::util::mix64;
use hoisynth::{Scene, SceneRegistry};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::RunConfig;
pub use export::{export_obj, export_svg};

/// Bad flags, config or missing inputs; maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    let usage = err.chain().any(|e| {
        e.is::<UsageError>()
            || matches!(
                e.downcast_ref::<hoisynth::Error>(),
                Some(hoisynth::Error::MissingDataset(_) | hoisynth::Error::UnknownSceneType(_))
            )
    });
    if usage {
        2
    } else {
        1
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(UsageError(format!("{what} not found: {}", path.display())).into());
    }
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub config: Option<RunConfig>,
    /// File path to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// `manifest.json` in the run directory, one entry per command.
pub type Manifest = BTreeMap<String, ManifestEntry>;

fn hashes(paths: &[&Path]) -> Result<BTreeMap<String, String>> {
    paths
        .iter()
        .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
        .collect()
}

pub fn record_manifest(cfg: &RunConfig, command: &str, inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
    std::fs::create_dir_all(&cfg.output)?;
    let path = cfg.output.join("manifest.json");
    let mut manifest: Manifest = match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        Err(_) => Manifest::new(),
    };
    manifest.insert(
        command.to_string(),
        ManifestEntry {
            config: Some(cfg.clone()),
            inputs: hashes(inputs)?,
            outputs: hashes(outputs)?,
        },
    );
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load_kit(cfg: &RunConfig) -> Result<AssemblyKit> {
    Ok(match &cfg.catalog {
        Some(p) => {
            require(p, "asset catalog")?;
            AssemblyKit::from_catalog(AssetCatalog::load(p)?, cfg.catalog_seed)?
        }
        None => AssemblyKit::procedural(cfg.catalog_seed)?,
    })
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Writes `cfg.corpus`: procedural scenes, or rooms ingested from a
/// 3D-FRONT directory when `front` is given.
pub fn cmd_datagen(cfg: &RunConfig, front: Option<&Path>) -> Result<PathBuf> {
    let kit = load_kit(cfg)?;
    let (records, generator) = match front {
        Some(dir) => {
            let opts = FrontOptions {
                seed: cfg.data_seed,
                test_fraction: cfg.test_fraction,
                ..FrontOptions::default()
            };
            let recs = ingest_3dfront(dir, &cfg.scene_type, &AliasTable::default(), &kit, opts)?;
            (recs, format!("3d-front:{}", dir.display()))
        }
        None => {
            let mut gen = GeneratorConfig::new(cfg.scene_type.clone(), cfg.data_seed)?;
            gen.test_fraction = cfg.test_fraction;
            let digest = gen.digest();
            (generate_corpus(&gen, cfg.corpus_size, &kit, cfg.parallelism())?, digest)
        }
    };
    create_parent(&cfg.corpus)?;
    save_corpus(&cfg.corpus, &generator, &records)?;
    log::info!("wrote {} records to {}", records.len(), cfg.corpus.display());
    record_manifest(cfg, "datagen", &[], &[&cfg.corpus])?;
    Ok(cfg.corpus.clone())
}

fn train_config(cfg: &RunConfig, epochs: Option<usize>, stream: u64) -> TrainConfig {
    let mut tc = match cfg.profile {
        Profile::Desk => TrainConfig::desk(),
        Profile::Paper => TrainConfig::paper(),
    };
    if let Some(e) = epochs {
        tc.epochs = e;
    }
    tc.seed = mix64(cfg.seed ^ stream);
    tc.parallelism = cfg.parallelism();
    tc
}

/// Train-split records of `cfg.corpus` that match the configured scene type.
pub fn training_records(cfg: &RunConfig) -> Result<Vec<SceneRecord>> {
    let (_, records) = load_corpus(&cfg.corpus)?;
    let train: Vec<_> = records
        .into_iter()
        .filter(|r| r.split == Split::Train && r.scene_type == cfg.scene_type)
        .collect();
    if train.is_empty() {
        return Err(UsageError(format!(
            "{} has no training records for {}",
            cfg.corpus.display(),
            cfg.scene_type
        ))
        .into());
    }
    Ok(train)
}

/// Trains the graph and layout denoisers separately and writes both
/// checkpoints.
pub fn cmd_train(cfg: &RunConfig) -> Result<(PathBuf, PathBuf)> {
    require(&cfg.corpus, "corpus")?;
    let records = training_records(cfg)?;
    let kit = load_kit(cfg)?;
    let vocab_len = SceneRegistry::builtin().get(&cfg.scene_type)?.vocabulary.len();
    let nf = kit.codebook.len();
    std::fs::create_dir_all(&cfg.checkpoints)?;

    let tc = train_config(cfg, cfg.graph_epochs, 1);
    let mut graph = GraphDiffusion::new(cfg.profile, cfg.scene_type.clone(), vocab_len, nf, DiscreteSchedule::default(), tc.seed)?;
    fit_graph(&mut graph, &records, &tc, |e, l| log::info!("graph epoch {e}: loss {l:.5}"))?;
    graph.save(&cfg.graph_checkpoint())?;

    let tc = train_config(cfg, cfg.layout_epochs, 2);
    let mut layout =
        LayoutDiffusion::new(cfg.profile, cfg.scene_type.clone(), vocab_len, nf, LayoutSchedule::default(), tc.seed)?;
    fit_layout(&mut layout, &records, &tc, |e, l| log::info!("layout epoch {e}: loss {l:.5}"))?;
    layout.save(&cfg.layout_checkpoint())?;

    let (g, l) = (cfg.graph_checkpoint(), cfg.layout_checkpoint());
    record_manifest(cfg, "train", &[&cfg.corpus], &[&g, &l])?;
    Ok((g, l))
}

pub fn load_synthesizer(cfg: &RunConfig) -> Result<Synthesizer> {
    let (g, l) = (cfg.graph_checkpoint(), cfg.layout_checkpoint());
    require(&g, "graph checkpoint")?;
    require(&l, "layout checkpoint")?;
    let graph = GraphDiffusion::load(&g).with_context(|| format!("loading {}", g.display()))?;
    let layout = LayoutDiffusion::load(&l).with_context(|| format!("loading {}", l.display()))?;
    if graph.scene_type != cfg.scene_type {
        return Err(UsageError(format!(
            "checkpoints are for {}, requested {}",
            graph.scene_type, cfg.scene_type
        ))
        .into());
    }
    let mut s = Synthesizer::new(graph, layout, load_kit(cfg)?)?;
    s.optimizer.beta = cfg.beta;
    Ok(s)
}

#[derive(Clone, Debug, Default)]
pub struct SynthArgs {
    pub prompt: String,
    /// Scene edited by the stylize, rearrange and complete modes.
    pub input: Option<PathBuf>,
    /// File stem for the outputs inside the run directory.
    pub name: String,
    pub svg: bool,
    pub obj: bool,
}

#[derive(Clone, Debug)]
pub struct SynthOutputs {
    pub scene: PathBuf,
    pub svg: Option<PathBuf>,
    pub obj: Option<PathBuf>,
    pub warnings: Vec<String>,
}

pub fn read_scene(path: &Path, kit: &AssemblyKit) -> Result<Scene> {
    require(path, "input scene")?;
    let text = std::fs::read_to_string(path)?;
    Scene::from_json(&text, &kit.poses).with_context(|| format!("parsing {}", path.display()))
}

pub fn cmd_synth(cfg: &RunConfig, args: &SynthArgs) -> Result<SynthOutputs> {
    if cfg.mode.needs_input() && args.input.is_none() {
        return Err(UsageError(format!("mode {} needs --input", cfg.mode.name())).into());
    }
    let synth = load_synthesizer(cfg)?;
    let input = args.input.as_deref().map(|p| read_scene(p, &synth.kit)).transpose()?;
    let out = synth.synthesize(&SynthRequest {
        prompt: &args.prompt,
        mode: cfg.mode,
        seed: cfg.seed,
        skip_optimize: cfg.skip_optimize,
        input: input.as_ref(),
    })?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    std::fs::create_dir_all(&cfg.output)?;
    let name = if args.name.is_empty() { "scene" } else { &args.name };
    let scene_path = cfg.output.join(format!("{name}.json"));
    std::fs::write(&scene_path, out.scene.to_json()?)?;
    let svg = if args.svg {
        let p = cfg.output.join(format!("{name}.svg"));
        std::fs::write(&p, export_svg(&out.scene))?;
        Some(p)
    } else {
        None
    };
    let obj = if args.obj {
        let p = cfg.output.join(format!("{name}.obj"));
        std::fs::write(&p, export_obj(&out.scene))?;
        Some(p)
    } else {
        None
    };
    let (g, l) = (cfg.graph_checkpoint(), cfg.layout_checkpoint());
    let mut inputs: Vec<&Path> = vec![&g, &l];
    if let Some(p) = &args.input {
        inputs.push(p);
    }
    let mut outputs: Vec<&Path> = vec![&scene_path];
    outputs.extend(svg.as_deref());
    outputs.extend(obj.as_deref());
    record_manifest(cfg, &format!("synth:{name}"), &inputs, &outputs)?;
    Ok(SynthOutputs {
        scene: scene_path,
        svg,
        obj,
        warnings: out.warnings,
    })
}

#[derive(Clone, Debug)]
pub struct EvalArgs {
    pub split: Split,
    /// Evaluate at most this many records.
    pub limit: Option<usize>,
    /// Score the corpus scenes themselves instead of synthesizing.
    pub ground_truth: bool,
}

/// Scores captions of one corpus split: either the stored scenes or scenes
/// synthesized from the captions (seeded by record position).
pub fn cmd_eval(cfg: &RunConfig, args: &EvalArgs) -> Result<EvalReport> {
    require(&cfg.corpus, "corpus")?;
    let (_, records) = load_corpus(&cfg.corpus)?;
    let records: Vec<_> = records
        .into_iter()
        .filter(|r| r.split == args.split && r.scene_type == cfg.scene_type)
        .take(args.limit.unwrap_or(usize::MAX))
        .collect();
    let kit = load_kit(cfg)?;
    let groups = hoisynth::groups::default_groups();
    let rules = RelationRuleConfig::default();
    let mut inputs: Vec<PathBuf> = vec![cfg.corpus.clone()];
    let scenes: Vec<Scene> = if args.ground_truth {
        let registry = SceneRegistry::builtin();
        let vocab = &registry.get(&cfg.scene_type)?.vocabulary;
        records
            .iter()
            .map(|r| r.to_scene(vocab, &kit.poses))
            .collect::<hoisynth::Result<_>>()?
    } else {
        let synth = load_synthesizer(cfg)?;
        inputs.push(cfg.graph_checkpoint());
        inputs.push(cfg.layout_checkpoint());
        records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let req = SynthRequest {
                    prompt: &r.caption,
                    mode: cfg.mode,
                    seed: mix64(cfg.seed ^ i as u64),
                    skip_optimize: cfg.skip_optimize,
                    input: None,
                };
                synth.synthesize(&req).map(|s| s.scene)
            })
            .collect::<hoisynth::Result<_>>()?
    };
    let report = EvalReport::from_scenes(
        scenes.iter().zip(&records).map(|(s, r)| (s, r.triplets.as_slice())),
        &rules,
        &groups,
        cfg.beta,
    );
    std::fs::create_dir_all(&cfg.output)?;
    let name = if args.ground_truth { "eval-gt" } else if cfg.skip_optimize { "eval-no-opt" } else { "eval" };
    let path = cfg.output.join(format!("{name}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
    let inputs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    record_manifest(cfg, name, &inputs, &[&path])?;
    Ok(report)
}

/// Renders a scene file to SVG and/or OBJ next to the requested paths.
pub fn cmd_export(cfg: &RunConfig, scene: &Path, svg: Option<&Path>, obj: Option<&Path>) -> Result<()> {
    if svg.is_none() && obj.is_none() {
        return Err(UsageError("export needs --svg and/or --obj".into()).into());
    }
    let kit = load_kit(cfg)?;
    let s = read_scene(scene, &kit)?;
    if let Some(p) = svg {
        create_parent(p)?;
        std::fs::write(p, export_svg(&s))?;
    }
    if let Some(p) = obj {
        create_parent(p)?;
        std::fs::write(p, export_obj(&s))?;
    }
    Ok(())
}
