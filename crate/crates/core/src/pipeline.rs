//! End-to-end glue: training both denoisers on a corpus and synthesizing
//! scenes from prompts, including the zero-shot modes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_scene, place_human, replace_humans, retrieve_object, AssemblyKit};
use crate::corpus::{graph_from_layouts, SceneRecord};
use crate::error::{Error, Result};
use crate::geometry::Layout;
use crate::graph_diffusion::{
    AnchorSet, GraphDiffusion, GraphExample, GraphLossWeights, GraphObjective, GraphState,
    NodeCountHistogram, SampleOptions,
};
use crate::groups::{default_groups, FunctionalGroups};
use crate::layout_diffusion::{
    LayoutDiffusion, LayoutExample, LayoutObjective, LayoutSampleOptions, LayoutStats,
};
use crate::neural::optim::round_to_f32;
use crate::neural::{TrainConfig, Trainer, ACTION_MASK, RELATION_MASK};
use crate::optimizer::{optimize_scene_protected, OptimizerConfig, Protection};
use crate::prompt::{
    embed_prompt_with_dim, infer_actions, parse_prompt, ActionRuleTable, PredicateLexicon,
    Triplet,
};
use crate::scene::{Scene, SceneGraph};
use crate::vocab::{CategoryVocabulary, SceneRegistry, SceneType};

/// Share of graph-training examples whose prompt embedding is zeroed.
pub const COND_DROP: f64 = 0.1;

/// Draws tried by completion before settling for one that adds nothing.
pub const COMPLETE_ATTEMPTS: usize = 8;

fn scene_type_of(records: &[SceneRecord]) -> Result<SceneType> {
    let first = records.first().ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    if records.iter().any(|r| r.scene_type != first.scene_type) {
        return Err(Error::InvalidInput("records mix scene types".into()));
    }
    Ok(first.scene_type.clone())
}

pub fn graph_examples(records: &[SceneRecord], cond_dim: usize) -> Vec<GraphExample> {
    records
        .iter()
        .map(|r| GraphExample {
            graph: GraphState::from_graph(&r.graph),
            lambda: embed_prompt_with_dim(&r.caption, cond_dim).lambda,
        })
        .collect()
}

pub fn layout_examples(records: &[SceneRecord], stats: &LayoutStats) -> Vec<LayoutExample> {
    records
        .iter()
        .map(|r| LayoutExample {
            graph: GraphState::from_graph(&r.graph),
            layouts: r.layouts.iter().map(|l| stats.normalize(l)).collect(),
        })
        .collect()
}

/// Trains the graph denoiser in place; node-count statistics come from
/// `records`. Parameters are rounded to `f32` afterwards so a saved
/// checkpoint reproduces the in-memory model exactly.
pub fn fit_graph(
    model: &mut GraphDiffusion,
    records: &[SceneRecord],
    cfg: &TrainConfig,
    progress: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    let ty = scene_type_of(records)?;
    if ty != model.scene_type {
        return Err(Error::InvalidInput(format!("model is for {}, records are {ty}", model.scene_type)));
    }
    model.node_counts = NodeCountHistogram::from_counts(records.iter().map(SceneRecord::len));
    let examples = graph_examples(records, model.model.config.cond_dim);
    let obj = GraphObjective {
        schedule: model.schedule,
        weights: GraphLossWeights::scaled(cfg.epochs),
        cond_drop: COND_DROP,
    };
    let hist = Trainer::new(&mut model.model, cfg.clone())?.fit(&obj, &examples, progress)?;
    round_to_f32(&mut model.model.params);
    round_to_f32(&mut model.model.ema);
    model.trained = true;
    Ok(hist)
}

/// Trains the layout denoiser in place, fitting normalization statistics
/// on `records` first.
pub fn fit_layout(
    model: &mut LayoutDiffusion,
    records: &[SceneRecord],
    cfg: &TrainConfig,
    progress: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    let ty = scene_type_of(records)?;
    if ty != model.scene_type {
        return Err(Error::InvalidInput(format!("model is for {}, records are {ty}", model.scene_type)));
    }
    model.stats = LayoutStats::fit(records.iter().flat_map(|r| &r.layouts))?;
    let examples = layout_examples(records, &model.stats);
    let obj = LayoutObjective {
        schedule: model.schedule,
    };
    let hist = Trainer::new(&mut model.model, cfg.clone())?.fit(&obj, &examples, progress)?;
    round_to_f32(&mut model.model.params);
    round_to_f32(&mut model.model.ema);
    model.trained = true;
    Ok(hist)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthMode {
    /// Prompt to scene.
    #[default]
    Full,
    /// New feature codes and assets for an existing scene.
    Stylize,
    /// New relations and layouts for the objects of an existing scene.
    Rearrange,
    /// Extra objects around an existing scene, which is kept as is.
    Complete,
    /// No prompt.
    Uncond,
}

impl SynthMode {
    pub fn needs_input(self) -> bool {
        matches!(self, SynthMode::Stylize | SynthMode::Rearrange | SynthMode::Complete)
    }

    pub fn name(self) -> &'static str {
        match self {
            SynthMode::Full => "full",
            SynthMode::Stylize => "stylize",
            SynthMode::Rearrange => "rearrange",
            SynthMode::Complete => "complete",
            SynthMode::Uncond => "uncond",
        }
    }
}

impl std::str::FromStr for SynthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "full" => SynthMode::Full,
            "stylize" => SynthMode::Stylize,
            "rearrange" => SynthMode::Rearrange,
            "complete" => SynthMode::Complete,
            "uncond" => SynthMode::Uncond,
            _ => return Err(Error::InvalidInput(format!("unknown mode '{s}'"))),
        })
    }
}

#[derive(Clone, Debug)]
pub struct SynthRequest<'a> {
    pub prompt: &'a str,
    pub mode: SynthMode,
    pub seed: u64,
    pub skip_optimize: bool,
    /// Scene edited by the stylize, rearrange and complete modes.
    pub input: Option<&'a Scene>,
}

/// Result of one synthesis run.
#[derive(Clone, Debug)]
pub struct Synthesis {
    pub scene: Scene,
    /// Triplets recovered from the prompt.
    pub triplets: Vec<Triplet>,
    pub warnings: Vec<String>,
    pub graph: SceneGraph,
}

/// Trained models plus everything synthesis reads.
#[derive(Clone, Debug)]
pub struct Synthesizer {
    pub graph: GraphDiffusion,
    pub layout: LayoutDiffusion,
    pub kit: AssemblyKit,
    pub vocab: CategoryVocabulary,
    pub lexicon: PredicateLexicon,
    pub rules: ActionRuleTable,
    pub groups: FunctionalGroups,
    pub optimizer: OptimizerConfig,
    pub graph_options: SampleOptions,
    pub layout_options: LayoutSampleOptions,
}

impl Synthesizer {
    pub fn new(graph: GraphDiffusion, layout: LayoutDiffusion, kit: AssemblyKit) -> Result<Self> {
        if graph.scene_type != layout.scene_type {
            return Err(Error::InvalidInput(format!(
                "graph model is for {}, layout model for {}",
                graph.scene_type, layout.scene_type
            )));
        }
        let vocab = SceneRegistry::builtin().get(&graph.scene_type)?.vocabulary.clone();
        if graph.num_categories() != vocab.len() || graph.num_features() != kit.codebook.len() {
            return Err(Error::InvalidInput(
                "model vocabulary sizes do not match the scene type and codebook".into(),
            ));
        }
        Ok(Self {
            graph,
            layout,
            kit,
            vocab,
            lexicon: PredicateLexicon::default(),
            rules: ActionRuleTable::default(),
            groups: default_groups(),
            optimizer: OptimizerConfig::default(),
            graph_options: SampleOptions::default(),
            layout_options: LayoutSampleOptions::default(),
        })
    }

    fn lambda(&self, prompt: &str) -> Vec<f64> {
        embed_prompt_with_dim(prompt, self.graph.model.config.cond_dim).lambda
    }

    /// Graph of an existing scene with edges relabeled from its layouts.
    pub fn graph_of(&self, scene: &Scene) -> Result<SceneGraph> {
        let nodes = scene
            .objects
            .iter()
            .map(|o| {
                let category = self
                    .vocab
                    .index_of(&o.category)
                    .ok_or_else(|| Error::InvalidInput(format!("category '{}' not in vocabulary", o.category)))?;
                if o.feature_code >= self.kit.codebook.len() {
                    return Err(Error::InvalidInput(format!("feature code {} out of range", o.feature_code)));
                }
                Ok(crate::scene::ObjectNode {
                    category,
                    feature_code: o.feature_code,
                    action: o.action,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let layouts: Vec<Layout> = scene.objects.iter().map(|o| o.layout).collect();
        Ok(graph_from_layouts(nodes, &layouts))
    }

    fn optimizer_for(&self, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            seed,
            ..self.optimizer.clone()
        }
    }

    pub fn synthesize(&self, req: &SynthRequest) -> Result<Synthesis> {
        if req.mode.needs_input() && req.input.is_none() {
            return Err(Error::InvalidInput(format!("mode {} needs an input scene", req.mode.name())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        let (prompt, parsed) = match req.mode {
            SynthMode::Uncond => ("", parse_prompt("", &self.vocab, &self.lexicon)),
            _ => (req.prompt, parse_prompt(req.prompt, &self.vocab, &self.lexicon)),
        };
        let warnings: Vec<String> = parsed.warnings.iter().map(|w| w.to_string()).collect();
        let lambda = if prompt.trim().is_empty() {
            vec![0.0; self.graph.model.config.cond_dim]
        } else {
            self.lambda(prompt)
        };
        let (nc, nf) = (self.graph.num_categories(), self.graph.num_features());

        let (mut scene, graph, protection) = match req.mode {
            SynthMode::Full | SynthMode::Uncond => {
                let mut partial = parsed.partial.clone();
                let names: Vec<String> = partial.nodes.iter().map(|n| self.vocab.name(n.category).to_string()).collect();
                let actions = infer_actions(&names, &self.vocab.scene_type, &self.rules, None);
                for (node, (name, act)) in partial.nodes.iter_mut().zip(names.iter().zip(actions)) {
                    node.action = Some(act);
                    if !node.adjectives.is_empty() {
                        node.feature_code = Some(self.kit.feature_code(name, &node.adjectives));
                    }
                }
                let graph = self.graph.sample_graph(&partial, &lambda, self.graph_options, &mut rng)?;
                let layouts = self.layout.sample_layouts(&graph, None, self.layout_options, &mut rng)?;
                let scene = assemble_scene(&graph, &layouts, &self.vocab, &self.kit)?;
                // objects the prompt asked for may move but are never dropped
                let mut protection = vec![Protection::Movable; partial.nodes.len()];
                protection.resize(scene.objects.len(), Protection::Free);
                (scene, graph, protection)
            }
            SynthMode::Stylize => {
                let input = req.input.expect("checked");
                let g0 = self.graph_of(input)?;
                let n = g0.len();
                let mut x = GraphState::from_graph(&g0);
                let mut anchors = AnchorSet::all(n);
                for i in 0..n {
                    x.features[i] = nf;
                    anchors.feature[i] = false;
                }
                let graph = self.graph.sample_from(x, &anchors, &lambda, self.graph_options, &mut rng)?;
                let mut scene = input.clone();
                for (obj, node) in scene.objects.iter_mut().zip(&graph.nodes) {
                    obj.feature_code = node.feature_code;
                    let asset = retrieve_object(
                        &obj.category,
                        self.kit.codebook.entry(node.feature_code),
                        obj.layout.s,
                        &self.kit.catalog,
                        self.kit.k_top,
                    )?;
                    obj.asset_id = Some(asset.id.clone());
                }
                (scene, graph, vec![Protection::Locked; n])
            }
            SynthMode::Rearrange => {
                let input = req.input.expect("checked");
                let g0 = self.graph_of(input)?;
                let n = g0.len();
                let mut x = GraphState::from_graph(&g0);
                let mut anchors = AnchorSet::all(n);
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            x.relations[i * n + j] = RELATION_MASK;
                            anchors.relation[i * n + j] = false;
                        }
                    }
                }
                let graph = self.graph.sample_from(x, &anchors, &lambda, self.graph_options, &mut rng)?;
                let layouts = self.layout.sample_layouts(&graph, None, self.layout_options, &mut rng)?;
                let mut scene = input.clone();
                for (obj, l) in scene.objects.iter_mut().zip(layouts) {
                    obj.layout = l;
                }
                replace_humans(&mut scene, &self.kit.poses);
                (scene, graph, vec![Protection::Movable; n])
            }
            SynthMode::Complete => {
                let input = req.input.expect("checked");
                let g0 = self.graph_of(input)?;
                let n0 = g0.len();
                // neither model sees the existing humans, so a draw whose new
                // objects all get cleared away by refinement is redrawn
                let mut best = None;
                for _ in 0..COMPLETE_ATTEMPTS {
                    let n = self.graph.node_counts.sample(n0 + 1, &mut rng)?;
                    let mut x = GraphState::masked(n, nc, nf);
                    let mut anchors = AnchorSet::none(n);
                    for i in 0..n0 {
                        let node = g0.nodes[i];
                        x.categories[i] = node.category;
                        x.features[i] = node.feature_code;
                        x.actions[i] = node.action.index();
                        anchors.category[i] = true;
                        anchors.feature[i] = true;
                        anchors.action[i] = true;
                        for j in 0..n0 {
                            x.relations[i * n + j] = g0.edge(i, j).index();
                            anchors.relation[i * n + j] = true;
                        }
                    }
                    debug_assert!(x.actions[n0..].iter().all(|&a| a == ACTION_MASK));
                    let graph = self.graph.sample_from(x, &anchors, &lambda, self.graph_options, &mut rng)?;
                    let frozen: Vec<Option<Layout>> = (0..n)
                        .map(|i| input.objects.get(i).map(|o| o.layout))
                        .collect();
                    let layouts = self.layout.sample_layouts(&graph, Some(&frozen), self.layout_options, &mut rng)?;
                    let added = assemble_scene(&graph, &layouts, &self.vocab, &self.kit)?;
                    let mut scene = input.clone();
                    scene.objects.extend(added.objects.into_iter().skip(n0));
                    let extra: Vec<_> = scene.objects[n0..]
                        .iter()
                        .enumerate()
                        .filter_map(|(k, o)| place_human(&self.kit.poses, &o.category, o.action, &o.layout, n0 + k))
                        .collect();
                    scene.humans.extend(extra);
                    let mut protection = vec![Protection::Locked; n0];
                    protection.resize(n, Protection::Free);
                    let kept = req.skip_optimize
                        || optimize_scene_protected(&scene, &self.groups, &self.optimizer_for(req.seed), &protection)
                            .0
                            .objects
                            .len()
                            > n0;
                    best = Some((scene, graph, protection));
                    if kept {
                        break;
                    }
                }
                best.expect("at least one attempt")
            }
        };
        scene.meta.seed = req.seed;
        scene.meta.prompt = prompt.to_string();
        scene.meta.mode = Some(req.mode.name().to_string());
        if !req.skip_optimize {
            let (optimized, report) =
                optimize_scene_protected(&scene, &self.groups, &self.optimizer_for(req.seed), &protection);
            scene = optimized;
            scene.meta.optimization = Some(report);
        }
        Ok(Synthesis {
            scene,
            triplets: parsed.triplets,
            warnings,
            graph,
        })
    }
}
