//! Absorbing-mask diffusion over scene graphs.
//!
//! Every discrete attribute (category, feature code, action and the relation
//! of each unordered node pair) is independently replaced by a MASK token
//! with probability `m(t) = t / T`. The denoiser predicts clean values and
//! the reverse step unmasks each masked attribute with probability
//! `(m(t) - m(t-1)) / m(t) = 1 / t`, sampling from the prediction.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::checkpoint;
use crate::neural::{
    GraphTransformer, Heads, ModelConfig, ModelInput, ModelOutput, Objective, Profile, Tensor, Var,
    ACTION_MASK, RELATION_MASK,
};
use crate::neural::tape::Graph;
use crate::prompt::PartialGraph;
use crate::scene::{ObjectNode, SceneGraph};
use crate::vocab::{HumanAction, RelationPredicate, SceneType};

const NONE_REL: usize = RelationPredicate::None as usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscreteSchedule {
    pub steps: usize,
}

impl Default for DiscreteSchedule {
    fn default() -> Self {
        Self { steps: 100 }
    }
}

impl DiscreteSchedule {
    pub fn new(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidInput("schedule needs at least one step".into()));
        }
        Ok(Self { steps })
    }

    /// Marginal probability that an attribute is masked at step `t`.
    pub fn mask_rate(&self, t: usize) -> f64 {
        t.min(self.steps) as f64 / self.steps as f64
    }

    /// Probability that an attribute still masked at `t` is revealed when
    /// stepping to `t - 1`.
    pub fn unmask_prob(&self, t: usize) -> f64 {
        if t == 0 {
            return 0.0;
        }
        let mt = self.mask_rate(t);
        (mt - self.mask_rate(t - 1)) / mt
    }
}

/// Raw token indices of a (possibly masked) graph. Mask tokens are
/// `num_categories`, `num_features`, [`ACTION_MASK`] and [`RELATION_MASK`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphState {
    pub categories: Vec<usize>,
    pub features: Vec<usize>,
    pub actions: Vec<usize>,
    /// Row-major `n * n`; `relations[i * n + j]` is `edge(i, j)`.
    pub relations: Vec<usize>,
}

impl GraphState {
    pub fn from_graph(g: &SceneGraph) -> Self {
        Self {
            categories: g.nodes.iter().map(|n| n.category).collect(),
            features: g.nodes.iter().map(|n| n.feature_code).collect(),
            actions: g.nodes.iter().map(|n| n.action.index()).collect(),
            relations: g.edges().iter().map(|p| p.index()).collect(),
        }
    }

    /// Fully masked state with `n` nodes and `None` on the diagonal.
    pub fn masked(n: usize, num_categories: usize, num_features: usize) -> Self {
        let mut relations = vec![RELATION_MASK; n * n];
        for i in 0..n {
            relations[i * n + i] = NONE_REL;
        }
        Self {
            categories: vec![num_categories; n],
            features: vec![num_features; n],
            actions: vec![ACTION_MASK; n],
            relations,
        }
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn rel(&self, i: usize, j: usize) -> usize {
        self.relations[i * self.len() + j]
    }

    fn set_pair(&mut self, i: usize, j: usize, r: usize) {
        let n = self.len();
        self.relations[i * n + j] = r;
        self.relations[j * n + i] = match RelationPredicate::from_index(r) {
            Some(p) => p.inverse().index(),
            None => r,
        };
    }

    pub fn input<'a>(&'a self, t: usize, lambda: &'a [f64]) -> ModelInput<'a> {
        ModelInput {
            categories: &self.categories,
            features: &self.features,
            actions: &self.actions,
            relations: &self.relations,
            timestep: t,
            lambda,
            layout: None,
            valid: None,
        }
    }

    /// Converts a fully unmasked state back to a graph.
    pub fn to_graph(&self, num_categories: usize, num_features: usize) -> Result<SceneGraph> {
        let n = self.len();
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            let (c, f, a) = (self.categories[i], self.features[i], self.actions[i]);
            if c >= num_categories || f >= num_features {
                return Err(Error::InvalidInput(format!("node {i} is still masked")));
            }
            let action = HumanAction::from_index(a)
                .ok_or_else(|| Error::InvalidInput(format!("node {i} action is still masked")))?;
            nodes.push(ObjectNode {
                category: c,
                feature_code: f,
                action,
            });
        }
        let edges = self
            .relations
            .iter()
            .map(|&r| {
                RelationPredicate::from_index(r)
                    .ok_or_else(|| Error::InvalidInput("relation is still masked".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        SceneGraph::from_parts(nodes, edges)
    }
}

/// Which attributes are held fixed. Relations are per directed entry but
/// corruption and sampling treat the two entries of a pair together.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub category: Vec<bool>,
    pub feature: Vec<bool>,
    pub action: Vec<bool>,
    pub relation: Vec<bool>,
}

impl AnchorSet {
    pub fn none(n: usize) -> Self {
        Self {
            category: vec![false; n],
            feature: vec![false; n],
            action: vec![false; n],
            relation: vec![false; n * n],
        }
    }

    pub fn all(n: usize) -> Self {
        Self {
            category: vec![true; n],
            feature: vec![true; n],
            action: vec![true; n],
            relation: vec![true; n * n],
        }
    }

    fn pair(&self, i: usize, j: usize, n: usize) -> bool {
        self.relation[i * n + j] || self.relation[j * n + i]
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.category.len() != n
            || self.feature.len() != n
            || self.action.len() != n
            || self.relation.len() != n * n
        {
            return Err(Error::ShapeMismatch(format!("anchor set does not match {n} nodes")));
        }
        Ok(())
    }
}

/// Masks each non-anchored attribute with probability `m(t)`.
pub fn corrupt_graph(
    g0: &GraphState,
    t: usize,
    schedule: &DiscreteSchedule,
    num_categories: usize,
    num_features: usize,
    anchors: Option<&AnchorSet>,
    rng: &mut impl Rng,
) -> GraphState {
    let n = g0.len();
    let m = schedule.mask_rate(t);
    let mut x = g0.clone();
    let hit = |rng: &mut dyn rand::RngCore| m > 0.0 && rng.random::<f64>() < m;
    for i in 0..n {
        let a = anchors.map(|a| (a.category[i], a.feature[i], a.action[i]));
        let (ac, af, aa) = a.unwrap_or((false, false, false));
        if hit(rng) && !ac {
            x.categories[i] = num_categories;
        }
        if hit(rng) && !af {
            x.features[i] = num_features;
        }
        if hit(rng) && !aa {
            x.actions[i] = ACTION_MASK;
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let anchored = anchors.is_some_and(|a| a.pair(i, j, n));
            if hit(rng) && !anchored {
                x.relations[i * n + j] = RELATION_MASK;
                x.relations[j * n + i] = RELATION_MASK;
            }
        }
    }
    x
}

/// Per-family loss weights. Category and feature weights drop to zero from
/// `switch_epoch` on; the relation weight is constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphLossWeights {
    pub delta_c: f64,
    pub delta_f: f64,
    pub delta_e: f64,
    pub switch_epoch: usize,
}

impl Default for GraphLossWeights {
    fn default() -> Self {
        Self {
            delta_c: 1.0,
            delta_f: 1.0,
            delta_e: 10.0,
            switch_epoch: 1500,
        }
    }
}

impl GraphLossWeights {
    /// Default weights with the switch scaled to a run of `epochs` epochs
    /// (0.75 of the run, the ratio of 1500 to 2000).
    pub fn scaled(epochs: usize) -> Self {
        Self {
            switch_epoch: (epochs * 3).div_ceil(4),
            ..Self::default()
        }
    }

    /// `(delta_c, delta_f, delta_e)` in effect at `epoch`.
    pub fn at_epoch(&self, epoch: usize) -> (f64, f64, f64) {
        if epoch >= self.switch_epoch {
            (0.0, 0.0, self.delta_e)
        } else {
            (self.delta_c, self.delta_f, self.delta_e)
        }
    }
}

fn mean_targets(items: impl Iterator<Item = (usize, usize)>) -> Vec<(usize, usize, f64)> {
    let v: Vec<(usize, usize)> = items.collect();
    let w = if v.is_empty() { 0.0 } else { 1.0 / v.len() as f64 };
    v.into_iter().map(|(r, c)| (r, c, w)).collect()
}

/// Weighted cross-entropy on the masked positions of `xt`:
/// `dc * L_C + df * (L_F + L_A) + de * L_R`, each term the mean over its
/// masked positions (zero if there are none). Both directed entries of a
/// masked pair contribute to `L_R`.
pub fn graph_loss(
    g: &mut Graph,
    out: &ModelOutput,
    x0: &GraphState,
    xt: &GraphState,
    num_categories: usize,
    num_features: usize,
    weights: (f64, f64, f64),
) -> Result<Var> {
    let n = x0.len();
    if xt.len() != n || x0.relations.len() != n * n || xt.relations.len() != n * n {
        return Err(Error::ShapeMismatch("clean and noisy graphs differ in size".into()));
    }
    let (dc, df, de) = weights;
    let missing = || Error::InvalidInput("model output lacks graph heads".into());
    let cat = out.category.ok_or_else(missing)?;
    let feat = out.feature.ok_or_else(missing)?;
    let act = out.action.ok_or_else(missing)?;
    let rel = out.relation.ok_or_else(missing)?;

    let lc = g.cross_entropy(
        cat,
        mean_targets((0..n).filter(|&i| xt.categories[i] == num_categories).map(|i| (i, x0.categories[i]))),
    );
    let lf = g.cross_entropy(
        feat,
        mean_targets((0..n).filter(|&i| xt.features[i] == num_features).map(|i| (i, x0.features[i]))),
    );
    let la = g.cross_entropy(
        act,
        mean_targets((0..n).filter(|&i| xt.actions[i] == ACTION_MASK).map(|i| (i, x0.actions[i]))),
    );
    let lr = g.cross_entropy(
        rel,
        mean_targets(
            (0..n * n)
                .filter(|&k| xt.relations[k] == RELATION_MASK)
                .map(|k| (k, x0.relations[k])),
        ),
    );
    Ok(g.lin_comb(vec![(lc, dc), (lf, df), (la, df), (lr, de)]))
}

/// Empirical distribution of node counts.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCountHistogram {
    pub counts: BTreeMap<usize, usize>,
}

impl NodeCountHistogram {
    pub fn from_counts(counts: impl IntoIterator<Item = usize>) -> Self {
        let mut h = Self::default();
        for c in counts {
            *h.counts.entry(c).or_default() += 1;
        }
        h
    }

    pub fn max(&self) -> Option<usize> {
        self.counts.keys().next_back().copied()
    }

    /// Draws a count of at least `min`, renormalizing over the eligible
    /// part of the histogram.
    pub fn sample(&self, min: usize, rng: &mut impl Rng) -> Result<usize> {
        let eligible: Vec<(usize, usize)> = self
            .counts
            .iter()
            .filter(|(&k, &v)| k >= min && k > 0 && v > 0)
            .map(|(&k, &v)| (k, v))
            .collect();
        let total: usize = eligible.iter().map(|e| e.1).sum();
        if total == 0 {
            return Err(match self.max() {
                None => Error::UntrainedModel,
                Some(budget) => Error::AnchorsExceedNodeBudget { anchors: min, budget },
            });
        }
        let mut u = rng.random_range(0..total);
        for (k, v) in eligible {
            if u < v {
                return Ok(k);
            }
            u -= v;
        }
        unreachable!("u < total")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleOptions {
    /// Softmax temperature for revealed attributes; 0 takes the argmax.
    pub temperature: f64,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self { temperature: 1.0 }
    }
}

/// Index of the largest entry; ties go to the lowest index.
fn argmax(x: &[f64]) -> usize {
    x.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
        .0
}

fn draw(logits: &[f64], temperature: f64, rng: &mut impl Rng) -> usize {
    if temperature <= 0.0 {
        return argmax(logits);
    }
    let tempered = softmax(&logits.iter().map(|l| l / temperature).collect::<Vec<_>>());
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in tempered.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    tempered.len() - 1
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Maximum of the softmax over the non-mask classes.
fn max_prob(logits: &[f64]) -> f64 {
    softmax(logits).into_iter().fold(0.0, f64::max)
}

/// A trained graph denoiser with its schedule and node-count statistics.
#[derive(Clone, Debug)]
pub struct GraphDiffusion {
    pub model: GraphTransformer,
    pub schedule: DiscreteSchedule,
    pub node_counts: NodeCountHistogram,
    pub scene_type: SceneType,
    pub trained: bool,
}

#[derive(Serialize, Deserialize)]
struct GraphExtra {
    schedule: DiscreteSchedule,
    node_counts: NodeCountHistogram,
    scene_type: String,
    trained: bool,
}

impl GraphDiffusion {
    pub fn new(
        profile: Profile,
        scene_type: SceneType,
        num_categories: usize,
        num_features: usize,
        schedule: DiscreteSchedule,
        seed: u64,
    ) -> Result<Self> {
        let config = ModelConfig::profile(profile, num_categories, num_features, schedule.steps);
        Self::with_config(config, scene_type, schedule, seed)
    }

    pub fn with_config(
        config: ModelConfig,
        scene_type: SceneType,
        schedule: DiscreteSchedule,
        seed: u64,
    ) -> Result<Self> {
        if config.timesteps != schedule.steps || config.layout_input || !config.cross_attention {
            return Err(Error::InvalidInput(
                "graph denoiser needs cross-attention, no layout input and one embedding per step".into(),
            ));
        }
        Ok(Self {
            model: GraphTransformer::new(config, seed)?,
            schedule,
            node_counts: NodeCountHistogram::default(),
            scene_type,
            trained: false,
        })
    }

    pub fn num_categories(&self) -> usize {
        self.model.config.num_categories
    }

    pub fn num_features(&self) -> usize {
        self.model.config.num_features
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let extra = GraphExtra {
            schedule: self.schedule,
            node_counts: self.node_counts.clone(),
            scene_type: self.scene_type.name().to_string(),
            trained: self.trained,
        };
        checkpoint::save(path, &self.model, "graph", serde_json::to_value(extra)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (model, header) = checkpoint::load(path)?;
        if header.kind != "graph" {
            return Err(Error::Checkpoint(format!("expected a graph checkpoint, found '{}'", header.kind)));
        }
        let extra: GraphExtra = serde_json::from_value(header.extra)?;
        Ok(Self {
            model,
            schedule: extra.schedule,
            node_counts: extra.node_counts,
            scene_type: extra.scene_type.parse()?,
            trained: extra.trained,
        })
    }

    /// Builds the initial state for a prompt: anchored nodes first, then
    /// free nodes up to a count drawn from the histogram.
    pub fn prepare(&self, partial: &PartialGraph, rng: &mut impl Rng) -> Result<(GraphState, AnchorSet)> {
        if !self.trained {
            return Err(Error::UntrainedModel);
        }
        let a = partial.nodes.len();
        let n = self.node_counts.sample(a.max(1), rng)?;
        let (nc, nf) = (self.num_categories(), self.num_features());
        let mut x = GraphState::masked(n, nc, nf);
        let mut anchors = AnchorSet::none(n);
        for (i, node) in partial.nodes.iter().enumerate() {
            if node.category >= nc {
                return Err(Error::InvalidInput(format!("anchored category {} out of range", node.category)));
            }
            x.categories[i] = node.category;
            anchors.category[i] = true;
            if let Some(f) = node.feature_code {
                if f >= nf {
                    return Err(Error::InvalidInput(format!("anchored feature code {f} out of range")));
                }
                x.features[i] = f;
                anchors.feature[i] = true;
            }
            if let Some(act) = node.action {
                x.actions[i] = act.index();
                anchors.action[i] = true;
            }
        }
        for &(s, o, p) in &partial.edges {
            if s >= a || o >= a || s == o {
                return Err(Error::InvalidInput(format!("anchored edge ({s}, {o}) is invalid")));
            }
            if anchors.relation[s * n + o] && x.rel(s, o) != p.index() {
                return Err(Error::InvalidInput(format!(
                    "conflicting anchored relations between nodes {s} and {o}"
                )));
            }
            x.set_pair(s, o, p.index());
            anchors.relation[s * n + o] = true;
            anchors.relation[o * n + s] = true;
        }
        Ok((x, anchors))
    }

    /// Completes a prompt's partial graph.
    pub fn sample_graph(
        &self,
        partial: &PartialGraph,
        lambda: &[f64],
        opts: SampleOptions,
        rng: &mut ChaCha8Rng,
    ) -> Result<SceneGraph> {
        let (x, anchors) = self.prepare(partial, rng)?;
        self.sample_from(x, &anchors, lambda, opts, rng)
    }

    /// Runs the reverse process from step `T`. Anchored attributes of `x`
    /// must hold their fixed values; everything else must be masked.
    pub fn sample_from(
        &self,
        mut x: GraphState,
        anchors: &AnchorSet,
        lambda: &[f64],
        opts: SampleOptions,
        rng: &mut ChaCha8Rng,
    ) -> Result<SceneGraph> {
        if !self.trained {
            return Err(Error::UntrainedModel);
        }
        let n = x.len();
        anchors.check(n)?;
        let (nc, nf) = (self.num_categories(), self.num_features());
        for t in (1..=self.schedule.steps).rev() {
            let any_masked = x.categories.contains(&nc)
                || x.features.contains(&nf)
                || x.actions.contains(&ACTION_MASK)
                || x.relations.contains(&RELATION_MASK);
            if !any_masked {
                break;
            }
            let pred = self.model.predict(&x.input(t, lambda), Heads::GRAPH)?;
            let p_unmask = self.schedule.unmask_prob(t);
            let cat = pred.category.expect("graph head");
            let feat = pred.feature.expect("graph head");
            let act = pred.action.expect("graph head");
            let rel = pred.relation.expect("graph head");
            let reveal = |rng: &mut ChaCha8Rng| p_unmask >= 1.0 || rng.random::<f64>() < p_unmask;
            let pick = |t: &Tensor, row: usize, classes: usize, rng: &mut ChaCha8Rng| {
                draw(&t.row(row)[..classes], opts.temperature, rng)
            };
            for i in 0..n {
                if x.categories[i] == nc && !anchors.category[i] && reveal(rng) {
                    x.categories[i] = pick(&cat, i, nc, rng);
                }
                if x.features[i] == nf && !anchors.feature[i] && reveal(rng) {
                    x.features[i] = pick(&feat, i, nf, rng);
                }
                if x.actions[i] == ACTION_MASK && !anchors.action[i] && reveal(rng) {
                    x.actions[i] = pick(&act, i, ACTION_MASK, rng);
                }
            }
            for i in 0..n {
                for j in i + 1..n {
                    if x.rel(i, j) != RELATION_MASK || anchors.pair(i, j, n) || !reveal(rng) {
                        continue;
                    }
                    let fwd = &rel.row(i * n + j)[..RELATION_MASK];
                    let bwd = &rel.row(j * n + i)[..RELATION_MASK];
                    if max_prob(fwd) >= max_prob(bwd) {
                        let r = draw(fwd, opts.temperature, rng);
                        x.set_pair(i, j, r);
                    } else {
                        let r = draw(bwd, opts.temperature, rng);
                        x.set_pair(j, i, r);
                    }
                }
            }
        }
        x.to_graph(nc, nf)
    }

    /// Fraction of masked attributes whose argmax prediction equals the
    /// clean value, over `draws` corruptions at step `t` of each graph.
    pub fn denoise_accuracy(
        &self,
        data: &[(GraphState, Vec<f64>)],
        t: usize,
        draws: usize,
        seed: u64,
    ) -> Result<f64> {
        let (nc, nf) = (self.num_categories(), self.num_features());
        let mut hits = 0usize;
        let mut total = 0usize;
        for (k, (x0, lambda)) in data.iter().enumerate() {
            let mut rng = crate::util::stream_rng(seed, k as u64);
            for _ in 0..draws {
                let xt = corrupt_graph(x0, t, &self.schedule, nc, nf, None, &mut rng);
                let n = x0.len();
                let masked_nodes = (0..n).any(|i| {
                    xt.categories[i] == nc || xt.features[i] == nf || xt.actions[i] == ACTION_MASK
                });
                if !masked_nodes && !xt.relations.contains(&RELATION_MASK) {
                    continue;
                }
                let p = self.model.predict(&xt.input(t, lambda), Heads::GRAPH)?;
                let argmax = |t: &Tensor, row: usize, classes: usize| argmax(&t.row(row)[..classes]);
                let (cat, feat, act, rel) = (
                    p.category.expect("graph head"),
                    p.feature.expect("graph head"),
                    p.action.expect("graph head"),
                    p.relation.expect("graph head"),
                );
                for i in 0..n {
                    if xt.categories[i] == nc {
                        total += 1;
                        hits += (argmax(&cat, i, nc) == x0.categories[i]) as usize;
                    }
                    if xt.features[i] == nf {
                        total += 1;
                        hits += (argmax(&feat, i, nf) == x0.features[i]) as usize;
                    }
                    if xt.actions[i] == ACTION_MASK {
                        total += 1;
                        hits += (argmax(&act, i, ACTION_MASK) == x0.actions[i]) as usize;
                    }
                }
                for k in 0..n * n {
                    if xt.relations[k] == RELATION_MASK {
                        total += 1;
                        hits += (argmax(&rel, k, RELATION_MASK) == x0.relations[k]) as usize;
                    }
                }
            }
        }
        if total == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        Ok(hits as f64 / total as f64)
    }
}

/// One training graph with its prompt embedding.
#[derive(Clone, Debug)]
pub struct GraphExample {
    pub graph: GraphState,
    pub lambda: Vec<f64>,
}

/// Training objective: draw `t` uniformly in `1..=T`, corrupt, and score the
/// denoiser with [`graph_loss`]. With probability `cond_drop` the prompt
/// embedding is zeroed so the same weights also serve unconditional sampling.
pub struct GraphObjective {
    pub schedule: DiscreteSchedule,
    pub weights: GraphLossWeights,
    pub cond_drop: f64,
}

impl Objective for GraphObjective {
    type Example = GraphExample;

    fn loss(
        &self,
        g: &mut Graph,
        model: &GraphTransformer,
        ex: &GraphExample,
        epoch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let (nc, nf) = (model.config.num_categories, model.config.num_features);
        let t = rng.random_range(1..=self.schedule.steps);
        let xt = corrupt_graph(&ex.graph, t, &self.schedule, nc, nf, None, rng);
        let zeros;
        let lambda = if self.cond_drop > 0.0 && rng.random::<f64>() < self.cond_drop {
            zeros = vec![0.0; ex.lambda.len()];
            &zeros
        } else {
            &ex.lambda
        };
        let out = model.forward(g, &xt.input(t, lambda), Heads::GRAPH, Some(rng))?;
        graph_loss(g, &out, &ex.graph, &xt, nc, nf, self.weights.at_epoch(epoch))
    }
}
