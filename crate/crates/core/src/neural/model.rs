//! Graph transformer shared by the graph and layout denoisers.
//!
//! Node states start as the sum of category, feature-code, action and
//! timestep embeddings (plus a projection of the noisy layout for the layout
//! model). Each layer applies relation-aware self-attention, optional
//! cross-attention onto the prompt embedding, and a feed-forward block, all
//! pre-normalized with residual connections.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{EdgeTerms, Graph, ParamId, ParamStore, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::vocab::{HumanAction, RelationPredicate};

/// Action slots including the mask token.
pub const ACTION_SLOTS: usize = HumanAction::COUNT + 1;
/// Relation slots including the mask token.
pub const RELATION_SLOTS: usize = RelationPredicate::COUNT + 1;
pub const ACTION_MASK: usize = HumanAction::COUNT;
pub const RELATION_MASK: usize = RelationPredicate::COUNT;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::InvalidInput(format!("unknown model profile '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    pub ffn_mult: usize,
    pub dropout: f64,
    /// Category count `N`; slot `N` is the mask token.
    pub num_categories: usize,
    /// Codebook size `K`; slot `K` is the mask token.
    pub num_features: usize,
    /// Largest timestep the embedding table covers.
    pub timesteps: usize,
    pub cond_dim: usize,
    /// The prompt vector is split into this many tokens for cross-attention.
    pub cond_tokens: usize,
    pub cross_attention: bool,
    /// Whether a noisy 8-value layout per node is an input.
    pub layout_input: bool,
    /// Hidden width of the pairwise edge head.
    pub edge_width: usize,
}

impl ModelConfig {
    pub fn profile(profile: Profile, num_categories: usize, num_features: usize, timesteps: usize) -> Self {
        let (layers, heads, width, ffn_mult, dropout) = match profile {
            Profile::Desk => (2, 4, 64, 2, 0.0),
            Profile::Paper => (5, 8, 512, 4, 0.1),
        };
        Self {
            layers,
            heads,
            width,
            ffn_mult,
            dropout,
            num_categories,
            num_features,
            timesteps,
            cond_dim: crate::prompt::DEFAULT_EMBED_DIM,
            cond_tokens: 8,
            cross_attention: true,
            layout_input: false,
            edge_width: width / 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.layers > 0
            && self.heads > 0
            && self.width % self.heads == 0
            && self.ffn_mult > 0
            && (0.0..1.0).contains(&self.dropout)
            && self.num_categories > 0
            && self.num_features > 0
            && self.cond_tokens > 0
            && self.cond_dim % self.cond_tokens == 0
            && self.edge_width > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid model config {self:?}")))
        }
    }
}

struct Lin {
    w: ParamId,
    b: ParamId,
}

struct Norm {
    g: ParamId,
    b: ParamId,
}

struct Layer {
    ln1: Norm,
    q: Lin,
    k: Lin,
    v: Lin,
    o: Lin,
    edge_bias: ParamId,
    edge_value: ParamId,
    cross: Option<(Norm, Lin, Lin, Lin, Lin)>,
    ln3: Norm,
    ff1: Lin,
    ff2: Lin,
}

struct Ids {
    cat_emb: ParamId,
    feat_emb: ParamId,
    act_emb: ParamId,
    time_emb: ParamId,
    layout_in: Option<Lin>,
    cond_in: Option<Lin>,
    cond_pos: Option<ParamId>,
    layers: Vec<Layer>,
    ln_f: Norm,
    cat_head: Lin,
    feat_head: Lin,
    act_head: Lin,
    edge_p: Lin,
    edge_q: ParamId,
    edge_emb: ParamId,
    edge_out: Lin,
    layout_head: Lin,
}

/// Noisy graph state for one example.
#[derive(Clone, Copy, Debug)]
pub struct ModelInput<'a> {
    pub categories: &'a [usize],
    pub features: &'a [usize],
    pub actions: &'a [usize],
    /// `n * n` relation indices.
    pub relations: &'a [usize],
    pub timestep: usize,
    pub lambda: &'a [f64],
    pub layout: Option<&'a [[f64; 8]]>,
    /// Padding mask; `None` means every slot is a real node.
    pub valid: Option<&'a [bool]>,
}

/// Which output heads to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Heads {
    pub graph: bool,
    pub layout: bool,
}

impl Heads {
    pub const ALL: Heads = Heads {
        graph: true,
        layout: true,
    };
    pub const GRAPH: Heads = Heads {
        graph: true,
        layout: false,
    };
    pub const LAYOUT: Heads = Heads {
        graph: false,
        layout: true,
    };
}

pub struct ModelOutput {
    /// `n x (N + 1)`
    pub category: Option<Var>,
    /// `n x (K + 1)`
    pub feature: Option<Var>,
    /// `n x 5`
    pub action: Option<Var>,
    /// `(n * n) x 12`, row `i * n + j` for edge `(i, j)`.
    pub relation: Option<Var>,
    /// `n x 8`
    pub layout: Option<Var>,
}

pub struct GraphTransformer {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Exponential moving average of `params`, used for sampling.
    pub ema: ParamStore,
    ids: Ids,
}

impl Clone for GraphTransformer {
    fn clone(&self) -> Self {
        let mut m = GraphTransformer::new(self.config.clone(), 0).expect("config already validated");
        m.params = self.params.clone();
        m.ema = self.ema.clone();
        m
    }
}

impl std::fmt::Debug for GraphTransformer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GraphTransformer")
            .field("config", &self.config)
            .field("parameters", &self.params.numel())
            .finish()
    }
}

struct Init<'a, R: Rng> {
    ps: &'a mut ParamStore,
    rng: &'a mut R,
}

impl<R: Rng> Init<'_, R> {
    fn normal(&mut self, name: String, rows: usize, cols: usize, std: f64) -> ParamId {
        let d = Normal::new(0.0, std).expect("positive std");
        let data = (0..rows * cols).map(|_| d.sample(self.rng)).collect();
        self.ps.add(name, Tensor::from_vec(rows, cols, data))
    }

    fn constant(&mut self, name: String, rows: usize, cols: usize, v: f64) -> ParamId {
        self.ps.add(name, Tensor::from_vec(rows, cols, vec![v; rows * cols]))
    }

    fn lin(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Lin {
        Lin {
            w: self.normal(format!("{name}.w"), fan_in, fan_out, 1.0 / (fan_in as f64).sqrt()),
            b: self.constant(format!("{name}.b"), 1, fan_out, 0.0),
        }
    }

    fn norm(&mut self, name: &str, width: usize) -> Norm {
        Norm {
            g: self.constant(format!("{name}.gamma"), 1, width, 1.0),
            b: self.constant(format!("{name}.beta"), 1, width, 0.0),
        }
    }
}

impl GraphTransformer {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::util::stream_rng(seed, 0x6d6f_6465_6c);
        let mut params = ParamStore::new();
        let c = &config;
        let w = c.width;
        let ids = {
            let mut init = Init {
                ps: &mut params,
                rng: &mut rng,
            };
            let emb_std = 0.5;
            let cat_emb = init.normal("emb.category".into(), c.num_categories + 1, w, emb_std);
            let feat_emb = init.normal("emb.feature".into(), c.num_features + 1, w, emb_std);
            let act_emb = init.normal("emb.action".into(), ACTION_SLOTS, w, emb_std);
            let time_emb = init.normal("emb.timestep".into(), c.timesteps + 1, w, emb_std);
            let layout_in = c.layout_input.then(|| init.lin("layout_in", 8, w));
            let cond_in = c
                .cross_attention
                .then(|| init.lin("cond_in", c.cond_dim / c.cond_tokens, w));
            let cond_pos = c
                .cross_attention
                .then(|| init.normal("cond_pos".into(), c.cond_tokens, w, emb_std));
            let layers = (0..c.layers)
                .map(|l| {
                    let p = format!("layer{l}");
                    Layer {
                        ln1: init.norm(&format!("{p}.ln1"), w),
                        q: init.lin(&format!("{p}.attn.q"), w, w),
                        k: init.lin(&format!("{p}.attn.k"), w, w),
                        v: init.lin(&format!("{p}.attn.v"), w, w),
                        o: init.lin(&format!("{p}.attn.o"), w, w),
                        edge_bias: init.normal(format!("{p}.attn.edge_bias"), RELATION_SLOTS, c.heads, 0.1),
                        edge_value: init.normal(format!("{p}.attn.edge_value"), RELATION_SLOTS, w, 0.1),
                        cross: c.cross_attention.then(|| {
                            (
                                init.norm(&format!("{p}.ln2"), w),
                                init.lin(&format!("{p}.cross.q"), w, w),
                                init.lin(&format!("{p}.cross.k"), w, w),
                                init.lin(&format!("{p}.cross.v"), w, w),
                                init.lin(&format!("{p}.cross.o"), w, w),
                            )
                        }),
                        ln3: init.norm(&format!("{p}.ln3"), w),
                        ff1: init.lin(&format!("{p}.ff1"), w, w * c.ffn_mult),
                        ff2: init.lin(&format!("{p}.ff2"), w * c.ffn_mult, w),
                    }
                })
                .collect();
            let e = c.edge_width;
            Ids {
                cat_emb,
                feat_emb,
                act_emb,
                time_emb,
                layout_in,
                cond_in,
                cond_pos,
                layers,
                ln_f: init.norm("ln_f", w),
                cat_head: init.lin("head.category", w, c.num_categories + 1),
                feat_head: init.lin("head.feature", w, c.num_features + 1),
                act_head: init.lin("head.action", w, ACTION_SLOTS),
                edge_p: init.lin("head.edge_p", w, e),
                edge_q: init.normal("head.edge_q.w".into(), w, e, 1.0 / (w as f64).sqrt()),
                edge_emb: init.normal("head.edge_emb".into(), RELATION_SLOTS, e, 0.5),
                edge_out: init.lin("head.edge_out", e, RELATION_SLOTS),
                layout_head: init.lin("head.layout", w, 8),
            }
        };
        let ema = params.clone();
        Ok(Self {
            config,
            params,
            ema,
            ids,
        })
    }

    /// Copies the current parameters into the EMA shadow.
    pub fn reset_ema(&mut self) {
        self.ema = self.params.clone();
    }

    fn check_input(&self, x: &ModelInput) -> Result<usize> {
        let n = x.categories.len();
        let c = &self.config;
        let bad = |what: &str| Err(Error::ShapeMismatch(what.to_string()));
        if n == 0 {
            return bad("graph has no nodes");
        }
        if x.features.len() != n || x.actions.len() != n {
            return bad("node attribute lengths differ");
        }
        if x.relations.len() != n * n {
            return bad("relation matrix is not n x n");
        }
        if x.valid.is_some_and(|v| v.len() != n || !v.iter().any(|&b| b)) {
            return bad("validity mask must cover n slots with at least one real node");
        }
        if x.lambda.len() != c.cond_dim {
            return bad("prompt embedding dimension");
        }
        if c.layout_input != x.layout.is_some() || x.layout.is_some_and(|l| l.len() != n) {
            return bad("layout input presence or length");
        }
        let out_of_range = x.categories.iter().any(|&v| v > c.num_categories)
            || x.features.iter().any(|&v| v > c.num_features)
            || x.actions.iter().any(|&v| v >= ACTION_SLOTS)
            || x.relations.iter().any(|&v| v >= RELATION_SLOTS)
            || x.timestep > c.timesteps;
        if out_of_range {
            return Err(Error::InvalidInput("model input index out of range".into()));
        }
        Ok(n)
    }

    /// Runs the network on graph `g`, whose parameter store must be this
    /// model's `params` or `ema`. Dropout is applied only when `train` holds
    /// an RNG.
    pub fn forward<R: Rng>(
        &self,
        g: &mut Graph,
        x: &ModelInput,
        heads: Heads,
        mut train: Option<&mut R>,
    ) -> Result<ModelOutput> {
        let n = self.check_input(x)?;
        let c = &self.config;
        let ids = &self.ids;
        let drop = c.dropout;

        let mut h = g.gather(ids.cat_emb, x.categories);
        let f = g.gather(ids.feat_emb, x.features);
        h = g.add(h, f);
        let a = g.gather(ids.act_emb, x.actions);
        h = g.add(h, a);
        let t = g.gather(ids.time_emb, &vec![x.timestep; n]);
        h = g.add(h, t);
        if let (Some(lin), Some(layout)) = (&ids.layout_in, x.layout) {
            let data = layout.iter().flat_map(|r| r.iter().copied()).collect();
            let li = g.input(Tensor::from_vec(n, 8, data));
            let p = g.linear(li, lin.w, lin.b);
            h = g.add(h, p);
        }

        let tokens = match (&ids.cond_in, ids.cond_pos) {
            (Some(lin), Some(pos)) => {
                let lam = g.input(Tensor::from_vec(c.cond_tokens, c.cond_dim / c.cond_tokens, x.lambda.to_vec()));
                let p = g.linear(lam, lin.w, lin.b);
                let pos = g.param(pos);
                Some(g.add(p, pos))
            }
            _ => None,
        };
        let key_mask = x.valid.map(<[bool]>::to_vec);

        for layer in &ids.layers {
            let y = g.layer_norm(h, layer.ln1.g, layer.ln1.b);
            let q = g.linear(y, layer.q.w, layer.q.b);
            let k = g.linear(y, layer.k.w, layer.k.b);
            let v = g.linear(y, layer.v.w, layer.v.b);
            let edges = EdgeTerms {
                rel: x.relations.to_vec(),
                bias: g.param(layer.edge_bias),
                value: g.param(layer.edge_value),
            };
            let att = g.attention(q, k, v, c.heads, Some(edges), key_mask.clone());
            let mut o = g.linear(att, layer.o.w, layer.o.b);
            if let Some(rng) = train.as_deref_mut() {
                o = g.dropout(o, drop, rng);
            }
            h = g.add(h, o);

            if let (Some((ln2, cq, ck, cv, co)), Some(tok)) = (&layer.cross, tokens) {
                let y = g.layer_norm(h, ln2.g, ln2.b);
                let q = g.linear(y, cq.w, cq.b);
                let k = g.linear(tok, ck.w, ck.b);
                let v = g.linear(tok, cv.w, cv.b);
                let att = g.attention(q, k, v, c.heads, None, None);
                let mut o = g.linear(att, co.w, co.b);
                if let Some(rng) = train.as_deref_mut() {
                    o = g.dropout(o, drop, rng);
                }
                h = g.add(h, o);
            }

            let y = g.layer_norm(h, layer.ln3.g, layer.ln3.b);
            let u = g.linear(y, layer.ff1.w, layer.ff1.b);
            let u = g.gelu(u);
            let mut o = g.linear(u, layer.ff2.w, layer.ff2.b);
            if let Some(rng) = train.as_deref_mut() {
                o = g.dropout(o, drop, rng);
            }
            h = g.add(h, o);
        }
        let hf = g.layer_norm(h, ids.ln_f.g, ids.ln_f.b);

        let mut out = ModelOutput {
            category: None,
            feature: None,
            action: None,
            relation: None,
            layout: None,
        };
        if heads.graph {
            out.category = Some(g.linear(hf, ids.cat_head.w, ids.cat_head.b));
            out.feature = Some(g.linear(hf, ids.feat_head.w, ids.feat_head.b));
            out.action = Some(g.linear(hf, ids.act_head.w, ids.act_head.b));
            let p = g.linear(hf, ids.edge_p.w, ids.edge_p.b);
            let wq = g.param(ids.edge_q);
            let q = g.matmul(hf, wq);
            let pc = g.pair_combine(p, q, ids.edge_emb, x.relations);
            out.relation = Some(g.linear(pc, ids.edge_out.w, ids.edge_out.b));
        }
        if heads.layout {
            out.layout = Some(g.linear(hf, ids.layout_head.w, ids.layout_head.b));
        }
        Ok(out)
    }

    /// Inference-mode forward pass on the EMA weights, returning tensors.
    pub fn predict(&self, x: &ModelInput, heads: Heads) -> Result<Predictions> {
        let mut g = Graph::new(&self.ema);
        let out = self.forward::<rand_chacha::ChaCha8Rng>(&mut g, x, heads, None)?;
        let get = |v: Option<Var>| v.map(|v| g.value(v).clone());
        Ok(Predictions {
            category: get(out.category),
            feature: get(out.feature),
            action: get(out.action),
            relation: get(out.relation),
            layout: get(out.layout),
        })
    }
}

/// Output tensors of an inference pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub category: Option<Tensor>,
    pub feature: Option<Tensor>,
    pub action: Option<Tensor>,
    pub relation: Option<Tensor>,
    pub layout: Option<Tensor>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(layout: bool) -> ModelConfig {
        ModelConfig {
            layers: 2,
            heads: 2,
            width: 16,
            ffn_mult: 2,
            dropout: 0.0,
            num_categories: 5,
            num_features: 4,
            timesteps: 10,
            cond_dim: 16,
            cond_tokens: 4,
            cross_attention: !layout,
            layout_input: layout,
            edge_width: 8,
        }
    }

    struct Example {
        cats: Vec<usize>,
        feats: Vec<usize>,
        acts: Vec<usize>,
        rels: Vec<usize>,
        lambda: Vec<f64>,
        layout: Vec<[f64; 8]>,
    }

    fn example(n: usize, seed: u64) -> Example {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Example {
            cats: (0..n).map(|_| rng.random_range(0..6)).collect(),
            feats: (0..n).map(|_| rng.random_range(0..5)).collect(),
            acts: (0..n).map(|_| rng.random_range(0..5)).collect(),
            rels: (0..n * n).map(|_| rng.random_range(0..12)).collect(),
            lambda: (0..16).map(|_| rng.random::<f64>() - 0.5).collect(),
            layout: (0..n).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect(),
        }
    }

    impl Example {
        fn input(&self, layout: bool) -> ModelInput<'_> {
            ModelInput {
                categories: &self.cats,
                features: &self.feats,
                actions: &self.acts,
                relations: &self.rels,
                timestep: 3,
                lambda: &self.lambda,
                layout: layout.then_some(&self.layout[..]),
                valid: None,
            }
        }
    }

    #[test]
    fn zero_weights_give_uniform_logits() {
        let mut m = GraphTransformer::new(tiny(false), 0).unwrap();
        for t in m.ema.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x = 0.0);
        }
        let ex = example(1, 1);
        let p = m.predict(&ex.input(false), Heads::GRAPH).unwrap();
        let cat = p.category.unwrap();
        assert!(cat.data.iter().all(|&x| x == cat.data[0]));
        let rel = p.relation.unwrap();
        assert!(rel.data.iter().all(|&x| x == rel.data[0]));
    }

    #[test]
    fn node_permutation_is_equivariant() {
        for layout in [false, true] {
            let m = GraphTransformer::new(tiny(layout), 7).unwrap();
            let ex = example(5, 2);
            let perm = [3, 0, 4, 1, 2];
            let n = 5;
            let px = Example {
                cats: perm.iter().map(|&p| ex.cats[p]).collect(),
                feats: perm.iter().map(|&p| ex.feats[p]).collect(),
                acts: perm.iter().map(|&p| ex.acts[p]).collect(),
                rels: (0..n * n).map(|k| ex.rels[perm[k / n] * n + perm[k % n]]).collect(),
                lambda: ex.lambda.clone(),
                layout: perm.iter().map(|&p| ex.layout[p]).collect(),
            };
            let a = m.predict(&ex.input(layout), Heads::ALL).unwrap();
            let b = m.predict(&px.input(layout), Heads::ALL).unwrap();
            let (la, lb) = (a.layout.unwrap(), b.layout.unwrap());
            let (ra, rb) = (a.relation.unwrap(), b.relation.unwrap());
            for i in 0..n {
                for (x, y) in lb.row(i).iter().zip(la.row(perm[i])) {
                    assert!((x - y).abs() < 1e-9);
                }
                for j in 0..n {
                    for (x, y) in rb.row(i * n + j).iter().zip(ra.row(perm[i] * n + perm[j])) {
                        assert!((x - y).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn padded_slots_do_not_affect_real_outputs() {
        let m = GraphTransformer::new(tiny(false), 3).unwrap();
        let mut ex = example(4, 5);
        let valid = [true, true, true, false];
        let run = |ex: &Example| {
            let mut x = ex.input(false);
            x.valid = Some(&valid);
            m.predict(&x, Heads::GRAPH).unwrap()
        };
        let a = run(&ex);
        ex.cats[3] = 0;
        ex.feats[3] = 1;
        ex.rels[3] = 2;
        ex.rels[3 * 4 + 1] = 7;
        let b = run(&ex);
        let (ca, cb) = (a.category.unwrap(), b.category.unwrap());
        for i in 0..3 {
            assert_eq!(ca.row(i), cb.row(i));
        }
        let (ra, rb) = (a.relation.unwrap(), b.relation.unwrap());
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(ra.row(i * 4 + j), rb.row(i * 4 + j));
            }
        }
    }

    #[test]
    fn shape_errors_are_reported() {
        let m = GraphTransformer::new(tiny(false), 3).unwrap();
        let mut ex = example(3, 1);
        ex.rels.pop();
        assert!(matches!(m.predict(&ex.input(false), Heads::GRAPH), Err(Error::ShapeMismatch(_))));
    }
}
