//! Continuous diffusion that attaches an 8-value layout to every node of a
//! clean scene graph.
//!
//! Layouts are z-scored (translation and size; the rotation pair is left as
//! is), corrupted with a variance-preserving cosine schedule, and the
//! denoiser regresses the clean normalized layout directly.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Layout;
use crate::graph_diffusion::GraphState;
use crate::neural::checkpoint;
use crate::neural::tape::Graph;
use crate::neural::{GraphTransformer, Heads, ModelConfig, Objective, Profile, Tensor, Var};
use crate::scene::SceneGraph;
use crate::vocab::SceneType;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutSchedule {
    pub steps: usize,
    /// Cosine-schedule offset.
    pub offset: f64,
}

impl Default for LayoutSchedule {
    fn default() -> Self {
        Self {
            steps: 10,
            offset: 0.008,
        }
    }
}

impl LayoutSchedule {
    /// Cumulative signal fraction `alpha_bar(t)`; 1 at `t = 0`, 0 at `T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            return 1.0;
        }
        if t >= self.steps {
            return 0.0;
        }
        let f = |u: f64| ((u + self.offset) / (1.0 + self.offset) * FRAC_PI_2).cos().powi(2);
        f(t as f64 / self.steps as f64) / f(0.0)
    }

    /// `(alpha(t), sigma(t))` with `alpha^2 + sigma^2 = 1`.
    pub fn scales(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar(t);
        (ab.sqrt(), (1.0 - ab).sqrt())
    }
}

/// `L_t = alpha(t) L_0 + sigma(t) eps` per scalar.
pub fn corrupt_layouts(l0: &[[f64; 8]], t: usize, schedule: &LayoutSchedule, rng: &mut impl Rng) -> Vec<[f64; 8]> {
    let (a, s) = schedule.scales(t);
    l0.iter()
        .map(|row| {
            std::array::from_fn(|k| {
                let e: f64 = rng.sample(StandardNormal);
                a * row[k] + s * e
            })
        })
        .collect()
}

/// Mean and standard deviation of translation and size components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutStats {
    pub mean: [f64; 6],
    pub std: [f64; 6],
}

impl Default for LayoutStats {
    fn default() -> Self {
        Self {
            mean: [0.0; 6],
            std: [1.0; 6],
        }
    }
}

impl LayoutStats {
    pub fn fit<'a>(layouts: impl IntoIterator<Item = &'a Layout>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = [0.0; 6];
        let mut sq = [0.0; 6];
        for l in layouts {
            let v = l.to_array();
            for k in 0..6 {
                sum[k] += v[k];
                sq[k] += v[k] * v[k];
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        let nf = n as f64;
        let mean = sum.map(|s| s / nf);
        let std = std::array::from_fn(|k| {
            let var = (sq[k] / nf - mean[k] * mean[k]).max(0.0);
            var.sqrt().max(1e-3)
        });
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, l: &Layout) -> [f64; 8] {
        let mut v = l.to_array();
        for k in 0..6 {
            v[k] = (v[k] - self.mean[k]) / self.std[k];
        }
        v
    }

    /// Inverse of [`normalize`](Self::normalize), with sizes clamped to
    /// 1 mm and the rotation pair renormalized.
    pub fn denormalize(&self, v: &[f64; 8]) -> Layout {
        let mut w = *v;
        for k in 0..6 {
            w[k] = w[k] * self.std[k] + self.mean[k];
        }
        Layout::from_array(&w).sanitized()
    }
}

/// Squared error summed over the 8 values of every node, divided by the
/// node count: `(1/n) sum |t^ - t|^2 + (1/n) sum |s^ - s|^2 + (1/n) sum |r^ - r|^2`.
pub fn layout_loss(g: &mut Graph, pred: Var, target: &[[f64; 8]]) -> Result<Var> {
    let n = target.len();
    if g.value(pred).shape() != (n, 8) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} against {n} target layouts",
            g.value(pred).shape()
        )));
    }
    let t = Tensor::from_vec(n, 8, target.iter().flatten().copied().collect());
    Ok(g.mse(pred, t, 1.0 / n.max(1) as f64))
}

/// Plain-value version of [`layout_loss`].
pub fn layout_loss_value(pred: &[[f64; 8]], target: &[[f64; 8]]) -> f64 {
    let n = target.len().max(1) as f64;
    pred.iter()
        .zip(target)
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        / n
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutSampleOptions {
    /// 1 gives ancestral sampling, 0 the deterministic DDIM update.
    pub eta: f64,
}

impl Default for LayoutSampleOptions {
    fn default() -> Self {
        Self { eta: 1.0 }
    }
}

#[derive(Clone, Debug)]
pub struct LayoutDiffusion {
    pub model: GraphTransformer,
    pub schedule: LayoutSchedule,
    pub stats: LayoutStats,
    pub scene_type: SceneType,
    pub trained: bool,
}

#[derive(Serialize, Deserialize)]
struct LayoutExtra {
    schedule: LayoutSchedule,
    stats: LayoutStats,
    scene_type: String,
    trained: bool,
}

impl LayoutDiffusion {
    pub fn new(
        profile: Profile,
        scene_type: SceneType,
        num_categories: usize,
        num_features: usize,
        schedule: LayoutSchedule,
        seed: u64,
    ) -> Result<Self> {
        let mut config = ModelConfig::profile(profile, num_categories, num_features, schedule.steps);
        config.layout_input = true;
        config.cross_attention = false;
        Self::with_config(config, scene_type, schedule, seed)
    }

    pub fn with_config(
        config: ModelConfig,
        scene_type: SceneType,
        schedule: LayoutSchedule,
        seed: u64,
    ) -> Result<Self> {
        if config.timesteps != schedule.steps || !config.layout_input {
            return Err(Error::InvalidInput(
                "layout denoiser needs layout input and one embedding per step".into(),
            ));
        }
        Ok(Self {
            model: GraphTransformer::new(config, seed)?,
            schedule,
            stats: LayoutStats::default(),
            scene_type,
            trained: false,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let extra = LayoutExtra {
            schedule: self.schedule,
            stats: self.stats,
            scene_type: self.scene_type.name().to_string(),
            trained: self.trained,
        };
        checkpoint::save(path, &self.model, "layout", serde_json::to_value(extra)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (model, header) = checkpoint::load(path)?;
        if header.kind != "layout" {
            return Err(Error::Checkpoint(format!("expected a layout checkpoint, found '{}'", header.kind)));
        }
        let extra: LayoutExtra = serde_json::from_value(header.extra)?;
        Ok(Self {
            model,
            schedule: extra.schedule,
            stats: extra.stats,
            scene_type: extra.scene_type.parse()?,
            trained: extra.trained,
        })
    }

    fn lambda(&self) -> Vec<f64> {
        vec![0.0; self.model.config.cond_dim]
    }

    /// Samples one layout per node. Nodes with `frozen[i] = Some(l)` are
    /// returned as `l` unchanged and are re-noised from `l` at every step so
    /// the others are generated around them.
    pub fn sample_layouts(
        &self,
        graph: &SceneGraph,
        frozen: Option<&[Option<Layout>]>,
        opts: LayoutSampleOptions,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Layout>> {
        if !self.trained {
            return Err(Error::UntrainedModel);
        }
        let n = graph.len();
        if let Some(f) = frozen {
            if f.len() != n {
                return Err(Error::ShapeMismatch(format!("{} frozen entries for {n} nodes", f.len())));
            }
        }
        let fixed: Vec<Option<[f64; 8]>> = (0..n)
            .map(|i| frozen.and_then(|f| f[i]).map(|l| self.stats.normalize(&l)))
            .collect();
        let state = GraphState::from_graph(graph);
        let lambda = self.lambda();
        let sch = &self.schedule;
        let mut x: Vec<[f64; 8]> = (0..n)
            .map(|_| std::array::from_fn(|_| rng.sample(StandardNormal)))
            .collect();
        let mut x0_hat = x.clone();
        for t in (1..=sch.steps).rev() {
            for (i, f) in fixed.iter().enumerate() {
                if let Some(l0) = f {
                    x[i] = corrupt_layouts(std::slice::from_ref(l0), t, sch, rng)[0];
                }
            }
            let mut input = state.input(t, &lambda);
            input.layout = Some(&x);
            let pred = self.model.predict(&input, Heads::LAYOUT)?.layout.expect("layout head");
            for i in 0..n {
                x0_hat[i] = pred.row(i).try_into().expect("8 columns");
            }
            let ab_t = sch.alpha_bar(t);
            let ab_prev = sch.alpha_bar(t - 1);
            if t == 1 {
                break;
            }
            let sigma = opts.eta * ((1.0 - ab_prev) / (1.0 - ab_t) * (1.0 - ab_t / ab_prev)).max(0.0).sqrt();
            let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
            for i in 0..n {
                for k in 0..8 {
                    let eps = (x[i][k] - ab_t.sqrt() * x0_hat[i][k]) / (1.0 - ab_t).sqrt();
                    let z: f64 = if sigma > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
                    x[i][k] = ab_prev.sqrt() * x0_hat[i][k] + dir * eps + sigma * z;
                }
            }
        }
        Ok((0..n)
            .map(|i| match frozen.and_then(|f| f[i]) {
                Some(l) => l,
                None => self.stats.denormalize(&x0_hat[i]),
            })
            .collect())
    }
}

/// A graph with its normalized layouts.
#[derive(Clone, Debug)]
pub struct LayoutExample {
    pub graph: GraphState,
    pub layouts: Vec<[f64; 8]>,
}

/// Training objective: draw `t` uniformly in `1..=T`, corrupt the layouts,
/// and regress the clean ones with [`layout_loss`].
pub struct LayoutObjective {
    pub schedule: LayoutSchedule,
}

impl Objective for LayoutObjective {
    type Example = LayoutExample;

    fn loss(
        &self,
        g: &mut Graph,
        model: &GraphTransformer,
        ex: &LayoutExample,
        _epoch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let t = rng.random_range(1..=self.schedule.steps);
        let xt = corrupt_layouts(&ex.layouts, t, &self.schedule, rng);
        let lambda = vec![0.0; model.config.cond_dim];
        let mut input = ex.graph.input(t, &lambda);
        input.layout = Some(&xt);
        let out = model.forward(g, &input, Heads::LAYOUT, Some(rng))?;
        let pred = out
            .layout
            .ok_or_else(|| Error::InvalidInput("model output lacks the layout head".into()))?;
        layout_loss(g, pred, &ex.layouts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::ParamStore;
    use rand::SeedableRng;

    #[test]
    fn schedule_endpoints_and_monotone() {
        let s = LayoutSchedule::default();
        assert_eq!(s.scales(0), (1.0, 0.0));
        assert_eq!(s.scales(10), (0.0, 1.0));
        for t in 1..=10 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            let (a, b) = s.scales(t);
            assert!((a * a + b * b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn corruption_at_zero_is_identity() {
        let l0 = vec![[0.3; 8], [-1.0; 8]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(corrupt_layouts(&l0, 0, &LayoutSchedule::default(), &mut rng), l0);
    }

    #[test]
    fn loss_arithmetic() {
        let target = [[0.0; 8]];
        let mut pred = [[0.0; 8]];
        pred[0][0] = 1.0;
        assert_eq!(layout_loss_value(&pred, &target), 1.0);
        let target = [[0.0; 8]; 2];
        let mut pred = [[0.0; 8]; 2];
        pred[1][0] = 1.0;
        pred[1][3] = 1.0;
        pred[1][6] = 1.0;
        assert_eq!(layout_loss_value(&pred, &target), 1.5);
        assert_eq!(layout_loss_value(&target, &target), 0.0);

        let ps = ParamStore::new();
        let mut g = Graph::new(&ps);
        let p = g.input(Tensor::from_vec(2, 8, pred.iter().flatten().copied().collect()));
        let l = layout_loss(&mut g, p, &target).unwrap();
        assert_eq!(g.value(l).data[0], 1.5);
    }

    #[test]
    fn stats_round_trip() {
        let ls = [
            Layout::new([1.0, 2.0, 0.3], [0.5, 1.0, 0.3], 0.4),
            Layout::new([-1.0, 0.5, 0.6], [0.2, 0.2, 0.6], -2.0),
        ];
        let st = LayoutStats::fit(&ls).unwrap();
        for l in &ls {
            let back = st.denormalize(&st.normalize(l));
            for (a, b) in back.to_array().iter().zip(l.to_array()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
