use hoisynth::neural::checkpoint;
use hoisynth::neural::*;
use hoisynth::par::Parallelism;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(width: usize, layout: bool) -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 2,
        width,
        ffn_mult: 2,
        dropout: 0.0,
        num_categories: 4,
        num_features: 3,
        timesteps: 10,
        cond_dim: 8,
        cond_tokens: 2,
        cross_attention: !layout,
        layout_input: layout,
        edge_width: width / 2,
    }
}

struct Ex {
    cats: Vec<usize>,
    feats: Vec<usize>,
    acts: Vec<usize>,
    rels: Vec<usize>,
    lambda: Vec<f64>,
    layout: Vec<[f64; 8]>,
    t: usize,
}

fn example(n: usize, seed: u64) -> Ex {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ex {
        cats: (0..n).map(|_| rng.random_range(0..5)).collect(),
        feats: (0..n).map(|_| rng.random_range(0..4)).collect(),
        acts: (0..n).map(|_| rng.random_range(0..ACTION_SLOTS)).collect(),
        rels: (0..n * n).map(|_| rng.random_range(0..RELATION_SLOTS)).collect(),
        lambda: (0..8).map(|_| rng.random::<f64>() - 0.5).collect(),
        layout: (0..n).map(|_| std::array::from_fn(|_| rng.random::<f64>() - 0.5)).collect(),
        t: rng.random_range(0..10),
    }
}

impl Ex {
    fn input(&self, layout: bool) -> ModelInput<'_> {
        ModelInput {
            categories: &self.cats,
            features: &self.feats,
            actions: &self.acts,
            relations: &self.rels,
            timestep: self.t,
            lambda: &self.lambda,
            layout: layout.then_some(&self.layout[..]),
            valid: None,
        }
    }
}

fn full_loss(g: &mut Graph, m: &GraphTransformer, ex: &Ex, layout: bool) -> hoisynth::Result<Var> {
    let n = ex.cats.len();
    let heads = if layout { Heads::LAYOUT } else { Heads::GRAPH };
    let out = m.forward::<ChaCha8Rng>(g, &ex.input(layout), heads, None)?;
    if layout {
        let target = Tensor::from_vec(n, 8, ex.layout.iter().flat_map(|r| r.map(|x| 0.5 * x + 0.1)).collect());
        return Ok(g.mse(out.layout.unwrap(), target, 1.0));
    }
    let c = g.cross_entropy(out.category.unwrap(), (0..n).map(|i| (i, (i + 1) % 4, 1.0)).collect());
    let f = g.cross_entropy(out.feature.unwrap(), (0..n).map(|i| (i, i % 3, 1.0)).collect());
    let a = g.cross_entropy(out.action.unwrap(), (0..n).map(|i| (i, i % 4, 1.0)).collect());
    let r = g.cross_entropy(out.relation.unwrap(), (0..n * n).map(|k| (k, k % 11, 0.5)).collect());
    Ok(g.lin_comb(vec![(c, 1.0), (f, 0.7), (a, 0.3), (r, 1.3)]))
}

#[test]
fn gradients_match_finite_differences_for_every_block() {
    for layout in [false, true] {
        let m = GraphTransformer::new(config(16, layout), 3).unwrap();
        let ex = example(3, 9);
        let report = gradient_check(&m, 1e-4, &|g: &mut Graph| full_loss(g, &m, &ex, layout)).unwrap();
        for (name, err) in &report.blocks {
            assert!(*err <= 1e-3, "{name}: {err}");
        }
        assert_eq!(report.entries_checked, m.params.numel());
    }
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let mut m = GraphTransformer::new(config(8, true), 5).unwrap();
    for t in m.params.tensors_mut() {
        for x in t.data.iter_mut() {
            *x = (*x as f32) as f64;
        }
    }
    m.reset_ema();
    let extra = serde_json::json!({"note": "x"});
    let bytes = checkpoint::encode(&m, "layout", extra.clone()).unwrap();
    let (back, header) = checkpoint::decode(&bytes).unwrap();
    assert_eq!(header.kind, "layout");
    assert_eq!(header.extra, extra);
    assert_eq!(back.config, m.config);
    assert_eq!(back.params.to_flat(), m.params.to_flat());
    assert_eq!(checkpoint::encode(&back, "layout", extra).unwrap(), bytes);

    let ex = example(4, 1);
    let a = m.predict(&ex.input(true), Heads::LAYOUT).unwrap().layout.unwrap();
    let b = back.predict(&ex.input(true), Heads::LAYOUT).unwrap().layout.unwrap();
    assert_eq!(a.data, b.data);
}

#[test]
fn checkpoint_rejects_corruption() {
    let m = GraphTransformer::new(config(8, false), 5).unwrap();
    let bytes = checkpoint::encode(&m, "graph", serde_json::Value::Null).unwrap();
    assert!(checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] ^= 1;
    assert!(checkpoint::decode(&bad).is_err());
    let mut long = bytes;
    long.push(0);
    assert!(checkpoint::decode(&long).is_err());
}

struct Fit;

impl Objective for Fit {
    type Example = Ex;
    fn loss(&self, g: &mut Graph, m: &GraphTransformer, ex: &Ex, _: usize, _: &mut ChaCha8Rng) -> hoisynth::Result<Var> {
        full_loss(g, m, ex, false)
    }
}

fn train(mode: Parallelism) -> (Vec<f64>, Vec<f64>) {
    let mut m = GraphTransformer::new(config(16, false), 1).unwrap();
    let data: Vec<Ex> = (0..6).map(|i| example(3, 100 + i)).collect();
    let cfg = TrainConfig {
        batch_size: 3,
        learning_rate: 5e-3,
        weight_decay: 0.0,
        ema_decay: 0.9,
        epochs: 30,
        seed: 4,
        grad_clip: 1.0,
        warmup_steps: 0,
        parallelism: mode,
    };
    let hist = Trainer::new(&mut m, cfg).unwrap().fit(&Fit, &data, |_, _| {}).unwrap();
    (hist, m.params.to_flat())
}

#[test]
fn training_lowers_loss_and_is_deterministic_across_modes() {
    let (h1, p1) = train(Parallelism::Sequential);
    let (h2, p2) = train(Parallelism::Rayon);
    assert!(h1.last().unwrap() < &(0.5 * h1[0]), "{h1:?}");
    assert_eq!(h1, h2);
    assert_eq!(p1, p2);
}

#[test]
fn invalid_training_config_is_rejected() {
    let mut m = GraphTransformer::new(config(8, false), 1).unwrap();
    let mut cfg = TrainConfig::desk();
    cfg.batch_size = 0;
    assert!(Trainer::new(&mut m, cfg).is_err());
}
