//! Finite-difference gradient verification.

use serde::Serialize;

use super::model::GraphTransformer;
use super::tape::{Graph, ParamStore, Var};
use crate::error::Result;

/// Floor on the denominator of the relative error, so entries whose true
/// gradient is numerically zero are judged by absolute error.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per parameter tensor.
    pub blocks: Vec<(String, f64)>,
    pub entries_checked: usize,
}

fn eval(store: &ParamStore, build: &(dyn Fn(&mut Graph) -> Result<Var> + Sync)) -> Result<f64> {
    let mut g = Graph::new(store);
    let l = build(&mut g)?;
    Ok(g.value(l).data[0])
}

/// Compares the tape's gradients of `build`'s scalar output with central
/// differences of step `h` on every entry of `model.params`. `build` must
/// construct the loss on the graph it is given (which borrows a perturbed
/// copy of the parameters) and be deterministic.
pub fn gradient_check(
    model: &GraphTransformer,
    h: f64,
    build: &(dyn Fn(&mut Graph) -> Result<Var> + Sync),
) -> Result<GradCheckReport> {
    let analytic = {
        let mut g = Graph::new(&model.params);
        let l = build(&mut g)?;
        g.backward(l)
    };
    let mut store = model.params.clone();
    let mut blocks = Vec::new();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for id in 0..store.len() {
        let mut block_worst = 0.0f64;
        for k in 0..store.get(id).len() {
            let orig = store.get(id).data[k];
            store.get_mut(id).data[k] = orig + h;
            let lp = eval(&store, build)?;
            store.get_mut(id).data[k] = orig - h;
            let lm = eval(&store, build)?;
            store.get_mut(id).data[k] = orig;
            let num = (lp - lm) / (2.0 * h);
            let ana = analytic.tensors[id].data[k];
            let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(REL_FLOOR);
            block_worst = block_worst.max(rel);
            checked += 1;
        }
        worst = worst.max(block_worst);
        blocks.push((store.name(id).to_string(), block_worst));
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        blocks,
        entries_checked: checked,
    })
}
