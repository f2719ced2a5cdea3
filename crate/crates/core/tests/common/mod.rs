#![allow(dead_code)]

use eid_core::tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: [usize; 4], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

/// Central finite differences of a scalar-valued graph builder with respect to
/// every element of every input. Independent of the backward rules: it only
/// evaluates forward values.
pub fn numeric_grads(
    inputs: &[Tensor<f64>],
    h: f64,
    f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var,
) -> Vec<Tensor<f64>> {
    let eval = |xs: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).item()
    };
    let mut result = Vec::new();
    for k in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[k].shape());
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            grad.data_mut()[i] = (eval(&plus) - eval(&minus)) / (2.0 * h);
        }
        result.push(grad);
    }
    result
}

pub fn analytic_grads(inputs: &[Tensor<f64>], f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var) -> Vec<Tensor<f64>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.param(x.clone())).collect();
    let out = f(&mut g, &vars);
    let mut grads = g.backward(out).unwrap();
    vars.iter().map(|&v| grads.remove(v).unwrap()).collect()
}

/// max |analytic − numeric| relative to the largest numeric gradient magnitude.
pub fn relative_error(analytic: &[Tensor<f64>], numeric: &[Tensor<f64>]) -> f64 {
    let scale = numeric
        .iter()
        .flat_map(|t| t.data().iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-8);
    let worst = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| a.max_abs_diff(n).unwrap())
        .fold(0.0, f64::max);
    worst / scale
}

pub fn gradcheck(inputs: &[Tensor<f64>], f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    let a = analytic_grads(inputs, f);
    let n = numeric_grads(inputs, 1e-6, f);
    relative_error(&a, &n)
}

/// Unpaired clear and hazy synthetic scenes (different scenes on each side).
pub fn unpaired(n_clear: usize, n_hazy: usize, size: usize, seed: u64) -> (Vec<Tensor<f32>>, Vec<Tensor<f32>>) {
    use eid_core::data::{synth_depth, synth_scene, SceneSpec};
    use eid_core::physics::{DepthMap, HazeOperator, ScatteringParams};
    let spec = SceneSpec {
        size,
        ..Default::default()
    };
    let mut r = rng(seed);
    let clear = (0..n_clear).map(|_| synth_scene(&spec, &mut r).cast()).collect();
    let hazy = (0..n_hazy)
        .map(|_| {
            let x = synth_scene(&spec, &mut r);
            let depth = DepthMap::new(synth_depth(&spec, &mut r)).unwrap();
            let beta = r.gen_range(0.6..0.8);
            let alpha = r.gen_range(0.85..1.0);
            let op = HazeOperator::analytic(&ScatteringParams::scalar(beta, alpha, depth).unwrap());
            op.apply_tensor(&x).unwrap().cast()
        })
        .collect();
    (clear, hazy)
}
