//! Objective-weighting checks shared by the trainer tests and the acceptance
//! suite.

use std::cell::Cell;

use eid_core::error::Result;
use eid_core::network::{Model, ParamStore, UNet, UNetConfig};
use eid_core::physics::{DepthMap, HazeOperator, ScatteringParams};
use eid_core::tensor::{Graph, Reduction, Tensor, Var};
use eid_core::trainer::{eid_loss, EidOptions, Variant};
use eid_core::transforms::GroupElement;

use crate::common::{rng, uniform};

/// Component values `(l_hc, l_ec, total)` for a crafted setup where the terms
/// come out as exactly 1 and 2: `f(x) = 2x`, a clear-air operator
/// (`β = 0`, so `H(x) = x`), `y ≡ 1` and ℓ1 losses. Then `f(y) = 2`, giving
/// `|2 − 1| = 1`, and `f(H(2)) = 4`, giving `|4 − 2| = 2`.
pub fn crafted_terms(lambda: f64, variant: Variant) -> (f64, f64, f64) {
    let doubling = |g: &mut Graph<f64>, x: Var| -> Result<Var> { Ok(g.scale(x, 2.0)) };
    let clear_air = ScatteringParams::scalar(0.0, 1.0, DepthMap::constant(4, 4, 1.0).unwrap()).unwrap();
    let haze = HazeOperator::analytic(&clear_air);
    let mut g = Graph::new();
    let y = g.constant(Tensor::ones([2, 3, 4, 4]));
    let opts = EidOptions {
        lambda_ec: lambda,
        variant,
        detach_target: false,
        loss: Reduction::L1,
    };
    let terms = eid_loss(&mut g, &doubling, &haze, y, &[GroupElement::rotate(std::f64::consts::PI)], &opts).unwrap();
    (g.value(terms.l_hc).item(), g.value(terms.l_ec).item(), g.value(terms.total).item())
}

pub struct ProbeGradients {
    /// Gradient reaching a probe that only the haze-consistency term sees.
    pub hc_probe: f64,
    /// Gradient reaching a probe that only the equivariance term sees.
    pub ec_probe: f64,
    /// Largest accumulated gradient on the shared network parameters.
    pub network: f64,
}

fn max_abs(t: Option<&Tensor<f64>>) -> f64 {
    t.map(|t| t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))).unwrap_or(0.0)
}

/// Runs one objective evaluation through a tiny U-Net and accumulates the
/// gradients into parameter stores. Two unit scalar probes are spliced in:
/// one scales the observation, which is then only reachable through the
/// consistency target because the network detaches its input; the other
/// scales the network output on its second call, which only the
/// equivariance branch makes.
pub fn probe_gradients(variant: Variant) -> ProbeGradients {
    let mut store = ParamStore::<f64>::new();
    let config = UNetConfig {
        levels: 2,
        base_channels: 2,
        ..Default::default()
    };
    let unet = UNet::new(config, &mut store, "", &mut rng(31)).unwrap();
    let mut probes = ParamStore::<f64>::new();
    probes.insert("hc", Tensor::ones([1, 1, 1, 1])).unwrap();
    probes.insert("ec", Tensor::ones([1, 1, 1, 1])).unwrap();

    let mut r = rng(32);
    let depth = DepthMap::new(uniform([1, 1, 8, 8], 0.5, 1.5, &mut r)).unwrap();
    let haze = HazeOperator::analytic(&ScatteringParams::scalar(0.7, 0.9, depth).unwrap());
    let mut g = Graph::new();
    let model = Model::bind(&unet, &store, &mut g, true);
    let bound_probes = probes.bind(&mut g, true);
    let (hc_probe, ec_probe) = (bound_probes.var(0), bound_probes.var(1));
    let calls = Cell::new(0);
    let f = |g: &mut Graph<f64>, x: Var| -> Result<Var> {
        use eid_core::network::ImageMap;
        let input = g.detach(x);
        let out = model.forward(g, input)?;
        calls.set(calls.get() + 1);
        if calls.get() == 2 {
            g.mul(out, ec_probe)
        } else {
            Ok(out)
        }
    };
    let observed = g.constant(uniform([2, 3, 8, 8], 0.3, 0.9, &mut r));
    let y = g.mul(observed, hc_probe).unwrap();
    let opts = EidOptions {
        lambda_ec: 0.1,
        variant,
        detach_target: false,
        loss: Reduction::Mse,
    };
    let terms = eid_loss(&mut g, &f, &haze, y, &[GroupElement::rotate(0.5)], &opts).unwrap();
    assert_eq!(calls.get(), 2);
    let grads = g.backward(terms.total).unwrap();
    store.accumulate(&model.params, &grads);
    probes.accumulate(&bound_probes, &grads);
    ProbeGradients {
        hc_probe: max_abs(probes.grad(0)),
        ec_probe: max_abs(probes.grad(1)),
        network: (0..store.len()).map(|i| max_abs(store.grad(i))).fold(0.0, f64::max),
    }
}
