//! Finite-difference gradient cases shared by the gradient tests and the
//! acceptance suite. Each case returns the max relative error of the
//! analytic gradient against central differences (64-bit).

use std::sync::Arc;

use eid_core::network::{Bound, Model, ParamStore, UNet, UNetConfig};
use eid_core::physics::{DepthMap, HazeOperator, ScatteringParams};
use eid_core::tensor::{Graph, OutOfBounds, Reduction, Tensor, Var};
use eid_core::trainer::{eid_loss, EidOptions, Variant};
use eid_core::transforms::GroupElement;
use rand::Rng;

use crate::common::{gradcheck, rng, uniform};

/// Weighted sum so every output element gets a distinct upstream gradient.
fn probe(g: &mut Graph<f64>, y: Var, seed: u64) -> Var {
    let w = uniform(g.shape(y), -1.0, 1.0, &mut rng(seed));
    let w = g.constant(w);
    let p = g.mul(y, w).unwrap();
    g.sum(p)
}

pub fn elementwise() -> Vec<(&'static str, f64)> {
    let mut r = rng(1);
    let x = uniform([2, 3, 4, 5], -1.0, 1.0, &mut r);
    let pos = uniform([2, 3, 4, 5], 0.2, 2.0, &mut r);
    let b = uniform([2, 3, 4, 5], -1.0, 1.0, &mut r);
    let chan = uniform([1, 3, 1, 1], 0.5, 1.5, &mut r);
    let unary: Vec<(&'static str, fn(&mut Graph<f64>, Var) -> Var)> = vec![
        ("exp", |g, v| g.exp(v)),
        ("neg", |g, v| g.neg(v)),
        ("abs", |g, v| g.abs(v)),
        ("square", |g, v| g.square(v)),
        ("relu", |g, v| g.relu(v)),
        ("leaky_relu", |g, v| g.leaky_relu(v)),
        ("sigmoid", |g, v| g.sigmoid(v)),
        ("tanh", |g, v| g.tanh(v)),
        ("scale", |g, v| g.scale(v, -2.5)),
        ("offset", |g, v| g.offset(v, 0.3)),
        ("clamp", |g, v| g.clamp(v, -0.5, 0.5)),
    ];
    let mut out = Vec::new();
    for (name, op) in unary {
        out.push((name, gradcheck(std::slice::from_ref(&x), &|g, v| {
            let y = op(g, v[0]);
            probe(g, y, 11)
        })));
    }
    out.push(("log", gradcheck(std::slice::from_ref(&pos), &|g, v| {
        let y = g.log(v[0]).unwrap();
        probe(g, y, 12)
    })));
    let binary: Vec<(&'static str, fn(&mut Graph<f64>, Var, Var) -> Var)> = vec![
        ("add", |g, a, b| g.add(a, b).unwrap()),
        ("sub", |g, a, b| g.sub(a, b).unwrap()),
        ("mul", |g, a, b| g.mul(a, b).unwrap()),
        ("div", |g, a, b| g.div(a, b).unwrap()),
    ];
    for (name, op) in &binary {
        out.push((name, gradcheck(&[x.clone(), pos.clone()], &|g, v| {
            let y = op(g, v[0], v[1]);
            probe(g, y, 13)
        })));
    }
    out.push(("mul_broadcast", gradcheck(&[b, chan], &|g, v| {
        let y = g.mul(v[0], v[1]).unwrap();
        probe(g, y, 14)
    })));
    out
}

pub fn conv2d() -> Vec<(&'static str, f64)> {
    let mut r = rng(2);
    let x = uniform([1, 2, 5, 5], -1.0, 1.0, &mut r);
    let w = uniform([3, 2, 3, 3], -1.0, 1.0, &mut r);
    let b = uniform([1, 3, 1, 1], -1.0, 1.0, &mut r);
    let mut out = Vec::new();
    for (name, stride, pad) in [("conv2d", 1, 1), ("conv2d_stride2", 2, 1), ("conv2d_nopad", 1, 0)] {
        out.push((name, gradcheck(&[x.clone(), w.clone(), b.clone()], &|g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap();
            probe(g, y, 21)
        })));
    }
    out
}

pub fn resample() -> Vec<(&'static str, f64)> {
    let x = uniform([2, 2, 4, 6], -1.0, 1.0, &mut rng(3));
    vec![
        ("upsample2", gradcheck(std::slice::from_ref(&x), &|g, v| {
            let y = g.upsample2(v[0]).unwrap();
            probe(g, y, 31)
        })),
        ("downsample2", gradcheck(&[x], &|g, v| {
            let y = g.downsample2(v[0]).unwrap();
            probe(g, y, 32)
        })),
    ]
}

pub fn grid_sample() -> Vec<(&'static str, f64)> {
    let mut r = rng(4);
    let x = uniform([2, 2, 6, 7], -1.0, 1.0, &mut r);
    // Sample positions away from integer knots, where bilinear weights kink.
    let mut coord = |hi: f64| {
        let base = r.gen_range(-2..(hi as i64 + 2)) as f64;
        base + r.gen_range(0.1..0.9)
    };
    let grid = Tensor::from_fn([2, 2, 5, 4], |_, c, _, _| if c == 0 { coord(7.0) } else { coord(6.0) });
    let mut out = Vec::new();
    for (name, oob) in [("grid_sample_zero", OutOfBounds::Zero), ("grid_sample_wrap", OutOfBounds::Wrap)] {
        let grid = grid.clone();
        out.push((name, gradcheck(std::slice::from_ref(&x), &move |g, v| {
            let y = g.grid_sample(v[0], grid.clone(), oob).unwrap();
            probe(g, y, 41)
        })));
    }
    out
}

pub fn structural() -> Vec<(&'static str, f64)> {
    let mut r = rng(5);
    let a = uniform([2, 2, 3, 3], -1.0, 1.0, &mut r);
    let b = uniform([2, 1, 3, 3], -1.0, 1.0, &mut r);
    let perm: Arc<[usize]> = (0..9).rev().collect::<Vec<_>>().into();
    vec![
        ("concat_channels", gradcheck(&[a.clone(), b], &|g, v| {
            let y = g.concat(&[v[0], v[1]], 1).unwrap();
            probe(g, y, 51)
        })),
        ("narrow_batch", gradcheck(std::slice::from_ref(&a), &|g, v| {
            let y = g.narrow_batch(v[0], 1, 1).unwrap();
            probe(g, y, 52)
        })),
        ("gather", gradcheck(&[a], &|g, v| {
            let y = g.gather(v[0], perm.clone(), 3, 3).unwrap();
            probe(g, y, 53)
        })),
    ]
}

pub fn reduce() -> Vec<(&'static str, f64)> {
    let mut r = rng(6);
    let a = uniform([2, 3, 4, 4], -1.0, 1.0, &mut r);
    let b = uniform([2, 3, 4, 4], -1.0, 1.0, &mut r);
    let mut out = Vec::new();
    for (name, kind) in [("sum", Reduction::Sum), ("mean", Reduction::Mean)] {
        out.push((name, gradcheck(std::slice::from_ref(&a), &|g, v| {
            let sq = g.square(v[0]);
            g.reduce(kind, sq, None).unwrap()
        })));
    }
    for (name, kind) in [("mse", Reduction::Mse), ("l1", Reduction::L1)] {
        out.push((name, gradcheck(&[a.clone(), b.clone()], &|g, v| g.reduce(kind, v[0], Some(v[1])).unwrap())));
    }
    out
}

fn tiny_unet() -> (UNet, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let config = UNetConfig {
        levels: 2,
        base_channels: 2,
        in_channels: 3,
        out_channels: 3,
    };
    let unet = UNet::new(config, &mut store, "", &mut rng(7)).unwrap();
    (unet, store)
}

/// The full objective through a tiny U-Net: gradient with respect to every
/// network parameter and the hazy input.
pub fn eid() -> Vec<(&'static str, f64)> {
    let (unet, store) = tiny_unet();
    let mut r = rng(8);
    let y = uniform([2, 3, 8, 8], 0.2, 0.9, &mut r);
    let depth = DepthMap::new(uniform([1, 1, 8, 8], 0.5, 1.5, &mut r)).unwrap();
    let haze = HazeOperator::analytic(&ScatteringParams::scalar(0.7, 0.9, depth).unwrap());
    let mut inputs = vec![y];
    inputs.extend((0..store.len()).map(|i| store.value(i).clone()));
    let cases = [
        ("eid_loss_v3_rotate", GroupElement::rotate(0.7), false),
        ("eid_loss_v3_shift", GroupElement::shift(3.0, -2.0), false),
    ];
    cases
        .into_iter()
        .map(|(name, element, detach)| {
            let opts = EidOptions {
                lambda_ec: 0.1,
                variant: Variant::V3,
                detach_target: detach,
                loss: Reduction::Mse,
            };
            let err = gradcheck(&inputs, &|g, v| {
                let model = Model {
                    arch: &unet,
                    params: Bound::new(v[1..].to_vec()),
                };
                eid_loss(g, &model, &haze, v[0], std::slice::from_ref(&element), &opts)
                    .unwrap()
                    .total
            });
            (name, err)
        })
        .collect()
}

pub fn all() -> Vec<(&'static str, f64)> {
    let mut out = elementwise();
    out.extend(conv2d());
    out.extend(resample());
    out.extend(grid_sample());
    out.extend(structural());
    out.extend(reduce());
    out.extend(eid());
    out
}
