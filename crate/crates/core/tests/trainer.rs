mod common;
#[path = "common/trainer_cases.rs"]
#[allow(dead_code)]
mod trainer_cases;

use eid_core::data::{save_image, synth_dataset, HazeRange, SceneSpec};
use eid_core::error::{Error, Result};
use eid_core::network::{ImageMap, UNetConfig};
use eid_core::physics::{invert_analytic, DepthMap, HazeOperator, ScatteringParams};
use eid_core::tensor::{Graph, Reduction, Tensor, Var};
use eid_core::trainer::{
    audit_equivariance, eid_loss, load_dehazer, new_dehazer, train_eid, train_eid_on, EidOptions, Physics,
    PhysicsSource, TrainConfig, Variant,
};
use eid_core::transforms::{GroupElement, TransformKind, TransformSpec};

#[test]
fn weighted_total_of_crafted_terms() {
    let (l_hc, l_ec, total) = trainer_cases::crafted_terms(0.1, Variant::V3);
    assert_eq!((l_hc, l_ec), (1.0, 2.0));
    assert_eq!(total, l_hc + 0.1 * l_ec);
    assert!((total - 1.2).abs() < 1e-15);
    assert_eq!(trainer_cases::crafted_terms(0.1, Variant::V1).2, 1.0);
    assert_eq!(trainer_cases::crafted_terms(0.1, Variant::V2).2, 0.1 * 2.0);
    assert_eq!(trainer_cases::crafted_terms(0.5, Variant::V3).2, 2.0);
}

#[test]
fn excluded_branches_receive_no_gradient() {
    let v1 = trainer_cases::probe_gradients(Variant::V1);
    assert_eq!(v1.ec_probe, 0.0);
    assert!(v1.hc_probe > 0.0 && v1.network > 0.0);
    let v2 = trainer_cases::probe_gradients(Variant::V2);
    assert_eq!(v2.hc_probe, 0.0);
    assert!(v2.ec_probe > 0.0 && v2.network > 0.0);
    let v3 = trainer_cases::probe_gradients(Variant::V3);
    assert!(v3.ec_probe > 0.0 && v3.hc_probe > 0.0);
}

fn shared_params(h: usize, w: usize) -> ScatteringParams<f64> {
    let depth = DepthMap::new(Tensor::from_fn([1, 1, h, w], |_, _, i, j| 0.6 + 0.05 * (i as f64) + 0.01 * j as f64)).unwrap();
    ScatteringParams::scalar(0.7, 0.9, depth).unwrap()
}

#[test]
fn exact_inverse_has_vanishing_objective() {
    let params = shared_params(12, 12);
    let haze = HazeOperator::analytic(&params);
    // The true inverse of the operator, written with graph ops.
    let t = params.transmission();
    let air = t.map(|v| 0.9 * (1.0 - v));
    let inverse = move |g: &mut Graph<f64>, x: Var| -> Result<Var> {
        let a = g.constant(air.clone());
        let tt = g.constant(t.clone());
        let d = g.sub(x, a)?;
        g.div(d, tt)
    };
    let clean = common::uniform([2, 3, 12, 12], 0.0, 1.0, &mut common::rng(1));
    let hazy = haze.apply_tensor(&clean).unwrap();
    for element in [
        GroupElement::rotate(std::f64::consts::FRAC_PI_2),
        GroupElement::shift(3.0, -5.0),
        GroupElement::rotate(0.4),
    ] {
        let mut g = Graph::new();
        let y = g.constant(hazy.clone());
        let opts = EidOptions {
            lambda_ec: 0.1,
            variant: Variant::V3,
            detach_target: false,
            loss: Reduction::Mse,
        };
        let terms = eid_loss(&mut g, &inverse, &haze, y, &[element], &opts).unwrap();
        assert!(g.value(terms.total).item() < 1e-9);
    }
    let via_tensor = invert_analytic(&params, &hazy).unwrap();
    assert!(via_tensor.max_abs_diff(&clean).unwrap() < 1e-12);
}

#[test]
fn per_item_transforms_need_one_element_per_image() {
    let haze = HazeOperator::analytic(&shared_params(8, 8));
    let f = |_: &mut Graph<f64>, x: Var| -> Result<Var> { Ok(x) };
    let mut g = Graph::new();
    let y = g.constant(Tensor::full([3, 3, 8, 8], 0.5));
    let opts = EidOptions {
        lambda_ec: 0.1,
        variant: Variant::V3,
        detach_target: false,
        loss: Reduction::Mse,
    };
    let two = [GroupElement::identity(), GroupElement::rotate(0.3)];
    assert!(eid_loss(&mut g, &f, &haze, y, &two, &opts).is_err());
    assert!(eid_loss(&mut g, &f, &haze, y, &[], &opts).is_err());
    let three = [GroupElement::identity(), GroupElement::rotate(0.3), GroupElement::shift(1.0, 2.0)];
    assert!(eid_loss(&mut g, &f, &haze, y, &three, &opts).is_ok());
}

#[test]
fn invalid_configurations_are_rejected() {
    let bad = |c: TrainConfig| c.validate().unwrap_err();
    for variant in [Variant::V2, Variant::V3] {
        let e = bad(TrainConfig {
            lambda_ec: 0.0,
            variant,
            ..Default::default()
        });
        assert!(matches!(&e, Error::InvalidConfig { key, .. } if key == "lambda"), "{e}");
    }
    let e = bad(TrainConfig {
        lambda_ec: -1.0,
        ..Default::default()
    });
    assert!(e.to_string().contains("lambda"));
    assert!(TrainConfig {
        lambda_ec: 0.0,
        variant: Variant::V1,
        ..Default::default()
    }
    .validate()
    .is_ok());
    bad(TrainConfig {
        epochs: 0,
        ..Default::default()
    });
    bad(TrainConfig {
        transform: "spin".into(),
        ..Default::default()
    });
    bad(TrainConfig {
        loss: Reduction::Sum,
        ..Default::default()
    });
}

fn toy_problem(n: usize) -> (Vec<Tensor<f32>>, Physics<f32>) {
    let mut r = common::rng(5);
    let params: Vec<ScatteringParams<f32>> = (0..n)
        .map(|i| ScatteringParams::scalar(0.6 + 0.05 * i as f64, 0.9, DepthMap::constant(8, 8, 1.0).unwrap()).unwrap())
        .collect();
    let hazy = params
        .iter()
        .map(|p| {
            let x: Tensor<f32> = common::uniform([1, 3, 8, 8], 0.1, 0.9, &mut r).cast();
            HazeOperator::analytic(p).apply_tensor(&x).unwrap()
        })
        .collect();
    (hazy, Physics::PerImage(params))
}

fn toy_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 2,
        base_lr: 1e-3,
        unet: UNetConfig {
            levels: 2,
            base_channels: 4,
            ..Default::default()
        },
        seed,
        ..Default::default()
    }
}

fn without_timing(r: &eid_core::trainer::TrainReport) -> Vec<[u64; 5]> {
    r.records
        .iter()
        .map(|e| [e.epoch as u64, e.lr.to_bits(), e.l_hc.to_bits(), e.l_ec.to_bits(), e.total.to_bits()])
        .collect()
}

#[test]
fn training_is_deterministic_per_seed() {
    let (hazy, physics) = toy_problem(6);
    let (a, ra) = train_eid_on(&hazy, &physics, &toy_config(3)).unwrap();
    let (b, rb) = train_eid_on(&hazy, &physics, &toy_config(3)).unwrap();
    assert_eq!(without_timing(&ra), without_timing(&rb));
    assert_eq!(a.params.fingerprint(), b.params.fingerprint());
    let (c, _) = train_eid_on(&hazy, &physics, &toy_config(4)).unwrap();
    assert_ne!(a.params.fingerprint(), c.params.fingerprint());
}

#[test]
fn every_variant_and_option_trains() {
    let (hazy, physics) = toy_problem(4);
    for variant in Variant::ALL {
        for (detach, per_item) in [(false, false), (true, true)] {
            let config = TrainConfig {
                variant,
                detach_target: detach,
                per_item_transform: per_item,
                transform: "shift+rotate".into(),
                ..toy_config(1)
            };
            let (_, report) = train_eid_on(&hazy, &physics, &config).unwrap();
            assert_eq!(report.records.len(), 3);
            for r in &report.records {
                let lambda_term = match variant {
                    Variant::V1 => r.l_hc,
                    Variant::V2 => 0.1 * r.l_ec,
                    Variant::V3 => r.l_hc + 0.1 * r.l_ec,
                };
                assert!((r.total - lambda_term).abs() < 1e-6 * (1.0 + r.total.abs()), "{variant:?} {r:?}");
            }
        }
    }
}

#[test]
fn training_reduces_the_objective() {
    let params: Vec<ScatteringParams<f32>> = (0..8)
        .map(|i| ScatteringParams::scalar(0.7, 0.9, DepthMap::constant(8, 8, 0.5 + 0.1 * i as f64).unwrap()).unwrap())
        .collect();
    let hazy: Vec<Tensor<f32>> = params
        .iter()
        .enumerate()
        .map(|(i, p)| HazeOperator::analytic(p).apply_tensor(&eid_core::data::smooth_image(8, 3, i as u64).cast()).unwrap())
        .collect();
    let physics = Physics::PerImage(params);
    let config = TrainConfig {
        epochs: 40,
        base_lr: 5e-3,
        ..toy_config(2)
    };
    let (_, report) = train_eid_on(&hazy, &physics, &config).unwrap();
    let first = report.records.first().unwrap().total;
    let last = report.records.last().unwrap().total;
    assert!(last < first * 0.5, "{first} -> {last}");
}

#[test]
fn non_finite_input_aborts_training() {
    let (mut hazy, physics) = toy_problem(2);
    hazy[1].data_mut()[5] = f32::NAN;
    let err = train_eid_on(&hazy, &physics, &toy_config(0)).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
}

#[test]
fn mismatched_physics_is_rejected() {
    let (hazy, _) = toy_problem(3);
    let (_, physics) = toy_problem(2);
    assert!(train_eid_on(&hazy, &physics, &toy_config(0)).is_err());
}

#[test]
fn audit_of_the_exact_inverse_is_near_zero() {
    let params = shared_params(16, 16);
    let t = params.transmission();
    let air = t.map(|v| 0.9 * (1.0 - v));
    let inverse = move |g: &mut Graph<f64>, x: Var| -> Result<Var> {
        let a = g.constant(air.clone());
        let tt = g.constant(t.clone());
        let d = g.sub(x, a)?;
        g.div(d, tt)
    };
    let haze = HazeOperator::analytic(&params);
    let mut r = common::rng(7);
    let hazy: Vec<Tensor<f64>> = (0..3)
        .map(|_| haze.apply_tensor(&common::uniform([1, 3, 16, 16], 0.0, 1.0, &mut r)).unwrap())
        .collect();
    let physics = Physics::Shared(haze);
    let spec = TransformSpec::single(TransformKind::Rotate);
    let report = audit_equivariance(&inverse, &physics, &hazy, &spec, 11).unwrap();
    assert_eq!(report.residuals.len(), 3);
    assert!(report.residual < 1e-20, "{}", report.residual);
    assert_eq!(report, audit_equivariance(&inverse, &physics, &hazy, &spec, 11).unwrap());
    // A map that ignores its input is far from equivariant on rotations of a
    // non-rotation-symmetric estimate.
    let net = new_dehazer::<f64>(UNetConfig::default(), 0).unwrap();
    let untrained = audit_equivariance(&net, &physics, &hazy, &spec, 11).unwrap();
    assert!(untrained.residual > report.residual);
}

#[test]
fn training_from_a_dataset_directory_writes_stable_outputs() {
    let data = tempfile::tempdir().unwrap();
    let spec = SceneSpec {
        size: 24,
        ..Default::default()
    };
    synth_dataset(&spec, 4, &HazeRange::default(), data.path()).unwrap();
    let config = TrainConfig {
        physics: Some(PhysicsSource::parse(data.path().to_str().unwrap()).unwrap()),
        unet: UNetConfig {
            levels: 3,
            base_channels: 4,
            ..Default::default()
        },
        ..toy_config(9)
    };
    let out_a = tempfile::tempdir().unwrap();
    let out_b = tempfile::tempdir().unwrap();
    let hazy = data.path().join("hazy");
    train_eid(&hazy, &config, out_a.path()).unwrap();
    train_eid(&hazy, &config, out_b.path()).unwrap();
    let read = |d: &std::path::Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(out_a.path(), "model.ckpt"), read(out_b.path(), "model.ckpt"));
    assert_eq!(read(out_a.path(), "summary.json"), read(out_b.path(), "summary.json"));
    let strip = |bytes: Vec<u8>| {
        String::from_utf8(bytes)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(read(out_a.path(), "train_log.csv")), strip(read(out_b.path(), "train_log.csv")));

    let net = load_dehazer::<f32>(out_a.path().join("model.ckpt")).unwrap();
    let x: Tensor<f32> = eid_core::data::load_image(hazy.join("0000.png")).unwrap();
    let y = net.eval(&x).unwrap();
    assert_eq!(y.shape(), x.shape());
}

#[test]
fn training_rejects_mismatched_images() {
    let dir = tempfile::tempdir().unwrap();
    save_image(dir.path().join("a.png"), &Tensor::<f32>::full([1, 3, 8, 8], 0.5)).unwrap();
    save_image(dir.path().join("b.png"), &Tensor::<f32>::full([1, 3, 16, 16], 0.5)).unwrap();
    let config = TrainConfig {
        physics: Some(PhysicsSource::parse("analytic:beta=0.5,alpha=0.9").unwrap()),
        ..toy_config(0)
    };
    let out = tempfile::tempdir().unwrap();
    let err = train_eid(dir.path(), &config, out.path()).unwrap_err().to_string();
    assert!(err.contains("b.png"), "{err}");
    assert!(!out.path().join("model.ckpt").exists());
}
