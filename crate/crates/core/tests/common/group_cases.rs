//! Group-axiom checks shared by the transform tests and the acceptance suite.

use eid_core::data::smooth_image;
use eid_core::tensor::Tensor;
use eid_core::transforms::{Axis, GroupElement};

use crate::common::{rng, uniform};

pub fn exact_elements() -> Vec<GroupElement> {
    let mut out = Vec::new();
    for k in 0..4 {
        out.push(GroupElement::rotate(k as f64 * std::f64::consts::FRAC_PI_2));
    }
    for (dx, dy) in [(1.0, 0.0), (-3.0, 5.0), (17.0, -9.0), (0.0, 0.0)] {
        out.push(GroupElement::shift(dx, dy));
    }
    out.push(GroupElement::reflect(Axis::Horizontal));
    out.push(GroupElement::reflect(Axis::Vertical));
    out
}

fn bits(x: &Tensor<f64>) -> Vec<u64> {
    x.data().iter().map(|v| v.to_bits()).collect()
}

/// Identity, inverse and composition of the exact kinds, compared bit for bit.
/// Returns a description of the first violation.
pub fn exact_axioms() -> Result<(), String> {
    let x = uniform([2, 3, 12, 12], 0.0, 1.0, &mut rng(21));
    let id = GroupElement::identity().apply_tensor(&x).unwrap();
    if bits(&id) != bits(&x) {
        return Err("identity changed the image".into());
    }
    let elems = exact_elements();
    for a in &elems {
        let ax = a.apply_tensor(&x).unwrap();
        let back = a.invert().unwrap().apply_tensor(&ax).unwrap();
        if bits(&back) != bits(&x) {
            return Err(format!("inverse of {:?}", a.action));
        }
        for b in &elems {
            let seq = b.apply_tensor(&ax).unwrap();
            let composed = a.then(b).apply_tensor(&x).unwrap();
            if bits(&seq) != bits(&composed) {
                return Err(format!("composition of {:?} then {:?}", a.action, b.action));
            }
        }
    }
    Ok(())
}

/// Mean absolute round-trip error `g⁻¹(g(x)) − x` over the pixels that stayed
/// inside the frame in both directions, on the smooth test image.
pub fn round_trip_mae(g: &GroupElement) -> f64 {
    let x = smooth_image(32, 3, 5);
    let back = g.invert().unwrap().apply_tensor(&g.apply_tensor(&x).unwrap()).unwrap();
    let ones = Tensor::<f64>::ones([1, 1, 32, 32]);
    let reach = g.invert().unwrap().apply_tensor(&g.apply_tensor(&ones).unwrap()).unwrap();
    let (mut sum, mut count) = (0.0, 0usize);
    for c in 0..3 {
        for i in 0..32 {
            for j in 0..32 {
                if reach.at(0, 0, i, j) >= 1.0 - 1e-9 {
                    sum += (back.at(0, c, i, j) - x.at(0, c, i, j)).abs();
                    count += 1;
                }
            }
        }
    }
    assert!(count > 0, "round trip left no interior pixels");
    sum / count as f64
}

pub fn continuous_elements() -> Vec<(&'static str, GroupElement)> {
    use eid_core::transforms::Action;
    vec![
        ("rotate", GroupElement::rotate(0.61)),
        ("shift", GroupElement::shift(2.5, -1.25)),
        ("scale", GroupElement::scale(1.2)),
        ("euclidean", Action::Euclidean { angle: -0.4, dx: 1.5, dy: 0.5 }.into()),
        ("similarity", Action::Similarity { angle: 0.3, scale: 0.9, dx: -1.0, dy: 2.0 }.into()),
        ("affine", GroupElement::affine([[1.1, 0.1, 0.5], [-0.05, 0.95, -1.0]])),
        (
            "pantiltrotate",
            Action::PanTiltRotate { pan: 0.05, tilt: -0.04, roll: 0.1, focal: 40.0, inverse: false }.into(),
        ),
    ]
}
