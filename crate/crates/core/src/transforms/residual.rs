use super::{masked_loss, validity_mask, GroupElement};
use crate::error::Result;
use crate::network::ImageMap;
use crate::physics::HazeOperator;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Reduction, Tensor};

/// Audit metric `mse(f(H(T_g f(y))), T_g f(y))`, masked to in-bounds pixels
/// for continuous `g`. Nothing is differentiated.
pub fn equivariance_residual<T: Scalar>(
    f: &dyn ImageMap<T>,
    haze: &HazeOperator<T>,
    y: &Tensor<T>,
    g: &GroupElement,
) -> Result<f64> {
    let [_, _, h, w] = y.shape();
    let mask = validity_mask::<T>(g, h, w)?;
    let mut graph = Graph::new();
    let yv = graph.constant(y.clone());
    let x1 = f.forward(&mut graph, yv)?;
    let x2 = g.apply(&mut graph, x1)?;
    let hazed = haze.apply(&mut graph, x2)?;
    let back = f.forward(&mut graph, hazed)?;
    let loss = masked_loss(&mut graph, back, x2, mask.as_ref(), Reduction::Mse)?;
    Ok(graph.value(loss).item().to_f64_lossy())
}
