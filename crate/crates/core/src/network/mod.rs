//! Trainable image-to-image networks, their parameter store and optimizer.

mod checkpoint;
mod layers;
mod params;
mod unet;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use layers::{Architecture, Bound, Conv, Model, Network};
pub use params::{lr_schedule, AdamConfig, ParamStore};
pub use unet::{UNet, UNetConfig};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

/// A differentiable image-to-image map recorded on a graph.
pub trait ImageMap<T: Scalar> {
    fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var>;

    /// Forward pass on plain values, without gradients.
    fn eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let out = self.forward(&mut g, v)?;
        Ok(g.value(out).clone())
    }
}

impl<T: Scalar, F> ImageMap<T> for F
where
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        self(g, x)
    }
}
