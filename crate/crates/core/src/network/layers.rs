use rand::Rng;

use super::{ImageMap, ParamStore};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

/// Graph handles for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Handles in store order, e.g. for evaluating a network at parameter
    /// values other than the store's.
    pub fn new(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, index: usize) -> Var {
        self.vars[index]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Network topology; parameters live in a [`ParamStore`] and are referenced
/// by index.
pub trait Architecture {
    fn forward<T: Scalar>(&self, g: &mut Graph<T>, params: &Bound, x: Var) -> Result<Var>;
}

/// An architecture with its parameters bound into one graph.
pub struct Model<'a, A> {
    pub arch: &'a A,
    pub params: Bound,
}

impl<'a, A> Model<'a, A> {
    /// Binds `store` into `g`; gradients reach the parameters iff `trainable`.
    pub fn bind<T: Scalar>(arch: &'a A, store: &ParamStore<T>, g: &mut Graph<T>, trainable: bool) -> Self {
        Model {
            arch,
            params: store.bind(g, trainable),
        }
    }
}

/// Valid only on the graph the parameters were bound to.
impl<T: Scalar, A: Architecture> ImageMap<T> for Model<'_, A> {
    fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        self.arch.forward(g, &self.params, x)
    }
}

/// Convolution with bias, parameters registered in a store.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub weight: usize,
    pub bias: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// Registers `name.weight` (Kaiming-uniform, fan-in, leaky-ReLU gain) and
    /// a zero `name.bias`.
    #[allow(clippy::too_many_arguments)]
    pub fn register<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = (in_ch * kernel * kernel) as f64;
        let gain = (2.0 / (1.0 + 0.2f64 * 0.2)).sqrt();
        let bound = gain * (3.0 / fan_in).sqrt();
        let weight = Tensor::from_fn([out_ch, in_ch, kernel, kernel], |_, _, _, _| {
            T::of(rng.gen_range(-bound..bound))
        });
        let w = store.insert(format!("{name}.weight"), weight)?;
        let b = store.insert(format!("{name}.bias"), Tensor::zeros([1, out_ch, 1, 1]))?;
        Ok(Conv {
            weight: w,
            bias: b,
            stride,
            pad: kernel / 2,
        })
    }

    /// Like [`register`](Self::register) but with all-zero weights.
    pub fn register_zero<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        let w = store.insert(format!("{name}.weight"), Tensor::zeros([out_ch, in_ch, kernel, kernel]))?;
        let b = store.insert(format!("{name}.bias"), Tensor::zeros([1, out_ch, 1, 1]))?;
        Ok(Conv {
            weight: w,
            bias: b,
            stride,
            pad: kernel / 2,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, p.var(self.weight), Some(p.var(self.bias)), self.stride, self.pad)
    }

    /// Convolution followed by leaky ReLU(0.2).
    pub fn forward_act<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = self.forward(g, p, x)?;
        Ok(g.leaky_relu(y))
    }
}

/// An architecture together with its own parameter store.
#[derive(Clone, Debug)]
pub struct Network<A, T> {
    pub arch: A,
    pub params: ParamStore<T>,
}

impl<A: Architecture, T: Scalar> Network<A, T> {
    pub fn bind<'a>(&'a self, g: &mut Graph<T>, trainable: bool) -> Model<'a, A> {
        Model::bind(&self.arch, &self.params, g, trainable)
    }
}

/// Binds the parameters as constants on every call: gradients reach the
/// input only.
impl<A: Architecture, T: Scalar> ImageMap<T> for Network<A, T> {
    fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let m = self.bind(g, false);
        m.forward(g, x)
    }
}
