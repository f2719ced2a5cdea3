//! The haze operator: the atmospheric scattering model `x·t + α·(1 − t)`
//! with `t = exp(−β·d)`, or a frozen learned generator behind the same
//! interface.

use std::sync::Arc;

use crate::adversarial::LearnedGenerator;
use crate::error::{Error, Result};
use crate::network::ImageMap;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Reduction, Tensor, Var};

/// Smallest transmission the analytic inverse accepts.
pub const T_MIN: f64 = 1e-3;

/// Non-negative, finite scene depth, 1×1×H×W (broadcast over channels).
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap<T> {
    values: Tensor<T>,
}

impl<T: Scalar> DepthMap<T> {
    pub fn new(values: Tensor<T>) -> Result<Self> {
        let [n, c, _, _] = values.shape();
        if n != 1 || c != 1 {
            return Err(Error::InvalidShape {
                op: "depth map",
                reason: format!("expected 1x1xHxW, got {:?}", values.shape()),
            });
        }
        if values.data().iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::param("depth", "values must be finite and non-negative"));
        }
        Ok(DepthMap { values })
    }

    pub fn constant(h: usize, w: usize, d: f64) -> Result<Self> {
        Self::new(Tensor::full([1, 1, h, w], T::of(d)))
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn size(&self) -> (usize, usize) {
        let [_, _, h, w] = self.values.shape();
        (h, w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScatteringParams<T> {
    pub beta: f64,
    /// Atmospheric light: one value, or one per channel.
    pub alpha: Vec<f64>,
    pub depth: DepthMap<T>,
}

impl<T: Scalar> ScatteringParams<T> {
    pub fn new(beta: f64, alpha: Vec<f64>, depth: DepthMap<T>) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::param("beta", format!("must be finite and >= 0, got {beta}")));
        }
        if alpha.is_empty() || alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::param("alpha", format!("components must lie in [0, 1], got {alpha:?}")));
        }
        Ok(ScatteringParams { beta, alpha, depth })
    }

    pub fn scalar(beta: f64, alpha: f64, depth: DepthMap<T>) -> Result<Self> {
        Self::new(beta, vec![alpha], depth)
    }

    /// `exp(−β·d)`, 1×1×H×W.
    pub fn transmission(&self) -> Tensor<T> {
        let beta = T::of(self.beta);
        self.depth.values.map(|d| (-beta * d).exp())
    }

    pub fn mean_transmission(&self) -> f64 {
        self.transmission().mean().to_f64_lossy()
    }

    /// `α·(1 − t)` with one plane per airlight component.
    fn airlight_term(&self, channels: usize) -> Tensor<T> {
        let t = self.transmission();
        let [_, _, h, w] = t.shape();
        Tensor::from_fn([1, channels, h, w], |_, c, r, col| {
            let a = if self.alpha.len() == 1 { self.alpha[0] } else { self.alpha[c] };
            T::of(a) * (T::one() - t.at(0, 0, r, col))
        })
    }
}

/// Scattering model for a whole batch: per-item transmission and airlight.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticScattering<T> {
    transmission: Tensor<T>,
    airlight: Tensor<T>,
}

impl<T: Scalar> AnalyticScattering<T> {
    pub fn new(params: &ScatteringParams<T>) -> Self {
        Self::stack(std::slice::from_ref(params)).expect("single item stacks")
    }

    /// One item per batch entry, in order.
    pub fn stack(params: &[ScatteringParams<T>]) -> Result<Self> {
        let first = params.first().ok_or_else(|| Error::Empty("no scattering parameters".into()))?;
        let channels = params.iter().map(|p| p.alpha.len()).max().unwrap();
        let mut ts = Vec::with_capacity(params.len());
        let mut airs = Vec::with_capacity(params.len());
        for p in params {
            if p.depth.size() != first.depth.size() {
                return Err(Error::ShapeMismatch {
                    op: "stack scattering",
                    left: first.depth.values.shape(),
                    right: p.depth.values.shape(),
                });
            }
            if p.alpha.len() != 1 && p.alpha.len() != channels {
                return Err(Error::param("alpha", "mixed per-channel airlight lengths"));
            }
            ts.push(p.transmission());
            airs.push(p.airlight_term(channels));
        }
        Ok(AnalyticScattering {
            transmission: Tensor::stack(&ts)?,
            airlight: Tensor::stack(&airs)?,
        })
    }

    pub fn transmission(&self) -> &Tensor<T> {
        &self.transmission
    }

    pub fn apply(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let sx = g.shape(x);
        let st = self.transmission.shape();
        let sa = self.airlight.shape();
        let batch_ok = st[0] == sx[0] || st[0] == 1;
        let chan_ok = sa[1] == 1 || sa[1] == sx[1];
        if !batch_ok || !chan_ok || st[2..] != sx[2..] {
            return Err(Error::ShapeMismatch {
                op: "apply_haze",
                left: sx,
                right: st,
            });
        }
        let t = g.constant(self.transmission.clone());
        let a = g.constant(self.airlight.clone());
        let attenuated = g.mul(x, t)?;
        g.add(attenuated, a)
    }

    fn fingerprint(&self, out: &mut Vec<u8>) {
        for v in self.transmission.data().iter().chain(self.airlight.data()) {
            v.write_le(out);
        }
    }
}

/// Frozen clean→hazy operator. Gradients flow through it to its input, never
/// into its parameters.
#[derive(Clone)]
pub enum HazeOperator<T> {
    Analytic(AnalyticScattering<T>),
    Learned(Arc<LearnedGenerator<T>>),
}

impl<T: Scalar> HazeOperator<T> {
    pub fn analytic(params: &ScatteringParams<T>) -> Self {
        HazeOperator::Analytic(AnalyticScattering::new(params))
    }

    pub fn apply(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        match self {
            HazeOperator::Analytic(a) => a.apply(g, x),
            HazeOperator::Learned(gen) => gen.forward(g, x),
        }
    }

    pub fn apply_tensor(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let out = self.apply(&mut g, v)?;
        Ok(g.value(out).clone())
    }

    /// Bytes of every operator parameter; equal before and after training.
    pub fn fingerprint(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            HazeOperator::Analytic(a) => a.fingerprint(&mut out),
            HazeOperator::Learned(gen) => out = gen.fingerprint(),
        }
        out
    }
}

impl<T: Scalar> ImageMap<T> for HazeOperator<T> {
    fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        self.apply(g, x)
    }
}

/// Number of input values outside `[0, 1]`; the operator processes them
/// unchanged, audits report the count.
pub fn out_of_range_count<T: Scalar>(x: &Tensor<T>) -> usize {
    x.data().iter().filter(|v| **v < T::zero() || **v > T::one()).count()
}

/// `(y − α(1 − t)) / t`. Rejects near-total extinction (`t < T_MIN`).
pub fn invert_analytic<T: Scalar>(params: &ScatteringParams<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    invert_analytic_with(params, y, T_MIN)
}

pub fn invert_analytic_with<T: Scalar>(params: &ScatteringParams<T>, y: &Tensor<T>, t_min: f64) -> Result<Tensor<T>> {
    let [n, c, h, w] = y.shape();
    if params.depth.size() != (h, w) || (params.alpha.len() != 1 && params.alpha.len() != c) {
        return Err(Error::ShapeMismatch {
            op: "invert_analytic",
            left: y.shape(),
            right: params.depth.values.shape(),
        });
    }
    let t = params.transmission();
    let lowest = t.data().iter().fold(f64::INFINITY, |m, v| m.min(v.to_f64_lossy()));
    if lowest < t_min {
        return Err(Error::TransmissionTooLow { value: lowest, t_min });
    }
    let air = params.airlight_term(params.alpha.len());
    Ok(Tensor::from_fn([n, c, h, w], |ni, ci, r, col| {
        let ac = if air.shape()[1] == 1 { 0 } else { ci };
        (y.at(ni, ci, r, col) - air.at(0, ac, r, col)) / t.at(0, 0, r, col)
    }))
}

/// `L(H(f_out), y)`: re-hazing the estimate must reproduce the observation.
pub fn haze_consistency_loss<T: Scalar>(
    g: &mut Graph<T>,
    op: &HazeOperator<T>,
    f_out: Var,
    y: Var,
    kind: Reduction,
) -> Result<Var> {
    let rehazed = op.apply(g, f_out)?;
    g.reduce(kind, rehazed, Some(y))
}
