//! The dehazing objective `L(H(f(y)), y) + λ·L(f(H(T_g f(y))), T_g f(y))`
//! and the training loop around it.

mod config;
mod physics_source;
mod run;

pub use config::{TrainConfig, Variant};
pub use physics_source::{Physics, PhysicsSource};
pub use run::{
    audit_equivariance, dehaze, evaluate_dehazer, load_dehazer, load_hazy_dir, new_dehazer, train_eid, train_eid_on,
    AuditReport, EpochRecord, TrainReport, UNET_META,
};

use crate::error::{Error, Result};
use crate::network::ImageMap;
use crate::physics::HazeOperator;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Reduction, Var};
use crate::transforms::{masked_loss, validity_mask, GroupElement};

/// Loss settings of one objective evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EidOptions {
    pub lambda_ec: f64,
    pub variant: Variant,
    pub detach_target: bool,
    pub loss: Reduction,
}

impl EidOptions {
    pub fn from_config(c: &TrainConfig) -> Self {
        EidOptions {
            lambda_ec: c.lambda_ec,
            variant: c.variant,
            detach_target: c.detach_target,
            loss: c.loss,
        }
    }
}

/// Graph handles of the objective and its two terms.
#[derive(Clone, Copy, Debug)]
pub struct EidTerms {
    pub total: Var,
    pub l_hc: Var,
    pub l_ec: Var,
}

/// `l_hc + λ·l_ec`, with the excluded term dropped for V1/V2.
pub fn combine_losses(l_hc: f64, l_ec: f64, lambda_ec: f64, variant: Variant) -> f64 {
    match variant {
        Variant::V1 => l_hc,
        Variant::V2 => lambda_ec * l_ec,
        Variant::V3 => l_hc + lambda_ec * l_ec,
    }
}

/// Graph counterpart of [`combine_losses`]. The excluded term is not an
/// ancestor of the result, so no gradient can come from it.
pub fn combine_terms<T: Scalar>(g: &mut Graph<T>, l_hc: Var, l_ec: Var, lambda_ec: f64, variant: Variant) -> Result<Var> {
    Ok(match variant {
        Variant::V1 => l_hc,
        Variant::V2 => g.scale(l_ec, lambda_ec),
        Variant::V3 => {
            let weighted = g.scale(l_ec, lambda_ec);
            g.add(l_hc, weighted)?
        }
    })
}

/// Records the objective for hazy batch `y` on `g`.
///
/// `elements` holds one transformation shared by the batch, or one per item.
/// Both terms are always computed so they can be reported; the variant only
/// decides which of them the total depends on.
pub fn eid_loss<T: Scalar>(
    g: &mut Graph<T>,
    f: &dyn ImageMap<T>,
    haze: &HazeOperator<T>,
    y: Var,
    elements: &[GroupElement],
    opts: &EidOptions,
) -> Result<EidTerms> {
    let [n, _, h, w] = g.shape(y);
    if elements.is_empty() || (elements.len() != 1 && elements.len() != n) {
        return Err(Error::InvalidShape {
            op: "eid_loss",
            reason: format!("{} transformations for a batch of {}", elements.len(), n),
        });
    }
    let x1 = f.forward(g, y)?;
    let rehazed = haze.apply(g, x1)?;
    let l_hc = g.reduce(opts.loss, rehazed, Some(y))?;

    let (x2, mask) = if elements.len() == 1 {
        (elements[0].apply(g, x1)?, validity_mask::<T>(&elements[0], h, w)?)
    } else {
        let mut parts = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n);
        for (i, e) in elements.iter().enumerate() {
            let item = g.narrow_batch(x1, i, 1)?;
            parts.push(e.apply(g, item)?);
            masks.push(validity_mask::<T>(e, h, w)?);
        }
        let mask = if masks.iter().all(Option::is_none) {
            None
        } else {
            let full: Vec<_> = masks
                .into_iter()
                .map(|m| m.unwrap_or_else(|| crate::tensor::Tensor::ones([1, 1, h, w])))
                .collect();
            Some(crate::tensor::Tensor::stack(&full)?)
        };
        (g.concat(&parts, 0)?, mask)
    };
    let hazed = haze.apply(g, x2)?;
    let back = f.forward(g, hazed)?;
    let target = if opts.detach_target { g.detach(x2) } else { x2 };
    let l_ec = masked_loss(g, back, target, mask.as_ref(), opts.loss)?;
    let total = combine_terms(g, l_hc, l_ec, opts.lambda_ec, opts.variant)?;
    Ok(EidTerms { total, l_hc, l_ec })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighting_arithmetic() {
        assert_eq!(combine_losses(1.0, 2.0, 0.1, Variant::V3), 1.2);
        assert_eq!(combine_losses(1.0, 2.0, 0.1, Variant::V1), 1.0);
        assert_eq!(combine_losses(1.0, 2.0, 0.1, Variant::V2), 0.2);
        let mut g = Graph::<f64>::new();
        let a = g.constant(crate::tensor::Tensor::scalar(1.0));
        let b = g.constant(crate::tensor::Tensor::scalar(2.0));
        let t = combine_terms(&mut g, a, b, 0.1, Variant::V3).unwrap();
        assert_eq!(g.value(t).item(), 1.2);
    }
}
