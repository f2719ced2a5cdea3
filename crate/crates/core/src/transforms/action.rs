use std::sync::Arc;

use super::{quarter_turns, Action, Axis, GroupElement};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, OutOfBounds, Reduction, Tensor, Var};

const MASK_THRESHOLD: f64 = 1.0 - 1e-4;

impl GroupElement {
    /// Applies the action to every item of an N×C×H×W batch. Differentiable
    /// with respect to `x`.
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        self.validate()?;
        let [_, _, h, w] = g.shape(x);
        if let Action::Composite(parts) = &self.action {
            let mut cur = x;
            for p in parts {
                cur = p.apply(g, cur)?;
            }
            return Ok(cur);
        }
        if self.rotates() && h != w {
            return Err(Error::InvalidShape {
                op: "rotation",
                reason: format!("requires a square image, got {}x{}", h, w),
            });
        }
        if let Some(index) = self.permutation(h, w) {
            return g.gather(x, index, h, w);
        }
        let grid = self.sampling_grid::<T>(h, w)?;
        let oob = if matches!(self.action, Action::Shift { .. }) {
            OutOfBounds::Wrap
        } else {
            OutOfBounds::Zero
        };
        g.grid_sample(x, grid, oob)
    }

    /// Plain-tensor version of [`apply`](Self::apply).
    pub fn apply_tensor<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let out = self.apply(&mut g, v)?;
        Ok(g.value(out).clone())
    }

    fn rotates(&self) -> bool {
        matches!(
            self.action,
            Action::Rotate { .. } | Action::Euclidean { .. } | Action::Similarity { .. }
        )
    }

    /// Source pixel for every destination pixel, for the exact kinds.
    fn permutation(&self, h: usize, w: usize) -> Option<Arc<[usize]>> {
        let index: Vec<usize> = match &self.action {
            Action::Rotate { angle } => {
                let k = quarter_turns(*angle)?;
                let n = w;
                (0..h * w)
                    .map(|i| {
                        let (r, c) = (i / w, i % w);
                        let (sr, sc) = match k {
                            0 => (r, c),
                            1 => (c, n - 1 - r),
                            2 => (n - 1 - r, n - 1 - c),
                            _ => (n - 1 - c, r),
                        };
                        sr * w + sc
                    })
                    .collect()
            }
            Action::Shift { dx, dy } => {
                if dx.fract() != 0.0 || dy.fract() != 0.0 {
                    return None;
                }
                let (dx, dy) = (*dx as i64, *dy as i64);
                (0..h * w)
                    .map(|i| {
                        let (r, c) = ((i / w) as i64, (i % w) as i64);
                        let sr = (r - dy).rem_euclid(h as i64) as usize;
                        let sc = (c - dx).rem_euclid(w as i64) as usize;
                        sr * w + sc
                    })
                    .collect()
            }
            Action::Reflect { axis } => (0..h * w)
                .map(|i| {
                    let (r, c) = (i / w, i % w);
                    match axis {
                        Axis::Horizontal => r * w + (w - 1 - c),
                        Axis::Vertical => (h - 1 - r) * w + c,
                    }
                })
                .collect(),
            Action::Scale { factor } if *factor == 1.0 => (0..h * w).collect(),
            _ => return None,
        };
        Some(index.into())
    }

    /// 1×2×H×W grid of source coordinates: each destination pixel reads the
    /// inverse image of its centre.
    fn sampling_grid<T: Scalar>(&self, h: usize, w: usize) -> Result<Tensor<T>> {
        let m = self
            .homography()
            .ok_or_else(|| Error::Singular("composite has no single homography".into()))?;
        let inv = super::invert3(m).ok_or_else(|| Error::Singular(format!("{:?}", self.action)))?;
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let mut grid = Tensor::zeros([1, 2, h, w]);
        for r in 0..h {
            for c in 0..w {
                let (u, v) = (c as f64 - cx, r as f64 - cy);
                let x = inv[0][0] * u + inv[0][1] * v + inv[0][2];
                let y = inv[1][0] * u + inv[1][1] * v + inv[1][2];
                let z = inv[2][0] * u + inv[2][1] * v + inv[2][2];
                let (sx, sy) = if z.abs() < 1e-12 {
                    (f64::MAX / 4.0, f64::MAX / 4.0)
                } else {
                    (x / z + cx, y / z + cy)
                };
                // Points far outside read zeros either way; keep them finite and small.
                let clip = |v: f64, n: usize| v.clamp(-4.0 * n as f64, 5.0 * n as f64);
                grid.set(0, 0, r, c, T::of(clip(sx, w)));
                grid.set(0, 1, r, c, T::of(clip(sy, h)));
            }
        }
        Ok(grid)
    }
}

/// 1×1×H×W mask of destination pixels whose content comes entirely from
/// inside the source image, or `None` when every pixel is valid.
pub fn validity_mask<T: Scalar>(g: &GroupElement, h: usize, w: usize) -> Result<Option<Tensor<T>>> {
    if g.is_exact() {
        return Ok(None);
    }
    let ones = Tensor::<T>::ones([1, 1, h, w]);
    let moved = g.apply_tensor(&ones)?;
    let threshold = T::of(MASK_THRESHOLD);
    let mask = moved.map(|v| if v >= threshold { T::one() } else { T::zero() });
    Ok(Some(mask))
}

/// Mean squared (or absolute) error over the pixels selected by `mask`
/// (1×1×H×W or N×1×H×W, broadcast over the remaining axes). Without a mask this is the plain
/// `mse`/`l1` reduction.
pub fn masked_loss<T: Scalar>(
    g: &mut Graph<T>,
    a: Var,
    b: Var,
    mask: Option<&Tensor<T>>,
    kind: Reduction,
) -> Result<Var> {
    let Some(mask) = mask else {
        return g.reduce(kind, a, Some(b));
    };
    let [n, c, _, _] = g.shape(a);
    let diff = g.sub(a, b)?;
    let err = match kind {
        Reduction::Mse => g.square(diff),
        Reduction::L1 => g.abs(diff),
        other => {
            return Err(Error::InvalidShape {
                op: "masked_loss",
                reason: format!("{:?} is not a pairwise loss", other),
            })
        }
    };
    let m = g.constant(mask.clone());
    let masked = g.mul(err, m)?;
    let total = g.sum(masked);
    let [mn, mc, _, _] = mask.shape();
    let valid = mask.sum().to_f64_lossy() * ((n / mn) * (c / mc)) as f64;
    Ok(g.scale(total, if valid > 0.0 { 1.0 / valid } else { 0.0 }))
}
