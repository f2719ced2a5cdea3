//! Forward and backward kernels on raw slices. Layout is always NCHW, row-major.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// How [`grid_sample`] reads coordinates that fall outside the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutOfBounds {
    Zero,
    Wrap,
}

#[inline]
pub(crate) fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight independent partial sums so the loop vectorizes.
#[inline]
pub(crate) fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = x.len() / 8;
    for i in 0..chunks {
        let xs = &x[i * 8..i * 8 + 8];
        let ys = &y[i * 8..i * 8 + 8];
        for l in 0..8 {
            acc[l] += xs[l] * ys[l];
        }
    }
    let mut total = T::zero();
    for v in acc {
        total += v;
    }
    for i in chunks * 8..x.len() {
        total += x[i] * y[i];
    }
    total
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col<T: Scalar>(img: &[T], g: &ConvGeom, col: &mut [T]) {
    let p = g.col_cols();
    for ci in 0..g.c {
        let plane = &img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, img: &mut [T]) {
    let p = g.col_cols();
    for ci in 0..g.c {
        let plane = &mut img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `out` is N×O×OH×OW, zero-initialized by the caller.
pub(crate) fn conv2d_forward<T: Scalar>(
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    n: usize,
    o: usize,
    g: &ConvGeom,
    out: &mut [T],
) {
    let k = g.col_rows();
    let p = g.col_cols();
    let mut col = vec![T::zero(); k * p];
    let in_len = g.c * g.h * g.w;
    for ni in 0..n {
        im2col(&input[ni * in_len..(ni + 1) * in_len], g, &mut col);
        let out_n = &mut out[ni * o * p..(ni + 1) * o * p];
        for oc in 0..o {
            let dst = &mut out_n[oc * p..(oc + 1) * p];
            if let Some(b) = bias {
                dst.iter_mut().for_each(|v| *v = b[oc]);
            }
            let wrow = &weight[oc * k..(oc + 1) * k];
            for (ki, &wv) in wrow.iter().enumerate() {
                if wv != T::zero() {
                    axpy(wv, &col[ki * p..(ki + 1) * p], dst);
                }
            }
        }
    }
}

/// Accumulates input, weight and bias gradients for whichever buffers are given.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Scalar>(
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    n: usize,
    o: usize,
    g: &ConvGeom,
    mut d_input: Option<&mut [T]>,
    mut d_weight: Option<&mut [T]>,
    mut d_bias: Option<&mut [T]>,
) {
    let k = g.col_rows();
    let p = g.col_cols();
    let in_len = g.c * g.h * g.w;
    let mut col = vec![T::zero(); k * p];
    let mut dcol = vec![T::zero(); k * p];
    for ni in 0..n {
        let go = &grad_out[ni * o * p..(ni + 1) * o * p];
        if let Some(db) = d_bias.as_deref_mut() {
            for oc in 0..o {
                db[oc] += go[oc * p..(oc + 1) * p].iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = d_weight.as_deref_mut() {
            im2col(&input[ni * in_len..(ni + 1) * in_len], g, &mut col);
            for oc in 0..o {
                let grow = &go[oc * p..(oc + 1) * p];
                for ki in 0..k {
                    dw[oc * k + ki] += dot(grow, &col[ki * p..(ki + 1) * p]);
                }
            }
        }
        if let Some(di) = d_input.as_deref_mut() {
            dcol.iter_mut().for_each(|v| *v = T::zero());
            for oc in 0..o {
                let grow = &go[oc * p..(oc + 1) * p];
                let wrow = &weight[oc * k..(oc + 1) * k];
                for (ki, &wv) in wrow.iter().enumerate() {
                    if wv != T::zero() {
                        axpy(wv, grow, &mut dcol[ki * p..(ki + 1) * p]);
                    }
                }
            }
            col2im(&dcol, g, &mut di[ni * in_len..(ni + 1) * in_len]);
        }
    }
}

/// Nearest-neighbour ×2 upsampling over `planes` planes of h×w.
pub(crate) fn upsample2<T: Scalar>(input: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h * 2, w * 2);
    let mut out = vec![T::zero(); planes * oh * ow];
    for pl in 0..planes {
        let src = &input[pl * h * w..(pl + 1) * h * w];
        let dst = &mut out[pl * oh * ow..(pl + 1) * oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                dst[y * ow + x] = src[(y / 2) * w + x / 2];
            }
        }
    }
    out
}

/// Gradient of [`upsample2`]: sums each 2×2 block. `h, w` are the small size.
pub(crate) fn upsample2_backward<T: Scalar>(grad: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h * 2, w * 2);
    let mut out = vec![T::zero(); planes * h * w];
    for pl in 0..planes {
        let src = &grad[pl * oh * ow..(pl + 1) * oh * ow];
        let dst = &mut out[pl * h * w..(pl + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                dst[(y / 2) * w + x / 2] += src[y * ow + x];
            }
        }
    }
    out
}

/// 2×2 average pooling; `h, w` are the input size and must be even.
pub(crate) fn avgpool2<T: Scalar>(input: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut out = vec![T::zero(); planes * oh * ow];
    for pl in 0..planes {
        let src = &input[pl * h * w..(pl + 1) * h * w];
        let dst = &mut out[pl * oh * ow..(pl + 1) * oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                let s = src[2 * y * w + 2 * x]
                    + src[2 * y * w + 2 * x + 1]
                    + src[(2 * y + 1) * w + 2 * x]
                    + src[(2 * y + 1) * w + 2 * x + 1];
                dst[y * ow + x] = s * quarter;
            }
        }
    }
    out
}

pub(crate) fn avgpool2_backward<T: Scalar>(grad: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut out = vec![T::zero(); planes * h * w];
    for pl in 0..planes {
        let src = &grad[pl * oh * ow..(pl + 1) * oh * ow];
        let dst = &mut out[pl * h * w..(pl + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y / 2) * ow + x / 2] * quarter;
            }
        }
    }
    out
}

/// The up to four (flat plane index, weight) taps of a bilinear read at (x, y).
/// Zero-weight taps are dropped so that integer coordinates read exactly one pixel.
#[inline]
pub(crate) fn bilinear_taps<T: Scalar>(
    x: T,
    y: T,
    h: usize,
    w: usize,
    oob: OutOfBounds,
) -> ([(usize, T); 4], usize) {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let one = T::one();
    let xi = x0.to_i64().unwrap_or(i64::MIN / 4);
    let yi = y0.to_i64().unwrap_or(i64::MIN / 4);
    let cand = [
        (xi, yi, (one - fx) * (one - fy)),
        (xi + 1, yi, fx * (one - fy)),
        (xi, yi + 1, (one - fx) * fy),
        (xi + 1, yi + 1, fx * fy),
    ];
    let mut taps = [(0usize, T::zero()); 4];
    let mut count = 0;
    for (cx, cy, wt) in cand {
        if wt == T::zero() {
            continue;
        }
        let (px, py) = match oob {
            OutOfBounds::Zero => {
                if cx < 0 || cy < 0 || cx >= w as i64 || cy >= h as i64 {
                    continue;
                }
                (cx as usize, cy as usize)
            }
            OutOfBounds::Wrap => (cx.rem_euclid(w as i64) as usize, cy.rem_euclid(h as i64) as usize),
        };
        taps[count] = (py * w + px, wt);
        count += 1;
    }
    (taps, count)
}

/// Bilinear sampling. `grid` is G×2×OH×OW with G = N or 1; channel 0 holds the
/// column coordinate, channel 1 the row coordinate, both in input pixel units.
#[allow(clippy::too_many_arguments)]
pub(crate) fn grid_sample_forward<T: Scalar>(
    input: &[T],
    grid: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    grid_batch: usize,
    oh: usize,
    ow: usize,
    oob: OutOfBounds,
) -> Vec<T> {
    let op = oh * ow;
    let mut out = vec![T::zero(); n * c * op];
    for ni in 0..n {
        let gi = if grid_batch == 1 { 0 } else { ni };
        let gx = &grid[gi * 2 * op..gi * 2 * op + op];
        let gy = &grid[gi * 2 * op + op..(gi + 1) * 2 * op];
        for p in 0..op {
            let (taps, count) = bilinear_taps(gx[p], gy[p], h, w, oob);
            for ci in 0..c {
                let plane = &input[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                let mut acc = T::zero();
                for &(idx, wt) in &taps[..count] {
                    acc += wt * plane[idx];
                }
                out[(ni * c + ci) * op + p] = acc;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn grid_sample_backward<T: Scalar>(
    grad_out: &[T],
    grid: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    grid_batch: usize,
    oh: usize,
    ow: usize,
    oob: OutOfBounds,
) -> Vec<T> {
    let op = oh * ow;
    let mut d_input = vec![T::zero(); n * c * h * w];
    for ni in 0..n {
        let gi = if grid_batch == 1 { 0 } else { ni };
        let gx = &grid[gi * 2 * op..gi * 2 * op + op];
        let gy = &grid[gi * 2 * op + op..(gi + 1) * 2 * op];
        for p in 0..op {
            let (taps, count) = bilinear_taps(gx[p], gy[p], h, w, oob);
            for ci in 0..c {
                let go = grad_out[(ni * c + ci) * op + p];
                let plane = &mut d_input[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                for &(idx, wt) in &taps[..count] {
                    plane[idx] += wt * go;
                }
            }
        }
    }
    d_input
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive_sum() {
        let x: Vec<f64> = (0..19).map(|i| i as f64 * 0.5).collect();
        let y: Vec<f64> = (0..19).map(|i| 1.0 - i as f64 * 0.1).collect();
        let naive: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!((dot(&x, &y) - naive).abs() < 1e-12);
    }

    #[test]
    fn integer_tap_reads_one_pixel() {
        let (taps, count) = bilinear_taps(2.0f32, 1.0, 4, 4, OutOfBounds::Zero);
        assert_eq!(count, 1);
        assert_eq!(taps[0], (6, 1.0));
    }

    #[test]
    fn wrap_taps_stay_in_range() {
        let (taps, count) = bilinear_taps(-0.5f64, 3.5, 4, 4, OutOfBounds::Wrap);
        assert_eq!(count, 4);
        let total: f64 = taps[..count].iter().map(|t| t.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(taps[..count].iter().all(|t| t.0 < 16));
    }
}
