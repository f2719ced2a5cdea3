use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// PSNR in dB; identical images give infinity, serialized as `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Psnr(pub f64);

impl Psnr {
    pub fn is_inf(&self) -> bool {
        self.0.is_infinite()
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_inf() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_inf() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Psnr(v)),
            Repr::Str(s) if s == "inf" => Ok(Psnr(f64::INFINITY)),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("invalid psnr {s:?}"))),
        }
    }
}

/// `10·log10(max_val² / mse)` over all elements.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, max_val: f64) -> Result<Psnr> {
    a.check_same(b, "psnr")?;
    if a.numel() == 0 {
        return Err(Error::Empty("psnr of empty tensors".into()));
    }
    let se: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum();
    let mse = se / a.numel() as f64;
    if mse == 0.0 {
        return Ok(Psnr(f64::INFINITY));
    }
    Ok(Psnr(10.0 * (max_val * max_val / mse).log10()))
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Single-scale SSIM: 11×11 Gaussian window (σ = 1.5), K1 = 0.01, K2 = 0.03,
/// dynamic range 1, averaged over valid window positions, channels and batch.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.check_same(b, "ssim")?;
    let [n, c, h, w] = a.shape();
    if h < WINDOW || w < WINDOW {
        return Err(Error::InvalidShape {
            op: "ssim",
            reason: format!("image {h}x{w} is smaller than the {WINDOW}x{WINDOW} window"),
        });
    }
    if n * c == 0 {
        return Err(Error::Empty("ssim of empty tensors".into()));
    }
    let g = gaussian_window();
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let (oh, ow) = (h - WINDOW + 1, w - WINDOW + 1);
    let mut total = 0.0;
    for ni in 0..n {
        for ci in 0..c {
            let pa: Vec<f64> = (0..h * w).map(|i| a.at(ni, ci, i / w, i % w).to_f64_lossy()).collect();
            let pb: Vec<f64> = (0..h * w).map(|i| b.at(ni, ci, i / w, i % w).to_f64_lossy()).collect();
            let mut plane = 0.0;
            for y in 0..oh {
                for x in 0..ow {
                    let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for (ky, gy) in g.iter().enumerate() {
                        let row = (y + ky) * w + x;
                        for (kx, gx) in g.iter().enumerate() {
                            let wt = gy * gx;
                            let va = pa[row + kx];
                            let vb = pb[row + kx];
                            ma += wt * va;
                            mb += wt * vb;
                            saa += wt * va * va;
                            sbb += wt * vb * vb;
                            sab += wt * va * vb;
                        }
                    }
                    let va = saa - ma * ma;
                    let vb = sbb - mb * mb;
                    let cov = sab - ma * mb;
                    plane += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                }
            }
            total += plane / (oh * ow) as f64;
        }
    }
    Ok(total / (n * c) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetric {
    pub name: String,
    pub psnr: Psnr,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub images: Vec<ImageMetric>,
    /// Mean over images; infinite if any image is.
    pub psnr: Psnr,
    pub ssim: f64,
    pub count: usize,
}

impl MetricReport {
    pub fn from_images(images: Vec<ImageMetric>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Empty("no image pairs to evaluate".into()));
        }
        let count = images.len();
        let psnr = Psnr(images.iter().map(|m| m.psnr.0).sum::<f64>() / count as f64);
        let ssim = images.iter().map(|m| m.ssim).sum::<f64>() / count as f64;
        Ok(MetricReport {
            images,
            psnr,
            ssim,
            count,
        })
    }
}

/// PSNR and SSIM for named (prediction, reference) pairs, computed on up to
/// `threads` worker threads; order of `pairs` is preserved.
pub fn evaluate_pairs<T: Scalar>(pairs: &[(String, Tensor<T>, Tensor<T>)], threads: usize) -> Result<MetricReport> {
    let threads = threads.max(1).min(pairs.len().max(1));
    let chunk = pairs.len().div_ceil(threads).max(1);
    let results: Vec<Result<Vec<ImageMetric>>> = std::thread::scope(|s| {
        let handles: Vec<_> = pairs
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|(name, p, r)| {
                            Ok(ImageMetric {
                                name: name.clone(),
                                psnr: psnr(p, r, 1.0)?,
                                ssim: ssim(p, r)?,
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("metric worker panicked")).collect()
    });
    let mut images = Vec::with_capacity(pairs.len());
    for r in results {
        images.extend(r?);
    }
    MetricReport::from_images(images)
}
