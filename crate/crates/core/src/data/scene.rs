use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::{encode_png, load_image};
use crate::error::{Error, Result};
use crate::physics::{AnalyticScattering, DepthMap, ScatteringParams};
use crate::scalar::Scalar;
use crate::tensor::{encode_tensor, read_tensor, Graph, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rectangle,
    Disk,
    Gradient,
}

/// Procedural scene parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub size: usize,
    pub channels: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub kinds: Vec<ShapeKind>,
    pub intensity: [f64; 2],
    /// Depth at the near and far ends of the planar ramp.
    pub depth_near: f64,
    pub depth_far: f64,
    /// Range of the direction in which depth grows, in degrees
    /// counter-clockwise from the +x axis; 90 puts the far end at the top.
    pub ramp_angle: [f64; 2],
    pub bumps: usize,
    /// Largest absolute height of a Gaussian bump.
    pub bump_amplitude: f64,
    /// Bump width as a fraction of the image size.
    pub bump_sigma: f64,
    /// Upper bound on any one-pixel depth difference.
    pub max_depth_gradient: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            size: 32,
            channels: 3,
            min_shapes: 2,
            max_shapes: 5,
            kinds: vec![ShapeKind::Rectangle, ShapeKind::Disk, ShapeKind::Gradient],
            intensity: [0.1, 0.9],
            depth_near: 0.5,
            depth_far: 1.5,
            ramp_angle: [90.0, 90.0],
            bumps: 2,
            bump_amplitude: 0.2,
            bump_sigma: 0.2,
            max_depth_gradient: 0.1,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 2 {
            return Err(Error::config("size", self.size, "must be at least 2"));
        }
        if !(self.channels == 1 || self.channels == 3) {
            return Err(Error::config("channels", self.channels, "must be 1 or 3"));
        }
        if self.min_shapes > self.max_shapes {
            return Err(Error::config("min_shapes", self.min_shapes, "exceeds max_shapes"));
        }
        if self.kinds.is_empty() && self.max_shapes > 0 {
            return Err(Error::config("kinds", "[]", "at least one shape kind is required"));
        }
        let [lo, hi] = self.intensity;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::config("intensity", format!("{:?}", self.intensity), "need 0 <= lo <= hi <= 1"));
        }
        if !(self.depth_near >= 0.0 && self.depth_far >= self.depth_near && self.depth_far.is_finite()) {
            return Err(Error::config("depth_far", self.depth_far, "need 0 <= depth_near <= depth_far"));
        }
        let [r0, r1] = self.ramp_angle;
        if !(r0.is_finite() && r1.is_finite() && r0 <= r1) {
            return Err(Error::config("ramp_angle", format!("{:?}", self.ramp_angle), "need lo <= hi"));
        }
        if !(self.bump_sigma > 0.0) || !(self.bump_amplitude >= 0.0) {
            return Err(Error::config("bump_sigma", self.bump_sigma, "bumps need sigma > 0 and amplitude >= 0"));
        }
        let bound = depth_gradient_bound(self);
        if bound > self.max_depth_gradient {
            return Err(Error::config(
                "max_depth_gradient",
                self.max_depth_gradient,
                format!("depth model can reach a gradient of {bound:.4}"),
            ));
        }
        Ok(())
    }
}

/// Analytic bound on the depth gradient of [`synth_depth`] for `spec`.
pub fn depth_gradient_bound(spec: &SceneSpec) -> f64 {
    let ramp = (spec.depth_far - spec.depth_near) / (spec.size as f64 - 1.0);
    let sigma = spec.bump_sigma * spec.size as f64;
    ramp + spec.bumps as f64 * spec.bump_amplitude / (sigma * std::f64::consts::E.sqrt())
}

/// Largest one-pixel horizontal or vertical difference.
pub fn max_depth_gradient<T: Scalar>(d: &Tensor<T>) -> f64 {
    let [n, c, h, w] = d.shape();
    let mut m: f64 = 0.0;
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = d.at(ni, ci, y, x).to_f64_lossy();
                    if x + 1 < w {
                        m = m.max((d.at(ni, ci, y, x + 1).to_f64_lossy() - v).abs());
                    }
                    if y + 1 < h {
                        m = m.max((d.at(ni, ci, y + 1, x).to_f64_lossy() - v).abs());
                    }
                }
            }
        }
    }
    m
}

fn color<R: Rng>(rng: &mut R, spec: &SceneSpec) -> Vec<f64> {
    let [lo, hi] = spec.intensity;
    (0..spec.channels).map(|_| lo + (hi - lo) * rng.gen::<f64>()).collect()
}

/// Clean scene in `[intensity.0, intensity.1]`: a linear-gradient background
/// with rectangles, disks and gradient-filled rectangles on top.
pub fn synth_scene<R: Rng>(spec: &SceneSpec, rng: &mut R) -> Tensor<f64> {
    let n = spec.size;
    let c = spec.channels;
    let mut img = vec![0.0; c * n * n];
    let (a, b) = (color(rng, spec), color(rng, spec));
    let theta = rng.gen::<f64>() * std::f64::consts::TAU;
    let (ct, st) = (theta.cos(), theta.sin());
    let half = (n as f64 - 1.0) / 2.0;
    let reach = half * (ct.abs() + st.abs()) + 1e-12;
    for y in 0..n {
        for x in 0..n {
            let s = ((x as f64 - half) * ct + (y as f64 - half) * st) / reach * 0.5 + 0.5;
            for ch in 0..c {
                img[(ch * n + y) * n + x] = a[ch] + (b[ch] - a[ch]) * s;
            }
        }
    }
    let count = rng.gen_range(spec.min_shapes..=spec.max_shapes);
    for _ in 0..count {
        if spec.kinds.is_empty() {
            break;
        }
        let kind = spec.kinds[rng.gen_range(0..spec.kinds.len())];
        let col = color(rng, spec);
        let x0 = rng.gen_range(0..n);
        let y0 = rng.gen_range(0..n);
        let ext = (n / 6).max(1)..=(n / 2).max(1);
        let (wx, wy) = (rng.gen_range(ext.clone()), rng.gen_range(ext));
        match kind {
            ShapeKind::Rectangle => {
                for y in y0..(y0 + wy).min(n) {
                    for x in x0..(x0 + wx).min(n) {
                        for ch in 0..c {
                            img[(ch * n + y) * n + x] = col[ch];
                        }
                    }
                }
            }
            ShapeKind::Disk => {
                let r = wx as f64 / 2.0;
                for y in 0..n {
                    for x in 0..n {
                        let (dx, dy) = (x as f64 - x0 as f64, y as f64 - y0 as f64);
                        if dx * dx + dy * dy <= r * r {
                            for ch in 0..c {
                                img[(ch * n + y) * n + x] = col[ch];
                            }
                        }
                    }
                }
            }
            ShapeKind::Gradient => {
                let other = color(rng, spec);
                for y in y0..(y0 + wy).min(n) {
                    for x in x0..(x0 + wx).min(n) {
                        let s = (x - x0) as f64 / wx as f64;
                        for ch in 0..c {
                            img[(ch * n + y) * n + x] = col[ch] + (other[ch] - col[ch]) * s;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec([1, c, n, n], img).expect("sized")
}

/// Planar ramp from `depth_near` to `depth_far` in a direction drawn from
/// `ramp_angle`, plus Gaussian bumps of random sign; 1×1×H×W, non-negative.
pub fn synth_depth<R: Rng>(spec: &SceneSpec, rng: &mut R) -> Tensor<f64> {
    let n = spec.size;
    let theta = uniform(rng, spec.ramp_angle).to_radians();
    // Rows grow downwards, so the image-space direction is (cos, −sin).
    let (ct, st) = (theta.cos(), -theta.sin());
    let half = (n as f64 - 1.0) / 2.0;
    let reach = half * (ct.abs() + st.abs()) + 1e-12;
    let sigma = spec.bump_sigma * n as f64;
    let bumps: Vec<(f64, f64, f64)> = (0..spec.bumps)
        .map(|_| {
            let amp = spec.bump_amplitude * (2.0 * rng.gen::<f64>() - 1.0);
            (rng.gen::<f64>() * n as f64, rng.gen::<f64>() * n as f64, amp)
        })
        .collect();
    Tensor::from_fn([1, 1, n, n], |_, _, y, x| {
        let (u, v) = (x as f64 - half, y as f64 - half);
        let s = (u * ct + v * st) / reach * 0.5 + 0.5;
        let mut d = spec.depth_near + (spec.depth_far - spec.depth_near) * s;
        for &(bx, by, amp) in &bumps {
            let r2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
            d += amp * (-r2 / (2.0 * sigma * sigma)).exp();
        }
        d.max(0.0)
    })
}

/// Smooth test image: a few low-frequency cosines, values in [0.1, 0.9].
pub fn smooth_image(size: usize, channels: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<[f64; 4]> = (0..channels * 3)
        .map(|_| {
            [
                rng.gen_range(0.5..2.0),
                rng.gen_range(0.5..2.0),
                rng.gen::<f64>() * std::f64::consts::TAU,
                rng.gen_range(0.5..1.0),
            ]
        })
        .collect();
    let n = size as f64;
    Tensor::from_fn([1, channels, size, size], |_, c, y, x| {
        let mut v = 0.0;
        let mut norm = 0.0;
        for &[fx, fy, ph, amp] in &waves[c * 3..c * 3 + 3] {
            v += amp * (std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) / n + ph).cos();
            norm += amp;
        }
        0.5 + 0.4 * v / norm
    })
}

/// Rounds to the nearest 8-bit level.
pub fn quantize<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::of((v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() / 255.0))
}

/// Ranges from which per-image haze parameters are drawn uniformly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HazeRange {
    pub beta: [f64; 2],
    pub alpha: [f64; 2],
}

impl Default for HazeRange {
    fn default() -> Self {
        HazeRange {
            beta: [0.6, 0.8],
            alpha: [0.85, 1.0],
        }
    }
}

impl HazeRange {
    pub fn validate(&self) -> Result<()> {
        let [b0, b1] = self.beta;
        if !(b0 >= 0.0 && b1 >= b0 && b1.is_finite()) {
            return Err(Error::config("beta", format!("{:?}", self.beta), "need 0 <= lo <= hi"));
        }
        let [a0, a1] = self.alpha;
        if !(a0 >= 0.0 && a1 >= a0 && a1 <= 1.0) {
            return Err(Error::config("alpha", format!("{:?}", self.alpha), "need 0 <= lo <= hi <= 1"));
        }
        Ok(())
    }
}

fn uniform<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub clean: String,
    pub hazy: String,
    pub depth: String,
    pub beta: f64,
    pub alpha: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSpec {
    pub scene: SceneSpec,
    pub haze: HazeRange,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub images: Vec<ManifestEntry>,
    pub spec: ManifestSpec,
}

pub const MANIFEST: &str = "manifest.json";

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Entry whose hazy or clean image has the given file name.
    pub fn find(&self, file_name: &str) -> Option<&ManifestEntry> {
        let name_of = |p: &str| Path::new(p).file_name().map(|f| f.to_string_lossy().into_owned());
        self.images.iter().find(|e| {
            name_of(&e.hazy).as_deref() == Some(file_name) || name_of(&e.clean).as_deref() == Some(file_name)
        })
    }

    /// Scattering parameters of `entry`, with depth read relative to `root`.
    pub fn scattering<T: Scalar>(&self, root: &Path, entry: &ManifestEntry) -> Result<ScatteringParams<T>> {
        let depth: Tensor<T> = read_tensor(root.join(&entry.depth))?;
        ScatteringParams::scalar(entry.beta, entry.alpha, DepthMap::new(depth)?)
    }
}

fn image_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Rendered {
    entry: ManifestEntry,
    clean: Vec<u8>,
    hazy: Vec<u8>,
    depth: Vec<u8>,
}

fn render(spec: &SceneSpec, haze: &HazeRange, index: usize) -> Result<Rendered> {
    let seed = image_seed(spec.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean = quantize(&synth_scene(spec, &mut rng));
    // Stored depth is f32; haze is computed from exactly what is stored.
    let depth: Tensor<f64> = synth_depth(spec, &mut rng).cast::<f32>().cast();
    let beta = uniform(&mut rng, haze.beta);
    let alpha = uniform(&mut rng, haze.alpha);
    let params = ScatteringParams::scalar(beta, alpha, DepthMap::new(depth.clone())?)?;
    let op = AnalyticScattering::new(&params);
    let mut g = Graph::new();
    let x = g.constant(clean.clone());
    let y = op.apply(&mut g, x)?;
    let hazy = g.value(y).clone();
    let name = format!("{index:04}");
    Ok(Rendered {
        entry: ManifestEntry {
            clean: format!("clean/{name}.png"),
            hazy: format!("hazy/{name}.png"),
            depth: format!("depth/{name}.tnsr"),
            beta,
            alpha,
            seed,
        },
        clean: encode_png(&clean, false)?,
        hazy: encode_png(&hazy, false)?,
        depth: encode_tensor(&depth.cast::<f32>()),
    })
}

/// Writes `count` scenes as `clean/NNNN.png`, `hazy/NNNN.png`,
/// `depth/NNNN.tnsr` and `manifest.json` under `out`.
pub fn synth_dataset(spec: &SceneSpec, count: usize, haze: &HazeRange, out: &Path) -> Result<Manifest> {
    spec.validate()?;
    haze.validate()?;
    if count == 0 {
        return Err(Error::config("count", 0, "must be positive"));
    }
    for sub in ["clean", "hazy", "depth"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let r = render(spec, haze, i)?;
        for (rel, bytes) in [(&r.entry.clean, &r.clean), (&r.entry.hazy, &r.hazy), (&r.entry.depth, &r.depth)] {
            let p = out.join(rel);
            fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        }
        images.push(r.entry);
    }
    let manifest = Manifest {
        images,
        spec: ManifestSpec {
            scene: spec.clone(),
            haze: haze.clone(),
            count,
        },
    };
    let p = out.join(MANIFEST);
    fs::write(&p, serde_json::to_string_pretty(&manifest).expect("serializable") + "\n")
        .map_err(|e| Error::io(&p, e))?;
    Ok(manifest)
}

/// Regenerates every file listed in `dir/manifest.json` and returns the
/// paths whose bytes differ.
pub fn verify_dataset(dir: &Path) -> Result<Vec<PathBuf>> {
    let manifest = Manifest::read(dir.join(MANIFEST))?;
    let mut bad = Vec::new();
    for i in 0..manifest.spec.count {
        let r = render(&manifest.spec.scene, &manifest.spec.haze, i)?;
        if manifest.images.get(i) != Some(&r.entry) {
            bad.push(dir.join(MANIFEST));
        }
        for (rel, bytes) in [(&r.entry.clean, &r.clean), (&r.entry.hazy, &r.hazy), (&r.entry.depth, &r.depth)] {
            let p = dir.join(rel);
            if fs::read(&p).ok().as_deref() != Some(bytes.as_slice()) {
                bad.push(p);
            }
        }
    }
    Ok(bad)
}

/// Loads clean and hazy images and the scattering parameters of every
/// manifest entry.
#[allow(clippy::type_complexity)]
pub fn load_dataset<T: Scalar>(dir: &Path) -> Result<(Manifest, Vec<(Tensor<T>, Tensor<T>, ScatteringParams<T>)>)> {
    let manifest = Manifest::read(dir.join(MANIFEST))?;
    let items = manifest
        .images
        .iter()
        .map(|e| {
            Ok((
                load_image(dir.join(&e.clean))?,
                load_image(dir.join(&e.hazy))?,
                manifest.scattering(dir, e)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, items))
}
