use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{eid_loss, EidOptions, Physics, TrainConfig, Variant};
use crate::data::{evaluate_pairs, load_image_dir, MetricReport};
use crate::error::{Error, Result};
use crate::network::{lr_schedule, AdamConfig, Checkpoint, ImageMap, Network, ParamStore, UNet, UNetConfig};
use crate::physics::out_of_range_count;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};
use crate::transforms::{equivariance_residual, TransformSampler, TransformSpec};

/// Checkpoint key of the U-Net configuration.
pub const UNET_META: &str = "meta.unet";

/// Stream offsets so initialization, shuffling and transform sampling draw
/// from independent generators of the same seed.
const SHUFFLE_STREAM: u64 = 0x5348_5546;
const TRANSFORM_STREAM: u64 = 0x5452_4e53;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Means over the epoch's images.
    pub l_hc: f64,
    pub l_ec: f64,
    pub total: f64,
    /// Wall-clock time of the epoch.
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,l_hc,l_ec,total,seconds\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.lr, r.l_hc, r.l_ec, r.total, r.seconds
            ));
        }
        out
    }
}

/// Freshly initialized dehazer; training with `seed` starts from exactly
/// this network.
pub fn new_dehazer<T: Scalar>(config: UNetConfig, seed: u64) -> Result<Network<UNet, T>> {
    let mut params = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = UNet::new(config, &mut params, "", &mut rng)?;
    Ok(Network { arch, params })
}

/// File names and images of a directory of PNGs.
pub fn load_hazy_dir<T: Scalar>(dir: &Path) -> Result<(Vec<String>, Vec<Tensor<T>>)> {
    let items = load_image_dir(dir)?;
    Ok(items
        .into_iter()
        .map(|(p, t)| (p.file_name().expect("file").to_string_lossy().into_owned(), t))
        .unzip())
}

fn check_images<T: Scalar>(hazy: &[Tensor<T>], config: &TrainConfig) -> Result<()> {
    let first = hazy.first().ok_or_else(|| Error::Empty("no hazy images".into()))?;
    let [_, c, h, w] = first.shape();
    if c != config.unet.in_channels {
        return Err(Error::config(
            "unet.in_channels",
            config.unet.in_channels,
            format!("images have {c} channels"),
        ));
    }
    if config.unet.out_channels != c {
        return Err(Error::config(
            "unet.out_channels",
            config.unet.out_channels,
            format!("must equal the {c} image channels"),
        ));
    }
    config.unet.check_input(h, w)?;
    if let Some(bad) = hazy.iter().position(|t| t.shape() != first.shape()) {
        return Err(Error::InvalidShape {
            op: "train_eid",
            reason: format!("image {bad} has shape {:?}, expected {:?}", hazy[bad].shape(), first.shape()),
        });
    }
    Ok(())
}

fn weighted<T: Scalar>(l_hc: T, l_ec: T, lambda: f64, variant: Variant) -> T {
    let s = T::of(lambda);
    match variant {
        Variant::V1 => l_hc,
        Variant::V2 => l_ec * s,
        Variant::V3 => l_hc + l_ec * s,
    }
}

/// Trains a dehazer on in-memory hazy images (each 1×C×H×W).
pub fn train_eid_on<T: Scalar>(
    hazy: &[Tensor<T>],
    physics: &Physics<T>,
    config: &TrainConfig,
) -> Result<(Network<UNet, T>, TrainReport)> {
    config.validate()?;
    check_images(hazy, config)?;
    if let Some(n) = physics.len() {
        if n != hazy.len() {
            return Err(Error::config("physics", n, format!("{} images need as many parameter sets", hazy.len())));
        }
    }
    let [_, _, h, w] = hazy[0].shape();
    let spec: TransformSpec = config.transform_spec()?;
    let opts = EidOptions::from_config(config);
    let adam = AdamConfig::default();

    let mut net = new_dehazer::<T>(config.unet, config.seed)?;
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let mut sampler = TransformSampler::new(config.seed ^ TRANSFORM_STREAM);
    let physics_before = physics.fingerprint();

    let mut records = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..hazy.len()).collect();
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let lr = lr_schedule(epoch, config.base_lr);
        order.shuffle(&mut shuffle);
        let (mut sum_hc, mut sum_ec, mut sum_total) = (0.0, 0.0, 0.0);
        for idx in order.chunks(config.batch_size) {
            let items: Vec<_> = idx.iter().map(|&i| hazy[i].clone()).collect();
            let y = Tensor::stack(&items)?;
            let haze = physics.batch(idx)?;
            let count = if config.per_item_transform { idx.len() } else { 1 };
            let elements = (0..count)
                .map(|_| sampler.sample(&spec, h, w))
                .collect::<Result<Vec<_>>>()?;

            let mut g = Graph::new();
            let model = net.bind(&mut g, true);
            let yv = g.constant(y);
            let terms = eid_loss(&mut g, &model, &haze, yv, &elements, &opts)?;
            let (l_hc, l_ec, total) = (
                g.value(terms.l_hc).item(),
                g.value(terms.l_ec).item(),
                g.value(terms.total).item(),
            );
            let expected = weighted(l_hc, l_ec, config.lambda_ec, config.variant);
            if total != expected && total.is_finite() {
                return Err(Error::param(
                    "eid_loss",
                    format!("total {total} differs from weighted terms {expected}"),
                ));
            }
            if !total.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            let grads = g.backward(terms.total)?;
            let bound = model.params;
            net.params.accumulate(&bound, &grads);
            net.params.adam_step(lr, &adam)?;
            if physics.fingerprint() != physics_before {
                return Err(Error::FrozenModified);
            }

            let k = idx.len() as f64;
            sum_hc += l_hc.to_f64_lossy() * k;
            sum_ec += l_ec.to_f64_lossy() * k;
            sum_total += total.to_f64_lossy() * k;
        }
        let n = hazy.len() as f64;
        records.push(EpochRecord {
            epoch,
            lr,
            l_hc: sum_hc / n,
            l_ec: sum_ec / n,
            total: sum_total / n,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((
        net,
        TrainReport {
            records,
            checkpoint: None,
        },
    ))
}

/// Trains on the PNGs of `hazy_dir` and writes `model.ckpt`,
/// `train_log.csv` and `summary.json` into `out_dir`.
pub fn train_eid(hazy_dir: &Path, config: &TrainConfig, out_dir: &Path) -> Result<TrainReport> {
    config.validate()?;
    let source = config
        .physics
        .as_ref()
        .ok_or_else(|| Error::config("physics", "none", "a physics source is required"))?;
    let (names, hazy) = load_hazy_dir::<f32>(hazy_dir)?;
    check_images(&hazy, config)?;
    let [_, _, h, w] = hazy[0].shape();
    let physics = source.resolve::<f32>(&names, h, w)?;
    let (net, mut report) = train_eid_on(&hazy, &physics, config)?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ckpt_path = out_dir.join("model.ckpt");
    let mut ckpt = Checkpoint::new();
    net.params.export(&mut ckpt, "", true);
    ckpt.set_meta(UNET_META, &config.unet.to_meta());
    ckpt.write(&ckpt_path)?;
    report.checkpoint = Some(ckpt_path);

    let log = out_dir.join("train_log.csv");
    fs::write(&log, report.to_csv()).map_err(|e| Error::io(&log, e))?;
    let last = report.records.last().expect("epochs > 0");
    let summary = serde_json::json!({
        "config": config,
        "final": {
            "epoch": last.epoch,
            "lr": last.lr,
            "l_hc": last.l_hc,
            "l_ec": last.l_ec,
            "total": last.total,
        },
        "initial_total": report.records[0].total,
        "checkpoint": "model.ckpt",
    });
    let path = out_dir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary).expect("serializable") + "\n")
        .map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

/// Loads a dehazer checkpoint written by [`train_eid`].
pub fn load_dehazer<T: Scalar>(path: impl AsRef<Path>) -> Result<Network<UNet, T>> {
    let ckpt = Checkpoint::read(path.as_ref())?;
    let config = UNetConfig::from_checkpoint(&ckpt, UNET_META).ok_or_else(|| Error::Format {
        path: path.as_ref().to_path_buf(),
        reason: format!("missing {UNET_META}"),
    })?;
    let mut net = new_dehazer::<T>(config, 0)?;
    net.params.import(&ckpt, "")?;
    Ok(net)
}

/// Pure forward passes; outputs are clamped only when written as images.
pub fn dehaze<T: Scalar>(net: &Network<UNet, T>, images: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
    images
        .iter()
        .map(|x| {
            let [_, _, h, w] = x.shape();
            net.arch.config().check_input(h, w)?;
            net.eval(x)
        })
        .collect()
}

/// PSNR/SSIM of the dehazed `hazy` images against `clean`.
pub fn evaluate_dehazer<T: Scalar>(
    net: &Network<UNet, T>,
    hazy: &[Tensor<T>],
    clean: &[Tensor<T>],
    threads: usize,
) -> Result<MetricReport> {
    if hazy.len() != clean.len() {
        return Err(Error::config("ref", clean.len(), format!("{} predictions", hazy.len())));
    }
    let pred = dehaze(net, hazy)?;
    let pairs: Vec<_> = pred
        .into_iter()
        .zip(clean)
        .enumerate()
        .map(|(i, (p, c))| (format!("{i:04}"), p.map(|v| v.max(T::zero()).min(T::one())), c.clone()))
        .collect();
    evaluate_pairs(&pairs, threads)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub transform: String,
    /// Mean of the per-image residuals.
    pub residual: f64,
    pub residuals: Vec<f64>,
    /// Values of `T_g f(y)` outside [0, 1], which the haze operator takes
    /// unchanged.
    pub out_of_range: usize,
    pub seed: u64,
}

/// Equivariance residual of `f` on every image, each with its own sampled
/// transformation.
pub fn audit_equivariance<T: Scalar>(
    f: &dyn ImageMap<T>,
    physics: &Physics<T>,
    hazy: &[Tensor<T>],
    spec: &TransformSpec,
    seed: u64,
) -> Result<AuditReport> {
    if hazy.is_empty() {
        return Err(Error::Empty("no images to audit".into()));
    }
    let mut sampler = TransformSampler::new(seed);
    let mut residuals = Vec::with_capacity(hazy.len());
    let mut out_of_range = 0;
    for (i, y) in hazy.iter().enumerate() {
        let [_, _, h, w] = y.shape();
        let g = sampler.sample(spec, h, w)?;
        let haze = physics.batch(&[i])?;
        residuals.push(equivariance_residual(f, &haze, y, &g)?);
        out_of_range += out_of_range_count(&g.apply_tensor(&f.eval(y)?)?);
    }
    Ok(AuditReport {
        transform: spec.name(),
        residual: residuals.iter().sum::<f64>() / residuals.len() as f64,
        residuals,
        out_of_range,
        seed,
    })
}
