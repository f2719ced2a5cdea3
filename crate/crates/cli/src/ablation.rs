use std::path::Path;

use eid_core::data::{evaluate_pairs, load_dataset, Psnr};
use eid_core::tensor::Tensor;
use eid_core::trainer::{audit_equivariance, new_dehazer, train_eid_on, Physics, TrainConfig, Variant};
use eid_core::transforms::TransformSpec;
use eid_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::AblationConfig;

/// Hazy/clean pairs with their scattering parameters.
pub struct Benchmark {
    pub hazy: Vec<Tensor<f32>>,
    pub clean: Vec<Tensor<f32>>,
    pub physics: Physics<f32>,
}

impl Benchmark {
    /// Loads a dataset written by `synth`.
    pub fn load(dir: &Path) -> Result<Self> {
        let (_, items) = load_dataset::<f32>(dir)?;
        let mut hazy = Vec::with_capacity(items.len());
        let mut clean = Vec::with_capacity(items.len());
        let mut params = Vec::with_capacity(items.len());
        for (c, h, p) in items {
            clean.push(c);
            hazy.push(h);
            params.push(p);
        }
        Ok(Benchmark {
            hazy,
            clean,
            physics: Physics::PerImage(params),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub transform: String,
    pub seed: u64,
    pub psnr: Option<Psnr>,
    pub ssim: Option<f64>,
    pub residual: Option<f64>,
    /// Residual of the same network before training.
    pub untrained_residual: Option<f64>,
    pub error: Option<String>,
}

/// FNV-1a, stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn cell_seed(seed: u64, variant: Variant, transform: &str) -> u64 {
    seed ^ fnv1a(format!("{}/{}", variant.name(), transform).as_bytes())
}

fn run_cell(base: &TrainConfig, bench: &Benchmark, variant: Variant, transform: &str, threads: usize) -> AblationRow {
    let seed = cell_seed(base.seed, variant, transform);
    let mut row = AblationRow {
        variant,
        transform: transform.to_string(),
        seed,
        psnr: None,
        ssim: None,
        residual: None,
        untrained_residual: None,
        error: None,
    };
    let result = (|| -> Result<()> {
        let config = TrainConfig {
            variant,
            transform: transform.to_string(),
            seed,
            ..base.clone()
        };
        config.validate()?;
        let spec: TransformSpec = config.transform_spec()?;
        let untrained = new_dehazer::<f32>(config.unet, seed)?;
        row.untrained_residual = Some(audit_equivariance(&untrained, &bench.physics, &bench.hazy, &spec, seed)?.residual);
        let (net, _) = train_eid_on(&bench.hazy, &bench.physics, &config)?;
        let pred = eid_core::trainer::dehaze(&net, &bench.hazy)?;
        let pairs: Vec<_> = pred
            .into_iter()
            .zip(&bench.clean)
            .enumerate()
            .map(|(i, (p, c))| (i.to_string(), p.map(|v| v.clamp(0.0, 1.0)), c.clone()))
            .collect();
        let metrics = evaluate_pairs(&pairs, threads)?;
        row.psnr = Some(metrics.psnr);
        row.ssim = Some(metrics.ssim);
        row.residual = Some(audit_equivariance(&net, &bench.physics, &bench.hazy, &spec, seed)?.residual);
        Ok(())
    })();
    if let Err(e) = result {
        row.error = Some(e.to_string());
    }
    row
}

/// Trains and evaluates every (variant, transform) cell; a failing cell is
/// reported in its row and the rest continue.
pub fn ablation_matrix(base: &TrainConfig, cells: &AblationConfig, bench: &Benchmark, threads: usize) -> Vec<AblationRow> {
    let jobs: Vec<(Variant, &str)> = cells
        .variants
        .iter()
        .flat_map(|&v| cells.transforms.iter().map(move |t| (v, t.as_str())))
        .collect();
    if !cells.parallel || threads <= 1 {
        return jobs.iter().map(|&(v, t)| run_cell(base, bench, v, t, threads)).collect();
    }
    let mut rows: Vec<Option<AblationRow>> = vec![None; jobs.len()];
    for chunk in jobs.iter().enumerate().collect::<Vec<_>>().chunks(threads) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&(i, &(v, t))| (i, s.spawn(move || run_cell(base, bench, v, t, 1))))
                .collect();
            for (i, h) in handles {
                rows[i] = Some(h.join().expect("ablation cell panicked"));
            }
        });
    }
    rows.into_iter().map(|r| r.expect("every cell ran")).collect()
}

fn field<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

pub fn to_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,transform,seed,psnr,ssim,residual,untrained_residual,error\n");
    for r in rows {
        let err = r.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},\"{}\"\n",
            r.variant.name(),
            r.transform,
            r.seed,
            field(&r.psnr),
            field(&r.ssim),
            field(&r.residual),
            field(&r.untrained_residual),
            err
        ));
    }
    out
}

pub fn check_variant_list(s: &str) -> Result<Vec<Variant>> {
    let v = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse())
        .collect::<Result<Vec<Variant>>>()?;
    if v.is_empty() {
        return Err(Error::InvalidConfig {
            key: "variants".into(),
            value: s.into(),
            reason: "at least one variant is required".into(),
        });
    }
    Ok(v)
}
