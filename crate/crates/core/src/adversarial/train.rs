use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nets::{DiscriminatorConfig, GeneratorConfig};
use super::{adversarial_terms, cycle_terms, GanBundle};
use crate::data::load_image_dir;
use crate::error::{Error, Result};
use crate::network::{AdamConfig, ImageMap};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Weight of the cycle term; 1.0 gives the plain `ℓ1 + ℓ2` sum.
    pub cycle_weight: f64,
    /// Use `E[log(1 − D(fake))]` for the generator instead of the
    /// non-saturating form.
    pub saturating: bool,
    pub clear_discriminator: bool,
    /// Clear images kept out of training and used to measure discriminator
    /// accuracy on fakes.
    pub holdout: usize,
    /// Iterations between accuracy measurements.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            iterations: 200,
            batch_size: 4,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            cycle_weight: 10.0,
            saturating: false,
            clear_discriminator: false,
            holdout: 4,
            eval_every: 20,
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations", "0", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "0", "must be positive"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config("lr", self.lr, "must be finite and non-negative"));
        }
        if !(self.cycle_weight.is_finite() && self.cycle_weight >= 0.0) {
            return Err(Error::config("cycle_weight", self.cycle_weight, "must be finite and non-negative"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "0", "must be positive"));
        }
        if self.generator.channels != self.discriminator.channels {
            return Err(Error::config(
                "discriminator.channels",
                self.discriminator.channels,
                "must equal generator.channels",
            ));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanLogRow {
    pub iter: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub cycle_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanReport {
    pub log: Vec<GanLogRow>,
    /// `(iteration, fraction of held-out fakes judged fake)`; iteration 0 is
    /// measured before any update.
    pub fake_accuracy: Vec<(usize, f64)>,
    /// Cycle loss over a fixed evaluation batch before and after training.
    pub initial_cycle: f64,
    pub final_cycle: f64,
    pub checkpoint: Option<PathBuf>,
}

fn batch<T: Scalar>(images: &[Tensor<T>], idx: &[usize]) -> Result<Tensor<T>> {
    let items: Vec<_> = idx.iter().map(|&i| images[i].clone()).collect();
    Tensor::stack(&items)
}

fn draw<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(rng);
    all.truncate(k.min(n));
    all
}

fn fake_accuracy<T: Scalar>(bundle: &GanBundle<T>, clear: &Tensor<T>) -> Result<f64> {
    let fake = bundle.gh.eval(clear)?;
    let d = bundle.dh.eval(&fake)?;
    let n = d.shape()[0];
    let judged_fake = (0..n)
        .filter(|&i| d.batch_item(i).mean().to_f64_lossy() < 0.5)
        .count();
    Ok(judged_fake as f64 / n as f64)
}

/// Alternating discriminator/generator training on unpaired in-memory images
/// (each 1×C×H×W).
pub fn train_gan<T: Scalar>(
    clear: &[Tensor<T>],
    hazy: &[Tensor<T>],
    config: &GanConfig,
) -> Result<(GanBundle<T>, GanReport)> {
    config.validate()?;
    if clear.is_empty() {
        return Err(Error::Empty("clear image set".into()));
    }
    if hazy.is_empty() {
        return Err(Error::Empty("hazy image set".into()));
    }
    let holdout = config.holdout.min(clear.len().saturating_sub(1));
    let (train_clear, held) = clear.split_at(clear.len() - holdout);
    let held = if held.is_empty() { batch(clear, &[0])? } else { Tensor::stack(held)? };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut bundle = GanBundle::<T>::new(config, &mut rng)?;
    let adam = config.adam();

    let eval_k = config.batch_size.max(4);
    let eval_c = batch(train_clear, &(0..eval_k.min(train_clear.len())).collect::<Vec<_>>())?;
    let eval_h = batch(hazy, &(0..eval_k.min(hazy.len())).collect::<Vec<_>>())?;
    let initial_cycle = bundle.cycle_loss(&eval_c, &eval_h)?;

    let mut log = Vec::with_capacity(config.iterations);
    let mut accuracy = vec![(0, fake_accuracy(&bundle, &held)?)];
    for iter in 0..config.iterations {
        let xc = batch(train_clear, &draw(&mut rng, train_clear.len(), config.batch_size))?;
        let xh = batch(hazy, &draw(&mut rng, hazy.len(), config.batch_size))?;

        // Discriminator step: generators enter as constants.
        let d_loss = {
            let mut g = Graph::new();
            let gh = bundle.gh.bind(&mut g, false);
            let dh = bundle.dh.bind(&mut g, true);
            let c = g.constant(xc.clone());
            let h = g.constant(xh.clone());
            let fake = gh.forward(&mut g, c)?;
            let fake = g.detach(fake);
            let terms = adversarial_terms(&mut g, &dh, h, fake, config.saturating)?;
            let mut loss = terms.d_loss;
            let dc = match &bundle.dc {
                Some(net) => {
                    let gc = bundle.gc.bind(&mut g, false);
                    let dc = net.bind(&mut g, true);
                    let fake_c = gc.forward(&mut g, h)?;
                    let fake_c = g.detach(fake_c);
                    let t = adversarial_terms(&mut g, &dc, c, fake_c, config.saturating)?;
                    loss = g.add(loss, t.d_loss)?;
                    Some(dc.params)
                }
                None => None,
            };
            let value = g.value(terms.d_loss).item().to_f64_lossy();
            let grads = g.backward(loss)?;
            let dh = dh.params;
            bundle.dh.params.accumulate(&dh, &grads);
            bundle.dh.params.adam_step(config.lr, &adam)?;
            if let (Some(net), Some(dc)) = (&mut bundle.dc, dc) {
                net.params.accumulate(&dc, &grads);
                net.params.adam_step(config.lr, &adam)?;
            }
            value
        };

        // Generator step: discriminators enter as constants.
        let (g_loss, cyc) = {
            let mut g = Graph::new();
            let gh = bundle.gh.bind(&mut g, true);
            let gc = bundle.gc.bind(&mut g, true);
            let dh = bundle.dh.bind(&mut g, false);
            let c = g.constant(xc);
            let h = g.constant(xh);
            let fake = gh.forward(&mut g, c)?;
            let terms = adversarial_terms(&mut g, &dh, h, fake, config.saturating)?;
            let mut adv = terms.g_loss;
            if let Some(net) = &bundle.dc {
                let dc = net.bind(&mut g, false);
                let fake_c = gc.forward(&mut g, h)?;
                let t = adversarial_terms(&mut g, &dc, c, fake_c, config.saturating)?;
                adv = g.add(adv, t.g_loss)?;
            }
            let cyc = cycle_terms(&mut g, &gh, &gc, c, h)?;
            let weighted = g.scale(cyc, config.cycle_weight);
            let total = g.add(adv, weighted)?;
            let values = (
                g.value(terms.g_loss).item().to_f64_lossy(),
                g.value(cyc).item().to_f64_lossy(),
            );
            let grads = g.backward(total)?;
            let (gh, gc) = (gh.params, gc.params);
            bundle.gh.params.accumulate(&gh, &grads);
            bundle.gc.params.accumulate(&gc, &grads);
            bundle.gh.params.adam_step(config.lr, &adam)?;
            bundle.gc.params.adam_step(config.lr, &adam)?;
            values
        };

        log.push(GanLogRow {
            iter,
            d_loss,
            g_loss,
            cycle_loss: cyc,
        });
        if (iter + 1) % config.eval_every == 0 || iter + 1 == config.iterations {
            accuracy.push((iter + 1, fake_accuracy(&bundle, &held)?));
        }
    }
    let final_cycle = bundle.cycle_loss(&eval_c, &eval_h)?;
    Ok((
        bundle,
        GanReport {
            log,
            fake_accuracy: accuracy,
            initial_cycle,
            final_cycle,
            checkpoint: None,
        },
    ))
}

pub fn write_gan_log(path: &Path, rows: &[GanLogRow]) -> Result<()> {
    let mut out = String::from("iter,d_loss,g_loss,cycle_loss\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.iter, r.d_loss, r.g_loss, r.cycle_loss));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Trains the pseudo-physics generator from two PNG directories and writes
/// `physics.ckpt`, `train_log.csv` and `summary.json` into `out_dir`.
pub fn train_pseudo_physics(
    clear_dir: &Path,
    hazy_dir: &Path,
    config: &GanConfig,
    out_dir: &Path,
) -> Result<GanReport> {
    config.validate()?;
    let clear: Vec<Tensor<f32>> = load_image_dir(clear_dir)?.into_iter().map(|(_, t)| t).collect();
    let hazy: Vec<Tensor<f32>> = load_image_dir(hazy_dir)?.into_iter().map(|(_, t)| t).collect();
    if let (Some(c), Some(h)) = (clear.first(), hazy.first()) {
        if c.shape() != h.shape() {
            return Err(Error::InvalidShape {
                op: "train_pseudo_physics",
                reason: format!(
                    "clear images are {:?} but hazy images are {:?}",
                    c.shape(),
                    h.shape()
                ),
            });
        }
        if c.shape()[1] != config.generator.channels {
            return Err(Error::config(
                "generator.channels",
                config.generator.channels,
                format!("images have {} channels", c.shape()[1]),
            ));
        }
    }
    let (bundle, mut report) = train_gan(&clear, &hazy, config)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ckpt_path = out_dir.join("physics.ckpt");
    bundle.frozen_checkpoint(&config.generator).write(&ckpt_path)?;
    write_gan_log(&out_dir.join("train_log.csv"), &report.log)?;
    report.checkpoint = Some(ckpt_path);
    let summary = serde_json::json!({
        "config": config,
        "initial_cycle": report.initial_cycle,
        "final_cycle": report.final_cycle,
        "fake_accuracy": report.fake_accuracy,
        "checkpoint": "physics.ckpt",
    });
    let path = out_dir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary).expect("serializable") + "\n")
        .map_err(|e| Error::io(&path, e))?;
    Ok(report)
}
