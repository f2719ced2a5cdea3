//! Learned haze physics: a clear→hazy generator trained adversarially on
//! unpaired clear and hazy images with a cycle-consistency term, then frozen
//! and used as the haze operator.

mod nets;
mod train;

pub use nets::{DiscriminatorConfig, GeneratorConfig, PatchDiscriminator, ResidualGenerator};
pub use train::{train_gan, train_pseudo_physics, GanConfig, GanLogRow, GanReport};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::{Checkpoint, ImageMap, Network, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

pub const GH_PREFIX: &str = "gh.";
pub const GC_PREFIX: &str = "gc.";
const GEN_META: &str = "meta.generator";
const FROZEN_META: &str = "meta.frozen";

/// The two generators and discriminators of the adversarial objective.
#[derive(Clone, Debug)]
pub struct GanBundle<T> {
    /// clear → hazy
    pub gh: Network<ResidualGenerator, T>,
    /// hazy → clear
    pub gc: Network<ResidualGenerator, T>,
    /// judges hazy images
    pub dh: Network<PatchDiscriminator, T>,
    /// judges clear images; disabled unless configured
    pub dc: Option<Network<PatchDiscriminator, T>>,
}

impl<T: Scalar> GanBundle<T> {
    pub fn new(config: &GanConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let gen = |rng: &mut ChaCha8Rng| -> Result<_> {
            let mut params = ParamStore::new();
            let arch = ResidualGenerator::new(config.generator, &mut params, rng)?;
            Ok(Network { arch, params })
        };
        let gh = gen(rng)?;
        let gc = gen(rng)?;
        let disc = |rng: &mut ChaCha8Rng| -> Result<_> {
            let mut params = ParamStore::new();
            let arch = PatchDiscriminator::new(config.discriminator, &mut params, rng)?;
            Ok(Network { arch, params })
        };
        let dh = disc(rng)?;
        let dc = if config.clear_discriminator { Some(disc(rng)?) } else { None };
        Ok(GanBundle { gh, gc, dh, dc })
    }

    /// `(d_loss, g_loss)` evaluated without gradients.
    pub fn adversarial_losses(&self, x_c: &Tensor<T>, x_h: &Tensor<T>, saturating: bool) -> Result<(f64, f64)> {
        let mut g = Graph::new();
        let gh = self.gh.bind(&mut g, false);
        let dh = self.dh.bind(&mut g, false);
        let xc = g.constant(x_c.clone());
        let xh = g.constant(x_h.clone());
        let fake = gh.forward(&mut g, xc)?;
        let l = adversarial_terms(&mut g, &dh, xh, fake, saturating)?;
        Ok((g.value(l.d_loss).item().to_f64_lossy(), g.value(l.g_loss).item().to_f64_lossy()))
    }

    pub fn cycle_loss(&self, x_c: &Tensor<T>, x_h: &Tensor<T>) -> Result<f64> {
        let mut g = Graph::new();
        let gh = self.gh.bind(&mut g, false);
        let gc = self.gc.bind(&mut g, false);
        let xc = g.constant(x_c.clone());
        let xh = g.constant(x_h.clone());
        let l = cycle_terms(&mut g, &gh, &gc, xc, xh)?;
        Ok(g.value(l).item().to_f64_lossy())
    }

    /// Frozen checkpoint with both generators (G_c only for diagnostics).
    pub fn frozen_checkpoint(&self, config: &GeneratorConfig) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        ckpt.set_meta(FROZEN_META, &[1.0]);
        ckpt.set_meta(GEN_META, &config.to_meta());
        self.gh.params.export(&mut ckpt, GH_PREFIX, false);
        self.gc.params.export(&mut ckpt, GC_PREFIX, false);
        ckpt
    }
}

/// Terms of the adversarial objective for one batch.
pub struct AdversarialTerms {
    /// `E[log D(real)] + E[log(1 − D(fake))]`
    pub value: Var,
    /// `−value`, minimized by the discriminator.
    pub d_loss: Var,
    /// Non-saturating `−E[log D(fake)]`, or `E[log(1 − D(fake))]` when saturating.
    pub g_loss: Var,
}

/// Builds the adversarial terms on `g`. Which parameters receive gradient is
/// decided by how the networks were bound.
pub fn adversarial_terms<T: Scalar>(
    g: &mut Graph<T>,
    disc: &dyn ImageMap<T>,
    real: Var,
    fake: Var,
    saturating: bool,
) -> Result<AdversarialTerms> {
    if g.shape(real)[0] == 0 || g.shape(fake)[0] == 0 {
        return Err(Error::Empty("adversarial batch".into()));
    }
    let d_real = disc.forward(g, real)?;
    let d_fake = disc.forward(g, fake)?;
    let log_real = g.log(d_real)?;
    let real_term = g.mean(log_real);
    let not_fake = g.one_minus(d_fake);
    let log_not_fake = g.log(not_fake)?;
    let fake_term = g.mean(log_not_fake);
    let value = g.add(real_term, fake_term)?;
    let d_loss = g.neg(value);
    let g_loss = if saturating {
        fake_term
    } else {
        let log_fake = g.log(d_fake)?;
        let m = g.mean(log_fake);
        g.neg(m)
    };
    Ok(AdversarialTerms { value, d_loss, g_loss })
}

/// `E|G_h(G_c(x_h)) − x_h| + E|G_c(G_h(x_c)) − x_c|`.
pub fn cycle_terms<T: Scalar>(
    g: &mut Graph<T>,
    gh: &dyn ImageMap<T>,
    gc: &dyn ImageMap<T>,
    x_c: Var,
    x_h: Var,
) -> Result<Var> {
    let to_clear = gc.forward(g, x_h)?;
    let hazy_back = gh.forward(g, to_clear)?;
    let hazy_term = g.l1(hazy_back, x_h)?;
    let to_hazy = gh.forward(g, x_c)?;
    let clear_back = gc.forward(g, to_hazy)?;
    let clear_term = g.l1(clear_back, x_c)?;
    g.add(hazy_term, clear_term)
}

/// Frozen clear→hazy generator used as a haze operator.
#[derive(Clone, Debug)]
pub struct LearnedGenerator<T> {
    net: Network<ResidualGenerator, T>,
}

impl<T: Scalar> LearnedGenerator<T> {
    pub fn new(net: Network<ResidualGenerator, T>) -> Self {
        LearnedGenerator { net }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta = ckpt.meta(GEN_META).ok_or_else(|| Error::Format {
            path: "checkpoint".into(),
            reason: "no generator metadata".into(),
        })?;
        let config = GeneratorConfig::from_meta(&meta)?;
        let mut params = ParamStore::new();
        let arch = ResidualGenerator::new(config, &mut params, &mut ChaCha8Rng::seed_from_u64(0))?;
        params.import(ckpt, GH_PREFIX)?;
        Ok(LearnedGenerator {
            net: Network { arch, params },
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }

    pub fn config(&self) -> &GeneratorConfig {
        self.net.arch.config()
    }

    pub fn fingerprint(&self) -> Vec<u8> {
        self.net.params.fingerprint()
    }
}

impl<T: Scalar> ImageMap<T> for LearnedGenerator<T> {
    /// Parameters enter the graph as constants: gradients reach `x` only.
    fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let m = self.net.bind(g, false);
        m.forward(g, x)
    }
}

/// Whether a checkpoint carries the frozen flag written by pseudo-physics training.
pub fn is_frozen(ckpt: &Checkpoint) -> bool {
    ckpt.meta(FROZEN_META).map(|m| m.first() == Some(&1.0)).unwrap_or(false)
}
