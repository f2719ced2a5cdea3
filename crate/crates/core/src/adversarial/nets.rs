use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Architecture, Bound, Conv, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub channels: usize,
    pub residual_blocks: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            levels: 3,
            base_channels: 16,
            channels: 3,
            residual_blocks: 2,
        }
    }
}

impl GeneratorConfig {
    pub fn to_meta(&self) -> [f64; 4] {
        [
            self.levels as f64,
            self.base_channels as f64,
            self.channels as f64,
            self.residual_blocks as f64,
        ]
    }

    pub fn from_meta(m: &[f64]) -> Result<Self> {
        if m.len() != 4 {
            return Err(Error::param("meta.generator", "expected four values"));
        }
        Ok(GeneratorConfig {
            levels: m[0] as usize,
            base_channels: m[1] as usize,
            channels: m[2] as usize,
            residual_blocks: m[3] as usize,
        })
    }
}

/// Encoder-decoder with strided downsampling, residual blocks at the
/// bottleneck and additive skips; sigmoid output.
#[derive(Clone, Debug)]
pub struct ResidualGenerator {
    config: GeneratorConfig,
    stem: Conv,
    down: Vec<Conv>,
    blocks: Vec<[Conv; 2]>,
    up: Vec<Conv>,
    head: Conv,
}

impl ResidualGenerator {
    pub fn new<T: Scalar, R: Rng>(config: GeneratorConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        if config.levels == 0 || config.base_channels == 0 || !(config.channels == 1 || config.channels == 3) {
            return Err(Error::config("generator", format!("{config:?}"), "invalid generator shape"));
        }
        let width = |l: usize| config.base_channels << l;
        let stem = Conv::register(store, "stem", config.channels, width(0), 3, 1, rng)?;
        let down = (1..config.levels)
            .map(|l| Conv::register(store, &format!("down{l}"), width(l - 1), width(l), 3, 2, rng))
            .collect::<Result<Vec<_>>>()?;
        let deep = width(config.levels - 1);
        let blocks = (0..config.residual_blocks)
            .map(|b| {
                Ok([
                    Conv::register(store, &format!("res{b}.conv1"), deep, deep, 3, 1, rng)?,
                    Conv::register(store, &format!("res{b}.conv2"), deep, deep, 3, 1, rng)?,
                ])
            })
            .collect::<Result<Vec<_>>>()?;
        let up = (0..config.levels - 1)
            .rev()
            .map(|l| Conv::register(store, &format!("up{l}"), width(l + 1), width(l), 3, 1, rng))
            .collect::<Result<Vec<_>>>()?;
        let head = Conv::register(store, "head", width(0), config.channels, 3, 1, rng)?;
        Ok(ResidualGenerator {
            config,
            stem,
            down,
            blocks,
            up,
            head,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }
}

impl Architecture for ResidualGenerator {
    fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let [_, _, h, w] = g.shape(x);
        let d = 1 << (self.config.levels - 1);
        if h % d != 0 || w % d != 0 {
            return Err(Error::InvalidShape {
                op: "generator",
                reason: format!("spatial size {}x{} must be divisible by {}", h, w, d),
            });
        }
        let mut cur = self.stem.forward_act(g, p, x)?;
        let mut skips = vec![cur];
        for conv in &self.down {
            cur = conv.forward_act(g, p, cur)?;
            skips.push(cur);
        }
        skips.pop();
        for [c1, c2] in &self.blocks {
            let a = c1.forward_act(g, p, cur)?;
            let b = c2.forward(g, p, a)?;
            cur = g.add(cur, b)?;
        }
        for conv in &self.up {
            let up = g.upsample2(cur)?;
            let y = conv.forward_act(g, p, up)?;
            let skip = skips.pop().expect("one skip per level");
            cur = g.add(y, skip)?;
        }
        let logits = self.head.forward(g, p, cur)?;
        Ok(g.sigmoid(logits))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
    pub channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            base_channels: 16,
            channels: 3,
        }
    }
}

/// Four convolutions, the first three strided, ending in a per-patch
/// probability map.
#[derive(Clone, Debug)]
pub struct PatchDiscriminator {
    layers: [Conv; 4],
}

impl PatchDiscriminator {
    pub fn new<T: Scalar, R: Rng>(config: DiscriminatorConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        let b = config.base_channels;
        Ok(PatchDiscriminator {
            layers: [
                Conv::register(store, "d0", config.channels, b, 3, 2, rng)?,
                Conv::register(store, "d1", b, 2 * b, 3, 2, rng)?,
                Conv::register(store, "d2", 2 * b, 4 * b, 3, 2, rng)?,
                Conv::register(store, "d3", 4 * b, 1, 3, 1, rng)?,
            ],
        })
    }

    /// A discriminator that outputs exactly 0.5 everywhere.
    pub fn indifferent<T: Scalar>(config: DiscriminatorConfig, store: &mut ParamStore<T>) -> Result<Self> {
        let b = config.base_channels;
        Ok(PatchDiscriminator {
            layers: [
                Conv::register_zero(store, "d0", config.channels, b, 3, 2)?,
                Conv::register_zero(store, "d1", b, 2 * b, 3, 2)?,
                Conv::register_zero(store, "d2", 2 * b, 4 * b, 3, 2)?,
                Conv::register_zero(store, "d3", 4 * b, 1, 3, 1)?,
            ],
        })
    }
}

impl Architecture for PatchDiscriminator {
    fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let mut cur = x;
        for conv in &self.layers[..3] {
            cur = conv.forward_act(g, p, cur)?;
        }
        let logits = self.layers[3].forward(g, p, cur)?;
        Ok(g.sigmoid(logits))
    }
}
