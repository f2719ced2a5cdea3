use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::layers::{Architecture, Bound, Conv};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    /// Resolution scales, including the full-resolution one.
    pub levels: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            levels: 3,
            base_channels: 16,
            in_channels: 3,
            out_channels: 3,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > 8 {
            return Err(Error::config("levels", self.levels, "must be in 1..=8"));
        }
        if self.base_channels == 0 {
            return Err(Error::config("base_channels", 0, "must be positive"));
        }
        for (key, c) in [("in_channels", self.in_channels), ("out_channels", self.out_channels)] {
            if c != 1 && c != 3 {
                return Err(Error::config(key, c, "must be 1 or 3"));
            }
        }
        Ok(())
    }

    pub fn divisor(&self) -> usize {
        1 << (self.levels - 1)
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let d = self.divisor();
        if !h.is_multiple_of(d) || !w.is_multiple_of(d) || h == 0 || w == 0 {
            return Err(Error::InvalidShape {
                op: "unet",
                reason: format!("spatial size {}x{} must be divisible by {}", h, w, d),
            });
        }
        Ok(())
    }

    pub fn to_meta(&self) -> [f64; 4] {
        [
            self.levels as f64,
            self.base_channels as f64,
            self.in_channels as f64,
            self.out_channels as f64,
        ]
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, key: &str) -> Option<Self> {
        let m = ckpt.meta(key)?;
        (m.len() == 4).then(|| UNetConfig {
            levels: m[0] as usize,
            base_channels: m[1] as usize,
            in_channels: m[2] as usize,
            out_channels: m[3] as usize,
        })
    }
}

/// Encoder-decoder with concatenated skip connections per scale, leaky-ReLU
/// hidden activations and a sigmoid head.
#[derive(Clone, Debug)]
pub struct UNet {
    config: UNetConfig,
    encoder: Vec<[Conv; 2]>,
    decoder: Vec<[Conv; 2]>,
    head: Conv,
}

impl UNet {
    /// Registers all parameters under `prefix` in `store`.
    pub fn new<T: Scalar, R: Rng>(config: UNetConfig, store: &mut ParamStore<T>, prefix: &str, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let width = |l: usize| config.base_channels << l;
        let mut encoder = Vec::new();
        for l in 0..config.levels {
            let cin = if l == 0 { config.in_channels } else { width(l - 1) };
            encoder.push([
                Conv::register(store, &format!("{prefix}enc{l}.conv1"), cin, width(l), 3, 1, rng)?,
                Conv::register(store, &format!("{prefix}enc{l}.conv2"), width(l), width(l), 3, 1, rng)?,
            ]);
        }
        let mut decoder = Vec::new();
        for l in (0..config.levels - 1).rev() {
            decoder.push([
                Conv::register(store, &format!("{prefix}dec{l}.conv1"), width(l + 1) + width(l), width(l), 3, 1, rng)?,
                Conv::register(store, &format!("{prefix}dec{l}.conv2"), width(l), width(l), 3, 1, rng)?,
            ]);
        }
        let head = Conv::register(store, &format!("{prefix}head"), width(0), config.out_channels, 1, 1, rng)?;
        Ok(UNet {
            config,
            encoder,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }
}

impl Architecture for UNet {
    fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let [_, c, h, w] = g.shape(x);
        if c != self.config.in_channels {
            return Err(Error::InvalidShape {
                op: "unet",
                reason: format!("expected {} input channels, got {}", self.config.in_channels, c),
            });
        }
        self.config.check_input(h, w)?;
        let mut skips = Vec::with_capacity(self.config.levels);
        let mut cur = x;
        for (l, [c1, c2]) in self.encoder.iter().enumerate() {
            if l > 0 {
                cur = g.downsample2(cur)?;
            }
            cur = c1.forward_act(g, p, cur)?;
            cur = c2.forward_act(g, p, cur)?;
            skips.push(cur);
        }
        skips.pop();
        for [c1, c2] in &self.decoder {
            let up = g.upsample2(cur)?;
            let skip = skips.pop().expect("one skip per decoder level");
            let joined = g.concat(&[up, skip], 1)?;
            cur = c1.forward_act(g, p, joined)?;
            cur = c2.forward_act(g, p, cur)?;
        }
        let logits = self.head.forward(g, p, cur)?;
        Ok(g.sigmoid(logits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{ImageMap, Model};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(config: UNetConfig) -> (UNet, ParamStore<f32>) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = UNet::new(config, &mut store, "", &mut rng).unwrap();
        (net, store)
    }

    #[test]
    fn shape_contract_and_sigmoid_range() {
        let (unet, store) = net(UNetConfig::default());
        let x = Tensor::from_fn([1, 3, 64, 64], |_, c, h, w| ((c + h * w) % 17) as f32 / 17.0);
        let mut g = Graph::new();
        let m = Model::bind(&unet, &store, &mut g, false);
        let xv = g.constant(x);
        let y = m.forward(&mut g, xv).unwrap();
        assert_eq!(g.shape(y), [1, 3, 64, 64]);
        assert!(g.value(y).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn indivisible_size_names_divisor() {
        let (unet, store) = net(UNetConfig::default());
        let mut g = Graph::new();
        let m = Model::bind(&unet, &store, &mut g, false);
        let xv = g.constant(Tensor::zeros([1, 3, 30, 32]));
        let err = m.forward(&mut g, xv).unwrap_err();
        assert!(err.to_string().contains("divisible by 4"), "{err}");
    }

    #[test]
    fn forward_is_deterministic() {
        let (unet, store) = net(UNetConfig {
            levels: 2,
            base_channels: 4,
            in_channels: 1,
            out_channels: 1,
        });
        let x = Tensor::from_fn([2, 1, 8, 8], |n, _, h, w| (n + h + 2 * w) as f32 * 0.03);
        let run = || {
            let mut g = Graph::new();
            let m = Model::bind(&unet, &store, &mut g, false);
            let xv = g.constant(x.clone());
            let y = m.forward(&mut g, xv).unwrap();
            g.value(y).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn parameter_names_are_stable() {
        let (_, store) = net(UNetConfig {
            levels: 2,
            base_channels: 2,
            in_channels: 1,
            out_channels: 1,
        });
        let names: Vec<&str> = store.names().collect();
        assert_eq!(
            names,
            [
                "enc0.conv1.weight",
                "enc0.conv1.bias",
                "enc0.conv2.weight",
                "enc0.conv2.bias",
                "enc1.conv1.weight",
                "enc1.conv1.bias",
                "enc1.conv2.weight",
                "enc1.conv2.bias",
                "dec0.conv1.weight",
                "dec0.conv1.bias",
                "dec0.conv2.weight",
                "dec0.conv2.bias",
                "head.weight",
                "head.bias"
            ]
        );
    }

    #[test]
    fn rejects_bad_config() {
        let bad = UNetConfig {
            in_channels: 2,
            ..UNetConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(UNetConfig { levels: 0, ..UNetConfig::default() }.validate().is_err());
    }
}
