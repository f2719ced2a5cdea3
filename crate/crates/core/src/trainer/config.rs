use serde::{Deserialize, Serialize};

use super::PhysicsSource;
use crate::error::{Error, Result};
use crate::network::UNetConfig;
use crate::tensor::Reduction;
use crate::transforms::{TransformRanges, TransformSpec};

/// Which terms of the objective drive training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// haze consistency only
    V1,
    /// equivariance only
    V2,
    /// both
    V3,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::V1, Variant::V2, Variant::V3];

    pub fn name(self) -> &'static str {
        match self {
            Variant::V1 => "V1",
            Variant::V2 => "V2",
            Variant::V3 => "V3",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "V1" => Ok(Variant::V1),
            "V2" => Ok(Variant::V2),
            "V3" => Ok(Variant::V3),
            _ => Err(Error::config("variant", s, "expected V1, V2 or V3")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_ec: f64,
    pub epochs: usize,
    pub base_lr: f64,
    pub batch_size: usize,
    /// Kind name or `+`-joined pair, e.g. `rotate` or `rotate+shift`.
    pub transform: String,
    /// Quarter-turn rotations only.
    pub exact_transforms: bool,
    pub transform_ranges: TransformRanges,
    pub variant: Variant,
    /// Stop gradient through the target side of the equivariance term.
    pub detach_target: bool,
    /// Sample a transformation per batch item instead of per batch.
    pub per_item_transform: bool,
    /// `mse` or `l1` for both terms.
    pub loss: Reduction,
    pub unet: UNetConfig,
    pub physics: Option<PhysicsSource>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_ec: 0.1,
            epochs: 50,
            base_lr: 1e-4,
            batch_size: 4,
            transform: "rotate".into(),
            exact_transforms: false,
            transform_ranges: TransformRanges::default(),
            variant: Variant::V3,
            detach_target: false,
            per_item_transform: false,
            loss: Reduction::Mse,
            unet: UNetConfig::default(),
            physics: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_ec.is_finite() && self.lambda_ec >= 0.0) {
            return Err(Error::config("lambda", self.lambda_ec, "must be finite and >= 0"));
        }
        if self.variant != Variant::V1 && self.lambda_ec == 0.0 {
            return Err(Error::config(
                "lambda",
                self.lambda_ec,
                format!("variant {} needs lambda > 0", self.variant.name()),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", 0, "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", 0, "must be positive"));
        }
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            return Err(Error::config("base_lr", self.base_lr, "must be finite and >= 0"));
        }
        if !matches!(self.loss, Reduction::Mse | Reduction::L1) {
            return Err(Error::config("loss", format!("{:?}", self.loss), "expected mse or l1"));
        }
        self.transform_spec()?;
        self.unet.validate()
    }

    pub fn transform_spec(&self) -> Result<TransformSpec> {
        let mut spec = TransformSpec::parse(&self.transform)?.exact(self.exact_transforms);
        spec.ranges = self.transform_ranges.clone();
        Ok(spec)
    }
}
