use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adversarial::{is_frozen, LearnedGenerator};
use crate::data::{load_depth, Manifest, MANIFEST};
use crate::error::{Error, Result};
use crate::network::Checkpoint;
use crate::physics::{AnalyticScattering, DepthMap, HazeOperator, ScatteringParams};
use crate::scalar::Scalar;

/// Where the haze operator comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum PhysicsSource {
    /// Per-image scattering parameters from a synthetic dataset manifest.
    Manifest(PathBuf),
    /// One scattering model for every image. Depth is read from `depth`
    /// (EIDTNSR1, or a grayscale PNG scaled to `[0, d_max]`) or is the
    /// constant `depth_value`.
    Analytic {
        beta: f64,
        alpha: Vec<f64>,
        #[serde(default)]
        depth: Option<PathBuf>,
        #[serde(default = "one")]
        depth_value: f64,
        #[serde(default = "one")]
        d_max: f64,
    },
    /// Frozen pseudo-physics generator checkpoint.
    Checkpoint(PathBuf),
}

fn one() -> f64 {
    1.0
}

impl PhysicsSource {
    /// Interprets a command-line value: a manifest (or dataset directory
    /// containing one), a checkpoint file, or
    /// `analytic:beta=B,alpha=A[,depth=PATH|VALUE][,d_max=M]`.
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("analytic:") {
            let (mut beta, mut alpha, mut depth, mut depth_value, mut d_max) = (None, None, None, 1.0, 1.0);
            for kv in rest.split(',').filter(|p| !p.is_empty()) {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::config("physics", s, format!("expected key=value, got {kv:?}")))?;
                let num = |v: &str| {
                    v.parse::<f64>()
                        .map_err(|_| Error::config("physics", s, format!("{k} must be a number, got {v:?}")))
                };
                match k {
                    "beta" => beta = Some(num(v)?),
                    "alpha" => alpha = Some(v.split('/').map(num).collect::<Result<Vec<_>>>()?),
                    "depth" => match v.parse::<f64>() {
                        Ok(d) => depth_value = d,
                        Err(_) => depth = Some(PathBuf::from(v)),
                    },
                    "d_max" => d_max = num(v)?,
                    _ => return Err(Error::config("physics", s, format!("unknown key {k:?}"))),
                }
            }
            return Ok(PhysicsSource::Analytic {
                beta: beta.ok_or_else(|| Error::config("physics", s, "beta is required"))?,
                alpha: alpha.unwrap_or_else(|| vec![1.0]),
                depth,
                depth_value,
                d_max,
            });
        }
        let p = Path::new(s);
        if p.is_dir() {
            return Ok(PhysicsSource::Manifest(p.join(MANIFEST)));
        }
        if p.extension().and_then(|e| e.to_str()) == Some("json") {
            return Ok(PhysicsSource::Manifest(p.to_path_buf()));
        }
        Ok(PhysicsSource::Checkpoint(p.to_path_buf()))
    }

    /// Builds the operator for images with the given file names and size.
    pub fn resolve<T: Scalar>(&self, names: &[String], h: usize, w: usize) -> Result<Physics<T>> {
        match self {
            PhysicsSource::Manifest(path) => {
                let manifest = Manifest::read(path)?;
                let root = path.parent().unwrap_or(Path::new("."));
                let params = names
                    .iter()
                    .map(|n| {
                        let e = manifest.find(n).ok_or_else(|| {
                            Error::config("physics", path.display(), format!("no manifest entry for image {n}"))
                        })?;
                        manifest.scattering(root, e)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Physics::PerImage(params))
            }
            PhysicsSource::Analytic {
                beta,
                alpha,
                depth,
                depth_value,
                d_max,
            } => {
                let depth = match depth {
                    Some(p) => DepthMap::new(load_depth(p, *d_max)?)?,
                    None => DepthMap::constant(h, w, *depth_value)?,
                };
                if depth.size() != (h, w) {
                    return Err(Error::config(
                        "depth",
                        format!("{:?}", depth.size()),
                        format!("images are {h}x{w}"),
                    ));
                }
                let params = ScatteringParams::new(*beta, alpha.clone(), depth)?;
                Ok(Physics::Shared(HazeOperator::analytic(&params)))
            }
            PhysicsSource::Checkpoint(path) => {
                let ckpt = Checkpoint::read(path)?;
                if !is_frozen(&ckpt) {
                    return Err(Error::config("physics", path.display(), "checkpoint is not a frozen haze generator"));
                }
                let gen = LearnedGenerator::from_checkpoint(&ckpt)?;
                Ok(Physics::Shared(HazeOperator::Learned(Arc::new(gen))))
            }
        }
    }
}

/// Resolved haze physics for a training set.
#[derive(Clone)]
pub enum Physics<T> {
    /// One parameter set per image, in dataset order.
    PerImage(Vec<ScatteringParams<T>>),
    Shared(HazeOperator<T>),
}

impl<T: Scalar> Physics<T> {
    /// Operator for the batch made of dataset items `indices`.
    pub fn batch(&self, indices: &[usize]) -> Result<HazeOperator<T>> {
        match self {
            Physics::PerImage(params) => {
                let picked: Vec<_> = indices.iter().map(|&i| params[i].clone()).collect();
                Ok(HazeOperator::Analytic(AnalyticScattering::stack(&picked)?))
            }
            Physics::Shared(op) => Ok(op.clone()),
        }
    }

    pub fn len(&self) -> Option<usize> {
        match self {
            Physics::PerImage(p) => Some(p.len()),
            Physics::Shared(_) => None,
        }
    }

    pub fn fingerprint(&self) -> Vec<u8> {
        match self {
            Physics::PerImage(params) => {
                let mut out = Vec::new();
                for p in params {
                    out.extend(HazeOperator::analytic(p).fingerprint());
                }
                out
            }
            Physics::Shared(op) => op.fingerprint(),
        }
    }
}
