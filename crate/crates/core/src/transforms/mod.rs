//! Transformation groups acting on image tensors.
//!
//! All geometric actions are expressed in centred pixel coordinates
//! `(u, v) = (col - (W-1)/2, row - (H-1)/2)` with rows pointing down. A
//! positive rotation angle turns the picture counter-clockwise as displayed.
//! Quarter-turn rotations, integer shifts and reflections act as exact pixel
//! permutations; everything else resamples bilinearly.

mod action;
mod residual;

pub use action::{masked_loss, validity_mask};
pub use residual::equivariance_residual;

use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Rotate,
    Shift,
    Scale,
    Reflect,
    Euclidean,
    Similarity,
    Affine,
    PanTiltRotate,
}

impl TransformKind {
    pub const ALL: [TransformKind; 8] = [
        TransformKind::Rotate,
        TransformKind::Shift,
        TransformKind::Scale,
        TransformKind::Reflect,
        TransformKind::Euclidean,
        TransformKind::Similarity,
        TransformKind::Affine,
        TransformKind::PanTiltRotate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Rotate => "rotate",
            TransformKind::Shift => "shift",
            TransformKind::Scale => "scale",
            TransformKind::Reflect => "reflect",
            TransformKind::Euclidean => "euclidean",
            TransformKind::Similarity => "similarity",
            TransformKind::Affine => "affine",
            TransformKind::PanTiltRotate => "pantiltrotate",
        }
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransformKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("transform", s, "unknown transform kind"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Mirror left-right.
    Horizontal,
    /// Mirror top-bottom.
    Vertical,
}

/// Sampling ranges per kind. Translations are fractions of the image size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformRanges {
    pub max_angle: f64,
    pub shift_fraction: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub rigid_shift_fraction: f64,
    pub affine_jitter: f64,
    pub affine_shift_fraction: f64,
    pub pan_tilt_roll_degrees: f64,
}

impl Default for TransformRanges {
    fn default() -> Self {
        TransformRanges {
            max_angle: TAU,
            shift_fraction: 0.25,
            scale_min: 0.75,
            scale_max: 1.25,
            rigid_shift_fraction: 0.1,
            affine_jitter: 0.15,
            affine_shift_fraction: 0.1,
            pan_tilt_roll_degrees: 10.0,
        }
    }
}

/// Which transformations to sample: one kind, or a `+`-joined pair applied in
/// listed order.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformSpec {
    pub kinds: Vec<TransformKind>,
    pub ranges: TransformRanges,
    /// Restrict rotations to quarter turns (shifts are always integral).
    pub exact: bool,
}

impl TransformSpec {
    pub fn new(kinds: Vec<TransformKind>) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::config("transform", "", "at least one kind is required"));
        }
        Ok(TransformSpec {
            kinds,
            ranges: TransformRanges::default(),
            exact: false,
        })
    }

    pub fn single(kind: TransformKind) -> Self {
        Self::new(vec![kind]).expect("non-empty")
    }

    pub fn exact(mut self, exact: bool) -> Self {
        self.exact = exact;
        self
    }

    /// Parses `rotate`, `rotate+shift`, ...
    pub fn parse(s: &str) -> Result<Self> {
        let kinds = s
            .split('+')
            .filter(|p| !p.trim().is_empty())
            .map(|p| p.trim().parse())
            .collect::<Result<Vec<_>>>()?;
        if kinds.is_empty() {
            return Err(Error::config("transform", s, "at least one kind is required"));
        }
        Self::new(kinds)
    }

    pub fn name(&self) -> String {
        self.kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join("+")
    }
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub counter: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Action {
    Rotate {
        angle: f64,
    },
    Shift {
        dx: f64,
        dy: f64,
    },
    Scale {
        factor: f64,
    },
    Reflect {
        axis: Axis,
    },
    Euclidean {
        angle: f64,
        dx: f64,
        dy: f64,
    },
    Similarity {
        angle: f64,
        scale: f64,
        dx: f64,
        dy: f64,
    },
    /// Forward map `dest = A[:, :2]·src + A[:, 2]`.
    Affine {
        matrix: [[f64; 3]; 2],
    },
    /// Homography `K·R·K⁻¹` of a camera rotation with focal length `focal`;
    /// `inverse` selects the inverse homography.
    #[serde(rename = "pantiltrotate")]
    PanTiltRotate {
        pan: f64,
        tilt: f64,
        roll: f64,
        focal: f64,
        inverse: bool,
    },
    /// Parts applied in order; the empty composite is the identity.
    Composite(Vec<GroupElement>),
}

/// A sampled group action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupElement {
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

pub(crate) fn quarter_turns(angle: f64) -> Option<usize> {
    let q = angle / FRAC_PI_2;
    let k = q.round();
    ((q - k).abs() < 1e-9).then(|| (k as i64).rem_euclid(4) as usize)
}

fn rot(angle: f64) -> [[f64; 2]; 2] {
    let (s, c) = angle.sin_cos();
    [[c, s], [-s, c]]
}

fn mat_vec(m: [[f64; 2]; 2], v: (f64, f64)) -> (f64, f64) {
    (m[0][0] * v.0 + m[0][1] * v.1, m[1][0] * v.0 + m[1][1] * v.1)
}

impl From<Action> for GroupElement {
    fn from(action: Action) -> Self {
        GroupElement {
            action,
            provenance: None,
        }
    }
}

impl GroupElement {
    pub fn identity() -> Self {
        Action::Composite(Vec::new()).into()
    }

    pub fn rotate(angle: f64) -> Self {
        Action::Rotate { angle }.into()
    }

    pub fn shift(dx: f64, dy: f64) -> Self {
        Action::Shift { dx, dy }.into()
    }

    pub fn scale(factor: f64) -> Self {
        Action::Scale { factor }.into()
    }

    pub fn reflect(axis: Axis) -> Self {
        Action::Reflect { axis }.into()
    }

    pub fn affine(matrix: [[f64; 3]; 2]) -> Self {
        Action::Affine { matrix }.into()
    }

    pub fn is_identity(&self) -> bool {
        match &self.action {
            Action::Composite(parts) => parts.iter().all(|p| p.is_identity()),
            Action::Rotate { angle } => quarter_turns(*angle) == Some(0),
            Action::Shift { dx, dy } => *dx == 0.0 && *dy == 0.0,
            Action::Scale { factor } => *factor == 1.0,
            _ => false,
        }
    }

    /// Whether the action permutes pixels (no interpolation, no border fill).
    pub fn is_exact(&self) -> bool {
        match &self.action {
            Action::Rotate { angle } => quarter_turns(*angle).is_some(),
            Action::Shift { dx, dy } => dx.fract() == 0.0 && dy.fract() == 0.0,
            Action::Reflect { .. } => true,
            Action::Composite(parts) => parts.iter().all(|p| p.is_exact()),
            Action::Scale { factor } => *factor == 1.0,
            _ => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.action {
            Action::Scale { factor } | Action::Similarity { scale: factor, .. } => {
                if !(*factor > 0.0) || !factor.is_finite() {
                    return Err(Error::param("scale", format!("factor must be positive, got {factor}")));
                }
            }
            Action::Affine { matrix } => {
                let det = matrix[0][0] * matrix[1][1] - matrix[0][1] * matrix[1][0];
                if det.abs() < 1e-6 || !det.is_finite() {
                    return Err(Error::Singular(format!("affine determinant {det}")));
                }
            }
            Action::PanTiltRotate { focal, .. } => {
                if !(*focal > 0.0) {
                    return Err(Error::param("focal", format!("must be positive, got {focal}")));
                }
            }
            Action::Composite(parts) => {
                for p in parts {
                    p.validate()?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// The element undoing this one.
    pub fn invert(&self) -> Result<Self> {
        self.validate()?;
        let action = match &self.action {
            Action::Rotate { angle } => Action::Rotate { angle: -angle },
            Action::Shift { dx, dy } => Action::Shift { dx: -dx, dy: -dy },
            Action::Scale { factor } => Action::Scale { factor: 1.0 / factor },
            Action::Reflect { axis } => Action::Reflect { axis: *axis },
            Action::Euclidean { angle, dx, dy } => {
                let (tx, ty) = mat_vec(rot(-angle), (*dx, *dy));
                Action::Euclidean {
                    angle: -angle,
                    dx: -tx,
                    dy: -ty,
                }
            }
            Action::Similarity { angle, scale, dx, dy } => {
                let (tx, ty) = mat_vec(rot(-angle), (*dx, *dy));
                Action::Similarity {
                    angle: -angle,
                    scale: 1.0 / scale,
                    dx: -tx / scale,
                    dy: -ty / scale,
                }
            }
            Action::Affine { matrix: m } => {
                let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
                let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
                let (tx, ty) = mat_vec(inv, (m[0][2], m[1][2]));
                Action::Affine {
                    matrix: [[inv[0][0], inv[0][1], -tx], [inv[1][0], inv[1][1], -ty]],
                }
            }
            Action::PanTiltRotate {
                pan,
                tilt,
                roll,
                focal,
                inverse,
            } => Action::PanTiltRotate {
                pan: *pan,
                tilt: *tilt,
                roll: *roll,
                focal: *focal,
                inverse: !inverse,
            },
            Action::Composite(parts) => {
                Action::Composite(parts.iter().rev().map(|p| p.invert()).collect::<Result<Vec<_>>>()?)
            }
        };
        Ok(action.into())
    }

    /// `self` followed by `next`. Same-kind rotations, shifts and scalings merge
    /// into a single element; anything else becomes a composite.
    pub fn then(&self, next: &GroupElement) -> GroupElement {
        if self.is_identity() {
            return next.clone();
        }
        if next.is_identity() {
            return self.clone();
        }
        let merged = match (&self.action, &next.action) {
            (Action::Rotate { angle: a }, Action::Rotate { angle: b }) => {
                let sum = a + b;
                let angle = match quarter_turns(sum) {
                    Some(k) => k as f64 * FRAC_PI_2,
                    None => sum.rem_euclid(TAU),
                };
                Some(Action::Rotate { angle })
            }
            (Action::Shift { dx: a, dy: b }, Action::Shift { dx: c, dy: d }) => Some(Action::Shift { dx: a + c, dy: b + d }),
            (Action::Scale { factor: a }, Action::Scale { factor: b }) => Some(Action::Scale { factor: a * b }),
            (Action::Reflect { axis: a }, Action::Reflect { axis: b }) if a == b => Some(Action::Composite(Vec::new())),
            _ => None,
        };
        merged
            .map(GroupElement::from)
            .unwrap_or_else(|| Action::Composite(vec![self.clone(), next.clone()]).into())
    }

    /// 3×3 forward homography in centred coordinates for the continuous kinds.
    pub(crate) fn homography(&self) -> Option<[[f64; 3]; 3]> {
        let affine = |m: [[f64; 2]; 2], t: (f64, f64)| [[m[0][0], m[0][1], t.0], [m[1][0], m[1][1], t.1], [0.0, 0.0, 1.0]];
        Some(match &self.action {
            Action::Rotate { angle } => affine(rot(*angle), (0.0, 0.0)),
            Action::Shift { dx, dy } => affine([[1.0, 0.0], [0.0, 1.0]], (*dx, *dy)),
            Action::Scale { factor } => affine([[*factor, 0.0], [0.0, *factor]], (0.0, 0.0)),
            Action::Reflect { axis } => match axis {
                Axis::Horizontal => affine([[-1.0, 0.0], [0.0, 1.0]], (0.0, 0.0)),
                Axis::Vertical => affine([[1.0, 0.0], [0.0, -1.0]], (0.0, 0.0)),
            },
            Action::Euclidean { angle, dx, dy } => affine(rot(*angle), (*dx, *dy)),
            Action::Similarity { angle, scale, dx, dy } => {
                let r = rot(*angle);
                affine(
                    [[scale * r[0][0], scale * r[0][1]], [scale * r[1][0], scale * r[1][1]]],
                    (*dx, *dy),
                )
            }
            Action::Affine { matrix: m } => [m[0], m[1], [0.0, 0.0, 1.0]],
            Action::PanTiltRotate {
                pan,
                tilt,
                roll,
                focal,
                inverse,
            } => {
                let r = camera_rotation(*pan, *tilt, *roll);
                let r = if *inverse { transpose3(r) } else { r };
                let f = *focal;
                // K R K⁻¹ with K = diag(f, f, 1).
                [
                    [r[0][0], r[0][1], r[0][2] * f],
                    [r[1][0], r[1][1], r[1][2] * f],
                    [r[2][0] / f, r[2][1] / f, r[2][2]],
                ]
            }
            Action::Composite(_) => return None,
        })
    }
}

fn mat3(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn transpose3(a: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

/// `Rz(roll)·Rx(tilt)·Ry(pan)`.
fn camera_rotation(pan: f64, tilt: f64, roll: f64) -> [[f64; 3]; 3] {
    let (sp, cp) = pan.sin_cos();
    let (st, ct) = tilt.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let ry = [[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]];
    let rx = [[1.0, 0.0, 0.0], [0.0, ct, -st], [0.0, st, ct]];
    let rz = [[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]];
    mat3(rz, mat3(rx, ry))
}

pub(crate) fn invert3(m: [[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-12 {
        return None;
    }
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    Some([
        [c(1, 2, 1, 2) / det, -c(0, 2, 1, 2) / det, c(0, 1, 1, 2) / det],
        [-c(1, 2, 0, 2) / det, c(0, 2, 0, 2) / det, -c(0, 1, 0, 2) / det],
        [c(1, 2, 0, 1) / det, -c(0, 2, 0, 1) / det, c(0, 1, 0, 1) / det],
    ])
}

/// Seeded source of group elements. Each sample is stamped with the seed and
/// a running counter.
#[derive(Clone, Debug)]
pub struct TransformSampler {
    rng: ChaCha8Rng,
    seed: u64,
    counter: u64,
}

impl TransformSampler {
    pub fn new(seed: u64) -> Self {
        TransformSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            counter: 0,
        }
    }

    /// Draws an element for an `h × w` image.
    pub fn sample(&mut self, spec: &TransformSpec, h: usize, w: usize) -> Result<GroupElement> {
        let provenance = Provenance {
            seed: self.seed,
            counter: self.counter,
        };
        self.counter += 1;
        let mut element = sample(spec, h, w, &mut self.rng)?;
        element.provenance = Some(provenance);
        Ok(element)
    }
}

/// Draws an element uniformly from the spec's ranges. A two-kind spec yields
/// a composite in listed order.
pub fn sample<R: Rng>(spec: &TransformSpec, h: usize, w: usize, rng: &mut R) -> Result<GroupElement> {
    if spec.kinds.is_empty() {
        return Err(Error::config("transform", "", "at least one kind is required"));
    }
    let mut parts = spec
        .kinds
        .iter()
        .map(|&k| sample_kind(k, spec, h, w, rng))
        .collect::<Vec<_>>();
    Ok(if parts.len() == 1 {
        parts.pop().unwrap()
    } else {
        Action::Composite(parts).into()
    })
}

fn sample_kind<R: Rng>(kind: TransformKind, spec: &TransformSpec, h: usize, w: usize, rng: &mut R) -> GroupElement {
    let r = &spec.ranges;
    let size = h.min(w) as f64;
    let sym = |rng: &mut R, half: f64| if half > 0.0 { rng.gen_range(-half..=half) } else { 0.0 };
    let angle = |rng: &mut R| {
        if spec.exact {
            rng.gen_range(0..4) as f64 * FRAC_PI_2
        } else if r.max_angle > 0.0 {
            rng.gen_range(0.0..r.max_angle)
        } else {
            0.0
        }
    };
    let scale = |rng: &mut R| {
        if r.scale_max > r.scale_min {
            rng.gen_range(r.scale_min..r.scale_max)
        } else {
            r.scale_min
        }
    };
    let action = match kind {
        TransformKind::Rotate => Action::Rotate { angle: angle(rng) },
        TransformKind::Shift => {
            let mx = (r.shift_fraction * w as f64).floor() as i64;
            let my = (r.shift_fraction * h as f64).floor() as i64;
            Action::Shift {
                dx: rng.gen_range(-mx..=mx) as f64,
                dy: rng.gen_range(-my..=my) as f64,
            }
        }
        TransformKind::Scale => Action::Scale { factor: scale(rng) },
        TransformKind::Reflect => Action::Reflect {
            axis: if rng.gen_bool(0.5) { Axis::Horizontal } else { Axis::Vertical },
        },
        TransformKind::Euclidean => Action::Euclidean {
            angle: angle(rng),
            dx: sym(rng, r.rigid_shift_fraction * size),
            dy: sym(rng, r.rigid_shift_fraction * size),
        },
        TransformKind::Similarity => Action::Similarity {
            angle: angle(rng),
            scale: scale(rng),
            dx: sym(rng, r.rigid_shift_fraction * size),
            dy: sym(rng, r.rigid_shift_fraction * size),
        },
        TransformKind::Affine => {
            let j = r.affine_jitter;
            let t = r.affine_shift_fraction * size;
            Action::Affine {
                matrix: [
                    [1.0 + sym(rng, j), sym(rng, j), sym(rng, t)],
                    [sym(rng, j), 1.0 + sym(rng, j), sym(rng, t)],
                ],
            }
        }
        TransformKind::PanTiltRotate => {
            let m = r.pan_tilt_roll_degrees.to_radians();
            Action::PanTiltRotate {
                pan: sym(rng, m),
                tilt: sym(rng, m),
                roll: sym(rng, m),
                focal: w as f64,
                inverse: false,
            }
        }
    };
    action.into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_kind_names() {
        for k in TransformKind::ALL {
            assert_eq!(k.name().parse::<TransformKind>().unwrap(), k);
        }
        let spec = TransformSpec::parse("rotate+shift").unwrap();
        assert_eq!(spec.kinds, vec![TransformKind::Rotate, TransformKind::Shift]);
        assert_eq!(spec.name(), "rotate+shift");
        assert!(TransformSpec::parse("twist").is_err());
        assert!(TransformSpec::parse("").is_err());
        assert!(TransformSpec::new(vec![]).is_err());
    }

    #[test]
    fn exact_rotation_has_discrete_support() {
        let spec = TransformSpec::single(TransformKind::Rotate).exact(true);
        let mut s = TransformSampler::new(3);
        for _ in 0..50 {
            let g = s.sample(&spec, 8, 8).unwrap();
            let Action::Rotate { angle } = g.action else { panic!() };
            assert!([0.0, FRAC_PI_2, 2.0 * FRAC_PI_2, 3.0 * FRAC_PI_2].contains(&angle));
        }
    }

    #[test]
    fn sampling_is_deterministic_and_stamped() {
        let spec = TransformSpec::parse("affine").unwrap();
        let a = TransformSampler::new(11).sample(&spec, 16, 16).unwrap();
        let b = TransformSampler::new(11).sample(&spec, 16, 16).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.provenance, Some(Provenance { seed: 11, counter: 0 }));
    }

    #[test]
    fn pair_spec_builds_ordered_composite() {
        let spec = TransformSpec::parse("rotate+shift").unwrap();
        let g = TransformSampler::new(5).sample(&spec, 16, 16).unwrap();
        let Action::Composite(parts) = g.action else { panic!("expected composite") };
        assert_eq!(parts.len(), 2);
        assert!(matches!(parts[0].action, Action::Rotate { .. }));
        assert!(matches!(parts[1].action, Action::Shift { .. }));
    }

    #[test]
    fn default_ranges_hold() {
        let mut s = TransformSampler::new(1);
        for kind in TransformKind::ALL {
            let spec = TransformSpec::single(kind);
            for _ in 0..20 {
                let g = s.sample(&spec, 32, 32).unwrap();
                g.validate().unwrap();
                match g.action {
                    Action::Shift { dx, dy } => {
                        assert!(dx.abs() <= 8.0 && dy.abs() <= 8.0);
                        assert_eq!(dx.fract(), 0.0);
                    }
                    Action::Scale { factor } => assert!((0.75..1.25).contains(&factor)),
                    Action::Rotate { angle } => assert!((0.0..TAU).contains(&angle)),
                    Action::PanTiltRotate { pan, tilt, roll, focal, .. } => {
                        let m = 10f64.to_radians();
                        assert!(pan.abs() <= m && tilt.abs() <= m && roll.abs() <= m);
                        assert_eq!(focal, 32.0);
                    }
                    _ => {}
                }
            }
        }
    }

    #[test]
    fn inverses_of_parametric_kinds() {
        assert_eq!(GroupElement::rotate(0.3).invert().unwrap(), GroupElement::rotate(-0.3));
        assert_eq!(GroupElement::shift(3.0, -2.0).invert().unwrap(), GroupElement::shift(-3.0, 2.0));
        assert!(GroupElement::scale(0.0).validate().is_err());
        assert!(GroupElement::scale(-1.0).invert().is_err());
        let singular = GroupElement::affine([[1.0, 2.0, 0.0], [0.5, 1.0, 0.0]]);
        assert!(matches!(singular.invert(), Err(Error::Singular(_))));
    }

    #[test]
    fn homography_inverse_matches_matrix_inverse() {
        let elements = [
            GroupElement::from(Action::Euclidean { angle: 0.7, dx: 2.0, dy: -1.0 }),
            GroupElement::from(Action::Similarity { angle: -0.4, scale: 1.2, dx: 1.0, dy: 3.0 }),
            GroupElement::affine([[1.1, 0.1, 2.0], [-0.05, 0.9, -1.0]]),
            GroupElement::from(Action::PanTiltRotate { pan: 0.1, tilt: -0.05, roll: 0.12, focal: 32.0, inverse: false }),
        ];
        for g in elements {
            let m = g.homography().unwrap();
            let mi = g.invert().unwrap().homography().unwrap();
            let prod = mat3(m, mi);
            let s = prod[2][2];
            for i in 0..3 {
                for j in 0..3 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((prod[i][j] / s - expect).abs() < 1e-12, "{:?}", g);
                }
            }
            let direct = invert3(m).unwrap();
            assert!((direct[0][2] / direct[2][2] - mi[0][2] / mi[2][2]).abs() < 1e-9);
        }
    }

    #[test]
    fn composition_merges_same_kinds() {
        let q = GroupElement::rotate(FRAC_PI_2);
        let full = q.then(&q).then(&q).then(&q);
        assert!(full.is_identity());
        let r = GroupElement::reflect(Axis::Horizontal);
        assert!(r.then(&r).is_identity());
        let mixed = q.then(&GroupElement::shift(1.0, 0.0));
        assert!(matches!(mixed.action, Action::Composite(ref p) if p.len() == 2));
    }
}
