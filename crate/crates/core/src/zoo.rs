//! The eight parametric manifold families, their intrinsic samplers and raw
//! embeddings, and the center/RMS calibration that puts every instance at unit
//! scale.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

const TAU: f64 = 2.0 * PI;
/// Lower end of the swiss-roll angle range.
pub const SWISS_ROLL_THETA_MIN: f64 = PI;
/// Helix angle range covers three turns.
pub const HELIX_THETA_MAX: f64 = 6.0 * PI;
/// Default calibration sample size.
pub const DEFAULT_CALIBRATION_SAMPLES: usize = 50_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldKind {
    Circle,
    Sphere,
    Torus,
    Moebius,
    SwissRoll,
    Helix,
    FlatDisk,
    Segment,
}

impl ManifoldKind {
    pub const ALL: [ManifoldKind; 8] = [
        ManifoldKind::Circle,
        ManifoldKind::Sphere,
        ManifoldKind::Torus,
        ManifoldKind::Moebius,
        ManifoldKind::SwissRoll,
        ManifoldKind::Helix,
        ManifoldKind::FlatDisk,
        ManifoldKind::Segment,
    ];

    /// Number of free intrinsic coordinates.
    pub fn intrinsic_dim(self) -> usize {
        match self {
            ManifoldKind::Circle | ManifoldKind::Helix | ManifoldKind::Segment => 1,
            _ => 2,
        }
    }

    /// Dimension of the smallest linear subspace holding the raw embedding.
    pub fn embedding_dim(self) -> usize {
        match self {
            ManifoldKind::Segment => 1,
            ManifoldKind::Circle | ManifoldKind::FlatDisk => 2,
            ManifoldKind::Sphere | ManifoldKind::Moebius | ManifoldKind::SwissRoll | ManifoldKind::Helix => 3,
            ManifoldKind::Torus => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ManifoldKind::Circle => "circle",
            ManifoldKind::Sphere => "sphere",
            ManifoldKind::Torus => "torus",
            ManifoldKind::Moebius => "moebius",
            ManifoldKind::SwissRoll => "swiss_roll",
            ManifoldKind::Helix => "helix",
            ManifoldKind::FlatDisk => "flat_disk",
            ManifoldKind::Segment => "segment",
        }
    }

    /// The six variants of the reference benchmark grid.
    pub fn default_variants(self) -> Vec<VariantParams> {
        const RADII: [f64; 6] = [0.5, 0.75, 1.0, 1.5, 2.0, 3.0];
        match self {
            ManifoldKind::Circle => RADII.iter().map(|&radius| VariantParams::Circle { radius }).collect(),
            ManifoldKind::Sphere => RADII.iter().map(|&radius| VariantParams::Sphere { radius }).collect(),
            ManifoldKind::Torus => [(2.0, 0.5), (2.0, 1.0), (3.0, 1.0), (3.0, 0.5), (3.0, 1.5), (4.0, 1.0)]
                .iter()
                .map(|&(major, minor)| VariantParams::Torus { major, minor })
                .collect(),
            ManifoldKind::Moebius => [0.2, 0.3, 0.5, 0.7, 1.0, 1.5]
                .iter()
                .map(|&width| VariantParams::Moebius { width })
                .collect(),
            ManifoldKind::SwissRoll => (0..6)
                .map(|i| VariantParams::SwissRoll {
                    theta_max: (2.0 + 0.5 * i as f64) * PI,
                    height: 1.5 + 0.9 * i as f64,
                })
                .collect(),
            ManifoldKind::Helix => [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
                .iter()
                .map(|&pitch| VariantParams::Helix { pitch, radius: 1.0 })
                .collect(),
            ManifoldKind::FlatDisk => RADII.iter().map(|&radius| VariantParams::FlatDisk { radius }).collect(),
            ManifoldKind::Segment => RADII.iter().map(|&length| VariantParams::Segment { length }).collect(),
        }
    }
}

impl std::fmt::Display for ManifoldKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Kind-specific shape parameters. The variant determines the kind.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantParams {
    Circle {
        radius: f64,
    },
    Sphere {
        radius: f64,
    },
    /// Flat (Clifford) torus in R^4.
    Torus {
        major: f64,
        minor: f64,
    },
    Moebius {
        width: f64,
    },
    SwissRoll {
        theta_max: f64,
        height: f64,
    },
    Helix {
        pitch: f64,
        radius: f64,
    },
    FlatDisk {
        radius: f64,
    },
    Segment {
        length: f64,
    },
}

impl VariantParams {
    pub fn kind(&self) -> ManifoldKind {
        match self {
            VariantParams::Circle { .. } => ManifoldKind::Circle,
            VariantParams::Sphere { .. } => ManifoldKind::Sphere,
            VariantParams::Torus { .. } => ManifoldKind::Torus,
            VariantParams::Moebius { .. } => ManifoldKind::Moebius,
            VariantParams::SwissRoll { .. } => ManifoldKind::SwissRoll,
            VariantParams::Helix { .. } => ManifoldKind::Helix,
            VariantParams::FlatDisk { .. } => ManifoldKind::FlatDisk,
            VariantParams::Segment { .. } => ManifoldKind::Segment,
        }
    }

    fn scalars(&self) -> Vec<(&'static str, f64)> {
        match *self {
            VariantParams::Circle { radius }
            | VariantParams::Sphere { radius }
            | VariantParams::FlatDisk { radius } => {
                vec![("radius", radius)]
            }
            VariantParams::Torus { major, minor } => vec![("major", major), ("minor", minor)],
            VariantParams::Moebius { width } => vec![("width", width)],
            VariantParams::SwissRoll { theta_max, height } => vec![("theta_max", theta_max), ("height", height)],
            VariantParams::Helix { pitch, radius } => vec![("pitch", pitch), ("radius", radius)],
            VariantParams::Segment { length } => vec![("length", length)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in self.scalars() {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!(
                    "{} parameter {name} must be finite and positive, got {value}",
                    self.kind()
                )));
            }
        }
        match *self {
            VariantParams::Torus { major, minor } if major <= minor => Err(Error::Config(format!(
                "torus needs major > minor, got ({major}, {minor})"
            ))),
            VariantParams::SwissRoll { theta_max, .. } if theta_max <= SWISS_ROLL_THETA_MIN => Err(Error::Config(
                format!("swiss roll theta_max must exceed pi, got {theta_max}"),
            )),
            _ => Ok(()),
        }
    }

    /// Coordinate ranges `(lo, hi)` of the chart, one per intrinsic coordinate.
    pub fn domain(&self) -> Vec<(f64, f64)> {
        match *self {
            VariantParams::Circle { .. } => vec![(0.0, TAU)],
            // (theta, phi) with phi the polar angle
            VariantParams::Sphere { .. } => vec![(0.0, TAU), (0.0, PI)],
            VariantParams::Torus { .. } => vec![(0.0, TAU), (0.0, TAU)],
            // (phi, t)
            VariantParams::Moebius { width } => vec![(0.0, TAU), (-width / 2.0, width / 2.0)],
            // (theta, h)
            VariantParams::SwissRoll { theta_max, height } => vec![(SWISS_ROLL_THETA_MIN, theta_max), (0.0, height)],
            VariantParams::Helix { .. } => vec![(0.0, HELIX_THETA_MAX)],
            // (r, theta)
            VariantParams::FlatDisk { radius } => vec![(0.0, radius), (0.0, TAU)],
            VariantParams::Segment { length } => vec![(0.0, length)],
        }
    }

    /// Draws one chart point uniformly on the manifold into `theta`.
    pub(crate) fn draw<R: Rng + ?Sized>(&self, rng: &mut R, theta: &mut [f64]) {
        let u = |rng: &mut R| rng.random::<f64>();
        match *self {
            VariantParams::Circle { .. } => theta[0] = TAU * u(rng),
            VariantParams::Sphere { .. } => {
                theta[0] = TAU * u(rng);
                // area-uniform: cos(phi) uniform on [-1, 1]
                theta[1] = (1.0 - 2.0 * u(rng)).clamp(-1.0, 1.0).acos();
            }
            VariantParams::Torus { .. } => {
                theta[0] = TAU * u(rng);
                theta[1] = TAU * u(rng);
            }
            VariantParams::Moebius { width } => {
                theta[0] = TAU * u(rng);
                theta[1] = width * (u(rng) - 0.5);
            }
            VariantParams::SwissRoll { theta_max, height } => {
                theta[0] = SWISS_ROLL_THETA_MIN + (theta_max - SWISS_ROLL_THETA_MIN) * u(rng);
                theta[1] = height * u(rng);
            }
            VariantParams::Helix { .. } => theta[0] = HELIX_THETA_MAX * u(rng),
            VariantParams::FlatDisk { radius } => {
                theta[0] = radius * u(rng).sqrt();
                theta[1] = TAU * u(rng);
            }
            VariantParams::Segment { length } => theta[0] = length * u(rng),
        }
    }

    /// Raw embedding into `out` (length `k_i`), without domain checks.
    pub(crate) fn embed_into(&self, theta: &[f64], out: &mut [f64]) {
        match *self {
            VariantParams::Circle { radius } => {
                out[0] = radius * theta[0].cos();
                out[1] = radius * theta[0].sin();
            }
            VariantParams::Sphere { radius } => {
                let (st, ct) = theta[0].sin_cos();
                let (sp, cp) = theta[1].sin_cos();
                out[0] = radius * sp * ct;
                out[1] = radius * sp * st;
                out[2] = radius * cp;
            }
            VariantParams::Torus { major, minor } => {
                let (st, ct) = theta[0].sin_cos();
                let (sp, cp) = theta[1].sin_cos();
                out[0] = major * ct;
                out[1] = major * st;
                out[2] = minor * cp;
                out[3] = minor * sp;
            }
            VariantParams::Moebius { .. } => {
                let (phi, t) = (theta[0], theta[1]);
                let (sh, ch) = (phi / 2.0).sin_cos();
                let ring = 1.0 + t * ch;
                out[0] = ring * phi.cos();
                out[1] = ring * phi.sin();
                out[2] = t * sh;
            }
            VariantParams::SwissRoll { .. } => {
                let (t, h) = (theta[0], theta[1]);
                out[0] = t * t.cos();
                out[1] = h;
                out[2] = t * t.sin();
            }
            VariantParams::Helix { pitch, radius } => {
                out[0] = radius * theta[0].cos();
                out[1] = radius * theta[0].sin();
                out[2] = pitch * theta[0];
            }
            VariantParams::FlatDisk { .. } => {
                let (r, t) = (theta[0], theta[1]);
                out[0] = r * t.cos();
                out[1] = r * t.sin();
            }
            VariantParams::Segment { .. } => out[0] = theta[0],
        }
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        let domain = self.domain();
        if theta.len() != domain.len() {
            return Err(Error::Domain(format!(
                "{} takes {} intrinsic coordinates, got {}",
                self.kind(),
                domain.len(),
                theta.len()
            )));
        }
        for (i, (&t, &(lo, hi))) in theta.iter().zip(&domain).enumerate() {
            if !(t >= lo && t <= hi) {
                return Err(Error::Domain(format!(
                    "{} coordinate {i} = {t} outside [{lo}, {hi}]",
                    self.kind()
                )));
            }
        }
        Ok(())
    }
}

/// Samples `n` chart points uniformly on the manifold.
pub fn intrinsic_sample<R: Rng + ?Sized>(params: &VariantParams, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::EmptyRequest("intrinsic_sample needs n >= 1".into()));
    }
    let dim = params.kind().intrinsic_dim();
    Ok((0..n)
        .map(|_| {
            let mut theta = vec![0.0; dim];
            params.draw(rng, &mut theta);
            theta
        })
        .collect())
}

/// Raw embedding `gamma(theta)` in `R^{k_i}`.
pub fn embed(params: &VariantParams, theta: &[f64]) -> Result<Vec<f64>> {
    params.check_theta(theta)?;
    let mut out = vec![0.0; params.kind().embedding_dim()];
    params.embed_into(theta, &mut out);
    Ok(out)
}

/// Sample mean and RMS norm of the centered raw embedding.
pub fn calibrate<R: Rng + ?Sized>(params: &VariantParams, n_cal: usize, rng: &mut R) -> Result<(Vec<f64>, f64)> {
    if n_cal < 2 {
        return Err(Error::Calibration(format!(
            "need at least 2 calibration samples, got {n_cal}"
        )));
    }
    let kind = params.kind();
    let (d, k) = (kind.intrinsic_dim(), kind.embedding_dim());
    let mut theta = [0.0; 2];
    let mut points = vec![0.0; n_cal * k];
    for row in points.chunks_exact_mut(k) {
        params.draw(rng, &mut theta[..d]);
        params.embed_into(&theta[..d], row);
    }
    let mut center = vec![0.0; k];
    for row in points.chunks_exact(k) {
        for (c, &v) in center.iter_mut().zip(row) {
            *c += v;
        }
    }
    center.iter_mut().for_each(|c| *c /= n_cal as f64);
    let sq: f64 = points
        .chunks_exact(k)
        .map(|row| row.iter().zip(&center).map(|(v, c)| (v - c) * (v - c)).sum::<f64>())
        .sum();
    let scale = (sq / n_cal as f64).sqrt();
    if !(scale >= 1e-12) {
        return Err(Error::Calibration(format!("{kind} has degenerate scale {scale:e}")));
    }
    Ok((center, scale))
}

/// One calibrated manifold instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldInstance {
    pub instance_id: u32,
    pub kind: ManifoldKind,
    pub params: VariantParams,
    pub d_i: usize,
    pub k_i: usize,
    pub center: Vec<f64>,
    pub scale: f64,
}

impl ManifoldInstance {
    /// Calibrates on a stream keyed by `(seed, instance_id)` only.
    pub fn calibrated(instance_id: u32, params: VariantParams, n_cal: usize, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut rng = rng::stream(seed, Purpose::Calibration, instance_id as u64);
        let (center, scale) = calibrate(&params, n_cal, &mut rng)?;
        Ok(Self::with_calibration(instance_id, params, center, scale))
    }

    pub fn with_calibration(instance_id: u32, params: VariantParams, center: Vec<f64>, scale: f64) -> Self {
        let kind = params.kind();
        Self {
            instance_id,
            kind,
            params,
            d_i: kind.intrinsic_dim(),
            k_i: kind.embedding_dim(),
            center,
            scale,
        }
    }

    /// Checks the fields a deserialized instance must agree on.
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let kind = self.params.kind();
        if kind != self.kind || self.d_i != kind.intrinsic_dim() || self.k_i != kind.embedding_dim() {
            return Err(Error::Config(format!(
                "instance {} has inconsistent kind/dims",
                self.instance_id
            )));
        }
        if self.center.len() != self.k_i || !(self.scale > 0.0) {
            return Err(Error::Config(format!(
                "instance {} has invalid calibration",
                self.instance_id
            )));
        }
        Ok(())
    }

    /// `(gamma(theta) - center) / scale`.
    pub fn normalized_embed(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let mut out = embed(&self.params, theta)?;
        self.normalize_in_place(&mut out);
        Ok(out)
    }

    pub(crate) fn normalize_in_place(&self, raw: &mut [f64]) {
        for (v, c) in raw.iter_mut().zip(&self.center) {
            *v = (*v - c) / self.scale;
        }
    }

    /// Draws a uniform point and writes its normalized embedding into `out`.
    pub(crate) fn draw_normalized<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let mut theta = [0.0; 2];
        self.params.draw(rng, &mut theta[..self.d_i]);
        self.params.embed_into(&theta[..self.d_i], out);
        self.normalize_in_place(out);
    }
}

/// Serializes instances as the `zoo.json` list.
pub fn zoo_to_json(instances: &[ManifoldInstance]) -> Result<String> {
    Ok(serde_json::to_string_pretty(instances)?)
}

pub fn zoo_from_json(text: &str) -> Result<Vec<ManifoldInstance>> {
    let instances: Vec<ManifoldInstance> = serde_json::from_str(text)?;
    for inst in &instances {
        inst.validate()?;
    }
    Ok(instances)
}
