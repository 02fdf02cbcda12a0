//! Ambient embedding of calibrated manifolds and sparse additive-mixture
//! datasets with ground truth.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array2, Array3, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::zoo::{ManifoldInstance, ManifoldKind, VariantParams, DEFAULT_CALIBRATION_SAMPLES};

pub const DATASET_MAGIC: &[u8; 4] = b"MSBD";
pub const DATASET_VERSION: u32 = 1;
/// Noise level of the reference benchmark.
pub const DEFAULT_NOISE: f64 = 1e-5;

/// `k x d` matrix with orthonormal rows: the Q factor of a Gaussian `d x k`
/// matrix, transposed.
pub fn random_orthonormal<R: Rng + ?Sized>(k: usize, d: usize, rng: &mut R) -> Result<Array2<f64>> {
    if k == 0 || k > d {
        return Err(Error::Dimension(format!(
            "orthonormal basis needs 1 <= k <= d, got k={k}, d={d}"
        )));
    }
    let gaussian = DMatrix::<f64>::from_fn(d, k, |_, _| StandardNormal.sample(rng));
    let q = gaussian.qr().q();
    Ok(Array2::from_shape_fn((k, d), |(i, j)| q[(j, i)]))
}

/// Orthonormal row basis `V_i` plus a zero offset.
#[derive(Clone, Debug, PartialEq)]
pub struct AmbientEmbedding {
    pub basis: Array2<f64>,
    pub offset: Vec<f64>,
}

impl AmbientEmbedding {
    pub fn new(basis: Array2<f64>) -> Self {
        let d = basis.ncols();
        Self {
            basis,
            offset: vec![0.0; d],
        }
    }

    /// `z V + b` accumulated into `out`.
    pub fn add_embedded(&self, z: &[f64], out: &mut [f64]) {
        for (row, &zi) in self.basis.rows().into_iter().zip(z) {
            for (o, &v) in out.iter_mut().zip(row.iter()) {
                *o += zi * v;
            }
        }
        for (o, &b) in out.iter_mut().zip(&self.offset) {
            *o += b;
        }
    }

    pub fn embed(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.basis.ncols()];
        self.add_embedded(z, &mut out);
        out
    }

    /// `max |V V^T - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.basis.dot(&self.basis.t());
        gram.indexed_iter()
            .map(|((i, j), &g)| (g - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZooConfig {
    pub ambient_dim: usize,
    pub variants: Vec<VariantParams>,
    #[serde(default = "default_calibration_samples")]
    pub calibration_samples: usize,
}

fn default_calibration_samples() -> usize {
    DEFAULT_CALIBRATION_SAMPLES
}

impl ZooConfig {
    /// The first `per_kind` variants of every family.
    pub fn with_variants_per_kind(ambient_dim: usize, per_kind: usize) -> Self {
        let variants = ManifoldKind::ALL
            .iter()
            .flat_map(|kind| kind.default_variants().into_iter().take(per_kind))
            .collect();
        Self {
            ambient_dim,
            variants,
            calibration_samples: DEFAULT_CALIBRATION_SAMPLES,
        }
    }

    /// 8 families x 6 variants in `R^128`.
    pub fn reference() -> Self {
        Self::with_variants_per_kind(128, 6)
    }
}

/// Calibrated instances paired with their ambient embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct Zoo {
    pub ambient_dim: usize,
    pub instances: Vec<ManifoldInstance>,
    pub embeddings: Vec<AmbientEmbedding>,
}

impl Zoo {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instance_ids(&self) -> Vec<u32> {
        self.instances.iter().map(|i| i.instance_id).collect()
    }

    /// Position of an instance id in the zoo order.
    pub fn position(&self, instance_id: u32) -> Option<usize> {
        self.instances.iter().position(|i| i.instance_id == instance_id)
    }

    /// Ambient points `gamma~(theta) V` for `n` uniform draws of one instance.
    pub fn sample_instance(&self, index: usize, n: usize, seed: u64) -> Array2<f64> {
        let inst = &self.instances[index];
        let emb = &self.embeddings[index];
        let mut rng = rng::stream(seed, Purpose::Sample, inst.instance_id as u64);
        let mut local = vec![0.0; inst.k_i];
        let mut out = Array2::zeros((n, self.ambient_dim));
        for mut row in out.rows_mut() {
            inst.draw_normalized(&mut rng, &mut local);
            emb.add_embedded(&local, row.as_slice_mut().expect("row-major"));
        }
        out
    }
}

/// Calibrates one instance per configured variant and draws a fresh basis for it.
pub fn build_zoo(config: &ZooConfig, seed: u64) -> Result<Zoo> {
    if config.variants.is_empty() {
        return Err(Error::Config("zoo configuration lists no variants".into()));
    }
    let d = config.ambient_dim;
    let mut instances = Vec::with_capacity(config.variants.len());
    let mut embeddings = Vec::with_capacity(config.variants.len());
    for (id, params) in config.variants.iter().enumerate() {
        let k = params.kind().embedding_dim();
        if k > d {
            return Err(Error::Dimension(format!(
                "{} needs k_i = {k} but ambient dimension is {d}",
                params.kind()
            )));
        }
        let id = id as u32;
        instances.push(ManifoldInstance::calibrated(
            id,
            *params,
            config.calibration_samples,
            seed,
        )?);
        let mut basis_rng = rng::stream(seed, Purpose::Basis, id as u64);
        embeddings.push(AmbientEmbedding::new(random_orthonormal(k, d, &mut basis_rng)?));
    }
    Ok(Zoo {
        ambient_dim: d,
        instances,
        embeddings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(rename = "N")]
    pub n: usize,
    pub d: usize,
    pub m: usize,
    #[serde(rename = "L0")]
    pub l0: usize,
    pub sigma_eps: f64,
    pub seed: u64,
    pub instance_ids: Vec<u32>,
}

/// Observations plus per-sample ground truth.
///
/// `active[n]` lists the active instance ids of sample `n` in ascending order
/// and `contributions[n, j, :]` is the ambient contribution of `active[n, j]`.
/// Mask column `j` corresponds to `meta.instance_ids[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureDataset {
    pub meta: DatasetMeta,
    pub x: Array2<f32>,
    pub masks: Array2<bool>,
    pub active: Array2<u32>,
    pub contributions: Array3<f32>,
}

impl MixtureDataset {
    pub fn len(&self) -> usize {
        self.meta.n
    }

    pub fn is_empty(&self) -> bool {
        self.meta.n == 0
    }

    /// A bare `N x c` matrix in dataset layout, with no ground truth.
    pub fn from_matrix(x: Array2<f32>) -> Self {
        let (n, d) = x.dim();
        Self {
            meta: DatasetMeta {
                n,
                d,
                m: 0,
                l0: 0,
                sigma_eps: 0.0,
                seed: 0,
                instance_ids: Vec::new(),
            },
            x,
            masks: Array2::from_elem((n, 0), false),
            active: Array2::zeros((n, 0)),
            contributions: Array3::zeros((n, 0, d)),
        }
    }

    /// Rows where mask column `col` is active, with the matching contributions.
    pub fn instance_rows(&self, col: usize) -> (Vec<usize>, Array2<f64>) {
        let id = self.meta.instance_ids[col];
        let mut rows = Vec::new();
        let mut values = Vec::new();
        for n in 0..self.meta.n {
            if !self.masks[[n, col]] {
                continue;
            }
            let slot = self
                .active
                .row(n)
                .iter()
                .position(|&a| a == id)
                .expect("mask and active list agree");
            rows.push(n);
            values.extend(
                self.contributions
                    .slice(ndarray::s![n, slot, ..])
                    .iter()
                    .map(|&v| v as f64),
            );
        }
        let len = rows.len();
        (rows, Array2::from_shape_vec((len, self.meta.d), values).expect("shape"))
    }

    pub fn row_f64(&self, n: usize) -> Vec<f64> {
        self.x.row(n).iter().map(|&v| v as f64).collect()
    }
}

/// Draws `N` samples, each the sum of `L0` distinct instances plus isotropic
/// Gaussian noise. Sample `n` only depends on `(seed, n)`.
pub fn generate(zoo: &Zoo, n: usize, l0: usize, sigma_eps: f64, seed: u64) -> Result<MixtureDataset> {
    let m = zoo.len();
    if l0 == 0 || l0 > m {
        return Err(Error::Config(format!("L0 must be in [1, {m}], got {l0}")));
    }
    if !(sigma_eps >= 0.0 && sigma_eps.is_finite()) {
        return Err(Error::Config(format!(
            "noise scale must be finite and >= 0, got {sigma_eps}"
        )));
    }
    if n == 0 {
        return Err(Error::EmptyRequest("dataset needs N >= 1".into()));
    }
    let d = zoo.ambient_dim;

    struct Row {
        x: Vec<f32>,
        active: Vec<u32>,
        contributions: Vec<f32>,
    }

    let rows: Vec<Row> = (0..n)
        .into_par_iter()
        .map(|idx| {
            let mut rng = rng::stream(seed, Purpose::Sample, idx as u64);
            let mut picks = rand::seq::index::sample(&mut rng, m, l0).into_vec();
            picks.sort_unstable();
            let mut x = vec![0.0f64; d];
            let mut contributions = Vec::with_capacity(l0 * d);
            let mut local = [0.0; 4];
            let mut contrib = vec![0.0f64; d];
            for &p in &picks {
                let inst = &zoo.instances[p];
                inst.draw_normalized(&mut rng, &mut local[..inst.k_i]);
                contrib.iter_mut().for_each(|v| *v = 0.0);
                zoo.embeddings[p].add_embedded(&local[..inst.k_i], &mut contrib);
                for (xv, &cv) in x.iter_mut().zip(&contrib) {
                    *xv += cv;
                }
                contributions.extend(contrib.iter().map(|&v| v as f32));
            }
            if sigma_eps > 0.0 {
                let mut noise_rng = rng::stream(seed, Purpose::Noise, idx as u64);
                for xv in x.iter_mut() {
                    let e: f64 = StandardNormal.sample(&mut noise_rng);
                    *xv += sigma_eps * e;
                }
            }
            Row {
                x: x.into_iter().map(|v| v as f32).collect(),
                active: picks.iter().map(|&p| zoo.instances[p].instance_id).collect(),
                contributions,
            }
        })
        .collect();

    let mut x = Array2::zeros((n, d));
    let mut masks = Array2::from_elem((n, m), false);
    let mut active = Array2::zeros((n, l0));
    let mut contributions = Array3::zeros((n, l0, d));
    let ids = zoo.instance_ids();
    for (idx, row) in rows.into_iter().enumerate() {
        x.row_mut(idx).assign(&ArrayView1::from(&row.x));
        for (j, &id) in row.active.iter().enumerate() {
            active[[idx, j]] = id;
            let col = ids.iter().position(|&i| i == id).expect("known id");
            masks[[idx, col]] = true;
        }
        contributions.slice_mut(ndarray::s![idx, .., ..]).assign(
            &ArrayView1::from(&row.contributions)
                .into_shape_with_order((l0, d))
                .expect("shape"),
        );
    }
    Ok(MixtureDataset {
        meta: DatasetMeta {
            n,
            d,
            m,
            l0,
            sigma_eps,
            seed,
            instance_ids: ids,
        },
        x,
        masks,
        active,
        contributions,
    })
}

/// Writes the `MSBD` binary layout.
pub fn write_dataset<W: Write>(dataset: &MixtureDataset, mut out: W) -> Result<()> {
    let header = serde_json::to_vec(&dataset.meta)?;
    out.write_all(DATASET_MAGIC)?;
    out.write_all(&DATASET_VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(&header)?;
    let mut buf = Vec::with_capacity(dataset.meta.d * 4);
    for row in dataset.x.rows() {
        buf.clear();
        for &v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    let masks: Vec<u8> = dataset.masks.iter().map(|&b| b as u8).collect();
    out.write_all(&masks)?;
    for n in 0..dataset.meta.n {
        for j in 0..dataset.meta.l0 {
            buf.clear();
            buf.extend_from_slice(&dataset.active[[n, j]].to_le_bytes());
            for &v in dataset.contributions.slice(ndarray::s![n, j, ..]) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn save_dataset(dataset: &MixtureDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_dataset(dataset, std::io::BufWriter::new(file))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<MixtureDataset> {
    read_dataset(&std::fs::read(path)?)
}

/// Little-endian cursor that reports byte offsets on failure.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if len > remaining {
            return Err(Error::Truncated {
                offset: self.bytes.len() as u64,
                expected: (len - remaining) as u64,
            });
        }
        let slice = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(slice)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let bytes = self.take(
            count
                .checked_mul(4)
                .ok_or_else(|| Error::format(self.offset(), "size overflow"))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 4], version: u32) -> Result<()> {
        let found = self.take(4).map_err(|_| Error::format(0, "file shorter than magic"))?;
        if found != magic {
            return Err(Error::format(0, format!("bad magic {found:?}, expected {magic:?}")));
        }
        let at = self.offset();
        let v = self.u32()?;
        if v != version {
            return Err(Error::format(at, format!("unsupported version {v}")));
        }
        Ok(())
    }

    pub(crate) fn json_header<T: serde::de::DeserializeOwned>(&mut self) -> Result<T> {
        let len = self.u32()? as usize;
        let at = self.offset();
        let bytes = self.take(len)?;
        serde_json::from_slice(bytes).map_err(|e| Error::format(at, format!("header: {e}")))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.offset(),
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub fn read_dataset(bytes: &[u8]) -> Result<MixtureDataset> {
    let mut r = Reader::new(bytes);
    r.expect_magic(DATASET_MAGIC, DATASET_VERSION)?;
    let header_at = r.offset();
    let meta: DatasetMeta = r.json_header()?;
    if meta.instance_ids.len() != meta.m {
        return Err(Error::format(
            header_at,
            format!("m = {} but {} instance ids", meta.m, meta.instance_ids.len()),
        ));
    }
    if meta.l0 > meta.m {
        return Err(Error::format(
            header_at,
            format!("L0 = {} exceeds m = {}", meta.l0, meta.m),
        ));
    }
    let (n, d, m, l0) = (meta.n, meta.d, meta.m, meta.l0);
    let cells = n
        .checked_mul(d)
        .ok_or_else(|| Error::format(header_at, "N * d overflows"))?;
    let x = Array2::from_shape_vec((n, d), r.f32s(cells)?).expect("shape");

    let mask_at = r.offset();
    let mask_bytes = r.take(n * m)?;
    let mut masks = Array2::from_elem((n, m), false);
    for (i, (&b, slot)) in mask_bytes.iter().zip(masks.iter_mut()).enumerate() {
        *slot = match b {
            0 => false,
            1 => true,
            other => {
                return Err(Error::format(
                    mask_at + i as u64,
                    format!("mask byte {other} is not 0/1"),
                ))
            }
        };
    }

    let mut active = Array2::zeros((n, l0));
    let mut contributions = Array3::zeros((n, l0, d));
    for s in 0..n {
        for j in 0..l0 {
            let at = r.offset();
            let id = r.u32()?;
            let col = meta
                .instance_ids
                .iter()
                .position(|&i| i == id)
                .ok_or_else(|| Error::format(at, format!("unknown instance id {id}")))?;
            if !masks[[s, col]] {
                return Err(Error::format(at, format!("sample {s}: instance {id} not set in mask")));
            }
            active[[s, j]] = id;
            let values = r.f32s(d)?;
            contributions
                .slice_mut(ndarray::s![s, j, ..])
                .assign(&ArrayView1::from(&values));
        }
        let set = masks.row(s).iter().filter(|&&b| b).count();
        if set != l0 {
            return Err(Error::format(
                mask_at + (s * m) as u64,
                format!("sample {s} has {set} active, L0 = {l0}"),
            ));
        }
    }
    r.finish()?;
    Ok(MixtureDataset {
        meta,
        x,
        masks,
        active,
        contributions,
    })
}
