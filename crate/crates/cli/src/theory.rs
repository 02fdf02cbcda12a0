//! Capture certificates for a trained dictionary, with the learned encoder
//! compared against OMP on isolated manifold samples.

use msb_core::eval::greedy_atoms;
use msb_core::recovery::{capture_check, erc_holds, omp};
use msb_core::zoo::ManifoldKind;
use msb_core::{CaptureCertificate, Dictionary, SaeModel, Zoo};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CAPTURE_POINTS: usize = 500;
const OMP_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceCapture {
    pub instance_id: u32,
    pub kind: ManifoldKind,
    pub k_i: usize,
    pub certificate: CaptureCertificate,
    /// Mean Jaccard overlap of encoder and OMP supports at the model's `k`.
    pub omp_agreement: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptureReport {
    pub sae_k: usize,
    pub coherence: f64,
    pub erc_holds: bool,
    pub instances: Vec<InstanceCapture>,
}

fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.iter().filter(|x| b.contains(x)).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// For each instance the support is the `k_i` greedy atoms for its own
/// samples, and codes come from encoding those samples alone.
pub fn capture_report(model: &SaeModel, zoo: &Zoo, points: usize, seed: u64) -> Result<CaptureReport, CliError> {
    let dict = Dictionary::new(model.dictionary().clone())?;
    let coherence = dict.coherence();
    let mut instances = Vec::with_capacity(zoo.len());
    for (idx, inst) in zoo.instances.iter().enumerate() {
        let x = zoo.sample_instance(idx, points, seed);
        let codes = model.encode_batch(x.mapv(|v| v as f32).view())?;
        let dense: Array2<f64> = codes.to_dense().mapv(f64::from);
        let support = greedy_atoms(x.view(), dict.atoms().view(), inst.k_i.min(dict.len()))?;
        let certificate = capture_check(x.view(), None, &dict, &support, dense.view())?;
        let mut overlap = Vec::with_capacity(points);
        for (n, row) in x.rows().into_iter().enumerate() {
            let sample = row.to_vec();
            if let Ok(res) = omp(&sample, &dict, model.k(), OMP_TOL) {
                let mut enc: Vec<usize> = codes.row(n).0.iter().map(|&j| j as usize).collect();
                let mut rec = res.support;
                enc.sort_unstable();
                rec.sort_unstable();
                overlap.push(jaccard(&enc, &rec));
            }
        }
        instances.push(InstanceCapture {
            instance_id: inst.instance_id,
            kind: inst.kind,
            k_i: inst.k_i,
            certificate,
            omp_agreement: (!overlap.is_empty()).then(|| overlap.iter().sum::<f64>() / overlap.len() as f64),
        });
    }
    Ok(CaptureReport {
        sae_k: model.k(),
        coherence,
        erc_holds: erc_holds(coherence, model.k()),
        instances,
    })
}
