use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{normalize_rows, top_k_positive, Adam, SaeModel};
use crate::codes::CodeMatrix;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Rows per gradient partial; partials are summed in chunk order so results do
/// not depend on the thread count.
const GRAD_CHUNK: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the dead-atom reanimation term.
    pub beta: f64,
    /// Pre-activation level a dead atom is pushed towards.
    pub margin: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            epochs: 10,
            batch_size: 1024,
            beta: 1e-2,
            margin: 1e-3,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.beta >= 0.0 && self.margin >= 0.0) {
            return Err(Error::Config(
                "reanimation weight and margin must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Atoms that never fired during the epoch.
    pub dead_count: usize,
    pub mean_l0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub hyper: TrainHyper,
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,dead_count,mean_l0\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.mean_loss, e.dead_count, e.mean_l0));
        }
        out
    }
}

/// Gradients in the model's storage layout (`c x d` each).
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub encoder: Array2<f64>,
    pub dictionary: Array2<f64>,
}

struct BatchPass {
    loss: f64,
    grads: Gradients,
    fired: Vec<bool>,
    nnz: usize,
}

struct Partial {
    loss: f64,
    encoder: Array2<f64>,
    dictionary: Array2<f64>,
}

/// Loss and gradient with the code support either chosen by TopK or frozen.
/// With a frozen support the code of atom `j` is its raw pre-activation.
fn batch_pass(
    model: &SaeModel,
    batch: ArrayView2<f64>,
    frozen: Option<&[Vec<usize>]>,
    beta: f64,
    margin: f64,
) -> Result<BatchPass> {
    let (b, d) = batch.dim();
    if b == 0 {
        return Err(Error::EmptyRequest("loss needs a nonempty batch".into()));
    }
    model.check_input(d)?;
    let c = model.c();
    let pre = batch.dot(&model.encoder.t());
    if pre.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite pre-activation".into()));
    }
    let supports: Vec<Vec<(usize, f64)>> = match frozen {
        Some(s) => {
            if s.len() != b {
                return Err(Error::Dimension(format!("{} supports for {b} samples", s.len())));
            }
            s.iter()
                .zip(pre.rows())
                .map(|(idx, p)| idx.iter().map(|&j| (j, p[j])).collect())
                .collect()
        }
        None => pre
            .rows()
            .into_iter()
            .map(|p| top_k_positive(p.as_slice().expect("contiguous"), model.k))
            .collect(),
    };
    let mut fired = vec![false; c];
    let mut nnz = 0;
    for s in &supports {
        nnz += s.len();
        for &(j, _) in s {
            fired[j] = true;
        }
    }
    let dead: Vec<usize> = if beta > 0.0 {
        (0..c).filter(|&j| !fired[j]).collect()
    } else {
        Vec::new()
    };
    let inv_b = 1.0 / b as f64;
    let dict = &model.dictionary;

    let partials: Vec<Partial> = (0..b.div_ceil(GRAD_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut part = Partial {
                loss: 0.0,
                encoder: Array2::zeros((c, d)),
                dictionary: Array2::zeros((c, d)),
            };
            let mut recon = vec![0.0; d];
            let mut sign = vec![0.0; d];
            for n in chunk * GRAD_CHUNK..((chunk + 1) * GRAD_CHUNK).min(b) {
                let x = batch.row(n);
                recon.iter_mut().for_each(|v| *v = 0.0);
                for &(j, z) in &supports[n] {
                    for (r, &w) in recon.iter_mut().zip(dict.row(j)) {
                        *r += z * w;
                    }
                }
                for t in 0..d {
                    let resid = recon[t] - x[t];
                    part.loss += resid.abs() * inv_b;
                    sign[t] = if resid > 0.0 {
                        inv_b
                    } else if resid < 0.0 {
                        -inv_b
                    } else {
                        0.0
                    };
                }
                for &(j, z) in &supports[n] {
                    let dz: f64 = dict.row(j).iter().zip(&sign).map(|(w, s)| w * s).sum();
                    let mut gd = part.dictionary.row_mut(j);
                    for (g, &s) in gd.iter_mut().zip(&sign) {
                        *g += z * s;
                    }
                    let mut ge = part.encoder.row_mut(j);
                    for (g, &xv) in ge.iter_mut().zip(x) {
                        *g += dz * xv;
                    }
                }
                for &j in &dead {
                    let gap = margin - pre[[n, j]];
                    if gap > 0.0 {
                        part.loss += beta * inv_b * gap;
                        let mut ge = part.encoder.row_mut(j);
                        for (g, &xv) in ge.iter_mut().zip(x) {
                            *g -= beta * inv_b * xv;
                        }
                    }
                }
            }
            part
        })
        .collect();

    let mut total = Partial {
        loss: 0.0,
        encoder: Array2::zeros((c, d)),
        dictionary: Array2::zeros((c, d)),
    };
    for p in partials {
        total.loss += p.loss;
        total.encoder += &p.encoder;
        total.dictionary += &p.dictionary;
    }
    Ok(BatchPass {
        loss: total.loss,
        grads: Gradients {
            encoder: total.encoder,
            dictionary: total.dictionary,
        },
        fired,
        nnz,
    })
}

/// Mean per-sample `l1` reconstruction error plus the weighted reanimation term.
pub fn loss(model: &SaeModel, batch: ArrayView2<f64>, hyper: &TrainHyper) -> Result<f64> {
    let pass = batch_pass(model, batch, None, hyper.beta, hyper.margin)?;
    if !pass.loss.is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }
    Ok(pass.loss)
}

pub fn loss_and_grad(model: &SaeModel, batch: ArrayView2<f64>, hyper: &TrainHyper) -> Result<(f64, Gradients)> {
    let pass = batch_pass(model, batch, None, hyper.beta, hyper.margin)?;
    Ok((pass.loss, pass.grads))
}

/// `l1` term and its gradient with each sample's active set fixed to `supports`.
pub fn frozen_l1_loss_and_grad(
    model: &SaeModel,
    batch: ArrayView2<f64>,
    supports: &[Vec<usize>],
) -> Result<(f64, Gradients)> {
    let pass = batch_pass(model, batch, Some(supports), 0.0, 0.0)?;
    Ok((pass.loss, pass.grads))
}

/// True where an atom is zero on every row.
pub fn dead_atoms(codes: &CodeMatrix) -> Vec<bool> {
    codes.column_counts().into_iter().map(|n| n == 0).collect()
}

/// Removes the component of each dictionary-row gradient along the row itself.
fn project_tangent(dictionary: &Array2<f64>, grad: &mut Array2<f64>) {
    for (row, mut g) in dictionary.rows().into_iter().zip(grad.rows_mut()) {
        let radial = row.dot(&g);
        g.scaled_add(-radial, &row);
    }
}

/// Trains a TopK SAE with Adam, keeping dictionary rows on the unit sphere.
pub fn train(x: ArrayView2<f32>, c: usize, k: usize, hyper: &TrainHyper, seed: u64) -> Result<(SaeModel, TrainLog)> {
    hyper.validate()?;
    let (n, d) = x.dim();
    if n == 0 {
        return Err(Error::EmptyRequest("training set is empty".into()));
    }
    if k == 0 || k > c {
        return Err(Error::Config(format!("need c >= k >= 1, got c={c}, k={k}")));
    }
    let mut model = SaeModel::init(d, c, k, &mut rng::stream(seed, Purpose::Training, 0))?;
    let mut enc_opt = Adam::new(c * d, hyper.lr);
    let mut dict_opt = Adam::new(c * d, hyper.lr);
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = TrainLog {
        hyper: hyper.clone(),
        epochs: Vec::with_capacity(hyper.epochs),
    };
    let mut step = 0;
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng::stream(seed, Purpose::Training, epoch as u64 + 1));
        let mut loss_sum = 0.0;
        let mut nnz = 0;
        let mut fired = vec![false; c];
        for idx in order.chunks(hyper.batch_size) {
            let batch = x.select(Axis(0), idx).mapv(|v| v as f64);
            let mut pass =
                batch_pass(&model, batch.view(), None, hyper.beta, hyper.margin).map_err(|e| Error::Training {
                    step,
                    message: e.to_string(),
                })?;
            let finite = pass.loss.is_finite()
                && pass.grads.encoder.iter().all(|v| v.is_finite())
                && pass.grads.dictionary.iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::Training {
                    step,
                    message: format!("non-finite loss {}", pass.loss),
                });
            }
            loss_sum += pass.loss * idx.len() as f64;
            nnz += pass.nnz;
            for (f, p) in fired.iter_mut().zip(&pass.fired) {
                *f |= *p;
            }
            let (encoder, dictionary) = model.params_mut();
            project_tangent(dictionary, &mut pass.grads.dictionary);
            enc_opt.step(
                encoder.as_slice_mut().expect("contiguous"),
                pass.grads.encoder.as_slice().expect("contiguous"),
            );
            dict_opt.step(
                dictionary.as_slice_mut().expect("contiguous"),
                pass.grads.dictionary.as_slice().expect("contiguous"),
            );
            normalize_rows(dictionary);
            step += 1;
        }
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / n as f64,
            dead_count: fired.iter().filter(|&&f| !f).count(),
            mean_l0: nnz as f64 / n as f64,
        };
        log::debug!(
            "epoch {epoch}: loss {:.5} dead {} l0 {:.2}",
            stats.mean_loss,
            stats.dead_count,
            stats.mean_l0
        );
        log.epochs.push(stats);
    }
    Ok((model, log))
}
