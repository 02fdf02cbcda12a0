//! Bias-free TopK sparse autoencoder with a unit-norm dictionary.

mod adam;
mod io;
mod train;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::codes::CodeMatrix;
use crate::error::{Error, Result};

pub use adam::Adam;
pub use io::{load_model, read_model, save_model, write_model, ModelHeader, MODEL_MAGIC, MODEL_VERSION};
pub use train::{
    dead_atoms, frozen_l1_loss_and_grad, loss, loss_and_grad, train, EpochStats, Gradients, TrainHyper, TrainLog,
};

/// Encoder `c x d` and decoder stored as its `c` columns (the dictionary rows).
#[derive(Clone, Debug, PartialEq)]
pub struct SaeModel {
    encoder: Array2<f64>,
    dictionary: Array2<f64>,
    k: usize,
}

impl SaeModel {
    pub fn new(encoder: Array2<f64>, dictionary: Array2<f64>, k: usize) -> Result<Self> {
        if encoder.dim() != dictionary.dim() {
            return Err(Error::Dimension(format!(
                "encoder {:?} and dictionary {:?} disagree",
                encoder.dim(),
                dictionary.dim()
            )));
        }
        let c = encoder.nrows();
        if k == 0 || k > c {
            return Err(Error::Config(format!("sparsity k must be in [1, {c}], got {k}")));
        }
        Ok(Self { encoder, dictionary, k })
    }

    /// Gaussian encoder with entry scale `1/sqrt(d)`; dictionary rows are the
    /// normalized encoder rows.
    pub fn init<R: Rng + ?Sized>(d: usize, c: usize, k: usize, rng: &mut R) -> Result<Self> {
        if d == 0 {
            return Err(Error::Dimension("input dimension must be positive".into()));
        }
        let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid scale");
        let encoder = Array2::from_shape_simple_fn((c, d), || normal.sample(rng));
        let mut dictionary = encoder.clone();
        normalize_rows(&mut dictionary);
        Self::new(encoder, dictionary, k)
    }

    pub fn d(&self) -> usize {
        self.encoder.ncols()
    }

    pub fn c(&self) -> usize {
        self.encoder.nrows()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn encoder(&self) -> &Array2<f64> {
        &self.encoder
    }

    /// Decoder columns as rows (`c x d`).
    pub fn dictionary(&self) -> &Array2<f64> {
        &self.dictionary
    }

    /// `W_dec` in its `d x c` orientation.
    pub fn decoder_matrix(&self) -> Array2<f64> {
        self.dictionary.t().to_owned()
    }

    pub(crate) fn params_mut(&mut self) -> (&mut Array2<f64>, &mut Array2<f64>) {
        (&mut self.encoder, &mut self.dictionary)
    }

    pub fn max_column_norm_error(&self) -> f64 {
        self.dictionary
            .rows()
            .into_iter()
            .map(|r| (r.dot(&r).sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Rectified pre-activations reduced to their `k` largest entries.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        let pre = self.encoder.dot(&ndarray::ArrayView1::from(x));
        let mut z = vec![0.0; self.c()];
        for (j, v) in top_k_positive(pre.as_slice().expect("contiguous"), self.k) {
            z[j] = v;
        }
        Ok(z)
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.c() {
            return Err(Error::Dimension(format!(
                "code has length {}, model has c = {}",
                z.len(),
                self.c()
            )));
        }
        let mut out = vec![0.0; self.d()];
        for (j, &zj) in z.iter().enumerate() {
            if zj != 0.0 {
                for (o, &w) in out.iter_mut().zip(self.dictionary.row(j)) {
                    *o += zj * w;
                }
            }
        }
        Ok(out)
    }

    /// Sparse codes for every row of `x`.
    pub fn encode_batch(&self, x: ArrayView2<f32>) -> Result<CodeMatrix> {
        self.check_input(x.ncols())?;
        let mut codes = CodeMatrix::empty(self.c());
        const CHUNK: usize = 2048;
        for chunk in x.axis_chunks_iter(Axis(0), CHUNK) {
            let pre = chunk.mapv(|v| v as f64).dot(&self.encoder.t());
            for row in pre.rows() {
                let top = top_k_positive(row.as_slice().expect("contiguous"), self.k);
                codes.push_row(top.into_iter().map(|(j, v)| (j, v as f32)));
            }
        }
        Ok(codes)
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.d() {
            return Err(Error::Dimension(format!(
                "input has length {len}, model has d = {}",
                self.d()
            )));
        }
        Ok(())
    }
}

pub(crate) fn normalize_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
}

/// Positive entries of `pre`, keeping the `k` largest by value (lowest index
/// wins ties), returned in increasing index order.
pub fn top_k_positive(pre: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut pos: Vec<(usize, f64)> = pre.iter().copied().enumerate().filter(|&(_, v)| v > 0.0).collect();
    if pos.len() > k {
        let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if k > 0 {
            pos.select_nth_unstable_by(k - 1, order);
        }
        pos.truncate(k);
    }
    pos.sort_unstable_by_key(|e| e.0);
    pos
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_model(k: usize) -> SaeModel {
        SaeModel::new(Array2::eye(4), Array2::eye(4), k).unwrap()
    }

    #[test]
    fn encode_keeps_top_k() {
        assert_eq!(
            identity_model(2).encode(&[3.0, 1.0, 2.0, 0.0]).unwrap(),
            vec![3.0, 0.0, 2.0, 0.0]
        );
    }

    #[test]
    fn encode_rectifies_before_selection() {
        assert_eq!(
            identity_model(2).encode(&[-1.0, -2.0, -3.0, -4.0]).unwrap(),
            vec![0.0; 4]
        );
        assert_eq!(
            identity_model(3).encode(&[-1.0, 2.0, -3.0, 0.5]).unwrap(),
            vec![0.0, 2.0, 0.0, 0.5]
        );
    }

    #[test]
    fn encode_breaks_ties_by_lowest_index() {
        assert_eq!(
            identity_model(1).encode(&[2.0, 2.0, 0.0, 0.0]).unwrap(),
            vec![2.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            identity_model(2).encode(&[1.0, 5.0, 1.0, 1.0]).unwrap(),
            vec![1.0, 5.0, 0.0, 0.0]
        );
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = identity_model(1);
        assert!(matches!(m.encode(&[1.0]), Err(Error::Dimension(_))));
        assert!(matches!(m.decode(&[1.0]), Err(Error::Dimension(_))));
        assert!(SaeModel::new(Array2::eye(4), Array2::eye(4), 5).is_err());
    }

    #[test]
    fn decode_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = SaeModel::init(8, 16, 3, &mut rng).unwrap();
        assert_eq!(m.decode(&[0.0; 16]).unwrap(), vec![0.0; 8]);
        let mut ei = vec![0.0; 16];
        ei[4] = 1.0;
        let col = m.decode(&ei).unwrap();
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() <= 1e-6);
        let mut ej = vec![0.0; 16];
        ej[9] = 1.0;
        let mut both = ei.clone();
        both[9] = 1.0;
        let sum: Vec<f64> = col.iter().zip(m.decode(&ej).unwrap()).map(|(a, b)| a + b).collect();
        let direct = m.decode(&both).unwrap();
        for (a, b) in sum.iter().zip(&direct) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn batch_encoding_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = SaeModel::init(8, 32, 4, &mut rng).unwrap();
        let x = Array2::from_shape_fn((50, 8), |(i, j)| ((i * 7 + j * 3) % 11) as f32 / 5.0 - 1.0);
        let codes = m.encode_batch(x.view()).unwrap();
        for n in 0..50 {
            let row: Vec<f64> = x.row(n).iter().map(|&v| v as f64).collect();
            let z = m.encode(&row).unwrap();
            assert!(z.iter().filter(|&&v| v != 0.0).count() <= 4);
            for (j, &v) in z.iter().enumerate() {
                assert_eq!(codes.get(n, j), v as f32);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

        proptest! {
            #[test]
            fn code_sparsity(seed in any::<u64>(), k in 1usize..8) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = SaeModel::init(6, 12, k, &mut rng).unwrap();
                let x: Vec<f64> = (0..6).map(|_| rng.random::<f64>() - 0.5).collect();
                let pre = m.encoder().dot(&ndarray::ArrayView1::from(&x[..]));
                let positive = pre.iter().filter(|&&v| v > 0.0).count();
                let z = m.encode(&x).unwrap();
                let nnz = z.iter().filter(|&&v| v != 0.0).count();
                prop_assert_eq!(nnz, positive.min(k));
                prop_assert!(z.iter().all(|&v| v >= 0.0));
            }
        }
    }
}
