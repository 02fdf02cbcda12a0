//! Sparse-recovery checks on a dictionary: mutual coherence, the coherence
//! exact-recovery condition, orthogonal matching pursuit, and measured capture
//! precision of an atom set on a manifold sample.

use std::sync::OnceLock;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const UNIT_TOLERANCE: f64 = 1e-6;

/// Dictionary with unit-norm atoms as rows (`c x d`).
#[derive(Clone, Debug)]
pub struct Dictionary {
    atoms: Array2<f64>,
    coherence: OnceLock<f64>,
}

impl Dictionary {
    pub fn new(atoms: Array2<f64>) -> Result<Self> {
        for (i, row) in atoms.rows().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::Precondition(format!("atom {i} has norm {norm}, expected 1")));
            }
        }
        Ok(Self {
            atoms,
            coherence: OnceLock::new(),
        })
    }

    pub fn atoms(&self) -> &Array2<f64> {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn atom(&self, j: usize) -> ArrayView1<'_, f64> {
        self.atoms.row(j)
    }

    /// `max_{i != j} |<D_i, D_j>|`, computed once.
    pub fn coherence(&self) -> f64 {
        *self.coherence.get_or_init(|| {
            let gram = self.atoms.dot(&self.atoms.t());
            gram.indexed_iter()
                .filter(|((i, j), _)| i != j)
                .map(|(_, g)| g.abs())
                .fold(0.0, f64::max)
                .min(1.0)
        })
    }
}

/// Mutual coherence of a dictionary given as unit rows.
pub fn mutual_coherence(atoms: ArrayView2<f64>) -> Result<f64> {
    Ok(Dictionary::new(atoms.to_owned())?.coherence())
}

/// Coherence exact-recovery condition `mu < 1 / (2k - 1)`.
pub fn erc_holds(mu: f64, k: usize) -> bool {
    k >= 1 && mu < 1.0 / (2 * k - 1) as f64
}

/// Margin by which `mu` satisfies the recovery condition at sparsity `k`.
pub fn erc_margin(mu: f64, k: usize) -> f64 {
    1.0 / (2 * k.max(1) - 1) as f64 - mu
}

#[derive(Clone, Debug, PartialEq)]
pub struct OmpResult {
    /// Dense coefficient vector over all atoms.
    pub code: Vec<f64>,
    /// Selected atoms in selection order.
    pub support: Vec<usize>,
    /// Residual norm before the first and after every selection.
    pub residual_norms: Vec<f64>,
}

/// Orthogonal matching pursuit with a Gram-Schmidt factorization of the
/// selected atoms. Stops after `k` atoms, when the residual norm drops to
/// `tol`, or when no atom correlates with the residual.
pub fn omp(x: &[f64], dict: &Dictionary, k: usize, tol: f64) -> Result<OmpResult> {
    let (c, d) = (dict.len(), dict.dim());
    if x.len() != d {
        return Err(Error::Dimension(format!(
            "signal has length {}, atoms have {d}",
            x.len()
        )));
    }
    if k > c {
        return Err(Error::Config(format!("sparsity {k} exceeds dictionary size {c}")));
    }
    let x = ArrayView1::from(x);
    let x_norm = x.dot(&x).sqrt();
    let mut residual = x.to_owned();
    let mut basis: Vec<ndarray::Array1<f64>> = Vec::with_capacity(k);
    // r[(i, j)]: coefficient of basis vector i in selected atom j
    let mut r = Array2::<f64>::zeros((k, k));
    let mut support = Vec::with_capacity(k);
    let mut selected = vec![false; c];
    let mut residual_norms = vec![x_norm];

    while support.len() < k && *residual_norms.last().expect("nonempty") > tol {
        let corr = dict.atoms.dot(&residual);
        let mut best: Option<(usize, f64)> = None;
        for (j, &v) in corr.iter().enumerate() {
            if !selected[j] && best.is_none_or(|(_, b)| v.abs() > b) {
                best = Some((j, v.abs()));
            }
        }
        let Some((j, score)) = best else { break };
        if score <= 1e-14 * x_norm.max(f64::MIN_POSITIVE) {
            break;
        }
        let atom = dict.atom(j);
        let mut v = atom.to_owned();
        let col = support.len();
        for _ in 0..2 {
            for (i, q) in basis.iter().enumerate() {
                let proj = q.dot(&v);
                r[(i, col)] += proj;
                v.scaled_add(-proj, q);
            }
        }
        let nu = v.dot(&v).sqrt();
        if nu < 1e-10 {
            let mut indices = support.clone();
            indices.push(j);
            return Err(Error::Numeric(format!(
                "selected atoms {indices:?} are linearly dependent"
            )));
        }
        v /= nu;
        r[(col, col)] = nu;
        let proj = v.dot(&residual);
        residual.scaled_add(-proj, &v);
        basis.push(v);
        support.push(j);
        selected[j] = true;
        residual_norms.push(residual.dot(&residual).sqrt());
    }

    // back-substitute R coef = Q^T x
    let s = support.len();
    let rhs: Vec<f64> = basis.iter().map(|q| q.dot(&x)).collect();
    let mut coef = vec![0.0; s];
    for i in (0..s).rev() {
        let tail: f64 = (i + 1..s).map(|j| r[(i, j)] * coef[j]).sum();
        coef[i] = (rhs[i] - tail) / r[(i, i)];
    }
    let mut code = vec![0.0; c];
    for (&j, &v) in support.iter().zip(&coef) {
        code[j] = v;
    }
    Ok(OmpResult {
        code,
        support,
        residual_norms,
    })
}

/// Result of checking whether a fixed atom set reconstructs a manifold sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptureCertificate {
    pub support: Vec<usize>,
    /// Worst residual using only the support atoms.
    pub precision: f64,
    pub erc_margin: f64,
    /// `precision / lambda`, with `lambda` the worst full-code reconstruction
    /// error; absent when `lambda` is zero.
    #[serde(rename = "measured_C")]
    pub measured_c: Option<f64>,
    /// Worst full-code reconstruction error.
    pub reconstruction_error: f64,
}

/// Measures capture of `points` (rows, centered by subtracting `center`) by
/// the atoms in `support`, using the supplied codes (`points x c`).
pub fn capture_check(
    points: ArrayView2<f64>,
    center: Option<&[f64]>,
    dict: &Dictionary,
    support: &[usize],
    codes: ArrayView2<f64>,
) -> Result<CaptureCertificate> {
    let (n, d) = points.dim();
    if d != dict.dim() || codes.nrows() != n || codes.ncols() != dict.len() {
        return Err(Error::Dimension(format!(
            "points {:?}, codes {:?}, dictionary {}x{}",
            points.dim(),
            codes.dim(),
            dict.len(),
            dict.dim()
        )));
    }
    if let Some(c) = center {
        if c.len() != d {
            return Err(Error::Dimension(format!("center has length {}, expected {d}", c.len())));
        }
    }
    if let Some(&bad) = support.iter().find(|&&j| j >= dict.len()) {
        return Err(Error::Dimension(format!("support atom {bad} out of range")));
    }
    let mut in_support = vec![false; dict.len()];
    for &j in support {
        in_support[j] = true;
    }
    let mut precision: f64 = 0.0;
    let mut lambda: f64 = 0.0;
    for (p, z) in points.rows().into_iter().zip(codes.rows()) {
        let mut restricted: Vec<f64> = match center {
            Some(c) => p.iter().zip(c).map(|(a, b)| a - b).collect(),
            None => p.to_vec(),
        };
        let mut full = restricted.clone();
        for (j, &zj) in z.iter().enumerate() {
            if zj == 0.0 {
                continue;
            }
            let atom = dict.atom(j);
            for t in 0..d {
                full[t] -= zj * atom[t];
                if in_support[j] {
                    restricted[t] -= zj * atom[t];
                }
            }
        }
        precision = precision.max(restricted.iter().map(|v| v * v).sum::<f64>().sqrt());
        lambda = lambda.max(full.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok(CaptureCertificate {
        support: support.to_vec(),
        precision,
        erc_margin: erc_margin(dict.coherence(), support.len()),
        measured_c: (lambda > 0.0).then(|| precision / lambda),
        reconstruction_error: lambda,
    })
}
