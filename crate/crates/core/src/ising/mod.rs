//! Unsupervised discovery of atom groups from sparse codes: binarization,
//! pseudo-likelihood Ising fitting, community detection on coupling
//! magnitudes, spectral-gap validation, and regime classification.

mod io;
mod louvain;
mod plm;

use ndarray::{Array2, ArrayView2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codes::CodeMatrix;
use crate::error::{Error, Result};
use crate::eval::pca_spectrum;

pub use io::{load_fit, read_fit, save_fit, write_fit, FitHeader, FIT_MAGIC, FIT_VERSION};
pub use louvain::{canonical_labels, louvain, modularity};
pub use plm::{ebic, lambda_grid, node_neg_log_pl, plm_fit, IsingFit, PlmSettings};

/// `N x c` spins stored as the sorted list of up (+1) atoms per sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpinData {
    n_cols: usize,
    indptr: Vec<usize>,
    up: Vec<u32>,
}

impl SpinData {
    pub fn from_up_lists<I, R>(n_cols: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = usize>,
    {
        let mut out = Self {
            n_cols,
            indptr: vec![0],
            up: Vec::new(),
        };
        for row in rows {
            let start = out.up.len();
            out.up.extend(row.into_iter().map(|j| j as u32));
            let slice = &mut out.up[start..];
            slice.sort_unstable();
            if slice.windows(2).any(|w| w[0] == w[1]) || slice.last().is_some_and(|&j| j as usize >= n_cols) {
                return Err(Error::Dimension(format!("invalid up list for {n_cols} spins")));
            }
            out.indptr.push(out.up.len());
        }
        Ok(out)
    }

    /// From a dense `N x c` matrix of +1/-1 entries.
    pub fn from_dense(spins: ArrayView2<i8>) -> Result<Self> {
        if let Some(bad) = spins.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::Domain(format!("spin entries must be +1 or -1, found {bad}")));
        }
        Self::from_up_lists(
            spins.ncols(),
            spins.rows().into_iter().map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &s)| s == 1)
                    .map(|(j, _)| j)
                    .collect::<Vec<_>>()
            }),
        )
    }

    pub fn n_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn up(&self, row: usize) -> &[u32] {
        &self.up[self.indptr[row]..self.indptr[row + 1]]
    }

    pub fn dense_row(&self, row: usize) -> Vec<i8> {
        let mut out = vec![-1; self.n_cols];
        for &j in self.up(row) {
            out[j as usize] = 1;
        }
        out
    }

    pub fn to_dense(&self) -> Array2<i8> {
        let mut out = Array2::from_elem((self.n_rows(), self.n_cols), -1i8);
        for row in 0..self.n_rows() {
            for &j in self.up(row) {
                out[[row, j as usize]] = 1;
            }
        }
        out
    }

    pub fn head(&self, rows: usize) -> Self {
        let rows = rows.min(self.n_rows());
        Self {
            n_cols: self.n_cols,
            indptr: self.indptr[..=rows].to_vec(),
            up: self.up[..self.indptr[rows]].to_vec(),
        }
    }
}

/// `+1` where the code is strictly positive, `-1` elsewhere.
pub fn binarize(codes: &CodeMatrix) -> SpinData {
    let rows = (0..codes.n_rows()).map(|n| {
        let (idx, vals) = codes.row(n);
        idx.iter()
            .zip(vals)
            .filter(|(_, &v)| v > 0.0)
            .map(|(&j, _)| j as usize)
            .collect::<Vec<_>>()
    });
    SpinData::from_up_lists(codes.n_cols(), rows).expect("code rows are valid")
}

/// Exact samples from `p(s) ~ exp(sum_{a<b} J_ab s_a s_b + sum_a h_a s_a)` by
/// enumerating all `2^c` states.
pub fn exact_sample<R: Rng + ?Sized>(j: &Array2<f64>, h: &[f64], n: usize, rng: &mut R) -> Result<SpinData> {
    let c = h.len();
    if j.dim() != (c, c) {
        return Err(Error::Dimension(format!("couplings {:?} for {c} fields", j.dim())));
    }
    if c > 20 {
        return Err(Error::Config(format!(
            "exact enumeration supports at most 20 spins, got {c}"
        )));
    }
    let states = 1usize << c;
    let spin = |state: usize, a: usize| if state >> a & 1 == 1 { 1.0 } else { -1.0 };
    let log_w: Vec<f64> = (0..states)
        .map(|state| {
            let mut e = 0.0;
            for a in 0..c {
                let sa = spin(state, a);
                e += h[a] * sa;
                for b in a + 1..c {
                    e += j[[a, b]] * sa * spin(state, b);
                }
            }
            e
        })
        .collect();
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
    let dist = WeightedIndex::new(&weights).map_err(|e| Error::Numeric(e.to_string()))?;
    let rows = (0..n).map(|_| {
        let state = dist.sample(rng);
        (0..c).filter(move |&a| state >> a & 1 == 1)
    });
    SpinData::from_up_lists(c, rows)
}

/// Mean sign of the couplings over unordered pairs of `group`; zero couplings
/// count as zero.
pub fn signed_cohesion(j: &Array2<f64>, group: &[usize]) -> Result<f64> {
    if group.len() < 2 {
        return Err(Error::Undefined(format!(
            "cohesion needs at least 2 atoms, got {}",
            group.len()
        )));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (i, &a) in group.iter().enumerate() {
        for &b in &group[i + 1..] {
            let v = j[[a, b]];
            sum += if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            };
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Capture,
    Shattering,
    Dilution,
    Indeterminate,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Capture => "capture",
            Regime::Shattering => "shattering",
            Regime::Dilution => "dilution",
            Regime::Indeterminate => "indeterminate",
        })
    }
}

/// Regime label from group size, subspace dimension and cohesion.
pub fn classify_regime(group_size: usize, k_m: usize, rho: f64, tau: f64, size_factor: f64) -> Regime {
    let compact = group_size as f64 <= size_factor * k_m as f64;
    if compact && rho >= tau {
        Regime::Capture
    } else if !compact && rho <= -tau {
        Regime::Shattering
    } else if !compact && rho.abs() < tau {
        Regime::Dilution
    } else {
        Regime::Indeterminate
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupValidation {
    /// Largest eigenvalue ratio among ranks `1..|G|`.
    pub spectral_gap: f64,
    /// Rank at which that ratio occurs.
    pub rank: usize,
    pub validated: bool,
    pub reason: Option<String>,
}

/// Spectral-gap check on codes restricted to a group (`N x |G|`), using only
/// samples where some group atom fires.
pub fn validate_group(restricted: &CodeMatrix, gap_threshold: f64) -> Result<GroupValidation> {
    let g = restricted.n_cols();
    if g < 2 {
        return Err(Error::Undefined(format!("validation needs at least 2 atoms, got {g}")));
    }
    let rows: Vec<usize> = (0..restricted.n_rows())
        .filter(|&n| !restricted.row(n).0.is_empty())
        .collect();
    if rows.len() < 2 {
        return Ok(GroupValidation {
            spectral_gap: 0.0,
            rank: 0,
            validated: false,
            reason: Some(format!("only {} samples activate the group", rows.len())),
        });
    }
    let x = restricted.select_rows(&rows).to_dense().mapv(f64::from);
    let spectrum = pca_spectrum(x.view(), g - 1)?;
    let Some((rank, gap)) = spectrum.max_gap(g - 1) else {
        unreachable!("at least one gap for two or more atoms")
    };
    if spectrum.eigenvalues[0] <= 0.0 {
        return Ok(GroupValidation {
            spectral_gap: gap,
            rank,
            validated: false,
            reason: Some("group codes have no variance".into()),
        });
    }
    Ok(GroupValidation {
        spectral_gap: gap,
        rank,
        validated: gap >= gap_threshold,
        reason: (gap < gap_threshold).then(|| format!("largest gap {gap:.3} below threshold {gap_threshold}")),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscoverSettings {
    pub plm: PlmSettings,
    pub resolution: f64,
    pub tau: f64,
    pub size_factor: f64,
    pub gap_threshold: f64,
    /// Fit on at most this many leading samples.
    pub max_samples: Option<usize>,
    pub louvain_seed: Option<u64>,
}

impl Default for DiscoverSettings {
    fn default() -> Self {
        Self {
            plm: PlmSettings::default(),
            resolution: 1.0,
            tau: 0.5,
            size_factor: 2.0,
            gap_threshold: 3.0,
            max_samples: None,
            louvain_seed: None,
        }
    }
}

impl DiscoverSettings {
    pub fn validate(&self) -> Result<()> {
        self.plm.validate()?;
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau must be in (0, 1], got {}", self.tau)));
        }
        if !(self.resolution > 0.0) || !(self.size_factor > 0.0) || !(self.gap_threshold >= 1.0) {
            return Err(Error::Config(
                "resolution and size factor must be positive, gap threshold at least 1".into(),
            ));
        }
        if self.max_samples == Some(0) {
            return Err(Error::Config("max_samples must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscoveredGroup {
    pub atoms: Vec<usize>,
    pub cohesion: f64,
    pub regime: Regime,
    #[serde(with = "gap_serde")]
    pub spectral_gap: f64,
    pub validated: bool,
    /// Estimated subspace dimension: the rank of the largest spectral gap.
    pub k_estimate: usize,
}

mod gap_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectedGroup {
    pub atoms: Vec<usize>,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discovery {
    pub fit: IsingFit,
    /// Community label of every atom.
    pub partition: Vec<usize>,
    /// Validated groups, largest first.
    pub groups: Vec<DiscoveredGroup>,
    pub rejected: Vec<RejectedGroup>,
}

impl Discovery {
    pub fn report_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.groups)?)
    }
}

/// Binarize, fit, partition `|J|`, then score and validate every community
/// with at least two atoms. A failing community is recorded as rejected.
pub fn discover(codes: &CodeMatrix, settings: &DiscoverSettings) -> Result<Discovery> {
    let fit = fit_codes(codes, settings)?;
    analyze_fit(codes, fit, settings)
}

/// Binarizes at most `max_samples` leading rows and fits the Ising model.
pub fn fit_codes(codes: &CodeMatrix, settings: &DiscoverSettings) -> Result<IsingFit> {
    settings.validate()?;
    let mut spins = binarize(codes);
    if let Some(cap) = settings.max_samples {
        spins = spins.head(cap);
    }
    plm_fit(&spins, &settings.plm)
}

/// Everything after the fit: partition `|J|`, then score and validate each
/// community on the leading `fit.n_samples` code rows.
pub fn analyze_fit(codes: &CodeMatrix, fit: IsingFit, settings: &DiscoverSettings) -> Result<Discovery> {
    settings.validate()?;
    if fit.c() != codes.n_cols() || fit.n_samples > codes.n_rows() {
        return Err(Error::Dimension(format!(
            "fit over {} spins and {} samples, codes are {} x {}",
            fit.c(),
            fit.n_samples,
            codes.n_rows(),
            codes.n_cols()
        )));
    }
    let partition = louvain(fit.j.view(), settings.resolution, settings.louvain_seed);
    let n_groups = partition.iter().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); n_groups];
    for (atom, &label) in partition.iter().enumerate() {
        members[label].push(atom);
    }
    let rows: Vec<usize> = (0..fit.n_samples).collect();
    let sample_codes = codes.select_rows(&rows);
    let mut groups = Vec::new();
    let mut rejected = Vec::new();
    for atoms in members.into_iter().filter(|m| m.len() >= 2) {
        let outcome = signed_cohesion(&fit.j, &atoms).and_then(|rho| {
            let v = validate_group(&sample_codes.select_cols(&atoms), settings.gap_threshold)?;
            Ok((rho, v))
        });
        match outcome {
            Ok((rho, v)) if v.validated => groups.push(DiscoveredGroup {
                regime: classify_regime(atoms.len(), v.rank, rho, settings.tau, settings.size_factor),
                atoms,
                cohesion: rho,
                spectral_gap: v.spectral_gap,
                validated: true,
                k_estimate: v.rank,
            }),
            Ok((_, v)) => rejected.push(RejectedGroup {
                atoms,
                reason: v.reason.unwrap_or_default(),
            }),
            Err(e) => rejected.push(RejectedGroup {
                atoms,
                reason: e.to_string(),
            }),
        }
    }
    groups.sort_by(|a, b| b.atoms.len().cmp(&a.atoms.len()).then(a.atoms.cmp(&b.atoms)));
    Ok(Discovery {
        fit,
        partition,
        groups,
        rejected,
    })
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same items");
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let mut table = std::collections::HashMap::<(usize, usize), u64>::new();
    let mut rows = std::collections::HashMap::<usize, u64>::new();
    let mut cols = std::collections::HashMap::<usize, u64>::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let pairs = |v: u64| (v * v.saturating_sub(1) / 2) as f64;
    let index: f64 = table.values().map(|&v| pairs(v)).sum();
    let sum_a: f64 = rows.values().map(|&v| pairs(v)).sum();
    let sum_b: f64 = cols.values().map(|&v| pairs(v)).sum();
    let expected = sum_a * sum_b / pairs(n as u64);
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return if index == max { 1.0 } else { 0.0 };
    }
    (index - expected) / (max - expected)
}

/// F1 of recovered signed edges: an estimated edge counts as correct only if
/// the true coupling is nonzero with the same sign.
pub fn edge_sign_f1(estimate: &Array2<f64>, truth: &Array2<f64>) -> f64 {
    let c = truth.nrows();
    let (mut tp, mut n_est, mut n_true) = (0usize, 0usize, 0usize);
    for a in 0..c {
        for b in a + 1..c {
            let (e, t) = (estimate[[a, b]], truth[[a, b]]);
            if e != 0.0 {
                n_est += 1;
            }
            if t != 0.0 {
                n_true += 1;
            }
            if e != 0.0 && t != 0.0 && e.signum() == t.signum() {
                tp += 1;
            }
        }
    }
    if n_est == 0 && n_true == 0 {
        return 1.0;
    }
    2.0 * tp as f64 / (n_est + n_true) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn binarize_examples() {
        let codes = CodeMatrix::from_dense(array![[0.0f32, 0.5, 0.1], [0.0, 0.0, 0.0], [-1.0, 2.0, 0.0]].view());
        let spins = binarize(&codes).to_dense();
        assert_eq!(spins, array![[-1i8, 1, 1], [-1, -1, -1], [-1, 1, -1]]);
    }

    #[test]
    fn cohesion_examples() {
        let j = array![[0.0, 1.0, 2.0], [1.0, 0.0, -0.5], [2.0, -0.5, 0.0]];
        assert!((signed_cohesion(&j, &[0, 1, 2]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(signed_cohesion(&j, &[0, 1]).unwrap(), 1.0);
        assert_eq!(signed_cohesion(&(-&j.mapv(f64::abs)), &[0, 1, 2]).unwrap(), -1.0);
        assert!(matches!(signed_cohesion(&j, &[1]), Err(Error::Undefined(_))));
        let zero = Array2::<f64>::zeros((2, 2));
        assert_eq!(signed_cohesion(&zero, &[0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn regime_examples() {
        assert_eq!(classify_regime(3, 3, 0.9, 0.5, 2.0), Regime::Capture);
        assert_eq!(classify_regime(40, 3, -0.8, 0.5, 2.0), Regime::Shattering);
        assert_eq!(classify_regime(40, 3, 0.1, 0.5, 2.0), Regime::Dilution);
        assert_eq!(classify_regime(3, 3, -0.9, 0.5, 2.0), Regime::Indeterminate);
        assert_eq!(classify_regime(40, 3, 0.9, 0.5, 2.0), Regime::Indeterminate);
        assert_eq!(classify_regime(6, 3, 0.5, 0.5, 2.0), Regime::Capture);
        assert_eq!(classify_regime(7, 3, -0.5, 0.5, 2.0), Regime::Shattering);
    }

    #[test]
    fn ari_examples() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 2, 2]), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 1, 2], &[0, 1, 2]), 1.0);
        // sklearn reference value
        let ari = adjusted_rand_index(&[0, 0, 1, 2], &[0, 0, 1, 1]);
        assert!((ari - 0.571_428_571_428_571_4).abs() < 1e-12);
        assert!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) < 0.0);
    }

    #[test]
    fn f1_examples() {
        let truth = array![[0.0, 1.0, 0.0], [1.0, 0.0, -1.0], [0.0, -1.0, 0.0]];
        assert_eq!(edge_sign_f1(&truth, &truth), 1.0);
        let wrong_sign = array![[0.0, -1.0, 0.0], [-1.0, 0.0, -1.0], [0.0, -1.0, 0.0]];
        assert!((edge_sign_f1(&wrong_sign, &truth) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn exact_sampler_matches_two_spin_law() {
        let j = array![[0.0, 0.8], [0.8, 0.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spins = exact_sample(&j, &[0.0, 0.0], 50_000, &mut rng).unwrap();
        let agree = (0..spins.n_rows())
            .filter(|&n| {
                let s = spins.dense_row(n);
                s[0] == s[1]
            })
            .count() as f64
            / 50_000.0;
        // P(s1 = s2) = e^J / (e^J + e^-J)
        let expect = 0.8f64.exp() / (0.8f64.exp() + (-0.8f64).exp());
        assert!((agree - expect).abs() < 0.01);
    }

    #[test]
    fn validation_examples() {
        // codes in an exact 2-dim subspace of 3 coordinates
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rows = Vec::new();
        for _ in 0..200 {
            let (u, v): (f32, f32) = (rng.random::<f32>() + 0.1, rng.random::<f32>() + 0.1);
            rows.push([u, v, u + v]);
        }
        let dense = Array2::from_shape_fn((200, 3), |(i, j)| rows[i][j]);
        let v = validate_group(&CodeMatrix::from_dense(dense.view()), 3.0).unwrap();
        assert!(v.validated);
        assert_eq!(v.rank, 2);
        assert!(v.spectral_gap > 1e6);

        // only one atom of the pair ever fires
        let single = Array2::from_shape_fn((50, 2), |(i, j)| if j == 0 { 1.0 + i as f32 } else { 0.0 });
        let v = validate_group(&CodeMatrix::from_dense(single.view()), 3.0).unwrap();
        assert!(v.validated);
        assert_eq!(v.rank, 1);

        let none = CodeMatrix::from_dense(Array2::<f32>::zeros((10, 2)).view());
        let v = validate_group(&none, 3.0).unwrap();
        assert!(!v.validated);
        assert!(v.reason.is_some());
    }

    #[test]
    fn isotropic_codes_are_not_validated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dense = Array2::from_shape_simple_fn((10_000, 8), || rng.sample::<f32, _>(rand_distr::StandardNormal));
        let v = validate_group(&CodeMatrix::from_dense(dense.view()), 3.0).unwrap();
        assert!(v.spectral_gap <= 1.5);
        assert!(!v.validated);
    }

    #[test]
    fn gap_serializes_infinity_as_null() {
        let g = DiscoveredGroup {
            atoms: vec![1, 2],
            cohesion: 1.0,
            regime: Regime::Capture,
            spectral_gap: f64::INFINITY,
            validated: true,
            k_estimate: 1,
        };
        let text = serde_json::to_string(&g).unwrap();
        assert!(text.contains("\"spectral_gap\":null"));
        assert!(text.contains("\"regime\":\"capture\""));
        let back: DiscoveredGroup = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g);
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

        proptest! {
            #[test]
            fn binarize_ignores_positive_scale(seed in any::<u64>(), scale in 0.001f32..1000.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let dense = Array2::from_shape_simple_fn((20, 6), || if rng.random::<bool>() { rng.random::<f32>() - 0.3 } else { 0.0 });
                let codes = CodeMatrix::from_dense(dense.view());
                prop_assert_eq!(binarize(&codes), binarize(&codes.scaled(scale)));
            }

            #[test]
            fn cohesion_is_bounded_and_scale_free(seed in any::<u64>(), scale in 0.01f64..100.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut j = Array2::<f64>::zeros((6, 6));
                for a in 0..6 {
                    for b in a + 1..6 {
                        let v = if rng.random::<f64>() < 0.3 { 0.0 } else { rng.random::<f64>() - 0.5 };
                        j[[a, b]] = v;
                        j[[b, a]] = v;
                    }
                }
                let rho = signed_cohesion(&j, &[0, 2, 3, 5]).unwrap();
                prop_assert!((-1.0..=1.0).contains(&rho));
                prop_assert_eq!(rho, signed_cohesion(&(&j * scale), &[0, 2, 3, 5]).unwrap());
            }

            #[test]
            fn regime_is_total(size in 0usize..100, k in 0usize..10, rho in -1.0f64..=1.0, tau in 0.01f64..=1.0) {
                let r = classify_regime(size, k, rho, tau, 2.0);
                let compact = size as f64 <= 2.0 * k as f64;
                match r {
                    Regime::Capture => prop_assert!(compact && rho >= tau),
                    Regime::Shattering => prop_assert!(!compact && rho <= -tau),
                    Regime::Dilution => prop_assert!(!compact && rho.abs() < tau),
                    Regime::Indeterminate => prop_assert!(!(compact && rho >= tau) && (compact || rho.abs() >= tau) && (compact || rho > -tau)),
                }
            }
        }
    }
}
