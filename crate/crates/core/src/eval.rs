//! Capture metrics for a trained dictionary against known manifold
//! contributions: greedy restricted R-squared, tiling support size, receptive
//! field spread, and PCA spectra of code vectors.

use ndarray::{Array1, ArrayView2, Axis};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codes::CodeMatrix;
use crate::error::{Error, Result};
use crate::mixture::{MixtureDataset, Zoo};
use crate::rng::{stream, Purpose};
use crate::sae::SaeModel;
use crate::zoo::ManifoldKind;

pub const SUPPORT_PERCENTILE: f64 = 10.0;
pub const SUPPORT_MIN_FRACTION: f64 = 0.10;
pub const SUPPORT_MIN_COUNT: usize = 30;
pub const DEFAULT_SPREAD_CAP: usize = 2000;

/// Greedily picks `n` atoms (rows of `dict`) that explain the most variance of
/// the centered contributions, deflating by each chosen atom's projection.
pub fn greedy_atoms(contributions: ArrayView2<f64>, dict: ArrayView2<f64>, n: usize) -> Result<Vec<usize>> {
    let (rows, d) = contributions.dim();
    if rows == 0 {
        return Err(Error::EmptyRequest("no contribution points".into()));
    }
    if dict.ncols() != d {
        return Err(Error::Dimension(format!(
            "atoms have length {}, points have {d}",
            dict.ncols()
        )));
    }
    if n == 0 || n > dict.nrows() {
        return Err(Error::Config(format!("cannot select {n} of {} atoms", dict.nrows())));
    }
    let mean = contributions.mean_axis(Axis(0)).expect("nonempty");
    let centered = &contributions - &mean;
    // work with the scatter matrix: deflation R <- R (I - a a^T) maps C to P C P
    let mut scatter = centered.t().dot(&centered);
    let mut chosen = Vec::with_capacity(n);
    let mut taken = vec![false; dict.nrows()];
    for _ in 0..n {
        let projected = dict.dot(&scatter);
        let mut best: Option<(usize, f64)> = None;
        for (j, row) in projected.rows().into_iter().enumerate() {
            if taken[j] {
                continue;
            }
            let score = row.dot(&dict.row(j));
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((j, score));
            }
        }
        let (j, _) = best.expect("n <= atom count");
        taken[j] = true;
        chosen.push(j);
        let a = dict.row(j);
        let norm2 = a.dot(&a);
        if norm2 == 0.0 {
            continue;
        }
        let ca = scatter.dot(&a);
        let aca = a.dot(&ca);
        // P C P with P = I - a a^T / |a|^2
        for r in 0..d {
            for s in 0..d {
                scatter[[r, s]] += -(ca[r] * a[s] + a[r] * ca[s]) / norm2 + a[r] * a[s] * aca / (norm2 * norm2);
            }
        }
    }
    Ok(chosen)
}

/// R-squared of reconstructing `contributions` from the `selected` atoms
/// using the actual codes restricted to those atoms.
pub fn restricted_r2(
    codes: &CodeMatrix,
    dict: ArrayView2<f64>,
    contributions: ArrayView2<f64>,
    selected: &[usize],
) -> Result<f64> {
    let (rows, d) = contributions.dim();
    if codes.n_rows() != rows {
        return Err(Error::Dimension(format!(
            "{} code rows for {rows} points",
            codes.n_rows()
        )));
    }
    codes.check_cols(dict.nrows())?;
    if rows == 0 {
        return Err(Error::EmptyRequest("no contribution points".into()));
    }
    let mut keep = vec![false; dict.nrows()];
    for &j in selected {
        keep[j] = true;
    }
    let mean = contributions.mean_axis(Axis(0)).expect("nonempty");
    let mut residual = 0.0;
    let mut total = 0.0;
    let mut recon = Array1::<f64>::zeros(d);
    for (n, m) in contributions.rows().into_iter().enumerate() {
        recon.fill(0.0);
        let (idx, vals) = codes.row(n);
        for (&j, &v) in idx.iter().zip(vals) {
            if keep[j as usize] {
                recon.scaled_add(v as f64, &dict.row(j as usize));
            }
        }
        for t in 0..d {
            residual += (m[t] - recon[t]).powi(2);
            total += (m[t] - mean[t]).powi(2);
        }
    }
    if total == 0.0 {
        return Err(Error::Undefined("contributions have zero variance".into()));
    }
    Ok(1.0 - residual / total)
}

/// Restricted R-squared at atom budgets around the intrinsic embedding size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestrictedR2Curve {
    pub instance_id: u32,
    pub budgets: Vec<usize>,
    pub r2: Vec<f64>,
    /// Greedy order for the largest budget; smaller budgets use prefixes.
    pub selected: Vec<usize>,
}

impl RestrictedR2Curve {
    pub fn at(&self, n: usize) -> Option<f64> {
        self.budgets.iter().position(|&b| b == n).map(|p| self.r2[p])
    }
}

/// Budgets `max(1, k_i - 2) ..= k_i + 2`, capped at the dictionary size.
pub fn r2_budgets(k_i: usize, c: usize) -> Vec<usize> {
    (k_i.saturating_sub(2).max(1)..=(k_i + 2).min(c)).collect()
}

pub fn r2_curve(
    instance_id: u32,
    codes: &CodeMatrix,
    dict: ArrayView2<f64>,
    contributions: ArrayView2<f64>,
    k_i: usize,
) -> Result<RestrictedR2Curve> {
    let budgets = r2_budgets(k_i, dict.nrows());
    let n_max = budgets.last().copied().unwrap_or(0);
    let selected = greedy_atoms(contributions, dict, n_max)?;
    let r2 = budgets
        .iter()
        .map(|&n| restricted_r2(codes, dict, contributions, &selected[..n]))
        .collect::<Result<Vec<_>>>()?;
    Ok(RestrictedR2Curve {
        instance_id,
        budgets,
        r2,
        selected,
    })
}

/// Atoms that tile a manifold: after discarding each atom's activations below
/// its own 10th percentile, atoms still firing on at least 10% of the points
/// (and at least 30 of them).
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SupportStats {
    pub atoms: Vec<usize>,
    /// Surviving firing rows for each supported atom.
    pub firing: Vec<Vec<usize>>,
    pub n_points: usize,
}

impl SupportStats {
    pub fn size(&self) -> usize {
        self.atoms.len()
    }
}

/// Linear-interpolation percentile of an ascending slice.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn support_size(codes: &CodeMatrix) -> SupportStats {
    let n = codes.n_rows();
    let mut per_atom: Vec<Vec<(usize, f64)>> = vec![Vec::new(); codes.n_cols()];
    for row in 0..n {
        let (idx, vals) = codes.row(row);
        for (&j, &v) in idx.iter().zip(vals) {
            per_atom[j as usize].push((row, v as f64));
        }
    }
    let needed = ((SUPPORT_MIN_FRACTION * n as f64).ceil() as usize).max(SUPPORT_MIN_COUNT);
    let mut stats = SupportStats {
        n_points: n,
        ..Default::default()
    };
    for (j, acts) in per_atom.into_iter().enumerate() {
        if acts.len() < needed {
            continue;
        }
        let mut sorted: Vec<f64> = acts.iter().map(|a| a.1).collect();
        sorted.sort_by(f64::total_cmp);
        let threshold = percentile_sorted(&sorted, SUPPORT_PERCENTILE);
        let surviving: Vec<usize> = acts.iter().filter(|a| a.1 >= threshold).map(|a| a.0).collect();
        if surviving.len() >= needed {
            stats.atoms.push(j);
            stats.firing.push(surviving);
        }
    }
    stats
}

/// Median over supported atoms of the mean pairwise ambient distance between
/// the points an atom fires on, relative to the mean pairwise distance of the
/// whole manifold sample. Both are measured on one deterministic subsample of
/// at most `cap` points.
pub fn rf_spread(
    stats: &SupportStats,
    points: ArrayView2<f64>,
    cap: usize,
    seed: u64,
    stream_index: u64,
) -> Option<f64> {
    let n = points.nrows();
    if stats.atoms.is_empty() || n < 2 || cap < 2 {
        return None;
    }
    let subset: Vec<usize> = if n <= cap {
        (0..n).collect()
    } else {
        let mut rng = stream(seed, Purpose::Subsample, stream_index);
        let mut s = index::sample(&mut rng, n, cap).into_vec();
        s.sort_unstable();
        s
    };
    let mut slot = vec![usize::MAX; n];
    for (p, &row) in subset.iter().enumerate() {
        slot[row] = p;
    }
    let u = points.select(Axis(0), &subset);
    let gram = u.dot(&u.t());
    let sq: Vec<f64> = (0..u.nrows()).map(|i| gram[[i, i]]).collect();
    let dist = |a: usize, b: usize| (sq[a] + sq[b] - 2.0 * gram[[a, b]]).max(0.0).sqrt();
    let mean_pairwise = |members: &[usize]| {
        let mut sum = 0.0;
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                sum += dist(a, b);
            }
        }
        let pairs = members.len() * (members.len() - 1) / 2;
        sum / pairs as f64
    };
    let all: Vec<usize> = (0..u.nrows()).collect();
    let baseline = mean_pairwise(&all);
    if baseline <= 0.0 {
        return None;
    }
    let mut spreads: Vec<f64> = stats
        .firing
        .iter()
        .filter_map(|rows| {
            let members: Vec<usize> = rows.iter().map(|&r| slot[r]).filter(|&s| s != usize::MAX).collect();
            (members.len() >= 2).then(|| mean_pairwise(&members))
        })
        .collect();
    if spreads.is_empty() {
        return None;
    }
    spreads.sort_by(f64::total_cmp);
    let mid = spreads.len() / 2;
    let median = if spreads.len() % 2 == 1 {
        spreads[mid]
    } else {
        0.5 * (spreads[mid - 1] + spreads[mid])
    };
    Some(median / baseline)
}

/// Covariance eigenvalues in descending order with consecutive ratios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// `gaps[j] = eigenvalues[j] / eigenvalues[j + 1]` for the first `m`
    /// ranks; infinite when only the lower eigenvalue vanishes and 1 when
    /// both do.
    pub gaps: Vec<f64>,
}

impl Spectrum {
    /// Rank (1-based) and value of the largest gap among the first `max_rank`.
    pub fn max_gap(&self, max_rank: usize) -> Option<(usize, f64)> {
        self.gaps
            .iter()
            .take(max_rank)
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (j, &g)| match best {
                Some((_, b)) if b >= g => best,
                _ => Some((j + 1, g)),
            })
    }
}

/// PCA of the rows of `x` with `1/n` covariance; gaps for the first `m` ranks.
pub fn pca_spectrum(x: ArrayView2<f64>, m: usize) -> Result<Spectrum> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::EmptyRequest(format!("need at least 2 rows, got {n}")));
    }
    if m > d {
        return Err(Error::Config(format!("requested {m} gaps for dimension {d}")));
    }
    let mean = x.mean_axis(Axis(0)).expect("nonempty");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / n as f64;
    let mat = nalgebra::DMatrix::from_fn(d, d, |i, j| cov[[i, j]]);
    let mut eigenvalues: Vec<f64> = nalgebra::SymmetricEigen::new(mat)
        .eigenvalues
        .iter()
        .map(|&v| v.max(0.0))
        .collect();
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    let floor = 1e-12 * eigenvalues.first().copied().unwrap_or(0.0);
    let gaps = (0..m.min(d.saturating_sub(1)))
        .map(|j| {
            let (hi, lo) = (eigenvalues[j], eigenvalues[j + 1]);
            if lo > floor {
                hi / lo
            } else if hi > floor {
                f64::INFINITY
            } else {
                1.0
            }
        })
        .collect();
    Ok(Spectrum { eigenvalues, gaps })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub spread_cap: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            spread_cap: DEFAULT_SPREAD_CAP,
            seed: 0,
        }
    }
}

/// Tiling summary of one manifold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TilingStats {
    pub instance_id: u32,
    pub support_size: usize,
    /// Missing when no atom tiles the manifold.
    pub rf_spread: Option<f64>,
    pub atoms: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceMetrics {
    pub instance_id: u32,
    pub kind: ManifoldKind,
    pub k_i: usize,
    pub n_points: usize,
    pub curve: RestrictedR2Curve,
    pub tiling: TilingStats,
    /// Spectrum of the codes restricted to the greedy atoms at the largest budget.
    pub spectrum: Option<Spectrum>,
}

/// Metrics for every zoo instance present in an evaluation dataset.
pub fn evaluate_model(
    model: &SaeModel,
    data: &MixtureDataset,
    zoo: &Zoo,
    settings: &EvalSettings,
) -> Result<Vec<InstanceMetrics>> {
    if data.meta.d != model.d() {
        return Err(Error::Dimension(format!(
            "data has d = {}, model has {}",
            data.meta.d,
            model.d()
        )));
    }
    let codes = model.encode_batch(data.x.view())?;
    let dict = model.dictionary();
    data.meta
        .instance_ids
        .par_iter()
        .enumerate()
        .map(|(col, &id)| {
            let pos = zoo
                .position(id)
                .ok_or_else(|| Error::Config(format!("instance {id} is not in the zoo")))?;
            let inst = &zoo.instances[pos];
            let (rows, contributions) = data.instance_rows(col);
            let sub = codes.select_rows(&rows);
            let curve = r2_curve(id, &sub, dict.view(), contributions.view(), inst.k_i)?;
            let support = support_size(&sub);
            let spread = rf_spread(
                &support,
                contributions.view(),
                settings.spread_cap,
                settings.seed,
                id as u64,
            );
            let tiling = TilingStats {
                instance_id: id,
                support_size: support.size(),
                rf_spread: spread,
                atoms: support.atoms,
            };
            let spectrum = if rows.len() >= 2 {
                let restricted = sub.select_cols(&curve.selected).to_dense().mapv(f64::from);
                Some(pca_spectrum(restricted.view(), curve.selected.len().saturating_sub(1))?)
            } else {
                None
            };
            Ok(InstanceMetrics {
                instance_id: id,
                kind: inst.kind,
                k_i: inst.k_i,
                n_points: rows.len(),
                curve,
                tiling,
                spectrum,
            })
        })
        .collect()
}

pub const METRICS_HEADER: &str = "sae_k,instance_id,kind,metric,n_or_rank,value";

/// Long-format CSV rows (without header) for one model's metrics.
pub fn metrics_csv_rows(sae_k: usize, metrics: &[InstanceMetrics]) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    for m in metrics {
        let mut row = |metric: &str, n: usize, value: f64| {
            writeln!(out, "{sae_k},{},{},{metric},{n},{value}", m.instance_id, m.kind).expect("string write");
        };
        for (&n, &r2) in m.curve.budgets.iter().zip(&m.curve.r2) {
            row("r2", n, r2);
        }
        row("support", 0, m.tiling.support_size as f64);
        if let Some(s) = m.tiling.rf_spread {
            row("spread", 0, s);
        }
        if let Some(spec) = &m.spectrum {
            for (rank, &v) in spec.eigenvalues.iter().enumerate() {
                row("eigenvalue", rank + 1, v);
            }
        }
    }
    out
}

/// Mask column with the highest conditional firing rate for every atom, or
/// `None` for atoms that never fire. Ties go to the lowest column.
pub fn firing_assignment(codes: &CodeMatrix, masks: ArrayView2<bool>) -> Result<Vec<Option<usize>>> {
    if codes.n_rows() != masks.nrows() {
        return Err(Error::Dimension(format!(
            "{} code rows for {} mask rows",
            codes.n_rows(),
            masks.nrows()
        )));
    }
    let (c, m) = (codes.n_cols(), masks.ncols());
    let mut hits = vec![0u64; c * m];
    let mut active = vec![0u64; m];
    for n in 0..codes.n_rows() {
        let on: Vec<usize> = (0..m).filter(|&i| masks[[n, i]]).collect();
        for &i in &on {
            active[i] += 1;
        }
        let (cols, vals) = codes.row(n);
        for (&a, &v) in cols.iter().zip(vals) {
            if v > 0.0 {
                for &i in &on {
                    hits[a as usize * m + i] += 1;
                }
            }
        }
    }
    Ok((0..c)
        .map(|a| {
            let mut best: Option<(usize, f64)> = None;
            for i in (0..m).filter(|&i| active[i] > 0) {
                let rate = hits[a * m + i] as f64 / active[i] as f64;
                if rate > 0.0 && best.is_none_or(|(_, r)| rate > r) {
                    best = Some((i, rate));
                }
            }
            best.map(|b| b.0)
        })
        .collect())
}
