//! Pseudo-likelihood fitting of a pairwise Ising model with per-node
//! EBIC-selected l1 penalties.
//!
//! Each node conditional is `p(s_a | rest) = sigmoid(2 s_a eta_a)` with
//! `eta_a = h_a + sum_b J_ab s_b`. Internally spins are rewritten as
//! `s = 2 b - 1` with `b` in {0, 1}, giving `eta_a = g_a + 2 sum_b J_ab b_b`
//! with an unpenalized offset `g_a = h_a - sum_b J_ab`; only active atoms
//! contribute to the sum, which keeps every pass linear in the number of
//! active entries.

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SpinData;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlmSettings {
    pub gamma: f64,
    /// Explicit penalty grid shared by all nodes; when absent each node uses
    /// a geometric grid below its own `lambda_max`.
    pub lambda_grid: Option<Vec<f64>>,
    pub grid_points: usize,
    pub grid_ratio: f64,
    pub tol: f64,
    /// Newton steps per penalty, and coordinate passes per Newton step.
    pub max_iter: usize,
    /// Newton steps of the joint symmetric refinement.
    pub sync_max_iter: usize,
}

impl Default for PlmSettings {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            lambda_grid: None,
            grid_points: 20,
            grid_ratio: 1e-3,
            tol: 1e-6,
            max_iter: 5_000,
            sync_max_iter: 1_000,
        }
    }
}

impl PlmSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        match &self.lambda_grid {
            Some(grid) if grid.is_empty() => return Err(Error::Config("lambda grid is empty".into())),
            Some(grid) if grid.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) => {
                return Err(Error::Config(
                    "lambda grid entries must be finite and non-negative".into(),
                ))
            }
            _ => {}
        }
        if self.grid_points == 0 || !(self.grid_ratio > 0.0 && self.grid_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "grid needs at least one point and ratio in (0, 1], got {} and {}",
                self.grid_points, self.grid_ratio
            )));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 || self.sync_max_iter == 0 {
            return Err(Error::Config("tolerance and iteration limits must be positive".into()));
        }
        Ok(())
    }
}

/// Fitted couplings and fields with per-node selection records.
#[derive(Clone, Debug, PartialEq)]
pub struct IsingFit {
    pub j: Array2<f64>,
    pub h: Vec<f64>,
    pub lambda_selected: Vec<f64>,
    pub ebic_scores: Vec<f64>,
    pub lambda_grid: Vec<Vec<f64>>,
    pub gamma: f64,
    pub n_samples: usize,
    pub warnings: Vec<String>,
}

impl IsingFit {
    pub fn c(&self) -> usize {
        self.h.len()
    }

    pub fn edge_count(&self) -> usize {
        let c = self.c();
        (0..c)
            .map(|a| (a + 1..c).filter(|&b| self.j[[a, b]] != 0.0).count())
            .sum()
    }
}

/// `2 nll + |E| log N + 2 gamma |E| log(c - 1)`.
pub fn ebic(neg_log_pl: f64, n_edges: usize, n_samples: usize, c: usize, gamma: f64) -> f64 {
    let e = n_edges as f64;
    let prior = if c > 2 { ((c - 1) as f64).ln() } else { 0.0 };
    2.0 * neg_log_pl + e * (n_samples as f64).ln() + 2.0 * gamma * e * prior
}

/// `points` values from `lambda_max` down to `lambda_max * ratio`, geometric.
pub fn lambda_grid(lambda_max: f64, points: usize, ratio: f64) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lambda_max],
        _ => (0..points)
            .map(|i| lambda_max * ratio.powf(i as f64 / (points - 1) as f64))
            .collect(),
    }
}

/// Distinct spin patterns with their empirical weights.
struct Patterns {
    c: usize,
    n: usize,
    weight: Vec<f64>,
    /// Patterns in which each atom is up.
    inverted: Vec<Vec<u32>>,
    /// Fraction of samples with each atom up.
    up_rate: Vec<f64>,
}

impl Patterns {
    fn new(spins: &SpinData) -> Self {
        let c = spins.n_cols();
        let n = spins.n_rows();
        let mut counts: BTreeMap<&[u32], usize> = BTreeMap::new();
        for row in 0..n {
            *counts.entry(spins.up(row)).or_default() += 1;
        }
        let mut weight = Vec::with_capacity(counts.len());
        let mut inverted = vec![Vec::new(); c];
        let mut up_rate = vec![0.0; c];
        for (p, (pattern, count)) in counts.into_iter().enumerate() {
            let w = count as f64 / n as f64;
            for &b in pattern {
                inverted[b as usize].push(p as u32);
                up_rate[b as usize] += w;
            }
            weight.push(w);
        }
        Self {
            c,
            n,
            weight,
            inverted,
            up_rate,
        }
    }

    fn len(&self) -> usize {
        self.weight.len()
    }

    fn is_constant(&self, a: usize) -> bool {
        let ups = self.inverted[a].iter().map(|&p| self.weight[p as usize]).sum::<f64>();
        ups <= 0.0 || (self.inverted[a].len() == self.len() && (ups - 1.0).abs() < 1e-12)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Second derivative of one pattern's loss in `eta`, floored as in glmnet so
/// saturated patterns keep the quadratic model bounded.
fn curvature(weight: f64, miss: f64) -> f64 {
    let p = miss.clamp(1e-5, 1.0 - 1e-5);
    4.0 * weight * p * (1.0 - p)
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// One node's conditional model restricted to a working set of neighbours.
struct NodeProblem<'a> {
    pat: &'a Patterns,
    a: usize,
    /// `y[p]` is true when the node is up in pattern `p`.
    up: Vec<bool>,
    eta: Vec<f64>,
    resid: Vec<f64>,
    curv: Vec<f64>,
    delta: Vec<f64>,
}

impl<'a> NodeProblem<'a> {
    fn new(pat: &'a Patterns, a: usize) -> Self {
        let mut up = vec![false; pat.len()];
        for &p in &pat.inverted[a] {
            up[p as usize] = true;
        }
        Self {
            pat,
            a,
            up,
            eta: vec![0.0; pat.len()],
            resid: vec![0.0; pat.len()],
            curv: vec![0.0; pat.len()],
            delta: vec![0.0; pat.len()],
        }
    }

    /// Mean negative log pseudo-likelihood at `(offset, coupling over set)`,
    /// leaving per-pattern first and second derivatives in `resid` and `curv`.
    fn evaluate(&mut self, offset: f64, set: &[usize], values: &[f64]) -> f64 {
        self.eta.fill(offset);
        for (&b, &v) in set.iter().zip(values) {
            if v != 0.0 {
                for &p in &self.pat.inverted[b] {
                    self.eta[p as usize] += 2.0 * v;
                }
            }
        }
        let mut loss = 0.0;
        for p in 0..self.pat.len() {
            let y = if self.up[p] { 1.0 } else { -1.0 };
            let margin = 2.0 * y * self.eta[p];
            let w = self.pat.weight[p];
            let miss = sigmoid(-margin);
            loss += w * softplus(-margin);
            self.resid[p] = -2.0 * y * w * miss;
            self.curv[p] = curvature(w, miss);
        }
        loss
    }

    fn offset_grad(&self) -> f64 {
        self.resid.iter().sum()
    }

    fn coupling_grad(&self, b: usize) -> f64 {
        2.0 * self.pat.inverted[b]
            .iter()
            .map(|&p| self.resid[p as usize])
            .sum::<f64>()
    }

    /// Proximal Newton: coordinate descent on the local quadratic model, then
    /// a backtracking line search on the penalized objective.
    fn solve(
        &mut self,
        lambda: f64,
        set: &[usize],
        offset: &mut f64,
        values: &mut [f64],
        tol: f64,
        max_iter: usize,
    ) -> Result<()> {
        const DAMPING: f64 = 1e-10;
        let penalty = |v: &[f64]| lambda * v.iter().map(|x| x.abs()).sum::<f64>();
        let mut loss = self.evaluate(*offset, set, values);
        let mut inner_tol = f64::INFINITY;
        for _ in 0..max_iter {
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("node {}: non-finite pseudo-likelihood", self.a)));
            }
            let g_off = self.offset_grad();
            let grad: Vec<f64> = set.iter().map(|&b| self.coupling_grad(b)).collect();
            let h_off = self.curv.iter().sum::<f64>() + DAMPING;
            let h_val: Vec<f64> = set
                .iter()
                .map(|&b| 4.0 * self.pat.inverted[b].iter().map(|&p| self.curv[p as usize]).sum::<f64>() + DAMPING)
                .collect();
            self.delta.fill(0.0);
            let mut new_off = *offset;
            let mut new_val = values.to_vec();
            let mut prev_delta = vec![0.0; self.pat.len()];
            let mut history: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
            for _ in 0..max_iter {
                prev_delta.copy_from_slice(&self.delta);
                let prev_off = new_off;
                let prev_val = new_val.clone();
                let g = g_off + self.curv.iter().zip(&self.delta).map(|(c, d)| c * d).sum::<f64>();
                let step = -g / h_off;
                new_off += step;
                self.delta.iter_mut().for_each(|d| *d += step);
                let mut change = step.abs();
                for (i, &b) in set.iter().enumerate() {
                    let inv = &self.pat.inverted[b];
                    let g = grad[i]
                        + 2.0
                            * inv
                                .iter()
                                .map(|&p| self.curv[p as usize] * self.delta[p as usize])
                                .sum::<f64>();
                    let next = soft_threshold(new_val[i] - g / h_val[i], lambda / h_val[i]);
                    let moved = next - new_val[i];
                    if moved != 0.0 {
                        for &p in inv {
                            self.delta[p as usize] += 2.0 * moved;
                        }
                        new_val[i] = next;
                        change = change.max(moved.abs());
                    }
                }
                if change <= inner_tol.max(0.1 * tol) {
                    break;
                }
                // extrapolate over the last few passes
                let mut point = Vec::with_capacity(set.len() + 1);
                point.push(new_off);
                point.extend_from_slice(&new_val);
                history.push((point, self.delta.clone()));
                if history.len() == ANDERSON + 1 {
                    if let Some((off, vals, delta)) = anderson(&history, |d, v| {
                        lambda * v.iter().map(|x| x.abs()).sum::<f64>()
                            + self
                                .resid
                                .iter()
                                .zip(&self.curv)
                                .zip(d)
                                .map(|((r, c), d)| r * d + 0.5 * c * d * d)
                                .sum::<f64>()
                    }) {
                        new_off = off;
                        new_val = vals;
                        self.delta = delta;
                    }
                    history.clear();
                }
                // exact step along the pass's net move on the quadratic model
                let mut slope = 0.0;
                let mut curvature = 0.0;
                for p in 0..self.pat.len() {
                    let moved = self.delta[p] - prev_delta[p];
                    slope += (self.resid[p] + self.curv[p] * self.delta[p]) * moved;
                    curvature += self.curv[p] * moved * moved;
                }
                let direction: Vec<f64> = new_val.iter().zip(&prev_val).map(|(n, o)| n - o).collect();
                let alpha = penalized_line_min(slope, curvature, lambda, &new_val, &direction);
                if alpha > 0.0 {
                    new_off += alpha * (new_off - prev_off);
                    for (v, d) in new_val.iter_mut().zip(&direction) {
                        *v += alpha * d;
                    }
                    for p in 0..self.pat.len() {
                        self.delta[p] += alpha * (self.delta[p] - prev_delta[p]);
                    }
                }
            }
            let d_off = new_off - *offset;
            let d_val: Vec<f64> = new_val.iter().zip(values.iter()).map(|(n, o)| n - o).collect();
            let objective = loss + penalty(values);
            let slope = g_off * d_off + grad.iter().zip(&d_val).map(|(g, d)| g * d).sum::<f64>() + penalty(&new_val)
                - penalty(values);
            let mut t = 1.0;
            let mut trial_val = new_val.clone();
            let mut trial_loss;
            loop {
                trial_loss = self.evaluate(*offset + t * d_off, set, &trial_val);
                if trial_loss + penalty(&trial_val) <= objective + 1e-4 * t * slope.min(0.0) || t < 1e-10 {
                    break;
                }
                t *= 0.5;
                for i in 0..set.len() {
                    trial_val[i] = values[i] + t * d_val[i];
                }
            }
            let diff = d_val.iter().fold(d_off.abs(), |m, d| m.max(d.abs()));
            let weighted = d_val
                .iter()
                .zip(&h_val)
                .fold(h_off * d_off.powi(2), |m, (d, h)| m.max(h * d.powi(2)));
            *offset += t * d_off;
            values.copy_from_slice(&trial_val);
            loss = trial_loss;
            inner_tol = 0.3 * diff;
            let scale = values.iter().fold(offset.abs(), |m, v| m.max(v.abs()));
            if diff <= tol * scale.max(1.0) || weighted <= 0.1 * tol {
                return Ok(());
            }
        }
        Err(Error::Numeric(format!(
            "node {}: proximal Newton did not converge in {max_iter} iterations at lambda {lambda:e}",
            self.a
        )))
    }
}

const ANDERSON: usize = 5;

/// Anderson extrapolation of the last iterates, kept only when it lowers
/// `objective(delta, couplings)` below the newest iterate.
fn anderson(
    history: &[(Vec<f64>, Vec<f64>)],
    objective: impl Fn(&[f64], &[f64]) -> f64,
) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let k = history.len() - 1;
    let diffs: Vec<Vec<f64>> = (0..k)
        .map(|i| history[i + 1].0.iter().zip(&history[i].0).map(|(a, b)| a - b).collect())
        .collect();
    let mut gram = nalgebra::DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            gram[(i, j)] = diffs[i].iter().zip(&diffs[j]).map(|(a, b)| a * b).sum();
        }
    }
    let ridge = 1e-10 * (0..k).map(|i| gram[(i, i)]).sum::<f64>().max(f64::MIN_POSITIVE);
    for i in 0..k {
        gram[(i, i)] += ridge;
    }
    let z = gram.cholesky()?.solve(&nalgebra::DVector::from_element(k, 1.0));
    let total: f64 = z.iter().sum();
    if !total.is_finite() || total == 0.0 {
        return None;
    }
    let dim = history[0].0.len();
    let mut point = vec![0.0; dim];
    let mut delta = vec![0.0; history[0].1.len()];
    for i in 0..k {
        let w = z[i] / total;
        point.iter_mut().zip(&history[i + 1].0).for_each(|(p, v)| *p += w * v);
        delta.iter_mut().zip(&history[i + 1].1).for_each(|(p, v)| *p += w * v);
    }
    let (last_point, last_delta) = &history[k];
    if objective(&delta, &point[1..]) < objective(last_delta, &last_point[1..]) {
        Some((point[0], point[1..].to_vec(), delta))
    } else {
        None
    }
}

/// Minimizer over `alpha >= 0` of
/// `slope alpha + curvature alpha^2 / 2 + lambda |values + alpha direction|_1`.
fn penalized_line_min(slope: f64, curvature: f64, lambda: f64, values: &[f64], direction: &[f64]) -> f64 {
    if !(curvature > 0.0) {
        return 0.0;
    }
    let mut breaks: Vec<f64> = values
        .iter()
        .zip(direction)
        .filter(|(_, &d)| d != 0.0)
        .map(|(&v, &d)| -v / d)
        .filter(|&b| b > 0.0)
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.push(f64::INFINITY);
    let mut lo = 0.0;
    for hi in breaks {
        let mid = if hi.is_finite() { 0.5 * (lo + hi) } else { lo + 1.0 };
        let linear = slope
            + lambda
                * values
                    .iter()
                    .zip(direction)
                    .map(|(&v, &d)| if d == 0.0 { 0.0 } else { d * (v + mid * d).signum() })
                    .sum::<f64>();
        if linear + curvature * lo >= 0.0 {
            return lo;
        }
        let alpha = -linear / curvature;
        if alpha <= hi {
            return alpha;
        }
        lo = hi;
    }
    lo
}

/// Result of one node's regularization path.
struct NodeFit {
    offset: f64,
    couplings: Vec<(usize, f64)>,
    lambda: f64,
    ebic: f64,
    grid: Vec<f64>,
}

fn fit_node(pat: &Patterns, a: usize, eligible: &[bool], settings: &PlmSettings) -> Result<NodeFit> {
    let mut prob = NodeProblem::new(pat, a);
    let p_up = pat.up_rate[a].clamp(0.5 / pat.n as f64, 1.0 - 0.5 / pat.n as f64);
    let mut offset = 0.5 * (p_up / (1.0 - p_up)).ln();
    let candidates: Vec<usize> = (0..pat.c).filter(|&b| b != a && eligible[b]).collect();
    let empty_loss = prob.evaluate(offset, &[], &[]);
    let mut grad: Vec<f64> = candidates.iter().map(|&b| prob.coupling_grad(b)).collect();
    let lambda_max = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let grid = match &settings.lambda_grid {
        Some(g) => g.clone(),
        None => lambda_grid(lambda_max, settings.grid_points, settings.grid_ratio),
    };
    let nll = |loss: f64| loss * pat.n as f64;
    let mut best = NodeFit {
        offset,
        couplings: Vec::new(),
        lambda: grid.first().copied().unwrap_or(lambda_max),
        ebic: ebic(nll(empty_loss), 0, pat.n, pat.c, settings.gamma),
        grid: grid.clone(),
    };
    if candidates.is_empty() {
        return Ok(best);
    }
    let mut values = vec![0.0; candidates.len()];
    let mut prev_lambda = lambda_max;
    let mut first = true;
    for &lambda in &grid {
        // strong-rule screening, corrected below by a KKT check
        let mut in_set: Vec<bool> = (0..candidates.len())
            .map(|i| values[i] != 0.0 || grad[i].abs() > 2.0 * lambda - prev_lambda)
            .collect();
        loop {
            let set_idx: Vec<usize> = (0..candidates.len()).filter(|&i| in_set[i]).collect();
            let set: Vec<usize> = set_idx.iter().map(|&i| candidates[i]).collect();
            let mut sub: Vec<f64> = set_idx.iter().map(|&i| values[i]).collect();
            prob.solve(lambda, &set, &mut offset, &mut sub, settings.tol, settings.max_iter)?;
            for (&i, &v) in set_idx.iter().zip(&sub) {
                values[i] = v;
            }
            prob.evaluate(offset, &set, &sub);
            for (i, &b) in candidates.iter().enumerate() {
                grad[i] = prob.coupling_grad(b);
            }
            let mut violated = false;
            for i in 0..candidates.len() {
                if !in_set[i] && grad[i].abs() > lambda * (1.0 + 1e-9) + 1e-12 {
                    in_set[i] = true;
                    violated = true;
                }
            }
            if !violated {
                break;
            }
        }
        let support: Vec<(usize, f64)> = candidates
            .iter()
            .zip(&values)
            .filter(|(_, &v)| v != 0.0)
            .map(|(&b, &v)| (b, v))
            .collect();
        let set: Vec<usize> = support.iter().map(|e| e.0).collect();
        let vals: Vec<f64> = support.iter().map(|e| e.1).collect();
        let loss = prob.evaluate(offset, &set, &vals);
        let score = ebic(nll(loss), support.len(), pat.n, pat.c, settings.gamma);
        if first || score < best.ebic {
            best = NodeFit {
                offset,
                couplings: support,
                lambda,
                ebic: score,
                grid: grid.clone(),
            };
        }
        first = false;
        prev_lambda = lambda;
    }
    Ok(best)
}

/// Per-node state of the joint refinement.
struct NodeState {
    a: usize,
    /// `(neighbour, edge)` pairs.
    incident: Vec<(usize, usize)>,
    eta: Vec<f64>,
    resid: Vec<f64>,
    curv: Vec<f64>,
    delta: Vec<f64>,
    prev_delta: Vec<f64>,
}

impl NodeState {
    fn evaluate(&mut self, pat: &Patterns, up: &[bool], offset: f64, couplings: &[f64]) -> f64 {
        self.eta.fill(offset);
        for &(b, e) in &self.incident {
            for &p in &pat.inverted[b] {
                self.eta[p as usize] += 2.0 * couplings[e];
            }
        }
        let mut loss = 0.0;
        for p in 0..pat.len() {
            let y = if up[p] { 1.0 } else { -1.0 };
            let margin = 2.0 * y * self.eta[p];
            let w = pat.weight[p];
            let miss = sigmoid(-margin);
            loss += w * softplus(-margin);
            self.resid[p] = -2.0 * y * w * miss;
            self.curv[p] = curvature(w, miss);
        }
        loss
    }
}

/// Joint refinement on the selected edge set: minimizes the summed node
/// pseudo-likelihoods plus `(lambda_a + lambda_b) |J_ab|` per edge by
/// proximal Newton with coordinate descent. Each coupling is shared by its two
/// nodes, so every update keeps `J` symmetric; on nonzero couplings the
/// stationary points are those of averaging the two node-wise updates.
fn synchronize(
    pat: &Patterns,
    edges: &[(usize, usize)],
    lambdas: &[f64],
    offsets: &mut [f64],
    couplings: &mut [f64],
    settings: &PlmSettings,
) -> Result<bool> {
    const DAMPING: f64 = 1e-10;
    let mut slot = vec![usize::MAX; pat.c];
    let mut nodes: Vec<NodeState> = Vec::new();
    for (e, &(a, b)) in edges.iter().enumerate() {
        for (u, v) in [(a, b), (b, a)] {
            if slot[u] == usize::MAX {
                slot[u] = nodes.len();
                nodes.push(NodeState {
                    a: u,
                    incident: Vec::new(),
                    eta: vec![0.0; pat.len()],
                    resid: vec![0.0; pat.len()],
                    curv: vec![0.0; pat.len()],
                    delta: vec![0.0; pat.len()],
                    prev_delta: vec![0.0; pat.len()],
                });
            }
            nodes[slot[u]].incident.push((v, e));
        }
    }
    let ups: Vec<Vec<bool>> = nodes
        .iter()
        .map(|n| {
            let mut up = vec![false; pat.len()];
            for &p in &pat.inverted[n.a] {
                up[p as usize] = true;
            }
            up
        })
        .collect();
    let weights: Vec<f64> = edges.iter().map(|&(a, b)| lambdas[a] + lambdas[b]).collect();
    let penalty = |j: &[f64]| j.iter().zip(&weights).map(|(v, w)| w * v.abs()).sum::<f64>();
    let evaluate = |nodes: &mut [NodeState], offsets: &[f64], couplings: &[f64]| -> f64 {
        nodes
            .iter_mut()
            .zip(&ups)
            .map(|(n, up)| {
                let offset = offsets[n.a];
                n.evaluate(pat, up, offset, couplings)
            })
            .sum()
    };
    let over = |v: &[f64], b: usize| pat.inverted[b].iter().map(|&p| v[p as usize]).sum::<f64>();

    let mut loss = evaluate(&mut nodes, offsets, couplings);
    let mut inner_tol = f64::INFINITY;
    for _ in 0..settings.sync_max_iter {
        if !loss.is_finite() {
            return Err(Error::Numeric(
                "non-finite pseudo-likelihood during synchronization".into(),
            ));
        }
        let g_off: Vec<f64> = nodes.iter().map(|n| n.resid.iter().sum()).collect();
        let h_off: Vec<f64> = nodes.iter().map(|n| n.curv.iter().sum::<f64>() + DAMPING).collect();
        let mut g_edge = vec![0.0; edges.len()];
        let mut h_edge = vec![DAMPING; edges.len()];
        for n in &nodes {
            for &(b, e) in &n.incident {
                g_edge[e] += 2.0 * over(&n.resid, b);
                h_edge[e] += 4.0 * over(&n.curv, b);
            }
        }
        for n in nodes.iter_mut() {
            n.delta.fill(0.0);
        }
        let mut new_off: Vec<f64> = offsets.to_vec();
        let mut new_j = couplings.to_vec();
        for _ in 0..settings.max_iter {
            let prev_off = new_off.clone();
            let prev_j = new_j.clone();
            for n in nodes.iter_mut() {
                n.prev_delta.copy_from_slice(&n.delta);
            }
            let mut change: f64 = 0.0;
            for (i, n) in nodes.iter_mut().enumerate() {
                let g = g_off[i] + n.curv.iter().zip(&n.delta).map(|(c, d)| c * d).sum::<f64>();
                let step = -g / h_off[i];
                new_off[n.a] += step;
                n.delta.iter_mut().for_each(|d| *d += step);
                change = change.max(step.abs());
            }
            for (e, &(a, b)) in edges.iter().enumerate() {
                let (na, nb) = (slot[a], slot[b]);
                let side = |n: &NodeState, other: usize| {
                    2.0 * pat.inverted[other]
                        .iter()
                        .map(|&p| n.curv[p as usize] * n.delta[p as usize])
                        .sum::<f64>()
                };
                let g = g_edge[e] + side(&nodes[na], b) + side(&nodes[nb], a);
                let next = soft_threshold(new_j[e] - g / h_edge[e], weights[e] / h_edge[e]);
                let moved = next - new_j[e];
                if moved != 0.0 {
                    for &p in &pat.inverted[b] {
                        nodes[na].delta[p as usize] += 2.0 * moved;
                    }
                    for &p in &pat.inverted[a] {
                        nodes[nb].delta[p as usize] += 2.0 * moved;
                    }
                    new_j[e] = next;
                    change = change.max(moved.abs());
                }
            }
            if change <= inner_tol.max(0.1 * settings.tol) {
                break;
            }
            // exact step along the pass's net move on the quadratic model
            let mut slope = 0.0;
            let mut curvature = 0.0;
            for n in &nodes {
                for p in 0..pat.len() {
                    let moved = n.delta[p] - n.prev_delta[p];
                    slope += (n.resid[p] + n.curv[p] * n.delta[p]) * moved;
                    curvature += n.curv[p] * moved * moved;
                }
            }
            let scaled: Vec<f64> = new_j.iter().zip(&weights).map(|(v, w)| v * w).collect();
            let direction: Vec<f64> = new_j
                .iter()
                .zip(&prev_j)
                .zip(&weights)
                .map(|((n, o), w)| (n - o) * w)
                .collect();
            let alpha = penalized_line_min(slope, curvature, 1.0, &scaled, &direction);
            if alpha > 0.0 {
                for (v, o) in new_off.iter_mut().zip(&prev_off) {
                    *v += alpha * (*v - o);
                }
                for (v, o) in new_j.iter_mut().zip(&prev_j) {
                    *v += alpha * (*v - o);
                }
                for n in nodes.iter_mut() {
                    for p in 0..pat.len() {
                        n.delta[p] += alpha * (n.delta[p] - n.prev_delta[p]);
                    }
                }
            }
        }
        let d_off: Vec<f64> = new_off.iter().zip(offsets.iter()).map(|(n, o)| n - o).collect();
        let d_j: Vec<f64> = new_j.iter().zip(couplings.iter()).map(|(n, o)| n - o).collect();
        let objective = loss + penalty(couplings);
        let slope = nodes.iter().zip(&g_off).map(|(n, g)| g * d_off[n.a]).sum::<f64>()
            + g_edge.iter().zip(&d_j).map(|(g, d)| g * d).sum::<f64>()
            + penalty(&new_j)
            - penalty(couplings);
        let mut t = 1.0;
        let mut trial_off = new_off.clone();
        let mut trial_j = new_j.clone();
        let mut trial_loss;
        loop {
            trial_loss = evaluate(&mut nodes, &trial_off, &trial_j);
            if trial_loss + penalty(&trial_j) <= objective + 1e-4 * t * slope.min(0.0) || t < 1e-10 {
                break;
            }
            t *= 0.5;
            for (v, (o, d)) in trial_off.iter_mut().zip(offsets.iter().zip(&d_off)) {
                *v = o + t * d;
            }
            for (v, (o, d)) in trial_j.iter_mut().zip(couplings.iter().zip(&d_j)) {
                *v = o + t * d;
            }
        }
        let diff = d_off.iter().chain(&d_j).fold(0.0f64, |m, d| m.max(d.abs()));
        let weighted = nodes
            .iter()
            .zip(&h_off)
            .map(|(n, h)| h * d_off[n.a].powi(2))
            .chain(d_j.iter().zip(&h_edge).map(|(d, h)| h * d.powi(2)))
            .fold(0.0f64, f64::max);
        if trial_off.iter().chain(&trial_j).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite couplings during synchronization".into()));
        }
        offsets.copy_from_slice(&trial_off);
        couplings.copy_from_slice(&trial_j);
        loss = trial_loss;
        inner_tol = 0.3 * diff;
        let scale = offsets
            .iter()
            .chain(couplings.iter())
            .fold(1.0f64, |m, v| m.max(v.abs()));
        if diff <= settings.tol * scale || weighted <= 0.1 * settings.tol {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Fits couplings and fields by l1-penalized pseudo-likelihood.
///
/// Each node's penalty is chosen by EBIC along its path; couplings are then
/// refined jointly on the union of the selected neighbourhoods with symmetry
/// enforced at every update. Constant spin columns get zero couplings.
pub fn plm_fit(spins: &SpinData, settings: &PlmSettings) -> Result<IsingFit> {
    settings.validate()?;
    let (n, c) = (spins.n_rows(), spins.n_cols());
    if n == 0 {
        return Err(Error::EmptyRequest("no spin samples".into()));
    }
    let mut warnings = Vec::new();
    if n < 10 * c {
        let msg = format!("only {n} samples for {c} spins; at least {} recommended", 10 * c);
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let pat = Patterns::new(spins);
    let eligible: Vec<bool> = (0..c).map(|a| !pat.is_constant(a)).collect();
    for a in (0..c).filter(|&a| !eligible[a]) {
        let msg = format!("spin {a} is constant; its couplings are set to zero");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let nodes: Vec<NodeFit> = (0..c)
        .into_par_iter()
        .map(|a| {
            if eligible[a] {
                fit_node(&pat, a, &eligible, settings)
            } else {
                let p_up = pat.up_rate[a].clamp(0.5 / n as f64, 1.0 - 0.5 / n as f64);
                Ok(NodeFit {
                    offset: 0.5 * (p_up / (1.0 - p_up)).ln(),
                    couplings: Vec::new(),
                    lambda: f64::INFINITY,
                    ebic: f64::NAN,
                    grid: Vec::new(),
                })
            }
        })
        .collect::<Result<_>>()?;

    let mut selected = BTreeMap::new();
    for (a, node) in nodes.iter().enumerate() {
        for &(b, v) in &node.couplings {
            let key = (a.min(b), a.max(b));
            *selected.entry(key).or_insert(0.0) += 0.5 * v;
        }
    }
    let edges: Vec<(usize, usize)> = selected.keys().copied().collect();
    let mut couplings: Vec<f64> = selected.values().copied().collect();
    let mut offsets: Vec<f64> = nodes.iter().map(|f| f.offset).collect();
    let lambdas: Vec<f64> = nodes
        .iter()
        .map(|f| if f.lambda.is_finite() { f.lambda } else { 0.0 })
        .collect();
    if !edges.is_empty() {
        let converged = synchronize(&pat, &edges, &lambdas, &mut offsets, &mut couplings, settings)?;
        if !converged {
            let msg = format!(
                "symmetric refinement stopped after {} Newton steps",
                settings.sync_max_iter
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }

    let mut j = Array2::<f64>::zeros((c, c));
    for (&(a, b), &v) in edges.iter().zip(&couplings) {
        j[[a, b]] = v;
        j[[b, a]] = v;
    }
    let h = (0..c).map(|a| offsets[a] + j.row(a).sum()).collect();
    Ok(IsingFit {
        j,
        h,
        lambda_selected: nodes.iter().map(|f| f.lambda).collect(),
        ebic_scores: nodes.iter().map(|f| f.ebic).collect(),
        lambda_grid: nodes.into_iter().map(|f| f.grid).collect(),
        gamma: settings.gamma,
        n_samples: n,
        warnings,
    })
}

/// Mean negative log pseudo-likelihood of `spins` under `(J, h)`, per node.
pub fn node_neg_log_pl(spins: &SpinData, j: &Array2<f64>, h: &[f64]) -> Vec<f64> {
    let c = spins.n_cols();
    let mut out = vec![0.0; c];
    for row in 0..spins.n_rows() {
        let s = spins.dense_row(row);
        for a in 0..c {
            let eta: f64 = h[a] + (0..c).map(|b| j[[a, b]] * s[b] as f64).sum::<f64>();
            out[a] += softplus(-2.0 * s[a] as f64 * eta);
        }
    }
    out.iter_mut().for_each(|v| *v /= spins.n_rows() as f64);
    out
}
