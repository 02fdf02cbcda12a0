//! Per-manifold summary across all trained models: capture metrics from the
//! metrics CSVs joined with the discovered atom groups.

use std::collections::BTreeMap;
use std::path::Path;

use msb_core::eval::firing_assignment;
use msb_core::ising::adjusted_rand_index;
use msb_core::zoo::ManifoldKind;
use msb_core::{DiscoveredGroup, Regime};
use serde::{Deserialize, Serialize};

use crate::pipeline::{read_partition, Layout, Runner};
use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMatch {
    pub atoms: Vec<usize>,
    /// Atoms shared with the manifold's assigned atoms.
    pub overlap: usize,
    pub cohesion: f64,
    pub regime: Regime,
    pub k_estimate: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldReport {
    pub instance_id: u32,
    pub kind: ManifoldKind,
    pub k_i: usize,
    pub r2_at_k_i: Option<f64>,
    pub support_size: Option<usize>,
    pub rf_spread: Option<f64>,
    /// Atoms whose highest conditional firing rate is on this manifold.
    pub assigned_atoms: Vec<usize>,
    pub group: Option<GroupMatch>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaeReport {
    pub sae_k: usize,
    pub mean_r2_at_k_i: f64,
    pub mean_support_size: f64,
    pub mean_rf_spread: Option<f64>,
    /// Over atoms that fire at least once on the evaluation set.
    pub partition_ari: Option<f64>,
    pub regime_counts: BTreeMap<Regime, usize>,
    pub manifolds: Vec<ManifoldReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub k_list: Vec<usize>,
    pub saes: Vec<SaeReport>,
}

/// One parsed metrics CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub sae_k: usize,
    pub instance_id: u32,
    pub kind: String,
    pub metric: String,
    pub n_or_rank: usize,
    pub value: f64,
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = |what: &str| CliError::Csv {
            line: i + 1,
            message: format!("bad {what} in {line:?}"),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad("field count"));
        }
        rows.push(MetricRow {
            sae_k: f[0].parse().map_err(|_| bad("sae_k"))?,
            instance_id: f[1].parse().map_err(|_| bad("instance_id"))?,
            kind: f[2].to_string(),
            metric: f[3].to_string(),
            n_or_rank: f[4].parse().map_err(|_| bad("n_or_rank"))?,
            value: f[5].parse().map_err(|_| bad("value"))?,
        });
    }
    Ok(rows)
}

/// ARI between a partition and a ground-truth assignment, over the atoms
/// that have an assignment.
pub fn partition_ari(partition: &[usize], assignment: &[Option<usize>]) -> Option<f64> {
    let (a, b): (Vec<usize>, Vec<usize>) = partition
        .iter()
        .zip(assignment)
        .filter_map(|(&p, t)| t.map(|t| (p, t)))
        .unzip();
    (a.len() >= 2).then(|| adjusted_rand_index(&a, &b))
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn build_report(runner: &mut Runner, ks: &[usize]) -> Result<RunReport, CliError> {
    let mut saes = Vec::with_capacity(ks.len());
    for &k in ks {
        saes.push(sae_report(runner, k)?);
    }
    Ok(RunReport {
        config_hash: runner.config().hash(),
        k_list: ks.to_vec(),
        saes,
    })
}

fn sae_report(runner: &mut Runner, k: usize) -> Result<SaeReport, CliError> {
    let layout = runner.layout().clone();
    let metrics = read_metrics(&layout.path(&Layout::metrics(k)))?;
    let partition = read_partition(&layout.path(&Layout::partition(k)))?;
    let groups: Vec<DiscoveredGroup> =
        serde_json::from_str(&std::fs::read_to_string(layout.path(&Layout::discovery(k)))?)?;
    let codes = runner.eval_codes(k)?;
    let (assignment, columns) = {
        let data = runner.eval_data()?;
        (
            firing_assignment(&codes, data.masks.view())?,
            data.meta.instance_ids.clone(),
        )
    };
    let zoo = runner.zoo()?;

    let mut manifolds = Vec::with_capacity(zoo.len());
    for inst in &zoo.instances {
        let rows: Vec<&MetricRow> = metrics.iter().filter(|r| r.instance_id == inst.instance_id).collect();
        let pick = |metric: &str, n: usize| {
            rows.iter()
                .find(|r| r.metric == metric && r.n_or_rank == n)
                .map(|r| r.value)
        };
        let col = columns.iter().position(|&id| id == inst.instance_id);
        let assigned: Vec<usize> = (0..assignment.len())
            .filter(|&a| col.is_some() && assignment[a] == col)
            .collect();
        let group = groups
            .iter()
            .map(|g| (g, g.atoms.iter().filter(|a| assigned.contains(a)).count()))
            .filter(|&(_, overlap)| overlap > 0)
            .fold(None::<(&DiscoveredGroup, usize)>, |best, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            })
            .map(|(g, overlap)| GroupMatch {
                atoms: g.atoms.clone(),
                overlap,
                cohesion: g.cohesion,
                regime: g.regime,
                k_estimate: g.k_estimate,
            });
        manifolds.push(ManifoldReport {
            instance_id: inst.instance_id,
            kind: inst.kind,
            k_i: inst.k_i,
            r2_at_k_i: pick("r2", inst.k_i),
            support_size: pick("support", 0).map(|v| v as usize),
            rf_spread: pick("spread", 0),
            assigned_atoms: assigned,
            group,
        });
    }
    let mut regime_counts = BTreeMap::new();
    for g in &groups {
        *regime_counts.entry(g.regime).or_insert(0) += 1;
    }
    Ok(SaeReport {
        sae_k: k,
        mean_r2_at_k_i: mean(manifolds.iter().filter_map(|m| m.r2_at_k_i)).unwrap_or(f64::NAN),
        mean_support_size: mean(manifolds.iter().filter_map(|m| m.support_size.map(|s| s as f64))).unwrap_or(0.0),
        mean_rf_spread: mean(manifolds.iter().filter_map(|m| m.rf_spread)),
        partition_ari: partition_ari(&partition, &assignment),
        regime_counts,
        manifolds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ari_ignores_unassigned_atoms() {
        let partition = [0, 0, 1, 1, 2];
        let truth = [Some(3), Some(3), Some(5), Some(5), None];
        assert_eq!(partition_ari(&partition, &truth), Some(1.0));
        assert_eq!(partition_ari(&partition, &[None; 5]), None);
    }
}
