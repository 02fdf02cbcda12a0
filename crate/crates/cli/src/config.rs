use std::path::{Path, PathBuf};

use msb_core::eval::DEFAULT_SPREAD_CAP;
use msb_core::ising::DiscoverSettings;
use msb_core::mixture::DEFAULT_NOISE;
use msb_core::{TrainHyper, ZooConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaeGrid {
    pub c: usize,
    pub k_list: Vec<usize>,
    #[serde(flatten)]
    pub hyper: TrainHyper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Held-out samples drawn from an independent seed.
    pub samples: usize,
    pub spread_cap: usize,
}

/// Everything a run depends on. The output directory is not part of the
/// run identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub zoo: ZooConfig,
    #[serde(rename = "N")]
    pub n_samples: usize,
    #[serde(rename = "L0")]
    pub l0: usize,
    pub sigma_eps: f64,
    pub sae: SaeGrid,
    pub eval: EvalConfig,
    pub ising: DiscoverSettings,
    pub seed: u64,
    #[serde(default, skip_serializing)]
    pub out: PathBuf,
}

impl RunConfig {
    /// 16 instances in `R^64`, `c = 256`, five sparsity budgets.
    pub fn desk() -> Self {
        Self {
            zoo: ZooConfig::with_variants_per_kind(64, 2),
            n_samples: 200_000,
            l0: 4,
            sigma_eps: DEFAULT_NOISE,
            sae: SaeGrid {
                c: 256,
                k_list: vec![3, 4, 8, 16, 25],
                hyper: TrainHyper::default(),
            },
            eval: EvalConfig {
                samples: 50_000,
                spread_cap: DEFAULT_SPREAD_CAP,
            },
            ising: DiscoverSettings {
                max_samples: Some(20_000),
                ..DiscoverSettings::default()
            },
            seed: 0,
            out: PathBuf::from("runs/desk"),
        }
    }

    /// 48 instances in `R^128`, `c = 512`, nine sparsity budgets.
    pub fn paper_scale() -> Self {
        Self {
            zoo: ZooConfig::reference(),
            n_samples: 2_000_000,
            l0: 4,
            sigma_eps: DEFAULT_NOISE,
            sae: SaeGrid {
                c: 512,
                k_list: vec![3, 4, 6, 8, 10, 14, 16, 20, 25],
                hyper: TrainHyper::default(),
            },
            eval: EvalConfig {
                samples: 1_000_000,
                spread_cap: DEFAULT_SPREAD_CAP,
            },
            ising: DiscoverSettings {
                max_samples: Some(100_000),
                ..DiscoverSettings::default()
            },
            seed: 0,
            out: PathBuf::from("runs/paper"),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.zoo.variants.is_empty() {
            return bad("zoo lists no variants".into());
        }
        for v in &self.zoo.variants {
            v.validate().map_err(|e| CliError::Config(e.to_string()))?;
            if v.kind().embedding_dim() > self.zoo.ambient_dim {
                return bad(format!(
                    "{} needs {} dimensions, ambient is {}",
                    v.kind(),
                    v.kind().embedding_dim(),
                    self.zoo.ambient_dim
                ));
            }
        }
        if self.zoo.calibration_samples == 0
            || self.n_samples == 0
            || self.eval.samples == 0
            || self.eval.spread_cap == 0
        {
            return bad("sample counts must be positive".into());
        }
        if self.l0 == 0 || self.l0 > self.zoo.variants.len() {
            return bad(format!(
                "L0 must be in [1, {}], got {}",
                self.zoo.variants.len(),
                self.l0
            ));
        }
        if !(self.sigma_eps >= 0.0 && self.sigma_eps.is_finite()) {
            return bad(format!(
                "noise level must be finite and non-negative, got {}",
                self.sigma_eps
            ));
        }
        if self.sae.c == 0 || self.sae.k_list.is_empty() {
            return bad("dictionary size and k list must be non-empty".into());
        }
        if let Some(&k) = self.sae.k_list.iter().find(|&&k| k == 0 || k > self.sae.c) {
            return bad(format!("k = {k} outside [1, c = {}]", self.sae.c));
        }
        let mut sorted = self.sae.k_list.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.sae.k_list.len() {
            return bad("k list has duplicates".into());
        }
        self.sae.hyper.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.ising.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Independent seed for a named consumer.
    pub fn derived_seed(&self, label: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(label.as_bytes());
        u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::desk().validate().unwrap();
        RunConfig::paper_scale().validate().unwrap();
        assert_eq!(RunConfig::desk().zoo.variants.len(), 16);
        assert_eq!(RunConfig::paper_scale().zoo.variants.len(), 48);
    }

    #[test]
    fn k_above_c_is_rejected() {
        let mut cfg = RunConfig::desk();
        cfg.sae.k_list.push(300);
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = RunConfig::desk();
        let mut b = a.clone();
        b.out = PathBuf::from("/elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_ne!(a.derived_seed("train"), a.derived_seed("eval"));
    }

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig::desk();
        let text = serde_json::to_string(&cfg).unwrap();
        let mut back: RunConfig = serde_json::from_str(&text).unwrap();
        back.out = cfg.out.clone();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<RunConfig>(&text.replacen("\"seed\"", "\"sede\"", 1)).is_err());
    }
}
