//! Staged run orchestration with per-stage caching and per-k isolation.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use msb_core::eval::{self, EvalSettings, METRICS_HEADER};
use msb_core::ising::{analyze_fit, fit_codes, load_fit, save_fit, DiscoverSettings, Discovery};
use msb_core::mixture::{load_dataset, save_dataset};
use msb_core::sae::{self, load_model, save_model};
use msb_core::zoo::zoo_to_json;
use msb_core::{build_zoo, generate, CodeMatrix, MixtureDataset, SaeModel, Zoo};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::manifest::{hash_file, RunManifest, StageStatus};
use crate::{report, theory, CliError};

/// Relative artifact paths inside a run directory.
#[derive(Clone, Debug)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub const ZOO: &'static str = "zoo.json";
    pub const TRAIN_DATA: &'static str = "data/train.msbd";
    pub const EVAL_DATA: &'static str = "data/eval.msbd";
    pub const CONFIG: &'static str = "config.json";
    pub const REPORT: &'static str = "report.json";
    pub const MANIFEST: &'static str = "manifest.json";
    const CACHE_DIR: &'static str = ".cache";

    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn model(k: usize) -> String {
        format!("models/sae_k{k}.msae")
    }

    pub fn train_log(k: usize) -> String {
        format!("models/trainlog_k{k}.csv")
    }

    pub fn metrics(k: usize) -> String {
        format!("metrics/metrics_k{k}.csv")
    }

    pub fn fit(k: usize) -> String {
        format!("ising/fit_k{k}.msif")
    }

    pub fn partition(k: usize) -> String {
        format!("ising/partition_k{k}.csv")
    }

    pub fn discovery(k: usize) -> String {
        format!("ising/discovery_k{k}.json")
    }

    pub fn capture(k: usize) -> String {
        format!("theory/capture_k{k}.json")
    }
}

/// How far a run goes. Later targets include every stage they depend on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Zoo,
    Data,
    Train,
    Eval,
    IsingFit,
    Discover,
    Capture,
    Report,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum KStage {
    Train,
    Eval,
    Fit,
    Discover,
    Capture,
}

impl KStage {
    fn name(self) -> &'static str {
        match self {
            KStage::Train => "train",
            KStage::Eval => "eval",
            KStage::Fit => "ising_fit",
            KStage::Discover => "discover",
            KStage::Capture => "capture",
        }
    }

    fn depends_on(self) -> Option<KStage> {
        match self {
            KStage::Train => None,
            KStage::Eval | KStage::Fit | KStage::Capture => Some(KStage::Train),
            KStage::Discover => Some(KStage::Fit),
        }
    }
}

impl Target {
    fn k_stages(self) -> Vec<KStage> {
        use KStage::*;
        match self {
            Target::Zoo | Target::Data => vec![],
            Target::Train => vec![Train],
            Target::Eval => vec![Train, Eval],
            Target::IsingFit => vec![Train, Fit],
            Target::Discover => vec![Train, Fit, Discover],
            Target::Capture => vec![Train, Capture],
            Target::Report => vec![Train, Eval, Fit, Discover, Capture],
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    outputs: BTreeMap<String, String>,
}

/// Owns one run directory. Datasets are loaded lazily and kept in memory.
pub struct Runner {
    cfg: RunConfig,
    layout: Layout,
    config_hash: String,
    manifest: RunManifest,
    zoo: Option<Zoo>,
    train: Option<MixtureDataset>,
    eval: Option<MixtureDataset>,
}

impl Runner {
    /// Validates the config and prepares the run directory.
    pub fn new(cfg: RunConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let layout = Layout::new(cfg.out.clone());
        for dir in ["data", "models", "metrics", "ising", "theory", Layout::CACHE_DIR] {
            std::fs::create_dir_all(layout.path(dir))?;
        }
        let config_hash = cfg.hash();
        let mut text = serde_json::to_string_pretty(&cfg)?;
        text.push('\n');
        std::fs::write(layout.path(Layout::CONFIG), text)?;
        let mut manifest = RunManifest::new(config_hash.clone(), cfg.seed);
        manifest
            .artifacts
            .insert(Layout::CONFIG.into(), hash_file(&layout.path(Layout::CONFIG))?);
        Ok(Self {
            cfg,
            layout,
            config_hash,
            manifest,
            zoo: None,
            train: None,
            eval: None,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    /// Runs every stage `target` needs for each `k`, then writes the manifest.
    /// Shared stage failures abort; a failure at one `k` only skips that
    /// `k`'s dependent stages.
    pub fn run(&mut self, target: Target, ks: &[usize]) -> Result<&RunManifest, CliError> {
        if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > self.cfg.sae.c) {
            return Err(CliError::Config(format!("k = {k} outside [1, c = {}]", self.cfg.sae.c)));
        }
        let outcome = self.run_stages(target, ks);
        self.write_manifest()?;
        outcome?;
        Ok(&self.manifest)
    }

    fn run_stages(&mut self, target: Target, ks: &[usize]) -> Result<(), CliError> {
        self.stage("zoo", None, b"", vec![Layout::ZOO.into()], |r| {
            let json = zoo_to_json(&r.zoo()?.instances)?;
            std::fs::write(r.layout.path(Layout::ZOO), json + "\n")?;
            Ok(())
        })?;
        if target == Target::Zoo {
            return Ok(());
        }
        self.stage(
            "data",
            None,
            b"",
            vec![Layout::TRAIN_DATA.into(), Layout::EVAL_DATA.into()],
            |r| {
                let cfg = r.cfg.clone();
                let zoo = r.zoo()?;
                let train = generate(
                    zoo,
                    cfg.n_samples,
                    cfg.l0,
                    cfg.sigma_eps,
                    cfg.derived_seed("train-data"),
                )?;
                let eval = generate(
                    zoo,
                    cfg.eval.samples,
                    cfg.l0,
                    cfg.sigma_eps,
                    cfg.derived_seed("eval-data"),
                )?;
                save_dataset(&train, r.layout.path(Layout::TRAIN_DATA))?;
                save_dataset(&eval, r.layout.path(Layout::EVAL_DATA))?;
                Ok(())
            },
        )?;
        if target == Target::Data {
            return Ok(());
        }
        let mut completed = Vec::new();
        for &k in ks {
            if self.run_k(k, &target.k_stages()) {
                completed.push(k);
            }
        }
        if target == Target::Report {
            let done = completed.clone();
            let salt = format!("{completed:?}");
            self.stage("report", None, salt.as_bytes(), vec![Layout::REPORT.into()], move |r| {
                let rep = report::build_report(r, &done)?;
                let mut text = serde_json::to_string_pretty(&rep)?;
                text.push('\n');
                std::fs::write(r.layout.path(Layout::REPORT), text)?;
                Ok(())
            })?;
        }
        Ok(())
    }

    /// Returns true when every requested stage for `k` completed.
    fn run_k(&mut self, k: usize, stages: &[KStage]) -> bool {
        let mut failed: BTreeSet<KStage> = BTreeSet::new();
        for &st in stages {
            let name = format!("{}_k{k}", st.name());
            if st.depends_on().is_some_and(|d| failed.contains(&d)) {
                self.manifest.push(name, Some(k), StageStatus::Skipped, None);
                failed.insert(st);
                continue;
            }
            let outputs = match st {
                KStage::Train => vec![Layout::model(k), Layout::train_log(k)],
                KStage::Eval => vec![Layout::metrics(k)],
                KStage::Fit => vec![Layout::fit(k)],
                KStage::Discover => vec![Layout::partition(k), Layout::discovery(k)],
                KStage::Capture => vec![Layout::capture(k)],
            };
            let result = catch_unwind(AssertUnwindSafe(|| {
                self.stage(&name, Some(k), b"", outputs, |r| match st {
                    KStage::Train => r.train_stage(k),
                    KStage::Eval => r.eval_stage(k),
                    KStage::Fit => r.fit_stage(k),
                    KStage::Discover => r.discover_stage(k),
                    KStage::Capture => r.capture_stage(k),
                })
            }));
            match result {
                Ok(Ok(())) => {}
                Ok(Err(e)) => {
                    log::error!("{name}: {e}");
                    failed.insert(st);
                }
                Err(panic) => {
                    let msg = panic
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_else(|| "panic".into());
                    log::error!("{name}: panicked: {msg}");
                    self.manifest
                        .push(name, Some(k), StageStatus::Failed, Some(format!("panicked: {msg}")));
                    failed.insert(st);
                }
            }
        }
        failed.is_empty()
    }

    /// Runs `produce` unless a cache entry for this config, stage and salt
    /// matches the files on disk, then records the outputs.
    fn stage(
        &mut self,
        name: &str,
        k: Option<usize>,
        salt: &[u8],
        outputs: Vec<String>,
        produce: impl FnOnce(&mut Self) -> Result<(), CliError>,
    ) -> Result<(), CliError> {
        let key = {
            let mut h = Sha256::new();
            h.update(self.config_hash.as_bytes());
            h.update(b"/");
            h.update(name.as_bytes());
            h.update(b"/");
            h.update(salt);
            hex::encode(h.finalize())
        };
        let cache_path = self.layout.path(&format!("{}/{name}.json", Layout::CACHE_DIR));
        if let Some(hashes) = self.cached(&cache_path, &key, &outputs) {
            log::info!("{name}: cached");
            for (rel, rec) in hashes {
                self.manifest.artifacts.insert(rel, rec);
            }
            self.manifest.push(name, k, StageStatus::Completed, None);
            return Ok(());
        }
        log::info!("{name}: running");
        let _ = std::fs::remove_file(&cache_path);
        if let Err(e) = produce(self) {
            self.manifest.push(name, k, StageStatus::Failed, Some(e.to_string()));
            return Err(CliError::Stage {
                stage: name.into(),
                message: e.to_string(),
            });
        }
        let mut entry = CacheEntry {
            key,
            outputs: BTreeMap::new(),
        };
        for rel in &outputs {
            let rec = hash_file(&self.layout.path(rel))?;
            entry.outputs.insert(rel.clone(), rec.sha256.clone());
            self.manifest.artifacts.insert(rel.clone(), rec);
        }
        std::fs::write(&cache_path, serde_json::to_vec(&entry)?)?;
        self.manifest.push(name, k, StageStatus::Completed, None);
        Ok(())
    }

    fn cached(
        &self,
        cache_path: &Path,
        key: &str,
        outputs: &[String],
    ) -> Option<Vec<(String, crate::manifest::ArtifactRecord)>> {
        let entry: CacheEntry = serde_json::from_slice(&std::fs::read(cache_path).ok()?).ok()?;
        if entry.key != key || entry.outputs.len() != outputs.len() {
            return None;
        }
        outputs
            .iter()
            .map(|rel| {
                let rec = hash_file(&self.layout.path(rel)).ok()?;
                (entry.outputs.get(rel)? == &rec.sha256).then(|| (rel.clone(), rec))
            })
            .collect()
    }

    fn write_manifest(&self) -> Result<(), CliError> {
        self.manifest.save(&self.layout.path(Layout::MANIFEST))?;
        Ok(())
    }

    pub fn zoo(&mut self) -> Result<&Zoo, CliError> {
        if self.zoo.is_none() {
            self.zoo = Some(build_zoo(&self.cfg.zoo, self.cfg.seed)?);
        }
        Ok(self.zoo.as_ref().expect("zoo built"))
    }

    pub fn train_data(&mut self) -> Result<&MixtureDataset, CliError> {
        if self.train.is_none() {
            self.train = Some(load_dataset(self.layout.path(Layout::TRAIN_DATA))?);
        }
        Ok(self.train.as_ref().expect("train data loaded"))
    }

    pub fn eval_data(&mut self) -> Result<&MixtureDataset, CliError> {
        if self.eval.is_none() {
            self.eval = Some(load_dataset(self.layout.path(Layout::EVAL_DATA))?);
        }
        Ok(self.eval.as_ref().expect("eval data loaded"))
    }

    pub fn model(&self, k: usize) -> Result<SaeModel, CliError> {
        Ok(load_model(self.layout.path(&Layout::model(k)))?.0)
    }

    /// Codes of the evaluation set under the stored model for `k`.
    pub fn eval_codes(&mut self, k: usize) -> Result<CodeMatrix, CliError> {
        let model = self.model(k)?;
        Ok(model.encode_batch(self.eval_data()?.x.view())?)
    }

    fn train_stage(&mut self, k: usize) -> Result<(), CliError> {
        let (c, hyper, seed) = (self.cfg.sae.c, self.cfg.sae.hyper.clone(), self.cfg.derived_seed("sae"));
        let (model, log) = sae::train(self.train_data()?.x.view(), c, k, &hyper, seed)?;
        save_model(&model, seed, &hyper, self.layout.path(&Layout::model(k)))?;
        std::fs::write(self.layout.path(&Layout::train_log(k)), log.to_csv())?;
        Ok(())
    }

    fn eval_stage(&mut self, k: usize) -> Result<(), CliError> {
        let model = self.model(k)?;
        let settings = EvalSettings {
            spread_cap: self.cfg.eval.spread_cap,
            seed: self.cfg.derived_seed("eval"),
        };
        self.zoo()?;
        self.eval_data()?;
        let (zoo, data) = (self.zoo.as_ref().expect("zoo"), self.eval.as_ref().expect("eval data"));
        let metrics = eval::evaluate_model(&model, data, zoo, &settings)?;
        let text = format!("{METRICS_HEADER}\n{}", eval::metrics_csv_rows(k, &metrics));
        std::fs::write(self.layout.path(&Layout::metrics(k)), text)?;
        Ok(())
    }

    fn fit_stage(&mut self, k: usize) -> Result<(), CliError> {
        let codes = self.eval_codes(k)?;
        let fit = fit_codes(&codes, &self.cfg.ising)?;
        save_fit(&fit, self.layout.path(&Layout::fit(k)))?;
        Ok(())
    }

    fn discover_stage(&mut self, k: usize) -> Result<(), CliError> {
        let codes = self.eval_codes(k)?;
        let fit = load_fit(self.layout.path(&Layout::fit(k)))?;
        let found = analyze_fit(&codes, fit, &self.cfg.ising)?;
        write_partition(&self.layout.path(&Layout::partition(k)), &found.partition)?;
        std::fs::write(self.layout.path(&Layout::discovery(k)), found.report_json()? + "\n")?;
        Ok(())
    }

    fn capture_stage(&mut self, k: usize) -> Result<(), CliError> {
        let model = self.model(k)?;
        let seed = self.cfg.derived_seed("capture");
        let rep = theory::capture_report(&model, self.zoo()?, theory::CAPTURE_POINTS, seed)?;
        let mut text = serde_json::to_string_pretty(&rep)?;
        text.push('\n');
        std::fs::write(self.layout.path(&Layout::capture(k)), text)?;
        Ok(())
    }
}

pub const PARTITION_HEADER: &str = "atom,community";

pub fn write_partition(path: &Path, partition: &[usize]) -> std::io::Result<()> {
    let mut text = format!("{PARTITION_HEADER}\n");
    for (atom, community) in partition.iter().enumerate() {
        text.push_str(&format!("{atom},{community}\n"));
    }
    std::fs::write(path, text)
}

pub fn read_partition(path: &Path) -> Result<Vec<usize>, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = || CliError::Csv {
            line: i + 1,
            message: format!("expected atom,community, found {line:?}"),
        };
        let (atom, community) = line.split_once(',').ok_or_else(bad)?;
        let atom: usize = atom.parse().map_err(|_| bad())?;
        if atom != out.len() {
            return Err(bad());
        }
        out.push(community.parse().map_err(|_| bad())?);
    }
    Ok(out)
}

/// Full run: every stage for every configured `k`, plus the bundled report.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunManifest, CliError> {
    let mut runner = Runner::new(cfg.clone())?;
    let ks = cfg.sae.k_list.clone();
    Ok(runner.run(Target::Report, &ks)?.clone())
}

/// Ising fit, and unless `fit_only` the full discovery, for an external code
/// matrix. Writes `fit.msif`, `partition.csv` and `discovery.json` into `dir`.
pub fn discover_external(
    codes: &CodeMatrix,
    settings: &DiscoverSettings,
    dir: &Path,
    fit_only: bool,
) -> Result<Option<Discovery>, CliError> {
    std::fs::create_dir_all(dir)?;
    let fit = fit_codes(codes, settings)?;
    save_fit(&fit, dir.join("fit.msif"))?;
    if fit_only {
        return Ok(None);
    }
    let found = analyze_fit(codes, fit, settings)?;
    write_partition(&dir.join("partition.csv"), &found.partition)?;
    std::fs::write(dir.join("discovery.json"), found.report_json()? + "\n")?;
    Ok(Some(found))
}
