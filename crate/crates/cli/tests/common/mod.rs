use std::path::Path;

use msb_cli::RunConfig;

/// Eight instances in `R^16` with a two-point k sweep; runs in seconds.
pub fn tiny_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.zoo = msb_core::ZooConfig::with_variants_per_kind(16, 1);
    cfg.zoo.calibration_samples = 2000;
    cfg.n_samples = 3000;
    cfg.l0 = 2;
    cfg.sae.c = 32;
    cfg.sae.k_list = vec![2, 4];
    cfg.sae.hyper.epochs = 2;
    cfg.sae.hyper.batch_size = 256;
    cfg.eval.samples = 1000;
    cfg.eval.spread_cap = 200;
    cfg.ising.max_samples = Some(1000);
    cfg.seed = 5;
    cfg.out = out.to_path_buf();
    cfg
}
