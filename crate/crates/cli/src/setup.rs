use std::path::{Path, PathBuf};

use kgrec::graphstore::Dataset;
use kgrec::toy::{generate_toy, ToyConfig};
use kgrec::trainer::TrainConfig;

use crate::error::{CliError, CliResult};
use crate::manifest::{content_hash, dir_fingerprints, DatasetRecord};
use crate::Common;

pub fn is_toy(name: &str) -> bool {
    matches!(name, "toy" | "toy-tiny")
}

/// Defaults sized for the named dataset.
pub fn preset_for(dataset: Option<&str>) -> TrainConfig {
    match dataset {
        Some("toy") => TrainConfig::toy(),
        Some("toy-tiny") => {
            let mut c = TrainConfig::toy();
            c.batch_size = 8;
            c.model.dim = 8;
            c.rationale.k_m = 4;
            c.rationale.rho_u = 2;
            c
        }
        _ => TrainConfig::default(),
    }
}

/// Config file (or a preset), then flags, then `--set` pairs. `base`
/// replaces the file/preset step, e.g. with a manifest's config.
pub fn resolve_config(c: &Common, base: Option<TrainConfig>) -> CliResult<TrainConfig> {
    let mut cfg = match (base, &c.config) {
        (Some(b), None) => b,
        (_, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            TrainConfig::from_toml_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        (None, None) => preset_for(c.dataset.as_deref()),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if let Some(v) = c.k_m {
        cfg.rationale.k_m = v;
    }
    if let Some(v) = c.rho_k {
        cfg.rationale.rho_k = v;
    }
    if let Some(v) = c.rho_u {
        cfg.rationale.rho_u = v;
    }
    if let Some(v) = c.tau {
        cfg.loss.tau = v;
    }
    if let Some(v) = c.lambda1 {
        cfg.loss.lambda1 = v;
    }
    if let Some(v) = c.lambda2 {
        cfg.loss.lambda2 = v;
    }
    if let Some(v) = c.layers {
        cfg.model.layers = v;
    }
    if let Some(v) = c.dim {
        cfg.model.dim = v;
    }
    if let Some(v) = c.epochs {
        cfg.epochs = v;
    }
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(&k.trim().replace('-', "_"), v)?;
    }
    for w in cfg.validate()? {
        log::warn!("{w}");
    }
    Ok(cfg)
}

/// Loads (or generates) the dataset named by `source`. Toy data and the
/// split of a train-only directory are drawn from `seed`.
pub fn load_dataset(source: &str, seed: u64, inverse: bool, core: Option<usize>) -> CliResult<(Dataset, DatasetRecord)> {
    let (mut ds, toy, files) = match source {
        "toy" | "toy-tiny" => {
            let t = if source == "toy" { ToyConfig::default() } else { ToyConfig::tiny() };
            (generate_toy(&t, seed, inverse)?, Some(t), Vec::new())
        }
        dir => {
            let p = Path::new(dir);
            if !p.is_dir() {
                return Err(CliError::Usage(format!("dataset directory not found: {dir}")));
            }
            let (ds, report) = Dataset::load_dir(p, inverse, seed)?;
            log::info!("loaded {dir}\n{report}");
            (ds, None, dir_fingerprints(p)?)
        }
    };
    if let Some(k) = core {
        ds = ds.k_core(k, seed)?;
    }
    let record = DatasetRecord {
        source: source.to_string(),
        toy,
        data_seed: seed,
        core,
        files,
        content_sha256: content_hash(&ds),
    };
    Ok((ds, record))
}

/// Rebuilds the dataset a manifest describes and checks it is unchanged.
pub fn reload(record: &DatasetRecord, inverse: bool) -> CliResult<Dataset> {
    let (ds, now) = load_dataset(&record.source, record.data_seed, inverse, record.core)?;
    if now.content_sha256 != record.content_sha256 {
        return Err(CliError::Usage(format!(
            "dataset {} changed since the manifest was written (content hash {} != {})",
            record.source, now.content_sha256, record.content_sha256
        )));
    }
    Ok(ds)
}

pub fn require_dataset(c: &Common) -> CliResult<&str> {
    c.dataset
        .as_deref()
        .ok_or_else(|| CliError::Usage("--dataset is required (a directory, `toy` or `toy-tiny`)".into()))
}

/// Creates the output directory; with `overwrite == false` an existing
/// non-empty directory is an error.
pub fn prepare_out(dir: &Path, overwrite: bool) -> CliResult<PathBuf> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?
            .next()
            .is_some();
        if non_empty && !overwrite {
            return Err(CliError::Usage(format!(
                "output directory {} is not empty and --overwrite=false",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir.to_path_buf())
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    kgrec::diffkernel::write_atomic(path, text.as_bytes())?;
    Ok(())
}

pub fn write_json(path: &Path, v: &serde_json::Value) -> CliResult<()> {
    write_text(path, &format!("{}\n", serde_json::to_string_pretty(v).expect("json serialises")))
}

pub fn parse_list<V: std::str::FromStr>(what: &str, s: &str) -> CliResult<Vec<V>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map_err(|_| CliError::Usage(format!("{what}: cannot parse `{p}`"))))
        .collect()
}
