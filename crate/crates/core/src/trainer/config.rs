use serde::{Deserialize, Serialize};

use crate::diffkernel::AdamConfig;
use crate::error::{KgError, Result};
use crate::model::ModelConfig;
use crate::objectives::LossConfig;
use crate::rationale::RationaleConfig;

/// Mask sizes the search space is drawn from; others are allowed but warned.
pub const KM_GRID: [usize; 4] = [128, 256, 512, 1024];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    /// BPR triples per step.
    pub batch_size: usize,
    /// Evaluate on the validation split every this many epochs.
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    /// Ranking cutoff for Recall@n / NDCG@n.
    pub topn: usize,
    pub precision: Precision,
    /// Threads used by evaluation.
    pub workers: usize,
    pub inverse_relations: bool,
    pub model: ModelConfig,
    pub rationale: RationaleConfig,
    pub loss: LossConfig,
    pub optim: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 2023,
            epochs: 200,
            batch_size: 1024,
            eval_every: 1,
            patience: 10,
            topn: 20,
            precision: Precision::F32,
            workers: 1,
            inverse_relations: true,
            model: ModelConfig::default(),
            rationale: RationaleConfig::default(),
            loss: LossConfig::default(),
            optim: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Settings sized for the built-in toy dataset.
    pub fn toy() -> Self {
        let mut c = TrainConfig::default();
        c.batch_size = 256;
        c.patience = 20;
        c.model.dim = 32;
        c.rationale.k_m = 64;
        c.rationale.rho_u = 64;
        c.optim.lr = 5e-3;
        c
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| KgError::Config(e.to_string().trim().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Static checks. Returns warnings for legal but unusual settings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let bad = |field: &str, why: String| Err(KgError::Config(format!("{field}: {why}")));
        if self.model.dim == 0 {
            return bad("model.dim", "must be positive".into());
        }
        if self.model.layers == 0 {
            return bad("model.layers", "must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.rationale.rho_k) {
            return bad("rationale.rho_k", format!("{} outside [0, 1)", self.rationale.rho_k));
        }
        if !(self.loss.tau > 0.0) {
            return bad("loss.tau", format!("{} must be positive", self.loss.tau));
        }
        for (f, v) in [("loss.lambda1", self.loss.lambda1), ("loss.lambda2", self.loss.lambda2)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(f, format!("{v} must be a non-negative number"));
            }
        }
        if !(self.optim.lr > 0.0) {
            return bad("optim.lr", format!("{} must be positive", self.optim.lr));
        }
        if !(0.0..1.0).contains(&self.optim.beta1) || !(0.0..1.0).contains(&self.optim.beta2) {
            return bad("optim.beta1/beta2", "must lie in [0, 1)".into());
        }
        if self.optim.weight_decay < 0.0 {
            return bad("optim.weight_decay", "must be non-negative".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every", "must be at least 1".into());
        }
        if self.topn == 0 {
            return bad("topn", "must be at least 1".into());
        }
        let mut warnings = Vec::new();
        if self.loss.lambda1 > 0.0 && !KM_GRID.contains(&self.rationale.k_m) {
            warnings.push(format!(
                "rationale.k_m = {} is outside the usual grid {KM_GRID:?}",
                self.rationale.k_m
            ));
        }
        Ok(warnings)
    }

    /// Checks that depend on the dataset: set sizes must fit the graphs.
    pub fn validate_for(&self, num_triplets: usize, num_train_edges: usize) -> Result<()> {
        if self.rationale.k_m > num_triplets {
            return Err(KgError::Config(format!(
                "rationale.k_m: k_m exceeds triplet count ({} > {num_triplets})",
                self.rationale.k_m
            )));
        }
        if self.rationale.rho_u > 0 && self.rationale.rho_u >= num_train_edges {
            return Err(KgError::Config(format!(
                "rationale.rho_u: {} must be below the training edge count {num_train_edges}",
                self.rationale.rho_u
            )));
        }
        Ok(())
    }

    /// Applies `name = value` with the CLI's short names.
    pub fn set(&mut self, name: &str, value: &str) -> Result<()> {
        fn parse<V: std::str::FromStr>(name: &str, value: &str) -> Result<V> {
            value
                .trim()
                .parse()
                .map_err(|_| KgError::Config(format!("{name}: cannot parse `{value}`")))
        }
        match name {
            "seed" => self.seed = parse(name, value)?,
            "epochs" => self.epochs = parse(name, value)?,
            "batch_size" => self.batch_size = parse(name, value)?,
            "patience" => self.patience = parse(name, value)?,
            "workers" => self.workers = parse(name, value)?,
            "dim" | "d" => self.model.dim = parse(name, value)?,
            "layers" | "L" => self.model.layers = parse(name, value)?,
            "k_m" => self.rationale.k_m = parse(name, value)?,
            "rho_k" => self.rationale.rho_k = parse(name, value)?,
            "rho_u" => self.rationale.rho_u = parse(name, value)?,
            "tau" => self.loss.tau = parse(name, value)?,
            "lambda1" => self.loss.lambda1 = parse(name, value)?,
            "lambda2" => self.loss.lambda2 = parse(name, value)?,
            "lr" => self.optim.lr = parse(name, value)?,
            "weight_decay" => self.optim.weight_decay = parse(name, value)?,
            "topn" => self.topn = parse(name, value)?,
            "eval_every" => self.eval_every = parse(name, value)?,
            "precision" => {
                self.precision = match value.trim() {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(KgError::Config(format!("precision: expected f32 or f64, got `{value}`"))),
                }
            }
            _ => return Err(KgError::Config(format!("unknown parameter `{name}`"))),
        }
        Ok(())
    }

    /// Values searched by `--sweep <param>`.
    pub fn sweep_grid(name: &str) -> Result<Vec<String>> {
        let v: Vec<String> = match name {
            "k_m" => KM_GRID.iter().map(|k| k.to_string()).collect(),
            "tau" => (1..=10).map(|i| format!("{:.1}", i as f64 / 10.0)).collect(),
            "rho_k" => ["0.2", "0.3", "0.4", "0.5", "0.6"].map(String::from).to_vec(),
            "rho_u" => ["128", "256", "512", "1024"].map(String::from).to_vec(),
            "lambda1" => ["0.01", "0.1", "1.0"].map(String::from).to_vec(),
            "lambda2" => ["0.001", "0.01", "0.1"].map(String::from).to_vec(),
            _ => return Err(KgError::Config(format!("no sweep grid for `{name}`"))),
        };
        Ok(v)
    }
}
