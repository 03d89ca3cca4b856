use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::data::BatchPlan;
use crate::error::{Error, Result};
use crate::nn::Family;
use crate::optim::{InitMethod, OptimizerConfig, Schedule};
use crate::sparsity::{AdmmConfig, Scheme};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Mnist,
    Cifar10,
    /// Gaussian blobs; needs no files on disk.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSettings {
    pub dataset: DatasetName,
    /// Dataset root; falls back to `ROBUSTPRUNE_DATA_DIR`, then `data`.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Keep only the first `n` training images.
    #[serde(default)]
    pub train_subset: Option<usize>,
    #[serde(default)]
    pub test_subset: Option<usize>,
    /// Sample counts and blob separation for the synthetic dataset.
    #[serde(default = "default_synthetic_train")]
    pub synthetic_train: usize,
    #[serde(default = "default_synthetic_test")]
    pub synthetic_test: usize,
    #[serde(default = "default_separation")]
    pub synthetic_separation: f64,
}

fn default_synthetic_train() -> usize {
    1000
}

fn default_synthetic_test() -> usize {
    200
}

fn default_separation() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSettings {
    pub family: Family,
    /// Width scales `w`; every pair with source wider than target forms a
    /// pruning cell.
    pub widths: Vec<usize>,
    #[serde(default = "default_init")]
    pub init: InitMethod,
}

fn default_init() -> InitMethod {
    InitMethod::KaimingUniform
}

/// Flat optimizer description that reads well in TOML.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    Adam,
    Sgd,
    CosAnneal,
}

impl OptimizerName {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerName::Adam => "adam",
            OptimizerName::Sgd => "sgd",
            OptimizerName::CosAnneal => "cos_anneal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSettings {
    pub name: OptimizerName,
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// Step-decay milestones in epochs; ignored by `cos_anneal`.
    #[serde(default)]
    pub milestones: Vec<usize>,
    #[serde(default = "default_decay")]
    pub decay: f64,
    /// Cosine period; defaults to the epoch budget of the run.
    #[serde(default)]
    pub t_max: Option<f64>,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_decay() -> f64 {
    0.1
}

impl OptimizerSettings {
    pub fn named(name: OptimizerName, lr: f64) -> Self {
        Self {
            name,
            lr,
            momentum: default_momentum(),
            milestones: Vec::new(),
            decay: default_decay(),
            t_max: None,
        }
    }

    /// Concrete optimizer for a run of `epochs` epochs.
    pub fn build(&self, epochs: usize) -> OptimizerConfig {
        let mut cfg = match self.name {
            OptimizerName::Adam => OptimizerConfig::adam(self.lr),
            OptimizerName::Sgd => OptimizerConfig::sgd(self.lr, self.momentum),
            OptimizerName::CosAnneal => {
                return OptimizerConfig::cos_anneal(
                    self.lr,
                    self.momentum,
                    self.t_max.unwrap_or(epochs.max(1) as f64),
                )
            }
        };
        if !self.milestones.is_empty() {
            cfg.schedule = Schedule::StepDecay {
                milestones: self.milestones.clone(),
                factor: self.decay,
            };
        }
        cfg
    }

    fn validate(&self, field: &str) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("{field}.lr"), "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(
                format!("{field}.momentum"),
                "must lie in [0, 1)",
            ));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::config(
                format!("{field}.decay"),
                "must lie in (0, 1]",
            ));
        }
        if matches!(self.t_max, Some(t) if t.is_nan() || t <= 0.0) {
            return Err(Error::config(format!("{field}.t_max"), "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub optimizer: OptimizerSettings,
    /// Caps batches per epoch, mostly for smoke runs.
    #[serde(default)]
    pub max_batches: Option<usize>,
    /// Epochs over which dense adversarial training ramps the attack up
    /// to full strength. Pruning and retraining always use the full attack.
    #[serde(default)]
    pub attack_warmup_epochs: usize,
}

fn default_batch() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSettings {
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    /// Keep ratios for the post-pruning study; empty means the ratios
    /// implied by the width pairs.
    #[serde(default)]
    pub keep_ratios: Vec<f64>,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_sub_epochs")]
    pub sub_epochs: usize,
    #[serde(default)]
    pub steps_per_iteration: Option<usize>,
    /// Masked retraining after the hard prune; defaults to `train.epochs`.
    #[serde(default)]
    pub retrain_epochs: Option<usize>,
    /// Start ADMM from the adversarially trained source (true) or from its
    /// initialization (false).
    #[serde(default = "default_true")]
    pub warm_start: bool,
    /// Optimizer during ADMM and retraining; defaults to `train.optimizer`.
    #[serde(default)]
    pub optimizer: Option<OptimizerSettings>,
}

fn default_schemes() -> Vec<Scheme> {
    vec![Scheme::Filter]
}

fn default_rho() -> f64 {
    1e-3
}

fn default_iterations() -> usize {
    30
}

fn default_sub_epochs() -> usize {
    1
}

fn default_true() -> bool {
    true
}

impl Default for PruneSettings {
    fn default() -> Self {
        Self {
            schemes: default_schemes(),
            keep_ratios: Vec::new(),
            rho: default_rho(),
            iterations: default_iterations(),
            sub_epochs: default_sub_epochs(),
            steps_per_iteration: None,
            retrain_epochs: None,
            warm_start: true,
            optimizer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LotterySettings {
    /// Train the masked large model instead of the shrunken dense one.
    #[serde(default)]
    pub masked: bool,
    #[serde(default = "default_lottery_scheme")]
    pub scheme: Scheme,
}

fn default_lottery_scheme() -> Scheme {
    Scheme::Filter
}

impl Default for LotterySettings {
    fn default() -> Self {
        Self {
            masked: false,
            scheme: Scheme::Filter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitStudySettings {
    #[serde(default = "default_inits")]
    pub inits: Vec<InitMethod>,
    #[serde(default = "default_optimizers")]
    pub optimizers: Vec<OptimizerSettings>,
    #[serde(default = "default_seeds_per_cell")]
    pub seeds_per_cell: usize,
}

fn default_inits() -> Vec<InitMethod> {
    InitMethod::ALL.to_vec()
}

fn default_optimizers() -> Vec<OptimizerSettings> {
    vec![
        OptimizerSettings::named(OptimizerName::Adam, 1e-4),
        OptimizerSettings::named(OptimizerName::Sgd, 1e-2),
        OptimizerSettings::named(OptimizerName::CosAnneal, 1e-2),
    ]
}

fn default_seeds_per_cell() -> usize {
    10
}

impl Default for InitStudySettings {
    fn default() -> Self {
        Self {
            inits: default_inits(),
            optimizers: default_optimizers(),
            seeds_per_cell: default_seeds_per_cell(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSettings {
    /// `name=path` checkpoints; empty means the widest source and every
    /// pruned model of the first seed.
    #[serde(default)]
    pub checkpoints: Vec<String>,
}

/// Everything a driver needs, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label written into every report header, e.g. `desk` or `paper`.
    pub profile: String,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub data: DataSettings,
    pub model: ModelSettings,
    pub train: TrainSettings,
    /// Adversary used while training; absent means natural training only.
    #[serde(default)]
    pub train_attack: Option<AttackConfig>,
    pub eval_attack: AttackConfig,
    #[serde(default)]
    pub prune: PruneSettings,
    #[serde(default)]
    pub lottery: LotterySettings,
    #[serde(default)]
    pub init_study: InitStudySettings,
    #[serde(default)]
    pub transfer: TransferSettings,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text` after applying `key=value` overrides with dotted keys.
    pub fn from_toml_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<config>", e.to_string()))?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("<config>", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::invalid(format!("cannot render config: {e}")))
    }

    /// Checks every field before any training starts.
    pub fn validate(&self) -> Result<()> {
        if self.profile.trim().is_empty() {
            return Err(Error::config("profile", "must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "needs at least one seed"));
        }
        let d = &self.data;
        if d.train_subset == Some(0) {
            return Err(Error::config("data.train_subset", "must be at least 1"));
        }
        if d.test_subset == Some(0) {
            return Err(Error::config("data.test_subset", "must be at least 1"));
        }
        if d.dataset == DatasetName::Synthetic && (d.synthetic_train == 0 || d.synthetic_test == 0)
        {
            return Err(Error::config(
                "data.synthetic_train",
                "synthetic sample counts must be positive",
            ));
        }
        let expects_mnist = self.model.family == Family::MnistLenet;
        match d.dataset {
            DatasetName::Mnist if !expects_mnist => {
                return Err(Error::config(
                    "model.family",
                    "MNIST needs the mnist_lenet family",
                ));
            }
            DatasetName::Cifar10 if expects_mnist => {
                return Err(Error::config(
                    "model.family",
                    "CIFAR-10 needs a cifar_* family",
                ));
            }
            _ => {}
        }
        if self.model.widths.is_empty() {
            return Err(Error::config("model.widths", "needs at least one width"));
        }
        if self.model.widths.contains(&0) {
            return Err(Error::config("model.widths", "widths must be at least 1"));
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if t.max_batches == Some(0) {
            return Err(Error::config("train.max_batches", "must be at least 1"));
        }
        t.optimizer.validate("train.optimizer")?;
        if let Some(a) = &self.train_attack {
            a.validate().map_err(|e| rename_field(e, "train_attack"))?;
        }
        self.eval_attack
            .validate()
            .map_err(|e| rename_field(e, "eval_attack"))?;
        let p = &self.prune;
        if p.schemes.is_empty() {
            return Err(Error::config("prune.schemes", "needs at least one scheme"));
        }
        if p.keep_ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return Err(Error::config(
                "prune.keep_ratios",
                "ratios must lie in (0, 1]",
            ));
        }
        self.admm()
            .validate()
            .map_err(|e| rename_field(e, "prune"))?;
        if let Some(o) = &p.optimizer {
            o.validate("prune.optimizer")?;
        }
        let s = &self.init_study;
        if s.seeds_per_cell == 0 {
            return Err(Error::config(
                "init_study.seeds_per_cell",
                "must be at least 1",
            ));
        }
        if s.inits.is_empty() {
            return Err(Error::config(
                "init_study.inits",
                "needs at least one method",
            ));
        }
        if s.optimizers.is_empty() {
            return Err(Error::config(
                "init_study.optimizers",
                "needs at least one optimizer",
            ));
        }
        for (i, o) in s.optimizers.iter().enumerate() {
            o.validate(&format!("init_study.optimizers[{i}]"))?;
        }
        for c in &self.transfer.checkpoints {
            if !c.contains('=') {
                return Err(Error::config(
                    "transfer.checkpoints",
                    format!("`{c}` is not of the form name=path"),
                ));
            }
        }
        Ok(())
    }

    /// Width pairs `(source, target)` with `source > target`, widest first.
    pub fn width_pairs(&self) -> Vec<(usize, usize)> {
        let mut w = self.model.widths.clone();
        w.sort_unstable_by(|a, b| b.cmp(a));
        w.dedup();
        let mut out = Vec::new();
        for (i, &s) in w.iter().enumerate() {
            for &t in &w[i + 1..] {
                out.push((s, t));
            }
        }
        out
    }

    pub fn train_config(&self, adversarial: bool, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch: self.batch_plan(seed),
            optimizer: self.train.optimizer.build(self.train.epochs),
            attack: if adversarial { self.train_attack } else { None },
            max_batches: self.train.max_batches,
            attack_warmup_epochs: self.train.attack_warmup_epochs,
        }
    }

    /// Training settings used inside ADMM and for masked retraining.
    pub fn prune_train_config(&self, seed: u64, epochs: usize) -> TrainConfig {
        let opt = self
            .prune
            .optimizer
            .as_ref()
            .unwrap_or(&self.train.optimizer);
        TrainConfig {
            epochs,
            batch: self.batch_plan(seed),
            optimizer: opt.build(epochs),
            attack: self.train_attack,
            max_batches: self.train.max_batches,
            attack_warmup_epochs: 0,
        }
    }

    pub fn retrain_epochs(&self) -> usize {
        self.prune.retrain_epochs.unwrap_or(self.train.epochs)
    }

    pub fn admm(&self) -> AdmmConfig {
        AdmmConfig {
            rho: self.prune.rho,
            iterations: self.prune.iterations,
            sub_epochs: self.prune.sub_epochs,
            steps_per_iteration: self.prune.steps_per_iteration,
            retrain_epochs: self.retrain_epochs(),
        }
    }

    fn batch_plan(&self, seed: u64) -> BatchPlan {
        BatchPlan {
            batch_size: self.train.batch_size,
            shuffle_seed: seed,
            drop_last: false,
        }
    }

    /// One line recorded at the top of every report.
    pub fn profile_header(&self) -> String {
        let a = self.train_attack.map_or_else(
            || "none".to_string(),
            |a| format!("eps={} alpha={} T={}", a.epsilon, a.step_size, a.steps),
        );
        let e = &self.eval_attack;
        format!(
            "profile={} dataset={:?} train_subset={} test_subset={} epochs={} warmup={} train_attack[{}] eval_attack[eps={} alpha={} T={}]",
            self.profile,
            self.data.dataset,
            self.data.train_subset.map_or("all".into(), |n| n.to_string()),
            self.data.test_subset.map_or("all".into(), |n| n.to_string()),
            self.train.epochs,
            self.train.attack_warmup_epochs,
            a,
            e.epsilon,
            e.step_size,
            e.steps
        )
    }
}

fn rename_field(e: Error, prefix: &str) -> Error {
    match e {
        Error::Config { field, message } => {
            let tail = field.split_once('.').map_or(field.as_str(), |(_, t)| t);
            Error::config(format!("{prefix}.{tail}"), message)
        }
        other => other,
    }
}

/// Sets `a.b.c = value` in `table`, creating intermediate tables. The value
/// is read as a TOML literal when possible and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "malformed override key"));
    }
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let (last, path) = parts.split_last().expect("key has at least one part");
    let mut cur = table;
    for p in path {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), parsed);
    Ok(())
}

/// Splits `--key=value` style arguments (leading dashes optional).
pub fn parse_override(arg: &str) -> Result<(String, String)> {
    let s = arg.trim_start_matches('-');
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::config(s, "override must look like --key=value"))?;
    Ok((k.to_string(), v.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SMOKE: &str = r#"
profile = "smoke"
output_dir = "out"
seeds = [0]

[data]
dataset = "synthetic"

[model]
family = "mnist_lenet"
widths = [1, 2]

[train]
epochs = 1
optimizer = { name = "adam", lr = 1e-3 }

[eval_attack]
epsilon = 0.3
step_size = 0.01
steps = 40
random_start = true
"#;

    #[test]
    fn parses_and_fills_defaults() {
        let c = ExperimentConfig::from_toml_str(SMOKE).unwrap();
        assert_eq!(c.prune.iterations, 30);
        assert_eq!(c.prune.rho, 1e-3);
        assert_eq!(c.init_study.seeds_per_cell, 10);
        assert_eq!(c.init_study.inits.len() * c.init_study.optimizers.len(), 21);
        assert_eq!(c.width_pairs(), vec![(2, 1)]);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let o = [
            parse_override("--train.epochs=3").unwrap(),
            parse_override("--prune.schemes=[\"column\"]").unwrap(),
            parse_override("--output_dir=elsewhere").unwrap(),
        ];
        let c = ExperimentConfig::from_toml_with_overrides(SMOKE, &o).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.prune.schemes, vec![Scheme::Column]);
        assert_eq!(c.output_dir, PathBuf::from("elsewhere"));
    }

    #[test]
    fn rejections_name_the_field() {
        let bad = |k: &str, v: &str| {
            let o = [(k.to_string(), v.to_string())];
            match ExperimentConfig::from_toml_with_overrides(SMOKE, &o) {
                Err(Error::Config { field, .. }) => field,
                other => panic!("expected a config error, got {other:?}"),
            }
        };
        assert_eq!(bad("eval_attack.epsilon", "-1.0"), "eval_attack.epsilon");
        assert_eq!(bad("train.optimizer.lr", "0.0"), "train.optimizer.lr");
        assert_eq!(bad("prune.rho", "0.0"), "prune.rho");
        assert_eq!(bad("seeds", "[]"), "seeds");
        assert_eq!(bad("train.bogus", "1"), "<config>");
    }

    #[test]
    fn mismatched_family_rejected() {
        let o = [
            ("data.dataset".to_string(), "mnist".to_string()),
            ("model.family".into(), "cifar_lenet".into()),
        ];
        assert!(matches!(
            ExperimentConfig::from_toml_with_overrides(SMOKE, &o),
            Err(Error::Config { field, .. }) if field == "model.family"
        ));
    }
}
