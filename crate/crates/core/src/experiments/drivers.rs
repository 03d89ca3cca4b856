use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{DatasetName, ExperimentConfig};
use super::lottery::shrink_to_support;
use super::report::{file_digest, sha256_hex, Manifest, Report};
use crate::data::{load_cifar10, load_mnist, resolve_data_dir, synthetic_blobs, Dataset, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, transfer_eval, EvalReport, TransferMatrix};
use crate::nn::{build_network, Checkpoint, CheckpointMeta, Network, NUM_CLASSES};
use crate::numerics::{Rng, Stream};
use crate::optim::init_params;
use crate::sparsity::{
    concurrent_train_prune, post_prune, IterationLog, Monitor, Scheme, SparsityConstraint,
};
use crate::train::train;

/// Names accepted by [`run_experiment`].
pub const EXPERIMENTS: [&str; 6] = [
    "scratch",
    "prune_grid",
    "lottery",
    "init_study",
    "post_prune",
    "transfer",
];

// Substream tags shared by every driver.
const EVAL_STREAM: Stream = Stream::Other(3);
const TRAIN_STREAM: Stream = Stream::Other(4);
const PRUNE_STREAM: Stream = Stream::Other(5);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScratchRow {
    pub width: usize,
    pub seed: u64,
    pub training: String,
    pub natural_accuracy: f64,
    pub adversarial_accuracy: f64,
    pub natural_loss: f64,
    pub adversarial_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneRow {
    pub scheme: Scheme,
    pub source_width: usize,
    pub target_width: usize,
    pub keep_ratio: f64,
    pub seed: u64,
    pub natural_accuracy: f64,
    pub adversarial_accuracy: f64,
    pub kept_weights: usize,
    pub total_weights: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LotteryRow {
    pub source_width: usize,
    pub target_width: usize,
    pub seed: u64,
    pub variant: String,
    pub natural_accuracy: f64,
    pub adversarial_accuracy: f64,
    /// The concurrently pruned model the mask came from.
    pub concurrent_natural_accuracy: f64,
    pub concurrent_adversarial_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitRow {
    pub init: String,
    pub optimizer: String,
    pub runs: usize,
    pub natural_mean: f64,
    pub adversarial_mean: f64,
    pub adversarial_std: f64,
    /// Runs whose natural accuracy sits within one point of the majority
    /// class share of the test set.
    pub saddle_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PostPruneRow {
    pub scheme: Scheme,
    pub source_width: usize,
    pub target_width: Option<usize>,
    pub keep_ratio: f64,
    pub seed: u64,
    pub source_natural: f64,
    pub source_adversarial: f64,
    pub no_retrain_natural: f64,
    pub no_retrain_adversarial: f64,
    pub retrain_natural: f64,
    pub retrain_adversarial: f64,
    pub concurrent_natural: f64,
    pub concurrent_adversarial: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferRow {
    pub source: String,
    pub target: String,
    pub accuracy: f64,
}

/// Loaded datasets plus the checkpoint cache of one configuration.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub train: Dataset,
    pub test: Dataset,
    train_key: String,
    prune_key: String,
    inputs: Vec<(String, String)>,
}

impl Context {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let (train, test) = load_data(&cfg)?;
        let train_key = key_of(&(&cfg.data, &cfg.model, &cfg.train, &cfg.train_attack))?;
        // only the settings that shape one pruned model, so adding a scheme
        // or a ratio to the grid keeps earlier cells cached
        let prune_key = key_of(&(
            &train_key,
            cfg.admm(),
            cfg.prune.warm_start,
            &cfg.prune.optimizer,
        ))?;
        let inputs = vec![
            ("data:train".to_string(), dataset_digest(&train)),
            ("data:test".to_string(), dataset_digest(&test)),
        ];
        Ok(Self {
            cfg,
            train,
            test,
            train_key,
            prune_key,
            inputs,
        })
    }

    pub fn output_dir(&self) -> &Path {
        &self.cfg.output_dir
    }

    pub fn checkpoint_path(&self, name: &str) -> PathBuf {
        self.cfg
            .output_dir
            .join("checkpoints")
            .join(format!("{name}.ckpt"))
    }

    pub fn eval_rng(&self, seed: u64) -> Rng {
        Rng::new(seed).substream(EVAL_STREAM, 0)
    }

    pub fn evaluate(&self, ckpt: &Checkpoint, seed: u64) -> Result<EvalReport> {
        evaluate(
            ckpt,
            &self.test,
            &self.cfg.eval_attack,
            &self.eval_rng(seed),
        )
    }

    fn monitor(&self, seed: u64) -> Monitor<'_> {
        Monitor {
            data: &self.test,
            attack: self.cfg.eval_attack,
            seed: self.eval_rng(seed).seed(),
        }
    }

    /// Loads `name` from the cache when it was produced under `key`,
    /// otherwise builds and stores it.
    fn cached(
        &mut self,
        name: &str,
        key: &str,
        build: impl FnOnce(&mut Self) -> Result<Checkpoint>,
    ) -> Result<Checkpoint> {
        let path = self.checkpoint_path(name);
        if path.exists() {
            if let Ok(c) = Checkpoint::load(&path) {
                if c.meta.extra.get("run_key").map(String::as_str) == Some(key) {
                    log::info!("reusing {}", path.display());
                    self.record_input(&path)?;
                    return Ok(c);
                }
            }
        }
        let mut c = build(self)?;
        c.meta.extra.insert("run_key".into(), key.to_string());
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        c.save(&path)?;
        Ok(c)
    }

    fn record_input(&mut self, path: &Path) -> Result<()> {
        let name = path.display().to_string();
        if !self.inputs.iter().any(|(n, _)| *n == name) {
            let digest = file_digest(path)?;
            self.inputs.push((name, digest));
        }
        Ok(())
    }

    fn init_key(&self) -> Result<String> {
        key_of(&(&self.cfg.model.family, &self.cfg.model.init))
    }

    /// Initial weights for width `w`, saved so inherited-initialization
    /// runs can find them later.
    pub fn initial(&mut self, w: usize, seed: u64) -> Result<Checkpoint> {
        let key = self.init_key()?;
        self.cached(&format!("init_w{w}_s{seed}"), &key, |ctx| {
            let spec = build_network(ctx.cfg.model.family, w)?;
            let params = init_params(&spec, ctx.cfg.model.init, &Rng::new(seed));
            Ok(Checkpoint::new(
                spec,
                params,
                CheckpointMeta {
                    seed,
                    training: "init".into(),
                    ..CheckpointMeta::default()
                },
            ))
        })
    }

    /// A dense model of width `w` trained from its initialization.
    pub fn trained(&mut self, w: usize, seed: u64, adversarial: bool) -> Result<Checkpoint> {
        let start = self.initial(w, seed)?;
        let tag = if adversarial { "adv" } else { "nat" };
        let key = self.train_key.clone();
        self.cached(&format!("{tag}_w{w}_s{seed}"), &key, |ctx| {
            let cfg = ctx.cfg.train_config(adversarial, seed);
            let net = Network::new(start.spec.clone())?;
            let mut params = start.params.clone();
            log::info!("training {tag} w={w} seed={seed}");
            let history = train(
                &net,
                &mut params,
                &ctx.train,
                &cfg,
                &Rng::new(seed).substream(TRAIN_STREAM, w as u64),
                None,
                |_, _| Ok(()),
            )?;
            let training = if adversarial && cfg.attack.is_some() {
                "adversarial"
            } else {
                "natural"
            };
            Ok(Checkpoint::new(
                start.spec.clone(),
                params,
                CheckpointMeta {
                    seed,
                    epoch: history.len(),
                    training: training.into(),
                    ..CheckpointMeta::default()
                },
            ))
        })
    }

    /// Concurrent adversarial training and pruning of the width-`src`
    /// model at a uniform keep ratio. The per-iteration log lands in
    /// `output_dir/logs`.
    pub fn pruned(
        &mut self,
        scheme: Scheme,
        src: usize,
        keep: f64,
        seed: u64,
    ) -> Result<Checkpoint> {
        let start = if self.cfg.prune.warm_start {
            self.trained(src, seed, true)?
        } else {
            self.initial(src, seed)?
        };
        let name = format!("admm_{scheme}_w{src}_k{keep:.4}_s{seed}");
        let key = self.prune_key.clone();
        self.cached(&name, &key, |ctx| {
            let c = SparsityConstraint::uniform(&start.params, scheme, keep)?;
            let train_cfg = ctx.cfg.prune_train_config(seed, ctx.cfg.retrain_epochs());
            let mut rows: Vec<IterationLog> = Vec::new();
            log::info!("pruning {scheme} w={src} keep={keep} seed={seed}");
            let out = concurrent_train_prune(
                &start,
                &c,
                &ctx.cfg.admm(),
                &train_cfg,
                &ctx.train,
                &Rng::new(seed).substream(PRUNE_STREAM, src as u64),
                None,
                |l| rows.push(l.clone()),
            )?;
            write_iteration_log(
                &ctx.cfg.output_dir.join("logs").join(format!("{name}.csv")),
                &rows,
            )?;
            Ok(out.checkpoint)
        })
    }

    fn finish<R: Serialize>(&self, name: &str, rows: Vec<R>) -> Result<Report<R>> {
        let report = Report {
            name: name.to_string(),
            header: self.cfg.profile_header(),
            rows,
        };
        report.write(self.output_dir())?;
        Manifest::new(name, &self.cfg, self.inputs.clone())?.write(self.output_dir())?;
        Ok(report)
    }

    /// Natural and adversarial training from scratch for every width and seed.
    pub fn scratch_baseline(&mut self) -> Result<Report<ScratchRow>> {
        let mut rows = Vec::new();
        let modes: &[bool] = if self.cfg.train_attack.is_some() {
            &[false, true]
        } else {
            &[false]
        };
        for w in self.cfg.model.widths.clone() {
            for seed in self.cfg.seeds.clone() {
                for &adv in modes {
                    let ckpt = self.trained(w, seed, adv)?;
                    let r = self.evaluate(&ckpt, seed)?;
                    rows.push(ScratchRow {
                        width: w,
                        seed,
                        training: ckpt.meta.training.clone(),
                        natural_accuracy: r.natural_accuracy,
                        adversarial_accuracy: r.adversarial_accuracy,
                        natural_loss: r.natural_loss,
                        adversarial_loss: r.adversarial_loss,
                    });
                }
            }
        }
        self.finish("scratch", rows)
    }

    /// The triangular grid of width pairs for every configured scheme. The
    /// keep ratio of a cell is `target / source`, which matches the target
    /// network's unit count in every width-scaled layer.
    pub fn prune_grid(&mut self) -> Result<Report<PruneRow>> {
        let mut rows = Vec::new();
        for scheme in self.cfg.prune.schemes.clone() {
            for (src, tgt) in self.cfg.width_pairs() {
                for seed in self.cfg.seeds.clone() {
                    rows.push(self.prune_cell(scheme, src, tgt, seed)?);
                }
            }
        }
        self.finish("prune_grid", rows)
    }

    pub fn prune_cell(
        &mut self,
        scheme: Scheme,
        src: usize,
        tgt: usize,
        seed: u64,
    ) -> Result<PruneRow> {
        if src <= tgt {
            return Err(Error::invalid(format!(
                "pruning cell {src}->{tgt}: source width must exceed target width"
            )));
        }
        let keep = tgt as f64 / src as f64;
        let ckpt = self.pruned(scheme, src, keep, seed)?;
        let r = self.evaluate(&ckpt, seed)?;
        let (kept, total) = ckpt.mask.as_ref().map_or((0, 0), |m| m.kept());
        Ok(PruneRow {
            scheme,
            source_width: src,
            target_width: tgt,
            keep_ratio: keep,
            seed,
            natural_accuracy: r.natural_accuracy,
            adversarial_accuracy: r.adversarial_accuracy,
            kept_weights: kept,
            total_weights: total,
        })
    }

    /// Trains the subnetwork that survives `mask` from the weights in
    /// `init`, adversarially and without further pruning.
    pub fn inherit_and_train(
        &self,
        init: &Checkpoint,
        pruned: &Checkpoint,
        seed: u64,
    ) -> Result<Checkpoint> {
        let mask = pruned
            .mask
            .as_ref()
            .ok_or_else(|| Error::invalid("pruned checkpoint carries no mask"))?;
        if init.spec != pruned.spec {
            return Err(Error::invalid(
                "saved initialization and pruned model disagree in architecture",
            ));
        }
        let w = init.spec.conv_widths().first().copied().unwrap_or(0);
        let rng = Rng::new(seed).substream(TRAIN_STREAM, w as u64);
        let cfg = self.cfg.train_config(true, seed);
        let (spec, mut params, keep) = if self.cfg.lottery.masked {
            (init.spec.clone(), init.params.clone(), Some(mask.clone()))
        } else {
            let (s, p) = shrink_to_support(&init.spec, &init.params, mask)?;
            (s, p, None)
        };
        let net = Network::new(spec.clone())?;
        let history = train(
            &net,
            &mut params,
            &self.train,
            &cfg,
            &rng,
            keep.clone(),
            |_, _| Ok(()),
        )?;
        let mut out = Checkpoint::new(
            spec,
            params,
            CheckpointMeta {
                seed,
                epoch: history.len(),
                training: "inherited".into(),
                ..CheckpointMeta::default()
            },
        );
        out.mask = keep;
        Ok(out)
    }

    /// Needs the saved initialization and the pruned model of every cell;
    /// both come from an earlier `prune_grid` run on the same output
    /// directory.
    pub fn lottery_ticket(&mut self) -> Result<Report<LotteryRow>> {
        let scheme = self.cfg.lottery.scheme;
        if !self.cfg.lottery.masked && scheme != Scheme::Filter {
            return Err(Error::config(
                "lottery.scheme",
                "the shrunken-dense variant needs filter masks; set lottery.masked = true for other schemes",
            ));
        }
        let variant = if self.cfg.lottery.masked {
            "masked"
        } else {
            "shrunken"
        };
        let mut rows = Vec::new();
        for (src, tgt) in self.cfg.width_pairs() {
            for seed in self.cfg.seeds.clone() {
                let init_path = self.checkpoint_path(&format!("init_w{src}_s{seed}"));
                if !init_path.exists() {
                    return Err(Error::invalid(format!(
                        "missing saved initialization {}; run prune_grid first",
                        init_path.display()
                    )));
                }
                let keep = tgt as f64 / src as f64;
                let pruned_path =
                    self.checkpoint_path(&format!("admm_{scheme}_w{src}_k{keep:.4}_s{seed}"));
                if !pruned_path.exists() {
                    return Err(Error::invalid(format!(
                        "missing pruned model {}; run prune_grid first",
                        pruned_path.display()
                    )));
                }
                self.record_input(&init_path)?;
                self.record_input(&pruned_path)?;
                let init = Checkpoint::load(&init_path)?;
                let pruned = Checkpoint::load(&pruned_path)?;
                let inherited = self.inherit_and_train(&init, &pruned, seed)?;
                let r = self.evaluate(&inherited, seed)?;
                let p = self.evaluate(&pruned, seed)?;
                rows.push(LotteryRow {
                    source_width: src,
                    target_width: tgt,
                    seed,
                    variant: variant.into(),
                    natural_accuracy: r.natural_accuracy,
                    adversarial_accuracy: r.adversarial_accuracy,
                    concurrent_natural_accuracy: p.natural_accuracy,
                    concurrent_adversarial_accuracy: p.adversarial_accuracy,
                });
            }
        }
        self.finish("lottery", rows)
    }

    /// Adversarial training of the narrowest model under every
    /// (initializer, optimizer) pair.
    pub fn init_study(&mut self) -> Result<Report<InitRow>> {
        let w = *self
            .cfg
            .model
            .widths
            .iter()
            .min()
            .expect("validated non-empty");
        let spec = build_network(self.cfg.model.family, w)?;
        let net = Network::new(spec.clone())?;
        let counts = self.test.class_counts();
        let majority = 100.0 * *counts.iter().max().unwrap_or(&0) as f64 / self.test.len() as f64;
        let base = self.cfg.seeds[0];
        let study = self.cfg.init_study.clone();
        let mut rows = Vec::with_capacity(study.inits.len() * study.optimizers.len());
        for init in &study.inits {
            for opt in &study.optimizers {
                let mut nat = Vec::new();
                let mut adv = Vec::new();
                for k in 0..study.seeds_per_cell as u64 {
                    let seed = base + k;
                    let mut cfg = self.cfg.train_config(true, seed);
                    cfg.optimizer = opt.build(cfg.epochs);
                    let mut params = init_params(&spec, *init, &Rng::new(seed));
                    let rng = Rng::new(seed).substream(TRAIN_STREAM, w as u64);
                    train(&net, &mut params, &self.train, &cfg, &rng, None, |_, _| {
                        Ok(())
                    })?;
                    let ckpt = Checkpoint::new(spec.clone(), params, CheckpointMeta::default());
                    let r = self.evaluate(&ckpt, seed)?;
                    log::info!(
                        "init study {init}/{}: seed {seed} nat {:.2} adv {:.2}",
                        opt.name.as_str(),
                        r.natural_accuracy,
                        r.adversarial_accuracy
                    );
                    nat.push(r.natural_accuracy);
                    adv.push(r.adversarial_accuracy);
                }
                let (am, asd) = mean_std(&adv);
                rows.push(InitRow {
                    init: init.to_string(),
                    optimizer: opt.name.as_str().into(),
                    runs: nat.len(),
                    natural_mean: mean_std(&nat).0,
                    adversarial_mean: am,
                    adversarial_std: asd,
                    saddle_runs: nat.iter().filter(|&&a| (a - majority).abs() <= 1.0).count(),
                });
            }
        }
        self.finish("init_study", rows)
    }

    /// Budgets for the post-pruning study: explicit keep ratios on the
    /// widest model, or the ratios implied by the width pairs.
    fn post_prune_cells(&self) -> Vec<(usize, Option<usize>, f64)> {
        if self.cfg.prune.keep_ratios.is_empty() {
            self.cfg
                .width_pairs()
                .into_iter()
                .map(|(s, t)| (s, Some(t), t as f64 / s as f64))
                .collect()
        } else {
            let s = *self
                .cfg
                .model
                .widths
                .iter()
                .max()
                .expect("validated non-empty");
            self.cfg
                .prune
                .keep_ratios
                .iter()
                .map(|&r| (s, None, r))
                .collect()
        }
    }

    /// One-shot pruning without and with retraining next to concurrent
    /// pruning at the same budget.
    pub fn post_prune_study(&mut self) -> Result<Report<PostPruneRow>> {
        let mut rows = Vec::new();
        for scheme in self.cfg.prune.schemes.clone() {
            for (src, tgt, keep) in self.post_prune_cells() {
                for seed in self.cfg.seeds.clone() {
                    rows.push(self.post_prune_cell(scheme, src, tgt, keep, seed)?);
                }
            }
        }
        self.finish("post_prune", rows)
    }

    pub fn post_prune_cell(
        &mut self,
        scheme: Scheme,
        src: usize,
        tgt: Option<usize>,
        keep: f64,
        seed: u64,
    ) -> Result<PostPruneRow> {
        let source = self.trained(src, seed, true)?;
        let c = SparsityConstraint::uniform(&source.params, scheme, keep)?;
        let cfg = self.cfg.prune_train_config(seed, self.cfg.retrain_epochs());
        let rng = Rng::new(seed).substream(PRUNE_STREAM, 1000 + src as u64);
        let monitor = Some(self.monitor(seed));
        let once = post_prune(&source, &c, false, &cfg, &self.train, &rng, monitor)?;
        let retrained = post_prune(&source, &c, true, &cfg, &self.train, &rng, monitor)?;
        let before = once.before.expect("monitor set");
        let no = once.after_prune.expect("monitor set");
        let re = retrained.after_retrain.expect("monitor set");
        let concurrent = self.pruned(scheme, src, keep, seed)?;
        let cr = self.evaluate(&concurrent, seed)?;
        Ok(PostPruneRow {
            scheme,
            source_width: src,
            target_width: tgt,
            keep_ratio: keep,
            seed,
            source_natural: before.natural_accuracy,
            source_adversarial: before.adversarial_accuracy,
            no_retrain_natural: no.natural_accuracy,
            no_retrain_adversarial: no.adversarial_accuracy,
            retrain_natural: re.natural_accuracy,
            retrain_adversarial: re.adversarial_accuracy,
            concurrent_natural: cr.natural_accuracy,
            concurrent_adversarial: cr.adversarial_accuracy,
        })
    }

    /// Models compared in the transfer study.
    fn transfer_models(&mut self) -> Result<Vec<(String, Checkpoint)>> {
        if !self.cfg.transfer.checkpoints.is_empty() {
            let mut out = Vec::new();
            for entry in self.cfg.transfer.checkpoints.clone() {
                let (name, path) = entry.split_once('=').expect("validated name=path");
                let path = Path::new(path);
                self.record_input(path)?;
                out.push((name.to_string(), Checkpoint::load(path)?));
            }
            return Ok(out);
        }
        let seed = self.cfg.seeds[0];
        let src = *self
            .cfg
            .model
            .widths
            .iter()
            .max()
            .expect("validated non-empty");
        let mut out = vec![(format!("dense_w{src}"), self.trained(src, seed, true)?)];
        for scheme in self.cfg.prune.schemes.clone() {
            for (s, t) in self.cfg.width_pairs() {
                if s == src {
                    let c = self.pruned(scheme, s, t as f64 / s as f64, seed)?;
                    out.push((format!("{scheme}_{s}to{t}"), c));
                }
            }
        }
        Ok(out)
    }

    /// Every model attacks every model; `matrix.csv` holds the grid with
    /// sources as rows.
    pub fn transfer(&mut self) -> Result<(Report<TransferRow>, TransferMatrix)> {
        let models = self.transfer_models()?;
        let refs: Vec<(String, &Checkpoint)> = models.iter().map(|(n, c)| (n.clone(), c)).collect();
        let m = transfer_eval(
            &refs,
            &refs,
            &self.test,
            &self.cfg.eval_attack,
            &self.eval_rng(self.cfg.seeds[0]),
        )?;
        fs::create_dir_all(self.output_dir())?;
        fs::write(self.output_dir().join("transfer_matrix.csv"), m.to_csv()?)?;
        let mut rows = Vec::new();
        for (s, row) in m.sources.iter().zip(&m.accuracy) {
            for (t, &a) in m.targets.iter().zip(row) {
                rows.push(TransferRow {
                    source: s.clone(),
                    target: t.clone(),
                    accuracy: a,
                });
            }
        }
        Ok((self.finish("transfer", rows)?, m))
    }
}

fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let d = &cfg.data;
    let (train, test) = match d.dataset {
        DatasetName::Mnist => {
            let root = resolve_data_dir(d.dir.as_deref());
            (
                load_mnist(&root, Split::Train)?,
                load_mnist(&root, Split::Test)?,
            )
        }
        DatasetName::Cifar10 => {
            let root = resolve_data_dir(d.dir.as_deref());
            (
                load_cifar10(&root, Split::Train)?,
                load_cifar10(&root, Split::Test)?,
            )
        }
        DatasetName::Synthetic => {
            // one draw so both splits share the class means
            let n = d.synthetic_train + d.synthetic_test;
            let rng = Rng::new(cfg.seeds[0]).substream(Stream::Data, 0);
            let all = synthetic_blobs(
                NUM_CLASSES,
                n,
                cfg.model.family.input_shape(),
                d.synthetic_separation,
                &rng,
            )?;
            let idx: Vec<usize> = (0..n).collect();
            (
                all.select(&idx[..d.synthetic_train]),
                all.select(&idx[d.synthetic_train..]),
            )
        }
    };
    let cut = |ds: Dataset, n: Option<usize>| match n {
        Some(k) => ds.take(k),
        None => ds,
    };
    Ok((cut(train, d.train_subset), cut(test, d.test_subset)))
}

fn key_of<T: Serialize>(v: &T) -> Result<String> {
    let json =
        serde_json::to_vec(v).map_err(|e| Error::invalid(format!("cannot hash settings: {e}")))?;
    Ok(sha256_hex(&json))
}

fn dataset_digest(ds: &Dataset) -> String {
    let mut bytes = Vec::with_capacity(ds.images().len() * 8 + ds.len() * 8);
    for v in ds.images().data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for &l in ds.labels() {
        bytes.extend_from_slice(&(l as u64).to_le_bytes());
    }
    sha256_hex(&bytes)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

fn write_iteration_log(path: &Path, rows: &[IterationLog]) -> Result<()> {
    let Some(first) = rows.first() else {
        return Ok(());
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let names: Vec<String> = first.residuals.iter().map(|(n, _)| n.clone()).collect();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::invalid(format!("csv: {e}")))?;
    w.write_record(IterationLog::csv_header(&names))
        .map_err(|e| Error::invalid(format!("csv: {e}")))?;
    for r in rows {
        w.write_record(r.csv_row())
            .map_err(|e| Error::invalid(format!("csv: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_scratch_baseline(cfg: &ExperimentConfig) -> Result<Report<ScratchRow>> {
    Context::new(cfg.clone())?.scratch_baseline()
}

pub fn run_prune_grid(cfg: &ExperimentConfig) -> Result<Report<PruneRow>> {
    Context::new(cfg.clone())?.prune_grid()
}

pub fn run_lottery_ticket(cfg: &ExperimentConfig) -> Result<Report<LotteryRow>> {
    Context::new(cfg.clone())?.lottery_ticket()
}

pub fn run_init_study(cfg: &ExperimentConfig) -> Result<Report<InitRow>> {
    Context::new(cfg.clone())?.init_study()
}

pub fn run_post_prune_study(cfg: &ExperimentConfig) -> Result<Report<PostPruneRow>> {
    Context::new(cfg.clone())?.post_prune_study()
}

pub fn run_transfer(cfg: &ExperimentConfig) -> Result<Report<TransferRow>> {
    Ok(Context::new(cfg.clone())?.transfer()?.0)
}

/// Runs the named driver and returns the path of its CSV table.
pub fn run_experiment(name: &str, cfg: &ExperimentConfig) -> Result<PathBuf> {
    match name {
        "scratch" => {
            run_scratch_baseline(cfg)?;
        }
        "prune_grid" => {
            run_prune_grid(cfg)?;
        }
        "lottery" => {
            run_lottery_ticket(cfg)?;
        }
        "init_study" => {
            run_init_study(cfg)?;
        }
        "post_prune" => {
            run_post_prune_study(cfg)?;
        }
        "transfer" => {
            run_transfer(cfg)?;
        }
        other => {
            return Err(Error::invalid(format!(
                "unknown experiment `{other}`; expected one of {}",
                EXPERIMENTS.join(", ")
            )))
        }
    };
    Ok(cfg.output_dir.join(format!("{name}.csv")))
}
