//! Accuracy under attack, transfer matrices, weight histograms, and model
//! selection.

use serde::{Deserialize, Serialize};

use crate::attack::{pgd_attack, AttackConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, per_sample_cross_entropy, Checkpoint, Mode, ModelParams, Network};
use crate::numerics::{Rng, Stream, Tensor};

/// Batch size used for evaluation and transfer attacks. Attack random
/// starts are keyed by batch index, so both must agree on it.
pub const EVAL_BATCH: usize = 250;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub name: String,
    pub nonzero: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub natural_correct: usize,
    pub adversarial_correct: usize,
    /// Percentages of `total`.
    pub natural_accuracy: f64,
    pub adversarial_accuracy: f64,
    pub natural_loss: f64,
    pub adversarial_loss: f64,
    /// Mean of the natural and adversarial losses; the selection criterion.
    pub average_loss: f64,
    pub layers: Vec<LayerSparsity>,
    pub attack: AttackConfig,
    pub attack_seed: u64,
}

/// Nonzero counts of every prunable tensor.
pub fn layer_sparsity(params: &ModelParams) -> Vec<LayerSparsity> {
    params
        .prunable()
        .map(|i| LayerSparsity {
            name: params.infos[i].name.clone(),
            nonzero: params.tensors[i].count_nonzero(),
            total: params.tensors[i].len(),
        })
        .collect()
}

fn percent(correct: usize, total: usize) -> f64 {
    100.0 * correct as f64 / total.max(1) as f64
}

fn check_input(net: &Network, ds: &Dataset) -> Result<()> {
    if ds.image_shape() != net.spec().input {
        return Err(Error::shape(
            "evaluation images",
            &net.spec().input,
            &ds.image_shape(),
        ));
    }
    if ds.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    Ok(())
}

fn eval_batches(ds: &Dataset) -> impl Iterator<Item = (usize, Tensor, Vec<usize>)> + '_ {
    (0..ds.len())
        .step_by(EVAL_BATCH)
        .enumerate()
        .map(|(b, start)| {
            let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(ds.len())).collect();
            let (x, y) = ds.gather(&idx);
            (b, x, y)
        })
}

/// `(correct, summed loss)` of `params` on one batch.
fn score(net: &Network, params: &ModelParams, x: &Tensor, y: &[usize]) -> Result<(usize, f64)> {
    let logits = net.logits(params, x)?;
    let correct = argmax_rows(&logits)
        .iter()
        .zip(y)
        .filter(|(p, t)| p == t)
        .count();
    let loss: f64 = per_sample_cross_entropy(&logits, y)?.iter().sum();
    Ok((correct, loss))
}

/// Adversarial examples against `params`, one tensor per evaluation batch.
/// Batch `b` draws its random start from `rng.substream(AttackStart, b)`.
pub fn adversarial_batches(
    net: &Network,
    params: &ModelParams,
    ds: &Dataset,
    attack: &AttackConfig,
    rng: &Rng,
) -> Result<Vec<Tensor>> {
    check_input(net, ds)?;
    eval_batches(ds)
        .map(|(b, x, y)| {
            let mut r = rng.substream(Stream::AttackStart, b as u64);
            pgd_attack(net, params, &x, &y, attack, &mut r, Mode::Eval)
        })
        .collect()
}

/// Outcome of the attack on one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub index: usize,
    pub label: usize,
    pub natural_prediction: usize,
    pub adversarial_prediction: usize,
    /// The adversarial input is misclassified.
    pub success: bool,
}

/// Per-sample predictions before and after the attack, in dataset order.
/// Uses the same random starts as [`evaluate_params`].
pub fn attack_outcomes(
    net: &Network,
    params: &ModelParams,
    ds: &Dataset,
    attack: &AttackConfig,
    rng: &Rng,
) -> Result<Vec<SampleOutcome>> {
    let adv = adversarial_batches(net, params, ds, attack, rng)?;
    let mut out = Vec::with_capacity(ds.len());
    for ((_, x, y), xa) in eval_batches(ds).zip(&adv) {
        let nat = argmax_rows(&net.logits(params, &x)?);
        let adv_pred = argmax_rows(&net.logits(params, xa)?);
        for ((&label, &n), &a) in y.iter().zip(&nat).zip(&adv_pred) {
            out.push(SampleOutcome {
                index: out.len(),
                label,
                natural_prediction: n,
                adversarial_prediction: a,
                success: a != label,
            });
        }
    }
    Ok(out)
}

/// Natural and adversarial accuracy and loss of `params` over all of `ds`.
pub fn evaluate_params(
    net: &Network,
    params: &ModelParams,
    ds: &Dataset,
    attack: &AttackConfig,
    rng: &Rng,
) -> Result<EvalReport> {
    check_input(net, ds)?;
    attack.validate()?;
    let (mut nat_c, mut adv_c, mut nat_l, mut adv_l) = (0, 0, 0.0, 0.0);
    for (b, x, y) in eval_batches(ds) {
        let (c, l) = score(net, params, &x, &y)?;
        nat_c += c;
        nat_l += l;
        let mut r = rng.substream(Stream::AttackStart, b as u64);
        let adv = pgd_attack(net, params, &x, &y, attack, &mut r, Mode::Eval)?;
        let (c, l) = score(net, params, &adv, &y)?;
        adv_c += c;
        adv_l += l;
    }
    let n = ds.len();
    let (natural_loss, adversarial_loss) = (nat_l / n as f64, adv_l / n as f64);
    Ok(EvalReport {
        total: n,
        natural_correct: nat_c,
        adversarial_correct: adv_c,
        natural_accuracy: percent(nat_c, n),
        adversarial_accuracy: percent(adv_c, n),
        natural_loss,
        adversarial_loss,
        average_loss: (natural_loss + adversarial_loss) / 2.0,
        layers: layer_sparsity(params),
        attack: *attack,
        attack_seed: rng.seed(),
    })
}

pub fn evaluate(
    ckpt: &Checkpoint,
    ds: &Dataset,
    attack: &AttackConfig,
    rng: &Rng,
) -> Result<EvalReport> {
    let net = Network::new(ckpt.spec.clone())?;
    evaluate_params(&net, &ckpt.params, ds, attack, rng)
}

/// Adversarial accuracy of each target on examples crafted against each
/// source; `correct[s][t]` pairs source `s` with target `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    pub total: usize,
    pub correct: Vec<Vec<usize>>,
    pub accuracy: Vec<Vec<f64>>,
}

impl TransferMatrix {
    /// For a model tagged both as source and target: whether its own
    /// examples hurt it at least as much as any other source's.
    pub fn self_attack_is_strongest(&self, tag: &str) -> Option<bool> {
        let s = self.sources.iter().position(|x| x == tag)?;
        let t = self.targets.iter().position(|x| x == tag)?;
        let own = self.correct[s][t];
        Some(self.correct.iter().all(|row| own <= row[t]))
    }

    /// Fraction of shared tags whose self-attack cell is the minimum over
    /// sources.
    pub fn self_attack_fraction(&self) -> f64 {
        let flags: Vec<bool> = self
            .targets
            .iter()
            .filter_map(|t| self.self_attack_is_strongest(t))
            .collect();
        flags.iter().filter(|&&f| f).count() as f64 / flags.len().max(1) as f64
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["source".to_string()];
        header.extend(self.targets.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (s, row) in self.sources.iter().zip(&self.accuracy) {
            let mut rec = vec![s.clone()];
            rec.extend(row.iter().map(|a| format!("{a:.2}")));
            w.write_record(&rec).map_err(csv_err)?;
        }
        finish_csv(w)
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub(crate) fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

pub fn transfer_eval(
    sources: &[(String, &Checkpoint)],
    targets: &[(String, &Checkpoint)],
    ds: &Dataset,
    attack: &AttackConfig,
    rng: &Rng,
) -> Result<TransferMatrix> {
    if sources.is_empty() || targets.is_empty() {
        return Err(Error::invalid(
            "transfer evaluation needs at least one source and one target",
        ));
    }
    let target_nets = targets
        .iter()
        .map(|(_, c)| {
            let net = Network::new(c.spec.clone())?;
            check_input(&net, ds)?;
            Ok(net)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<Vec<usize>> = eval_batches(ds).map(|(_, _, y)| y).collect();
    let mut correct = Vec::with_capacity(sources.len());
    for (_, src) in sources {
        let net = Network::new(src.spec.clone())?;
        let adv = adversarial_batches(&net, &src.params, ds, attack, rng)?;
        let mut row = Vec::with_capacity(targets.len());
        for ((_, tgt), tnet) in targets.iter().zip(&target_nets) {
            let mut c = 0;
            for (x, y) in adv.iter().zip(&labels) {
                c += score(tnet, &tgt.params, x, y)?.0;
            }
            row.push(c);
        }
        correct.push(row);
    }
    let total = ds.len();
    Ok(TransferMatrix {
        sources: sources.iter().map(|(s, _)| s.clone()).collect(),
        targets: targets.iter().map(|(t, _)| t.clone()).collect(),
        total,
        accuracy: correct
            .iter()
            .map(|row| row.iter().map(|&c| percent(c, total)).collect())
            .collect(),
        correct,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerHistogram {
    pub name: String,
    pub total: usize,
    /// Entries exactly equal to zero; not counted in `counts`.
    pub zeros: usize,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightHistogram {
    /// `bins + 1` edges spanning `[-max|w|, max|w|]`.
    pub edges: Vec<f64>,
    pub layers: Vec<LayerHistogram>,
    pub global: LayerHistogram,
}

impl WeightHistogram {
    pub fn zero_fraction(&self) -> f64 {
        self.global.zeros as f64 / self.global.total.max(1) as f64
    }

    /// Columns `layer,bin_lo,bin_hi,count`; the zero bin has `lo = hi = 0`
    /// and is listed first for each layer.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer", "bin_lo", "bin_hi", "count"])
            .map_err(csv_err)?;
        for h in self.layers.iter().chain(std::iter::once(&self.global)) {
            w.write_record([h.name.as_str(), "0", "0", &h.zeros.to_string()])
                .map_err(csv_err)?;
            for (i, c) in h.counts.iter().enumerate() {
                w.write_record([
                    h.name.clone(),
                    format!("{:e}", self.edges[i]),
                    format!("{:e}", self.edges[i + 1]),
                    c.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        finish_csv(w)
    }
}

/// Histograms of every prunable weight tensor, with an exact-zero bin.
pub fn weight_histogram(params: &ModelParams, bins: usize) -> Result<WeightHistogram> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let max = params
        .prunable()
        .map(|i| params.tensors[i].max_abs())
        .fold(0.0, f64::max);
    let edges: Vec<f64> = (0..=bins)
        .map(|i| -max + 2.0 * max * i as f64 / bins as f64)
        .collect();
    let fill = |name: String, values: &[f64]| {
        let mut h = LayerHistogram {
            name,
            total: values.len(),
            zeros: 0,
            counts: vec![0; bins],
        };
        for &v in values {
            if v == 0.0 {
                h.zeros += 1;
            } else {
                let b = ((v + max) / (2.0 * max) * bins as f64) as usize;
                h.counts[b.min(bins - 1)] += 1;
            }
        }
        h
    };
    let layers: Vec<LayerHistogram> = params
        .prunable()
        .map(|i| fill(params.infos[i].name.clone(), params.tensors[i].data()))
        .collect();
    let mut global = LayerHistogram {
        name: "all".into(),
        total: 0,
        zeros: 0,
        counts: vec![0; bins],
    };
    for h in &layers {
        global.total += h.total;
        global.zeros += h.zeros;
        for (g, c) in global.counts.iter_mut().zip(&h.counts) {
            *g += c;
        }
    }
    Ok(WeightHistogram {
        edges,
        layers,
        global,
    })
}

/// Index of the smallest value; the earliest wins ties. `None` if empty.
pub fn argmin_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v < values[b]) {
            best = Some(i);
        }
    }
    best
}

/// The checkpoint with the lowest mean of natural and adversarial test
/// loss, with its report.
pub fn select_best<'c>(
    series: &'c [Checkpoint],
    ds: &Dataset,
    attack: &AttackConfig,
    rng: &Rng,
) -> Result<(&'c Checkpoint, EvalReport)> {
    if series.is_empty() {
        return Err(Error::invalid(
            "cannot select from an empty checkpoint series",
        ));
    }
    let mut reports = series
        .iter()
        .map(|c| evaluate(c, ds, attack, rng))
        .collect::<Result<Vec<_>>>()?;
    let losses: Vec<f64> = reports.iter().map(|r| r.average_loss).collect();
    let best = argmin_first(&losses).expect("series is non-empty");
    Ok((&series[best], reports.swap_remove(best)))
}
