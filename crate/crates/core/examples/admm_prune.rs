//! Concurrent adversarial training and ADMM filter pruning of a width-2
//! LeNet down to the width-1 filter budget, on generated data.
use robustprune::attack::AttackConfig;
use robustprune::data::{synthetic_blobs, BatchPlan};
use robustprune::eval::evaluate;
use robustprune::nn::{build_network, Checkpoint, CheckpointMeta, Family};
use robustprune::numerics::Rng;
use robustprune::optim::{init_params, InitMethod, OptimizerConfig};
use robustprune::sparsity::{
    concurrent_train_prune, AdmmConfig, Monitor, Scheme, SparsityConstraint,
};
use robustprune::train::TrainConfig;

fn main() -> robustprune::Result<()> {
    let all = synthetic_blobs(10, 600, [1, 28, 28], 0.3, &Rng::new(0))?;
    let (train, test) = (
        all.select(&(0..500).collect::<Vec<_>>()),
        all.select(&(500..600).collect::<Vec<_>>()),
    );
    let spec = build_network(Family::MnistLenet, 2)?;
    let start = Checkpoint::new(
        spec.clone(),
        init_params(&spec, InitMethod::KaimingUniform, &Rng::new(1)),
        CheckpointMeta::default(),
    );
    let attack = AttackConfig {
        epsilon: 0.1,
        step_size: 0.02,
        steps: 3,
        random_start: true,
    };
    let train_cfg = TrainConfig {
        epochs: 1,
        batch: BatchPlan::default(),
        optimizer: OptimizerConfig::adam(1e-3),
        attack: Some(attack),
        max_batches: None,
        attack_warmup_epochs: 0,
    };
    let admm = AdmmConfig {
        iterations: 4,
        retrain_epochs: 1,
        ..AdmmConfig::default()
    };
    let c = SparsityConstraint::uniform(&start.params, Scheme::Filter, 0.5)?;
    for (i, b) in c.constrained() {
        println!("{}: keep {b} filters", start.params.infos[i].name);
    }
    let monitor = Monitor {
        data: &test,
        attack,
        seed: 9,
    };
    let out = concurrent_train_prune(
        &start,
        &c,
        &admm,
        &train_cfg,
        &train,
        &Rng::new(2),
        Some(monitor),
        |log| {
            println!(
                "iteration {}: loss {:.4}, max |theta - z| {:.3e}, adversarial accuracy {:.1}%",
                log.iteration,
                log.data_loss,
                log.max_residual,
                log.adversarial_accuracy.unwrap_or(f64::NAN)
            );
        },
    )?;
    let report = evaluate(&out.checkpoint, &test, &attack, &Rng::new(9))?;
    println!(
        "constraint satisfied: {}",
        c.is_satisfied(&out.checkpoint.params)
    );
    println!(
        "natural {:.1}%, adversarial {:.1}%",
        report.natural_accuracy, report.adversarial_accuracy
    );
    for l in &report.layers {
        println!("{:<12} {}/{} nonzero", l.name, l.nonzero, l.total);
    }
    Ok(())
}
