//! One-shot pruning of a trained model, with and without masked
//! retraining.
use robustprune::attack::AttackConfig;
use robustprune::data::{synthetic_blobs, BatchPlan};
use robustprune::nn::{build_network, Checkpoint, CheckpointMeta, Family, Network};
use robustprune::numerics::Rng;
use robustprune::optim::{init_params, InitMethod, OptimizerConfig};
use robustprune::sparsity::{post_prune, Monitor, Scheme, SparsityConstraint};
use robustprune::train::{train, TrainConfig};

fn main() -> robustprune::Result<()> {
    let all = synthetic_blobs(10, 600, [1, 28, 28], 0.3, &Rng::new(0))?;
    let (data, test) = (
        all.select(&(0..500).collect::<Vec<_>>()),
        all.select(&(500..600).collect::<Vec<_>>()),
    );
    let spec = build_network(Family::MnistLenet, 2)?;
    let net = Network::new(spec.clone())?;
    let mut params = init_params(&spec, InitMethod::KaimingUniform, &Rng::new(1));
    let attack = AttackConfig {
        epsilon: 0.1,
        step_size: 0.02,
        steps: 3,
        random_start: true,
    };
    let cfg = TrainConfig {
        epochs: 2,
        batch: BatchPlan::default(),
        optimizer: OptimizerConfig::adam(1e-3),
        attack: Some(attack),
        max_batches: None,
        attack_warmup_epochs: 0,
    };
    train(
        &net,
        &mut params,
        &data,
        &cfg,
        &Rng::new(2),
        None,
        |_, _| Ok(()),
    )?;
    let trained = Checkpoint::new(spec, params, CheckpointMeta::default());
    let monitor = Monitor {
        data: &test,
        attack,
        seed: 5,
    };

    for keep in [0.5, 0.25, 0.125] {
        let c = SparsityConstraint::uniform(&trained.params, Scheme::Filter, keep)?;
        let cut = post_prune(
            &trained,
            &c,
            false,
            &cfg,
            &data,
            &Rng::new(3),
            Some(monitor),
        )?;
        let fixed = post_prune(&trained, &c, true, &cfg, &data, &Rng::new(3), Some(monitor))?;
        let before = cut.before.expect("monitored");
        let after = cut.after_prune.expect("monitored");
        let retrained = fixed.after_retrain.expect("monitored");
        println!(
            "keep {keep:<5}: dense {:.1}/{:.1}  pruned {:.1}/{:.1}  retrained {:.1}/{:.1}  (natural/adversarial %)",
            before.natural_accuracy,
            before.adversarial_accuracy,
            after.natural_accuracy,
            after.adversarial_accuracy,
            retrained.natural_accuracy,
            retrained.adversarial_accuracy
        );
    }
    Ok(())
}
