//! Cross-model transfer of PGD examples between three small models.
use robustprune::attack::AttackConfig;
use robustprune::data::{synthetic_blobs, BatchPlan};
use robustprune::eval::transfer_eval;
use robustprune::nn::{build_network, Checkpoint, CheckpointMeta, Family, Network};
use robustprune::numerics::Rng;
use robustprune::optim::{init_params, InitMethod, OptimizerConfig};
use robustprune::train::{train, TrainConfig};

fn main() -> robustprune::Result<()> {
    let all = synthetic_blobs(10, 500, [1, 28, 28], 0.3, &Rng::new(0))?;
    let (data, test) = (
        all.select(&(0..400).collect::<Vec<_>>()),
        all.select(&(400..500).collect::<Vec<_>>()),
    );
    let cfg = TrainConfig {
        epochs: 2,
        batch: BatchPlan::default(),
        optimizer: OptimizerConfig::adam(1e-3),
        attack: None,
        max_batches: None,
        attack_warmup_epochs: 0,
    };
    let mut models = Vec::new();
    for (w, seed) in [(1, 1), (2, 2), (4, 3)] {
        let spec = build_network(Family::MnistLenet, w)?;
        let net = Network::new(spec.clone())?;
        let mut p = init_params(&spec, InitMethod::KaimingUniform, &Rng::new(seed));
        train(&net, &mut p, &data, &cfg, &Rng::new(seed), None, |_, _| {
            Ok(())
        })?;
        models.push((
            format!("w{w}"),
            Checkpoint::new(spec, p, CheckpointMeta::default()),
        ));
    }
    let refs: Vec<(String, &Checkpoint)> = models.iter().map(|(n, c)| (n.clone(), c)).collect();
    let attack = AttackConfig {
        epsilon: 0.1,
        step_size: 0.01,
        steps: 20,
        random_start: true,
    };
    let m = transfer_eval(&refs, &refs, &test, &attack, &Rng::new(7))?;
    print!("{}", m.to_csv()?);
    for (name, _) in &refs {
        println!(
            "{name}: own examples strongest = {:?}",
            m.self_attack_is_strongest(name)
        );
    }
    Ok(())
}
