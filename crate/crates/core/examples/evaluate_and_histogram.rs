//! Natural and adversarial accuracy plus a weight histogram with its
//! exact-zero bin, before and after irregular pruning.
use robustprune::attack::AttackConfig;
use robustprune::data::synthetic_blobs;
use robustprune::eval::{evaluate, weight_histogram};
use robustprune::nn::{build_network, Checkpoint, CheckpointMeta, Family};
use robustprune::numerics::Rng;
use robustprune::optim::{init_params, InitMethod};
use robustprune::sparsity::{hard_prune, Scheme, SparsityConstraint};

fn main() -> robustprune::Result<()> {
    let test = synthetic_blobs(10, 200, [1, 28, 28], 0.3, &Rng::new(0))?;
    let spec = build_network(Family::MnistLenet, 1)?;
    let ckpt = Checkpoint::new(
        spec.clone(),
        init_params(&spec, InitMethod::KaimingUniform, &Rng::new(1)),
        CheckpointMeta::default(),
    );
    let attack = AttackConfig {
        epsilon: 0.3,
        step_size: 0.01,
        steps: 10,
        random_start: true,
    };
    let c = SparsityConstraint::uniform(&ckpt.params, Scheme::Irregular, 0.1)?;
    let pruned = hard_prune(&ckpt, &c)?;
    for (name, model) in [("dense", &ckpt), ("pruned", &pruned)] {
        let r = evaluate(model, &test, &attack, &Rng::new(2))?;
        let h = weight_histogram(&model.params, 20)?;
        println!(
            "{name:>6}: natural {}/{} adversarial {}/{}  zero fraction {:.3}",
            r.natural_correct,
            r.total,
            r.adversarial_correct,
            r.total,
            h.zero_fraction()
        );
        println!(
            "{}",
            h.to_csv()?.lines().take(3).collect::<Vec<_>>().join("\n")
        );
    }
    Ok(())
}
