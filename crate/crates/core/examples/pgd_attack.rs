//! Crafts PGD examples against a naturally trained model and reports how
//! far they moved and how often they flip the prediction.
use robustprune::attack::{pgd_attack, AttackConfig};
use robustprune::data::{synthetic_blobs, BatchPlan};
use robustprune::nn::{argmax_rows, build_network, Family, Mode, Network};
use robustprune::numerics::Rng;
use robustprune::optim::{init_params, InitMethod, OptimizerConfig};
use robustprune::train::{train, TrainConfig};

fn main() -> robustprune::Result<()> {
    let data = synthetic_blobs(10, 400, [1, 28, 28], 0.3, &Rng::new(0))?;
    let spec = build_network(Family::MnistLenet, 1)?;
    let net = Network::new(spec.clone())?;
    let mut params = init_params(&spec, InitMethod::KaimingUniform, &Rng::new(1));
    let cfg = TrainConfig {
        epochs: 3,
        batch: BatchPlan::default(),
        optimizer: OptimizerConfig::adam(1e-3),
        attack: None,
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
        |s, _| {
            println!("epoch {} train accuracy {:.1}%", s.epoch, s.train_accuracy);
            Ok(())
        },
    )?;

    let (x, y) = data.gather(&(0..64).collect::<Vec<_>>());
    for epsilon in [0.0, 0.05, 0.1, 0.3] {
        let attack = AttackConfig {
            epsilon,
            step_size: 0.01,
            steps: 40,
            random_start: true,
        };
        let adv = pgd_attack(&net, &params, &x, &y, &attack, &mut Rng::new(3), Mode::Eval)?;
        let moved = adv.sub(&x)?.max_abs();
        let pred = argmax_rows(&net.forward(&params, &adv, Mode::Eval)?.logits);
        let correct = pred.iter().zip(&y).filter(|(p, t)| p == t).count();
        println!("eps {epsilon:.2}: max |x_adv - x| = {moved:.4}, accuracy {correct}/64");
    }
    Ok(())
}
