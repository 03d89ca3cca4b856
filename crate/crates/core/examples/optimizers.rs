//! Adam, SGD with momentum, and cosine annealing on a toy quadratic.
use robustprune::nn::{LayerSpec, ModelParams, NetworkSpec};
use robustprune::numerics::Tensor;
use robustprune::optim::{Optimizer, OptimizerConfig};

fn run(name: &str, cfg: OptimizerConfig) -> robustprune::Result<()> {
    let spec = NetworkSpec::custom([1, 1, 4], vec![LayerSpec::Flatten, LayerSpec::fc(4, 1)])?;
    let mut p = ModelParams::zeros(&spec);
    let target = Tensor::vector(vec![1.0, -2.0, 0.5, 3.0]).reshape(&[1, 4])?;
    let mut opt = Optimizer::new(cfg)?;
    for step in 0..=2000 {
        let diff = p.tensors[0].sub(&target)?;
        if step % 500 == 0 {
            println!(
                "{name:>10} step {step:>4}: loss {:.3e}, lr {:.2e}",
                0.5 * diff.frobenius_norm_sq(),
                opt.config().lr_at(step as f64 / 2000.0)
            );
        }
        let grads = vec![diff, Tensor::zeros(&[1])];
        opt.step(&mut p, &grads, step as f64 / 2000.0, None)?;
    }
    Ok(())
}

fn main() -> robustprune::Result<()> {
    run("adam", OptimizerConfig::adam(1e-2))?;
    run("sgd", OptimizerConfig::sgd(1e-2, 0.9))?;
    // t_max is measured in epochs; the loop above spans one
    run("cosine", OptimizerConfig::cos_anneal(1e-2, 0.9, 1.0))
}
