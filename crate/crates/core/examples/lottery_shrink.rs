//! Extracts the dense width-1 network that survives filter pruning of a
//! width-4 LeNet, keeping the original initial weights.
use robustprune::experiments::shrink_to_support;
use robustprune::nn::{build_network, Family};
use robustprune::numerics::Rng;
use robustprune::optim::{init_params, InitMethod};
use robustprune::sparsity::{Scheme, SparsityConstraint};

fn main() -> robustprune::Result<()> {
    let big = build_network(Family::MnistLenet, 4)?;
    let init = init_params(&big, InitMethod::KaimingUniform, &Rng::new(0));
    let c = SparsityConstraint::uniform(&init, Scheme::Filter, 0.25)?;
    // in a real run the mask comes from the pruned model, not the init
    let mask = c.support(&init)?;
    let (small, params) = shrink_to_support(&big, &init, &mask)?;
    println!(
        "before: conv widths {:?}, fc {:?}",
        big.conv_widths(),
        big.fc_dims()
    );
    println!(
        "after:  conv widths {:?}, fc {:?}",
        small.conv_widths(),
        small.fc_dims()
    );
    let count = |p: &robustprune::nn::ModelParams| p.tensors.iter().map(|t| t.len()).sum::<usize>();
    println!("parameters {} -> {}", count(&init), count(&params));
    Ok(())
}
