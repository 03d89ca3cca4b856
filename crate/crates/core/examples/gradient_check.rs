//! Builds a width-1 MNIST LeNet and checks a few backward-pass entries
//! against central finite differences.
use robustprune::nn::{build_network, cross_entropy, Family, Mode, Needs, Network};
use robustprune::numerics::{Rng, Tensor};
use robustprune::optim::{init_params, InitMethod};

fn main() -> robustprune::Result<()> {
    let spec = build_network(Family::MnistLenet, 1)?;
    println!("{spec:#?}");
    let net = Network::new(spec.clone())?;
    let params = init_params(&spec, InitMethod::KaimingUniform, &Rng::new(0));
    let mut r = Rng::new(1);
    let x = Tensor::from_fn(&[2, 1, 28, 28], |_| r.uniform(0.0, 1.0));
    let labels = [3, 7];

    let lg = net.loss_grad(&params, &x, &labels, Mode::Eval, Needs::PARAMS)?;
    let grads = lg.grads.params.expect("requested");
    let h = 1e-5;
    for (i, info) in params.infos.iter().enumerate() {
        let j = info.shape.iter().product::<usize>() / 2;
        let mut p = params.clone();
        p.tensors[i].data_mut()[j] += h;
        let up = cross_entropy(&net.forward(&p, &x, Mode::Eval)?.logits, &labels)?.0;
        p.tensors[i].data_mut()[j] -= 2.0 * h;
        let down = cross_entropy(&net.forward(&p, &x, Mode::Eval)?.logits, &labels)?.0;
        let fd = (up - down) / (2.0 * h);
        println!(
            "{:<14} backward {:+.8e}  finite diff {:+.8e}",
            info.name,
            grads[i].data()[j],
            fd
        );
    }
    Ok(())
}
