//! Row-major tensors and reproducible random substreams.
use robustprune::numerics::{ElementwiseOp, Rng, Stream, Tensor};

fn main() -> robustprune::Result<()> {
    let t = Tensor::from_fn(&[2, 3], |i| i as f64);
    println!("shape {:?}, data {:?}", t.shape(), t.data());
    println!("(1, 2) lives at flat index {}", t.flat_index(&[1, 2])?);
    println!("flat index 4 is {:?}", t.coords(4)?);

    let doubled = Tensor::elementwise(ElementwiseOp::Add, &t, &t)?;
    println!("t + t = {:?}", doubled.data());
    println!("sign(t - 2) = {:?}", t.map(|v| v - 2.0).sign().data());

    // every purpose draws from its own substream, so adding draws in one
    // place never shifts another
    let root = Rng::new(42);
    let mut a = root.substream(Stream::Init, 0);
    let mut b = root.substream(Stream::Init, 0);
    let mut c = root.substream(Stream::Shuffle, 0);
    println!(
        "init stream:    {:.6} {:.6}",
        a.uniform(0.0, 1.0),
        b.uniform(0.0, 1.0)
    );
    println!("shuffle stream: {:.6}", c.uniform(0.0, 1.0));
    Ok(())
}
