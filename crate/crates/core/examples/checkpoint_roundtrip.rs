//! Saves a masked checkpoint and reads it back bit for bit.
use robustprune::nn::{
    build_network, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, Family, MAGIC,
};
use robustprune::numerics::Rng;
use robustprune::optim::{init_params, InitMethod};
use robustprune::sparsity::{hard_prune, Scheme, SparsityConstraint};

fn main() -> anyhow::Result<()> {
    let spec = build_network(Family::CifarLenet, 1)?;
    let params = init_params(&spec, InitMethod::XavierNormal, &Rng::new(4));
    let dense = Checkpoint::new(
        spec,
        params,
        CheckpointMeta {
            seed: 4,
            ..Default::default()
        },
    );
    let c = SparsityConstraint::uniform(&dense.params, Scheme::Column, 0.25)?;
    let pruned = hard_prune(&dense, &c)?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("pruned.ckpt");
    save_checkpoint(&pruned, &path)?;
    let bytes = std::fs::read(&path)?;
    println!(
        "{} bytes, magic {:?}",
        bytes.len(),
        std::str::from_utf8(&bytes[..MAGIC.len()])?
    );
    let back = load_checkpoint(&path)?;
    println!("identical after reload: {}", back == pruned);
    let (kept, total) = back.mask.as_ref().map(|m| m.kept()).unwrap_or_default();
    println!("mask keeps {kept} of {total} prunable weights");
    Ok(())
}
