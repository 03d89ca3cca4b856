//! Reads MNIST IDX files. Uses the real files under
//! `$ROBUSTPRUNE_DATA_DIR/mnist` when present, otherwise writes a tiny
//! fixture and reads that.
use std::fs;

use robustprune::data::{load_idx, load_mnist, resolve_data_dir, Split};

fn main() -> anyhow::Result<()> {
    let root = resolve_data_dir(None);
    if let Ok(ds) = load_mnist(&root, Split::Test) {
        println!("loaded {} test images from {}", ds.len(), root.display());
        println!("class counts {:?}", ds.class_counts());
        return Ok(());
    }
    println!(
        "no MNIST under {}, using a generated fixture",
        root.display()
    );
    let dir = tempfile::tempdir()?;
    let mut images = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
    images.extend([0u8, 64, 128, 255, 255, 128, 64, 0]);
    let labels = vec![0u8, 0, 8, 1, 0, 0, 0, 2, 4, 9];
    let (ip, lp) = (dir.path().join("images.idx"), dir.path().join("labels.idx"));
    fs::write(&ip, images)?;
    fs::write(&lp, labels)?;
    let ds = load_idx(&ip, &lp, Split::Train)?;
    println!(
        "{} images of shape {:?}, labels {:?}",
        ds.len(),
        ds.image_shape(),
        ds.labels()
    );
    println!("pixels {:?}", ds.images().data());

    fs::write(&ip, [0u8, 0, 8, 2, 0, 0, 0, 1])?;
    match load_idx(&ip, &lp, Split::Train) {
        Err(e) => println!("corrupt file rejected: {e}"),
        Ok(_) => anyhow::bail!("corrupt file accepted"),
    }
    Ok(())
}
