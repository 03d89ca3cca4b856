//! Reads CIFAR-10 binary batches, here a generated two-record file.
use std::fs;

use robustprune::data::{load_cifar10_bin, Split};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("data_batch_1.bin");
    let mut bytes = Vec::new();
    for (label, shade) in [(7u8, 255u8), (2, 0)] {
        bytes.push(label);
        // red plane at `shade`, green and blue planes dark
        bytes.extend(std::iter::repeat_n(shade, 1024));
        bytes.extend(std::iter::repeat_n(0, 2048));
    }
    fs::write(&path, &bytes)?;
    let ds = load_cifar10_bin(&[&path], Split::Train)?;
    println!(
        "{} records, labels {:?}, image shape {:?}",
        ds.len(),
        ds.labels(),
        ds.image_shape()
    );
    let first = &ds.images().data()[..3072];
    println!(
        "first image channel means: {:?}",
        first
            .chunks(1024)
            .map(|c| c.iter().sum::<f64>() / 1024.0)
            .collect::<Vec<_>>()
    );

    fs::write(&path, &bytes[..3072])?;
    if let Err(e) = load_cifar10_bin(&[&path], Split::Train) {
        println!("short file rejected: {e}");
    }
    Ok(())
}
