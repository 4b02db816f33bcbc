//! Resize, five-crop and flip one synthetic pair, then split a small corpus.

use gacunet::dataio::synthetic::flood_set;
use gacunet::dataio::{augment_expand, resize_pair, split_dataset, train_count};

fn main() -> gacunet::Result<()> {
    let pairs = flood_set(10, 48, 7);
    let big = resize_pair(&pairs[0], 64, 64)?;
    let augmented = augment_expand(&big, 32)?;
    println!(
        "{} -> {} augmented pairs",
        pairs[0].source_id,
        augmented.len()
    );
    for a in &augmented {
        println!(
            "  {:<22} water {:.3}",
            a.name(),
            a.pair.mask.positive_fraction()
        );
    }

    let ids: Vec<String> = pairs.iter().map(|p| p.source_id.clone()).collect();
    let (train, test) = split_dataset(&ids, 0)?;
    println!(
        "split of {}: {} train (floor 0.7n = {}), {} test",
        ids.len(),
        train.len(),
        train_count(ids.len()),
        test.len()
    );
    println!("train ids {train:?}");
    Ok(())
}
