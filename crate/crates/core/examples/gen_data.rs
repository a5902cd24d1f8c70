//! Writes the synthetic vehicle dataset to a directory and reloads it.

use std::path::PathBuf;

use vfmdet::harness::{generate_synthetic_dataset, load_dataset, Config};
use vfmdet::vatt2vec::AttributeSchema;

fn main() -> anyhow::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/synthetic".into()));
    let config = Config::default();
    let schema = AttributeSchema::vehicle();
    let ann = generate_synthetic_dataset(&dir, config.seed, &config.data, &schema)?;
    let samples = load_dataset(&dir, &schema)?;
    let objects: usize = samples.iter().map(|s| s.gt_boxes.len()).sum();
    println!("{} images, {objects} vehicles, annotations in {}", samples.len(), ann.display());
    Ok(())
}
