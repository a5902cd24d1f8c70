//! Pretrains the attribute head on synthetic crops and prints per-group
//! training accuracy.

use vfmdet::harness::{pretrain_attributes, Config, VfmDet};

fn main() -> anyhow::Result<()> {
    let config = match std::env::args().nth(1) {
        Some(path) => Config::load(std::path::Path::new(&path))?,
        None => Config::default(),
    };
    let mut model = VfmDet::from_config(&config)?;
    let start = std::time::Instant::now();
    let report = pretrain_attributes(&mut model)?;
    println!("initial loss {:.4}", report.initial_loss);
    for (e, l) in report.epoch_losses.iter().enumerate() {
        println!("epoch {:>2} loss {l:.4}", e + 1);
    }
    for (g, acc) in model.schema.groups.iter().zip(&report.group_accuracy) {
        println!("{:<18} {acc:.3}", g.name);
    }
    println!("min group accuracy {:.3} in {:.1}s", report.min_group_accuracy(), start.elapsed().as_secs_f64());
    Ok(())
}
