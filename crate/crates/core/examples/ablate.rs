//! Runs one ablation axis at a short schedule and prints its table.

use vfmdet::harness::{run_ablation, AblationAxis, Config, VfmDet};

fn main() -> anyhow::Result<()> {
    let axis: AblationAxis = std::env::args().nth(1).as_deref().unwrap_or("fusion").parse()?;
    let mut config = Config::default();
    config.train.max_steps = 20;
    config.data.num_images = 6;
    let samples = VfmDet::from_config(&config)?.dataset()?;
    let table = run_ablation(&config, axis, &samples, &samples, true)?;
    println!("{}", table.to_markdown());
    Ok(())
}
