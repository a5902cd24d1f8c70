//! Overfits the detector on a small synthetic set and reports loss and AP.

use vfmdet::harness::{evaluate, generate_samples, train, Config, TrainOptions, VfmDet};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map_or(Ok(0), |s| s.parse())?;
    let mut config = match args.get(2) {
        Some(path) => Config::load(std::path::Path::new(path))?,
        None => Config::default(),
    };
    if steps > 0 {
        config.train.max_steps = steps;
    }
    let mut model = VfmDet::from_config(&config)?;
    let samples = generate_samples(config.seed, &config.data, &model.schema)?;
    let start = std::time::Instant::now();
    let report = train(&mut model, &samples, &TrainOptions { verbose: true, ..Default::default() })?;
    let eval = evaluate(&model, &samples)?;
    println!(
        "steps {} first loss {:.4} last-epoch loss {:.4} AP {:.3} AP50 {:.3} AP75 {:.3} in {:.1}s",
        report.logs.len(),
        report.first_loss(),
        report.tail_loss(samples.len().div_ceil(config.train.batch_size)),
        eval.ap,
        eval.ap50,
        eval.ap75,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
