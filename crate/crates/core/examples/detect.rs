//! Trains briefly, then detects on a fresh single-vehicle scene and writes
//! the overlay, attribute readout and attention dump.

use std::path::PathBuf;

use vfmdet::det::BBox;
use vfmdet::harness::synth::save_image;
use vfmdet::harness::{run_detect, single_vehicle_scene, train, Config, DetectFlags, TrainOptions, VfmDet};

fn main() -> anyhow::Result<()> {
    let steps: usize = std::env::args().nth(1).map_or(Ok(40), |s| s.parse())?;
    let out = PathBuf::from("out/detect");
    let mut config = Config::default();
    config.train.max_steps = steps;
    let mut model = VfmDet::from_config(&config)?;
    let samples = model.dataset()?;
    train(&mut model, &samples, &TrainOptions::default())?;

    let side = config.data.image_side;
    let scene = single_vehicle_scene(7, side, BBox::new(14.0, 24.0, 50.0, 39.0), 7, 2, &model.schema)?;
    std::fs::create_dir_all(&out)?;
    let image = out.join("scene.png");
    save_image(&image, &scene.image)?;
    let flags = DetectFlags {
        overlay: true,
        attributes: true,
        attention_dump: true,
    };
    let (output, files) = run_detect(&model, &image, &out, flags)?;
    for d in output.detections.iter().take(5) {
        println!("{} {:.3} {:?}", d.class, d.score, d.bbox);
    }
    println!("{} detections in {}", output.detections.len(), files.detections.display());
    Ok(())
}
