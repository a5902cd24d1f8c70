//! Encodes proposal crops with the frozen encoder and shows the token and
//! spatial-projection shapes for the paper and desk presets.

use vfmdet::det::BBox;
use vfmdet::harness::{Config, Preset};
use vfmdet::perceptron::{crop_and_resize_proposals, EncoderState};
use vfmdet::{ParamStore, Tensor};

fn main() -> anyhow::Result<()> {
    let image = Tensor::from_vec((0..3 * 64 * 64).map(|i| (i % 97) as f64 / 97.0).collect(), &[3, 64, 64])?;
    let boxes = [BBox::new(4.0, 10.0, 40.0, 30.0), BBox::new(20.0, 22.0, 60.0, 50.0)];
    for preset in [Preset::Desk, Preset::Paper] {
        let config = Config {
            preset,
            ..Default::default()
        };
        let cfg = config.encoder();
        let mut store = ParamStore::new();
        let encoder = EncoderState::init_random(&mut store, &cfg, 0)?;
        let crops = crop_and_resize_proposals(&image, &boxes, cfg.image_side)?.crops;
        let out = encoder.encode(&store, &crops, true)?;
        let spatial = encoder.project_tokens_to_spatial(&store, &out.tokens)?;
        println!(
            "{preset:?}: crops {:?} tokens {:?} projection {:?} frozen hash {}",
            crops.shape(),
            out.tokens.shape(),
            spatial.shape(),
            &store.frozen_hash()[..16]
        );
    }
    Ok(())
}
