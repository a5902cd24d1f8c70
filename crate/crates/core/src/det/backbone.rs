use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Init, Linear};
use crate::tensor::{ParamStore, Tensor};

/// Stack of stride-2 patch-merging stages (2×2 unfold, linear, GELU).
#[derive(Debug, Clone)]
pub struct Backbone {
    pub stages: Vec<Linear>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Backbone {
    /// `channels = [c_in, c_1, ..., c_out]`; the stride is `2^(len − 1)`.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, channels: &[usize], trainable: bool, rng: &mut R) -> Result<Self> {
        if channels.len() < 2 {
            return Err(Error::InvalidArgument("backbone needs at least one stage".into()));
        }
        let stages = channels
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                Linear::new(
                    store,
                    &format!("{name}.stage{i}"),
                    4 * w[0],
                    w[1],
                    Init::FanIn(2f64.sqrt()),
                    trainable,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Backbone {
            stages,
            in_channels: channels[0],
            out_channels: *channels.last().unwrap(),
        })
    }

    pub fn stride(&self) -> usize {
        1 << self.stages.len()
    }

    /// `[C, H, W]` → `[out_channels, H/s, W/s]`.
    pub fn forward(&self, store: &ParamStore, image: &Tensor) -> Result<Tensor> {
        let s = image.shape();
        if s.len() != 3 || s[0] != self.in_channels {
            return Err(Error::ChannelMismatch {
                what: "backbone input",
                expected: self.in_channels,
                got: s.first().copied().unwrap_or(0),
            });
        }
        let stride = self.stride();
        let (mut h, mut w) = (s[1], s[2]);
        if h % stride != 0 || w % stride != 0 {
            return Err(Error::InvalidArgument(format!("image {h}×{w} is not divisible by stride {stride}")));
        }
        // Channel-last while merging.
        let mut x = image.permute(&[1, 2, 0])?;
        let mut c = self.in_channels;
        for stage in &self.stages {
            let merged = x
                .reshape(&[h / 2, 2, w / 2, 2, c])?
                .permute(&[0, 2, 1, 3, 4])?
                .reshape(&[(h / 2) * (w / 2), 4 * c])?;
            h /= 2;
            w /= 2;
            c = stage.out_dim;
            x = stage.forward(store, &merged)?.gelu().reshape(&[h, w, c])?;
        }
        x.permute(&[2, 0, 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn image(c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_vec((0..c * h * w).map(|i| ((i as f64) * 0.37).sin()).collect(), &[c, h, w]).unwrap()
    }

    #[test]
    fn output_shapes() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bb = Backbone::new(&mut store, "bb", &[3, 8, 16, 256], true, &mut rng).unwrap();
        assert_eq!(bb.stride(), 8);
        assert_eq!(bb.forward(&store, &image(3, 64, 64)).unwrap().shape(), &[256, 8, 8]);
        assert_eq!(bb.forward(&store, &image(3, 128, 128)).unwrap().shape(), &[256, 16, 16]);
        assert!(bb.forward(&store, &image(3, 60, 64)).is_err());
        assert!(bb.forward(&store, &image(1, 64, 64)).is_err());
    }

    #[test]
    fn gradient_check() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bb = Backbone::new(&mut store, "bb", &[3, 4, 6, 5], true, &mut rng).unwrap();
        let err = finite_difference_check(|x| Ok(bb.forward(&store, x)?.sum()), &image(3, 16, 16), 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn receptive_field_is_one_cell() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bb = Backbone::new(&mut store, "bb", &[3, 4, 4, 4], true, &mut rng).unwrap();
        let a = image(3, 16, 16);
        let mut v = a.to_vec();
        // Perturb a pixel inside cell (0, 0) only.
        v[3 * 16 + 5] += 1.0;
        let b = Tensor::from_vec(v, &[3, 16, 16]).unwrap();
        let (fa, fb) = (bb.forward(&store, &a).unwrap(), bb.forward(&store, &b).unwrap());
        for ch in 0..4 {
            for cell in 0..4 {
                let (x, y) = (fa.data()[ch * 4 + cell], fb.data()[ch * 4 + cell]);
                assert_eq!(cell == 0, x != y, "channel {ch} cell {cell}");
            }
        }
    }
}
