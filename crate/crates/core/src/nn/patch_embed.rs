use rand::Rng;

use super::linear::{Init, Linear};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

/// Non-overlapping `patch_size²` patches projected to `dim` (a strided
/// convolution written as unfold + matmul).
#[derive(Debug, Clone)]
pub struct PatchEmbed {
    pub patch_size: usize,
    pub in_channels: usize,
    pub dim: usize,
    pub proj: Linear,
}

/// Rearranges `[n, c, h, w]` into `[n, (h/p)·(w/p), c·p·p]`, patches in
/// row-major grid order and each patch flattened channel-major.
pub fn unfold_patches(images: &Tensor, p: usize) -> Result<Tensor> {
    let s = images.shape();
    if s.len() != 4 {
        return Err(Error::ShapeMismatch {
            op: "unfold_patches",
            lhs: s.to_vec(),
            rhs: vec![p],
        });
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::InvalidArgument(format!("image {h}×{w} is not divisible into {p}×{p} patches")));
    }
    images
        .reshape(&[n, c, h / p, p, w / p, p])?
        .permute(&[0, 2, 4, 1, 3, 5])?
        .reshape(&[n, (h / p) * (w / p), c * p * p])
}

impl PatchEmbed {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        patch_size: usize,
        in_channels: usize,
        dim: usize,
        init: Init,
        trainable: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let fan = in_channels * patch_size * patch_size;
        let proj = Linear::new(store, &format!("{name}.proj"), fan, dim, init, trainable, rng)?;
        Ok(PatchEmbed {
            patch_size,
            in_channels,
            dim,
            proj,
        })
    }

    /// `[c, h, w]` → `[T, dim]` or `[n, c, h, w]` → `[n, T, dim]` with `T = (h/p)²`.
    pub fn forward(&self, store: &ParamStore, images: &Tensor) -> Result<Tensor> {
        let single = images.ndim() == 3;
        let x = if single {
            let s = images.shape();
            images.reshape(&[1, s[0], s[1], s[2]])?
        } else {
            images.clone()
        };
        let s = x.shape().to_vec();
        if s.len() != 4 || s[1] != self.in_channels {
            return Err(Error::ChannelMismatch {
                what: "patch_embed",
                expected: self.in_channels,
                got: s.get(1).copied().unwrap_or(0),
            });
        }
        if s[2] != s[3] {
            return Err(Error::InvalidArgument(format!("patch_embed expects square images, got {}×{}", s[2], s[3])));
        }
        let tokens = self.proj.forward(store, &unfold_patches(&x, self.patch_size)?)?;
        if single {
            let t = tokens.shape()[1];
            tokens.reshape(&[t, self.dim])
        } else {
            Ok(tokens)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn desk_shapes() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pe = PatchEmbed::new(&mut store, "pe", 8, 3, 64, Init::Xavier, false, &mut rng).unwrap();
        let out = pe.forward(&store, &Tensor::zeros(&[3, 64, 64])).unwrap();
        assert_eq!(out.shape(), &[64, 64]);
    }

    #[test]
    fn indivisible_side_rejected() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pe = PatchEmbed::new(&mut store, "pe", 8, 3, 16, Init::Xavier, false, &mut rng).unwrap();
        assert!(pe.forward(&store, &Tensor::zeros(&[3, 60, 60])).is_err());
    }

    #[test]
    fn unfold_layout() {
        // 1 channel, 4×4 image holding its own flat index, patch 2.
        let img = Tensor::from_vec((0..16).map(f64::from).collect(), &[1, 1, 4, 4]).unwrap();
        let u = unfold_patches(&img, 2).unwrap();
        assert_eq!(u.shape(), &[1, 4, 4]);
        assert_eq!(&u.data()[..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(&u.data()[4..8], &[2.0, 3.0, 6.0, 7.0]);
        assert_eq!(&u.data()[12..], &[10.0, 11.0, 14.0, 15.0]);
    }

    #[test]
    fn constant_image_gives_identical_tokens() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pe = PatchEmbed::new(&mut store, "pe", 4, 3, 8, Init::Xavier, false, &mut rng).unwrap();
        let out = pe.forward(&store, &Tensor::full(&[3, 16, 16], 0.7)).unwrap();
        let first = &out.data()[..8];
        for tok in out.data().chunks(8) {
            assert_eq!(tok, first);
        }
    }
}
