use rand::Rng;

use super::linear::{Init, Linear};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Activation::Relu => x.relu(),
            Activation::Gelu => x.gelu(),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => x.sigmoid(),
            Activation::Identity => x.clone(),
        }
    }
}

/// Stack of linear layers with an activation between consecutive layers and
/// none after the last.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `widths` lists the input width followed by each layer's output width.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        activation: Activation,
        init: Init,
        trainable: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument(format!("mlp `{name}` needs at least two widths")));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], init, trainable, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Mlp { layers, activation })
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(store, &h)?;
            if i + 1 < self.layers.len() {
                h = self.activation.apply(&h);
            }
        }
        Ok(h)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&mut store, "m", &[3, 3], Activation::Relu, Init::Zeros, true, &mut rng).unwrap();
        let eye = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        store.set_data(mlp.layers[0].weight, eye).unwrap();
        let x = Tensor::from_vec(vec![1.5, -2.0, 0.25], &[1, 3]).unwrap();
        assert_eq!(mlp.forward(&store, &x).unwrap().data(), x.data());
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&mut store, "m", &[4, 2], Activation::Relu, Init::Zeros, true, &mut rng).unwrap();
        store.set_data(mlp.layers[0].bias, vec![0.5, -1.0]).unwrap();
        let x = Tensor::from_vec(vec![3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0], &[2, 4]).unwrap();
        assert_eq!(mlp.forward(&store, &x).unwrap().data(), &[0.5, -1.0, 0.5, -1.0]);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&mut store, "m", &[4, 2], Activation::Relu, Init::Zeros, true, &mut rng).unwrap();
        let x = Tensor::zeros(&[2, 3]);
        assert!(matches!(mlp.forward(&store, &x), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn gradient_check() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mlp = Mlp::new(&mut store, "m", &[5, 8, 3], Activation::Gelu, Init::FanIn(1.0), true, &mut rng).unwrap();
        let x = Tensor::from_vec((0..10).map(|i| (i as f64 * 0.37).sin()).collect(), &[2, 5]).unwrap();
        let err = finite_difference_check(|x| Ok(mlp.forward(&store, x)?.tanh().sum()), &x, 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
