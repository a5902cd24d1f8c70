//! Finite-difference check of a small transformer block and GRU cell.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vfmdet::nn::{GruCell, Init, TransformerBlock};
use vfmdet::tensor::finite_difference_check;
use vfmdet::{ParamStore, Tensor};

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let block = TransformerBlock::new(&mut store, "block", 8, 2, 2.0, true, &mut rng)?;
    let gru = GruCell::new(&mut store, "gru", 8, 6, Init::FanIn(1.0), true, &mut rng)?;
    let x = Tensor::from_vec((0..48).map(|i| (i as f64 * 0.37).sin()).collect(), &[2, 3, 8])?;
    let e = finite_difference_check(|x| Ok(block.forward(&store, x)?.tokens.tanh().sum()), &x, 1e-5)?;
    println!("transformer block max relative error {e:.2e}");
    let h = Tensor::zeros(&[3, 6]);
    let x = x.slice(0, 0, 1)?.reshape(&[3, 8])?;
    let e = finite_difference_check(|x| Ok(gru.step(&store, x, &h)?.sum()), &x, 1e-5)?;
    println!("gru step max relative error {e:.2e}");
    Ok(())
}
