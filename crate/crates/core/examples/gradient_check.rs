//! Finite-difference check of a small composite function on the tape.
//!
//! Usage: `cargo run --example gradient_check -- [seed]`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sfmk::ndiff::check::{check_gradients, CheckConfig};
use sfmk::{Array, Graph, Tensor};

fn main() -> sfmk::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = [Array::uniform(&[4, 3], -1.0, 1.0, &mut rng), Array::uniform(&[3, 2], -1.0, 1.0, &mut rng)];
    let report = check_gradients(&inputs, CheckConfig::default(), |_g: &Graph, x: &[Tensor<'_>]| {
        x[0].matmul(&x[1])?.gelu()?.softmax()?.square()?.sum()
    })?;
    println!("checked {} coordinates, max abs error {:.3e}", report.checked, report.max_abs_err);
    for m in &report.mismatches {
        println!("mismatch {m:?}");
    }
    Ok(())
}
