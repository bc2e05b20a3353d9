#![allow(dead_code)]

use chlorocast::autodiff::{finite_difference_check, Tape, Tensor, Var};
use chlorocast::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random linear functional of `y`, so no coordinate of the gradient is trivially zero.
pub fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let w = Tensor::randn(tape.shape(y), 1.0, &mut rng(seed ^ 0xfeed));
    let w = tape.constant(w);
    let prod = tape.mul(y, w)?;
    Ok(tape.sum(prod))
}

/// Worst relative finite-difference error over every tensor in `tensors`,
/// perturbing one at a time while the others stay constant.
pub fn check_each<B>(tensors: &[Tensor], build: B) -> f64
where
    B: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut worst = 0.0_f64;
    for j in 0..tensors.len() {
        let err = finite_difference_check(
            |tape, v| {
                let vars: Vec<Var> = tensors
                    .iter()
                    .enumerate()
                    .map(|(i, t)| if i == j { v } else { tape.constant(t.clone()) })
                    .collect();
                build(tape, &vars)
            },
            &tensors[j],
            1e-5,
        )
        .unwrap();
        worst = worst.max(err);
    }
    worst
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
