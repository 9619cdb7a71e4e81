//! Seeded matrices with orthonormal rows or columns.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Row-major `out x inp` matrix. Columns are orthonormal when
/// `out >= inp`, rows otherwise. Identical for identical arguments.
pub fn orthonormal_projection(out: usize, inp: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (tall, wide) = (out.max(inp), out.min(inp));
    let gauss = DMatrix::<f64>::from_fn(tall, wide, |_, _| StandardNormal.sample(&mut rng));
    let q = gauss.qr().q();
    let mut m = vec![0.0; out * inp];
    for r in 0..out {
        for c in 0..inp {
            m[r * inp + c] = if out >= inp { q[(r, c)] } else { q[(c, r)] };
        }
    }
    m
}

/// `m x` for a row-major `out x inp` matrix.
pub fn apply(m: &[f64], out: usize, x: &[f64]) -> Vec<f64> {
    let inp = x.len();
    (0..out)
        .map(|r| m[r * inp..(r + 1) * inp].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}
