//! Orthonormal 8×8 type-II DCT.

use std::f64::consts::PI;
use std::sync::OnceLock;

pub const N: usize = 8;
pub type Block = [f64; N * N];

fn basis() -> &'static [[f64; N]; N] {
    static BASIS: OnceLock<[[f64; N]; N]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut c = [[0.0; N]; N];
        for (k, row) in c.iter_mut().enumerate() {
            let a = if k == 0 {
                (1.0 / N as f64).sqrt()
            } else {
                (2.0 / N as f64).sqrt()
            };
            for (n, v) in row.iter_mut().enumerate() {
                *v = a * ((2 * n + 1) as f64 * k as f64 * PI / (2 * N) as f64).cos();
            }
        }
        c
    })
}

/// `C · X · Cᵀ` (or `Cᵀ · X · C` when `inverse`), row-major.
fn transform(x: &Block, inverse: bool) -> Block {
    let c = basis();
    let at = |i: usize, j: usize| if inverse { c[j][i] } else { c[i][j] };
    let mut tmp = [0.0; N * N];
    for i in 0..N {
        for j in 0..N {
            tmp[i * N + j] = (0..N).map(|k| at(i, k) * x[k * N + j]).sum();
        }
    }
    let mut out = [0.0; N * N];
    for i in 0..N {
        for j in 0..N {
            out[i * N + j] = (0..N).map(|k| tmp[i * N + k] * at(j, k)).sum();
        }
    }
    out
}

pub fn forward(block: &Block) -> Block {
    transform(block, false)
}

pub fn inverse(coeffs: &Block) -> Block {
    transform(coeffs, true)
}
