//! Dense matrix kernels shared by the tape operations and the pure-value
//! code paths (metrics, denoising, baselines).
//!
//! Every kernel computes each output element with a fixed summation order,
//! and the parallel variants split work only across output rows, so results
//! are bit-identical whether or not the `parallel` feature is enabled.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many output elements the parallel kernels fall back to the
/// sequential path; splitting tiny matrices across threads costs more than
/// it saves.
#[cfg(feature = "parallel")]
const PAR_MIN_ELEMS: usize = 16 * 1024;

fn matmul_row(out_row: &mut [f64], a_row: &[f64], b: &[f64], n: usize) {
    out_row.fill(0.0);
    for (l, &a_il) in a_row.iter().enumerate() {
        if a_il == 0.0 {
            continue;
        }
        let b_row = &b[l * n..(l + 1) * n];
        for (o, &b_lj) in out_row.iter_mut().zip(b_row) {
            *o += a_il * b_lj;
        }
    }
}

/// C = A (m x k) * B (k x n), sequential.
pub fn matmul_seq(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for (i, out_row) in out.chunks_mut(n).enumerate() {
        matmul_row(out_row, &a[i * k..(i + 1) * k], b, n);
    }
    out
}

/// C = A (m x k) * B (k x n), rows computed in parallel.
#[cfg(feature = "parallel")]
pub fn matmul_par(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    if m * n < PAR_MIN_ELEMS {
        return matmul_seq(a, b, m, k, n);
    }
    let mut out = vec![0.0; m * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, out_row)| {
        matmul_row(out_row, &a[i * k..(i + 1) * k], b, n);
    });
    out
}

/// Dispatches to the parallel kernel when the feature is on.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    {
        matmul_par(a, b, m, k, n)
    }
    #[cfg(not(feature = "parallel"))]
    {
        matmul_seq(a, b, m, k, n)
    }
}

fn matmul_nt_row(out_row: &mut [f64], a_row: &[f64], b: &[f64], k: usize) {
    for (j, o) in out_row.iter_mut().enumerate() {
        let b_row = &b[j * k..(j + 1) * k];
        let mut acc = 0.0;
        for (&x, &y) in a_row.iter().zip(b_row) {
            acc += x * y;
        }
        *o = acc;
    }
}

/// C = A (m x k) * B^T where B is (n x k). Used for gradient propagation.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut out = vec![0.0; m * n];
    #[cfg(feature = "parallel")]
    if m * n >= PAR_MIN_ELEMS {
        out.par_chunks_mut(n).enumerate().for_each(|(i, out_row)| {
            matmul_nt_row(out_row, &a[i * k..(i + 1) * k], b, k);
        });
        return out;
    }
    for (i, out_row) in out.chunks_mut(n).enumerate() {
        matmul_nt_row(out_row, &a[i * k..(i + 1) * k], b, k);
    }
    out
}

/// C = A^T * B where A is (m x k) and B is (m x n); the result is (k x n).
/// Used for gradient propagation.
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (l, &a_il) in a_row.iter().enumerate() {
            if a_il == 0.0 {
                continue;
            }
            let out_row = &mut out[l * n..(l + 1) * n];
            for (o, &b_ij) in out_row.iter_mut().zip(b_row) {
                *o += a_il * b_ij;
            }
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Guard below which a norm product is treated as zero in cosine similarity.
pub const COSINE_EPS: f64 = 1e-12;

/// Cosine similarity with a degenerate-input guard: if the product of the
/// two norms falls below [`COSINE_EPS`] the similarity is defined as 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let den = l2_norm(a) * l2_norm(b);
    if den < COSINE_EPS {
        0.0
    } else {
        dot(a, b) / den
    }
}
