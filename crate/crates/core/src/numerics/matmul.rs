//! Small dense matmul kernels backing the im2col convolution paths.
//!
//! All three variants keep a fixed accumulation order so repeated runs are
//! bit-identical; the inner loops stream over contiguous rows, which LLVM
//! vectorizes without needing float reassociation.

use super::tensor::Scalar;

/// out[m x n] += a[m x k] * b[k x n]
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += av * bv;
            }
        }
    }
}

/// out[m x n] += a[m x k] * b^T where b is [n x k]
pub fn matmul_nt_acc<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            out_row[j] += dot(a_row, b_row);
        }
    }
}

/// out[m x n] += a^T * b where a is [k x m], b is [k x n]
pub fn matmul_tn_acc<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += av * bv;
            }
        }
    }
}

/// Dot product with eight independent accumulator lanes. The lane structure
/// is fixed, so the result does not depend on vector width or thread count.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let ac = &a[c * 8..c * 8 + 8];
        let bc = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            lanes[l] += ac[l] * bc[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    let mut acc = tail;
    for l in 0..8 {
        acc += lanes[l];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    fn rand_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.normal()).collect()
    }

    #[test]
    fn variants_agree_with_naive_triple_loop() {
        let mut rng = Rng::new(11);
        for &(m, k, n) in &[(1, 1, 1), (3, 4, 5), (8, 16, 8), (7, 13, 9)] {
            let a = rand_vec(&mut rng, m * k);
            let b = rand_vec(&mut rng, k * n);
            let want = naive(&a, &b, m, k, n);

            let mut got = vec![0.0; m * n];
            matmul_acc(&a, &b, m, k, n, &mut got);
            for (g, w) in got.iter().zip(want.iter()) {
                assert!((g - w).abs() < 1e-12);
            }

            // b^T stored as [n x k]
            let mut bt = vec![0.0; n * k];
            for p in 0..k {
                for j in 0..n {
                    bt[j * k + p] = b[p * n + j];
                }
            }
            let mut got_nt = vec![0.0; m * n];
            matmul_nt_acc(&a, &bt, m, k, n, &mut got_nt);
            for (g, w) in got_nt.iter().zip(want.iter()) {
                assert!((g - w).abs() < 1e-12);
            }

            // a^T stored as [k x m]
            let mut at = vec![0.0; k * m];
            for i in 0..m {
                for p in 0..k {
                    at[p * m + i] = a[i * k + p];
                }
            }
            let mut got_tn = vec![0.0; m * n];
            matmul_tn_acc(&at, &b, m, k, n, &mut got_tn);
            for (g, w) in got_tn.iter().zip(want.iter()) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }
}
