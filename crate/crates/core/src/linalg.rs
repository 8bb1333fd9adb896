//! Small complex linear-algebra helpers and the single-spin gate kernels the
//! dense engine is built on.
//!
//! Dense operators are `nalgebra::DMatrix<C64>` (column-major). A register of
//! `n` spins maps spin `k` to index bit `n - 1 - k`.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector2};

use crate::par::Execution;
use crate::C64;

pub type Mat2 = Matrix2<C64>;
pub type Mat4 = Matrix4<C64>;
pub type Spinor = Vector2<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn sigma_x() -> Mat2 {
    Mat2::new(ZERO, ONE, ONE, ZERO)
}

pub fn sigma_y() -> Mat2 {
    Mat2::new(ZERO, -I, I, ZERO)
}

pub fn sigma_z() -> Mat2 {
    Mat2::new(ONE, ZERO, ZERO, -ONE)
}

/// `n · σ` for a real 3-vector `n`.
pub fn pauli_dot(n: [f64; 3]) -> Mat2 {
    Mat2::new(
        C64::new(n[2], 0.0),
        C64::new(n[0], -n[1]),
        C64::new(n[0], n[1]),
        C64::new(-n[2], 0.0),
    )
}

/// Bit position of spin `spin` in an `n`-spin register index.
#[inline]
pub fn spin_bit(n: usize, spin: usize) -> usize {
    n - 1 - spin
}

/// Kronecker product `ops[0] ⊗ ops[1] ⊗ ...`.
pub fn kron_all(ops: &[Mat2]) -> DMatrix<C64> {
    let mut out = DMatrix::from_element(1, 1, ONE);
    for op in ops {
        out = out.kronecker(op);
    }
    out
}

pub fn kron_vec(states: &[Spinor]) -> DVector<C64> {
    let mut out = DVector::from_element(1, ONE);
    for s in states {
        out = out.kronecker(s);
    }
    out
}

#[inline]
fn mix(x0: C64, x1: C64, m00: C64, m01: C64, m10: C64, m11: C64) -> (C64, C64) {
    (m00 * x0 + m01 * x1, m10 * x0 + m11 * x1)
}

/// `X ← (u acting on spin) · X` for a square `2^n` matrix.
pub fn apply_left(x: &mut DMatrix<C64>, n: usize, spin: usize, u: &Mat2, exec: Execution) {
    let dim = x.nrows();
    debug_assert_eq!(dim, 1 << n);
    let half = 1usize << spin_bit(n, spin);
    let (m00, m01, m10, m11) = (u[(0, 0)], u[(0, 1)], u[(1, 0)], u[(1, 1)]);
    // Column-major: each column is contiguous; pairs live inside a column.
    let per_column = |_: usize, col: &mut [C64]| {
        for block in col.chunks_mut(2 * half) {
            let (top, bot) = block.split_at_mut(half);
            for (a, b) in top.iter_mut().zip(bot.iter_mut()) {
                let (p, q) = mix(*a, *b, m00, m01, m10, m11);
                *a = p;
                *b = q;
            }
        }
    };
    exec.for_each_chunk(x.as_mut_slice(), dim, per_column);
}

/// `X ← X · (u acting on spin)†` for a square `2^n` matrix.
pub fn apply_right_adjoint(
    x: &mut DMatrix<C64>,
    n: usize,
    spin: usize,
    u: &Mat2,
    exec: Execution,
) {
    let dim = x.nrows();
    debug_assert_eq!(dim, 1 << n);
    let half_cols = 1usize << spin_bit(n, spin);
    // (X U†)[:, c0] = X[:, c0] conj(u00) + X[:, c1] conj(u01), etc.
    let (m00, m01, m10, m11) = (
        u[(0, 0)].conj(),
        u[(0, 1)].conj(),
        u[(1, 0)].conj(),
        u[(1, 1)].conj(),
    );
    let block_len = 2 * half_cols * dim;
    let blocks = dim / (2 * half_cols);
    let f = move |a: &mut C64, b: &mut C64| {
        let (p, q) = mix(*a, *b, m00, m01, m10, m11);
        *a = p;
        *b = q;
    };
    let data = x.as_mut_slice();
    if blocks >= 8 || !exec.is_parallel() {
        exec.for_each_chunk(data, block_len, |_, block| {
            let (top, bot) = block.split_at_mut(half_cols * dim);
            Execution::Sequential.zip_apply(top, bot, f);
        });
    } else {
        for block in data.chunks_mut(block_len) {
            let (top, bot) = block.split_at_mut(half_cols * dim);
            exec.zip_apply(top, bot, f);
        }
    }
}

/// `X ← (⊗_k ops[k]) · X`.
pub fn apply_product_left(x: &mut DMatrix<C64>, ops: &[Mat2], exec: Execution) {
    let n = ops.len();
    for (k, u) in ops.iter().enumerate() {
        apply_left(x, n, k, u, exec);
    }
}

/// `X ← X · (⊗_k ops[k])†`.
pub fn apply_product_right_adjoint(x: &mut DMatrix<C64>, ops: &[Mat2], exec: Execution) {
    let n = ops.len();
    for (k, u) in ops.iter().enumerate() {
        apply_right_adjoint(x, n, k, u, exec);
    }
}

/// `a·X + b·Y` into `X`.
pub fn axpby(x: &mut DMatrix<C64>, a: f64, y: &DMatrix<C64>, b: f64) {
    for (p, q) in x.as_mut_slice().iter_mut().zip(y.as_slice()) {
        *p = *p * a + *q * b;
    }
}

pub fn trace(x: &DMatrix<C64>) -> C64 {
    (0..x.nrows()).map(|i| x[(i, i)]).sum()
}

pub fn max_abs_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(p, q)| (p - q).norm())
        .fold(0.0, f64::max)
}

/// Largest deviation from Hermiticity, `max |X - X†|`.
pub fn hermiticity_defect(x: &DMatrix<C64>) -> f64 {
    let n = x.nrows();
    let mut worst = 0.0f64;
    for c in 0..n {
        for r in 0..=c {
            worst = worst.max((x[(r, c)] - x[(c, r)].conj()).norm());
        }
    }
    worst
}

/// Eigenvalues (ascending) and eigenvectors of a Hermitian matrix.
pub fn hermitian_eigen(x: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let sym = x.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..sym.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| sym.eigenvalues[a].total_cmp(&sym.eigenvalues[b]));
    let vals = order.iter().map(|&i| sym.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(x.nrows(), order.len(), |r, c| {
        sym.eigenvectors[(r, order[c])]
    });
    (vals, vecs)
}

pub fn mat4_to_dynamic(m: &Mat4) -> DMatrix<C64> {
    DMatrix::from_fn(4, 4, |r, c| m[(r, c)])
}

pub fn unitarity_defect(u: &Mat2) -> f64 {
    (u.adjoint() * u - Mat2::identity())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_mat2(seed: u64) -> Mat2 {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        Mat2::from_fn(|_, _| C64::new(next(), next()))
    }

    fn random_square(n: usize, seed: u64) -> DMatrix<C64> {
        let mut s = seed;
        DMatrix::from_fn(1 << n, 1 << n, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let a = (s >> 11) as f64 / (1u64 << 53) as f64;
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let b = (s >> 11) as f64 / (1u64 << 53) as f64;
            C64::new(a - 0.5, b - 0.5)
        })
    }

    #[test]
    fn kernels_match_explicit_kronecker_products() {
        let n = 4;
        let ops: Vec<Mat2> = (0..n).map(|k| random_mat2(k as u64 + 3)).collect();
        let full = kron_all(&ops);
        let x = random_square(n, 11);
        for exec in [Execution::Sequential, Execution::Parallel] {
            let mut left = x.clone();
            apply_product_left(&mut left, &ops, exec);
            assert!(max_abs_diff(&left, &(&full * &x)) < 1e-12);

            let mut right = x.clone();
            apply_product_right_adjoint(&mut right, &ops, exec);
            assert!(max_abs_diff(&right, &(&x * full.adjoint())) < 1e-12);
        }
    }

    #[test]
    fn single_spin_kernel_targets_the_right_factor() {
        let n = 3;
        let u = random_mat2(99);
        let mut ops = vec![Mat2::identity(); n];
        ops[1] = u;
        let full = kron_all(&ops);
        let x = random_square(n, 5);
        let mut y = x.clone();
        apply_left(&mut y, n, 1, &u, Execution::Sequential);
        assert!(max_abs_diff(&y, &(&full * &x)) < 1e-12);
    }

    #[test]
    fn pauli_dot_squares_to_norm() {
        let n = [0.3, -1.2, 0.7];
        let m = pauli_dot(n);
        let norm2: f64 = n.iter().map(|v| v * v).sum();
        assert!(((m * m) - Mat2::identity() * C64::from(norm2)).norm() < 1e-14);
    }
}
