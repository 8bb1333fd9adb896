//! Two-spin reduced density matrices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{spin_bit, Mat4};
use crate::par::Execution;
use crate::C64;

/// Reduced states of every unordered pair `i < j`, in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRdms {
    n: usize,
    mats: Vec<Mat4>,
}

impl PairRdms {
    pub fn from_fn(n: usize, exec: Execution, f: impl Fn(usize, usize) -> Mat4 + Sync + Send) -> Self {
        let pairs = pair_list(n);
        let mats = exec.map_indexed(pairs.len(), |p| f(pairs[p].0, pairs[p].1));
        Self { n, mats }
    }

    pub fn spins(&self) -> usize {
        self.n
    }

    /// Reduced state of spins `i` and `j` (`i ≠ j`); for `i > j` the factors
    /// are swapped so that `i` is always the first tensor factor.
    pub fn get(&self, i: usize, j: usize) -> Mat4 {
        assert!(i != j && i < self.n && j < self.n, "invalid pair ({i}, {j})");
        if i < j {
            self.mats[pair_index(self.n, i, j)]
        } else {
            swap_factors(&self.mats[pair_index(self.n, j, i)])
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &Mat4)> {
        pair_list(self.n).into_iter().zip(self.mats.iter())
    }
}

pub fn pair_list(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

fn pair_index(n: usize, i: usize, j: usize) -> usize {
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

/// Exchange the two tensor factors of a two-spin operator.
pub fn swap_factors(m: &Mat4) -> Mat4 {
    const P: [usize; 4] = [0, 2, 1, 3];
    Mat4::from_fn(|r, c| m[(P[r], P[c])])
}

/// Insert two bits (values `a_hi` at position `hi`, `a_lo` at `lo`, with
/// `hi > lo`) into `base`, which enumerates the remaining bits.
#[inline]
fn insert_bits(base: usize, hi: usize, lo: usize, a_hi: usize, a_lo: usize) -> usize {
    let low_mask = (1usize << lo) - 1;
    let x = (base & low_mask) | ((base & !low_mask) << 1) | (a_lo << lo);
    let mid_mask = (1usize << hi) - 1;
    (x & mid_mask) | ((x & !mid_mask) << 1) | (a_hi << hi)
}

/// Partial trace of an `n`-spin density matrix onto spins `(i, j)`.
pub fn pair_rdm(rho: &DMatrix<C64>, n: usize, i: usize, j: usize) -> Result<Mat4> {
    if i == j || i >= n || j >= n {
        return Err(Error::Domain(format!("invalid spin pair ({i}, {j}) for {n} spins")));
    }
    if rho.nrows() != 1 << n || rho.ncols() != 1 << n {
        return Err(Error::Dimension { expected: 1 << n, found: rho.nrows() });
    }
    let (bi, bj) = (spin_bit(n, i), spin_bit(n, j));
    let (hi, lo) = if bi > bj { (bi, bj) } else { (bj, bi) };
    let rest = 1usize << (n - 2);
    // Local two-spin index: spin i is the high bit.
    let embed = |base: usize, local: usize| {
        let (ai, aj) = (local >> 1, local & 1);
        let (a_hi, a_lo) = if bi > bj { (ai, aj) } else { (aj, ai) };
        insert_bits(base, hi, lo, a_hi, a_lo)
    };
    let mut out = Mat4::zeros();
    for r in 0..4 {
        for c in 0..4 {
            out[(r, c)] = (0..rest).map(|b| rho[(embed(b, r), embed(b, c))]).sum();
        }
    }
    Ok(out)
}

/// Reduced states of all pairs of a dense `n`-spin state.
pub fn all_pair_rdms(rho: &DMatrix<C64>, n: usize, exec: Execution) -> Result<PairRdms> {
    if n < 2 {
        return Ok(PairRdms { n, mats: Vec::new() });
    }
    if rho.nrows() != 1 << n {
        return Err(Error::Dimension { expected: 1 << n, found: rho.nrows() });
    }
    Ok(PairRdms::from_fn(n, exec, |i, j| {
        pair_rdm(rho, n, i, j).expect("validated pair")
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{kron_all, Mat2, ONE, ZERO};

    fn random_mat2(seed: u64) -> Mat2 {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let a = Mat2::from_fn(|_, _| C64::new(next(), next()));
        let h = a * a.adjoint();
        let tr = h[(0, 0)] + h[(1, 1)];
        h / tr
    }

    #[test]
    fn product_state_traces_to_factors() {
        let n = 4;
        let parts: Vec<Mat2> = (0..n).map(|k| random_mat2(k as u64 + 1)).collect();
        let rho = kron_all(&parts);
        for (i, j) in pair_list(n) {
            let got = pair_rdm(&rho, n, i, j).unwrap();
            let want = parts[i].kronecker(&parts[j]);
            assert!((got - want).norm() < 1e-13, "pair ({i},{j})");
            let swapped = pair_rdm(&rho, n, j, i).unwrap();
            assert!((swapped - parts[j].kronecker(&parts[i])).norm() < 1e-13);
        }
    }

    #[test]
    fn matches_explicit_partial_trace() {
        // Non-product state: brute-force index decomposition as oracle.
        let n = 3;
        let dim = 1 << n;
        let rho = DMatrix::from_fn(dim, dim, |r, c| C64::new((r * 7 + c * 3) as f64, (r as f64) - (c as f64)));
        for (i, j) in [(0, 2), (2, 1), (1, 0)] {
            let got = pair_rdm(&rho, n, i, j).unwrap();
            let mut want = Mat4::zeros();
            for r in 0..dim {
                for c in 0..dim {
                    let bit = |x: usize, s: usize| (x >> (n - 1 - s)) & 1;
                    let k = (0..n).filter(|&s| s != i && s != j).collect::<Vec<_>>()[0];
                    if bit(r, k) == bit(c, k) {
                        let lr = 2 * bit(r, i) + bit(r, j);
                        let lc = 2 * bit(c, i) + bit(c, j);
                        want[(lr, lc)] += rho[(r, c)];
                    }
                }
            }
            assert!((got - want).norm() < 1e-12);
        }
    }

    #[test]
    fn table_lookup_and_swap() {
        let n = 3;
        let up = Mat2::new(ONE, ZERO, ZERO, ZERO);
        let down = Mat2::new(ZERO, ZERO, ZERO, ONE);
        let rho = kron_all(&[up, down, up]);
        let table = all_pair_rdms(&rho, n, Execution::Sequential).unwrap();
        assert_eq!(table.iter().count(), 3);
        // |+1,-1⟩ is local index 1; swapped it becomes index 2.
        assert_eq!(table.get(0, 1)[(1, 1)], ONE);
        assert_eq!(table.get(1, 0)[(2, 2)], ONE);
        assert!(pair_rdm(&rho, n, 1, 1).is_err());
    }
}
