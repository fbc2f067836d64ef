//! Banded LU factorization with partial pivoting.
//!
//! The matrix is reordered by a caller-supplied symmetric permutation before
//! factorization. Row `i` of the band store holds columns
//! `i - kl ..= i + kl + ku`; the extra `kl` columns absorb fill from row swaps.

use num_complex::Complex64;

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<Complex64>,
    pivots: Vec<usize>,
    perm: Vec<usize>,
}

impl BandedLu {
    /// Bytes needed to factor an `n × n` matrix with the given half-bandwidths.
    pub fn storage_bytes(n: usize, kl: usize, ku: usize) -> usize {
        n.saturating_mul(2 * kl + ku + 1)
            .saturating_mul(std::mem::size_of::<Complex64>())
    }

    /// Factors `P A Pᵀ` with `perm[new] = old`. `memory_budget` caps the band store in bytes.
    pub fn factor(a: &CsrMatrix, perm: Option<&[usize]>, memory_budget: usize) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::invalid("matrix", "banded LU needs a square matrix"));
        }
        let perm: Vec<usize> = match perm {
            Some(p) => p.to_vec(),
            None => (0..n).collect(),
        };
        let b = a.permute_symmetric(&perm);
        let (kl, ku) = b.bandwidths();
        let bytes = Self::storage_bytes(n, kl, ku);
        if bytes > memory_budget {
            return Err(Error::Resource(format!(
                "banded factorization of order {n} (kl = {kl}, ku = {ku}) needs {:.2} GiB, budget {:.2} GiB",
                bytes as f64 / 1024f64.powi(3),
                memory_budget as f64 / 1024f64.powi(3)
            )));
        }
        let width = 2 * kl + ku + 1;
        let mut data = vec![ZERO; n * width];
        for (i, j, v) in b.triplets() {
            data[i * width + j + kl - i] = v;
        }
        let mut lu = Self {
            n,
            kl,
            ku,
            width,
            data,
            pivots: vec![0; n],
            perm,
        };
        lu.eliminate()?;
        Ok(lu)
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + j + self.kl - i
    }

    fn eliminate(&mut self) -> Result<()> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.idx(k, k)].norm();
            for r in k + 1..=last_row {
                let v = self.data[self.idx(r, k)].norm();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 {
                return Err(Error::NonConvergence {
                    what: format!("banded LU: exactly singular pivot at column {k}"),
                    residual: 0.0,
                    iterations: k,
                });
            }
            self.pivots[k] = p;
            if p != k {
                for c in k..=last_col {
                    let (a, b) = (self.idx(k, c), self.idx(p, c));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(k, k)];
            let span = last_col - k;
            let k_start = self.idx(k, k + 1);
            for r in k + 1..=last_row {
                let rk = self.idx(r, k);
                let l = self.data[rk] / pivot;
                self.data[rk] = l;
                if l == ZERO {
                    continue;
                }
                let r_start = self.idx(r, k + 1);
                // rows r > k never alias the pivot row
                let (head, tail) = self.data.split_at_mut(r_start);
                let pivot_row = &head[k_start..k_start + span];
                for (dst, &src) in tail[..span].iter_mut().zip(pivot_row) {
                    *dst -= l * src;
                }
            }
        }
        Ok(())
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        assert_eq!(b.len(), n);
        let mut x: Vec<Complex64> = self.perm.iter().map(|&old| b[old]).collect();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk == ZERO {
                continue;
            }
            for r in k + 1..=(k + kl).min(n - 1) {
                x[r] -= self.data[self.idx(r, k)] * xk;
            }
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            let last = (i + kl + ku).min(n - 1);
            if last > i {
                let start = self.idx(i, i + 1);
                for (v, xc) in self.data[start..start + (last - i)].iter().zip(&x[i + 1..=last]) {
                    acc -= v * xc;
                }
            }
            x[i] = acc / self.data[self.idx(i, i)];
        }
        let mut out = vec![ZERO; n];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = x[new];
        }
        out
    }

    /// Solves `A^† x = b`.
    pub fn solve_adjoint(&self, b: &[Complex64]) -> Vec<Complex64> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        assert_eq!(b.len(), n);
        let mut z: Vec<Complex64> = self.perm.iter().map(|&old| b[old]).collect();
        // U^† z = b, forward
        for i in 0..n {
            let mut acc = z[i];
            let first = i.saturating_sub(kl + ku);
            for j in first..i {
                acc -= self.data[self.idx(j, i)].conj() * z[j];
            }
            z[i] = acc / self.data[self.idx(i, i)].conj();
        }
        // elimination steps in reverse, adjointed
        for k in (0..n).rev() {
            let mut acc = z[k];
            for r in k + 1..=(k + kl).min(n - 1) {
                acc -= self.data[self.idx(r, k)].conj() * z[r];
            }
            z[k] = acc;
            let p = self.pivots[k];
            if p != k {
                z.swap(k, p);
            }
        }
        let mut out = vec![ZERO; n];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = z[new];
        }
        out
    }
}
