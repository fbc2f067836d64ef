//! Arnoldi iteration for the largest-magnitude eigenvalues of a linear operator.
//!
//! The Krylov basis is grown (without restarts) until the wanted Ritz pairs
//! converge or `max_dim` is reached. Used on shift-inverted operators, where
//! the wanted part of the spectrum separates quickly.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dense;
use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone)]
pub struct ArnoldiOptions {
    pub nev: usize,
    pub tol: f64,
    pub max_dim: usize,
    pub check_every: usize,
    pub seed: u64,
}

impl Default for ArnoldiOptions {
    fn default() -> Self {
        Self {
            nev: 6,
            tol: 1e-12,
            max_dim: 400,
            check_every: 10,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RitzPairs {
    /// Ritz values sorted by decreasing modulus.
    pub values: Vec<Complex64>,
    /// Unit-norm Ritz vectors.
    pub vectors: Vec<Vec<Complex64>>,
    /// Residual estimates `|β_m y_m|`.
    pub residuals: Vec<f64>,
    pub krylov_dim: usize,
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn largest_magnitude<F>(n: usize, mut apply: F, opts: &ArnoldiOptions) -> Result<RitzPairs>
where
    F: FnMut(&[Complex64]) -> Vec<Complex64>,
{
    if opts.nev == 0 || opts.nev > n {
        return Err(Error::invalid("nev", format!("need 1 ≤ nev ≤ {n}, got {}", opts.nev)));
    }
    let max_dim = opts.max_dim.min(n).max(opts.nev);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v0: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    let nrm = norm(&v0);
    v0.iter_mut().for_each(|x| *x /= nrm);

    let mut basis: Vec<Vec<Complex64>> = vec![v0];
    let mut h = DMatrix::<Complex64>::zeros(max_dim + 1, max_dim);
    let first_check = (2 * opts.nev + 1).max(opts.check_every).min(max_dim);
    let mut last_residual = f64::INFINITY;

    for j in 0..max_dim {
        let mut w = apply(&basis[j]);
        // classical Gram-Schmidt, applied twice
        for _ in 0..2 {
            for (i, vi) in basis.iter().enumerate() {
                let c = dot(vi, &w);
                h[(i, j)] += c;
                w.iter_mut().zip(vi).for_each(|(wk, vk)| *wk -= c * vk);
            }
        }
        let beta = norm(&w);
        h[(j + 1, j)] = Complex64::new(beta, 0.0);
        let m = j + 1;
        let scale = h.view((0, 0), (m, m)).iter().fold(0.0f64, |a, v| a.max(v.norm()));
        let breakdown = beta <= 1e-14 * scale.max(1e-300);
        let at_check = m >= first_check && (m - first_check) % opts.check_every == 0;
        if breakdown || at_check || m == max_dim {
            let hm = h.view((0, 0), (m, m)).into_owned();
            let (vals, vecs) = dense::eigen(&hm);
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| vals[b].norm().partial_cmp(&vals[a].norm()).unwrap().then(a.cmp(&b)));
            let nev = opts.nev.min(m);
            let wanted = &order[..nev];
            let residuals: Vec<f64> = wanted
                .iter()
                .map(|&k| if breakdown { 0.0 } else { beta * vecs[(m - 1, k)].norm() })
                .collect();
            let converged = wanted
                .iter()
                .zip(&residuals)
                .all(|(&k, &r)| r <= opts.tol * vals[k].norm().max(f64::MIN_POSITIVE));
            last_residual = wanted
                .iter()
                .zip(&residuals)
                .map(|(&k, &r)| r / vals[k].norm().max(f64::MIN_POSITIVE))
                .fold(0.0, f64::max);
            if (converged && nev == opts.nev) || breakdown {
                let vectors = wanted
                    .iter()
                    .map(|&k| {
                        let mut x = vec![ZERO; n];
                        for (i, vi) in basis.iter().take(m).enumerate() {
                            let yi = vecs[(i, k)];
                            x.iter_mut().zip(vi).for_each(|(xk, vk)| *xk += yi * vk);
                        }
                        let nx = norm(&x);
                        x.iter_mut().for_each(|xk| *xk /= nx);
                        x
                    })
                    .collect();
                return Ok(RitzPairs {
                    values: wanted.iter().map(|&k| vals[k]).collect(),
                    vectors,
                    residuals,
                    krylov_dim: m,
                });
            }
        }
        if m == max_dim {
            break;
        }
        w.iter_mut().for_each(|x| *x /= beta);
        basis.push(w);
    }
    Err(Error::NonConvergence {
        what: format!("Arnoldi for {} eigenvalues (Krylov dimension {max_dim})", opts.nev),
        residual: last_residual,
        iterations: max_dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_dominant_eigenvalues_of_diagonal_operator() {
        let n = 200;
        let diag: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(1.0 / (1.0 + i as f64), 0.1 * (i % 3) as f64 / (1.0 + i as f64)))
            .collect();
        let opts = ArnoldiOptions { nev: 4, ..Default::default() };
        let out = largest_magnitude(n, |x| x.iter().zip(&diag).map(|(a, b)| a * b).collect(), &opts).unwrap();
        for (k, v) in out.values.iter().enumerate() {
            assert!((v - diag[k]).norm() < 1e-10, "{k}: {v} vs {}", diag[k]);
        }
    }
}
