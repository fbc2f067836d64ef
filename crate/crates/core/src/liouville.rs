//! Lindblad superoperator, steady state, low-lying spectrum and Liouvillian gap.
//!
//! Density matrices are vectorized by column stacking, `vec(ρ)[i + D j] = ρ_ij`,
//! which coincides with nalgebra's column-major storage. With this convention
//! `vec(A ρ B) = (Bᵀ ⊗ A) vec(ρ)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{self, HilbertSpace, SystemParams};
use crate::linalg::arnoldi::{self, ArnoldiOptions};
use crate::linalg::{dense, BandedLu, CsrMatrix};
use crate::meanfield;
use crate::ode::{self, OdeOptions};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Default cap on the memory used by a single factorization or generator.
pub const DEFAULT_MEMORY_BUDGET: usize = 6 << 30;
/// Default real shift for inverse iteration and shift-invert Arnoldi.
pub const DEFAULT_SHIFT: f64 = 1e-6;
/// Largest superoperator order handled by dense diagonalization in `Method::Auto`.
pub const DENSE_LIMIT: usize = 400;

#[derive(Debug, Clone)]
pub struct Liouvillian {
    space: HilbertSpace,
    params: SystemParams,
    generator: CsrMatrix,
    memory_budget: usize,
}

/// Steady state on the smallest cutoff, grown from `start` by factors of 1.25, whose
/// top-decile Fock population is below [`hilbert::TAIL_TOLERANCE`].
///
/// Stops at `max_cutoff` and returns the last (flagged) result there.
pub fn tail_validated_steady_state(
    params: &SystemParams,
    start: HilbertSpace,
    max_cutoff: usize,
    memory_budget: usize,
) -> Result<(Liouvillian, SteadyState)> {
    let mut space = start;
    loop {
        let l = build_with_budget(params, space, memory_budget)?;
        let ss = l.steady_state()?;
        let n = space.fock_cutoff();
        if !ss.truncation_flag || n >= max_cutoff {
            return Ok((l, ss));
        }
        let next = ((n as f64 * 1.25).ceil() as usize).min(max_cutoff.max(n + 1));
        log::info!("tail population {:.2e} at N = {n}, retrying with N = {next}", ss.tail_mass);
        space = HilbertSpace::new(next)?;
    }
}

/// Rough upper bound on stored entries per generator row.
const ENTRIES_PER_ROW: usize = 16;

pub fn build(params: &SystemParams, space: HilbertSpace) -> Result<Liouvillian> {
    build_with_budget(params, space, DEFAULT_MEMORY_BUDGET)
}

pub fn build_with_budget(params: &SystemParams, space: HilbertSpace, memory_budget: usize) -> Result<Liouvillian> {
    params.validate()?;
    let d = space.dim();
    let bytes = d
        .checked_mul(d)
        .and_then(|n| n.checked_mul(ENTRIES_PER_ROW * (std::mem::size_of::<Complex64>() + 8)))
        .ok_or_else(|| Error::Resource(format!("superoperator of dimension {d}² overflows")))?;
    if bytes > memory_budget {
        return Err(Error::Resource(format!(
            "generator for Hilbert dimension {d} needs about {:.2} GiB, budget {:.2} GiB",
            bytes as f64 / 1024f64.powi(3),
            memory_budget as f64 / 1024f64.powi(3)
        )));
    }
    let h = hilbert::hamiltonian(params, space).matrix().clone();
    let id = CsrMatrix::identity(d);
    let mut gen = id.kron(&h).scale(-I).add(&h.transpose().kron(&id).scale(I));
    let jumps = [
        (params.kappa, hilbert::annihilation(space).matrix().clone()),
        (params.gamma, hilbert::sigma_minus(space).matrix().clone()),
    ];
    for (rate, l) in jumps {
        if rate == 0.0 {
            continue;
        }
        let ldl = l.adjoint().matmul(&l);
        let term = l
            .conj()
            .kron(&l)
            .scale(Complex64::new(2.0, 0.0))
            .sub(&id.kron(&ldl))
            .sub(&ldl.transpose().kron(&id));
        gen = gen.add(&term.scale(Complex64::new(rate, 0.0)));
    }
    Ok(Liouvillian {
        space,
        params: *params,
        generator: gen,
        memory_budget,
    })
}

/// Symmetric permutation (`perm[new] = old`) that orders superindices by
/// `(n_j, n_i, s_j, s_i)`, giving a half-bandwidth of about `4N`.
pub fn band_permutation(space: HilbertSpace) -> Vec<usize> {
    let n = space.fock_cutoff();
    let d = space.dim();
    let mut perm = Vec::with_capacity(d * d);
    for nj in 0..n {
        for ni in 0..n {
            for sj in 0..2 {
                for si in 0..2 {
                    perm.push(space.index(si, ni) + d * space.index(sj, nj));
                }
            }
        }
    }
    perm
}

pub fn vectorize(rho: &DMatrix<Complex64>) -> Vec<Complex64> {
    rho.as_slice().to_vec()
}

pub fn unvectorize(v: &[Complex64], d: usize) -> DMatrix<Complex64> {
    DMatrix::from_column_slice(d, d, v)
}

fn trace_of(v: &[Complex64], d: usize) -> Complex64 {
    (0..d).map(|i| v[i + d * i]).sum()
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// `vec(ρ†)` from `vec(ρ)`.
fn adjoint_vec(v: &[Complex64], d: usize) -> Vec<Complex64> {
    let mut out = vec![ZERO; v.len()];
    for j in 0..d {
        for i in 0..d {
            out[j + d * i] = v[i + d * j].conj();
        }
    }
    out
}

/// LU factorization of `ℒ − σ𝟙` in the banded ordering.
pub struct ShiftedFactor {
    pub shift: Complex64,
    lu: BandedLu,
}

impl ShiftedFactor {
    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        self.lu.solve(b)
    }

    pub fn solve_adjoint(&self, b: &[Complex64]) -> Vec<Complex64> {
        self.lu.solve_adjoint(b)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteadyState {
    pub rho: DMatrix<Complex64>,
    /// ‖ℒ vec(ρ_s)‖₂.
    pub residual: f64,
    pub min_eigenvalue: f64,
    pub iterations: usize,
    pub tail_mass: f64,
    /// Set when the population in the top Fock levels exceeds the tail tolerance.
    pub truncation_flag: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Dense below [`DENSE_LIMIT`], shift-invert above.
    Auto,
    Dense,
    ShiftInvert,
}

#[derive(Debug, Clone)]
pub struct SpectrumOptions {
    pub method: Method,
    /// Shifts for shift-invert. `None` uses [`default_shifts`].
    pub shifts: Option<Vec<Complex64>>,
    pub arnoldi: ArnoldiOptions,
    /// Relative residual ‖ℒx − λx‖/(1 + |λ|) above which a Ritz pair is discarded.
    pub residual_tol: f64,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            method: Method::Auto,
            shifts: None,
            arnoldi: ArnoldiOptions {
                tol: 1e-11,
                max_dim: 300,
                ..Default::default()
            },
            residual_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralData {
    /// Sorted by decreasing real part; conjugate partners adjacent (positive imaginary part first).
    pub eigenvalues: Vec<Complex64>,
    /// ρ₀ is trace-normalized, the others have unit Frobenius norm.
    pub right_states: Vec<DMatrix<Complex64>>,
    /// Normalized so that Tr[ρ̃ᵢ† ρⱼ] = δᵢⱼ.
    pub left_states: Vec<DMatrix<Complex64>>,
    pub count: usize,
    pub residuals: Vec<f64>,
    pub method: Method,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapResult {
    pub delta: f64,
    pub lambda1: Complex64,
    /// Dimension `m` of the metastable manifold from the ratio test, 0 when no split is found.
    pub metastable_dim: usize,
    pub warning: Option<String>,
}

/// `σ₀` plus `i ω` for each oscillation frequency of the linearized mean-field
/// dynamics around its stable fixed points.
pub fn default_shifts(params: &SystemParams) -> Vec<Complex64> {
    let mut shifts = vec![Complex64::new(DEFAULT_SHIFT, 0.0)];
    shifts.extend(
        meanfield::characteristic_frequencies(params)
            .into_iter()
            .map(|w| Complex64::new(DEFAULT_SHIFT, w)),
    );
    shifts
}

impl Liouvillian {
    pub fn space(&self) -> HilbertSpace {
        self.space
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn generator(&self) -> &CsrMatrix {
        &self.generator
    }

    pub fn order(&self) -> usize {
        self.generator.nrows()
    }

    pub fn memory_budget(&self) -> usize {
        self.memory_budget
    }

    pub fn apply(&self, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        unvectorize(&self.generator.mul_vec(&vectorize(rho)), self.space.dim())
    }

    /// Parity superoperator `ρ ↦ 𝒫 ρ 𝒫†`, i.e. `conj(𝒫) ⊗ 𝒫`.
    pub fn parity_superoperator(&self) -> CsrMatrix {
        let p = hilbert::parity(self.space).matrix().clone();
        p.conj().kron(&p)
    }

    pub fn factor(&self, shift: Complex64) -> Result<ShiftedFactor> {
        let n = self.order();
        let shifted = self.generator.sub(&CsrMatrix::identity(n).scale(shift));
        let perm = band_permutation(self.space);
        let lu = BandedLu::factor(&shifted, Some(&perm), self.memory_budget)?;
        Ok(ShiftedFactor { shift, lu })
    }

    /// Null vector of ℒ by inverse iteration, trace-normalized and Hermitized.
    pub fn steady_state(&self) -> Result<SteadyState> {
        let factor = self.factor(Complex64::new(DEFAULT_SHIFT, 0.0))?;
        self.steady_state_with(&factor)
    }

    pub fn steady_state_with(&self, factor: &ShiftedFactor) -> Result<SteadyState> {
        const TOL: f64 = 1e-10;
        const MAX_ITER: usize = 30;
        let d = self.space.dim();
        let mut v = vectorize(&DMatrix::<Complex64>::identity(d, d).scale(1.0 / d as f64));
        let mut residual = f64::INFINITY;
        for it in 1..=MAX_ITER {
            v = factor.solve(&v);
            let tr = trace_of(&v, d);
            if tr.norm() == 0.0 || !tr.is_finite() {
                return Err(Error::NonConvergence {
                    what: "steady state (traceless iterate)".into(),
                    residual,
                    iterations: it,
                });
            }
            v.iter_mut().for_each(|x| *x /= tr);
            let m = unvectorize(&v, d);
            let rho = (&m + m.adjoint()).scale(0.5);
            residual = norm(&self.generator.mul_vec(&vectorize(&rho)));
            if residual < TOL {
                let (evals, _) = dense::hermitian_eigen_desc(&rho);
                let min_eigenvalue = *evals.last().unwrap();
                if min_eigenvalue < -TOL {
                    return Err(Error::Analysis(format!(
                        "steady state has eigenvalue {min_eigenvalue:.3e} below the positivity floor"
                    )));
                }
                let tail_mass = self.space.tail_mass(&rho);
                let truncation_flag = tail_mass >= hilbert::TAIL_TOLERANCE;
                if truncation_flag {
                    log::warn!("steady state tail population {tail_mass:.3e} at N = {}", self.space.fock_cutoff());
                }
                return Ok(SteadyState {
                    rho,
                    residual,
                    min_eigenvalue,
                    iterations: it,
                    tail_mass,
                    truncation_flag,
                });
            }
            let nv = norm(&v);
            v.iter_mut().for_each(|x| *x /= nv);
        }
        Err(Error::NonConvergence {
            what: "steady state inverse iteration".into(),
            residual,
            iterations: MAX_ITER,
        })
    }

    /// The `k` eigenvalues with largest real part, with biorthonormal left/right eigenvectors.
    /// A conjugate pair split by the cut is kept whole, so `count` may be `k + 1`.
    pub fn spectrum(&self, k: usize, opts: &SpectrumOptions) -> Result<SpectralData> {
        if k < 2 {
            return Err(Error::invalid("k", "at least two eigenvalues are needed"));
        }
        let n = self.order();
        if k > n {
            return Err(Error::invalid("k", format!("k = {k} exceeds superoperator order {n}")));
        }
        let method = match opts.method {
            Method::Auto if n <= DENSE_LIMIT => Method::Dense,
            Method::Auto => Method::ShiftInvert,
            m => m,
        };
        let (values, right, left) = match method {
            Method::Dense => self.dense_candidates(),
            _ => self.shift_invert_candidates(k, opts)?,
        };
        self.assemble(k, method, values, right, left)
    }

    fn dense_candidates(&self) -> (Vec<Complex64>, Vec<Vec<Complex64>>, Vec<Vec<Complex64>>) {
        let g = self.generator.to_dense();
        let (vals, x) = dense::eigen(&g);
        let n = g.nrows();
        let xinv = x.clone().try_inverse().unwrap_or_else(|| {
            log::warn!("eigenvector matrix is singular; using pseudo-inverse");
            x.clone().pseudo_inverse(1e-12).expect("pseudo-inverse")
        });
        let right = (0..n).map(|i| x.column(i).iter().copied().collect()).collect();
        let left = (0..n).map(|i| xinv.row(i).iter().map(|z| z.conj()).collect()).collect();
        (vals, right, left)
    }

    #[allow(clippy::type_complexity)]
    fn shift_invert_candidates(
        &self,
        k: usize,
        opts: &SpectrumOptions,
    ) -> Result<(Vec<Complex64>, Vec<Vec<Complex64>>, Vec<Vec<Complex64>>)> {
        let n = self.order();
        let d = self.space.dim();
        let shifts = opts.shifts.clone().unwrap_or_else(|| default_shifts(&self.params));
        let mut values: Vec<Complex64> = Vec::new();
        let mut right: Vec<Vec<Complex64>> = Vec::new();
        let mut left: Vec<Vec<Complex64>> = Vec::new();
        for (si, &shift) in shifts.iter().enumerate() {
            let factor = self.factor(shift)?;
            let nev = if si == 0 { k + 2 } else { (k / 2).max(2) }.min(n);
            let aopts = ArnoldiOptions {
                nev,
                ..opts.arnoldi.clone()
            };
            let rp = arnoldi::largest_magnitude(n, |x| factor.solve(x), &aopts)?;
            let lp = arnoldi::largest_magnitude(
                n,
                |x| factor.solve_adjoint(x),
                &ArnoldiOptions {
                    nev: (nev + 2).min(n),
                    seed: aopts.seed ^ 0x1ef7,
                    ..aopts.clone()
                },
            )?;
            let left_vals: Vec<Complex64> = lp.values.iter().map(|t| shift + ONE / t.conj()).collect();
            for (theta, x) in rp.values.iter().zip(rp.vectors) {
                let lam = shift + ONE / theta;
                let r = norm(
                    &self
                        .generator
                        .mul_vec(&x)
                        .iter()
                        .zip(&x)
                        .map(|(a, b)| a - lam * b)
                        .collect::<Vec<_>>(),
                );
                if r > opts.residual_tol * (1.0 + lam.norm()) {
                    log::debug!("discarding Ritz value {lam} (residual {r:.2e})");
                    continue;
                }
                let Some((j, _)) = left_vals
                    .iter()
                    .enumerate()
                    .map(|(j, mu)| (j, (mu - lam).norm()))
                    .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                else {
                    continue;
                };
                if (left_vals[j] - lam).norm() > 1e-6 * (1.0 + lam.norm()) {
                    log::debug!("no left partner for {lam}");
                    continue;
                }
                let y = lp.vectors[j].clone();
                let duplicate = values
                    .iter()
                    .any(|v: &Complex64| (v - lam).norm() <= 1e-8 * (1.0 + lam.norm()));
                if duplicate {
                    continue;
                }
                if lam.im.abs() > 1e-9 * (1.0 + lam.norm()) {
                    let conj = lam.conj();
                    if !values.iter().any(|v| (v - conj).norm() <= 1e-8 * (1.0 + lam.norm())) {
                        values.push(conj);
                        right.push(adjoint_vec(&x, d));
                        left.push(adjoint_vec(&y, d));
                    }
                }
                values.push(lam);
                right.push(x);
                left.push(y);
            }
        }
        if values.len() < k {
            return Err(Error::NonConvergence {
                what: format!("shift-invert found {} of {k} eigenvalues", values.len()),
                residual: f64::NAN,
                iterations: shifts.len(),
            });
        }
        Ok((values, right, left))
    }

    fn assemble(
        &self,
        k: usize,
        method: Method,
        values: Vec<Complex64>,
        right: Vec<Vec<Complex64>>,
        left: Vec<Vec<Complex64>>,
    ) -> Result<SpectralData> {
        let d = self.space.dim();
        let groups = conjugate_groups(&values);
        let mut chosen: Vec<usize> = Vec::new();
        for g in groups {
            if chosen.len() >= k {
                break;
            }
            chosen.extend(g);
        }
        let eigenvalues: Vec<Complex64> = chosen.iter().map(|&i| values[i]).collect();
        let mut x: Vec<Vec<Complex64>> = chosen.iter().map(|&i| right[i].clone()).collect();
        let y: Vec<Vec<Complex64>> = chosen.iter().map(|&i| left[i].clone()).collect();
        for (idx, xi) in x.iter_mut().enumerate() {
            let scale = if idx == 0 && eigenvalues[0].norm() < 1e-8 {
                trace_of(xi, d)
            } else {
                let nv = norm(xi);
                // fix the phase by the largest entry so output is reproducible
                let big = xi.iter().copied().max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap()).unwrap_or(ONE);
                Complex64::from_polar(nv, big.arg())
            };
            xi.iter_mut().for_each(|z| *z /= scale);
        }
        let m = chosen.len();
        // S = Yᴴ X, then Y ← Y S^{-H} gives Yᴴ X = 𝟙.
        let s = DMatrix::from_fn(m, m, |i, j| y[i].iter().zip(&x[j]).map(|(a, b)| a.conj() * b).sum::<Complex64>());
        let s_inv_h = s
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Analysis("left/right eigenvector overlap matrix is singular".into()))?
            .adjoint();
        let y_bi: Vec<Vec<Complex64>> = (0..m)
            .map(|j| {
                let mut out = vec![ZERO; x[0].len()];
                for (i, yi) in y.iter().enumerate() {
                    let c = s_inv_h[(i, j)];
                    if c != ZERO {
                        out.iter_mut().zip(yi).for_each(|(o, v)| *o += c * v);
                    }
                }
                out
            })
            .collect();
        let residuals = x
            .iter()
            .zip(&eigenvalues)
            .map(|(xi, lam)| {
                let lx = self.generator.mul_vec(xi);
                norm(&lx.iter().zip(xi).map(|(a, b)| a - lam * b).collect::<Vec<_>>()) / norm(xi)
            })
            .collect();
        Ok(SpectralData {
            count: m,
            eigenvalues,
            right_states: x.iter().map(|v| unvectorize(v, d)).collect(),
            left_states: y_bi.iter().map(|v| unvectorize(v, d)).collect(),
            residuals,
            method,
        })
    }

    /// Integrates `dρ/dt = ℒρ` and returns `ρ` at each time in `t_grid` (sorted, starting at or after 0).
    pub fn propagate(&self, rho0: &DMatrix<Complex64>, t_grid: &[f64], opts: &OdeOptions) -> Result<Vec<DMatrix<Complex64>>> {
        let d = self.space.dim();
        if rho0.nrows() != d || rho0.ncols() != d {
            return Err(Error::invalid("rho0", "shape does not match the Hilbert space"));
        }
        if (rho0.trace() - ONE).norm() > 1e-10 {
            return Err(Error::invalid("rho0", "trace must be 1"));
        }
        let g = &self.generator;
        let (ys, _) = ode::integrate(
            |_, y: &[Complex64], dy: &mut [Complex64]| g.mul_vec_into(y, dy),
            0.0,
            vectorize(rho0),
            t_grid,
            opts,
        )?;
        Ok(ys.iter().map(|v| unvectorize(v, d)).collect())
    }
}

/// Groups indices into real singletons and conjugate pairs, ordered by decreasing real part.
fn conjugate_groups(values: &[Complex64]) -> Vec<Vec<usize>> {
    let tol = |z: Complex64| 1e-9 * (1.0 + z.norm());
    let mut used = vec![false; values.len()];
    let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].im.partial_cmp(&values[a].im).unwrap().then(a.cmp(&b)));
    for &i in &order {
        if used[i] {
            continue;
        }
        used[i] = true;
        let v = values[i];
        if v.im.abs() <= tol(v) {
            groups.push((v.re, vec![i]));
            continue;
        }
        let partner = (0..values.len())
            .filter(|&j| !used[j] && values[j].im * v.im < 0.0)
            .min_by(|&a, &b| {
                (values[a] - v.conj())
                    .norm()
                    .partial_cmp(&(values[b] - v.conj()).norm())
                    .unwrap()
            })
            .filter(|&j| (values[j] - v.conj()).norm() <= 1e-6 * (1.0 + v.norm()));
        match partner {
            Some(j) => {
                used[j] = true;
                let (pos, neg) = if v.im > 0.0 { (i, j) } else { (j, i) };
                groups.push(((v.re + values[j].re) / 2.0, vec![pos, neg]));
            }
            None => groups.push((v.re, vec![i])),
        }
    }
    groups.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1[0].cmp(&b.1[0])));
    groups.into_iter().map(|g| g.1).collect()
}

/// Liouvillian gap from a spectrum, with the ratio test for the metastable manifold.
pub fn gap(spec: &SpectralData, ratio_threshold: f64) -> Result<GapResult> {
    if spec.count < 3 {
        return Err(Error::invalid("spectrum", "the gap needs at least three eigenvalues"));
    }
    let ev = &spec.eigenvalues;
    let lambda1 = ev[1];
    let delta = (-lambda1.re).max(0.0);
    let mut warning = None;
    let scale = 1e-8 * (1.0 + ev[2].re.abs());
    if (ev[1].re - ev[2].re).abs() < scale && (ev[1] - ev[2].conj()).norm() > scale {
        warning = Some(format!("Re λ₁ and Re λ₂ coincide ({} vs {}); ordering is ambiguous", ev[1], ev[2]));
    }
    let metastable_dim = (1..ev.len() - 1)
        .find(|&m| ev[m + 1].re < 0.0 && ev[m].re / ev[m + 1].re < ratio_threshold)
        .unwrap_or(0);
    if metastable_dim == 0 && warning.is_none() {
        warning = Some("no spectral separation found among the computed eigenvalues".into());
    }
    Ok(GapResult {
        delta,
        lambda1,
        metastable_dim,
        warning,
    })
}
