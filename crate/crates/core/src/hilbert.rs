//! Truncated spin ⊗ Fock space of the quantum Rabi model and its operators.
//!
//! Basis ordering is spin ⊗ mode: the state `|s, n⟩` sits at index `s * N + n`,
//! with `s = 0` for spin up (σ_z = +1) and `s = 1` for spin down.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;
use crate::meanfield;

const HERMITIAN_TOL: f64 = 1e-12;

/// Model parameters in units where ħ = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Bosonic mode frequency ω₀.
    pub omega0: f64,
    /// Spin splitting Ω.
    #[serde(rename = "Omega")]
    pub omega: f64,
    /// Spin–mode coupling λ.
    pub lambda: f64,
    /// Mode relaxation rate κ.
    pub kappa: f64,
    /// Spin relaxation rate γ.
    pub gamma: f64,
}

impl SystemParams {
    pub fn new(omega0: f64, omega: f64, lambda: f64, kappa: f64, gamma: f64) -> Result<Self> {
        let p = Self {
            omega0,
            omega,
            lambda,
            kappa,
            gamma,
        };
        p.validate()?;
        Ok(p)
    }

    /// Builds parameters with λ given as a multiple of √(ω₀Ω/2).
    pub fn with_lambda_ratio(omega0: f64, omega: f64, lambda_ratio: f64, kappa: f64, gamma: f64) -> Result<Self> {
        Self::new(omega0, omega, lambda_ratio * (omega0 * omega / 2.0).sqrt(), kappa, gamma)
    }

    /// The closed-system critical coupling √(ω₀Ω/2), the unit for `lambda_ratio`.
    pub fn lambda_unit(&self) -> f64 {
        (self.omega0 * self.omega / 2.0).sqrt()
    }

    pub fn lambda_ratio(&self) -> f64 {
        self.lambda / self.lambda_unit()
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("omega0", self.omega0),
            ("Omega", self.omega),
            ("lambda", self.lambda),
            ("kappa", self.kappa),
            ("gamma", self.gamma),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::invalid(name, format!("must be finite, got {v}")));
            }
        }
        if self.omega0 <= 0.0 {
            return Err(Error::invalid("omega0", "must be > 0"));
        }
        if self.omega <= 0.0 {
            return Err(Error::invalid("Omega", "must be > 0"));
        }
        for (name, v) in [("lambda", self.lambda), ("kappa", self.kappa), ("gamma", self.gamma)] {
            if v < 0.0 {
                return Err(Error::invalid(name, "must be ≥ 0"));
            }
        }
        Ok(())
    }
}

/// Truncated Hilbert space: one spin-1/2 times Fock states `|0⟩ … |N−1⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HilbertSpace {
    fock_cutoff: usize,
}

impl HilbertSpace {
    pub fn new(fock_cutoff: usize) -> Result<Self> {
        if fock_cutoff < 2 {
            return Err(Error::invalid("fock_cutoff", format!("must be ≥ 2, got {fock_cutoff}")));
        }
        Ok(Self { fock_cutoff })
    }

    /// Cutoff `N = ceil(8 + 3 x̄² / 2)` from the mean-field displacement x̄.
    pub fn auto(params: &SystemParams) -> Self {
        let xbar = meanfield::displacement(params);
        let n = (8.0 + 1.5 * xbar * xbar).ceil() as usize;
        Self { fock_cutoff: n.max(2) }
    }

    pub fn fock_cutoff(&self) -> usize {
        self.fock_cutoff
    }

    pub fn dim(&self) -> usize {
        2 * self.fock_cutoff
    }

    /// Index of `|s, n⟩`; `s = 0` is spin up.
    pub fn index(&self, spin: usize, n: usize) -> usize {
        debug_assert!(spin < 2 && n < self.fock_cutoff);
        spin * self.fock_cutoff + n
    }

    /// Inverse of [`index`](Self::index).
    pub fn decompose(&self, index: usize) -> (usize, usize) {
        (index / self.fock_cutoff, index % self.fock_cutoff)
    }

    /// First Fock level of the top 10 % used by the truncation-tail check.
    pub fn tail_start(&self) -> usize {
        let n = self.fock_cutoff;
        n - (n as f64 * 0.1).ceil().max(1.0) as usize
    }

    /// Population in the top 10 % of Fock levels of a density matrix.
    pub fn tail_mass(&self, rho: &DMatrix<Complex64>) -> f64 {
        let start = self.tail_start();
        (0..2)
            .flat_map(|s| (start..self.fock_cutoff).map(move |n| (s, n)))
            .map(|(s, n)| {
                let i = self.index(s, n);
                rho[(i, i)].re
            })
            .sum()
    }

    /// Same as [`tail_mass`](Self::tail_mass) for a pure state.
    pub fn tail_mass_pure(&self, psi: &[Complex64]) -> f64 {
        let start = self.tail_start();
        (0..2)
            .flat_map(|s| (start..self.fock_cutoff).map(move |n| (s, n)))
            .map(|(s, n)| psi[self.index(s, n)].norm_sqr())
            .sum()
    }
}

/// Population threshold for the truncation-tail flag.
pub const TAIL_TOLERANCE: f64 = 1e-6;

/// Sparse operator on a [`HilbertSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    space: HilbertSpace,
    matrix: CsrMatrix,
    hermitian: bool,
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

impl Operator {
    pub fn new(space: HilbertSpace, matrix: CsrMatrix) -> Result<Self> {
        if matrix.nrows() != space.dim() || matrix.ncols() != space.dim() {
            return Err(Error::invalid(
                "matrix",
                format!("shape {}×{} does not match dimension {}", matrix.nrows(), matrix.ncols(), space.dim()),
            ));
        }
        Ok(Self {
            space,
            matrix,
            hermitian: false,
        })
    }

    /// Wraps a matrix and marks it Hermitian after checking ‖A − A†‖_max < 1e-12.
    pub fn hermitian(space: HilbertSpace, matrix: CsrMatrix) -> Result<Self> {
        let mut op = Self::new(space, matrix)?;
        let dev = op.matrix.max_abs_diff(&op.matrix.adjoint());
        if dev >= HERMITIAN_TOL {
            return Err(Error::invalid("matrix", format!("not Hermitian (deviation {dev:.3e})")));
        }
        op.hermitian = true;
        Ok(op)
    }

    pub fn space(&self) -> HilbertSpace {
        self.space
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn is_marked_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        self.matrix.to_dense()
    }

    pub fn adjoint(&self) -> Self {
        Self {
            space: self.space,
            matrix: self.matrix.adjoint(),
            hermitian: self.hermitian,
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self {
            space: self.space,
            matrix: self.matrix.matmul(&other.matrix),
            hermitian: false,
        }
    }

    pub fn commutator(&self, other: &Self) -> Self {
        Self {
            space: self.space,
            matrix: self.matrix.matmul(&other.matrix).sub(&other.matrix.matmul(&self.matrix)),
            hermitian: false,
        }
    }

    pub fn apply(&self, psi: &[Complex64]) -> Vec<Complex64> {
        self.matrix.mul_vec(psi)
    }

    /// ⟨ψ|A|ψ⟩ for a normalized state.
    pub fn expect_pure(&self, psi: &[Complex64]) -> Complex64 {
        let a = self.matrix.mul_vec(psi);
        psi.iter().zip(&a).map(|(p, q)| p.conj() * q).sum()
    }

    /// Tr[A ρ].
    pub fn expect(&self, rho: &DMatrix<Complex64>) -> Complex64 {
        self.matrix
            .triplets()
            .map(|(i, j, v)| v * rho[(j, i)])
            .sum()
    }

    /// Lifts a Fock-space operator to `𝟙_spin ⊗ m`.
    pub fn from_mode(space: HilbertSpace, mode: &CsrMatrix) -> Self {
        Self {
            space,
            matrix: CsrMatrix::identity(2).kron(mode),
            hermitian: false,
        }
    }

    /// Lifts a 2×2 spin operator to `s ⊗ 𝟙_mode`.
    pub fn from_spin(space: HilbertSpace, spin: &CsrMatrix) -> Self {
        Self {
            space,
            matrix: spin.kron(&CsrMatrix::identity(space.fock_cutoff())),
            hermitian: false,
        }
    }

    fn marked(mut self, hermitian: bool) -> Self {
        self.hermitian = hermitian;
        self
    }
}

/// Mode annihilation operator on the bare Fock space (N × N).
pub fn mode_annihilation(n: usize) -> CsrMatrix {
    CsrMatrix::from_triplets(n, n, (1..n).map(|k| (k - 1, k, c((k as f64).sqrt()))))
}

/// Quadratures `x = (a† + a)/√2` and `p = i(a† − a)/√2` on the bare Fock space.
pub fn mode_quadratures(n: usize) -> (CsrMatrix, CsrMatrix) {
    let a = mode_annihilation(n);
    let ad = a.adjoint();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let x = ad.lin_comb(c(s), &a, c(s));
    let p = ad.lin_comb(Complex64::new(0.0, s), &a, Complex64::new(0.0, -s));
    (x, p)
}

pub mod pauli {
    use super::*;

    pub fn x() -> CsrMatrix {
        CsrMatrix::from_triplets(2, 2, [(0, 1, c(1.0)), (1, 0, c(1.0))])
    }
    pub fn y() -> CsrMatrix {
        CsrMatrix::from_triplets(2, 2, [(0, 1, Complex64::new(0.0, -1.0)), (1, 0, Complex64::new(0.0, 1.0))])
    }
    pub fn z() -> CsrMatrix {
        CsrMatrix::from_triplets(2, 2, [(0, 0, c(1.0)), (1, 1, c(-1.0))])
    }
    /// σ₊ = |↑⟩⟨↓|
    pub fn plus() -> CsrMatrix {
        CsrMatrix::from_triplets(2, 2, [(0, 1, c(1.0))])
    }
    /// σ₋ = |↓⟩⟨↑|
    pub fn minus() -> CsrMatrix {
        CsrMatrix::from_triplets(2, 2, [(1, 0, c(1.0))])
    }
}

pub fn annihilation(space: HilbertSpace) -> Operator {
    Operator::from_mode(space, &mode_annihilation(space.fock_cutoff()))
}

pub fn creation(space: HilbertSpace) -> Operator {
    annihilation(space).adjoint()
}

pub fn number(space: HilbertSpace) -> Operator {
    let n = space.fock_cutoff();
    let diag: Vec<Complex64> = (0..n).map(|k| c(k as f64)).collect();
    Operator::from_mode(space, &CsrMatrix::from_diagonal(&diag)).marked(true)
}

/// `(x̂, p̂)` lifted to the full space.
pub fn quadratures(space: HilbertSpace) -> (Operator, Operator) {
    let (x, p) = mode_quadratures(space.fock_cutoff());
    (
        Operator::from_mode(space, &x).marked(true),
        Operator::from_mode(space, &p).marked(true),
    )
}

pub fn sigma_x(space: HilbertSpace) -> Operator {
    Operator::from_spin(space, &pauli::x()).marked(true)
}

pub fn sigma_y(space: HilbertSpace) -> Operator {
    Operator::from_spin(space, &pauli::y()).marked(true)
}

pub fn sigma_z(space: HilbertSpace) -> Operator {
    Operator::from_spin(space, &pauli::z()).marked(true)
}

pub fn sigma_plus(space: HilbertSpace) -> Operator {
    Operator::from_spin(space, &pauli::plus())
}

pub fn sigma_minus(space: HilbertSpace) -> Operator {
    Operator::from_spin(space, &pauli::minus())
}

/// `H = ω₀ a†a + (Ω/2) σ_z + (λ/√2)(a† + a) σ_x`.
pub fn hamiltonian(params: &SystemParams, space: HilbertSpace) -> Operator {
    let n = space.fock_cutoff();
    let num: Vec<Complex64> = (0..n).map(|k| c(k as f64)).collect();
    let (x, _) = mode_quadratures(n);
    let free_mode = CsrMatrix::identity(2).kron(&CsrMatrix::from_diagonal(&num)).scale(c(params.omega0));
    let free_spin = pauli::z().kron(&CsrMatrix::identity(n)).scale(c(params.omega / 2.0));
    // (λ/√2)(a† + a) = λ x
    let coupling = pauli::x().kron(&x).scale(c(params.lambda));
    let h = free_mode.add(&free_spin).add(&coupling);
    Operator { space, matrix: h, hermitian: true }
}

/// Parity `exp(iπ(a†a + σ_z/2))`, diagonal in the Fock ⊗ σ_z basis.
pub fn parity(space: HilbertSpace) -> Operator {
    let n = space.fock_cutoff();
    let diag: Vec<Complex64> = (0..space.dim())
        .map(|i| {
            // e^{iπ(n ± 1/2)} = ±i (−1)^n, written out to keep the entries exact
            let (s, k) = space.decompose(i);
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let spin = if s == 0 { 1.0 } else { -1.0 };
            Complex64::new(0.0, sign * spin)
        })
        .collect();
    debug_assert_eq!(diag.len(), 2 * n);
    Operator {
        space,
        matrix: CsrMatrix::from_diagonal(&diag),
        hermitian: false,
    }
}

/// Product state `|s⟩ ⊗ |n⟩` as a dense vector.
pub fn basis_state(space: HilbertSpace, spin: usize, n: usize) -> Vec<Complex64> {
    let mut v = vec![c(0.0); space.dim()];
    v[space.index(spin, n)] = c(1.0);
    v
}

/// Truncated coherent state amplitudes `⟨n|α⟩` for `n < N`, not renormalized.
pub fn coherent_amplitudes(n: usize, alpha: Complex64) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(n);
    let mut term = Complex64::from_polar((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    for k in 0..n {
        if k > 0 {
            term = term * alpha / (k as f64).sqrt();
        }
        out.push(term);
    }
    out
}

/// `(spin_up|↑⟩ + spin_down|↓⟩) ⊗ |α⟩`, normalized on the truncated space.
pub fn product_coherent_state(space: HilbertSpace, alpha: Complex64, spin_up: Complex64, spin_down: Complex64) -> Vec<Complex64> {
    let amps = coherent_amplitudes(space.fock_cutoff(), alpha);
    let mut v = vec![c(0.0); space.dim()];
    for (k, a) in amps.iter().enumerate() {
        v[space.index(0, k)] = spin_up * a;
        v[space.index(1, k)] = spin_down * a;
    }
    let nrm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|z| *z /= nrm);
    v
}

pub fn pure_density(psi: &[Complex64]) -> DMatrix<Complex64> {
    let v = DVector::from_column_slice(psi);
    &v * v.adjoint()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig2(lambda_ratio: f64) -> SystemParams {
        SystemParams::with_lambda_ratio(1.0, 1200.0, lambda_ratio, 0.5, 0.05).unwrap()
    }

    #[test]
    fn annihilation_entries() {
        let space = HilbertSpace::new(3).unwrap();
        let a = mode_annihilation(3);
        assert!((a.get(1, 2).re - 2f64.sqrt()).abs() < 1e-15);
        assert!((0..3).all(|i| a.get(i, 0) == c(0.0)));
        let a_full = annihilation(space);
        let comm = a_full.commutator(&creation(space)).to_dense();
        for s in 0..2 {
            for k in 0..2 {
                let i = space.index(s, k);
                assert!((comm[(i, i)] - c(1.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn quadrature_properties() {
        let space = HilbertSpace::new(8).unwrap();
        let (x, p) = quadratures(space);
        let vac = basis_state(space, 1, 0);
        let x2 = x.mul(&x);
        assert!((x2.expect_pure(&vac).re - 0.5).abs() < 1e-14);
        let xm = mode_quadratures(8).0;
        assert!(xm.triplets().all(|(i, j, v)| v.im == 0.0 && i.abs_diff(j) == 1));
        let comm = x.commutator(&p).to_dense();
        for s in 0..2 {
            for k in 0..7 {
                let i = space.index(s, k);
                assert!((comm[(i, i)] - Complex64::new(0.0, 1.0)).norm() < 1e-13);
            }
        }
        assert!(x.is_marked_hermitian() && p.is_marked_hermitian());
    }

    #[test]
    fn hamiltonian_elements() {
        let space = HilbertSpace::new(5).unwrap();
        let decoupled = SystemParams::new(1.0, 3.0, 0.0, 0.5, 0.05).unwrap();
        let h = hamiltonian(&decoupled, space);
        let d = h.to_dense();
        let g = space.index(1, 0);
        assert!((d[(g, g)].re + 1.5).abs() < 1e-15);
        assert!(d.iter().enumerate().all(|(k, v)| k % (space.dim() + 1) == 0 || *v == c(0.0)));

        let p = SystemParams::new(1.0, 3.0, 0.7, 0.5, 0.05).unwrap();
        let h = hamiltonian(&p, space).to_dense();
        let v = h[(space.index(1, 1), space.index(0, 0))];
        assert!((v.re - 0.7 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn hamiltonian_is_hermitian_and_parity_symmetric() {
        let params = fig2(1.4);
        let space = HilbertSpace::new(40).unwrap();
        let h = hamiltonian(&params, space);
        assert!(h.matrix().max_abs_diff(&h.matrix().adjoint()) < 1e-14);
        let par = parity(space);
        assert!(h.commutator(&par).matrix().max_abs() < 1e-12);
        assert!(Operator::hermitian(space, h.matrix().clone()).is_ok());
    }

    #[test]
    fn parity_definition() {
        let space = HilbertSpace::new(6).unwrap();
        let par = parity(space);
        let e = par.matrix().get(space.index(0, 1), space.index(0, 1));
        let expected = Complex64::from_polar(1.0, std::f64::consts::PI * 1.5);
        assert!((e - expected).norm() < 1e-15);
        // P² = −𝟙
        let p2 = par.mul(&par).to_dense();
        assert!((p2 + DMatrix::<Complex64>::identity(12, 12)).norm() < 1e-13);
        let (x, _) = quadratures(space);
        let flipped = par.mul(&x).mul(&par.adjoint());
        assert!(flipped.matrix().add(x.matrix()).max_abs() < 1e-14);
    }

    #[test]
    fn validation_rejects_bad_params() {
        assert!(SystemParams::new(0.0, 1.0, 0.0, 0.0, 0.0).is_err());
        assert!(SystemParams::new(1.0, 1.0, -0.1, 0.0, 0.0).is_err());
        assert!(SystemParams::new(1.0, 1.0, 0.1, f64::NAN, 0.0).is_err());
        assert!(HilbertSpace::new(1).is_err());
    }

    #[test]
    fn auto_cutoff_follows_displacement() {
        assert_eq!(HilbertSpace::auto(&fig2(0.6)).fock_cutoff(), 8);
        let smp = HilbertSpace::auto(&fig2(1.4));
        let xbar = meanfield::displacement(&fig2(1.4));
        assert_eq!(smp.fock_cutoff(), (8.0 + 1.5 * xbar * xbar).ceil() as usize);
    }
}
