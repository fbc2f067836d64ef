//! Operator algebra for one bosonic mode and one spin-1/2.
//!
//! Operators are stored as linear combinations of normal-ordered words
//! `a†^m a^k ⊗ s` with a Pauli letter `s ∈ {𝟙, σₓ, σ_y, σ_z}`. The raising and
//! lowering spin operators are kept as combinations, σ± = (σₓ ± iσ_y)/2, so that
//! products always reduce to a single letter.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::hilbert::SystemParams;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Coefficients smaller than this are dropped after arithmetic.
pub const PRUNE: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn is_identity(self) -> bool {
        self == Pauli::I
    }

    /// `σ_a σ_b = δ_ab 𝟙 + i ε_abc σ_c` as `(phase, letter)`.
    pub fn mul(self, other: Pauli) -> (Complex64, Pauli) {
        use Pauli::*;
        match (self, other) {
            (I, b) => (ONE, b),
            (a, I) => (ONE, a),
            (a, b) if a == b => (ONE, I),
            (X, Y) => (I_UNIT, Z),
            (Y, X) => (-I_UNIT, Z),
            (Y, Z) => (I_UNIT, X),
            (Z, Y) => (-I_UNIT, X),
            (Z, X) => (I_UNIT, Y),
            (X, Z) => (-I_UNIT, Y),
            _ => unreachable!(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pauli::I => "",
            Pauli::X => "sx",
            Pauli::Y => "sy",
            Pauli::Z => "sz",
        }
    }
}

const I_UNIT: Complex64 = I;

/// Normal-ordered word `a†^m a^k ⊗ spin`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OperatorWord {
    pub creation: u32,
    pub annihilation: u32,
    pub spin: Pauli,
}

impl OperatorWord {
    pub const IDENTITY: OperatorWord = OperatorWord {
        creation: 0,
        annihilation: 0,
        spin: Pauli::I,
    };

    pub fn new(creation: u32, annihilation: u32, spin: Pauli) -> Self {
        Self {
            creation,
            annihilation,
            spin,
        }
    }

    pub fn mode_degree(&self) -> u32 {
        self.creation + self.annihilation
    }

    /// `m + k`, plus one for a non-trivial spin letter.
    pub fn order(&self) -> u32 {
        self.mode_degree() + u32::from(!self.spin.is_identity())
    }
}

/// Linear combination of [`OperatorWord`]s.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LadderPoly {
    terms: BTreeMap<OperatorWord, Complex64>,
}

fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

impl LadderPoly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn word(w: OperatorWord, coef: Complex64) -> Self {
        let mut p = Self::zero();
        p.add_term(w, coef);
        p
    }

    pub fn identity() -> Self {
        Self::word(OperatorWord::IDENTITY, ONE)
    }

    pub fn spin(s: Pauli) -> Self {
        Self::word(OperatorWord::new(0, 0, s), ONE)
    }

    pub fn a() -> Self {
        Self::word(OperatorWord::new(0, 1, Pauli::I), ONE)
    }

    pub fn a_dag() -> Self {
        Self::word(OperatorWord::new(1, 0, Pauli::I), ONE)
    }

    /// σ₊ = (σₓ + iσ_y)/2.
    pub fn sigma_plus() -> Self {
        Self::spin(Pauli::X).scale(Complex64::new(0.5, 0.0)) + Self::spin(Pauli::Y).scale(Complex64::new(0.0, 0.5))
    }

    /// σ₋ = (σₓ − iσ_y)/2.
    pub fn sigma_minus() -> Self {
        Self::spin(Pauli::X).scale(Complex64::new(0.5, 0.0)) + Self::spin(Pauli::Y).scale(Complex64::new(0.0, -0.5))
    }

    pub fn add_term(&mut self, w: OperatorWord, coef: Complex64) {
        let e = self.terms.entry(w).or_insert(ZERO);
        *e += coef;
        if e.norm() < PRUNE {
            self.terms.remove(&w);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&OperatorWord, &Complex64)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, w: &OperatorWord) -> Complex64 {
        self.terms.get(w).copied().unwrap_or(ZERO)
    }

    pub fn max_mode_degree(&self) -> Option<u32> {
        self.terms.keys().map(|w| w.mode_degree()).max()
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let mut out = Self::zero();
        for (w, c) in &self.terms {
            out.add_term(*w, c * s);
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zero();
        for (w, c) in &self.terms {
            out.add_term(OperatorWord::new(w.annihilation, w.creation, w.spin), c.conj());
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        for (w1, c1) in &self.terms {
            for (w2, c2) in &other.terms {
                let (phase, spin) = w1.spin.mul(w2.spin);
                let base = c1 * c2 * phase;
                // a^k a†^p = Σ_j C(k,j) C(p,j) j! a†^(p−j) a^(k−j)
                let (k, p) = (w1.annihilation, w2.creation);
                for j in 0..=k.min(p) {
                    let c = binomial(k, j) * binomial(p, j) * factorial(j);
                    out.add_term(
                        OperatorWord::new(w1.creation + p - j, k - j + w2.annihilation, spin),
                        base * c,
                    );
                }
            }
        }
        out
    }

    pub fn commutator(&self, other: &Self) -> Self {
        self.mul(other) - other.mul(self)
    }
}

impl std::ops::Add for LadderPoly {
    type Output = LadderPoly;
    fn add(mut self, rhs: Self) -> Self {
        for (w, c) in rhs.terms {
            self.add_term(w, c);
        }
        self
    }
}

impl std::ops::Sub for LadderPoly {
    type Output = LadderPoly;
    fn sub(mut self, rhs: Self) -> Self {
        for (w, c) in rhs.terms {
            self.add_term(w, -c);
        }
        self
    }
}

impl fmt::Display for LadderPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(w, c)| format!("({c})·a†^{}a^{}{}", w.creation, w.annihilation, w.spin.name()))
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

/// Hamiltonian `ω₀ a†a + (Ω/2) σ_z + (λ/√2)(a† + a) σₓ` in ladder form.
pub fn hamiltonian(params: &SystemParams) -> LadderPoly {
    let c = |v: f64| Complex64::new(v, 0.0);
    let g = params.lambda * std::f64::consts::FRAC_1_SQRT_2;
    LadderPoly::word(OperatorWord::new(1, 1, Pauli::I), c(params.omega0))
        + LadderPoly::word(OperatorWord::new(0, 0, Pauli::Z), c(params.omega / 2.0))
        + LadderPoly::word(OperatorWord::new(1, 0, Pauli::X), c(g))
        + LadderPoly::word(OperatorWord::new(0, 1, Pauli::X), c(g))
}

/// Adjoint dissipator `2 L† O L − L†L O − O L†L`, without the rate.
fn adjoint_dissipator(l: &LadderPoly, o: &LadderPoly) -> LadderPoly {
    let ld = l.adjoint();
    let ldl = ld.mul(l);
    ld.mul(o).mul(l).scale(Complex64::new(2.0, 0.0)) - ldl.mul(o) - o.mul(&ldl)
}

/// Heisenberg-picture generator `i[H, O] + κ D'_a[O] + γ D'_σ₋[O]`.
pub fn heisenberg_rhs(params: &SystemParams, o: &LadderPoly) -> LadderPoly {
    let h = hamiltonian(params);
    let mut out = h.commutator(o).scale(I);
    if params.kappa != 0.0 {
        out = out + adjoint_dissipator(&LadderPoly::a(), o).scale(Complex64::new(params.kappa, 0.0));
    }
    if params.gamma != 0.0 {
        out = out + adjoint_dissipator(&LadderPoly::sigma_minus(), o).scale(Complex64::new(params.gamma, 0.0));
    }
    out
}

/// Coefficients of `(α s + β t)^A (α' s + β' t)^B` as a dense table over powers of `s`.
fn expand_binomial_pair(a: u32, alpha: Complex64, beta: Complex64, b: u32, alpha2: Complex64, beta2: Complex64) -> Vec<Complex64> {
    // index = power of s; power of t is A + B − index
    let mut out = vec![ZERO; (a + b + 1) as usize];
    for i in 0..=a {
        let c1 = alpha.powu(i) * beta.powu(a - i) * binomial(a, i);
        for j in 0..=b {
            let c2 = alpha2.powu(j) * beta2.powu(b - j) * binomial(b, j);
            out[(i + j) as usize] += c1 * c2;
        }
    }
    out
}

/// Weyl-symmetrized `W(x^i p^j)`, the average over all orderings, in normal-ordered ladder form.
pub fn weyl_to_ladder(i: u32, j: u32) -> LadderPoly {
    let n = i + j;
    // W = [s^i t^j] (s x + t p)^n / C(n, i) with s x + t p = u a† + v a,
    // u = (s + i t)/√2, v = (s − i t)/√2, and
    // (u a† + v a)^n = Σ_{m+k+2l=n} n!/(m! k! l!) (uv/2)^l u^m v^k a†^m a^k.
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = LadderPoly::zero();
    for l in 0..=n / 2 {
        for m in 0..=n - 2 * l {
            let k = n - 2 * l - m;
            let pre = factorial(n) / (factorial(m) * factorial(k) * factorial(l)) / 2f64.powi(l as i32);
            let (pu, pv) = (m + l, k + l);
            let poly = expand_binomial_pair(pu, Complex64::new(r, 0.0), Complex64::new(0.0, r), pv, Complex64::new(r, 0.0), Complex64::new(0.0, -r));
            let coef = poly[i as usize] * pre / binomial(n, i);
            out.add_term(OperatorWord::new(m, k, Pauli::I), coef);
        }
    }
    out
}

/// Rewrites a ladder polynomial as `Σ c · W(x^i p^j) σ_a`, keyed by `(i, j, a)`.
pub fn ladder_to_weyl(poly: &LadderPoly) -> BTreeMap<(u32, u32, Pauli), Complex64> {
    let mut work = poly.clone();
    let mut out: BTreeMap<(u32, u32, Pauli), Complex64> = BTreeMap::new();
    let r = std::f64::consts::FRAC_1_SQRT_2;
    while let Some(deg) = work.max_mode_degree() {
        // Leading part: commutative substitution a† = (x − ip)/√2, a = (x + ip)/√2.
        let mut lead: BTreeMap<(u32, u32, Pauli), Complex64> = BTreeMap::new();
        for (w, c) in work.terms().filter(|(w, _)| w.mode_degree() == deg) {
            let poly = expand_binomial_pair(
                w.creation,
                Complex64::new(r, 0.0),
                Complex64::new(0.0, -r),
                w.annihilation,
                Complex64::new(r, 0.0),
                Complex64::new(0.0, r),
            );
            for (xi, v) in poly.iter().enumerate() {
                if v.norm() > 0.0 {
                    *lead.entry((xi as u32, deg - xi as u32, w.spin)).or_insert(ZERO) += c * v;
                }
            }
        }
        for (&(i, j, s), &c) in &lead {
            if c.norm() < PRUNE {
                continue;
            }
            *out.entry((i, j, s)).or_insert(ZERO) += c;
            let term = weyl_to_ladder(i, j).mul(&LadderPoly::spin(s)).scale(c);
            work = work - term;
        }
        // anything left at this degree is rounding noise
        let stale: Vec<OperatorWord> = work.terms().filter(|(w, _)| w.mode_degree() == deg).map(|(w, _)| *w).collect();
        for w in stale {
            debug_assert!(work.coefficient(&w).norm() < 1e-9);
            work.terms.remove(&w);
        }
    }
    out.retain(|_, c| c.norm() >= PRUNE);
    out
}
