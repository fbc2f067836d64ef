//! Cumulant-expansion hierarchy for the dissipative Rabi model.
//!
//! Moment equations of motion are derived mechanically from the adjoint master
//! equation, rewritten in cumulants, truncated by dropping every cumulant above
//! the chosen order and solved for their steady state by Newton iteration.

pub mod algebra;
pub mod moments;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::SystemParams;
use crate::meanfield::MfState;
pub use algebra::{LadderPoly, OperatorWord, Pauli};
pub use moments::{cumulant_to_moment, moment_to_cumulant, Letter, Symbol, SymbolPoly};

pub const MAX_ORDER: u32 = 6;

/// Ladder form of the moment operator `W(x^i p^j) σ_a`.
pub fn symbol_operator(sym: &Symbol) -> LadderPoly {
    algebra::weyl_to_ladder(sym.x, sym.p).mul(&LadderPoly::spin(sym.spin))
}

/// `d⟨S⟩/dt` as a real linear combination of moments; the constant term is keyed by [`Symbol::ONE`].
pub fn moment_eom(params: &SystemParams, sym: &Symbol) -> BTreeMap<Symbol, f64> {
    let rhs = algebra::heisenberg_rhs(params, &symbol_operator(sym));
    let weyl = algebra::ladder_to_weyl(&rhs);
    let scale = weyl.values().fold(1.0f64, |m, c| m.max(c.norm()));
    weyl.into_iter()
        .map(|((i, j, s), c)| {
            debug_assert!(c.im.abs() <= 1e-9 * scale, "non-real coefficient {c} for {sym}");
            (Symbol::new(i, j, s), c.re)
        })
        .filter(|(_, c)| c.abs() > 1e-13 * scale)
        .collect()
}

/// Equation of motion for a general ladder-form operator.
pub fn operator_eom(params: &SystemParams, op: &LadderPoly) -> LadderPoly {
    algebra::heisenberg_rhs(params, op)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Term {
    pub coef: f64,
    /// Indices into `unknowns`; empty for the constant term.
    pub factors: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Equation {
    /// The moment whose time derivative this equation gives.
    pub moment: Symbol,
    pub terms: Vec<Term>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CumulantSystem {
    pub order: u32,
    pub unknowns: Vec<Symbol>,
    pub equations: Vec<Equation>,
    pub params: SystemParams,
}

/// Closed steady-state system: the equations of all moments of order `1..=n` with cumulants above `n` set to zero.
pub fn build_system(params: &SystemParams, n: u32) -> Result<CumulantSystem> {
    if !(1..=MAX_ORDER).contains(&n) {
        return Err(Error::invalid("order", format!("supported orders are 1..={MAX_ORDER}, got {n}")));
    }
    let unknowns = Symbol::enumerate(n);
    let index: HashMap<Symbol, usize> = unknowns.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let mut expansions: HashMap<Symbol, moments::SymbolPoly> = HashMap::new();
    let mut equations = Vec::with_capacity(unknowns.len());
    for sym in &unknowns {
        let eom = moment_eom(params, sym);
        let mut acc: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for (m, c) in eom {
            let exp = expansions
                .entry(m)
                .or_insert_with(|| moments::moment_to_cumulant_truncated(&m, n));
            for (factors, k) in &exp.terms {
                let mut idx: Vec<usize> = factors.iter().map(|f| index[f]).collect();
                idx.sort_unstable();
                *acc.entry(idx).or_insert(0.0) += c * k;
            }
        }
        let terms = acc
            .into_iter()
            .filter(|(_, c)| c.abs() > 1e-13)
            .map(|(factors, coef)| Term { coef, factors })
            .collect();
        equations.push(Equation { moment: *sym, terms });
    }
    Ok(CumulantSystem {
        order: n,
        unknowns,
        equations,
        params: *params,
    })
}

impl CumulantSystem {
    pub fn index_of(&self, sym: &Symbol) -> Option<usize> {
        self.unknowns.iter().position(|s| s == sym)
    }

    pub fn residual(&self, c: &[f64]) -> Vec<f64> {
        self.equations
            .iter()
            .map(|eq| {
                eq.terms
                    .iter()
                    .map(|t| t.coef * t.factors.iter().map(|&i| c[i]).product::<f64>())
                    .sum()
            })
            .collect()
    }

    /// Residual of each equation divided by `max(1, Σ|term|)`, the scale at which rounding
    /// limits the attainable absolute residual.
    pub fn scaled_residual(&self, c: &[f64]) -> Vec<f64> {
        self.equations
            .iter()
            .map(|eq| {
                let mut sum = 0.0;
                let mut mag = 0.0;
                for t in &eq.terms {
                    let v = t.coef * t.factors.iter().map(|&i| c[i]).product::<f64>();
                    sum += v;
                    mag += v.abs();
                }
                sum / mag.max(1.0)
            })
            .collect()
    }

    pub fn jacobian(&self, c: &[f64]) -> DMatrix<f64> {
        let n = self.unknowns.len();
        let mut j = DMatrix::zeros(n, n);
        for (row, eq) in self.equations.iter().enumerate() {
            for t in &eq.terms {
                for (pos, &k) in t.factors.iter().enumerate() {
                    // avoid double counting repeated factors: differentiate the first occurrence
                    // of each distinct index and multiply by its multiplicity
                    if pos > 0 && t.factors[pos - 1] == k {
                        continue;
                    }
                    let mult = t.factors.iter().filter(|&&f| f == k).count() as f64;
                    let mut prod = t.coef * mult;
                    let mut skipped = false;
                    for &f in &t.factors {
                        if f == k && !skipped {
                            skipped = true;
                            continue;
                        }
                        prod *= c[f];
                    }
                    j[(row, k)] += prod;
                }
            }
        }
        j
    }

    /// Initial guess from a mean-field state with all fluctuation cumulants zero.
    pub fn seed(&self, s: &MfState) -> Vec<f64> {
        self.unknowns
            .iter()
            .map(|sym| match (sym.x, sym.p, sym.spin) {
                (1, 0, Pauli::I) => s.x,
                (0, 1, Pauli::I) => s.p,
                (0, 0, Pauli::X) => s.sx,
                (0, 0, Pauli::Y) => s.sy,
                (0, 0, Pauli::Z) => s.sz,
                _ => 0.0,
            })
            .collect()
    }
}

impl fmt::Display for CumulantSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for eq in &self.equations {
            let rhs: Vec<String> = eq
                .terms
                .iter()
                .map(|t| {
                    let mut s = format!("{:+.12e}", t.coef);
                    for &i in &t.factors {
                        s.push('*');
                        s.push_str(&self.unknowns[i].cumulant_name());
                    }
                    s
                })
                .collect();
            let rhs = if rhs.is_empty() { "0".to_string() } else { rhs.join(" ") };
            writeln!(f, "d/dt {} = {}", eq.moment.moment_name(), rhs)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CumulantSolution {
    pub order: u32,
    pub values: Vec<(Symbol, f64)>,
    /// Largest equation residual relative to `max(1, Σ|term|)`.
    pub residual: f64,
    pub iterations: usize,
    pub residual_trace: Vec<f64>,
}

impl CumulantSolution {
    pub fn get(&self, sym: &Symbol) -> Option<f64> {
        self.values.iter().find(|(s, _)| s == sym).map(|(_, v)| *v)
    }

    /// `⟨x^n⟩_c`, zero above the truncation order.
    pub fn x_cumulant(&self, n: u32) -> f64 {
        self.get(&Symbol::new(n, 0, Pauli::I)).unwrap_or(0.0)
    }

    /// A moment reconstructed from the cumulants (cumulants above the order are zero).
    pub fn moment(&self, sym: &Symbol) -> f64 {
        moments::moment_to_cumulant_truncated(sym, self.order).eval(|s| self.get(s).unwrap_or(0.0))
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Newton iteration with backtracking line search on ‖F‖₂.
pub fn steady_solve(system: &CumulantSystem, seed: &MfState, opts: &NewtonOptions) -> Result<CumulantSolution> {
    let mut c = system.seed(seed);
    let mut f = system.residual(&c);
    let mut trace = vec![max_abs(&system.scaled_residual(&c))];
    let norm2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    for it in 1..=opts.max_iter {
        if max_abs(&system.scaled_residual(&c)) < opts.tol {
            return Ok(solution(system, c, trace, it - 1));
        }
        let j = system.jacobian(&c);
        let rhs = -DVector::from_column_slice(&f);
        let step = j.clone().lu().solve(&rhs).or_else(|| {
            // singular Jacobian: fall back to a least-squares step
            j.clone().svd(true, true).solve(&rhs, 1e-14).ok()
        });
        let Some(step) = step else {
            return Err(nonconvergence("singular Jacobian", &trace, it));
        };
        let f0 = norm2(&f);
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = c.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            let ft = system.residual(&trial);
            let ok = ft.iter().all(|v| v.is_finite()) && norm2(&ft) <= (1.0 - 1e-4 * t) * f0;
            if ok || t < 1e-10 {
                if !ok {
                    return Err(nonconvergence("line search failed", &trace, it));
                }
                c = trial;
                f = ft;
                break;
            }
            t *= 0.5;
        }
        trace.push(max_abs(&system.scaled_residual(&c)));
    }
    if max_abs(&system.scaled_residual(&c)) < opts.tol {
        return Ok(solution(system, c, trace, opts.max_iter));
    }
    Err(nonconvergence("iteration limit", &trace, opts.max_iter))
}

fn solution(system: &CumulantSystem, c: Vec<f64>, trace: Vec<f64>, iterations: usize) -> CumulantSolution {
    let residual = max_abs(&system.scaled_residual(&c));
    CumulantSolution {
        order: system.order,
        values: system.unknowns.iter().copied().zip(c).collect(),
        residual,
        iterations,
        residual_trace: trace,
    }
}

fn nonconvergence(what: &str, trace: &[f64], iterations: usize) -> Error {
    let shown: Vec<String> = trace.iter().rev().take(6).rev().map(|r| format!("{r:.2e}")).collect();
    Error::NonConvergence {
        what: format!("cumulant Newton ({what}); last residuals [{}]", shown.join(", ")),
        residual: *trace.last().unwrap_or(&f64::NAN),
        iterations,
    }
}

/// Ladder-form expectation helper used in tests: value of a moment from a density matrix.
pub fn moment_from_state(sym: &Symbol, rho: &nalgebra::DMatrix<Complex64>, space: crate::hilbert::HilbertSpace) -> f64 {
    use crate::hilbert;
    let (x, p) = hilbert::quadratures(space);
    let spin = match sym.spin {
        Pauli::I => None,
        Pauli::X => Some(hilbert::sigma_x(space)),
        Pauli::Y => Some(hilbert::sigma_y(space)),
        Pauli::Z => Some(hilbert::sigma_z(space)),
    };
    // symmetrize over distinct orderings of i x's and j p's
    let n = (sym.x + sym.p) as usize;
    let d = space.dim();
    let mut acc = nalgebra::DMatrix::<Complex64>::zeros(d, d);
    let mut count = 0usize;
    let xd = x.to_dense();
    let pd = p.to_dense();
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() != sym.p {
            continue;
        }
        let mut m = nalgebra::DMatrix::<Complex64>::identity(d, d);
        for k in 0..n {
            m = if mask & (1 << k) != 0 { &m * &pd } else { &m * &xd };
        }
        acc += m;
        count += 1;
    }
    acc /= Complex64::new(count as f64, 0.0);
    if let Some(s) = spin {
        acc = &acc * s.to_dense();
    }
    (&acc * rho).trace().re
}
