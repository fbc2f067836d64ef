//! Moment and cumulant symbols and the set-partition relations between them.
//!
//! A symbol is a multiset of letters drawn from `{x, p, σₓ, σ_y, σ_z}` with at
//! most one spin letter. As a moment it stands for `⟨W(x^i p^j) σ_a⟩`, the
//! expectation of the fully symmetrized product, which is what the generating
//! function `⟨exp(Σ η_l o_l)⟩` produces. As a cumulant it stands for the
//! corresponding derivative of `ln⟨exp(Σ η_l o_l)⟩`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::algebra::Pauli;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Letter {
    X,
    P,
    Spin(Pauli),
}

impl Letter {
    pub fn name(self) -> &'static str {
        match self {
            Letter::X => "x",
            Letter::P => "p",
            Letter::Spin(s) => s.name(),
        }
    }

    /// Whether the letter changes sign under parity.
    pub fn is_parity_odd(self) -> bool {
        !matches!(self, Letter::Spin(Pauli::Z) | Letter::Spin(Pauli::I))
    }
}

/// Canonical multiset `x^x p^p spin` used for both moments and cumulants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Symbol {
    pub x: u32,
    pub p: u32,
    pub spin: Pauli,
}

impl Symbol {
    /// The empty multiset; as a moment it equals 1.
    pub const ONE: Symbol = Symbol {
        x: 0,
        p: 0,
        spin: Pauli::I,
    };

    pub fn new(x: u32, p: u32, spin: Pauli) -> Self {
        Self { x, p, spin }
    }

    pub fn order(&self) -> u32 {
        self.x + self.p + u32::from(!self.spin.is_identity())
    }

    pub fn letters(&self) -> Vec<Letter> {
        let mut v = vec![Letter::X; self.x as usize];
        v.extend(std::iter::repeat_n(Letter::P, self.p as usize));
        if !self.spin.is_identity() {
            v.push(Letter::Spin(self.spin));
        }
        v
    }

    /// Builds the canonical symbol; `None` if more than one spin letter is present.
    pub fn from_letters(letters: &[Letter]) -> Option<Self> {
        let mut s = Symbol::ONE;
        for l in letters {
            match l {
                Letter::X => s.x += 1,
                Letter::P => s.p += 1,
                Letter::Spin(Pauli::I) => {}
                Letter::Spin(a) => {
                    if !s.spin.is_identity() {
                        return None;
                    }
                    s.spin = *a;
                }
            }
        }
        Some(s)
    }

    /// `+1` or `−1` under `(x, p, σₓ, σ_y) → −(x, p, σₓ, σ_y)`.
    pub fn parity(&self) -> f64 {
        let odd = self.letters().iter().filter(|l| l.is_parity_odd()).count();
        if odd % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn cumulant_name(&self) -> String {
        format!("c[{}]", self.letter_list())
    }

    pub fn moment_name(&self) -> String {
        format!("m[{}]", self.letter_list())
    }

    fn letter_list(&self) -> String {
        self.letters().iter().map(|l| l.name()).collect::<Vec<_>>().join(",")
    }

    /// All symbols of order `1..=n`, sorted by order and then canonically.
    pub fn enumerate(n: u32) -> Vec<Symbol> {
        let mut out = Vec::new();
        for order in 1..=n {
            for spin in Pauli::ALL {
                let mode = if spin.is_identity() { order } else { order - 1 };
                for x in (0..=mode).rev() {
                    out.push(Symbol::new(x, mode - x, spin));
                }
            }
        }
        out
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter_list())
    }
}

/// Polynomial over symbols: each term is a sorted product with a real coefficient.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymbolPoly {
    pub terms: BTreeMap<Vec<Symbol>, f64>,
}

impl SymbolPoly {
    pub fn add_term(&mut self, mut factors: Vec<Symbol>, coef: f64) {
        factors.retain(|s| *s != Symbol::ONE);
        factors.sort();
        let e = self.terms.entry(factors.clone()).or_insert(0.0);
        *e += coef;
        if e.abs() < 1e-14 {
            self.terms.remove(&factors);
        }
    }

    pub fn max_factor_order(&self) -> u32 {
        self.terms
            .keys()
            .flat_map(|f| f.iter().map(|s| s.order()))
            .max()
            .unwrap_or(0)
    }

    /// Evaluates with a symbol lookup.
    pub fn eval(&self, value: impl Fn(&Symbol) -> f64) -> f64 {
        self.terms
            .iter()
            .map(|(f, c)| c * f.iter().map(&value).product::<f64>())
            .sum()
    }
}

/// Set partitions of `{0, …, n−1}` as lists of blocks.
pub fn set_partitions(n: usize) -> &'static [Vec<Vec<usize>>] {
    const MAX: usize = 8;
    static CACHE: OnceLock<Vec<Vec<Vec<Vec<usize>>>>> = OnceLock::new();
    assert!(n <= MAX, "set partitions are tabulated up to {MAX} elements");
    let cache = CACHE.get_or_init(|| (0..=MAX).map(generate_partitions).collect());
    &cache[n]
}

fn generate_partitions(n: usize) -> Vec<Vec<Vec<usize>>> {
    // restricted growth strings a_0 = 0, a_i ≤ 1 + max(a_0..a_{i−1})
    let mut out = Vec::new();
    if n == 0 {
        out.push(Vec::new());
        return out;
    }
    let mut a = vec![0usize; n];
    loop {
        let blocks = a.iter().max().unwrap() + 1;
        let mut part = vec![Vec::new(); blocks];
        for (i, &b) in a.iter().enumerate() {
            part[b].push(i);
        }
        out.push(part);
        // next string
        let mut i = n - 1;
        loop {
            if i == 0 {
                return out;
            }
            let prefix_max = *a[..i].iter().max().unwrap();
            if a[i] <= prefix_max {
                a[i] += 1;
                for v in a.iter_mut().skip(i + 1) {
                    *v = 0;
                }
                break;
            }
            i -= 1;
        }
    }
}

fn block_symbol(letters: &[Letter], block: &[usize]) -> Symbol {
    let ls: Vec<Letter> = block.iter().map(|&i| letters[i]).collect();
    Symbol::from_letters(&ls).expect("a block of a valid symbol has at most one spin letter")
}

/// `⟨S⟩ = Σ_π Π_{B∈π} ⟨B⟩_c`, dropping terms with a block of order above `max_order`.
pub fn moment_to_cumulant_truncated(sym: &Symbol, max_order: u32) -> SymbolPoly {
    let letters = sym.letters();
    let mut poly = SymbolPoly::default();
    if letters.is_empty() {
        poly.add_term(Vec::new(), 1.0);
        return poly;
    }
    for part in set_partitions(letters.len()) {
        if part.iter().any(|b| b.len() as u32 > max_order) {
            continue;
        }
        let factors: Vec<Symbol> = part.iter().map(|b| block_symbol(&letters, b)).collect();
        poly.add_term(factors, 1.0);
    }
    poly
}

/// Exact moment → cumulant expansion.
pub fn moment_to_cumulant(sym: &Symbol) -> SymbolPoly {
    moment_to_cumulant_truncated(sym, u32::MAX)
}

/// `⟨S⟩_c = Σ_π (−1)^{|π|−1} (|π|−1)! Π_{B∈π} ⟨B⟩`.
pub fn cumulant_to_moment(sym: &Symbol) -> SymbolPoly {
    let letters = sym.letters();
    let mut poly = SymbolPoly::default();
    if letters.is_empty() {
        return poly;
    }
    for part in set_partitions(letters.len()) {
        let k = part.len();
        let coef = if k % 2 == 1 { 1.0 } else { -1.0 } * (1..k).map(|v| v as f64).product::<f64>();
        let factors: Vec<Symbol> = part.iter().map(|b| block_symbol(&letters, b)).collect();
        poly.add_term(factors, coef);
    }
    poly
}
