//! Finite-size scaling of the Liouvillian gap and the SP/SMP decision rule.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{self, SpectrumCache};
use crate::error::{Error, Result};
use crate::hilbert::{HilbertSpace, SystemParams};
use crate::liouville::{self, SpectrumOptions};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanPoint {
    /// ω₀/Ω.
    pub ratio: f64,
    pub params: SystemParams,
    pub fock_cutoff: usize,
    pub delta: f64,
    /// Relative residual of the λ₁ Ritz pair, used as the point uncertainty.
    pub error: f64,
    pub tail_mass: f64,
    pub metastable_dim: usize,
    pub warning: Option<String>,
    pub cached: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingSeries {
    /// `(ratio, Δ)` sorted by ratio.
    pub points: Vec<(f64, f64)>,
    pub errors: Vec<f64>,
    /// Description of the parameter held fixed.
    pub fixed: String,
    pub details: Vec<ScanPoint>,
}

impl ScalingSeries {
    pub fn from_points(mut points: Vec<(f64, f64)>, errors: Option<Vec<f64>>, fixed: impl Into<String>) -> Result<Self> {
        let errors = errors.unwrap_or_else(|| vec![0.0; points.len()]);
        if errors.len() != points.len() {
            return Err(Error::invalid("errors", "one error per point is required"));
        }
        if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(Error::invalid("points", "must be finite"));
        }
        let mut idx: Vec<usize> = (0..points.len()).collect();
        idx.sort_by(|&a, &b| points[a].0.total_cmp(&points[b].0));
        let errors = idx.iter().map(|&i| errors[i]).collect();
        points = idx.iter().map(|&i| points[i]).collect();
        Ok(Self {
            points,
            errors,
            fixed: fixed.into(),
            details: Vec::new(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ScanOptions {
    /// Eigenvalues requested per point.
    pub k: usize,
    pub ratio_threshold: f64,
    pub spectrum: SpectrumOptions,
    /// Upper bound for the tail-validated cutoff.
    pub max_cutoff: usize,
    pub memory_budget: usize,
    pub cache: Option<SpectrumCache>,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            k: 4,
            ratio_threshold: 0.2,
            spectrum: SpectrumOptions::default(),
            max_cutoff: 400,
            memory_budget: liouville::DEFAULT_MEMORY_BUDGET,
            cache: None,
        }
    }
}

/// Gap at each `Ω/ω₀` in `omega_ratios` with `λ = lambda_ratio · √(ω₀Ω/2)` and the
/// other parameters taken from `template`. Points run in parallel.
pub fn scan_gap(template: &SystemParams, omega_ratios: &[f64], lambda_ratio: f64, opts: &ScanOptions) -> Result<ScalingSeries> {
    if omega_ratios.is_empty() {
        return Err(Error::invalid("omega_ratios", "at least one size is required"));
    }
    let details: Vec<ScanPoint> = omega_ratios
        .par_iter()
        .map(|&r| {
            let params = SystemParams::with_lambda_ratio(template.omega0, r * template.omega0, lambda_ratio, template.kappa, template.gamma)?;
            gap_point(&params, opts)
        })
        .collect::<Result<_>>()?;
    let mut series = ScalingSeries::from_points(
        details.iter().map(|d| (d.ratio, d.delta)).collect(),
        Some(details.iter().map(|d| d.error).collect()),
        format!("lambda_ratio = {lambda_ratio}, kappa = {}, gamma = {}", template.kappa, template.gamma),
    )?;
    let mut details = details;
    details.sort_by(|a, b| a.ratio.total_cmp(&b.ratio));
    series.details = details;
    Ok(series)
}

/// Gap at one parameter point on the tail-validated cutoff, reusing a cached spectrum when present.
pub fn gap_point(params: &SystemParams, opts: &ScanOptions) -> Result<ScanPoint> {
    let (l, ss) = liouville::tail_validated_steady_state(params, HilbertSpace::auto(params), opts.max_cutoff, opts.memory_budget)?;
    let space = l.space();
    let key = cache::spectrum_key(params, space, opts.k, opts.spectrum.method, opts.spectrum.shifts.as_deref());
    let cached = match &opts.cache {
        Some(c) => c.load(&key)?,
        None => None,
    };
    let hit = cached.is_some();
    let spec = match cached {
        Some(s) => s,
        None => {
            let s = l.spectrum(opts.k, &opts.spectrum)?;
            if let Some(c) = &opts.cache {
                c.store(&key, &s)?;
            }
            s
        }
    };
    let g = liouville::gap(&spec, opts.ratio_threshold)?;
    Ok(ScanPoint {
        ratio: params.omega0 / params.omega,
        params: *params,
        fock_cutoff: space.fock_cutoff(),
        delta: g.delta,
        error: spec.residuals.get(1).copied().unwrap_or(0.0) * (1.0 + g.lambda1.norm()),
        tail_mass: ss.tail_mass,
        metastable_dim: g.metastable_dim,
        warning: g.warning,
        cached: hit,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Root-mean-square residual.
    pub residual: f64,
    pub dof: usize,
    /// `s² (AᵀA)⁻¹` from the residuals; `None` without spare degrees of freedom.
    pub covariance: Option<[[f64; 3]; 3]>,
    /// Covariance from the per-point errors, `(AᵀWA)⁻¹` with `W = diag(1/σᵢ²)`.
    pub propagated_covariance: Option<[[f64; 3]; 3]>,
}

impl FitResult {
    /// Extrapolated value at zero ratio.
    pub fn extrapolate(&self) -> f64 {
        self.a
    }

    pub fn std_errors(&self) -> Option<[f64; 3]> {
        self.covariance.map(|c| [c[0][0].sqrt(), c[1][1].sqrt(), c[2][2].sqrt()])
    }

    /// Standard error of `a`: residual based when available, else propagated from point errors.
    pub fn a_error(&self) -> Option<f64> {
        self.covariance
            .or(self.propagated_covariance)
            .map(|c| c[0][0].max(0.0).sqrt())
    }
}

/// Least-squares fit of `a + b r + c r²` by QR on the points sorted by ratio.
///
/// Three points give the interpolating quadratic, whose uncertainty is only
/// available through the per-point errors.
pub fn polyfit2(series: &ScalingSeries) -> Result<FitResult> {
    let n = series.points.len();
    if n < 3 {
        return Err(Error::invalid("series", format!("a quadratic fit needs at least 3 points, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| series.points[i].0.total_cmp(&series.points[j].0).then(series.points[i].1.total_cmp(&series.points[j].1)));
    let a = DMatrix::from_fn(n, 3, |i, j| series.points[idx[i]].0.powi(j as i32));
    let y = DVector::from_fn(n, |i, _| series.points[idx[i]].1);
    let qr = a.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    if (0..3).any(|i| r[(i, i)].abs() < 1e-14 * r[(0, 0)].abs().max(1e-300)) {
        return Err(Error::Analysis("quadratic fit is rank deficient (repeated ratios?)".into()));
    }
    let coef = r
        .solve_upper_triangular(&(q.transpose() * &y))
        .ok_or_else(|| Error::Analysis("singular fit".into()))?;
    let resid = &y - &a * &coef;
    let ssr = resid.norm_squared();
    let dof = n - 3;
    let rinv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Analysis("singular fit".into()))?;
    let ata_inv = &rinv * rinv.transpose();
    let covariance = (dof > 0).then(|| to_array(&(&ata_inv * (ssr / dof as f64))));
    let errors: Vec<f64> = idx.iter().map(|&i| series.errors.get(i).copied().unwrap_or(0.0)).collect();
    let propagated_covariance = if errors.iter().all(|&e| e > 0.0) {
        let w = DMatrix::from_diagonal(&DVector::from_iterator(n, errors.iter().map(|e| 1.0 / (e * e))));
        (a.transpose() * w * &a).try_inverse().map(|m| to_array(&m))
    } else if errors.iter().all(|&e| e == 0.0) {
        None
    } else {
        // zero errors mixed with finite ones: propagate through the unweighted solution
        let s = DMatrix::from_diagonal(&DVector::from_iterator(n, errors.iter().map(|e| e * e)));
        let pinv = &ata_inv * a.transpose();
        Some(to_array(&(&pinv * s * pinv.transpose())))
    };
    Ok(FitResult {
        a: coef[0],
        b: coef[1],
        c: coef[2],
        residual: (ssr / n as f64).sqrt(),
        dof,
        covariance,
        propagated_covariance,
    })
}

fn to_array(m: &DMatrix<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

/// Fit of `Δ∞` against `γ/ω₀`; identical to [`polyfit2`] with γ as the ratio.
pub fn gamma_dependence(series: &ScalingSeries) -> Result<FitResult> {
    polyfit2(series)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Closing gap: symmetry-breaking states are stable.
    #[serde(rename = "SP")]
    Superradiant,
    /// Finite gap: symmetry-breaking states are metastable.
    #[serde(rename = "SMP")]
    Metastable,
}

/// `SP` iff `Δ∞ < factor · σ_a` (default factor 10) or `Δ∞ ≤ 0`, else `SMP`.
pub fn classify(delta_inf: f64, std_error: f64, factor: f64) -> Phase {
    if delta_inf <= 0.0 || delta_inf < factor * std_error.abs() {
        Phase::Superradiant
    } else {
        Phase::Metastable
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityCheck {
    pub a_full: f64,
    pub a_dropped: f64,
    pub a_error: f64,
    pub stable: bool,
}

/// Refit without the largest-ratio point; stable when `a` moves by less than its error.
pub fn extrapolation_stability(series: &ScalingSeries) -> Result<StabilityCheck> {
    if series.points.len() < 4 {
        return Err(Error::invalid("series", "the stability check needs at least 4 points"));
    }
    let full = polyfit2(series)?;
    let last = series
        .points
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .map(|(i, _)| i)
        .unwrap();
    let mut reduced = series.clone();
    reduced.points.remove(last);
    reduced.errors.remove(last);
    let dropped = polyfit2(&reduced)?;
    let a_error = full.a_error().unwrap_or(0.0);
    Ok(StabilityCheck {
        a_full: full.a,
        a_dropped: dropped.a,
        a_error,
        stable: (full.a - dropped.a).abs() < a_error,
    })
}
