//! Mean-field dynamics of the dissipative Rabi model.
//!
//! Five real observables `(⟨x̂⟩, ⟨p̂⟩, ⟨σ̂ₓ⟩, ⟨σ̂_y⟩, ⟨σ̂_z⟩)` evolve under the
//! factorized Heisenberg equations. This module provides the analytic fixed
//! points, the critical coupling, the linear stability matrix and the quench
//! protocols used to probe stability under strong perturbations.

use nalgebra::SMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::SystemParams;
use crate::ode::{self, OdeOptions};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MfState {
    pub x: f64,
    pub p: f64,
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

impl MfState {
    pub const NORMAL: MfState = MfState {
        x: 0.0,
        p: 0.0,
        sx: 0.0,
        sy: 0.0,
        sz: -1.0,
    };

    pub fn to_array(self) -> [f64; 5] {
        [self.x, self.p, self.sx, self.sy, self.sz]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            x: a[0],
            p: a[1],
            sx: a[2],
            sy: a[3],
            sz: a[4],
        }
    }

    pub fn bloch_norm(&self) -> f64 {
        (self.sx * self.sx + self.sy * self.sy + self.sz * self.sz).sqrt()
    }

    /// Image under parity: `(x, p, σₓ, σ_y) → −(x, p, σₓ, σ_y)`.
    pub fn parity_image(&self) -> Self {
        Self {
            x: -self.x,
            p: -self.p,
            sx: -self.sx,
            sy: -self.sy,
            sz: self.sz,
        }
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.to_array().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Time derivative of the mean-field observables.
pub fn rhs(params: &SystemParams, s: &MfState) -> MfState {
    let SystemParams {
        omega0: w0,
        omega: w,
        lambda: l,
        kappa: k,
        gamma: g,
    } = *params;
    MfState {
        x: -k * s.x + w0 * s.p,
        p: -k * s.p - w0 * s.x - l * s.sx,
        sx: -g * s.sx - w * s.sy,
        sy: -g * s.sy + w * s.sx - 2.0 * l * s.x * s.sz,
        sz: -2.0 * g * s.sz + 2.0 * l * s.x * s.sy - 2.0 * g,
    }
}

/// λ_c = √((ω₀Ω/2)(1 + γ²/Ω²)(1 + κ²/ω₀²)).
pub fn critical_coupling(params: &SystemParams) -> f64 {
    let SystemParams {
        omega0: w0,
        omega: w,
        kappa: k,
        gamma: g,
        ..
    } = *params;
    (w0 * w / 2.0 * (1.0 + g * g / (w * w)) * (1.0 + k * k / (w0 * w0))).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    ParityPreserving,
    ParityBreakingPlus,
    ParityBreakingMinus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Saddle,
    Unstable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub state: MfState,
    pub branch: Branch,
    pub physical: bool,
    /// `None` for unphysical solutions, which are not real fixed points.
    pub stability: Option<Stability>,
    pub eigenvalues: Option<[Complex64; 5]>,
}

/// Parity-breaking solution with the sign of `⟨σ̂ₓ⟩` given by `sign`. Returns the
/// formal `⟨σ̂_z⟩` together with `None` when `λ < λ_c` (no real solution).
fn parity_breaking(params: &SystemParams, sign: f64) -> (f64, Option<MfState>) {
    let SystemParams {
        omega0: w0,
        omega: w,
        lambda: l,
        kappa: k,
        gamma: g,
    } = *params;
    let lc = critical_coupling(params);
    if l == 0.0 {
        return (f64::NEG_INFINITY, None);
    }
    let r = lc * lc / (l * l);
    let sz = -r;
    let sx2 = 2.0 / (1.0 + g * g / (w * w)) * r * (1.0 - r);
    if sx2 < 0.0 {
        return (sz, None);
    }
    let sx = sign * sx2.sqrt();
    let sy = -g / w * sx;
    let x = -(l / w0) / (1.0 + k * k / (w0 * w0)) * sx;
    let p = k / w0 * x;
    (sz, Some(MfState { x, p, sx, sy, sz }))
}

/// |⟨x̂⟩| of the parity-breaking solutions, or 0 below the critical coupling.
pub fn displacement(params: &SystemParams) -> f64 {
    parity_breaking(params, 1.0).1.map_or(0.0, |s| s.x.abs())
}

/// Jacobian of [`rhs`] at `s`.
pub fn stability_matrix(params: &SystemParams, s: &MfState) -> SMatrix<f64, 5, 5> {
    let SystemParams {
        omega0: w0,
        omega: w,
        lambda: l,
        kappa: k,
        gamma: g,
    } = *params;
    #[rustfmt::skip]
    let m = SMatrix::<f64, 5, 5>::from_row_slice(&[
        -k,              w0,  0.0,  0.0,            0.0,
        -w0,             -k,  -l,   0.0,            0.0,
        0.0,             0.0, -g,   -w,             0.0,
        -2.0 * l * s.sz, 0.0, w,    -g,             -2.0 * l * s.x,
        2.0 * l * s.sy,  0.0, 0.0,  2.0 * l * s.x,  -2.0 * g,
    ]);
    m
}

pub fn stability_eigenvalues(params: &SystemParams, s: &MfState) -> [Complex64; 5] {
    let ev = stability_matrix(params, s).complex_eigenvalues();
    let mut out = [Complex64::new(0.0, 0.0); 5];
    for (o, v) in out.iter_mut().zip(ev.iter()) {
        *o = *v;
    }
    out.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap().then(b.im.partial_cmp(&a.im).unwrap()));
    out
}

pub fn classify(eigenvalues: &[Complex64; 5]) -> Stability {
    let scale = eigenvalues.iter().fold(1.0f64, |m, v| m.max(v.norm()));
    let unstable = eigenvalues.iter().filter(|v| v.re > 1e-12 * scale).count();
    match unstable {
        0 => Stability::Stable,
        1 => Stability::Saddle,
        _ => Stability::Unstable,
    }
}

fn make_fixed_point(params: &SystemParams, state: MfState, branch: Branch, physical: bool) -> FixedPoint {
    let (stability, eigenvalues) = if physical {
        let ev = stability_eigenvalues(params, &state);
        (Some(classify(&ev)), Some(ev))
    } else {
        (None, None)
    };
    FixedPoint {
        state,
        branch,
        physical,
        stability,
        eigenvalues,
    }
}

/// The parity-preserving solution followed by the two parity-breaking ones.
///
/// Below λ_c the parity-breaking pair has `⟨σ̂_z⟩ < −1` and complex `⟨σ̂ₓ⟩`; it is
/// returned with `physical = false`, the formal `⟨σ̂_z⟩` and zeroed transverse components.
pub fn fixed_points(params: &SystemParams) -> Vec<FixedPoint> {
    let mut out = vec![make_fixed_point(params, MfState::NORMAL, Branch::ParityPreserving, true)];
    for (sign, branch) in [(1.0, Branch::ParityBreakingPlus), (-1.0, Branch::ParityBreakingMinus)] {
        let (sz, state) = parity_breaking(params, sign);
        match state {
            Some(s) => out.push(make_fixed_point(params, s, branch, s.sz.abs() <= 1.0)),
            None => out.push(make_fixed_point(
                params,
                MfState {
                    sz,
                    ..MfState::default()
                },
                branch,
                false,
            )),
        }
    }
    out
}

/// Physical, linearly stable fixed points.
pub fn stable_fixed_points(params: &SystemParams) -> Vec<FixedPoint> {
    fixed_points(params)
        .into_iter()
        .filter(|f| f.physical && f.stability == Some(Stability::Stable))
        .collect()
}

/// Distinct oscillation frequencies |Im μ| of the linearized dynamics around the stable
/// fixed points, used to place spectral shifts near oscillating Liouvillian modes.
pub fn characteristic_frequencies(params: &SystemParams) -> Vec<f64> {
    let mut freqs: Vec<f64> = Vec::new();
    for fp in stable_fixed_points(params) {
        for ev in fp.eigenvalues.into_iter().flatten() {
            let f = ev.im.abs();
            if f > 1e-6 && !freqs.iter().any(|g| (g - f).abs() <= 1e-6 * f.max(1.0)) {
                freqs.push(f);
            }
        }
    }
    freqs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    freqs
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MfTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<MfState>,
}

/// Adaptive integration of the mean-field equations, sampled at `samples + 1` equally
/// spaced times on `[0, t_max]`.
pub fn integrate(params: &SystemParams, s0: MfState, t_max: f64, tol: f64, samples: usize) -> Result<MfTrajectory> {
    if tol <= 0.0 || !tol.is_finite() {
        return Err(Error::invalid("tol", "must be positive"));
    }
    if t_max < 0.0 || samples == 0 {
        return Err(Error::invalid("t_max", "need t_max ≥ 0 and at least one sample"));
    }
    let times: Vec<f64> = (0..=samples).map(|i| t_max * i as f64 / samples as f64).collect();
    let opts = OdeOptions {
        rtol: tol,
        atol: tol * 1e-3,
        ..Default::default()
    };
    let p = *params;
    let (ys, _) = ode::integrate(
        move |_, y: &[f64], dy: &mut [f64]| {
            let d = rhs(&p, &MfState::from_array([y[0], y[1], y[2], y[3], y[4]]));
            dy.copy_from_slice(&d.to_array());
        },
        0.0,
        s0.to_array().to_vec(),
        &times,
        &opts,
    )?;
    Ok(MfTrajectory {
        times,
        states: ys
            .into_iter()
            .map(|y| MfState::from_array([y[0], y[1], y[2], y[3], y[4]]))
            .collect(),
    })
}

/// NP quench: `⟨x̂⟩ = r cos 2θ`, `⟨p̂⟩ = r sin 2θ`, spin held at the normal-phase values.
pub fn quench_np(r: f64, theta: f64) -> MfState {
    MfState {
        x: r * (2.0 * theta).cos(),
        p: r * (2.0 * theta).sin(),
        ..MfState::NORMAL
    }
}

/// SMP quench: rotate `(σₓ, σ_z)` of a fixed point by θ, everything else unchanged.
pub fn quench_smp(fp: &MfState, theta: f64) -> MfState {
    let (s, c) = theta.sin_cos();
    MfState {
        sx: c * fp.sx + s * fp.sz,
        sz: c * fp.sz - s * fp.sx,
        ..*fp
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum Settlement {
    Settled { branch: Branch, time: f64 },
    Unresolved { final_state: MfState },
}

#[derive(Debug, Clone)]
pub struct SettleOptions {
    pub t_max: f64,
    pub tolerance: f64,
    /// Time the trajectory must stay within `tolerance`, in units of 1/ω₀.
    pub hold: f64,
    pub sample_dt: f64,
    pub rtol: f64,
}

impl Default for SettleOptions {
    fn default() -> Self {
        Self {
            t_max: 400.0,
            tolerance: 1e-6,
            hold: 10.0,
            sample_dt: 0.05,
            rtol: 1e-9,
        }
    }
}

/// Integrates from `s0` and reports which stable fixed point the trajectory settles into,
/// i.e. stays within `tolerance` for `hold / ω₀`.
pub fn settle(params: &SystemParams, s0: MfState, opts: &SettleOptions) -> Result<Settlement> {
    let samples = (opts.t_max / opts.sample_dt).ceil() as usize;
    let traj = integrate(params, s0, opts.t_max, opts.rtol, samples)?;
    let targets = stable_fixed_points(params);
    let hold = opts.hold / params.omega0;
    for fp in &targets {
        let mut entered: Option<f64> = None;
        for (t, s) in traj.times.iter().zip(&traj.states) {
            if s.distance(&fp.state) < opts.tolerance {
                let start = *entered.get_or_insert(*t);
                if t - start >= hold {
                    return Ok(Settlement::Settled {
                        branch: fp.branch,
                        time: start,
                    });
                }
            } else {
                entered = None;
            }
        }
    }
    Ok(Settlement::Unresolved {
        final_state: *traj.states.last().unwrap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig2(lr: f64) -> SystemParams {
        SystemParams::with_lambda_ratio(1.0, 1200.0, lr, 0.5, 0.05).unwrap()
    }

    #[test]
    fn normal_point_is_stationary() {
        let d = rhs(&fig2(1.4), &MfState::NORMAL);
        assert_eq!(d.max_abs(), 0.0);
    }

    #[test]
    fn decoupled_substitution() {
        let p = SystemParams::new(1.0, 3.0, 0.0, 0.5, 0.05).unwrap();
        let d = rhs(&p, &MfState { x: 1.0, ..MfState::NORMAL });
        assert_eq!(d.x, -0.5);
        assert_eq!(d.p, -1.0);
    }

    #[test]
    fn critical_coupling_limits() {
        let closed = SystemParams::new(1.0, 8.0, 0.0, 0.0, 0.0).unwrap();
        assert!((critical_coupling(&closed) - 2.0).abs() < 1e-15);
        let lossy = SystemParams::new(1.0, 8.0, 0.0, 0.5, 0.0).unwrap();
        assert!((critical_coupling(&lossy) - 2.0 * 1.25f64.sqrt()).abs() < 1e-14);
        let lc = critical_coupling(&fig2(1.0));
        // (600)(1 + 0.05²/1200²)(1.25)
        let expected = 750.0 * (1.0 + 0.0025 / 1_440_000.0);
        assert!((lc * lc - expected).abs() < 1e-9);
        assert!((lc * lc - 750.0).abs() < 1e-3);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let params = fig2(1.4);
        let fp = fixed_points(&params)[1].state;
        let m = stability_matrix(&params, &fp);
        let base = fp.to_array();
        for j in 0..5 {
            let h = 1e-6;
            let mut up = base;
            let mut dn = base;
            up[j] += h;
            dn[j] -= h;
            let fu = rhs(&params, &MfState::from_array(up)).to_array();
            let fd = rhs(&params, &MfState::from_array(dn)).to_array();
            for i in 0..5 {
                let fdv = (fu[i] - fd[i]) / (2.0 * h);
                assert!((m[(i, j)] - fdv).abs() < 1e-5 * (1.0 + fdv.abs()), "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn quench_protocols() {
        let fp = fixed_points(&fig2(1.4))[1].state;
        assert_eq!(quench_smp(&fp, 0.0), fp);
        let flipped = quench_smp(&fp, std::f64::consts::PI);
        assert!((flipped.sx + fp.sx).abs() < 1e-14 && (flipped.sz + fp.sz).abs() < 1e-14);
        assert_eq!(flipped.x, fp.x);
        let q = quench_np(10.0, std::f64::consts::PI / 7.0);
        assert!((q.x - 10.0 * (2.0 * std::f64::consts::PI / 7.0).cos()).abs() < 1e-14);
        assert_eq!(q.sz, -1.0);
    }

    #[test]
    fn unphysical_pair_below_threshold() {
        let fps = fixed_points(&fig2(0.6));
        assert!(fps[0].physical);
        assert!(fps[1..].iter().all(|f| !f.physical && f.state.sz < -1.0 && f.stability.is_none()));
        assert_eq!(displacement(&fig2(0.6)), 0.0);
    }
}
