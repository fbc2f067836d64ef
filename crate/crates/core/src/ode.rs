//! Dormand–Prince 5(4) integrator with adaptive step-size control.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Scalar types the integrator can advance.
pub trait OdeScalar:
    Copy + Send + Sync + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
    fn zero() -> Self;
    fn modulus(self) -> f64;
}

impl OdeScalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl OdeScalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
}

#[derive(Debug, Clone)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; chosen automatically when `None`.
    pub initial_step: Option<f64>,
    /// Relative step-size floor; smaller steps raise a stiffness error.
    pub min_step: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            initial_step: None,
            min_step: 1e-14,
            max_step: f64::INFINITY,
            max_steps: 50_000_000,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn combine<T: OdeScalar>(out: &mut [T], y: &[T], h: f64, terms: &[(f64, &[T])]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = T::zero();
        for &(c, k) in terms {
            acc = acc + k[i] * c;
        }
        *o = y[i] + acc * h;
    }
}

/// Integrates `dy/dt = f(t, y)` from `t0`, returning the state at each time in `t_out`
/// (which must be non-decreasing and ≥ `t0`).
pub fn integrate<T, F>(
    mut f: F,
    t0: f64,
    y0: Vec<T>,
    t_out: &[f64],
    opts: &OdeOptions,
) -> Result<(Vec<Vec<T>>, OdeStats)>
where
    T: OdeScalar,
    F: FnMut(f64, &[T], &mut [T]),
{
    if !(opts.rtol > 0.0 && opts.atol >= 0.0) {
        return Err(Error::invalid("tol", "tolerances must be positive"));
    }
    if t_out.windows(2).any(|w| w[1] < w[0]) || t_out.first().is_some_and(|&t| t < t0) {
        return Err(Error::invalid("t_out", "output times must be sorted and not precede t0"));
    }
    let n = y0.len();
    let mut stats = OdeStats::default();
    let mut y = y0;
    let mut t = t0;
    let mut k: [Vec<T>; 7] = std::array::from_fn(|_| vec![T::zero(); n]);
    let mut ytmp = vec![T::zero(); n];
    let mut ynew = vec![T::zero(); n];
    f(t, &y, &mut k[0]);
    stats.evaluations += 1;

    let err_norm = |y: &[T], ynew: &[T], err: &[T]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            let sc = opts.atol + opts.rtol * y[i].modulus().max(ynew[i].modulus());
            let e = err[i].modulus() / sc;
            s += e * e;
        }
        (s / n.max(1) as f64).sqrt()
    };

    let mut h = match opts.initial_step {
        Some(h) => h,
        None => {
            let d0 = err_norm(&y, &y, &y);
            let d1 = err_norm(&y, &y, &k[0]);
            let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
            h0.min(opts.max_step)
        }
    };

    let mut out = Vec::with_capacity(t_out.len());
    let mut err = vec![T::zero(); n];
    for &target in t_out {
        while t < target {
            if stats.accepted + stats.rejected >= opts.max_steps {
                return Err(Error::NonConvergence {
                    what: format!("ODE integration stopped at t = {t}"),
                    residual: f64::NAN,
                    iterations: opts.max_steps,
                });
            }
            let mut step = h.min(target - t).min(opts.max_step);
            let last = step >= target - t;
            if last {
                step = target - t;
            }
            if step < opts.min_step * t.abs().max(1.0) && !last {
                return Err(Error::Stiffness {
                    t,
                    context: format!("step {step:.3e} below floor"),
                });
            }
            let (k0, rest) = k.split_at_mut(1);
            let [k1, k2, k3, k4, k5, k6] = rest else { unreachable!() };
            let k0 = &k0[0];
            combine(&mut ytmp, &y, step, &[(A21, k0)]);
            f(t + C2 * step, &ytmp, k1);
            combine(&mut ytmp, &y, step, &[(A31, k0), (A32, k1)]);
            f(t + C3 * step, &ytmp, k2);
            combine(&mut ytmp, &y, step, &[(A41, k0), (A42, k1), (A43, k2)]);
            f(t + C4 * step, &ytmp, k3);
            combine(&mut ytmp, &y, step, &[(A51, k0), (A52, k1), (A53, k2), (A54, k3)]);
            f(t + C5 * step, &ytmp, k4);
            combine(&mut ytmp, &y, step, &[(A61, k0), (A62, k1), (A63, k2), (A64, k3), (A65, k4)]);
            f(t + step, &ytmp, k5);
            combine(&mut ynew, &y, step, &[(B1, k0), (B3, k2), (B4, k3), (B5, k4), (B6, k5)]);
            f(t + step, &ynew, k6);
            stats.evaluations += 6;
            for i in 0..n {
                err[i] = (k0[i] * E1 + k2[i] * E3 + k3[i] * E4 + k4[i] * E5 + k5[i] * E6 + k6[i] * E7) * step;
            }
            let e = err_norm(&y, &ynew, &err);
            if e.is_finite() && e <= 1.0 {
                stats.accepted += 1;
                t = if last { target } else { t + step };
                std::mem::swap(&mut y, &mut ynew);
                k.swap(0, 6);
                let fac = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };
                if !last || step >= h {
                    h = (step * fac).min(opts.max_step);
                }
            } else {
                stats.rejected += 1;
                let fac = if e.is_finite() { (0.9 * e.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
                h = step * fac;
                if h < opts.min_step * t.abs().max(1.0) {
                    return Err(Error::Stiffness {
                        t,
                        context: format!("error estimate {e:.3e} with step {h:.3e}"),
                    });
                }
            }
        }
        out.push(y.clone());
    }
    Ok((out, stats))
}
