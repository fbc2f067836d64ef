//! Quantum-jump unraveling of the master equation.
//!
//! Each step applies the exact unitary `e^{−iĤδt}` and then one of three branches
//! chosen by a single uniform draw: a mode jump `â` with probability
//! `P_κ = 2κδt⟨â†â⟩`, a spin jump `σ̂₋` with probability `P_γ = 2γδt⟨σ̂₊σ̂₋⟩`, or the
//! no-jump drift `1 − γδt σ̂₊σ̂₋ − κδt â†â`. The state is renormalized after every branch.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{self, HilbertSpace, SystemParams};
use crate::linalg::dense;
use crate::meanfield;
use crate::phasespace::{self, GridSpec};

/// Largest expected jump probability per step accepted by [`TrajectoryConfig::validate`].
pub const MAX_STEP_PROBABILITY: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
    /// Observables are recorded every `record_stride` steps, including t = 0.
    pub record_stride: usize,
    /// Keep the state vector at every record point (needed for peak paths).
    pub keep_states: bool,
}

/// `min(0.02/ω₀, 0.05/(2κ n̄))` with `n̄` the mean-field photon number (at least 1).
pub fn default_dt(params: &SystemParams) -> f64 {
    let xbar = meanfield::displacement(params);
    let nbar = (xbar * xbar / 2.0).max(1.0);
    let mut dt = 0.02 / params.omega0;
    if params.kappa > 0.0 {
        dt = dt.min(0.05 / (2.0 * params.kappa * nbar));
    }
    dt
}

impl TrajectoryConfig {
    /// Checks the step against the initial state and the mean-field photon estimate.
    pub fn validate(&self, params: &SystemParams, space: HilbertSpace, psi0: &[Complex64]) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt", "must be positive and finite"));
        }
        if !(self.t_max >= 0.0 && self.t_max.is_finite()) {
            return Err(Error::invalid("t_max", "must be non-negative and finite"));
        }
        if self.record_stride == 0 {
            return Err(Error::invalid("record_stride", "must be ≥ 1"));
        }
        if psi0.len() != space.dim() {
            return Err(Error::invalid("initial_state", "dimension does not match the Hilbert space"));
        }
        let norm = psi0.iter().map(|z| z.norm_sqr()).sum::<f64>();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::invalid("initial_state", format!("must be normalized, norm² = {norm}")));
        }
        let n0 = number_expectation(psi0, space.fock_cutoff());
        let xbar = meanfield::displacement(params);
        let nbar = n0.max(xbar * xbar / 2.0);
        let p = 2.0 * self.dt * (params.kappa * nbar + params.gamma);
        if p >= MAX_STEP_PROBABILITY {
            return Err(Error::invalid(
                "dt",
                format!("expected jump probability {p:.3} per step exceeds {MAX_STEP_PROBABILITY}"),
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Mode,
    Spin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub t: f64,
    pub channel: Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub sigma_z: f64,
    pub sigma_x: f64,
    pub x: f64,
    pub p: f64,
    /// `√(⟨x̂²⟩ − ⟨x̂⟩²)`.
    pub delta_x: f64,
    pub photons: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub observables: Vec<Observables>,
    pub jumps: Vec<Jump>,
    /// Largest deviation of ‖ψ‖² from 1 at the record points.
    pub norm_error: f64,
    #[serde(skip)]
    pub states: Vec<Vec<Complex64>>,
}

/// Precomputed stepping data for fixed parameters, space and δt.
#[derive(Debug, Clone)]
pub struct Propagator {
    params: SystemParams,
    space: HilbertSpace,
    dt: f64,
    unitary: DMatrix<Complex64>,
}

impl Propagator {
    pub fn new(params: &SystemParams, space: HilbertSpace, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt", "must be positive and finite"));
        }
        let h = hilbert::hamiltonian(params, space).to_dense();
        let (e, v) = dense::hermitian_eigen_desc(&h);
        let phases = DVector::from_iterator(e.len(), e.iter().map(|&w| Complex64::from_polar(1.0, -w * dt)));
        let unitary = &v * DMatrix::from_diagonal(&phases) * v.adjoint();
        Ok(Self {
            params: *params,
            space,
            dt,
            unitary,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn space(&self) -> HilbertSpace {
        self.space
    }

    /// One step; `u` is the uniform draw selecting the branch.
    pub fn step_with(&self, psi: &mut Vec<Complex64>, u: f64) -> Result<Option<Channel>> {
        let n = self.space.fock_cutoff();
        let (kappa, gamma, dt) = (self.params.kappa, self.params.gamma, self.dt);
        let p_kappa = 2.0 * kappa * dt * number_expectation(psi, n);
        let p_gamma = 2.0 * gamma * dt * up_population(psi, n);
        if p_kappa + p_gamma >= 1.0 {
            return Err(Error::StepTooLarge {
                probability: p_kappa + p_gamma,
            });
        }
        // column-major storage: φ = Σ_j U[:, j] ψ_j
        let mut phi = vec![Complex64::new(0.0, 0.0); psi.len()];
        for (col, &c) in self.unitary.as_slice().chunks(psi.len()).zip(psi.iter()) {
            if c.norm_sqr() > 0.0 {
                phi.iter_mut().zip(col).for_each(|(a, u)| *a += u * c);
            }
        }
        let (next, jump) = if u < p_kappa {
            (apply_annihilation(&phi, n), Some(Channel::Mode))
        } else if u < p_kappa + p_gamma {
            (apply_sigma_minus(&phi, n), Some(Channel::Spin))
        } else {
            let mut out = phi;
            for s in 0..2 {
                for k in 0..n {
                    let i = s * n + k;
                    let damp = 1.0 - kappa * dt * k as f64 - if s == 0 { gamma * dt } else { 0.0 };
                    out[i] *= damp;
                }
            }
            (out, None)
        };
        let norm = next.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::Analysis("trajectory state vanished after a jump".into()));
        }
        psi.clear();
        psi.extend(next.into_iter().map(|z| z / norm));
        Ok(jump)
    }

    /// One step drawing the branch from `rng`.
    pub fn step<R: Rng>(&self, psi: &mut Vec<Complex64>, rng: &mut R) -> Result<Option<Channel>> {
        let u: f64 = rng.random();
        self.step_with(psi, u)
    }

    pub fn observables(&self, psi: &[Complex64]) -> Observables {
        observables(psi, self.space.fock_cutoff())
    }

    /// Single trajectory driven by `rng`.
    pub fn run_with_rng<R: Rng>(&self, config: &TrajectoryConfig, psi0: &[Complex64], rng: &mut R) -> Result<TrajectoryRecord> {
        let steps = config.steps();
        let mut psi = psi0.to_vec();
        let mut rec = TrajectoryRecord {
            times: Vec::new(),
            observables: Vec::new(),
            jumps: Vec::new(),
            norm_error: 0.0,
            states: Vec::new(),
        };
        let record = |rec: &mut TrajectoryRecord, t: f64, psi: &[Complex64]| {
            rec.times.push(t);
            rec.observables.push(self.observables(psi));
            let n2 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>();
            rec.norm_error = rec.norm_error.max((n2 - 1.0).abs());
            if config.keep_states {
                rec.states.push(psi.to_vec());
            }
        };
        record(&mut rec, 0.0, &psi);
        for k in 1..=steps {
            let t = k as f64 * self.dt;
            if let Some(channel) = self.step(&mut psi, rng)? {
                rec.jumps.push(Jump { t, channel });
            }
            if k % config.record_stride == 0 {
                record(&mut rec, t, &psi);
            }
        }
        Ok(rec)
    }

    /// Trajectory number `index` of the ensemble seeded by `config.seed`.
    pub fn run(&self, config: &TrajectoryConfig, psi0: &[Complex64], index: u64) -> Result<TrajectoryRecord> {
        if (config.dt - self.dt).abs() > 1e-15 * self.dt {
            return Err(Error::invalid("dt", "configuration and propagator disagree"));
        }
        config.validate(&self.params, self.space, psi0)?;
        let mut rng = stream_rng(config.seed, index);
        self.run_with_rng(config, psi0, &mut rng)
    }
}

/// Independent ChaCha8 stream `index` under the master seed.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn number_expectation(psi: &[Complex64], n: usize) -> f64 {
    psi.iter().enumerate().map(|(i, z)| (i % n) as f64 * z.norm_sqr()).sum()
}

fn up_population(psi: &[Complex64], n: usize) -> f64 {
    psi[..n].iter().map(|z| z.norm_sqr()).sum()
}

fn apply_annihilation(psi: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); psi.len()];
    for s in 0..2 {
        for k in 0..n - 1 {
            out[s * n + k] = psi[s * n + k + 1] * ((k + 1) as f64).sqrt();
        }
    }
    out
}

fn apply_sigma_minus(psi: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); psi.len()];
    out[n..].copy_from_slice(&psi[..n]);
    out
}

/// Expectations with the truncated operators; `psi` is normalized.
pub fn observables(psi: &[Complex64], n: usize) -> Observables {
    let (up, down) = psi.split_at(n);
    let sigma_z = up.iter().map(|z| z.norm_sqr()).sum::<f64>() - down.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let sigma_x = 2.0 * up.iter().zip(down).map(|(a, b)| a.conj() * b).sum::<Complex64>().re;
    let mut a_exp = Complex64::new(0.0, 0.0);
    let mut x2 = 0.0;
    for part in [up, down] {
        for k in 0..n {
            if k + 1 < n {
                a_exp += part[k].conj() * part[k + 1] * ((k + 1) as f64).sqrt();
            }
            // (x̂ψ)_k = (√k ψ_{k−1} + √(k+1) ψ_{k+1}) / √2
            let mut xk = Complex64::new(0.0, 0.0);
            if k > 0 {
                xk += part[k - 1] * (k as f64).sqrt();
            }
            if k + 1 < n {
                xk += part[k + 1] * ((k + 1) as f64).sqrt();
            }
            x2 += xk.norm_sqr() / 2.0;
        }
    }
    let x = std::f64::consts::SQRT_2 * a_exp.re;
    let p = std::f64::consts::SQRT_2 * a_exp.im;
    Observables {
        sigma_z,
        sigma_x,
        x,
        p,
        delta_x: (x2 - x * x).max(0.0).sqrt(),
        photons: number_expectation(psi, n),
    }
}

/// Mean and standard error of each observable over an ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub trajectories: usize,
    pub times: Vec<f64>,
    pub mean: Vec<Observables>,
    pub std_error: Vec<Observables>,
    pub mode_jumps: usize,
    pub spin_jumps: usize,
}

/// Runs `count` trajectories in parallel on independent streams and reduces them in index order.
pub fn run_ensemble(prop: &Propagator, config: &TrajectoryConfig, psi0: &[Complex64], count: usize) -> Result<EnsembleSummary> {
    if count < 2 {
        return Err(Error::invalid("trajectories", "need at least two for standard errors"));
    }
    let cfg = TrajectoryConfig {
        keep_states: false,
        ..*config
    };
    let records: Vec<TrajectoryRecord> = (0..count as u64)
        .into_par_iter()
        .map(|i| prop.run(&cfg, psi0, i))
        .collect::<Result<_>>()?;
    let times = records[0].times.clone();
    let m = times.len();
    let fields = |o: &Observables| [o.sigma_z, o.sigma_x, o.x, o.p, o.delta_x, o.photons];
    let mut sum = vec![[0.0f64; 6]; m];
    let mut sum2 = vec![[0.0f64; 6]; m];
    let (mut mode_jumps, mut spin_jumps) = (0, 0);
    for r in &records {
        for (t, o) in r.observables.iter().enumerate() {
            for (f, v) in fields(o).into_iter().enumerate() {
                sum[t][f] += v;
                sum2[t][f] += v * v;
            }
        }
        for j in &r.jumps {
            match j.channel {
                Channel::Mode => mode_jumps += 1,
                Channel::Spin => spin_jumps += 1,
            }
        }
    }
    let c = count as f64;
    let to_obs = |a: [f64; 6]| Observables {
        sigma_z: a[0],
        sigma_x: a[1],
        x: a[2],
        p: a[3],
        delta_x: a[4],
        photons: a[5],
    };
    let mut mean = Vec::with_capacity(m);
    let mut std_error = Vec::with_capacity(m);
    for t in 0..m {
        let mu: [f64; 6] = std::array::from_fn(|f| sum[t][f] / c);
        let se: [f64; 6] = std::array::from_fn(|f| {
            let var = (sum2[t][f] / c - mu[f] * mu[f]).max(0.0) * c / (c - 1.0);
            (var / c).sqrt()
        });
        mean.push(to_obs(mu));
        std_error.push(to_obs(se));
    }
    Ok(EnsembleSummary {
        trajectories: count,
        times,
        mean,
        std_error,
        mode_jumps,
        spin_jumps,
    })
}

/// A tracked Q peak over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakBranch {
    /// `(t, x, p)`.
    pub points: Vec<(f64, f64, f64)>,
    /// Branch this one split from, if it appeared next to an existing branch.
    pub parent: Option<usize>,
}

/// Q peaks of each stored state linked across time by nearest-neighbour association.
///
/// Peaks and live branches are paired greedily by increasing distance; a peak
/// left over starts a new branch whose parent is the nearest live branch, and a
/// branch left without a peak ends.
pub fn peak_path(times: &[f64], states: &[Vec<Complex64>], space: HilbertSpace, grid: &GridSpec, rel_threshold: f64) -> Result<Vec<PeakBranch>> {
    if times.len() != states.len() {
        return Err(Error::invalid("states", "one state per time point is required"));
    }
    let mut branches: Vec<PeakBranch> = Vec::new();
    let mut live: Vec<usize> = Vec::new();
    for (&t, psi) in times.iter().zip(states) {
        let q = phasespace::husimi_q_pure(psi, space, grid)?;
        let peaks = phasespace::find_peaks(&q, rel_threshold)?;
        let last = |b: usize| {
            let p = branches[b].points.last().unwrap();
            (p.1, p.2)
        };
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (li, &b) in live.iter().enumerate() {
            let (bx, bp) = last(b);
            for (pi, pk) in peaks.iter().enumerate() {
                pairs.push(((pk.x - bx).hypot(pk.p - bp), li, pi));
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        let mut branch_used = vec![false; live.len()];
        let mut peak_used = vec![false; peaks.len()];
        let mut assigned: Vec<(usize, usize)> = Vec::new();
        for &(_, li, pi) in &pairs {
            if !branch_used[li] && !peak_used[pi] {
                branch_used[li] = true;
                peak_used[pi] = true;
                assigned.push((live[li], pi));
            }
        }
        let nearest_parent: Vec<Option<usize>> = peaks
            .iter()
            .map(|pk| {
                live.iter()
                    .copied()
                    .min_by(|&a, &b| {
                        let (ax, ap) = last(a);
                        let (bx, bp) = last(b);
                        (pk.x - ax).hypot(pk.p - ap).total_cmp(&(pk.x - bx).hypot(pk.p - bp))
                    })
            })
            .collect();
        let mut next_live = Vec::new();
        for (b, pi) in assigned {
            branches[b].points.push((t, peaks[pi].x, peaks[pi].p));
            next_live.push(b);
        }
        for (pi, pk) in peaks.iter().enumerate() {
            if !peak_used[pi] {
                branches.push(PeakBranch {
                    points: vec![(t, pk.x, pk.p)],
                    parent: nearest_parent[pi],
                });
                next_live.push(branches.len() - 1);
            }
        }
        next_live.sort_unstable();
        live = next_live;
    }
    Ok(branches)
}
