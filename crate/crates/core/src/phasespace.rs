//! Reduced mode state, Husimi Q-distribution, peak finding and the quadrature
//! eigenbasis used for eigenstate feature distributions.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{self, HilbertSpace, SystemParams};
use crate::linalg::dense;
use crate::meanfield;

/// Boundary mass fraction above which a grid is reported as too small.
pub const COVERAGE_TOLERANCE: f64 = 1e-3;
/// Default relative threshold for [`find_peaks`].
pub const DEFAULT_PEAK_THRESHOLD: f64 = 0.05;

/// Mode density matrix `Tr_spin ρ`.
pub fn partial_trace_mode(rho: &DMatrix<Complex64>, space: HilbertSpace) -> DMatrix<Complex64> {
    let n = space.fock_cutoff();
    DMatrix::from_fn(n, n, |i, j| rho[(space.index(0, i), space.index(0, j))] + rho[(space.index(1, i), space.index(1, j))])
}

/// Spin density matrix `Tr_mode ρ` in the basis (↑, ↓).
pub fn partial_trace_spin(rho: &DMatrix<Complex64>, space: HilbertSpace) -> DMatrix<Complex64> {
    let n = space.fock_cutoff();
    DMatrix::from_fn(2, 2, |s, t| (0..n).map(|k| rho[(space.index(s, k), space.index(t, k))]).sum())
}

/// Rectangular grid in the (x, p) plane, with `α = (x + ip)/√2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub p_range: (f64, f64),
    pub nx: usize,
    pub np: usize,
}

impl GridSpec {
    pub fn square(half_width: f64, points: usize) -> Self {
        Self {
            x_range: (-half_width, half_width),
            p_range: (-half_width, half_width),
            nx: points,
            np: points,
        }
    }

    /// `±max(1.5 x̄, x̄ + 6)` in both quadratures with 201 × 201 points.
    pub fn auto(params: &SystemParams) -> Self {
        let xbar = meanfield::displacement(params);
        Self::square((1.5 * xbar).max(xbar + 6.0), 201)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 3 || self.np < 3 {
            return Err(Error::invalid("grid", "needs at least 3 points per axis"));
        }
        let ok = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.1 > r.0;
        if !ok(self.x_range) || !ok(self.p_range) {
            return Err(Error::invalid("grid", "ranges must be finite and increasing"));
        }
        Ok(())
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_range.0 + (self.x_range.1 - self.x_range.0) * i as f64 / (self.nx - 1) as f64
    }

    pub fn p(&self, j: usize) -> f64 {
        self.p_range.0 + (self.p_range.1 - self.p_range.0) * j as f64 / (self.np - 1) as f64
    }

    pub fn dx(&self) -> f64 {
        (self.x_range.1 - self.x_range.0) / (self.nx - 1) as f64
    }

    pub fn dp(&self) -> f64 {
        (self.p_range.1 - self.p_range.0) / (self.np - 1) as f64
    }

    /// Cell area in the α plane, `dx dp / 2`.
    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dp() / 2.0
    }
}

/// Husimi Q sampled on a grid; `values[(i, j)]` is Q at `(x_i, p_j)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QGrid {
    pub spec: GridSpec,
    pub values: DMatrix<f64>,
}

impl QGrid {
    /// Riemann sum of Q over the α plane.
    pub fn total(&self) -> f64 {
        self.values.sum() * self.spec.cell_area()
    }

    /// Fraction of the total on the outermost ring of grid points.
    pub fn boundary_fraction(&self) -> f64 {
        let (nx, np) = (self.spec.nx, self.spec.np);
        let mut edge = 0.0;
        for i in 0..nx {
            for j in 0..np {
                if i == 0 || j == 0 || i == nx - 1 || j == np - 1 {
                    edge += self.values[(i, j)];
                }
            }
        }
        let total = self.values.sum();
        if total > 0.0 {
            edge / total
        } else {
            0.0
        }
    }

    /// Extends the boundary check to the mass missing from the grid.
    pub fn coverage_warning(&self) -> Option<String> {
        let edge = self.boundary_fraction();
        let missing = (1.0 - self.total()).max(0.0);
        if edge > COVERAGE_TOLERANCE || missing > COVERAGE_TOLERANCE {
            Some(format!(
                "grid does not cover the distribution: boundary fraction {edge:.2e}, missing mass {missing:.2e}"
            ))
        } else {
            None
        }
    }

    /// `log10(Q / max Q)` floored at `floor`, for viewing low-intensity structure.
    pub fn log_scaled(&self, floor: f64) -> DMatrix<f64> {
        let max = self.values.max();
        self.values.map(|v| if max > 0.0 && v > 0.0 { (v / max).log10().max(floor) } else { floor })
    }

    /// Matrix CSV with one row per p value (ascending) and one column per x value.
    pub fn write_csv(&self, path: &Path, log_floor: Option<f64>) -> Result<()> {
        let data = match log_floor {
            Some(f) => self.log_scaled(f),
            None => self.values.clone(),
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
        for j in 0..self.spec.np {
            let row: Vec<String> = (0..self.spec.nx).map(|i| format!("{:.12e}", data[(i, j)])).collect();
            w.write_record(&row).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    /// JSON sidecar describing the grid layout of [`write_csv`](Self::write_csv).
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "x_range": [self.spec.x_range.0, self.spec.x_range.1],
            "p_range": [self.spec.p_range.0, self.spec.p_range.1],
            "nx": self.spec.nx,
            "np": self.spec.np,
            "dx": self.spec.dx(),
            "dp": self.spec.dp(),
            "cell_area_alpha": self.spec.cell_area(),
            "layout": "rows are p ascending, columns are x ascending",
            "total": self.total(),
            "max": self.values.max(),
        })
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// `Q(α) = ⟨α|ρ_B|α⟩/π` with coherent states built in the truncated Fock basis.
///
/// Evaluated as `Σ_k w_k |⟨α|v_k⟩|²/π` over the eigenpairs of ρ_B, dropping
/// eigenvalues below `1e-15 · max w`.
pub fn husimi_q(rho_b: &DMatrix<Complex64>, spec: &GridSpec) -> Result<QGrid> {
    let (w, v) = dense::hermitian_eigen_desc(rho_b);
    let wmax = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let kept: Vec<(f64, Vec<Complex64>)> = w
        .iter()
        .enumerate()
        .filter(|(_, x)| x.abs() > 1e-15 * wmax)
        .map(|(k, &x)| (x, v.column(k).iter().copied().collect()))
        .collect();
    husimi_from_components(&kept, spec)
}

/// Q of `Σ_k w_k |v_k⟩⟨v_k|` with mode vectors `v_k`.
fn husimi_from_components(components: &[(f64, Vec<Complex64>)], spec: &GridSpec) -> Result<QGrid> {
    spec.validate()?;
    let n = components.first().map_or(0, |c| c.1.len());
    let points: Vec<(usize, usize)> = (0..spec.nx).flat_map(|i| (0..spec.np).map(move |j| (i, j))).collect();
    let vals: Vec<f64> = points
        .par_iter()
        .map(|&(i, j)| {
            let alpha = Complex64::new(spec.x(i), spec.p(j)) / std::f64::consts::SQRT_2;
            let c = hilbert::coherent_amplitudes(n, alpha);
            let q: f64 = components
                .iter()
                .map(|(w, v)| {
                    let ov: Complex64 = c.iter().zip(v).map(|(a, b)| a.conj() * b).sum();
                    w * ov.norm_sqr()
                })
                .sum();
            (q / std::f64::consts::PI).max(0.0)
        })
        .collect();
    let mut values = DMatrix::zeros(spec.nx, spec.np);
    for (&(i, j), v) in points.iter().zip(vals) {
        values[(i, j)] = v;
    }
    Ok(QGrid { spec: *spec, values })
}

/// Husimi Q of the mode for a pure state on the full space.
pub fn husimi_q_pure(psi: &[Complex64], space: HilbertSpace, spec: &GridSpec) -> Result<QGrid> {
    let n = space.fock_cutoff();
    let parts: Vec<(f64, Vec<Complex64>)> = (0..2).map(|s| (1.0, psi[s * n..(s + 1) * n].to_vec())).collect();
    husimi_from_components(&parts, spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub x: f64,
    pub p: f64,
    pub height: f64,
    pub i: usize,
    pub j: usize,
    /// Set when the maximum is shared with a neighbour and was resolved lexicographically.
    pub plateau: bool,
}

/// Local maxima above `rel_threshold × max Q`, highest first.
///
/// A point is a maximum when it is strictly above its neighbours with lower `(i, j)`
/// and not below those with higher `(i, j)`, so a plateau yields its lowest point.
pub fn find_peaks(grid: &QGrid, rel_threshold: f64) -> Result<Vec<Peak>> {
    if !(rel_threshold > 0.0 && rel_threshold < 1.0) {
        return Err(Error::invalid("rel_threshold", format!("must lie in (0, 1), got {rel_threshold}")));
    }
    let v = &grid.values;
    let (nx, np) = (grid.spec.nx, grid.spec.np);
    let cut = rel_threshold * v.max();
    let mut peaks = Vec::new();
    for i in 0..nx {
        for j in 0..np {
            let h = v[(i, j)];
            if h <= cut {
                continue;
            }
            let mut is_max = true;
            let mut plateau = false;
            'nb: for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (a, b) = (i as i64 + di, j as i64 + dj);
                    if a < 0 || b < 0 || a >= nx as i64 || b >= np as i64 {
                        continue;
                    }
                    let w = v[(a as usize, b as usize)];
                    let earlier = (a, b) < (i as i64, j as i64);
                    if w > h || (earlier && w == h) {
                        is_max = false;
                        break 'nb;
                    }
                    if w == h {
                        plateau = true;
                    }
                }
            }
            if is_max {
                peaks.push(Peak {
                    x: grid.spec.x(i),
                    p: grid.spec.p(j),
                    height: h,
                    i,
                    j,
                    plateau,
                });
            }
        }
    }
    peaks.sort_by(|a, b| b.height.total_cmp(&a.height).then((a.i, a.j).cmp(&(b.i, b.j))));
    Ok(peaks)
}

/// Eigenbasis of the truncated position quadrature.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadratureBasis {
    /// Eigenvalues of x̂, ascending.
    pub nodes: Vec<f64>,
    /// Column `k` holds the Fock amplitudes of the eigenvector with eigenvalue `nodes[k]`.
    pub vectors: DMatrix<f64>,
}

pub fn quadrature_basis(space: HilbertSpace) -> QuadratureBasis {
    let n = space.fock_cutoff();
    let x = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j {
            (j as f64 / 2.0).sqrt()
        } else if j + 1 == i {
            (i as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(x);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let nodes = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| {
        // sign fixed by a positive vacuum component
        let col = order[c];
        let s = if eig.eigenvectors[(0, col)] < 0.0 { -1.0 } else { 1.0 };
        s * eig.eigenvectors[(r, col)]
    });
    QuadratureBasis { nodes, vectors }
}

/// `P_ψ(s, x_k) = |⟨s, x_k|ψ⟩|²`, stored at index `s * N + k` (s = 0 is spin up).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub values: Vec<f64>,
}

impl Feature {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Feature of the state reflected by x → −x.
    pub fn reflected(&self) -> Feature {
        let n = self.values.len() / 2;
        let values = (0..2 * n).map(|i| {
            let (s, k) = (i / n, i % n);
            self.values[s * n + (n - 1 - k)]
        });
        Feature { values: values.collect() }
    }
}

pub fn eigenstate_feature(basis: &QuadratureBasis, space: HilbertSpace, psi: &[Complex64]) -> Feature {
    let n = space.fock_cutoff();
    let mut values = vec![0.0; 2 * n];
    for s in 0..2 {
        for k in 0..n {
            let amp: Complex64 = (0..n).map(|m| psi[space.index(s, m)] * basis.vectors[(m, k)]).sum();
            values[s * n + k] = amp.norm_sqr();
        }
    }
    Feature { values }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coherent_rho(n: usize, beta: Complex64) -> DMatrix<Complex64> {
        let mut c = hilbert::coherent_amplitudes(n, beta);
        let nrm = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        c.iter_mut().for_each(|z| *z /= nrm);
        hilbert::pure_density(&c)
    }

    #[test]
    fn vacuum_q_is_gaussian() {
        let rho = coherent_rho(12, Complex64::new(0.0, 0.0));
        let spec = GridSpec::square(4.0, 41);
        let q = husimi_q(&rho, &spec).unwrap();
        for i in 0..41 {
            for j in 0..41 {
                let a2 = (spec.x(i).powi(2) + spec.p(j).powi(2)) / 2.0;
                assert!((q.values[(i, j)] - (-a2).exp() / std::f64::consts::PI).abs() < 1e-10);
            }
        }
        assert!((q.total() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn coherent_state_peak_location() {
        let beta = Complex64::new(1.5, -0.7);
        let spec = GridSpec::square(6.0, 121);
        let q = husimi_q(&coherent_rho(40, beta), &spec).unwrap();
        let peaks = find_peaks(&q, 0.05).unwrap();
        assert_eq!(peaks.len(), 1);
        let (x, p) = (beta.re * 2f64.sqrt(), beta.im * 2f64.sqrt());
        assert!((peaks[0].x - x).abs() <= spec.dx() && (peaks[0].p - p).abs() <= spec.dp());
    }

    #[test]
    fn two_gaussians_give_two_peaks() {
        let b = Complex64::new(2.5, 0.0);
        let rho = (coherent_rho(50, b) + coherent_rho(50, -b)).scale(0.5);
        let spec = GridSpec::square(8.0, 81);
        let peaks = find_peaks(&husimi_q(&rho, &spec).unwrap(), 0.05).unwrap();
        assert_eq!(peaks.len(), 2);
        assert!((peaks[0].x.abs() - b.re * 2f64.sqrt()).abs() <= spec.dx());
        assert!((peaks[0].x + peaks[1].x).abs() <= spec.dx());
    }

    #[test]
    fn plateau_resolves_to_lowest_point() {
        let spec = GridSpec::square(1.0, 5);
        let mut values = DMatrix::zeros(5, 5);
        values[(2, 2)] = 1.0;
        values[(2, 3)] = 1.0;
        let peaks = find_peaks(&QGrid { spec, values }, 0.5).unwrap();
        assert_eq!(peaks.len(), 1);
        assert_eq!((peaks[0].i, peaks[0].j), (2, 2));
        assert!(peaks[0].plateau);
    }

    #[test]
    fn partial_trace_of_product_state() {
        let space = HilbertSpace::new(5).unwrap();
        let psi = hilbert::basis_state(space, 1, 0);
        let rb = partial_trace_mode(&hilbert::pure_density(&psi), space);
        assert!((rb[(0, 0)].re - 1.0).abs() < 1e-15);
        assert!((rb.trace().re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quadrature_basis_diagonalizes_x() {
        let space = HilbertSpace::new(15).unwrap();
        let b = quadrature_basis(space);
        let (x, _) = hilbert::mode_quadratures(15);
        let xd = x.to_dense().map(|z| z.re);
        let d = b.vectors.transpose() * &xd * &b.vectors;
        for i in 0..15 {
            for j in 0..15 {
                let e = if i == j { b.nodes[i] } else { 0.0 };
                assert!((d[(i, j)] - e).abs() < 1e-10);
            }
        }
        assert!(b.nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn vacuum_feature_is_symmetric_and_normalized() {
        let space = HilbertSpace::new(20).unwrap();
        let b = quadrature_basis(space);
        let f = eigenstate_feature(&b, space, &hilbert::basis_state(space, 1, 0));
        assert!((f.total() - 1.0).abs() < 1e-10);
        assert!(f.values[..20].iter().all(|&v| v < 1e-15));
        let r = f.reflected();
        assert!(f.values.iter().zip(&r.values).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
