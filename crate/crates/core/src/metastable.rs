//! Principal components of a steady state: eigenstate decomposition, feature
//! similarity graph, greedy modularity communities and lifetime estimates.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{self, HilbertSpace};
use crate::linalg::dense;
use crate::phasespace::{self, Feature, GridSpec, QuadratureBasis};

pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_EDGE_THRESHOLD: f64 = 0.3;
/// Relative spread of probabilities treated as one degenerate cluster.
pub const DEFAULT_CLUSTER_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteadyDecomposition {
    /// Descending.
    pub probabilities: Vec<f64>,
    pub eigenstates: Vec<Vec<Complex64>>,
    pub rank: usize,
}

impl SteadyDecomposition {
    /// `Σᵢ pᵢ |ψᵢ⟩⟨ψᵢ|` over the retained states.
    pub fn retained(&self) -> DMatrix<Complex64> {
        let d = self.eigenstates.first().map_or(0, |v| v.len());
        let mut out = DMatrix::zeros(d, d);
        for (p, psi) in self.probabilities.iter().zip(&self.eigenstates) {
            out += hilbert::pure_density(psi).scale(*p);
        }
        out
    }
}

/// Eigenpairs of ρ_s with `pᵢ > rank_tolerance · Tr ρ_s`.
///
/// Eigenvectors inside a cluster of nearly equal probabilities are rotated to
/// diagonalize x̂ within the cluster, which turns parity cat pairs into their
/// localized components; probabilities are then the diagonal elements of ρ_s.
pub fn decompose(rho: &DMatrix<Complex64>, space: HilbertSpace, rank_tolerance: f64, cluster_tolerance: f64) -> Result<SteadyDecomposition> {
    if rho.nrows() != space.dim() || rho.ncols() != space.dim() {
        return Err(Error::invalid("rho", "shape does not match the Hilbert space"));
    }
    let herm = (rho - rho.adjoint()).camax();
    if herm > 1e-8 {
        return Err(Error::invalid("rho", format!("not Hermitian (deviation {herm:.2e})")));
    }
    let trace = rho.trace().re;
    let (vals, vecs) = dense::hermitian_eigen_desc(rho);
    let keep = vals.iter().take_while(|&&p| p > rank_tolerance * trace).count();
    let x = hilbert::quadratures(space).0.to_dense();

    let mut probabilities = Vec::with_capacity(keep);
    let mut eigenstates = Vec::with_capacity(keep);
    let mut start = 0;
    while start < keep {
        let mut end = start + 1;
        while end < keep && (vals[start] - vals[end]) <= cluster_tolerance * vals[start] {
            end += 1;
        }
        let block = vecs.columns(start, end - start).into_owned();
        let rotated = if end - start > 1 {
            let m = block.adjoint() * &x * &block;
            let (_, u) = dense::hermitian_eigen_desc(&m);
            &block * u
        } else {
            block
        };
        for c in 0..rotated.ncols() {
            let v: DVector<Complex64> = rotated.column(c).into_owned();
            let p = (v.adjoint() * rho * &v)[(0, 0)].re;
            probabilities.push(p);
            eigenstates.push(fix_phase(v.iter().copied().collect()));
        }
        start = end;
    }
    // rotation may reorder probabilities slightly within a cluster
    let mut idx: Vec<usize> = (0..probabilities.len()).collect();
    idx.sort_by(|&a, &b| probabilities[b].total_cmp(&probabilities[a]).then(a.cmp(&b)));
    Ok(SteadyDecomposition {
        probabilities: idx.iter().map(|&i| probabilities[i]).collect(),
        eigenstates: idx.iter().map(|&i| eigenstates[i].clone()).collect(),
        rank: keep,
    })
}

/// Global phase chosen so the largest amplitude is real and positive.
fn fix_phase(mut v: Vec<Complex64>) -> Vec<Complex64> {
    if let Some(big) = v.iter().copied().max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr())) {
        if big.norm() > 0.0 {
            let ph = big.conj() / big.norm();
            v.iter_mut().for_each(|z| *z *= ph);
        }
    }
    v
}

/// `F = (Σ √(Pᵢ Qᵢ))²`.
pub fn fidelity(a: &Feature, b: &Feature) -> f64 {
    let s: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x.max(0.0) * y.max(0.0)).sqrt()).sum();
    (s * s).min(1.0)
}

pub fn features(decomp: &SteadyDecomposition, space: HilbertSpace, basis: &QuadratureBasis) -> Vec<Feature> {
    decomp
        .eigenstates
        .par_iter()
        .map(|psi| phasespace::eigenstate_feature(basis, space, psi))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub nodes: usize,
    /// `(i, j, weight)` with `i < j`.
    pub edges: Vec<(usize, usize, f64)>,
}

/// Edge `(i, j)` with weight `F(Pᵢ, Pⱼ)` whenever `F > threshold`.
pub fn similarity_graph(features: &[Feature], threshold: f64) -> Result<Graph> {
    if features.len() < 2 {
        return Err(Error::invalid("features", "need at least two eigenstates"));
    }
    let n = features.len();
    let edges: Vec<(usize, usize, f64)> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            (i + 1..n).filter_map(move |j| {
                let f = fidelity(&features[i], &features[j]);
                (f > threshold).then_some((i, j, f))
            })
        })
        .collect();
    Ok(Graph { nodes: n, edges })
}

/// Greedy agglomerative modularity maximization (Clauset–Newman–Moore).
///
/// Starts from singletons and repeatedly merges the pair of adjacent communities
/// with the largest modularity gain while it is positive; ties go to the pair
/// with the smallest indices. Communities are returned in order of their smallest
/// member.
pub fn greedy_modularity(graph: &Graph) -> Vec<Vec<usize>> {
    let n = graph.nodes;
    let total: f64 = graph.edges.iter().map(|e| e.2).sum();
    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    if total <= 0.0 {
        return members.into_iter().flatten().collect();
    }
    let two_m = 2.0 * total;
    let mut a = vec![0.0; n];
    // e[i][j]: fraction of edge ends joining communities i and j (i ≠ j), each direction
    let mut e: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    for &(i, j, w) in &graph.edges {
        a[i] += w / two_m;
        a[j] += w / two_m;
        *e[i].entry(j).or_insert(0.0) += w / two_m;
        *e[j].entry(i).or_insert(0.0) += w / two_m;
    }
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            for (&j, &eij) in &e[i] {
                if j <= i {
                    continue;
                }
                let dq = 2.0 * (eij - a[i] * a[j]);
                if best.is_none_or(|(b, _, _)| dq > b + 1e-15) {
                    best = Some((dq, i, j));
                }
            }
        }
        let Some((dq, i, j)) = best else { break };
        if dq <= 1e-15 {
            break;
        }
        // merge j into i
        let row_j = std::mem::take(&mut e[j]);
        for (k, w) in row_j {
            e[k].remove(&j);
            if k != i {
                *e[i].entry(k).or_insert(0.0) += w;
                *e[k].entry(i).or_insert(0.0) += w;
            }
        }
        e[i].remove(&j);
        a[i] += a[j];
        a[j] = 0.0;
        let mj = members[j].take().unwrap();
        members[i].as_mut().unwrap().extend(mj);
    }
    let mut out: Vec<Vec<usize>> = members.into_iter().flatten().collect();
    out.iter_mut().for_each(|g| g.sort_unstable());
    out.sort_by_key(|g| g[0]);
    out
}

/// Newman modularity of a partition.
pub fn modularity(graph: &Graph, groups: &[Vec<usize>]) -> f64 {
    let total: f64 = graph.edges.iter().map(|e| e.2).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mut label = vec![0; graph.nodes];
    for (g, m) in groups.iter().enumerate() {
        m.iter().for_each(|&i| label[i] = g);
    }
    let mut inside = vec![0.0; groups.len()];
    let mut degree = vec![0.0; groups.len()];
    for &(i, j, w) in &graph.edges {
        degree[label[i]] += w;
        degree[label[j]] += w;
        if label[i] == label[j] {
            inside[label[i]] += w;
        }
    }
    inside
        .iter()
        .zip(&degree)
        .map(|(l, d)| l / total - (d / (2.0 * total)).powi(2))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    ParityBreaking1,
    ParityBreaking2,
    Spiral,
    Sigmoid,
    Other,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Component {
    pub members: Vec<usize>,
    pub label: Label,
    pub trace: f64,
    /// ⟨σ_z⟩ of the normalized component.
    pub sigma_z: f64,
    /// ⟨x̂⟩ of the normalized component.
    pub x: f64,
    /// Peaks of the component's Q distribution, highest first.
    pub peaks: Vec<(f64, f64)>,
    #[serde(skip)]
    pub operator: DMatrix<Complex64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentSet {
    pub components: Vec<Component>,
    pub modularity: f64,
    pub warning: Option<String>,
}

impl ComponentSet {
    pub fn by_label(&self, label: Label) -> Option<&Component> {
        self.components.iter().find(|c| c.label == label)
    }
}

#[derive(Debug, Clone)]
pub struct ComponentOptions {
    pub grid: GridSpec,
    pub peak_threshold: f64,
    /// Minimum peak distance from the origin, in x, for a parity-breaking component.
    pub origin_radius: f64,
    pub expected: usize,
}

/// Groups eigenstates by community, builds `ρ^c_l = Σ_{i∈g_l} pᵢ|ψᵢ⟩⟨ψᵢ|` and labels them.
///
/// A component whose Q has a single peak farther than `origin_radius` from the
/// origin is parity breaking (1 for x < 0, 2 for x > 0). Among the remaining
/// components, the heaviest with ⟨σ_z⟩ > 0 is the spiral and the heaviest with
/// ⟨σ_z⟩ ≤ 0 the sigmoid.
pub fn detect_components(graph: &Graph, decomp: &SteadyDecomposition, space: HilbertSpace, opts: &ComponentOptions) -> Result<ComponentSet> {
    if graph.nodes != decomp.probabilities.len() {
        return Err(Error::invalid("graph", "node count differs from the decomposition"));
    }
    let groups = greedy_modularity(graph);
    let q = modularity(graph, &groups);
    let sz = hilbert::sigma_z(space).to_dense();
    let x = hilbert::quadratures(space).0.to_dense();
    let d = space.dim();
    let mut components = Vec::with_capacity(groups.len());
    for members in groups {
        let mut op = DMatrix::<Complex64>::zeros(d, d);
        for &i in &members {
            op += hilbert::pure_density(&decomp.eigenstates[i]).scale(decomp.probabilities[i]);
        }
        let trace = op.trace().re;
        let norm = if trace > 0.0 { trace } else { 1.0 };
        let sigma_z = (&sz * &op).trace().re / norm;
        let xm = (&x * &op).trace().re / norm;
        let rb = phasespace::partial_trace_mode(&op, space).unscale(norm);
        let grid = phasespace::husimi_q(&rb, &opts.grid)?;
        let peaks = phasespace::find_peaks(&grid, opts.peak_threshold)?;
        components.push(Component {
            members,
            label: Label::Other,
            trace,
            sigma_z,
            x: xm,
            peaks: peaks.iter().map(|p| (p.x, p.p)).collect(),
            operator: op,
        });
    }
    for c in &mut components {
        if c.peaks.len() == 1 && c.peaks[0].0.abs() > opts.origin_radius {
            c.label = if c.peaks[0].0 < 0.0 { Label::ParityBreaking1 } else { Label::ParityBreaking2 };
        }
    }
    // at most one of each parity-breaking label: keep the heaviest
    for label in [Label::ParityBreaking1, Label::ParityBreaking2] {
        let mut idx: Vec<usize> = (0..components.len()).filter(|&i| components[i].label == label).collect();
        idx.sort_by(|&a, &b| components[b].trace.total_cmp(&components[a].trace));
        for &i in idx.iter().skip(1) {
            components[i].label = Label::Other;
        }
    }
    let mut rest: Vec<usize> = (0..components.len()).filter(|&i| components[i].label == Label::Other).collect();
    rest.sort_by(|&a, &b| components[b].trace.total_cmp(&components[a].trace).then(a.cmp(&b)));
    if let Some(&i) = rest.iter().find(|&&i| components[i].sigma_z > 0.0) {
        components[i].label = Label::Spiral;
    }
    if let Some(&i) = rest.iter().find(|&&i| components[i].sigma_z <= 0.0) {
        components[i].label = Label::Sigmoid;
    }
    let warning = (components.len() != opts.expected)
        .then(|| format!("found {} components, expected {}", components.len(), opts.expected));
    Ok(ComponentSet {
        components,
        modularity: q,
        warning,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LifetimeEstimate {
    /// `(l, l′, Tr ρ^c_l / Tr ρ^c_l′)` over ordered pairs of labelled components.
    pub ratios: Vec<(Label, Label, f64)>,
    pub t_m: f64,
}

/// `T_m = (Tr ρ^c_PB / Tr ρ^c_spiral) / γ`.
pub fn lifetime_estimate(set: &ComponentSet, gamma: f64) -> Result<LifetimeEstimate> {
    if gamma <= 0.0 {
        return Err(Error::invalid("gamma", "the estimate needs γ > 0"));
    }
    let spiral = set
        .by_label(Label::Spiral)
        .ok_or_else(|| Error::Analysis("no spiral component identified".into()))?;
    let pb = set
        .by_label(Label::ParityBreaking1)
        .or_else(|| set.by_label(Label::ParityBreaking2))
        .ok_or_else(|| Error::Analysis("no parity-breaking component identified".into()))?;
    lifetime_from_traces(pb.trace, spiral.trace, gamma).map(|t_m| {
        let labelled: Vec<&Component> = set.components.iter().filter(|c| c.label != Label::Other).collect();
        let mut ratios = Vec::new();
        for a in &labelled {
            for b in &labelled {
                if a.label != b.label && b.trace > 0.0 {
                    ratios.push((a.label, b.label, a.trace / b.trace));
                }
            }
        }
        LifetimeEstimate { ratios, t_m }
    })
}

pub fn lifetime_from_traces(pb_trace: f64, spiral_trace: f64, gamma: f64) -> Result<f64> {
    if spiral_trace <= 0.0 || pb_trace <= 0.0 || gamma <= 0.0 {
        return Err(Error::Analysis("lifetime needs positive traces and γ".into()));
    }
    Ok(pb_trace / spiral_trace / gamma)
}
