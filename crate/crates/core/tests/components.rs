use nalgebra::DMatrix;
use num_complex::Complex64;
use qrm_core::hilbert::{HilbertSpace, SystemParams};
use qrm_core::liouville;
use qrm_core::metastable::{self, ComponentOptions, ComponentSet, Label, SteadyDecomposition};
use qrm_core::phasespace::{self, GridSpec};

fn superradiant() -> (SystemParams, HilbertSpace, SteadyDecomposition, metastable::Graph) {
    let p = SystemParams::with_lambda_ratio(1.0, 50.0, 1.4, 0.5, 0.05).unwrap();
    let (l, ss) = liouville::tail_validated_steady_state(&p, HilbertSpace::auto(&p), 200, liouville::DEFAULT_MEMORY_BUDGET).unwrap();
    let space = l.space();
    let d = metastable::decompose(&ss.rho, space, metastable::DEFAULT_RANK_TOLERANCE, metastable::DEFAULT_CLUSTER_TOLERANCE).unwrap();
    let basis = phasespace::quadrature_basis(space);
    let g = metastable::similarity_graph(&metastable::features(&d, space, &basis), metastable::DEFAULT_EDGE_THRESHOLD).unwrap();
    (p, space, d, g)
}

fn components(p: &SystemParams, space: HilbertSpace, d: &SteadyDecomposition, g: &metastable::Graph) -> ComponentSet {
    let opts = ComponentOptions {
        grid: GridSpec::auto(p),
        peak_threshold: phasespace::DEFAULT_PEAK_THRESHOLD,
        origin_radius: 1.0,
        expected: 4,
    };
    metastable::detect_components(g, d, space, &opts).unwrap()
}

#[test]
fn components_partition_the_retained_state() {
    let (p, space, d, g) = superradiant();
    let set = components(&p, space, &d, &g);
    let mut sum = DMatrix::<Complex64>::zeros(space.dim(), space.dim());
    for c in &set.components {
        sum += &c.operator;
    }
    assert!((sum - d.retained()).camax() < 1e-12);
    let mut members: Vec<usize> = set.components.iter().flat_map(|c| c.members.clone()).collect();
    members.sort_unstable();
    assert_eq!(members, (0..d.probabilities.len()).collect::<Vec<_>>());

    let again = components(&p, space, &d, &g);
    let groups = |s: &ComponentSet| s.components.iter().map(|c| (c.members.clone(), c.label)).collect::<Vec<_>>();
    assert_eq!(groups(&set), groups(&again));

    let pb1 = set.by_label(Label::ParityBreaking1).expect("x < 0 component");
    let pb2 = set.by_label(Label::ParityBreaking2).expect("x > 0 component");
    assert!(pb1.x < 0.0 && pb2.x > 0.0);
    assert!((pb1.x + pb2.x).abs() < 1e-3 * pb2.x);
    assert!((pb1.trace - pb2.trace).abs() < 1e-3);
}

#[test]
fn lifetime_from_equal_traces() {
    assert!((metastable::lifetime_from_traces(0.3, 0.3, 0.05).unwrap() - 20.0).abs() < 1e-12);
    assert!(metastable::lifetime_from_traces(0.3, 0.0, 0.05).is_err());
}

#[test]
fn modularity_of_two_cliques() {
    let mut edges = Vec::new();
    for base in [0, 3] {
        edges.push((base, base + 1, 1.0));
        edges.push((base, base + 2, 1.0));
        edges.push((base + 1, base + 2, 1.0));
    }
    edges.push((2, 3, 0.1));
    let g = metastable::Graph { nodes: 6, edges };
    let mut groups = metastable::greedy_modularity(&g);
    groups.iter_mut().for_each(|m| m.sort_unstable());
    groups.sort();
    assert_eq!(groups, vec![vec![0, 1, 2], vec![3, 4, 5]]);
    // Q = Σ_c [L_c/m − (d_c/2m)²] with m = 6.1, L_c = 3, d_c = 6.1
    let q = metastable::modularity(&g, &groups);
    let m: f64 = 6.1;
    assert!((q - 2.0 * (3.0 / m - (6.1 / (2.0 * m)).powi(2))).abs() < 1e-12);
}
