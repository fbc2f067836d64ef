use qrm_core::cache::SpectrumCache;
use qrm_core::hilbert::{HilbertSpace, SystemParams};
use qrm_core::liouville::{self, Method, SpectrumOptions};
use qrm_core::scaling::{self, Phase, ScalingSeries, ScanOptions};

fn series(ratios: &[f64], a: f64, b: f64, c: f64, noise: f64) -> ScalingSeries {
    let pts = ratios
        .iter()
        .enumerate()
        .map(|(i, &r)| (r, a + b * r + c * r * r + noise * if i % 2 == 0 { 1.0 } else { -1.0 }))
        .collect();
    ScalingSeries::from_points(pts, None, "synthetic").unwrap()
}

#[test]
fn reference_size_curves_are_recovered() {
    let ratios = [1.0 / 160.0, 1.0 / 80.0, 1.0 / 40.0, 1.0 / 20.0, 1.0 / 10.0];
    let with = scaling::polyfit2(&series(&ratios, 0.0034, 0.068, 1.54, 0.0)).unwrap();
    assert!((with.a - 0.0034).abs() < 1e-12);
    assert!((with.b - 0.068).abs() < 1e-10);
    assert!((with.c - 1.54).abs() < 1e-9);
    let without = scaling::polyfit2(&series(&ratios, 0.0, 0.081, 0.64, 0.0)).unwrap();
    assert!(without.a.abs() < 1e-12);
    assert_eq!(scaling::classify(without.a, 1e-6, 10.0), Phase::Superradiant);
    assert_eq!(scaling::classify(with.a, 1e-6, 10.0), Phase::Metastable);
}

#[test]
fn reference_gamma_curve_vanishes_linearly() {
    let gammas = [0.0, 0.05, 0.1, 0.2, 0.4];
    let s = series(&gammas, 0.0, 0.066, 0.055, 0.0);
    let f = scaling::gamma_dependence(&s).unwrap();
    assert!(f.a.abs() < 1e-12 && (f.b - 0.066).abs() < 1e-10 && (f.c - 0.055).abs() < 1e-9);
    assert_eq!(scaling::classify(f.a, 1e-8, 10.0), Phase::Superradiant);
    for &(g, d) in &s.points[1..] {
        assert!((d / g - 0.066).abs() <= 0.055 * g + 1e-12);
    }
}

#[test]
fn classification_threshold() {
    assert_eq!(scaling::classify(0.0, 0.0, 10.0), Phase::Superradiant);
    assert_eq!(scaling::classify(0.0, 1e-4, 10.0), Phase::Superradiant);
    assert_eq!(scaling::classify(9e-4, 1e-4, 10.0), Phase::Superradiant);
    assert_eq!(scaling::classify(1.1e-3, 1e-4, 10.0), Phase::Metastable);
}

#[test]
fn residual_errors_and_stability() {
    let ratios = [0.0125, 0.025, 0.05, 0.075, 0.1];
    let s = series(&ratios, 0.0034, 0.068, 1.54, 1e-7);
    let f = scaling::polyfit2(&s).unwrap();
    assert_eq!(f.dof, 2);
    let se = f.std_errors().unwrap();
    assert!(se.iter().all(|e| *e > 0.0));
    assert!((f.a - 0.0034).abs() < 5.0 * se[0]);
    let st = scaling::extrapolation_stability(&s).unwrap();
    assert!(st.stable, "{st:?}");
    assert!(scaling::extrapolation_stability(&series(&ratios[..3], 0.0, 1.0, 1.0, 0.0)).is_err());
}

#[test]
fn shift_invert_agrees_with_dense_at_the_smallest_size() {
    let p = SystemParams::with_lambda_ratio(1.0, 20.0, 1.4, 0.5, 0.05).unwrap();
    let l = liouville::build(&p, HilbertSpace::new(12).unwrap()).unwrap();
    let dense = l
        .spectrum(4, &SpectrumOptions {
            method: Method::Dense,
            ..SpectrumOptions::default()
        })
        .unwrap();
    let sparse = l
        .spectrum(4, &SpectrumOptions {
            method: Method::ShiftInvert,
            ..SpectrumOptions::default()
        })
        .unwrap();
    let gd = liouville::gap(&dense, 0.2).unwrap();
    let gs = liouville::gap(&sparse, 0.2).unwrap();
    assert!((gd.delta - gs.delta).abs() < 1e-8 * gd.delta.max(1e-3), "{} vs {}", gd.delta, gs.delta);
    assert_eq!(gd.metastable_dim, gs.metastable_dim);
}

#[test]
fn cached_point_equals_fresh_point() {
    let dir = tempfile::tempdir().unwrap();
    let p = SystemParams::with_lambda_ratio(1.0, 10.0, 1.4, 0.5, 0.05).unwrap();
    let opts = ScanOptions {
        cache: Some(SpectrumCache::new(dir.path()).unwrap()),
        ..ScanOptions::default()
    };
    let fresh = scaling::gap_point(&p, &opts).unwrap();
    let again = scaling::gap_point(&p, &opts).unwrap();
    assert!(!fresh.cached && again.cached);
    assert!((fresh.delta - again.delta).abs() < 1e-12);
    assert_eq!(fresh.fock_cutoff, again.fock_cutoff);
}
