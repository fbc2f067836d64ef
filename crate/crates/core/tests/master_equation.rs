use nalgebra::DMatrix;
use num_complex::Complex64;
use qrm_core::hilbert::{self, HilbertSpace, SystemParams};
use qrm_core::linalg::dense;
use qrm_core::liouville::{self, Method, SpectrumOptions};
use qrm_core::ode::OdeOptions;

fn params(omega: f64, lambda_ratio: f64) -> SystemParams {
    SystemParams::with_lambda_ratio(1.0, omega, lambda_ratio, 0.5, 0.05).unwrap()
}

/// Pairs every computed eigenvalue with a distinct expected one.
fn assert_same_multiset(mut got: Vec<Complex64>, mut expected: Vec<Complex64>, tol: f64) {
    assert_eq!(got.len(), expected.len());
    let key = |z: &Complex64| (z.re * 1e6).round() as i64 * 1_000_000_000 + (z.im * 1e6).round() as i64;
    got.sort_by_key(key);
    expected.sort_by_key(key);
    for e in &expected {
        let (i, d) = got
            .iter()
            .enumerate()
            .map(|(i, g)| (i, (g - e).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert!(d < tol, "{e} unmatched (closest off by {d:e})");
        got.swap_remove(i);
    }
}

#[test]
fn decoupled_spectrum_is_a_sum_of_mode_and_spin_parts() {
    let (w0, w, k, g) = (1.0, 2.3, 0.5, 0.05);
    let p = SystemParams::new(w0, w, 0.0, k, g).unwrap();
    let n = 6;
    let l = liouville::build(&p, HilbertSpace::new(n).unwrap()).unwrap();
    let (values, _) = dense::eigen(&l.generator().to_dense());
    let spin = [
        Complex64::new(0.0, 0.0),
        Complex64::new(-2.0 * g, 0.0),
        Complex64::new(-g, w),
        Complex64::new(-g, -w),
    ];
    let mut expected = Vec::new();
    for a in 0..n {
        for b in 0..n {
            let mode = Complex64::new(-k * (a + b) as f64, -w0 * (a as f64 - b as f64));
            expected.extend(spin.iter().map(|s| mode + s));
        }
    }
    assert_same_multiset(values, expected, 1e-9);
}

#[test]
fn decoupled_gap_is_the_spin_coherence_rate() {
    let p = SystemParams::new(1.0, 2.3, 0.0, 0.5, 0.05).unwrap();
    let l = liouville::build(&p, HilbertSpace::new(6).unwrap()).unwrap();
    let spec = l.spectrum(6, &SpectrumOptions { method: Method::Dense, ..Default::default() }).unwrap();
    let g = liouville::gap(&spec, 0.2).unwrap();
    assert!((g.delta - 0.05).abs() < 1e-10);
    assert!((g.lambda1.im.abs() - 2.3).abs() < 1e-10);
    let ss = l.steady_state().unwrap();
    let ground = hilbert::pure_density(&hilbert::basis_state(l.space(), 1, 0));
    assert!((&ss.rho - ground).camax() < 1e-10);
}

#[test]
fn gap_is_continuous_near_zero_coupling() {
    let gaps: Vec<f64> = [0.0, 0.01, 0.02]
        .iter()
        .map(|&lam| {
            let p = SystemParams::new(1.0, 2.3, lam, 0.5, 0.05).unwrap();
            let l = liouville::build(&p, HilbertSpace::new(8).unwrap()).unwrap();
            liouville::gap(&l.spectrum(6, &SpectrumOptions::default()).unwrap(), 0.2).unwrap().delta
        })
        .collect();
    assert!((gaps[1] - gaps[0]).abs() < 1e-3 && (gaps[2] - gaps[1]).abs() < 1e-3, "{gaps:?}");
    // quadratic onset: the second difference is of the same size as the first
    assert!((gaps[2] - 2.0 * gaps[1] + gaps[0]).abs() <= 2.0 * (gaps[2] - gaps[0]).abs() + 1e-12);
}

#[test]
fn normal_phase_steady_state_keeps_parity() {
    let p = params(1200.0, 0.6);
    let (l, ss) = liouville::tail_validated_steady_state(&p, HilbertSpace::auto(&p), 100, liouville::DEFAULT_MEMORY_BUDGET).unwrap();
    let (x, pq) = hilbert::quadratures(l.space());
    assert!(x.expect(&ss.rho).norm() < 1e-8);
    assert!(pq.expect(&ss.rho).norm() < 1e-8);
    assert!(!ss.truncation_flag);
}

#[test]
fn spectrum_invariants_and_dense_agreement() {
    let p = params(4.0, 1.4);
    let l = liouville::build(&p, HilbertSpace::new(8).unwrap()).unwrap();
    let si = l.spectrum(8, &SpectrumOptions { method: Method::ShiftInvert, ..Default::default() }).unwrap();
    let (all, _) = dense::eigen(&l.generator().to_dense());
    assert!(all.iter().all(|z| z.re <= 1e-8));
    assert!(si.eigenvalues[0].norm() < 1e-10);
    let ss = l.steady_state().unwrap();
    assert!((&si.right_states[0] - &ss.rho).camax() < 1e-8);
    for z in &si.eigenvalues {
        let nearest = all.iter().map(|w| (z - w).norm()).fold(f64::MAX, f64::min);
        assert!(nearest < 1e-8, "{z}");
        if z.im.abs() > 1e-8 {
            assert!(si.eigenvalues.iter().any(|w| (w - z.conj()).norm() < 1e-8), "{z} has no partner");
        }
    }
    for (i, rl) in si.left_states.iter().enumerate() {
        for (j, rr) in si.right_states.iter().enumerate() {
            let ip = (rl.adjoint() * rr).trace();
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!((ip - Complex64::new(expect, 0.0)).norm() < 1e-6, "({i},{j}) {ip}");
        }
    }
}

#[test]
fn propagation_preserves_physicality() {
    let p = params(4.0, 1.4);
    let space = HilbertSpace::new(12).unwrap();
    let l = liouville::build(&p, space).unwrap();
    let ss = l.steady_state().unwrap();
    let opts = OdeOptions { rtol: 1e-10, atol: 1e-12, ..Default::default() };
    let times = [0.0, 1.0, 5.0, 20.0];
    for r in l.propagate(&ss.rho, &times, &opts).unwrap() {
        assert!((&r - &ss.rho).camax() < 1e-8);
    }
    let psi = hilbert::product_coherent_state(space, Complex64::new(1.0, 0.5), Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8));
    for r in l.propagate(&hilbert::pure_density(&psi), &times, &opts).unwrap() {
        let purity = (&r * &r).trace().re;
        assert!(purity <= 1.0 + 1e-10);
        assert!((&r - r.adjoint()).camax() < 1e-10);
        assert!((r.trace().re - 1.0).abs() < 1e-9);
    }
}

#[test]
fn trace_and_parity_are_preserved_by_the_generator() {
    let p = params(10.0, 1.4);
    let l = liouville::build(&p, HilbertSpace::new(14).unwrap()).unwrap();
    let d = l.space().dim();
    let id = liouville::vectorize(&DMatrix::identity(d, d));
    assert!(l.generator().adjoint_mul_vec(&id).iter().all(|z| z.norm() < 1e-10));
    let par = l.parity_superoperator();
    assert!(par.matmul(l.generator()).sub(&l.generator().matmul(&par)).max_abs() < 1e-10);
}
