//! Command implementations. Each writes its artifacts into the output directory and
//! records their file names; `dispatch` adds the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use num_complex::Complex64;
use qrm_core::cache::{self, SpectrumCache};
use qrm_core::cumulant::{self, NewtonOptions};
use qrm_core::hilbert::{self, HilbertSpace, SystemParams};
use qrm_core::liouville::{self, Liouvillian, Method, SpectrumOptions, SteadyState};
use qrm_core::meanfield::{self, Branch, MfState, SettleOptions};
use qrm_core::metastable::{self, ComponentOptions};
use qrm_core::phasespace::{self, GridSpec};
use qrm_core::scaling::{self, ScalingSeries, ScanOptions};
use qrm_core::trajectory::{self, Propagator, TrajectoryConfig};
use serde::Serialize;
use serde_json::json;

use crate::config::{ConfigError, RunConfig};
use crate::Command;

/// Exit status for an error: 2 validation, 3 non-convergence, 4 resource budget, 1 otherwise.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<qrm_core::Error>() {
        Some(qrm_core::Error::InvalidParameter { .. }) => 2,
        Some(qrm_core::Error::NonConvergence { .. } | qrm_core::Error::Stiffness { .. } | qrm_core::Error::StepTooLarge { .. }) => 3,
        Some(qrm_core::Error::Resource(_)) => 4,
        _ => 1,
    }
}

/// Output directory plus the list of artifacts written so far.
struct Output {
    dir: PathBuf,
    artifacts: Vec<String>,
    notes: BTreeMap<String, serde_json::Value>,
}

impl Output {
    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.dir.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| path.display().to_string())
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, text).with_context(|| path.display().to_string())
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| path.display().to_string())?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush()?;
        Ok(())
    }

    fn note(&mut self, key: &str, value: serde_json::Value) {
        self.notes.insert(key.to_string(), value);
    }
}

fn num(v: f64) -> String {
    format!("{v:.15e}")
}

/// Runs `command` and writes `manifest-<command>.json`; returns the manifest path.
pub fn dispatch(command: Command, cfg: &RunConfig) -> Result<PathBuf> {
    let start = Instant::now();
    fs::create_dir_all(&cfg.output_dir).map_err(|e| ConfigError {
        key: "output_dir".into(),
        reason: format!("{}: {e}", cfg.output_dir.display()),
    })?;
    let probe = cfg.output_dir.join(".qrm-write-probe");
    fs::write(&probe, b"").map_err(|e| ConfigError {
        key: "output_dir".into(),
        reason: format!("not writable: {e}"),
    })?;
    let _ = fs::remove_file(&probe);
    // A second call in the same process (tests) finds the pool already built.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();

    let mut out = Output {
        dir: cfg.output_dir.clone(),
        artifacts: Vec::new(),
        notes: BTreeMap::new(),
    };
    match command {
        Command::Steady => steady(cfg, &mut out)?,
        Command::Gap => gap(cfg, &mut out)?,
        Command::Spectrum => spectrum(cfg, &mut out)?,
        Command::Qfunc => qfunc(cfg, &mut out)?,
        Command::Meanfield => meanfield_cmd(cfg, &mut out)?,
        Command::Cumulant => cumulant_cmd(cfg, &mut out)?,
        Command::Pca => pca(cfg, &mut out)?,
        Command::Trajectory => trajectory_cmd(cfg, &mut out)?,
        Command::Scan => scan(cfg, &mut out)?,
        Command::Fit => fit(cfg, &mut out)?,
    }
    let manifest = json!({
        "command": command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "wall_time_s": start.elapsed().as_secs_f64(),
        "artifacts": out.artifacts,
        "resolved": out.notes,
    });
    let path = cfg.output_dir.join(format!("manifest-{}.json", command.name()));
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

fn method(name: &str) -> Method {
    match name {
        "dense" => Method::Dense,
        "shift-invert" => Method::ShiftInvert,
        _ => Method::Auto,
    }
}

/// Liouvillian and steady state on the configured cutoff, or on the smallest
/// automatic cutoff whose Fock tail is below tolerance.
fn steady_problem(cfg: &RunConfig, params: &SystemParams) -> Result<(Liouvillian, SteadyState)> {
    match cfg.fixed_space() {
        Some(space) => {
            let l = liouville::build_with_budget(params, space, cfg.memory_budget())?;
            let ss = l.steady_state()?;
            Ok((l, ss))
        }
        None => Ok(liouville::tail_validated_steady_state(
            params,
            HilbertSpace::auto(params),
            cfg.params.max_fock_cutoff,
            cfg.memory_budget(),
        )?),
    }
}

fn note_space(out: &mut Output, ss: &SteadyState, space: HilbertSpace) {
    out.note("fock_cutoff", json!(space.fock_cutoff()));
    out.note("tail_mass", json!(ss.tail_mass));
    if ss.truncation_flag {
        log::warn!("Fock tail population {:.2e} exceeds tolerance at N = {}", ss.tail_mass, space.fock_cutoff());
        out.note("truncation_warning", json!(true));
    }
}

fn steady(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let params = cfg.system_params()?;
    let (l, ss) = steady_problem(cfg, &params)?;
    let space = l.space();
    note_space(out, &ss, space);
    let (x, p) = hilbert::quadratures(space);
    let expect = |op: hilbert::Operator| op.expect(&ss.rho).re;
    out.json(
        "steady.json",
        &json!({
            "fock_cutoff": space.fock_cutoff(),
            "residual": ss.residual,
            "min_eigenvalue": ss.min_eigenvalue,
            "iterations": ss.iterations,
            "tail_mass": ss.tail_mass,
            "truncation_flag": ss.truncation_flag,
            "sigma_x": expect(hilbert::sigma_x(space)),
            "sigma_y": expect(hilbert::sigma_y(space)),
            "sigma_z": expect(hilbert::sigma_z(space)),
            "x": expect(x),
            "p": expect(p),
            "photons": expect(hilbert::number(space)),
            "parity": expect(hilbert::parity(space)),
        }),
    )?;
    let rho_b = phasespace::partial_trace_mode(&ss.rho, space);
    out.csv(
        "photon_distribution.csv",
        &["n", "probability"],
        (0..space.fock_cutoff()).map(|n| vec![n.to_string(), num(rho_b[(n, n)].re)]),
    )
}

fn scan_options(cfg: &RunConfig, k: usize, ratio_threshold: f64, method_name: &str) -> Result<ScanOptions> {
    Ok(ScanOptions {
        k,
        ratio_threshold,
        spectrum: SpectrumOptions {
            method: method(method_name),
            ..Default::default()
        },
        max_cutoff: cfg.params.max_fock_cutoff,
        memory_budget: cfg.memory_budget(),
        cache: cfg.cache_dir.as_ref().map(SpectrumCache::new).transpose()?,
    })
}

fn gap(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let params = cfg.system_params()?;
    let (l, ss) = steady_problem(cfg, &params)?;
    note_space(out, &ss, l.space());
    let opts = scan_options(cfg, cfg.gap.k, cfg.gap.ratio_threshold, &cfg.gap.method)?;
    let (spec, hit) = cached_spectrum(&l, &params, cfg.gap.k, &opts)?;
    let g = liouville::gap(&spec, cfg.gap.ratio_threshold)?;
    if let Some(w) = &g.warning {
        log::warn!("{w}");
    }
    out.note("cache_hit", json!(hit));
    out.json(
        "gap.json",
        &json!({
            "fock_cutoff": l.space().fock_cutoff(),
            "delta": g.delta,
            "lifetime": 1.0 / g.delta,
            "lambda1": [g.lambda1.re, g.lambda1.im],
            "metastable_dim": g.metastable_dim,
            "warning": g.warning,
            "eigenvalues": spec.eigenvalues.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
            "residuals": spec.residuals,
        }),
    )
}

fn cached_spectrum(l: &Liouvillian, params: &SystemParams, k: usize, opts: &ScanOptions) -> Result<(liouville::SpectralData, bool)> {
    let key = cache::spectrum_key(params, l.space(), k, opts.spectrum.method, opts.spectrum.shifts.as_deref());
    if let Some(c) = &opts.cache {
        if let Some(s) = c.load(&key)? {
            return Ok((s, true));
        }
    }
    let s = l.spectrum(k, &opts.spectrum)?;
    if let Some(c) = &opts.cache {
        c.store(&key, &s)?;
    }
    Ok((s, false))
}

fn spectrum(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let params = cfg.system_params()?;
    let (l, ss) = steady_problem(cfg, &params)?;
    note_space(out, &ss, l.space());
    let opts = scan_options(cfg, cfg.spectrum.k, cfg.gap.ratio_threshold, &cfg.spectrum.method)?;
    let (spec, hit) = cached_spectrum(&l, &params, cfg.spectrum.k, &opts)?;
    out.note("cache_hit", json!(hit));
    let path = out.path("spectrum.csv");
    cache::write_spectrum_csv(&path, &[(params, spec.clone())])?;
    if cfg.spectrum.write_states {
        let d = l.space().dim();
        for (i, rho) in spec.right_states.iter().enumerate() {
            out.csv(
                &format!("right_state_{i}.csv"),
                &["row", "col", "re", "im"],
                (0..d).flat_map(|r| (0..d).map(move |c| (r, c))).map(|(r, c)| {
                    let z = rho[(r, c)];
                    vec![r.to_string(), c.to_string(), num(z.re), num(z.im)]
                }),
            )?;
        }
    }
    Ok(())
}

fn qfunc_grid(cfg: &RunConfig, params: &SystemParams) -> GridSpec {
    match cfg.qfunc.half_width {
        Some(h) => GridSpec::square(h, cfg.qfunc.points),
        None => GridSpec {
            nx: cfg.qfunc.points,
            np: cfg.qfunc.points,
            ..GridSpec::auto(params)
        },
    }
}

fn qfunc(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let params = cfg.system_params()?;
    let (l, ss) = steady_problem(cfg, &params)?;
    let space = l.space();
    note_space(out, &ss, space);
    let rho_b = phasespace::partial_trace_mode(&ss.rho, space);
    let grid = phasespace::husimi_q(&rho_b, &qfunc_grid(cfg, &params))?;
    if let Some(w) = grid.coverage_warning() {
        log::warn!("{w}");
    }
    let peaks = phasespace::find_peaks(&grid, cfg.qfunc.peak_threshold)?;
    grid.write_csv(&out.path("qfunc.csv"), None)?;
    grid.write_csv(&out.path("qfunc_log10.csv"), Some(cfg.qfunc.log_floor))?;
    let mut side = grid.sidecar();
    side["peaks"] = serde_json::to_value(&peaks)?;
    side["fock_cutoff"] = json!(space.fock_cutoff());
    out.json("qfunc.json", &side)
}

fn meanfield_cmd(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let params = cfg.system_params()?;
    let fps = meanfield::fixed_points(&params);
    out.json(
        "fixed_points.json",
        &json!({
            "critical_coupling": meanfield::critical_coupling(&params),
            "lambda": params.lambda,
            "displacement": meanfield::displacement(&params),
            "fixed_points": fps,
        }),
    )?;
    let m = &cfg.meanfield;
    let opts = SettleOptions {
        t_max: m.t_max,
        rtol: m.rtol,
        ..Default::default()
    };
    let mut starts: Vec<(String, f64, MfState)> = Vec::new();
    if matches!(m.quench.as_str(), "np" | "both") {
        starts.extend(m.thetas.iter().map(|&th| ("np".to_string(), th, meanfield::quench_np(m.r, th))));
    }
    if matches!(m.quench.as_str(), "smp" | "both") {
        if let Some(fp) = fps.iter().find(|f| f.branch == Branch::ParityBreakingMinus && f.physical) {
            starts.extend(m.thetas.iter().map(|&th| ("smp".to_string(), th, meanfield::quench_smp(&fp.state, th))));
        } else {
            log::warn!("no physical parity-breaking fixed point; skipping SMP quenches");
        }
    }
    let mut rows = Vec::new();
    let mut samples = Vec::new();
    for (i, (kind, th, s0)) in starts.iter().enumerate() {
        let settled = meanfield::settle(&params, *s0, &opts)?;
        let v = serde_json::to_value(&settled)?;
        rows.push(vec![
            kind.clone(),
            num(*th),
            v["outcome"].as_str().unwrap_or("").to_string(),
            v.get("branch").and_then(|b| b.as_str()).unwrap_or("").to_string(),
            v.get("time").and_then(|t| t.as_f64()).map(num).unwrap_or_default(),
        ]);
        let traj = meanfield::integrate(&params, *s0, m.t_max, m.rtol, m.samples - 1)?;
        for (t, s) in traj.times.iter().zip(&traj.states) {
            samples.push(vec![i.to_string(), kind.clone(), num(*th), num(*t), num(s.x), num(s.p), num(s.sx), num(s.sy), num(s.sz)]);
        }
    }
    out.csv("quench.csv", &["kind", "theta", "outcome", "branch", "settle_time"], rows)?;
    out.csv("quench_trajectories.csv", &["run", "kind", "theta", "t", "x", "p", "sigma_x", "sigma_y", "sigma_z"], samples)
}

fn cumulant_seed(cfg: &RunConfig, params: &SystemParams) -> Result<MfState> {
    let fps = meanfield::fixed_points(params);
    let pick = |b: Branch| fps.iter().find(|f| f.branch == b && f.physical).map(|f| f.state);
    let seed = match cfg.cumulant.branch.as_str() {
        "np" => pick(Branch::ParityPreserving),
        "plus" => pick(Branch::ParityBreakingPlus),
        "minus" => pick(Branch::ParityBreakingMinus),
        _ => pick(Branch::ParityBreakingMinus).or_else(|| pick(Branch::ParityPreserving)),
    };
    seed.ok_or_else(|| {
        ConfigError {
            key: "cumulant.branch".into(),
            reason: format!("no physical {} fixed point at these parameters", cfg.cumulant.branch),
        }
        .into()
    })
}

fn cumulant_cmd(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let params = cfg.system_params()?;
    let order = cfg.cumulant.order;
    let system = cumulant::build_system(&params, order)?;
    out.text("equations.txt", &system.to_string())?;
    let seed = cumulant_seed(cfg, &params)?;
    let opts = NewtonOptions {
        tol: cfg.cumulant.tol,
        max_iter: cfg.cumulant.max_iter,
    };
    let sol = match cumulant::steady_solve(&system, &seed, &opts) {
        Ok(s) => s,
        Err(e) => {
            // the failed solve is itself a result worth keeping
            out.json("cumulant_failure.json", &json!({ "order": order, "error": e.to_string() }))?;
            return Err(e.into());
        }
    };
    out.note("newton_iterations", json!(sol.iterations));
    out.csv(
        "cumulants.csv",
        &["symbol", "value"],
        sol.values.iter().map(|(s, v)| vec![s.to_string(), num(*v)]),
    )?;
    out.csv(
        "x_cumulants.csv",
        &["order", "value", "magnitude"],
        (1..=order).map(|n| {
            let v = sol.x_cumulant(n);
            vec![n.to_string(), num(v), num(v.abs())]
        }),
    )?;
    out.json(
        "cumulant.json",
        &json!({
            "order": order,
            "residual": sol.residual,
            "iterations": sol.iterations,
            "residual_trace": sol.residual_trace,
        }),
    )
}

fn pca(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let params = cfg.system_params()?;
    let (l, ss) = steady_problem(cfg, &params)?;
    let space = l.space();
    note_space(out, &ss, space);
    let c = &cfg.pca;
    let decomp = metastable::decompose(&ss.rho, space, c.rank_tolerance, c.cluster_tolerance)?;
    let basis = phasespace::quadrature_basis(space);
    let feats = metastable::features(&decomp, space, &basis);
    let graph = metastable::similarity_graph(&feats, c.edge_threshold)?;
    let opts = ComponentOptions {
        grid: GridSpec {
            nx: c.grid_points,
            np: c.grid_points,
            ..GridSpec::auto(&params)
        },
        peak_threshold: c.peak_threshold,
        origin_radius: 1.0,
        expected: c.expected_components,
    };
    let set = metastable::detect_components(&graph, &decomp, space, &opts)?;
    if let Some(w) = &set.warning {
        log::warn!("{w}");
    }
    let lifetime = metastable::lifetime_estimate(&set, params.gamma).map_err(|e| log::warn!("no lifetime estimate: {e}")).ok();
    out.csv(
        "probabilities.csv",
        &["index", "probability"],
        decomp.probabilities.iter().enumerate().map(|(i, p)| vec![i.to_string(), num(*p)]),
    )?;
    out.json(
        "components.json",
        &json!({
            "rank": decomp.rank,
            "edges": graph.edges.len(),
            "modularity": set.modularity,
            "warning": set.warning,
            "components": set.components,
            "lifetime": lifetime,
        }),
    )
}

/// Space and initial state of the trajectory command.
fn initial_state(cfg: &RunConfig, params: &SystemParams) -> Result<(HilbertSpace, Vec<Complex64>)> {
    let fixed = || cfg.fixed_space().unwrap_or_else(|| HilbertSpace::auto(params));
    match cfg.trajectory.initial.as_str() {
        "normal" => {
            let space = fixed();
            Ok((space, hilbert::basis_state(space, 1, 0)))
        }
        "steady-eigenstate" => {
            let (l, ss) = steady_problem(cfg, params)?;
            let space = l.space();
            let d = metastable::decompose(&ss.rho, space, cfg.pca.rank_tolerance, cfg.pca.cluster_tolerance)?;
            let (x, _) = hilbert::quadratures(space);
            let psi = d.eigenstates[..d.rank]
                .iter()
                .find(|v| x.expect_pure(v).re < -0.5)
                .or(d.eigenstates.first())
                .cloned()
                .ok_or_else(|| anyhow!("steady state has no eigenstates"))?;
            Ok((space, psi))
        }
        _ => {
            let space = fixed();
            let fp = meanfield::fixed_points(params)
                .into_iter()
                .find(|f| f.physical && f.state.x < 0.0)
                .map(|f| f.state)
                .unwrap_or(MfState::NORMAL);
            let alpha = Complex64::new(fp.x, fp.p) / 2f64.sqrt();
            let r = fp.bloch_norm().max(1e-300);
            let theta = (fp.sz / r).clamp(-1.0, 1.0).acos();
            let phi = fp.sy.atan2(fp.sx);
            let up = Complex64::new((theta / 2.0).cos(), 0.0);
            let down = Complex64::from_polar((theta / 2.0).sin(), phi);
            Ok((space, hilbert::product_coherent_state(space, alpha, up, down)))
        }
    }
}

fn observables_rows(times: &[f64], obs: &[trajectory::Observables]) -> Vec<Vec<String>> {
    times
        .iter()
        .zip(obs)
        .map(|(t, o)| vec![num(*t), num(o.sigma_z), num(o.sigma_x), num(o.x), num(o.p), num(o.delta_x), num(o.photons)])
        .collect()
}

const OBS_HEADER: [&str; 7] = ["t", "sigma_z", "sigma_x", "x", "p", "delta_x", "photons"];

fn trajectory_cmd(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let params = cfg.system_params()?;
    let (space, psi0) = initial_state(cfg, &params)?;
    out.note("fock_cutoff", json!(space.fock_cutoff()));
    let t = &cfg.trajectory;
    let dt = t.dt.unwrap_or_else(|| trajectory::default_dt(&params));
    out.note("dt", json!(dt));
    let config = TrajectoryConfig {
        dt,
        t_max: t.t_max,
        seed: cfg.seed,
        record_stride: t.record_stride,
        keep_states: t.peak_path,
    };
    config.validate(&params, space, &psi0)?;
    let prop = Propagator::new(&params, space, dt)?;
    let rec = prop.run(&config, &psi0, 0)?;
    out.note("norm_error", json!(rec.norm_error));
    out.json("jumps.json", &rec.jumps)?;
    out.csv("observables.csv", &OBS_HEADER, observables_rows(&rec.times, &rec.observables))?;
    if t.peak_path {
        let grid = GridSpec {
            nx: t.grid_points,
            np: t.grid_points,
            ..GridSpec::auto(&params)
        };
        let branches = trajectory::peak_path(&rec.times, &rec.states, space, &grid, t.peak_threshold)?;
        out.json("peak_path.json", &branches)?;
    }
    if t.trajectories > 1 {
        let ens = trajectory::run_ensemble(&prop, &config, &psi0, t.trajectories)?;
        let mut header: Vec<String> = OBS_HEADER.iter().map(|s| s.to_string()).collect();
        header.extend(OBS_HEADER[1..].iter().map(|s| format!("{s}_se")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows = observables_rows(&ens.times, &ens.mean)
            .into_iter()
            .zip(observables_rows(&ens.times, &ens.std_error))
            .map(|(mut m, se)| {
                m.extend(se.into_iter().skip(1));
                m
            });
        out.csv("ensemble.csv", &header, rows)?;
        out.note("mode_jumps", json!(ens.mode_jumps));
        out.note("spin_jumps", json!(ens.spin_jumps));
    }
    Ok(())
}

const SCAN_HEADER: [&str; 10] = [
    "gamma",
    "ratio",
    "omega_ratio",
    "lambda_ratio",
    "fock_cutoff",
    "delta",
    "error",
    "tail_mass",
    "metastable_dim",
    "cached",
];

fn scan(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let template = cfg.system_params()?;
    let opts = scan_options(cfg, cfg.scan.k, cfg.scan.ratio_threshold, "auto")?;
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for &g in &cfg.scan.gammas {
        let t = SystemParams { gamma: g, ..template };
        let s = scaling::scan_gap(&t, &cfg.scan.omega_ratios, cfg.params.lambda_ratio, &opts)?;
        for d in &s.details {
            if let Some(w) = &d.warning {
                log::warn!("γ = {g}, ω₀/Ω = {}: {w}", d.ratio);
            }
            rows.push(vec![
                g.to_string(),
                num(d.ratio),
                num(d.params.omega / d.params.omega0),
                cfg.params.lambda_ratio.to_string(),
                d.fock_cutoff.to_string(),
                num(d.delta),
                num(d.error),
                num(d.tail_mass),
                d.metastable_dim.to_string(),
                d.cached.to_string(),
            ]);
        }
        series.push(json!({ "gamma": g, "series": s }));
    }
    out.csv("scan.csv", &SCAN_HEADER, rows)?;
    out.json("scan.json", &series)
}

/// Reads `(gamma, x, y, error)` rows from a scan CSV.
fn read_scan(path: &Path, x_col: &str, y_col: &str) -> Result<BTreeMap<String, Vec<(f64, f64, f64)>>> {
    let mut r = csv::Reader::from_path(path).with_context(|| path.display().to_string())?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| ConfigError {
            key: "fit".into(),
            reason: format!("{} has no column `{name}`", path.display()),
        })
    };
    let (xi, yi) = (col(x_col)?, col(y_col)?);
    let gi = headers.iter().position(|h| h == "gamma");
    let ei = headers.iter().position(|h| h == "error");
    let mut groups: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let get = |i: usize| -> Result<f64> {
            rec[i]
                .trim()
                .parse::<f64>()
                .with_context(|| format!("{}: bad number {:?}", path.display(), &rec[i]))
        };
        let key = gi.map(|i| rec[i].trim().to_string()).unwrap_or_default();
        let e = match ei {
            Some(i) => get(i)?,
            None => 0.0,
        };
        groups.entry(key).or_default().push((get(xi)?, get(yi)?, e));
    }
    Ok(groups)
}

fn fit(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let input = cfg.fit.input.clone().unwrap_or_else(|| cfg.output_dir.join("scan.csv"));
    if !input.exists() {
        return Err(ConfigError {
            key: "fit.input".into(),
            reason: format!("{} does not exist", input.display()),
        }
        .into());
    }
    let groups = read_scan(&input, &cfg.fit.x_column, &cfg.fit.y_column)?;
    if groups.is_empty() {
        bail!("{} has no rows", input.display());
    }
    let mut fits = Vec::new();
    for (gamma, pts) in &groups {
        let series = ScalingSeries::from_points(
            pts.iter().map(|p| (p.0, p.1)).collect(),
            Some(pts.iter().map(|p| p.2).collect()),
            format!("gamma = {gamma}"),
        )?;
        let f = scaling::polyfit2(&series)?;
        let se = f.a_error();
        let phase = se.map(|s| scaling::classify(f.a, s, cfg.fit.zero_threshold_factor));
        let stability = scaling::extrapolation_stability(&series).ok();
        fits.push(json!({
            "gamma": gamma,
            "points": series.points,
            "a": f.a,
            "b": f.b,
            "c": f.c,
            "residual": f.residual,
            "dof": f.dof,
            "a_error": se,
            "std_errors": f.std_errors(),
            "phase": phase,
            "stability": stability,
        }));
    }
    out.note("input", json!(input));
    out.json("fit.json", &json!({ "x_column": cfg.fit.x_column, "y_column": cfg.fit.y_column, "fits": fits }))
}
