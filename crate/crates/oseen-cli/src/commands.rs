//! Subcommand bodies. Every analysis is split into independent tasks that
//! run on the global pool and are reduced in task order.

use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;
use oseen::biot_savart::{check_hls_bound, check_log_bound, check_product_bounds};
use oseen::corpus::{field_corpus_with, forcing_corpus, CorpusSpace, CORPUS_SIZE};
use oseen::field::ModalField;
use oseen::fit::{fit_scaling, ScalingFit};
use oseen::grid::{build_grid, RadialGrid};
use oseen::nonlinear::{
    energy_inequality_check, evolve, lambda_skew_defect, measure_relaxation, mode2_initial, relaxation_run,
    stationarity_check, sweep_amplitude, EnergySpace, EvolveOptions, VortexState,
};
use oseen::radial::{ModeBlocks, Subspace, WeightedRadialFunction, C64};
use oseen::semigroup::{
    decay_envelope, heat_propagate, laplace_contour_propagator, mehler_apply, propagator_matrix, relative_difference,
    ContourSpec,
};
use oseen::spectral::{pseudospectral_sup, skew_norm, spectral_bound_sigma, trusted_spectrum, EigenSettings};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::output::Table;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Spectrum,
    Resolvent,
    Sigma,
    Semigroup,
    Evolve,
    SweepRelax,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Resolvent => "resolvent",
            Command::Sigma => "sigma",
            Command::Semigroup => "semigroup",
            Command::Evolve => "evolve",
            Command::SweepRelax => "sweep-relax",
            Command::Verify => "verify",
        }
    }
}

/// Everything a subcommand produces.
#[derive(Debug, Default)]
pub struct Outcome {
    /// Each table is written as `<name>.csv` and `<name>.dat`.
    pub tables: Vec<(String, Table)>,
    /// Verbatim extra files.
    pub files: Vec<(String, String)>,
    pub summary: Value,
    /// Scalars compared under grid refinement.
    pub keys: Vec<(String, f64)>,
    /// `Some` when a checked property failed.
    pub failure: Option<String>,
}

pub fn run(command: Command, cfg: &RunConfig) -> Result<Outcome> {
    match command {
        Command::Spectrum => spectrum(cfg),
        Command::Resolvent => resolvent(cfg),
        Command::Sigma => sigma(cfg),
        Command::Semigroup => semigroup(cfg),
        Command::Evolve => evolve_cmd(cfg),
        Command::SweepRelax => sweep_relax(cfg),
        Command::Verify => verify(cfg),
    }
}

fn mode_beta_tasks(cfg: &RunConfig) -> Vec<(i32, f64)> {
    cfg.modes.iter().flat_map(|&n| cfg.betas.iter().map(move |&b| (n, b))).collect()
}

fn subspace_for(n: i32) -> Subspace {
    if n.abs() == 1 {
        Subspace::Z0
    } else {
        Subspace::Full
    }
}

fn eigen_settings(cfg: &RunConfig) -> EigenSettings {
    EigenSettings { grid: cfg.grid.spec(), ..EigenSettings::default() }
}

fn nonlinear_grid(cfg: &RunConfig) -> Result<Arc<RadialGrid>> {
    Ok(Arc::new(build_grid(cfg.grid.n_points, cfg.grid.nonlinear_r_max(), cfg.grid.map_kind)?))
}

fn evolve_options(cfg: &RunConfig) -> EvolveOptions {
    let e = &cfg.evolve;
    EvolveOptions {
        dt_max: e.dt_max,
        cfl: e.cfl,
        sample_interval: e.sample_interval,
        rotation: e.rotation,
        ..EvolveOptions::default()
    }
}

/// Power-law fit when at least four positive abscissae are available.
fn optional_fit(points: &[(f64, f64)]) -> Option<ScalingFit> {
    let mut pts: Vec<(f64, f64)> = points.iter().copied().filter(|p| p.0 > 0.0).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.dedup_by(|a, b| a.0 == b.0);
    fit_scaling(&pts).ok()
}

fn spectrum(cfg: &RunConfig) -> Result<Outcome> {
    let settings = eigen_settings(cfg);
    let tasks = mode_beta_tasks(cfg);
    let results: Vec<_> = tasks
        .par_iter()
        .map(|&(n, beta)| trusted_spectrum(n, beta, Subspace::Full, &settings).with_context(|| format!("spectrum n = {n}, beta = {beta}")))
        .collect::<Result<_>>()?;
    let mut table = Table::new(&["n", "beta", "k", "re", "im", "residual", "trusted"]);
    let mut per_task = Vec::new();
    let mut keys = Vec::new();
    for s in &results {
        for (k, z) in s.eigenvalues.iter().enumerate() {
            table.push(vec![s.mode as f64, s.beta, k as f64, z.re, z.im, s.residuals[k], s.trusted[k] as u8 as f64]);
        }
        let min_re = s.min_trusted_re();
        if let Some(v) = min_re {
            keys.push((format!("min_re n={} beta={}", s.mode, s.beta), v));
        }
        per_task.push(json!({
            "n": s.mode,
            "beta": s.beta,
            "r_max": s.r_max,
            "trusted_count": s.trusted.iter().filter(|&&t| t).count(),
            "min_trusted_re": min_re,
        }));
    }
    Ok(Outcome {
        tables: vec![("spectrum".into(), table)],
        summary: json!({ "spectra": per_task }),
        keys,
        ..Outcome::default()
    })
}

fn resolvent(cfg: &RunConfig) -> Result<Outcome> {
    let tasks = mode_beta_tasks(cfg);
    let spec = cfg.grid.spec();
    let sweeps: Vec<_> = tasks
        .par_iter()
        .map(|&(n, beta)| -> Result<_> {
            let grid = spec.build(beta)?;
            let op = ModeBlocks::new(grid, n)?.h_operator(beta);
            Ok(pseudospectral_sup(&op, subspace_for(n)).with_context(|| format!("resolvent n = {n}, beta = {beta}"))?)
        })
        .collect::<Result<_>>()?;
    let mut samples = Table::new(&["n", "beta", "lambda", "norm"]);
    let mut sups = Table::new(&["n", "beta", "sup_norm", "argmax_lambda"]);
    let mut keys = Vec::new();
    for s in &sweeps {
        for (l, v) in s.lambda_samples.iter().zip(&s.norms) {
            samples.push(vec![s.mode as f64, s.beta, *l, *v]);
        }
        sups.push(vec![s.mode as f64, s.beta, s.sup_norm, s.argmax_lambda]);
        keys.push((format!("sup n={} beta={}", s.mode, s.beta), s.sup_norm));
    }
    let fits: Vec<Value> = distinct_modes(cfg)
        .into_iter()
        .map(|n| {
            let pts: Vec<(f64, f64)> = sweeps.iter().filter(|s| s.mode == n).map(|s| (s.beta.abs(), s.sup_norm)).collect();
            json!({ "n": n, "subspace": subspace_for(n), "fit": optional_fit(&pts) })
        })
        .collect();
    let edge: Vec<Value> = sweeps
        .iter()
        .filter(|s| s.edge_warning)
        .map(|s| json!({ "n": s.mode, "beta": s.beta, "window": s.window }))
        .collect();
    Ok(Outcome {
        tables: vec![("resolvent".into(), samples), ("resolvent_sup".into(), sups)],
        summary: json!({ "scaling": fits, "edge_warnings": edge }),
        keys,
        ..Outcome::default()
    })
}

fn distinct_modes(cfg: &RunConfig) -> Vec<i32> {
    let mut m = cfg.modes.clone();
    m.sort_unstable();
    m.dedup();
    m
}

fn sigma(cfg: &RunConfig) -> Result<Outcome> {
    let settings = eigen_settings(cfg);
    let n_max = cfg.modes.iter().map(|n| n.abs()).max().unwrap_or(2).max(2);
    let results: Vec<_> = cfg
        .alphas
        .par_iter()
        .map(|&a| spectral_bound_sigma(a, n_max, &settings).with_context(|| format!("sigma alpha = {a}")))
        .collect::<Result<_>>()?;
    let mut table = Table::new(&["alpha", "sigma"]);
    let mut modes = Table::new(&["alpha", "n", "beta", "min_re", "trusted_count"]);
    let mut keys = Vec::new();
    for s in &results {
        table.push(vec![s.alpha, s.sigma]);
        keys.push((format!("sigma alpha={}", s.alpha), s.sigma));
        for m in &s.per_mode {
            modes.push(vec![s.alpha, m.mode as f64, m.beta, m.min_re, m.trusted_count as f64]);
        }
    }
    let pts: Vec<(f64, f64)> = results.iter().map(|s| (s.alpha.abs(), s.sigma)).collect();
    Ok(Outcome {
        tables: vec![("sigma".into(), table), ("sigma_modes".into(), modes)],
        summary: json!({ "n_max": n_max, "fit": optional_fit(&pts) }),
        keys,
        ..Outcome::default()
    })
}

#[derive(Serialize)]
struct ContourRow {
    n: i32,
    beta: f64,
    tau: f64,
    relative_difference: f64,
    error_estimate: f64,
    x0: f64,
    y0: f64,
}

fn semigroup(cfg: &RunConfig) -> Result<Outcome> {
    let tasks = mode_beta_tasks(cfg);
    let spec = cfg.grid.spec();
    let results: Vec<_> = tasks
        .par_iter()
        .map(|&(n, beta)| -> Result<_> {
            let grid = spec.build(beta)?;
            let op = ModeBlocks::new(grid, n)?.h_operator(beta);
            let sub = subspace_for(n);
            let env = decay_envelope(&op, sub, cfg.tau_step, 1e-12, cfg.tau_max)
                .with_context(|| format!("envelope n = {n}, beta = {beta}"))?;
            let mut contour = Vec::new();
            if n.abs() >= 2 {
                let c = if beta == 0.0 {
                    ContourSpec::new(n.abs() as f64 / 4.0, 0.0)?
                } else {
                    let sup = pseudospectral_sup(&op, Subspace::Full)?.sup_norm;
                    let c2 = sup * (1.0 + beta.abs()).cbrt();
                    let c6 = skew_norm(&op.matrix)? / beta.abs();
                    ContourSpec::from_constants(beta, c2, c6)?
                };
                for &tau in &cfg.taus {
                    let p = laplace_contour_propagator(&op, tau, &c)?;
                    let e = propagator_matrix(&op.matrix, tau)?;
                    contour.push(ContourRow {
                        n,
                        beta,
                        tau,
                        relative_difference: relative_difference(&p.matrix, &e)?,
                        error_estimate: p.error_estimate,
                        x0: c.x0,
                        y0: c.y0,
                    });
                }
            }
            Ok((env, contour))
        })
        .collect::<Result<_>>()?;
    let mut curves = Table::new(&["n", "beta", "tau", "norm", "envelope"]);
    let mut contour_table = Table::new(&["n", "beta", "tau", "relative_difference", "error_estimate"]);
    let mut envs = Vec::new();
    let mut keys = Vec::new();
    for (env, contour) in &results {
        for (t, v) in env.tau_samples.iter().zip(&env.norms) {
            curves.push(vec![env.mode as f64, env.beta, *t, *v, env.bound(*t)]);
        }
        for c in contour {
            contour_table.push(vec![c.n as f64, c.beta, c.tau, c.relative_difference, c.error_estimate]);
        }
        if let Some(c5) = env.c5_hat {
            keys.push((format!("c5 n={} beta={}", env.mode, env.beta), c5));
        }
        envs.push(json!({
            "n": env.mode,
            "beta": env.beta,
            "c4_hat": env.c4_hat,
            "c5_hat": env.c5_hat,
            "fit_window": env.fit_window,
            "max_contraction_excess": env.max_contraction_excess,
            "envelope_holds": env.envelope_holds,
        }));
    }
    let contour_rows: Vec<&ContourRow> = results.iter().flat_map(|r| &r.1).collect();
    let failure = envs
        .iter()
        .zip(&results)
        .find(|(_, r)| !r.0.envelope_holds)
        .map(|(_, r)| format!("envelope violated at n = {}, beta = {}", r.0.mode, r.0.beta));
    Ok(Outcome {
        tables: vec![("semigroup".into(), curves), ("contour".into(), contour_table)],
        summary: json!({ "envelopes": envs, "contour": contour_rows }),
        keys,
        failure,
        ..Outcome::default()
    })
}

fn trajectory_table(record: &oseen::nonlinear::TrajectoryRecord) -> Table {
    let mut t = Table::new(&["tau", "norm_r", "norm_perp", "M", "E", "carlen_loss_ratio"]);
    for i in 0..record.tau.len() {
        t.push(vec![
            record.tau[i],
            record.norm_r[i],
            record.norm_perp[i],
            record.m_value[i],
            record.energy[i],
            record.carlen_loss_ratio[i],
        ]);
    }
    t
}

fn evolve_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let e = &cfg.evolve;
    let grid = nonlinear_grid(cfg)?;
    let amplitude = match e.amplitude {
        Some(a) => a,
        None if e.alpha.abs() > std::f64::consts::E => sweep_amplitude(e.alpha),
        None => 0.1,
    };
    let state = VortexState::new(e.alpha, mode2_initial(&grid, e.n_theta, amplitude))?;
    let opts = evolve_options(cfg);
    let record = evolve(&state, e.t_final, &opts)?;
    let last = record.tau.len() - 1;
    let keys = vec![
        ("final norm_perp".to_string(), record.norm_perp[last]),
        ("final norm_r".to_string(), record.norm_r[last]),
    ];
    let summary = json!({
        "alpha": e.alpha,
        "amplitude": amplitude,
        "t_final": e.t_final,
        "n_modes": e.n_theta,
        "dt_policy": { "dt_max": opts.dt_max, "cfl": opts.cfl, "sample_interval": opts.sample_interval, "rotation": opts.rotation },
        "steps": record.steps,
        "final_dt": record.final_dt,
        "final": { "tau": record.tau[last], "norm_r": record.norm_r[last], "norm_perp": record.norm_perp[last] },
    });
    Ok(Outcome {
        tables: vec![("trajectory".into(), trajectory_table(&record))],
        summary,
        keys,
        ..Outcome::default()
    })
}

fn sweep_relax(cfg: &RunConfig) -> Result<Outcome> {
    let grid = nonlinear_grid(cfg)?;
    let opts = evolve_options(cfg);
    let n_modes = cfg.evolve.n_theta;
    let runs: Vec<_> = cfg
        .alphas
        .par_iter()
        .map(|&a| relaxation_run(&grid, n_modes, a, &opts).with_context(|| format!("relaxation alpha = {a}")))
        .collect::<Result<_>>()?;
    let report = measure_relaxation(&runs)?;
    let mut traj = Table::new(&["alpha", "tau", "norm_r", "norm_perp"]);
    for r in &runs {
        for i in 0..r.record.tau.len() {
            traj.push(vec![r.alpha, r.record.tau[i], r.record.norm_r[i], r.record.norm_perp[i]]);
        }
    }
    let mut rates = Table::new(&["alpha", "tau0", "rate", "r_squared", "radial_rate", "normalized"]);
    let mut keys = Vec::new();
    for (k, r) in runs.iter().enumerate() {
        let radial = report.radial_rates[k].as_ref().map_or(f64::NAN, |f| f.rate);
        rates.push(vec![r.alpha, r.tau0, report.rates[k].rate, report.rates[k].r_squared, radial, report.normalized[k]]);
        keys.push((format!("rate alpha={}", r.alpha), report.rates[k].rate));
    }
    let summary = json!({
        "slope": report.scaling.slope,
        "r_squared": report.scaling.r_squared,
        "normalized_spread": report.normalized_spread,
        "report": report,
        "tau0": runs.iter().map(|r| r.tau0).collect::<Vec<_>>(),
    });
    Ok(Outcome {
        tables: vec![("relaxation".into(), rates), ("relaxation_trajectories".into(), traj)],
        summary,
        keys,
        ..Outcome::default()
    })
}

/// Outcome of one verification suite.
#[derive(Debug, Clone, Serialize)]
pub struct Suite {
    pub name: &'static str,
    pub passed: bool,
    pub metric: f64,
    pub detail: Value,
}

type SuiteFn = fn(&RunConfig, &Arc<RadialGrid>) -> Result<Suite>;

fn verify(cfg: &RunConfig) -> Result<Outcome> {
    let grid = nonlinear_grid(cfg)?;
    let suites: [SuiteFn; 6] = [suite_mehler, suite_biot_savart, suite_energy, suite_lambda_skew, suite_duhamel, suite_stationarity];
    let results: Vec<Suite> = suites.par_iter().map(|f| f(cfg, &grid)).collect::<Result<_>>()?;
    let mut table = Table::new(&["suite", "passed", "metric"]);
    let mut keys = Vec::new();
    for (k, s) in results.iter().enumerate() {
        table.push(vec![k as f64, s.passed as u8 as f64, s.metric]);
        keys.push((s.name.to_string(), s.metric));
    }
    let failed: Vec<&str> = results.iter().filter(|s| !s.passed).map(|s| s.name).collect();
    let failure = (!failed.is_empty()).then(|| format!("suites failed: {}", failed.join(", ")));
    Ok(Outcome {
        tables: vec![("verify".into(), table)],
        summary: json!({ "all_passed": failed.is_empty(), "suites": results }),
        keys,
        failure,
        ..Outcome::default()
    })
}

fn suite_mehler(_cfg: &RunConfig, grid: &Arc<RadialGrid>) -> Result<Suite> {
    let mut worst: f64 = 0.0;
    for n in -4..=4i32 {
        let a = n.unsigned_abs() as i32;
        let w = WeightedRadialFunction::from_scaled_fn(grid.clone(), n, |r| {
            let x = r * r / 4.0;
            C64::new(
                r.powi(a) * (1.0 + 0.3 * x - 0.05 * x * x) * (-r * r / 8.0).exp(),
                0.2 * r.powi(a) * (-r * r / 6.0).exp(),
            )
        });
        for tau in [0.1, 0.7, 2.0] {
            let m = mehler_apply(&w, tau)?;
            let e = heat_propagate(&w, tau)?;
            worst = worst.max(m.add(&e.scale(C64::new(-1.0, 0.0))).z_norm() / w.z_norm());
        }
    }
    Ok(Suite { name: "mehler", passed: worst <= 1e-6, metric: worst, detail: json!({ "max_relative_difference": worst }) })
}

fn suite_biot_savart(cfg: &RunConfig, grid: &Arc<RadialGrid>) -> Result<Suite> {
    let corpus = field_corpus_with(grid, CorpusSpace::X, cfg.seed, CORPUS_SIZE);
    let sqrt_gauss = WeightedRadialFunction::from_physical_fn(grid.clone(), 0, |r| C64::new(oseen::profiles::g(r).sqrt(), 0.0));
    let omega1 = ModalField::from_modes(grid.clone(), vec![sqrt_gauss])?;
    let mut hls: f64 = 0.0;
    let mut log: f64 = 0.0;
    let mut product: f64 = 0.0;
    let mut l1l3: f64 = 0.0;
    for f in &corpus {
        hls = hls.max(check_hls_bound(f, 1.5, 3.0)?.ratio);
        log = log.max(check_log_bound(f, 1.0, 4.0)?.ratio);
        let p = check_product_bounds(&omega1, f)?;
        product = product.max(p.product_ratio);
        l1l3 = l1l3.max(p.l1l3_ratio);
    }
    let all = [hls, log, product, l1l3];
    let passed = all.iter().all(|v| v.is_finite() && *v > 0.0) && hls <= 1.0;
    Ok(Suite {
        name: "biot_savart",
        passed,
        metric: hls,
        detail: json!({ "hls_ratio": hls, "log_ratio": log, "product_ratio": product, "l1l3_ratio": l1l3 }),
    })
}

fn suite_energy(cfg: &RunConfig, grid: &Arc<RadialGrid>) -> Result<Suite> {
    let mut worst = f64::INFINITY;
    let mut failures = 0usize;
    for (space, energy_space) in [(CorpusSpace::X0, EnergySpace::X0), (CorpusSpace::X1, EnergySpace::X1)] {
        for f in field_corpus_with(grid, space, cfg.seed, CORPUS_SIZE) {
            let r = energy_inequality_check(&f, energy_space)?;
            worst = worst.min(r.energy / r.lower_bound);
            failures += (!r.holds) as usize;
        }
    }
    Ok(Suite {
        name: "energy",
        passed: failures == 0,
        metric: worst,
        detail: json!({ "min_energy_over_bound": worst, "failures": failures }),
    })
}

fn suite_lambda_skew(cfg: &RunConfig, grid: &Arc<RadialGrid>) -> Result<Suite> {
    let corpus = field_corpus_with(grid, CorpusSpace::X, cfg.seed, CORPUS_SIZE);
    let mut worst: f64 = 0.0;
    for pair in corpus.chunks(2) {
        if let [a, b] = pair {
            worst = worst.max(lambda_skew_defect(a, b)?);
        }
    }
    Ok(Suite { name: "lambda_skew", passed: worst <= 1e-8, metric: worst, detail: json!({ "max_defect": worst }) })
}

fn suite_duhamel(cfg: &RunConfig, grid: &Arc<RadialGrid>) -> Result<Suite> {
    let times: Vec<f64> = (0..=100).map(|k| 0.02 * k as f64).collect();
    let samples = forcing_corpus(grid, cfg.seed, 4, &[1, 2, 3], &times);
    let mut c0 = Vec::new();
    for alpha in [0.0, 100.0, 1000.0] {
        c0.push(oseen::semigroup::duhamel_div_bound_check(alpha, &samples, 2.0)?.c0_hat);
    }
    let max = c0.iter().cloned().fold(0.0, f64::max);
    let min = c0.iter().cloned().fold(f64::INFINITY, f64::min);
    let passed = c0.iter().all(|v| v.is_finite() && *v > 0.0) && max <= 2.0 * c0[0];
    Ok(Suite {
        name: "duhamel",
        passed,
        metric: max,
        detail: json!({ "alphas": [0.0, 100.0, 1000.0], "c0_hat": c0, "max_over_min": max / min }),
    })
}

fn suite_stationarity(cfg: &RunConfig, grid: &Arc<RadialGrid>) -> Result<Suite> {
    let opts = evolve_options(cfg);
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for alpha in [0.0, 100.0, 1000.0] {
        let r = stationarity_check(grid.clone(), cfg.evolve.n_theta, alpha, 1.0, &opts)?;
        worst = worst.max(r.rhs_residual).max(r.drift_per_unit_time);
        rows.push(r);
    }
    Ok(Suite { name: "stationarity", passed: worst < 1e-8, metric: worst, detail: serde_json::to_value(rows)? })
}

/// Rerun at twice the radial resolution and compare the key scalars.
pub fn resolution_report(command: Command, cfg: &RunConfig, base: &Outcome) -> Result<Value> {
    let mut fine = cfg.clone();
    fine.grid.n_points *= 2;
    let doubled = run(command, &fine)?;
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for (name, v) in &base.keys {
        let w = doubled
            .keys
            .iter()
            .find(|(m, _)| m == name)
            .map(|(_, w)| *w)
            .ok_or_else(|| anyhow!("key `{name}` missing from the doubled run"))?;
        let rel = (v - w).abs() / w.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        rows.push(json!({ "key": name, "base": v, "doubled": w, "relative_change": rel }));
    }
    if rows.is_empty() {
        bail!("no scalars to compare under refinement");
    }
    Ok(json!({ "doubled_n_points": fine.grid.n_points, "max_relative_change": worst, "keys": rows }))
}
