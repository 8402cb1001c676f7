//! Experiment orchestration: exact solves, model-based and data-driven
//! policy iteration runs, regularizer comparisons, parameter sweeps, the
//! online/offline comparison, and wealth simulation. Every run is
//! deterministic for a fixed config and seed; cells and seeds execute in
//! parallel as independent jobs and are written in a fixed order.

use crate::config::{ExperimentConfig, ModeConfig, RegularizerConfig, SweepParameter};
use nalgebra::DMatrix;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::Path;
use tsallis_lq::serialize::SolutionFile;
use tsallis_lq::{
    approximate_pi, lstd, model_based_pi, solve, ApproxPiConfig, ApproxPiRecord, DeformationParam,
    Error, ExplorationLaw, LqModel, PeConfig, Result, SimulatedRollouts, SolverConfig,
};

/// One experiment curve: the per-iteration records of a seeded run plus the
/// model parameters it ran under.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub label: String,
    pub seed: u64,
    pub mode: ModeConfig,
    pub q: f64,
    pub gamma: f64,
    pub tau: f64,
    pub records: Vec<ApproxPiRecord>,
}

/// Per-curve summary statistics used by the figure-level checks.
#[derive(Debug, Clone)]
pub struct CurveSummary {
    pub label: String,
    pub seed: u64,
    pub terminal_error: f64,
    /// Standard deviation of the normalized error over iterations 10..=30.
    pub midrun_std: f64,
    pub iters_to_1e2: Option<usize>,
    pub iters_to_1e3: Option<usize>,
    pub reached_1e4: bool,
}

pub fn summarize(outcome: &RunOutcome) -> CurveSummary {
    let errors: Vec<(usize, f64)> = outcome
        .records
        .iter()
        .map(|r| (r.iteration, r.gain_error))
        .collect();
    let terminal_error = errors.last().map(|(_, e)| *e).unwrap_or(f64::NAN);
    let window: Vec<f64> = errors
        .iter()
        .filter(|(i, _)| (10..=30).contains(i))
        .map(|(_, e)| *e)
        .collect();
    let midrun_std = if window.len() > 1 {
        let mean = window.iter().sum::<f64>() / window.len() as f64;
        (window.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (window.len() - 1) as f64)
            .sqrt()
    } else {
        f64::NAN
    };
    let first_below = |threshold: f64| {
        errors
            .iter()
            .find(|(_, e)| *e <= threshold)
            .map(|(i, _)| *i)
    };
    CurveSummary {
        label: outcome.label.clone(),
        seed: outcome.seed,
        terminal_error,
        midrun_std,
        iters_to_1e2: first_below(1e-2),
        iters_to_1e3: first_below(1e-3),
        reached_1e4: errors.iter().any(|(_, e)| *e <= 1e-4),
    }
}

/// Apply a regularizer override to the base model; the "none" case also
/// switches exploration to the uniform ball so excitation persists.
pub fn apply_regularizer(
    model: &LqModel,
    pe: &PeConfig,
    reg: RegularizerConfig,
) -> Result<(LqModel, PeConfig)> {
    let mut pe = pe.clone();
    let model = match reg {
        RegularizerConfig::Tsallis { q } => {
            model.with_regularization(model.tau(), DeformationParam::new(q)?)?
        }
        RegularizerConfig::Shannon => {
            model.with_regularization(model.tau(), DeformationParam::shannon())?
        }
        RegularizerConfig::None => {
            pe.exploration = ExplorationLaw::UniformBall;
            model.with_regularization(0.0, model.q())?
        }
    };
    Ok((model, pe))
}

/// Run one seeded data-driven policy-iteration curve.
pub fn run_single(
    model: &LqModel,
    reference_gain: &DMatrix<f64>,
    pe: &PeConfig,
    iterations: usize,
    mode: ModeConfig,
    beta0: f64,
    theta0_fill: f64,
    seed: u64,
    label: &str,
) -> Result<RunOutcome> {
    let initial = lstd::filled_initial_state(
        model.state_dim(),
        model.control_dim(),
        theta0_fill,
        beta0,
    )?;
    let mut source = SimulatedRollouts::new(
        model,
        pe.clone(),
        seed,
        matches!(mode, ModeConfig::Online),
    )?;
    let cfg = ApproxPiConfig {
        iterations,
        carry_estimator: true,
        sigma_floor: 1e-8,
        report_scale: pe.r_x,
    };
    let history = approximate_pi(model, &mut source, &initial, reference_gain, &cfg)?;
    Ok(RunOutcome {
        label: label.to_string(),
        seed,
        mode,
        q: model.q().q(),
        gamma: model.gamma(),
        tau: model.tau(),
        records: history.records,
    })
}

fn mode_name(mode: ModeConfig) -> &'static str {
    match mode {
        ModeConfig::Offline => "offline",
        ModeConfig::Online => "online",
    }
}

/// History CSV in the documented schema, one row per (seed, iteration).
pub fn history_csv(outcomes: &[RunOutcome]) -> String {
    let mut out = String::from(
        "iteration,normalized_gain_error,objective_estimate,seed,mode,q,gamma,tau\n",
    );
    for outcome in outcomes {
        for rec in &outcome.records {
            let objective = rec
                .objective
                .map(|v| v.to_string())
                .unwrap_or_else(|| "inf".to_string());
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                rec.iteration,
                rec.gain_error,
                objective,
                outcome.seed,
                mode_name(outcome.mode),
                outcome.q,
                outcome.gamma,
                outcome.tau
            );
        }
    }
    out
}

pub fn summary_csv(summaries: &[CurveSummary]) -> String {
    let mut out = String::from(
        "label,seed,terminal_error,midrun_std,iterations_to_1e-2,iterations_to_1e-3,reached_1e-4\n",
    );
    for s in summaries {
        let fmt_opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.label,
            s.seed,
            s.terminal_error,
            s.midrun_std,
            fmt_opt(s.iters_to_1e2),
            fmt_opt(s.iters_to_1e3),
            s.reached_1e4
        );
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)
        .map_err(|e| Error::Serialization(format!("writing {}: {e}", path.display())))
}

/// Exact solve of the configured model; writes `(P, c, K*, Sigma*)` with
/// convergence diagnostics as JSON.
pub fn run_exact(config: &ExperimentConfig, out_path: &Path) -> Result<SolutionFile> {
    let model = config.base_model()?;
    let solver_cfg = SolverConfig {
        tol: config.tol.unwrap_or(1e-12),
        ..SolverConfig::default()
    };
    let (value, policy, info) = solve(&model, &solver_cfg)?;
    let file = SolutionFile::from_parts(&value, &policy, &info);
    write_file(out_path, &file.to_json())?;
    Ok(file)
}

/// Model-based policy iteration from the fill-induced initial gain; writes
/// the dp history CSV.
pub fn run_model_based(config: &ExperimentConfig, out_path: &Path) -> Result<usize> {
    let model = config.base_model()?;
    let initial = lstd::filled_initial_state(
        model.state_dim(),
        model.control_dim(),
        config.theta0_fill,
        config.beta0,
    )?;
    let len = tsallis_lq::sym_len(model.state_dim() + model.control_dim());
    let theta = tsallis_lq::unvec_s(
        &initial.theta_hat.rows(0, len).clone_owned(),
        model.state_dim() + model.control_dim(),
    )?;
    let m = model.state_dim();
    let n = model.control_dim();
    let uu = theta.view((m, m), (n, n)).clone_owned();
    let ux = theta.view((m, 0), (n, m)).clone_owned();
    let k0 = nalgebra::Cholesky::new(uu)
        .ok_or_else(|| Error::NotPositiveDefinite("fill-induced Theta_uu".into()))?
        .solve(&ux);
    let history = model_based_pi(&model, &k0, config.iterations, config.pe.r_x)?;
    let mut buffer = Vec::new();
    history
        .write_csv(&mut buffer)
        .map_err(|e| Error::Serialization(e.to_string()))?;
    write_file(out_path, &String::from_utf8_lossy(&buffer))?;
    Ok(history.records.len())
}

/// Result of a multi-regularizer offline comparison.
#[derive(Debug, Clone)]
pub struct RegularizerComparison {
    pub summaries: Vec<CurveSummary>,
    /// Seeds in which the unregularized curve has the largest mid-run std.
    pub none_has_largest_std: usize,
    pub seeds: usize,
    /// Ratio of median terminal errors, tsallis / shannon.
    pub tsallis_shannon_ratio: f64,
    /// Median terminal error per label.
    pub median_terminal: Vec<(String, f64)>,
    /// Whether any seed of any curve reached 1e-4.
    pub any_reached_1e4: bool,
}

fn median_of(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = values.len() / 2;
    if values.len() % 2 == 0 {
        0.5 * (values[mid - 1] + values[mid])
    } else {
        values[mid]
    }
}

/// Offline error curves for each configured regularizer (one CSV per
/// regularizer, ten seeds each by default) plus the comparison summary.
pub fn run_regularizer_comparison(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<RegularizerComparison> {
    let base = config.base_model()?;
    let pe = config.pe_config();
    let regs = config.regularizer_list();
    let mut all_outcomes: Vec<(String, Vec<RunOutcome>)> = Vec::new();
    for reg in &regs {
        let (model, pe_reg) = apply_regularizer(&base, &pe, *reg)?;
        let (_, reference, _) = solve(
            &model,
            &SolverConfig {
                tol: config.tol.unwrap_or(1e-12),
                ..SolverConfig::default()
            },
        )?;
        let label = reg.label();
        let outcomes: Vec<RunOutcome> = config
            .seeds
            .par_iter()
            .map(|&seed| {
                run_single(
                    &model,
                    reference.gain(),
                    &pe_reg,
                    config.iterations,
                    ModeConfig::Offline,
                    config.beta0,
                    config.theta0_fill,
                    seed,
                    &label,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        write_file(&out_dir.join(format!("{label}.csv")), &history_csv(&outcomes))?;
        all_outcomes.push((label, outcomes));
    }

    let summaries: Vec<CurveSummary> = all_outcomes
        .iter()
        .flat_map(|(_, outcomes)| outcomes.iter().map(summarize))
        .collect();
    write_file(&out_dir.join("comparison_summary.csv"), &summary_csv(&summaries))?;

    // seed-matched mid-run variance comparison
    let std_by = |label: &str, seed: u64| -> Option<f64> {
        summaries
            .iter()
            .find(|s| s.label == label && s.seed == seed)
            .map(|s| s.midrun_std)
    };
    let mut none_largest = 0usize;
    if regs.iter().any(|r| matches!(r, RegularizerConfig::None)) {
        for &seed in &config.seeds {
            let none_std = std_by("none", seed).unwrap_or(f64::NAN);
            let others_max = summaries
                .iter()
                .filter(|s| s.seed == seed && s.label != "none")
                .map(|s| s.midrun_std)
                .fold(f64::NEG_INFINITY, f64::max);
            if none_std > others_max {
                none_largest += 1;
            }
        }
    }

    let median_terminal: Vec<(String, f64)> = all_outcomes
        .iter()
        .map(|(label, outcomes)| {
            let terms: Vec<f64> = outcomes
                .iter()
                .map(|o| summarize(o).terminal_error)
                .collect();
            (label.clone(), median_of(terms))
        })
        .collect();
    let find_median = |label: &str| {
        median_terminal
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, v)| *v)
    };
    let tsallis_shannon_ratio = match (find_median("tsallis"), find_median("shannon")) {
        (Some(t), Some(s)) if s > 0.0 => t / s,
        _ => f64::NAN,
    };
    Ok(RegularizerComparison {
        none_has_largest_std: none_largest,
        seeds: config.seeds.len(),
        tsallis_shannon_ratio,
        any_reached_1e4: summaries.iter().any(|s| s.reached_1e4),
        median_terminal,
        summaries,
    })
}

/// Per-value summary of a parameter sweep.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub value: f64,
    pub median_iters_to_1e2: Option<f64>,
    pub median_terminal: f64,
    pub median_midrun_std: f64,
    pub summaries: Vec<CurveSummary>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub parameter: SweepParameter,
    pub cells: Vec<SweepCell>,
}

/// One error curve per swept value per seed; a single history CSV (cells are
/// distinguishable by the q/gamma/tau columns) plus a summary CSV.
pub fn run_sweep(config: &ExperimentConfig, out_dir: &Path) -> Result<SweepResult> {
    let sweep = config
        .sweep
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("sweep section missing".into()))?;
    let base = config.base_model()?;
    let pe = config.pe_config();
    let mode = config.mode;
    let mut all_outcomes = Vec::new();
    let mut cells = Vec::new();
    for &value in &sweep.values {
        let model = match sweep.parameter {
            SweepParameter::Q => base.with_regularization(base.tau(), DeformationParam::new(value)?)?,
            SweepParameter::Gamma => base.with_gamma(value)?,
            SweepParameter::Tau => base.with_regularization(value, base.q())?,
        };
        let (_, reference, _) = solve(&model, &SolverConfig::default())?;
        let label = match sweep.parameter {
            SweepParameter::Q => format!("q={value}"),
            SweepParameter::Gamma => format!("gamma={value}"),
            SweepParameter::Tau => format!("tau={value}"),
        };
        let outcomes: Vec<RunOutcome> = config
            .seeds
            .par_iter()
            .map(|&seed| {
                run_single(
                    &model,
                    reference.gain(),
                    &pe,
                    config.iterations,
                    mode,
                    config.beta0,
                    config.theta0_fill,
                    seed,
                    &label,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let summaries: Vec<CurveSummary> = outcomes.iter().map(summarize).collect();
        let to_band: Vec<f64> = summaries
            .iter()
            .filter_map(|s| s.iters_to_1e2.map(|v| v as f64))
            .collect();
        cells.push(SweepCell {
            value,
            median_iters_to_1e2: if to_band.len() == summaries.len() {
                Some(median_of(to_band))
            } else {
                None
            },
            median_terminal: median_of(summaries.iter().map(|s| s.terminal_error).collect()),
            median_midrun_std: median_of(summaries.iter().map(|s| s.midrun_std).collect()),
            summaries,
        });
        all_outcomes.extend(outcomes);
    }
    write_file(&out_dir.join("sweep_history.csv"), &history_csv(&all_outcomes))?;
    let summaries: Vec<CurveSummary> = all_outcomes.iter().map(summarize).collect();
    write_file(&out_dir.join("sweep_summary.csv"), &summary_csv(&summaries))?;
    Ok(SweepResult {
        parameter: sweep.parameter,
        cells,
    })
}

/// Online run with a matched offline baseline.
#[derive(Debug, Clone)]
pub struct OnlineComparison {
    pub online: Vec<CurveSummary>,
    pub offline: Vec<CurveSummary>,
    pub median_online_iters_to_1e2: Option<f64>,
    pub median_offline_iters_to_1e2: Option<f64>,
    pub median_online_std: f64,
    pub median_offline_std: f64,
    pub median_online_terminal: f64,
    pub median_offline_terminal: f64,
}

pub fn run_online(config: &ExperimentConfig, out_dir: &Path) -> Result<OnlineComparison> {
    let base = config.base_model()?;
    let pe = config.pe_config();
    let (model, pe) = apply_regularizer(&base, &pe, config.regularizer)?;
    let (_, reference, _) = solve(&model, &SolverConfig::default())?;
    let run_mode = |mode: ModeConfig| -> Result<Vec<RunOutcome>> {
        config
            .seeds
            .par_iter()
            .map(|&seed| {
                run_single(
                    &model,
                    reference.gain(),
                    &pe,
                    config.iterations,
                    mode,
                    config.beta0,
                    config.theta0_fill,
                    seed,
                    mode_name(mode),
                )
            })
            .collect()
    };
    let online = run_mode(ModeConfig::Online)?;
    let offline = run_mode(ModeConfig::Offline)?;
    write_file(&out_dir.join("online.csv"), &history_csv(&online))?;
    write_file(&out_dir.join("offline.csv"), &history_csv(&offline))?;
    let online_sum: Vec<CurveSummary> = online.iter().map(summarize).collect();
    let offline_sum: Vec<CurveSummary> = offline.iter().map(summarize).collect();
    let mut all = online_sum.clone();
    all.extend(offline_sum.iter().cloned());
    write_file(&out_dir.join("online_summary.csv"), &summary_csv(&all))?;

    let median_iters = |s: &[CurveSummary]| -> Option<f64> {
        let vals: Vec<f64> = s.iter().filter_map(|x| x.iters_to_1e2.map(|v| v as f64)).collect();
        if vals.len() == s.len() {
            Some(median_of(vals))
        } else {
            None
        }
    };
    Ok(OnlineComparison {
        median_online_iters_to_1e2: median_iters(&online_sum),
        median_offline_iters_to_1e2: median_iters(&offline_sum),
        median_online_std: median_of(online_sum.iter().map(|s| s.midrun_std).collect()),
        median_offline_std: median_of(offline_sum.iter().map(|s| s.midrun_std).collect()),
        median_online_terminal: median_of(online_sum.iter().map(|s| s.terminal_error).collect()),
        median_offline_terminal: median_of(offline_sum.iter().map(|s| s.terminal_error).collect()),
        online: online_sum,
        offline: offline_sum,
    })
}

/// Wealth simulation under the exact optimal policy of the configured MV
/// problem; writes the per-period CSV.
pub fn run_mv_sim(config: &ExperimentConfig, out_path: &Path, seed: u64) -> Result<()> {
    let problem = config
        .mv_problem()?
        .ok_or_else(|| Error::InvalidParameter("mv-sim requires an mv problem".into()))?;
    let sim = config
        .mv_sim
        .clone()
        .ok_or_else(|| Error::InvalidParameter("mv_sim section missing".into()))?;
    let model = problem.to_lq()?;
    let (_, policy, _) = solve(&model, &SolverConfig::default())?;
    let stats = tsallis_lq::simulate_wealth(&problem, &policy, sim.x0, sim.horizon, sim.paths, seed)?;
    let mut buffer = Vec::new();
    stats
        .write_csv(&mut buffer)
        .map_err(|e| Error::Serialization(e.to_string()))?;
    write_file(out_path, &String::from_utf8_lossy(&buffer))?;
    Ok(())
}
