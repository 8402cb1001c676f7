use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use tsallis_lq_cli::config::{ExperimentConfig, ModeConfig};
use tsallis_lq_cli::experiments;
use tsallis_lq_cli::plot;

/// Entropy-regularized LQ control experiments: exact solves, model-based and
/// data-driven policy iteration, parameter sweeps, wealth simulation, and
/// chart rendering. Outputs are deterministic for a fixed config and seed.
#[derive(Parser)]
#[command(name = "tlq", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured model exactly and write (P, c, K*, Sigma*) JSON.
    Exact {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: $TLQ_OUT_DIR or current directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the solver tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Model-based policy iteration; writes the exact-evaluation history CSV.
    PiModel {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Data-driven policy iteration on freshly initialized trajectories.
    /// With a `regularizers` list in the config, writes one curve CSV per
    /// regularizer plus a comparison summary.
    PiOffline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run a single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Data-driven policy iteration with trajectories continuing across
    /// iterations, compared against a matched offline baseline.
    PiOnline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parameter sweep over q, gamma, or tau per the config's sweep section.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the data regime (offline or online).
        #[arg(long)]
        mode: Option<String>,
    },
    /// Simulate wealth paths under the exact optimal policy; writes the
    /// per-period statistics CSV.
    MvSim {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Render history CSVs as a deterministic SVG (log error axis); one
    /// median-over-seeds series per input file, labeled by file stem.
    Plot {
        /// Output SVG path.
        #[arg(long)]
        out: PathBuf,
        /// Input history CSVs.
        #[arg(required = true)]
        csvs: Vec<PathBuf>,
    },
}

fn out_dir(explicit: Option<PathBuf>) -> Result<PathBuf> {
    let dir = explicit
        .or_else(|| std::env::var_os("TLQ_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    ExperimentConfig::from_json(&text).with_context(|| "parsing config".to_string())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Exact { config, out, tol } => {
            let mut cfg = load_config(&config)?;
            if tol.is_some() {
                cfg.tol = tol;
                cfg.validate()?;
            }
            let dir = out_dir(out)?;
            let path = dir.join("exact_solution.json");
            let solution = experiments::run_exact(&cfg, &path)?;
            println!(
                "exact solve: {} iterations, residual {:.3e} -> {}",
                solution.iterations,
                solution.residual_norm,
                path.display()
            );
        }
        Command::PiModel { config, out } => {
            let cfg = load_config(&config)?;
            let dir = out_dir(out)?;
            let path = dir.join("pi_model_history.csv");
            let steps = experiments::run_model_based(&cfg, &path)?;
            println!("model-based PI: {steps} records -> {}", path.display());
        }
        Command::PiOffline { config, out, seed } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seeds = vec![seed];
            }
            cfg.mode = ModeConfig::Offline;
            let dir = out_dir(out)?;
            let result = experiments::run_regularizer_comparison(&cfg, &dir)?;
            for (label, median) in &result.median_terminal {
                println!("{label}: median terminal normalized error {median:.3e}");
            }
            if result.seeds > 1 {
                println!(
                    "unregularized curve had the largest mid-run std in {}/{} seeds",
                    result.none_has_largest_std, result.seeds
                );
            }
            println!("curves written to {}", dir.display());
        }
        Command::PiOnline { config, out, seed } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seeds = vec![seed];
            }
            cfg.mode = ModeConfig::Online;
            let dir = out_dir(out)?;
            let result = experiments::run_online(&cfg, &dir)?;
            println!(
                "online: median terminal {:.3e}, offline baseline {:.3e}",
                result.median_online_terminal, result.median_offline_terminal
            );
            println!("histories written to {}", dir.display());
        }
        Command::Sweep { config, out, mode } => {
            let mut cfg = load_config(&config)?;
            if let Some(mode) = mode {
                cfg.mode = match mode.as_str() {
                    "offline" => ModeConfig::Offline,
                    "online" => ModeConfig::Online,
                    other => bail!("unknown mode '{other}' (expected offline or online)"),
                };
            }
            let dir = out_dir(out)?;
            let result = experiments::run_sweep(&cfg, &dir)?;
            for cell in &result.cells {
                println!(
                    "value {}: median terminal {:.3e}, median iters-to-1e-2 {:?}",
                    cell.value, cell.median_terminal, cell.median_iters_to_1e2
                );
            }
            println!("sweep written to {}", dir.display());
        }
        Command::MvSim { config, out, seed } => {
            let cfg = load_config(&config)?;
            let dir = out_dir(out)?;
            let path = dir.join("wealth_stats.csv");
            experiments::run_mv_sim(&cfg, &path, seed)?;
            println!("wealth statistics -> {}", path.display());
        }
        Command::Plot { out, csvs } => {
            let mut series = Vec::new();
            for path in &csvs {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                let label = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().to_string())
                    .unwrap_or_else(|| "series".into());
                series.push(
                    plot::parse_history_csv(&text, &label)
                        .with_context(|| format!("parsing {}", path.display()))?,
                );
            }
            let svg = plot::emit_plot(&series);
            std::fs::write(&out, svg).with_context(|| format!("writing {}", out.display()))?;
            println!("chart -> {}", out.display());
        }
    }
    Ok(())
}
