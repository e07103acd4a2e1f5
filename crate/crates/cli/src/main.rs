//! Command-line front end: menus, Fisher sweeps, design solves, simulation,
//! estimation, adaptive runs, landscape sweeps, and design certification,
//! all driven by a single JSON config with flag overrides.
//!
//! Exit codes: 0 success, 2 usage or missing inputs, 3 numerical failure,
//! 4 certificate failure.

mod config;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use config::{parse_grid, parse_list, parse_pair, parse_u64_list, RunConfig, ARTIFACT_VERSION};
use qest::design::{
    equivalence_gap, optimize_a_design, schur_certificate, DesignWeights, SolverOptions,
};
use qest::estimate::{
    adaptive_loop, mle_grid, mle_refine, mse_curve, read_dataset, sample_dataset, write_dataset,
    write_surface_csv,
};
use qest::fisher::{combined_fisher, menu_fisher_matrices, write_fisher_dump, DEFAULT_FD_STEP};
use qest::menu::{
    apply_gate_error, build_full_menu, optimal_pair_menu, read_menu, suboptimal_menu, write_menu,
    ExperimentMenu,
};
use qest::sweep::{estimability_landscape, robustness_landscape, write_landscape_csv};

#[derive(Parser)]
#[command(
    name = "qest",
    version,
    about = "Optimal experiment design for two-qubit process estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; each overrides its config-file field.
#[derive(Args, Debug, Default)]
struct CommonFlags {
    /// JSON config file; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Initial parameter guess as "F,G"
    #[arg(long, value_name = "F,G")]
    theta_guess: Option<String>,
    /// True parameters used for simulation, as "F,G"
    #[arg(long, value_name = "F,G")]
    theta_truth: Option<String>,
    /// Known detuning
    #[arg(long)]
    delta_omega: Option<f64>,
    /// Probe times, comma separated
    #[arg(long, value_name = "a,b,c")]
    times: Option<String>,
    /// Total number of runs to simulate / allocate
    #[arg(long, short = 'n')]
    n: Option<u64>,
    /// RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluation grid "fmin:fmax:nf,gmin:gmax:ng"
    #[arg(long, value_name = "SPEC")]
    grid: Option<String>,
    /// Worker threads (0 = automatic); any value gives identical outputs
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Preparation gate error in [0, 1)
    #[arg(long)]
    gate_error_prep: Option<f64>,
    /// Measurement gate error in [0, 1)
    #[arg(long)]
    gate_error_meas: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an experiment menu and write it as JSON
    Menu {
        #[command(flatten)]
        common: CommonFlags,
        /// full | suboptimal | table3 | path to a menu file
        #[arg(long)]
        source: Option<String>,
    },
    /// Per-experiment Fisher matrices at the current guess
    Fisher {
        #[command(flatten)]
        common: CommonFlags,
        /// Menu file (defaults to <out>/menu.json)
        #[arg(long)]
        menu: Option<PathBuf>,
    },
    /// Solve the A-optimal design problem over the menu
    Design {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        menu: Option<PathBuf>,
    },
    /// Draw a dataset from the true parameters under a design
    Simulate {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        menu: Option<PathBuf>,
        /// Design file (defaults to <out>/design.json)
        #[arg(long)]
        design: Option<PathBuf>,
    },
    /// Maximum-likelihood estimate from a dataset
    Estimate {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        menu: Option<PathBuf>,
        /// Dataset file (defaults to <out>/dataset.json)
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Run the adaptive design/estimate loop
    Adapt {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        menu: Option<PathBuf>,
        /// Number of rounds
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Optimal-design estimability landscape over the parameter plane
    SweepEstimability {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        menu: Option<PathBuf>,
    },
    /// Fixed-design robustness landscape over the parameter plane
    SweepRobustness {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        menu: Option<PathBuf>,
        #[arg(long)]
        design: Option<PathBuf>,
    },
    /// Verify a design file: block-PSD certificate and equivalence gap
    Certify {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        menu: Option<PathBuf>,
        #[arg(long)]
        design: Option<PathBuf>,
    },
    /// Monte-Carlo MSE of the design versus number of runs
    MseCurve {
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long)]
        menu: Option<PathBuf>,
        #[arg(long)]
        design: Option<PathBuf>,
        /// Trials per point
        #[arg(long)]
        trials: Option<usize>,
        /// Run counts, comma separated
        #[arg(long, value_name = "a,b,c")]
        n_list: Option<String>,
    },
}

/// Exit 2: bad arguments or missing/invalid input files.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

/// Exit 4: a certificate check failed.
#[derive(Debug)]
struct CertificateFailure;

impl std::fmt::Display for CertificateFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "certificate check failed")
    }
}

impl std::error::Error for CertificateFailure {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(anyhow!(UsageError(msg.into())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

fn classify(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<CertificateFailure>().is_some() {
        return 4;
    }
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    if let Some(qe) = err.downcast_ref::<qest::Error>() {
        return match qe {
            qest::Error::NotEstimable(_)
            | qest::Error::NumericalIntegrity(_)
            | qest::Error::Singular { .. }
            | qest::Error::NonRealTrace { .. }
            | qest::Error::NotHermitian { .. }
            | qest::Error::RefineFromInvalidStart
            | qest::Error::EmptyLandscape => 3,
            _ => 2,
        };
    }
    2
}

fn resolve_config(common: &CommonFlags) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())
        .map_err(|e| anyhow!(UsageError(format!("{e:#}"))))?;
    if let Some(s) = &common.theta_guess {
        cfg.theta_guess = parse_pair(s).map_err(|e| anyhow!(UsageError(e.to_string())))?;
    }
    if let Some(s) = &common.theta_truth {
        cfg.theta_truth = parse_pair(s).map_err(|e| anyhow!(UsageError(e.to_string())))?;
    }
    if let Some(v) = common.delta_omega {
        cfg.delta_omega = v;
    }
    if let Some(s) = &common.times {
        cfg.times = parse_list(s).map_err(|e| anyhow!(UsageError(e.to_string())))?;
    }
    if let Some(n) = common.n {
        cfg.n_samples = n;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(s) = &common.grid {
        cfg.grid = parse_grid(s).map_err(|e| anyhow!(UsageError(e.to_string())))?;
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    if let Some(dir) = &common.out {
        cfg.output_dir = dir.clone();
    }
    if let Some(e) = common.gate_error_prep {
        cfg.gate_error_prep = e;
    }
    if let Some(e) = common.gate_error_meas {
        cfg.gate_error_meas = e;
    }
    cfg.validate()
        .map_err(|e| anyhow!(UsageError(e.to_string())))?;
    if cfg.threads > 0 {
        // identical outputs under any pool size; this only bounds parallelism
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global();
    }
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("cannot create {}", cfg.output_dir.display()))?;
    Ok(cfg)
}

fn default_path(cfg: &RunConfig, flag: &Option<PathBuf>, name: &str) -> PathBuf {
    flag.clone().unwrap_or_else(|| cfg.output_dir.join(name))
}

fn load_menu(cfg: &RunConfig, path: &Path) -> Result<ExperimentMenu> {
    if !path.exists() {
        return usage(format!("menu file {} does not exist", path.display()));
    }
    let menu = read_menu(path)?;
    if menu.is_empty() {
        return usage(format!("menu file {} is empty", path.display()));
    }
    // runtime gate error on top of whatever the file recorded
    if cfg.gate_error_prep > 0.0 || cfg.gate_error_meas > 0.0 {
        Ok(apply_gate_error(&menu, cfg.gate_error_prep, cfg.gate_error_meas)?)
    } else {
        Ok(menu)
    }
}

fn write_json_with_meta(cfg: &RunConfig, path: &Path, mut value: serde_json::Value) -> Result<()> {
    let obj = value
        .as_object_mut()
        .expect("output documents are JSON objects");
    obj.insert("artifact_version".into(), json!(ARTIFACT_VERSION));
    obj.insert("config_hash".into(), json!(cfg.hash()));
    std::fs::write(path, serde_json::to_string_pretty(&value)?)?;
    Ok(())
}

/// Prepend the metadata comment line to a CSV file the core just wrote.
fn stamp_csv(cfg: &RunConfig, path: &Path) -> Result<()> {
    let body = std::fs::read_to_string(path)?;
    let header = format!("# artifact={} config={}\n", ARTIFACT_VERSION, cfg.hash());
    std::fs::write(path, header + &body)?;
    Ok(())
}

#[derive(Serialize)]
struct DesignFileSupport {
    id: usize,
    weight: f64,
}

fn design_to_json(cfg: &RunConfig, result: &qest::design::DesignResult) -> serde_json::Value {
    let support: Vec<DesignFileSupport> = result
        .weights
        .support()
        .into_iter()
        .map(|id| DesignFileSupport {
            id,
            weight: result.weights.weights[id],
        })
        .collect();
    json!({
        "theta_at": {
            "f": cfg.theta_guess.0,
            "g": cfg.theta_guess.1,
            "delta_omega": cfg.delta_omega,
        },
        "objective": result.objective,
        "gap": result.equivalence_gap,
        "support": serde_json::to_value(&support).unwrap(),
        "merged_support": serde_json::to_value(&result.merged_support).unwrap(),
        "options": serde_json::to_value(SolverOptions::default()).unwrap(),
        "iterations": result.iterations,
        "converged": result.converged,
        "n_experiments": result.weights.weights.len(),
    })
}

fn load_design_weights(menu_len: usize, path: &Path) -> Result<(DesignWeights, (f64, f64, f64))> {
    if !path.exists() {
        return usage(format!("design file {} does not exist", path.display()));
    }
    let value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let n = value["n_experiments"]
        .as_u64()
        .ok_or_else(|| anyhow!(UsageError("design file lacks n_experiments".into())))?
        as usize;
    if n != menu_len {
        return usage(format!(
            "design file was computed for a {n}-experiment menu, but the menu has {menu_len}"
        ));
    }
    let mut weights = vec![0.0; menu_len];
    for entry in value["support"]
        .as_array()
        .ok_or_else(|| anyhow!(UsageError("design file lacks support".into())))?
    {
        let id = entry["id"].as_u64().unwrap_or(u64::MAX) as usize;
        let w = entry["weight"].as_f64().unwrap_or(0.0);
        if id >= menu_len {
            return usage(format!("design support id {id} outside the menu"));
        }
        weights[id] = w;
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return usage("design file has empty support".to_string());
    }
    for w in weights.iter_mut() {
        *w /= total;
    }
    let theta = (
        value["theta_at"]["f"].as_f64().unwrap_or(f64::NAN),
        value["theta_at"]["g"].as_f64().unwrap_or(f64::NAN),
        value["theta_at"]["delta_omega"].as_f64().unwrap_or(f64::NAN),
    );
    Ok((DesignWeights::new(weights), theta))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Menu { common, source } => {
            let mut cfg = resolve_config(&common)?;
            if let Some(s) = source {
                cfg.menu_source = s;
            }
            let menu = match cfg.menu_source.as_str() {
                "full" => build_full_menu(&cfg.times)?,
                "suboptimal" => suboptimal_menu(),
                "table3" => optimal_pair_menu(),
                other => {
                    let path = Path::new(other);
                    if !path.exists() {
                        return usage(format!("unknown menu source {other:?}"));
                    }
                    read_menu(path)?
                }
            };
            let menu = if cfg.gate_error_prep > 0.0 || cfg.gate_error_meas > 0.0 {
                apply_gate_error(&menu, cfg.gate_error_prep, cfg.gate_error_meas)?
            } else {
                menu
            };
            let path = cfg.output_dir.join("menu.json");
            write_menu(&menu, &path)?;
            println!("{}", menu.len());
            Ok(())
        }
        Command::Fisher { common, menu } => {
            let cfg = resolve_config(&common)?;
            let menu = load_menu(&cfg, &default_path(&cfg, &menu, "menu.json"))?;
            let fishers = menu_fisher_matrices(&menu, &cfg.guess_params(), DEFAULT_FD_STEP)?;
            let path = cfg.output_dir.join("fisher.csv");
            write_fisher_dump(&fishers, &path)?;
            stamp_csv(&cfg, &path)?;
            println!(
                "wrote {} Fisher matrices to {}",
                fishers.len(),
                path.display()
            );
            Ok(())
        }
        Command::Design { common, menu } => {
            let cfg = resolve_config(&common)?;
            let menu = load_menu(&cfg, &default_path(&cfg, &menu, "menu.json"))?;
            let fishers = menu_fisher_matrices(&menu, &cfg.guess_params(), DEFAULT_FD_STEP)?;
            let result = optimize_a_design(&fishers, &SolverOptions::default())?;
            let path = cfg.output_dir.join("design.json");
            write_json_with_meta(&cfg, &path, design_to_json(&cfg, &result))?;
            println!(
                "objective {:.6}  gap {:.3e}  support {:?}",
                result.objective,
                result.equivalence_gap,
                result
                    .merged_support
                    .iter()
                    .map(|g| (g.representative, (g.weight * 1e4).round() / 1e4))
                    .collect::<Vec<_>>()
            );
            Ok(())
        }
        Command::Simulate {
            common,
            menu,
            design,
        } => {
            let cfg = resolve_config(&common)?;
            let menu = load_menu(&cfg, &default_path(&cfg, &menu, "menu.json"))?;
            let (weights, _) =
                load_design_weights(menu.len(), &default_path(&cfg, &design, "design.json"))?;
            let dataset = sample_dataset(
                &menu,
                &weights,
                &cfg.truth_params(),
                cfg.n_samples,
                cfg.seed,
            )?;
            let path = cfg.output_dir.join("dataset.json");
            write_dataset(&dataset, &path)?;
            let total: u64 = dataset.entries.iter().map(|e| e.n_runs).sum();
            println!(
                "sampled {total} runs over {} experiments",
                dataset.entries.len()
            );
            Ok(())
        }
        Command::Estimate {
            common,
            menu,
            dataset,
        } => {
            let cfg = resolve_config(&common)?;
            let menu = load_menu(&cfg, &default_path(&cfg, &menu, "menu.json"))?;
            let ds_path = default_path(&cfg, &dataset, "dataset.json");
            if !ds_path.exists() {
                return usage(format!("dataset file {} does not exist", ds_path.display()));
            }
            let ds = read_dataset(&ds_path)?;
            let base = cfg.guess_params();
            let surface = mle_grid(&ds, &menu, &base, &cfg.grid_spec())?;
            let estimate = mle_refine(&ds, &menu, &base, surface.argmax)?;
            let surf_path = cfg.output_dir.join("surface.csv");
            write_surface_csv(&surface, &surf_path)?;
            stamp_csv(&cfg, &surf_path)?;
            let ll = qest::estimate::log_likelihood(&ds, &menu, &estimate)?;
            write_json_with_meta(
                &cfg,
                &cfg.output_dir.join("estimate.json"),
                json!({
                    "theta_hat": {"f": estimate.f, "g": estimate.g},
                    "grid_argmax": {"f": surface.argmax.0, "g": surface.argmax.1},
                    "log_likelihood": ll,
                }),
            )?;
            println!("estimate F={:.5} G={:.5}", estimate.f, estimate.g);
            Ok(())
        }
        Command::Adapt {
            common,
            menu,
            rounds,
        } => {
            let mut cfg = resolve_config(&common)?;
            if let Some(r) = rounds {
                cfg.rounds = r;
            }
            let menu = load_menu(&cfg, &default_path(&cfg, &menu, "menu.json"))?;
            let trace = adaptive_loop(
                &menu,
                &cfg.guess_params(),
                &cfg.truth_params(),
                cfg.rounds,
                cfg.n_samples,
                cfg.seed,
                &SolverOptions::default(),
                &cfg.grid_spec(),
            )?;
            let rounds_json: Vec<serde_json::Value> = trace
                .iter()
                .map(|r| {
                    json!({
                        "round": r.round,
                        "objective": r.design.objective,
                        "gap": r.design.equivalence_gap,
                        "support": r.design.weights.support(),
                        "estimate": {"f": r.estimate.f, "g": r.estimate.g},
                    })
                })
                .collect();
            write_json_with_meta(
                &cfg,
                &cfg.output_dir.join("adapt.json"),
                json!({"rounds": rounds_json}),
            )?;
            for r in &trace {
                println!(
                    "round {}: objective {:.5}, estimate F={:.5} G={:.5}",
                    r.round, r.design.objective, r.estimate.f, r.estimate.g
                );
            }
            Ok(())
        }
        Command::SweepEstimability { common, menu } => {
            let cfg = resolve_config(&common)?;
            let menu = load_menu(&cfg, &default_path(&cfg, &menu, "menu.json"))?;
            let land = estimability_landscape(&menu, &cfg.grid_spec(), &SolverOptions::default());
            let path = cfg.output_dir.join("estimability.csv");
            write_landscape_csv(&land, &path)?;
            stamp_csv(&cfg, &path)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::SweepRobustness {
            common,
            menu,
            design,
        } => {
            let cfg = resolve_config(&common)?;
            let menu = load_menu(&cfg, &default_path(&cfg, &menu, "menu.json"))?;
            let (weights, _) =
                load_design_weights(menu.len(), &default_path(&cfg, &design, "design.json"))?;
            let land = robustness_landscape(&menu, &weights, &cfg.grid_spec())?;
            let path = cfg.output_dir.join("robustness.csv");
            write_landscape_csv(&land, &path)?;
            stamp_csv(&cfg, &path)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Certify {
            common,
            menu,
            design,
        } => {
            let cfg = resolve_config(&common)?;
            let menu = load_menu(&cfg, &default_path(&cfg, &menu, "menu.json"))?;
            let (weights, theta) =
                load_design_weights(menu.len(), &default_path(&cfg, &design, "design.json"))?;
            let params = qest::model::ModelParams::new(theta.0, theta.1, theta.2);
            let fishers = menu_fisher_matrices(&menu, &params, DEFAULT_FD_STEP)?;
            let combined = combined_fisher(&fishers, &weights.weights)?;
            let finv = combined.m.inverse()?;
            let objective = finv.trace();
            let block_ok = schur_certificate(&finv, &combined);
            let gap = equivalence_gap(&fishers, &weights.weights)?;
            let gap_ok = gap <= 2e-5 * objective;
            println!(
                "objective {objective:.6}  gap {gap:.3e}  block-psd {}  gap-check {}",
                if block_ok { "ok" } else { "violated" },
                if gap_ok { "ok" } else { "violated" },
            );
            if block_ok && gap_ok {
                println!("PASS");
                Ok(())
            } else {
                println!("FAIL");
                Err(anyhow!(CertificateFailure))
            }
        }
        Command::MseCurve {
            common,
            menu,
            design,
            trials,
            n_list,
        } => {
            let mut cfg = resolve_config(&common)?;
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(s) = &n_list {
                cfg.n_list = parse_u64_list(s).map_err(|e| anyhow!(UsageError(e.to_string())))?;
            }
            let menu = load_menu(&cfg, &default_path(&cfg, &menu, "menu.json"))?;
            let (weights, _) =
                load_design_weights(menu.len(), &default_path(&cfg, &design, "design.json"))?;
            let rows = mse_curve(
                &menu,
                &weights,
                &cfg.truth_params(),
                &cfg.guess_params(),
                &cfg.n_list,
                cfg.trials,
                cfg.seed,
                &cfg.grid_spec(),
            )?;
            let path = cfg.output_dir.join("mse.csv");
            let mut out = String::from("n,mse_optimal,mse_reference\n");
            for r in &rows {
                out.push_str(&format!("{},{},{}\n", r.n, r.mse_mean, r.cr_reference));
            }
            std::fs::write(&path, out)?;
            stamp_csv(&cfg, &path)?;
            for r in &rows {
                println!(
                    "n {}: mse {:.6} (reference {:.6})",
                    r.n, r.mse_mean, r.cr_reference
                );
            }
            Ok(())
        }
    }
}
