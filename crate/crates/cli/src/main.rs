//! `sparsica`: batch driver for dataset generation, condition checks,
//! training, evaluation and the ablation, stability and audit studies.
//!
//! Exit status is 0 on success, 1 for invalid input and 2 for runtime failures.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use sparsica::data::{generate_dataset, load_dataset, render_triangles, save_dataset, write_factors_csv, write_images, DEFAULT_SIZE};
use sparsica::estimation::train;
use sparsica::evaluation::{mcc, CorrelationMethod};
use sparsica::experiment::{run_check, run_experiment, write_outputs, ExperimentConfig, RunRecord, Variant, CONFIG_SCHEMA};
use sparsica::flow::CouplingFlow;
use sparsica::linalg::{derived_seed, gaussian_matrix, seeded_rng};
use sparsica::linear::recover_linear_gaussian;
use sparsica::prior::GaussianPrior;
use sparsica::{Error, Result};

#[derive(Parser)]
#[command(name = "sparsica", version, about = "Structural-sparsity ICA toolkit")]
struct Cli {
    /// JSON configuration document (see `sparsica schema`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output location.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Gen {
        /// Generator name: ss, ii, vp, base or linear.
        #[arg(long, default_value = "ss")]
        generator: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Check structural conditions of a mask file or dataset directory.
    Check { input: PathBuf },
    /// Fit one estimator variant to a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "SS")]
        variant: Variant,
    },
    /// MCC of a trained flow against a dataset's sources.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        method: Option<CorrelationMethod>,
    },
    /// Sparsest-rotation estimate of a linear Gaussian mixing.
    LinearSolve {
        #[arg(long)]
        data: PathBuf,
        /// Number of sources; defaults to the dataset's.
        #[arg(long)]
        n: Option<usize>,
    },
    Ablation(StudyArgs),
    Stability(StudyArgs),
    MpaAudit(StudyArgs),
    /// Run the experiment named in the configuration.
    Experiment(StudyArgs),
    /// Render triangle images from random factors.
    TrianglesGen {
        #[arg(long, default_value_t = 1000)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_SIZE)]
        size: usize,
    },
    /// Print the configuration JSON schema.
    Schema,
}

#[derive(Args)]
struct StudyArgs {
    /// Overrides the configured trial count.
    #[arg(long)]
    trials: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn out_dir(cli: &Cli, fallback: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn emit(cli: &Cli, file: &str, json: &str) -> Result<()> {
    // a closed pipe downstream is not our failure
    let _ = writeln!(std::io::stdout().lock(), "{json}");
    if let Some(dir) = &cli.out {
        write_file(&dir.join(file), format!("{json}\n"))?;
    }
    Ok(())
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Gen { generator, n, m, k } => {
            let config = load_config(&cli)?;
            let mut data = config.data.clone();
            if let Some(n) = n {
                data.n = *n;
            }
            if m.is_some() {
                data.m = *m;
            }
            if let Some(k) = k {
                data.k = *k;
            }
            let d = generate_dataset(generator, &data, config.seed)?;
            let dir = out_dir(&cli, "dataset");
            save_dataset(&d, &dir)?;
            println!("wrote {} ({} samples, n={}, m={}) to {}", d.generator, d.k(), d.n(), d.m(), dir.display());
        }
        Command::Check { input } => {
            let reports = run_check(input)?;
            emit(&cli, "check.json", &serde_json::to_string_pretty(&reports)?)?;
        }
        Command::Train { data, variant } => {
            let config = load_config(&cli)?;
            let d = load_dataset(data)?;
            let n = d.n();
            if d.m() != n {
                return Err(Error::Invalid(format!("flows need m = n, dataset has m={} n={n}", d.m())));
            }
            let mut rng = seeded_rng(derived_seed(config.seed, 2));
            let f = &config.flow;
            let flow = CouplingFlow::random(n, f.layers, f.hidden, variant.flow_mode(), f.init_scale, &mut rng)?;
            let fitted = train(
                flow,
                GaussianPrior::standard(n),
                &d.observations,
                &variant.train_config(&config.train, config.seed),
            )?;
            let dir = out_dir(&cli, "model");
            write_file(&dir.join("flow.json"), fitted.flow.to_json()?)?;
            write_file(&dir.join("prior.json"), serde_json::to_string_pretty(&fitted.prior)?)?;
            write_file(&dir.join("history.csv"), fitted.history.to_csv()?)?;
            let last = fitted.history.last();
            println!(
                "trained {variant} for {} epochs; final loglik {:.4}{}; wrote {}",
                fitted.history.len(),
                last.map_or(f64::NAN, |r| r.loglik),
                fitted.diverged_at.map_or(String::new(), |e| format!(" (diverged at epoch {e})")),
                dir.display()
            );
        }
        Command::Eval { data, flow, method } => {
            let config = load_config(&cli)?;
            let d = load_dataset(data)?;
            let flow = CouplingFlow::from_json(&read_file(flow)?)?;
            let estimates = flow.inverse_rows(&d.observations)?;
            let report = mcc(&d.sources, &estimates, method.unwrap_or(config.correlation))?;
            emit(&cli, "eval.json", &serde_json::to_string_pretty(&report)?)?;
        }
        Command::LinearSolve { data, n } => {
            let config = load_config(&cli)?;
            let d = load_dataset(data)?;
            let mut search = config.rotation_search.clone();
            search.seed = config.seed;
            let rec = recover_linear_gaussian(&d.observations, n.unwrap_or(d.n()), &search)?;
            let out = serde_json::json!({
                "estimate": matrix_rows(&rec.mixing.matrix),
                "l0": rec.search.l0,
                "objective": rec.search.objective,
                "best_restart": rec.search.best_restart,
            });
            emit(&cli, "linear.json", &serde_json::to_string_pretty(&out)?)?;
        }
        Command::Ablation(args) => study(&cli, Some("ablation"), args)?,
        Command::Stability(args) => study(&cli, Some("stability"), args)?,
        Command::MpaAudit(args) => study(&cli, Some("mpa-audit"), args)?,
        Command::Experiment(args) => study(&cli, None, args)?,
        Command::TrianglesGen { k, size } => {
            let config = load_config(&cli)?;
            let factors = gaussian_matrix(*k, 4, &mut seeded_rng(config.seed));
            let images = render_triangles(&factors, *size)?;
            let dir = out_dir(&cli, "triangles");
            fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
            write_factors_csv(&dir.join("factors.csv"), &factors)?;
            write_images(&dir.join("images"), &images)?;
            println!("wrote {k} triangles to {}", dir.display());
        }
        Command::Schema => println!("{}", CONFIG_SCHEMA.trim_end()),
    }
    Ok(())
}

fn study(cli: &Cli, experiment: Option<&str>, args: &StudyArgs) -> Result<()> {
    let mut config = load_config(cli)?;
    if let Some(name) = experiment {
        config.experiment = name.into();
    }
    if let Some(trials) = args.trials {
        config.trials = trials;
    }
    if cli.out.is_some() {
        config.output = cli.out.clone();
    }
    let root = config.output.clone().unwrap_or_else(|| PathBuf::from("runs"));
    let (record, artifacts) = run_experiment(&config)?;
    let path = write_outputs(&root, &record, &artifacts)?;
    print_summary(&record);
    println!("summary: {}", path.display());
    Ok(())
}

fn print_summary(record: &RunRecord) {
    for r in &record.conditions {
        println!("{}: {}", r.condition, if r.verdict { "holds" } else { "fails" });
    }
    for e in &record.summary {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "{:<6} n={} m={} {}: mean {} std {} ({}/{} completed)",
            e.variant,
            e.n,
            e.m,
            record.metric,
            fmt(e.mean),
            fmt(e.std),
            e.completed,
            e.trials
        );
    }
}
