use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use spikecov::cumulants::exact_tensor;
use spikecov::mc_harness::{self, ExperimentConfig};
use spikecov::model_gen::{population_axes, SpikedModelSpec};
use spikecov::perturbation::{fuzz, FuzzConfig};
use spikecov::spike_theory::{is_supercritical, predict, CumulantSource, SpikeSpectrum, TheoryPrediction};
use spikecov::{Error, VERSION};

#[derive(Parser)]
#[command(name = "spikecov", version, about = "Spiked covariance theory and Monte Carlo checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form predictions for every spike.
    Theory(TheoryArgs),
    /// Per-replicate sample eigenstructure.
    Simulate(RunArgs),
    /// Run the configured Monte Carlo targets; exit 1 if any fails.
    Verify(RunArgs),
    /// Fuzz the first-order eigenvector perturbation bound.
    PerturbCheck(PerturbArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Both,
}

impl Format {
    fn json(self) -> bool {
        self != Format::Csv
    }

    fn csv(self) -> bool {
        self != Format::Json
    }
}

#[derive(Args)]
struct TheoryArgs {
    /// Experiment or model config (JSON).
    #[arg(long, conflicts_with_all = ["ells", "gamma"])]
    config: Option<PathBuf>,
    /// Spike strengths, descending.
    #[arg(long, value_delimiter = ',', requires = "gamma")]
    ells: Option<Vec<f64>>,
    /// Aspect ratio `p/n`.
    #[arg(long, requires = "ells")]
    gamma: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    format: Format,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value = "both")]
    format: Format,
}

#[derive(Args)]
struct PerturbArgs {
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    /// Single matrix dimension; cycles through 2..=8 when absent.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, default_value_t = 0.25)]
    gap_ratio: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(String),
    Verification,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidSpec(_) | Error::Domain(_) | Error::DegenerateSpectrum(_) => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn read_json(path: &Path) -> Result<Value, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn parse<T: serde::de::DeserializeOwned>(value: Value, path: &Path) -> Result<T, Failure> {
    serde_json::from_value(value).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

/// Experiment config with command-line overrides applied and recorded.
fn load_experiment(args: &RunArgs) -> Result<(ExperimentConfig, BTreeMap<String, String>), Failure> {
    let mut config: ExperimentConfig = parse(read_json(&args.config)?, &args.config)?;
    let mut overrides = BTreeMap::new();
    if let Some(seed) = args.seed {
        config.model.seed = seed;
        overrides.insert("seed".into(), seed.to_string());
    }
    if let Some(reps) = args.reps {
        config.reps = reps;
        overrides.insert("reps".into(), reps.to_string());
    }
    if let Some(workers) = args.workers {
        config.workers = Some(workers);
        overrides.insert("workers".into(), workers.to_string());
    }
    config.validate()?;
    Ok((config, overrides))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(path, e))?;
    writeln!(w).map_err(|e| io_err(path, e))
}

/// CSV with a leading `#` line carrying the schema, library version and
/// resolved config.
fn write_csv<T: Serialize>(path: &Path, schema: &str, config: &impl Serialize, rows: &[T]) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let config = serde_json::to_string(config).map_err(|e| io_err(path, e))?;
    writeln!(out, "# spikecov {VERSION} schema={schema}/1 config={config}").map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Serialize)]
struct TheoryRow {
    nu: usize,
    ell: f64,
    gamma: f64,
    regime: &'static str,
    /// `ρ(ℓ, γ)`, or the bulk edge for subcritical spikes.
    rho: f64,
    rho_dot: Option<f64>,
    sigma2: Option<f64>,
    sigma2_gaussian: Option<f64>,
    cos2_limit: f64,
    theta: Option<f64>,
    omega: Option<f64>,
    c_rho: Option<f64>,
    slutsky: Option<f64>,
    /// Row-major entries of the eigenvector covariance, `;`-separated.
    evec_cov: Option<String>,
}

impl TheoryRow {
    fn supercritical(p: &TheoryPrediction) -> Self {
        let cov = p.evec_cov.transpose().iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(";");
        Self {
            nu: p.nu + 1,
            ell: p.ell,
            gamma: p.gamma,
            regime: "supercritical",
            rho: p.rho,
            rho_dot: Some(p.rho_dot),
            sigma2: Some(p.sigma2),
            sigma2_gaussian: Some(p.sigma2_gaussian),
            cos2_limit: p.cos2_limit,
            theta: Some(p.theta),
            omega: Some(p.omega),
            c_rho: Some(p.c_rho),
            slutsky: Some(p.slutsky),
            evec_cov: Some(cov),
        }
    }

    fn subcritical(nu: usize, ell: f64, gamma: f64) -> Self {
        Self {
            nu: nu + 1,
            ell,
            gamma,
            regime: "subcritical",
            rho: (1.0 + gamma.sqrt()).powi(2),
            rho_dot: None,
            sigma2: None,
            sigma2_gaussian: None,
            cos2_limit: 0.0,
            theta: None,
            omega: None,
            c_rho: None,
            slutsky: None,
            evec_cov: None,
        }
    }
}

#[derive(Serialize)]
struct TheoryOutput<'a> {
    version: &'a str,
    model: Option<&'a SpikedModelSpec>,
    ells: &'a [f64],
    gamma: f64,
    rows: &'a [TheoryRow],
}

fn cmd_theory(args: TheoryArgs) -> Result<(), Failure> {
    let (model, ells, gamma) = match (&args.config, &args.ells, args.gamma) {
        (Some(path), _, _) => {
            let mut value = read_json(path)?;
            if let Some(model) = value.get_mut("model") {
                value = model.take();
            }
            let model: SpikedModelSpec = parse(value, path)?;
            model.validate()?;
            let gamma = model.gamma_n();
            (Some(model.clone()), model.ells, gamma)
        }
        (None, Some(ells), Some(gamma)) => (None, ells.clone(), gamma),
        _ => return Err(Failure::Usage("theory needs --config or both --ells and --gamma".into())),
    };
    if ells.is_empty() {
        return Err(Failure::Usage("empty spike list".into()));
    }
    let spectrum = SpikeSpectrum::new(ells.clone(), gamma)?;
    let tensor = match &model {
        Some(m) => {
            let axes = population_axes(m)?;
            Some((exact_tensor(&m.signal_dist, &axes.p, &m.ells)?, axes.p))
        }
        None => None,
    };
    let source = match &tensor {
        Some((kappa, axes)) => CumulantSource::Tensor { kappa, axes },
        None => CumulantSource::Gaussian,
    };
    let mut rows = Vec::with_capacity(ells.len());
    for (nu, &ell) in ells.iter().enumerate() {
        rows.push(if is_supercritical(ell, gamma) {
            TheoryRow::supercritical(&predict(&spectrum, nu, gamma, source)?)
        } else {
            TheoryRow::subcritical(nu, ell, gamma)
        });
    }

    println!("{:>3} {:>8} {:>8} {:>13} {:>12} {:>10} {:>12} {:>10}", "nu", "ell", "gamma", "regime", "rho", "rho_dot", "sigma2", "cos2");
    let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
    for r in &rows {
        println!(
            "{:>3} {:>8} {:>8} {:>13} {:>12.6} {:>10} {:>12} {:>10.6}",
            r.nu,
            r.ell,
            r.gamma,
            r.regime,
            r.rho,
            show(r.rho_dot),
            show(r.sigma2),
            r.cos2_limit
        );
    }

    if let Some(dir) = &args.out_dir {
        create_dir(dir)?;
        let output = TheoryOutput { version: VERSION, model: model.as_ref(), ells: &ells, gamma, rows: &rows };
        if args.format.json() {
            write_json(&dir.join("theory.json"), &output)?;
        }
        if args.format.csv() {
            #[derive(Serialize)]
            struct Provenance<'a> {
                model: Option<&'a SpikedModelSpec>,
                ells: &'a [f64],
                gamma: f64,
            }
            let prov = Provenance { model: model.as_ref(), ells: &ells, gamma };
            write_csv(&dir.join("theory.csv"), "theory", &prov, &rows)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    version: &'a str,
    config: &'a ExperimentConfig,
    overrides: &'a BTreeMap<String, String>,
    rows: usize,
}

fn cmd_simulate(args: RunArgs) -> Result<(), Failure> {
    let (config, overrides) = load_experiment(&args)?;
    let rows = mc_harness::simulate(&config.model, config.reps, config.workers)?;
    create_dir(&args.out_dir)?;
    if args.format.csv() {
        write_csv(&args.out_dir.join("spectra.csv"), "spectra", &config, &rows)?;
    }
    if args.format.json() {
        let summary = SimulateSummary { version: VERSION, config: &config, overrides: &overrides, rows: rows.len() };
        write_json(&args.out_dir.join("simulate.json"), &summary)?;
    }
    eprintln!("wrote {} rows for {} replicates to {}", rows.len(), config.reps, args.out_dir.display());
    Ok(())
}

fn cmd_verify(args: RunArgs) -> Result<(), Failure> {
    let (config, overrides) = load_experiment(&args)?;
    let run = mc_harness::run_with_overrides(&config, overrides)?;
    create_dir(&args.out_dir)?;
    if args.format.json() {
        write_json(&args.out_dir.join("report.json"), &run.report)?;
    }
    if args.format.csv() {
        write_csv(&args.out_dir.join("replicates.csv"), "replicates", &config, &run.rows)?;
    }
    for s in &run.report.sections {
        let failed: Vec<String> = s
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| {
                let bound = match (c.min, c.max) {
                    (Some(lo), Some(hi)) => format!("in [{lo}, {hi}]"),
                    (Some(lo), None) => format!(">= {lo}"),
                    (None, Some(hi)) => format!("<= {hi}"),
                    (None, None) => String::new(),
                };
                format!("{} = {:.6} (want {bound})", c.name, c.value)
            })
            .collect();
        let verdict = if s.pass { "PASS" } else { "FAIL" };
        eprintln!("{verdict} {} ({} used, {} excluded)", s.label, s.replicates_used, s.excluded);
        for f in failed {
            eprintln!("    {f}");
        }
    }
    if run.report.pass {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn cmd_perturb_check(args: PerturbArgs) -> Result<(), Failure> {
    let dims = match args.dim {
        Some(d) => vec![d],
        None => (2..=8).collect(),
    };
    let config = FuzzConfig { trials: args.trials, dims, gap_ratio: args.gap_ratio, seed: args.seed };
    let report = fuzz(&config)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("{text}");
    if let Some(dir) = &args.out_dir {
        create_dir(dir)?;
        write_json(&dir.join("perturb.json"), &report)?;
    }
    if report.pass() {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Theory(a) => cmd_theory(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Verify(a) => cmd_verify(a),
        Command::PerturbCheck(a) => cmd_perturb_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(1),
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
