use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use unidd::cfm::{distill, SyntheticDataset};
use unidd::harness::{
    ablation_variants, evaluate, filter_variants, generate_gaussian_mixture, load_dataset, run_variants, squeeze,
    Comparison, EvalResult, RunConfig, SqueezeArtifact, Variant, VariantKind,
};
use unidd::spectral::{linear_grid, response_csv, FilterSpec};
use unidd::verify::{run_verification, DEFAULT_SEEDS};
use unidd::UniddError;

#[derive(Parser)]
#[command(name = "unidd", version, about = "Spectral-filter dataset distillation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the numerical property battery.
    Verify {
        /// Random instances per check.
        #[arg(long, default_value_t = DEFAULT_SEEDS)]
        seeds: usize,
        /// Where to write the JSON report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Export filter responses over an eigenvalue grid as CSV.
    Filters {
        /// Comma-separated ridge values for `(λ+β)⁻¹` columns.
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.01])]
        beta: Vec<f64>,
        /// Step size of the `(1-αλ)^p` column.
        #[arg(long, default_value_t = 0.4)]
        alpha: f64,
        #[arg(long, default_value_t = 2)]
        power: u32,
        /// Grid as MIN:MAX:STEPS.
        #[arg(long, default_value = "0:2:101")]
        grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the dataset, build the fixed net and collect real statistics.
    Squeeze(RunArgs),
    /// Distill a synthetic set from the squeeze artifacts in the output directory.
    Distill(RunArgs),
    /// Evaluate a distilled set with a fresh head.
    Eval(RunArgs),
    /// Filter-choice and loss-term comparison over several seeds.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Worker threads; defaults to the config value, then all cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; defaults apply when omitted.
    config: Option<PathBuf>,
    /// Overrides the config seed and UNIDD_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Debug)]
enum Failure {
    /// Exit 1.
    Numerical(String),
    /// Exit 2.
    Usage(String),
}

impl From<UniddError> for Failure {
    fn from(e: UniddError) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Usage(format!("{}: {e}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn load_config(args: &RunArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_toml(&fs::read_to_string(path).map_err(|e| io_err(path, e))?)?,
        None => RunConfig::default(),
    };
    if let Ok(v) = std::env::var("UNIDD_SEED") {
        cfg.seed = v
            .parse()
            .map_err(|_| Failure::Usage(format!("UNIDD_SEED is not an integer: {v}")))?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    Ok(cfg)
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

struct Layout<'a>(&'a Path);

impl Layout<'_> {
    fn train(&self) -> PathBuf {
        self.0.join("train.uds")
    }
    fn test(&self) -> PathBuf {
        self.0.join("test.uds")
    }
    fn squeeze(&self) -> PathBuf {
        self.0.join("squeeze.udsq")
    }
    fn synthetic(&self, seed: u64) -> PathBuf {
        self.0.join(format!("synthetic-{seed}.uds"))
    }
    fn losses(&self, seed: u64) -> PathBuf {
        self.0.join(format!("loss-{seed}.csv"))
    }
    fn eval(&self, seed: u64) -> PathBuf {
        self.0.join(format!("eval-{seed}.json"))
    }
}

fn cmd_verify(seeds: usize, report: Option<PathBuf>) -> Result<ExitCode, Failure> {
    let result = run_verification(seeds.max(1))?;
    for c in &result.checks {
        let status = match (c.asserted, c.pass) {
            (false, _) => "INFO",
            (true, true) => "PASS",
            (true, false) => "FAIL",
        };
        println!("{status} {} max_error={:e} seeds={}", c.name, c.max_error, c.seeds);
    }
    if let Some(path) = report {
        write(&path, json(&result))?;
    }
    let failed = result.failures().count();
    println!("{} checks, {failed} failed", result.checks.len());
    Ok(if result.all_pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn parse_grid(text: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Failure::Usage(format!("grid must be MIN:MAX:STEPS, got {text}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let min: f64 = parts[0].parse().map_err(|_| bad())?;
    let max: f64 = parts[1].parse().map_err(|_| bad())?;
    let steps: usize = parts[2].parse().map_err(|_| bad())?;
    linear_grid(min, max, steps).map_err(|e| Failure::Usage(e.to_string()))
}

fn cmd_filters(beta: &[f64], alpha: f64, power: u32, grid: &str, out: Option<PathBuf>) -> Result<ExitCode, Failure> {
    let grid = parse_grid(grid)?;
    let mut filters = vec![
        ("all_pass".to_string(), FilterSpec::AllPass),
        ("low_pass_linear".to_string(), FilterSpec::LowPassLinear),
        (
            format!("high_pass_power_a{alpha}_p{power}"),
            FilterSpec::HighPassPower { alpha, exponent: power },
        ),
    ];
    for &b in beta {
        filters.push((format!("high_pass_shift_inverse_b{b}"), FilterSpec::HighPassShiftInverse { beta: b }));
    }
    let lambda_max = grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for (_, f) in &filters {
        f.validate()?;
        f.check_stable(lambda_max)?;
    }
    let csv = response_csv(&filters, &grid)?;
    match out {
        Some(path) => {
            write(&path, &csv)?;
            println!("filters: {} columns x {} points -> {}", filters.len(), grid.len(), path.display());
        }
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_squeeze(args: &RunArgs) -> Result<ExitCode, Failure> {
    let cfg = load_config(args)?;
    let dir = Layout(&args.out);
    let (train, test) = generate_gaussian_mixture(&cfg.dataset)?;
    let sq = squeeze(&train, &cfg.net.to_config(), cfg.squeeze.ridge_beta)?;
    train.save(&dir.train())?;
    test.save(&dir.test())?;
    sq.save(&dir.squeeze())?;
    write(&args.out.join("run-config.toml"), cfg.to_toml())?;
    println!(
        "squeeze: {} train / {} test samples, {} layers, squeeze hash {}, config hash {}",
        train.len(),
        test.len(),
        sq.net.depth(),
        &sq.config_hash[..12],
        &cfg.hash()[..12]
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_distill(args: &RunArgs) -> Result<ExitCode, Failure> {
    let cfg = load_config(args)?;
    let dir = Layout(&args.out);
    let sq = SqueezeArtifact::load(&dir.squeeze())?;
    let train = load_dataset(&dir.train())?;
    let (synthetic, report) = distill(&train, &sq, &cfg.cfm, cfg.seed)?;
    synthetic.save(&dir.synthetic(cfg.seed))?;
    write(&dir.losses(cfg.seed), report.to_csv())?;
    let (first, last) = report.initial_and_final().unwrap_or((f64::NAN, f64::NAN));
    println!(
        "distill: seed {} -> {} synthetic samples, loss {first:.6} -> {last:.6}, config hash {}",
        cfg.seed,
        synthetic.data.len(),
        &synthetic.provenance.config_hash[..12]
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct EvalRecord<'a> {
    #[serde(flatten)]
    result: &'a EvalResult,
    seed: u64,
    run_config_hash: String,
    synthetic_config_hash: String,
    squeeze_hash: String,
}

fn cmd_eval(args: &RunArgs) -> Result<ExitCode, Failure> {
    let cfg = load_config(args)?;
    let dir = Layout(&args.out);
    let sq = SqueezeArtifact::load(&dir.squeeze())?;
    let synthetic = SyntheticDataset::load(&dir.synthetic(cfg.seed))?;
    if synthetic.provenance.squeeze_hash != sq.config_hash {
        return Err(Failure::Usage(format!(
            "synthetic set was distilled against squeeze {} but the artifact is {}",
            synthetic.provenance.squeeze_hash, sq.config_hash
        )));
    }
    let test = load_dataset(&dir.test())?;
    let result = evaluate(&synthetic.data, &sq, &test, &cfg.eval)?;
    let record = EvalRecord {
        result: &result,
        seed: cfg.seed,
        run_config_hash: cfg.hash(),
        synthetic_config_hash: synthetic.provenance.config_hash.clone(),
        squeeze_hash: sq.config_hash.clone(),
    };
    write(&dir.eval(cfg.seed), json(&record))?;
    println!("eval: seed {} accuracy {:.4}", cfg.seed, result.accuracy);
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct CompareRecord<'a> {
    run_config_hash: String,
    squeeze_hash: String,
    filters: &'a Comparison,
    ablation: &'a Comparison,
}

fn print_table(title: &str, table: &Comparison) {
    for r in &table.rows {
        println!("{title}: {:<20} mean {:.4} std {:.4} over {} seeds", r.name, r.mean, r.std, r.seeds.len());
    }
}

fn cmd_compare(args: &RunArgs, jobs: Option<usize>) -> Result<ExitCode, Failure> {
    let cfg = load_config(args)?;
    let (train, test) = generate_gaussian_mixture(&cfg.dataset)?;
    let sq = squeeze(&train, &cfg.net.to_config(), cfg.squeeze.ridge_beta)?;
    let threads = jobs.unwrap_or(cfg.compare.jobs);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Usage(format!("worker pool: {e}")))?;
    let seeds = &cfg.compare.seeds;
    let (filters, ablation) = pool.install(|| -> Result<_, UniddError> {
        let variants = if cfg.compare.variants.is_empty() {
            filter_variants(&cfg.cfm)
        } else {
            cfg.compare
                .variants
                .iter()
                .map(|v| Variant::new(v.name.clone(), VariantKind::Custom, v.cfm))
                .collect()
        };
        let filters = run_variants(&train, &test, &sq, &variants, seeds, &cfg.eval)?;
        let ablation = run_variants(&train, &test, &sq, &ablation_variants(&cfg.cfm), seeds, &cfg.eval)?;
        Ok((filters, ablation))
    })?;
    print_table("filters", &filters);
    print_table("ablation", &ablation);
    write(&args.out.join("compare-filters.csv"), filters.to_csv())?;
    write(&args.out.join("compare-ablation.csv"), ablation.to_csv())?;
    let record = CompareRecord {
        run_config_hash: cfg.hash(),
        squeeze_hash: sq.config_hash.clone(),
        filters: &filters,
        ablation: &ablation,
    };
    write(&args.out.join("compare.json"), json(&record))?;
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    match cli.command {
        Command::Verify { seeds, report } => cmd_verify(seeds, report),
        Command::Filters {
            beta,
            alpha,
            power,
            grid,
            out,
        } => cmd_filters(&beta, alpha, power, &grid, out),
        Command::Squeeze(args) => cmd_squeeze(&args),
        Command::Distill(args) => cmd_distill(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Compare { run, jobs } => cmd_compare(&run, jobs),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
