use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use igachan::bscm::ScenarioConfig;
use igachan::harness::{
    build_model, estimate, nmse, reconstruct_g, rows_to_csv, run_benchmark, sigma2_from_snr_db, to_db, true_g,
    BenchmarkSpec, OperatorChoice,
};
use igachan::ic::EKernel;
use igachan::report::{Algorithm, IterConfig};
use igachan::rng::RNG_FAMILY;
use igachan::scenario::{draw_trial, synthesize_rx, write_channels, write_power_matrices, ClusterParams};
use igachan::validate::{validate_suite, Level, ValidateOptions};
use igachan::Error;

#[derive(Parser)]
#[command(name = "igachan", version, about = "Information-geometry channel estimation for massive MIMO-OFDM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw power matrices and channels for one trial and write them out.
    Generate(GenerateArgs),
    /// Run one estimator on one trial and print its report.
    Estimate(EstimateArgs),
    /// Sweep SNR points and algorithms, writing one CSV row per pair.
    Benchmark(BenchmarkArgs),
    /// Run the oracle suite.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (`key = value` lines); the full-size default scenario otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the scenario file.
    #[arg(long)]
    seed: Option<u64>,
    /// Largest cluster extent as Z,X,F (beams, beams, delays); 0 = automatic.
    #[arg(long, value_delimiter = ',')]
    cluster_extent: Option<Vec<usize>>,
}

impl ScenarioArgs {
    fn load(&self) -> igachan::Result<(ScenarioConfig, ClusterParams)> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::from_file(p)?,
            None => ScenarioConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        let mut clusters = ClusterParams::default();
        if let Some(e) = &self.cluster_extent {
            clusters.max_extent = <[usize; 3]>::try_from(e.as_slice())
                .map_err(|_| Error::Config(format!("--cluster-extent needs three values, got {}", e.len())))?;
        }
        Ok((cfg, clusters))
    }
}

#[derive(Args)]
struct IterArgs {
    /// Damping; the per-algorithm default otherwise.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = IterConfig::DEFAULT_MAX_ITER)]
    max_iter: usize,
    #[arg(long, default_value_t = IterConfig::DEFAULT_TOL)]
    tol: f64,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    iter: IterArgs,
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    snr: f64,
    #[arg(long, default_value = "ic_iga")]
    alg: Algorithm,
    /// Trial index within the seed.
    #[arg(long, default_value_t = 0)]
    trial: u64,
    /// Write the full report (mean, variances, residual trace) as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    iter: IterArgs,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-10,0,10,20,30")]
    snr: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "mmse,ic_iga,ic_siga")]
    alg: Vec<Algorithm>,
    #[arg(long, default_value_t = BenchmarkSpec::DEFAULT_N_SAM)]
    trials: usize,
    /// CSV path; stdout otherwise. Run metadata goes to `<out>.meta.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fill `wall_time_ms` with measured times (breaks byte-identical reruns).
    #[arg(long)]
    timing: bool,
    /// Use the implicit FFT operator even when a dense `A` would fit.
    #[arg(long)]
    fast: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value = "quick")]
    level: Level,
    #[arg(long)]
    seed: Option<u64>,
    /// Corrupt the IC-IGA e_n kernel to confirm the suite notices.
    #[arg(long, hide = true)]
    mutate_e_kernel: bool,
}

fn write_json(path: &Path, value: &serde_json::Value) -> igachan::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn generate(args: &GenerateArgs) -> igachan::Result<()> {
    let (cfg, clusters) = args.scenario.load()?;
    let draw = draw_trial(&cfg, cfg.seed, 0, &clusters)?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("scenario.cfg"), cfg.to_text())?;
    write_power_matrices(args.out.join("powers.bin"), &draw.powers)?;
    write_channels(args.out.join("channels.bin"), &draw.channels)?;
    write_json(
        &args.out.join("meta.json"),
        &serde_json::json!({
            "rng": RNG_FAMILY,
            "config": cfg,
            "users": cfg.k,
            "beam_rows": cfg.array.n_r(),
            "delay_cols": cfg.ofdm.n_f(),
            "extracted": draw.scenario.n(),
            "measurements": draw.scenario.m(),
        }),
    )?;
    println!(
        "wrote {} users ({}×{} beam grid), N = {} of {} coefficients, to {}",
        cfg.k,
        cfg.array.n_r(),
        cfg.ofdm.n_f(),
        draw.scenario.n(),
        draw.scenario.extraction().full_len(),
        args.out.display()
    );
    Ok(())
}

fn run_estimate(args: &EstimateArgs) -> igachan::Result<()> {
    let (cfg, clusters) = args.scenario.load()?;
    let alpha = args.iter.alpha.unwrap_or(args.alg.default_alpha());
    let iter = IterConfig::new(alpha, args.iter.max_iter, args.iter.tol);
    iter.validate()?;
    let draw = draw_trial(&cfg, cfg.seed, args.trial, &clusters)?;
    let sigma2 = sigma2_from_snr_db(args.snr);
    let y = synthesize_rx(&draw.scenario, &draw.channels, sigma2, cfg.seed, args.trial, 0)?;
    let model = build_model(&draw.scenario, draw.prior.clone(), sigma2, OperatorChoice::Auto)?;
    let mut report = estimate(args.alg, &model, &y, &iter)?;
    let g = nmse(&reconstruct_g(&draw.scenario, &report.mean)?, &true_g(&draw.scenario, &draw.channels)?)?;
    report.nmse = Some(g);
    report.seed = Some(cfg.seed);

    println!("algorithm        {}", report.algorithm);
    println!("dimensions       M = {}, N = {}", model.m(), model.n());
    println!("snr_db           {}", args.snr);
    if args.alg.is_iterative() {
        println!("alpha            {alpha}");
    }
    println!("iterations       {}", report.iterations);
    println!("converged        {}", report.converged);
    println!("final_residual   {:.3e}", report.final_residual());
    println!("nmse             {g:.6e} ({:.3} dB)", to_db(g));
    println!("wall_time_ms     {:.3}", report.wall_time.as_secs_f64() * 1e3);
    println!("seed             {}", cfg.seed);

    if let Some(out) = &args.out {
        let mean: Vec<[f64; 2]> = report.mean.iter().map(|z| [z.re, z.im]).collect();
        write_json(
            out,
            &serde_json::json!({
                "algorithm": report.algorithm,
                "config": cfg,
                "iter": iter,
                "snr_db": args.snr,
                "trial": args.trial,
                "seed": cfg.seed,
                "rng": RNG_FAMILY,
                "iterations": report.iterations,
                "converged": report.converged,
                "nmse": g,
                "residual_trace": report.residual_trace,
                "mean": mean,
                "variances": report.variances.as_ref().map(|v| v.as_slice().to_vec()),
                "wall_time_ms": report.wall_time.as_secs_f64() * 1e3,
            }),
        )?;
    }
    Ok(())
}

fn benchmark(args: &BenchmarkArgs) -> igachan::Result<()> {
    let (cfg, clusters) = args.scenario.load()?;
    let mut spec = BenchmarkSpec::new(cfg, args.snr.clone(), args.alg.clone());
    spec.n_sam = args.trials;
    spec.max_iter = args.iter.max_iter;
    spec.tol = args.iter.tol;
    spec.clusters = clusters;
    spec.timing = args.timing;
    if args.fast {
        spec.operator = OperatorChoice::Fast;
    }
    if let Some(a) = args.iter.alpha {
        spec.alphas = spec.algorithms.iter().map(|_| a).collect();
    }
    let rows = run_benchmark(&spec)?;
    let csv = rows_to_csv(&rows);
    match &args.out {
        Some(path) => {
            fs::write(path, &csv)?;
            let mut meta = path.clone().into_os_string();
            meta.push(".meta.json");
            write_json(Path::new(&meta), &spec.metadata())?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn validate(args: &ValidateArgs) -> bool {
    let mut opts = ValidateOptions {
        level: args.level,
        ..Default::default()
    };
    if let Some(s) = args.seed {
        opts.seed = s;
    }
    if args.mutate_e_kernel {
        opts.kernel = EKernel::KeepDiagonalTerm;
    }
    let report = validate_suite(&opts);
    println!("{report}");
    report.passed()
}

fn configure_threads() -> igachan::Result<()> {
    let Ok(v) = std::env::var("IGACHAN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("IGACHAN_THREADS = '{v}' is not a count")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn exit_for(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Config(_) | Error::Io(_) | Error::Format(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        return exit_for(&e);
    }
    let result = match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Estimate(a) => run_estimate(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Validate(a) => {
            return if validate(a) { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => exit_for(&e),
    }
}
