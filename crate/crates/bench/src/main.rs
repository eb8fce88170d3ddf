use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use spp_bench::harness::{run_benchmark, BenchConfig, SceneSource, ThreadPolicy};
use spp_bench::report::{emit_report, to_csv, ReportFormat};
use spp_bench::synthetic::SyntheticSceneParams;
use spp_bench::weights::{generate_weights, ModelWeights};
use spp_bench::{BenchError, Result};
use spp_core::backbone::BackboneVariant;
use spp_core::pillars::{CloudFormat, PillarGridConfig};

/// Per-stage latency of dense and sparse pillar backbones.
#[derive(Debug, Parser)]
#[command(name = "spp-bench", version, args_override_self = true)]
struct Args {
    /// Comma-separated backbone variants.
    #[arg(long, value_delimiter = ',', default_value = "dense,sparse")]
    variant: Vec<String>,
    /// Pseudoimage size as HEIGHTxWIDTH pillars.
    #[arg(long, default_value = "512x768")]
    grid: String,
    /// Pillar edge length in metres.
    #[arg(long, default_value_t = 0.05)]
    pillar_size: f32,
    /// Base channel width C.
    #[arg(long, default_value_t = 64)]
    channels: usize,
    /// `synthetic:N` or `dir:PATH`.
    #[arg(long, default_value = "synthetic:3")]
    scenes: String,
    /// Point cloud format for `dir:` scenes.
    #[arg(long, default_value = "kitti-bin")]
    format: String,
    /// Occupancy target for synthetic scenes.
    #[arg(long, default_value_t = 0.0075)]
    density_hint: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    /// `1` or `max`.
    #[arg(long, default_value = "1")]
    threads: String,
    #[arg(long)]
    out_json: Option<PathBuf>,
    #[arg(long)]
    out_csv: Option<PathBuf>,
    /// Weights container; generated from `--seed` and written here if absent.
    #[arg(long)]
    weights: Option<PathBuf>,
}

fn config_error(msg: impl Into<String>) -> BenchError {
    BenchError::Config(msg.into())
}

fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| config_error(format!("grid '{s}' is not HxW")))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| config_error(format!("grid '{s}' is not HxW")));
    Ok((parse(h)?, parse(w)?))
}

fn build_config(args: &Args) -> Result<BenchConfig> {
    let (h, w) = parse_grid(&args.grid)?;
    let grid = PillarGridConfig::with_grid(h, w, args.pillar_size, args.channels);
    let variants = args.variant.iter().map(|v| v.parse::<BackboneVariant>()).collect::<std::result::Result<Vec<_>, _>>()?;
    let source = match args.scenes.split_once(':') {
        Some(("synthetic", n)) => SceneSource::Synthetic {
            count: n.parse().map_err(|_| config_error(format!("bad scene count '{n}'")))?,
            params: SyntheticSceneParams::for_grid(&grid, args.density_hint),
            seed: args.seed,
        },
        Some(("dir", path)) => SceneSource::Files { dir: PathBuf::from(path), format: args.format.parse::<CloudFormat>()? },
        _ => return Err(config_error(format!("scenes '{}' is neither synthetic:N nor dir:PATH", args.scenes))),
    };
    let threads = match args.threads.as_str() {
        "1" => ThreadPolicy::Single,
        "max" => ThreadPolicy::Unrestricted,
        other => return Err(config_error(format!("threads '{other}' is neither 1 nor max"))),
    };
    Ok(BenchConfig {
        grid,
        variants,
        source,
        repetitions: args.reps,
        warmup: args.warmup,
        threads: ThreadPolicy::from_env(threads),
        seed: args.seed,
        out_json: args.out_json.clone(),
        out_csv: args.out_csv.clone(),
    })
}

fn load_weights(args: &Args) -> Result<ModelWeights> {
    match &args.weights {
        Some(path) if path.exists() => ModelWeights::load(path),
        Some(path) => {
            let w = generate_weights(args.channels, args.seed)?;
            w.save(path)?;
            Ok(w)
        }
        None => generate_weights(args.channels, args.seed),
    }
}

fn run(args: &Args) -> Result<()> {
    let cfg = build_config(args)?;
    let weights = load_weights(args)?;
    let report = run_benchmark(&cfg, &weights)?;
    if let Some(path) = &cfg.out_json {
        emit_report(&report, ReportFormat::Json, path)?;
    }
    if let Some(path) = &cfg.out_csv {
        emit_report(&report, ReportFormat::Csv, path)?;
    }
    print!("{}", to_csv(&report));
    let violations = report.violations();
    if violations > 0 {
        return Err(BenchError::Invariant(format!("{violations} op-count rows exceed the analytic bound")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("spp-bench: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
