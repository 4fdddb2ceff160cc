use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use pcsr_bench::{BenchOptions, Suite};
use pcsr_core::abr::{AbrConfig, QoeWeights, RatioSet};
use pcsr_core::interpolate::NeighborStrategy;
use pcsr_core::lut::{build_lut, laplacian_refiner, load_lut, save_lut, LutTable};
use pcsr_core::metrics::quality_report;
use pcsr_core::ply::{load_ply, save_ply, PlyFormat};
use pcsr_core::sampling::{farthest_point_sample, random_downsample};
use pcsr_core::streaming::{
    client_session, lte_like, simulate, synthetic_manifest, write_synthetic_video, ChunkManifest,
    NetworkTrace, Server, ServerConfig, SessionConfig, SessionReport, ShaperConfig,
    SrLatencyModel, VideoStore,
};
use pcsr_core::{SrConfig, SrPipeline};

/// Point-cloud super-resolution and adaptive volumetric streaming.
///
/// Log verbosity follows the PCSR_LOG environment variable
/// (error, warn, info, debug, trace; default warn).
#[derive(Parser)]
#[command(name = "pcsr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reduce a cloud by seeded random sampling or farthest point sampling.
    Downsample(DownsampleArgs),
    /// Restore density by dilated midpoint interpolation and table refinement.
    Upsample(UpsampleArgs),
    /// Tabulate a refiner into a lookup-table file.
    BuildLut(BuildLutArgs),
    /// Compare two clouds; prints chamfer distance and geometry PSNR as JSON.
    Eval(EvalArgs),
    /// Serve a video directory over TCP.
    Serve(ServeArgs),
    /// Stream a video from a server, restoring every chunk live.
    Play(PlayArgs),
    /// Run a virtual-time streaming session over a bandwidth trace.
    Simulate(SimulateArgs),
    /// Time the pipeline stages.
    Bench(BenchArgs),
    /// Write a constant or LTE-like bandwidth trace as CSV.
    GenTrace(GenTraceArgs),
    /// Write a synthetic colored video (PLY frames plus manifest).
    SynthVideo(SynthVideoArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PlyOut {
    Binary,
    Ascii,
}

impl From<PlyOut> for PlyFormat {
    fn from(p: PlyOut) -> Self {
        match p {
            PlyOut::Binary => PlyFormat::BinaryLittleEndian,
            PlyOut::Ascii => PlyFormat::Ascii,
        }
    }
}

#[derive(Args)]
struct DownsampleArgs {
    input: PathBuf,
    output: PathBuf,
    /// Fraction of points to keep, in (0, 1].
    #[arg(long, required_unless_present = "fps", conflicts_with = "fps")]
    ratio: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use farthest point sampling instead (deterministic, needs --count).
    #[arg(long, requires = "count")]
    fps: bool,
    /// Target point count for farthest point sampling.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, value_enum, default_value = "binary")]
    format: PlyOut,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Reuse,
    Brute,
}

#[derive(Args)]
struct UpsampleArgs {
    input: PathBuf,
    output: PathBuf,
    /// Upsampling ratio (>= 1).
    #[arg(long)]
    ratio: f64,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Keep `d` fixed instead of widening it for large ratios.
    #[arg(long)]
    fixed_d: bool,
    /// Refinement table; without it points are left as interpolated.
    #[arg(long)]
    lut: Option<PathBuf>,
    #[arg(long)]
    no_refine: bool,
    #[arg(long, value_enum, default_value = "reuse")]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "binary")]
    format: PlyOut,
}

#[derive(Clone, Copy, ValueEnum)]
enum RefinerArg {
    Laplacian,
    Zero,
}

#[derive(Args)]
struct BuildLutArgs {
    output: PathBuf,
    /// Receptive-field size.
    #[arg(long, default_value_t = 4)]
    n: u32,
    /// Bins per axis.
    #[arg(long, default_value_t = 16)]
    b: u32,
    #[arg(long, value_enum, default_value = "laplacian")]
    refiner: RefinerArg,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// Reference cloud.
    reference: PathBuf,
    /// Cloud under test.
    test: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    video_dir: PathBuf,
    /// Manifest path (default: VIDEO_DIR/manifest.json).
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:7878")]
    bind: String,
    /// Encoded chunks kept in memory (0 disables caching).
    #[arg(long, default_value_t = 64)]
    cache: usize,
}

#[derive(Args, Clone)]
struct AbrArgs {
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 4.0)]
    gamma: f64,
    /// Extra factor on quality drops.
    #[arg(long, default_value_t = 2.0)]
    drop_multiplier: f64,
    #[arg(long, default_value_t = 3)]
    horizon: usize,
    /// Throughput and SR-latency window (chunks).
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 0.01)]
    grid_step: f64,
    #[arg(long, default_value_t = 0.1)]
    r_min: f64,
    /// Restrict ratios to {1/8, 1/4, 1/3, 1/2, 1}.
    #[arg(long)]
    discrete: bool,
    /// Pause fetching while this many seconds are buffered ahead.
    #[arg(long, default_value_t = 5.0)]
    max_buffer: f64,
    /// Added round-trip time in milliseconds.
    #[arg(long, default_value_t = 10.0)]
    rtt_ms: f64,
    /// Charge the refinement table to data usage.
    #[arg(long)]
    count_lut_bytes: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl AbrArgs {
    fn session(&self, lut_bytes: u64) -> SessionConfig {
        let ratios = if self.discrete {
            RatioSet::ladder()
        } else {
            RatioSet::Grid {
                r_min: self.r_min,
                step: self.grid_step,
            }
        };
        SessionConfig {
            abr: AbrConfig {
                weights: QoeWeights {
                    alpha: self.alpha,
                    beta: self.beta,
                    gamma: self.gamma,
                    drop_penalty_multiplier: self.drop_multiplier,
                },
                ratios,
                horizon: self.horizon,
                window: self.window,
                ..AbrConfig::default()
            },
            shaper: ShaperConfig {
                rtt_s: self.rtt_ms / 1e3,
                ..ShaperConfig::default()
            },
            max_buffer_s: self.max_buffer,
            count_lut_bytes: self.count_lut_bytes,
            lut_bytes,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct PlayArgs {
    /// Server address, e.g. 127.0.0.1:7878.
    #[arg(long)]
    server: String,
    /// Shape the connection with this bandwidth trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Refinement table.
    #[arg(long)]
    lut: Option<PathBuf>,
    /// Write the session report here instead of standard output.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Save restored frames as PLY under this directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    abr: AbrArgs,
}

#[derive(Args)]
struct SimulateArgs {
    trace: PathBuf,
    manifest: PathBuf,
    /// Fixed SR cost per frame in milliseconds.
    #[arg(long, default_value_t = 20.0)]
    sr_frame_ms: f64,
    /// SR cost per generated point in nanoseconds.
    #[arg(long, default_value_t = 0.0)]
    sr_point_ns: f64,
    /// Multiply the SR latency model (e.g. 8 for a slow client).
    #[arg(long, default_value_t = 1.0)]
    sr_scale: f64,
    /// Size in bytes of the refinement table, for --count-lut-bytes.
    #[arg(long, default_value_t = 0)]
    lut_bytes: u64,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    abr: AbrArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Knn,
    Interpolation,
    Lut,
    E2e,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value = "e2e")]
    suite: SuiteArg,
    #[arg(long, default_value_t = 50_000)]
    points: usize,
    #[arg(long, default_value_t = 2.0)]
    ratio: f64,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GenTraceArgs {
    output: PathBuf,
    /// Constant bandwidth in Mbps.
    #[arg(long, conflicts_with_all = ["mean", "std"])]
    constant: Option<f64>,
    /// Mean of an LTE-like trace in Mbps.
    #[arg(long, requires = "std")]
    mean: Option<f64>,
    /// Standard deviation of an LTE-like trace in Mbps.
    #[arg(long, requires = "mean")]
    std: Option<f64>,
    #[arg(long, default_value_t = 300.0)]
    duration: f64,
    #[arg(long, default_value_t = 1.0)]
    step: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthVideoArgs {
    output: PathBuf,
    #[arg(long, default_value = "synthetic")]
    id: String,
    #[arg(long, default_value_t = 30)]
    chunks: u32,
    #[arg(long, default_value_t = 30)]
    frames: u32,
    #[arg(long, default_value_t = 1.0)]
    chunk_duration: f64,
    /// Mean points per frame.
    #[arg(long, default_value_t = 20_000)]
    points: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write only the manifest (OUTPUT is then a file path).
    #[arg(long)]
    manifest_only: bool,
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_table(path: Option<&Path>) -> Result<Option<Arc<LutTable>>> {
    path.map(|p| {
        load_lut(p)
            .map(Arc::new)
            .with_context(|| format!("loading {}", p.display()))
    })
    .transpose()
}

fn emit_report(report: &SessionReport, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => {
            report.save(p)?;
            print_json(&report.totals)
        }
        None => {
            print!("{}", report.to_json()?);
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Downsample(a) => {
            let cloud = load_ply(&a.input)?;
            let out = if a.fps {
                farthest_point_sample(&cloud, a.count.unwrap_or(0))?
            } else {
                random_downsample(&cloud, a.ratio.unwrap_or(1.0), a.seed)?
            };
            save_ply(&out, &a.output, a.format.into())?;
            log::info!("{} -> {} points", cloud.len(), out.len());
        }
        Command::Upsample(a) => {
            let cloud = load_ply(&a.input)?;
            let lut = if a.no_refine { None } else { load_table(a.lut.as_deref())? };
            let config = SrConfig {
                k: a.k,
                d: a.d,
                auto_widen: !a.fixed_d,
                strategy: match a.strategy {
                    StrategyArg::Reuse => NeighborStrategy::OctreeReuse,
                    StrategyArg::Brute => NeighborStrategy::BruteForce,
                },
            };
            let out = SrPipeline::new(config, lut).upsample(&cloud, a.ratio, a.seed)?;
            if out.shortfall > 0 {
                log::warn!("{} points could not be generated", out.shortfall);
            }
            save_ply(&out.cloud, &a.output, a.format.into())?;
            log::info!(
                "{} -> {} points in {:.3} s",
                cloud.len(),
                out.cloud.len(),
                out.timings.total()
            );
        }
        Command::BuildLut(a) => {
            let table = match a.refiner {
                RefinerArg::Laplacian => build_lut(&laplacian_refiner(a.lambda)?, a.n, a.b)?,
                RefinerArg::Zero => build_lut(&pcsr_core::lut::ZeroRefiner, a.n, a.b)?,
            };
            save_lut(&table, &a.output)?;
        }
        Command::Eval(a) => {
            let reference = load_ply(&a.reference)?;
            let test = load_ply(&a.test)?;
            print_json(&quality_report(&reference, &test)?)?;
        }
        Command::Serve(a) => {
            let store = VideoStore::open(&a.video_dir, a.manifest.as_deref())?;
            let server = Arc::new(Server::new(store, ServerConfig { cache_chunks: a.cache })?);
            server.serve(&a.bind)?;
        }
        Command::Play(a) => {
            let trace = a.trace.as_deref().map(NetworkTrace::load).transpose()?;
            let lut = load_table(a.lut.as_deref())?;
            let lut_bytes = a
                .lut
                .as_deref()
                .map(|p| std::fs::metadata(p).map(|m| m.len()))
                .transpose()?
                .unwrap_or(0);
            let session = a.abr.session(lut_bytes);
            let pipeline = SrPipeline::new(SrConfig::default(), lut);
            let report = match &a.out_dir {
                Some(dir) => {
                    let dir = dir.clone();
                    let mut failed: Option<anyhow::Error> = None;
                    let mut sink = |chunk: u32, frames: &[pcsr_core::PointCloud]| {
                        for (f, cloud) in frames.iter().enumerate() {
                            let p = dir.join(format!("chunk_{chunk:05}_frame_{f:03}.ply"));
                            let saved = std::fs::create_dir_all(&dir)
                                .map_err(anyhow::Error::from)
                                .and_then(|_| {
                                    save_ply(cloud, &p, PlyFormat::BinaryLittleEndian)
                                        .map_err(anyhow::Error::from)
                                });
                            if let Err(e) = saved {
                                failed.get_or_insert(e);
                            }
                        }
                    };
                    let r = client_session(&a.server, trace.as_ref(), &session, &pipeline, Some(&mut sink))?;
                    if let Some(e) = failed {
                        return Err(e.context("saving restored frames"));
                    }
                    r
                }
                None => client_session(&a.server, trace.as_ref(), &session, &pipeline, None)?,
            };
            emit_report(&report, a.report.as_deref())?;
        }
        Command::Simulate(a) => {
            let trace = NetworkTrace::load(&a.trace)
                .with_context(|| format!("loading {}", a.trace.display()))?;
            let manifest = ChunkManifest::load(&a.manifest)
                .with_context(|| format!("loading {}", a.manifest.display()))?;
            let model = SrLatencyModel {
                per_frame_s: a.sr_frame_ms / 1e3,
                per_new_point_s: a.sr_point_ns / 1e9,
            }
            .scaled(a.sr_scale);
            let report = simulate(&trace, &manifest, &a.abr.session(a.lut_bytes), &model)?;
            emit_report(&report, a.report.as_deref())?;
        }
        Command::Bench(a) => {
            let suite = match a.suite {
                SuiteArg::Knn => Suite::Knn,
                SuiteArg::Interpolation => Suite::Interpolation,
                SuiteArg::Lut => Suite::Lut,
                SuiteArg::E2e => Suite::E2e,
            };
            let report = pcsr_bench::run(
                suite,
                &BenchOptions {
                    points: a.points,
                    ratio: a.ratio,
                    repeats: a.repeats,
                    seed: a.seed,
                },
            )?;
            if a.json {
                print_json(&report)?;
            } else {
                println!("{:<28} {:>6} {:>9} {:>12} {:>12}", "stage", "ratio", "points", "best_s", "mean_s");
                for r in &report.rows {
                    println!(
                        "{:<28} {:>6.2} {:>9} {:>12.6} {:>12.6}",
                        r.label, r.ratio, r.points, r.best_s, r.mean_s
                    );
                }
            }
        }
        Command::GenTrace(a) => {
            let trace = match (a.constant, a.mean, a.std) {
                (Some(c), _, _) => NetworkTrace::constant(c)?,
                (None, Some(m), Some(s)) => lte_like(m, s, a.duration, a.step, a.seed)?,
                _ => bail!("give --constant or both --mean and --std"),
            };
            trace.save(&a.output)?;
            let (mean, std) = trace.stats_mbps();
            log::info!("mean {mean:.2} Mbps, std {std:.2} Mbps");
        }
        Command::SynthVideo(a) => {
            if a.manifest_only {
                let m = synthetic_manifest(
                    &a.id,
                    a.chunks,
                    a.frames,
                    a.chunk_duration,
                    a.points,
                    0.05,
                    a.seed,
                )?;
                m.save(&a.output)?;
            } else {
                write_synthetic_video(
                    &a.output,
                    &a.id,
                    a.chunks,
                    a.frames,
                    a.chunk_duration,
                    a.points,
                    a.seed,
                )?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PCSR_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}");
            eprintln!("{}", serde_json::json!({ "error": msg }));
            ExitCode::FAILURE
        }
    }
}
