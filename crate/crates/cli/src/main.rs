use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::info;

use eodf::config::Settings;
use eodf::corpus::{self, SceneParams};
use eodf::imageio::{self, Image};
use eodf::protocol::{self, Backend, EdgeServer, OffloadRequest};
use eodf::saliency::{self, Srvs};
use eodf::sim::{self, Framework};

#[derive(Parser)]
#[command(name = "eodf", version, about = "Edge-assisted object detection: saliency compression, offloading and outage simulation")]
struct Cli {
    /// Configuration file (`section.key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override `sim.master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the fully resolved configuration and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the normalized saliency map of an image as 8-bit PGM.
    Saliency {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        analysis_size: Option<usize>,
    },
    /// Mask the least salient pixels of an image.
    Compress {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        ratio: f64,
        #[arg(long)]
        analysis_size: Option<usize>,
    },
    /// Monte Carlo outage simulation; one CSV row per frame.
    Simulate {
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        framework: Option<Framework>,
        #[arg(long)]
        ratio: Option<f64>,
        /// Measure masked sizes on this image corpus instead of the analytic model.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Outage probability for every (ratio, framework) pair on one channel trace.
    Sweep {
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        ratios: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "EODF,CONV")]
        frameworks: Vec<Framework>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Oracle detection accuracy (AP per class, mAP) versus compression ratio.
    Evaluate {
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        ratios: Vec<f64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the edge detection server.
    Serve {
        #[arg(long)]
        listen: String,
        /// KITTI label directory for the oracle detector.
        #[arg(long, required_unless_present = "replay")]
        labels: Option<PathBuf>,
        /// Serve stored detections instead of the oracle.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Send one frame to an edge server and print its detections.
    Offload {
        #[arg(long)]
        server: String,
        #[arg(long)]
        image: PathBuf,
        /// Compress before sending; omitted or 0 sends the raw frame.
        #[arg(long)]
        ratio: Option<f64>,
        /// Defaults to the numeric file stem of the image.
        #[arg(long)]
        frame_id: Option<u64>,
        #[arg(long, default_value_t = 5.0)]
        timeout: f64,
    },
    /// Generate a synthetic KITTI-format street-scene corpus.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        frames: usize,
    },
}

#[derive(Args)]
struct OutArgs {
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(String),
    Network(String),
}

impl Failure {
    fn data(e: impl std::fmt::Display) -> Self {
        Failure::Data(e.to_string())
    }

    fn network(e: impl std::fmt::Display) -> Self {
        Failure::Network(e.to_string())
    }
}

fn load_settings(cli: &Cli) -> Result<Settings, Failure> {
    let mut settings = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
            Settings::parse(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?
        }
        None => Settings::parse("").map_err(Failure::data)?,
    };
    if let Some(seed) = cli.seed {
        settings.sim.master_seed = seed;
    }
    Ok(settings)
}

fn emit(out: &OutArgs, text: &str) -> Result<(), Failure> {
    match &out.out {
        Some(path) => {
            fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
            info!("wrote {}", path.display());
            Ok(())
        }
        None => io::stdout().write_all(text.as_bytes()).map_err(Failure::data),
    }
}

fn check_ratio(r: f64) -> Result<f64, Failure> {
    if (0.0..1.0).contains(&r) {
        Ok(r)
    } else {
        Err(Failure::Usage(format!("ratio {r} outside [0, 1)")))
    }
}

fn frame_id_for(image: &Path, explicit: Option<u64>) -> Result<u64, Failure> {
    explicit
        .or_else(|| image.file_stem()?.to_str()?.parse().ok())
        .ok_or_else(|| Failure::Usage(format!("cannot derive a frame id from {}; pass --frame-id", image.display())))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut settings = load_settings(&cli)?;
    if cli.dump_config {
        print!("{}", settings.dump());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Failure::Usage("no subcommand given (see --help)".into()));
    };
    match command {
        Command::Saliency {
            input,
            output,
            analysis_size,
        } => {
            let mut params = settings.eval.srvs.clone();
            if let Some(n) = analysis_size {
                params.analysis_size = n;
            }
            let image = imageio::read_image(&input).map_err(Failure::data)?;
            let gray = imageio::to_grayscale(&image);
            let small = imageio::resize_bilinear(&gray, params.analysis_size, params.analysis_size).map_err(Failure::data)?;
            let map = Srvs::new(params.analysis_size, params.analysis_size, params)
                .and_then(|s| s.compute(&small))
                .map_err(Failure::data)?;
            imageio::write_image(&map.to_image(), &output).map_err(Failure::data)?;
        }
        Command::Compress {
            input,
            output,
            ratio,
            analysis_size,
        } => {
            let mut params = settings.eval.srvs.clone();
            if let Some(n) = analysis_size {
                params.analysis_size = n;
            }
            let image = imageio::read_image(&input).map_err(Failure::data)?;
            let report = saliency::srvs_compress_with(&image, check_ratio(ratio)?, &params).map_err(Failure::data)?;
            let masked = &report.masked;
            imageio::write_image(&masked.image, &output).map_err(Failure::data)?;
            let payload = protocol::masked_payload_len(&masked.mask, image.channels());
            let rle = payload - masked.mask.count_ones() * image.channels();
            println!("achieved_ratio {:.6}", masked.discard_ratio);
            println!("rle_bytes {rle}");
            println!("payload_bytes {payload}");
            println!("raw_bytes {}", image.pixels().len());
            if report.threshold.tie_affected() {
                log::warn!("saliency ties at the threshold; ratio rounded to {:.6}", report.threshold.achieved_discard);
            }
        }
        Command::Simulate {
            out,
            frames,
            framework,
            ratio,
            corpus,
            threads,
        } => {
            let cfg = &mut settings.sim;
            if let Some(f) = frames {
                cfg.frames = f;
            }
            if let Some(f) = framework {
                cfg.framework = f;
            }
            if let Some(r) = ratio {
                cfg.compression_ratio = check_ratio(r)?;
            }
            cfg.corpus = corpus;
            let run = sim::run_sim_with_threads(cfg, threads).map_err(Failure::data)?;
            info!(
                "{} frames, {} at ratio {}: outage probability {}",
                cfg.frames, cfg.framework, cfg.compression_ratio, run.outage_probability
            );
            emit(&out, &sim::outcomes_csv(&run.outcomes))?;
        }
        Command::Sweep {
            out,
            ratios,
            frameworks,
            frames,
            threads,
        } => {
            if let Some(f) = frames {
                settings.sim.frames = f;
            }
            for &r in &ratios {
                check_ratio(r)?;
            }
            let result = sim::sweep(&settings.sim, &ratios, &frameworks, threads).map_err(Failure::data)?;
            emit(&out, &result.to_csv())?;
        }
        Command::Evaluate {
            out,
            corpus,
            ratios,
            threads,
        } => {
            for &r in &ratios {
                check_ratio(r)?;
            }
            let report = sim::with_threads(threads, || sim::evaluate_accuracy(&corpus, &ratios, &settings.eval))
                .and_then(|r| r)
                .map_err(Failure::data)?;
            if !report.skipped_frames.is_empty() {
                log::warn!("{} frame(s) skipped for missing labels", report.skipped_frames.len());
            }
            info!("evaluated {} frames", report.frames);
            emit(&out, &report.to_csv())?;
        }
        Command::Serve { listen, labels, replay } => {
            let backend = match replay {
                Some(store) => Backend::Replay { store },
                None => Backend::Oracle {
                    labels: labels.expect("clap requires labels without replay"),
                    params: settings.eval.oracle.clone(),
                },
            };
            let server = EdgeServer::bind(&listen, backend).map_err(|e| Failure::Network(format!("bind {listen}: {e}")))?;
            let addr = server.local_addr().map_err(Failure::network)?;
            // Scripts listening on port 0 need the bound address.
            println!("listening {addr}");
            io::stdout().flush().map_err(Failure::data)?;
            server.run().map_err(Failure::network)?;
        }
        Command::Offload {
            server,
            image,
            ratio,
            frame_id,
            timeout,
        } => {
            let id = frame_id_for(&image, frame_id)?;
            let frame: Image = imageio::read_image(&image).map_err(Failure::data)?;
            let request = match ratio.map(check_ratio).transpose()? {
                Some(r) if r > 0.0 => {
                    let masked = saliency::srvs_compress_with(&frame, r, &settings.eval.srvs).map_err(Failure::data)?;
                    OffloadRequest::masked(id, &masked.masked)
                }
                _ => OffloadRequest::raw(id, &frame),
            };
            if !(timeout > 0.0 && timeout.is_finite()) {
                return Err(Failure::Usage("--timeout must be a positive number of seconds".into()));
            }
            let (response, rtt) =
                protocol::offload(&server, &request, Duration::from_secs_f64(timeout)).map_err(Failure::network)?;
            info!(
                "frame {id}: {} bytes on the wire, {} detections, round trip {:.3} ms",
                request.payload.len(),
                response.detections.len(),
                rtt.as_secs_f64() * 1e3
            );
            for d in &response.detections {
                println!(
                    "{} {:.4} {} {} {} {}",
                    d.class.as_str(),
                    d.confidence(),
                    d.left,
                    d.top,
                    d.right,
                    d.bottom
                );
            }
        }
        Command::GenCorpus { out, frames } => {
            let seed = cli.seed.unwrap_or(settings.sim.master_seed);
            corpus::write_corpus(&out, frames, seed, &SceneParams::default()).map_err(Failure::data)?;
            info!("wrote {frames} frames to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            let (code, msg) = match failure {
                Failure::Usage(m) => (1, m),
                Failure::Data(m) => (2, m),
                Failure::Network(m) => (3, m),
            };
            log::error!("{msg}");
            ExitCode::from(code)
        }
    }
}
