//! Argument parsing and subcommand dispatch.
//!
//! Exit status is 0 on success, 1 for usage errors and 2 when processing
//! fails. Every diagnostic goes to standard error.

use std::ffi::OsString;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use strokeforge::config::PlanConfig;
use strokeforge::io::{read_image, write_png};
use strokeforge::pipeline::{render_plan, run_classical, run_plan, run_stylize};
use strokeforge::plan_json::{parse_plan, serialize_plan};

use crate::server::{self, ServiceOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PROCESSING: i32 = 2;

pub const DEFAULT_PORT: u16 = 8787;

#[derive(Debug, Parser)]
#[command(name = "strokeforge", version, about = "Painterly, neural-style and hybrid stroke rendering")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON config file; omitted fields take their defaults.
    #[arg(long, value_name = "F")]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Layered curved-stroke painterly rendering.
    RenderClassical {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Optimizes the content image toward the style image's feature statistics.
    Stylize {
        content: PathBuf,
        style: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Plans a stroke sequence and renders it.
    Plan {
        input: PathBuf,
        output: PathBuf,
        /// Also writes the stroke plan as JSON.
        #[arg(long, value_name = "F.json")]
        strokes_out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Renders a saved stroke plan.
    RenderPlan {
        plan: PathBuf,
        output: PathBuf,
        /// Config whose render section is used.
        #[arg(long, value_name = "F")]
        config: Option<PathBuf>,
    },
    /// Runs the HTTP job service.
    Serve {
        #[arg(long, short, env = "STROKEFORGE_PORT", default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        host: IpAddr,
        /// Jobs processed concurrently.
        #[arg(long, default_value_t = server::DEFAULT_WORKERS)]
        workers: usize,
        /// Origin allowed by CORS; any origin when omitted.
        #[arg(long)]
        cors_origin: Option<String>,
    },
}

#[derive(Debug)]
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn load_config(args: &ConfigArgs) -> Result<PlanConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => PlanConfig::load(path).map_err(|e| Failure(format!("{}: {e}", path.display())))?,
        None => PlanConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_output(path: &Path, image: &strokeforge::raster::RasterImage) -> Result<(), Failure> {
    write_png(path, image).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::RenderClassical { input, output, config } => {
            let cfg = load_config(&config)?;
            let image = read_image(&input)?;
            let painted = run_classical(&image, &cfg)?;
            write_output(&output, &painted)
        }
        Command::Stylize {
            content,
            style,
            output,
            config,
        } => {
            let cfg = load_config(&config)?;
            let content = read_image(&content)?;
            let style = read_image(&style)?;
            let result = run_stylize(&content, &style, &cfg)?;
            if let (Some(first), Some(last)) = (result.loss_history.first(), result.loss_history.last()) {
                eprintln!(
                    "stylize: loss {first:.6e} -> {last:.6e} over {} iterations",
                    result.loss_history.len() - 1
                );
            }
            write_output(&output, &result.image)
        }
        Command::Plan {
            input,
            output,
            strokes_out,
            config,
        } => {
            let cfg = load_config(&config)?;
            let image = read_image(&input)?;
            let out = run_plan(&image, &cfg)?;
            let r = &out.report;
            eprintln!(
                "plan: {} candidates, {} after density, {} discarded, {} merged, {} strokes",
                r.candidates, r.after_density, r.discarded, r.merged, r.strokes
            );
            write_output(&output, &out.image)?;
            if let Some(path) = strokes_out {
                std::fs::write(&path, serialize_plan(&out.plan))
                    .map_err(|e| Failure(format!("{}: {e}", path.display())))?;
            }
            Ok(())
        }
        Command::RenderPlan { plan, output, config } => {
            let cfg = load_config(&ConfigArgs { config, seed: None })?;
            let text =
                std::fs::read_to_string(&plan).map_err(|e| Failure(format!("{}: {e}", plan.display())))?;
            let parsed = parse_plan(&text).map_err(|e| Failure(format!("{}: {e}", plan.display())))?;
            let image = render_plan(&parsed, &cfg.render)?;
            write_output(&output, &image)
        }
        Command::Serve {
            port,
            host,
            workers,
            cors_origin,
        } => {
            let options = ServiceOptions::new(workers, cors_origin.as_deref())?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind(SocketAddr::new(host, port)).await?;
                eprintln!("strokeforge: listening on http://{}", listener.local_addr()?);
                server::serve(listener, options).await
            })?;
            Ok(())
        }
    }
}

/// Parses `args` (program name first) and runs the selected subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    EXIT_OK
                }
                _ => {
                    eprint!("{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure(message)) => {
            eprintln!("strokeforge: error: {message}");
            EXIT_PROCESSING
        }
    }
}
