use std::fmt;
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use lumisplit_core::editing::{recolor, suppress_spill};
use lumisplit_core::eval::{render_scene, run_ablation, AblationVariant, SyntheticScene};
use lumisplit_core::imaging::{save_png_preview, Rgb};
use lumisplit_core::pipeline::{Pipeline, PipelineConfig};
use lumisplit_core::Error;

use crate::journal::{read_journal, replay_clicks, Journal};
use crate::output::{
    frame_dir, load_input_frames, read_bundle, read_layer_set, read_palette, read_summary, write_bundle,
    write_decomposition, RunSummary,
};
use crate::session::{serve, ServeError, Session};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_PROTOCOL: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn io(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_IO,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. }
            | Error::Format { .. }
            | Error::Dimensions { .. }
            | Error::FrameTooSmall { .. }
            | Error::EmptyHistogram
            | Error::Scene(_)
            | Error::Config(_)
            | Error::Json(_) => EXIT_IO,
            Error::InvalidCluster(_)
            | Error::EmptyRegion { .. }
            | Error::RegionLost
            | Error::NumericalFault { .. }
            | Error::CorrectionFailed => EXIT_SOLVER,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<ServeError> for CliError {
    fn from(e: ServeError) -> Self {
        CliError {
            code: match e {
                ServeError::Io(_) => EXIT_IO,
                ServeError::Protocol(_) => EXIT_PROTOCOL,
            },
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "lumisplit", version, about = "Reflectance and global illumination layers for RGB video")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Upper bound on the number of base colors [default: 10].
    #[arg(long = "k-max", global = true)]
    pub k_max: Option<usize>,
    /// Skip first-frame palette refinement.
    #[arg(long = "no-refine", global = true)]
    pub no_refine: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decompose a directory of frames.
    Decompose {
        input: PathBuf,
        output: PathBuf,
        /// Replay the first-frame corrections of a session journal.
        #[arg(long)]
        journal: Option<PathBuf>,
    },
    /// Serve an interactive session over a local WebSocket.
    Serve {
        input: PathBuf,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        /// Append every request to this journal.
        #[arg(long)]
        journal: Option<PathBuf>,
        /// Exit after this many clients.
        #[arg(long)]
        clients: Option<usize>,
    },
    /// Render a synthetic scene and its ground truth.
    RenderSynthetic {
        output: PathBuf,
        /// Scene JSON; the built-in room when absent.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Per-frame LMSE of the standard variants on a ground-truth bundle.
    Ablate {
        bundle: PathBuf,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Recolor base color `k` of a decomposed frame.
    Recolor {
        decomposition: PathBuf,
        #[arg(long)]
        k: usize,
        /// `r,g,b` in [0, 1].
        #[arg(long, value_parser = parse_color)]
        color: Rgb,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Remove the indirect light of base color `k` from a decomposed frame.
    Suppress {
        decomposition: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

pub fn parse_color(s: &str) -> std::result::Result<Rgb, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [r, g, b] if parts.iter().all(|c| (0.0..=1.0).contains(c)) => Ok([r, g, b]),
        [_, _, _] => Err("channels must lie in [0, 1]".into()),
        _ => Err("expected three comma-separated channels".into()),
    }
}

/// Configuration file (if any) with command-line overrides applied.
pub fn resolve_config(args: &GlobalArgs) -> CliResult<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
            PipelineConfig::parse(&text)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(k) = args.k_max {
        if k == 0 {
            return Err(CliError::io("--k-max must be at least 1"));
        }
        cfg.k_max = k;
    }
    if args.no_refine {
        cfg.first.refine = false;
    }
    Ok(cfg)
}

/// Runs the pipeline over `input` and writes the decomposition to `output`.
pub fn decompose(input: &Path, output: &Path, journal: Option<&Path>, cfg: &PipelineConfig) -> CliResult<RunSummary> {
    let frames = load_input_frames(input)?;
    let clicks = match journal {
        Some(j) => replay_clicks(&read_journal(j)?),
        None => Vec::new(),
    };
    log::info!("decomposing {} frames with {} replayed clicks", frames.len(), clicks.len());
    let mut pipeline = Pipeline::new(&frames[0], cfg.clone())?;
    for &c in &clicks {
        pipeline.click(c)?;
    }
    let mut results = vec![pipeline.solve_first()?.clone()];
    for f in &frames[1..] {
        results.push(pipeline.next_frame(f)?.clone());
    }
    let (palette, initial) = (&pipeline.palette, &pipeline.initial_palette);
    Ok(write_decomposition(output, palette, initial, &results)?)
}

fn edit_output(dir: &Path, frame: usize, name: String, explicit: Option<&Path>) -> PathBuf {
    explicit.map(Path::to_path_buf).unwrap_or_else(|| frame_dir(dir, frame).join(name))
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Decompose { input, output, journal } => {
            let cfg = resolve_config(&cli.global)?;
            let summary = decompose(&input, &output, journal.as_deref(), &cfg)?;
            println!("wrote {} layer sets (K = {}) to {}", summary.frames.len(), summary.k, output.display());
        }
        Command::Serve {
            input,
            port,
            journal,
            clients,
        } => {
            let cfg = resolve_config(&cli.global)?;
            let frames = load_input_frames(&input)?;
            let listener =
                TcpListener::bind(("127.0.0.1", port)).map_err(|e| CliError::io(format!("cannot listen on port {port}: {e}")))?;
            let journal = journal.as_deref().map(Journal::open).transpose()?;
            let mut session = Session::start(frames, cfg, journal)?;
            log::info!("serving {} frames on ws://127.0.0.1:{port}", session.frame_count());
            serve(listener, &mut session, clients)?;
        }
        Command::RenderSynthetic { output, scene, frames } => {
            let mut scene = match scene {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(format!("{}: {e}", p.display())))?;
                    SyntheticScene::from_json(&text)?
                }
                None => SyntheticScene::default_room(),
            };
            if let Some(n) = frames {
                scene.frames = n;
            }
            let seed = cli.global.seed.unwrap_or(0);
            let bundle = render_scene(&scene, seed)?;
            write_bundle(&output, &bundle, &scene, seed)?;
            println!("rendered {} frames to {}", bundle.frames.len(), output.display());
        }
        Command::Ablate { bundle, output } => {
            let cfg = resolve_config(&cli.global)?;
            let bundle = read_bundle(&bundle)?;
            let table = run_ablation(&bundle, &AblationVariant::standard(&cfg))?;
            let csv = table.to_csv();
            match output {
                Some(p) => std::fs::write(&p, csv).map_err(|e| CliError::io(format!("{}: {e}", p.display())))?,
                None => print!("{csv}"),
            }
        }
        Command::Recolor {
            decomposition,
            k,
            color,
            frame,
            output,
        } => {
            let palette = read_palette(&decomposition)?;
            let (layers, clusters) = read_layer_set(&decomposition, frame, palette.k())?;
            let edited = recolor(&layers, &palette, k, color, &clusters)?;
            let path = edit_output(&decomposition, frame, format!("recolor_k{k}.png"), output.as_deref());
            save_png_preview(&path, edited.width(), edited.height(), edited.pixels(), 1.0)?;
            println!("wrote {}", path.display());
        }
        Command::Suppress {
            decomposition,
            k,
            frame,
            output,
        } => {
            let palette = read_palette(&decomposition)?;
            let (layers, _) = read_layer_set(&decomposition, frame, palette.k())?;
            let edited = suppress_spill(&layers, &palette, k)?;
            let path = edit_output(&decomposition, frame, format!("suppress_k{k}.png"), output.as_deref());
            save_png_preview(&path, edited.width(), edited.height(), edited.pixels(), 1.0)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

/// Reads `summary.json` of a finished decomposition.
pub fn summary(dir: &Path) -> CliResult<RunSummary> {
    Ok(read_summary(dir)?)
}
