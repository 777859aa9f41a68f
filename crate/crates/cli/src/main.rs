use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use monoinstance_core::io::text::{parse_config, set_config_value};
use monoinstance_core::io::read_text;
use monoinstance_core::pipeline;
use monoinstance_core::render::TrainConfig;
use monoinstance_core::synth::{presets, SceneSpec};
use monoinstance_core::RadiusMode;

#[derive(Parser, Debug)]
#[command(name = "monoinstance", version, about = "Instance-level depth uncertainty and uncertainty-guided SDF training")]
struct Cli {
    /// Seed for every random choice; runs with equal seeds are byte-identical.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` configuration file; command-line flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    radius_mode: Option<RadiusArg>,
    #[arg(long, global = true)]
    chamfer_threshold: Option<f64>,
    #[arg(long, global = true)]
    downsample_target: Option<usize>,
    /// Eikonal weight.
    #[arg(long, global = true)]
    lambda1: Option<f64>,
    /// Instance-mask weight.
    #[arg(long, global = true)]
    lambda2: Option<f64>,
    /// Depth weight.
    #[arg(long, global = true)]
    lambda3: Option<f64>,
    /// Normal weight.
    #[arg(long, global = true)]
    lambda4: Option<f64>,
    /// Pixels with uncertainty above this feed the mask constraint.
    #[arg(long, global = true)]
    uncertainty_threshold: Option<f64>,
    #[arg(long, global = true)]
    stage1_steps: Option<usize>,
    #[arg(long, global = true)]
    stage2_steps: Option<usize>,
    #[arg(long, global = true)]
    resolution: Option<usize>,
    /// Stage-2 modules: comma list of adaptive, guided, mask, or `none`.
    #[arg(long, global = true)]
    modules: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum RadiusArg {
    Paper,
    Cbrt,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic scene into a dataset directory.
    Gen {
        /// Preset name or scene file.
        #[arg(long)]
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Align depth and group instances across views.
    Cluster {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Per-pixel uncertainty maps.
    Uncertainty {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Two-stage SDF training.
    Train {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Metrics against exact depth.
    Eval {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// PNG renderings of depth, uncertainty, and the trained surface.
    Export {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

impl Cli {
    fn train_config(&self) -> Result<TrainConfig, String> {
        let mut c = match &self.config {
            Some(p) => {
                let text = read_text(p).map_err(|e| e.to_string())?;
                parse_config(&text, p, TrainConfig::default()).map_err(|e| e.to_string())?
            }
            None => TrainConfig::default(),
        };
        let radius = self.radius_mode.map(|r| match r {
            RadiusArg::Paper => RadiusMode::Paper.to_string(),
            RadiusArg::Cbrt => RadiusMode::Cbrt.to_string(),
        });
        let overrides: [(&str, Option<String>); 13] = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("radius_mode", radius),
            ("chamfer_threshold", self.chamfer_threshold.map(|v| v.to_string())),
            ("downsample_target", self.downsample_target.map(|v| v.to_string())),
            ("lambda1", self.lambda1.map(|v| v.to_string())),
            ("lambda2", self.lambda2.map(|v| v.to_string())),
            ("lambda3", self.lambda3.map(|v| v.to_string())),
            ("lambda4", self.lambda4.map(|v| v.to_string())),
            ("uncertainty_threshold", self.uncertainty_threshold.map(|v| v.to_string())),
            ("stage1_steps", self.stage1_steps.map(|v| v.to_string())),
            ("stage2_steps", self.stage2_steps.map(|v| v.to_string())),
            ("resolution", self.resolution.map(|v| v.to_string())),
            ("modules", self.modules.clone()),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                set_config_value(&mut c, key, &v).map_err(|e| format!("--{}: {e}", key.replace('_', "-")))?;
            }
        }
        c.validate().map_err(|e| e.to_string())?;
        Ok(c)
    }
}

fn load_spec(name: &str) -> Result<SceneSpec, String> {
    let path = Path::new(name);
    if path.exists() {
        let text = read_text(path).map_err(|e| e.to_string())?;
        return SceneSpec::parse(&text).map_err(|e| format!("{name}: {e}"));
    }
    presets::by_name(name).ok_or_else(|| {
        format!(
            "`{name}` is neither a scene file nor a preset (presets: {})",
            presets::NAMES.join(", ")
        )
    })
}

fn run(cli: &Cli) -> Result<(), String> {
    let config = cli.train_config()?;
    let err = |e: monoinstance_core::Error| e.to_string();
    match &cli.command {
        Command::Gen { spec, out } => {
            let data = pipeline::gen(&load_spec(spec)?, out, config.seed).map_err(err)?;
            println!("wrote {} views to {}", data.views.len(), out.display());
        }
        Command::Cluster { input } => {
            let graph = pipeline::cluster(input, &config).map_err(err)?;
            let fg = graph.clusters.iter().filter(|c| !c.is_background).count();
            println!("{} instances, {} clusters ({fg} foreground)", graph.instances.len(), graph.clusters.len());
        }
        Command::Uncertainty { input } => {
            let maps = pipeline::uncertainty(input, &config).map_err(err)?;
            println!("wrote {} uncertainty maps", maps.len());
        }
        Command::Train { input } => {
            let out = pipeline::train(input, &config).map_err(err)?;
            if let Some(last) = out.stage2.log.last().or(out.stage1.log.last()) {
                println!("final loss {:.6}", last.total);
            }
            if let Some(c) = out.chamfer {
                println!("chamfer {c:.6}");
            }
        }
        Command::Eval { input } => {
            for (name, value) in pipeline::eval(input).map_err(err)? {
                println!("{name} {value:.6}");
            }
        }
        Command::Export { input } => {
            for p in pipeline::export(input).map_err(err)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
