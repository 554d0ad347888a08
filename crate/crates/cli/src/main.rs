use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use haircard::config::PipelineConfig;
use haircard::hairio::{write_hair_binary, write_head_mesh};
use haircard::math::Vec3;
use haircard::pipeline::{Pipeline, PipelineError, Stage};
use haircard::synth::{icosphere, synthetic_wig, WigParams};

#[derive(Parser)]
#[command(name = "haircard", version, about = "Convert strand hair into textured hair cards")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every unfinished stage.
    Run(Common),
    /// Cluster strands.
    Cluster(Common),
    /// Fit one card (or a crossed pair) per cluster.
    Fit(Common),
    /// Project cluster members into card texture space.
    Project(Common),
    /// Share textures between similar cards.
    Reduce(Common),
    /// Jointly optimize card geometry and textures.
    Optimize(Common),
    /// Bake the texture atlas and export cards.
    Bake(Common),
    /// Build and bake the hair cap.
    Cap(Common),
    /// Compare strand and card renders.
    Eval(Common),
    /// Render a stage artifact: cluster, project, reduce, optimize or final.
    Preview {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "final")]
        artifact: String,
        #[arg(long, default_value_t = 12)]
        views: usize,
    },
    /// Print the effective configuration.
    Config(ConfigArgs),
    /// Write the synthetic test wig and head to files.
    Synth {
        #[arg(long)]
        hair: PathBuf,
        #[arg(long)]
        head: PathBuf,
        #[arg(long, default_value_t = 500)]
        strands: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file (`key = value` lines).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override any key: `--set key=value` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    hair: Option<String>,
    #[arg(long)]
    head: Option<String>,
    #[arg(long)]
    n_strands: Option<usize>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    n_cards: Option<usize>,
    #[arg(long)]
    n_textures: Option<usize>,
    #[arg(long)]
    n_quads: Option<usize>,
    #[arg(long)]
    crossed: bool,
    #[arg(long)]
    no_cap: bool,
    #[arg(long)]
    no_reduce: bool,
    /// `straight` or `curly`.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    render_resolution: Option<usize>,
    #[arg(long)]
    eval_views: Option<usize>,
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

impl ConfigArgs {
    fn build(&self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        let mut pairs: Vec<(&str, String)> = Vec::new();
        let mut opt = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k, v));
            }
        };
        opt("hair", self.hair.clone());
        opt("head", self.head.clone());
        opt("n_strands", self.n_strands.map(|v| v.to_string()));
        opt("n_samples", self.n_samples.map(|v| v.to_string()));
        opt("n_cards", self.n_cards.map(|v| v.to_string()));
        opt("n_textures", self.n_textures.map(|v| v.to_string()));
        opt("n_quads", self.n_quads.map(|v| v.to_string()));
        opt("crossed", self.crossed.then(|| "true".into()));
        opt("cap", self.no_cap.then(|| "false".into()));
        opt("reduce", self.no_reduce.then(|| "false".into()));
        opt("preset", self.preset.clone());
        opt("epochs", self.epochs.map(|v| v.to_string()));
        opt("render_resolution", self.render_resolution.map(|v| v.to_string()));
        opt("eval_views", self.eval_views.map(|v| v.to_string()));
        for (k, v) in pairs {
            cfg.set(k, &v)?;
        }
        cfg.apply_overrides(self.set.iter().map(String::as_str))?;
        Ok(cfg)
    }
}

fn open(common: &Common) -> Result<Pipeline, PipelineError> {
    Pipeline::open(common.cfg.build()?, &common.out)
}

fn synth(hair: &Path, head: &Path, strands: usize, seed: u64) -> Result<(), String> {
    let params = WigParams {
        strands,
        seed,
        ..WigParams::default()
    };
    let wig = synthetic_wig(&params);
    let polylines: Vec<Vec<Vec3>> = wig.strands.iter().map(|s| s.samples.clone()).collect();
    write_hair_binary(hair, &polylines).map_err(|e| e.to_string())?;
    write_head_mesh(head, &icosphere(3, params.head_radius, Vec3::zeros())).map_err(|e| e.to_string())?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let single = |c: &Common, s: Stage| open(c)?.run_stage(s).map(|_| ());
    match &cli.command {
        Command::Run(c) => open(c)?.run_all(),
        Command::Cluster(c) => single(c, Stage::Cluster),
        Command::Fit(c) => single(c, Stage::Fit),
        Command::Project(c) => single(c, Stage::Project),
        Command::Reduce(c) => single(c, Stage::Reduce),
        Command::Optimize(c) => single(c, Stage::Optimize),
        Command::Bake(c) => single(c, Stage::Bake),
        Command::Cap(c) => single(c, Stage::Cap),
        Command::Eval(c) => {
            let p = open(c)?;
            p.run_stage(Stage::Eval)?;
            let r = p.load_report()?;
            println!(
                "psnr {:.3} dB, perceptual {:.5}, coverage error {:.5}, dice {:.5}",
                r.mean.psnr, r.mean.perceptual, r.mean.coverage_error, r.mean.dice
            );
            Ok(())
        }
        Command::Preview { common, artifact, views } => {
            let dir = open(common)?.preview(artifact, *views)?;
            println!("{}", dir.display());
            Ok(())
        }
        Command::Config(args) => {
            let cfg = args.build()?;
            cfg.validate()?;
            print!("{}", cfg.to_text());
            Ok(())
        }
        Command::Synth { hair, head, strands, seed } => synth(hair, head, *strands, *seed).map_err(|e| PipelineError::Stage {
            stage: Stage::Load,
            context: "writing synthetic inputs".into(),
            source: e.into(),
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
