use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use style3d::diffusion::{BackendHandle, BackendKind, ToyBackendConfig};
use style3d::eval::{eval_run, make_embedder, Aggregation, EmbedderKind};
use style3d::mesh::SignConvention;
use style3d::pipeline::{parse_config, parse_sweep_values, run_pipeline, sweep, ConfigLayer, SweepParam};
use style3d::Result;

#[derive(Parser)]
#[command(name = "style3d", version, about = "Stylise an object image with a style image and reconstruct a textured mesh")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stylise, reconstruct and export one content/style pair.
    Run(RunArgs),
    /// Generate views for several β or λ values from one feature capture.
    Sweep {
        /// `beta` or `lambda`.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated; β items are `c` or `c:p`.
        #[arg(long)]
        values: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score generated views against prompts and content images.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// `palette` (alias `stub`) or `clip`.
        #[arg(long, default_value = "palette")]
        embedder: EmbedderKind,
        /// `flat` or `per_case`.
        #[arg(long, default_value = "flat")]
        aggregation: Aggregation,
        #[arg(long, default_value = "eval_out")]
        out: PathBuf,
    },
    /// Write the toy denoiser as a weight file loadable with `--backend pretrained`.
    ExportToyWeights {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        weight_seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    content: Option<PathBuf>,
    #[arg(long)]
    style: Option<PathBuf>,
    /// β_p defaults to 1 − β_c.
    #[arg(long)]
    beta_c: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// `toy` or `pretrained`.
    #[arg(long)]
    backend: Option<BackendKind>,
    /// Pretrained weight file; defaults to `$STYLE3D_CACHE/style3d-mv.safetensors`.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    device: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `positive_inside` or `negative_inside`.
    #[arg(long)]
    sign_convention: Option<SignConvention>,
    /// Comma-separated layer names or globs.
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<String>>,
}

impl RunArgs {
    fn resolve(self) -> Result<style3d::pipeline::RunConfig> {
        let file = self.config.as_deref().map(ConfigLayer::from_toml_file).transpose()?;
        let flags = ConfigLayer {
            content: self.content,
            style: self.style,
            beta_c: self.beta_c,
            lambda: self.lambda,
            steps: self.steps,
            seed: self.seed,
            backend: self.backend,
            weights: self.weights,
            device: self.device,
            out: self.out,
            sign_convention: self.sign_convention,
            target_layers: self.layers,
            ..Default::default()
        };
        parse_config(file.as_ref(), &flags)
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run(args) => {
            let report = run_pipeline(&args.resolve()?)?;
            println!("{}", report.run_dir.join(style3d::pipeline::REPORT_FILE).display());
            eprintln!(
                "mesh: {} vertices, {} faces, watertight={}",
                report.mesh.vertices, report.mesh.faces, report.mesh.watertight
            );
        }
        Command::Sweep { param, values, run } => {
            let values = parse_sweep_values(param, &values)?;
            let report = sweep(&run.resolve()?, param, &values)?;
            println!("{}", report.run_dir.join("sweep.json").display());
        }
        Command::Eval {
            manifest,
            embedder,
            aggregation,
            out,
        } => {
            let emb = make_embedder(embedder)?;
            let report = eval_run(&manifest, emb.as_ref(), aggregation)?;
            let [json, _] = report.write(&out)?;
            println!("{}", json.display());
            eprintln!(
                "mean text-image {:.6}, image-image {:.6} over {} cases",
                report.mean_text_image,
                report.mean_image_image,
                report.cases.len()
            );
        }
        Command::ExportToyWeights { out, weight_seed } => {
            let cfg = ToyBackendConfig {
                weight_seed,
                ..Default::default()
            };
            BackendHandle::toy(&cfg)?.save_weights(&out)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
