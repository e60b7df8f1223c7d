use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use arguide_core::compiler::assets::AssetLibrary;
use arguide_core::compiler::Compiler;
use arguide_core::eval::{aggregate, from_csv, load_outcomes, render_text, to_csv, to_json, FixtureBundle, Replayer};
use arguide_core::plan::{classify_visual_type, parse_plan, ClassifierLexicons};
use arguide_core::session::{FixtureScenes, Journal, ProtocolHandler, RandomIds, SessionManager};
use arguide_core::vision::{GatewayConfig, HttpProvider, MockProvider, ProviderConfig, VisionGateway, VisionProvider};

#[derive(Debug, Parser)]
#[command(name = "arguide", version, about = "Step-by-step AR task guidance engine")]
struct Cli {
    /// Log filter, e.g. `info` or `arguide_core=debug`.
    #[arg(long, global = true, default_value = "info", env = "ARGUIDE_LOG")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the session service over WebSocket at `/ws`.
    Serve(ServeArgs),
    /// Replay fixture bundles and write per-step outcomes as JSON.
    Replay(ReplayArgs),
    /// Fold outcome files into a metrics report.
    Aggregate(AggregateArgs),
    /// Render a report CSV as text or JSON.
    Report(ReportArgs),
    /// Compile one step of a fixture bundle and print its scene graph.
    Compile(CompileArgs),
    /// Check a plan document against the step schema.
    Plan {
        #[command(subcommand)]
        command: PlanCommand,
    },
    /// Show which visual type an instruction's wording suggests.
    Classify(ClassifyArgs),
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8765")]
    listen: SocketAddr,
    /// Answer every provider call from this bundle's canned replies.
    #[arg(long, value_name = "BUNDLE_DIR", conflicts_with = "provider_config")]
    fixture: Option<PathBuf>,
    /// Provider endpoints (TOML); API keys come from the environment.
    #[arg(long, value_name = "PATH", required_unless_present = "fixture")]
    provider_config: Option<PathBuf>,
    /// Directory for the session journal; sessions found there are resumed.
    #[arg(long, value_name = "DIR")]
    journal: Option<PathBuf>,
    /// Fixture root for `scene_ref` snapshots (defaults to the parent of `--fixture`).
    #[arg(long, value_name = "DIR")]
    scenes: Option<PathBuf>,
    /// Static files served next to `/ws`.
    #[arg(long, value_name = "DIR")]
    static_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// A bundle directory, or a directory of bundles.
    bundles: PathBuf,
    /// Use live providers from this config instead of canned replies.
    #[arg(long, value_name = "PATH")]
    live: Option<PathBuf>,
    #[arg(long, short, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AggregateArgs {
    /// Outcome files written by `replay`.
    #[arg(required = true)]
    outcomes: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[arg(long, short, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Report CSV written by `aggregate --format csv`.
    csv: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Debug, Args)]
struct CompileArgs {
    bundle: PathBuf,
    /// Zero-based step index.
    #[arg(long, default_value_t = 0)]
    step: usize,
}

#[derive(Debug, Subcommand)]
enum PlanCommand {
    /// Validate a plan document; exits non-zero listing every violation.
    Validate { path: PathBuf },
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    instruction: String,
    /// TOML lexicon file replacing the built-in word lists.
    #[arg(long, value_name = "PATH")]
    lexicons: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_new(&cli.log_level).context("bad --log-level")?)
        .with_writer(std::io::stderr)
        .init();
    let rt = tokio::runtime::Runtime::new()?;
    match cli.command {
        Command::Serve(a) => rt.block_on(serve(a)),
        Command::Replay(a) => rt.block_on(replay(a)),
        Command::Aggregate(a) => aggregate_cmd(a),
        Command::Report(a) => report_cmd(a),
        Command::Compile(a) => rt.block_on(compile(a)),
        Command::Plan { command: PlanCommand::Validate { path } } => validate(&path),
        Command::Classify(a) => classify(a),
    }
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

async fn serve(a: ServeArgs) -> Result<()> {
    let (provider, config): (Arc<dyn VisionProvider>, GatewayConfig) = match (&a.fixture, &a.provider_config) {
        (Some(dir), _) => (Arc::new(MockProvider::from_dir(dir)?), GatewayConfig::default()),
        (None, Some(path)) => {
            let cfg = ProviderConfig::load(path)?;
            (Arc::new(HttpProvider::from_config(&cfg)?), cfg.gateway_config())
        }
        (None, None) => bail!("either --fixture or --provider-config is required"),
    };
    tracing::info!(provider = provider.name(), "provider ready");
    let compiler = Compiler::new(VisionGateway::new(provider, config), Arc::new(AssetLibrary::builtin()));
    let manager = SessionManager::with_options(compiler, Box::new(RandomIds::default()), a.journal.clone().map(Journal::new));
    let resumed = manager.recover()?;
    if !resumed.is_empty() {
        tracing::info!(count = resumed.len(), "resumed journaled sessions");
    }
    let scenes = a.scenes.clone().or_else(|| a.fixture.as_ref().and_then(|d| d.parent().map(Path::to_path_buf)));
    let handler = Arc::new(ProtocolHandler::new(manager, FixtureScenes::new(scenes)));
    arguide_core::session::server::serve(a.listen, handler, a.static_dir).await?;
    Ok(())
}

fn load_bundles(path: &Path) -> Result<Vec<FixtureBundle>> {
    if path.join("bundle.json").is_file() {
        Ok(vec![FixtureBundle::load(path)?])
    } else {
        Ok(FixtureBundle::load_all(path)?)
    }
}

async fn replay(a: ReplayArgs) -> Result<()> {
    let replayer = match &a.live {
        Some(path) => Replayer::live(&ProviderConfig::load(path)?)?,
        None => Replayer::mock(),
    };
    let bundles = load_bundles(&a.bundles)?;
    let outcomes = replayer.replay_all(&bundles).await?;
    let failed = outcomes.iter().filter(|o| o.error.is_some()).count();
    tracing::info!(bundles = bundles.len(), steps = outcomes.len(), failed, "replay finished");
    write_out(a.out.as_deref(), &(serde_json::to_string_pretty(&outcomes)? + "\n"))
}

fn aggregate_cmd(a: AggregateArgs) -> Result<()> {
    let mut outcomes = Vec::new();
    for p in &a.outcomes {
        outcomes.extend(load_outcomes(p).map_err(anyhow::Error::msg)?);
    }
    let report = aggregate(&outcomes);
    let text = match a.format {
        Format::Text => render_text(&report),
        Format::Csv => to_csv(&report),
        Format::Json => serde_json::to_string_pretty(&to_json(&report))? + "\n",
    };
    write_out(a.out.as_deref(), &text)
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.csv).with_context(|| format!("reading {}", a.csv.display()))?;
    let report = from_csv(&text)?;
    let out = match a.format {
        Format::Text => render_text(&report),
        Format::Csv => to_csv(&report),
        Format::Json => serde_json::to_string_pretty(&to_json(&report))? + "\n",
    };
    write_out(None, &out)
}

async fn compile(a: CompileArgs) -> Result<()> {
    let bundle = FixtureBundle::load(&a.bundle)?;
    let Some(step) = bundle.reference_plan.steps.get(a.step) else {
        bail!("bundle has {} steps", bundle.reference_plan.len());
    };
    let provider = MockProvider::from_dir(&bundle.dir)?;
    let compiler = Compiler::new(VisionGateway::new(Arc::new(provider), GatewayConfig::default()), Arc::new(AssetLibrary::builtin()));
    let compiled = compiler.compile_step(bundle.initial(), a.step, step, bundle.scene_for_step(a.step)).await?;
    println!("{}", serde_json::to_string_pretty(&compiled)?);
    Ok(())
}

fn validate(path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match parse_plan(&text) {
        Ok(plan) => {
            println!("ok: {} steps", plan.len());
            Ok(())
        }
        Err(e) => bail!("{}: {e}", path.display()),
    }
}

fn classify(a: ClassifyArgs) -> Result<()> {
    let loaded;
    let lexicons = match &a.lexicons {
        Some(p) => {
            loaded = ClassifierLexicons::load(p)?;
            &loaded
        }
        None => ClassifierLexicons::builtin(),
    };
    let t = classify_visual_type(&a.instruction, lexicons);
    match &t.token {
        Some(tok) => println!("{} ({}) via {:?} on {tok:?}", t.visual_type.label(), t.visual_type.code(), t.rule),
        None => println!("{} ({}) via {:?}", t.visual_type.label(), t.visual_type.code(), t.rule),
    }
    Ok(())
}
