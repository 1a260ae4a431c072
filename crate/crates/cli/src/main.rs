mod config;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rearrange_core::evaluation::{
    fixture_names, fixture_scene, judge_log, parse_relation, run_benchmark, BenchConfig, Method, ReportFormat, StepResult,
};
use rearrange_core::experience_store::{add_experience, Source, Store};
use rearrange_core::grounding::{make_embedder, Embedder};
use rearrange_core::llm_client::{make_backend, ChatBackend};
use rearrange_core::reasoner::{Pipeline, ReferenceInfo};
use rearrange_core::scene::{load_scene, Scene};
use rearrange_service::{ServiceOptions, Settings, DEFAULT_LISTEN};
use serde_json::json;

use config::{CliConfig, Layer};

type Backends = (Box<dyn ChatBackend>, Box<dyn Embedder>);

#[derive(Parser)]
#[command(name = "rearrange", version, about = "Language-conditioned tabletop rearrangement")]
struct Cli {
    #[command(flatten)]
    settings: SettingArgs,
    #[command(subcommand)]
    command: Command,
}

/// Flags mirroring the config keys; they override the file and the
/// environment.
#[derive(Args, Default)]
struct SettingArgs {
    /// TOML file of `key = value` settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// scripted, oracle or remote.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Model name sent to the remote backend
    #[arg(long, global = true)]
    model: Option<String>,
    /// Seed for the random baseline
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Experience store directory
    #[arg(long, global = true)]
    store_dir: Option<String>,
    /// Bundled fixture name or path to a scene document.
    #[arg(long, global = true)]
    scene: Option<String>,
    /// with_reference or without_reference.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Gap between objects in the geometric baseline
    #[arg(long, global = true)]
    gap_px: Option<String>,
    /// camera (front is +y in the image) or robot.
    #[arg(long, global = true)]
    front_axis: Option<String>,
    /// scripted or remote.
    #[arg(long, global = true)]
    embedder: Option<String>,
    /// Chat-completions endpoint for the remote backend
    #[arg(long, global = true)]
    base_url: Option<String>,
    /// Embedding endpoint for the remote embedder
    #[arg(long, global = true)]
    embed_url: Option<String>,
}

impl SettingArgs {
    fn layer(&self) -> Layer {
        let pairs = [
            ("backend", &self.backend),
            ("model", &self.model),
            ("seed", &self.seed),
            ("store_dir", &self.store_dir),
            ("scene", &self.scene),
            ("mode", &self.mode),
            ("gap_px", &self.gap_px),
            ("front_axis", &self.front_axis),
            ("embedder", &self.embedder),
            ("base_url", &self.base_url),
            ("embed_url", &self.embed_url),
        ];
        pairs.into_iter().filter_map(|(k, v)| v.clone().map(|v| (k.to_string(), v))).collect()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one instruction and check the resulting scene.
    Run {
        /// Natural-language instruction
        #[arg(long)]
        instruction: String,
        #[arg(long, value_enum, default_value_t = RunFormat::Json)]
        format: RunFormat,
    },
    /// Evaluate methods on the bundled scenarios.
    Bench {
        /// Comma-separated: random, geometric, ours_no_ref, ours_with_ref.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        #[arg(long, value_enum, default_value_t = BenchFormat::Table)]
        format: BenchFormat,
        /// Write the report here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Manage the experience store.
    Store {
        #[command(subcommand)]
        action: StoreAction,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long, default_value = DEFAULT_LISTEN)]
        listen: SocketAddr,
        /// Also serve the console's static files.
        #[arg(long)]
        with_console: bool,
        #[arg(long, default_value = "console/dist")]
        console_dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum StoreAction {
    /// One row per experience.
    List {
        #[arg(long)]
        json: bool,
    },
    /// Store the `--scene` arrangement under an instruction.
    Add {
        /// Instruction the arrangement satisfies
        #[arg(long)]
        instruction: String,
        #[arg(long, value_enum, default_value_t = SourceArg::Human)]
        source: SourceArg,
    },
    /// Every experience as one JSON array.
    Export {
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RunFormat {
    Json,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchFormat {
    Table,
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Human,
    Robot,
}

/// A failure worth a message on stderr and a nonzero exit.
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl ToString) -> Failure {
    Failure { code: 2, message: message.to_string() }
}

fn runtime(message: impl ToString) -> Failure {
    Failure { code: 1, message: message.to_string() }
}

fn load_config(args: &SettingArgs) -> Result<CliConfig, Failure> {
    let env = config::env_layer(std::env::vars());
    let file = match &args.config {
        Some(path) => config::read_file(path).map_err(usage)?,
        None => Layer::new(),
    };
    config::resolve(&[&env, &file, &args.layer()]).map_err(usage)
}

fn load_scene_arg(name: &str) -> Result<Scene, Failure> {
    if let Ok(scene) = fixture_scene(name) {
        return Ok(scene);
    }
    let path = Path::new(name);
    if !path.exists() {
        let known: Vec<&str> = fixture_names().collect();
        return Err(usage(format!("no fixture or file named {name:?} (fixtures: {})", known.join(", "))));
    }
    let bytes = std::fs::read(path).map_err(|e| usage(format!("cannot read {name}: {e}")))?;
    load_scene(&bytes).map_err(|e| usage(format!("{name}: {e}")))
}

fn backends(cfg: &CliConfig) -> Result<Backends, Failure> {
    let llm = make_backend(cfg.backend, cfg.remote().as_ref(), cfg.predicates()).map_err(usage)?;
    let embedder = make_embedder(cfg.embedder, cfg.embed_url.as_deref(), cfg.api_key.clone()).map_err(usage)?;
    Ok((llm, embedder))
}

fn open_store(cfg: &CliConfig) -> Result<Store, Failure> {
    Store::open_or_seed(&cfg.store_dir).map_err(|e| usage(format!("store {}: {e}", cfg.store_dir.display())))
}

fn write_out(output: Option<&Path>, text: &str) -> Result<(), Failure> {
    match output {
        Some(path) => std::fs::write(path, text).map_err(|e| runtime(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cfg: &CliConfig, instruction: &str, format: RunFormat) -> Result<ExitCode, Failure> {
    let scene = load_scene_arg(&cfg.scene)?;
    let (llm, embedder) = backends(cfg)?;
    let store = open_store(cfg)?;
    let pipeline = Pipeline::new(llm.as_ref(), embedder.as_ref(), Some(&store));
    let specs = parse_relation(instruction, &scene);
    if let Err(e) = &specs {
        eprintln!("cannot check this instruction: {e}");
    }
    let (log, error) = match pipeline.execute(&scene, instruction, cfg.mode) {
        Ok(log) => (log, None),
        Err(f) => {
            let error = json!({ "stage": f.stage, "message": f.error.to_string() });
            eprintln!("{f}");
            (*f.partial, Some(error))
        }
    };
    let checks: Vec<StepResult> = match &specs {
        Ok(specs) => judge_log(&log, specs, &cfg.predicates()),
        Err(_) => Vec::new(),
    };
    let satisfied = error.is_none() && specs.is_ok() && !checks.is_empty() && checks.iter().all(|s| s.satisfied);
    match format {
        RunFormat::Json => {
            let doc = json!({
                "instruction": instruction,
                "backend": cfg.backend,
                "mode": cfg.mode,
                "reference": log.reference,
                "transitions": log.transitions(),
                "checks": checks,
                "satisfied": satisfied,
                "error": error,
                "final_scene": log.final_scene(),
            });
            println!("{}", serde_json::to_string_pretty(&doc).expect("report serializes"));
        }
        RunFormat::Text => {
            if let Some(ReferenceInfo { id, instruction, score }) = &log.reference {
                println!("reference {id} ({score}): {instruction}");
            }
            for t in log.transitions() {
                println!(
                    "step {} {}: ({:.1}, {:.1}) -> ({:.1}, {:.1}) rotation {:.1} deg{}",
                    t.step,
                    t.object,
                    t.from.x,
                    t.from.y,
                    t.to.x,
                    t.to.y,
                    t.to.rotation.to_degrees(),
                    if t.repaired { " [repaired]" } else { "" }
                );
            }
            for step in &checks {
                for r in &step.relations {
                    let mark = if r.holds { "ok  " } else { "FAIL" };
                    println!("{mark} step {} {} {:?} {:?}", step.step_index, r.spec.kind.as_str(), r.spec.subject_ids, r.spec.anchor_ids);
                }
            }
            println!("{}", serde_json::to_string_pretty(log.final_scene()).expect("scene serializes"));
        }
    }
    Ok(if satisfied { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn bench(cfg: &CliConfig, methods: &[String], format: BenchFormat, output: Option<&Path>) -> Result<ExitCode, Failure> {
    let methods = if methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        methods
            .iter()
            .map(|m| Method::parse(m).ok_or_else(|| usage(format!("unknown method {m:?}"))))
            .collect::<Result<Vec<_>, _>>()?
    };
    let (llm, embedder) = backends(cfg)?;
    let needs_store = methods.contains(&Method::OursWithRef);
    let store = if needs_store { Some(open_store(cfg)?) } else { None };
    let config = BenchConfig { methods, seed: cfg.seed, gap_px: cfg.gap_px, predicates: cfg.predicates() };
    let report = run_benchmark(&config, llm.as_ref(), embedder.as_ref(), store.as_ref()).map_err(usage)?;
    let format = match format {
        BenchFormat::Table => ReportFormat::Table,
        BenchFormat::Csv => ReportFormat::Csv,
        BenchFormat::Json => ReportFormat::Doc,
    };
    write_out(output, &report.render(format))?;
    Ok(ExitCode::SUCCESS)
}

fn store(cfg: &CliConfig, action: &StoreAction) -> Result<ExitCode, Failure> {
    let store = open_store(cfg)?;
    match action {
        StoreAction::List { json } => {
            let items = store.list();
            if *json {
                let rows: Vec<_> = items
                    .iter()
                    .map(|e| json!({"id": e.id, "instruction": e.instruction, "created_at": e.created_at, "source": e.source}))
                    .collect();
                println!("{}", serde_json::to_string_pretty(&rows).expect("rows serialize"));
            } else {
                for e in items {
                    let source = serde_json::to_value(e.source).expect("source serializes");
                    println!("{}\t{}\t{}\t{}", e.id, source.as_str().unwrap_or(""), e.created_at.to_rfc3339(), e.instruction);
                }
            }
        }
        StoreAction::Add { instruction, source } => {
            let scene = load_scene_arg(&cfg.scene)?;
            let source = match source {
                SourceArg::Human => Source::Human,
                SourceArg::Robot => Source::Robot,
            };
            let exp = add_experience(&store, instruction, &scene, source).map_err(runtime)?;
            println!("{}", exp.id);
        }
        StoreAction::Export { output } => {
            write_out(output.as_deref(), &String::from_utf8(store.export()).expect("export is UTF-8"))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(cfg: &CliConfig, listen: SocketAddr, console: Option<PathBuf>) -> Result<ExitCode, Failure> {
    let fixture = if fixture_scene(&cfg.scene).is_ok() { cfg.scene.clone() } else { return Err(usage(format!("no fixture named {:?}", cfg.scene))) };
    let options = ServiceOptions {
        store_dir: cfg.store_dir.clone(),
        fixture,
        settings: Settings { backend: cfg.backend, embedder: cfg.embedder, mode: cfg.mode, gap_px: cfg.gap_px, seed: cfg.seed },
        remote: cfg.remote(),
        embed_url: cfg.embed_url.clone(),
        embed_key: cfg.api_key.clone(),
        predicates: cfg.predicates(),
    };
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(rearrange_service::serve(options, listen, console)).map_err(runtime)?;
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: &Cli) -> Result<ExitCode, Failure> {
    let cfg = load_config(&cli.settings)?;
    match &cli.command {
        Command::Run { instruction, format } => run(&cfg, instruction, *format),
        Command::Bench { methods, format, output } => bench(&cfg, methods, *format, output.as_deref()),
        Command::Store { action } => store(&cfg, action),
        Command::Serve { listen, with_console, console_dir } => {
            serve(&cfg, *listen, with_console.then(|| console_dir.clone()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(Failure { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
