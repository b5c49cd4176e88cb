use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use codexity_core::analyzers::analyze;
use codexity_core::benchmark::{
    build_manifest, read_dump, run_benchmark, synthetic_corpus, BuildOptions, Manifest, MetricsReport, PromptRecord,
    RunOptions, ScriptPlan, SyntheticSpec, PROBE_RUNS,
};
use codexity_core::config::CodexityConfig;
use codexity_core::diagnostics::{AnalysisReport, AnalyzerKind};
use codexity_core::llm::{BackendConfig, BackendDescriptor, ChatBackend, LlmError};
use codexity_core::prompting::render_diagnostics;
use codexity_core::repair::{run_configured_session, Outcome, RepairSession, Strategy, StrategyConfig};
use codexity_core::runlog::RunLog;
use codexity_service::ServiceConfig;
use serde_json::json;

/// Usage errors exit with this code so they never collide with the outcome codes.
const EXIT_ERROR: u8 = 1;

#[derive(Debug, Parser)]
#[command(name = "codexity", version, about = "Security-gated code completion")]
struct Cli {
    /// JSON config file. Falls back to $CODEXITY_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Complete a partial C program, repairing what the analyzers flag.
    Complete(CompleteArgs),
    /// Run the analyzers over a C file.
    Analyze(AnalyzeArgs),
    /// Dataset construction and strategy evaluation.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Run the local HTTP service.
    Serve(ServeArgs),
    /// Print the effective configuration after file and environment layers.
    Config,
}

#[derive(Debug, Args)]
struct BackendArgs {
    /// Named backend from the config file, used as the target model.
    #[arg(long)]
    backend: Option<String>,
    /// Mock script for the target model; replaces any configured backend.
    #[arg(long, conflicts_with = "backend")]
    script: Option<PathBuf>,
    /// Named backend for the preshot draft model.
    #[arg(long)]
    local_backend: Option<String>,
    /// Mock script for the preshot draft model.
    #[arg(long, conflicts_with = "local_backend")]
    local_script: Option<PathBuf>,
    #[arg(long)]
    max_iterations: Option<u32>,
}

#[derive(Debug, Args)]
struct CompleteArgs {
    /// C source with the partial program; `-` reads stdin.
    #[arg(long)]
    file: PathBuf,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Strategy,
    #[command(flatten)]
    backends: BackendArgs,
    /// Append the session to this run log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Print the full session as JSON on stderr instead of the trail.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    file: PathBuf,
    /// Comma-separated subset of builtin, cppcheck, infer.
    #[arg(long, value_delimiter = ',', value_parser = parse_analyzer)]
    analyzers: Option<Vec<AnalyzerKind>>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Subcommand)]
enum BenchCommand {
    /// Filter a post dump into a benchmark manifest.
    Build(BuildArgs),
    /// Evaluate a strategy over a manifest's vulnerable prompts.
    Run(RunArgs),
    /// Write a synthetic post dump, and optionally a matching mock script.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    backends: BackendArgs,
    /// Prompts probed concurrently.
    #[arg(long, default_value_t = 4)]
    width: usize,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Strategy,
    #[arg(long)]
    report: PathBuf,
    #[command(flatten)]
    backends: BackendArgs,
    #[arg(long, default_value_t = PROBE_RUNS)]
    runs: usize,
    #[arg(long, default_value_t = 4)]
    width: usize,
    /// Append every session to this run log.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    posts: usize,
    #[arg(long, default_value_t = 20)]
    matching: usize,
    #[arg(long, default_value_t = 20)]
    vulnerable: usize,
    /// Also write a keyed mock script following this plan.
    #[arg(long, requires = "plan")]
    script_out: Option<PathBuf>,
    #[arg(long, value_parser = parse_plan)]
    plan: Option<ScriptPlan>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Overrides the configured bind address.
    #[arg(long)]
    bind: Option<String>,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

fn parse_analyzer(s: &str) -> Result<AnalyzerKind, String> {
    s.trim().parse()
}

fn parse_plan(s: &str) -> Result<ScriptPlan, String> {
    match s {
        "always-vulnerable" => Ok(ScriptPlan::AlwaysVulnerable),
        "always-safe" => Ok(ScriptPlan::AlwaysSafe),
        "fixes-on-second-try" => Ok(ScriptPlan::FixesOnSecondTry),
        "fixes-half" => Ok(ScriptPlan::FixesHalf),
        _ => Err(format!(
            "unknown plan `{s}` (expected always-vulnerable, always-safe, fixes-on-second-try or fixes-half)"
        )),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("CODEXITY_LOG").unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let config = CodexityConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Complete(args) => complete(&config, args),
        Command::Analyze(args) => analyze_file(&config, args),
        Command::Bench(BenchCommand::Build(args)) => bench_build(&config, args),
        Command::Bench(BenchCommand::Run(args)) => bench_run(&config, args),
        Command::Bench(BenchCommand::Synth(args)) => bench_synth(args),
        Command::Serve(args) => serve(config, args),
        Command::Config => {
            println!("{}", serde_json::to_string_pretty(&config)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn read_source(path: &Path) -> Result<String> {
    if path == Path::new("-") {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        return Ok(s);
    }
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn script_backend(path: &Path) -> BackendConfig {
    BackendConfig {
        descriptor: BackendDescriptor::mock(),
        script: None,
        script_path: Some(path.to_path_buf()),
        ..BackendConfig::default()
    }
}

/// Config-file defaults with the command-line backend choices laid over them.
fn strategy_config(config: &CodexityConfig, strategy: Strategy, args: &BackendArgs) -> Result<StrategyConfig> {
    let mut cfg = config.strategy.clone();
    cfg.strategy = strategy;
    if let Some(name) = &args.backend {
        cfg.target_backend = config.backend(name)?;
    }
    if let Some(path) = &args.script {
        cfg.target_backend = script_backend(path);
    }
    if let Some(name) = &args.local_backend {
        cfg.local_backend = Some(config.backend(name)?);
    }
    if let Some(path) = &args.local_script {
        cfg.local_backend = Some(script_backend(path));
    }
    if let Some(n) = args.max_iterations {
        cfg.max_iterations = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn outcome_code(outcome: Outcome) -> ExitCode {
    match outcome {
        Outcome::Safe => ExitCode::SUCCESS,
        Outcome::VulnerableResidual => ExitCode::from(2),
        Outcome::NonCodeOutput => ExitCode::from(3),
    }
}

fn print_trail(session: &RepairSession) {
    for it in &session.iterations {
        let findings = it.report.as_ref().map_or(0, |r| r.diagnostics.len());
        eprintln!(
            "[{}] {:?} {:?}: {} finding(s), {:.2}s generation, {:.2}s analysis",
            it.index, it.role, it.output_class, findings, it.result.latency_seconds, it.analysis_seconds
        );
        if let Some(report) = &it.report {
            for line in render_diagnostics(report) {
                eprintln!("    {line}");
            }
            for f in &report.analyzer_failures {
                eprintln!("    ({} failed: {})", f.analyzer, f.reason);
            }
        }
    }
    for w in &session.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "outcome: {:?} after {} repair iteration(s) in {:.2}s",
        session.outcome, session.repair_iteration_count, session.total_seconds
    );
}

fn complete(config: &CodexityConfig, args: CompleteArgs) -> Result<ExitCode> {
    let code = read_source(&args.file)?;
    let cfg = strategy_config(config, args.strategy, &args.backends)?;
    let log = args.log.as_ref().map(RunLog::open).transpose()?;
    let session = run_configured_session(&code, &cfg, &config.analyzer, log.as_ref())?;
    if args.json {
        eprintln!("{}", serde_json::to_string_pretty(&session)?);
    } else {
        print_trail(&session);
    }
    if let Some(code) = &session.final_code {
        print!("{code}");
    }
    Ok(outcome_code(session.outcome))
}

fn analyze_file(config: &CodexityConfig, args: AnalyzeArgs) -> Result<ExitCode> {
    let code = read_source(&args.file)?;
    let mut cfg = config.analyzer.clone();
    if let Some(kinds) = args.analyzers {
        cfg.enabled_analyzers = kinds.into_iter().collect();
    }
    let report: AnalysisReport = analyze(&code, &cfg)?;
    if args.json {
        let mut value = serde_json::to_value(&report)?;
        value
            .as_object_mut()
            .expect("reports serialize as objects")
            .insert("schemaVersion".into(), json!(1));
        println!("{}", serde_json::to_string_pretty(&value)?);
        return Ok(ExitCode::SUCCESS);
    }
    let name = args.file.display();
    for d in &report.diagnostics {
        println!("{name}:{}: {} {} [{}]", d.line(), d.category, d.message, d.analyzer);
    }
    for f in &report.analyzer_failures {
        eprintln!("{} failed: {}", f.analyzer, f.reason);
    }
    println!("{} finding(s)", report.diagnostics.len());
    Ok(ExitCode::SUCCESS)
}

fn bench_build(config: &CodexityConfig, args: BuildArgs) -> Result<ExitCode> {
    let posts = read_dump(&args.corpus)?;
    if posts.is_empty() {
        bail!("corpus {} contains no posts", args.corpus.display());
    }
    let cfg = strategy_config(config, Strategy::Baseline, &args.backends)?;
    let target = cfg.target_backend.clone();
    let factory = move |record: &PromptRecord| -> Result<Box<dyn ChatBackend>, LlmError> {
        target.instantiate_for(Some(&record.prompt_id))
    };
    let opts = BuildOptions {
        width: args.width,
        prompts: cfg.prompt.clone(),
        ..BuildOptions::default()
    };
    let manifest = build_manifest(&posts, &config.analyzer, &factory, &opts)?;
    if manifest.prompts.is_empty() {
        bail!("no prompt in {} survived filtering", args.corpus.display());
    }
    manifest.save(&args.out)?;
    let s = manifest.stats;
    eprintln!(
        "{} posts ingested, {} survived round one, {} probed, {} completions, {} vulnerable prompts ({} benchmark completions)",
        s.posts_ingested, s.round_one_survivors, s.probed_prompts, s.completions, s.vulnerable_prompts, s.benchmark_completions
    );
    Ok(ExitCode::SUCCESS)
}

fn bench_run(config: &CodexityConfig, args: RunArgs) -> Result<ExitCode> {
    let manifest = Manifest::load(&args.manifest)?;
    let cfg = strategy_config(config, args.strategy, &args.backends)?;
    let opts = RunOptions {
        runs_per_prompt: args.runs,
        width: args.width,
    };
    let sessions = run_benchmark(&manifest, &cfg, &config.analyzer, opts)?;
    if let Some(path) = &args.log {
        let log = RunLog::open(path)?;
        for s in &sessions {
            log.append(s)?;
        }
    }
    let report = MetricsReport::new(args.strategy.name(), &sessions)?;
    std::fs::write(&args.report, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("cannot write {}", args.report.display()))?;
    if let Some(table) = &report.table {
        println!("{table}");
    }
    Ok(ExitCode::SUCCESS)
}

fn bench_synth(args: SynthArgs) -> Result<ExitCode> {
    let posts = synthetic_corpus(SyntheticSpec::new(args.posts, args.matching, args.vulnerable));
    std::fs::write(&args.out, serde_json::to_string_pretty(&posts)? + "\n")?;
    if let (Some(path), Some(plan)) = (&args.script_out, args.plan) {
        let ids: Vec<String> = posts.iter().map(|p| p.id.clone()).collect();
        let script = plan.script(&ids, PROBE_RUNS);
        std::fs::write(path, serde_json::to_string_pretty(&script)? + "\n")?;
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(config: CodexityConfig, args: ServeArgs) -> Result<ExitCode> {
    let mut service = ServiceConfig::from(config);
    if let Some(bind) = args.bind {
        service.bind_address = bind;
    }
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let (listener, app) = codexity_service::bind(service).await?;
        // Scripts wait for this line to learn the port.
        eprintln!("listening on {}", listener.local_addr()?);
        codexity_service::serve_on(listener, app).await
    })?;
    Ok(ExitCode::SUCCESS)
}
