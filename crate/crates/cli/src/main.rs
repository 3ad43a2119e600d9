use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use eqa_core::agent::{Agent, AgentConfig, EpisodeStatus};
use eqa_core::dataset::{generate, generate_world, CategoryCounts, Dataset, TemplateSet, WorldGenOptions};
use eqa_core::environment::WorldTruth;
use eqa_core::evaluation::{run_benchmark, BenchmarkConfig, JudgeBackend};
use eqa_core::language_parsing::{slots_for, GoldAnnotation, LanguageParser, ParserBackend, Question};
use eqa_core::llm_client::{ChatClient, ReplayTransport};
use eqa_core::llm_planner::PlannerBackend;
use eqa_core::pattern::parse_pattern_string;
use eqa_core::rule_planner::ObservationPolicy;
use eqa_core::scene_graph::{LayerId, WorldFile};

const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "eqa", version, about = "Step-by-step embodied question answering over indoor scene graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer one question in a world and print the plan timeline.
    Ask(AskArgs),
    /// Run a dataset through the agent and judge.
    Bench(BenchArgs),
    /// Generate questions with gold answers from one or more worlds.
    GenDataset(GenDatasetArgs),
    /// Generate a random world file.
    GenWorld(GenWorldArgs),
    /// Check a world file and print a summary.
    ValidateWorld {
        #[arg(long)]
        world: PathBuf,
    },
    /// Print the timeline stored in a trace file.
    Trace {
        path: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ParserChoice {
    /// Gold annotation when present, else templates.
    Auto,
    Gold,
    Template,
    Llm,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Mock,
    Chat,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value = "auto")]
    parser: ParserChoice,
    #[arg(long, value_enum, default_value = "mock")]
    planner: Backend,
    /// Consecutive failures tolerated before the fallback planner runs.
    #[arg(long, default_value_t = 2)]
    retry_cap: u32,
    /// Plan budget per episode (default 4 x chain length + 8).
    #[arg(long)]
    max_plans: Option<usize>,
    /// Always observe from the room level.
    #[arg(long)]
    ablate_room_level: bool,
    /// Serve chat calls from a recorded JSONL file instead of the network.
    #[arg(long)]
    replay: Option<PathBuf>,
}

#[derive(Args)]
struct AskArgs {
    #[arg(long)]
    world: PathBuf,
    #[arg(long)]
    question: String,
    #[arg(long)]
    gold_pattern: Option<String>,
    #[arg(long, default_value = "trace.jsonl")]
    trace: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Directory of world files; ids default to file stems.
    #[arg(long)]
    worlds: PathBuf,
    /// JSON report path; the text table goes next to it with a .txt extension.
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long, value_enum, default_value = "mock")]
    judge: Backend,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct GenDatasetArgs {
    #[arg(long = "world", required = true)]
    worlds: Vec<PathBuf>,
    /// e.g. template=20,multi=10,small=10,people=5
    #[arg(long, default_value = "template=10,multi=10,small=10,people=10")]
    counts: CategoryCounts,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Alternative template file.
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Args)]
struct GenWorldArgs {
    #[arg(long)]
    id: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    occlusion_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    close_only_rate: f64,
    #[arg(long)]
    no_people: bool,
    #[arg(long)]
    out: PathBuf,
}

fn chat_client(replay: Option<&Path>) -> Result<ChatClient> {
    Ok(match replay {
        Some(path) => ChatClient::new(Arc::new(ReplayTransport::load(path)?), "replay"),
        None => ChatClient::from_env()?,
    })
}

fn build_agent(args: &BackendArgs) -> Result<Agent> {
    let chat = || chat_client(args.replay.as_deref());
    let parser = match args.parser {
        ParserChoice::Auto => LanguageParser::default(),
        ParserChoice::Gold => LanguageParser::new(vec![ParserBackend::Gold]),
        ParserChoice::Template => LanguageParser::new(vec![ParserBackend::Template]),
        ParserChoice::Llm => LanguageParser::new(vec![]).with_llm(chat()?),
    };
    let planner = match args.planner {
        Backend::Mock => PlannerBackend::LookupMock,
        Backend::Chat => PlannerBackend::Chat(chat()?),
    };
    let policy = if args.ablate_room_level { ObservationPolicy::RoomLevel } else { ObservationPolicy::RuleBased };
    Ok(Agent::new(parser, planner, AgentConfig { retry_cap: args.retry_cap, max_plans: args.max_plans, policy }))
}

/// Human-readable timeline from trace JSONL lines.
fn timeline(trace_jsonl: &str) -> Result<String> {
    let mut out = String::new();
    for (i, line) in trace_jsonl.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line).with_context(|| format!("trace line {}", i + 1))?;
        if let Some(h) = v.get("header") {
            out.push_str(&format!("question: {}\n", h["question"].as_str().unwrap_or("")));
            match h["pattern"].as_str() {
                Some(p) => out.push_str(&format!("t0  parse   {p}  ({})\n", h["parse_source"].as_str().unwrap_or("?"))),
                None => out.push_str("t0  parse   (failed)\n"),
            }
        } else if let Some(e) = v.get("event") {
            let plan = describe_plan(&e["plan"]);
            let verdict = if e["verdict"].as_bool() == Some(true) { "ok" } else { "failed" };
            let source = e["source"].as_str().unwrap_or("rule");
            let anchor = e["observation"]["anchor_label"].as_str().unwrap_or("?");
            out.push_str(&format!("t{:<2} {:<7} {plan}  -> at {anchor}, {verdict}\n", e["t"].as_u64().unwrap_or(0), source));
        } else if let Some(f) = v.get("final") {
            if f["final_plan"].is_object() {
                out.push_str(&format!("    answer  {}\n", describe_plan(&f["final_plan"])));
            }
            out.push_str(&format!(
                "answer: {}\nstatus: {}  steps: {}  plans: {}\n",
                f["answer"].as_str().unwrap_or(""),
                f["status"].as_str().unwrap_or("?"),
                f["steps"],
                f["plans"]
            ));
            if let Some(err) = f["error"].as_str() {
                out.push_str(&format!("error: {err}\n"));
            }
        }
    }
    Ok(out)
}

fn describe_plan(p: &Value) -> String {
    match p["kind"].as_str() {
        Some("MoveTo") => {
            let goal = &p["MoveTo"];
            let goal = if goal.is_object() { goal } else { p };
            format!("MoveTo({})", goal["label"].as_str().or_else(|| goal["goal"]["label"].as_str()).unwrap_or("?"))
        }
        Some("Observe") => format!("Observe({})", p["content"].as_str().unwrap_or("")),
        Some("Answer") => format!("Answer({})", p["value"].as_str().unwrap_or("")),
        _ => p.to_string(),
    }
}

fn ask(args: AskArgs) -> Result<ExitCode> {
    let agent = build_agent(&args.backend)?;
    let world = WorldTruth::load(&args.world).with_context(|| format!("loading world {}", args.world.display()))?;
    let mut question = Question::new(&args.question);
    if let Some(p) = &args.gold_pattern {
        let chain = parse_pattern_string(p).map_err(|e| Usage(format!("--gold-pattern: {e}")))?;
        question = question.with_gold(GoldAnnotation { pattern: p.clone(), slots: slots_for(&chain) });
    }
    let trace = agent.run_episode(&question, &world);
    let jsonl = trace.to_jsonl();
    std::fs::write(&args.trace, &jsonl).with_context(|| format!("writing {}", args.trace.display()))?;
    print!("{}", timeline(&jsonl)?);
    Ok(ExitCode::from(match trace.status {
        EpisodeStatus::Answered => 0,
        EpisodeStatus::NotFound => 2,
        EpisodeStatus::Failed => 1,
    }))
}

fn load_worlds(dir: &Path) -> Result<HashMap<String, WorldTruth>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut worlds = HashMap::new();
    for p in paths {
        let w = WorldTruth::load(&p).with_context(|| format!("loading world {}", p.display()))?;
        worlds.insert(w.id().to_string(), w);
    }
    Ok(worlds)
}

fn bench(args: BenchArgs) -> Result<ExitCode> {
    let dataset = Dataset::load(&args.dataset)?;
    if dataset.records.is_empty() {
        bail!("dataset {} has no records", args.dataset.display());
    }
    let worlds = load_worlds(&args.worlds)?;
    let judge = match args.judge {
        Backend::Mock => JudgeBackend::Mock,
        Backend::Chat => JudgeBackend::Chat(chat_client(args.backend.replay.as_deref())?),
    };
    let config = BenchmarkConfig { agent: build_agent(&args.backend)?, judge, workers: args.parallel.max(1) };
    let report = run_benchmark(&dataset.records, &worlds, &config);
    std::fs::write(&args.report, report.to_json() + "\n").with_context(|| format!("writing {}", args.report.display()))?;
    let table = report.table();
    std::fs::write(args.report.with_extension("txt"), &table)?;
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}

fn gen_dataset(args: GenDatasetArgs) -> Result<ExitCode> {
    let templates = match &args.templates {
        Some(p) => TemplateSet::load(p)?,
        None => TemplateSet::default(),
    };
    let mut records = Vec::new();
    for (i, path) in args.worlds.iter().enumerate() {
        let world = WorldTruth::load(path).with_context(|| format!("loading world {}", path.display()))?;
        records.extend(generate(&world, &templates, args.seed.wrapping_add(i as u64), &args.counts));
    }
    let mut ds = Dataset::new(records).with_seed(args.seed);
    if ds.header.worlds.is_empty() {
        for path in &args.worlds {
            ds.header.worlds.push(WorldTruth::load(path)?.id().to_string());
        }
    }
    ds.save(&args.out)?;
    println!("{} records -> {}", ds.records.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn gen_world(args: GenWorldArgs) -> Result<ExitCode> {
    let opts = WorldGenOptions {
        occlusion_rate: args.occlusion_rate,
        close_only_rate: args.close_only_rate,
        people: !args.no_people,
        ..WorldGenOptions::default()
    };
    if !(0.0..=1.0).contains(&opts.occlusion_rate) || !(0.0..=1.0).contains(&opts.close_only_rate) {
        return Err(Usage("rates must lie in [0, 1]".into()).into());
    }
    let wf = generate_world(&args.id, args.seed, &opts);
    std::fs::write(&args.out, serde_json::to_string_pretty(&wf)? + "\n")?;
    println!("{} -> {}", args.id, args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn validate_world(path: &Path) -> Result<ExitCode> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let world = WorldFile::from_json(&text)?.build(true)?;
    let g = &world.graph;
    println!(
        "ok: {} floors, {} rooms, {} big objects, {} small objects, {} spatial edges",
        g.count_layer(LayerId::Floor),
        g.count_layer(LayerId::Room),
        g.count_layer(LayerId::BigObject),
        g.count_layer(LayerId::SmallObject),
        g.spatial_edges().len()
    );
    Ok(ExitCode::SUCCESS)
}

/// A bad argument value found after clap accepted the command line.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Ask(a) => ask(a),
        Command::Bench(a) => bench(a),
        Command::GenDataset(a) => gen_dataset(a),
        Command::GenWorld(a) => gen_world(a),
        Command::ValidateWorld { world } => validate_world(&world),
        Command::Trace { path } => std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))
            .and_then(|t| timeline(&t))
            .map(|s| {
                print!("{s}");
                ExitCode::SUCCESS
            }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
