//! `evofsm` command line: single queries, benchmarks, iteration sweeps,
//! experience-pool maintenance and scripted scenario export.
//!
//! Exit codes: 2 invalid config or corrupt pool, 3 backend failure,
//! 4 no answer produced, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use evofsm_core::backends::live::ENV_EMBED_BASE_URL;
use evofsm_core::backends::{
    BackendError, Backends, CassetteChat, ChatBackend, FixtureTools, LiveChat, LiveEmbedder, LiveTools, Script,
    ScriptedChat, ToolBackend, ToolRegistry, Transport, UreqTransport,
};
use evofsm_core::fsm::DEFAULT_MAX_STATES;
use evofsm_core::harness::artifacts::{content_hash, run_id, write_meta, write_run_artifacts, RunMeta};
use evofsm_core::harness::dataset::to_jsonl;
use evofsm_core::harness::report::halt_label;
use evofsm_core::harness::{
    bench, load_dataset, solve, sweep_csv, BenchmarkItem, HarnessError, HarnessParams, Mode, RunReport, Scorer,
    Solved, SweepRow,
};
use evofsm_core::memory::{HashEmbedder, PoolError};
use evofsm_core::reflection::ExperienceRecord;
use evofsm_core::{
    deserialize_config, scenarios, validate_config, Embedder, EvolveLimits, ExperiencePool, FsmConfig, RunLimits,
    WarmStartParams,
};

#[derive(Parser)]
#[command(name = "evofsm", version, about = "Self-evolving state-machine agent orchestration")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Answer one query and write its run directory.
    Run {
        query: String,
        #[command(flatten)]
        opts: Opts,
    },
    /// Run every item of a JSONL dataset and print the report.
    Bench {
        dataset: PathBuf,
        #[command(flatten)]
        opts: Opts,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// One evofsm benchmark per iteration cap; prints CSV.
    Sweep {
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        caps: Vec<usize>,
        #[command(flatten)]
        opts: Opts,
    },
    /// Inspect or check an experience pool file.
    Pool {
        #[arg(long, env = "EVOFSM_POOL")]
        pool: PathBuf,
        #[command(subcommand)]
        cmd: PoolCmd,
    },
    /// Built-in scripted worlds.
    Scenario {
        #[command(subcommand)]
        cmd: ScenarioCmd,
    },
}

#[derive(Subcommand)]
enum PoolCmd {
    /// Success and failure counts, then one line per record.
    Stats,
    /// Pretty-print one record.
    Show { id: String },
    /// Re-check every line and the pool invariants.
    Verify,
}

#[derive(Subcommand)]
enum ScenarioCmd {
    List,
    /// Write script, corpus, config and dataset files for a scenario.
    Export { name: String, dir: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Scripted,
    Live,
    Replay,
    Record,
}

#[derive(Args, Clone)]
struct Opts {
    /// Machine definition (JSON). Defaults to search, browse, analysis.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "evofsm")]
    mode: Mode,
    #[arg(long, default_value_t = 3)]
    max_iterations: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_STATES)]
    max_states: usize,
    #[arg(long, default_value_t = 20)]
    max_steps: usize,
    #[arg(long, default_value_t = 3)]
    max_tool_calls: usize,
    /// Experience pool (JSONL). Without it, evofsm runs keep memory in RAM.
    #[arg(long, env = "EVOFSM_POOL")]
    pool: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    top_k: usize,
    #[arg(long, default_value_t = 0.55)]
    sim_threshold: f64,
    #[arg(long, value_enum, default_value = "scripted")]
    backend: BackendKind,
    /// Chat script for the scripted backend. Defaults to the built-in world.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    cassette: Option<PathBuf>,
    /// Directory of fixture documents for search and browse.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    embedding_dim: usize,
    /// HTTP timeout for live endpoints, in seconds.
    #[arg(long, default_value_t = 60)]
    timeout: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Score with the judge role instead of exact match.
    #[arg(long)]
    judge: bool,
    /// Leave the timestamp out of meta.json.
    #[arg(long)]
    no_timestamp: bool,
}

/// Failure carrying a specific exit code.
#[derive(Debug)]
struct Exit {
    code: u8,
    message: String,
}

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Exit {}

fn exit(code: u8, message: impl Into<String>) -> anyhow::Error {
    Exit { code, message: message.into() }.into()
}

fn pool_exit(e: PoolError) -> anyhow::Error {
    match e {
        PoolError::Storage(_) => anyhow::Error::from(e),
        other => exit(2, other.to_string()),
    }
}

impl Opts {
    fn params(&self) -> HarnessParams {
        HarnessParams {
            limits: EvolveLimits {
                max_iterations: self.max_iterations,
                max_states: self.max_states,
                run: RunLimits { max_steps: self.max_steps, max_tool_calls: self.max_tool_calls, ..RunLimits::default() },
            },
            warm: WarmStartParams { k: self.top_k, sim_threshold: self.sim_threshold },
            scorer: if self.judge { Scorer::Judge } else { Scorer::ExactMatch },
        }
    }

    fn load_config(&self) -> anyhow::Result<FsmConfig> {
        let config = match &self.config {
            None => scenarios::default_config(),
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                deserialize_config(&text).map_err(|e| exit(2, format!("{}: {e}", path.display())))?
            }
        };
        let report = validate_config(&config);
        if !report.is_valid() {
            return Err(exit(2, format!("invalid config\n{report}")));
        }
        Ok(config)
    }

    fn open_pool(&self) -> anyhow::Result<Option<ExperiencePool>> {
        self.pool
            .as_ref()
            .map(|p| ExperiencePool::open(p, self.embedding_dim).map_err(pool_exit))
            .transpose()
    }

    /// Everything besides the dataset that decides a result, for cache keys.
    fn key(&self, dataset: &str, pool: Option<&ExperiencePool>) -> String {
        let records: String = pool
            .map(|p| p.records().iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect())
            .unwrap_or_default();
        format!(
            "{dataset}\n{}\n{:?}\n{}\n{}",
            serde_json::to_string(&self.params()).expect("params serialize"),
            self.backend,
            self.embedding_dim,
            content_hash(&records),
        )
    }
}

/// Per-item backend construction for the selected kind.
struct BackendPlan {
    kind: BackendKind,
    script: Script,
    fixtures: Option<FixtureTools>,
    cassette: Option<PathBuf>,
    transport: Option<Arc<dyn Transport>>,
    embedding_dim: usize,
}

impl BackendPlan {
    fn new(opts: &Opts) -> anyhow::Result<Self> {
        let script = match &opts.script {
            Some(p) => Script::from_json(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
            None => scenarios::world_script(),
        };
        let fixtures = match &opts.fixtures {
            Some(dir) => Some(FixtureTools::load_dir(dir)?),
            None if matches!(opts.backend, BackendKind::Scripted | BackendKind::Replay) => Some(scenarios::world_tools()),
            None => None,
        };
        if matches!(opts.backend, BackendKind::Replay | BackendKind::Record) && opts.cassette.is_none() {
            bail!("--backend {:?} needs --cassette", opts.backend);
        }
        if opts.backend == BackendKind::Record && opts.workers > 1 {
            bail!("recording appends to one cassette; use --workers 1");
        }
        let transport: Option<Arc<dyn Transport>> = matches!(opts.backend, BackendKind::Live | BackendKind::Record)
            .then(|| Arc::new(UreqTransport::new(Duration::from_secs(opts.timeout))) as Arc<dyn Transport>);
        Ok(Self {
            kind: opts.backend,
            script,
            fixtures,
            cassette: opts.cassette.clone(),
            transport,
            embedding_dim: opts.embedding_dim,
        })
    }

    fn build(&self) -> Result<Backends, BackendError> {
        let live = || self.transport.clone().expect("live transport");
        let chat: Box<dyn ChatBackend> = match self.kind {
            BackendKind::Scripted => Box::new(ScriptedChat::new(self.script.clone())?),
            BackendKind::Replay => Box::new(CassetteChat::replay(self.cassette.as_ref().expect("checked"))?),
            BackendKind::Record => Box::new(CassetteChat::record(
                self.cassette.as_ref().expect("checked"),
                Box::new(LiveChat::from_env(live())?),
            )?),
            BackendKind::Live => Box::new(LiveChat::from_env(live())?),
        };
        let tools: Box<dyn ToolBackend> = match &self.fixtures {
            Some(f) => Box::new(f.clone()),
            None => Box::new(LiveTools::from_env(live())?),
        };
        let embedder: Box<dyn Embedder> = if self.kind == BackendKind::Live && std::env::var_os(ENV_EMBED_BASE_URL).is_some() {
            Box::new(LiveEmbedder::from_env(live(), self.embedding_dim)?)
        } else {
            Box::new(HashEmbedder::new(self.embedding_dim))
        };
        Ok(Backends::new(chat, ToolRegistry::new(tools), embedder))
    }
}

fn write_solved(dir: &Path, solved: &Solved, meta: &RunMeta) -> anyhow::Result<()> {
    write_run_artifacts(dir, solved).with_context(|| format!("writing {}", dir.display()))?;
    write_meta(dir, meta)?;
    Ok(())
}

fn cmd_run(query: &str, opts: &Opts) -> anyhow::Result<()> {
    let config = opts.load_config()?;
    let plan = BackendPlan::new(opts)?;
    let pool = match opts.mode {
        Mode::Evofsm => Some(opts.open_pool()?.unwrap_or_else(|| ExperiencePool::in_memory(opts.embedding_dim))),
        _ => None,
    };
    let key = opts.key(query, pool.as_ref());
    let dir = opts.out.join(run_id(&config, &key, opts.mode, opts.seed));
    let meta = RunMeta::new(&config, &key, opts.mode, opts.seed, !opts.no_timestamp);
    let mut backends = plan.build().map_err(|e| exit(3, e.to_string()))?;
    let pool = pool.map(Mutex::new);
    let solved = match solve(opts.mode, &config, query, &mut backends, pool.as_ref(), &opts.params()) {
        Ok(s) => s,
        Err(HarnessError::Evolve(e)) => {
            let partial = Solved { outcome: *e.partial, prior: None, record: None };
            write_solved(&dir, &partial, &meta)?;
            return Err(exit(3, format!("{}; partial run in {}", e.source, dir.display())));
        }
        Err(HarnessError::Backend(e)) => return Err(exit(3, e.to_string())),
        Err(HarnessError::Pool(e)) => return Err(pool_exit(e)),
    };
    write_solved(&dir, &solved, &meta)?;
    eprintln!("run directory: {}", dir.display());
    if let Some(rec) = &solved.record {
        eprintln!("pool record {} ({:?})", rec.id, rec.outcome);
    }
    match solved.answer() {
        Some(a) => {
            println!("{a}");
            Ok(())
        }
        None => Err(exit(4, format!("no answer: {}", halt_label(solved.outcome.final_trajectory.halted_reason)))),
    }
}

fn load_items(path: &Path) -> anyhow::Result<(Vec<BenchmarkItem>, String)> {
    let items = load_dataset(path)?;
    let canonical = to_jsonl(&items);
    Ok((items, canonical))
}

fn cmd_bench(dataset: &Path, opts: &Opts, json: bool) -> anyhow::Result<()> {
    let config = opts.load_config()?;
    let (items, canonical) = load_items(dataset)?;
    let plan = BackendPlan::new(opts)?;
    let pool = match opts.mode {
        Mode::Evofsm => Some(opts.open_pool()?.unwrap_or_else(|| ExperiencePool::in_memory(opts.embedding_dim))),
        _ => None,
    };
    let key = opts.key(&canonical, pool.as_ref());
    let pool = pool.map(Mutex::new);
    let factory = |_: &BenchmarkItem| plan.build();
    let report = bench(&items, opts.mode, &config, &opts.params(), &factory, pool.as_ref(), opts.workers);

    let dir = opts.out.join(run_id(&config, &key, opts.mode, opts.seed));
    write_report(&dir, &report)?;
    write_meta(&dir, &RunMeta::new(&config, &key, opts.mode, opts.seed, !opts.no_timestamp))?;
    eprintln!("run directory: {}", dir.display());
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.table());
    }
    Ok(())
}

fn write_report(dir: &Path, report: &RunReport) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)? + "\n")?;
    std::fs::write(dir.join("report.txt"), report.table())?;
    Ok(())
}

fn cmd_sweep(dataset: &Path, caps: &[usize], opts: &Opts) -> anyhow::Result<()> {
    let config = opts.load_config()?;
    let (items, canonical) = load_items(dataset)?;
    let plan = BackendPlan::new(opts)?;
    let pool = opts.open_pool()?;
    let factory = |_: &BenchmarkItem| plan.build();
    let mut rows = Vec::new();
    for &cap in caps {
        let mut cell = Opts { max_iterations: cap, ..opts.clone() };
        cell.mode = Mode::Evofsm;
        let key = cell.key(&canonical, pool.as_ref());
        let dir = opts.out.join(format!("cap{cap}-{}", run_id(&config, &key, Mode::Evofsm, opts.seed)));
        let cached = dir.join("report.json");
        let report: RunReport = if cached.exists() {
            tracing::info!("cap {cap}: reusing {}", cached.display());
            serde_json::from_str(&std::fs::read_to_string(&cached)?)
                .with_context(|| format!("reading cached {}", cached.display()))?
        } else {
            let snapshot = Mutex::new(pool.as_ref().map(ExperiencePool::snapshot).unwrap_or_else(|| ExperiencePool::in_memory(opts.embedding_dim)));
            let report = bench(&items, Mode::Evofsm, &config, &cell.params(), &factory, Some(&snapshot), opts.workers);
            write_report(&dir, &report)?;
            write_meta(&dir, &RunMeta::new(&config, &key, Mode::Evofsm, opts.seed, !opts.no_timestamp))?;
            report
        };
        rows.push(SweepRow { cap, accuracy: report.accuracy, mean_ops: report.mean_ops });
    }
    print!("{}", sweep_csv(&rows));
    Ok(())
}

fn record_line(r: &ExperienceRecord) -> String {
    let ops: Vec<String> = r.op_sequence.iter().map(|op| op.edit.kind().to_string()).collect();
    format!(
        "{}  {:?}  [{}]  {}",
        r.id,
        r.outcome,
        ops.join(", "),
        r.query_text.chars().take(60).collect::<String>()
    )
}

fn scan_pool(path: &Path) -> anyhow::Result<Vec<ExperienceRecord>> {
    if !path.exists() {
        return Ok(vec![]);
    }
    ExperiencePool::scan(path).map_err(pool_exit)
}

fn cmd_pool(path: &Path, cmd: &PoolCmd) -> anyhow::Result<()> {
    match cmd {
        PoolCmd::Stats => {
            let records = scan_pool(path)?;
            let success = records.iter().filter(|r| r.outcome == evofsm_core::Outcome::Success).count();
            println!("{success} success / {} failure", records.len() - success);
            for r in &records {
                println!("{}", record_line(r));
            }
        }
        PoolCmd::Show { id } => {
            let records = scan_pool(path)?;
            let Some(r) = records.iter().find(|r| &r.id == id) else {
                bail!("no record {id} in {}", path.display());
            };
            println!("{}", serde_json::to_string_pretty(r)?);
        }
        PoolCmd::Verify => {
            if !path.exists() {
                println!("ok: 0 success / 0 failure");
                return Ok(());
            }
            let stats = ExperiencePool::verify(path).map_err(pool_exit)?;
            println!("ok: {stats}");
        }
    }
    Ok(())
}

fn cmd_scenario(cmd: &ScenarioCmd) -> anyhow::Result<()> {
    match cmd {
        ScenarioCmd::List => {
            for name in scenarios::SCENARIO_NAMES {
                println!("{name}");
            }
        }
        ScenarioCmd::Export { name, dir } => {
            for path in scenarios::export(name, dir)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run { query, opts } => cmd_run(query, opts),
        Cmd::Bench { dataset, opts, json } => cmd_bench(dataset, opts, *json),
        Cmd::Sweep { dataset, caps, opts } => cmd_sweep(dataset, caps, opts),
        Cmd::Pool { pool, cmd } => cmd_pool(pool, cmd),
        Cmd::Scenario { cmd } => cmd_scenario(cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.downcast_ref::<Exit>().map_or(1, |x| x.code))
        }
    }
}
