use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use btreflex::bench::{
    build_fault_corpus, inject_and_score, run_mission_loop, EvaluatorMode as BenchEvaluator,
    FaultInjection, InjectionReport, IterationTrace, MAX_ITERATIONS,
};
use btreflex::bt::parse_bt;
use btreflex::capture::{execute_mission, from_jsonl, to_jsonl};
use btreflex::experience::ExperienceBase;
use btreflex::llm::{Gateway, HttpProvider, MockScript};
use btreflex::refine::ReflectiveExperience;
use btreflex::sim::load_scene_seeded;
use btreflex::strategy::StrategySpace;

const EXIT_MISSION_FAILURE: i32 = 1;
const EXIT_CONFIG: i32 = 2;
const EXIT_RUNTIME: i32 = 3;

#[derive(Parser)]
#[command(name = "btreflex", about = "Self-refining drone mission planning over behavior trees")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one task through the plan → execute → evaluate → refine loop.
    Run(RunArgs),
    /// Run a task suite and write an SR report (optionally with failure injection).
    Suite(SuiteArgs),
    /// Convert a trajectory JSONL log to (t,x,y,z) CSV for external plotting.
    PlotData {
        log: PathBuf,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Experience base maintenance.
    Exp {
        #[command(subcommand)]
        cmd: ExpCmd,
    },
    /// Parse and validate a behavior tree XML file against the drone vocabulary.
    ValidateBt { file: PathBuf },
}

#[derive(Subcommand)]
enum ExpCmd {
    /// Append records from a JSONL file into an experience base.
    Import {
        #[arg(long)]
        dir: PathBuf,
        file: PathBuf,
    },
    /// Dump all records of an experience base to a JSONL file.
    Export {
        #[arg(long)]
        dir: PathBuf,
        file: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProviderArg {
    Mock,
    Http,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvaluatorArg {
    Oracle,
    Llm,
}

impl From<EvaluatorArg> for BenchEvaluator {
    fn from(e: EvaluatorArg) -> Self {
        match e {
            EvaluatorArg::Oracle => BenchEvaluator::Oracle,
            EvaluatorArg::Llm => BenchEvaluator::Llm,
        }
    }
}

#[derive(Parser)]
struct RunArgs {
    #[arg(long)]
    task: u32,
    #[arg(long, value_enum, default_value = "mock")]
    provider: ProviderArg,
    /// Mock transcript YAML (required with --provider mock).
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    max_iters: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "oracle")]
    evaluator: EvaluatorArg,
    /// Experience base directory (optional; refinement experiences persist here).
    #[arg(long)]
    exp_dir: Option<PathBuf>,
    #[arg(long, default_value = "https://api.openai.com/v1/chat/completions")]
    endpoint: String,
    #[arg(long, default_value = "gpt-4")]
    model: String,
}

#[derive(Parser)]
struct SuiteArgs {
    /// Comma-separated task ids, or "all".
    #[arg(long, default_value = "all")]
    tasks: String,
    #[arg(long, default_value_t = 10)]
    trials: u32,
    /// Directory holding one t<ID>.yaml mock transcript per task.
    #[arg(long)]
    transcript_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    max_iters: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    output: PathBuf,
    #[arg(long)]
    exp_dir: Option<PathBuf>,
    /// Failure-injection corpus JSON; adds a Det/Loc/Exp section to the report.
    #[arg(long)]
    inject: Option<PathBuf>,
    /// Parallel task workers (only without --exp-dir).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Suite(args) => cmd_suite(args),
        Cmd::PlotData { log, output } => cmd_plot_data(&log, output.as_deref()),
        Cmd::Exp { cmd } => cmd_exp(cmd),
        Cmd::ValidateBt { file } => cmd_validate_bt(&file),
    };
    match result {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {}", e.message());
            std::process::exit(e.code());
        }
    }
}

fn load_transcript(path: &Path) -> Result<MockScript, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config(format!("cannot read transcript {}: {e}", path.display())))?;
    serde_yaml::from_str(&text)
        .map_err(|e| config(format!("malformed transcript {}: {e}", path.display())))
}

fn build_gateway(
    provider: ProviderArg,
    transcript: Option<&Path>,
    endpoint: &str,
    model: &str,
) -> Result<Gateway, CliError> {
    match provider {
        ProviderArg::Mock => {
            let path = transcript
                .ok_or_else(|| config("--provider mock requires --transcript"))?;
            Ok(Gateway::mock(load_transcript(path)?))
        }
        ProviderArg::Http => {
            let p = HttpProvider::from_env(endpoint, model)
                .map_err(|e| config(e.to_string()))?;
            Ok(Gateway::new(Box::new(p)))
        }
    }
}

fn check_iters(max_iters: u32) -> Result<(), CliError> {
    if max_iters == 0 || max_iters > MAX_ITERATIONS {
        return Err(config(format!("--max-iters must be in 1..=5, got {max_iters}")));
    }
    Ok(())
}

fn write_artifact(dir: &Path, name: &str, content: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
    std::fs::write(dir.join(name), content)
        .map_err(|e| runtime(format!("cannot write {name}: {e}")))
}

fn cmd_run(args: RunArgs) -> Result<i32, CliError> {
    check_iters(args.max_iters)?;
    let scene = load_scene_seeded(args.task, args.seed)
        .map_err(|e| config(format!("cannot load task {}: {e}", args.task)))?;
    let mut gateway = build_gateway(
        args.provider,
        args.transcript.as_deref(),
        &args.endpoint,
        &args.model,
    )?;
    let mut exp_base = match &args.exp_dir {
        Some(dir) => Some(ExperienceBase::open(dir).map_err(|e| runtime(e.to_string()))?),
        None => None,
    };

    let space = StrategySpace::drone_default();
    let (success, traces) = run_mission_loop(
        &scene,
        &space,
        &mut gateway,
        exp_base.as_mut(),
        args.max_iters,
        args.evaluator.into(),
    )
    .map_err(|e| runtime(e.to_string()))?;

    write_run_artifacts(&args.output, &scene, &space, &traces)?;
    println!(
        "task {}: {} after {} iteration(s); artifacts in {}",
        args.task,
        if success { "Success" } else { "Failure" },
        traces.len(),
        args.output.display()
    );
    Ok(if success { 0 } else { EXIT_MISSION_FAILURE })
}

fn write_run_artifacts(
    out: &Path,
    scene: &btreflex::sim::Scene,
    space: &StrategySpace,
    traces: &[IterationTrace],
) -> Result<(), CliError> {
    let verdicts: Vec<_> = traces.iter().map(|t| &t.verdict).collect();
    write_artifact(
        out,
        "verdicts.json",
        &serde_json::to_string_pretty(&verdicts).expect("verdicts serialize"),
    )?;
    write_artifact(
        out,
        "traces.json",
        &serde_json::to_string_pretty(traces).expect("traces serialize"),
    )?;
    // Re-execute the final tree to materialize the trajectory and narrative;
    // the sim is deterministic so this matches the last iteration exactly.
    let last = match traces.last() {
        Some(t) if !t.tree_xml.is_empty() => t,
        _ => return Ok(()),
    };
    let tree = parse_bt(&last.tree_xml, space).map_err(|e| runtime(e.to_string()))?;
    let run = execute_mission(&tree, scene, space, 2000).map_err(|e| runtime(e.to_string()))?;
    write_artifact(out, "trajectory.jsonl", &to_jsonl(&run.sequence))?;
    if run.sequence.len() >= 2 {
        let traj = btreflex::cmsr::cmsr(&run.sequence, Some(&scene.world))
            .map_err(|e| runtime(e.to_string()))?;
        write_artifact(out, "narrative.txt", &(traj.lines.join("\n") + "\n"))?;
    }
    write_artifact(out, "final_tree.xml", &last.tree_xml)
}

fn parse_task_list(tasks: &str) -> Result<Vec<u32>, CliError> {
    if tasks.trim().is_empty() {
        return Err(config("empty task selection"));
    }
    if tasks.trim() == "all" {
        return Ok(btreflex::bench::ALL_TASKS.to_vec());
    }
    tasks
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u32>()
                .map_err(|_| config(format!("bad task id {s:?}")))
        })
        .collect()
}

fn cmd_suite(args: SuiteArgs) -> Result<i32, CliError> {
    check_iters(args.max_iters)?;
    let task_ids = parse_task_list(&args.tasks)?;
    for &t in &task_ids {
        load_scene_seeded(t, args.seed).map_err(|e| config(format!("task {t}: {e}")))?;
    }
    let dir = args
        .transcript_dir
        .as_deref()
        .ok_or_else(|| config("suite requires --transcript-dir"))?;
    let mut transcripts = BTreeMap::new();
    for &t in &task_ids {
        transcripts.insert(t, load_transcript(&dir.join(format!("t{t}.yaml")))?);
    }

    let mut exp_base = match &args.exp_dir {
        Some(dir) => Some(ExperienceBase::open(dir).map_err(|e| runtime(e.to_string()))?),
        None => None,
    };
    let mut result = if args.jobs > 1 && exp_base.is_none() {
        run_suite_parallel(&task_ids, args.trials, &transcripts, args.seed, args.max_iters, args.jobs)?
    } else {
        btreflex::bench::run_suite(
            &task_ids,
            args.trials,
            &transcripts,
            exp_base.as_mut(),
            args.seed,
            args.max_iters,
        )
        .map_err(|e| runtime(e.to_string()))?
    };

    if let Some(corpus_path) = &args.inject {
        // "builtin" sidesteps the checked-in fixture and uses the generator.
        let corpus: Vec<FaultInjection> = if corpus_path.as_os_str() == "builtin" {
            build_fault_corpus()
        } else {
            let text = std::fs::read_to_string(corpus_path)
                .map_err(|e| config(format!("cannot read corpus: {e}")))?;
            serde_json::from_str(&text).map_err(|e| config(format!("malformed corpus: {e}")))?
        };
        let oracle = inject_and_score(&corpus, BenchEvaluator::Oracle)
            .map_err(|e| runtime(e.to_string()))?;
        let final_state = inject_and_score(&corpus, BenchEvaluator::FinalState)
            .map_err(|e| runtime(e.to_string()))?;
        result.report.injection = Some(InjectionReport { cases: corpus.len(), oracle, final_state });
    }

    write_artifact(&args.output, "report.json", &result.report.to_json())?;
    write_artifact(&args.output, "report.md", &result.report.to_markdown())?;
    write_artifact(
        &args.output,
        "missions.json",
        &serde_json::to_string_pretty(&result.missions).expect("missions serialize"),
    )?;
    print!("{}", result.report.to_markdown());
    Ok(0)
}

fn run_suite_parallel(
    task_ids: &[u32],
    trials: u32,
    transcripts: &BTreeMap<u32, MockScript>,
    seed: u64,
    max_iters: u32,
    jobs: usize,
) -> Result<btreflex::bench::SuiteResult, CliError> {
    let chunks: Vec<Vec<u32>> = task_ids
        .chunks(task_ids.len().div_ceil(jobs))
        .map(|c| c.to_vec())
        .collect();
    let partials: Vec<btreflex::bench::SuiteResult> = std::thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .iter()
            .map(|chunk| {
                scope.spawn(move || {
                    btreflex::bench::run_suite(chunk, trials, transcripts, None, seed, max_iters)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("suite worker panicked"))
            .collect::<Vec<_>>()
    })
    .into_iter()
    .collect::<Result<_, _>>()
    .map_err(|e| runtime(e.to_string()))?;

    // Reduce: the per-mission traces carry everything; rebuild the report.
    let mut missions = Vec::new();
    let mut per_task = Vec::new();
    let mut per_iter = vec![0u32; MAX_ITERATIONS as usize];
    let mut cats: BTreeMap<String, (u32, u32)> = BTreeMap::new();
    for p in partials {
        for row in &p.report.per_task {
            let c = cats.entry(row.category.clone()).or_insert((0, 0));
            c.0 += row.trials;
            c.1 += row.successes;
        }
        for (i, n) in p.report.n_success_per_iteration.iter().enumerate() {
            per_iter[i] += n;
        }
        per_task.extend(p.report.per_task);
        missions.extend(p.missions);
    }
    per_task.sort_by_key(|r| r.task_id);
    missions.sort_by_key(|m| (m.task_id, m.trial));
    let n_total = task_ids.len() as u32 * trials;
    Ok(btreflex::bench::SuiteResult {
        report: btreflex::bench::MetricsReport {
            n_total,
            sr: btreflex::bench::compute_sr(&per_iter, n_total),
            n_success_per_iteration: per_iter,
            per_task,
            per_category: cats
                .into_iter()
                .map(|(category, (t, s))| btreflex::bench::CategoryRow {
                    category,
                    trials: t,
                    successes: s,
                    sr: s as f64 / t as f64,
                })
                .collect(),
            injection: None,
        },
        missions,
    })
}

fn cmd_plot_data(log: &Path, output: Option<&Path>) -> Result<i32, CliError> {
    let text = std::fs::read_to_string(log)
        .map_err(|e| runtime(format!("cannot read {}: {e}", log.display())))?;
    let seq = from_jsonl(&text).map_err(|e| runtime(format!("malformed log: {e}")))?;
    let mut csv = String::from("t,x,y,z\n");
    for step in &seq.items {
        let s = &step.data.state;
        csv.push_str(&format!(
            "{:.1},{},{},{}\n",
            s.timestamp as f64 / 10.0,
            s.pose.x,
            s.pose.y,
            s.pose.z
        ));
    }
    match output {
        Some(path) => std::fs::write(path, csv)
            .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{csv}"),
    }
    Ok(0)
}

fn cmd_exp(cmd: ExpCmd) -> Result<i32, CliError> {
    match cmd {
        ExpCmd::Import { dir, file } => {
            let text = std::fs::read_to_string(&file)
                .map_err(|e| config(format!("cannot read {}: {e}", file.display())))?;
            let mut records = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: ReflectiveExperience = serde_json::from_str(line)
                    .map_err(|e| config(format!("line {}: {e}", i + 1)))?;
                records.push(rec);
            }
            let mut base = ExperienceBase::open(&dir).map_err(|e| runtime(e.to_string()))?;
            base.append(&records).map_err(|e| runtime(e.to_string()))?;
            println!("imported {} record(s); base now holds {}", records.len(), base.len());
            Ok(0)
        }
        ExpCmd::Export { dir, file } => {
            let base = ExperienceBase::open(&dir).map_err(|e| runtime(e.to_string()))?;
            let mut out = String::new();
            for rec in base.records() {
                out.push_str(&serde_json::to_string(rec).expect("record serializes"));
                out.push('\n');
            }
            std::fs::write(&file, out)
                .map_err(|e| runtime(format!("cannot write {}: {e}", file.display())))?;
            println!("exported {} record(s)", base.len());
            Ok(0)
        }
    }
}

fn cmd_validate_bt(file: &Path) -> Result<i32, CliError> {
    let text = std::fs::read_to_string(file)
        .map_err(|e| runtime(format!("cannot read {}: {e}", file.display())))?;
    match parse_bt(&text, &StrategySpace::drone_default()) {
        Ok(tree) => {
            println!("valid: {} node(s), digest {}", tree.nodes.len(), tree.source_digest);
            Ok(0)
        }
        Err(e) => {
            eprintln!("invalid: {e}");
            Ok(EXIT_MISSION_FAILURE)
        }
    }
}
