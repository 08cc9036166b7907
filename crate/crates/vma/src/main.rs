use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use vma::config::{OrganizerKind, RunConfig};
use vma::dataset::load_dataset;
use vma::runner::{build_backend, outcomes_path, read_outcomes, run_benchmark, BackendMode, Engine};
use vma::tracefile::read_trace;
use vma_core::scoring::{compare_runs, display_percent, score, Aggregate};
use vma_core::topology::{audit_trace, TopologyKind};
use vma_core::types::option_letter;

#[derive(Parser)]
#[command(name = "vma", version, about = "Multi-agent video question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Live,
    Record,
    Replay,
}

impl From<Mode> for BackendMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Live => BackendMode::Live,
            Mode::Record => BackendMode::Record,
            Mode::Replay => BackendMode::Replay,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Organizer {
    Model,
    Majority,
    BestCategory,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "live")]
    mode: Mode,
    /// Overrides the configured topology (report, star, debate, report_star).
    #[arg(long)]
    topology: Option<TopologyKind>,
    #[arg(long, value_enum)]
    organizer: Option<Organizer>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cassette: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut config = RunConfig::load(&self.config)?;
        if let Some(t) = self.topology {
            config.topology = t;
        }
        if let Some(o) = self.organizer {
            config.organizer = match o {
                Organizer::Model => OrganizerKind::Model,
                Organizer::Majority => OrganizerKind::Majority,
                Organizer::BestCategory => OrganizerKind::BestCategory,
            };
        }
        if let Some(dir) = &self.output_dir {
            config.output_dir = dir.clone();
        }
        if let Some(w) = self.workers {
            config.workers = w;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(c) = &self.cassette {
            config.backend.cassette = Some(c.clone());
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every question of the configured dataset.
    Run(RunArgs),
    /// Run a single question and print its verdict.
    Ask {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        question_id: String,
    },
    /// Check trace files (or directories of them) for protocol violations.
    Audit {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Print accuracies from a run directory or outcomes file.
    Score { path: PathBuf },
    /// Compare two runs over the same questions.
    Diff { a: PathBuf, b: PathBuf },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run(args) => {
            let config = args.load()?;
            let result = run_benchmark(&config, args.mode.into())?;
            println!(
                "{} questions, {} errors, results in {}",
                result.questions,
                result.errors,
                config.output_dir.display()
            );
            if let Some(agg) = &result.aggregate {
                print_aggregate(agg);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Ask { run, question_id } => {
            let config = run.load()?;
            let questions = load_dataset(&config.dataset)?;
            let question = questions
                .iter()
                .find(|q| q.id == question_id)
                .with_context(|| format!("no question {question_id} in {}", config.dataset.display()))?;
            let backend = build_backend(&config, run.mode.into(), &questions)?;
            let engine = Engine::new(config, backend)?;
            let trace = engine.run_question(question).map_err(anyhow::Error::msg)?;
            for r in &trace.verdict.reports {
                println!("{}: {}", r.modality, option_letter(r.chosen));
            }
            println!(
                "verdict: {} ({})\n{}",
                option_letter(trace.verdict.final_option),
                trace.verdict.policy_id,
                trace.verdict.justification
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Audit { paths } => audit(&paths),
        Command::Score { path } => {
            let outcomes = read_outcomes(&outcomes_path(&path))?;
            print_aggregate(&score(&outcomes)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Diff { a, b } => {
            let a = read_outcomes(&outcomes_path(&a))?;
            let b = read_outcomes(&outcomes_path(&b))?;
            let diff = compare_runs(&a, &b)?;
            let letter = |v: Option<usize>| v.map_or("-".to_string(), |i| option_letter(i).to_string());
            for f in &diff.flips {
                println!(
                    "{} [{}] {} -> {}{}",
                    f.question_id,
                    f.category,
                    letter(f.a),
                    letter(f.b),
                    match (f.a_correct, f.b_correct) {
                        (false, true) => "  fixed",
                        (true, false) => "  broken",
                        _ => "",
                    }
                );
            }
            for (c, d) in &diff.category_deltas {
                println!("{c}: {d:+.1}");
            }
            let m = diff.mcnemar;
            println!(
                "overall: {:+.1}  (both right {}, both wrong {}, a only {}, b only {})",
                diff.overall_delta, m.both_right, m.both_wrong, m.a_only, m.b_only
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn trace_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        bail!("no trace files found");
    }
    Ok(files)
}

fn audit(paths: &[PathBuf]) -> Result<ExitCode> {
    let mut bad = 0;
    let files = trace_files(paths)?;
    for file in &files {
        let (_, trace) = read_trace(file).with_context(|| format!("reading {}", file.display()))?;
        let violations = audit_trace(&trace);
        for v in &violations {
            println!("{}: {v}", display(file));
        }
        bad += usize::from(!violations.is_empty());
    }
    println!("{} traces, {bad} with violations", files.len());
    Ok(if bad == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn print_aggregate(agg: &Aggregate) {
    for (c, t) in &agg.per_category {
        println!("{c}: {}% ({}/{})", display_percent(t.accuracy()), t.correct, t.answered);
    }
    println!(
        "overall: {}% ({}/{}), {} errors",
        display_percent(agg.overall_accuracy),
        agg.overall.correct,
        agg.overall.answered,
        agg.errors
    );
}
