use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use mrc_distill::corpus::SynthSpec;
use mrc_distill::pipeline::{
    gradient_suite, render_report, step_annotate, step_bench, step_eval, step_gen, step_train_student,
    step_train_teacher, TrainConfig,
};
use mrc_distill::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "mrcd", version, about = "Train reader ensembles and distill them into a single student")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base random seed; overrides the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for checkpoints, reports, and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Configuration override `key=value`; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus in SQuAD JSON format.
    Gen {
        /// Output file; defaults to `<out-dir>/synth.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        passages: usize,
        #[arg(long, default_value_t = 3)]
        entities: usize,
        #[arg(long, default_value_t = 4)]
        attributes: usize,
        #[arg(long, default_value_t = 1.0)]
        distractor_rate: f64,
        /// Append a distractor sentence to every passage.
        #[arg(long)]
        adversarial: bool,
    },
    /// Train the teacher ensemble.
    TrainTeacher {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
    },
    /// Annotate a corpus with ensemble soft targets, attention, and confusing spans.
    Annotate {
        #[arg(long)]
        train: PathBuf,
        /// Augmentation corpus; gold answers optional.
        #[arg(long)]
        extra: Option<PathBuf>,
        /// Teacher checkpoint; repeat once per member.
        #[arg(long = "teacher", required = true)]
        teachers: Vec<PathBuf>,
        /// Output file; defaults to `<out-dir>/distilled.jsonl`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the student on the distilled dataset.
    TrainStudent {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        extra: Option<PathBuf>,
        #[arg(long)]
        distilled: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and write predictions and reports.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Time student inference against the ensemble.
    Bench {
        #[arg(long)]
        student: PathBuf,
        #[arg(long = "teacher", required = true)]
        teachers: Vec<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
    },
    /// Check every loss gradient against finite differences on a toy instance.
    Gradcheck {
        #[arg(long = "tau", value_delimiter = ',', default_values_t = [1.0, 2.0, 3.0, 5.0])]
        taus: Vec<f64>,
    },
}

fn load_config(g: &Global) -> Result<TrainConfig> {
    let mut cfg = match &g.config {
        Some(path) => TrainConfig::from_file(path)?,
        None => TrainConfig::default(),
    };
    cfg.apply_overrides(&g.overrides)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn default_path(explicit: &Option<PathBuf>, out_dir: &Path, name: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| out_dir.join(name))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let out_dir = &cli.global.out_dir;
    match cli.command {
        Command::Gen {
            out,
            passages,
            entities,
            attributes,
            distractor_rate,
            adversarial,
        } => {
            let spec = SynthSpec {
                seed: cfg.seed,
                num_passages: passages,
                entities_per_passage: entities,
                attribute_types: attributes,
                distractor_rate,
                adversarial,
            };
            let path = default_path(&out, out_dir, "synth.json");
            let n = step_gen(&spec, &path)?;
            println!("wrote {n} examples to {}", path.display());
        }
        Command::TrainTeacher { train, dev } => {
            let paths = step_train_teacher(&cfg, &train, dev.as_deref(), out_dir)?;
            for p in paths {
                println!("{}", p.display());
            }
        }
        Command::Annotate {
            train,
            extra,
            teachers,
            out,
        } => {
            let path = default_path(&out, out_dir, "distilled.jsonl");
            let s = step_annotate(&cfg, &train, extra.as_deref(), &teachers, &path)?;
            println!("wrote {} records to {} ({} dropped)", s.records, path.display(), s.dropped);
        }
        Command::TrainStudent {
            train,
            extra,
            distilled,
            dev,
        } => {
            let path = step_train_student(&cfg, &train, extra.as_deref(), &distilled, dev.as_deref(), out_dir)?;
            println!("{}", path.display());
        }
        Command::Eval { checkpoint, corpus } => {
            let report = step_eval(&checkpoint, &corpus, out_dir, cfg.distill.max_span_len)?;
            print!("{}", render_report(&report));
        }
        Command::Bench {
            student,
            teachers,
            corpus,
            repetitions,
        } => {
            let r = step_bench(&student, &teachers, &corpus, repetitions, cfg.distill.max_span_len)?;
            println!("members          {}", r.members);
            println!("examples         {}", r.examples);
            println!("student median   {:.4}s", r.student_median);
            println!("ensemble median  {:.4}s", r.ensemble_median);
            println!("ratio            {:.2}", r.ratio);
            println!("student params   {}", r.student_params);
            println!("ensemble params  {}", r.ensemble_params);
        }
        Command::Gradcheck { taus } => {
            let entries = gradient_suite(cfg.seed, &taus)?;
            let mut failed = Vec::new();
            for e in &entries {
                let ok = e.report.passed();
                println!(
                    "{:<14} {} max rel error {:.3e}",
                    e.name,
                    if ok { "ok  " } else { "FAIL" },
                    e.report.max_rel_error()
                );
                if !ok {
                    failed.push(e.name.clone());
                }
            }
            if !failed.is_empty() {
                return Err(Error::Internal(format!("gradient check failed for {}", failed.join(", "))));
            }
        }
    }
    info!("done");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
