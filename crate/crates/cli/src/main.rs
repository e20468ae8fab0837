use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use cft_core::ablation::AblationRow;
use cft_core::pipeline::{self, RunManifest, Stage};
use cft_core::{EvalReport, RunConfig};
use clap::{Args, Parser, Subcommand};

/// Compositional fine-tuning data pipeline and evaluation harness.
///
/// Everything that changes data content lives in the run config; flags only
/// pick files and verbosity. Stages whose inputs are unchanged are skipped.
#[derive(Parser, Debug)]
#[command(name = "cft", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Only errors.
    #[arg(short, long, global = true)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Run config (JSON).
    #[arg(short, long)]
    config: PathBuf,

    /// Run directory; defaults to `runs/<config file stem>`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> anyhow::Result<(RunConfig, PathBuf)> {
        let cfg = RunConfig::load(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        let out = match &self.out {
            Some(o) => o.clone(),
            None => {
                let stem = self.config.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
                PathBuf::from("runs").join(stem)
            }
        };
        Ok((cfg, out))
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the domain (ingest tables, load a domain file, or synthesize).
    Ingest(RunArgs),
    /// Split items into train and test.
    Split(RunArgs),
    /// Enumerate qualifying pairs within each split.
    Pairs(RunArgs),
    /// Render component-task corpora and count tokens.
    Generate(RunArgs),
    /// Assemble and export curricula.
    Curriculum(RunArgs),
    /// Submit fine-tuning jobs and wait for them (when enabled).
    Finetune(RunArgs),
    /// Score the test suites.
    Evaluate(RunArgs),
    /// Few-shot prompting baselines.
    Cot(RunArgs),
    /// Print the comparison table of an existing run.
    Report {
        /// Run directory.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Generate the configured ablation curricula and list them.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Continue through evaluation and print the table.
        #[arg(long)]
        evaluate: bool,
    },
    /// Every stage, then the table.
    Run(RunArgs),
}

fn init_logging(cli: &Cli) {
    let level = if cli.quiet {
        "error"
    } else {
        match cli.verbose {
            0 => "warn",
            1 => "info",
            _ => "debug",
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn run_stage(args: &RunArgs, stage: Stage) -> anyhow::Result<()> {
    let (cfg, out) = args.load()?;
    let summary = pipeline::run_until(&cfg, &out, stage)?;
    for rec in &summary.manifest.stages {
        let state = if summary.skipped.contains(&rec.name) { "up to date" } else { "done" };
        println!("{:<10} {state}", rec.name);
    }
    if stage >= Stage::Evaluate {
        println!();
        print!("{}", pipeline::render_table(&summary.reports));
    }
    println!("\nmanifest: {}", out.join("manifest.json").display());
    Ok(())
}

fn report(out: &Path) -> anyhow::Result<()> {
    let manifest_path = out.join("manifest.json");
    let manifest: RunManifest = cft_core::io::read_json(&manifest_path)?;
    let mut reports: Vec<EvalReport> = Vec::new();
    for rec in manifest.stages.iter().filter(|r| r.name == "evaluate" || r.name == "prompting") {
        let mut files: Vec<&String> = rec.outputs.keys().filter(|k| k.ends_with(".json") && !k.ends_with("exemplars.json")).collect();
        if rec.name == "evaluate" {
            // keep the configured row order rather than file-name order
            let rows: Vec<AblationRow> = cft_core::io::read_json(out.join("curricula").join("rows.json"))?;
            files.sort_by_key(|f| {
                rows.iter()
                    .position(|r| f.starts_with(&format!("reports/{}_", r.id.replace('/', "-"))))
                    .unwrap_or(usize::MAX)
            });
        }
        for f in files {
            reports.push(cft_core::io::read_json(out.join(f))?);
        }
    }
    if reports.is_empty() {
        bail!("{} has no evaluation reports yet", out.display());
    }
    print!("{}", pipeline::render_table(&reports));
    Ok(())
}

fn ablate(args: &RunArgs, evaluate: bool) -> anyhow::Result<()> {
    let (cfg, out) = args.load()?;
    if cfg.experiments.is_empty() {
        bail!("{} lists no experiments", args.config.display());
    }
    let summary = pipeline::run_until(&cfg, &out, if evaluate { Stage::Report } else { Stage::Curricula })?;
    let rows: Vec<AblationRow> = cft_core::io::read_json(out.join("curricula").join("rows.json"))?;
    for row in &rows {
        let (fs, fc, dt, neg) = row
            .config
            .as_ref()
            .map_or((false, false, false, false), |c| (c.include_fs, c.include_fc, c.include_dt, c.include_neg));
        let yn = |b: bool| if b { "Y" } else { "N" };
        println!("{:<20} FS {} FC {} DT {} NEG {}  {}", row.id, yn(fs), yn(fc), yn(dt), yn(neg), row.label());
    }
    if evaluate {
        println!();
        print!("{}", pipeline::render_table(&summary.reports));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli);
    let result = match &cli.command {
        Command::Ingest(a) => run_stage(a, Stage::Domain),
        Command::Split(a) => run_stage(a, Stage::Split),
        Command::Pairs(a) => run_stage(a, Stage::Pairs),
        Command::Generate(a) => run_stage(a, Stage::Generate),
        Command::Curriculum(a) => run_stage(a, Stage::Curricula),
        Command::Finetune(a) => run_stage(a, Stage::Finetune),
        Command::Evaluate(a) => run_stage(a, Stage::Evaluate),
        Command::Cot(a) => run_stage(a, Stage::Prompting),
        Command::Report { out } => report(out),
        Command::Ablate { run, evaluate } => ablate(run, *evaluate),
        Command::Run(a) => run_stage(a, Stage::Report),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if let Some(cft_core::Error::Stage { log, .. }) = e.downcast_ref::<cft_core::Error>() {
                if let Ok(text) = fs::read_to_string(log) {
                    eprintln!("--- {} ---\n{}", log.display(), text.trim_end());
                }
            }
            ExitCode::from(2)
        }
    }
}
