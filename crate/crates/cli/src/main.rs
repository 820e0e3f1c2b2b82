use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use curate_cli::config::{self, Stage};
use curate_cli::report::{load_stage_reports, render_extras, render_funnel};
use curate_cli::stages::{self, PipelineFailure, RunContext};
use curate_cli::synth;

/// Corpus curation pipeline for audio-text training data.
#[derive(Parser)]
#[command(name = "curate", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Pipeline configuration file.
    #[arg(long, default_value = "curate.toml")]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run every enabled stage in order.
    Run {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Skip stages already recorded as completed in resume.json.
        #[arg(long)]
        resume: bool,
    },
    /// Read and validate the input manifest.
    Ingest(ConfigArg),
    /// Plan segmentation windows for each record.
    Segment(ConfigArg),
    /// Classify records into speech / music / sfx.
    Classify(ConfigArg),
    /// Apply the caption filtering rules.
    Filter(ConfigArg),
    /// Score captions with the judge and attach quality dimensions.
    Score(ConfigArg),
    /// Fuse quality dimensions into per-category percentile scores.
    Fuse(ConfigArg),
    /// Quality-weighted stochastic downsampling per category.
    Resample(ConfigArg),
    /// Remove near-duplicate captions.
    Dedup(ConfigArg),
    /// Plan the token budget across tracks and categories.
    Plan(ConfigArg),
    /// Pack planned sequences into fixed-capacity training rows.
    Pack(ConfigArg),
    /// Print the stage funnel from the reports of a finished run.
    Report(ConfigArg),
    /// Synthesize instruction samples from curated records and judge them.
    SftSim {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Manifest to draw records from; defaults to the dedup output.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Round-trip records through both loop directions and report
    /// embedding similarity.
    CycleEval {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Manifest to draw records from; defaults to the dedup output.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Sample tokens from a toy model under the configured decode settings.
    DecodeDemo(ConfigArg),
    /// Round-trip a random token grid through the flat layout and byte format.
    Layout {
        #[arg(long)]
        frames: usize,
        #[arg(long, default_value_t = 8)]
        codebooks: usize,
        #[arg(long, default_value_t = 0)]
        pad_id: u32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Write the encoded bytes here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic input manifest for exercising the pipeline.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

fn context(cfg: &ConfigArg) -> Result<RunContext, config::ConfigError> {
    let loaded = config::load(&cfg.config)?;
    RunContext::new(loaded)
}

fn fail(e: PipelineFailure) -> ExitCode {
    eprintln!("{e}");
    match e {
        PipelineFailure::Config(_) => ExitCode::from(EXIT_CONFIG),
        PipelineFailure::Stage(_) => ExitCode::from(EXIT_STAGE),
    }
}

fn run_stage(cfg: &ConfigArg, stage: Stage) -> ExitCode {
    let ctx = match context(cfg) {
        Ok(ctx) => ctx,
        Err(e) => return fail(e.into()),
    };
    match stages::run_single(&ctx, stage) {
        Ok(report) => {
            println!(
                "{}: {} in, {} out, {} rejected",
                report.stage, report.input_count, report.output_count, report.rejected_count
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { cfg, resume } => {
            let ctx = match context(&cfg) {
                Ok(ctx) => ctx,
                Err(e) => return fail(e.into()),
            };
            match stages::run_pipeline(&ctx, resume) {
                Ok(reports) => {
                    for report in &reports {
                        println!(
                            "{}: {} in, {} out, {} rejected",
                            report.stage,
                            report.input_count,
                            report.output_count,
                            report.rejected_count
                        );
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Ingest(cfg) => run_stage(&cfg, Stage::Ingest),
        Command::Segment(cfg) => run_stage(&cfg, Stage::Segment),
        Command::Classify(cfg) => run_stage(&cfg, Stage::Classify),
        Command::Filter(cfg) => run_stage(&cfg, Stage::Filter),
        Command::Score(cfg) => run_stage(&cfg, Stage::Score),
        Command::Fuse(cfg) => run_stage(&cfg, Stage::Fuse),
        Command::Resample(cfg) => run_stage(&cfg, Stage::Resample),
        Command::Dedup(cfg) => run_stage(&cfg, Stage::Dedup),
        Command::Plan(cfg) => run_stage(&cfg, Stage::Plan),
        Command::Pack(cfg) => run_stage(&cfg, Stage::Pack),
        Command::Report(cfg) => {
            let loaded = match config::load(&cfg.config) {
                Ok(l) => l,
                Err(e) => return fail(e.into()),
            };
            let reports = load_stage_reports(&loaded.run_root());
            if reports.is_empty() {
                eprintln!(
                    "no stage reports under {}; run the pipeline first",
                    loaded.run_root().display()
                );
                return ExitCode::from(EXIT_STAGE);
            }
            print!("{}", render_funnel(&reports));
            print!("{}", render_extras(&reports));
            ExitCode::SUCCESS
        }
        Command::SftSim { cfg, input } => {
            let ctx = match context(&cfg) {
                Ok(ctx) => ctx,
                Err(e) => return fail(e.into()),
            };
            match stages::run_sft_sim(&ctx, input) {
                Ok(summary) => {
                    print!("{summary}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e.into()),
            }
        }
        Command::CycleEval { cfg, input } => {
            let ctx = match context(&cfg) {
                Ok(ctx) => ctx,
                Err(e) => return fail(e.into()),
            };
            match stages::run_cycle_eval(&ctx, input) {
                Ok(table) => {
                    print!("{table}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e.into()),
            }
        }
        Command::DecodeDemo(cfg) => {
            let ctx = match context(&cfg) {
                Ok(ctx) => ctx,
                Err(e) => return fail(e.into()),
            };
            match stages::run_decode_demo(&ctx) {
                Ok(line) => {
                    print!("{line}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e.into()),
            }
        }
        Command::Layout {
            frames,
            codebooks,
            pad_id,
            seed,
            out,
        } => match stages::run_layout(frames, codebooks, pad_id, seed, out) {
            Ok(line) => {
                print!("{line}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(e.into()),
        },
        Command::Synth { out, count, seed } => {
            match synth::write_corpus(&out, &synth::SynthConfig { count, seed }) {
                Ok(n) => {
                    println!("wrote {n} records to {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("synth: {e}");
                    ExitCode::from(EXIT_STAGE)
                }
            }
        }
    }
}
