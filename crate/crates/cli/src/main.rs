use std::path::PathBuf;
use std::process::ExitCode;

use acvis::checkpoint::Checkpoint;
use acvis::config::{parse_count_loss, Overrides, RunConfig};
use acvis::corpus::{read_corpus, write_corpus, Split};
use acvis::error::{one_line, write, CliError, Result};
use acvis::eval::evaluate_files;
use acvis::experiment::{run_variant, Variant, RESULTS_HEADER};
use acvis::format::TrackFile;
use acvis::gradcheck::{negative_control, run_suite, suite};
use acvis::infer::predict_all;
use acvis::train::train_to_dir;
use acvis_core::model::CountLoss;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "acvis", version, about = "Audio-centric audiovisual instance segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct ModelFlags {
    /// Run config (JSON); defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Weight of the counting term.
    #[arg(long)]
    lambda_saoc: Option<f64>,
    /// Use additive audio fusion instead of audio-centric queries.
    #[arg(long)]
    no_acqg: bool,
    #[arg(long, value_parser = parse_count_loss)]
    count_loss: Option<CountLoss>,
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
}

impl ModelFlags {
    fn load(&self, data: Option<PathBuf>, out: Option<PathBuf>) -> Result<RunConfig> {
        let mut cfg = RunConfig::load_or_default(self.config.as_deref())?;
        cfg.apply(&Overrides {
            seed: self.seed,
            threshold: self.threshold,
            lambda_count: self.lambda_saoc,
            additive_fusion: self.no_acqg,
            count_loss: self.count_loss,
            k_max: self.kmax,
            steps: self.steps,
            data_dir: data,
            out_dir: out,
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Corpus seed (defaults to the config's training seed).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model; writes checkpoint.json and train_log.csv.
    Train {
        #[command(flatten)]
        flags: ModelFlags,
        /// Corpus directory.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict tracks for one split of a corpus.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: Split,
        /// Defaults to the threshold stored in the checkpoint's config.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions; writes metrics.json, metrics.csv and per_alpha.csv.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth track file, or a corpus directory (then `--split` picks the file).
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients with finite differences.
    GradCheck {
        /// Accepted for symmetry with the other commands; the suite uses fixed shapes.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Also run a deliberately broken operation, which must fail.
        #[arg(long)]
        negative_control: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score model variants over several seeds; writes a CSV row per run.
    Ablate {
        #[command(flatten)]
        flags: ModelFlags,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "full,no-saoc,no-acqg,baseline,count-ce")]
        variants: Vec<Variant>,
        #[arg(long, default_value_t = 3)]
        runs: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn require(dir: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    dir.ok_or_else(|| CliError::Config(format!("no {what} given (flag or config key)")))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, seed, out } => {
            let cfg = RunConfig::load_or_default(config.as_deref())?;
            let out = require(out.or(cfg.data_dir.clone()), "output directory")?;
            let corpus = acvis_core::synth::generate(&cfg.corpus, seed.unwrap_or(cfg.train.seed)).map_err(|e| CliError::Config(e.to_string()))?;
            let m = write_corpus(&corpus, &out)?;
            println!("wrote {} train and {} val videos to {}", m.train.len(), m.val.len(), out.display());
        }
        Command::Train { flags, data, out } => {
            let cfg = flags.load(data, out)?;
            let data = read_corpus(&require(cfg.data_dir.clone(), "corpus directory")?)?;
            let out = require(cfg.out_dir.clone(), "output directory")?;
            let t = train_to_dir(&cfg, &data, &out)?;
            if let Some(last) = t.log.last() {
                println!("step {} total {}", last.step, last.losses.total);
            }
            println!("wrote {}", out.join("checkpoint.json").display());
        }
        Command::Infer {
            checkpoint,
            data,
            split,
            threshold,
            out,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let model = ck.model(&checkpoint)?;
            let threshold = threshold.unwrap_or(ck.config.threshold);
            if !(0.0..=1.0).contains(&threshold) {
                return Err(CliError::Config(format!("threshold {threshold} is outside [0, 1]")));
            }
            let data = read_corpus(&data)?;
            ck.config.validate_corpus_fit(&data.config)?;
            let preds = predict_all(&model, data.split(split), threshold)?;
            preds.write(&out)?;
            println!("wrote {} videos to {}", preds.videos.len(), out.display());
        }
        Command::Eval { pred, gt, split, out } => {
            let gt = if gt.is_dir() { gt.join(split.gt_file()) } else { gt };
            let truth = TrackFile::read(&gt)?;
            let preds = TrackFile::read(&pred)?;
            let report = evaluate_files(&truth, &gt, &preds, &pred)?;
            report.write(&out)?;
            print!("{}", report.summary_csv());
        }
        Command::GradCheck {
            config,
            seed,
            seeds,
            negative_control: neg,
            out,
        } => {
            if let Some(p) = config {
                RunConfig::load(&p)?;
            }
            let mut checks = suite();
            if neg {
                checks.push(negative_control());
            }
            let report = run_suite(&checks, seed, seeds)?;
            for c in &report.checks {
                println!(
                    "{} {} max_rel_error={:e} tol={:e} seeds={}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.max_rel_error,
                    c.tolerance,
                    c.seeds
                );
            }
            if let Some(out) = out {
                let text = serde_json::to_string_pretty(&report).expect("report serializes");
                write(&out, text.as_bytes())?;
            }
            if !report.passed {
                let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
                return Err(CliError::GradCheck(format!("failed checks: {}", failed.join(", "))));
            }
        }
        Command::Ablate {
            flags,
            data,
            variants,
            runs,
            out,
        } => {
            let cfg = flags.load(data, None)?;
            let data = read_corpus(&require(cfg.data_dir.clone(), "corpus directory")?)?;
            let mut csv = format!("{RESULTS_HEADER}\n");
            for v in variants {
                for k in 0..runs {
                    let r = run_variant(&cfg, &data, v, cfg.train.seed + k)?;
                    let line = r.csv();
                    println!("{line}");
                    csv.push_str(&line);
                    csv.push('\n');
                }
            }
            write(&out, csv.as_bytes())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) => e.exit(),
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("E_USAGE: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}
