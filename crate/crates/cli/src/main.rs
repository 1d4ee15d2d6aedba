//! `mlclean` command-line front end.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mlclean_core::config::Config;
use mlclean_core::dataset::{load_dataset, save_dataset, Dataset};
use mlclean_core::harness::{self, BenchSetup, GroundTruth};
use mlclean_core::model::{evaluate, train, LinearModel, MetricsReport};
use mlclean_core::pipeline::{run_pipeline, PipelineMode};
use mlclean_core::resolve::resolve;
use mlclean_core::reweigh::{reweigh, ReweighMode, ReweighStrategy};
use mlclean_core::sanitize::sanitize;
use mlclean_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "mlclean",
    version,
    about = "Sanitize, clean and reweigh tabular training data"
)]
struct Cli {
    /// Configuration file with a [schema] section and optional stage settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory that receives all outputs.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Append Zipf-distributed duplicate copies.
    InjectDups {
        input: PathBuf,
        #[arg(long, default_value = "duplicated.csv")]
        output: String,
    },
    /// Append out-of-range records with flipped labels.
    InjectPoison {
        input: PathBuf,
        #[arg(long, default_value = "poisoned.csv")]
        output: String,
    },
    /// Remove records flagged by k-means outlier detection.
    Sanitize {
        input: PathBuf,
        #[arg(long, default_value = "sanitized.csv")]
        output: String,
    },
    /// Merge duplicate records by entity resolution.
    Clean {
        input: PathBuf,
        #[arg(long, default_value = "cleaned.csv")]
        output: String,
    },
    /// Adjust weights so both groups have the same positive ratio.
    Reweigh {
        input: PathBuf,
        #[arg(long, default_value = "reweighed.csv")]
        output: String,
        /// UPWEIGHT_POSITIVES or DOWNWEIGHT_NEGATIVES.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Fit the weighted logistic regression model.
    Train {
        input: PathBuf,
        #[arg(long, default_value = "model.txt")]
        output: String,
    },
    /// Accuracy and parity ratio of a saved model on a dataset.
    Evaluate {
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Split, preprocess the training side, train and evaluate.
    Pipeline {
        input: PathBuf,
        /// None, MLClean, or a stage order such as S,C,M.
        #[arg(long)]
        mode: Option<String>,
        /// Sanitize the held-out split as well.
        #[arg(long)]
        sanitize_test: bool,
    },
    /// Compare preprocessing orders on identical injected data.
    Bench {
        input: PathBuf,
        /// Methods separated by `;`, e.g. "None;S;S,C,M;MLClean".
        #[arg(long)]
        methods: Option<String>,
    },
    /// Accuracy change from removing the listed ids from training.
    Impact {
        input: PathBuf,
        /// File with one id per line.
        #[arg(long)]
        ids: PathBuf,
    },
}

struct Context {
    config: Config,
    out_dir: PathBuf,
}

impl Context {
    fn load(&self, path: &Path) -> Result<Dataset> {
        load_dataset(path, self.config.require_schema()?)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn writer(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    fn save(&self, d: &Dataset, name: &str) -> Result<()> {
        save_dataset(d, self.path(name))
    }
}

fn file_stem(name: &str) -> &str {
    Path::new(name)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(name)
}

fn write_truth<W: Write>(truth: &GroundTruth, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["kind", "id", "original"])?;
    for (orig, copies) in &truth.duplicates {
        for c in copies {
            w.write_record(["duplicate", c.as_str(), orig.as_str()])?;
        }
    }
    for p in &truth.poison {
        w.write_record(["poison", p.as_str(), ""])?;
    }
    w.flush()?;
    Ok(())
}

fn write_metrics<W: Write>(m: &MetricsReport, d: &Dataset, writer: W) -> Result<()> {
    let schema = d.schema();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "accuracy",
        "parity_ratio",
        "rate_a",
        "rate_b",
        "count_a",
        "count_b",
    ])?;
    w.write_record([
        m.accuracy.to_string(),
        m.parity_ratio
            .map(|r| r.to_string())
            .unwrap_or_else(|| "UNDEFINED".into()),
        m.positive_rates[0].to_string(),
        m.positive_rates[1].to_string(),
        m.counts[0].to_string(),
        m.counts[1].to_string(),
    ])?;
    w.flush()?;
    println!(
        "accuracy {:.4}  parity_ratio({}/{}) {}",
        m.accuracy,
        schema.group_a(),
        schema.group_b(),
        m.parity_display()
    );
    Ok(())
}

fn parse_reweigh_mode(mode: &str) -> Result<ReweighMode> {
    match mode.to_ascii_uppercase().as_str() {
        "UPWEIGHT_POSITIVES" => Ok(ReweighMode::UpweightPositives),
        "DOWNWEIGHT_NEGATIVES" => Ok(ReweighMode::DownweightNegatives),
        _ => Err(Error::Parameter(format!("unknown reweigh mode `{mode}`"))),
    }
}

fn read_ids(path: &Path) -> Result<HashSet<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect())
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    fs::create_dir_all(&cli.out_dir)?;
    let ctx = Context {
        config,
        out_dir: cli.out_dir,
    };
    let cfg = &ctx.config.pipeline;

    match cli.command {
        Command::InjectDups { input, output } => {
            let d = ctx.load(&input)?;
            let spec = ctx.config.duplicates.unwrap_or_default();
            let (out, truth) = harness::inject_duplicates(&d, &spec)?;
            ctx.save(&out, &output)?;
            write_truth(
                &truth,
                ctx.writer(&format!("{}_truth.csv", file_stem(&output)))?,
            )?;
            println!("{} records -> {} records", d.len(), out.len());
        }
        Command::InjectPoison { input, output } => {
            let d = ctx.load(&input)?;
            let spec = ctx.config.poison.unwrap_or_default();
            let (out, truth) = harness::inject_poison(&d, &spec)?;
            ctx.save(&out, &output)?;
            write_truth(
                &truth,
                ctx.writer(&format!("{}_truth.csv", file_stem(&output)))?,
            )?;
            println!("{} poison records appended", truth.poison.len());
        }
        Command::Sanitize { input, output } => {
            let d = ctx.load(&input)?;
            let (out, report) = sanitize(&d, &cfg.sanitize)?;
            ctx.save(&out, &output)?;
            report.write_csv(ctx.writer("sanitize_report.csv")?)?;
            println!("{} flagged, {} kept", report.flagged.len(), out.len());
        }
        Command::Clean { input, output } => {
            let d = ctx.load(&input)?;
            let (out, log) = resolve(&d, None, &cfg.match_rules, &cfg.merge_policy)?;
            ctx.save(&out, &output)?;
            log.write_csv(ctx.writer("merge_log.csv")?)?;
            println!(
                "{} merged records, {} pair comparisons, {} -> {} records",
                log.entries.len(),
                log.pair_comparisons,
                d.len(),
                out.len()
            );
        }
        Command::Reweigh {
            input,
            output,
            mode,
        } => {
            let d = ctx.load(&input)?;
            let strategy = match mode {
                Some(m) => ReweighStrategy::new(parse_reweigh_mode(&m)?),
                None => cfg.reweigh,
            };
            let (out, report) = reweigh(&d, &strategy)?;
            ctx.save(&out, &output)?;
            report.write_csv(ctx.writer("reweigh_report.csv")?)?;
            let [a, b] = report.after.ratios();
            println!(
                "reference {}; ratios after {a:.4} / {b:.4}",
                report.reference_group
            );
        }
        Command::Train { input, output } => {
            let d = ctx.load(&input)?;
            let model = train(&d, &cfg.train)?;
            model.save(ctx.path(&output))?;
            println!(
                "model with {} coefficients written",
                model.coefficients.len()
            );
        }
        Command::Evaluate { input, model } => {
            let d = ctx.load(&input)?;
            let model = LinearModel::load(&model)?;
            let metrics = evaluate(&model, &d)?;
            write_metrics(&metrics, &d, ctx.writer("metrics.csv")?)?;
        }
        Command::Pipeline {
            input,
            mode,
            sanitize_test,
        } => {
            let d = ctx.load(&input)?;
            let mut pcfg = cfg.clone();
            if let Some(m) = mode {
                pcfg.mode = m.parse()?;
            }
            pcfg.sanitize_test |= sanitize_test;
            let report = run_pipeline(&d, &pcfg)?;
            ctx.save(&report.final_dataset, "processed.csv")?;
            report.write_summary_csv(ctx.writer("pipeline.csv")?)?;
            report.write_stages_csv(ctx.writer("stages.csv")?)?;
            let table = report.to_table();
            fs::write(ctx.path("pipeline.txt"), &table)?;
            print!("{table}");
        }
        Command::Bench { input, methods } => {
            let d = ctx.load(&input)?;
            let modes: Vec<PipelineMode> = match methods {
                Some(list) => list
                    .split(';')
                    .map(str::trim)
                    .filter(|m| !m.is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?,
                None => ctx.config.bench_methods.clone(),
            };
            let configs: Vec<_> = modes
                .into_iter()
                .map(|m| (m.label(), cfg.with_mode(m)))
                .collect();
            let setup = BenchSetup {
                split: cfg.split,
                duplicates: ctx.config.duplicates,
                poison: ctx.config.poison,
            };
            let table = harness::bench_orderings(&d, &configs, &setup)?;
            table.write_csv(ctx.writer("bench.csv")?)?;
            table.write_quality_csv(ctx.writer("bench_quality.csv")?)?;
            let text = table.to_table();
            fs::write(ctx.path("bench.txt"), &text)?;
            print!("{text}");
        }
        Command::Impact { input, ids } => {
            let d = ctx.load(&input)?;
            let ids = read_ids(&ids)?;
            let delta = harness::impact(&d, &ids, &cfg.split, &cfg.train)?;
            let mut w = ctx.writer("impact.csv")?;
            writeln!(w, "removed,accuracy_delta\n{},{delta}", ids.len())?;
            w.flush()?;
            println!(
                "accuracy delta from removing {} records: {delta:+.4}",
                ids.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
