use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fsod_bench::backends::EventLog;
use fsod_bench::dataset::{
    build_support, extract_crop, load_index, synth_fixture, IndexFormat, SynthSpec,
};
use fsod_bench::error::{Error, Result};
use fsod_bench::geometry::{ImageDims, DEFAULT_CROP_MARGIN};
use fsod_bench::metrics::{MetricConfig, MetricReport};
use fsod_bench::runner::{
    evaluate, read_record, render_csv, render_tables, run, ExperimentConfig,
};
use fsod_bench::split::{
    read_split_file, solve, SeedSearchConfig, SplitConstraints, SplitInstance,
};

#[derive(Parser)]
#[command(
    name = "fsod-bench",
    about = "Few-shot object detection benchmark toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    CocoJson,
    SimpleCsv,
}

impl From<FormatArg> for IndexFormat {
    fn from(f: FormatArg) -> IndexFormat {
        match f {
            FormatArg::CocoJson => IndexFormat::CocoJson,
            FormatArg::SimpleCsv => IndexFormat::SimpleCsv,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic annotated corpus.
    Synth(SynthArgs),
    /// Build a constraint-satisfying example/test split.
    Split(SplitArgs),
    /// Emit K-shot support crops from the example split.
    Crops(CropsArgs),
    /// Execute an experiment config over the test split (resumable).
    Run(RunArgs),
    /// Score one run record into a metric report.
    Evaluate(EvaluateArgs),
    /// Render result tables from one or more run records.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for images and index files.
    #[arg(long)]
    out_dir: PathBuf,
    /// Class spec as name:count pairs, e.g. "rbc:40,wbc:12".
    #[arg(long)]
    classes: String,
    #[arg(long, default_value_t = 16)]
    images: usize,
    #[arg(long, default_value_t = 200)]
    width: u32,
    #[arg(long, default_value_t = 160)]
    height: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Source tag recorded in the index.
    #[arg(long, default_value = "synthetic")]
    source: String,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long, value_enum, default_value = "coco-json")]
    format: FormatArg,
    /// Output split file (JSONL with a score header).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 6)]
    m_exp: u64,
    #[arg(long, default_value_t = 10)]
    m_test: u64,
    #[arg(long, default_value_t = 10)]
    n_exp: usize,
    #[arg(long, default_value_t = 53)]
    n_test: usize,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CropsArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long, value_enum, default_value = "coco-json")]
    format: FormatArg,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    k: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_CROP_MARGIN)]
    margin: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run record to create or resume.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run record produced by `run`.
    #[arg(long)]
    run: PathBuf,
    /// Where to write the metric report JSON (stdout table always prints).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run record files (shell globs expand to multiple paths).
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    /// Optional CSV output path.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Optional table output path (defaults to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_classes(spec: &str) -> Result<Vec<(String, u64)>> {
    spec.split(',')
        .map(|pair| {
            let (name, count) = pair.split_once(':').ok_or_else(|| {
                Error::Validation(format!("bad class spec '{pair}', expected name:count"))
            })?;
            let count: u64 = count.trim().parse().map_err(|_| {
                Error::Validation(format!("bad count in class spec '{pair}'"))
            })?;
            Ok((name.trim().to_string(), count))
        })
        .collect()
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let classes = parse_classes(&args.classes)?;
    let spec = SynthSpec {
        source: args.source.clone(),
        images: args.images,
        dims: ImageDims::new(args.width, args.height)?,
        classes: classes
            .iter()
            .map(|(name, total_boxes)| fsod_bench::dataset::SynthClassSpec {
                name: name.clone(),
                total_boxes: *total_boxes,
            })
            .collect(),
        min_side: 12,
        max_side: 30,
        seed: args.seed,
    };
    let index = synth_fixture(&spec, &args.out_dir)?;
    let json_path = args.out_dir.join("index.json");
    fsod_bench::dataset::save_index(&index, &json_path, IndexFormat::CocoJson)?;
    fsod_bench::dataset::save_index(
        &index,
        &args.out_dir.join("index.csv"),
        IndexFormat::SimpleCsv,
    )?;
    println!(
        "wrote {} images, {} boxes across {} classes to {}",
        index.images.len(),
        index.annotations.len(),
        index.classes.len(),
        args.out_dir.display()
    );
    println!("index: {}", json_path.display());
    Ok(())
}

fn cmd_split(args: SplitArgs) -> Result<()> {
    let index = load_index(&args.index, args.format.into())?;
    let instance = SplitInstance::from_index(&index)?;
    let constraints = SplitConstraints {
        m_exp: args.m_exp,
        m_test: args.m_test,
        n_exp: args.n_exp,
        n_test: args.n_test,
    };
    let search = SeedSearchConfig {
        trials: args.trials,
        base_seed: args.seed,
    };
    let (assignment, score) = solve(&instance, &constraints, &search)?;
    fsod_bench::split::write_split_file(&args.out, &assignment)?;
    println!(
        "split written to {} (SSS {:.4} = CPC {:.4} x CBE {:.4}, trial {} of {})",
        args.out.display(),
        score.sss,
        score.cpc,
        score.cbe,
        assignment.winning_trial,
        args.trials
    );
    Ok(())
}

fn cmd_crops(args: CropsArgs) -> Result<()> {
    let index = load_index(&args.index, args.format.into())?;
    let split = read_split_file(&args.split)?;
    let support = build_support(&index, &split, args.k, args.seed, args.margin)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let mut manifest = Vec::new();
    for (class, crops) in &support.classes {
        for (i, crop) in crops.iter().enumerate() {
            let rec = index.image(&crop.image_id).expect("support from index");
            let png = extract_crop(rec, &crop.source_box, args.margin)?;
            let safe_class = class.replace(['/', ' '], "_");
            let name = format!("{safe_class}_{i:02}_{}.png", crop.image_id);
            std::fs::write(args.out_dir.join(&name), png)?;
            manifest.push(serde_json::json!({
                "file": name,
                "class": class,
                "image_id": crop.image_id,
                "region": crop.region.as_array(),
            }));
        }
    }
    std::fs::write(
        args.out_dir.join("support.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "k": support.k,
            "seed": support.seed,
            "margin": support.margin,
            "shortfall": support.shortfall,
            "crops": manifest,
        }))?,
    )?;
    println!(
        "wrote support crops for {} classes to {}",
        support.classes.len(),
        args.out_dir.display()
    );
    if !support.shortfall.is_empty() {
        println!("shortfall (fewer than K available): {:?}", support.shortfall);
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<i32> {
    let config = ExperimentConfig::from_toml_file(&args.config)?;
    let log = Arc::new(EventLog::default());
    let record = run(&config, &args.out, &log)?;
    let failed = record.failed_count();
    println!(
        "run complete: {} images ({} failed), record at {}",
        record.entries.len(),
        failed,
        args.out.display()
    );
    if failed > 0 {
        eprintln!("{failed} image(s) exhausted their backend retries; rerun to retry them");
        return Ok(2);
    }
    Ok(0)
}

fn load_report_for_run(path: &PathBuf) -> Result<MetricReport> {
    let record = read_record(path)?;
    let config = &record.header.config;
    let index = load_index(&config.dataset.index, config.dataset.format)?;
    let split = read_split_file(&config.dataset.split)?;
    evaluate(&record, &index, &split, config, &MetricConfig::default())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let report = load_report_for_run(&args.run)?;
    println!("{}", render_tables(std::slice::from_ref(&report))?);
    println!(
        "mF1 {:.4}  MeanIoU(TP@0.5) {:.4}  images {}  failed {}",
        report.mf1, report.mean_iou_tp_at_05, report.images, report.failed_images
    );
    if let (Some(mf1), Some(miou)) = (report.mf1_failed_as_empty, report.mean_iou_failed_as_empty)
    {
        println!("failed-as-empty variant: mF1 {mf1:.4}  MeanIoU {miou:.4}");
    }
    if let Some(out) = args.out {
        let mut bytes = serde_json::to_vec_pretty(&report)?;
        bytes.push(b'\n');
        std::fs::write(&out, bytes)?;
        println!("report written to {}", out.display());
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let mut reports = Vec::new();
    for path in &args.runs {
        reports.push(load_report_for_run(path)?);
    }
    let table = render_tables(&reports)?;
    match &args.out {
        Some(path) => std::fs::write(path, &table)?,
        None => print!("{table}"),
    }
    if let Some(csv_path) = &args.csv {
        std::fs::write(csv_path, render_csv(&reports))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome: Result<i32> = match cli.command {
        Command::Synth(args) => cmd_synth(args).map(|()| 0),
        Command::Split(args) => cmd_split(args).map(|()| 0),
        Command::Crops(args) => cmd_crops(args).map(|()| 0),
        Command::Run(args) => cmd_run(args),
        Command::Evaluate(args) => cmd_evaluate(args).map(|()| 0),
        Command::Report(args) => cmd_report(args).map(|()| 0),
    };
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
