use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dejavu_audit::config::{AuditConfig, AxisValue, Overrides, SweepAxis, SweepSpec};
use dejavu_audit::run::{read_sweep_csv, run_audit, run_sweep, write_audit, write_sweep, ReportDocument};
use dejavu_audit::{init_threads, plot, synth, THREADS_ENV};
use dejavu_core::crop::{corner_crop, periphery_crop, read_box_manifest, write_crop_manifest, CropShape, Fraction};
use dejavu_core::probe::{probe_gap, train_probe, ProbeConfig};
use dejavu_core::split::{plan_splits, verify_plan, ExampleCatalog, SplitSizes};
use dejavu_core::store::read_store;

#[derive(Parser)]
#[command(name = "audit", version, about = "Déjà vu memorization audits for self-supervised encoders")]
#[command(after_help = "Set DEJAVU_THREADS to limit the number of worker threads.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition a labeled catalog into private sets A and B, public set X and remainder C.
    Split(SplitArgs),
    /// Compute periphery (or corner) crops from a bounding-box manifest.
    Crop(CropArgs),
    /// Audit a target/reference model pair and write report.json, records.csv and figures.
    Audit(AuditArgs),
    /// Run the audit once per value of a sweep axis and write a tidy CSV.
    Sweep(SweepArgs),
    /// Generate the synthetic lab, train both toy encoders and write their stores.
    Synth(SynthArgs),
    /// Train a linear probe on one store and report its train/test gap on another.
    Probe(ProbeArgs),
    /// Render figures and an HTML index from report.json and/or sweep.csv.
    Report(ReportArgs),
}

#[derive(Args)]
struct SplitArgs {
    /// Catalog TSV: id, class, has_bbox (0/1).
    #[arg(long)]
    catalog: PathBuf,
    /// `A,B,X` sizes, or `all,all,X` to use every annotated example.
    #[arg(long)]
    sizes: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Draw class-balanced augmentation sets from C for each model.
    #[arg(long)]
    augment: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CropArgs {
    /// Box manifest: id, width, height, boxes as `x0,y0,x1,y1;...`.
    #[arg(long)]
    boxes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    min_side: u32,
    /// Largest empty square instead of rectangle.
    #[arg(long)]
    square: bool,
    /// Use lower-left corner crops (default fraction 1/3) instead of periphery crops.
    #[arg(long)]
    corner: bool,
    /// Corner crop side fraction, e.g. `1/3`; implies --corner.
    #[arg(long)]
    corner_fraction: Option<String>,
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// Audit config (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    /// Percent of most confident examples used for the score.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// L2-normalize embeddings before the neighbor search.
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    epoch: Option<u32>,
    #[arg(long)]
    layer: Option<u8>,
    /// Output directory (overrides output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn load(&self) -> Result<(AuditConfig, PathBuf, PathBuf)> {
        let mut config = AuditConfig::load(&self.config)?;
        config.apply(&Overrides {
            k: self.k,
            p: self.p,
            seed: self.seed,
            normalize: self.normalize,
            output_dir: None,
            epoch: self.epoch,
            layer: self.layer,
        });
        config.check()?;
        let base = self.config.parent().map(Path::to_path_buf).unwrap_or_default();
        let out = self.out.clone().unwrap_or_else(|| base.join(&config.output_dir));
        Ok((config, base, out))
    }
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// epochs, dataset_size, k, layer or hyperparam (overrides [sweep].axis).
    #[arg(long)]
    axis: Option<String>,
    /// Comma-separated axis values (overrides [sweep].values).
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<String>>,
}

#[derive(Args)]
struct SynthArgs {
    /// Lab config (TOML with [scenes] and [train] tables); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Comma-separated checkpoint epochs.
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<usize>>,
    /// Probability that a scene's background comes from its class pool.
    #[arg(long)]
    correlation: Option<f64>,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    /// Write the summary JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// report.json written by `audit`.
    #[arg(long)]
    report: Option<PathBuf>,
    /// sweep.csv written by `sweep`.
    #[arg(long)]
    sweep: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn split(a: SplitArgs) -> Result<()> {
    let catalog = ExampleCatalog::read_tsv(BufReader::new(
        File::open(&a.catalog).with_context(|| format!("opening {}", a.catalog.display()))?,
    ))
    .with_context(|| format!("reading {}", a.catalog.display()))?;
    let sizes = SplitSizes::parse(&a.sizes)?;
    let plan = plan_splits(&catalog, sizes, a.seed, a.augment)?;
    let violations = verify_plan(&plan, &catalog);
    if !violations.is_empty() {
        bail!("split plan failed verification: {violations:?}");
    }
    plan.write_manifest(&catalog, BufWriter::new(File::create(&a.out)?))?;
    eprintln!(
        "A {} / B {} / X {} / C {} (augment {} + {}) -> {}",
        plan.set_a.len(),
        plan.set_b.len(),
        plan.set_x.len(),
        plan.set_c.len(),
        plan.augment_a.len(),
        plan.augment_b.len(),
        a.out.display()
    );
    Ok(())
}

fn crop(a: CropArgs) -> Result<()> {
    let records = read_box_manifest(BufReader::new(
        File::open(&a.boxes).with_context(|| format!("opening {}", a.boxes.display()))?,
    ))
    .with_context(|| format!("reading {}", a.boxes.display()))?;
    let corner = match &a.corner_fraction {
        Some(s) => Some(Fraction::parse(s).with_context(|| format!("invalid corner fraction `{s}`"))?),
        None if a.corner => Some(Fraction::default()),
        None => None,
    };
    let shape = if a.square { CropShape::Square } else { CropShape::Rectangle };
    let mut crops = Vec::with_capacity(records.len());
    let mut skipped = Vec::new();
    for r in records {
        let rect = match corner {
            Some(f) => Some(corner_crop(r.width, r.height, f).with_context(|| format!("example {}", r.example_id))?),
            None => periphery_crop(r.width, r.height, &r.boxes, a.min_side, shape)?,
        };
        match rect {
            Some(rect) => crops.push((r.example_id, r.width, r.height, rect)),
            None => skipped.push(r.example_id),
        }
    }
    write_crop_manifest(BufWriter::new(File::create(&a.out)?), &crops)?;
    eprintln!("{} crops written to {}, {} examples without a valid crop", crops.len(), a.out.display(), skipped.len());
    for id in skipped.iter().take(10) {
        eprintln!("  no crop: {id}");
    }
    Ok(())
}

fn audit(a: AuditArgs) -> Result<()> {
    let (config, base, out) = a.common.load()?;
    let run = run_audit(&config, &base)?;
    let files = write_audit(&run, &out)?;
    println!("score@{} = {:.6}", config.p, run.outcome.report.score);
    eprintln!("wrote {} files to {}", files.len(), out.display());
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let (mut config, base, out) = a.common.load()?;
    let mut spec = config.sweep.clone().unwrap_or(SweepSpec { axis: SweepAxis::Epochs, values: Vec::new() });
    if let Some(axis) = &a.axis {
        spec.axis = SweepAxis::parse(axis).with_context(|| format!("unknown axis `{axis}`"))?;
    }
    if let Some(values) = &a.values {
        spec.values = values.iter().map(|v| AxisValue::parse(v.trim())).collect();
    }
    config.sweep = Some(spec);
    let doc = run_sweep(&config, &base)?;
    for cell in doc.cells.iter().filter(|c| c.error.is_some()) {
        eprintln!("warning: {}", cell.error.as_deref().unwrap_or_default());
    }
    let files = write_sweep(&doc, &out)?;
    for cell in &doc.cells {
        match &cell.report {
            Some(r) => println!("{} = {}: score {:.6}", doc.axis.as_str(), cell.value, r.score),
            None => println!("{} = {}: {}", doc.axis.as_str(), cell.value, cell.status.as_str()),
        }
    }
    eprintln!("wrote {} files to {}{}", files.len(), out.display(), if doc.partial { " (partial)" } else { "" });
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let mut config = synth::load_lab_config(a.config.as_deref())?;
    synth::apply_seed(&mut config, a.seed);
    if let Some(e) = a.epochs {
        config.train.epochs = e;
    }
    if let Some(c) = a.checkpoints {
        config.train.checkpoints = c;
    }
    if let Some(r) = a.correlation {
        config.scenes.correlation = r;
    }
    let (_, files) = synth::run_synth(&config, &a.out)?;
    eprintln!("wrote {} files to {}", files.len(), a.out.display());
    Ok(())
}

fn probe(a: ProbeArgs) -> Result<()> {
    let train = read_store(&a.train).with_context(|| format!("reading {}", a.train.display()))?;
    let test = read_store(&a.test).with_context(|| format!("reading {}", a.test.display()))?;
    let mut cfg = ProbeConfig { seed: a.seed, ..Default::default() };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let model = train_probe(&train, &cfg)?;
    let summary = probe_gap(&model, &train, &test)?;
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    match a.out {
        Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    if a.report.is_none() && a.sweep.is_none() {
        bail!("give --report, --sweep, or both");
    }
    let doc: Option<ReportDocument> = match &a.report {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => None,
    };
    let rows = a.sweep.as_deref().map(read_sweep_csv).transpose()?;
    let summary = plot::render_report(doc.as_ref(), rows.as_deref(), &a.out)?;
    for n in &summary.notes {
        eprintln!("note: {n}");
    }
    eprintln!("wrote {} files to {}", summary.files.len(), a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#} (from {THREADS_ENV})");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Split(a) => split(a),
        Command::Crop(a) => crop(a),
        Command::Audit(a) => audit(a),
        Command::Sweep(a) => sweep(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Probe(a) => probe(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
