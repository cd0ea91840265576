//! Operator-facing subcommands: train, detect, evaluate, fly-sim, endpoint,
//! convert, manifest-summary. Every subcommand is deterministic given its
//! inputs and `--seed`; progress and wall times go to stderr so stdout stays
//! byte-stable.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};

use crate::boost::{load_cascade, save_cascade, train_cascade_report, Cascade, TrainConfig};
use crate::dataset::{
    evaluate, extract_samples, parse_annotations, parse_manifest, read_pgm, write_pgm,
    FileNegativePool,
};
use crate::detect::{
    classify_gesture, detection_csv_row, estimate_distance, group_rects, scan, Calibration,
    Detection, ScanConfig, DETECTION_CSV_HEADER,
};
use crate::error::{Error, Result};
use crate::imaging::{to_grayscale, GrayImage, Rect};
use crate::pilot::{fly_labels, GestureMap, World, TRACE_CSV_HEADER};
use crate::wire::{Endpoint, Session};
use crate::{GestureLabel, GESTURES};

#[derive(Parser, Debug)]
#[command(name = "haarpilot", version, about = "Gesture-cascade training, detection, and drone piloting")]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Train a boosted Haar cascade for one gesture.
    Train(TrainArgs),
    /// Scan images for gestures and emit a detection CSV.
    Detect(DetectArgs),
    /// Score a labeled manifest and emit the accuracy report.
    Evaluate(EvaluateArgs),
    /// Fly a simulated mission from a label script or frame directory.
    FlySim(FlySimArgs),
    /// Run the UDP drone endpoint.
    Endpoint(EndpointArgs),
    /// Convert a color image to binary PGM.
    Convert(ConvertArgs),
    /// Summarize dataset sizes from annotation and negative-list files.
    ManifestSummary(ManifestSummaryArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Annotation file: `path N x y w h ...` lines, paths relative to it.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Text file listing negative images, one path per line.
    #[arg(long)]
    pub negatives: PathBuf,
    /// Gesture the cascade detects.
    #[arg(long)]
    pub label: GestureLabel,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = TrainConfig::default().max_stages)]
    pub max_stages: usize,
    #[arg(long, default_value_t = TrainConfig::default().max_stumps)]
    pub max_stumps: usize,
    #[arg(long, default_value_t = TrainConfig::default().min_detection)]
    pub min_detection: f64,
    #[arg(long, default_value_t = TrainConfig::default().max_false_positive)]
    pub max_false_positive: f64,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    /// PGM image or a directory of them.
    pub input: PathBuf,
    /// Directory of `.cascade` model files.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub scale_factor: Option<f64>,
    #[arg(long)]
    pub min_neighbors: Option<usize>,
    /// Write the detection CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write copies with detection boxes burned in (pixel value 255) here.
    #[arg(long)]
    pub annotate: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Manifest CSV: path,label,illumination,background,distance.
    pub manifest: PathBuf,
    /// Directory of `.cascade` model files.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub scale_factor: Option<f64>,
    #[arg(long)]
    pub min_neighbors: Option<usize>,
    /// Write the report CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FlySimArgs {
    /// Label script (one gesture per line) or a directory of PGM frames.
    pub input: PathBuf,
    /// Model directory; required when the input is a frame directory.
    #[arg(long)]
    pub models: Option<PathBuf>,
    /// World file: `operator x y z` and `obstacle x y z w h d` lines.
    #[arg(long)]
    pub world: Option<PathBuf>,
    /// Gesture-to-command overrides: `gesture=command` lines.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Also transmit every planned action to this UDP endpoint.
    #[arg(long)]
    pub wire: Option<String>,
    /// Write the trace CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub scale_factor: Option<f64>,
    #[arg(long)]
    pub min_neighbors: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EndpointArgs {
    /// Listen address.
    #[arg(long, default_value = "127.0.0.1:5556")]
    pub bind: String,
    /// Silence window before the failsafe hover, in milliseconds.
    #[arg(long, default_value_t = 2000)]
    pub failsafe_ms: u64,
    /// Serve for this long, print the final snapshot, and exit. Serves
    /// until killed when absent.
    #[arg(long)]
    pub run_for_ms: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    /// Input image in any common color format.
    pub input: PathBuf,
    /// Output PGM file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ManifestSummaryArgs {
    /// Repeatable `gesture=annotation-file` pairs.
    #[arg(long = "annotations", value_name = "GESTURE=FILE", required = true)]
    pub annotations: Vec<String>,
    /// Text file listing negative images, one path per line.
    #[arg(long)]
    pub negatives: PathBuf,
}

/// Exit code for a failed run: data errors (unparseable or unreadable
/// inputs) are 2, runtime failures are 3. Usage errors exit 1 before this
/// is consulted.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ParseLine { .. }
        | Error::ParseByte { .. }
        | Error::Version(_)
        | Error::Input(_)
        | Error::Io { .. } => 2,
        _ => 3,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Train(args) => cmd_train(args, cli.seed),
        Cmd::Detect(args) => cmd_detect(args),
        Cmd::Evaluate(args) => cmd_evaluate(args),
        Cmd::FlySim(args) => cmd_fly_sim(args),
        Cmd::Endpoint(args) => cmd_endpoint(args),
        Cmd::Convert(args) => cmd_convert(args),
        Cmd::ManifestSummary(args) => cmd_manifest_summary(args),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-empty, non-comment lines as paths relative to the list's directory.
fn read_path_list(path: &Path) -> Result<Vec<PathBuf>> {
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let text = read_text(path)?;
    let paths: Vec<PathBuf> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect();
    if paths.is_empty() {
        return Err(Error::Input(format!("{} lists no paths", path.display())));
    }
    Ok(paths)
}

fn scan_config(scale_factor: Option<f64>, min_neighbors: Option<usize>) -> ScanConfig {
    let mut cfg = ScanConfig::default();
    if let Some(sf) = scale_factor {
        cfg.scale_factor = sf;
    }
    if let Some(mn) = min_neighbors {
        cfg.min_neighbors = mn;
    }
    cfg
}

/// Load every `.cascade` file in `dir`, sorted by path.
fn load_models(dir: &Path) -> Result<Vec<Cascade>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "cascade") {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Input(format!("no .cascade model files in {}", dir.display())));
    }
    paths.iter().map(|p| load_cascade(p)).collect()
}

/// The input itself, or every `.pgm` inside it in sorted order.
fn list_frames(input: &Path) -> Result<Vec<PathBuf>> {
    if !input.is_dir() {
        return Ok(vec![input.to_path_buf()]);
    }
    let entries = fs::read_dir(input).map_err(|e| Error::io(input, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(input, e))?;
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "pgm") {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Input(format!("no .pgm frames in {}", input.display())));
    }
    Ok(paths)
}

fn frame_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

/// Write to `--out` when given (returns true), otherwise to stdout.
fn write_output(out: Option<&Path>, content: &str) -> Result<bool> {
    match out {
        Some(path) => {
            fs::write(path, content).map_err(|e| Error::io(path, e))?;
            Ok(true)
        }
        None => {
            print!("{content}");
            Ok(false)
        }
    }
}

fn cmd_train(args: TrainArgs, seed: u64) -> Result<()> {
    let started = Instant::now();
    let ann_dir = args.annotations.parent().unwrap_or(Path::new("")).to_path_buf();
    let annotations = parse_annotations(&read_text(&args.annotations)?, &ann_dir)?;
    let config = TrainConfig {
        max_stages: args.max_stages,
        max_stumps: args.max_stumps,
        min_detection: args.min_detection,
        max_false_positive: args.max_false_positive,
        seed,
        ..TrainConfig::default()
    };

    let extracted = extract_samples(&annotations, config.window)?;
    for failure in &extracted.failures {
        eprintln!(
            "warning: {} rect {},{} {}x{}: {}",
            failure.path.display(),
            failure.rect.x,
            failure.rect.y,
            failure.rect.w,
            failure.rect.h,
            failure.reason
        );
    }

    let negative_paths = read_path_list(&args.negatives)?;
    let mut pool = FileNegativePool::new(&negative_paths, config.window, seed)?;
    for w in pool.warnings() {
        eprintln!("warning: {w}");
    }

    let (cascade, reports) = train_cascade_report(&extracted.samples, &mut pool, args.label, &config)?;
    save_cascade(&cascade, &args.out)?;

    let mut report = String::new();
    let _ = writeln!(report, "label {}", args.label);
    let _ = writeln!(report, "positives {} (failures {})", extracted.samples.len(), extracted.failures.len());
    for (k, r) in reports.iter().enumerate() {
        let _ = writeln!(
            report,
            "stage {} stumps {} detection {:.6} false-positive {:.6}{}",
            k + 1,
            r.stumps,
            r.detection_rate,
            r.false_positive_rate,
            if r.hit_stump_budget { " (stump budget hit)" } else { "" }
        );
    }
    let _ = writeln!(report, "stages {}", cascade.stages.len());
    let _ = writeln!(report, "model {}", args.out.display());
    print!("{report}");
    eprintln!("trained in {:.2?}", started.elapsed());
    Ok(())
}

/// Burn a one-pixel detection outline into the image.
fn burn_box(img: &mut GrayImage, r: Rect) {
    let x1 = (r.x + r.w).min(img.width()).saturating_sub(1);
    let y1 = (r.y + r.h).min(img.height()).saturating_sub(1);
    for x in r.x..=x1 {
        img.set(x, r.y, 255);
        img.set(x, y1, 255);
    }
    for y in r.y..=y1 {
        img.set(r.x, y, 255);
        img.set(x1, y, 255);
    }
}

fn cmd_detect(args: DetectArgs) -> Result<()> {
    let cascades = load_models(&args.models)?;
    let cfg = scan_config(args.scale_factor, args.min_neighbors);
    let frames = list_frames(&args.input)?;
    if let Some(dir) = &args.annotate {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut csv = String::from(DETECTION_CSV_HEADER);
    csv.push('\n');
    for path in &frames {
        let frame = read_pgm(path)?;
        let name = frame_name(path);
        let mut annotated = args.annotate.as_ref().map(|_| frame.clone());
        let mut counts = [0usize; 5];
        for cascade in &cascades {
            let grouped: Vec<Detection> =
                group_rects(&scan(&frame, cascade, &cfg)?, cfg.min_neighbors, cfg.group_eps);
            for det in &grouped {
                csv.push_str(&detection_csv_row(&name, cascade.label, det));
                csv.push('\n');
                if let Some(img) = annotated.as_mut() {
                    burn_box(img, det.rect);
                }
            }
            let gi = GESTURES.iter().position(|&g| g == cascade.label).expect("gesture label");
            counts[gi] += grouped.len();
        }
        let summary: Vec<String> = GESTURES
            .iter()
            .zip(counts)
            .map(|(g, c)| format!("{g}={c}"))
            .collect();
        eprintln!("{name}: {}", summary.join(" "));
        if let (Some(img), Some(dir)) = (annotated, &args.annotate) {
            write_pgm(&img, &dir.join(&name))?;
        }
    }
    write_output(args.out.as_deref(), &csv)?;
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let started = Instant::now();
    let base = args.manifest.parent().unwrap_or(Path::new("")).to_path_buf();
    let entries = parse_manifest(&read_text(&args.manifest)?, &base)?;
    let cascades = load_models(&args.models)?;
    let cfg = scan_config(args.scale_factor, args.min_neighbors);
    let report = evaluate(&entries, &cascades, &cfg)?;
    let wrote_file = write_output(args.out.as_deref(), &report.to_csv())?;
    // The significance ordering stays visible next to wherever the CSV went.
    if wrote_file {
        println!("{}", report.significance_line());
    } else {
        eprintln!("{}", report.significance_line());
    }
    eprintln!("evaluated {} images in {:.2?}", entries.len(), started.elapsed());
    Ok(())
}

/// Parse a label script: one gesture token per line.
fn parse_label_script(text: &str) -> Result<Vec<(GestureLabel, Option<f64>)>> {
    let mut frames = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let label: GestureLabel = line
            .parse()
            .map_err(|e| Error::ParseLine { line: i + 1, msg: format!("{e}") })?;
        frames.push((label, None));
    }
    if frames.is_empty() {
        return Err(Error::Input("label script is empty".into()));
    }
    Ok(frames)
}

fn cmd_fly_sim(args: FlySimArgs) -> Result<()> {
    let world = match &args.world {
        Some(path) => World::parse(&read_text(path)?)?,
        None => World::default(),
    };
    let map = match &args.map {
        Some(path) => GestureMap::parse(&read_text(path)?)?,
        None => GestureMap::default(),
    };

    let frames: Vec<(GestureLabel, Option<f64>)> = if args.input.is_dir() {
        let models = args.models.as_ref().ok_or_else(|| {
            Error::Config("--models is required when flying from a frame directory".into())
        })?;
        let cascades = load_models(models)?;
        let cfg = scan_config(args.scale_factor, args.min_neighbors);
        let mut frames = Vec::new();
        for path in list_frames(&args.input)? {
            let img = read_pgm(&path)?;
            let (label, det) = classify_gesture(&img, &cascades, &cfg)?;
            let est = det.and_then(|d| estimate_distance(d.rect.w as f64, Calibration::default()).ok());
            frames.push((label, est));
        }
        frames
    } else {
        parse_label_script(&read_text(&args.input)?)?
    };

    let outcome = match &args.wire {
        Some(dest) => {
            let mut session = Session::connect(dest.as_str())?;
            let mut send = |tick: &crate::pilot::WireTick| session.send_tick(tick).map(|_| ());
            let outcome = fly_labels(&frames, &map, &world, Some(&mut send))?;
            eprintln!("wire: sent {} datagrams to {dest}", session.last_seq());
            outcome
        }
        None => fly_labels(&frames, &map, &world, None)?,
    };

    let mut csv = String::from(TRACE_CSV_HEADER);
    csv.push('\n');
    for row in &outcome.trace {
        csv.push_str(&row.to_csv());
        csv.push('\n');
    }
    write_output(args.out.as_deref(), &csv)?;

    for (frame, cmd) in &outcome.commands {
        eprintln!("frame {frame}: {cmd}");
    }
    for (frame, refusal) in &outcome.refusals {
        eprintln!("frame {frame}: refused {}: {}", refusal.command, refusal.detail);
    }
    let s = &outcome.state;
    eprintln!(
        "final: {} at ({:.3}, {:.3}, {:.3}), {} pictures",
        s.mode, s.position[0], s.position[1], s.position[2], s.pictures_taken
    );
    Ok(())
}

fn cmd_endpoint(args: EndpointArgs) -> Result<()> {
    let endpoint = Endpoint::bind(args.bind.as_str(), Duration::from_millis(args.failsafe_ms))?;
    eprintln!("endpoint listening on {}", endpoint.local_addr());
    match args.run_for_ms {
        Some(ms) => {
            std::thread::sleep(Duration::from_millis(ms));
            println!("{}", endpoint.snapshot_csv());
            Ok(())
        }
        None => loop {
            std::thread::sleep(Duration::from_secs(1));
        },
    }
}

fn cmd_convert(args: ConvertArgs) -> Result<()> {
    let decoded = image::open(&args.input)
        .map_err(|e| Error::Input(format!("{}: {e}", args.input.display())))?
        .to_rgb8();
    let gray = to_grayscale(decoded.as_raw(), decoded.width(), decoded.height())?;
    write_pgm(&gray, &args.out)?;
    eprintln!(
        "converted {} ({}x{}) to {}",
        args.input.display(),
        gray.width(),
        gray.height(),
        args.out.display()
    );
    Ok(())
}

fn cmd_manifest_summary(args: ManifestSummaryArgs) -> Result<()> {
    let mut total: u64 = 0;
    let mut out = String::new();
    for pair in &args.annotations {
        let (gesture, file) = pair
            .split_once('=')
            .ok_or_else(|| Error::Input(format!("expected gesture=file, got {pair:?}")))?;
        let label: GestureLabel = gesture.parse()?;
        if label == GestureLabel::None {
            return Err(Error::Input("summary labels must be gestures, not none".into()));
        }
        let path = PathBuf::from(file);
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let annotations = parse_annotations(&read_text(&path)?, &base)?;
        let rects: u64 = annotations.iter().map(|a| a.rects.len() as u64).sum();
        total += rects;
        let _ = writeln!(out, "{label} positives {rects}");
    }
    let negatives: BTreeSet<PathBuf> = read_path_list(&args.negatives)?.into_iter().collect();
    total += negatives.len() as u64;
    let _ = writeln!(out, "negatives {}", negatives.len());
    let _ = writeln!(out, "total {total}");
    print!("{out}");
    Ok(())
}
