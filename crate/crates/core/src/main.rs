use std::fs::{self, File};
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use pourwatch::app::adapter::WireDetection;
use pourwatch::app::config::{ClassifierSource, DetectorSource, PipelineConfig};
use pourwatch::app::eval::evaluate;
use pourwatch::app::io::{write_scene, InputFormat};
use pourwatch::app::pipeline::{load_log, load_truth, run_to_configured_output, EXIT_INPUT, EXIT_USAGE};
use pourwatch::detect::{DetectionClass, Side};
use pourwatch::sim::{truth, SceneSpec, SceneTruth};
use pourwatch::slump::{SlumpBin, NUM_BINS};

#[derive(Parser)]
#[command(name = "pourwatch", version, about = "Chute pour detection and slump screening")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the pipeline over a video and write the event log.
    Run(RunArgs),
    /// Render a scene spec to frames plus a truth file.
    Simulate(SimulateArgs),
    /// Score event logs against truth files.
    Eval(EvalArgs),
    /// Line-protocol adapter answering from a truth file, for tests.
    #[command(hide = true)]
    StubAdapter(StubArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; every key can be overridden by the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    format: Option<InputFormat>,
    #[arg(long)]
    stereo_split: Option<bool>,
    #[arg(long)]
    stereo_view: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    adapter_window: Option<usize>,
    #[arg(long)]
    detector_oracle: Option<PathBuf>,
    #[arg(long)]
    detector_file: Option<PathBuf>,
    /// Whitespace-separated command line.
    #[arg(long)]
    detector_adapter: Option<String>,
    #[arg(long)]
    classifier_stub_bin: Option<SlumpBin>,
    /// Comma-separated probabilities.
    #[arg(long)]
    classifier_stub_probs: Option<String>,
    #[arg(long)]
    classifier_truth: Option<PathBuf>,
    /// Whitespace-separated command line.
    #[arg(long)]
    classifier_adapter: Option<String>,
    #[arg(long)]
    half_window: Option<u32>,
    #[arg(long)]
    pyramid: Option<bool>,
    #[arg(long)]
    tau_same: Option<f64>,
    #[arg(long)]
    lock_threshold: Option<u32>,
    #[arg(long)]
    min_confidence: Option<f64>,
    #[arg(long)]
    offset: Option<bool>,
    #[arg(long)]
    min_motion: Option<f64>,
    #[arg(long)]
    reseed_period: Option<u64>,
    #[arg(long)]
    lost_cooldown: Option<u64>,
    /// Frames per clip.
    #[arg(long)]
    clip_frames: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    /// Clips per verdict.
    #[arg(long)]
    clips: Option<usize>,
    #[arg(long)]
    hop: Option<usize>,
    #[arg(long)]
    ordered_bin: Option<SlumpBin>,
}

impl RunArgs {
    fn apply(self, cfg: &mut PipelineConfig) -> anyhow::Result<()> {
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        if let Some(i) = self.input {
            cfg.input = Some(i);
        }
        if self.format.is_some() {
            cfg.format = self.format;
        }
        set!(self.stereo_split => cfg.stereo_split);
        if let Some(v) = self.stereo_view {
            cfg.stereo_view = match v.as_str() {
                "left" => Side::Left,
                "right" => Side::Right,
                other => bail!("stereo view must be left or right, got {other:?}"),
            };
        }
        if self.output.is_some() {
            cfg.output = self.output;
        }
        set!(self.adapter_window => cfg.adapter_window);
        let words = |s: String| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        if let Some(p) = self.detector_oracle {
            cfg.detector = DetectorSource { oracle: Some(p), ..Default::default() };
        }
        if let Some(p) = self.detector_file {
            cfg.detector = DetectorSource { file: Some(p), ..Default::default() };
        }
        if let Some(c) = self.detector_adapter {
            cfg.detector = DetectorSource { adapter: Some(words(c)), ..Default::default() };
        }
        if let Some(b) = self.classifier_stub_bin {
            cfg.classifier = ClassifierSource { stub_bin: Some(b), ..Default::default() };
        }
        if let Some(p) = self.classifier_stub_probs {
            let probs = p
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .context("classifier-stub-probs must be comma-separated numbers")?;
            cfg.classifier = ClassifierSource { stub_probs: Some(probs), ..Default::default() };
        }
        if let Some(p) = self.classifier_truth {
            cfg.classifier = ClassifierSource { truth: Some(p), ..Default::default() };
        }
        if let Some(c) = self.classifier_adapter {
            cfg.classifier = ClassifierSource { adapter: Some(words(c)), ..Default::default() };
        }
        set!(self.half_window => cfg.flow.half_window);
        set!(self.pyramid => cfg.flow.pyramid);
        set!(self.tau_same => cfg.roi.tau_same);
        set!(self.lock_threshold => cfg.roi.lock_threshold);
        set!(self.min_confidence => cfg.roi.min_confidence);
        set!(self.offset => cfg.placement.offset);
        set!(self.min_motion => cfg.placement.min_motion);
        set!(self.reseed_period => cfg.placement.reseed_period);
        set!(self.lost_cooldown => cfg.placement.lost_cooldown);
        set!(self.clip_frames => cfg.slump.clip_frames);
        set!(self.stride => cfg.slump.stride);
        set!(self.clips => cfg.slump.clips);
        set!(self.hop => cfg.slump.hop);
        if self.ordered_bin.is_some() {
            cfg.slump.ordered_bin = self.ordered_bin;
        }
        Ok(())
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene spec (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; receives the video and truth.json.
    #[arg(long)]
    out: PathBuf,
    /// y4m or slgf.
    #[arg(long, default_value = "y4m")]
    format: InputFormat,
}

#[derive(Args)]
struct EvalArgs {
    /// Event log; repeat together with --truth.
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    /// Truth file (or scene spec) matching each --pred in order.
    #[arg(long, required = true)]
    truth: Vec<PathBuf>,
    /// Where to write the JSON report.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct StubArgs {
    /// Answer detect requests with these boxes and classify requests with this bin.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Bin returned by classify when no truth bin is available.
    #[arg(long)]
    bin: Option<SlumpBin>,
    /// Crash on the first request unless this marker file exists; creates it.
    #[arg(long)]
    fail_first: Option<PathBuf>,
    /// Reply to every request with an unparseable line.
    #[arg(long)]
    garbage: bool,
}

fn cmd_run(args: RunArgs) -> anyhow::Result<i32> {
    let mut cfg = match &args.config {
        Some(p) => match PipelineConfig::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return Ok(EXIT_USAGE);
            }
        },
        None => PipelineConfig::default(),
    };
    if let Err(e) = args.apply(&mut cfg) {
        eprintln!("error: {e:#}");
        return Ok(EXIT_USAGE);
    }
    match run_to_configured_output(&cfg) {
        Ok(outcome) => {
            for (side, v) in &outcome.verdicts {
                eprintln!(
                    "{side}: drop at frame {}, predicted {}, ordered {}, {:?}",
                    v.t_drop, v.predicted, v.order.ordered_bin, v.status
                );
            }
            Ok(outcome.exit_code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            Ok(e.exit_code())
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<i32> {
    let text = match fs::read_to_string(&args.scenario) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.scenario.display());
            return Ok(EXIT_INPUT);
        }
    };
    let spec: SceneSpec = match serde_json::from_str(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: bad scene spec: {e}");
            return Ok(EXIT_INPUT);
        }
    };
    if let Err(e) = spec.validate() {
        eprintln!("error: {e}");
        return Ok(EXIT_INPUT);
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let video = match args.format {
        InputFormat::Y4m => args.out.join("video.y4m"),
        InputFormat::Slgf => args.out.join("video.slgf"),
        InputFormat::Sim => bail!("simulate writes y4m or slgf"),
    };
    write_scene(&spec, &video, args.format)?;
    let t = truth(&spec);
    let mut f = BufWriter::new(File::create(args.out.join("truth.json"))?);
    serde_json::to_writer_pretty(&mut f, &t)?;
    f.flush()?;
    eprintln!("wrote {} frames to {}", spec.duration, video.display());
    Ok(0)
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<i32> {
    if args.pred.len() != args.truth.len() {
        eprintln!("error: {} --pred but {} --truth", args.pred.len(), args.truth.len());
        return Ok(EXIT_USAGE);
    }
    let mut runs = Vec::new();
    for (p, t) in args.pred.iter().zip(&args.truth) {
        let events = match load_log(p) {
            Ok(e) => e,
            Err(e) => {
                eprintln!("error: {}: {e}", p.display());
                return Ok(EXIT_INPUT);
            }
        };
        let truth = match load_truth(t) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: {}: {e}", t.display());
                return Ok(EXIT_INPUT);
            }
        };
        runs.push((events, truth));
    }
    let report = evaluate(&runs);
    let mut f = BufWriter::new(File::create(&args.report)?);
    serde_json::to_writer_pretty(&mut f, &report)?;
    f.flush()?;
    print!("{}", report.to_text());
    Ok(0)
}

fn stub_detections(truth: &SceneTruth) -> Vec<WireDetection> {
    let mut out = Vec::new();
    for (cls, b) in [
        (DetectionClass::Chute, truth.left_box),
        (DetectionClass::URChute, truth.left_urchute),
        (DetectionClass::Chute, truth.right_box),
        (DetectionClass::URChute, truth.right_urchute),
    ] {
        out.push(WireDetection {
            frame: None,
            cls,
            cx: b.cx,
            cy: b.cy,
            w: b.w,
            h: b.h,
            theta_deg: b.theta_deg,
            conf: 0.99,
        });
    }
    out
}

fn stub_reply(req: &Value, truth: Option<&SceneTruth>, bin: Option<SlumpBin>, frames_seen: &mut u64) -> Value {
    let id = req.get("id").cloned().unwrap_or(Value::Null);
    match req.get("op").and_then(Value::as_str) {
        Some("ping") => json!({"id": id, "ready": true, "window": 4}),
        Some("detect") => {
            let frame = *frames_seen;
            *frames_seen += 1;
            let dets = match truth {
                Some(t) if frame < t.duration => stub_detections(t),
                _ => Vec::new(),
            };
            json!({"id": id, "detections": dets})
        }
        Some("classify") => match truth.and_then(|t| t.slump_bin).or(bin) {
            Some(b) => {
                let mut probs = [0.0; NUM_BINS];
                probs[b.index()] = 1.0;
                json!({"id": id, "probs": probs})
            }
            None => json!({"id": id, "probs": vec![1.0 / NUM_BINS as f64; NUM_BINS]}),
        },
        _ => json!({"id": id, "error": "bad_request"}),
    }
}

fn cmd_stub_adapter(args: StubArgs) -> anyhow::Result<i32> {
    let truth = args.truth.as_deref().map(load_truth).transpose()?;
    let crash_now = match &args.fail_first {
        Some(marker) if !Path::new(marker).exists() => {
            File::create(marker)?;
            true
        }
        _ => false,
    };
    let stdin = io::stdin().lock();
    let mut stdout = io::stdout().lock();
    let mut frames_seen = 0u64;
    for line in stdin.lines() {
        let line = line?;
        if crash_now {
            eprintln!("stub adapter: simulated crash");
            return Ok(1);
        }
        if args.garbage {
            writeln!(stdout, "this is not json")?;
            stdout.flush()?;
            continue;
        }
        let reply = match serde_json::from_str::<Value>(&line) {
            Ok(req) => stub_reply(&req, truth.as_ref(), args.bin, &mut frames_seen),
            Err(_) => json!({"id": Value::Null, "error": "bad_request"}),
        };
        writeln!(stdout, "{reply}")?;
        stdout.flush()?;
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    let result = match cli.command {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::StubAdapter(a) => cmd_stub_adapter(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT as u8)
        }
    }
}
