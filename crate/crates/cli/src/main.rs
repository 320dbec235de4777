//! `laic`: language-assisted clustering of precomputed image embeddings.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use laic_core::centers::ConsistencyOn;
use laic_core::diagnose::{diagnose, histogram_csv};
use laic_core::io::{read_embedding, read_vocab};
use laic_core::pipeline::{
    build_report, run_pipeline, run_stage, InputPaths, KTildeMode, OutputLock, PipelineConfig, REPORT_FILE,
};
use laic_core::synth::{make_synthetic, SynthConfig};
use laic_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "laic",
    version,
    about = "Cluster image embeddings with help from a text vocabulary"
)]
struct Cli {
    /// More logging (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic benchmark with known labels and a matching run.toml.
    Synth(SynthArgs),
    /// Pick candidate nouns from the corpus.
    Vocab(RunArgs),
    /// Compute the text-based representation C.
    Repr(RunArgs),
    /// K-means on C (pseudo-labels) and on the images (baseline).
    Cluster(RunArgs),
    /// Select high-quality pseudo-labels by neighbor agreement.
    Filter(RunArgs),
    /// Learn the semantic centers.
    Train(RunArgs),
    /// Assign every image to its nearest center.
    Assign(RunArgs),
    /// Score the checkpoints against ground truth.
    Eval(RunArgs),
    /// Every stage, then the report.
    Run(RunArgs),
    /// Rebuild report.json and the report/ directory from stage outputs.
    Report(RunArgs),
    /// Cosine statistics within and across modalities.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML or JSON config; flags override it.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    x: Option<PathBuf>,
    /// Corpus embeddings (names in the JSON sidecar).
    #[arg(long)]
    w: Option<PathBuf>,
    /// Stacked strong views.
    #[arg(long)]
    strong: Option<PathBuf>,
    /// Stacked weak views.
    #[arg(long)]
    weak: Option<PathBuf>,
    /// Ground-truth labels, for evaluation only.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(short, long)]
    k: Option<usize>,
    #[arg(long)]
    theta: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    k_hat: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    /// auto, small_classes, large or fixed.
    #[arg(long)]
    k_tilde_mode: Option<String>,
    #[arg(long)]
    k_tilde: Option<usize>,
    /// Overrides the config file and LAIC_SEED.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    /// softmax or logits.
    #[arg(long)]
    consistency: Option<String>,
    #[arg(long)]
    no_sup: bool,
    #[arg(long)]
    no_con: bool,
    #[arg(long)]
    no_ent: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
    /// JSON or TOML file with generator settings; flags override it.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    k: Option<usize>,
    #[arg(long)]
    n_per: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    nuisance_scale: Option<f64>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    images: PathBuf,
    /// Text embeddings; a JSON name sidecar is not required.
    #[arg(long)]
    texts: PathBuf,
    /// Also write diagnosis.json and histogram.csv here.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn parse_enum<T: serde::de::DeserializeOwned>(flag: &str, v: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(v.to_string()))
        .map_err(|_| Error::Config(format!("--{flag}: unknown value `{v}`")))
}

fn load_config(a: &RunArgs) -> Result<PipelineConfig> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_env()?;
    let set = |slot: &mut PathBuf, v: &Option<PathBuf>| {
        if let Some(v) = v {
            *slot = v.clone();
        }
    };
    set(&mut cfg.paths.x, &a.x);
    set(&mut cfg.paths.w, &a.w);
    set(&mut cfg.out_dir, &a.out);
    for (slot, v) in [
        (&mut cfg.paths.strong, &a.strong),
        (&mut cfg.paths.weak, &a.weak),
        (&mut cfg.paths.labels, &a.labels),
    ] {
        if v.is_some() {
            *slot = v.clone();
        }
    }
    cfg.k = a.k.unwrap_or(cfg.k);
    cfg.theta = a.theta.unwrap_or(cfg.theta);
    cfg.gamma = a.gamma.unwrap_or(cfg.gamma);
    cfg.k_hat = a.k_hat.or(cfg.k_hat);
    cfg.tau = a.tau.unwrap_or(cfg.tau);
    if let Some(m) = &a.k_tilde_mode {
        cfg.k_tilde_mode = parse_enum::<KTildeMode>("k-tilde-mode", m)?;
    }
    cfg.k_tilde = a.k_tilde.or(cfg.k_tilde);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    let t = &mut cfg.train;
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.lr0 = a.lr.unwrap_or(t.lr0);
    t.temperature = a.temperature.unwrap_or(t.temperature);
    if let Some(c) = &a.consistency {
        t.consistency_on = parse_enum::<ConsistencyOn>("consistency", c)?;
    }
    t.switches.sup &= !a.no_sup;
    t.switches.con &= !a.no_con;
    t.switches.ent &= !a.no_ent;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Error::Config(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::IoFailure {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::IoFailure {
        path: path.to_path_buf(),
        source: e,
    })
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::IoFailure {
                path: p.clone(),
                source: e,
            })?;
            let parsed = if p.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text).map_err(|e| e.to_string())
            } else {
                toml::from_str(&text).map_err(|e| e.to_string())
            };
            parsed.map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SynthConfig::default(),
    };
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.k = a.k.unwrap_or(cfg.k);
    cfg.n_per = a.n_per.unwrap_or(cfg.n_per);
    cfg.noise = a.noise.unwrap_or(cfg.noise);
    cfg.nuisance_scale = a.nuisance_scale.unwrap_or(cfg.nuisance_scale);
    let data = make_synthetic(&cfg)?;
    let paths = data.write(&a.out)?;
    // paths relative to the run file so the directory can be moved
    let rel = |p: &Path| {
        p.strip_prefix(&a.out)
            .map(Path::to_path_buf)
            .unwrap_or_else(|_| p.to_path_buf())
    };
    let run = PipelineConfig {
        paths: InputPaths {
            x: rel(&paths.x),
            w: rel(&paths.w),
            strong: paths.strong.as_deref().map(rel),
            weak: paths.weak.as_deref().map(rel),
            labels: paths.labels.as_deref().map(rel),
        },
        out_dir: PathBuf::from("out"),
        k: cfg.k,
        seed: cfg.seed,
        ..PipelineConfig::default()
    };
    let text = toml::to_string(&run).map_err(|e| Error::Config(e.to_string()))?;
    let path = a.out.join("run.toml");
    write_file(&path, text.as_bytes())?;
    println!("{}", path.display());
    Ok(())
}

fn stage(name: &str, a: &RunArgs) -> Result<()> {
    let cfg = load_config(a)?;
    cfg.validate()?;
    let _lock = OutputLock::acquire(&cfg.out_dir)?;
    run_stage(&cfg, name)?;
    log::info!("stage {name} written to {}", cfg.out_dir.join(name).display());
    Ok(())
}

fn run(a: &RunArgs) -> Result<()> {
    let cfg = load_config(a)?;
    let report = run_pipeline(&cfg)?;
    match &report.metrics {
        Some(m) => print_json(m),
        None => {
            println!("{}", cfg.out_dir.join(REPORT_FILE).display());
            Ok(())
        }
    }
}

fn report(a: &RunArgs) -> Result<()> {
    let cfg = load_config(a)?;
    cfg.validate()?;
    let _lock = OutputLock::acquire(&cfg.out_dir)?;
    build_report(&cfg)?;
    println!("{}", cfg.out_dir.join(REPORT_FILE).display());
    Ok(())
}

fn diagnose_cmd(a: &DiagnoseArgs) -> Result<()> {
    let images = read_embedding(&a.images)?.to_f64();
    let texts = match read_vocab(&a.texts) {
        Ok(v) => v.embeddings().to_f64(),
        Err(_) => read_embedding(&a.texts)?.to_f64(),
    };
    let d = diagnose(images.view(), texts.view())?;
    if let Some(out) = &a.out {
        let json = serde_json::to_vec_pretty(&d).map_err(|e| Error::Config(e.to_string()))?;
        write_file(&out.join("diagnosis.json"), &json)?;
        write_file(&out.join("histogram.csv"), histogram_csv(&d).as_bytes())?;
    }
    println!(
        "image-image mean {:.4}  image-text mean {:.4}  text-text mean {:.4}",
        d.image_image.mean, d.image_text.mean, d.text_text.mean
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Vocab(a) => stage("vocab", a),
        Command::Repr(a) => stage("repr", a),
        Command::Cluster(a) => stage("cluster", a),
        Command::Filter(a) => stage("filter", a),
        Command::Train(a) => stage("train", a),
        Command::Assign(a) => stage("assign", a),
        Command::Eval(a) => stage("eval", a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
        Command::Diagnose(a) => diagnose_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
