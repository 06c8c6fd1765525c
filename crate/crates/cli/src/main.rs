//! `vgs`: synthesize corpora, extract features, train, evaluate and align.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use vgs::config::RunConfig;
use vgs::corpus::{generate_synthetic, load_manifest, Corpus, Split, SyntheticSpec, MANIFEST_FILE};
use vgs::evaluation::{
    align_triple, embed_split, evaluate_all_directions, export_heatmap, load_model, recall_json, recall_table,
};
use vgs::frontends::{
    compute_logmel, load_image, load_waveform, preprocess_image, write_feature_dump, write_image_dump, Mode,
};
use vgs::objectives::{Direction, ScenarioName};
use vgs::trainer::{resume, train, TrainOptions};

#[derive(Parser)]
#[command(name = "vgs", version, about = "Visually grounded multilingual speech embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic image / English / Hindi caption corpus.
    Synth {
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Number of triples.
        #[arg(long)]
        n: Option<usize>,
        /// Generator seed.
        #[arg(long)]
        seed: Option<u64>,
        /// TOML file with generator settings; --n and --seed override it.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Dump a log-mel spectrogram or a normalized image tensor.
    Features {
        /// Input WAV file (16-bit PCM mono).
        #[arg(long, conflicts_with = "image", required_unless_present = "image")]
        wav: Option<PathBuf>,
        /// Input image file (PNG or JPEG).
        #[arg(long)]
        image: Option<PathBuf>,
        /// Run configuration (TOML); desk preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output feature dump.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a scenario and write per-epoch checkpoints and logs.
    Train {
        /// Run configuration (TOML); desk preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scenario: e-i, h-i, e-h, e-i-h or h-e-i-h (overrides the config).
        #[arg(long)]
        scenario: Option<String>,
        /// Corpus manifest, or the directory containing it.
        #[arg(long)]
        data: PathBuf,
        /// Directory for checkpoints and train_log.jsonl.
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint; its config hash must match.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Recall@k in every direction over a corpus split.
    Eval {
        /// Checkpoint to evaluate.
        #[arg(long)]
        ckpt: PathBuf,
        /// Corpus manifest, or the directory containing it.
        #[arg(long)]
        data: PathBuf,
        /// Split to evaluate.
        #[arg(long, value_enum, default_value_t = SplitArg::Val)]
        split: SplitArg,
        /// Comma-separated directions (e2i,i2e,h2i,i2h,e2h,h2e); all when omitted.
        #[arg(long, value_delimiter = ',')]
        directions: Option<Vec<String>>,
    },
    /// Hindi × English alignment matrix for one triple, as JSON and a heatmap.
    Align {
        /// Checkpoint to use.
        #[arg(long)]
        ckpt: PathBuf,
        /// Corpus manifest, or the directory containing it.
        #[arg(long)]
        data: PathBuf,
        /// Triple id.
        #[arg(long)]
        id: String,
        /// Output PNG; the matrix is written next to it with a .json extension.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(RunConfig::desk()),
    }
}

fn load_corpus(data: &Path) -> Result<Corpus> {
    let manifest = if data.is_dir() { data.join(MANIFEST_FILE) } else { data.to_path_buf() };
    Ok(load_manifest(&manifest)?)
}

fn synth(out: &Path, n: Option<usize>, seed: Option<u64>, spec: Option<&Path>) -> Result<()> {
    let mut s = match spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<SyntheticSpec>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(n) = n {
        s.n_triples = n;
    }
    if let Some(seed) = seed {
        s.seed = seed;
    }
    let corpus = generate_synthetic(&s, out)?;
    println!(
        "wrote {} triples ({} train, {} val) to {}",
        corpus.len(),
        corpus.n_train,
        corpus.n_val,
        out.display()
    );
    Ok(())
}

fn features(wav: Option<&Path>, image: Option<&Path>, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    match (wav, image) {
        (Some(w), None) => {
            let spec = compute_logmel(&load_waveform(w)?, &cfg.mel)?;
            write_feature_dump(&spec, out)?;
            println!("{} frames ({} valid) × {} mel bins", spec.frames, spec.valid_frames, spec.n_mels);
        }
        (None, Some(i)) => {
            let t = preprocess_image(&load_image(i)?, &cfg.image, Mode::Eval, cfg.train.seed)?;
            write_image_dump(&t, out)?;
            println!("{0}×{0}×3 image tensor", t.size);
        }
        _ => bail!("pass exactly one of --wav or --image"),
    }
    Ok(())
}

fn run_train(
    config: Option<&Path>,
    scenario: Option<&str>,
    data: &Path,
    out: &Path,
    resume_from: Option<&Path>,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = scenario {
        cfg.train.scenario = s.parse::<ScenarioName>()?;
    }
    cfg.validate()?;
    if let Some(ckpt) = resume_from {
        // refuse before touching the output directory
        load_model(ckpt, Some(&cfg))?;
    }
    let corpus = load_corpus(data)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), cfg.to_toml_string()?)?;
    let opts = TrainOptions {
        out_dir: Some(out.to_path_buf()),
        echo: true,
        stop_after: None,
    };
    let outcome = match resume_from {
        Some(ckpt) => resume(ckpt, &cfg, &corpus, &opts)?,
        None => train(&cfg, &corpus, &opts)?,
    };
    if let Some(p) = outcome.last_checkpoint {
        eprintln!("finished at epoch {}; last checkpoint {}", outcome.epoch, p.display());
    }
    Ok(())
}

fn eval(ckpt: &Path, data: &Path, split: Split, directions: Option<&[String]>) -> Result<()> {
    let (model, cfg, meta) = load_model(ckpt, None)?;
    let corpus = load_corpus(data)?;
    let lib = embed_split(&model, &cfg, &corpus, split)?;
    let ks: Vec<usize> = cfg.eval.ks.iter().copied().filter(|&k| k <= lib.len()).collect();
    let mut reports = evaluate_all_directions(&lib, &ks)?;
    if let Some(wanted) = directions {
        let wanted = wanted
            .iter()
            .map(|d| d.parse::<Direction>())
            .collect::<vgs::Result<Vec<_>>>()?;
        reports.retain(|r| wanted.contains(&r.direction));
    }
    println!("{}", serde_json::to_string_pretty(&recall_json(&reports))?);
    print!("{}", recall_table(&meta.scenario, &reports));
    Ok(())
}

fn align(ckpt: &Path, data: &Path, id: &str, out: &Path) -> Result<()> {
    let (model, cfg, _) = load_model(ckpt, None)?;
    let corpus = load_corpus(data)?;
    let m = align_triple(&model, &cfg, &corpus, id)?;
    export_heatmap(&m, out)?;
    let dump = serde_json::json!({
        "id": id,
        "rows": m.rows,
        "cols": m.cols,
        "row_scale_s": m.row_scale_s,
        "col_scale_s": m.col_scale_s,
        "values": m.values,
    });
    let json_path = out.with_extension("json");
    fs::write(&json_path, serde_json::to_string(&dump)?)?;
    println!("{}×{} matrix: {} and {}", m.rows, m.cols, out.display(), json_path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, n, seed, spec } => synth(&out, n, seed, spec.as_deref()),
        Command::Features { wav, image, config, out } => {
            features(wav.as_deref(), image.as_deref(), config.as_deref(), &out)
        }
        Command::Train {
            config,
            scenario,
            data,
            out,
            resume,
        } => run_train(config.as_deref(), scenario.as_deref(), &data, &out, resume.as_deref()),
        Command::Eval {
            ckpt,
            data,
            split,
            directions,
        } => eval(&ckpt, &data, split.into(), directions.as_deref()),
        Command::Align { ckpt, data, id, out } => align(&ckpt, &data, &id, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            // clap's usage errors span several lines; keep the part before "Usage:"
            let text = e.render().to_string();
            let msg: Vec<&str> = text
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect();
            eprintln!("{}", msg.join(" "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
