//! The `maestro` command line. Every artifact-producing command also writes a
//! run manifest: resolved configuration, seed, `git describe` and SHA-256 of
//! each output file.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::data::corrupt::{corrupt, CorruptMode, CorruptParams};
use crate::data::msax::{self, SymbolFile};
use crate::data::split::{stratified_split, SplitSpec};
use crate::data::synth::{generate_synthetic, SynthMode, SynthSpec};
use crate::data::{load_dataset, save_dataset, Dataset};
use crate::error::{MaestroError, Result};
use crate::fusion::export_attention_map;
use crate::metrics::{count_ops, evaluate, fit_through_origin, missingness_sweep, EvalReport, SweepPoint};
use crate::model::{CheckpointMeta, ForwardOptions, Maestro, TokenizedSample};
use crate::moe::expert_histogram;
use crate::rng::rng_for;
use crate::sax::{encode_series, RawSeries, SaxCodec, MISSING};
use crate::autodiff::Tape;
use crate::training::train;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "maestro", version, about = "Multimodal time-series classification pipeline")]
struct Cli {
    /// Seed for the command's randomness (overrides the config seed where one applies).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory or file, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write one MSAX symbol file per modality per sample.
    Tokenize(TokenizeArgs),
    /// Generate a synthetic dataset with a known dependency structure.
    Synth(SynthArgs),
    /// Corrupt chosen modalities of a dataset.
    Corrupt(CorruptArgs),
    /// Train a model and write the best checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint, optionally sweeping modality missingness.
    Eval(EvalArgs),
    /// Train with ablation toggles applied to the config.
    Ablate(AblateArgs),
    /// Top-1 expert histograms per availability pattern, as CSV.
    Experts(ExpertsArgs),
    /// Average cross-modal attention map over a split, as CSV.
    AttnMap(AttnMapArgs),
    /// Analytic sparse vs dense attention MAC counts, as CSV.
    CountOps(CountOpsArgs),
}

#[derive(Args, Debug, Serialize)]
struct TokenizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 20)]
    alpha: usize,
    /// Compression factor (T / W), either one value or `name=value,...` per modality.
    #[arg(long, default_value = "2")]
    word_length: String,
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    /// unimodal, xor-cross or redundant.
    #[arg(long)]
    mode: String,
    #[arg(long, default_value_t = 3)]
    modalities: usize,
    #[arg(long, default_value_t = 1)]
    variates: usize,
    #[arg(long, default_value_t = 32)]
    length: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 3000)]
    samples: usize,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
}

#[derive(Args, Debug, Serialize)]
struct CorruptArgs {
    #[arg(long)]
    data: PathBuf,
    /// replace_gaussian, additive_gaussian, additive_spikes or drop.
    #[arg(long)]
    mode: String,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long, default_value_t = 0.01)]
    spike_p: f64,
    #[arg(long, default_value_t = 5.0)]
    spike_mag: f64,
    /// Comma-separated modality names; all modalities when omitted.
    #[arg(long)]
    targets: Option<String>,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct AblateArgs {
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    no_sax: bool,
    #[arg(long)]
    no_modality_embedding: bool,
    #[arg(long)]
    no_dropout: bool,
    #[arg(long)]
    no_adaptive_budget: bool,
    #[arg(long)]
    no_moe: bool,
    /// Only write the ablated config.
    #[arg(long)]
    config_only: bool,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated per-modality drop probabilities.
    #[arg(long, default_value = "0.0")]
    missing: String,
    #[arg(long, default_value_t = 3)]
    trials: usize,
    /// train, valid, test or all.
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args, Debug, Serialize)]
struct ExpertsArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// One availability mask per line, e.g. `110` or `1,1,0`.
    #[arg(long)]
    patterns: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args, Debug, Serialize)]
struct AttnMapArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args, Debug, Serialize)]
struct CountOpsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "64,128,256,512,1024")]
    lens: String,
    /// Per-modality budget `u` for the encoder stage.
    #[arg(long, default_value_t = 1.0)]
    budget: f64,
}

/// Parses `argv` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("maestro: {}", e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &MaestroError) -> i32 {
    match e {
        MaestroError::Contract(_) | MaestroError::Config(_) => EXIT_USAGE,
        MaestroError::Numeric { .. } => EXIT_NUMERIC,
        MaestroError::Data(_) | MaestroError::Io { .. } | MaestroError::Json(_) => EXIT_DATA,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    let out = cli.out;
    match cli.command {
        Command::Tokenize(a) => cmd_tokenize(&a, seed, out),
        Command::Synth(a) => cmd_synth(&a, seed, out),
        Command::Corrupt(a) => cmd_corrupt(&a, seed, out),
        Command::Train(a) => {
            let cfg = load_config(a.config.as_deref(), seed)?;
            cmd_train("train", &a, &a.data, cfg, out)
        }
        Command::Ablate(a) => cmd_ablate(&a, seed, out),
        Command::Eval(a) => cmd_eval(&a, seed, out),
        Command::Experts(a) => cmd_experts(&a, seed, out),
        Command::AttnMap(a) => cmd_attn_map(&a, seed, out),
        Command::CountOps(a) => cmd_count_ops(&a, seed, out),
    }
}

#[derive(Serialize)]
struct RunManifest<'a, A: Serialize> {
    command: &'a str,
    args: &'a A,
    config: Option<&'a Config>,
    seed: Option<u64>,
    git_describe: String,
    outputs: BTreeMap<String, String>,
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| MaestroError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes the run manifest next to the outputs: `<dir>/run-manifest.json` for
/// directory outputs, `<file>.run.json` for single-file outputs.
fn write_manifest<A: Serialize>(
    command: &str,
    args: &A,
    config: Option<&Config>,
    seed: Option<u64>,
    target: &Path,
    files: &[PathBuf],
) -> Result<PathBuf> {
    let (path, root) = if target.is_dir() {
        (target.join("run-manifest.json"), target.to_path_buf())
    } else {
        let mut name = target.file_name().unwrap_or_default().to_os_string();
        name.push(".run.json");
        (target.with_file_name(name), target.parent().map(Path::to_path_buf).unwrap_or_default())
    };
    let mut outputs = BTreeMap::new();
    for f in files {
        let key = f.strip_prefix(&root).unwrap_or(f).to_string_lossy().into_owned();
        outputs.insert(key, sha256_file(f)?);
    }
    let m = RunManifest {
        command,
        args,
        config,
        seed,
        git_describe: git_describe(),
        outputs,
    };
    write_bytes(&path, serde_json::to_string_pretty(&m)?.as_bytes())?;
    Ok(path)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| MaestroError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| MaestroError::io(path, e))
}

fn out_dir(out: Option<PathBuf>, default: &str) -> Result<PathBuf> {
    let dir = out.unwrap_or_else(|| PathBuf::from(default));
    std::fs::create_dir_all(&dir).map_err(|e| MaestroError::io(&dir, e))?;
    Ok(dir)
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| MaestroError::contract(format!("bad {what} value {x:?}"))))
        .collect()
}

/// Per-modality compression factors from `2` or `acc=2,eda=4`.
fn compression_map(spec: &str, ds: &Dataset) -> Result<Vec<usize>> {
    if !spec.contains('=') {
        let c: usize = spec.trim().parse().map_err(|_| MaestroError::contract(format!("bad word length {spec:?}")))?;
        return Ok(vec![c; ds.modalities.len()]);
    }
    let mut map = BTreeMap::new();
    for part in spec.split(',') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| MaestroError::contract(format!("bad word length entry {part:?}")))?;
        let v: usize = v.trim().parse().map_err(|_| MaestroError::contract(format!("bad word length entry {part:?}")))?;
        map.insert(k.trim().to_string(), v);
    }
    ds.modalities
        .iter()
        .map(|m| {
            map.get(&m.name)
                .copied()
                .ok_or_else(|| MaestroError::contract(format!("no word length for modality {}", m.name)))
        })
        .collect()
}

fn cmd_tokenize(a: &TokenizeArgs, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let ds = load_dataset(&a.input)?;
    let codec = SaxCodec::new(a.alpha)?;
    let comp = compression_map(&a.word_length, &ds)?;
    if comp.contains(&0) {
        return Err(MaestroError::contract("word length factor must be >= 1"));
    }
    let dir = out_dir(out, "tokens")?;
    let mut files = Vec::new();
    for s in &ds.samples {
        for ((m, data), &c) in ds.modalities.iter().zip(&s.data).zip(&comp) {
            let w = m.length.div_ceil(c).max(1);
            let symbols = match data {
                None => vec![vec![MISSING; w]; m.variates],
                Some(rows) => rows
                    .iter()
                    .map(|r| encode_series(&RawSeries::new(r.clone(), m.hz)?, w, &codec, false))
                    .collect::<Result<_>>()?,
            };
            let bytes = msax::encode(&SymbolFile { alpha: a.alpha as u16, symbols })?;
            let path = dir.join(format!("{}.{}.msax", s.id, m.name));
            write_bytes(&path, &bytes)?;
            files.push(path);
        }
    }
    write_manifest("tokenize", a, None, seed, &dir, &files)?;
    println!("wrote {} symbol files to {}", files.len(), dir.display());
    Ok(())
}

fn dataset_files(dir: &Path, manifest: &Path, ds: &Dataset) -> Vec<PathBuf> {
    let mut files = vec![manifest.to_path_buf()];
    for s in &ds.samples {
        for (m, d) in ds.modalities.iter().zip(&s.data) {
            if d.is_some() {
                files.push(dir.join(format!("data/{}.{}.mmts", s.id, m.name)));
            }
        }
    }
    files
}

fn cmd_synth(a: &SynthArgs, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mode: SynthMode = a.mode.parse()?;
    let spec = SynthSpec {
        mode,
        modalities: a.modalities,
        variates: a.variates,
        length: a.length,
        classes: a.classes,
        samples: a.samples,
        noise: a.noise,
        seed: seed.unwrap_or(0),
    };
    let ds = generate_synthetic(&spec)?;
    let dir = out_dir(out, "synth")?;
    let manifest = save_dataset(&dir, &ds)?;
    write_manifest("synth", a, None, Some(spec.seed), &dir, &dataset_files(&dir, &manifest, &ds))?;
    println!("wrote {} samples to {}", ds.len(), manifest.display());
    Ok(())
}

fn cmd_corrupt(a: &CorruptArgs, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mode: CorruptMode = a.mode.parse()?;
    let mut ds = load_dataset(&a.data)?;
    let targets: Vec<usize> = match &a.targets {
        None => (0..ds.modalities.len()).collect(),
        Some(list) => list
            .split(',')
            .map(|n| {
                ds.modalities
                    .iter()
                    .position(|m| m.name == n.trim())
                    .ok_or_else(|| MaestroError::contract(format!("unknown modality {n}")))
            })
            .collect::<Result<_>>()?,
    };
    let params = CorruptParams {
        sigma: a.sigma,
        spike_p: a.spike_p,
        spike_mag: a.spike_mag,
    };
    let seed = seed.unwrap_or(0);
    let mut rng = rng_for(seed, 0xC0);
    ds.samples = ds
        .samples
        .iter()
        .map(|s| corrupt(s, mode, &params, &targets, &mut rng))
        .collect::<Result<_>>()?;
    let dir = out_dir(out, "corrupted")?;
    let manifest = save_dataset(&dir, &ds)?;
    write_manifest("corrupt", a, None, Some(seed), &dir, &dataset_files(&dir, &manifest, &ds))?;
    println!("wrote {} corrupted samples to {}", ds.len(), manifest.display());
    Ok(())
}

/// Deterministic split of a dataset into tokenized samples, seeded by the model config.
pub fn tokenized_split(model: &Maestro, ds: &Dataset, which: &str) -> Result<Vec<TokenizedSample>> {
    if ds.shape() != model.shape {
        return Err(MaestroError::data("dataset modalities or classes do not match the checkpoint"));
    }
    let sp = stratified_split(&ds.labels(), &SplitSpec { seed: model.config.seed, ..Default::default() })?;
    let idx: Vec<usize> = match which {
        "train" => sp.train,
        "valid" => sp.valid,
        "test" => sp.test,
        "all" => (0..ds.len()).collect(),
        other => return Err(MaestroError::contract(format!("unknown split {other}"))),
    };
    idx.iter().map(|&i| model.tokenize(&ds.samples[i].data, ds.samples[i].label)).collect()
}

fn cmd_train(command: &str, args: &impl Serialize, data: &Path, cfg: Config, out: Option<PathBuf>) -> Result<()> {
    let ds = load_dataset(data)?;
    let mut model = Maestro::new(cfg.clone(), ds.shape())?;
    let tr = tokenized_split(&model, &ds, "train")?;
    let va = tokenized_split(&model, &ds, "valid")?;
    let report = train(&mut model, &tr, &va, |l| {
        eprintln!("epoch {} p {:.3} train {:.6} val {:.6}", l.epoch, l.dropout_p, l.train_loss, l.val_loss);
    })?;
    let dir = out_dir(out, "run")?;
    let ckpt = dir.join("checkpoint.bin");
    model.save(
        &ckpt,
        &CheckpointMeta {
            seed: cfg.seed,
            epoch: report.best_epoch,
            val_loss: report.best_val_loss,
        },
    )?;
    let rep = dir.join("train_report.json");
    write_bytes(&rep, serde_json::to_string_pretty(&report)?.as_bytes())?;
    let conf = dir.join("config.toml");
    write_bytes(&conf, cfg.to_toml().as_bytes())?;
    write_manifest(command, args, Some(&cfg), Some(cfg.seed), &dir, &[ckpt.clone(), rep, conf])?;
    println!("best epoch {} val loss {:.6}; checkpoint {}", report.best_epoch, report.best_val_loss, ckpt.display());
    Ok(())
}

fn cmd_ablate(a: &AblateArgs, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = load_config(a.train.config.as_deref(), seed)?;
    let ab = &mut cfg.ablation;
    ab.no_sax |= a.no_sax;
    ab.no_modality_embedding |= a.no_modality_embedding;
    ab.no_dropout |= a.no_dropout;
    ab.no_adaptive_budget |= a.no_adaptive_budget;
    ab.no_moe |= a.no_moe;
    cfg.validate()?;
    if a.config_only {
        let dir = out_dir(out, "ablation")?;
        let conf = dir.join("config.toml");
        write_bytes(&conf, cfg.to_toml().as_bytes())?;
        write_manifest("ablate", a, Some(&cfg), Some(cfg.seed), &dir, std::slice::from_ref(&conf))?;
        println!("wrote {}", conf.display());
        return Ok(());
    }
    cmd_train("ablate", a, &a.train.data, cfg, out)
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    checkpoint: String,
    split: &'a str,
    samples: usize,
    epoch: usize,
    clean: EvalReport,
    sweep: Vec<SweepPoint>,
}

fn cmd_eval(a: &EvalArgs, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let (model, meta) = Maestro::load(&a.checkpoint)?;
    let ds = load_dataset(&a.data)?;
    let samples = tokenized_split(&model, &ds, &a.split)?;
    let levels: Vec<f64> = parse_list(&a.missing, "missingness")?;
    let sweep_seed = seed.unwrap_or(model.config.seed);
    let report = EvalOutput {
        checkpoint: a.checkpoint.display().to_string(),
        split: &a.split,
        samples: samples.len(),
        epoch: meta.epoch,
        clean: evaluate(&model, &samples)?,
        sweep: missingness_sweep(&model, &samples, &levels, a.trials, sweep_seed)?,
    };
    let path = out.unwrap_or_else(|| PathBuf::from("report.json"));
    write_bytes(&path, serde_json::to_string_pretty(&report)?.as_bytes())?;
    write_manifest("eval", a, Some(&model.config), Some(sweep_seed), &path, std::slice::from_ref(&path))?;
    println!("accuracy {:.4} macro-F1 {:.4}", report.clean.accuracy, report.clean.macro_f1);
    for p in &report.sweep {
        println!("missing {:.2}: accuracy {:.4} +- {:.4}", p.level, p.accuracy_mean, p.accuracy_std);
    }
    Ok(())
}

pub fn parse_pattern(line: &str, m: usize) -> Result<Vec<f64>> {
    let bits: Vec<f64> = line
        .chars()
        .filter(|c| !c.is_whitespace() && *c != ',')
        .map(|c| match c {
            '0' => Ok(0.0),
            '1' => Ok(1.0),
            _ => Err(MaestroError::contract(format!("bad availability pattern {line:?}"))),
        })
        .collect::<Result<_>>()?;
    if bits.len() != m || bits.iter().all(|&b| b == 0.0) {
        return Err(MaestroError::contract(format!("pattern {line:?} needs {m} bits with at least one 1")));
    }
    Ok(bits)
}

/// Top-1 expert counts per availability pattern over `samples`.
pub fn routing_histograms(model: &Maestro, samples: &[TokenizedSample], patterns: &[Vec<f64>], seed: u64) -> Result<Vec<Vec<u64>>> {
    let mut decisions = Vec::new();
    for (pi, pat) in patterns.iter().enumerate() {
        for s in samples {
            let mut s = s.clone();
            for (j, &b) in pat.iter().enumerate() {
                if b == 0.0 {
                    s.drop_modality(j);
                }
            }
            let tape = Tape::new();
            let out = model.forward(&tape, &model.params, &s, &ForwardOptions { seed, ..Default::default() })?;
            let r = out.routing.ok_or_else(|| MaestroError::contract("model has no expert router (no_moe ablation)"))?;
            decisions.push((pi, r));
        }
    }
    Ok(expert_histogram(&decisions, patterns.len(), model.config.moe.experts))
}

fn cmd_experts(a: &ExpertsArgs, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let (model, _) = Maestro::load(&a.checkpoint)?;
    let ds = load_dataset(&a.data)?;
    let samples = tokenized_split(&model, &ds, &a.split)?;
    let text = std::fs::read_to_string(&a.patterns).map_err(|e| MaestroError::io(&a.patterns, e))?;
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).collect();
    let patterns = lines
        .iter()
        .map(|l| parse_pattern(l, model.modality_count()))
        .collect::<Result<Vec<_>>>()?;
    let seed = seed.unwrap_or(model.config.seed);
    let hist = routing_histograms(&model, &samples, &patterns, seed)?;
    let mut csv = String::from("pattern");
    for e in 0..model.config.moe.experts {
        csv.push_str(&format!(",expert{e}"));
    }
    csv.push('\n');
    for (l, row) in lines.iter().zip(&hist) {
        let bits: String = l.chars().filter(|c| *c == '0' || *c == '1').collect();
        csv.push_str(&bits);
        for c in row {
            csv.push_str(&format!(",{c}"));
        }
        csv.push('\n');
    }
    let path = out.unwrap_or_else(|| PathBuf::from("experts.csv"));
    write_bytes(&path, csv.as_bytes())?;
    write_manifest("experts", a, Some(&model.config), Some(seed), &path, std::slice::from_ref(&path))?;
    print!("{csv}");
    Ok(())
}

fn cmd_attn_map(a: &AttnMapArgs, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let (model, _) = Maestro::load(&a.checkpoint)?;
    let ds = load_dataset(&a.data)?;
    let samples = tokenized_split(&model, &ds, &a.split)?;
    if samples.is_empty() {
        return Err(MaestroError::data("split is empty"));
    }
    let seed = seed.unwrap_or(model.config.seed);
    let mut avg: Vec<f64> = Vec::new();
    let mut boundaries = Vec::new();
    for s in &samples {
        let tape = Tape::new();
        let o = model.forward(&tape, &model.params, s, &ForwardOptions { seed, ..Default::default() })?;
        let map = o.cross_trace.dense_map();
        if avg.is_empty() {
            avg = vec![0.0; map.len()];
            boundaries = o.boundaries.clone();
        }
        avg.iter_mut().zip(&map).for_each(|(x, y)| *x += y);
    }
    avg.iter_mut().for_each(|x| *x /= samples.len() as f64);
    let names: Vec<String> = model.shape.modalities.iter().map(|m| m.name.clone()).collect();
    let path = out.unwrap_or_else(|| PathBuf::from("map.csv"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| MaestroError::io(dir, e))?;
    }
    export_attention_map(&path, &avg, &boundaries, &names)?;
    write_manifest("attn-map", a, Some(&model.config), Some(seed), &path, std::slice::from_ref(&path))?;
    println!("wrote {}x{} map to {}", boundaries.last().map_or(0, |b| b.1), boundaries.last().map_or(0, |b| b.1), path.display());
    Ok(())
}

fn cmd_count_ops(a: &CountOpsArgs, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(a.config.as_deref(), seed)?;
    let lens: Vec<usize> = parse_list(&a.lens, "length")?;
    if lens.contains(&0) {
        return Err(MaestroError::contract("lengths must be positive"));
    }
    let rows = count_ops(&cfg.attention_config(), &lens, a.budget, cfg.fusion.budget);
    let mut csv = String::from("len,stage,sparse_attention,dense_attention,sparse_total,dense_total\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.len,
            r.stage,
            r.sparse_attention(),
            r.dense_attention(),
            r.sparse.total(),
            r.dense.total()
        ));
    }
    let path = out.unwrap_or_else(|| PathBuf::from("ops.csv"));
    write_bytes(&path, csv.as_bytes())?;
    write_manifest("count-ops", a, Some(&cfg), Some(cfg.seed), &path, std::slice::from_ref(&path))?;
    for stage in ["encoder", "cross"] {
        let sel: Vec<_> = rows.iter().filter(|r| r.stage == stage).collect();
        let x: Vec<f64> = sel.iter().map(|r| r.len as f64).collect();
        let llog: Vec<f64> = x.iter().map(|l| l * l.ln()).collect();
        let lsq: Vec<f64> = x.iter().map(|l| l * l).collect();
        let sparse: Vec<f64> = sel.iter().map(|r| r.sparse_attention() as f64).collect();
        let dense: Vec<f64> = sel.iter().map(|r| r.dense_attention() as f64).collect();
        if sel.len() >= 2 {
            println!(
                "{stage}: sparse ~ a L ln L (R^2 {:.5}), dense ~ a L^2 (R^2 {:.5})",
                fit_through_origin(&llog, &sparse).1,
                fit_through_origin(&lsq, &dense).1
            );
        }
    }
    Ok(())
}
