use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use drumstyle_core::autodiff::check_battery;
use drumstyle_core::dsp::AudioClip;
use drumstyle_core::envelope::{extract_class_envelope, DrumClass, EnvelopeParams};
use drumstyle_core::eval::{
    control_eval_protocol, fad_from_clips, fad_from_embeddings, write_scatter_csv, ControlEvalConfig, ControlMode,
    ReferenceData, ScaleNorm,
};
use drumstyle_core::gan::{generate_batch, train, Checkpoint, ConditionVector, TrainingSet};
use drumstyle_core::io::{
    encode_envelope, read_embeddings, read_manifest, read_wav, write_manifest, write_wav, LossLog, RunConfig, WavFormat,
};
use drumstyle_core::sampler::{class_histogram, DatasetManifest, ManifestEntry, Sampler, SamplingMode};
use drumstyle_core::synth::synth_dataset;
use drumstyle_core::timbre::{
    descriptors, match_descriptors, Descriptor, DescriptorConfig, DescriptorMask, DescriptorVector,
};

#[derive(Parser)]
#[command(name = "drumstyle", version, about = "Descriptor-controlled drum synthesis toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Average Hilbert envelope per class of a manifest, written as ENV1 files
    EnvelopesExtract(EnvelopesArgs),
    /// Brightness, depth and warmth of a WAV file
    Describe(DescribeArgs),
    /// Finite-difference check of the autodiff ops and descriptors
    Gradcheck(GradcheckArgs),
    /// Train the toy GAN on a manifest or on the built-in synthetic set
    TrainToy(TrainArgs),
    /// Generate clips from a checkpoint
    Generate(GenerateArgs),
    /// Optimize a clip's samples towards target descriptors
    MatchDescriptors(MatchArgs),
    /// Fréchet audio distance between two WAV directories or embedding files
    Fad(FadArgs),
    /// Descriptor-control evaluation of a checkpoint
    EvalControl(EvalArgs),
    /// Class histogram of a sampler over a manifest
    SampleReport(SampleArgs),
    /// Write the synthetic kick/snare/hat set and its manifest
    SynthDataset(SynthArgs),
}

#[derive(Args)]
struct EnvelopesArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = EnvelopeParams::default().length)]
    length: usize,
    #[arg(long, default_value_t = EnvelopeParams::default().smooth_len)]
    smooth: usize,
    #[arg(long, default_value_t = EnvelopeParams::default().fade_len)]
    fade: usize,
}

#[derive(Args)]
struct DescribeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    json: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Longest descriptor input; op inputs go up to 256
    #[arg(long, default_value_t = 1024)]
    max_len: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Training manifest; the built-in synthetic set is used when absent
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Loss log CSV
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// Class name; clips cycle through all classes when absent
    #[arg(long)]
    class: Option<String>,
    #[arg(long)]
    brightness: Option<f64>,
    #[arg(long)]
    depth: Option<f64>,
    #[arg(long)]
    warmth: Option<f64>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "float32")]
    format: WavFormat,
}

#[derive(Args)]
struct MatchArgs {
    /// Starting clip; white noise of --length samples when absent
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    brightness: Option<f64>,
    #[arg(long)]
    depth: Option<f64>,
    #[arg(long)]
    warmth: Option<f64>,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    step_size: f64,
    #[arg(long, default_value_t = 4096)]
    length: usize,
    #[arg(long, default_value_t = 16000)]
    sample_rate: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "float32")]
    format: WavFormat,
}

#[derive(Args)]
struct FadArgs {
    #[arg(long, requires = "dir_b", conflicts_with_all = ["emb_a", "emb_b"])]
    dir_a: Option<PathBuf>,
    #[arg(long, requires = "dir_a")]
    dir_b: Option<PathBuf>,
    /// F32M embedding file
    #[arg(long, requires = "emb_b")]
    emb_a: Option<PathBuf>,
    #[arg(long, requires = "emb_a")]
    emb_b: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    descriptor: Descriptor,
    #[arg(long, default_value = "single")]
    mode: ControlMode,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    class: Option<String>,
    #[arg(long, default_value = "per_class")]
    scale: ScaleNorm,
    /// Directory for report.json and scatter.csv
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "balanced")]
    mode: SamplingMode,
    #[arg(long, default_value_t = 100_000)]
    draws: usize,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// kick,snare,hat
    #[arg(long, default_value = "0.1,0.6,0.3")]
    proportions: String,
    #[arg(long, default_value_t = 16000)]
    sample_rate: u32,
    #[arg(long, default_value_t = 4096)]
    length: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "float32")]
    format: WavFormat,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

/// Manifest paths are taken relative to the manifest's directory.
fn load_manifest_clips(path: &Path) -> Result<Vec<(DrumClass, AudioClip)>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let entries = read_manifest(path).with_context(|| format!("reading {}", path.display()))?;
    if entries.is_empty() {
        bail!("manifest {} has no entries", path.display());
    }
    entries
        .into_iter()
        .map(|e| {
            let clip = read_clip(&base.join(&e.path))?;
            Ok((e.class, clip))
        })
        .collect()
}

fn read_clip(p: &Path) -> Result<AudioClip> {
    read_wav(p).with_context(|| format!("reading {}", p.display()))
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    v.sort();
    if v.is_empty() {
        bail!("no .wav files in {}", dir.display());
    }
    Ok(v)
}

fn targets(b: Option<f64>, d: Option<f64>, w: Option<f64>) -> (DescriptorVector, DescriptorMask) {
    let mut v = DescriptorVector::default();
    let mut on = Vec::new();
    for (k, x) in [(Descriptor::Brightness, b), (Descriptor::Depth, d), (Descriptor::Warmth, w)] {
        if let Some(x) = x {
            v.set(k, x);
            on.push(k);
        }
    }
    (v, DescriptorMask::from_list(&on))
}

fn class_index(classes: &[DrumClass], name: &str) -> Result<usize> {
    classes
        .iter()
        .position(|c| c.name() == name)
        .with_context(|| format!("unknown class '{name}' (checkpoint has {})", join(classes)))
}

fn join(classes: &[DrumClass]) -> String {
    classes.iter().map(|c| c.name()).collect::<Vec<_>>().join(", ")
}

fn envelopes_extract(a: EnvelopesArgs) -> Result<()> {
    let items = load_manifest_clips(&a.manifest)?;
    let params = EnvelopeParams { length: a.length, smooth_len: a.smooth, fade_len: a.fade };
    fs::create_dir_all(&a.out)?;
    let mut classes: Vec<DrumClass> = items.iter().map(|(c, _)| c.clone()).collect();
    classes.sort();
    classes.dedup();
    let mut written = Vec::new();
    for class in classes {
        let clips: Vec<AudioClip> = items.iter().filter(|(c, _)| *c == class).map(|(_, x)| x.clone()).collect();
        let env = extract_class_envelope(class.clone(), &clips, &params)?;
        let path = a.out.join(format!("{}.env", class.name()));
        fs::write(&path, encode_envelope(&env))?;
        written.push(json!({"class": class.name(), "clips": clips.len(), "path": path.display().to_string()}));
    }
    print_json(&json!({ "envelopes": written }))
}

fn describe(a: DescribeArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?.descriptors;
    let clip = read_clip(&a.input)?;
    let d = descriptors(&clip, &cfg)?;
    if a.json {
        print_json(&json!({"brightness": d.brightness, "depth": d.depth, "warmth": d.warmth}))
    } else {
        println!("brightness {:.4}\ndepth {:.4}\nwarmth {:.4}", d.brightness, d.depth, d.warmth);
        Ok(())
    }
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let op_lengths: Vec<usize> = [16usize, 32, 64, 128, 256].into_iter().filter(|l| *l <= a.max_len).collect();
    let desc_lengths: Vec<usize> = [128usize, 256, 512, 1024].into_iter().filter(|l| *l <= a.max_len).collect();
    if desc_lengths.is_empty() {
        bail!("--max-len must be at least 128");
    }
    let results = check_battery(a.seed, a.trials, &op_lengths, &desc_lengths)?;
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let checks: Vec<_> = results.iter().map(|(n, e)| json!({"check": n, "max_rel_error": e})).collect();
    print_json(
        &json!({"checks": checks, "max_rel_error": worst, "tolerance": a.tolerance, "pass": worst < a.tolerance}),
    )?;
    if worst >= a.tolerance {
        bail!("gradient check failed: max relative error {worst:.3e} >= {:.1e}", a.tolerance);
    }
    Ok(())
}

fn white_noise(seed: u64, n: usize) -> Vec<f64> {
    use rand::Rng;
    let mut rng = drumstyle_core::gan::stream_rng(seed, 0);
    (0..n).map(|_| 0.1 * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
}

fn train_toy(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    let items = match &a.manifest {
        Some(m) => load_manifest_clips(m)?,
        None => synth_dataset(cfg.synth.n, cfg.synth.proportions, cfg.gan.sample_rate, cfg.gan.output_length, a.seed)?,
    };
    let set = TrainingSet::new(items, &cfg.gan, &cfg.descriptors)?;
    let mut log = match &a.log {
        Some(p) => Some(LossLog::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)?),
        None => None,
    };
    let mut log_err = None;
    let out = train(&cfg.gan, &cfg.train, &cfg.descriptors, &set, a.seed, |r| {
        if let Some(l) = log.as_mut() {
            if let Err(e) = l.push(r) {
                log_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    if let Some(l) = log {
        l.finish()?;
    }
    out.checkpoint.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let last = out.log.last();
    let (first_l1, final_l1) = out.epoch_desc_l1().unzip();
    print_json(&json!({
        "steps": out.log.len(),
        "dataset": set.len(),
        "classes": set.classes().iter().map(|c| c.name()).collect::<Vec<_>>(),
        "epoch_steps": out.epoch_steps,
        "initial_epoch_desc_l1": first_l1,
        "final_epoch_desc_l1": final_l1,
        "final_d_loss": last.map(|r| r.d_loss),
        "final_g_loss": last.map(|r| r.g_loss),
        "autofade_alphas": out.checkpoint.discriminator.alphas(),
        "generator_params": out.checkpoint.generator.params().num_values(),
        "discriminator_params": out.checkpoint.discriminator.params().num_values(),
    }))
}

fn class_mean(ckpt: &Checkpoint, c: usize) -> DescriptorVector {
    let v = ckpt.class_descriptors(c);
    let n = v.len().max(1) as f64;
    let mut acc = [0.0; 3];
    for d in &v {
        for (a, x) in acc.iter_mut().zip(d.to_array()) {
            *a += x / n;
        }
    }
    DescriptorVector::from_array(acc)
}

fn generate(a: GenerateArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let fixed = a.class.as_deref().map(|c| class_index(&ckpt.classes, c)).transpose()?;
    let conds: Vec<ConditionVector> = (0..a.n)
        .map(|i| {
            let class = fixed.unwrap_or(i % ckpt.classes.len());
            let mut d = class_mean(&ckpt, class);
            for (k, v) in
                [(Descriptor::Brightness, a.brightness), (Descriptor::Depth, a.depth), (Descriptor::Warmth, a.warmth)]
            {
                if let Some(v) = v {
                    d.set(k, v);
                }
            }
            ConditionVector { class, descriptors: Some(d) }
        })
        .collect();
    let report = generate_batch(&ckpt, &conds, a.seed)?;
    fs::create_dir_all(&a.out)?;
    let mut entries = Vec::new();
    for (i, (clip, c)) in report.clips.iter().zip(&conds).enumerate() {
        let name = format!("{}_{i:05}.wav", ckpt.classes[c.class].name());
        write_wav(clip, &a.out.join(&name), a.format)?;
        entries.push(ManifestEntry { path: name, class: ckpt.classes[c.class].clone() });
    }
    let mut f = fs::File::create(a.out.join("manifest.jsonl"))?;
    write_manifest(&entries, &mut f)?;
    f.flush()?;
    print_json(&json!({
        "clips": report.clips.len(),
        "wall_seconds": report.wall_seconds,
        "clips_per_second": report.clips_per_second,
        "realtime_factor": report.realtime_factor,
    }))
}

fn match_cmd(a: MatchArgs) -> Result<()> {
    let init = match &a.input {
        Some(p) => read_clip(p)?,
        None => AudioClip::new(white_noise(a.seed, a.length), a.sample_rate)?,
    };
    let (target, mask) = targets(a.brightness, a.depth, a.warmth);
    if mask.is_empty() {
        bail!("give at least one of --brightness, --depth, --warmth");
    }
    let cfg = DescriptorConfig::default();
    let before = descriptors(&init, &cfg)?;
    let out = match_descriptors(&init, &target, mask, a.steps, a.step_size, &cfg)?;
    write_wav(&out.clip, &a.out, a.format)?;
    print_json(&json!({
        "descriptors": mask.to_string(),
        "initial": before,
        "achieved": out.achieved,
        "initial_loss": out.initial_loss,
        "final_loss": out.final_loss,
    }))
}

fn fad(a: FadArgs) -> Result<()> {
    let value = match (a.dir_a, a.dir_b, a.emb_a, a.emb_b) {
        (Some(da), Some(db), None, None) => {
            let mel = load_config(a.config.as_deref())?.mel;
            let load = |d: &Path| -> Result<Vec<AudioClip>> { wav_files(d)?.iter().map(|p| read_clip(p)).collect() };
            fad_from_clips(&load(&da)?, &load(&db)?, &mel)?
        }
        (None, None, Some(ea), Some(eb)) => {
            let load = |p: &Path| read_embeddings(p).with_context(|| format!("reading {}", p.display()));
            fad_from_embeddings(&load(&ea)?, &load(&eb)?)?
        }
        _ => bail!("give either --dir-a/--dir-b or --emb-a/--emb-b"),
    };
    println!("{value}");
    Ok(())
}

fn eval_control(a: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    if !ckpt.config.descriptors.contains(a.descriptor) {
        bail!("checkpoint is not conditioned on {} (conditioned on: {})", a.descriptor.name(), ckpt.config.descriptors);
    }
    let class = a.class.as_deref().map(|c| class_index(&ckpt.classes, c)).transpose()?;
    let cfg = ControlEvalConfig {
        descriptor: a.descriptor,
        mode: a.mode,
        n_per_level: a.n,
        seed: a.seed,
        class,
        scale: a.scale,
    };
    let out = control_eval_protocol(&ckpt, &ReferenceData::from_checkpoint(&ckpt), &cfg)?;
    fs::create_dir_all(&a.out_dir)?;
    let csv_path = a.out_dir.join("scatter.csv");
    write_scatter_csv(&out.records, a.mode, fs::File::create(&csv_path)?)?;
    let report = json!({
        "descriptor": a.descriptor.name(),
        "mode": a.mode.to_string(),
        "n_per_level": a.n,
        "records": out.records.len(),
        "summary": out.summary,
        "ordering": out.ordering,
        "mae": out.mae,
        "regression": out.regression.as_ref().ok(),
        "regression_error": out.regression.as_ref().err(),
    });
    fs::write(a.out_dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    print_json(&serde_json::to_value(&out.summary)?)
}

fn sample_report(a: SampleArgs) -> Result<()> {
    let entries = read_manifest(&a.manifest).with_context(|| format!("reading {}", a.manifest.display()))?;
    let manifest = DatasetManifest::new(entries)?;
    let labels = manifest.labels();
    let mut s = Sampler::new(&manifest, a.mode, a.seed)?;
    let draws: Vec<usize> = (0..a.draws).map(|_| labels[s.sample()]).collect();
    let h = class_histogram(&draws, manifest.classes().len())?;
    let classes: Vec<_> = manifest
        .classes()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            json!({
                "class": c.name(),
                "items": manifest.members(i).len(),
                "draws": h.counts[i],
                "frequency": h.frequencies()[i],
            })
        })
        .collect();
    print_json(&json!({"mode": a.mode.to_string(), "draws": a.draws, "classes": classes, "chi_square": h.chi_square}))
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let p: Vec<f64> = a
        .proportions
        .split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad proportion '{s}'")))
        .collect::<Result<_>>()?;
    let p: [f64; 3] = p.try_into().map_err(|_| anyhow::anyhow!("--proportions needs three values (kick,snare,hat)"))?;
    let items = synth_dataset(a.n, p, a.sample_rate, a.length, a.seed)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut entries = Vec::with_capacity(items.len());
    for (i, (class, clip)) in items.iter().enumerate() {
        let name = format!("{}_{i:05}.wav", class.name());
        write_wav(clip, &a.out.join(&name), a.format).with_context(|| format!("writing {name}"))?;
        entries.push(ManifestEntry { path: name, class: class.clone() });
    }
    let mut f = fs::File::create(a.out.join("manifest.jsonl"))?;
    write_manifest(&entries, &mut f)?;
    f.flush()?;
    let mut counts = std::collections::BTreeMap::new();
    for e in &entries {
        *counts.entry(e.class.name().to_string()).or_insert(0usize) += 1;
    }
    print_json(&json!({"clips": entries.len(), "counts": counts}))
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::EnvelopesExtract(a) => envelopes_extract(a),
        Cmd::Describe(a) => describe(a),
        Cmd::Gradcheck(a) => gradcheck(a),
        Cmd::TrainToy(a) => train_toy(a),
        Cmd::Generate(a) => generate(a),
        Cmd::MatchDescriptors(a) => match_cmd(a),
        Cmd::Fad(a) => fad(a),
        Cmd::EvalControl(a) => eval_control(a),
        Cmd::SampleReport(a) => sample_report(a),
        Cmd::SynthDataset(a) => synth_cmd(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // library errors already embed their source's message
            let mut msg = String::new();
            for cause in e.chain() {
                let c = cause.to_string();
                if !msg.ends_with(&c) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&c);
                }
            }
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
