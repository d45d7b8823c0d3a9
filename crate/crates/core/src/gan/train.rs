use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::{Graph, Tensor, Var};
use crate::dsp::AudioClip;
use crate::envelope::{extract_class_envelope, DrumClass, EnvelopeParams, EnvelopeTable};
use crate::error::{bail, Error, Result};
use crate::sampler::{DatasetManifest, ManifestEntry, Sampler};
use crate::timbre::{descriptor_loss_var, descriptor_vars, descriptors, DescriptorConfig, DescriptorVector};

use super::checkpoint::Checkpoint;
use super::config::{GanConfig, TrainConfig};
use super::loss::wgan_lp_loss;
use super::model::{sample_latent, ConditionVector, Discriminator, DiscriminatorPath, Generator, NoiseDraw};
use super::params::{add_scaled, Adam};

/// RNG for substream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_INIT: u64 = 0;
const STREAM_SAMPLER: u64 = 1;
const STREAM_TRAIN: u64 = 2;

/// Clips with class labels and their measured descriptors, all fitted to the
/// model's output length.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    clips: Vec<AudioClip>,
    manifest: DatasetManifest,
    labels: Vec<usize>,
    descriptors: Vec<DescriptorVector>,
}

impl TrainingSet {
    pub fn new(items: Vec<(DrumClass, AudioClip)>, cfg: &GanConfig, desc_cfg: &DescriptorConfig) -> Result<Self> {
        if items.is_empty() {
            bail!(InvalidInput, "training set is empty");
        }
        let mut entries = Vec::with_capacity(items.len());
        let mut clips = Vec::with_capacity(items.len());
        for (i, (class, clip)) in items.into_iter().enumerate() {
            if clip.sample_rate() != cfg.sample_rate {
                bail!(
                    InvalidInput,
                    "clip {i} has sample rate {}, model runs at {}",
                    clip.sample_rate(),
                    cfg.sample_rate
                );
            }
            entries.push(ManifestEntry { path: i.to_string(), class });
            clips.push(clip.fit_length(cfg.output_length));
        }
        let manifest = DatasetManifest::new(entries)?;
        let labels = manifest.labels();
        let descriptors = clips.par_iter().map(|c| descriptors(c, desc_cfg)).collect::<Result<Vec<_>>>()?;
        Ok(Self { clips, manifest, labels, descriptors })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn classes(&self) -> &[DrumClass] {
        self.manifest.classes()
    }

    pub fn clips(&self) -> &[AudioClip] {
        &self.clips
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn descriptors(&self) -> &[DescriptorVector] {
        &self.descriptors
    }

    fn condition(&self, i: usize) -> ConditionVector {
        ConditionVector { class: self.labels[i], descriptors: Some(self.descriptors[i]) }
    }
}

/// Envelope extraction settings for a given output length: the default
/// smoothing and fade durations scaled by `length / 65536`.
pub fn envelope_params_for(length: usize) -> EnvelopeParams {
    let d = EnvelopeParams::default();
    let scale = |v: usize| ((v * length) / d.length).max(1);
    EnvelopeParams { length, smooth_len: scale(d.smooth_len) | 1, fade_len: scale(d.fade_len).min(length) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRecord {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub desc_l1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LossRecord>,
    /// Steps per epoch, `ceil(dataset / batch)`.
    pub epoch_steps: usize,
}

impl TrainOutcome {
    /// Mean descriptor L1 of the first and last epoch of logged steps.
    pub fn epoch_desc_l1(&self) -> Option<(f64, f64)> {
        if self.log.is_empty() {
            return None;
        }
        let k = self.epoch_steps.min(self.log.len());
        let mean = |r: &[LossRecord]| r.iter().map(|x| x.desc_l1).sum::<f64>() / r.len() as f64;
        Some((mean(&self.log[..k]), mean(&self.log[self.log.len() - k..])))
    }
}

fn diverged(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(_) => Error::Diverged { step },
        e => e,
    }
}

fn check_finite(step: usize, vals: &[f64]) -> Result<()> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged { step })
    }
}

/// Alternating critic/generator training with WGAN-LP and, when the model
/// is descriptor-conditioned, an L1 loss between target and produced
/// descriptors on the generator side.
///
/// The penalty's parameter gradient needs the derivative of `‖∇ₓD‖` with
/// respect to the critic weights. It is taken as a central difference of
/// `∇_θ D` along the unit input-gradient direction, which avoids
/// differentiating through the backward pass.
pub fn train(
    cfg: &GanConfig,
    tcfg: &TrainConfig,
    desc_cfg: &DescriptorConfig,
    data: &TrainingSet,
    seed: u64,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    tcfg.validate()?;
    desc_cfg.validate(cfg.sample_rate)?;
    let classes = data.classes().to_vec();
    let n_classes = classes.len();

    let mut init_rng = stream_rng(seed, STREAM_INIT);
    let mut gen = Generator::init(cfg, n_classes, &mut init_rng)?;
    let mut disc = Discriminator::init(cfg, n_classes, &mut init_rng)?;

    let envelopes = if cfg.use_envelope {
        let params = envelope_params_for(cfg.output_length);
        classes
            .iter()
            .enumerate()
            .map(|(c, class)| {
                let clips: Vec<AudioClip> = data.manifest.members(c).iter().map(|&i| data.clips[i].clone()).collect();
                extract_class_envelope(class.clone(), &clips, &params)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let env_of = |c: usize| envelopes.get(c);

    let mut g_opt = Adam::new(gen.params(), tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.adam_eps);
    let mut d_opt = Adam::new(disc.params(), tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.adam_eps);
    let mut sampler = Sampler::new(&data.manifest, tcfg.sampling, stream_rng(seed, STREAM_SAMPLER).gen())?;
    let mut rng = stream_rng(seed, STREAM_TRAIN);
    let b = tcfg.batch_size;
    let mask = cfg.descriptors;
    let mut last_norms: Vec<f64> = Vec::new();
    let mut log = Vec::with_capacity(tcfg.steps);

    for step in 0..tcfg.steps {
        let wrap = diverged(step);

        // critic update
        let idx = sampler.sample_batch(b);
        let conds: Vec<ConditionVector> = idx.iter().map(|&i| data.condition(i)).collect();
        let fakes: Vec<Vec<f64>> = {
            let mut g = Graph::new();
            let gp = gen.params().bind(&mut g, false)?;
            let mut out = Vec::with_capacity(b);
            for c in &conds {
                let z = sample_latent(cfg, &mut rng);
                let noise = NoiseDraw::sample(cfg, &mut rng);
                let y = gen.forward(&mut g, &gp, &z, c, &noise, env_of(c.class)).map_err(&wrap)?;
                out.push(g.data(y).to_vec());
            }
            out
        };
        let (real_scores, fake_scores, mut d_grads) = {
            let mut g = Graph::new();
            let dp = disc.params().bind(&mut g, true)?;
            let (mut rs, mut fs, mut terms) = (Vec::new(), Vec::new(), Vec::new());
            for (k, c) in conds.iter().enumerate() {
                let xr = g.constant(Tensor::vector(data.clips[idx[k]].samples().to_vec()))?;
                let sr = disc.forward(&mut g, &dp, xr, c, DiscriminatorPath::Full).map_err(&wrap)?;
                let xf = g.constant(Tensor::vector(fakes[k].clone()))?;
                let sf = disc.forward(&mut g, &dp, xf, c, DiscriminatorPath::Full).map_err(&wrap)?;
                rs.push(g.item(sr));
                fs.push(g.item(sf));
                terms.push(g.sub(sf, sr)?);
            }
            let all = g.concat(&terms)?;
            let loss = g.mean(all)?;
            let grads = g.backward(loss).map_err(&wrap)?;
            (rs, fs, disc.params().collect_grads(&grads, &dp))
        };
        if tcfg.lambda_lp > 0.0 && step % tcfg.penalty_interval == 0 {
            last_norms.clear();
            let weight = tcfg.lambda_lp * tcfg.penalty_interval as f64 / b as f64;
            for (k, c) in conds.iter().enumerate() {
                let u: f64 = rng.gen();
                let real = data.clips[idx[k]].samples();
                let xhat: Vec<f64> = real.iter().zip(&fakes[k]).map(|(r, f)| u * r + (1.0 - u) * f).collect();
                let gx = {
                    let mut g = Graph::new();
                    let dp = disc.params().bind(&mut g, false)?;
                    let x = g.param(Tensor::vector(xhat.clone()))?;
                    let s = disc.forward(&mut g, &dp, x, c, DiscriminatorPath::Full).map_err(&wrap)?;
                    g.backward(s).map_err(&wrap)?.get_or_zeros(x, xhat.len())
                };
                let norm = gx.iter().map(|v| v * v).sum::<f64>().sqrt();
                last_norms.push(norm);
                if norm <= 1.0 {
                    continue;
                }
                let h = tcfg.penalty_fd_step;
                let coef = weight * 2.0 * (norm - 1.0) / (2.0 * h);
                for sign in [1.0, -1.0] {
                    let shifted: Vec<f64> = xhat.iter().zip(&gx).map(|(x, d)| x + sign * h * d / norm).collect();
                    let mut g = Graph::new();
                    let dp = disc.params().bind(&mut g, true)?;
                    let x = g.constant(Tensor::vector(shifted))?;
                    let s = disc.forward(&mut g, &dp, x, c, DiscriminatorPath::Full).map_err(&wrap)?;
                    let grads = g.backward(s).map_err(&wrap)?;
                    add_scaled(&mut d_grads, &disc.params().collect_grads(&grads, &dp), sign * coef);
                }
            }
        }
        for gr in &d_grads {
            check_finite(step, gr)?;
        }
        d_opt.step(disc.params_mut(), &d_grads);
        let (d_loss, _) = wgan_lp_loss(&real_scores, &fake_scores, &last_norms, tcfg.lambda_lp)?;

        // generator update
        let idx = sampler.sample_batch(b);
        let (g_loss, desc_l1, g_grads) = {
            let mut g = Graph::new();
            let gp = gen.params().bind(&mut g, true)?;
            let dp = disc.params().bind(&mut g, false)?;
            let (mut scores, mut l1s) = (Vec::new(), Vec::new());
            for &i in &idx {
                let c = data.condition(i);
                let z = sample_latent(cfg, &mut rng);
                let noise = NoiseDraw::sample(cfg, &mut rng);
                let y = gen.forward(&mut g, &gp, &z, &c, &noise, env_of(c.class)).map_err(&wrap)?;
                scores.push(disc.forward(&mut g, &dp, y, &c, DiscriminatorPath::Full).map_err(&wrap)?);
                if !mask.is_empty() {
                    let dv = descriptor_vars(&mut g, y, cfg.sample_rate, desc_cfg).map_err(&wrap)?;
                    l1s.push(descriptor_loss_var(&mut g, &dv, &data.descriptors[i], mask)?);
                }
            }
            let s = g.concat(&scores)?;
            let ms = g.mean(s)?;
            let adv = g.neg(ms)?;
            let (total, desc_l1) = if l1s.is_empty() {
                (adv, 0.0)
            } else {
                let l = g.concat(&l1s)?;
                let ml = g.mean(l)?;
                let w = g.scale(ml, tcfg.desc_weight / 100.0)?;
                (g.add(adv, w)?, g.item(ml))
            };
            let grads = g.backward(total).map_err(&wrap)?;
            (g.item(adv), desc_l1, gen.params().collect_grads(&grads, &gp))
        };
        for gr in &g_grads {
            check_finite(step, gr)?;
        }
        g_opt.step(gen.params_mut(), &g_grads);

        let rec = LossRecord { step, d_loss, g_loss, desc_l1 };
        check_finite(step, &[d_loss, g_loss, desc_l1])?;
        on_step(&rec);
        log.push(rec);
    }

    let mut checkpoint = Checkpoint {
        config: cfg.clone(),
        descriptor_config: desc_cfg.clone(),
        classes,
        generator: gen,
        discriminator: disc,
        envelopes,
        dataset_labels: data.labels.clone(),
        dataset_descriptors: data.descriptors.clone(),
    };
    checkpoint.round_to_storage()?;
    Ok(TrainOutcome { checkpoint, log, epoch_steps: data.len().div_ceil(b) })
}

/// Batch of generated clips with wall-clock accounting.
#[derive(Debug, Clone)]
pub struct GenerationReport {
    pub clips: Vec<AudioClip>,
    pub wall_seconds: f64,
    pub clips_per_second: f64,
    /// Seconds of audio produced per wall-clock second.
    pub realtime_factor: f64,
}

/// Generates one clip per condition. Clip `i` draws its latent and noise from
/// substream `i` of `seed`, so results do not depend on scheduling.
pub fn generate_batch(ckpt: &Checkpoint, conds: &[ConditionVector], seed: u64) -> Result<GenerationReport> {
    let start = Instant::now();
    let clips =
        conds.par_iter().enumerate().map(|(i, c)| generate_one(ckpt, c, seed, i as u64)).collect::<Result<Vec<_>>>()?;
    let wall_seconds = start.elapsed().as_secs_f64().max(1e-9);
    let audio: f64 = clips.iter().map(|c| c.duration_secs()).sum();
    Ok(GenerationReport {
        clips_per_second: clips.len() as f64 / wall_seconds,
        realtime_factor: audio / wall_seconds,
        clips,
        wall_seconds,
    })
}

pub fn generate_one(ckpt: &Checkpoint, cond: &ConditionVector, seed: u64, index: u64) -> Result<AudioClip> {
    let cfg = &ckpt.config;
    let mut rng = stream_rng(seed, index);
    let z = sample_latent(cfg, &mut rng);
    let noise = NoiseDraw::sample(cfg, &mut rng);
    let mut g = Graph::new();
    let p: Vec<Var> = ckpt.generator.params().bind(&mut g, false)?;
    let y = ckpt.generator.forward(&mut g, &p, &z, cond, &noise, ckpt.envelope(cond.class))?;
    AudioClip::new(g.data(y).to_vec(), cfg.sample_rate)
}

impl Checkpoint {
    pub fn envelope(&self, class: usize) -> Option<&EnvelopeTable> {
        self.envelopes.get(class)
    }
}
