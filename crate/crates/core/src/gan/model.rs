use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, Tensor, Var};
use crate::envelope::{apply_envelope_var, EnvelopeTable};
use crate::error::{bail, Error, Result};
use crate::timbre::{DescriptorMask, DescriptorVector};

use super::config::{GanConfig, LRELU_SLOPE};
use super::params::{Init, Layout, ParamStore};

/// Class label plus optional descriptor targets on the 0-100 scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionVector {
    pub class: usize,
    pub descriptors: Option<DescriptorVector>,
}

impl ConditionVector {
    /// One-hot label followed by the masked descriptors rescaled to [0, 1].
    pub fn encode(&self, n_classes: usize, mask: DescriptorMask) -> Result<Vec<f64>> {
        if self.class >= n_classes {
            bail!(InvalidInput, "class index {} out of range for {n_classes} classes", self.class);
        }
        let mut v = vec![0.0; n_classes];
        v[self.class] = 1.0;
        if !mask.is_empty() {
            let d = match self.descriptors {
                Some(d) => d,
                None => bail!(InvalidInput, "model is conditioned on {mask} but no descriptors were given"),
            };
            v.extend(mask.selected().into_iter().map(|k| d.get(k) / 100.0));
        }
        Ok(v)
    }
}

/// Standard-normal draws for every synthesis block, one row per block
/// shared by all channels.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub per_block: Vec<Vec<f64>>,
}

impl NoiseDraw {
    pub fn sample(cfg: &GanConfig, rng: &mut impl Rng) -> Self {
        let per_block = block_lengths(cfg).map(|t| (0..t).map(|_| rng.sample(StandardNormal)).collect()).collect();
        Self { per_block }
    }

    pub fn zeros(cfg: &GanConfig) -> Self {
        Self { per_block: block_lengths(cfg).map(|t| vec![0.0; t]).collect() }
    }
}

fn block_lengths(cfg: &GanConfig) -> impl Iterator<Item = usize> {
    let base = cfg.base_length();
    (0..cfg.g_channels.len()).map(move |i| base << i)
}

pub fn sample_latent(cfg: &GanConfig, rng: &mut impl Rng) -> Vec<f64> {
    (0..cfg.d_z).map(|_| rng.sample(StandardNormal)).collect()
}

/// Linear fade from 1 at the first sample to 0 at the last.
pub fn noise_fade(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![0.0];
    }
    (0..len).map(|t| 1.0 - t as f64 / (len - 1) as f64).collect()
}

/// `y[c, t] = x[c, t] + gain[c]·fade[t]·eta[t] + bias[c]`.
pub fn noise_layer(g: &mut Graph, x: Var, gain: Var, bias: Var, eta: &[f64]) -> Result<Var> {
    let (c, t) = match g.shape(x) {
        [c, t] => (*c, *t),
        s => bail!(Shape, "noise layer input must be [channels, time], got {:?}", s),
    };
    if eta.len() != t {
        bail!(Shape, "noise length {} does not match time length {t}", eta.len());
    }
    if g.data(gain).len() != c || g.data(bias).len() != c {
        bail!(Shape, "noise gain and bias need {c} values");
    }
    let shaped: Vec<f64> = noise_fade(t).iter().zip(eta).map(|(f, e)| f * e).collect();
    let n = g.constant(Tensor::vector(shaped))?;
    let n = g.expand_time(n, c)?;
    let gain = g.expand_channels(gain, t)?;
    let term = g.mul(gain, n)?;
    let bias = g.expand_channels(bias, t)?;
    let y = g.add(x, term)?;
    g.add(y, bias)
}

/// `sin(α)·x + cos(α)·y`, with the cosine taken as `sin(π/2 − α)` so both
/// endpoints are exact in floating point.
pub fn autofade(g: &mut Graph, x: Var, y: Var, alpha: Var) -> Result<Var> {
    if g.shape(x) != g.shape(y) {
        bail!(Shape, "autofade branches differ: {:?} vs {:?}", g.shape(x), g.shape(y));
    }
    let s = g.sin(alpha)?;
    let na = g.neg(alpha)?;
    let shifted = g.add_scalar(na, std::f64::consts::FRAC_PI_2)?;
    let c = g.sin(shifted)?;
    let a = g.mul(s, x)?;
    let b = g.mul(c, y)?;
    g.add(a, b)
}

fn in_block<T>(what: &str, i: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite(m) => Error::NonFinite(format!("{what} block {i}: {m}")),
        e => e,
    })
}

#[derive(Debug, Clone)]
struct GenBlock {
    mod_w: usize,
    mod_b: usize,
    conv_w: usize,
    conv_b: usize,
    noise_w: usize,
    noise_b: usize,
    bias: usize,
    out_w: usize,
    out_b: usize,
}

#[derive(Debug, Clone)]
struct GenIndex {
    embed_w: usize,
    embed_b: usize,
    map: Vec<(usize, usize)>,
    constant: usize,
    blocks: Vec<GenBlock>,
}

fn he(fan_in: usize) -> Init {
    Init::Normal((2.0 / fan_in as f64).sqrt())
}

fn lecun(fan_in: usize) -> Init {
    Init::Normal((1.0 / fan_in as f64).sqrt())
}

fn generator_layout(cfg: &GanConfig, n_classes: usize) -> (Layout, GenIndex) {
    let mut l = Layout::new();
    let cond = cfg.cond_dim(n_classes);
    let style = cfg.style_dim();
    let embed_w = l.add("g.embed.w", vec![cfg.d_embed, cond], lecun(cond));
    let embed_b = l.add("g.embed.b", vec![cfg.d_embed], Init::Const(0.0));
    let mut map = Vec::new();
    let mut fan = cfg.d_z + cfg.d_embed;
    for i in 0..cfg.mapping_layers {
        let w = l.add(format!("g.map{i}.w"), vec![cfg.d_w, fan], he(fan));
        let b = l.add(format!("g.map{i}.b"), vec![cfg.d_w], Init::Const(0.0));
        map.push((w, b));
        fan = cfg.d_w;
    }
    let constant = l.add("g.const", vec![cfg.g_channels[0], cfg.base_length()], Init::Normal(1.0));
    let mut blocks = Vec::new();
    let k = cfg.kernel_len;
    for (i, &cout) in cfg.g_channels.iter().enumerate() {
        let cin = if i == 0 { cfg.g_channels[0] } else { cfg.g_channels[i - 1] };
        blocks.push(GenBlock {
            mod_w: l.add(format!("g.b{i}.mod.w"), vec![cin, style], lecun(style)),
            mod_b: l.add(format!("g.b{i}.mod.b"), vec![cin], Init::Const(1.0)),
            conv_w: l.add(format!("g.b{i}.conv.w"), vec![cout, cin, k], he(cin * k)),
            conv_b: l.add(format!("g.b{i}.conv.b"), vec![cout], Init::Const(0.0)),
            noise_w: l.add(format!("g.b{i}.noise.w"), vec![cout, style], Init::Normal(0.1 / (style as f64).sqrt())),
            noise_b: l.add(format!("g.b{i}.noise.b"), vec![cout], Init::Const(0.1)),
            bias: l.add(format!("g.b{i}.bias"), vec![cout], Init::Const(0.0)),
            out_w: l.add(format!("g.b{i}.out.w"), vec![1, cout, 1], lecun(cout)),
            out_b: l.add(format!("g.b{i}.out.b"), vec![1], Init::Const(0.0)),
        });
    }
    (l, GenIndex { embed_w, embed_b, map, constant, blocks })
}

/// Style-based waveform generator: mapping network, learned constant input,
/// modulated causal conv blocks with shaped noise and a skip-summed output.
#[derive(Debug, Clone)]
pub struct Generator {
    cfg: GanConfig,
    n_classes: usize,
    params: ParamStore,
    idx: GenIndex,
}

impl Generator {
    pub fn init(cfg: &GanConfig, n_classes: usize, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        if n_classes == 0 {
            bail!(InvalidInput, "generator needs at least one class");
        }
        let (layout, idx) = generator_layout(cfg, n_classes);
        Ok(Self { cfg: cfg.clone(), n_classes, params: layout.init(rng)?, idx })
    }

    pub fn from_params(cfg: &GanConfig, n_classes: usize, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let (layout, idx) = generator_layout(cfg, n_classes);
        layout.check(&params)?;
        Ok(Self { cfg: cfg.clone(), n_classes, params, idx })
    }

    pub fn config(&self) -> &GanConfig {
        &self.cfg
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn encode(&self, cond: &ConditionVector) -> Result<Vec<f64>> {
        cond.encode(self.n_classes, self.cfg.descriptors)
    }

    /// Style vector from latent `z[d_z]` and encoded condition, with `p` the
    /// bound parameters.
    pub fn mapping_network(&self, g: &mut Graph, p: &[Var], z: Var, cond: Var) -> Result<Var> {
        let zl = g.data(z).len();
        let cl = g.data(cond).len();
        if zl != self.cfg.d_z {
            bail!(Shape, "latent has {zl} values, config says {}", self.cfg.d_z);
        }
        if cl != self.cfg.cond_dim(self.n_classes) {
            bail!(Shape, "condition has {cl} values, expected {}", self.cfg.cond_dim(self.n_classes));
        }
        let e = g.affine(cond, p[self.idx.embed_w], Some(p[self.idx.embed_b]))?;
        let mut h = g.concat(&[z, e])?;
        for &(w, b) in &self.idx.map {
            let a = g.affine(h, p[w], Some(p[b]))?;
            h = g.leaky_relu(a, LRELU_SLOPE)?;
        }
        g.concat(&[h, e])
    }

    /// Output waveform `[output_length]` for one latent/condition pair.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &[Var],
        z: &[f64],
        cond: &ConditionVector,
        noise: &NoiseDraw,
        envelope: Option<&EnvelopeTable>,
    ) -> Result<Var> {
        let zv = g.constant(Tensor::vector(z.to_vec()))?;
        let cv = g.constant(Tensor::vector(self.encode(cond)?))?;
        let style = self.mapping_network(g, p, zv, cv)?;
        self.synthesis(g, p, style, noise, envelope)
    }

    pub fn synthesis(
        &self,
        g: &mut Graph,
        p: &[Var],
        style: Var,
        noise: &NoiseDraw,
        envelope: Option<&EnvelopeTable>,
    ) -> Result<Var> {
        self.synthesis_from(g, p, p[self.idx.constant], style, noise, envelope)
    }

    /// Synthesis network starting from an arbitrary input in place of the
    /// learned constant.
    pub fn synthesis_from(
        &self,
        g: &mut Graph,
        p: &[Var],
        input: Var,
        style: Var,
        noise: &NoiseDraw,
        envelope: Option<&EnvelopeTable>,
    ) -> Result<Var> {
        if noise.per_block.len() != self.idx.blocks.len() {
            bail!(Shape, "noise has {} blocks, generator has {}", noise.per_block.len(), self.idx.blocks.len());
        }
        let mut x = input;
        let mut out: Option<Var> = None;
        for (i, blk) in self.idx.blocks.iter().enumerate() {
            let r = (|| -> Result<(Var, Var)> {
                let mut x = x;
                if i > 0 {
                    x = g.avg_upsample2x(x)?;
                }
                let t = g.shape(x)[1];
                let s = g.affine(style, p[blk.mod_w], Some(p[blk.mod_b]))?;
                let s = g.expand_channels(s, t)?;
                let x = g.mul(x, s)?;
                let x = g.causal_conv1d(x, p[blk.conv_w], Some(p[blk.conv_b]))?;
                let gain = g.affine(style, p[blk.noise_w], Some(p[blk.noise_b]))?;
                let x = noise_layer(g, x, gain, p[blk.bias], &noise.per_block[i])?;
                let x = g.leaky_relu(x, LRELU_SLOPE)?;
                let y = g.causal_conv1d(x, p[blk.out_w], Some(p[blk.out_b]))?;
                let y = match out {
                    None => y,
                    Some(o) => {
                        let o = g.avg_upsample2x(o)?;
                        g.add(o, y)?
                    }
                };
                Ok((x, y))
            })();
            let (nx, ny) = in_block("generator", i, r)?;
            x = nx;
            out = Some(ny);
        }
        let out = out.expect("at least one block");
        let out = g.reshape(out, vec![self.cfg.output_length])?;
        match envelope {
            Some(env) if self.cfg.use_envelope => apply_envelope_var(g, out, env),
            _ => Ok(out),
        }
    }
}

#[derive(Debug, Clone)]
struct DiscBlock {
    c1_w: usize,
    c1_b: usize,
    c2_w: usize,
    c2_b: usize,
    by_w: usize,
    alpha: Option<usize>,
}

#[derive(Debug, Clone)]
struct DiscIndex {
    from_w: usize,
    from_b: usize,
    blocks: Vec<DiscBlock>,
    fc1_w: usize,
    fc1_b: usize,
    emb_w: usize,
    emb_b: usize,
    fc2_w: usize,
    fc2_b: usize,
    out_w: usize,
    out_b: usize,
}

fn discriminator_layout(cfg: &GanConfig, n_classes: usize) -> (Layout, DiscIndex) {
    let mut l = Layout::new();
    let k = cfg.kernel_len;
    let d0 = cfg.d_channels[0];
    let from_w = l.add("d.from.w", vec![d0, 1, 1], Init::Normal(1.0));
    let from_b = l.add("d.from.b", vec![d0], Init::Const(0.0));
    let mut blocks = Vec::new();
    for (i, &cout) in cfg.d_channels.iter().enumerate() {
        let cin = if i == 0 { d0 } else { cfg.d_channels[i - 1] };
        blocks.push(DiscBlock {
            c1_w: l.add(format!("d.b{i}.conv1.w"), vec![cin, cin, k], he(cin * k)),
            c1_b: l.add(format!("d.b{i}.conv1.b"), vec![cin], Init::Const(0.0)),
            c2_w: l.add(format!("d.b{i}.conv2.w"), vec![cout, cin, k], he(cin * k)),
            c2_b: l.add(format!("d.b{i}.conv2.b"), vec![cout], Init::Const(0.0)),
            by_w: l.add(format!("d.b{i}.bypass.w"), vec![cout, cin, 1], lecun(cin)),
            alpha: cfg.autofade.then(|| l.add(format!("d.b{i}.alpha"), vec![], Init::Const(FRAC_PI_4))),
        });
    }
    let flat = cfg.d_channels[cfg.d_channels.len() - 1] * cfg.d_final_length();
    let h = cfg.d_hidden;
    let cond = cfg.cond_dim(n_classes);
    let fc1_w = l.add("d.fc1.w", vec![h, flat], he(flat));
    let fc1_b = l.add("d.fc1.b", vec![h], Init::Const(0.0));
    let emb_w = l.add("d.embed.w", vec![cfg.d_embed, cond], lecun(cond));
    let emb_b = l.add("d.embed.b", vec![cfg.d_embed], Init::Const(0.0));
    let fc2_w = l.add("d.fc2.w", vec![h, h + cfg.d_embed], he(h + cfg.d_embed));
    let fc2_b = l.add("d.fc2.b", vec![h], Init::Const(0.0));
    let out_w = l.add("d.out.w", vec![1, h], lecun(h));
    let out_b = l.add("d.out.b", vec![1], Init::Const(0.0));
    (l, DiscIndex { from_w, from_b, blocks, fc1_w, fc1_b, emb_w, emb_b, fc2_w, fc2_b, out_w, out_b })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscriminatorPath {
    Full,
    /// Every block reduced to its downsample + 1×1 bypass.
    BypassOnly,
}

/// Residual discriminator with autofaded (or 1/√2-scaled) blocks and the
/// condition embedding joined before the last two layers.
#[derive(Debug, Clone)]
pub struct Discriminator {
    cfg: GanConfig,
    n_classes: usize,
    params: ParamStore,
    idx: DiscIndex,
}

impl Discriminator {
    pub fn init(cfg: &GanConfig, n_classes: usize, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        if n_classes == 0 {
            bail!(InvalidInput, "discriminator needs at least one class");
        }
        let (layout, idx) = discriminator_layout(cfg, n_classes);
        Ok(Self { cfg: cfg.clone(), n_classes, params: layout.init(rng)?, idx })
    }

    pub fn from_params(cfg: &GanConfig, n_classes: usize, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let (layout, idx) = discriminator_layout(cfg, n_classes);
        layout.check(&params)?;
        Ok(Self { cfg: cfg.clone(), n_classes, params, idx })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Fade angle of every block, reduced modulo 2π. Empty for the baseline.
    pub fn alphas(&self) -> Vec<f64> {
        let tau = std::f64::consts::TAU;
        self.idx
            .blocks
            .iter()
            .filter_map(|b| b.alpha)
            .map(|a| self.params.tensors()[a].item().rem_euclid(tau))
            .collect()
    }

    pub fn set_alphas(&mut self, value: f64) {
        let ids: Vec<usize> = self.idx.blocks.iter().filter_map(|b| b.alpha).collect();
        for a in ids {
            self.params.tensor_mut(a).data_mut()[0] = value;
        }
    }

    /// Scalar critic score of waveform `x[output_length]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &[Var],
        x: Var,
        cond: &ConditionVector,
        path: DiscriminatorPath,
    ) -> Result<Var> {
        let n = g.data(x).len();
        if n != self.cfg.output_length {
            bail!(Shape, "discriminator input has {n} samples, expected {}", self.cfg.output_length);
        }
        let mut h = g.reshape(x, vec![1, n])?;
        let a = g.causal_conv1d(h, p[self.idx.from_w], Some(p[self.idx.from_b]))?;
        h = g.leaky_relu(a, LRELU_SLOPE)?;
        for (i, blk) in self.idx.blocks.iter().enumerate() {
            let r = (|| -> Result<Var> {
                let d = g.avg_downsample2x(h)?;
                let by = g.causal_conv1d(d, p[blk.by_w], None)?;
                if path == DiscriminatorPath::BypassOnly {
                    return Ok(by);
                }
                let c = g.causal_conv1d(h, p[blk.c1_w], Some(p[blk.c1_b]))?;
                let c = g.leaky_relu(c, LRELU_SLOPE)?;
                let c = g.causal_conv1d(c, p[blk.c2_w], Some(p[blk.c2_b]))?;
                let c = g.leaky_relu(c, LRELU_SLOPE)?;
                let c = g.avg_downsample2x(c)?;
                match blk.alpha {
                    Some(a) => autofade(g, c, by, p[a]),
                    None => {
                        let s = g.add(c, by)?;
                        g.scale(s, FRAC_1_SQRT_2)
                    }
                }
            })();
            h = in_block("discriminator", i, r)?;
        }
        let len = g.data(h).len();
        let flat = g.reshape(h, vec![len])?;
        let f = g.affine(flat, p[self.idx.fc1_w], Some(p[self.idx.fc1_b]))?;
        let f = g.leaky_relu(f, LRELU_SLOPE)?;
        let cv = g.constant(Tensor::vector(cond.encode(self.n_classes, self.cfg.descriptors)?))?;
        let e = g.affine(cv, p[self.idx.emb_w], Some(p[self.idx.emb_b]))?;
        let j = g.concat(&[f, e])?;
        let f = g.affine(j, p[self.idx.fc2_w], Some(p[self.idx.fc2_b]))?;
        let f = g.leaky_relu(f, LRELU_SLOPE)?;
        let s = g.affine(f, p[self.idx.out_w], Some(p[self.idx.out_b]))?;
        g.reshape(s, vec![])
    }
}
