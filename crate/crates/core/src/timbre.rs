//! Differentiable brightness, depth and warmth on a 0-100 scale.
//!
//! All three descriptors are built from the whole-clip power spectrum: its
//! centroid and the fraction of power falling in a fixed frequency band, mapped
//! through a logistic so the output stays strictly inside (0, 100). The
//! definitions are homogeneous of degree zero in the signal, so scaling a clip
//! leaves its descriptors unchanged.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::dsp::AudioClip;
use crate::error::{bail, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Descriptor {
    Brightness,
    Depth,
    Warmth,
}

impl Descriptor {
    pub const ALL: [Descriptor; 3] = [Descriptor::Brightness, Descriptor::Depth, Descriptor::Warmth];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Descriptor::Brightness => "brightness",
            Descriptor::Depth => "depth",
            Descriptor::Warmth => "warmth",
        }
    }
}

impl fmt::Display for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Descriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brightness" => Ok(Descriptor::Brightness),
            "depth" => Ok(Descriptor::Depth),
            "warmth" => Ok(Descriptor::Warmth),
            other => bail!(InvalidInput, "unknown descriptor '{other}'"),
        }
    }
}

/// (brightness, depth, warmth), each on a 0-100 scale.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DescriptorVector {
    pub brightness: f64,
    pub depth: f64,
    pub warmth: f64,
}

impl DescriptorVector {
    pub fn new(brightness: f64, depth: f64, warmth: f64) -> Self {
        Self { brightness, depth, warmth }
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.brightness, self.depth, self.warmth]
    }

    pub fn get(&self, d: Descriptor) -> f64 {
        self.to_array()[d.index()]
    }

    pub fn set(&mut self, d: Descriptor, v: f64) {
        match d {
            Descriptor::Brightness => self.brightness = v,
            Descriptor::Depth => self.depth = v,
            Descriptor::Warmth => self.warmth = v,
        }
    }
}

/// Which descriptors take part in a loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DescriptorMask([bool; 3]);

impl TryFrom<String> for DescriptorMask {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<DescriptorMask> for String {
    fn from(m: DescriptorMask) -> String {
        m.to_string()
    }
}

impl DescriptorMask {
    pub const ALL: DescriptorMask = DescriptorMask([true; 3]);
    pub const NONE: DescriptorMask = DescriptorMask([false; 3]);

    pub fn only(d: Descriptor) -> Self {
        let mut m = [false; 3];
        m[d.index()] = true;
        Self(m)
    }

    pub fn from_list(ds: &[Descriptor]) -> Self {
        let mut m = [false; 3];
        for d in ds {
            m[d.index()] = true;
        }
        Self(m)
    }

    pub fn contains(&self, d: Descriptor) -> bool {
        self.0[d.index()]
    }

    pub fn selected(&self) -> Vec<Descriptor> {
        Descriptor::ALL.into_iter().filter(|d| self.contains(*d)).collect()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }
}

impl FromStr for DescriptorMask {
    type Err = Error;

    /// Comma-separated descriptor names, `all`, or `none`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => Ok(Self::ALL),
            "none" | "" => Ok(Self::NONE),
            list => {
                let ds = list.split(',').map(|p| p.trim().parse()).collect::<Result<Vec<_>>>()?;
                Ok(Self::from_list(&ds))
            }
        }
    }
}

impl fmt::Display for DescriptorMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("none");
        }
        let names: Vec<&str> = self.selected().iter().map(|d| d.name()).collect();
        f.write_str(&names.join(","))
    }
}

/// Calibration constants of the three descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescriptorConfig {
    /// Weight of `ln(centroid / brightness_ref_hz)`.
    pub brightness_a: f64,
    pub brightness_ref_hz: f64,
    /// Weight of the fraction of power above `brightness_cut_hz`.
    pub brightness_b: f64,
    pub brightness_offset: f64,
    pub brightness_cut_hz: f64,
    /// Weight of the fraction of power below `depth_cut_hz`.
    pub depth_a: f64,
    /// Weight of `ln(depth_ref_hz / centroid)`.
    pub depth_b: f64,
    pub depth_ref_hz: f64,
    pub depth_cut_hz: f64,
    /// Weight of the fraction of power in `[warmth_lo_hz, warmth_hi_hz]`.
    pub warmth_a: f64,
    /// Weight of `ln(warmth_ref_hz / centroid)`.
    pub warmth_b: f64,
    pub warmth_ref_hz: f64,
    pub warmth_lo_hz: f64,
    pub warmth_hi_hz: f64,
    /// Added to every power bin so silence stays differentiable.
    pub power_floor: f64,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            brightness_a: 1.5,
            brightness_ref_hz: 500.0,
            brightness_b: 2.0,
            brightness_offset: -4.0,
            brightness_cut_hz: 2000.0,
            depth_a: 4.0,
            depth_b: 0.5,
            depth_ref_hz: 1000.0,
            depth_cut_hz: 200.0,
            warmth_a: 4.0,
            warmth_b: 0.4,
            warmth_ref_hz: 2000.0,
            warmth_lo_hz: 100.0,
            warmth_hi_hz: 420.0,
            power_floor: 1e-12,
        }
    }
}

/// Shortest clip the descriptors accept.
pub const MIN_DESCRIPTOR_LEN: usize = 64;

impl DescriptorConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        let edges = [
            ("brightness_cut_hz", self.brightness_cut_hz),
            ("depth_cut_hz", self.depth_cut_hz),
            ("warmth_lo_hz", self.warmth_lo_hz),
            ("warmth_hi_hz", self.warmth_hi_hz),
        ];
        for (name, v) in edges {
            if !(v > 0.0 && v < nyquist) {
                bail!(Config, "{name} = {v} must lie in (0, {nyquist}) Hz");
            }
        }
        if self.warmth_lo_hz >= self.warmth_hi_hz {
            bail!(Config, "warmth band edges must be strictly increasing");
        }
        for (name, v) in [
            ("brightness_ref_hz", self.brightness_ref_hz),
            ("depth_ref_hz", self.depth_ref_hz),
            ("warmth_ref_hz", self.warmth_ref_hz),
        ] {
            if !(v > 0.0) {
                bail!(Config, "{name} must be positive");
            }
        }
        if !(self.power_floor > 0.0) {
            bail!(Config, "power_floor must be positive");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("descriptor config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Descriptor nodes built on a shared power spectrum.
#[derive(Debug, Clone, Copy)]
pub struct DescriptorVars {
    pub brightness: Var,
    pub depth: Var,
    pub warmth: Var,
}

impl DescriptorVars {
    pub fn get(&self, d: Descriptor) -> Var {
        match d {
            Descriptor::Brightness => self.brightness,
            Descriptor::Depth => self.depth,
            Descriptor::Warmth => self.warmth,
        }
    }

    pub fn values(&self, g: &Graph) -> DescriptorVector {
        DescriptorVector::new(g.item(self.brightness), g.item(self.depth), g.item(self.warmth))
    }
}

fn band_mask(n_bins: usize, bin_hz: f64, keep: impl Fn(f64) -> bool) -> Tensor {
    Tensor::vector((0..n_bins).map(|k| if keep(k as f64 * bin_hz) { 1.0 } else { 0.0 }).collect())
}

/// `100·σ(u)`
fn to_scale(g: &mut Graph, u: Var) -> Result<Var> {
    let s = g.sigmoid(u)?;
    g.scale(s, 100.0)
}

/// Builds all three descriptors of the signal node `x` (a vector).
pub fn descriptor_vars(g: &mut Graph, x: Var, sample_rate: u32, cfg: &DescriptorConfig) -> Result<DescriptorVars> {
    let n = g.data(x).len();
    if n < MIN_DESCRIPTOR_LEN {
        bail!(InvalidInput, "descriptors need at least {MIN_DESCRIPTOR_LEN} samples, got {n}");
    }
    cfg.validate(sample_rate)?;
    let bin_hz = sample_rate as f64 / n as f64;
    let n_bins = n / 2 + 1;

    let raw = g.real_dft_power(x)?;
    let power = g.add_scalar(raw, cfg.power_floor)?;
    let total = g.sum(power)?;

    let freqs = g.constant(Tensor::vector((0..n_bins).map(|k| k as f64 * bin_hz).collect()))?;
    let weighted = g.mul(power, freqs)?;
    let moment = g.sum(weighted)?;
    let centroid = g.div(moment, total)?;
    let log_centroid = g.log(centroid)?;

    let band_fraction = |g: &mut Graph, mask: Tensor| -> Result<Var> {
        let m = g.constant(mask)?;
        let p = g.mul(power, m)?;
        let s = g.sum(p)?;
        g.div(s, total)
    };

    // brightness: a·ln(C/c0) + b·r_hi + d
    let hi = band_fraction(g, band_mask(n_bins, bin_hz, |f| f >= cfg.brightness_cut_hz))?;
    let t1 = g.add_scalar(log_centroid, -cfg.brightness_ref_hz.ln())?;
    let t1 = g.scale(t1, cfg.brightness_a)?;
    let t2 = g.scale(hi, cfg.brightness_b)?;
    let u = g.add(t1, t2)?;
    let u = g.add_scalar(u, cfg.brightness_offset)?;
    let brightness = to_scale(g, u)?;

    // depth: a·r_lo + b·ln(c1/C)
    let lo = band_fraction(g, band_mask(n_bins, bin_hz, |f| f <= cfg.depth_cut_hz))?;
    let t1 = g.scale(lo, cfg.depth_a)?;
    let t2 = g.add_scalar(log_centroid, -cfg.depth_ref_hz.ln())?;
    let t2 = g.scale(t2, -cfg.depth_b)?;
    let u = g.add(t1, t2)?;
    let depth = to_scale(g, u)?;

    // warmth: a·r_warm + b·ln(c2/C)
    let warm = band_fraction(g, band_mask(n_bins, bin_hz, |f| f >= cfg.warmth_lo_hz && f <= cfg.warmth_hi_hz))?;
    let t1 = g.scale(warm, cfg.warmth_a)?;
    let t2 = g.add_scalar(log_centroid, -cfg.warmth_ref_hz.ln())?;
    let t2 = g.scale(t2, -cfg.warmth_b)?;
    let u = g.add(t1, t2)?;
    let warmth = to_scale(g, u)?;

    Ok(DescriptorVars { brightness, depth, warmth })
}

fn eval_one(clip: &AudioClip, cfg: &DescriptorConfig, d: Descriptor) -> Result<f64> {
    Ok(descriptors(clip, cfg)?.get(d))
}

pub fn descriptors(clip: &AudioClip, cfg: &DescriptorConfig) -> Result<DescriptorVector> {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(clip.samples().to_vec()))?;
    let vars = descriptor_vars(&mut g, x, clip.sample_rate(), cfg)?;
    Ok(vars.values(&g))
}

pub fn brightness(clip: &AudioClip, cfg: &DescriptorConfig) -> Result<f64> {
    eval_one(clip, cfg, Descriptor::Brightness)
}

pub fn depth(clip: &AudioClip, cfg: &DescriptorConfig) -> Result<f64> {
    eval_one(clip, cfg, Descriptor::Depth)
}

pub fn warmth(clip: &AudioClip, cfg: &DescriptorConfig) -> Result<f64> {
    eval_one(clip, cfg, Descriptor::Warmth)
}

/// Mean absolute difference over the masked descriptors.
pub fn descriptor_loss(target: &DescriptorVector, produced: &DescriptorVector, mask: DescriptorMask) -> Result<f64> {
    if mask.is_empty() {
        bail!(InvalidInput, "descriptor loss needs at least one descriptor in the mask");
    }
    let sel = mask.selected();
    Ok(sel.iter().map(|d| (target.get(*d) - produced.get(*d)).abs()).sum::<f64>() / sel.len() as f64)
}

/// Graph version of [`descriptor_loss`] against constant targets.
pub fn descriptor_loss_var(
    g: &mut Graph,
    produced: &DescriptorVars,
    target: &DescriptorVector,
    mask: DescriptorMask,
) -> Result<Var> {
    if mask.is_empty() {
        bail!(InvalidInput, "descriptor loss needs at least one descriptor in the mask");
    }
    let sel = mask.selected();
    let mut terms = Vec::with_capacity(sel.len());
    for d in &sel {
        let diff = g.add_scalar(produced.get(*d), -target.get(*d))?;
        terms.push(g.abs(diff)?);
    }
    let all = g.concat(&terms)?;
    g.mean(all)
}

#[derive(Debug, Clone)]
pub struct MatchOutcome {
    pub clip: AudioClip,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub achieved: DescriptorVector,
}

/// Gradient descent on the samples of `init` towards `target` under the
/// masked L1 descriptor loss, using Adam-scaled steps of size `step_size`.
///
/// Returns the best iterate seen, so the final loss never exceeds the initial
/// one, peak-normalized down to 1 if it exceeds full scale.
pub fn match_descriptors(
    init: &AudioClip,
    target: &DescriptorVector,
    mask: DescriptorMask,
    steps: usize,
    step_size: f64,
    cfg: &DescriptorConfig,
) -> Result<MatchOutcome> {
    if steps == 0 {
        bail!(InvalidInput, "match_descriptors needs at least one step");
    }
    if !(step_size > 0.0) {
        bail!(InvalidInput, "step size must be positive");
    }
    let sr = init.sample_rate();
    let n = init.len();
    let mut x = init.samples().to_vec();
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];

    let eval = |x: &[f64]| -> Result<(f64, Vec<f64>, DescriptorVector)> {
        let mut g = Graph::new();
        let xv = g.param(Tensor::vector(x.to_vec()))?;
        let vars = descriptor_vars(&mut g, xv, sr, cfg)?;
        let loss = descriptor_loss_var(&mut g, &vars, target, mask)?;
        let grads = g.backward(loss)?;
        Ok((g.item(loss), grads.get_or_zeros(xv, n), vars.values(&g)))
    };

    let (initial_loss, mut grad, mut produced) = eval(&x)?;
    let mut best = (initial_loss, x.clone(), produced);
    let mut loss = initial_loss;
    for step in 1..=steps {
        if loss == 0.0 {
            break;
        }
        let (b1t, b2t) = (1.0 - beta1.powi(step as i32), 1.0 - beta2.powi(step as i32));
        for i in 0..n {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            x[i] -= step_size * (m[i] / b1t) / ((v[i] / b2t).sqrt() + eps);
        }
        if x.iter().any(|s| !s.is_finite()) {
            return Err(Error::Diverged { step });
        }
        let r = match eval(&x) {
            Ok(r) => r,
            Err(Error::NonFinite(_)) => return Err(Error::Diverged { step }),
            Err(e) => return Err(e),
        };
        (loss, grad, produced) = r;
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        if loss < best.0 {
            best = (loss, x.clone(), produced);
        }
    }
    let (final_loss, mut samples, achieved) = best;
    let peak = samples.iter().fold(0.0f64, |a, s| a.max(s.abs()));
    if peak > 1.0 {
        samples.iter_mut().for_each(|s| *s /= peak);
    }
    Ok(MatchOutcome { clip: AudioClip::new(samples, sr)?, initial_loss, final_loss, achieved })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    const SR: u32 = 16000;

    fn tone(freq: f64, len: usize, amp: f64) -> Vec<f64> {
        (0..len).map(|i| amp * (2.0 * PI * freq * i as f64 / SR as f64).sin()).collect()
    }

    fn clip(x: Vec<f64>) -> AudioClip {
        AudioClip::new(x, SR).unwrap()
    }

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }

    /// Ideal brick-wall filter applied in the DFT domain.
    fn band_filtered(x: &[f64], keep: impl Fn(f64) -> bool) -> Vec<f64> {
        use crate::dsp::{fft_in_place, ifft_in_place};
        use rustfft::num_complex::Complex64;
        let n = x.len();
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_in_place(&mut buf);
        for (k, c) in buf.iter_mut().enumerate() {
            let kk = k.min(n - k);
            if !keep(kk as f64 * SR as f64 / n as f64) {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        ifft_in_place(&mut buf);
        buf.iter().map(|c| c.re / n as f64).collect()
    }

    #[test]
    fn brightness_orders_tones() {
        let cfg = DescriptorConfig::default();
        let low = brightness(&clip(tone(100.0, 2048, 0.8)), &cfg).unwrap();
        let high = brightness(&clip(tone(4000.0, 2048, 0.8)), &cfg).unwrap();
        assert!(low < high, "{low} vs {high}");
    }

    #[test]
    fn brightness_increases_with_high_partial() {
        let cfg = DescriptorConfig::default();
        let base = tone(200.0, 4096, 0.5);
        let hi = tone(4000.0, 4096, 1.0);
        let vals: Vec<f64> = [0.0, 0.2, 0.4, 0.8]
            .iter()
            .map(|g| {
                let x = base.iter().zip(&hi).map(|(a, b)| a + g * b).collect();
                brightness(&clip(x), &cfg).unwrap()
            })
            .collect();
        assert!(vals.windows(2).all(|w| w[0] < w[1]), "{vals:?}");
    }

    #[test]
    fn white_noise_brightness_is_not_saturated() {
        let b = brightness(&clip(noise(4096, 1)), &DescriptorConfig::default()).unwrap();
        assert!(b > 50.0 && b < 80.0, "{b}");
    }

    #[test]
    fn depth_orders_tones_and_filtered_noise() {
        let cfg = DescriptorConfig::default();
        let low = depth(&clip(tone(60.0, 4096, 0.5)), &cfg).unwrap();
        let high = depth(&clip(tone(2000.0, 4096, 0.5)), &cfg).unwrap();
        assert!(low > high);
        let n = noise(4096, 2);
        let lp = band_filtered(&n, |f| f <= 150.0);
        let hp = band_filtered(&n, |f| f >= 1000.0);
        assert!(depth(&clip(lp), &cfg).unwrap() > depth(&clip(hp), &cfg).unwrap());
    }

    #[test]
    fn warmth_orders_tones_and_sweep() {
        let cfg = DescriptorConfig::default();
        let warm = warmth(&clip(tone(250.0, 4096, 0.5)), &cfg).unwrap();
        let cold = warmth(&clip(tone(5000.0, 4096, 0.5)), &cfg).unwrap();
        assert!(warm > cold);
        let a = tone(250.0, 4096, 1.0);
        let b = tone(3000.0, 4096, 1.0);
        let vals: Vec<f64> = (0..=8)
            .map(|i| {
                let th = i as f64 / 8.0 * PI / 2.0;
                let x = a.iter().zip(&b).map(|(p, q)| th.cos() * p + th.sin() * q).collect();
                warmth(&clip(x), &cfg).unwrap()
            })
            .collect();
        assert!(vals.windows(2).all(|w| w[0] > w[1]), "{vals:?}");
    }

    #[test]
    fn amplitude_invariance() {
        let cfg = DescriptorConfig::default();
        for seed in 0..5 {
            let x = noise(1024, seed);
            let base = descriptors(&clip(x.clone()), &cfg).unwrap();
            for gain in [0.25, 0.5, 2.0, 4.0] {
                let scaled = descriptors(&clip(x.iter().map(|v| v * gain).collect()), &cfg).unwrap();
                for d in Descriptor::ALL {
                    assert!((base.get(d) - scaled.get(d)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn silence_is_defined_and_short_clip_rejected() {
        let cfg = DescriptorConfig::default();
        let a = descriptors(&clip(vec![0.0; 256]), &cfg).unwrap();
        let b = descriptors(&clip(vec![0.0; 256]), &cfg).unwrap();
        assert_eq!(a, b);
        for d in Descriptor::ALL {
            assert!(a.get(d) > 0.0 && a.get(d) < 100.0);
        }
        assert!(descriptors(&clip(vec![0.1; 63]), &cfg).is_err());
    }

    #[test]
    fn monotone_response_to_in_band_energy() {
        let cfg = DescriptorConfig::default();
        for seed in 0..10 {
            let base = noise(4096, 100 + seed);
            let before = descriptors(&clip(base.clone()), &cfg).unwrap();
            let inject = |f: f64| -> DescriptorVector {
                let t = tone(f, 4096, 3.0);
                descriptors(&clip(base.iter().zip(&t).map(|(a, b)| a + b).collect()), &cfg).unwrap()
            };
            assert!(inject(7000.0).brightness > before.brightness);
            assert!(inject(50.0).depth > before.depth);
            assert!(inject(250.0).warmth > before.warmth);
        }
    }

    #[test]
    fn descriptors_pass_grad_check() {
        let cfg = DescriptorConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for len in [128usize, 256, 512, 1024] {
            let x = Tensor::vector((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect());
            for d in Descriptor::ALL {
                let err = grad_check(|g, v| Ok(descriptor_vars(g, v, SR, &cfg)?.get(d)), &x, 1e-5).unwrap();
                assert!(err < 1e-4, "{d} len {len}: {err}");
            }
        }
    }

    #[test]
    fn loss_arithmetic_and_mask() {
        let t = DescriptorVector::new(50.0, 50.0, 50.0);
        let p = DescriptorVector::new(53.0, 47.0, 50.0);
        assert_eq!(descriptor_loss(&t, &t, DescriptorMask::ALL).unwrap(), 0.0);
        assert!((descriptor_loss(&t, &p, DescriptorMask::ALL).unwrap() - 2.0).abs() < 1e-12);
        assert!((descriptor_loss(&t, &p, DescriptorMask::only(Descriptor::Depth)).unwrap() - 3.0).abs() < 1e-12);
        assert!(descriptor_loss(&t, &p, DescriptorMask::NONE).is_err());
    }

    #[test]
    fn loss_matches_scalar_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let a = DescriptorVector::from_array([0; 3].map(|_| rng.gen_range(0.0..100.0)));
            let b = DescriptorVector::from_array([0; 3].map(|_| rng.gen_range(0.0..100.0)));
            let mask = DescriptorMask([rng.gen(), rng.gen(), true]);
            let mut sum = 0.0;
            let mut count = 0.0;
            for i in 0..3 {
                if mask.0[i] {
                    sum += (a.to_array()[i] - b.to_array()[i]).abs();
                    count += 1.0;
                }
            }
            assert!((descriptor_loss(&a, &b, mask).unwrap() - sum / count).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_parsing_round_trips() {
        for s in ["brightness", "depth,warmth", "all", "none"] {
            let m: DescriptorMask = s.parse().unwrap();
            let back: DescriptorMask = m.to_string().parse().unwrap();
            assert_eq!(m, back);
        }
        assert!("loudness".parse::<DescriptorMask>().is_err());
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_keys() {
        let cfg = DescriptorConfig::default();
        assert_eq!(DescriptorConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(DescriptorConfig::from_toml("brightnes_a = 1.0").is_err());
        let partial = DescriptorConfig::from_toml("depth_a = 2.5").unwrap();
        assert_eq!(partial.depth_a, 2.5);
        let bad = DescriptorConfig { warmth_hi_hz: 90.0, ..cfg };
        assert!(bad.validate(SR).is_err());
    }

    #[test]
    fn match_fixed_point_keeps_clip() {
        let cfg = DescriptorConfig::default();
        let init = clip(noise(1024, 9).iter().map(|v| 0.2 * v).collect());
        let target = descriptors(&init, &cfg).unwrap();
        let out = match_descriptors(&init, &target, DescriptorMask::ALL, 20, 1e-3, &cfg).unwrap();
        assert!(out.final_loss < 1e-6);
        for (a, b) in out.clip.samples().iter().zip(init.samples()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn masked_gradient_ignores_other_descriptors() {
        let cfg = DescriptorConfig::default();
        let x = Tensor::vector(noise(512, 3));
        let target = DescriptorVector::new(10.0, 90.0, 20.0);
        let grad_of = |mask: DescriptorMask, only: Option<Descriptor>| {
            let mut g = Graph::new();
            let xv = g.param(x.clone()).unwrap();
            let vars = descriptor_vars(&mut g, xv, SR, &cfg).unwrap();
            let root = match only {
                Some(d) => {
                    let diff = g.add_scalar(vars.get(d), -target.get(d)).unwrap();
                    g.abs(diff).unwrap()
                }
                None => descriptor_loss_var(&mut g, &vars, &target, mask).unwrap(),
            };
            g.backward(root).unwrap().get_or_zeros(xv, 512)
        };
        let masked = grad_of(DescriptorMask::only(Descriptor::Depth), None);
        let direct = grad_of(DescriptorMask::NONE, Some(Descriptor::Depth));
        for (a, b) in masked.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn match_moves_brightness_down() {
        let cfg = DescriptorConfig::default();
        let init = clip(noise(2048, 5).iter().map(|v| 0.3 * v).collect());
        let mut target = descriptors(&init, &cfg).unwrap();
        target.brightness -= 10.0;
        let out =
            match_descriptors(&init, &target, DescriptorMask::only(Descriptor::Brightness), 300, 1e-3, &cfg).unwrap();
        assert!(out.final_loss <= out.initial_loss);
        assert!((out.achieved.brightness - target.brightness).abs() < 2.0, "{:?}", out.achieved);
        assert!(out.clip.peak() <= 1.0);
        let check = brightness(&out.clip, &cfg).unwrap();
        assert!((check - out.achieved.brightness).abs() < 1e-9);
    }

    #[test]
    fn match_rejects_zero_steps() {
        let cfg = DescriptorConfig::default();
        let init = clip(noise(256, 1));
        assert!(match_descriptors(&init, &DescriptorVector::default(), DescriptorMask::ALL, 0, 1e-3, &cfg).is_err());
    }
}
