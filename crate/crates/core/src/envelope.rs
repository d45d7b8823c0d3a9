//! Per-class amplitude envelopes estimated from a dataset, and their
//! elementwise application to generated audio.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::dsp::{hilbert_magnitude, AudioClip};
use crate::error::{bail, Result};

/// Drum class label, e.g. `kick`, `snare`, `tom`, `closed_hh`, `open_hh`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DrumClass(String);

impl DrumClass {
    pub const KICK: &'static str = "kick";
    pub const SNARE: &'static str = "snare";
    pub const TOM: &'static str = "tom";
    pub const CLOSED_HH: &'static str = "closed_hh";
    pub const OPEN_HH: &'static str = "open_hh";

    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || name.chars().any(|c| c.is_whitespace() || c == ',') {
            bail!(InvalidInput, "invalid class name '{name}'");
        }
        Ok(Self(name))
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DrumClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeTable {
    pub class: DrumClass,
    values: Vec<f64>,
    sample_rate: u32,
}

impl EnvelopeTable {
    pub fn new(class: DrumClass, values: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if values.is_empty() {
            bail!(InvalidInput, "envelope must be non-empty");
        }
        if sample_rate == 0 {
            bail!(InvalidInput, "envelope sample rate must be positive");
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            bail!(InvalidInput, "envelope value {i} is negative or not finite");
        }
        Ok(Self { class, values, sample_rate })
    }

    /// All-ones envelope (no fade); mostly useful for testing.
    pub fn flat(class: DrumClass, len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(class, vec![1.0; len], sample_rate)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvelopeParams {
    pub length: usize,
    /// Moving-average window (samples), centered.
    pub smooth_len: usize,
    /// Linear fade to zero over the final samples.
    pub fade_len: usize,
}

impl Default for EnvelopeParams {
    fn default() -> Self {
        Self { length: 65536, smooth_len: 1025, fade_len: 2048 }
    }
}

/// Centered moving average; windows are truncated at the edges and divided
/// by the number of samples they actually cover.
fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    if window <= 1 {
        return x.to_vec();
    }
    let n = x.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i];
    }
    let before = (window - 1) / 2;
    let after = window - 1 - before;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Envelope of a drum class: every clip is peak-normalized and fitted to
/// `params.length`, the magnitudes of their analytic signals are averaged,
/// smoothed, faded to exactly zero at the end and scaled to unit peak.
pub fn extract_class_envelope(class: DrumClass, clips: &[AudioClip], params: &EnvelopeParams) -> Result<EnvelopeTable> {
    let EnvelopeParams { length, smooth_len, fade_len } = *params;
    if clips.is_empty() {
        bail!(InvalidInput, "no clips for class '{class}'");
    }
    if fade_len == 0 || fade_len > length {
        bail!(InvalidInput, "fade length {fade_len} must be in [1, {length}]");
    }
    let sample_rate = clips[0].sample_rate();
    if let Some(c) = clips.iter().find(|c| c.sample_rate() != sample_rate) {
        bail!(InvalidInput, "mixed sample rates {} and {}", sample_rate, c.sample_rate());
    }
    let mut mean = vec![0.0; length];
    for clip in clips {
        let fitted = clip.peak_normalized().fit_length(length);
        let mag = hilbert_magnitude(fitted.samples())?;
        mean.iter_mut().zip(&mag).for_each(|(m, v)| *m += v);
    }
    let inv = 1.0 / clips.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);

    let mut env = moving_average(&mean, smooth_len);
    let start = length - fade_len;
    for (i, v) in env[start..].iter_mut().enumerate() {
        let gain = if fade_len == 1 { 0.0 } else { (fade_len - 1 - i) as f64 / (fade_len - 1) as f64 };
        *v *= gain;
    }
    let peak = env.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        bail!(InvalidInput, "clips of class '{class}' carry no energy before the fade");
    }
    env.iter_mut().for_each(|v| *v /= peak);
    EnvelopeTable::new(class, env, sample_rate)
}

/// `y[n] = x[n]·e[n]`.
pub fn apply_envelope(x: &AudioClip, env: &EnvelopeTable) -> Result<AudioClip> {
    if x.len() != env.len() {
        bail!(Shape, "clip has {} samples, envelope {}", x.len(), env.len());
    }
    if x.sample_rate() != env.sample_rate() {
        bail!(InvalidInput, "clip rate {} differs from envelope rate {}", x.sample_rate(), env.sample_rate());
    }
    let y = x.samples().iter().zip(env.values()).map(|(a, e)| a * e).collect();
    AudioClip::new(y, x.sample_rate())
}

/// Graph version of [`apply_envelope`] for a signal node of matching length.
pub fn apply_envelope_var(g: &mut Graph, x: Var, env: &EnvelopeTable) -> Result<Var> {
    if g.data(x).len() != env.len() {
        bail!(Shape, "signal has {} samples, envelope {}", g.data(x).len(), env.len());
    }
    let e = g.constant(Tensor::new(g.shape(x).to_vec(), env.values().to_vec())?)?;
    g.mul(x, e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const SR: u32 = 16000;

    fn class() -> DrumClass {
        DrumClass::new("snare").unwrap()
    }

    fn tone(len: usize, amp: f64) -> AudioClip {
        AudioClip::new((0..len).map(|i| amp * (2.0 * PI * 0.05 * i as f64).cos()).collect(), SR).unwrap()
    }

    #[test]
    fn constant_tone_gives_flat_envelope() {
        let p = EnvelopeParams { length: 4096, smooth_len: 65, fade_len: 256 };
        let env = extract_class_envelope(class(), &[tone(4096, 0.3)], &p).unwrap();
        let v = env.values();
        for &e in &v[200..4096 - 256 - 100] {
            assert!((e - 1.0).abs() < 0.01, "{e}");
        }
        assert_eq!(v[4095], 0.0);
        assert!((v.iter().cloned().fold(0.0, f64::max) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn silence_halves_then_renormalizes() {
        let p = EnvelopeParams { length: 2048, smooth_len: 33, fade_len: 128 };
        let silence = AudioClip::new(vec![0.0; 2048], SR).unwrap();
        let one = extract_class_envelope(class(), &[tone(2048, 1.0)], &p).unwrap();
        let two = extract_class_envelope(class(), &[tone(2048, 1.0), silence], &p).unwrap();
        for (a, b) in one.values().iter().zip(two.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tracks_exponential_decay() {
        let (len, tau) = (16384usize, 3000.0);
        let x: Vec<f64> = (0..len).map(|n| (-(n as f64) / tau).exp() * (2.0 * PI * 0.07 * n as f64).cos()).collect();
        let p = EnvelopeParams { length: len, smooth_len: 33, fade_len: 64 };
        let env = extract_class_envelope(class(), &[AudioClip::new(x, SR).unwrap()], &p).unwrap();
        let edge = len / 20;
        for n in edge..len - edge {
            let truth = (-(n as f64) / tau).exp();
            assert!((env.values()[n] - truth).abs() / truth < 0.03, "n={n}");
        }
    }

    #[test]
    fn errors_on_bad_input() {
        let p = EnvelopeParams { length: 128, smooth_len: 3, fade_len: 16 };
        assert!(extract_class_envelope(class(), &[], &p).is_err());
        let bad = EnvelopeParams { fade_len: 0, ..p };
        assert!(extract_class_envelope(class(), &[tone(128, 1.0)], &bad).is_err());
        let env = EnvelopeTable::flat(class(), 64, SR).unwrap();
        assert!(apply_envelope(&tone(32, 1.0), &env).is_err());
        let other_rate = AudioClip::new(vec![0.5; 64], 8000).unwrap();
        assert!(apply_envelope(&other_rate, &env).is_err());
        assert!(DrumClass::new("closed hh").is_err());
    }

    #[test]
    fn flat_envelope_is_identity_and_fade_zeroes_end() {
        let x = tone(512, 0.7);
        let flat = EnvelopeTable::flat(class(), 512, SR).unwrap();
        assert_eq!(apply_envelope(&x, &flat).unwrap(), x);
        let p = EnvelopeParams { length: 512, smooth_len: 9, fade_len: 32 };
        let env = extract_class_envelope(class(), &[tone(512, 1.0)], &p).unwrap();
        let y = apply_envelope(&x, &env).unwrap();
        assert_eq!(*y.samples().last().unwrap(), 0.0);
    }

    #[test]
    fn apply_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let len = rng.gen_range(4..300);
            let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let e: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
            let env = EnvelopeTable::new(class(), e.clone(), SR).unwrap();
            let y = apply_envelope(&AudioClip::new(x.clone(), SR).unwrap(), &env).unwrap();
            for i in 0..len {
                assert_eq!(y.samples()[i], x[i] * e[i]);
            }
        }
    }

    #[test]
    fn moving_average_edges_use_available_samples() {
        let out = moving_average(&[1.0, 2.0, 3.0, 4.0], 3);
        assert_eq!(out, vec![1.5, 2.0, 3.0, 3.5]);
    }

    proptest! {
        #[test]
        fn envelope_contracts_signal(xs in prop::collection::vec(-1.0f64..1.0, 64..256), seed in 0u64..1000) {
            let n = xs.len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let clips: Vec<AudioClip> = (0..3)
                .map(|_| AudioClip::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), SR).unwrap())
                .collect();
            let p = EnvelopeParams { length: n, smooth_len: 5, fade_len: 8 };
            let env = extract_class_envelope(class(), &clips, &p).unwrap();
            let y = apply_envelope(&AudioClip::new(xs.clone(), SR).unwrap(), &env).unwrap();
            for (a, b) in y.samples().iter().zip(&xs) {
                prop_assert!(a.abs() <= b.abs());
            }
            // permutation invariance
            let mut rev = clips.clone();
            rev.reverse();
            let env2 = extract_class_envelope(class(), &rev, &p).unwrap();
            for (a, b) in env.values().iter().zip(env2.values()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
