//! Built-in synthetic drum set: kick-like, snare-like and hat-like one-shots
//! with randomized pitch, decay and noise colour.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dsp::AudioClip;
use crate::envelope::DrumClass;
use crate::error::{bail, Error, Result};
use crate::gan::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Kick,
    Snare,
    Hat,
}

impl SynthKind {
    pub const ALL: [SynthKind; 3] = [SynthKind::Kick, SynthKind::Snare, SynthKind::Hat];

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Kick => "kick",
            SynthKind::Snare => "snare",
            SynthKind::Hat => "hat",
        }
    }

    pub fn class(self) -> DrumClass {
        DrumClass::new(self.name()).expect("static class names are valid")
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown synthetic class '{s}'")))
    }
}

/// Splits `n` into counts proportional to `proportions` (largest remainder,
/// ties to the earlier class).
pub fn allocate(n: usize, proportions: &[f64]) -> Result<Vec<usize>> {
    if proportions.is_empty() || proportions.iter().any(|p| !(*p >= 0.0)) {
        bail!(InvalidInput, "proportions must be non-negative");
    }
    let total: f64 = proportions.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        bail!(InvalidInput, "proportions sum to {total}, expected 1");
    }
    let exact: Vec<f64> = proportions.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| (e + 1e-9).floor() as usize).collect();
    let mut left = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - counts[a] as f64, exact[b] - counts[b] as f64);
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    Ok(counts)
}

fn noise(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// One randomized clip of `kind`, peak-normalized to a random level in [0.5, 0.95].
pub fn synth_clip(kind: SynthKind, sample_rate: u32, len: usize, rng: &mut impl Rng) -> Result<AudioClip> {
    if len == 0 || sample_rate == 0 {
        bail!(InvalidInput, "synthetic clips need a positive length and sample rate");
    }
    let dt = 1.0 / sample_rate as f64;
    let mut x = vec![0.0; len];
    match kind {
        SynthKind::Kick => {
            let f0 = rng.gen_range(60.0..90.0);
            let sweep = rng.gen_range(0.0..2.0);
            let tau = rng.gen_range(0.06..0.2);
            let click = rng.gen_range(0.0..1.5);
            let click_len = (rng.gen_range(0.002..0.008) * sample_rate as f64) as usize;
            let mut phase = 0.0;
            for (i, s) in x.iter_mut().enumerate() {
                let t = i as f64 * dt;
                let f = f0 * (1.0 + sweep * (-t / 0.02).exp());
                phase += TAU * f * dt;
                *s = phase.sin() * (-t / tau).exp();
                if i < click_len {
                    *s += click * noise(rng) * (1.0 - i as f64 / click_len as f64);
                }
            }
        }
        SynthKind::Snare => {
            let f = 180.0 * rng.gen_range(0.95..1.05);
            let tau_t = rng.gen_range(0.05..0.12);
            let tau_n = rng.gen_range(0.04..0.12);
            let mix = rng.gen_range(0.3..0.9);
            let lp = rng.gen_range(0.0..0.7);
            let mut y = 0.0;
            for (i, s) in x.iter_mut().enumerate() {
                let t = i as f64 * dt;
                y = (1.0 - lp) * noise(rng) + lp * y;
                *s = (1.0 - mix) * (TAU * f * t).sin() * (-t / tau_t).exp() + mix * y * (-t / tau_n).exp();
            }
        }
        SynthKind::Hat => {
            let cutoff = rng.gen_range(1000.0..7000.0f64).min(0.45 * sample_rate as f64);
            let a = 1.0 / (1.0 + TAU * cutoff * dt);
            let tau = rng.gen_range(0.01..0.05);
            let (mut prev_in, mut y) = (0.0, 0.0);
            for (i, s) in x.iter_mut().enumerate() {
                let t = i as f64 * dt;
                let v = noise(rng);
                y = a * (y + v - prev_in);
                prev_in = v;
                *s = y * (-t / tau).exp();
            }
        }
    }
    let level = rng.gen_range(0.5..0.95);
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= level / peak);
    }
    AudioClip::new(x, sample_rate)
}

/// `n` clips split over kick/snare/hat by `proportions`. Clip `i` uses
/// substream `i` of `seed`.
pub fn synth_dataset(
    n: usize,
    proportions: [f64; 3],
    sample_rate: u32,
    len: usize,
    seed: u64,
) -> Result<Vec<(DrumClass, AudioClip)>> {
    let counts = allocate(n, &proportions)?;
    let mut out = Vec::with_capacity(n);
    for (kind, count) in SynthKind::ALL.into_iter().zip(counts) {
        for _ in 0..count {
            let mut rng = stream_rng(seed, out.len() as u64);
            out.push((kind.class(), synth_clip(kind, sample_rate, len, &mut rng)?));
        }
    }
    Ok(out)
}
