//! Signal primitives shared by every other module: the audio clip type,
//! forward/inverse DFT, the DFT-based analytic signal and mel-band log
//! energies.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            bail!(InvalidInput, "audio clip must contain at least one sample");
        }
        if sample_rate == 0 {
            bail!(InvalidInput, "sample rate must be positive");
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            bail!(NonFinite, "sample {i} is not finite");
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    pub fn rms(&self) -> f64 {
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    /// Scales to unit peak. Silent clips are returned unchanged.
    pub fn peak_normalized(&self) -> AudioClip {
        let peak = self.peak();
        if peak == 0.0 {
            return self.clone();
        }
        AudioClip { samples: self.samples.iter().map(|s| s / peak).collect(), sample_rate: self.sample_rate }
    }

    /// Zero-pads at the tail or truncates to exactly `len` samples.
    pub fn fit_length(&self, len: usize) -> AudioClip {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        AudioClip { samples, sample_rate: self.sample_rate }
    }
}

/// Full complex DFT of a clip.
#[derive(Debug, Clone)]
pub struct ComplexSpectrum {
    pub bins: Vec<Complex64>,
    pub sample_rate: u32,
    pub source_length: usize,
}

impl ComplexSpectrum {
    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.source_length as f64
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// In-place unnormalized forward DFT: X[k] = Σ x[n] e^{-2πikn/N}.
pub fn fft_in_place(buf: &mut [Complex64]) {
    if buf.is_empty() {
        return;
    }
    plan(buf.len(), false).process(buf);
}

/// In-place unnormalized inverse DFT: x[n] = Σ X[k] e^{+2πikn/N}.
pub fn ifft_in_place(buf: &mut [Complex64]) {
    if buf.is_empty() {
        return;
    }
    plan(buf.len(), true).process(buf);
}

/// Forward DFT of a real sequence.
pub fn dft_real(samples: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = samples.iter().map(|&s| Complex64::new(s, 0.0)).collect();
    fft_in_place(&mut buf);
    buf
}

pub fn dft(clip: &AudioClip) -> Result<ComplexSpectrum> {
    if clip.is_empty() {
        bail!(InvalidInput, "dft of an empty signal");
    }
    Ok(ComplexSpectrum { bins: dft_real(clip.samples()), sample_rate: clip.sample_rate(), source_length: clip.len() })
}

/// Normalized inverse DFT (1/N), the exact inverse of [`dft`].
pub fn inverse_dft(spectrum: &ComplexSpectrum) -> Result<Vec<Complex64>> {
    if spectrum.bins.is_empty() {
        bail!(InvalidInput, "inverse dft of an empty spectrum");
    }
    let mut buf = spectrum.bins.clone();
    ifft_in_place(&mut buf);
    let scale = 1.0 / buf.len() as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
    Ok(buf)
}

/// Analytic signal of a real sequence: negative-frequency bins zeroed,
/// positive ones doubled, DC and Nyquist left at unit weight.
pub fn analytic_signal_of(samples: &[f64]) -> Result<Vec<Complex64>> {
    let n = samples.len();
    if n < 4 {
        bail!(InvalidInput, "analytic signal needs at least 4 samples, got {n}");
    }
    let mut spectrum = dft_real(samples);
    let half = n / 2;
    // bins 1..ceil(n/2) are strictly positive frequencies
    let pos_end = n.div_ceil(2);
    for c in spectrum.iter_mut().take(pos_end).skip(1) {
        *c *= 2.0;
    }
    let neg_start = if n.is_multiple_of(2) { half + 1 } else { pos_end };
    for c in spectrum.iter_mut().skip(neg_start) {
        *c = Complex64::new(0.0, 0.0);
    }
    ifft_in_place(&mut spectrum);
    let scale = 1.0 / n as f64;
    spectrum.iter_mut().for_each(|c| *c *= scale);
    Ok(spectrum)
}

pub fn analytic_signal(clip: &AudioClip) -> Result<Vec<Complex64>> {
    analytic_signal_of(clip.samples())
}

/// Magnitude of the analytic signal (amplitude envelope).
pub fn hilbert_magnitude(samples: &[f64]) -> Result<Vec<f64>> {
    Ok(analytic_signal_of(samples)?.iter().map(|c| c.norm()).collect())
}

/// Log floor added to mel band power.
pub const MEL_LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub n_bands: usize,
    pub frame_len: usize,
    pub hop: usize,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self { n_bands: 32, frame_len: 1024, hop: 512 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelFrame {
    pub band_energies: Vec<f64>,
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-mel filterbank over the `frame_len / 2 + 1` one-sided bins,
/// spanning 0 Hz to Nyquist. Each filter is normalized to unit total weight so
/// that a flat spectrum yields equal band energies.
pub fn mel_filterbank(n_bands: usize, frame_len: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let n_bins = frame_len / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_bands + 2).map(|i| mel_to_hz(mel_max * i as f64 / (n_bands + 1) as f64)).collect();
    let bin_hz = sample_rate as f64 / frame_len as f64;
    (0..n_bands)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            let mut w: Vec<f64> = (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect();
            let total: f64 = w.iter().sum();
            if total > 0.0 {
                w.iter_mut().for_each(|v| *v /= total);
            } else {
                // band narrower than a bin: take the nearest bin
                let k = ((mid / bin_hz).round() as usize).min(n_bins - 1);
                w[k] = 1.0;
            }
            w
        })
        .collect()
}

fn hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len).map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()).collect()
}

/// Per-frame log mel-band power, `ln(1e-10 + power)`.
pub fn mel_log_energies(clip: &AudioClip, cfg: &MelConfig) -> Result<Vec<MelFrame>> {
    let MelConfig { n_bands, frame_len, hop } = *cfg;
    if n_bands == 0 {
        bail!(InvalidInput, "n_bands must be at least 1");
    }
    if frame_len == 0 || hop == 0 {
        bail!(InvalidInput, "frame_len and hop must be positive");
    }
    if clip.len() < frame_len {
        bail!(InvalidInput, "clip of {} samples is shorter than frame length {frame_len}", clip.len());
    }
    let bank = mel_filterbank(n_bands, frame_len, clip.sample_rate());
    let window = hann(frame_len);
    let n_frames = (clip.len() - frame_len) / hop + 1;
    let x = clip.samples();
    let mut frames = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_len];
    for f in 0..n_frames {
        let start = f * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(x[start + i] * window[i], 0.0);
        }
        fft_in_place(&mut buf);
        let power: Vec<f64> = buf[..frame_len / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
        let band_energies = bank
            .iter()
            .map(|w| {
                let e: f64 = w.iter().zip(&power).map(|(a, p)| a * p).sum();
                (MEL_LOG_FLOOR + e).ln()
            })
            .collect();
        frames.push(MelFrame { band_energies });
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn naive_dft(x: &[f64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (j, &v)| {
                    let th = -2.0 * PI * (k * j % n) as f64 / n as f64;
                    acc + Complex64::new(th.cos(), th.sin()) * v
                })
            })
            .collect()
    }

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn clip_rejects_bad_input() {
        assert!(AudioClip::new(vec![], 16000).is_err());
        assert!(AudioClip::new(vec![0.0], 0).is_err());
        assert!(AudioClip::new(vec![0.0, f64::NAN], 16000).is_err());
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let clip = AudioClip::new(vec![1.0, 0.0, 0.0, 0.0], 4).unwrap();
        let s = dft(&clip).unwrap();
        for b in &s.bins {
            assert!((b - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn single_tone_spectrum() {
        let n = 64;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * 4.0 * i as f64 / n as f64).cos()).collect();
        let s = dft(&AudioClip::new(x, 64).unwrap()).unwrap();
        for (k, b) in s.bins.iter().enumerate() {
            let expect = if k == 4 || k == 60 { 32.0 } else { 0.0 };
            assert!((b.norm() - expect).abs() < 1e-9, "bin {k}: {}", b.norm());
        }
    }

    #[test]
    fn matches_naive_dft() {
        for (len, seed) in [(128, 1), (100, 2), (37, 3)] {
            let x = noise(len, seed);
            let fast = dft_real(&x);
            let slow = naive_dft(&x);
            let scale = slow.iter().map(|c| c.norm()).fold(0.0, f64::max);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).norm() / scale < 1e-9);
            }
        }
    }

    #[test]
    fn empty_dft_is_error() {
        let s = ComplexSpectrum { bins: vec![], sample_rate: 1, source_length: 0 };
        assert!(inverse_dft(&s).is_err());
    }

    #[test]
    fn parseval_and_round_trip() {
        for len in [64, 90, 256] {
            let x = noise(len, len as u64);
            let clip = AudioClip::new(x.clone(), 16000).unwrap();
            let s = dft(&clip).unwrap();
            let e_time: f64 = x.iter().map(|v| v * v).sum();
            let e_freq: f64 = s.bins.iter().map(|c| c.norm_sqr()).sum::<f64>() / len as f64;
            assert!((e_time - e_freq).abs() / e_time < 1e-9);
            let back = inverse_dft(&s).unwrap();
            for (a, b) in back.iter().zip(&x) {
                assert!((a.re - b).abs() < 1e-9 && a.im.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn analytic_of_tone_has_unit_magnitude() {
        let n = 256;
        for amp in [1.0, 0.5] {
            let x: Vec<f64> = (0..n).map(|i| amp * (2.0 * PI * 8.0 * i as f64 / n as f64).cos()).collect();
            let a = analytic_signal_of(&x).unwrap();
            for (c, v) in a.iter().zip(&x) {
                assert!((c.norm() - amp).abs() < 1e-6);
                assert!((c.re - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn analytic_tracks_am_envelope() {
        let n = 4096;
        let wc = 2.0 * PI * 512.0 / n as f64;
        let wm = 2.0 * PI * 4.0 / n as f64;
        let env: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * (wm * i as f64).cos()).collect();
        let x: Vec<f64> = (0..n).map(|i| env[i] * (wc * i as f64).cos()).collect();
        let mag = hilbert_magnitude(&x).unwrap();
        let edge = n / 20;
        for i in edge..n - edge {
            assert!((mag[i] - env[i]).abs() / env[i] < 0.02);
        }
    }

    #[test]
    fn analytic_rejects_short_and_is_linear() {
        assert!(analytic_signal_of(&[1.0, 2.0, 3.0]).is_err());
        for len in [16, 33] {
            let x = noise(len, 10);
            let y = noise(len, 11);
            let (a, b) = (0.7, -1.3);
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let ax = analytic_signal_of(&x).unwrap();
            let ay = analytic_signal_of(&y).unwrap();
            let am = analytic_signal_of(&mix).unwrap();
            for i in 0..len {
                assert!((am[i] - (ax[i] * a + ay[i] * b)).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn mel_silence_hits_floor() {
        let clip = AudioClip::new(vec![0.0; 4096], 16000).unwrap();
        let frames = mel_log_energies(&clip, &MelConfig::default()).unwrap();
        assert_eq!(frames.len(), (4096 - 1024) / 512 + 1);
        for f in &frames {
            for e in &f.band_energies {
                assert!((e - MEL_LOG_FLOOR.ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mel_short_clip_is_error() {
        let clip = AudioClip::new(vec![0.0; 100], 16000).unwrap();
        assert!(mel_log_energies(&clip, &MelConfig::default()).is_err());
        let bad = MelConfig { n_bands: 0, ..MelConfig::default() };
        assert!(mel_log_energies(&AudioClip::new(vec![0.0; 2048], 16000).unwrap(), &bad).is_err());
    }

    #[test]
    fn mel_tone_peaks_in_its_band() {
        let sr = 16000;
        let x: Vec<f64> = (0..8192).map(|i| (2.0 * PI * 1000.0 * i as f64 / sr as f64).sin()).collect();
        let clip = AudioClip::new(x, sr).unwrap();
        let frames = mel_log_energies(&clip, &MelConfig::default()).unwrap();
        let bank = mel_filterbank(32, 1024, sr);
        // band whose triangle weights the 1 kHz bin (k = 64) most heavily
        let expect = (0..32).max_by(|&a, &b| bank[a][64].partial_cmp(&bank[b][64]).unwrap()).unwrap();
        for f in &frames {
            let argmax = (0..32).max_by(|&a, &b| f.band_energies[a].partial_cmp(&f.band_energies[b]).unwrap()).unwrap();
            assert_eq!(argmax, expect);
        }
    }

    #[test]
    fn mel_white_noise_is_flat() {
        let cfg = MelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hop = cfg.hop;
        let len = cfg.frame_len + 99 * hop;
        let x: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let frames = mel_log_energies(&AudioClip::new(x, 16000).unwrap(), &cfg).unwrap();
        assert_eq!(frames.len(), 100);
        let mean_power: Vec<f64> =
            (0..cfg.n_bands).map(|b| frames.iter().map(|f| f.band_energies[b].exp()).sum::<f64>() / 100.0).collect();
        let db: Vec<f64> = mean_power.iter().map(|p| 10.0 * p.log10()).collect();
        let lo = db.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo < 6.0, "spread {} dB", hi - lo);
    }

    #[test]
    fn mel_is_shift_covariant_by_hops() {
        let cfg = MelConfig { n_bands: 16, frame_len: 256, hop: 128 };
        let x = noise(256 * 8, 21);
        let mut shifted = vec![0.0; cfg.hop];
        shifted.extend_from_slice(&x[..x.len() - cfg.hop]);
        let a = mel_log_energies(&AudioClip::new(x, 16000).unwrap(), &cfg).unwrap();
        let b = mel_log_energies(&AudioClip::new(shifted, 16000).unwrap(), &cfg).unwrap();
        for i in 0..a.len() - 1 {
            for (p, q) in a[i].band_energies.iter().zip(&b[i + 1].band_energies) {
                assert!((p - q).abs() < 1e-9);
            }
        }
    }
}
