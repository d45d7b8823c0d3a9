//! Mono RIFF/WAVE reading and writing, PCM16 or IEEE float32.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::dsp::AudioClip;
use crate::error::{bail, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

impl FromStr for WavFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pcm16" => Ok(WavFormat::Pcm16),
            "float32" => Ok(WavFormat::Float32),
            other => bail!(InvalidInput, "unknown wav format '{other}' (pcm16, float32)"),
        }
    }
}

impl fmt::Display for WavFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WavFormat::Pcm16 => "pcm16",
            WavFormat::Float32 => "float32",
        })
    }
}

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

pub fn encode_wav(clip: &AudioClip, format: WavFormat) -> Vec<u8> {
    let (code, bits) = match format {
        WavFormat::Pcm16 => (FORMAT_PCM, 16u16),
        WavFormat::Float32 => (FORMAT_FLOAT, 32u16),
    };
    let block = bits / 8;
    let data_len = clip.len() as u32 * block as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&code.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate().to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate() * block as u32).to_le_bytes());
    out.extend_from_slice(&block.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in clip.samples() {
        match format {
            WavFormat::Pcm16 => {
                let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
            WavFormat::Float32 => out.extend_from_slice(&(s as f32).to_le_bytes()),
        }
    }
    out
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

struct Fmt {
    code: u16,
    channels: u16,
    sample_rate: u32,
    byte_rate: u32,
    block_align: u16,
    bits: u16,
}

pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 {
        bail!(Format, "truncated wav: missing RIFF header");
    }
    if &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        bail!(Format, "not a RIFF/WAVE file");
    }
    let mut pos = 12;
    let mut fmt: Option<Fmt> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() && data.is_none() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        let name = String::from_utf8_lossy(id).trim_end().to_string();
        if body + size > bytes.len() {
            bail!(Format, "truncated wav: {name} chunk declares {size} bytes, {} present", bytes.len() - body);
        }
        let chunk = &bytes[body..body + size];
        match id {
            b"fmt " => {
                if size < 16 {
                    bail!(Format, "fmt chunk too short ({size} bytes)");
                }
                let mut code = u16_at(chunk, 0);
                if code == FORMAT_EXTENSIBLE {
                    if size < 26 {
                        bail!(Format, "extensible fmt chunk too short ({size} bytes)");
                    }
                    code = u16_at(chunk, 24);
                }
                fmt = Some(Fmt {
                    code,
                    channels: u16_at(chunk, 2),
                    sample_rate: u32_at(chunk, 4),
                    byte_rate: u32_at(chunk, 8),
                    block_align: u16_at(chunk, 12),
                    bits: u16_at(chunk, 14),
                });
            }
            b"data" => {
                if fmt.is_none() {
                    bail!(Format, "missing fmt chunk before data chunk");
                }
                data = Some(chunk);
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }
    let fmt = fmt.ok_or_else(|| Error::Format("truncated wav: missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Format("truncated wav: missing data chunk".into()))?;
    if fmt.channels != 1 {
        bail!(Format, "unsupported channel count {} (mono only)", fmt.channels);
    }
    let width = match (fmt.code, fmt.bits) {
        (FORMAT_PCM, 16) => 2,
        (FORMAT_FLOAT, 32) => 4,
        (c, b) => bail!(Format, "unsupported sample format (code {c}, {b} bits)"),
    };
    if fmt.block_align as usize != width || fmt.byte_rate != fmt.sample_rate * width as u32 {
        bail!(Format, "fmt chunk block_align/byte_rate inconsistent with {} Hz, {} bits", fmt.sample_rate, fmt.bits);
    }
    if data.len() % width != 0 {
        bail!(Format, "data chunk length {} is not a multiple of {width}", data.len());
    }
    let samples: Vec<f64> = if width == 2 {
        data.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0).collect()
    } else {
        data.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect()
    };
    AudioClip::new(samples, fmt.sample_rate)
}

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let bytes = std::fs::read(path)?;
    decode_wav(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::InvalidInput(m) => Error::InvalidInput(format!("{}: {m}", path.display())),
        e => e,
    })
}

pub fn write_wav(clip: &AudioClip, path: &Path, format: WavFormat) -> Result<()> {
    std::fs::write(path, encode_wav(clip, format))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn float32_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s: Vec<f64> = (0..1000).map(|_| rng.gen_range(-1.0f32..1.0) as f64).collect();
        let clip = AudioClip::new(s, 22050).unwrap();
        let back = decode_wav(&encode_wav(&clip, WavFormat::Float32)).unwrap();
        assert_eq!(back, clip);
    }

    #[test]
    fn pcm16_error_bounded() {
        let s: Vec<f64> = (0..4410).map(|i| (i as f64 * 0.0628).sin()).collect();
        let clip = AudioClip::new(s, 44100).unwrap();
        let back = decode_wav(&encode_wav(&clip, WavFormat::Pcm16)).unwrap();
        let err = clip.samples().iter().zip(back.samples()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1.0 / 32768.0, "{err}");
        assert_eq!(back.sample_rate(), 44100);
    }

    #[test]
    fn truncation_names_the_chunk() {
        let clip = AudioClip::new(vec![0.25; 100], 8000).unwrap();
        let bytes = encode_wav(&clip, WavFormat::Pcm16);
        let e = decode_wav(&bytes[..30]).unwrap_err().to_string();
        assert!(e.contains("fmt"), "{e}");
        let e = decode_wav(&bytes[..36]).unwrap_err().to_string();
        assert!(e.contains("data"), "{e}");
        let e = decode_wav(&bytes[..100]).unwrap_err().to_string();
        assert!(e.contains("data chunk"), "{e}");
        assert!(decode_wav(&bytes[..8]).is_err());
    }

    #[test]
    fn rejects_stereo_and_odd_formats() {
        let clip = AudioClip::new(vec![0.0; 10], 8000).unwrap();
        let mut bytes = encode_wav(&clip, WavFormat::Pcm16);
        bytes[22] = 2;
        assert!(decode_wav(&bytes).unwrap_err().to_string().contains("channel"));
        let mut bytes = encode_wav(&clip, WavFormat::Pcm16);
        bytes[34] = 8;
        assert!(decode_wav(&bytes).is_err());
    }

    #[test]
    fn skips_unknown_chunks() {
        let clip = AudioClip::new(vec![0.5, -0.5, 0.25], 8000).unwrap();
        let bytes = encode_wav(&clip, WavFormat::Float32);
        let mut with_list = bytes[..36].to_vec();
        with_list.extend_from_slice(b"LIST");
        with_list.extend_from_slice(&3u32.to_le_bytes());
        with_list.extend_from_slice(&[1, 2, 3, 0]);
        with_list.extend_from_slice(&bytes[36..]);
        assert_eq!(decode_wav(&with_list).unwrap(), clip);
    }
}
