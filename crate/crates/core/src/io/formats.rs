//! Manifest, envelope, embedding and log file formats.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::envelope::{DrumClass, EnvelopeTable};
use crate::error::{bail, Error, Result};
use crate::eval::EmbeddingMatrix;
use crate::gan::LossRecord;
use crate::sampler::ManifestEntry;

pub const ENVELOPE_MAGIC: &[u8; 4] = b"ENV1";
pub const EMBEDDING_MAGIC: &[u8; 4] = b"F32M";

/// One JSON object `{"path": …, "class": …}` per line; blank lines skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: ManifestEntry =
            serde_json::from_str(line).map_err(|e| Error::Format(format!("manifest line {}: {e}", i + 1)))?;
        DrumClass::new(e.class.name()).map_err(|e| Error::Format(format!("manifest line {}: {e}", i + 1)))?;
        out.push(e);
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    parse_manifest(&std::fs::read_to_string(path)?)
}

pub fn write_manifest(entries: &[ManifestEntry], w: &mut impl Write) -> Result<()> {
    for e in entries {
        let line = serde_json::to_string(e).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

fn take<'a>(b: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if b.len() < n {
        bail!(Format, "truncated {what}");
    }
    let (head, tail) = b.split_at(n);
    *b = tail;
    Ok(head)
}

fn take_u32(b: &mut &[u8], what: &str) -> Result<u32> {
    let h = take(b, 4, what)?;
    Ok(u32::from_le_bytes([h[0], h[1], h[2], h[3]]))
}

fn f32s(raw: &[u8]) -> Vec<f64> {
    raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect()
}

/// `ENV1`, u32 length, u32 sample rate, f32 LE values.
pub fn encode_envelope(env: &EnvelopeTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * env.len());
    out.extend_from_slice(ENVELOPE_MAGIC);
    out.extend_from_slice(&(env.len() as u32).to_le_bytes());
    out.extend_from_slice(&env.sample_rate().to_le_bytes());
    for v in env.values() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_envelope(class: DrumClass, mut b: &[u8]) -> Result<EnvelopeTable> {
    if take(&mut b, 4, "envelope header")? != ENVELOPE_MAGIC {
        bail!(Format, "not an envelope file (bad magic)");
    }
    let len = take_u32(&mut b, "envelope header")? as usize;
    let sr = take_u32(&mut b, "envelope header")?;
    let raw = take(&mut b, 4 * len, "envelope values")?;
    if !b.is_empty() {
        bail!(Format, "{} trailing bytes after envelope values", b.len());
    }
    EnvelopeTable::new(class, f32s(raw), sr)
}

/// `F32M`, u32 rows, u32 cols, row-major f32 LE.
pub fn encode_embeddings(e: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * e.data().len());
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&(e.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(e.cols() as u32).to_le_bytes());
    for v in e.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_embeddings(mut b: &[u8]) -> Result<EmbeddingMatrix> {
    if take(&mut b, 4, "embedding header")? != EMBEDDING_MAGIC {
        bail!(Format, "not an embedding file (bad magic)");
    }
    let rows = take_u32(&mut b, "embedding header")? as usize;
    let cols = take_u32(&mut b, "embedding header")? as usize;
    let raw = take(&mut b, 4 * rows * cols, "embedding values")?;
    if !b.is_empty() {
        bail!(Format, "{} trailing bytes after embedding values", b.len());
    }
    EmbeddingMatrix::new(rows, cols, f32s(raw))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    decode_embeddings(&std::fs::read(path)?)
}

/// Loss log CSV with header `step,d_loss,g_loss,desc_l1`.
pub struct LossLog<W: Write> {
    out: csv::Writer<W>,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

impl<W: Write> LossLog<W> {
    pub fn new(w: W) -> Result<Self> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "d_loss", "g_loss", "desc_l1"]).map_err(csv_err)?;
        Ok(Self { out })
    }

    pub fn push(&mut self, r: &LossRecord) -> Result<()> {
        self.out
            .write_record([r.step.to_string(), r.d_loss.to_string(), r.g_loss.to_string(), r.desc_l1.to_string()])
            .map_err(csv_err)
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_loss_log(r: impl BufRead) -> Result<Vec<LossRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["step", "d_loss", "g_loss", "desc_l1"] {
        bail!(Format, "unexpected loss log header");
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let num = |i: usize| -> Result<f64> {
            row[i].parse().map_err(|_| Error::Format(format!("bad number '{}' in loss log", &row[i])))
        };
        out.push(LossRecord { step: num(0)? as usize, d_loss: num(1)?, g_loss: num(2)?, desc_l1: num(3)? });
    }
    Ok(out)
}
