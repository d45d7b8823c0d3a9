//! Binary checkpoint: magic `SWGK`, u32 version, u32 header length, a TOML
//! header, u32 tensor count, then per tensor a u32-prefixed name, u32 rank,
//! u32 dims and f32 little-endian data.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::envelope::{DrumClass, EnvelopeTable};
use crate::error::{bail, Error, Result};
use crate::timbre::{DescriptorConfig, DescriptorVector};

use super::config::{toml_error, GanConfig};
use super::model::{Discriminator, Generator};
use super::params::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SWGK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained networks plus what evaluation needs without the dataset: class
/// envelopes and the descriptors of every training item.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: GanConfig,
    pub descriptor_config: DescriptorConfig,
    pub classes: Vec<DrumClass>,
    pub generator: Generator,
    pub discriminator: Discriminator,
    /// One per class when the model applies envelopes, else empty.
    pub envelopes: Vec<EnvelopeTable>,
    pub dataset_labels: Vec<usize>,
    pub dataset_descriptors: Vec<DescriptorVector>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    classes: Vec<DrumClass>,
    dataset_labels: Vec<usize>,
    gan: GanConfig,
    descriptors: DescriptorConfig,
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read, what: &str) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Format(format!("checkpoint truncated in {what}")))?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_bytes(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(|_| Error::Format(format!("checkpoint truncated in {what}")))?;
    Ok(b)
}

fn put_tensor(w: &mut impl Write, name: &str, t: &Tensor) -> Result<()> {
    put_u32(w, name.len())?;
    w.write_all(name.as_bytes())?;
    put_u32(w, t.shape().len())?;
    for d in t.shape() {
        put_u32(w, *d)?;
    }
    for v in t.data() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn get_tensor(r: &mut impl Read) -> Result<(String, Tensor)> {
    let n = get_u32(r, "tensor name")?;
    let name = String::from_utf8(get_bytes(r, n, "tensor name")?)
        .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
    let rank = get_u32(r, "tensor rank")?;
    let shape = (0..rank).map(|_| get_u32(r, "tensor shape")).collect::<Result<Vec<_>>>()?;
    let len: usize = shape.iter().product();
    let raw = get_bytes(r, len * 4, &format!("data of {name}"))?;
    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    Ok((name, Tensor::new(shape, data)?))
}

impl Checkpoint {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let header = Header {
            classes: self.classes.clone(),
            dataset_labels: self.dataset_labels.clone(),
            gan: self.config.clone(),
            descriptors: self.descriptor_config.clone(),
        };
        let text = toml::to_string(&header).map_err(toml_error)?;
        w.write_all(CHECKPOINT_MAGIC)?;
        put_u32(w, CHECKPOINT_VERSION as usize)?;
        put_u32(w, text.len())?;
        w.write_all(text.as_bytes())?;

        let gp = self.generator.params();
        let dp = self.discriminator.params();
        let count = gp.len() + dp.len() + self.envelopes.len() + 1;
        put_u32(w, count)?;
        for (n, t) in gp.names().iter().zip(gp.tensors()).chain(dp.names().iter().zip(dp.tensors())) {
            put_tensor(w, n, t)?;
        }
        for e in &self.envelopes {
            put_tensor(w, &format!("env.{}", e.class.name()), &Tensor::vector(e.values().to_vec()))?;
        }
        let desc: Vec<f64> = self.dataset_descriptors.iter().flat_map(|d| d.to_array()).collect();
        put_tensor(w, "data.descriptors", &Tensor::new(vec![self.dataset_descriptors.len(), 3], desc)?)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let magic = get_bytes(r, 4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            bail!(Format, "not a checkpoint (bad magic)");
        }
        let version = get_u32(r, "version")?;
        if version != CHECKPOINT_VERSION as usize {
            bail!(Format, "unsupported checkpoint version {version}");
        }
        let n = get_u32(r, "header")?;
        let text = String::from_utf8(get_bytes(r, n, "header")?)
            .map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))?;
        let header: Header = toml::from_str(&text).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let count = get_u32(r, "tensor count")?;
        let mut g = Vec::new();
        let mut d = Vec::new();
        let mut env = Vec::new();
        let mut desc = None;
        for _ in 0..count {
            let (name, t) = get_tensor(r)?;
            if name.starts_with("g.") {
                g.push((name, t));
            } else if name.starts_with("d.") {
                d.push((name, t));
            } else if let Some(class) = name.strip_prefix("env.") {
                env.push((class.to_string(), t));
            } else if name == "data.descriptors" {
                desc = Some(t);
            } else {
                bail!(Format, "unexpected tensor {name}");
            }
        }
        let n_classes = header.classes.len();
        let generator = Generator::from_params(&header.gan, n_classes, ParamStore::new(g))?;
        let discriminator = Discriminator::from_params(&header.gan, n_classes, ParamStore::new(d))?;
        let mut envelopes = Vec::new();
        if !env.is_empty() {
            if env.len() != n_classes {
                bail!(Format, "checkpoint has {} envelopes for {n_classes} classes", env.len());
            }
            for ((name, t), class) in env.into_iter().zip(&header.classes) {
                if name != class.name() {
                    bail!(Format, "envelope {name} is out of class order");
                }
                envelopes.push(EnvelopeTable::new(class.clone(), t.into_data(), header.gan.sample_rate)?);
            }
        }
        let desc = match desc {
            Some(t) if t.shape() == [header.dataset_labels.len(), 3] => t,
            _ => bail!(Format, "checkpoint is missing the dataset descriptor table"),
        };
        let dataset_descriptors =
            desc.data().chunks_exact(3).map(|c| DescriptorVector::new(c[0], c[1], c[2])).collect();
        if header.dataset_labels.iter().any(|l| *l >= n_classes) {
            bail!(Format, "dataset label out of range");
        }
        Ok(Self {
            config: header.gan,
            descriptor_config: header.descriptors,
            classes: header.classes,
            generator,
            discriminator,
            envelopes,
            dataset_labels: header.dataset_labels,
            dataset_descriptors,
        })
    }

    /// Rounds every stored value to f32, the precision of the file, so a
    /// saved and reloaded checkpoint generates identical audio.
    pub fn round_to_storage(&mut self) -> Result<()> {
        let r = |v: &mut f64| *v = *v as f32 as f64;
        for store in [self.generator.params_mut(), self.discriminator.params_mut()] {
            for i in 0..store.len() {
                store.tensor_mut(i).data_mut().iter_mut().for_each(r);
            }
        }
        for e in &mut self.envelopes {
            let mut v = e.values().to_vec();
            v.iter_mut().for_each(r);
            *e = EnvelopeTable::new(e.class.clone(), v, e.sample_rate())?;
        }
        for d in &mut self.dataset_descriptors {
            let mut a = d.to_array();
            a.iter_mut().for_each(r);
            *d = DescriptorVector::from_array(a);
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }

    /// Dataset descriptors of class `c`.
    pub fn class_descriptors(&self, c: usize) -> Vec<DescriptorVector> {
        self.dataset_labels.iter().zip(&self.dataset_descriptors).filter(|(l, _)| **l == c).map(|(_, d)| *d).collect()
    }
}
