//! Natural-proportion and equal-proportion (class-balanced) sampling over a
//! class-partitioned dataset. Draws are i.i.d. with replacement.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envelope::DrumClass;
use crate::error::{bail, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub class: DrumClass,
}

/// Dataset entries with a per-class index. Classes are kept in sorted order.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    classes: Vec<DrumClass>,
    by_class: Vec<Vec<usize>>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut index: BTreeMap<DrumClass, Vec<usize>> = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            index.entry(e.class.clone()).or_default().push(i);
        }
        let (classes, by_class) = index.into_iter().unzip();
        Ok(Self { entries, classes, by_class })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn classes(&self) -> &[DrumClass] {
        &self.classes
    }

    pub fn class_index(&self, class: &DrumClass) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    /// Entry indices belonging to class `c` (by class index).
    pub fn members(&self, c: usize) -> &[usize] {
        &self.by_class[c]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Class index of every entry.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![0; self.entries.len()];
        for (c, members) in self.by_class.iter().enumerate() {
            for &i in members {
                labels[i] = c;
            }
        }
        labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Uniform over all entries.
    Natural,
    /// Uniform over classes, then uniform within the class.
    Balanced,
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "natural" => Ok(SamplingMode::Natural),
            "balanced" => Ok(SamplingMode::Balanced),
            other => bail!(InvalidInput, "unknown sampling mode '{other}'"),
        }
    }
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingMode::Natural => "natural",
            SamplingMode::Balanced => "balanced",
        })
    }
}

/// Owns its RNG; identical seeds give identical draw sequences.
pub struct Sampler<'a> {
    manifest: &'a DatasetManifest,
    mode: SamplingMode,
    rng: ChaCha8Rng,
}

impl<'a> Sampler<'a> {
    pub fn new(manifest: &'a DatasetManifest, mode: SamplingMode, seed: u64) -> Result<Self> {
        if manifest.is_empty() {
            bail!(InvalidInput, "cannot sample from an empty manifest");
        }
        Ok(Self { manifest, mode, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    /// Index of the next drawn entry.
    pub fn sample(&mut self) -> usize {
        match self.mode {
            SamplingMode::Natural => self.rng.gen_range(0..self.manifest.len()),
            SamplingMode::Balanced => {
                let c = self.rng.gen_range(0..self.manifest.classes.len());
                let members = &self.manifest.by_class[c];
                members[self.rng.gen_range(0..members.len())]
            }
        }
    }

    pub fn sample_batch(&mut self, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.sample()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassHistogram {
    pub counts: Vec<u64>,
    /// Pearson statistic against the uniform-over-classes null.
    pub chi_square: f64,
}

impl ClassHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let t = self.total() as f64;
        self.counts.iter().map(|c| *c as f64 / t).collect()
    }
}

pub fn class_histogram(draws: &[usize], n_classes: usize) -> Result<ClassHistogram> {
    if draws.is_empty() {
        bail!(InvalidInput, "histogram needs at least one draw");
    }
    if n_classes == 0 {
        bail!(InvalidInput, "histogram needs at least one class");
    }
    let mut counts = vec![0u64; n_classes];
    for &c in draws {
        if c >= n_classes {
            bail!(InvalidInput, "class index {c} out of range for {n_classes} classes");
        }
        counts[c] += 1;
    }
    let expected = draws.len() as f64 / n_classes as f64;
    let chi_square = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    Ok(ClassHistogram { counts, chi_square })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(sizes: &[(&str, usize)]) -> DatasetManifest {
        let entries = sizes
            .iter()
            .flat_map(|(name, n)| {
                (0..*n).map(move |i| ManifestEntry {
                    path: format!("{name}/{i}.wav"),
                    class: DrumClass::new(*name).unwrap(),
                })
            })
            .collect();
        DatasetManifest::new(entries).unwrap()
    }

    fn class_draws(m: &DatasetManifest, mode: SamplingMode, seed: u64, n: usize) -> Vec<usize> {
        let labels = m.labels();
        let mut s = Sampler::new(m, mode, seed).unwrap();
        (0..n).map(|_| labels[s.sample()]).collect()
    }

    #[test]
    fn empty_manifest_is_error() {
        let m = DatasetManifest::new(vec![]).unwrap();
        assert!(Sampler::new(&m, SamplingMode::Natural, 0).is_err());
    }

    #[test]
    fn single_class_modes_agree() {
        let m = manifest(&[("kick", 7)]);
        let a = Sampler::new(&m, SamplingMode::Natural, 3).unwrap().sample_batch(2000);
        let b = Sampler::new(&m, SamplingMode::Balanced, 3).unwrap().sample_batch(2000);
        let ha = class_histogram(&a, 7).unwrap();
        let hb = class_histogram(&b, 7).unwrap();
        for (x, y) in ha.frequencies().iter().zip(hb.frequencies()) {
            assert!((x - y).abs() < 0.05);
        }
    }

    #[test]
    fn balanced_evens_out_90_10() {
        let m = manifest(&[("a", 90), ("b", 10)]);
        let draws = class_draws(&m, SamplingMode::Balanced, 11, 100_000);
        for f in class_histogram(&draws, 2).unwrap().frequencies() {
            assert!((0.49..=0.51).contains(&f), "{f}");
        }
    }

    #[test]
    fn natural_follows_manifest_proportions() {
        let m = manifest(&[("kick", 3), ("snare", 18), ("tom", 45), ("closed_hh", 10), ("open_hh", 22)]);
        let draws = class_draws(&m, SamplingMode::Natural, 5, 100_000);
        let freqs = class_histogram(&draws, 5).unwrap().frequencies();
        for (c, f) in freqs.iter().enumerate() {
            let expect = m.members(c).len() as f64 / m.len() as f64;
            assert!((f - expect).abs() <= 0.01, "class {c}: {f} vs {expect}");
        }
    }

    #[test]
    fn histogram_arithmetic() {
        let h = class_histogram(&[0, 1, 2, 0, 1, 2], 3).unwrap();
        assert_eq!(h.chi_square, 0.0);
        let h = class_histogram(&vec![0; 100], 2).unwrap();
        assert_eq!(h.counts, vec![100, 0]);
        assert!((h.chi_square - 100.0).abs() < 1e-12);
        assert!(class_histogram(&[], 2).is_err());
        assert!(class_histogram(&[3], 2).is_err());
    }

    #[test]
    fn reproducible_given_seed() {
        let m = manifest(&[("a", 5), ("b", 50)]);
        for mode in [SamplingMode::Natural, SamplingMode::Balanced] {
            let a = Sampler::new(&m, mode, 42).unwrap().sample_batch(500);
            let b = Sampler::new(&m, mode, 42).unwrap().sample_batch(500);
            assert_eq!(a, b);
        }
    }
}
