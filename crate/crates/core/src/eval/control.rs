//! Descriptor-control evaluation: condition a generator at fixed levels of
//! one descriptor's min/max scale and measure what comes out.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::envelope::DrumClass;
use crate::error::{bail, Error, Result};
use crate::gan::{generate_one, stream_rng, Checkpoint, ConditionVector};
use crate::timbre::{descriptors, Descriptor, DescriptorVector};

use super::metrics::{
    linear_fit_r2, mae_quantile, ordering_accuracy, AuxSource, ControlEvalRecord, MaeReport, OrderingReport,
    RegressionReport, LEVELS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    /// Other descriptors held at the class mean.
    Single,
    /// Other descriptors taken from a random dataset item.
    Combined,
    /// Every descriptor, target included, taken from a random dataset item.
    CombinedDataset,
}

impl FromStr for ControlMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(ControlMode::Single),
            "combined" => Ok(ControlMode::Combined),
            "combined_dataset" => Ok(ControlMode::CombinedDataset),
            other => bail!(InvalidInput, "unknown control mode '{other}' (single, combined, combined_dataset)"),
        }
    }
}

impl fmt::Display for ControlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ControlMode::Single => "single",
            ControlMode::Combined => "combined",
            ControlMode::CombinedDataset => "combined_dataset",
        })
    }
}

/// Which dataset extremes define the 0-1 level scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleNorm {
    PerClass,
    Global,
}

impl FromStr for ScaleNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_class" => Ok(ScaleNorm::PerClass),
            "global" => Ok(ScaleNorm::Global),
            other => bail!(InvalidInput, "unknown scale normalization '{other}' (per_class, global)"),
        }
    }
}

/// Anything that turns a condition into a measured descriptor vector.
/// `pair` selects the latent, so equal pairs share it across levels.
pub trait Controller: Sync {
    fn classes(&self) -> &[DrumClass];
    fn produce(&self, cond: &ConditionVector, seed: u64, pair: u64) -> Result<DescriptorVector>;
}

impl Controller for Checkpoint {
    fn classes(&self) -> &[DrumClass] {
        &self.classes
    }

    fn produce(&self, cond: &ConditionVector, seed: u64, pair: u64) -> Result<DescriptorVector> {
        let clip = generate_one(self, cond, seed, pair)?;
        descriptors(&clip, &self.descriptor_config)
    }
}

/// Descriptor values of the training items, with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceData {
    pub labels: Vec<usize>,
    pub descriptors: Vec<DescriptorVector>,
}

impl ReferenceData {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Self {
        Self { labels: ckpt.dataset_labels.clone(), descriptors: ckpt.dataset_descriptors.clone() }
    }

    fn of_class(&self, c: usize) -> Vec<DescriptorVector> {
        self.labels.iter().zip(&self.descriptors).filter(|(l, _)| **l == c).map(|(_, d)| *d).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlEvalConfig {
    pub descriptor: Descriptor,
    pub mode: ControlMode,
    pub n_per_level: usize,
    pub seed: u64,
    /// Restrict to one class; otherwise pairs cycle through the classes.
    pub class: Option<usize>,
    pub scale: ScaleNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlSummary {
    pub e1: Option<f64>,
    pub e2: Option<f64>,
    pub e3: Option<f64>,
    pub f1: Option<f64>,
    pub f2: Option<f64>,
    pub f3: Option<f64>,
    pub r2: Option<f64>,
    pub slope: Option<f64>,
    pub scale: ScaleNorm,
}

#[derive(Debug, Clone)]
pub struct ControlEvalOutput {
    pub records: Vec<ControlEvalRecord>,
    pub ordering: OrderingReport,
    pub mae: MaeReport,
    pub regression: std::result::Result<RegressionReport, String>,
    pub summary: ControlSummary,
}

fn mean_vector(v: &[DescriptorVector]) -> DescriptorVector {
    let n = v.len() as f64;
    let mut acc = [0.0; 3];
    for d in v {
        for (a, x) in acc.iter_mut().zip(d.to_array()) {
            *a += x / n;
        }
    }
    DescriptorVector::from_array(acc)
}

fn min_max(v: &[DescriptorVector], d: Descriptor) -> (f64, f64) {
    v.iter().map(|x| x.get(d)).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

struct Job {
    cond: ConditionVector,
    target: f64,
    level: Option<usize>,
    pair: usize,
}

pub fn control_eval_protocol(
    ctrl: &impl Controller,
    reference: &ReferenceData,
    cfg: &ControlEvalConfig,
) -> Result<ControlEvalOutput> {
    let classes = ctrl.classes();
    let n_classes = classes.len();
    if cfg.n_per_level == 0 {
        bail!(InvalidInput, "need at least one pair per level");
    }
    if let Some(c) = cfg.class {
        if c >= n_classes {
            bail!(InvalidInput, "class index {c} out of range");
        }
    }
    let per_class: Vec<Vec<DescriptorVector>> = (0..n_classes).map(|c| reference.of_class(c)).collect();
    let used: Vec<usize> = match cfg.class {
        Some(c) => vec![c],
        None => (0..n_classes).collect(),
    };
    for &c in &used {
        if per_class[c].is_empty() {
            bail!(InvalidInput, "no reference descriptors for class {}", classes[c]);
        }
    }
    let d = cfg.descriptor;
    let global = min_max(&reference.descriptors, d);

    let mut jobs = Vec::new();
    for i in 0..cfg.n_per_level {
        let c = used[i % used.len()];
        let items = &per_class[c];
        let mut rng = stream_rng(cfg.seed, i as u64);
        let (lo, hi) = match cfg.scale {
            ScaleNorm::PerClass => min_max(items, d),
            ScaleNorm::Global => global,
        };
        match cfg.mode {
            ControlMode::Single | ControlMode::Combined => {
                let base = if cfg.mode == ControlMode::Single {
                    mean_vector(items)
                } else {
                    items[rng.gen_range(0..items.len())]
                };
                for (l, level) in LEVELS.iter().enumerate() {
                    let mut v = base;
                    let target = lo + level * (hi - lo);
                    v.set(d, target);
                    jobs.push(Job {
                        cond: ConditionVector { class: c, descriptors: Some(v) },
                        target,
                        level: Some(l),
                        pair: i,
                    });
                }
            }
            ControlMode::CombinedDataset => {
                for j in 0..LEVELS.len() {
                    let v = items[rng.gen_range(0..items.len())];
                    let cond = ConditionVector { class: c, descriptors: Some(v) };
                    jobs.push(Job { cond, target: v.get(d), level: None, pair: i * LEVELS.len() + j });
                }
            }
        }
    }

    let aux = if cfg.mode == ControlMode::Single { AuxSource::Fixed } else { AuxSource::Dataset };
    let measured = jobs
        .par_iter()
        .map(|j| ctrl.produce(&j.cond, cfg.seed, j.pair as u64).map(|m| m.get(d)))
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<ControlEvalRecord> = jobs
        .iter()
        .zip(measured)
        .map(|(j, m)| ControlEvalRecord {
            descriptor: d,
            class: classes[j.cond.class].clone(),
            target: j.target,
            measured: m,
            level: j.level,
            pair: j.pair,
            aux,
        })
        .collect();

    let values: Vec<f64> = used.iter().flat_map(|&c| per_class[c].iter().map(move |v| v.get(d))).collect();
    let ordering = ordering_accuracy(&records);
    let mae = mae_quantile(&records, &values)?;
    let regression = linear_fit_r2(&records, &values).map_err(|e| e.to_string());
    let reg = regression.as_ref().ok();
    let summary = ControlSummary {
        e1: ordering.e1,
        e2: ordering.e2,
        e3: ordering.e3,
        f1: mae.f1,
        f2: mae.f2,
        f3: mae.f3,
        r2: reg.map(|r| r.r2),
        slope: reg.map(|r| r.slope),
        scale: cfg.scale,
    };
    Ok(ControlEvalOutput { records, ordering, mae, regression, summary })
}

/// Scatter rows `descriptor,target,measured,class,mode`.
pub fn write_scatter_csv(records: &[ControlEvalRecord], mode: ControlMode, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    out.write_record(["descriptor", "target", "measured", "class", "mode"]).map_err(csv_err)?;
    for r in records {
        out.write_record([
            r.descriptor.name().to_string(),
            r.target.to_string(),
            r.measured.to_string(),
            r.class.name().to_string(),
            mode.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Echoes the conditioning exactly.
    struct Oracle(Vec<DrumClass>);

    impl Controller for Oracle {
        fn classes(&self) -> &[DrumClass] {
            &self.0
        }

        fn produce(&self, cond: &ConditionVector, _: u64, _: u64) -> Result<DescriptorVector> {
            Ok(cond.descriptors.unwrap())
        }
    }

    fn setup() -> (Oracle, ReferenceData) {
        let classes = vec![DrumClass::new("a").unwrap(), DrumClass::new("b").unwrap()];
        let mut labels = Vec::new();
        let mut descriptors = Vec::new();
        for i in 0..200 {
            labels.push(i % 2);
            let x = (i as f64 * 0.37).sin() * 40.0 + 50.0;
            descriptors.push(DescriptorVector::new(x, 100.0 - x, 0.5 * x + 10.0));
        }
        (Oracle(classes), ReferenceData { labels, descriptors })
    }

    fn cfg(mode: ControlMode) -> ControlEvalConfig {
        ControlEvalConfig {
            descriptor: Descriptor::Brightness,
            mode,
            n_per_level: 40,
            seed: 3,
            class: None,
            scale: ScaleNorm::PerClass,
        }
    }

    #[test]
    fn perfect_oracle_scores_perfectly() {
        let (o, r) = setup();
        for mode in [ControlMode::Single, ControlMode::Combined] {
            let out = control_eval_protocol(&o, &r, &cfg(mode)).unwrap();
            assert_eq!(out.records.len(), 120);
            let s = &out.summary;
            assert_eq!((s.e1, s.e2, s.e3), (Some(1.0), Some(1.0), Some(1.0)));
            assert_eq!(s.f1, Some(0.0));
            assert_eq!(s.f2, Some(0.0));
            assert_eq!(s.f3, Some(0.0));
            assert!((s.r2.unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dataset_mode_has_no_levels() {
        let (o, r) = setup();
        let out = control_eval_protocol(&o, &r, &cfg(ControlMode::CombinedDataset)).unwrap();
        assert_eq!(out.records.len(), 120);
        assert_eq!(out.summary.e1, None);
        assert_eq!(out.summary.f3, Some(0.0));
        assert!((out.summary.r2.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scatter_csv_rows() {
        let (o, r) = setup();
        let out = control_eval_protocol(&o, &r, &cfg(ControlMode::Single)).unwrap();
        let mut buf = Vec::new();
        write_scatter_csv(&out.records, ControlMode::Single, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "descriptor,target,measured,class,mode");
        assert_eq!(lines.len(), 121);
        assert!(lines[1].starts_with("brightness,") && lines[1].ends_with(",single"));
        assert!("bogus".parse::<ControlMode>().is_err());
    }
}
