//! Fréchet distance between Gaussian fits of two embedding sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::dsp::{mel_log_energies, AudioClip, MelConfig};
use crate::error::{bail, Result};

/// Row-major matrix of embeddings, one item per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            bail!(Shape, "{rows}×{cols} embedding matrix needs {} values, got {}", rows * cols, data.len());
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            bail!(NonFinite, "embedding entry {i} is not finite");
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            bail!(Shape, "embedding rows have differing lengths");
        }
        Self::new(n, d, rows.into_iter().flatten().collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased covariance, symmetrized.
pub fn fit_gaussian(e: &EmbeddingMatrix) -> Result<GaussianStats> {
    let (n, d) = (e.rows, e.cols);
    if n <= d {
        bail!(InvalidInput, "need more rows than columns to fit a covariance ({n} rows, {d} cols)");
    }
    let m = DMatrix::from_row_slice(n, d, &e.data);
    let mean = DVector::from_iterator(d, m.column_iter().map(|c| c.sum() / n as f64));
    let mut centered = m;
    for mut row in centered.row_iter_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v -= mean[j];
        }
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianStats { mean, cov })
}

/// Square root of a symmetric PSD matrix through its eigendecomposition,
/// with negative eigenvalues clamped to zero.
pub fn sqrtm_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// ‖μa − μb‖² + Tr(Σa + Σb − 2(Σa^½ Σb Σa^½)^½)
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() || a.cov.nrows() != b.cov.nrows() {
        bail!(Shape, "gaussian dimensions differ: {} vs {}", a.dim(), b.dim());
    }
    let diff = &a.mean - &b.mean;
    let sa = sqrtm_psd(&a.cov);
    let inner = &sa * &b.cov * &sa;
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner);
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let d = diff.norm_squared() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
    Ok(d.max(0.0))
}

/// Concatenated per-band mean and standard deviation over frames of the mel
/// log energies: a `2 × n_bands` vector.
pub fn mel_stats_embedding(clip: &AudioClip, cfg: &MelConfig) -> Result<Vec<f64>> {
    let frames = mel_log_energies(clip, cfg)?;
    let n = frames.len() as f64;
    let bands = cfg.n_bands;
    let mut mean = vec![0.0; bands];
    for f in &frames {
        mean.iter_mut().zip(&f.band_energies).for_each(|(m, e)| *m += e / n);
    }
    let mut var = vec![0.0; bands];
    for f in &frames {
        var.iter_mut().zip(&f.band_energies).zip(&mean).for_each(|((v, e), m)| *v += (e - m).powi(2) / n);
    }
    mean.extend(var.into_iter().map(f64::sqrt));
    Ok(mean)
}

pub fn embed_clips(clips: &[AudioClip], cfg: &MelConfig) -> Result<EmbeddingMatrix> {
    if clips.is_empty() {
        bail!(InvalidInput, "no clips to embed");
    }
    let rows = clips.par_iter().map(|c| mel_stats_embedding(c, cfg)).collect::<Result<Vec<_>>>()?;
    EmbeddingMatrix::from_rows(rows)
}

pub fn fad_from_embeddings(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<f64> {
    if a.cols() != b.cols() {
        bail!(Shape, "embedding dimensions differ: {} vs {}", a.cols(), b.cols());
    }
    frechet_distance(&fit_gaussian(a)?, &fit_gaussian(b)?)
}

/// FAD between two clip sets using the internal mel-statistics embedding.
pub fn fad_from_clips(a: &[AudioClip], b: &[AudioClip], cfg: &MelConfig) -> Result<f64> {
    fad_from_embeddings(&embed_clips(a, cfg)?, &embed_clips(b, cfg)?)
}
