//! Time-frequency masks, ideal binary assignments, bin weights and
//! mask-based source reconstruction.
//!
//! All matrices share the spectrogram's time-major layout:
//! index `t * n_freq + f`.

use crate::signal::{istft, stft, AudioSignal, ComplexSpectrogram, StftConfig};
use crate::{Error, Result};

/// Real mask in `[0, 1]` for one source.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    values: Vec<f64>,
    n_freq: usize,
    n_time: usize,
    source_index: usize,
}

impl Mask {
    pub fn new(values: Vec<f64>, n_freq: usize, n_time: usize, source_index: usize) -> Result<Self> {
        if values.len() != n_freq * n_time {
            return Err(Error::invalid(format!(
                "mask has {} values, shape {n_freq}x{n_time} needs {}",
                values.len(),
                n_freq * n_time
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("mask value {v} outside [0, 1]")));
        }
        Ok(Self {
            values,
            n_freq,
            n_time,
            source_index,
        })
    }

    pub fn constant(value: f64, n_freq: usize, n_time: usize, source_index: usize) -> Result<Self> {
        Self::new(vec![value; n_freq * n_time], n_freq, n_time, source_index)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_freq, self.n_time)
    }

    pub fn source_index(&self) -> usize {
        self.source_index
    }
}

/// One-hot labelling of every bin with its dominant source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdealAssignment {
    labels: Vec<usize>,
    n_sources: usize,
}

impl IdealAssignment {
    pub fn from_labels(labels: Vec<usize>, n_sources: usize) -> Result<Self> {
        if let Some(l) = labels.iter().find(|&&l| l >= n_sources) {
            return Err(Error::invalid(format!("label {l} with only {n_sources} sources")));
        }
        Ok(Self { labels, n_sources })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_sources(&self) -> usize {
        self.n_sources
    }

    pub fn n_bins(&self) -> usize {
        self.labels.len()
    }

    /// Row-major `[n_bins, n_sources]` one-hot matrix.
    pub fn one_hot(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.labels.len() * self.n_sources];
        for (i, &l) in self.labels.iter().enumerate() {
            out[i * self.n_sources + l] = 1.0;
        }
        out
    }

    /// Binary masks, one per source.
    pub fn masks(&self, n_freq: usize, n_time: usize) -> Result<Vec<Mask>> {
        (0..self.n_sources)
            .map(|c| {
                let v = self.labels.iter().map(|&l| if l == c { 1.0 } else { 0.0 }).collect();
                Mask::new(v, n_freq, n_time, c)
            })
            .collect()
    }

    /// Columns relabelled so that source `c` becomes `perm[c]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_sources {
            return Err(Error::invalid("permutation length must equal the source count"));
        }
        Self::from_labels(self.labels.iter().map(|&l| perm[l]).collect(), self.n_sources)
    }
}

/// Nonnegative per-bin weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BinWeights {
    weights: Vec<f64>,
}

impl BinWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("bin weights must be finite and nonnegative"));
        }
        Ok(Self { weights })
    }

    pub fn uniform(n_bins: usize) -> Self {
        Self {
            weights: vec![1.0 / n_bins.max(1) as f64; n_bins],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

pub fn apply_mask(mix: &ComplexSpectrogram, mask: &Mask) -> Result<ComplexSpectrogram> {
    if mask.shape() != mix.shape() {
        return Err(Error::invalid(format!(
            "mask shape {:?} does not match spectrogram {:?}",
            mask.shape(),
            mix.shape()
        )));
    }
    let bins = mix.bins().iter().zip(mask.values()).map(|(z, &m)| z * m).collect();
    Ok(mix.with_bins(bins))
}

/// Assigns each bin to the loudest source; ties go to the lowest index.
pub fn ideal_binary_assignment<S: AsRef<[f64]>>(source_mags: &[S]) -> Result<IdealAssignment> {
    if source_mags.len() < 2 {
        return Err(Error::invalid(format!(
            "ideal assignment needs at least 2 sources, got {}",
            source_mags.len()
        )));
    }
    let n = source_mags[0].as_ref().len();
    if source_mags.iter().any(|s| s.as_ref().len() != n) {
        return Err(Error::invalid("source magnitude matrices differ in shape"));
    }
    let labels = (0..n)
        .map(|i| {
            let mut best = 0;
            let mut best_mag = source_mags[0].as_ref()[i];
            for (c, s) in source_mags.iter().enumerate().skip(1) {
                let m = s.as_ref()[i];
                if m > best_mag {
                    best = c;
                    best_mag = m;
                }
            }
            best
        })
        .collect();
    IdealAssignment::from_labels(labels, source_mags.len())
}

/// `w = |X| / Σ|X|`, uniform for a silent mixture.
pub fn magnitude_weights(mix_mag: &[f64]) -> BinWeights {
    let total: f64 = mix_mag.iter().sum();
    if total > 0.0 && total.is_finite() {
        BinWeights {
            weights: mix_mag.iter().map(|m| m / total).collect(),
        }
    } else {
        BinWeights::uniform(mix_mag.len())
    }
}

/// Masks the mixture spectrogram per source and resynthesises each
/// estimate at the mixture's length.
pub fn reconstruct_sources(mix: &AudioSignal, masks: &[Mask], config: &StftConfig) -> Result<Vec<AudioSignal>> {
    let spec = stft(mix, config)?;
    reconstruct_from_spectrogram(&spec, masks)
}

pub fn reconstruct_from_spectrogram(spec: &ComplexSpectrogram, masks: &[Mask]) -> Result<Vec<AudioSignal>> {
    masks.iter().map(|m| istft(&apply_mask(spec, m)?)).collect()
}
