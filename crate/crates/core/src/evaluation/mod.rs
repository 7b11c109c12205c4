//! SI-SDR, evaluation of a separation system over a test corpus, and the
//! paired one-sided Wilcoxon signed-rank comparison of two systems.

mod compare;
mod wilcoxon;

use std::fmt::Write as _;
use std::path::Path;

pub use compare::{compare, compare_files, read_results_csv, ComparisonReport, SIGNIFICANCE_LEVEL};
pub use wilcoxon::{signed_ranks, wilcoxon_one_sided, WilcoxonResult, EXACT_MAX_N, MIN_NONZERO};

use crate::datapipe::{draw_example, MixMode, MixSpec, StemCorpus};
use crate::masking::{ideal_binary_assignment, reconstruct_from_spectrogram, Mask};
use crate::network::{ChimeraModel, LogMagBatch};
use crate::signal::{stft, AudioSignal, StftConfig};
use crate::training::example_rng;
use crate::{Error, Result};

pub const SI_SDR_CAP_DB: f64 = 100.0;
pub const RESULTS_CSV_HEADER: &str = "example_id,source_index,si_sdr_db";

/// SI-SDR in dB over raw sample slices, clamped to `±100`.
pub fn si_sdr_samples(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::invalid(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let n = reference.len().max(1) as f64;
    let me = estimate.iter().sum::<f64>() / n;
    let mr = reference.iter().sum::<f64>() / n;
    let s: Vec<f64> = reference.iter().map(|x| x - mr).collect();
    let e: Vec<f64> = estimate.iter().map(|x| x - me).collect();
    let ss: f64 = s.iter().map(|x| x * x).sum();
    if ss == 0.0 {
        return Err(Error::Undefined("SI-SDR against a silent reference".into()));
    }
    let alpha = e.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / ss;
    let target = alpha * alpha * ss;
    let noise: f64 = e.iter().zip(&s).map(|(a, b)| (alpha * b - a).powi(2)).sum();
    if target == 0.0 {
        return Ok(-SI_SDR_CAP_DB);
    }
    if noise == 0.0 {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target / noise).log10()).clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

pub fn si_sdr(estimate: &AudioSignal, reference: &AudioSignal) -> Result<f64> {
    si_sdr_samples(estimate.samples(), reference.samples())
}

/// Where the separation masks come from.
#[derive(Debug, Clone, Copy)]
pub enum MaskSystem<'a> {
    Model(&'a ChimeraModel<f32>),
    /// Oracle one-hot masks from the true sources.
    IdealBinary,
    /// Every source estimate is the mixture itself.
    AllOnes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiSdrResult {
    pub example_id: usize,
    /// One entry per source; `None` where the reference was silent.
    pub per_source: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub results: Vec<SiSdrResult>,
}

impl Evaluation {
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.results.iter().flat_map(|r| r.per_source.iter().flatten().copied())
    }

    /// Mean over all defined (example, source) scores.
    pub fn mean(&self) -> f64 {
        let (sum, n) = self.values().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        sum / n as f64
    }

    /// Per-example mean over sources, skipping examples with no defined score.
    pub fn example_means(&self) -> Vec<(usize, f64)> {
        self.results
            .iter()
            .filter_map(|r| {
                let v: Vec<f64> = r.per_source.iter().flatten().copied().collect();
                (!v.is_empty()).then(|| (r.example_id, v.iter().sum::<f64>() / v.len() as f64))
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{RESULTS_CSV_HEADER}\n");
        for r in &self.results {
            for (c, v) in r.per_source.iter().enumerate() {
                if let Some(v) = v {
                    let _ = writeln!(s, "{},{c},{v}", r.example_id);
                }
            }
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::training::write_text(path.as_ref(), &self.to_csv())
    }
}

/// Draws `n_examples` coherent, unaugmented test mixtures of `chunk_seconds`
/// from `seed`, separates each with `system` using the mixture phase and
/// scores every source estimate against its reference by index.
pub fn evaluate_system(
    system: MaskSystem<'_>,
    corpus: &StemCorpus,
    n_examples: usize,
    seed: u64,
    chunk_seconds: f64,
) -> Result<Evaluation> {
    if let MaskSystem::Model(m) = system {
        if m.config().n_sources != corpus.n_sources() {
            return Err(Error::invalid(format!(
                "model separates {} sources, corpus has {}",
                m.config().n_sources,
                corpus.n_sources()
            )));
        }
    }
    let spec = MixSpec::new(MixMode::Coherent, chunk_seconds, vec![])?;
    let config = StftConfig::reference();
    let results = crate::par::map(n_examples, |i| {
        let ex = draw_example(corpus, &spec, &mut example_rng(seed, i as u64))?;
        let mix = stft(&ex.mixture, &config)?;
        let (f, t) = mix.shape();
        let n = ex.sources.len();
        let masks = match system {
            MaskSystem::AllOnes => (0..n)
                .map(|c| Mask::constant(1.0, f, t, c))
                .collect::<Result<Vec<_>>>()?,
            MaskSystem::IdealBinary => {
                let mags = ex
                    .sources
                    .iter()
                    .map(|s| stft(s, &config).map(|x| x.magnitudes()))
                    .collect::<Result<Vec<_>>>()?;
                ideal_binary_assignment(&mags)?.masks(f, t)?
            }
            MaskSystem::Model(model) => {
                let input = LogMagBatch::<f32>::from_magnitudes(&[mix.magnitudes()], t, f)?;
                let out = model.forward(&input)?;
                (0..n)
                    .map(|c| Mask::new(out.source_mask(0, c), f, t, c))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let estimates = reconstruct_from_spectrogram(&mix, &masks)?;
        let per_source = estimates
            .iter()
            .zip(&ex.sources)
            .map(|(e, s)| match si_sdr(e, s) {
                Ok(v) => Ok(Some(v)),
                Err(Error::Undefined(_)) => Ok(None),
                Err(err) => Err(err),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SiSdrResult {
            example_id: i,
            per_source,
        })
    })?;
    Ok(Evaluation { results })
}
