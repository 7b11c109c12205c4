//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Build with `wasm-pack build crates/web-demo --target web --out-dir www/pkg`
//! and serve `crates/web-demo/www` statically.

use wasm_bindgen::prelude::*;

use sepxfer::datapipe::{pitch_shift, synthesize_corpus, Recipe, SynthParams};
use sepxfer::evaluation::si_sdr;
use sepxfer::masking::{ideal_binary_assignment, reconstruct_from_spectrogram, Mask};
use sepxfer::signal::{stft, AudioSignal, StftConfig, REFERENCE_SAMPLE_RATE};

fn js_err(e: sepxfer::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Log-magnitude spectrogram in dB, time-major `[n_time, 257]`, floored at −100 dB.
#[wasm_bindgen]
pub fn spectrogram_db(samples: &[f32]) -> Result<Vec<f32>, JsError> {
    let x = AudioSignal::new(samples.iter().map(|&v| v as f64).collect(), REFERENCE_SAMPLE_RATE).map_err(js_err)?;
    let spec = stft(&x, &StftConfig::reference()).map_err(js_err)?;
    Ok(spec
        .magnitudes()
        .iter()
        .map(|m| (20.0 * (m + 1e-5).log10()).max(-100.0) as f32)
        .collect())
}

#[wasm_bindgen]
pub fn n_freq() -> usize {
    StftConfig::reference().n_freq()
}

/// Pitch-shifts 16 kHz audio by `semitones` in [−12, 12], keeping its length.
#[wasm_bindgen(js_name = pitchShift)]
pub fn pitch_shift_samples(samples: &[f32], semitones: f64) -> Result<Vec<f32>, JsError> {
    let x = AudioSignal::new(samples.iter().map(|&v| v as f64).collect(), REFERENCE_SAMPLE_RATE).map_err(js_err)?;
    let y = pitch_shift(&x, semitones).map_err(js_err)?;
    Ok(y.samples().iter().map(|&v| v as f32).collect())
}

/// A synthetic two-source mixture and its ideal-binary-mask separation.
#[wasm_bindgen]
pub struct OracleDemo {
    mixture: AudioSignal,
    sources: Vec<AudioSignal>,
    estimates: Vec<AudioSignal>,
    names: Vec<String>,
}

#[wasm_bindgen]
impl OracleDemo {
    /// `recipe` is one of `harmonic_vs_noise`, `tones_low_vs_high`,
    /// `chirps_vs_drums_like`.
    #[wasm_bindgen(constructor)]
    pub fn new(recipe: &str, seed: u64, seconds: f64) -> Result<OracleDemo, JsError> {
        let recipe: Recipe = recipe.parse().map_err(js_err)?;
        let params = SynthParams {
            songs: 1,
            seconds,
            sample_rate: REFERENCE_SAMPLE_RATE,
        };
        let corpus = synthesize_corpus(recipe, &params, seed).map_err(js_err)?;
        let sources = corpus.songs()[0].stems.clone();
        let mut mix = vec![0.0; sources[0].len()];
        for s in &sources {
            for (m, v) in mix.iter_mut().zip(s.samples()) {
                *m += v;
            }
        }
        let mixture = AudioSignal::new(mix, REFERENCE_SAMPLE_RATE).map_err(js_err)?;
        let config = StftConfig::reference();
        let spec = stft(&mixture, &config).map_err(js_err)?;
        let (f, t) = spec.shape();
        let mags = sources
            .iter()
            .map(|s| stft(s, &config).map(|x| x.magnitudes()))
            .collect::<sepxfer::Result<Vec<_>>>()
            .map_err(js_err)?;
        let masks: Vec<Mask> = ideal_binary_assignment(&mags)
            .and_then(|a| a.masks(f, t))
            .map_err(js_err)?;
        let estimates = reconstruct_from_spectrogram(&spec, &masks).map_err(js_err)?;
        Ok(OracleDemo {
            mixture,
            sources,
            estimates,
            names: corpus.source_names().to_vec(),
        })
    }

    pub fn mixture(&self) -> Vec<f32> {
        to_f32(&self.mixture)
    }

    pub fn source(&self, index: usize) -> Vec<f32> {
        self.sources.get(index).map(to_f32).unwrap_or_default()
    }

    pub fn estimate(&self, index: usize) -> Vec<f32> {
        self.estimates.get(index).map(to_f32).unwrap_or_default()
    }

    #[wasm_bindgen(js_name = sourceName)]
    pub fn source_name(&self, index: usize) -> String {
        self.names.get(index).cloned().unwrap_or_default()
    }

    #[wasm_bindgen(js_name = nSources)]
    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    /// SI-SDR of estimate `index` against its reference, in dB.
    #[wasm_bindgen(js_name = siSdr)]
    pub fn si_sdr_db(&self, index: usize) -> Result<f64, JsError> {
        let (e, s) = self
            .estimates
            .get(index)
            .zip(self.sources.get(index))
            .ok_or_else(|| JsError::new("source index out of range"))?;
        si_sdr(e, s).map_err(js_err)
    }

    /// SI-SDR of the unprocessed mixture against source `index`.
    #[wasm_bindgen(js_name = mixtureSiSdr)]
    pub fn mixture_si_sdr_db(&self, index: usize) -> Result<f64, JsError> {
        let s = self
            .sources
            .get(index)
            .ok_or_else(|| JsError::new("source index out of range"))?;
        si_sdr(&self.mixture, s).map_err(js_err)
    }
}

fn to_f32(x: &AudioSignal) -> Vec<f32> {
    x.samples().iter().map(|&v| v as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_demo_separates() {
        let demo = OracleDemo::new("harmonic_vs_noise", 3, 1.0).unwrap();
        assert_eq!(demo.n_sources(), 2);
        assert_eq!(demo.mixture().len(), 16_000);
        for i in 0..2 {
            assert!(demo.si_sdr_db(i).unwrap() > demo.mixture_si_sdr_db(i).unwrap() + 10.0);
        }
        assert_eq!(demo.source_name(1), "noise");
    }

    #[test]
    fn spectrogram_shape() {
        let x = vec![0.1f32; 1280];
        let s = spectrogram_db(&x).unwrap();
        assert_eq!(s.len() % n_freq(), 0);
        assert_eq!(s.len() / n_freq(), 11);
        assert!(s.iter().all(|v| v.is_finite() && *v >= -100.0));
    }

    #[test]
    fn pitch_shift_keeps_length() {
        let x: Vec<f32> = (0..8000).map(|n| (n as f32 * 0.1).sin() * 0.3).collect();
        assert_eq!(pitch_shift_samples(&x, 3.0).unwrap().len(), 8000);
    }
}
