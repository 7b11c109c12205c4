//! Procedural stem corpora.
//!
//! Generators:
//! - harmonic note sequences: notes of 0.2–0.6 s around a per-song centre
//!   f0, harmonics with a per-song spectral tilt, band-limited to a ceiling;
//! - filtered noise bursts: white noise through a cascaded band-pass biquad
//!   with a random centre per burst;
//! - chirps: exponential frequency sweeps with a few harmonics;
//! - drum-like hits: exponentially decaying noise hits through a one-pole
//!   filter, on an irregular grid.
//!
//! Every stem is generated from its own ChaCha stream keyed by
//! `(seed, song, source)`, so corpora are bit-reproducible.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Song, StemCorpus};
use crate::signal::{AudioSignal, REFERENCE_SAMPLE_RATE};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipe {
    /// Harmonic notes (below 1.6 kHz) against high band-pass noise bursts.
    HarmonicVsNoise,
    /// Low harmonic notes against bright, odd-harmonic high notes.
    TonesLowVsHigh,
    /// Harmonic chirps against decaying noise hits.
    ChirpsVsDrumsLike,
}

impl Recipe {
    pub const ALL: [Recipe; 3] = [
        Recipe::HarmonicVsNoise,
        Recipe::TonesLowVsHigh,
        Recipe::ChirpsVsDrumsLike,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Recipe::HarmonicVsNoise => "harmonic_vs_noise",
            Recipe::TonesLowVsHigh => "tones_low_vs_high",
            Recipe::ChirpsVsDrumsLike => "chirps_vs_drums_like",
        }
    }

    pub fn source_names(&self) -> [&'static str; 2] {
        match self {
            Recipe::HarmonicVsNoise => ["harmonic", "noise"],
            Recipe::TonesLowVsHigh => ["low", "high"],
            Recipe::ChirpsVsDrumsLike => ["chirps", "drums"],
        }
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Recipe::ALL.into_iter().find(|r| r.name() == s).ok_or_else(|| {
            let valid: Vec<_> = Recipe::ALL.iter().map(|r| r.name()).collect();
            Error::invalid(format!("unknown recipe {s:?}; valid recipes: {}", valid.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub songs: usize,
    pub seconds: f64,
    pub sample_rate: u32,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            songs: 10,
            seconds: 30.0,
            sample_rate: REFERENCE_SAMPLE_RATE,
        }
    }
}

/// RBJ band-pass biquad (constant 0 dB peak gain).
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    x: [f64; 2],
    y: [f64; 2],
}

impl Biquad {
    fn bandpass(center: f64, q: f64, sr: f64) -> Self {
        let w0 = 2.0 * PI * center / sr;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b: [alpha / a0, 0.0, -alpha / a0],
            a: [-2.0 * w0.cos() / a0, (1.0 - alpha) / a0],
            x: [0.0; 2],
            y: [0.0; 2],
        }
    }

    fn process(&mut self, v: f64) -> f64 {
        let out = self.b[0] * v + self.b[1] * self.x[0] + self.b[2] * self.x[1]
            - self.a[0] * self.y[0]
            - self.a[1] * self.y[1];
        self.x = [v, self.x[0]];
        self.y = [out, self.y[0]];
        out
    }
}

/// Attack/release envelope over `len` samples.
fn envelope(i: usize, len: usize, attack: usize, release: usize) -> f64 {
    let a = if i < attack { i as f64 / attack as f64 } else { 1.0 };
    let r = if i + release > len {
        (len - i) as f64 / release as f64
    } else {
        1.0
    };
    a.min(r)
}

struct NoteStyle {
    f0_center: (f64, f64),
    spread_semitones: f64,
    ceiling_hz: f64,
    max_harmonics: usize,
    odd_only: bool,
    amplitude: f64,
}

fn harmonic_notes(rng: &mut ChaCha8Rng, len: usize, sr: f64, style: &NoteStyle) -> Vec<f64> {
    let center = (style.f0_center.0.ln() + rng.gen::<f64>() * (style.f0_center.1 / style.f0_center.0).ln()).exp();
    let tilt: f64 = rng.gen_range(0.8..1.6);
    let mut out = vec![0.0; len];
    let mut pos = 0;
    while pos < len {
        let dur = ((rng.gen_range(0.2..0.6) * sr) as usize).max(1);
        let f0 = center * 2f64.powf(rng.gen_range(-style.spread_semitones..style.spread_semitones) / 12.0);
        let gain = style.amplitude * rng.gen_range(0.6..1.0);
        let phase0: f64 = rng.gen_range(0.0..2.0 * PI);
        let end = (pos + dur).min(len);
        let n = end - pos;
        let attack = (0.01 * sr) as usize;
        let release = (0.03 * sr) as usize;
        let harmonics: Vec<(f64, f64)> = (1..=style.max_harmonics)
            .filter(|k| !style.odd_only || k % 2 == 1)
            .map(|k| (k as f64 * f0, 1.0 / (k as f64).powf(tilt)))
            .filter(|(f, _)| *f < style.ceiling_hz)
            .collect();
        for i in 0..n {
            let t = i as f64 / sr;
            let env = envelope(i, n, attack, release) * (-1.5 * t).exp();
            let v: f64 = harmonics
                .iter()
                .map(|(f, a)| a * (2.0 * PI * f * t + phase0 * f / f0).sin())
                .sum();
            out[pos + i] = gain * env * v;
        }
        pos = end;
    }
    out
}

fn noise_bursts(rng: &mut ChaCha8Rng, len: usize, sr: f64) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let mut pos = 0;
    while pos < len {
        let dur = ((rng.gen_range(0.15..0.5) * sr) as usize).max(1);
        let gap = (rng.gen_range(0.0..0.05) * sr) as usize;
        let center = rng.gen_range(3000.0..6000.0);
        let q = rng.gen_range(1.5..3.0);
        let gain = rng.gen_range(0.3..0.6);
        let mut f1 = Biquad::bandpass(center, q, sr);
        let mut f2 = Biquad::bandpass(center, q, sr);
        let end = (pos + dur).min(len);
        let n = end - pos;
        let attack = (0.005 * sr) as usize;
        let release = (0.05 * sr) as usize;
        for i in 0..n {
            let w: f64 = rng.gen_range(-1.0..1.0);
            out[pos + i] = gain * envelope(i, n, attack, release) * f2.process(f1.process(w));
        }
        pos = end + gap;
    }
    out
}

fn chirps(rng: &mut ChaCha8Rng, len: usize, sr: f64) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let mut pos = 0;
    let n_harm = rng.gen_range(2..=4);
    while pos < len {
        let dur = ((rng.gen_range(0.3..0.9) * sr) as usize).max(1);
        let f_start: f64 = rng.gen_range(200.0..1200.0);
        let f_end: f64 = rng.gen_range(200.0..1200.0);
        let gain = rng.gen_range(0.15..0.3);
        let end = (pos + dur).min(len);
        let n = end - pos;
        let attack = (0.01 * sr) as usize;
        let release = (0.04 * sr) as usize;
        let mut phase = 0.0;
        for i in 0..n {
            let frac = i as f64 / n as f64;
            let f = f_start * (f_end / f_start).powf(frac);
            phase += 2.0 * PI * f / sr;
            let v: f64 = (1..=n_harm)
                .filter(|k| *k as f64 * f < 3000.0)
                .map(|k| (k as f64 * phase).sin() / k as f64)
                .sum();
            out[pos + i] = gain * envelope(i, n, attack, release) * v;
        }
        pos = end;
    }
    out
}

fn drum_hits(rng: &mut ChaCha8Rng, len: usize, sr: f64) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let mut pos = (rng.gen_range(0.0..0.05) * sr) as usize;
    while pos < len {
        let decay = rng.gen_range(0.02..0.12);
        // One-pole low-pass coefficient; bright hits use a high-pass residual.
        let cutoff: f64 = rng.gen_range(300.0..6000.0);
        let bright = rng.gen_bool(0.5);
        let coeff = (-2.0 * PI * cutoff / sr).exp();
        let gain = rng.gen_range(0.4..0.9);
        let n = ((decay * 6.0 * sr) as usize).min(len - pos);
        let mut state = 0.0;
        for i in 0..n {
            let w: f64 = rng.gen_range(-1.0..1.0);
            state = (1.0 - coeff) * w + coeff * state;
            let v = if bright { w - state } else { state };
            out[pos + i] += gain * v * (-(i as f64) / (decay * sr)).exp();
        }
        pos += (rng.gen_range(0.1..0.3) * sr) as usize;
    }
    out
}

fn generate(recipe: Recipe, source: usize, rng: &mut ChaCha8Rng, len: usize, sr: f64) -> Vec<f64> {
    match (recipe, source) {
        (Recipe::HarmonicVsNoise, 0) => harmonic_notes(
            rng,
            len,
            sr,
            &NoteStyle {
                f0_center: (110.0, 330.0),
                spread_semitones: 7.0,
                ceiling_hz: 1600.0,
                max_harmonics: 10,
                odd_only: false,
                amplitude: 0.25,
            },
        ),
        (Recipe::HarmonicVsNoise, _) => noise_bursts(rng, len, sr),
        (Recipe::TonesLowVsHigh, 0) => harmonic_notes(
            rng,
            len,
            sr,
            &NoteStyle {
                f0_center: (60.0, 150.0),
                spread_semitones: 5.0,
                ceiling_hz: 550.0,
                max_harmonics: 8,
                odd_only: false,
                amplitude: 0.3,
            },
        ),
        (Recipe::TonesLowVsHigh, _) => harmonic_notes(
            rng,
            len,
            sr,
            &NoteStyle {
                f0_center: (700.0, 1400.0),
                spread_semitones: 5.0,
                ceiling_hz: 6000.0,
                max_harmonics: 5,
                odd_only: true,
                amplitude: 0.2,
            },
        ),
        (Recipe::ChirpsVsDrumsLike, 0) => chirps(rng, len, sr),
        (Recipe::ChirpsVsDrumsLike, _) => drum_hits(rng, len, sr),
    }
}

/// Generates a corpus in memory.
pub fn synthesize_corpus(recipe: Recipe, params: &SynthParams, seed: u64) -> Result<StemCorpus> {
    if params.songs == 0 || params.seconds.is_nan() || params.seconds <= 0.0 || params.sample_rate == 0 {
        return Err(Error::invalid("corpus needs at least one song of positive duration"));
    }
    let sr = params.sample_rate as f64;
    let len = (params.seconds * sr).round() as usize;
    let names = recipe.source_names();
    let songs = (0..params.songs)
        .map(|s| {
            let stems = (0..names.len())
                .map(|c| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream((s * names.len() + c) as u64 + 1);
                    AudioSignal::new(generate(recipe, c, &mut rng, len, sr), params.sample_rate)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Song {
                name: format!("song{s:03}"),
                stems,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    StemCorpus::new(names.iter().map(|s| s.to_string()).collect(), songs)
}

/// Generates a corpus and writes it under `root`.
pub fn make_synthetic_corpus(
    recipe: Recipe,
    params: &SynthParams,
    seed: u64,
    root: impl AsRef<Path>,
) -> Result<StemCorpus> {
    let corpus = synthesize_corpus(recipe, params, seed)?;
    corpus.write(root)?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{stft, StftConfig};

    fn average_spectrum(x: &AudioSignal) -> Vec<f64> {
        let spec = stft(x, &StftConfig::reference()).unwrap();
        let mut avg = vec![0.0; spec.n_freq()];
        for t in 0..spec.n_time() {
            for (a, z) in avg.iter_mut().zip(spec.frame(t)) {
                *a += z.norm();
            }
        }
        avg
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn deterministic() {
        let p = SynthParams {
            songs: 2,
            seconds: 1.0,
            sample_rate: 16_000,
        };
        for r in Recipe::ALL {
            assert_eq!(
                synthesize_corpus(r, &p, 7).unwrap(),
                synthesize_corpus(r, &p, 7).unwrap()
            );
            assert_ne!(
                synthesize_corpus(r, &p, 7).unwrap(),
                synthesize_corpus(r, &p, 8).unwrap()
            );
        }
    }

    #[test]
    fn harmonic_vs_noise_spectra_barely_overlap() {
        let p = SynthParams {
            songs: 4,
            seconds: 3.0,
            sample_rate: 16_000,
        };
        let c = synthesize_corpus(Recipe::HarmonicVsNoise, &p, 3).unwrap();
        for song in c.songs() {
            let sim = cosine(&average_spectrum(&song.stems[0]), &average_spectrum(&song.stems[1]));
            assert!(sim < 0.5, "{}: {sim}", song.name);
        }
    }

    #[test]
    fn stems_are_active_and_bounded() {
        let p = SynthParams {
            songs: 3,
            seconds: 4.0,
            sample_rate: 16_000,
        };
        for r in Recipe::ALL {
            let c = synthesize_corpus(r, &p, 11).unwrap();
            for song in c.songs() {
                for stem in &song.stems {
                    let peak = stem.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    assert!(peak < 1.0, "{r} peak {peak}");
                    // Every half-second window carries signal.
                    for w in stem.samples().chunks(8000) {
                        let e: f64 = w.iter().map(|v| v * v).sum();
                        assert!(e > 1e-3, "{r} {}: silent window", song.name);
                    }
                }
            }
        }
    }

    #[test]
    fn duration_arithmetic() {
        let p = SynthParams {
            songs: 10,
            seconds: 30.0,
            sample_rate: 16_000,
        };
        let c = synthesize_corpus(Recipe::ChirpsVsDrumsLike, &p, 0).unwrap();
        assert!((c.duration_seconds_per_source() - 300.0).abs() < 1e-9);
    }

    #[test]
    fn unknown_recipe_names_valid_ones() {
        let err = "violin".parse::<Recipe>().unwrap_err().to_string();
        for r in Recipe::ALL {
            assert!(err.contains(r.name()));
        }
    }
}
