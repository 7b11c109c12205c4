use std::f64::consts::PI;
use std::sync::OnceLock;

use super::AudioSignal;
use crate::{Error, Result};

/// Kernel half-width in zero crossings of the (possibly stretched) sinc.
const HALF_TAPS: usize = 32;
const KAISER_BETA: f64 = 8.6;

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Kernel samples per zero crossing in the lookup table.
const OVERSAMPLE: usize = 512;

/// `sinc(u)·kaiser(u / HALF_TAPS)` tabulated on `u ∈ [0, HALF_TAPS]`.
fn kernel_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let i0_beta = bessel_i0(KAISER_BETA);
        (0..=HALF_TAPS * OVERSAMPLE + 1)
            .map(|m| {
                let u = m as f64 / OVERSAMPLE as f64;
                let r = u / HALF_TAPS as f64;
                if r >= 1.0 {
                    0.0
                } else {
                    sinc(u) * bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta
                }
            })
            .collect()
    })
}

fn kernel(table: &[f64], u: f64) -> f64 {
    let x = u.abs() * OVERSAMPLE as f64;
    let i = x as usize;
    if i + 1 >= table.len() {
        return 0.0;
    }
    let frac = x - i as f64;
    table[i] + frac * (table[i + 1] - table[i])
}

/// Band-limited resampling by Kaiser-windowed sinc interpolation.
///
/// Produces `round(len * ratio)` samples; output sample `j` is read at input
/// position `j / ratio`. When downsampling the kernel cutoff drops to `ratio`
/// times Nyquist and the kernel widens accordingly. The sample rate tag is
/// left unchanged, so playing the result back at the same rate scales every
/// frequency by `1 / ratio`.
pub fn resample(signal: &AudioSignal, ratio: f64) -> Result<AudioSignal> {
    if !(0.25..=4.0).contains(&ratio) {
        return Err(Error::invalid(format!("resampling ratio {ratio} outside [0.25, 4]")));
    }
    let x = signal.samples();
    let out_len = (x.len() as f64 * ratio).round() as usize;
    let cutoff = ratio.min(1.0);
    let half_width = HALF_TAPS as f64 / cutoff;
    let table = kernel_table();

    let samples = (0..out_len)
        .map(|j| {
            let pos = j as f64 / ratio;
            let lo = (pos - half_width).ceil().max(0.0) as usize;
            let hi = ((pos + half_width).floor() as usize).min(x.len().saturating_sub(1));
            let mut acc = 0.0;
            for (i, &xi) in x.iter().enumerate().take(hi + 1).skip(lo) {
                acc += xi * kernel(table, cutoff * (pos - i as f64));
            }
            acc * cutoff
        })
        .collect();
    AudioSignal::new(samples, signal.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, len: usize) -> AudioSignal {
        AudioSignal::new(
            (0..len)
                .map(|n| 0.5 * (2.0 * PI * freq * n as f64 / 16_000.0).sin())
                .collect(),
            16_000,
        )
        .unwrap()
    }

    #[test]
    fn identity_ratio() {
        let x = sine(1234.0, 2000);
        let y = resample(&x, 1.0).unwrap();
        let err: f64 = x
            .samples()
            .iter()
            .zip(y.samples())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / 2000.0;
        assert!(err.sqrt() < 1e-6);
    }

    #[test]
    fn length_rule_and_range() {
        let x = AudioSignal::silence(1000, 16_000);
        assert_eq!(resample(&x, 0.5).unwrap().len(), 500);
        assert_eq!(resample(&x, 1.5).unwrap().len(), 1500);
        assert!(resample(&x, 0.2).is_err());
        assert!(resample(&x, 4.5).is_err());
    }

    #[test]
    fn midband_energy_preserved() {
        for ratio in [0.5, 0.8, 1.25, 2.0] {
            let x = sine(1000.0, 16_000);
            let y = resample(&x, ratio).unwrap();
            // Ignore kernel edge effects.
            let skip = 400;
            let core = &y.samples()[skip..y.len() - skip];
            let rms = (core.iter().map(|v| v * v).sum::<f64>() / core.len() as f64).sqrt();
            let db = 20.0 * (rms / x.rms()).log10();
            assert!(db.abs() < 0.5, "ratio {ratio}: {db} dB");
        }
    }
}
