//! Phase-vocoder time stretching and pitch shifting.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::signal::{istft, resample, stft, AudioSignal, ComplexSpectrogram, StftConfig};
use crate::{Error, Result};

fn wrap_phase(x: f64) -> f64 {
    x - 2.0 * PI * ((x + PI) / (2.0 * PI)).floor()
}

/// Changes duration by `1 / rate` without changing pitch.
///
/// Output length is `round(len / rate)`. Magnitudes are linearly
/// interpolated between analysis frames and phases advance by each bin's
/// measured instantaneous frequency. At `rate == 1` the analysis phases are
/// reproduced exactly.
pub fn time_stretch(signal: &AudioSignal, rate: f64) -> Result<AudioSignal> {
    if !(0.5..=2.0).contains(&rate) {
        return Err(Error::invalid(format!("stretch rate {rate} outside [0.5, 2]")));
    }
    if signal.is_empty() {
        return Ok(signal.clone());
    }
    let config = StftConfig::reference();
    let spec = stft(signal, &config)?;
    let n_fft = config.window_length();
    let hop = config.hop_length() as f64;
    let n_freq = spec.n_freq();
    let n_in = spec.n_time();
    let out_len = ((signal.len() as f64) / rate).round().max(1.0) as usize;
    let n_out = config.frame_count(out_len);

    let zero = vec![Complex64::default(); n_freq];
    let frame = |i: usize| if i < n_in { spec.frame(i) } else { zero.as_slice() };
    let advance: Vec<f64> = (0..n_freq).map(|k| 2.0 * PI * k as f64 * hop / n_fft as f64).collect();
    let mut phase: Vec<f64> = spec.frame(0).iter().map(|z| z.arg()).collect();

    let mut bins = Vec::with_capacity(n_out * n_freq);
    for k in 0..n_out {
        let pos = k as f64 * rate;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        let (a, b) = (frame(i), frame(i + 1));
        for f in 0..n_freq {
            let mag = (1.0 - frac) * a[f].norm() + frac * b[f].norm();
            bins.push(Complex64::from_polar(mag, phase[f]));
            let dphi = wrap_phase(b[f].arg() - a[f].arg() - advance[f]);
            phase[f] += advance[f] + dphi;
        }
    }
    let out = ComplexSpectrogram::from_bins(bins, n_out, config, signal.sample_rate(), Some(out_len))?;
    istft(&out)
}

/// Shifts pitch by `semitones` keeping the length: stretch duration by
/// `2^(s/12)`, then resample back to the original length.
pub fn pitch_shift(signal: &AudioSignal, semitones: f64) -> Result<AudioSignal> {
    if !(-12.0..=12.0).contains(&semitones) {
        return Err(Error::invalid(format!(
            "pitch shift {semitones} semitones outside [-12, 12]"
        )));
    }
    let factor = 2f64.powf(semitones / 12.0);
    let stretched = time_stretch(signal, 1.0 / factor)?;
    let shifted = resample(&stretched, 1.0 / factor)?;
    Ok(shifted.fit_to_len(signal.len()))
}
