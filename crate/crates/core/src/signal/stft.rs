use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::AudioSignal;
use crate::{Error, Result};

/// Periodic Hann window, square-rooted.
pub fn sqrt_hann(window_length: usize) -> Result<Vec<f64>> {
    if window_length < 2 {
        return Err(Error::invalid(format!(
            "window length must be at least 2, got {window_length}"
        )));
    }
    if !window_length.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "window length must be even, got {window_length}"
        )));
    }
    let n = window_length as f64;
    Ok((0..window_length)
        .map(|i| {
            let hann = 0.5 - 0.5 * (2.0 * PI * i as f64 / n).cos();
            hann.max(0.0).sqrt()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StftConfig {
    window: Vec<f64>,
    hop_length: usize,
}

impl StftConfig {
    pub const REFERENCE_WINDOW: usize = 512;
    pub const REFERENCE_HOP: usize = 128;

    pub fn new(window: Vec<f64>, hop_length: usize) -> Result<Self> {
        if window.len() < 2 {
            return Err(Error::invalid("window must have at least 2 coefficients"));
        }
        if hop_length == 0 || hop_length > window.len() {
            return Err(Error::invalid(format!(
                "hop length {hop_length} must lie in 1..={}",
                window.len()
            )));
        }
        if window.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("window coefficients must be finite and nonnegative"));
        }
        Ok(Self { window, hop_length })
    }

    /// Square-root Hann analysis/synthesis window with the given sizes.
    pub fn sqrt_hann(window_length: usize, hop_length: usize) -> Result<Self> {
        Self::new(sqrt_hann(window_length)?, hop_length)
    }

    /// 512-sample square-root Hann window, hop 128: 257 frequency bins.
    pub fn reference() -> Self {
        Self::sqrt_hann(Self::REFERENCE_WINDOW, Self::REFERENCE_HOP).expect("valid reference")
    }

    pub fn rectangular(window_length: usize, hop_length: usize) -> Result<Self> {
        Self::new(vec![1.0; window_length], hop_length)
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn window_length(&self) -> usize {
        self.window.len()
    }

    pub fn hop_length(&self) -> usize {
        self.hop_length
    }

    pub fn n_freq(&self) -> usize {
        self.window.len() / 2 + 1
    }

    /// Zeros placed before the first sample. One hop when frames overlap, so
    /// the first sample never sits under a window edge coefficient.
    pub fn leading_pad(&self) -> usize {
        if self.hop_length < self.window.len() {
            self.hop_length
        } else {
            0
        }
    }

    /// Frames covering a signal of `len` samples: every frame whose start
    /// lies at or before the last sample.
    pub fn frame_count(&self, len: usize) -> usize {
        if len == 0 {
            return 0;
        }
        (len + self.leading_pad() - 1) / self.hop_length + 1
    }

    /// Minimum over one hop period of the overlap-added squared window,
    /// relative to its maximum.
    pub fn overlap_ratio(&self) -> f64 {
        let hop = self.hop_length;
        let sums: Vec<f64> = (0..hop)
            .map(|n| self.window.iter().skip(n).step_by(hop).map(|w| w * w).sum::<f64>())
            .collect();
        let max = sums.iter().cloned().fold(0.0, f64::max);
        if max == 0.0 {
            return 0.0;
        }
        sums.iter().cloned().fold(f64::INFINITY, f64::min) / max
    }

    pub fn satisfies_overlap_add(&self) -> bool {
        self.overlap_ratio() > 1e-6
    }
}

/// One-sided complex STFT, stored time-major: `bins[t * n_freq + f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    bins: Vec<Complex64>,
    n_freq: usize,
    n_time: usize,
    config: StftConfig,
    sample_rate: u32,
    signal_len: Option<usize>,
}

impl ComplexSpectrogram {
    pub fn from_bins(
        bins: Vec<Complex64>,
        n_time: usize,
        config: StftConfig,
        sample_rate: u32,
        signal_len: Option<usize>,
    ) -> Result<Self> {
        let n_freq = config.n_freq();
        if bins.len() != n_freq * n_time {
            return Err(Error::invalid(format!(
                "expected {} bins ({n_freq} x {n_time}), got {}",
                n_freq * n_time,
                bins.len()
            )));
        }
        if bins.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("spectrogram contains non-finite bins"));
        }
        Ok(Self {
            bins,
            n_freq,
            n_time,
            config,
            sample_rate,
            signal_len,
        })
    }

    pub fn n_freq(&self) -> usize {
        self.n_freq
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_freq, self.n_time)
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn signal_len(&self) -> Option<usize> {
        self.signal_len
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn get(&self, f: usize, t: usize) -> Complex64 {
        self.bins[t * self.n_freq + f]
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.bins[t * self.n_freq..(t + 1) * self.n_freq]
    }

    /// Magnitudes in the same time-major layout as [`Self::bins`].
    pub fn magnitudes(&self) -> Vec<f64> {
        self.bins.iter().map(|z| z.norm()).collect()
    }

    pub(crate) fn with_bins(&self, bins: Vec<Complex64>) -> Self {
        debug_assert_eq!(bins.len(), self.bins.len());
        Self { bins, ..self.clone() }
    }
}

pub(crate) struct FftPair {
    pub forward: Arc<dyn Fft<f64>>,
    pub inverse: Arc<dyn Fft<f64>>,
}

pub(crate) fn plan(len: usize) -> FftPair {
    let mut planner = FftPlanner::new();
    FftPair {
        forward: planner.plan_fft_forward(len),
        inverse: planner.plan_fft_inverse(len),
    }
}

pub fn stft(signal: &AudioSignal, config: &StftConfig) -> Result<ComplexSpectrogram> {
    if signal.is_empty() {
        return Err(Error::invalid("cannot analyse an empty signal"));
    }
    let win = config.window();
    let n = win.len();
    let hop = config.hop_length();
    let pad = config.leading_pad();
    let n_freq = config.n_freq();
    let n_time = config.frame_count(signal.len());
    let x = signal.samples();
    let fft = plan(n).forward;

    let mut bins = Vec::with_capacity(n_freq * n_time);
    let mut buf = vec![Complex64::default(); n];
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    for t in 0..n_time {
        let start = (t * hop) as isize - pad as isize;
        for (i, slot) in buf.iter_mut().enumerate() {
            let idx = start + i as isize;
            let v = if idx >= 0 && (idx as usize) < x.len() {
                x[idx as usize] * win[i]
            } else {
                0.0
            };
            *slot = Complex64::new(v, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        bins.extend_from_slice(&buf[..n_freq]);
    }
    Ok(ComplexSpectrogram {
        bins,
        n_freq,
        n_time,
        config: config.clone(),
        sample_rate: signal.sample_rate(),
        signal_len: Some(signal.len()),
    })
}

/// Weighted overlap-add synthesis normalised by the overlap-added squared
/// window (least-squares inverse of [`stft`]).
pub fn istft(spec: &ComplexSpectrogram) -> Result<AudioSignal> {
    let config = spec.config();
    if !config.satisfies_overlap_add() {
        return Err(Error::invalid(format!(
            "window/hop ({}/{}) do not overlap-add to a nonzero envelope",
            config.window_length(),
            config.hop_length()
        )));
    }
    let win = config.window();
    let n = win.len();
    let hop = config.hop_length();
    let pad = config.leading_pad();
    let n_freq = spec.n_freq();
    let n_time = spec.n_time();
    let padded_len = if n_time == 0 { 0 } else { (n_time - 1) * hop + n };
    let out_len = spec.signal_len().unwrap_or_else(|| padded_len.saturating_sub(pad));

    let ifft = plan(n).inverse;
    let mut acc = vec![0.0; padded_len];
    let mut norm = vec![0.0; padded_len];
    let mut buf = vec![Complex64::default(); n];
    let mut scratch = vec![Complex64::default(); ifft.get_inplace_scratch_len()];
    let scale = 1.0 / n as f64;
    for t in 0..n_time {
        let frame = spec.frame(t);
        buf[..n_freq].copy_from_slice(frame);
        for k in n_freq..n {
            buf[k] = frame[n - k].conj();
        }
        // Real-signal spectra carry no imaginary part at DC and Nyquist.
        buf[0].im = 0.0;
        if n.is_multiple_of(2) {
            buf[n / 2].im = 0.0;
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let start = t * hop;
        for i in 0..n {
            acc[start + i] += buf[i].re * scale * win[i];
            norm[start + i] += win[i] * win[i];
        }
    }
    let samples = (0..out_len)
        .map(|j| {
            let idx = j + pad;
            if idx < padded_len && norm[idx] > 1e-10 {
                acc[idx] / norm[idx]
            } else {
                0.0
            }
        })
        .collect();
    AudioSignal::new(samples, spec.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> AudioSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioSignal::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), 16_000).unwrap()
    }

    fn snr_db(reference: &[f64], estimate: &[f64]) -> f64 {
        let s: f64 = reference.iter().map(|x| x * x).sum();
        let e: f64 = reference.iter().zip(estimate).map(|(a, b)| (a - b) * (a - b)).sum();
        10.0 * (s / e).log10()
    }

    #[test]
    fn sqrt_hann_small_cases() {
        let w = sqrt_hann(4).unwrap();
        let expected = [0.0, 0.5f64.sqrt(), 1.0, 0.5f64.sqrt()];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let w = sqrt_hann(512).unwrap();
        assert!((w[256] - 1.0).abs() < 1e-15);
        for (i, v) in w.iter().enumerate() {
            let hann = 0.5 - 0.5 * (2.0 * PI * i as f64 / 512.0).cos();
            assert!((v * v - hann).abs() < 1e-12);
            assert!((0.0..=1.0).contains(v));
        }
        assert!(sqrt_hann(1).is_err());
        assert!(sqrt_hann(0).is_err());
    }

    #[test]
    fn reference_frame_count() {
        let cfg = StftConfig::reference();
        assert_eq!(cfg.n_freq(), 257);
        let x = AudioSignal::silence(160_000, 16_000);
        let spec = stft(&x, &cfg).unwrap();
        assert_eq!(spec.n_freq(), 257);
        assert_eq!(spec.n_time(), 160_000usize.div_ceil(128) + 1);
    }

    #[test]
    fn cosine_at_bin_concentrates() {
        let cfg = StftConfig::rectangular(512, 512).unwrap();
        let x: Vec<f64> = (0..512).map(|n| (2.0 * PI * 8.0 * n as f64 / 512.0).cos()).collect();
        let spec = stft(&AudioSignal::new(x, 16_000).unwrap(), &cfg).unwrap();
        assert_eq!(spec.n_time(), 1);
        let mags = spec.magnitudes();
        let peak = mags[8];
        assert!((peak - 256.0).abs() < 1e-9);
        for (f, m) in mags.iter().enumerate() {
            if f != 8 {
                assert!(*m < 1e-9 * peak, "bin {f} = {m}");
            }
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let cfg = StftConfig::reference();
        let spec = stft(&AudioSignal::silence(3000, 16_000), &cfg).unwrap();
        assert!(spec.bins().iter().all(|z| z.norm() == 0.0));
        let y = istft(&spec).unwrap();
        assert_eq!(y.len(), 3000);
        assert!(y.samples().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn empty_signal_rejected() {
        let cfg = StftConfig::reference();
        assert!(stft(&AudioSignal::silence(0, 16_000), &cfg).is_err());
    }

    #[test]
    fn no_overlap_sqrt_hann_rejected_by_istft() {
        let cfg = StftConfig::sqrt_hann(512, 512).unwrap();
        let spec = stft(&noise(2048, 1), &cfg).unwrap();
        assert!(matches!(istft(&spec), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn round_trip_reference_config() {
        let cfg = StftConfig::reference();
        for (seed, len) in [(1u64, 16_000usize), (2, 1000), (3, 513), (4, 129), (5, 1)] {
            let x = noise(len, seed);
            let y = istft(&stft(&x, &cfg).unwrap()).unwrap();
            assert_eq!(y.len(), x.len());
            assert!(snr_db(x.samples(), y.samples()) > 120.0);
        }
    }

    #[test]
    fn linearity() {
        let cfg = StftConfig::reference();
        let x = noise(4000, 7);
        let y = noise(4000, 8);
        let (a, b) = (0.7, -1.3);
        let z: Vec<f64> = x
            .samples()
            .iter()
            .zip(y.samples())
            .map(|(p, q)| a * p + b * q)
            .collect();
        let sz = stft(&AudioSignal::new(z, 16_000).unwrap(), &cfg).unwrap();
        let sx = stft(&x, &cfg).unwrap();
        let sy = stft(&y, &cfg).unwrap();
        let scale = sz.magnitudes().iter().cloned().fold(0.0, f64::max);
        for ((zz, xx), yy) in sz.bins().iter().zip(sx.bins()).zip(sy.bins()) {
            assert!((zz - (xx * a + yy * b)).norm() <= 1e-6 * scale);
        }
    }

    #[test]
    fn parseval_on_white_noise() {
        // sqrt-Hann squared overlap-adds to 2 at hop = N/4, so frame energy
        // sums to twice the signal energy.
        let cfg = StftConfig::reference();
        let x = noise(64_000, 11);
        let spec = stft(&x, &cfg).unwrap();
        let n = cfg.window_length();
        let mut spec_energy = 0.0;
        for t in 0..spec.n_time() {
            for (f, z) in spec.frame(t).iter().enumerate() {
                let mult = if f == 0 || f == n / 2 { 1.0 } else { 2.0 };
                spec_energy += mult * z.norm_sqr();
            }
        }
        spec_energy /= n as f64;
        let expected = 2.0 * x.energy();
        assert!(((spec_energy - expected) / expected).abs() < 0.01);
    }
}
