//! STFT, mel filterbank and Griffin-Lim phase reconstruction.

use std::sync::Arc;

use nalgebra::DMatrix;
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::domain::{AudioConfig, MEL_BINS};
use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Periodic Hann window of `win_length`, centred in `n_fft` zeros.
pub fn hann_window(win_length: usize, n_fft: usize) -> Vec<f64> {
    let mut w = vec![0.0; n_fft];
    let offset = (n_fft - win_length) / 2;
    for i in 0..win_length {
        w[offset + i] = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win_length as f64).cos();
    }
    w
}

/// Centre frequencies (Hz) of the `n_mels` triangular filters.
pub fn mel_center_frequencies(n_mels: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    (1..=n_mels)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// `n_mels x (n_fft/2 + 1)` unit-peak triangular filterbank on the HTK mel scale.
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize, f_min: f64, f_max: f64) -> Array2<f64> {
    let n_bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;
    Array2::from_shape_fn((n_mels, n_bins), |(m, k)| {
        let f = k as f64 * bin_hz;
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        let up = (f - l) / (c - l);
        let down = (r - f) / (r - c);
        up.min(down).max(0.0)
    })
}

/// Reusable analysis/synthesis state for one [`AudioConfig`].
pub struct MelAnalyzer {
    config: AudioConfig,
    window: Vec<f64>,
    filterbank: Array2<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl MelAnalyzer {
    pub fn new(config: &AudioConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            window: hann_window(config.win_length, config.n_fft),
            filterbank: mel_filterbank(config.sample_rate, config.n_fft, MEL_BINS, config.f_min, config.f_max),
            forward: planner.plan_fft_forward(config.n_fft),
            inverse: planner.plan_fft_inverse(config.n_fft),
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &AudioConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &Array2<f64> {
        &self.filterbank
    }

    pub fn n_bins(&self) -> usize {
        self.config.n_fft / 2 + 1
    }

    /// `floor((n - win_length) / hop) + 1`, or `None` when shorter than one window.
    pub fn num_frames(&self, num_samples: usize) -> Option<usize> {
        if num_samples < self.config.win_length {
            None
        } else {
            Some((num_samples - self.config.win_length) / self.config.hop_length + 1)
        }
    }

    /// Complex STFT, `T x (n_fft/2 + 1)`. Frame `t` starts at sample `t * hop`.
    pub fn stft(&self, samples: &[f64]) -> Result<Array2<Complex<f64>>> {
        let frames = self.num_frames(samples.len()).ok_or(Error::TooShort {
            samples: samples.len(),
            required: self.config.win_length,
        })?;
        let (n_fft, hop) = (self.config.n_fft, self.config.hop_length);
        let offset = (n_fft - self.config.win_length) / 2;
        let n_bins = self.n_bins();
        let mut out = Array2::zeros((frames, n_bins));
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        for t in 0..frames {
            let start = t * hop;
            for (i, b) in buf.iter_mut().enumerate() {
                // window is zero outside [offset, offset + win_length)
                let idx = start + i;
                let s = if i >= offset && idx >= offset && idx - offset < samples.len() {
                    samples[idx - offset]
                } else {
                    0.0
                };
                *b = Complex::new(s * self.window[i], 0.0);
            }
            self.forward.process(&mut buf);
            for k in 0..n_bins {
                out[[t, k]] = buf[k];
            }
        }
        Ok(out)
    }

    /// Weighted overlap-add inverse of [`MelAnalyzer::stft`]; output has
    /// `(T - 1) * hop + win_length` samples.
    pub fn istft(&self, spec: &Array2<Complex<f64>>) -> Vec<f64> {
        let (frames, n_bins) = spec.dim();
        let (n_fft, hop, win) = (self.config.n_fft, self.config.hop_length, self.config.win_length);
        let offset = (n_fft - win) / 2;
        let len = (frames.saturating_sub(1)) * hop + win;
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        for t in 0..frames {
            for k in 0..n_bins {
                buf[k] = spec[[t, k]];
            }
            for k in n_bins..n_fft {
                buf[k] = spec[[t, n_fft - k]].conj();
            }
            self.inverse.process(&mut buf);
            for i in 0..win {
                let w = self.window[offset + i];
                let idx = t * hop + i;
                out[idx] += buf[offset + i].re / n_fft as f64 * w;
                norm[idx] += w * w;
            }
        }
        for (o, n) in out.iter_mut().zip(&norm) {
            if *n > 1e-8 {
                *o /= n;
            }
        }
        out
    }

    /// Log-mel spectrogram: `ln(max(fb · |STFT|, floor))`, `T x 80`.
    pub fn log_mel(&self, samples: &[f64]) -> Result<Array2<f64>> {
        let spec = self.stft(samples)?;
        let mag = spec.mapv(|c| c.norm());
        let mel = mag.dot(&self.filterbank.t());
        let floor = self.config.log_floor;
        Ok(mel.mapv(|v| v.max(floor).ln()))
    }

    /// Moore-Penrose pseudo-inverse of the filterbank, `n_bins x 80`.
    pub fn filterbank_pinv(&self) -> Array2<f64> {
        let (r, c) = self.filterbank.dim();
        let m = DMatrix::from_fn(r, c, |i, j| self.filterbank[[i, j]]);
        let pinv = m.pseudo_inverse(1e-10).expect("svd of a finite filterbank");
        Array2::from_shape_fn((c, r), |(i, j)| pinv[(i, j)])
    }

    /// Griffin-Lim reconstruction from a magnitude spectrogram (`T x n_bins`).
    /// The initial phase is drawn from a fixed-seed generator.
    pub fn griffin_lim(&self, magnitude: &Array2<f64>, iters: usize, seed: u64) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = magnitude.mapv(|m| {
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            Complex::from_polar(m, phase)
        });
        let mut signal = self.istft(&spec);
        for _ in 0..iters {
            let rebuilt = self.stft(&signal)?;
            for (s, (r, &m)) in spec.iter_mut().zip(rebuilt.iter().zip(magnitude.iter())) {
                let n = r.norm();
                *s = if n > 1e-12 { r * (m / n) } else { Complex::new(m, 0.0) };
            }
            signal = self.istft(&spec);
        }
        Ok(signal)
    }

    /// Approximate linear magnitude from a log-mel spectrogram.
    pub fn mel_to_magnitude(&self, log_mel: &Array2<f64>) -> Array2<f64> {
        let mel = log_mel.mapv(f64::exp);
        let mut mag = mel.dot(&self.filterbank_pinv().t());
        mag.mapv_inplace(|v| v.max(0.0));
        mag
    }
}

/// Mean over frames of each column.
pub fn column_means(m: &Array2<f64>) -> Vec<f64> {
    m.mean_axis(Axis(0)).map(|a| a.to_vec()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, n: usize, rate: f64) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate).sin())
            .collect()
    }

    #[test]
    fn mel_scale_round_trip() {
        for hz in [0.0, 440.0, 1000.0, 12000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-6);
        }
    }

    #[test]
    fn filterbank_peaks_at_centres() {
        let fb = mel_filterbank(24000, 1024, 80, 0.0, 12000.0);
        assert_eq!(fb.dim(), (80, 513));
        assert!(fb.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // every filter sees at least one FFT bin
        for row in fb.rows() {
            assert!(row.iter().any(|&v| v > 0.0));
        }
    }

    #[test]
    fn stft_istft_reconstructs_interior() {
        let a = MelAnalyzer::new(&AudioConfig::default()).unwrap();
        let x: Vec<f64> = sine(300.0, 6000, 24000.0).iter().zip(sine(1234.0, 6000, 24000.0)).map(|(a, b)| a + 0.3 * b).collect();
        let spec = a.stft(&x).unwrap();
        let y = a.istft(&spec);
        for i in 1024..y.len() - 1024 {
            assert!((x[i] - y[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn too_short_input() {
        let a = MelAnalyzer::new(&AudioConfig::default()).unwrap();
        assert!(matches!(a.stft(&[0.0; 1023]), Err(Error::TooShort { .. })));
    }
}
