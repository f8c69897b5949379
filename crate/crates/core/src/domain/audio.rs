use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::types::Waveform;
use crate::error::{Error, Result};

/// Reads a RIFF/WAVE file, averaging channels to mono and scaling integer
/// PCM to [-1, 1]. When `working_rate` is given the audio is resampled to it.
pub fn read_wav(path: impl AsRef<Path>, working_rate: Option<u32>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Audio(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let mono: Vec<f32> = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    let wave = Waveform::new(mono, spec.sample_rate)?;
    match working_rate {
        Some(rate) => Ok(resample(&wave, rate)),
        None => Ok(wave),
    }
}

/// Writes 16-bit PCM mono. Samples are clipped to [-1, 1].
pub fn write_wav(wave: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in wave.samples() {
        writer.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Band-limited resampling by spectrum truncation / zero-padding.
///
/// The output has `round(n * target / source)` samples.
pub fn resample(wave: &Waveform, target_rate: u32) -> Waveform {
    let source_rate = wave.sample_rate();
    if source_rate == target_rate || wave.is_empty() {
        return Waveform::new(wave.samples().to_vec(), target_rate).expect("positive rate");
    }
    let n = wave.len();
    let m = ((n as u64 * target_rate as u64 + source_rate as u64 / 2) / source_rate as u64).max(1) as usize;

    let mut planner = FftPlanner::<f64>::new();
    let mut spec: Vec<Complex<f64>> = wave.samples().iter().map(|&s| Complex::new(s as f64, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut spec);

    let mut out = vec![Complex::new(0.0, 0.0); m];
    let keep = n.min(m);
    let pos = keep.div_ceil(2);
    out[..pos].copy_from_slice(&spec[..pos]);
    for k in 1..pos {
        out[m - k] = spec[n - k];
    }
    if keep % 2 == 0 {
        let h = keep / 2;
        if m < n {
            // both +h and -h input bins land on the output Nyquist bin
            out[h] = spec[h] + spec[n - h];
        } else {
            out[h] = spec[h] * 0.5;
            out[m - h] = spec[h] * 0.5;
        }
    }
    planner.plan_fft_inverse(m).process(&mut out);
    let scale = 1.0 / n as f64;
    let samples = out.iter().map(|c| (c.re * scale) as f32).collect();
    Waveform::new(samples, target_rate).expect("positive rate")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, n: usize) -> Waveform {
        let samples = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin() as f32 * 0.5)
            .collect();
        Waveform::new(samples, rate).unwrap()
    }

    #[test]
    fn resample_scales_length_and_keeps_tone() {
        let w = sine(440.0, 8000, 8000);
        let up = resample(&w, 24000);
        assert_eq!(up.len(), 24000);
        let reference = sine(440.0, 24000, 24000);
        let err = up
            .samples()
            .iter()
            .zip(reference.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(err < 1e-3, "max err {err}");

        let down = resample(&reference, 16000);
        assert_eq!(down.len(), 16000);
        let expect = sine(440.0, 16000, 16000);
        let err = down
            .samples()
            .iter()
            .zip(expect.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(err < 1e-3, "max err {err}");
    }

    #[test]
    fn wav_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let w = sine(300.0, 24000, 2400);
        write_wav(&w, &p).unwrap();
        let back = read_wav(&p, None).unwrap();
        assert_eq!(back.sample_rate(), 24000);
        assert_eq!(back.len(), w.len());
        for (a, b) in back.samples().iter().zip(w.samples()) {
            assert!((a - b).abs() < 1.0 / 16000.0);
        }
    }

    #[test]
    fn read_resamples_to_working_rate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        write_wav(&sine(200.0, 16000, 1600), &p).unwrap();
        let w = read_wav(&p, Some(24000)).unwrap();
        assert_eq!(w.sample_rate(), 24000);
        assert_eq!(w.len(), 2400);
    }
}
