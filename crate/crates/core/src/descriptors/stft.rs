use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::synth::AudioBuffer;

pub const WINDOW_SIZE: usize = 2048;
pub const HOP_SIZE: usize = 512;

/// Magnitude short-time Fourier transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// One magnitude vector of `window_size / 2 + 1` bins per frame.
    pub frames: Vec<Vec<f64>>,
    pub bin_freqs: Vec<f64>,
    /// Centre of each frame, in seconds.
    pub frame_times: Vec<f64>,
    pub window_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn bins(&self) -> usize {
        self.bin_freqs.len()
    }
}

/// Symmetric Hann window, `0.5 (1 - cos(2 pi n / (N - 1)))`.
pub fn hann(size: usize) -> Vec<f64> {
    let denom = (size - 1) as f64;
    (0..size)
        .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / denom).cos()))
        .collect()
}

/// Number of complete frames: frames start at sample 0 and the incomplete
/// tail is dropped.
pub fn frame_count(len: usize, window: usize, hop: usize) -> usize {
    if len < window {
        0
    } else {
        (len - window) / hop + 1
    }
}

pub fn stft(buffer: &AudioBuffer) -> Result<Spectrogram> {
    stft_with(buffer, WINDOW_SIZE, HOP_SIZE)
}

pub fn stft_with(buffer: &AudioBuffer, window_size: usize, hop: usize) -> Result<Spectrogram> {
    if window_size < 2 || hop == 0 {
        return Err(Error::config(format!(
            "invalid stft geometry: window {window_size}, hop {hop}"
        )));
    }
    let n_frames = frame_count(buffer.len(), window_size, hop);
    if n_frames == 0 {
        return Err(Error::domain(format!(
            "buffer of {} samples is shorter than one {window_size}-sample window",
            buffer.len()
        )));
    }
    let sr = f64::from(buffer.sample_rate);
    let window = hann(window_size);
    let fft = FftPlanner::new().plan_fft_forward(window_size);
    let bins = window_size / 2 + 1;
    let mut scratch = vec![Complex::new(0.0, 0.0); window_size];

    let frames = (0..n_frames)
        .map(|f| {
            let start = f * hop;
            for ((s, &x), &w) in scratch
                .iter_mut()
                .zip(&buffer.samples[start..start + window_size])
                .zip(&window)
            {
                *s = Complex::new(x * w, 0.0);
            }
            fft.process(&mut scratch);
            scratch[..bins].iter().map(|c| c.norm()).collect()
        })
        .collect();

    Ok(Spectrogram {
        frames,
        bin_freqs: (0..bins).map(|k| k as f64 * sr / window_size as f64).collect(),
        frame_times: (0..n_frames)
            .map(|f| (f * hop) as f64 / sr + window_size as f64 / (2.0 * sr))
            .collect(),
        window_size,
        hop,
        sample_rate: buffer.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, len: usize) -> AudioBuffer {
        AudioBuffer::new(
            44_100,
            (0..len)
                .map(|i| (2.0 * PI * freq * i as f64 / 44_100.0).sin())
                .collect(),
        )
    }

    #[test]
    fn one_second_has_83_frames() {
        let s = stft(&sine(440.0, 44_100)).unwrap();
        assert_eq!(s.frames.len(), 83);
        assert_eq!(s.bins(), 1025);
        assert!((s.bin_freqs[20] - 20.0 * 44_100.0 / 2048.0).abs() < 1e-12);
    }

    #[test]
    fn sine_peaks_at_nearest_bin() {
        let s = stft(&sine(440.0, 44_100)).unwrap();
        for frame in &s.frames {
            let argmax = frame
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, 20);
        }
    }

    #[test]
    fn silence_is_zero() {
        let s = stft(&AudioBuffer::new(44_100, vec![0.0; 4_096])).unwrap();
        assert!(s.frames.iter().flatten().all(|&m| m == 0.0));
    }

    #[test]
    fn short_buffer_is_rejected() {
        assert!(stft(&sine(440.0, 2_047)).is_err());
        assert_eq!(stft(&sine(440.0, 2_048)).unwrap().frames.len(), 1);
    }

    #[test]
    fn hann_endpoints() {
        let w = hann(2048);
        assert_eq!(w[0], 0.0);
        assert!(w[2047].abs() < 1e-15);
    }
}
