use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    Rect,
}

impl Window {
    /// Periodic window coefficients of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rect => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameSpec {
    pub frame_length: usize,
    pub hop_length: usize,
    pub window: Window,
}

impl Default for FrameSpec {
    fn default() -> Self {
        FrameSpec {
            frame_length: 2048,
            hop_length: 512,
            window: Window::Hann,
        }
    }
}

impl FrameSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hop_length == 0 || self.hop_length > self.frame_length {
            return Err(Error::InvalidArgument(format!(
                "need 0 < hop ({}) ≤ frame ({})",
                self.hop_length, self.frame_length
            )));
        }
        Ok(())
    }

    /// `floor((len − frame)/hop) + 1`, or an error when the clip is shorter than a frame.
    pub fn frame_count(&self, len: usize) -> Result<usize> {
        self.validate()?;
        if len < self.frame_length {
            return Err(Error::TooShort {
                len,
                frame: self.frame_length,
            });
        }
        Ok((len - self.frame_length) / self.hop_length + 1)
    }

    pub fn frames<'a>(&self, samples: &'a [f64]) -> Result<impl Iterator<Item = &'a [f64]> + 'a> {
        let n = self.frame_count(samples.len())?;
        let (f, h) = (self.frame_length, self.hop_length);
        Ok((0..n).map(move |t| &samples[t * h..t * h + f]))
    }

    pub fn bins(&self) -> usize {
        self.frame_length / 2 + 1
    }
}

/// One-sided magnitude spectrogram, `frames × (frame_length/2 + 1)`.
#[derive(Clone, Debug)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub magnitude: Vec<f64>,
    pub sample_rate: u32,
    pub fft_size: usize,
}

impl Spectrogram {
    pub fn compute(w: &Waveform, spec: &FrameSpec) -> Result<Self> {
        let fft = FftPlanner::<f64>::new().plan_fft_forward(spec.frame_length);
        let window = spec.window.coefficients(spec.frame_length);
        let bins = spec.bins();
        let mut magnitude = Vec::new();
        let mut frames = 0;
        let mut buf = vec![Complex::new(0.0, 0.0); spec.frame_length];
        for frame in spec.frames(w.samples())? {
            transform(&fft, frame, &window, &mut buf);
            magnitude.extend(buf[..bins].iter().map(|c| c.norm()));
            frames += 1;
        }
        Ok(Spectrogram {
            frames,
            bins,
            magnitude,
            sample_rate: w.sample_rate(),
            fft_size: spec.frame_length,
        })
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.magnitude[t * self.bins..(t + 1) * self.bins]
    }

    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.fft_size as f64
    }

    /// `|X|²` for each frame, same layout as `magnitude`.
    pub fn power(&self) -> Vec<f64> {
        self.magnitude.iter().map(|m| m * m).collect()
    }
}

fn transform(fft: &Arc<dyn Fft<f64>>, frame: &[f64], window: &[f64], buf: &mut [Complex<f64>]) {
    for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(window) {
        *b = Complex::new(x * w, 0.0);
    }
    fft.process(buf);
}

/// Full complex spectrum of one windowed frame.
pub fn frame_spectrum(frame: &[f64], window: Window) -> Vec<Complex<f64>> {
    let fft = FftPlanner::<f64>::new().plan_fft_forward(frame.len());
    let coeffs = window.coefficients(frame.len());
    let mut buf = vec![Complex::new(0.0, 0.0); frame.len()];
    transform(&fft, frame, &coeffs, &mut buf);
    buf
}
