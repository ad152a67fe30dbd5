//! Gammatone filterbank cepstral coefficients.
//!
//! Channels are 4th-order gammatone filters with centers evenly spaced on the
//! Glasberg–Moore ERB-rate scale. Each channel is applied in the frequency
//! domain through the standard magnitude approximation
//! `|H(f)| = (1 + ((f − fc)/b)²)^(−order/2)` with `b = 1.019·ERB(fc)`.

use super::mel::Dct;
use super::{Domain, FeatureMatrix, FrameSpec, Spectrogram, Waveform};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const ORDER: i32 = 4;
pub const MIN_FREQ: f64 = 50.0;

/// Equivalent rectangular bandwidth in Hz at `f`.
pub fn erb(f: f64) -> f64 {
    24.7 * (4.37 * f / 1000.0 + 1.0)
}

pub fn hz_to_erb_rate(f: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * f).log10()
}

pub fn erb_rate_to_hz(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) / 0.00437
}

#[derive(Clone, Debug)]
pub struct GammatoneBank {
    pub centers_hz: Vec<f64>,
    pub bins: usize,
    /// Power gains `|H(f)|²`, `channels × bins`.
    pub gains: Vec<f64>,
}

impl GammatoneBank {
    pub fn new(n_filters: usize, fft_size: usize, sample_rate: u32) -> Result<Self> {
        if n_filters == 0 {
            return Err(Error::InvalidArgument("need at least one gammatone filter".into()));
        }
        let nyquist = sample_rate as f64 / 2.0;
        if nyquist <= MIN_FREQ {
            return Err(Error::FrequencyRange(format!(
                "Nyquist {nyquist} Hz is below the {MIN_FREQ} Hz gammatone floor"
            )));
        }
        let (lo, hi) = (hz_to_erb_rate(MIN_FREQ), hz_to_erb_rate(nyquist));
        let step = (hi - lo) / (n_filters + 1) as f64;
        let centers_hz: Vec<f64> =
            (1..=n_filters).map(|i| erb_rate_to_hz(lo + step * i as f64)).collect();
        let bins = fft_size / 2 + 1;
        let mut gains = Vec::with_capacity(n_filters * bins);
        for &fc in &centers_hz {
            let b = 1.019 * erb(fc);
            gains.extend((0..bins).map(|k| {
                let f = k as f64 * sample_rate as f64 / fft_size as f64;
                let x = (f - fc) / b;
                (1.0 + x * x).powi(-ORDER)
            }));
        }
        Ok(GammatoneBank {
            centers_hz,
            bins,
            gains,
        })
    }

    pub fn channels(&self) -> usize {
        self.centers_hz.len()
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.gains
            .chunks(self.bins)
            .map(|g| g.iter().zip(power).map(|(a, p)| a * p).sum())
            .collect()
    }
}

pub fn gfcc(
    w: &Waveform,
    spec: &FrameSpec,
    n_filters: usize,
    n_coeffs: usize,
    eps: f64,
) -> Result<FeatureMatrix> {
    let s = Spectrogram::compute(w, spec)?;
    let bank = GammatoneBank::new(n_filters, spec.frame_length, w.sample_rate())?;
    gfcc_from(&s, &bank, n_coeffs, eps)
}

/// Channel energies, cube-root compressed as `(E + eps)^(1/3)`, then DCT-II.
pub(crate) fn gfcc_from(
    s: &Spectrogram,
    bank: &GammatoneBank,
    n_coeffs: usize,
    eps: f64,
) -> Result<FeatureMatrix> {
    let n_filters = bank.channels();
    if n_coeffs == 0 || n_coeffs > n_filters {
        return Err(Error::InvalidArgument(format!(
            "need 1 ≤ n_coeffs ({n_coeffs}) ≤ n_filters ({n_filters})"
        )));
    }
    let dct = Dct::new(n_filters, n_coeffs);
    let power = s.power();
    let mut values = Vec::with_capacity(s.frames * n_coeffs);
    for t in 0..s.frames {
        let energies = bank.apply(&power[t * s.bins..(t + 1) * s.bins]);
        let compressed: Vec<f64> = energies.iter().map(|e| (e + eps).cbrt()).collect();
        values.extend(dct.apply(&compressed));
    }
    Ok(FeatureMatrix::new(
        Domain::Gfcc,
        Tensor::matrix(s.frames, n_coeffs, values)?,
    ))
}
