//! Triangular mel filterbank, log-mel spectrogram and MFCC.

use super::{Domain, FeatureMatrix, FrameSpec, Spectrogram, Waveform};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Orthonormal DCT-II, truncated to the first `n_out` coefficients.
#[derive(Clone, Debug)]
pub struct Dct {
    n_in: usize,
    n_out: usize,
    basis: Vec<f64>,
}

impl Dct {
    pub fn new(n_in: usize, n_out: usize) -> Self {
        let mut basis = Vec::with_capacity(n_in * n_out);
        for k in 0..n_out {
            let scale = if k == 0 {
                (1.0 / n_in as f64).sqrt()
            } else {
                (2.0 / n_in as f64).sqrt()
            };
            basis.extend((0..n_in).map(|n| {
                scale * (std::f64::consts::PI * (n as f64 + 0.5) * k as f64 / n_in as f64).cos()
            }));
        }
        Dct { n_in, n_out, basis }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_in);
        (0..self.n_out)
            .map(|k| {
                self.basis[k * self.n_in..(k + 1) * self.n_in]
                    .iter()
                    .zip(x)
                    .map(|(b, v)| b * v)
                    .sum()
            })
            .collect()
    }
}

/// `n_mels × bins` weights; triangles evenly spaced in mel between 0 and Nyquist.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub bins: usize,
    pub weights: Vec<f64>,
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, fft_size: usize, sample_rate: u32) -> Result<Self> {
        if n_mels == 0 {
            return Err(Error::InvalidArgument("n_mels must be ≥ 1".into()));
        }
        let bins = fft_size / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = |k: usize| k as f64 * sample_rate as f64 / fft_size as f64;
        let mut weights = vec![0.0; n_mels * bins];
        for m in 0..n_mels {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let row = &mut weights[m * bins..(m + 1) * bins];
            for (k, w) in row.iter_mut().enumerate() {
                let f = bin_hz(k);
                *w = if f > lo && f <= c {
                    (f - lo) / (c - lo)
                } else if f > c && f < hi {
                    (hi - f) / (hi - c)
                } else {
                    0.0
                };
            }
            if row.iter().sum::<f64>() <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "mel band {m} ({lo:.1}–{hi:.1} Hz) contains no FFT bin; use fewer bands or a longer frame"
                )));
            }
        }
        Ok(MelFilterbank {
            n_mels,
            bins,
            weights,
            centers_hz: edges[1..=n_mels].to_vec(),
        })
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.bins..(m + 1) * self.bins]
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        (0..self.n_mels)
            .map(|m| self.row(m).iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

pub fn log_mel(w: &Waveform, spec: &FrameSpec, n_mels: usize, eps: f64) -> Result<FeatureMatrix> {
    let s = Spectrogram::compute(w, spec)?;
    let bank = MelFilterbank::new(n_mels, spec.frame_length, w.sample_rate())?;
    log_mel_from(&s, &bank, eps)
}

pub(crate) fn log_mel_from(s: &Spectrogram, bank: &MelFilterbank, eps: f64) -> Result<FeatureMatrix> {
    let power = s.power();
    let mut values = Vec::with_capacity(s.frames * bank.n_mels);
    for t in 0..s.frames {
        let frame = &power[t * s.bins..(t + 1) * s.bins];
        values.extend(bank.apply(frame).into_iter().map(|e| (e + eps).ln()));
    }
    Ok(FeatureMatrix::new(
        Domain::LogMel,
        Tensor::matrix(s.frames, bank.n_mels, values)?,
    ))
}

pub fn mfcc(
    w: &Waveform,
    spec: &FrameSpec,
    n_mels: usize,
    n_mfcc: usize,
    eps: f64,
) -> Result<FeatureMatrix> {
    let lm = log_mel(w, spec, n_mels, eps)?;
    mfcc_from(&lm, n_mfcc)
}

pub(crate) fn mfcc_from(log_mel: &FeatureMatrix, n_mfcc: usize) -> Result<FeatureMatrix> {
    let n_mels = log_mel.data.cols();
    if n_mfcc == 0 || n_mfcc > n_mels {
        return Err(Error::InvalidArgument(format!(
            "need 1 ≤ n_mfcc ({n_mfcc}) ≤ n_mels ({n_mels})"
        )));
    }
    let dct = Dct::new(n_mels, n_mfcc);
    let frames = log_mel.data.rows();
    let values = (0..frames).flat_map(|t| dct.apply(log_mel.data.row(t))).collect();
    Ok(FeatureMatrix::new(
        Domain::Mfcc,
        Tensor::matrix(frames, n_mfcc, values)?,
    ))
}
