//! Constant-Q transform and constant-Q cepstral coefficients.
//!
//! Bin `k` sits at `fmin · 2^(k/bpo)` with quality factor
//! `Q = 1/(2^(1/bpo) − 1)` and a Hann-windowed complex exponential kernel of
//! `ceil(Q·sr/f_k)` samples. Kernels are centered on the middle of each STFT
//! frame so the CQT shares the STFT frame count; samples outside the clip
//! count as zero.

use std::f64::consts::PI;

use rayon::prelude::*;

use super::mel::Dct;
use super::{Domain, FeatureMatrix, FrameSpec, Waveform, Window};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_FMIN: f64 = 32.7;
pub const DEFAULT_BINS_PER_OCTAVE: usize = 12;

/// `fmin · 2^(k/bpo)`, computed so that `k + bpo` is exactly twice `k`.
pub fn center_frequency(fmin: f64, bins_per_octave: usize, k: usize) -> f64 {
    let octave = (k / bins_per_octave) as i32;
    let rem = (k % bins_per_octave) as f64;
    fmin * 2f64.powi(octave) * 2f64.powf(rem / bins_per_octave as f64)
}

#[derive(Clone, Debug)]
struct Kernel {
    re: Vec<f64>,
    im: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Cqt {
    pub sample_rate: u32,
    pub fmin: f64,
    pub bins_per_octave: usize,
    pub freqs: Vec<f64>,
    kernels: Vec<Kernel>,
}

impl Cqt {
    pub fn new(sample_rate: u32, fmin: f64, bins_per_octave: usize) -> Result<Self> {
        if !(fmin > 0.0) || bins_per_octave == 0 {
            return Err(Error::FrequencyRange(format!(
                "need fmin > 0 and bins_per_octave ≥ 1 (got {fmin}, {bins_per_octave})"
            )));
        }
        let nyquist = sample_rate as f64 / 2.0;
        let n_bins = (bins_per_octave as f64 * (nyquist / fmin).log2()).floor();
        if !(n_bins >= bins_per_octave as f64) {
            return Err(Error::FrequencyRange(format!(
                "fmin {fmin} Hz leaves less than one octave below Nyquist {nyquist} Hz"
            )));
        }
        let n_bins = n_bins as usize;
        let q = quality(bins_per_octave);
        let freqs: Vec<f64> =
            (0..n_bins).map(|k| center_frequency(fmin, bins_per_octave, k)).collect();
        let kernels = freqs
            .iter()
            .map(|&f| {
                let n = (q * sample_rate as f64 / f).ceil() as usize;
                let w = Window::Hann.coefficients(n);
                let norm: f64 = w.iter().sum();
                let half = n as f64 / 2.0;
                let (re, im) = w
                    .iter()
                    .enumerate()
                    .map(|(i, &wi)| {
                        let phase = -2.0 * PI * f * (i as f64 - half) / sample_rate as f64;
                        (wi * phase.cos() / norm, wi * phase.sin() / norm)
                    })
                    .unzip();
                Kernel { re, im }
            })
            .collect();
        Ok(Cqt {
            sample_rate,
            fmin,
            bins_per_octave,
            freqs,
            kernels,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.freqs.len()
    }

    pub fn q(&self) -> f64 {
        quality(self.bins_per_octave)
    }

    pub fn kernel_length(&self, k: usize) -> usize {
        self.kernels[k].re.len()
    }

    /// `|X_k|` for every bin with kernels centered on sample `center`.
    pub fn magnitudes(&self, samples: &[f64], center: usize) -> Vec<f64> {
        self.kernels
            .iter()
            .map(|k| {
                let n = k.re.len();
                let start = center as isize - (n / 2) as isize;
                let lo = (-start).max(0) as usize;
                let hi = (samples.len() as isize - start).clamp(0, n as isize) as usize;
                let (mut re, mut im) = (0.0, 0.0);
                for i in lo..hi {
                    let x = samples[(start + i as isize) as usize];
                    re += x * k.re[i];
                    im += x * k.im[i];
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    /// `frames × n_bins` magnitudes, one frame per STFT frame of `spec`.
    pub fn transform(&self, w: &Waveform, spec: &FrameSpec) -> Result<Tensor> {
        let frames = spec.frame_count(w.len())?;
        let values: Vec<f64> = (0..frames)
            .into_par_iter()
            .flat_map_iter(|t| self.magnitudes(w.samples(), t * spec.hop_length + spec.frame_length / 2))
            .collect();
        Tensor::matrix(frames, self.n_bins(), values)
    }
}

fn quality(bins_per_octave: usize) -> f64 {
    1.0 / (2f64.powf(1.0 / bins_per_octave as f64) - 1.0)
}

/// Linear interpolation of `log_power` (sampled at geometric `freqs`) onto
/// `freqs.len()` evenly spaced frequencies spanning the same range.
fn resample_uniform(freqs: &[f64], log_power: &[f64]) -> Vec<f64> {
    let n = freqs.len();
    let (lo, hi) = (freqs[0], freqs[n - 1]);
    let mut j = 0;
    (0..n)
        .map(|i| {
            let f = if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
            while j + 2 < n && freqs[j + 1] < f {
                j += 1;
            }
            let (f0, f1) = (freqs[j], freqs[j + 1]);
            let t = ((f - f0) / (f1 - f0)).clamp(0.0, 1.0);
            log_power[j] * (1.0 - t) + log_power[j + 1] * t
        })
        .collect()
}

pub fn cqcc(
    w: &Waveform,
    spec: &FrameSpec,
    fmin: f64,
    bins_per_octave: usize,
    n_coeffs: usize,
    eps: f64,
) -> Result<FeatureMatrix> {
    let cqt = Cqt::new(w.sample_rate(), fmin, bins_per_octave)?;
    cqcc_with(w, spec, &cqt, n_coeffs, eps)
}

/// Log power `ln(|X|² + eps)`, uniform resampling, DCT-II.
pub(crate) fn cqcc_with(
    w: &Waveform,
    spec: &FrameSpec,
    cqt: &Cqt,
    n_coeffs: usize,
    eps: f64,
) -> Result<FeatureMatrix> {
    let n = cqt.n_bins();
    if n_coeffs == 0 || n_coeffs > n {
        return Err(Error::InvalidArgument(format!(
            "need 1 ≤ n_coeffs ({n_coeffs}) ≤ CQT bins ({n})"
        )));
    }
    let mag = cqt.transform(w, spec)?;
    let dct = Dct::new(n, n_coeffs);
    let frames = mag.rows();
    let values = (0..frames)
        .flat_map(|t| {
            let log_power: Vec<f64> = mag.row(t).iter().map(|m| (m * m + eps).ln()).collect();
            dct.apply(&resample_uniform(&cqt.freqs, &log_power))
        })
        .collect();
    Ok(FeatureMatrix::new(Domain::Cqcc, Tensor::matrix(frames, n_coeffs, values)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn octave_doubling_is_exact() {
        let cqt = Cqt::new(44_100, DEFAULT_FMIN, 12).unwrap();
        for k in 0..cqt.n_bins() - 12 {
            assert_eq!(cqt.freqs[k + 12], 2.0 * cqt.freqs[k], "bin {k}");
        }
        assert!(*cqt.freqs.last().unwrap() < 22_050.0);
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(matches!(Cqt::new(44_100, 0.0, 12), Err(Error::FrequencyRange(_))));
        assert!(matches!(Cqt::new(44_100, 15_000.0, 12), Err(Error::FrequencyRange(_))));
    }

    #[test]
    fn resample_is_identity_on_linear_data() {
        let freqs = [1.0, 2.0, 4.0, 8.0];
        let vals = [1.0, 2.0, 4.0, 8.0];
        let out = resample_uniform(&freqs, &vals);
        let expect = [1.0, 10.0 / 3.0, 17.0 / 3.0, 8.0];
        for (a, b) in out.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn silence_gives_log_floor_cepstrum() {
        let w = Waveform::new(vec![0.0; 4096], 44_100).unwrap();
        let c = cqcc(&w, &FrameSpec::default(), DEFAULT_FMIN, 12, 13, 1e-10).unwrap();
        let n = Cqt::new(44_100, DEFAULT_FMIN, 12).unwrap().n_bins();
        let c0 = (n as f64).sqrt() * (1e-10f64).ln();
        for row in c.data.values().chunks(13) {
            assert!((row[0] - c0).abs() < 1e-9);
            assert!(row[1..].iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn on_bin_tone_has_half_amplitude() {
        let cqt = Cqt::new(44_100, 110.0, 12).unwrap();
        let k = 24;
        let f = cqt.freqs[k];
        let x: Vec<f64> = (0..44_100).map(|i| (2.0 * PI * f * i as f64 / 44_100.0).cos()).collect();
        let mags = cqt.magnitudes(&x, 22_050);
        assert!((mags[k] - 0.5).abs() < 1e-2, "{}", mags[k]);
        let arg = (0..mags.len()).max_by(|&a, &b| mags[a].total_cmp(&mags[b])).unwrap();
        assert_eq!(arg, k);
    }
}
