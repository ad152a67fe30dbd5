//! Frame-level time and spectral descriptors: ZCR, STE, spectral centroid.

use super::{Domain, FeatureMatrix, FrameSpec, Spectrogram, Waveform};
use crate::error::Result;
use crate::numerics::Tensor;

fn column(domain: Domain, values: Vec<f64>) -> Result<FeatureMatrix> {
    let n = values.len();
    Ok(FeatureMatrix::new(domain, Tensor::matrix(n, 1, values)?))
}

/// Sign changes per frame divided by `frame_length − 1`. Zero counts as positive.
pub fn zcr(w: &Waveform, spec: &FrameSpec) -> Result<FeatureMatrix> {
    let denom = (spec.frame_length.max(2) - 1) as f64;
    let values = spec
        .frames(w.samples())?
        .map(|f| f.windows(2).filter(|p| (p[0] >= 0.0) != (p[1] >= 0.0)).count() as f64 / denom)
        .collect();
    column(Domain::Zcr, values)
}

/// Mean squared sample value per frame.
pub fn ste(w: &Waveform, spec: &FrameSpec) -> Result<FeatureMatrix> {
    let n = spec.frame_length as f64;
    let values = spec
        .frames(w.samples())?
        .map(|f| f.iter().map(|x| x * x).sum::<f64>() / n)
        .collect();
    column(Domain::Ste, values)
}

pub fn spectral_centroid(w: &Waveform, spec: &FrameSpec) -> Result<FeatureMatrix> {
    spectral_centroid_from(&Spectrogram::compute(w, spec)?)
}

/// Magnitude-weighted mean bin frequency in Hz; silent frames map to 0.
pub(crate) fn spectral_centroid_from(s: &Spectrogram) -> Result<FeatureMatrix> {
    let values = (0..s.frames)
        .map(|t| {
            let row = s.row(t);
            let total: f64 = row.iter().sum();
            if total <= 0.0 {
                return 0.0;
            }
            row.iter()
                .enumerate()
                .map(|(k, m)| s.bin_frequency(k) * m)
                .sum::<f64>()
                / total
        })
        .collect();
    column(Domain::Sc, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 44_100).unwrap()
    }

    #[test]
    fn zcr_extremes() {
        let spec = FrameSpec::default();
        let flat = zcr(&wave(vec![0.3; 8192]), &spec).unwrap();
        assert!(flat.data.values().iter().all(|&v| v == 0.0));
        let alt: Vec<f64> = (0..8192).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let alt = zcr(&wave(alt), &spec).unwrap();
        assert!(alt.data.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn ste_is_mean_square() {
        let spec = FrameSpec::default();
        let e = ste(&wave(vec![0.5; 4096]), &spec).unwrap();
        assert!(e.data.values().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert_eq!(e.data.shape(), &[spec.frame_count(4096).unwrap(), 1]);
    }

    #[test]
    fn pure_tone_centroid_within_one_bin() {
        let spec = FrameSpec::default();
        let sr = 44_100.0;
        let bin = sr / spec.frame_length as f64;
        for f in [250.0, 1000.0, 3000.0] {
            let x = (0..22_050).map(|i| (2.0 * PI * f * i as f64 / sr).sin()).collect();
            let sc = spectral_centroid(&wave(x), &spec).unwrap();
            for &v in sc.data.values() {
                assert!((v - f).abs() <= bin, "{f} Hz tone gave centroid {v}");
            }
        }
    }

    #[test]
    fn too_short_input_is_an_error() {
        let spec = FrameSpec::default();
        assert!(zcr(&wave(vec![0.0; 100]), &spec).is_err());
        assert!(spectral_centroid(&wave(vec![0.0; 100]), &spec).is_err());
    }
}
