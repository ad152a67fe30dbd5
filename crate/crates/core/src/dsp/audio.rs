use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 44_100;

/// Mono audio with samples nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| s.is_nan()) {
            return Err(Error::InvalidArgument("waveform contains NaN".into()));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Appends clips end to end; all must share one sample rate.
    pub fn concat(parts: &[Waveform]) -> Result<Waveform> {
        let first = parts.first().ok_or(Error::EmptyInput)?;
        if parts.iter().any(|p| p.sample_rate != first.sample_rate) {
            return Err(Error::InvalidArgument("cannot concatenate mixed sample rates".into()));
        }
        let samples = parts.iter().flat_map(|p| p.samples.iter().copied()).collect();
        Waveform::new(samples, first.sample_rate)
    }

    /// Linear-interpolation resampling.
    pub fn resample(&self, target_rate: u32) -> Result<Waveform> {
        if target_rate == self.sample_rate || self.samples.is_empty() {
            return Waveform::new(self.samples.clone(), target_rate);
        }
        let ratio = self.sample_rate as f64 / target_rate as f64;
        let n = ((self.samples.len() as f64) / ratio).round().max(1.0) as usize;
        let last = self.samples.len() - 1;
        let samples = (0..n)
            .map(|i| {
                let pos = i as f64 * ratio;
                let lo = (pos.floor() as usize).min(last);
                let hi = (lo + 1).min(last);
                let frac = pos - lo as f64;
                self.samples[lo] * (1.0 - frac) + self.samples[hi] * frac
            })
            .collect();
        Waveform::new(samples, target_rate)
    }
}

/// Reads 16/24/32-bit integer or 32-bit float PCM, averaging channels to mono.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
    };
    let mono = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / frame.len() as f64)
        .collect();
    Waveform::new(mono, spec.sample_rate)
}

/// Writes 16-bit PCM, clipping to `[-1, 1]`.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

const TRIM_FRAME: usize = 2048;
const TRIM_HOP: usize = 512;

/// Drops every stretch of audio whose framewise RMS sits more than
/// `threshold_db` below the loudest frame.
///
/// A sample survives when at least one non-silent frame covers it. All-silent
/// input yields the single loudest (first) frame instead of an empty clip.
pub fn trim_silence(w: &Waveform, threshold_db: f64) -> Result<Waveform> {
    if w.is_empty() {
        return Err(Error::EmptyInput);
    }
    let len = w.len();
    let frame = TRIM_FRAME.min(len);
    let n_frames = if len <= frame { 1 } else { (len - frame) / TRIM_HOP + 1 };
    let starts: Vec<usize> = (0..n_frames).map(|t| t * TRIM_HOP).collect();
    let rms: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let f = &w.samples[s..s + frame];
            (f.iter().map(|x| x * x).sum::<f64>() / frame as f64).sqrt()
        })
        .collect();
    let (loudest, peak) = rms
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |best, (i, r)| if r > best.1 { (i, r) } else { best });
    if peak == 0.0 {
        let s = starts[loudest];
        return Waveform::new(w.samples[s..s + frame].to_vec(), w.sample_rate);
    }
    let floor_db = 20.0 * peak.log10() - threshold_db;
    let mut keep = vec![false; len];
    // A clip's tail past the last full frame belongs to the final frame.
    let last_end = |i: usize| if i + 1 == n_frames { len } else { starts[i] + frame };
    for (i, &r) in rms.iter().enumerate() {
        if r > 0.0 && 20.0 * r.log10() >= floor_db {
            keep[starts[i]..last_end(i)].iter_mut().for_each(|k| *k = true);
        }
    }
    let samples = w
        .samples
        .iter()
        .zip(&keep)
        .filter_map(|(&s, &k)| k.then_some(s))
        .collect();
    Waveform::new(samples, w.sample_rate)
}

/// Center-crops or symmetrically zero-pads to `round(target_seconds · sr)` samples.
pub fn standardize_length(w: &Waveform, target_seconds: f64) -> Result<Waveform> {
    if !(target_seconds > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "target length {target_seconds}s must be positive"
        )));
    }
    let target = (target_seconds * w.sample_rate as f64).round() as usize;
    let len = w.len();
    let samples = if len >= target {
        let start = (len - target) / 2;
        w.samples[start..start + target].to_vec()
    } else {
        let left = (target - len) / 2;
        let mut out = vec![0.0; target];
        out[left..left + len].copy_from_slice(&w.samples);
        out
    };
    Waveform::new(samples, w.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(freq: f64, seconds: f64, sr: u32) -> Vec<f64> {
        let n = (seconds * sr as f64) as usize;
        (0..n).map(|i| 0.5 * (2.0 * PI * freq * i as f64 / sr as f64).sin()).collect()
    }

    #[test]
    fn trim_keeps_continuous_tone() {
        let w = Waveform::new(tone(440.0, 1.0, 44_100), 44_100).unwrap();
        assert_eq!(trim_silence(&w, 60.0).unwrap().len(), w.len());
    }

    #[test]
    fn trim_removes_surrounding_silence() {
        let sr = 44_100;
        let t = tone(440.0, 1.0, sr);
        let mut s = vec![0.0; sr as usize];
        s.extend_from_slice(&t);
        s.extend(vec![0.0; sr as usize]);
        let out = trim_silence(&Waveform::new(s, sr).unwrap(), 60.0).unwrap();
        let diff = out.len() as i64 - t.len() as i64;
        assert!(diff.abs() <= 2 * TRIM_FRAME as i64, "length off by {diff}");
        let kept: f64 = out.samples().iter().map(|x| x * x).sum();
        let orig: f64 = t.iter().map(|x| x * x).sum();
        assert!(kept >= 0.99 * orig, "{kept} vs {orig}");
    }

    #[test]
    fn trim_of_silence_returns_one_frame() {
        let w = Waveform::new(vec![0.0; 10_000], 44_100).unwrap();
        assert_eq!(trim_silence(&w, 60.0).unwrap().len(), TRIM_FRAME);
        let empty = Waveform::new(vec![], 44_100).unwrap();
        assert!(matches!(trim_silence(&empty, 60.0), Err(Error::EmptyInput)));
    }

    #[test]
    fn standardize_crops_and_pads() {
        let sr = 100;
        let long = Waveform::new((0..1000).map(f64::from).collect(), sr).unwrap();
        let cropped = standardize_length(&long, 8.0).unwrap();
        assert_eq!(cropped.len(), 800);
        assert_eq!(cropped.samples()[0], 100.0);

        let same = standardize_length(&cropped, 8.0).unwrap();
        assert_eq!(same, cropped);

        let short = Waveform::new(vec![1.0; 300], sr).unwrap();
        let padded = standardize_length(&short, 6.0).unwrap();
        assert_eq!(padded.len(), 600);
        assert!(padded.samples()[..150].iter().all(|&x| x == 0.0));
        assert!(padded.samples()[150..450].iter().all(|&x| x == 1.0));
        assert!(padded.samples()[450..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn coswara_cough_length() {
        let w = Waveform::new(vec![0.1; 441_000], 44_100).unwrap();
        assert_eq!(standardize_length(&w, 8.0).unwrap().len(), 352_800);
    }

    #[test]
    fn resample_preserves_duration() {
        let w = Waveform::new(tone(100.0, 1.0, 16_000), 16_000).unwrap();
        let r = w.resample(44_100).unwrap();
        assert_eq!(r.len(), 44_100);
        assert_eq!(r.sample_rate(), 44_100);
    }

    #[test]
    fn wav_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let w = Waveform::new(tone(440.0, 0.1, 44_100), 44_100).unwrap();
        write_wav(&path, &w).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), w.len());
        let err = back
            .samples()
            .iter()
            .zip(w.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-4);
    }
}
