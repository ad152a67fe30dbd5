use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::cqt::{self, Cqt};
use super::gammatone::{self, GammatoneBank};
use super::mel::{self, MelFilterbank};
use super::spectral;
use super::{FrameSpec, Spectrogram, Waveform};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    #[serde(rename = "ZCR")]
    Zcr,
    #[serde(rename = "STE")]
    Ste,
    #[serde(rename = "SC")]
    Sc,
    #[serde(rename = "LOGMEL")]
    LogMel,
    #[serde(rename = "MFCC")]
    Mfcc,
    #[serde(rename = "GFCC")]
    Gfcc,
    #[serde(rename = "CQCC")]
    Cqcc,
}

impl Domain {
    /// Canonical order used everywhere a modality's domains are listed.
    pub const ALL: [Domain; 7] = [
        Domain::Zcr,
        Domain::Ste,
        Domain::Sc,
        Domain::LogMel,
        Domain::Mfcc,
        Domain::Gfcc,
        Domain::Cqcc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Domain::Zcr => "ZCR",
            Domain::Ste => "STE",
            Domain::Sc => "SC",
            Domain::LogMel => "LOGMEL",
            Domain::Mfcc => "MFCC",
            Domain::Gfcc => "GFCC",
            Domain::Cqcc => "CQCC",
        }
    }

    pub fn index(self) -> usize {
        Domain::ALL.iter().position(|&d| d == self).expect("listed")
    }

    /// One value per frame.
    pub fn is_scalar(self) -> bool {
        matches!(self, Domain::Zcr | Domain::Ste | Domain::Sc)
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Domain::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown feature domain `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub domain: Domain,
    /// `frames × dims`
    pub data: Tensor,
}

impl FeatureMatrix {
    pub fn new(domain: Domain, data: Tensor) -> Self {
        FeatureMatrix { domain, data }
    }
}

/// The seven domain matrices of one modality, in [`Domain::ALL`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityFeatureSet {
    matrices: Vec<FeatureMatrix>,
}

impl ModalityFeatureSet {
    pub fn new(matrices: Vec<FeatureMatrix>) -> Result<Self> {
        let domains: Vec<Domain> = matrices.iter().map(|m| m.domain).collect();
        if domains != Domain::ALL {
            return Err(Error::Data(format!(
                "feature set must list {:?} in order, got {domains:?}",
                Domain::ALL
            )));
        }
        if let Some(m) = matrices.iter().find(|m| m.data.rank() != 2) {
            return Err(Error::InvalidShape {
                shape: m.data.shape().to_vec(),
                reason: format!("{} features must be frames × dims", m.domain),
            });
        }
        Ok(ModalityFeatureSet { matrices })
    }

    pub fn get(&self, domain: Domain) -> &FeatureMatrix {
        &self.matrices[domain.index()]
    }

    pub fn get_mut(&mut self, domain: Domain) -> &mut FeatureMatrix {
        &mut self.matrices[domain.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &FeatureMatrix> {
        self.matrices.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut FeatureMatrix> {
        self.matrices.iter_mut()
    }

    pub fn total_len(&self) -> usize {
        self.matrices.iter().map(|m| m.data.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub frame: FrameSpec,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub gfcc_filters: usize,
    pub gfcc_coeffs: usize,
    pub cqt_fmin: f64,
    pub cqt_bins_per_octave: usize,
    pub cqcc_coeffs: usize,
    pub eps: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            frame: FrameSpec::default(),
            n_mels: 64,
            n_mfcc: 13,
            gfcc_filters: 26,
            gfcc_coeffs: 13,
            cqt_fmin: cqt::DEFAULT_FMIN,
            cqt_bins_per_octave: cqt::DEFAULT_BINS_PER_OCTAVE,
            cqcc_coeffs: 13,
            eps: 1e-10,
        }
    }
}

impl FeatureConfig {
    /// Columns of the given domain's matrix.
    pub fn dims(&self, domain: Domain) -> usize {
        match domain {
            Domain::Zcr | Domain::Ste | Domain::Sc => 1,
            Domain::LogMel => self.n_mels,
            Domain::Mfcc => self.n_mfcc,
            Domain::Gfcc => self.gfcc_coeffs,
            Domain::Cqcc => self.cqcc_coeffs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.frame.validate()?;
        if self.n_mfcc == 0 || self.n_mfcc > self.n_mels {
            return Err(Error::InvalidArgument(format!(
                "need 1 ≤ n_mfcc ({}) ≤ n_mels ({})",
                self.n_mfcc, self.n_mels
            )));
        }
        if self.gfcc_coeffs == 0 || self.gfcc_coeffs > self.gfcc_filters {
            return Err(Error::InvalidArgument(format!(
                "need 1 ≤ gfcc_coeffs ({}) ≤ gfcc_filters ({})",
                self.gfcc_coeffs, self.gfcc_filters
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument("eps must be positive".into()));
        }
        Ok(())
    }
}

/// Filterbanks and transforms built once for a sample rate and reused per clip.
#[derive(Clone, Debug)]
pub struct Extractor {
    pub config: FeatureConfig,
    pub sample_rate: u32,
    mel: MelFilterbank,
    gammatone: GammatoneBank,
    cqt: Cqt,
}

impl Extractor {
    pub fn new(config: FeatureConfig, sample_rate: u32) -> Result<Self> {
        config.validate()?;
        let fft = config.frame.frame_length;
        let mel = MelFilterbank::new(config.n_mels, fft, sample_rate)
            .map_err(|e| e.in_domain(Domain::LogMel.name()))?;
        let gammatone = GammatoneBank::new(config.gfcc_filters, fft, sample_rate)
            .map_err(|e| e.in_domain(Domain::Gfcc.name()))?;
        let cqt = Cqt::new(sample_rate, config.cqt_fmin, config.cqt_bins_per_octave)
            .map_err(|e| e.in_domain(Domain::Cqcc.name()))?;
        if config.cqcc_coeffs == 0 || config.cqcc_coeffs > cqt.n_bins() {
            return Err(Error::InvalidArgument(format!(
                "need 1 ≤ cqcc_coeffs ({}) ≤ CQT bins ({})",
                config.cqcc_coeffs,
                cqt.n_bins()
            ))
            .in_domain(Domain::Cqcc.name()));
        }
        Ok(Extractor {
            config,
            sample_rate,
            mel,
            gammatone,
            cqt,
        })
    }

    /// All seven domains. The STFT is computed once and shared.
    pub fn extract(&self, w: &Waveform) -> Result<ModalityFeatureSet> {
        if w.sample_rate() != self.sample_rate {
            return Err(Error::InvalidArgument(format!(
                "extractor built for {} Hz, clip is {} Hz",
                self.sample_rate,
                w.sample_rate()
            )));
        }
        let cfg = &self.config;
        let spec = &cfg.frame;
        let tag = |d: Domain| move |e: Error| e.in_domain(d.name());
        let stft = Spectrogram::compute(w, spec).map_err(tag(Domain::Sc))?;
        let zcr = spectral::zcr(w, spec).map_err(tag(Domain::Zcr))?;
        let ste = spectral::ste(w, spec).map_err(tag(Domain::Ste))?;
        let sc = spectral::spectral_centroid_from(&stft).map_err(tag(Domain::Sc))?;
        let lm = mel::log_mel_from(&stft, &self.mel, cfg.eps).map_err(tag(Domain::LogMel))?;
        let mf = mel::mfcc_from(&lm, cfg.n_mfcc).map_err(tag(Domain::Mfcc))?;
        let gf = gammatone::gfcc_from(&stft, &self.gammatone, cfg.gfcc_coeffs, cfg.eps)
            .map_err(tag(Domain::Gfcc))?;
        let cq = cqt::cqcc_with(w, spec, &self.cqt, cfg.cqcc_coeffs, cfg.eps)
            .map_err(tag(Domain::Cqcc))?;
        ModalityFeatureSet::new(vec![zcr, ste, sc, lm, mf, gf, cq])
    }
}

pub fn extract_all(w: &Waveform, cfg: &FeatureConfig) -> Result<ModalityFeatureSet> {
    Extractor::new(cfg.clone(), w.sample_rate())?.extract(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn noise(n: usize, seed: u64) -> Waveform {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..n).map(|_| rng.random_range(-0.5..0.5)).collect(), 44_100).unwrap()
    }

    #[test]
    fn seven_domains_in_order_with_shared_framing() {
        let w = noise(16_384, 1);
        let fs = extract_all(&w, &FeatureConfig::default()).unwrap();
        let order: Vec<Domain> = fs.iter().map(|m| m.domain).collect();
        assert_eq!(order, Domain::ALL);
        let frames = FrameSpec::default().frame_count(w.len()).unwrap();
        let cfg = FeatureConfig::default();
        for m in fs.iter() {
            assert_eq!(m.data.shape(), &[frames, cfg.dims(m.domain)], "{}", m.domain);
        }
    }

    #[test]
    fn extraction_is_bitwise_deterministic() {
        let w = noise(8192, 2);
        let a = extract_all(&w, &FeatureConfig::default()).unwrap();
        let b = extract_all(&w, &FeatureConfig::default()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            let bits = |t: &Tensor| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&x.data), bits(&y.data));
        }
    }

    #[test]
    fn ranges_hold_on_noise() {
        let cfg = FeatureConfig::default();
        let fs = extract_all(&noise(12_000, 3), &cfg).unwrap();
        let v = |d: Domain| fs.get(d).data.values().to_vec();
        assert!(v(Domain::Zcr).iter().all(|x| (0.0..=1.0).contains(x)));
        assert!(v(Domain::Ste).iter().all(|&x| x >= 0.0));
        assert!(v(Domain::Sc).iter().all(|x| (0.0..=22_050.0).contains(x)));
        assert!(v(Domain::LogMel).iter().all(|&x| x >= cfg.eps.ln()));
    }

    #[test]
    fn one_hop_shift_shifts_rows() {
        let cfg = FeatureConfig::default();
        let hop = cfg.frame.hop_length;
        let base = noise(20_000, 4);
        let shifted = Waveform::new(base.samples()[hop..].to_vec(), 44_100).unwrap();
        let a = extract_all(&base, &cfg).unwrap();
        let b = extract_all(&shifted, &cfg).unwrap();
        for d in [Domain::Zcr, Domain::Ste, Domain::Sc, Domain::LogMel, Domain::Mfcc, Domain::Gfcc] {
            let (x, y) = (&a.get(d).data, &b.get(d).data);
            for t in 0..y.rows().min(x.rows() - 1) {
                for (p, q) in x.row(t + 1).iter().zip(y.row(t)) {
                    assert!((p - q).abs() <= 1e-6 * p.abs().max(1.0), "{d} frame {t}");
                }
            }
        }
    }

    #[test]
    fn errors_carry_domain_tag() {
        let w = Waveform::new(vec![0.0; 100], 44_100).unwrap();
        let err = extract_all(&w, &FeatureConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Domain { .. }), "{err}");
    }

    #[test]
    fn rejects_out_of_order_sets() {
        let t = Tensor::zeros(&[1, 1]);
        let m = vec![FeatureMatrix::new(Domain::Ste, t.clone()), FeatureMatrix::new(Domain::Zcr, t)];
        assert!(ModalityFeatureSet::new(m).is_err());
    }

    #[test]
    fn domain_names_round_trip() {
        for d in Domain::ALL {
            assert_eq!(d.name().parse::<Domain>().unwrap(), d);
        }
    }
}
