mod common;

use audformer::dsp::{extract_all, Cqt, Domain, FeatureConfig, FrameSpec, MelFilterbank};
use audformer::synth::SynthSpec;
use common::{best_threshold_accuracy, centroid_oracle, tone};

#[test]
fn eight_second_cough_gives_686_frames_in_every_stft_domain() {
    let w = tone(500.0, 8.0, 44_100);
    let fs = extract_all(&w, &FeatureConfig::default()).unwrap();
    for m in fs.iter() {
        assert_eq!(m.data.rows(), 686, "{}", m.domain.name());
    }
    let cfg = FeatureConfig::default();
    for d in Domain::ALL {
        assert_eq!(fs.get(d).data.cols(), cfg.dims(d));
    }
}

#[test]
fn octave_shift_translates_cqt_pattern() {
    let cqt = Cqt::new(44_100, 55.0, 12).unwrap();
    let spec = FrameSpec::default();
    let a = cqt.transform(&tone(220.0, 1.0, 44_100), &spec).unwrap();
    let b = cqt.transform(&tone(440.0, 1.0, 44_100), &spec).unwrap();
    let t = a.rows() / 2;
    let (ra, rb) = (a.row(t), b.row(t));
    let n = cqt.n_bins() - 12;
    let diff: f64 = (0..n).map(|k| (rb[k + 12] - ra[k]).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = ra[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(diff / norm <= 0.05, "relative L2 {}", diff / norm);
}

#[test]
fn mel_band_argmax_matches_nearest_center_for_probe_tones() {
    let cfg = FeatureConfig::default();
    let bank = MelFilterbank::new(cfg.n_mels, cfg.frame.frame_length, 44_100).unwrap();
    for f in [200.0, 440.0, 1000.0, 2500.0, 6000.0] {
        let fs = extract_all(&tone(f, 0.5, 44_100), &cfg).unwrap();
        let lm = &fs.get(Domain::LogMel).data;
        let row = lm.row(lm.rows() / 2);
        let arg = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        let nearest = (0..bank.n_mels)
            .min_by(|&a, &b| (bank.centers_hz[a] - f).abs().total_cmp(&(bank.centers_hz[b] - f).abs()))
            .unwrap();
        assert_eq!(arg, nearest, "{f} Hz");
    }
}

#[test]
fn threshold_accuracy_oracle() {
    assert_eq!(best_threshold_accuracy(&[1.0, 2.0, 3.0, 4.0], &[false, false, true, true]), 1.0);
    assert_eq!(best_threshold_accuracy(&[1.0, 2.0, 3.0, 4.0], &[true, true, false, false]), 1.0);
    assert_eq!(best_threshold_accuracy(&[1.0, 2.0, 3.0, 4.0], &[true, false, true, false]), 0.75);
}

#[test]
fn tone_corpus_is_separable_by_centroid() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec::tones(40, 3, 10.0, 11);
    audformer::synth::generate(&spec, dir.path()).unwrap();
    let acc = centroid_oracle(dir.path());
    assert!(acc >= 0.95, "{acc}");
}
