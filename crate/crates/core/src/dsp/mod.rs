//! Audio loading, clip preparation and the seven per-modality feature domains.

mod audio;
pub mod cqt;
mod features;
mod frames;
pub mod gammatone;
pub mod mel;
pub mod spectral;

pub use audio::{
    read_wav, standardize_length, trim_silence, write_wav, Waveform, DEFAULT_SAMPLE_RATE,
};
pub use cqt::{cqcc, Cqt};
pub use features::{extract_all, Domain, Extractor, FeatureConfig, FeatureMatrix, ModalityFeatureSet};
pub use frames::{frame_spectrum, FrameSpec, Spectrogram, Window};
pub use gammatone::{gfcc, GammatoneBank};
pub use mel::{log_mel, mfcc, MelFilterbank};
pub use spectral::{spectral_centroid, ste, zcr};
