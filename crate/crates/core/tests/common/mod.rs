#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use audformer::dataset::{assemble, load_manifest, write_cache, AssemblyConfig};
use audformer::dsp::Waveform;
use audformer::model::{Forward, ParamStore};
use audformer::numerics::{Graph, Tensor, Var};
use audformer::profiles::Profile;
use audformer::synth::{generate, SynthSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tone(freq: f64, seconds: f64, sample_rate: u32) -> Waveform {
    let n = (seconds * sample_rate as f64).round() as usize;
    let x = (0..n).map(|i| (2.0 * PI * freq * i as f64 / sample_rate as f64).sin() * 0.5).collect();
    Waveform::new(x, sample_rate).unwrap()
}

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_audformer"))
}

/// Runs the binary and fails with its stderr unless it exits 0.
pub fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "audformer {args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a corpus and its feature cache under `root`; returns the cache dir.
pub fn corpus(root: &Path, spec: &SynthSpec) -> PathBuf {
    let wav = root.join("corpus");
    generate(spec, &wav).unwrap();
    let manifest = load_manifest(&wav.join("manifest.jsonl")).unwrap();
    let profile = Profile::named("synth").unwrap();
    let assembly = AssemblyConfig::default();
    let instances = assemble(&manifest, &profile, &assembly).unwrap();
    let cache = root.join("cache");
    write_cache(&cache, &profile.name, &assembly, &instances).unwrap();
    cache
}

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(shape, 1.0, &mut rng)
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    // A gradient that vanishes identically (key bias under softmax) must
    // show only rounding-level differences on the other side.
    if na < 1e-12 {
        return if nb <= 1e-8 { 0.0 } else { 1.0 };
    }
    diff / na.max(nb)
}

/// `sum(out ⊙ R)` for a fixed random `R`, so every output element matters.
pub fn project(f: &mut Forward, out: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = f.g.value(out).shape().to_vec();
    let n = f.g.value(out).len();
    let w = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let w = f.g.constant(&w);
    let p = f.g.mul(out, w).unwrap();
    f.g.sum(p)
}

/// Worst per-tensor relative error between tape gradients and central
/// differences (h = 1e-5) over every tensor in `store`.
pub fn fd_check(store: &ParamStore, loss: impl Fn(&mut Forward) -> Var) -> f64 {
    let h = 1e-5;
    let value = |st: &ParamStore| {
        let mut f = Forward::new(st, Graph::eval());
        let l = loss(&mut f);
        f.g.value(l).values()[0]
    };
    let mut f = Forward::new(store, Graph::eval());
    let l = loss(&mut f);
    f.g.backward(l).unwrap();
    let analytic = f.param_grads();
    let mut worst: f64 = 0.0;
    for id in store.ids() {
        let n = store.get(id).len();
        let mut numeric = vec![0.0; n];
        let mut st = store.clone();
        for j in 0..n {
            let orig = st.get(id).values()[j];
            st.get_mut(id).values_mut()[j] = orig + h;
            let plus = value(&st);
            st.get_mut(id).values_mut()[j] = orig - h;
            let minus = value(&st);
            st.get_mut(id).values_mut()[j] = orig;
            numeric[j] = (plus - minus) / (2.0 * h);
        }
        let a = analytic[id.index()].clone().unwrap_or_else(|| vec![0.0; n]);
        worst = worst.max(rel_err(&a, &numeric));
    }
    worst
}

/// Power-weighted spectral centroid of a whole clip, from one FFT.
pub fn clip_centroid(w: &Waveform) -> f64 {
    use rustfft::{num_complex::Complex, FftPlanner};
    let x = w.samples();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    let df = w.sample_rate() as f64 / x.len() as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for (k, c) in buf.iter().take(x.len() / 2 + 1).enumerate() {
        let p = c.norm_sqr();
        num += k as f64 * df * p;
        den += p;
    }
    num / den
}

/// Best accuracy of any single threshold on `values`, either orientation.
pub fn best_threshold_accuracy(values: &[f64], positive: &[bool]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut cuts = vec![v[0] - 1.0];
    cuts.extend(v.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    cuts.push(v[v.len() - 1] + 1.0);
    let n = values.len() as f64;
    cuts.iter()
        .map(|&t| {
            let hits = values.iter().zip(positive).filter(|(&x, &p)| (x > t) == p).count() as f64;
            (hits / n).max(1.0 - hits / n)
        })
        .fold(0.0, f64::max)
}

/// Separability of a generated corpus by the subject-mean clip centroid.
pub fn centroid_oracle(corpus_dir: &Path) -> f64 {
    use audformer::dsp::read_wav;
    let manifest = load_manifest(&corpus_dir.join("manifest.jsonl")).unwrap();
    let mut values = Vec::new();
    let mut positive = Vec::new();
    for e in &manifest.entries {
        let cs: Vec<f64> = e
            .modality_paths
            .values()
            .flatten()
            .map(|p| clip_centroid(&read_wav(p).unwrap()))
            .collect();
        values.push(cs.iter().sum::<f64>() / cs.len() as f64);
        positive.push(e.label.is_positive());
    }
    best_threshold_accuracy(&values, &positive)
}
