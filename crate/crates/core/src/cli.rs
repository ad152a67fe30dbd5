//! Command-line entry point.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::dataset::{assemble, load_manifest, write_cache, AssemblyConfig, Instance, MetricReport};
use crate::error::{Error, Result};
use crate::model::{McsMode, Trace};
use crate::numerics::container;
use crate::profiles::Profile;
use crate::synth::{generate, SynthSpec};
use crate::trainer::{evaluate, run_cv, train, Checkpoint, Dataset, ModelConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "audformer", version, about = "Multimodal audio classification with hierarchical attention fusion")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Single-threaded execution.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus from a JSON spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract features for every subject of a manifest into a cache.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        profile: String,
        #[arg(long, env = "AUDFORMER_CACHE")]
        cache: PathBuf,
    },
    /// Train on a whole cache and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "AUDFORMER_CACHE")]
        cache: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a cache.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, env = "AUDFORMER_CACHE")]
        cache: PathBuf,
        /// Report directory.
        #[arg(long)]
        report: PathBuf,
    },
    /// Subject-disjoint k-fold cross-validation.
    Cv {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "AUDFORMER_CACHE")]
        cache: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Report directory; fold checkpoints go under `checkpoints/`.
        #[arg(long)]
        report: PathBuf,
    },
    /// Class probabilities and modality contribution scores.
    Explain {
        #[command(flatten)]
        target: Target,
        #[arg(long, default_value = "row")]
        mcs_mode: McsMode,
        /// Mean score per class and modality, as CSV.
        #[arg(long)]
        group_csv: Option<PathBuf>,
    },
    /// Dump every attention map as AUDT tensors.
    ExportAttn {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump embedded tokens, unimodal and fused representations as AUDT tensors.
    ExportEmbeddings {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct Target {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, env = "AUDFORMER_CACHE")]
    pub cache: PathBuf,
    /// Subject id (default: every subject in the cache).
    #[arg(long)]
    pub instance: Option<String>,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        // A pool built earlier in this process keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_divergence() {
                EXIT_DIVERGENCE
            } else {
                EXIT_DATA
            }
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_report(dir: &Path, report: &MetricReport) -> Result<()> {
    write(&dir.join("metrics.json"), report.to_json()?)?;
    write(&dir.join("metrics.txt"), report.to_table())
}

fn loss_csv(rows: impl IntoIterator<Item = (Option<usize>, usize, f64)>) -> String {
    let mut rows = rows.into_iter().peekable();
    let with_fold = rows.peek().is_some_and(|r| r.0.is_some());
    let mut out = String::from(if with_fold { "fold,epoch,mean_loss\n" } else { "epoch,mean_loss\n" });
    for (fold, epoch, loss) in rows {
        if let Some(f) = fold {
            let _ = write!(out, "{},", f + 1);
        }
        let _ = writeln!(out, "{},{loss}", epoch + 1);
    }
    out
}

fn select<'a>(data: &'a Dataset, id: &Option<String>) -> Result<Vec<&'a Instance>> {
    match id {
        None => Ok(data.instances.iter().collect()),
        Some(id) => data
            .instances
            .iter()
            .find(|i| &i.subject_id == id)
            .map(|i| vec![i])
            .ok_or_else(|| Error::Data(format!("no subject `{id}` in the cache"))),
    }
}

fn load_target(t: &Target) -> Result<(Checkpoint, Dataset)> {
    let ckpt = Checkpoint::load(&t.ckpt)?;
    let data = Dataset::from_cache(&t.cache)?;
    if ckpt.config.profile != data.profile {
        return Err(Error::ProfileMismatch {
            checkpoint: ckpt.config.profile.clone(),
            dataset: data.profile.clone(),
        });
    }
    Ok((ckpt, data))
}

fn trace(ckpt: &Checkpoint, inst: &Instance, mode: McsMode) -> Result<Trace> {
    ckpt.model.trace(&ckpt.normalizer.apply(inst)?, mode)
}

#[derive(Serialize)]
struct Explanation<'a> {
    subject_id: &'a str,
    label: crate::dataset::Label,
    probs: [f64; 2],
    predicted: crate::dataset::Label,
    mcs_mode: McsMode,
    mcs: indexmap::IndexMap<String, f64>,
}

fn safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { spec, out } => {
            let spec = SynthSpec::load(&spec)?;
            let m = generate(&spec, &out)?;
            println!(
                "wrote {} subjects × {} modalities to {}",
                m.len(),
                m.modalities.len(),
                out.display()
            );
        }
        Command::Extract { manifest, profile, cache } => {
            let profile = Profile::named(&profile)?;
            let manifest = load_manifest(&manifest)?;
            let assembly = AssemblyConfig::default();
            let instances = assemble(&manifest, &profile, &assembly)?;
            let index = write_cache(&cache, &profile.name, &assembly, &instances)?;
            println!("cached {} subjects in {}", index.subjects.len(), cache.display());
        }
        Command::Train { config, cache, out } => {
            let config = ModelConfig::load(&config)?;
            let data = Dataset::from_cache(&cache)?;
            if config.profile != data.profile {
                return Err(Error::ProfileMismatch {
                    checkpoint: config.profile,
                    dataset: data.profile,
                });
            }
            let result = train(&config, &data.instances)?;
            result.checkpoint.save(&out)?;
            write(
                &out.join("loss.csv"),
                loss_csv(result.epoch_losses.iter().enumerate().map(|(e, &l)| (None, e, l))),
            )?;
            println!("trained {} epochs; checkpoint in {}", config.epochs, out.display());
        }
        Command::Eval { ckpt, cache, report } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let data = Dataset::from_cache(&cache)?;
            let r = evaluate(&ckpt, &data)?;
            write_report(&report, &r)?;
            print!("{}", r.to_table());
        }
        Command::Cv { config, cache, k, report } => {
            let config = ModelConfig::load(&config)?;
            let data = Dataset::from_cache(&cache)?;
            let out = run_cv(&config, &data, k)?;
            write_report(&report, &out.report)?;
            write(
                &report.join("loss.csv"),
                loss_csv(out.folds.iter().enumerate().flat_map(|(f, r)| {
                    r.train.epoch_losses.iter().enumerate().map(move |(e, &l)| (Some(f), e, l))
                })),
            )?;
            for (f, r) in out.folds.iter().enumerate() {
                r.train.checkpoint.save(&report.join("checkpoints").join(format!("fold_{:02}", f + 1)))?;
            }
            print!("{}", out.report.to_table());
        }
        Command::Explain { target, mcs_mode, group_csv } => {
            let (ckpt, data) = load_target(&target)?;
            let mut sums: indexmap::IndexMap<(String, String), (f64, usize)> = indexmap::IndexMap::new();
            for inst in select(&data, &target.instance)? {
                let t = trace(&ckpt, inst, mcs_mode)?;
                let mcs: indexmap::IndexMap<String, f64> =
                    t.mcs.modalities.iter().cloned().zip(t.mcs.scores.iter().copied()).collect();
                for (m, &s) in &mcs {
                    let e = sums.entry((inst.label.to_string(), m.clone())).or_insert((0.0, 0));
                    e.0 += s;
                    e.1 += 1;
                }
                let line = Explanation {
                    subject_id: &inst.subject_id,
                    label: inst.label,
                    probs: t.prediction.probs,
                    predicted: t.prediction.label,
                    mcs_mode,
                    mcs,
                };
                println!("{}", serde_json::to_string(&line)?);
            }
            if let Some(path) = group_csv {
                let mut csv = String::from("label,modality,mean_mcs,count\n");
                for ((label, m), (s, n)) in &sums {
                    let _ = writeln!(csv, "{label},{m},{},{n}", s / *n as f64);
                }
                write(&path, csv)?;
            }
        }
        Command::ExportAttn { target, out } => {
            let (ckpt, data) = load_target(&target)?;
            for inst in select(&data, &target.instance)? {
                let t = trace(&ckpt, inst, McsMode::default())?;
                let dir = out.join(safe(&inst.subject_id));
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let modalities = &ckpt.model.spec.modalities;
                for (kind, maps) in [("intra", &t.intra_maps), ("cross", &t.cross_maps)] {
                    for (m, blocks) in modalities.iter().zip(maps) {
                        for (b, heads) in blocks.iter().enumerate() {
                            for (h, a) in heads.iter().enumerate() {
                                container::write(&dir.join(format!("{kind}_{}_b{b}_h{h}.audt", safe(m))), a)?;
                            }
                        }
                    }
                }
                for (h, a) in t.prediction.attn.iter().enumerate() {
                    container::write(&dir.join(format!("head_h{h}.audt")), a)?;
                }
                write_spans(&dir, &t)?;
            }
            println!("attention maps written to {}", out.display());
        }
        Command::ExportEmbeddings { target, out } => {
            let (ckpt, data) = load_target(&target)?;
            for inst in select(&data, &target.instance)? {
                let t = trace(&ckpt, inst, McsMode::default())?;
                let dir = out.join(safe(&inst.subject_id));
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                for (e, u) in t.embedded.iter().zip(&t.urs) {
                    container::write(&dir.join(format!("embedded_{}.audt", safe(&e.modality))), &e.data)?;
                    container::write(&dir.join(format!("ur_{}.audt", safe(&u.modality))), &u.data)?;
                }
                container::write(&dir.join("fr_l.audt"), &t.fr_l.data)?;
                container::write(&dir.join("fr_h.audt"), &t.fr_h.data)?;
                write_spans(&dir, &t)?;
            }
            println!("representations written to {}", out.display());
        }
    }
    Ok(())
}

fn write_spans(dir: &Path, t: &Trace) -> Result<()> {
    #[derive(Serialize)]
    struct Spans<'a> {
        modalities: &'a [crate::model::ModalitySpan],
        domains: indexmap::IndexMap<&'a str, &'a [crate::model::DomainSpan]>,
    }
    let spans = Spans {
        modalities: &t.fr_l.modality_spans,
        domains: t.embedded.iter().map(|e| (e.modality.as_str(), e.domain_spans.as_slice())).collect(),
    };
    write(&dir.join("spans.json"), serde_json::to_string_pretty(&spans)?)
}
