use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::warn;
use rayon::prelude::*;

use cnnflow::artifacts::{
    load_descriptors, load_histograms, load_reduced, read_keyframe_list, save_descriptors, save_histograms,
    save_reduced, write_keyframe_list, DescriptorRecord, HistogramRecord, ReducedRecord,
};
use cnnflow::classifier::{train_ovr, SvmModel};
use cnnflow::codebook::{encode_video, train_codebook, Codebook};
use cnnflow::config::{PipelineConfig, SnippetMode};
use cnnflow::evaluation::{run_protocol, sweep, SplitSpec, SweepAxis};
use cnnflow::feature_io::{feature_path, load_features, load_manifest, write_feature_file, DatasetManifest, FeatureSequence};
use cnnflow::hashing::ItqModel;
use cnnflow::pipeline::{kmeans_params, snippet_descriptor, train_hashing};
use cnnflow::reduction::{fit_level_models, load_level_models, reduce_descriptor, save_level_models};
use cnnflow::snippets::{detect_keyframes, read_snippet_list, snippets_from_keyframes, snippets_from_windows, write_snippet_list, Snippet};
use cnnflow::synthetic::{generate, SyntheticSpec};
use cnnflow::{Error, Result};

#[derive(Parser)]
#[command(name = "cnnflow", version, about = "Temporal flow pyramids over per-frame CNN features")]
struct Cli {
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (feature files plus manifest).
    Synth(SynthArgs),
    /// Train the frame hashing model.
    HashTrain {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect key-frames with a trained hashing model.
    Keyframes {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        itq: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cut videos into snippets (from key-frames, or fixed windows).
    Snip {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Key-frame list; required in binary snippet mode.
        #[arg(long)]
        keyframes: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build one descriptor per snippet.
    Pyramid {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        snippets: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project descriptors with per-level PCA.
    Reduce {
        #[arg(long)]
        descriptors: PathBuf,
        /// Per-level PCA models; written when --fit is given, read otherwise.
        #[arg(long)]
        pca: PathBuf,
        #[arg(long)]
        fit: bool,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the snippet codebook(s) with k-means.
    CodebookTrain {
        #[arg(long)]
        reduced: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn each video's reduced descriptors into a histogram.
    Encode {
        #[arg(long)]
        reduced: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one-vs-rest χ² SVMs on video histograms.
    SvmTrain {
        #[arg(long)]
        histograms: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify video histograms.
    Predict {
        #[arg(long)]
        histograms: PathBuf,
        #[arg(long)]
        svm: PathBuf,
        /// Score predictions against these labels.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Write `video_id TAB label` lines here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline under a split protocol and write a report.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// `loocv`, `loocv:N` or `fixed:g1,g2,...`
        #[arg(long, default_value = "loocv")]
        split: String,
        /// Directory receiving report.txt and report.kv.
        #[arg(long)]
        out: PathBuf,
        /// Also write per-fold wall-clock times to timings.kv.
        #[arg(long)]
        timings: bool,
    },
    /// Evaluate once per value of one parameter.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "loocv")]
        split: String,
        /// binary-size, window-length or pyramid-levels
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
        /// Also write the table (plus key=value rows) here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 40)]
    videos_per_class: usize,
    #[arg(long, default_value_t = 5)]
    groups: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
}

#[derive(Args)]
struct DataArgs {
    /// TSV of video_id, label, group_id.
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of `<video_id>.pyrf` feature files.
    #[arg(long)]
    features: PathBuf,
    /// Only use videos from these groups.
    #[arg(long, value_delimiter = ',')]
    groups: Vec<String>,
    /// Skip videos from these groups.
    #[arg(long, value_delimiter = ',')]
    exclude_groups: Vec<String>,
}

#[derive(Args)]
struct ConfigArgs {
    /// key=value settings file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    code_length: Option<usize>,
    #[arg(long)]
    itq_iterations: Option<usize>,
    #[arg(long)]
    hamming_threshold: Option<u32>,
    /// binary, windows or baseline
    #[arg(long)]
    snippet_mode: Option<String>,
    #[arg(long)]
    window_length: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    min_snippet_length: Option<usize>,
    /// Segments per pyramid level, e.g. 1,2,4,10
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    pca_dim: Option<usize>,
    #[arg(long)]
    codebook_k: Option<usize>,
    #[arg(long)]
    kmeans_restarts: Option<usize>,
    /// per-level or joint
    #[arg(long)]
    codebook_mode: Option<String>,
    #[arg(long)]
    svm_c: Option<f64>,
    /// mean-distance or fixed
    #[arg(long)]
    gamma_mode: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fit hashing, PCA and codebooks once on all videos instead of per fold.
    #[arg(long)]
    allow_unsupervised_leakage: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        let overrides = [
            ("code-length", self.code_length.map(|v| v.to_string())),
            ("itq-iterations", self.itq_iterations.map(|v| v.to_string())),
            ("hamming-threshold", self.hamming_threshold.map(|v| v.to_string())),
            ("snippet-mode", self.snippet_mode.clone()),
            ("window-length", self.window_length.map(|v| v.to_string())),
            ("stride", self.stride.map(|v| v.to_string())),
            ("min-snippet-length", self.min_snippet_length.map(|v| v.to_string())),
            ("schedule", self.schedule.clone()),
            ("pca-dim", self.pca_dim.map(|v| v.to_string())),
            ("codebook-k", self.codebook_k.map(|v| v.to_string())),
            ("kmeans-restarts", self.kmeans_restarts.map(|v| v.to_string())),
            ("codebook-mode", self.codebook_mode.clone()),
            ("svm-c", self.svm_c.map(|v| v.to_string())),
            ("gamma-mode", self.gamma_mode.clone()),
            ("gamma", self.gamma.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        if self.allow_unsupervised_leakage {
            cfg.allow_unsupervised_leakage = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl DataArgs {
    fn manifest(&self) -> Result<DatasetManifest> {
        let manifest = load_manifest(&self.manifest)?;
        let known = manifest.groups();
        for g in self.groups.iter().chain(&self.exclude_groups) {
            if !known.contains(g) {
                return Err(Error::UnknownGroup(g.clone()));
            }
        }
        let entries = manifest
            .entries()
            .iter()
            .filter(|e| self.groups.is_empty() || self.groups.contains(&e.group_id))
            .filter(|e| !self.exclude_groups.contains(&e.group_id))
            .cloned()
            .collect::<Vec<_>>();
        if entries.is_empty() {
            return Err(Error::Config("group selection leaves no videos".into()));
        }
        DatasetManifest::from_entries(entries)
    }

    fn load(&self) -> Result<(DatasetManifest, Vec<FeatureSequence>)> {
        let manifest = self.manifest()?;
        let features = load_features(&self.features, &manifest.video_ids())?;
        Ok((manifest, features))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn synth(args: &SynthArgs) -> Result<String> {
    let spec = SyntheticSpec {
        classes: args.classes,
        videos_per_class: args.videos_per_class,
        groups: args.groups,
        dim: args.dim,
        seed: args.seed,
        ..Default::default()
    };
    let ds = generate(&spec)?;
    let features_dir = args.out.join("features");
    create_dir(&features_dir)?;
    ds.features
        .par_iter()
        .try_for_each(|f| write_feature_file(f, feature_path(&features_dir, f.video_id())))?;
    ds.manifest.save(args.out.join("manifest.tsv"))?;
    Ok(format!(
        "wrote {} videos ({} classes, {} groups) to {}",
        ds.features.len(),
        ds.manifest.labels().len(),
        ds.manifest.groups().len(),
        args.out.display()
    ))
}

fn hash_train(data: &DataArgs, config: &ConfigArgs, out: &Path) -> Result<String> {
    let cfg = config.resolve()?;
    let (_, features) = data.load()?;
    let frames: Vec<Vec<f64>> = features.iter().flat_map(|f| f.rows_f64()).collect();
    let model = train_hashing(&frames, &cfg)?;
    model.save(out)?;
    let loss = model.loss_history();
    Ok(format!(
        "trained {}-bit hashing on {} frames; loss {:.4} -> {:.4}",
        model.code_length(),
        frames.len(),
        loss.first().copied().unwrap_or(f64::NAN),
        loss.last().copied().unwrap_or(f64::NAN)
    ))
}

fn keyframes(data: &DataArgs, config: &ConfigArgs, itq: &Path, out: &Path) -> Result<String> {
    let cfg = config.resolve()?;
    let model = ItqModel::load(itq)?;
    let (_, features) = data.load()?;
    let lists: Vec<(String, Vec<usize>)> = features
        .par_iter()
        .map(|f| {
            let codes = model.encode_sequence(f)?;
            Ok((f.video_id().to_string(), detect_keyframes(&codes, &cfg.keyframe_params())?))
        })
        .collect::<Result<_>>()?;
    write_keyframe_list(out, &lists)?;
    let total: usize = lists.iter().map(|(_, k)| k.len()).sum();
    Ok(format!("found {total} key-frames in {} videos", lists.len()))
}

fn snip(data: &DataArgs, config: &ConfigArgs, keyframes: Option<&Path>, out: &Path) -> Result<String> {
    let cfg = config.resolve()?;
    let (_, features) = data.load()?;
    let mut snippets: Vec<Snippet> = Vec::new();
    match cfg.snippet_mode {
        SnippetMode::Binary => {
            let path = keyframes
                .ok_or_else(|| Error::Config("binary snippet mode needs --keyframes (or use --snippet-mode windows)".into()))?;
            let lists: HashMap<String, Vec<usize>> = read_keyframe_list(path)?.into_iter().collect();
            for f in &features {
                let kf = lists
                    .get(f.video_id())
                    .ok_or_else(|| Error::InvalidInput(format!("no key-frames for video {:?}", f.video_id())))?;
                snippets.extend(snippets_from_keyframes(f.video_id(), kf, f.frame_count(), cfg.min_snippet_length)?);
            }
        }
        SnippetMode::Windows | SnippetMode::Baseline => {
            if keyframes.is_some() {
                warn!("--keyframes is ignored in {} mode", cfg.snippet_mode);
            }
            let params = cfg.window_params()?;
            for f in &features {
                snippets.extend(snippets_from_windows(f.video_id(), f.frame_count(), &params)?);
            }
        }
    }
    write_snippet_list(out, &snippets)?;
    Ok(format!("cut {} videos into {} snippets", features.len(), snippets.len()))
}

fn pyramid(features: &Path, snippets: &Path, config: &ConfigArgs, out: &Path) -> Result<String> {
    let cfg = config.resolve()?;
    let snippets = read_snippet_list(snippets)?;
    let mut ids: Vec<&str> = Vec::new();
    for s in &snippets {
        if !ids.contains(&s.video_id.as_str()) {
            ids.push(&s.video_id);
        }
    }
    let seqs = load_features(features, &ids)?;
    let by_id: HashMap<&str, &FeatureSequence> = seqs.iter().map(|s| (s.video_id(), s)).collect();
    let records: Vec<DescriptorRecord> = snippets
        .par_iter()
        .map(|s| {
            Ok(DescriptorRecord {
                snippet: s.clone(),
                descriptor: snippet_descriptor(by_id[s.video_id.as_str()], s, &cfg)?,
            })
        })
        .collect::<Result<_>>()?;
    save_descriptors(out, &records)?;
    let first = &records[0].descriptor;
    Ok(format!(
        "built {} descriptors of {} x {} values",
        records.len(),
        first.segments_per_level().iter().sum::<usize>(),
        first.dim()
    ))
}

fn reduce(descriptors: &Path, pca: &Path, fit: bool, config: &ConfigArgs, out: &Path) -> Result<String> {
    let cfg = config.resolve()?;
    let records = load_descriptors(descriptors)?;
    let models = if fit {
        let descs: Vec<_> = records.iter().map(|r| r.descriptor.clone()).collect();
        let models = fit_level_models(&descs, cfg.pca_dim)?;
        save_level_models(pca, &models)?;
        models
    } else {
        load_level_models(pca)?
    };
    let reduced: Vec<ReducedRecord> = records
        .par_iter()
        .map(|r| {
            Ok(ReducedRecord {
                snippet: r.snippet.clone(),
                descriptor: reduce_descriptor(&r.descriptor, &models)?,
            })
        })
        .collect::<Result<_>>()?;
    save_reduced(out, &reduced)?;
    Ok(format!(
        "reduced {} descriptors to length {}",
        reduced.len(),
        reduced[0].descriptor.len()
    ))
}

fn codebook_train(reduced: &Path, config: &ConfigArgs, out: &Path) -> Result<String> {
    let cfg = config.resolve()?;
    let records = load_reduced(reduced)?;
    let descs: Vec<_> = records.into_iter().map(|r| r.descriptor).collect();
    let codebook = train_codebook(&descs, &kmeans_params(&cfg), cfg.codebook_mode)?;
    codebook.save(out)?;
    Ok(format!(
        "trained {} codebook(s) on {} descriptors; histogram length {}",
        codebook.levels(),
        descs.len(),
        codebook.histogram_len()
    ))
}

fn encode(reduced: &Path, codebook: &Path, out: &Path) -> Result<String> {
    let codebook = Codebook::load(codebook)?;
    let records = load_reduced(reduced)?;
    let mut order: Vec<String> = Vec::new();
    let mut by_video: HashMap<String, Vec<_>> = HashMap::new();
    for r in records {
        if !by_video.contains_key(&r.snippet.video_id) {
            order.push(r.snippet.video_id.clone());
        }
        by_video.entry(r.snippet.video_id).or_default().push(r.descriptor);
    }
    let hists: Vec<HistogramRecord> = order
        .into_iter()
        .map(|id| {
            let histogram = encode_video(&by_video[&id], &codebook)?;
            Ok(HistogramRecord { video_id: id, histogram })
        })
        .collect::<Result<_>>()?;
    save_histograms(out, &hists)?;
    Ok(format!("encoded {} videos", hists.len()))
}

fn labelled(manifest: &DatasetManifest, hists: &[HistogramRecord]) -> Result<Vec<String>> {
    let labels: HashMap<&str, &str> = manifest
        .entries()
        .iter()
        .map(|e| (e.video_id.as_str(), e.label.as_str()))
        .collect();
    hists
        .iter()
        .map(|h| {
            labels
                .get(h.video_id.as_str())
                .map(|l| l.to_string())
                .ok_or_else(|| Error::InvalidInput(format!("video {:?} is not in the manifest", h.video_id)))
        })
        .collect()
}

fn svm_train(histograms: &Path, manifest: &Path, config: &ConfigArgs, out: &Path) -> Result<String> {
    let cfg = config.resolve()?;
    let hists = load_histograms(histograms)?;
    let truth = labelled(&load_manifest(manifest)?, &hists)?;
    let mut labels: Vec<String> = truth.clone();
    labels.sort();
    labels.dedup();
    let classes: Vec<usize> = truth.iter().map(|t| labels.binary_search(t).unwrap()).collect();
    let values: Vec<&[f64]> = hists.iter().map(|h| h.histogram.values()).collect();
    let model = train_ovr(&values, &classes, &labels, cfg.svm_c, &cfg.kernel_params())?;
    model.save(out)?;
    let support: usize = model.class_models().iter().map(|m| m.support.len()).sum();
    Ok(format!(
        "trained {} one-vs-rest SVMs on {} videos (γ = {:.6}, {} support vectors in total)",
        labels.len(),
        hists.len(),
        model.kernel().gamma,
        support
    ))
}

fn predict(histograms: &Path, svm: &Path, manifest: Option<&Path>, out: Option<&Path>) -> Result<String> {
    let model = SvmModel::load(svm)?;
    let hists = load_histograms(histograms)?;
    let predicted: Vec<String> = hists
        .iter()
        .map(|h| Ok(model.predict(h.histogram.values())?.label))
        .collect::<Result<_>>()?;
    let lines: String = hists
        .iter()
        .zip(&predicted)
        .map(|(h, p)| format!("{}\t{p}\n", h.video_id))
        .collect();
    match out {
        Some(path) => write_text(path, &lines)?,
        None => print!("{lines}"),
    }
    let mut summary = format!("classified {} videos", hists.len());
    if let Some(path) = manifest {
        let truth = labelled(&load_manifest(path)?, &hists)?;
        let correct = truth.iter().zip(&predicted).filter(|(t, p)| t == p).count();
        summary.push_str(&format!(
            "; {correct}/{} correct ({:.4})",
            hists.len(),
            correct as f64 / hists.len() as f64
        ));
    }
    Ok(summary)
}

fn evaluate(data: &DataArgs, config: &ConfigArgs, split: &str, out: &Path, timings: bool) -> Result<String> {
    let cfg = config.resolve()?;
    let split: SplitSpec = split.parse()?;
    let (manifest, features) = data.load()?;
    let report = run_protocol(&manifest, &features, &cfg, &split)?;
    create_dir(out)?;
    write_text(&out.join("report.txt"), &report.to_text(false))?;
    write_text(&out.join("report.kv"), &report.to_kv(false))?;
    if timings {
        let lines: String = report
            .folds
            .iter()
            .map(|f| format!("metric=fold_seconds fold={} value={:.3}\n", f.index, f.seconds))
            .collect();
        write_text(&out.join("timings.kv"), &lines)?;
    }
    Ok(format!(
        "mean class accuracy {:.4} over {} folds ({} videos); report in {}",
        report.mean_class_accuracy(),
        report.folds.len(),
        report.confusion.total(),
        out.display()
    ))
}

fn run_sweep(
    data: &DataArgs,
    config: &ConfigArgs,
    split: &str,
    axis: &str,
    values: &[usize],
    out: Option<&Path>,
) -> Result<String> {
    let cfg = config.resolve()?;
    let split: SplitSpec = split.parse()?;
    let axis: SweepAxis = axis.parse()?;
    let (manifest, features) = data.load()?;
    let values = (!values.is_empty()).then_some(values);
    let table = sweep(&manifest, &features, &cfg, &split, axis, values)?;
    let text = table.to_text();
    if let Some(path) = out {
        write_text(path, &format!("{text}\n{}", table.to_kv()))?;
    }
    print!("{text}");
    Ok(format!("swept {axis} over {} values", table.rows.len()))
}

fn run(cli: Cli) -> Result<String> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match &cli.command {
        Command::Synth(args) => synth(args),
        Command::HashTrain { data, config, out } => hash_train(data, config, out),
        Command::Keyframes { data, config, itq, out } => keyframes(data, config, itq, out),
        Command::Snip {
            data,
            config,
            keyframes,
            out,
        } => snip(data, config, keyframes.as_deref(), out),
        Command::Pyramid {
            features,
            snippets,
            config,
            out,
        } => pyramid(features, snippets, config, out),
        Command::Reduce {
            descriptors,
            pca,
            fit,
            config,
            out,
        } => reduce(descriptors, pca, *fit, config, out),
        Command::CodebookTrain { reduced, config, out } => codebook_train(reduced, config, out),
        Command::Encode { reduced, codebook, out } => encode(reduced, codebook, out),
        Command::SvmTrain {
            histograms,
            manifest,
            config,
            out,
        } => svm_train(histograms, manifest, config, out),
        Command::Predict {
            histograms,
            svm,
            manifest,
            out,
        } => predict(histograms, svm, manifest.as_deref(), out.as_deref()),
        Command::Evaluate {
            data,
            config,
            split,
            out,
            timings,
        } => evaluate(data, config, split, out, *timings),
        Command::Sweep {
            data,
            config,
            split,
            axis,
            values,
            out,
        } => run_sweep(data, config, split, axis, values, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}
