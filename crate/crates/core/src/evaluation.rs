//! Train/test splits, cross-validation and accuracy reports.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use log::info;
use rayon::prelude::*;

use crate::classifier::{train_ovr, SvmModel};
use crate::codebook::HistogramDescriptor;
use crate::config::{PipelineConfig, SnippetMode};
use crate::error::{Error, Result};
use crate::feature_io::{DatasetManifest, FeatureSequence};
use crate::pipeline::FittedStages;

pub const DEFAULT_FOLDS: usize = 25;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SplitSpec {
    /// Videos of these groups are tested, everything else trains.
    FixedGroups(Vec<String>),
    /// Groups are dealt round-robin into this many folds and each fold is
    /// held out once.
    Loocv { folds: usize },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Loocv { folds: DEFAULT_FOLDS }
    }
}

impl std::str::FromStr for SplitSpec {
    type Err = Error;

    /// `loocv`, `loocv:N` or `fixed:g1,g2,...`
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad split {s:?}; expected loocv[:N] or fixed:g1,g2,..."));
        match s.split_once(':') {
            None if s == "loocv" => Ok(SplitSpec::default()),
            Some(("loocv", n)) => Ok(SplitSpec::Loocv {
                folds: n.trim().parse().map_err(|_| bad())?,
            }),
            Some(("fixed", groups)) => {
                let groups: Vec<String> = groups
                    .split(',')
                    .map(str::trim)
                    .filter(|g| !g.is_empty())
                    .map(str::to_string)
                    .collect();
                if groups.is_empty() {
                    return Err(bad());
                }
                Ok(SplitSpec::FixedGroups(groups))
            }
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitSpec::FixedGroups(g) => write!(f, "fixed:{}", g.join(",")),
            SplitSpec::Loocv { folds } => write!(f, "loocv:{folds}"),
        }
    }
}

/// One held-out partition; `train` and `test` index manifest entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub index: usize,
    pub test_groups: Vec<String>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn fold_for_groups(manifest: &DatasetManifest, index: usize, test_groups: Vec<String>) -> Result<Fold> {
    let (test, train): (Vec<usize>, Vec<usize>) =
        (0..manifest.len()).partition(|&i| test_groups.contains(&manifest.entries()[i].group_id));
    if train.is_empty() {
        return Err(Error::InvalidInput(format!(
            "holding out groups {test_groups:?} leaves no training videos"
        )));
    }
    if test.is_empty() {
        return Err(Error::InvalidInput(format!("groups {test_groups:?} contain no videos")));
    }
    Ok(Fold {
        index,
        test_groups,
        train,
        test,
    })
}

/// Tests on the listed groups and trains on the rest.
pub fn split_fixed(manifest: &DatasetManifest, test_groups: &[String]) -> Result<Fold> {
    let known = manifest.groups();
    if let Some(g) = test_groups.iter().find(|g| !known.contains(g)) {
        return Err(Error::UnknownGroup(g.clone()));
    }
    fold_for_groups(manifest, 0, test_groups.to_vec())
}

/// Group `i` (in manifest group order) goes to fold `i % folds`.
pub fn loocv_folds(manifest: &DatasetManifest, folds: usize) -> Result<Vec<Fold>> {
    let groups = manifest.groups();
    if folds < 2 || folds > groups.len() {
        return Err(Error::Config(format!(
            "fold count {folds} must lie between 2 and the number of groups ({})",
            groups.len()
        )));
    }
    (0..folds)
        .map(|f| {
            let held: Vec<String> = groups.iter().skip(f).step_by(folds).cloned().collect();
            fold_for_groups(manifest, f, held)
        })
        .collect()
}

pub fn make_folds(manifest: &DatasetManifest, split: &SplitSpec) -> Result<Vec<Fold>> {
    match split {
        SplitSpec::FixedGroups(g) => Ok(vec![split_fixed(manifest, g)?]),
        SplitSpec::Loocv { folds } => loocv_folds(manifest, *folds),
    }
}

/// Rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        ConfusionMatrix {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn count(&self, truth: usize, predicted: usize) -> usize {
        self.counts[truth][predicted]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// `None` for classes with no test videos.
    pub fn class_accuracy(&self) -> Vec<Option<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[i] as f64 / n as f64)
            })
            .collect()
    }

    /// Mean of the per-class accuracies over classes that were tested.
    pub fn mean_class_accuracy(&self) -> f64 {
        let accs: Vec<f64> = self.class_accuracy().into_iter().flatten().collect();
        if accs.is_empty() {
            0.0
        } else {
            accs.iter().sum::<f64>() / accs.len() as f64
        }
    }

    pub fn overall_accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum::<usize>() as f64 / total as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub index: usize,
    pub test_groups: Vec<String>,
    pub train_videos: usize,
    pub test_videos: usize,
    pub correct: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictionRecord {
    pub video_id: String,
    pub truth: String,
    pub predicted: String,
}

#[derive(Clone, Debug)]
pub struct Report {
    pub config: PipelineConfig,
    pub split: SplitSpec,
    pub confusion: ConfusionMatrix,
    pub folds: Vec<FoldResult>,
    /// In manifest order.
    pub predictions: Vec<PredictionRecord>,
}

impl Report {
    pub fn mean_class_accuracy(&self) -> f64 {
        self.confusion.mean_class_accuracy()
    }

    /// Human-readable summary. Wall-clock times are left out unless asked
    /// for so that repeated runs produce identical text.
    pub fn to_text(&self, timings: bool) -> String {
        let mut s = String::new();
        let c = &self.confusion;
        let _ = writeln!(s, "split: {}", self.split);
        let _ = writeln!(s, "snippet mode: {}", self.config.snippet_mode);
        let _ = writeln!(s, "videos tested: {}", c.total());
        let _ = writeln!(s, "mean class accuracy: {:.4}", c.mean_class_accuracy());
        let _ = writeln!(s, "overall accuracy: {:.4}", c.overall_accuracy());
        let _ = writeln!(s, "\nper class:");
        for (label, acc) in c.labels().iter().zip(c.class_accuracy()) {
            match acc {
                Some(a) => {
                    let _ = writeln!(s, "  {label:<16} {a:.4}");
                }
                None => {
                    let _ = writeln!(s, "  {label:<16} (no test videos)");
                }
            }
        }
        let width = c.labels().iter().map(String::len).max().unwrap_or(1).max(5);
        let _ = writeln!(s, "\nconfusion (rows true, columns predicted):");
        let _ = write!(s, "  {:width$}", "");
        for i in 0..c.labels().len() {
            let _ = write!(s, " {i:>5}");
        }
        s.push('\n');
        for (i, label) in c.labels().iter().enumerate() {
            let _ = write!(s, "  {label:width$}");
            for j in 0..c.labels().len() {
                let _ = write!(s, " {:>5}", c.count(i, j));
            }
            let _ = writeln!(s, "   [{i}]");
        }
        let _ = writeln!(s, "\nfolds:");
        for f in &self.folds {
            let _ = write!(
                s,
                "  {:>3}  groups {:<12} train {:>5}  test {:>4}  correct {:>4}",
                f.index,
                f.test_groups.join(","),
                f.train_videos,
                f.test_videos,
                f.correct
            );
            if timings {
                let _ = write!(s, "  {:.2}s", f.seconds);
            }
            s.push('\n');
        }
        s
    }

    /// One `key=value` record per line.
    pub fn to_kv(&self, timings: bool) -> String {
        let mut s = String::new();
        for (k, v) in self.config.entries() {
            let _ = writeln!(s, "config={k} value={v}");
        }
        let _ = writeln!(s, "config=split value={}", self.split);
        let c = &self.confusion;
        let _ = writeln!(s, "metric=mean_class_accuracy value={:.6}", c.mean_class_accuracy());
        let _ = writeln!(s, "metric=overall_accuracy value={:.6}", c.overall_accuracy());
        for (label, acc) in c.labels().iter().zip(c.class_accuracy()) {
            if let Some(a) = acc {
                let _ = writeln!(s, "metric=class_accuracy class={label} value={a:.6}");
            }
        }
        for (i, t) in c.labels().iter().enumerate() {
            for (j, p) in c.labels().iter().enumerate() {
                let _ = writeln!(s, "metric=confusion class={t} predicted={p} value={}", c.count(i, j));
            }
        }
        for f in &self.folds {
            let acc = f.correct as f64 / f.test_videos as f64;
            let _ = writeln!(s, "metric=fold_accuracy fold={} value={acc:.6}", f.index);
            if timings {
                let _ = writeln!(s, "metric=fold_seconds fold={} value={:.3}", f.index, f.seconds);
            }
        }
        for p in &self.predictions {
            let _ = writeln!(
                s,
                "prediction={} class={} predicted={}",
                p.video_id, p.truth, p.predicted
            );
        }
        s
    }
}

fn lookup<'a>(manifest: &DatasetManifest, features: &'a [FeatureSequence]) -> Result<Vec<&'a FeatureSequence>> {
    let by_id: HashMap<&str, &FeatureSequence> = features.iter().map(|f| (f.video_id(), f)).collect();
    manifest
        .entries()
        .iter()
        .map(|e| {
            by_id
                .get(e.video_id.as_str())
                .copied()
                .ok_or_else(|| Error::MissingFeatures(e.video_id.clone()))
        })
        .collect()
}

struct FoldOutput {
    result: FoldResult,
    predictions: Vec<(usize, usize)>,
}

fn classify_fold(
    fold: &Fold,
    classes: &[usize],
    labels: &[String],
    train_hists: &[&HistogramDescriptor],
    test_hists: &[HistogramDescriptor],
    cfg: &PipelineConfig,
    started: Instant,
) -> Result<FoldOutput> {
    let train_classes: Vec<usize> = fold.train.iter().map(|&i| classes[i]).collect();
    let train_values: Vec<&[f64]> = train_hists.iter().map(|h| h.values()).collect();
    let svm: SvmModel = train_ovr(&train_values, &train_classes, labels, cfg.svm_c, &cfg.kernel_params())?;
    let mut predictions = Vec::with_capacity(fold.test.len());
    let mut correct = 0;
    for (&i, h) in fold.test.iter().zip(test_hists) {
        let p = svm.predict(h.values())?.class;
        correct += usize::from(p == classes[i]);
        predictions.push((i, p));
    }
    Ok(FoldOutput {
        result: FoldResult {
            index: fold.index,
            test_groups: fold.test_groups.clone(),
            train_videos: fold.train.len(),
            test_videos: fold.test.len(),
            correct,
            seconds: started.elapsed().as_secs_f64(),
        },
        predictions,
    })
}

fn run_fold(
    fold: &Fold,
    videos: &[&FeatureSequence],
    classes: &[usize],
    labels: &[String],
    cfg: &PipelineConfig,
) -> Result<FoldOutput> {
    let started = Instant::now();
    let train: Vec<&FeatureSequence> = fold.train.iter().map(|&i| videos[i]).collect();
    let (stages, train_hists) = FittedStages::fit(&train, cfg)?;
    stages.check_unseen(fold.test.iter().map(|&i| videos[i].video_id()))?;
    let test_hists: Vec<HistogramDescriptor> = fold
        .test
        .par_iter()
        .map(|&i| stages.histogram(videos[i]))
        .collect::<Result<_>>()?;
    let train_refs: Vec<&HistogramDescriptor> = train_hists.iter().collect();
    let out = classify_fold(fold, classes, labels, &train_refs, &test_hists, cfg, started)?;
    info!(
        "fold {}: {}/{} correct",
        fold.index, out.result.correct, out.result.test_videos
    );
    Ok(out)
}

/// Evaluates the configured pipeline under `split`.
///
/// Every fold refits hashing, PCA, codebook and SVM on its own training
/// videos. With `allow_unsupervised_leakage` the unsupervised stages are
/// fitted once on every video and only the SVM is refitted per fold.
pub fn run_protocol(
    manifest: &DatasetManifest,
    features: &[FeatureSequence],
    cfg: &PipelineConfig,
    split: &SplitSpec,
) -> Result<Report> {
    cfg.validate()?;
    let videos = lookup(manifest, features)?;
    let labels = manifest.labels().to_vec();
    let classes: Vec<usize> = manifest
        .entries()
        .iter()
        .map(|e| manifest.label_index(&e.label).expect("label listed by manifest"))
        .collect();
    let folds = make_folds(manifest, split)?;

    let outputs: Vec<FoldOutput> = if cfg.allow_unsupervised_leakage {
        let started = Instant::now();
        let (_, hists) = FittedStages::fit(&videos, cfg)?;
        folds
            .par_iter()
            .map(|fold| {
                let train: Vec<&HistogramDescriptor> = fold.train.iter().map(|&i| &hists[i]).collect();
                let test: Vec<HistogramDescriptor> = fold.test.iter().map(|&i| hists[i].clone()).collect();
                classify_fold(fold, &classes, &labels, &train, &test, cfg, started)
            })
            .collect::<Result<_>>()?
    } else {
        folds
            .par_iter()
            .map(|fold| run_fold(fold, &videos, &classes, &labels, cfg))
            .collect::<Result<_>>()?
    };

    let mut confusion = ConfusionMatrix::new(labels.clone());
    let mut predicted = vec![None; manifest.len()];
    let mut results = Vec::with_capacity(outputs.len());
    for out in outputs {
        for (i, p) in out.predictions {
            confusion.add(classes[i], p);
            predicted[i] = Some(p);
        }
        results.push(out.result);
    }
    let predictions = manifest
        .entries()
        .iter()
        .zip(&predicted)
        .filter_map(|(e, p)| {
            p.map(|p| PredictionRecord {
                video_id: e.video_id.clone(),
                truth: e.label.clone(),
                predicted: labels[p].clone(),
            })
        })
        .collect();
    Ok(Report {
        config: cfg.clone(),
        split: split.clone(),
        confusion,
        folds: results,
        predictions,
    })
}

/// Parameter varied by [`sweep`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    /// Code length in binary snippet mode.
    BinarySize,
    /// Window length in window snippet mode, stride half the length.
    WindowLength,
    /// Number of pyramid levels kept from the configured schedule.
    PyramidLevels,
}

impl SweepAxis {
    pub fn default_values(self) -> Vec<usize> {
        match self {
            SweepAxis::BinarySize => vec![8, 10, 16, 20, 32],
            SweepAxis::WindowLength => vec![20, 30, 40, 50],
            SweepAxis::PyramidLevels => vec![1, 2, 3, 4],
        }
    }

    /// Config for one sweep point.
    pub fn apply(self, base: &PipelineConfig, value: usize) -> Result<PipelineConfig> {
        let mut cfg = base.clone();
        match self {
            SweepAxis::BinarySize => {
                cfg.snippet_mode = SnippetMode::Binary;
                cfg.code_length = value;
            }
            SweepAxis::WindowLength => {
                cfg.snippet_mode = SnippetMode::Windows;
                cfg.hamming_threshold = None;
                cfg.window_length = value;
                cfg.stride = None;
            }
            SweepAxis::PyramidLevels => cfg.schedule = base.schedule.truncated(value)?,
        }
        Ok(cfg)
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary-size" => Ok(SweepAxis::BinarySize),
            "window-length" => Ok(SweepAxis::WindowLength),
            "pyramid-levels" => Ok(SweepAxis::PyramidLevels),
            _ => Err(Error::Config(format!(
                "unknown sweep axis {s:?}; expected binary-size, window-length or pyramid-levels"
            ))),
        }
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::BinarySize => "binary-size",
            SweepAxis::WindowLength => "window-length",
            SweepAxis::PyramidLevels => "pyramid-levels",
        })
    }
}

#[derive(Clone, Debug)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<(usize, Report)>,
}

impl SweepTable {
    pub fn to_text(&self) -> String {
        let mut s = format!("{:>14}  mean class accuracy\n", self.axis.to_string());
        for (v, r) in &self.rows {
            let _ = writeln!(s, "{v:>14}  {:.4}", r.mean_class_accuracy());
        }
        s
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (v, r) in &self.rows {
            let _ = writeln!(
                s,
                "metric=mean_class_accuracy {}={v} value={:.6}",
                self.axis,
                r.mean_class_accuracy()
            );
        }
        s
    }
}

/// Runs the protocol once per value of `axis`, sequentially.
pub fn sweep(
    manifest: &DatasetManifest,
    features: &[FeatureSequence],
    base: &PipelineConfig,
    split: &SplitSpec,
    axis: SweepAxis,
    values: Option<&[usize]>,
) -> Result<SweepTable> {
    let values = values.map(<[usize]>::to_vec).unwrap_or_else(|| axis.default_values());
    let rows = values
        .into_iter()
        .map(|v| {
            info!("sweep {axis}={v}");
            let cfg = axis.apply(base, v)?;
            Ok((v, run_protocol(manifest, features, &cfg, split)?))
        })
        .collect::<Result<_>>()?;
    Ok(SweepTable { axis, rows })
}
