//! Fitting the unsupervised stages on a set of training videos and turning
//! any video into its histogram descriptor.

use std::collections::BTreeSet;

use log::info;
use rayon::prelude::*;

use crate::codebook::{encode_video, train_codebook, Codebook, HistogramDescriptor, KMeansParams};
use crate::config::{PipelineConfig, SnippetMode};
use crate::error::{Error, Result};
use crate::feature_io::FeatureSequence;
use crate::hashing::{train_itq, ItqModel};
use crate::pyramid::{appearance_descriptor, build_pyramid, SnippetDescriptor};
use crate::reduction::{fit_level_models, reduce_descriptor, PcaModel, ReducedDescriptor};
use crate::seed::derive_seed;
use crate::snippets::{detect_keyframes, snippets_from_keyframes, snippets_from_windows, Snippet};

const ITQ_SEED_TAG: u64 = 1;
const KMEANS_SEED_TAG: u64 = 2;

/// Trains the frame hashing model as the pipeline does.
pub fn train_hashing<R: AsRef<[f64]>>(frames: &[R], cfg: &PipelineConfig) -> Result<ItqModel> {
    info!("training {}-bit hashing on {} frames", cfg.code_length, frames.len());
    train_itq(
        frames,
        cfg.code_length,
        cfg.itq_iterations,
        derive_seed(cfg.master_seed, ITQ_SEED_TAG),
    )
}

pub fn kmeans_params(cfg: &PipelineConfig) -> KMeansParams {
    KMeansParams {
        k: cfg.codebook_k,
        restarts: cfg.kmeans_restarts,
        validation_fraction: cfg.validation_fraction,
        seed: derive_seed(cfg.master_seed, KMEANS_SEED_TAG),
    }
}

/// Cuts a video into snippets according to the configured mode.
pub fn video_snippets(seq: &FeatureSequence, cfg: &PipelineConfig, itq: Option<&ItqModel>) -> Result<Vec<Snippet>> {
    match cfg.snippet_mode {
        SnippetMode::Binary => {
            let itq = itq.ok_or_else(|| Error::InvalidInput("binary snippet mode needs a hashing model".into()))?;
            let codes = itq.encode_sequence(seq)?;
            let keyframes = detect_keyframes(&codes, &cfg.keyframe_params())?;
            snippets_from_keyframes(seq.video_id(), &keyframes, seq.frame_count(), cfg.min_snippet_length)
        }
        SnippetMode::Windows | SnippetMode::Baseline => {
            snippets_from_windows(seq.video_id(), seq.frame_count(), &cfg.window_params()?)
        }
    }
}

pub fn snippet_descriptor(seq: &FeatureSequence, snippet: &Snippet, cfg: &PipelineConfig) -> Result<SnippetDescriptor> {
    match cfg.snippet_mode {
        SnippetMode::Baseline => appearance_descriptor(seq, snippet, cfg.baseline_frames()),
        _ => build_pyramid(seq, snippet, &cfg.schedule),
    }
}

fn video_descriptors(seq: &FeatureSequence, cfg: &PipelineConfig, itq: Option<&ItqModel>) -> Result<Vec<SnippetDescriptor>> {
    video_snippets(seq, cfg, itq)?
        .iter()
        .map(|s| snippet_descriptor(seq, s, cfg))
        .collect()
}

/// Hashing, PCA and codebook models fitted on one set of videos.
#[derive(Clone, Debug)]
pub struct FittedStages {
    pub config: PipelineConfig,
    pub itq: Option<ItqModel>,
    pub pca: Vec<PcaModel>,
    pub codebook: Codebook,
    /// Ids of every video that contributed training data.
    pub trained_on: BTreeSet<String>,
}

impl FittedStages {
    /// Fits every unsupervised stage on `train` and returns the stages with
    /// the training videos' histograms, in input order.
    pub fn fit(train: &[&FeatureSequence], cfg: &PipelineConfig) -> Result<(Self, Vec<HistogramDescriptor>)> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::InvalidInput("no training videos".into()));
        }

        let itq = match cfg.snippet_mode {
            SnippetMode::Binary => {
                let frames: Vec<Vec<f64>> = train.iter().flat_map(|s| s.rows_f64()).collect();
                Some(train_hashing(&frames, cfg)?)
            }
            _ => None,
        };

        let per_video: Vec<Vec<SnippetDescriptor>> = train
            .par_iter()
            .map(|seq| video_descriptors(seq, cfg, itq.as_ref()))
            .collect::<Result<_>>()?;
        let counts: Vec<usize> = per_video.iter().map(Vec::len).collect();
        let descriptors: Vec<SnippetDescriptor> = per_video.into_iter().flatten().collect();
        info!("fitting PCA on {} snippet descriptors", descriptors.len());
        let pca = fit_level_models(&descriptors, cfg.pca_dim)?;
        let reduced: Vec<ReducedDescriptor> = descriptors
            .par_iter()
            .map(|d| reduce_descriptor(d, &pca))
            .collect::<Result<_>>()?;
        drop(descriptors);

        let codebook = train_codebook(&reduced, &kmeans_params(cfg), cfg.codebook_mode)?;

        let mut histograms = Vec::with_capacity(train.len());
        let mut start = 0;
        for n in counts {
            histograms.push(encode_video(&reduced[start..start + n], &codebook)?);
            start += n;
        }
        let stages = FittedStages {
            config: cfg.clone(),
            itq,
            pca,
            codebook,
            trained_on: train.iter().map(|s| s.video_id().to_string()).collect(),
        };
        Ok((stages, histograms))
    }

    /// Histogram descriptor of any video under the fitted stages.
    pub fn histogram(&self, seq: &FeatureSequence) -> Result<HistogramDescriptor> {
        let reduced: Vec<ReducedDescriptor> = video_descriptors(seq, &self.config, self.itq.as_ref())?
            .iter()
            .map(|d| reduce_descriptor(d, &self.pca))
            .collect::<Result<_>>()?;
        encode_video(&reduced, &self.codebook)
    }

    /// Fails if any of `video_ids` contributed to fitting these stages.
    pub fn check_unseen<'a>(&self, video_ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for id in video_ids {
            if self.trained_on.contains(id) {
                return Err(Error::Leakage(id.to_string()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(id: &str, frames: usize, dim: usize, phase: f64) -> FeatureSequence {
        let rows: Vec<Vec<f64>> = (0..frames)
            .map(|t| (0..dim).map(|d| ((t as f64 * 0.3 + phase) * (d + 1) as f64).sin()).collect())
            .collect();
        FeatureSequence::from_rows(id, &rows).unwrap()
    }

    fn small_config(mode: SnippetMode) -> PipelineConfig {
        PipelineConfig {
            snippet_mode: mode,
            code_length: 4,
            itq_iterations: 5,
            window_length: 6,
            schedule: "1,2".parse().unwrap(),
            pca_dim: 3,
            codebook_k: 3,
            kmeans_restarts: 2,
            ..Default::default()
        }
    }

    #[test]
    fn fits_every_mode_and_reports_provenance() {
        let videos: Vec<FeatureSequence> = (0..4).map(|i| ramp(&format!("v{i}"), 30, 8, i as f64)).collect();
        let refs: Vec<&FeatureSequence> = videos.iter().collect();
        for mode in [SnippetMode::Binary, SnippetMode::Windows, SnippetMode::Baseline] {
            let cfg = small_config(mode);
            let (stages, hists) = FittedStages::fit(&refs[..3], &cfg).unwrap();
            assert_eq!(hists.len(), 3);
            assert_eq!(stages.itq.is_some(), mode == SnippetMode::Binary);
            for h in &hists {
                assert!((h.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            assert_eq!(stages.histogram(&videos[0]).unwrap(), hists[0]);
            stages.check_unseen(["v3"]).unwrap();
            assert!(matches!(stages.check_unseen(["v3", "v1"]), Err(Error::Leakage(id)) if id == "v1"));
        }
    }

    #[test]
    fn window_modes_ignore_hashing() {
        let v = ramp("v", 25, 4, 0.0);
        let cfg = small_config(SnippetMode::Windows);
        let snips = video_snippets(&v, &cfg, None).unwrap();
        assert_eq!(snips.iter().map(|s| (s.first, s.last)).collect::<Vec<_>>(), [(1, 6), (4, 9), (7, 12), (10, 15), (13, 18), (16, 21), (19, 24)]);
        assert!(video_snippets(&v, &small_config(SnippetMode::Binary), None).is_err());
    }
}
