//! Pipeline settings and their flat `key=value` file form.

use std::path::Path;

use crate::classifier::{Chi2KernelParams, GammaMode, DEFAULT_C};
use crate::codebook::CodebookMode;
use crate::error::{Error, Result};
use crate::pyramid::PartitionSchedule;
use crate::snippets::{KeyframeParams, WindowParams, DEFAULT_MIN_LENGTH};

/// How videos are cut into snippets and what each snippet descriptor holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SnippetMode {
    /// Spans between binary-code key-frames, flow pyramid descriptors.
    #[default]
    Binary,
    /// Fixed overlapping windows, flow pyramid descriptors.
    Windows,
    /// Fixed windows, every other raw frame stacked (appearance only).
    Baseline,
}

impl std::str::FromStr for SnippetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(SnippetMode::Binary),
            "windows" => Ok(SnippetMode::Windows),
            "baseline" => Ok(SnippetMode::Baseline),
            _ => Err(Error::Config(format!("unknown snippet mode {s:?}"))),
        }
    }
}

impl std::fmt::Display for SnippetMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SnippetMode::Binary => "binary",
            SnippetMode::Windows => "windows",
            SnippetMode::Baseline => "baseline",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub code_length: usize,
    pub itq_iterations: usize,
    /// `None` means "not set", which resolves to 1 in binary mode.
    pub hamming_threshold: Option<u32>,
    pub snippet_mode: SnippetMode,
    pub window_length: usize,
    /// `None` resolves to half the window length.
    pub stride: Option<usize>,
    pub min_snippet_length: usize,
    pub schedule: PartitionSchedule,
    pub pca_dim: usize,
    pub codebook_k: usize,
    pub kmeans_restarts: usize,
    pub validation_fraction: f64,
    pub codebook_mode: CodebookMode,
    pub svm_c: f64,
    pub gamma_mode: GammaMode,
    pub gamma: f64,
    pub kernel_epsilon: f64,
    pub master_seed: u64,
    /// Fit hashing, PCA and codebooks once on every video instead of per fold.
    pub allow_unsupervised_leakage: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            code_length: 16,
            itq_iterations: 50,
            hamming_threshold: None,
            snippet_mode: SnippetMode::Binary,
            window_length: 20,
            stride: None,
            min_snippet_length: DEFAULT_MIN_LENGTH,
            schedule: PartitionSchedule::default(),
            pca_dim: 100,
            codebook_k: 4000,
            kmeans_restarts: 10,
            validation_fraction: 0.1,
            codebook_mode: CodebookMode::PerLevel,
            svm_c: DEFAULT_C,
            gamma_mode: GammaMode::MeanDistance,
            gamma: 1.0,
            kernel_epsilon: 1e-10,
            master_seed: 0,
            allow_unsupervised_leakage: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad value {value:?} for {key}"))),
    }
}

impl PipelineConfig {
    pub fn keyframe_params(&self) -> KeyframeParams {
        KeyframeParams {
            hamming_threshold: self.hamming_threshold.unwrap_or(1),
        }
    }

    pub fn window_params(&self) -> Result<WindowParams> {
        let stride = self.stride.unwrap_or((self.window_length / 2).max(1));
        WindowParams::new(self.window_length, stride).map_err(|e| Error::Config(e.to_string()))
    }

    /// Frames stacked per appearance-baseline snippet.
    pub fn baseline_frames(&self) -> usize {
        self.window_length.div_ceil(2)
    }

    pub fn kernel_params(&self) -> Chi2KernelParams {
        Chi2KernelParams {
            gamma_mode: self.gamma_mode,
            gamma: self.gamma,
            epsilon: self.kernel_epsilon,
        }
    }

    /// Checks value ranges and mutually exclusive settings.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.snippet_mode != SnippetMode::Binary && self.hamming_threshold.is_some() {
            return fail("hamming-threshold only applies to binary snippet mode");
        }
        if self.hamming_threshold == Some(0) {
            return fail("hamming-threshold must be at least 1");
        }
        if self.code_length == 0 {
            return fail("code-length must be at least 1");
        }
        if self.snippet_mode != SnippetMode::Binary {
            self.window_params()?;
        }
        if self.min_snippet_length == 0 {
            return fail("min-snippet-length must be at least 1");
        }
        if self.pca_dim == 0 || self.codebook_k == 0 || self.kmeans_restarts == 0 {
            return fail("pca-dim, codebook-k and kmeans-restarts must be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return fail("validation-fraction must lie in (0, 1)");
        }
        if !(self.svm_c > 0.0) {
            return fail("svm-c must be positive");
        }
        if self.gamma_mode == GammaMode::Fixed && !(self.gamma > 0.0) {
            return fail("gamma must be positive");
        }
        if !(self.kernel_epsilon > 0.0) {
            return fail("kernel-epsilon must be positive");
        }
        Ok(())
    }

    /// Applies one setting. Keys accept `-` or `_` separators.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        match key.as_str() {
            "code-length" => self.code_length = parse(&key, value)?,
            "itq-iterations" => self.itq_iterations = parse(&key, value)?,
            "hamming-threshold" => self.hamming_threshold = Some(parse(&key, value)?),
            "snippet-mode" => self.snippet_mode = value.parse()?,
            "window-length" => self.window_length = parse(&key, value)?,
            "stride" => self.stride = Some(parse(&key, value)?),
            "min-snippet-length" => self.min_snippet_length = parse(&key, value)?,
            "schedule" => self.schedule = value.parse()?,
            "pca-dim" => self.pca_dim = parse(&key, value)?,
            "codebook-k" => self.codebook_k = parse(&key, value)?,
            "kmeans-restarts" => self.kmeans_restarts = parse(&key, value)?,
            "validation-fraction" => self.validation_fraction = parse(&key, value)?,
            "codebook-mode" => self.codebook_mode = value.parse()?,
            "svm-c" => self.svm_c = parse(&key, value)?,
            "gamma-mode" => self.gamma_mode = value.parse()?,
            "gamma" => self.gamma = parse(&key, value)?,
            "kernel-epsilon" => self.kernel_epsilon = parse(&key, value)?,
            "seed" | "master-seed" => self.master_seed = parse(&key, value)?,
            "allow-unsupervised-leakage" => self.allow_unsupervised_leakage = parse_bool(&key, value)?,
            _ => return Err(Error::Config(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, e)))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = PipelineConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Every setting as ordered `(key, value)` pairs, parseable by
    /// [`PipelineConfig::set`].
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("code-length", self.code_length.to_string()),
            ("itq-iterations", self.itq_iterations.to_string()),
        ];
        if let Some(t) = self.hamming_threshold {
            out.push(("hamming-threshold", t.to_string()));
        }
        out.extend([
            ("snippet-mode", self.snippet_mode.to_string()),
            ("window-length", self.window_length.to_string()),
        ]);
        if let Some(s) = self.stride {
            out.push(("stride", s.to_string()));
        }
        out.extend([
            ("min-snippet-length", self.min_snippet_length.to_string()),
            ("schedule", self.schedule.to_string()),
            ("pca-dim", self.pca_dim.to_string()),
            ("codebook-k", self.codebook_k.to_string()),
            ("kmeans-restarts", self.kmeans_restarts.to_string()),
            ("validation-fraction", self.validation_fraction.to_string()),
            ("codebook-mode", self.codebook_mode.to_string()),
            ("svm-c", self.svm_c.to_string()),
            ("gamma-mode", self.gamma_mode.to_string()),
            ("gamma", self.gamma.to_string()),
            ("kernel-epsilon", self.kernel_epsilon.to_string()),
            ("seed", self.master_seed.to_string()),
            ("allow-unsupervised-leakage", self.allow_unsupervised_leakage.to_string()),
        ]);
        out
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
