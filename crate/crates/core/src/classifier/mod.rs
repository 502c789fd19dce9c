//! One-vs-rest χ²-kernel SVM over video histograms.

mod kernel;
mod smo;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

pub use kernel::{
    chi2_distance, chi2_kernel, distance_matrix, gram_matrix, mean_distance_gamma, Chi2KernelParams, GammaMode,
    KernelMatrix,
};
pub use smo::{dual_objective, solve, DualSolution, SmoParams};

use crate::error::{Error, Result};
use crate::persist::{Reader, Writer};

pub const SVM_MAGIC: &[u8; 4] = b"PYRS";

/// Default soft-margin penalty.
pub const DEFAULT_C: f64 = 100.0;

/// One class-versus-rest binary machine.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryModel {
    /// Training indices with non-zero dual coefficient.
    pub support: Vec<usize>,
    /// Dual coefficients in `(0, C]`, aligned with `support`.
    pub alpha: Vec<f64>,
    pub bias: f64,
}

#[derive(Clone, Debug, PartialEq)]
struct SupportVector {
    label: usize,
    values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    labels: Vec<String>,
    c: f64,
    kernel: Chi2KernelParams,
    classes: Vec<BinaryModel>,
    /// Every training histogram referenced by some support set.
    support_vectors: BTreeMap<usize, SupportVector>,
    dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub label: String,
    pub scores: Vec<f64>,
}

impl SvmModel {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Kernel parameters with γ resolved on the training set.
    pub fn kernel(&self) -> &Chi2KernelParams {
        &self.kernel
    }

    pub fn class_models(&self) -> &[BinaryModel] {
        &self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Decision value of every class for `x`.
    pub fn decision_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        let mut k_cache = BTreeMap::new();
        for (&idx, sv) in &self.support_vectors {
            k_cache.insert(idx, chi2_kernel(&sv.values, x, self.kernel.gamma, self.kernel.epsilon)?);
        }
        Ok(self
            .classes
            .iter()
            .enumerate()
            .map(|(class, m)| {
                m.support
                    .iter()
                    .zip(&m.alpha)
                    .map(|(idx, a)| {
                        let y = if self.support_vectors[idx].label == class { 1.0 } else { -1.0 };
                        a * y * k_cache[idx]
                    })
                    .sum::<f64>()
                    + m.bias
            })
            .collect())
    }

    /// Highest-scoring class; ties go to the earlier label.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let scores = self.decision_values(x)?;
        let class = argmax(&scores);
        Ok(Prediction {
            class,
            label: self.labels[class].clone(),
            scores,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = Writer::new(SVM_MAGIC);
        w.u32(self.labels.len() as u32);
        for l in &self.labels {
            w.str(l);
        }
        w.f64(self.c);
        w.u8(match self.kernel.gamma_mode {
            GammaMode::MeanDistance => 0,
            GammaMode::Fixed => 1,
        });
        w.f64(self.kernel.gamma);
        w.f64(self.kernel.epsilon);
        for m in &self.classes {
            w.u32(m.support.len() as u32);
            for &i in &m.support {
                w.u32(i as u32);
            }
            w.f64s(&m.alpha);
            w.f64(m.bias);
        }
        w.u32(self.dim as u32);
        w.u32(self.support_vectors.len() as u32);
        for (&idx, sv) in &self.support_vectors {
            w.u32(idx as u32);
            w.u32(sv.label as u32);
            w.f64s(&sv.values);
        }
        w.finish(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = Reader::open(path.as_ref(), SVM_MAGIC)?;
        let n_labels = r.usize()?;
        let labels = (0..n_labels).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let c = r.f64()?;
        let gamma_mode = match r.u8()? {
            0 => GammaMode::MeanDistance,
            1 => GammaMode::Fixed,
            other => return Err(r.bad(format!("unknown gamma mode {other}"))),
        };
        let kernel = Chi2KernelParams {
            gamma_mode,
            gamma: r.f64()?,
            epsilon: r.f64()?,
        };
        let mut classes = Vec::with_capacity(n_labels);
        for _ in 0..n_labels {
            let n = r.usize()?;
            let support = (0..n).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            let alpha = r.f64s(n)?;
            let bias = r.f64()?;
            classes.push(BinaryModel { support, alpha, bias });
        }
        let dim = r.usize()?;
        let count = r.usize()?;
        let mut support_vectors = BTreeMap::new();
        for _ in 0..count {
            let idx = r.usize()?;
            let label = r.usize()?;
            if label >= n_labels {
                return Err(r.bad("support vector label out of range"));
            }
            let values = r.f64s(dim)?;
            support_vectors.insert(idx, SupportVector { label, values });
        }
        r.finish()?;
        if classes.iter().flat_map(|m| &m.support).any(|i| !support_vectors.contains_key(i)) {
            return Err(Error::InvalidInput("support index without stored histogram".into()));
        }
        Ok(SvmModel {
            labels,
            c,
            kernel,
            classes,
            support_vectors,
            dim,
        })
    }
}

fn argmax(scores: &[f64]) -> usize {
    scores
        .iter()
        .enumerate()
        .fold(0, |best, (i, &s)| if s > scores[best] { i } else { best })
}

fn validate_training<R: AsRef<[f64]>>(hists: &[R], classes: &[usize], labels: &[String]) -> Result<usize> {
    if hists.len() != classes.len() {
        return Err(Error::InvalidInput(format!(
            "{} histograms but {} labels",
            hists.len(),
            classes.len()
        )));
    }
    if labels.len() < 2 {
        return Err(Error::InvalidInput("one-vs-rest training needs at least 2 classes".into()));
    }
    let mut counts = vec![0usize; labels.len()];
    for &c in classes {
        *counts
            .get_mut(c)
            .ok_or_else(|| Error::InvalidInput(format!("class index {c} out of range")))? += 1;
    }
    if let Some(missing) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InvalidInput(format!("class {:?} has no training samples", labels[missing])));
    }
    let dim = hists[0].as_ref().len();
    if let Some(h) = hists.iter().find(|h| h.as_ref().len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: h.as_ref().len(),
        });
    }
    Ok(dim)
}

/// Trains one binary χ²-SVM per class against all others.
///
/// `classes[i]` indexes into `labels`. The Gram matrix is computed once and
/// shared by the per-class problems, which are solved in parallel.
pub fn train_ovr<R: AsRef<[f64]> + Sync>(
    hists: &[R],
    classes: &[usize],
    labels: &[String],
    c: f64,
    kernel: &Chi2KernelParams,
) -> Result<SvmModel> {
    let dim = validate_training(hists, classes, labels)?;
    if !(c > 0.0) {
        return Err(Error::InvalidInput("C must be positive".into()));
    }
    let (gram, resolved) = gram_matrix(hists, kernel)?;
    let params = SmoParams::new(c);
    let class_models: Vec<BinaryModel> = (0..labels.len())
        .into_par_iter()
        .map(|class| {
            let y: Vec<f64> = classes.iter().map(|&k| if k == class { 1.0 } else { -1.0 }).collect();
            let sol = solve(&gram, &y, &params);
            let support: Vec<usize> = (0..y.len()).filter(|&i| sol.alpha[i] > 0.0).collect();
            let alpha = support.iter().map(|&i| sol.alpha[i]).collect();
            BinaryModel {
                support,
                alpha,
                bias: sol.bias,
            }
        })
        .collect();

    let mut support_vectors = BTreeMap::new();
    for &i in class_models.iter().flat_map(|m| &m.support) {
        support_vectors.entry(i).or_insert_with(|| SupportVector {
            label: classes[i],
            values: hists[i].as_ref().to_vec(),
        });
    }
    Ok(SvmModel {
        labels: labels.to_vec(),
        c,
        kernel: resolved,
        classes: class_models,
        support_vectors,
        dim,
    })
}
