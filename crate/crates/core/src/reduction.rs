//! Principal component analysis, fitted per pyramid level.

use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, SVD};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::persist::{Reader, Writer};
use crate::pyramid::SnippetDescriptor;

pub const PCA_MAGIC: &[u8; 4] = b"PYRP";
pub const PCA_LEVELS_MAGIC: &[u8; 4] = b"PYRL";

/// Mean-centred linear projection onto the leading principal directions.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// D x r, one principal direction per column.
    components: DMatrix<f64>,
    explained_variance: Vec<f64>,
    effective_rank: usize,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    /// Number of non-degenerate components; the rest are zero padding.
    pub fn effective_rank(&self) -> usize {
        self.effective_rank
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.effective_rank < self.output_dim()
    }

    /// `(x - mean) . components`
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok((0..self.output_dim())
            .map(|j| {
                self.components
                    .column(j)
                    .iter()
                    .zip(&centered)
                    .map(|(c, v)| c * v)
                    .sum()
            })
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = Writer::new(PCA_MAGIC);
        self.write_into(&mut w);
        w.finish(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = Reader::open(path.as_ref(), PCA_MAGIC)?;
        let model = Self::read_from(&mut r)?;
        r.finish()?;
        Ok(model)
    }

    fn write_into(&self, w: &mut Writer) {
        w.u32(self.input_dim() as u32);
        w.u32(self.output_dim() as u32);
        w.f64s(&self.mean);
        for i in 0..self.input_dim() {
            for j in 0..self.output_dim() {
                w.f64(self.components[(i, j)]);
            }
        }
        w.f64s(&self.explained_variance);
    }

    fn read_from(r: &mut Reader) -> Result<Self> {
        let d = r.usize()?;
        let k = r.usize()?;
        let mean = r.f64s(d)?;
        let comps = r.f64s(d * k)?;
        let explained_variance = r.f64s(k)?;
        let components = DMatrix::from_row_slice(d, k, &comps);
        let effective_rank = explained_variance.iter().take_while(|&&v| v > 0.0).count();
        Ok(PcaModel {
            mean,
            components,
            explained_variance,
            effective_rank,
        })
    }
}

/// Writes one model per pyramid level into a single file.
pub fn save_level_models(path: impl AsRef<Path>, models: &[PcaModel]) -> Result<()> {
    let mut w = Writer::new(PCA_LEVELS_MAGIC);
    w.u32(models.len() as u32);
    for m in models {
        m.write_into(&mut w);
    }
    w.finish(path.as_ref())
}

pub fn load_level_models(path: impl AsRef<Path>) -> Result<Vec<PcaModel>> {
    let mut r = Reader::open(path.as_ref(), PCA_LEVELS_MAGIC)?;
    let n = r.usize()?;
    if n == 0 {
        return Err(r.bad("no level models"));
    }
    let models = (0..n).map(|_| PcaModel::read_from(&mut r)).collect::<Result<_>>()?;
    r.finish()?;
    Ok(models)
}

/// Fits `r` principal components to `rows` via a thin SVD of the centred
/// data.
///
/// Each component's sign is fixed so that its largest-magnitude entry is
/// positive. When the data has fewer than `r` non-degenerate directions the
/// model is padded with zero components and flagged rank-deficient.
pub fn fit_pca<R: AsRef<[f64]>>(rows: &[R], r: usize) -> Result<PcaModel> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("PCA needs at least 2 vectors, got {n}")));
    }
    if r == 0 {
        return Err(Error::InvalidInput("PCA output dimension must be positive".into()));
    }
    let d = rows[0].as_ref().len();
    if d == 0 {
        return Err(Error::InvalidInput("PCA input vectors are empty".into()));
    }
    let mut mean = vec![0.0; d];
    for row in rows {
        let row = row.as_ref();
        if row.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: row.len(),
            });
        }
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, d, |i, j| rows[i].as_ref()[j] - mean[j]);
    let svd = SVD::new(centered, false, true);
    let v_t = svd.v_t.expect("SVD requested right singular vectors");
    let singular = svd.singular_values;

    let mut order: Vec<usize> = (0..singular.len()).collect();
    order.sort_by(|&a, &b| singular[b].total_cmp(&singular[a]).then(a.cmp(&b)));

    let s_max = order.first().map_or(0.0, |&i| singular[i]);
    let tol = s_max * n.max(d) as f64 * f64::EPSILON;
    let rank = order.iter().filter(|&&i| singular[i] > tol && singular[i] > 0.0).count();
    let kept = rank.min(r);

    let mut components = DMatrix::zeros(d, r);
    let mut explained_variance = vec![0.0; r];
    for (j, &src) in order.iter().take(kept).enumerate() {
        let mut col: Vec<f64> = v_t.row(src).iter().copied().collect();
        let pivot = col
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, &v)| if v.abs() > best.1 { (i, v.abs()) } else { best })
            .0;
        if col[pivot] < 0.0 {
            col.iter_mut().for_each(|v| *v = -*v);
        }
        components.set_column(j, &nalgebra::DVector::from_vec(col));
        explained_variance[j] = singular[src] * singular[src] / (n - 1) as f64;
    }
    if kept < r {
        warn!("PCA: requested {r} components but data supports {kept}; padding with zeros");
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        effective_rank: kept,
    })
}

/// Per-level reduced snippet descriptor: the concatenation of every
/// segment's projection, level 1 first.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedDescriptor {
    values: Vec<f64>,
    segments_per_level: Vec<usize>,
    reduced_dim: usize,
}

impl ReducedDescriptor {
    pub fn new(values: Vec<f64>, segments_per_level: Vec<usize>, reduced_dim: usize) -> Result<Self> {
        let expected = segments_per_level.iter().sum::<usize>() * reduced_dim;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: values.len(),
            });
        }
        Ok(ReducedDescriptor {
            values,
            segments_per_level,
            reduced_dim,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn levels(&self) -> usize {
        self.segments_per_level.len()
    }

    pub fn segments_per_level(&self) -> &[usize] {
        &self.segments_per_level
    }

    pub fn reduced_dim(&self) -> usize {
        self.reduced_dim
    }

    /// Concatenated projections of one level's segments.
    pub fn level(&self, level: usize) -> &[f64] {
        let start: usize = self.segments_per_level[..level].iter().sum::<usize>() * self.reduced_dim;
        let len = self.segments_per_level[level] * self.reduced_dim;
        &self.values[start..start + len]
    }
}

/// Projects every segment with its level's model.
pub fn reduce_descriptor(desc: &SnippetDescriptor, models: &[PcaModel]) -> Result<ReducedDescriptor> {
    if models.len() != desc.levels() {
        return Err(Error::InvalidInput(format!(
            "{} PCA models for a {}-level descriptor",
            models.len(),
            desc.levels()
        )));
    }
    let r = models[0].output_dim();
    if models.iter().any(|m| m.output_dim() != r) {
        return Err(Error::InvalidInput("per-level PCA models disagree on output dimension".into()));
    }
    let mut values = Vec::with_capacity(desc.segments_per_level().iter().sum::<usize>() * r);
    for (level, model) in models.iter().enumerate() {
        for v in desc.level(level) {
            values.extend(model.transform(v)?);
        }
    }
    ReducedDescriptor::new(values, desc.segments_per_level(), r)
}

/// Fits one model per level on every segment vector of that level.
pub fn fit_level_models(descriptors: &[SnippetDescriptor], r: usize) -> Result<Vec<PcaModel>> {
    let levels = descriptors
        .first()
        .map(SnippetDescriptor::levels)
        .ok_or_else(|| Error::InvalidInput("no descriptors to fit PCA on".into()))?;
    if descriptors.iter().any(|d| d.levels() != levels) {
        return Err(Error::InvalidInput("descriptors disagree on level count".into()));
    }
    (0..levels)
        .into_par_iter()
        .map(|level| {
            let rows: Vec<&[f64]> = descriptors
                .iter()
                .flat_map(|d| d.level(level).iter().map(Vec::as_slice))
                .collect();
            fit_pca(&rows, r)
        })
        .collect()
}
