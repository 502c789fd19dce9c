//! Per-level k-means codebooks and bag-of-snippets histograms.

use std::path::Path;

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::persist::{Reader, Writer};
use crate::reduction::ReducedDescriptor;
use crate::seed::derive_seed;

pub const CODEBOOK_MAGIC: &[u8; 4] = b"PYRC";

/// Upper bound on Lloyd iterations per restart.
pub const MAX_LLOYD_ITERATIONS: usize = 300;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub restarts: usize,
    /// Share of the points held out to pick the winning restart.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            k: 4000,
            restarts: 10,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestartTrace {
    /// Training SSE after every centre update.
    pub sse_history: Vec<f64>,
    pub training_sse: f64,
    pub validation_sse: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansFit {
    pub centers: Vec<Vec<f64>>,
    pub training_sse: f64,
    pub validation_sse: f64,
    pub winning_restart: usize,
    pub restarts: Vec<RestartTrace>,
    /// Indices (into the input) of the points the centres were fitted on.
    pub train_indices: Vec<usize>,
    /// Set when `k` had to be lowered to the number of points.
    pub k_reduced: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Index of the nearest centre by squared Euclidean distance; ties go to
/// the lowest index.
pub fn assign(x: &[f64], centers: &[Vec<f64>]) -> Result<usize> {
    if centers.is_empty() {
        return Err(Error::InvalidInput("no centres".into()));
    }
    for c in centers {
        if c.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: c.len(),
                found: x.len(),
            });
        }
    }
    Ok(nearest(x, centers).0)
}

fn sse(points: &[&[f64]], centers: &[Vec<f64>]) -> f64 {
    points.iter().map(|p| nearest(p, centers).1).sum()
}

fn lloyd(points: &[&[f64]], k: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>, usize) {
    let n = points.len();
    let dim = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = sample(&mut rng, n, k).iter().map(|i| points[i].to_vec()).collect();
    let mut assignment = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..MAX_LLOYD_ITERATIONS {
        let next: Vec<(usize, f64)> = if n * k > 50_000 {
            points.par_iter().map(|p| nearest(p, &centers)).collect()
        } else {
            points.iter().map(|p| nearest(p, &centers)).collect()
        };
        let changed = next.iter().zip(&assignment).any(|(a, &b)| a.0 != b);
        if !changed {
            break;
        }
        iterations += 1;
        for (slot, (j, _)) in assignment.iter_mut().zip(&next) {
            *slot = *j;
        }

        let mut counts = vec![0usize; k];
        for &j in &assignment {
            counts[j] += 1;
        }
        // Reseed each empty cluster with the point farthest from its centre.
        // Points sitting on their centre are never moved, so duplicates
        // cannot keep re-emptying a cluster.
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let donor = (0..n)
                .filter(|&i| counts[assignment[i]] > 1)
                .map(|i| (i, sq_dist(points[i], &centers[assignment[i]])))
                .filter(|&(_, d)| d > 0.0)
                .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            if let Some((i, _)) = donor {
                counts[assignment[i]] -= 1;
                assignment[i] = empty;
                counts[empty] = 1;
            }
        }

        let mut sums = vec![vec![0.0; dim]; k];
        for (p, &j) in points.iter().zip(&assignment) {
            for (s, v) in sums[j].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        let previous = centers.clone();
        for (j, sum) in sums.into_iter().enumerate() {
            if counts[j] > 0 {
                centers[j] = sum.into_iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        let total: f64 = points
            .iter()
            .zip(&assignment)
            .map(|(p, &j)| sq_dist(p, &centers[j]))
            .sum();
        // Only rounding noise is left to shuffle; keep the last real improvement.
        if history.last().is_some_and(|&last| total >= last) {
            centers = previous;
            break;
        }
        history.push(total);
    }
    (centers, history, iterations)
}

/// Lloyd's k-means with seeded random-point initialisation, repeated
/// `restarts` times; the restart with the lowest SSE on a held-out
/// validation split wins.
///
/// When there are fewer points than `k`, `k` drops to the point count. When
/// the split would leave fewer than `k` training points, the validation
/// split shrinks, and with no validation points the winner is chosen on
/// training SSE.
pub fn train_kmeans<R: AsRef<[f64]> + Sync>(data: &[R], params: &KMeansParams) -> Result<KMeansFit> {
    let n = data.len();
    if n == 0 {
        return Err(Error::InvalidInput("k-means on empty input".into()));
    }
    if params.k == 0 || params.restarts == 0 {
        return Err(Error::InvalidInput("k and restarts must be positive".into()));
    }
    if !(params.validation_fraction > 0.0 && params.validation_fraction < 1.0) {
        return Err(Error::InvalidInput("validation fraction must lie in (0, 1)".into()));
    }
    let dim = data[0].as_ref().len();
    if let Some(bad) = data.iter().find(|r| r.as_ref().len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.as_ref().len(),
        });
    }
    let k = params.k.min(n);
    if k < params.k {
        warn!("k-means: only {n} points, lowering k from {} to {n}", params.k);
    }

    let mut split_rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, u64::MAX));
    let mut order: Vec<usize> = sample(&mut split_rng, n, n).into_vec();
    let n_val = ((n as f64 * params.validation_fraction).floor() as usize).min(n - k);
    let mut train_indices = order.split_off(n_val);
    let mut val_indices = order;
    train_indices.sort_unstable();
    val_indices.sort_unstable();
    let train: Vec<&[f64]> = train_indices.iter().map(|&i| data[i].as_ref()).collect();
    let val: Vec<&[f64]> = val_indices.iter().map(|&i| data[i].as_ref()).collect();

    let runs: Vec<(Vec<Vec<f64>>, RestartTrace)> = (0..params.restarts)
        .into_par_iter()
        .map(|r| {
            let (centers, sse_history, iterations) = lloyd(&train, k, derive_seed(params.seed, r as u64));
            let training_sse = sse(&train, &centers);
            let validation_sse = if val.is_empty() { training_sse } else { sse(&val, &centers) };
            let trace = RestartTrace {
                sse_history,
                training_sse,
                validation_sse,
                iterations,
            };
            (centers, trace)
        })
        .collect();

    let winning_restart = runs
        .iter()
        .enumerate()
        .fold(0, |best, (i, (_, t))| if t.validation_sse < runs[best].1.validation_sse { i } else { best });
    let centers = runs[winning_restart].0.clone();
    let (training_sse, validation_sse) = (runs[winning_restart].1.training_sse, runs[winning_restart].1.validation_sse);
    Ok(KMeansFit {
        centers,
        training_sse,
        validation_sse,
        winning_restart,
        restarts: runs.into_iter().map(|(_, t)| t).collect(),
        train_indices,
        k_reduced: k < params.k,
    })
}

/// Which vectors get quantized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CodebookMode {
    /// One codebook per pyramid level over that level's sub-vector.
    #[default]
    PerLevel,
    /// A single codebook over the whole reduced descriptor.
    Joint,
}

impl std::str::FromStr for CodebookMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-level" => Ok(CodebookMode::PerLevel),
            "joint" => Ok(CodebookMode::Joint),
            _ => Err(Error::Config(format!("unknown codebook mode {s:?}"))),
        }
    }
}

impl std::fmt::Display for CodebookMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CodebookMode::PerLevel => "per-level",
            CodebookMode::Joint => "joint",
        })
    }
}

/// Visual-word centres for every quantized level.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    levels: Vec<Vec<Vec<f64>>>,
    training_sse: Vec<f64>,
}

impl Codebook {
    pub fn from_centers(levels: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if levels.is_empty() || levels.iter().any(Vec::is_empty) {
            return Err(Error::InvalidInput("codebook needs at least one centre per level".into()));
        }
        for level in &levels {
            let dim = level[0].len();
            if level.iter().any(|c| c.len() != dim) {
                return Err(Error::InvalidInput("ragged codebook centres".into()));
            }
            if level.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("non-finite codebook centre".into()));
            }
        }
        let training_sse = vec![f64::NAN; levels.len()];
        Ok(Codebook { levels, training_sse })
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    pub fn centers(&self, level: usize) -> &[Vec<f64>] {
        &self.levels[level]
    }

    /// Word count of one level.
    pub fn k(&self, level: usize) -> usize {
        self.levels[level].len()
    }

    /// Final training SSE per level (NaN for codebooks loaded from disk).
    pub fn training_sse(&self) -> &[f64] {
        &self.training_sse
    }

    pub fn histogram_len(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    fn mode_for(&self, desc: &ReducedDescriptor) -> Result<CodebookMode> {
        let level_dims_match = |n: usize| (0..n).all(|l| self.levels[l][0].len() == desc.level(l).len());
        if self.levels() == desc.levels() && level_dims_match(self.levels()) {
            Ok(CodebookMode::PerLevel)
        } else if self.levels() == 1 && self.levels[0][0].len() == desc.len() {
            Ok(CodebookMode::Joint)
        } else {
            Err(Error::InvalidInput(format!(
                "codebook with {} level(s) does not fit a {}-level descriptor of length {}",
                self.levels(),
                desc.levels(),
                desc.len()
            )))
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = Writer::new(CODEBOOK_MAGIC);
        w.u32(self.levels.len() as u32);
        for level in &self.levels {
            w.u32(level.len() as u32);
            w.u32(level[0].len() as u32);
            for c in level {
                w.f64s(c);
            }
        }
        w.finish(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = Reader::open(path.as_ref(), CODEBOOK_MAGIC)?;
        let count = r.usize()?;
        let mut levels = Vec::with_capacity(count);
        for _ in 0..count {
            let k = r.usize()?;
            let dim = r.usize()?;
            if k == 0 || dim == 0 {
                return Err(r.bad("empty codebook level"));
            }
            let flat = r.f64s(k * dim)?;
            levels.push(flat.chunks(dim).map(<[f64]>::to_vec).collect());
        }
        r.finish()?;
        Codebook::from_centers(levels)
    }
}

/// Trains one codebook per level (or a single joint one) on training
/// snippet descriptors.
pub fn train_codebook(
    descriptors: &[ReducedDescriptor],
    params: &KMeansParams,
    mode: CodebookMode,
) -> Result<Codebook> {
    let first = descriptors
        .first()
        .ok_or_else(|| Error::InvalidInput("no descriptors to train a codebook on".into()))?;
    let fits: Vec<KMeansFit> = match mode {
        CodebookMode::PerLevel => (0..first.levels())
            .map(|level| {
                let rows: Vec<&[f64]> = descriptors.iter().map(|d| d.level(level)).collect();
                let p = KMeansParams {
                    seed: derive_seed(params.seed, level as u64),
                    ..params.clone()
                };
                train_kmeans(&rows, &p)
            })
            .collect::<Result<_>>()?,
        CodebookMode::Joint => {
            let rows: Vec<&[f64]> = descriptors.iter().map(|d| d.values()).collect();
            vec![train_kmeans(&rows, params)?]
        }
    };
    let training_sse = fits.iter().map(|f| f.training_sse).collect();
    let levels = fits.into_iter().map(|f| f.centers).collect();
    Ok(Codebook { levels, training_sse })
}

/// L1-normalised concatenation of per-level word counts.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramDescriptor {
    values: Vec<f64>,
}

impl HistogramDescriptor {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput("histogram entries must be finite and non-negative".into()));
        }
        Ok(HistogramDescriptor { values })
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
}

/// Bag-of-snippets histogram of one video.
pub fn encode_video(snippets: &[ReducedDescriptor], codebook: &Codebook) -> Result<HistogramDescriptor> {
    let first = snippets
        .first()
        .ok_or_else(|| Error::InvalidInput("video has no snippets".into()))?;
    let mode = codebook.mode_for(first)?;
    let mut counts = vec![0usize; codebook.histogram_len()];
    for desc in snippets {
        if codebook.mode_for(desc)? != mode {
            return Err(Error::InvalidInput("snippet descriptors disagree on layout".into()));
        }
        let mut offset = 0;
        for level in 0..codebook.levels() {
            let x = match mode {
                CodebookMode::PerLevel => desc.level(level),
                CodebookMode::Joint => desc.values(),
            };
            counts[offset + assign(x, codebook.centers(level))?] += 1;
            offset += codebook.k(level);
        }
    }
    let total: usize = counts.iter().sum();
    HistogramDescriptor::new(counts.into_iter().map(|c| c as f64 / total as f64).collect())
}
