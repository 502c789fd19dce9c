//! Exponential χ² kernel over non-negative histograms.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// How the kernel bandwidth is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GammaMode {
    /// `1 / mean pairwise χ² distance` over the training histograms.
    #[default]
    MeanDistance,
    Fixed,
}

impl std::str::FromStr for GammaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-distance" => Ok(GammaMode::MeanDistance),
            "fixed" => Ok(GammaMode::Fixed),
            _ => Err(Error::Config(format!("unknown gamma mode {s:?}"))),
        }
    }
}

impl std::fmt::Display for GammaMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GammaMode::MeanDistance => "mean-distance",
            GammaMode::Fixed => "fixed",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Chi2KernelParams {
    pub gamma_mode: GammaMode,
    /// Used as-is in `Fixed` mode; overwritten when resolved from data.
    pub gamma: f64,
    /// Added to every denominator.
    pub epsilon: f64,
}

impl Default for Chi2KernelParams {
    fn default() -> Self {
        Chi2KernelParams {
            gamma_mode: GammaMode::MeanDistance,
            gamma: 1.0,
            epsilon: 1e-10,
        }
    }
}

/// `½ Σ (x_i - y_i)² / (x_i + y_i + ε)`
pub fn chi2_distance(x: &[f64], y: &[f64], epsilon: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let mut acc = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        if a < 0.0 || b < 0.0 {
            return Err(Error::InvalidInput("χ² distance needs non-negative histograms".into()));
        }
        let d = a - b;
        acc += d * d / (a + b + epsilon);
    }
    Ok(0.5 * acc)
}

/// `exp(-γ χ²(x, y))`
pub fn chi2_kernel(x: &[f64], y: &[f64], gamma: f64, epsilon: f64) -> Result<f64> {
    Ok((-gamma * chi2_distance(x, y, epsilon)?).exp())
}

/// Dense symmetric n x n matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    n: usize,
    values: Vec<f64>,
}

impl KernelMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                values[i * n + j] = f(i, j);
            }
        }
        KernelMatrix { n, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.n, self.n, &self.values)
    }
}

/// Pairwise χ² distances of a histogram set; rows computed in parallel.
pub fn distance_matrix<R: AsRef<[f64]> + Sync>(hists: &[R], epsilon: f64) -> Result<KernelMatrix> {
    let n = hists.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        chi2_distance(hists[i].as_ref(), hists[i].as_ref(), epsilon)
                    } else {
                        chi2_distance(hists[i.min(j)].as_ref(), hists[i.max(j)].as_ref(), epsilon)
                    }
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(KernelMatrix {
        n,
        values: rows.into_iter().flatten().collect(),
    })
}

/// `1 / mean_{i<j} χ²(h_i, h_j)`, or 1 when every pair coincides.
pub fn mean_distance_gamma(distances: &KernelMatrix) -> f64 {
    let n = distances.len();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            sum += distances.get(i, j);
            pairs += 1;
        }
    }
    if pairs == 0 || sum <= 0.0 {
        1.0
    } else {
        pairs as f64 / sum
    }
}

/// Resolves γ from the training set (when requested) and builds the Gram
/// matrix. Returns the resolved parameters alongside.
pub fn gram_matrix<R: AsRef<[f64]> + Sync>(
    hists: &[R],
    params: &Chi2KernelParams,
) -> Result<(KernelMatrix, Chi2KernelParams)> {
    let distances = distance_matrix(hists, params.epsilon)?;
    let gamma = match params.gamma_mode {
        GammaMode::MeanDistance => mean_distance_gamma(&distances),
        GammaMode::Fixed => {
            if !(params.gamma > 0.0) {
                return Err(Error::InvalidInput("fixed γ must be positive".into()));
            }
            params.gamma
        }
    };
    let resolved = Chi2KernelParams { gamma, ..*params };
    let gram = KernelMatrix {
        n: distances.n,
        values: distances.values.iter().map(|d| (-gamma * d).exp()).collect(),
    };
    Ok((gram, resolved))
}
