//! Iterative-quantization binary codes for frame features.
//!
//! Training centres the data, projects onto the top `b` principal
//! directions, then alternates two steps starting from a seeded random
//! rotation `R`:
//!
//! 1. `B = sign(V R)` with `V` the projected data,
//! 2. `R = U W^T` where `V^T B = U S W^T` (orthogonal Procrustes).
//!
//! Both steps can only lower `||B - V R||_F^2`, which is recorded after every
//! iteration.

use std::path::Path;

use nalgebra::{DMatrix, SVD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::feature_io::FeatureSequence;
use crate::persist::{Reader, Writer};
use crate::reduction::fit_pca;

pub const ITQ_MAGIC: &[u8; 4] = b"PYRH";

/// A fixed-length bit string. Bit `j` is set when the `j`-th rotated
/// projection is non-negative.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryCode {
    words: Vec<u64>,
    len: usize,
}

impl BinaryCode {
    pub fn from_bits(bits: &[bool]) -> Self {
        let mut words = vec![0u64; bits.len().div_ceil(64)];
        for (j, &b) in bits.iter().enumerate() {
            if b {
                words[j / 64] |= 1 << (j % 64);
            }
        }
        BinaryCode { words, len: bits.len() }
    }

    /// Low `len` bits of `bits`, bit 0 first.
    pub fn from_u64(bits: u64, len: usize) -> Self {
        assert!(len <= 64);
        let mask = if len == 64 { u64::MAX } else { (1u64 << len) - 1 };
        BinaryCode {
            words: vec![bits & mask],
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, j: usize) -> bool {
        assert!(j < self.len);
        self.words[j / 64] >> (j % 64) & 1 == 1
    }
}

impl std::fmt::Display for BinaryCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for j in 0..self.len {
            f.write_str(if self.bit(j) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Number of differing bit positions.
pub fn hamming(a: &BinaryCode, b: &BinaryCode) -> Result<u32> {
    if a.len != b.len {
        return Err(Error::DimensionMismatch {
            expected: a.len,
            found: b.len,
        });
    }
    Ok(a.words.iter().zip(&b.words).map(|(x, y)| (x ^ y).count_ones()).sum())
}

/// Learned hashing transform.
#[derive(Clone, Debug, PartialEq)]
pub struct ItqModel {
    mean: Vec<f64>,
    /// D x b, orthonormal columns.
    projection: DMatrix<f64>,
    /// b x b orthogonal.
    rotation: DMatrix<f64>,
    iterations_used: usize,
    loss_history: Vec<f64>,
}

impl ItqModel {
    pub fn code_length(&self) -> usize {
        self.rotation.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    pub fn iterations_used(&self) -> usize {
        self.iterations_used
    }

    /// Quantization loss before the first iteration and after each one.
    /// Empty for models loaded from disk.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    fn rotated(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let b = self.code_length();
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        let projected: Vec<f64> = (0..b)
            .map(|j| self.projection.column(j).iter().zip(&centered).map(|(p, c)| p * c).sum())
            .collect();
        Ok((0..b)
            .map(|k| (0..b).map(|j| projected[j] * self.rotation[(j, k)]).sum())
            .collect())
    }

    pub fn encode(&self, x: &[f64]) -> Result<BinaryCode> {
        let z = self.rotated(x)?;
        let bits: Vec<bool> = z.iter().map(|&v| v >= 0.0).collect();
        Ok(BinaryCode::from_bits(&bits))
    }

    /// Codes for every frame of a video, in frame order.
    pub fn encode_sequence(&self, seq: &FeatureSequence) -> Result<Vec<BinaryCode>> {
        seq.rows_f64().map(|row| self.encode(&row)).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let b = self.code_length();
        let d = self.input_dim();
        let mut w = Writer::new(ITQ_MAGIC);
        w.u32(b as u32);
        w.u32(d as u32);
        w.f64s(&self.mean);
        for i in 0..d {
            for j in 0..b {
                w.f64(self.projection[(i, j)]);
            }
        }
        for i in 0..b {
            for j in 0..b {
                w.f64(self.rotation[(i, j)]);
            }
        }
        w.u32(self.iterations_used as u32);
        w.finish(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = Reader::open(path.as_ref(), ITQ_MAGIC)?;
        let b = r.usize()?;
        let d = r.usize()?;
        if b == 0 || b > d {
            return Err(r.bad(format!("code length {b} invalid for dimension {d}")));
        }
        let mean = r.f64s(d)?;
        let projection = DMatrix::from_row_slice(d, b, &r.f64s(d * b)?);
        let rotation = DMatrix::from_row_slice(b, b, &r.f64s(b * b)?);
        let iterations_used = r.usize()?;
        r.finish()?;
        Ok(ItqModel {
            mean,
            projection,
            rotation,
            iterations_used,
            loss_history: Vec::new(),
        })
    }
}

/// Haar-distributed orthogonal matrix from the QR factorisation of a seeded
/// Gaussian matrix.
pub(crate) fn random_orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn sign_matrix(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| if v >= 0.0 { 1.0 } else { -1.0 })
}

/// `||B - V R||_F^2`.
pub fn quantization_loss(codes: &DMatrix<f64>, projected: &DMatrix<f64>, rotation: &DMatrix<f64>) -> f64 {
    (codes - projected * rotation).norm_squared()
}

/// Trains an ITQ model with `code_length` bits.
///
/// Training rows are put in a canonical order first so the model does not
/// depend on the order in which frames were supplied. Exactly `iterations`
/// alternation steps are run.
pub fn train_itq<R: AsRef<[f64]>>(
    features: &[R],
    code_length: usize,
    iterations: usize,
    seed: u64,
) -> Result<ItqModel> {
    if code_length == 0 {
        return Err(Error::InvalidInput("code length must be at least 1".into()));
    }
    if features.is_empty() {
        return Err(Error::InvalidInput("no training features".into()));
    }
    let dim = features[0].as_ref().len();
    if code_length > dim {
        return Err(Error::InvalidInput(format!(
            "code length {code_length} exceeds feature dimension {dim}"
        )));
    }
    let mut rows: Vec<&[f64]> = features.iter().map(AsRef::as_ref).collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(a.len().cmp(&b.len()))
    });

    if rows.len() < 2 {
        return Err(Error::RankDeficient {
            required: code_length,
            achievable: 0,
        });
    }
    let pca = fit_pca(&rows, code_length)?;
    if pca.effective_rank() < code_length {
        return Err(Error::RankDeficient {
            required: code_length,
            achievable: pca.effective_rank(),
        });
    }
    let projection = pca.components().clone();
    let mean = pca.mean().to_vec();
    let n = rows.len();
    let centered = DMatrix::from_fn(n, dim, |i, j| rows[i][j] - mean[j]);
    let projected = centered * &projection;

    let mut rotation = random_orthogonal(code_length, seed);
    let mut codes = sign_matrix(&(&projected * &rotation));
    let mut loss_history = Vec::with_capacity(iterations + 1);
    loss_history.push(quantization_loss(&codes, &projected, &rotation));

    for _ in 0..iterations {
        codes = sign_matrix(&(&projected * &rotation));
        let cross = projected.transpose() * &codes;
        let svd = SVD::new(cross, true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        rotation = u * v_t;
        debug_assert!(
            (rotation.transpose() * &rotation - DMatrix::<f64>::identity(code_length, code_length)).amax() < 1e-8,
            "ITQ rotation lost orthogonality"
        );
        loss_history.push(quantization_loss(&codes, &projected, &rotation));
    }

    Ok(ItqModel {
        mean,
        projection,
        rotation,
        iterations_used: iterations,
        loss_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn gaussian_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    fn is_orthogonal(m: &DMatrix<f64>) -> bool {
        (m.transpose() * m - DMatrix::identity(m.ncols(), m.ncols())).amax() < 1e-8
    }

    #[test]
    fn runs_requested_iterations() {
        let rows = gaussian_rows(200, 24, 1);
        let m = train_itq(&rows, 16, 50, 9).unwrap();
        assert_eq!(m.iterations_used(), 50);
        assert_eq!(m.loss_history().len(), 51);
        assert!(is_orthogonal(m.rotation()));
        assert!(is_orthogonal(m.projection()));
    }

    #[test]
    fn zero_iterations_keeps_initial_rotation() {
        let rows = gaussian_rows(50, 8, 2);
        let m = train_itq(&rows, 4, 0, 77).unwrap();
        assert_eq!(m.rotation(), &random_orthogonal(4, 77));
        assert!(is_orthogonal(m.rotation()));
    }

    #[test]
    fn corner_data_loss_does_not_grow() {
        let mut rows = Vec::new();
        for _ in 0..5 {
            for (x, y) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                rows.push(vec![x, y]);
            }
        }
        let m = train_itq(&rows, 2, 30, 3).unwrap();
        // Re-evaluate the loss from scratch for the initial and final rotation.
        let v = DMatrix::from_fn(rows.len(), 2, |i, j| rows[i][j]) * m.projection();
        let brute = |r: &DMatrix<f64>| {
            let z = &v * r;
            z.iter().map(|&x| (if x >= 0.0 { 1.0 } else { -1.0 } - x).powi(2)).sum::<f64>()
        };
        let start = brute(&random_orthogonal(2, 3));
        let end = brute(m.rotation());
        assert!(end <= start + 1e-9, "{end} > {start}");
        assert!((m.loss_history()[0] - start).abs() < 1e-9);
    }

    #[test]
    fn mean_encodes_to_all_ones() {
        let rows = gaussian_rows(40, 6, 4);
        let m = train_itq(&rows, 5, 10, 0).unwrap();
        let code = m.encode(m.mean()).unwrap();
        assert!((0..5).all(|j| code.bit(j)));
        assert_eq!(code, m.encode(m.mean()).unwrap());
        assert!(m.encode(&[0.0; 3]).is_err());
    }

    #[test]
    fn separated_clusters_get_different_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 10;
        let center_a: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let center_b: Vec<f64> = center_a.iter().map(|c| -c).collect();
        let mut rows = Vec::new();
        for center in [&center_a, &center_b] {
            for _ in 0..100 {
                rows.push(
                    center
                        .iter()
                        .map(|c| c + 0.3 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                        .collect::<Vec<f64>>(),
                );
            }
        }
        let m = train_itq(&rows, 8, 50, 11).unwrap();
        let ca = m.encode(&center_a).unwrap();
        let cb = m.encode(&center_b).unwrap();
        assert!(hamming(&ca, &cb).unwrap() >= 1);
    }

    #[test]
    fn rank_deficiency_names_achievable_rank() {
        // Three points span a 2-D affine subspace.
        let rows = vec![vec![0.0, 0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 1.0, 0.0, 1.0]];
        match train_itq(&rows, 3, 5, 0) {
            Err(Error::RankDeficient { required: 3, achievable: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn training_order_does_not_matter() {
        let rows = gaussian_rows(120, 12, 6);
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(99));
        let a = train_itq(&rows, 8, 20, 42).unwrap();
        let b = train_itq(&shuffled, 8, 20, 42).unwrap();
        for x in gaussian_rows(30, 12, 7) {
            assert_eq!(a.encode(&x).unwrap(), b.encode(&x).unwrap());
        }
    }

    #[test]
    fn hamming_basics() {
        let c = BinaryCode::from_u64(0b1010, 4);
        assert_eq!(hamming(&c, &c).unwrap(), 0);
        assert_eq!(hamming(&c, &BinaryCode::from_u64(0b0010, 4)).unwrap(), 1);
        assert!(hamming(&c, &BinaryCode::from_u64(0, 5)).is_err());
        assert_eq!(c.to_string(), "0101");
    }

    #[test]
    fn hamming_is_a_metric_on_small_codes() {
        let codes: Vec<BinaryCode> = (0..64u64).map(|b| BinaryCode::from_u64(b, 6)).collect();
        for a in &codes {
            for b in &codes {
                let ab = hamming(a, b).unwrap();
                assert_eq!(ab, hamming(b, a).unwrap());
                assert_eq!(ab == 0, a == b);
                for c in &codes {
                    assert!(hamming(a, c).unwrap() <= ab + hamming(b, c).unwrap());
                }
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pyrh");
        let m = train_itq(&gaussian_rows(30, 6, 8), 4, 5, 1).unwrap();
        m.save(&path).unwrap();
        let back = ItqModel::load(&path).unwrap();
        assert_eq!(back.rotation(), m.rotation());
        assert_eq!(back.projection(), m.projection());
        assert_eq!(back.iterations_used(), 5);
        let x = vec![0.3, -1.0, 2.0, 0.0, 1.0, -0.5];
        assert_eq!(back.encode(&x).unwrap(), m.encode(&x).unwrap());
    }

    proptest! {
        #[test]
        fn hamming_matches_bit_loop(a in any::<u16>(), b in any::<u16>()) {
            let ca = BinaryCode::from_u64(a as u64, 16);
            let cb = BinaryCode::from_u64(b as u64, 16);
            let naive = (0..16).filter(|&j| (a >> j) & 1 != (b >> j) & 1).count() as u32;
            prop_assert_eq!(hamming(&ca, &cb).unwrap(), naive);
        }

        #[test]
        fn wide_codes_round_trip_bits(bits in proptest::collection::vec(any::<bool>(), 1..200)) {
            let c = BinaryCode::from_bits(&bits);
            prop_assert_eq!(c.len(), bits.len());
            for (j, &b) in bits.iter().enumerate() {
                prop_assert_eq!(c.bit(j), b);
            }
        }
    }
}
