//! Symmetric band matrices and the Gaussian Markov random field kernel.
//!
//! The latent multivariate process lives on a sorted time axis with `m`
//! cores per time. Nodes are ordered time-major, core-minor (`i * m + c`),
//! so the Kronecker precision `Q_t ⊗ (v²Σ)⁻¹` of a tridiagonal `Q_t` has
//! exactly `2m - 1` sub-diagonals. Everything here works in `O(dim · bw²)`
//! without forming dense matrices.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};

/// Symmetric matrix stored as its lower band.
///
/// Row `i` holds entries `(i, i - d)` for `d = 0..=bandwidth` at
/// `data[i * (bandwidth + 1) + d]`; entries above the matrix start are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    dim: usize,
    bandwidth: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(dim: usize, bandwidth: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("band matrix must have dim >= 1"));
        }
        let bandwidth = bandwidth.min(dim - 1);
        Ok(Self {
            dim,
            bandwidth,
            data: vec![0.0; dim * (bandwidth + 1)],
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut m = Self::zeros(dim, 0)?;
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        Ok(m)
    }

    /// Build from a dense symmetric matrix, keeping `bandwidth` sub-diagonals.
    pub fn from_dense(dense: &DMatrix<f64>, bandwidth: usize) -> Result<Self> {
        if dense.nrows() != dense.ncols() {
            return Err(invalid("dense matrix must be square"));
        }
        let mut m = Self::zeros(dense.nrows(), bandwidth)?;
        for i in 0..m.dim {
            for j in i.saturating_sub(m.bandwidth)..=i {
                m.set(i, j, dense[(i, j)]);
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let d = i - j;
        (d <= self.bandwidth).then(|| i * (self.bandwidth + 1) + d)
    }

    /// Entry `(i, j)`; zero outside the band.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.idx(i, j).map_or(0.0, |k| self.data[k])
    }

    /// Set entry `(i, j)` (and by symmetry `(j, i)`).
    ///
    /// Panics if the entry lies outside the band.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let k = self.idx(i, j).expect("entry outside band");
        self.data[k] = value;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let k = self.idx(i, j).expect("entry outside band");
        self.data[k] += value;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let p = self.bandwidth;
        let mut y = vec![0.0; self.dim];
        for i in 0..self.dim {
            let row = &self.data[i * (p + 1)..(i + 1) * (p + 1)];
            y[i] += row[0] * x[i];
            for d in 1..=p.min(i) {
                let j = i - d;
                y[i] += row[d] * x[j];
                y[j] += row[d] * x[i];
            }
        }
        Ok(y)
    }

    /// `xᵀ Q x`.
    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        let qx = self.mul_vec(x)?;
        Ok(qx.iter().zip(x).map(|(a, b)| a * b).sum())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

/// Lower-triangular band Cholesky factor `L` with `L Lᵀ = Q`.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    dim: usize,
    bandwidth: usize,
    /// Same layout as [`BandMatrix`]: `data[i * (bw + 1) + d] = L[i, i - d]`.
    data: Vec<f64>,
    log_det: f64,
}

impl BandCholesky {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// `log |Q| = 2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    #[inline]
    fn l(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.bandwidth + 1) + (i - j)]
    }

    /// Entry `L[i, j]` of the factor (zero outside the lower band).
    pub fn factor_entry(&self, i: usize, j: usize) -> f64 {
        if j > i || i - j > self.bandwidth {
            0.0
        } else {
            self.l(i, j)
        }
    }

    /// Solve `L y = b` in place.
    fn forward(&self, b: &mut [f64]) {
        let p = self.bandwidth;
        for i in 0..self.dim {
            let mut s = b[i];
            for k in i.saturating_sub(p)..i {
                s -= self.l(i, k) * b[k];
            }
            b[i] = s / self.l(i, i);
        }
    }

    /// Solve `Lᵀ x = y` in place.
    fn backward(&self, y: &mut [f64]) {
        let p = self.bandwidth;
        for i in (0..self.dim).rev() {
            let mut s = y[i];
            for k in i + 1..(i + p + 1).min(self.dim) {
                s -= self.l(k, i) * y[k];
            }
            y[i] = s / self.l(i, i);
        }
    }
}

/// Band Cholesky factorization without pivoting.
pub fn cholesky(q: &BandMatrix) -> Result<BandCholesky> {
    let n = q.dim;
    let p = q.bandwidth;
    let w = p + 1;
    let mut l = vec![0.0; n * w];
    let mut log_det = 0.0;
    for i in 0..n {
        let lo = i.saturating_sub(p);
        for j in lo..i {
            let mut s = q.get(i, j);
            // columns shared by rows i and j inside both bands
            for k in lo.max(j.saturating_sub(p))..j {
                s -= l[i * w + (i - k)] * l[j * w + (j - k)];
            }
            l[i * w + (i - j)] = s / l[j * w];
        }
        let mut d = q.get(i, i);
        for k in lo..i {
            let v = l[i * w + (i - k)];
            d -= v * v;
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: i, value: d });
        }
        let root = d.sqrt();
        l[i * w] = root;
        log_det += 2.0 * root.ln();
    }
    Ok(BandCholesky {
        dim: n,
        bandwidth: p,
        data: l,
        log_det,
    })
}

/// Solve `Q x = rhs` given the factor of `Q`.
pub fn solve(chol: &BandCholesky, rhs: &[f64]) -> Result<Vec<f64>> {
    check_dim(chol.dim, rhs.len())?;
    let mut x = rhs.to_vec();
    chol.forward(&mut x);
    chol.backward(&mut x);
    Ok(x)
}

/// Diagonal of `Q⁻¹` from the band factor, using the backward recursion
/// `Σ_ij = δ_ij / L_ii² - (1 / L_ii) Σ_{k>i} L_ki Σ_kj` restricted to the band.
pub fn marginal_variances(chol: &BandCholesky) -> Vec<f64> {
    let n = chol.dim;
    let p = chol.bandwidth;
    let w = p + 1;
    // band of the inverse, same layout as the factor
    let mut cov = vec![0.0; n * w];
    let get = |cov: &[f64], a: usize, b: usize| {
        let (a, b) = if a >= b { (a, b) } else { (b, a) };
        cov[a * w + (a - b)]
    };
    for i in (0..n).rev() {
        let lii = chol.l(i, i);
        let hi = (i + p).min(n - 1);
        for j in (i..=hi).rev() {
            let mut s = 0.0;
            for k in i + 1..=hi {
                s += chol.l(k, i) * get(&cov, k, j);
            }
            let v = if j == i {
                1.0 / (lii * lii) - s / lii
            } else {
                -s / lii
            };
            cov[j * w + (j - i)] = v;
        }
    }
    (0..n).map(|i| cov[i * w]).collect()
}

/// Exact draw from `N(mean, Q⁻¹)`: `mean + L⁻ᵀ z` with `z ~ N(0, I)`.
pub fn sample_gaussian<R: Rng + ?Sized>(
    chol: &BandCholesky,
    mean: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_dim(chol.dim, mean.len())?;
    let mut u: Vec<f64> = (0..chol.dim).map(|_| rng.sample(StandardNormal)).collect();
    chol.backward(&mut u);
    Ok(u.iter().zip(mean).map(|(a, b)| a + b).collect())
}

/// Precision of a univariate independent-increments process on irregular times.
#[derive(Debug, Clone)]
pub struct IncrementPrecision {
    times: Vec<f64>,
    q: BandMatrix,
}

impl IncrementPrecision {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn matrix(&self) -> &BandMatrix {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Tridiagonal intrinsic precision with quadratic form `Σ (x_{i+1} - x_i)² / δ_i`.
pub fn build_increment_precision(times: &[f64]) -> Result<IncrementPrecision> {
    let n = times.len();
    if n < 2 {
        return Err(invalid("increment precision needs at least two times"));
    }
    let mut q = BandMatrix::zeros(n, 1)?;
    for i in 0..n - 1 {
        let gap = times[i + 1] - times[i];
        if !(gap > 0.0) || !gap.is_finite() {
            return Err(invalid(format!(
                "times must be strictly increasing (t[{i}] = {}, t[{}] = {})",
                times[i],
                i + 1,
                times[i + 1]
            )));
        }
        let r = 1.0 / gap;
        q.add(i, i, r);
        q.add(i + 1, i + 1, r);
        q.set(i + 1, i, -r);
    }
    Ok(IncrementPrecision {
        times: times.to_vec(),
        q,
    })
}

/// Inverse of a symmetric positive-definite `m × m` matrix.
pub(crate) fn spd_inverse(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if sigma.nrows() != sigma.ncols() {
        return Err(invalid("covariance matrix must be square"));
    }
    let chol = nalgebra::Cholesky::new(sigma.clone()).ok_or(Error::NotPositiveDefinite {
        pivot: 0,
        value: f64::NAN,
    })?;
    Ok(chol.inverse())
}

/// `Q_t ⊗ (v²Σ)⁻¹` under time-major node ordering (bandwidth `2m - 1`).
pub fn kronecker_precision(
    qt: &IncrementPrecision,
    v2: f64,
    sigma: &DMatrix<f64>,
) -> Result<BandMatrix> {
    if !(v2 > 0.0) {
        return Err(invalid("v2 must be positive"));
    }
    let inv = spd_inverse(sigma)? / v2;
    Ok(kronecker_with_inverse(qt, &inv))
}

/// Kronecker expansion given an already-inverted (and scaled) core block.
pub(crate) fn kronecker_with_inverse(qt: &IncrementPrecision, block: &DMatrix<f64>) -> BandMatrix {
    let m = block.nrows();
    let n = qt.len();
    let mut out = BandMatrix::zeros(n * m, 2 * m - 1).expect("non-empty");
    for i in 0..n {
        let diag = qt.q.get(i, i);
        for c in 0..m {
            for d in 0..=c {
                out.set(i * m + c, i * m + d, diag * block[(c, d)]);
            }
        }
        if i > 0 {
            let off = qt.q.get(i, i - 1);
            for c in 0..m {
                for d in 0..m {
                    out.set(i * m + c, (i - 1) * m + d, off * block[(c, d)]);
                }
            }
        }
    }
    out
}

/// `log |Q_x|` for the intrinsic prior, keeping only the `θ`-dependent part:
/// `-(n - 1) · log |v² Σ|`.
pub fn generalized_logdet_prior(v2: f64, sigma: &DMatrix<f64>, n: usize) -> Result<f64> {
    if !(v2 > 0.0) {
        return Err(invalid("v2 must be positive"));
    }
    let m = sigma.nrows() as f64;
    let chol = nalgebra::Cholesky::new(sigma.clone()).ok_or(Error::NotPositiveDefinite {
        pivot: 0,
        value: f64::NAN,
    })?;
    let log_det_sigma: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(-((n as f64) - 1.0) * (m * v2.ln() + log_det_sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn random_spd_band(dim: usize, bw: usize, seed: u64) -> BandMatrix {
        // diagonally dominant random band matrix
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = BandMatrix::zeros(dim, bw).unwrap();
        for i in 0..dim {
            for j in i.saturating_sub(bw)..i {
                m.set(i, j, rng.random_range(-1.0..1.0));
            }
        }
        for i in 0..dim {
            let off: f64 = (0..dim).filter(|&j| j != i).map(|j| m.get(i, j).abs()).sum();
            m.set(i, i, off + rng.random_range(0.1..2.0));
        }
        m
    }

    #[test]
    fn unit_gap_increment_precision() {
        let q = build_increment_precision(&[0.0, 1.0, 2.0]).unwrap();
        let m = q.matrix();
        assert_eq!((m.get(0, 0), m.get(1, 1), m.get(2, 2)), (1.0, 2.0, 1.0));
        assert_eq!((m.get(1, 0), m.get(2, 1), m.get(2, 0)), (-1.0, -1.0, 0.0));
    }

    #[test]
    fn half_gap_increment_precision() {
        let q = build_increment_precision(&[0.0, 0.5]).unwrap();
        assert_eq!(
            q.matrix().to_dense(),
            DMatrix::from_row_slice(2, 2, &[2.0, -2.0, -2.0, 2.0])
        );
    }

    #[test]
    fn increment_quadratic_form() {
        let q = build_increment_precision(&[0.0, 1.0, 3.0]).unwrap();
        assert_relative_eq!(q.matrix().quad_form(&[0.0, 1.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn increment_precision_rejects_ties() {
        assert!(build_increment_precision(&[0.0, 1.0, 1.0]).is_err());
        assert!(build_increment_precision(&[0.0]).is_err());
    }

    #[test]
    fn increment_rows_sum_to_zero() {
        let q = build_increment_precision(&[0.0, 0.3, 1.1, 1.15, 4.0]).unwrap();
        let ones = vec![1.0; 5];
        for v in q.matrix().mul_vec(&ones).unwrap() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn kronecker_single_core_scales() {
        let qt = build_increment_precision(&[0.0, 0.4, 1.0, 2.5]).unwrap();
        let qx = kronecker_precision(&qt, 2.0, &DMatrix::identity(1, 1)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_relative_eq!(qx.get(i, j), qt.matrix().get(i, j) / 2.0);
            }
        }
    }

    #[test]
    fn kronecker_independent_cores_interleave() {
        let qt = build_increment_precision(&[0.0, 0.4, 1.0]).unwrap();
        let qx = kronecker_precision(&qt, 1.0, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(qx.bandwidth(), 3);
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(qx.get(2 * i, 2 * j), qt.matrix().get(i, j));
                assert_relative_eq!(qx.get(2 * i + 1, 2 * j + 1), qt.matrix().get(i, j));
                assert_eq!(qx.get(2 * i, 2 * j + 1), 0.0);
            }
        }
    }

    #[test]
    fn kronecker_matches_dense_product() {
        let times = [0.0, 0.13, 0.5, 0.52, 1.4];
        let qt = build_increment_precision(&times).unwrap();
        let rho = 0.8;
        let v2 = 0.7;
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        let qx = kronecker_precision(&qt, v2, &sigma).unwrap();
        let dense = qt.matrix().to_dense().kronecker(&(sigma.try_inverse().unwrap() / v2));
        assert_eq!(qx.bandwidth(), 3);
        for i in 0..10 {
            for j in 0..10 {
                assert!((qx.get(i, j) - dense[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kronecker_rejects_indefinite_sigma() {
        let qt = build_increment_precision(&[0.0, 1.0]).unwrap();
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 1.5, 1.5, 1.0]);
        assert!(kronecker_precision(&qt, 1.0, &sigma).is_err());
    }

    #[test]
    fn cholesky_identity() {
        let c = cholesky(&BandMatrix::identity(4).unwrap()).unwrap();
        assert_eq!(c.log_det(), 0.0);
        assert_eq!(marginal_variances(&c), vec![1.0; 4]);
        assert_eq!(solve(&c, &[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn cholesky_two_by_two() {
        let q = BandMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]), 1)
            .unwrap();
        let c = cholesky(&q).unwrap();
        assert_relative_eq!(c.factor_entry(0, 0), 2.0);
        assert_relative_eq!(c.factor_entry(1, 0), 1.0);
        assert_relative_eq!(c.factor_entry(1, 1), 2f64.sqrt());
        assert_relative_eq!(c.log_det(), 8f64.ln(), epsilon = 1e-14);
        // [[4,2],[2,3]] x = (2,3): x = (0, 1)
        let x = solve(&c, &[2.0, 3.0]).unwrap();
        assert_relative_eq!(x[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(x[1], 1.0, epsilon = 1e-14);
        let v = marginal_variances(&c);
        assert_relative_eq!(v[0], 0.375, epsilon = 1e-14);
        assert_relative_eq!(v[1], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn cholesky_rejects_intrinsic_matrix() {
        let q = build_increment_precision(&[0.0, 1.0, 2.0]).unwrap();
        assert!(matches!(
            cholesky(q.matrix()),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn band_kernel_matches_dense_oracle() {
        for (seed, bw) in [(1u64, 1usize), (2, 3), (3, 5), (4, 0)] {
            let q = random_spd_band(60, bw, seed);
            let dense = q.to_dense();
            let c = cholesky(&q).unwrap();
            let dc = nalgebra::Cholesky::new(dense.clone()).unwrap();
            let dl = dc.l();
            for i in 0..60 {
                for j in 0..=i {
                    assert!((c.factor_entry(i, j) - dl[(i, j)]).abs() < 1e-10);
                }
            }
            let rhs: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
            let x = solve(&c, &rhs).unwrap();
            let dx = dc.solve(&nalgebra::DVector::from_vec(rhs.clone()));
            for i in 0..60 {
                assert!((x[i] - dx[i]).abs() < 1e-10);
            }
            let inv = dense.try_inverse().unwrap();
            for (i, v) in marginal_variances(&c).into_iter().enumerate() {
                assert!((v - inv[(i, i)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn solve_rejects_wrong_length() {
        let c = cholesky(&BandMatrix::identity(3).unwrap()).unwrap();
        assert!(matches!(
            solve(&c, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn generalized_logdet_cases() {
        let one = DMatrix::identity(1, 1);
        assert_relative_eq!(
            generalized_logdet_prior(std::f64::consts::E, &one, 3).unwrap(),
            -2.0,
            epsilon = 1e-14
        );
        assert_eq!(
            generalized_logdet_prior(1.0, &DMatrix::identity(2, 2), 7).unwrap(),
            0.0
        );
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]);
        let expected = -3.0 * (2.0 * 2f64.ln() + 0.36f64.ln());
        assert_relative_eq!(
            generalized_logdet_prior(2.0, &sigma, 4).unwrap(),
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn sampling_covariance_matches_inverse() {
        let q = BandMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]), 1)
            .unwrap();
        let c = cholesky(&q).unwrap();
        let mut rng = crate::rng::stream_rng(11, 0);
        let n = 100_000;
        let (mut s00, mut s01, mut s11) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = sample_gaussian(&c, &[0.0, 0.0], &mut rng).unwrap();
            s00 += x[0] * x[0];
            s01 += x[0] * x[1];
            s11 += x[1] * x[1];
        }
        let n = n as f64;
        assert!((s00 / n - 0.375).abs() / 0.375 < 0.02);
        assert!((s01 / n + 0.25).abs() / 0.25 < 0.02);
        assert!((s11 / n - 0.5).abs() / 0.5 < 0.02);
    }

    #[test]
    fn sampling_is_seeded_and_shifts_with_mean() {
        let q = random_spd_band(12, 3, 9);
        let c = cholesky(&q).unwrap();
        let zero = vec![0.0; 12];
        let shift = vec![2.5; 12];
        let a = sample_gaussian(&c, &zero, &mut crate::rng::stream_rng(5, 3)).unwrap();
        let b = sample_gaussian(&c, &zero, &mut crate::rng::stream_rng(5, 3)).unwrap();
        let s = sample_gaussian(&c, &shift, &mut crate::rng::stream_rng(5, 3)).unwrap();
        assert_eq!(a, b);
        for i in 0..12 {
            assert!((s[i] - a[i] - 2.5).abs() < 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn quad_form_ignores_level(
                gaps in prop::collection::vec(0.01f64..3.0, 1..20),
                shift in -50.0f64..50.0,
                rho in 0.0f64..0.95,
            ) {
                let mut times = vec![0.0];
                for g in &gaps { times.push(times.last().unwrap() + g); }
                let qt = build_increment_precision(&times).unwrap();
                let sigma = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
                let qx = kronecker_precision(&qt, 0.8, &sigma).unwrap();
                let x: Vec<f64> = (0..qx.dim()).map(|i| (i as f64 * 1.3).cos()).collect();
                // constant per core
                let shifted: Vec<f64> = x.iter().enumerate()
                    .map(|(i, v)| v + if i % 2 == 0 { shift } else { -0.5 * shift })
                    .collect();
                let a = qx.quad_form(&x).unwrap();
                let b = qx.quad_form(&shifted).unwrap();
                prop_assert!((a - b).abs() <= 1e-8 * (1.0 + a.abs()));
            }

            #[test]
            fn solve_round_trip(seed in 0u64..1000, bw in 0usize..6, dim in 1usize..80) {
                let q = random_spd_band(dim, bw, seed);
                let c = cholesky(&q).unwrap();
                let rhs: Vec<f64> = (0..dim).map(|i| ((i + 1) as f64 * 0.71).sin() + 0.1).collect();
                let x = solve(&c, &rhs).unwrap();
                let back = q.mul_vec(&x).unwrap();
                let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let err = back.iter().zip(&rhs).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                prop_assert!(err <= 1e-8 * scale);
            }

            #[test]
            fn marginal_variances_match_dense(seed in 0u64..1000, bw in 0usize..6, dim in 1usize..100) {
                let q = random_spd_band(dim, bw, seed);
                let inv = q.to_dense().try_inverse().unwrap();
                let v = marginal_variances(&cholesky(&q).unwrap());
                for i in 0..dim {
                    prop_assert!((v[i] - inv[(i, i)]).abs() <= 1e-10 * inv[(i, i)].abs().max(1.0));
                }
            }
        }
    }
}
