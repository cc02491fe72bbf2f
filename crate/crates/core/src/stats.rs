//! Kernel two-sample machinery: RBF kernel, unbiased MMD², the relative
//! similarity test, and the bitwidth sweep built on top of it.
//!
//! The relative test compares two candidate sample sets `Y` (quantized
//! model) and `Z` (full-precision model) against a reference set `X`
//! (training data). Its p-value is `Phi(-(MMD²(X,Y) - MMD²(X,Z)) / sd)`
//! where `sd` estimates the standard deviation of the statistic
//! difference; `p > 0.5` means `Y` looks closer to `X` than `Z` does.
//!
//! Variance and covariance of the two MMD² statistics are estimated with a
//! seeded bootstrap over sample rows. Each set's resample index stream is
//! derived from the global seed and the set's *contents*, not from its
//! argument position, so swapping the roles of `Y` and `Z` reproduces the
//! same per-set resamples and the test is exactly antisymmetric:
//! `p(X; Y, Z) + p(X; Z, Y) = 1`. The `X` resamples are shared between the
//! two statistics of one call, which is what makes their covariance
//! meaningful. Bootstrap reduction order is fixed, so results are
//! bit-reproducible for a given seed.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{infer, LatentSampler, NetworkSpec, WeightStore};
use crate::quant::{quantized_infer, FixedPointFormat};

/// Resamples drawn when estimating the variance of an MMD² difference.
pub const DEFAULT_BOOTSTRAP: usize = 200;

/// Denominator floor below which the z-score is considered degenerate.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// An `n x d` matrix of flattened samples, one row per generated output.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl SampleSet {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::shape(
                "sample set",
                format!("{} values for {n}x{d}", n * d),
                format!("{}", data.len()),
            ));
        }
        Ok(SampleSet { n, d, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * d);
        for row in &rows {
            if row.len() != d {
                return Err(Error::DimMismatch { left: d, right: row.len() });
            }
            data.extend_from_slice(row);
        }
        Ok(SampleSet { n, d, data })
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d.max(1))
    }

    /// Stacks two sets with equal column counts.
    pub fn concat(&self, other: &SampleSet) -> Result<SampleSet> {
        if self.d != other.d {
            return Err(Error::DimMismatch { left: self.d, right: other.d });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        SampleSet::new(self.n + other.n, self.d, data)
    }

    /// Writes rows as comma-separated decimals with 17 significant digits
    /// (exact f64 round trip), no header, LF line endings.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for row in self.rows() {
            let line = row
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect::<Vec<_>>()
                .join(",");
            out.write_all(line.as_bytes())?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<SampleSet> {
        let mut rows = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|field| {
                    field
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("samples line {}: {e}", lineno + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        SampleSet::from_rows(rows)
    }
}

/// Radial basis function kernel `exp(-||x - y||^2 / (2 sigma^2))`.
pub fn rbf_kernel(x: &[f64], y: &[f64], sigma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimMismatch { left: x.len(), right: y.len() });
    }
    debug_assert!(sigma > 0.0);
    let sq_dist: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-sq_dist / (2.0 * sigma * sigma)).exp())
}

/// Median of all pairwise Euclidean distances, the standard bandwidth
/// heuristic. Falls back to the smallest nonzero distance when the median
/// is zero; errors when every distance is zero.
pub fn median_heuristic(pooled: &SampleSet) -> Result<f64> {
    let n = pooled.n_rows();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let mut distances = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let sq: f64 = pooled
                .row(i)
                .iter()
                .zip(pooled.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            distances.push(sq.sqrt());
        }
    }
    distances.sort_by(f64::total_cmp);
    let mid = distances.len() / 2;
    let median = if distances.len() % 2 == 1 {
        distances[mid]
    } else {
        0.5 * (distances[mid - 1] + distances[mid])
    };
    if median > 0.0 {
        return Ok(median);
    }
    match distances.iter().find(|d| **d > 0.0) {
        Some(&smallest) => Ok(smallest),
        None => Err(Error::DegenerateSamples),
    }
}

/// Kernel Gram matrix between the rows of two sets, flattened row-major.
fn gram(a: &SampleSet, b: &SampleSet, sigma: f64) -> Result<Vec<f64>> {
    let mut k = Vec::with_capacity(a.n_rows() * b.n_rows());
    for i in 0..a.n_rows() {
        for j in 0..b.n_rows() {
            k.push(rbf_kernel(a.row(i), b.row(j), sigma)?);
        }
    }
    Ok(k)
}

fn check_pair(x: &SampleSet, y: &SampleSet) -> Result<()> {
    if x.n_cols() != y.n_cols() {
        return Err(Error::DimMismatch { left: x.n_cols(), right: y.n_cols() });
    }
    for (set, n) in [("first", x.n_rows()), ("second", y.n_rows())] {
        if n < 2 {
            let _ = set;
            return Err(Error::TooFewSamples { needed: 2, got: n });
        }
    }
    Ok(())
}

/// Unbiased MMD² estimate between two sample sets. May be negative.
pub fn mmd2_unbiased(x: &SampleSet, y: &SampleSet, sigma: f64) -> Result<f64> {
    check_pair(x, y)?;
    let (m, n) = (x.n_rows(), y.n_rows());
    let k_xx = gram(x, x, sigma)?;
    let k_yy = gram(y, y, sigma)?;
    let k_xy = gram(x, y, sigma)?;
    Ok(mmd2_from_grams(&k_xx, &k_yy, &k_xy, m, n))
}

fn offdiag_mean(k: &[f64], n: usize) -> f64 {
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += k[i * n + j];
            }
        }
    }
    sum / (n * (n - 1)) as f64
}

fn mmd2_from_grams(k_xx: &[f64], k_yy: &[f64], k_xy: &[f64], m: usize, n: usize) -> f64 {
    let cross: f64 = k_xy.iter().sum();
    offdiag_mean(k_xx, m) + offdiag_mean(k_yy, n) - 2.0 * cross / (m * n) as f64
}

/// Outcome of the relative similarity test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RmmdResult {
    pub mmd_xy: f64,
    pub mmd_xz: f64,
    pub var_xy: f64,
    pub var_xz: f64,
    pub cov_xyxz: f64,
    pub p: f64,
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// FNV-1a hash of a sample set's shape and contents, mixed with the global
/// seed. Used to attach bootstrap randomness to data rather than to
/// argument position.
fn content_seed(seed: u64, set: &SampleSet) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    eat(&seed.to_le_bytes());
    eat(&(set.n as u64).to_le_bytes());
    eat(&(set.d as u64).to_le_bytes());
    for v in &set.data {
        eat(&v.to_bits().to_le_bytes());
    }
    h
}

/// Multiplicity vector of one bootstrap resample of `n` rows.
fn resample_counts(rng: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n];
    for _ in 0..n {
        counts[rng.gen_range(0..n)] += 1.0;
    }
    counts
}

/// `sum_{i != j} c_i c_j K[i, j]` over a resample given by multiplicities.
fn resampled_offdiag(k: &[f64], c: &[f64]) -> f64 {
    let n = c.len();
    let mut full = 0.0;
    let mut diag = 0.0;
    for i in 0..n {
        let ci = c[i];
        if ci == 0.0 {
            continue;
        }
        let row = &k[i * n..(i + 1) * n];
        let mut acc = 0.0;
        for j in 0..n {
            acc += row[j] * c[j];
        }
        full += ci * acc;
        diag += ci * row[i];
    }
    full - diag
}

fn resampled_cross(k_xy: &[f64], cx: &[f64], cy: &[f64]) -> f64 {
    let n = cy.len();
    let mut total = 0.0;
    for (i, &ci) in cx.iter().enumerate() {
        if ci == 0.0 {
            continue;
        }
        let row = &k_xy[i * n..(i + 1) * n];
        let mut acc = 0.0;
        for j in 0..n {
            acc += row[j] * cy[j];
        }
        total += ci * acc;
    }
    total
}

fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - mean_a) * (y - mean_b))
        .sum::<f64>()
        / (n - 1.0)
}

/// Relative similarity test: is `Y` closer to `X` than `Z` is?
///
/// Returns the two MMD² statistics, their bootstrap variance/covariance
/// estimates and the p-value. When the two statistics are exactly equal
/// the p-value is exactly 0.5 regardless of the variance estimate;
/// otherwise a denominator below [`VARIANCE_FLOOR`] is an error.
pub fn rmmd_pvalue(
    x: &SampleSet,
    y: &SampleSet,
    z: &SampleSet,
    sigma: f64,
    bootstrap: usize,
    seed: u64,
) -> Result<RmmdResult> {
    check_pair(x, y)?;
    check_pair(x, z)?;
    let (m, n, r) = (x.n_rows(), y.n_rows(), z.n_rows());

    let k_xx = gram(x, x, sigma)?;
    let k_yy = gram(y, y, sigma)?;
    let k_zz = gram(z, z, sigma)?;
    let k_xy = gram(x, y, sigma)?;
    let k_xz = gram(x, z, sigma)?;

    let mmd_xy = mmd2_from_grams(&k_xx, &k_yy, &k_xy, m, n);
    let mmd_xz = mmd2_from_grams(&k_xx, &k_zz, &k_xz, m, r);

    let mut rng_x = ChaCha12Rng::seed_from_u64(content_seed(seed, x));
    let mut rng_y = ChaCha12Rng::seed_from_u64(content_seed(seed, y));
    let mut rng_z = ChaCha12Rng::seed_from_u64(content_seed(seed, z));

    let mut boot_xy = Vec::with_capacity(bootstrap);
    let mut boot_xz = Vec::with_capacity(bootstrap);
    for _ in 0..bootstrap {
        let cx = resample_counts(&mut rng_x, m);
        let cy = resample_counts(&mut rng_y, n);
        let cz = resample_counts(&mut rng_z, r);
        let term_xx = resampled_offdiag(&k_xx, &cx) / (m * (m - 1)) as f64;
        boot_xy.push(
            term_xx + resampled_offdiag(&k_yy, &cy) / (n * (n - 1)) as f64
                - 2.0 * resampled_cross(&k_xy, &cx, &cy) / (m * n) as f64,
        );
        boot_xz.push(
            term_xx + resampled_offdiag(&k_zz, &cz) / (r * (r - 1)) as f64
                - 2.0 * resampled_cross(&k_xz, &cx, &cz) / (m * r) as f64,
        );
    }

    let var_xy = variance(&boot_xy);
    let var_xz = variance(&boot_xz);
    let cov_xyxz = covariance(&boot_xy, &boot_xz);

    let numerator = mmd_xy - mmd_xz;
    let denominator = var_xy + var_xz - 2.0 * cov_xyxz;
    let p = if numerator == 0.0 {
        0.5
    } else {
        if denominator < VARIANCE_FLOOR {
            return Err(Error::DegenerateVariance { denominator, floor: VARIANCE_FLOOR });
        }
        normal_cdf(-numerator / denominator.sqrt())
    };

    Ok(RmmdResult { mmd_xy, mmd_xz, var_xy, var_xz, cov_xyxz, p })
}

/// Cost and merit attached to one bitwidth by the user-supplied table
/// (the hardware-measured axes of the quality/complexity trade-off).
#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize, Serialize)]
pub struct CostEntry {
    pub cost: f64,
    pub merit: f64,
}

/// One row of the bitwidth sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub bits: u32,
    pub p: f64,
    pub p_per_cost: f64,
    pub p_times_merit: f64,
}

/// Scores each fixed-point format by sampling the quantized and the
/// full-precision network over the same latent stream and running the
/// relative test against the training set. The kernel bandwidth is the
/// median heuristic over the pooled `X`, `Y`, `Z` rows of each arm.
pub fn bitwidth_sweep(
    net: &NetworkSpec,
    weights: &WeightStore,
    training: &SampleSet,
    formats: &[FixedPointFormat],
    samples_per_arm: usize,
    seed: u64,
    cost: &BTreeMap<u32, CostEntry>,
) -> Result<Vec<SweepRow>> {
    if formats.is_empty() {
        return Err(Error::Parse("bitwidth sweep: empty format list".into()));
    }
    for fmt in formats {
        if !cost.contains_key(&fmt.total_bits) {
            return Err(Error::Parse(format!(
                "cost table has no entry for bitwidth {}",
                fmt.total_bits
            )));
        }
    }
    let dim = net
        .latent_dim()
        .ok_or_else(|| Error::Parse("network does not determine a latent dimension".into()))?;
    let latents = LatentSampler::new(dim, seed).draw_batch(samples_per_arm);

    let mut full_rows = Vec::with_capacity(samples_per_arm);
    for z in &latents {
        full_rows.push(infer(net, weights, z)?.data);
    }
    let z_set = SampleSet::from_rows(full_rows)?;

    let mut rows = Vec::with_capacity(formats.len());
    for fmt in formats {
        let mut quant_rows = Vec::with_capacity(samples_per_arm);
        for z in &latents {
            quant_rows.push(quantized_infer(net, weights, z, *fmt)?.data);
        }
        let y_set = SampleSet::from_rows(quant_rows)?;
        let pooled = training.concat(&y_set)?.concat(&z_set)?;
        let sigma = median_heuristic(&pooled)?;
        let result = rmmd_pvalue(training, &y_set, &z_set, sigma, DEFAULT_BOOTSTRAP, seed)?;
        let entry = cost[&fmt.total_bits];
        rows.push(SweepRow {
            bits: fmt.total_bits,
            p: result.p,
            p_per_cost: result.p / entry.cost,
            p_times_merit: result.p * entry.merit,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn gaussian_set(rng: &mut ChaCha12Rng, n: usize, d: usize, mean: f64) -> SampleSet {
        let normal = Normal::new(mean, 1.0).unwrap();
        let rows = (0..n)
            .map(|_| (0..d).map(|_| normal.sample(rng)).collect())
            .collect();
        SampleSet::from_rows(rows).unwrap()
    }

    fn one_dim(values: &[f64]) -> SampleSet {
        SampleSet::from_rows(values.iter().map(|v| vec![*v]).collect()).unwrap()
    }

    #[test]
    fn rbf_kernel_examples() {
        let x = [1.0, 2.0];
        assert_eq!(rbf_kernel(&x, &x, 1.0).unwrap(), 1.0);
        let k = rbf_kernel(&[0.0], &[1.0], 1.0).unwrap();
        assert!((k - (-0.5f64).exp()).abs() < 1e-15);
        let far = rbf_kernel(&[0.0], &[100.0], 1.0).unwrap();
        assert!(far > 0.0 || far == 0.0);
        assert!(far < 1e-300);
        assert!(matches!(
            rbf_kernel(&[0.0], &[0.0, 1.0], 1.0),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn median_heuristic_examples() {
        assert_eq!(median_heuristic(&one_dim(&[0.0, 1.0, 2.0])).unwrap(), 1.0);
        assert_eq!(median_heuristic(&one_dim(&[0.0, 3.0])).unwrap(), 3.0);
        assert!(matches!(
            median_heuristic(&one_dim(&[2.0, 2.0, 2.0])),
            Err(Error::DegenerateSamples)
        ));
        // Zero median with a nonzero pair falls back to that distance.
        assert_eq!(
            median_heuristic(&one_dim(&[1.0, 1.0, 1.0, 1.0, 5.0])).unwrap(),
            4.0
        );
    }

    #[test]
    fn mmd_of_identical_constant_sets_is_zero() {
        let x = one_dim(&[3.0, 3.0]);
        assert_eq!(mmd2_unbiased(&x, &x, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn mmd_hand_computed_two_point_sets() {
        let x = one_dim(&[0.0, 1.0]);
        let y = one_dim(&[0.0, 1.0]);
        let got = mmd2_unbiased(&x, &y, 1.0).unwrap();
        let expected = (-0.5f64).exp() - 1.0;
        assert!((got - expected).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn mmd_same_distribution_is_near_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(71);
        let x = gaussian_set(&mut rng, 500, 1, 0.0);
        let y = gaussian_set(&mut rng, 500, 1, 0.0);
        let est = mmd2_unbiased(&x, &y, 1.0).unwrap();
        assert!(est.abs() < 0.02, "estimate {est}");
    }

    #[test]
    fn mmd_unbiasedness_over_repeated_trials() {
        let mut rng = ChaCha12Rng::seed_from_u64(72);
        let mut mean = 0.0;
        let trials = 200;
        for _ in 0..trials {
            let x = gaussian_set(&mut rng, 100, 4, 0.0);
            let y = gaussian_set(&mut rng, 100, 4, 0.0);
            mean += mmd2_unbiased(&x, &y, 2.0).unwrap();
        }
        mean /= trials as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn kernel_matrix_is_positive_semidefinite() {
        // Cholesky with a tiny jitter must succeed on a spot-check matrix.
        let mut rng = ChaCha12Rng::seed_from_u64(73);
        let set = gaussian_set(&mut rng, 12, 3, 0.0);
        let sigma = median_heuristic(&set).unwrap();
        let n = set.n_rows();
        let k = gram(&set, &set, sigma).unwrap();
        let mut l = vec![0.0f64; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = k[i * n + j];
                if i == j {
                    sum += 1e-12;
                }
                for t in 0..j {
                    sum -= l[i * n + t] * l[j * n + t];
                }
                if i == j {
                    assert!(sum > 0.0, "pivot {sum} at {i}");
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-12);
        assert!((normal_cdf(-1.0) - 0.15865525393145707).abs() < 1e-12);
        assert!((normal_cdf(1.0) + normal_cdf(-1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rmmd_equal_candidates_give_half() {
        let mut rng = ChaCha12Rng::seed_from_u64(74);
        let x = gaussian_set(&mut rng, 20, 2, 0.0);
        let y = gaussian_set(&mut rng, 20, 2, 0.5);
        let result = rmmd_pvalue(&x, &y, &y.clone(), 1.0, 100, 5).unwrap();
        assert_eq!(result.p, 0.5);
        assert_eq!(result.mmd_xy, result.mmd_xz);
    }

    #[test]
    fn rmmd_is_antisymmetric_under_candidate_swap() {
        let mut rng = ChaCha12Rng::seed_from_u64(75);
        for _ in 0..20 {
            let x = gaussian_set(&mut rng, 24, 3, 0.0);
            let y = gaussian_set(&mut rng, 24, 3, 0.3);
            let z = gaussian_set(&mut rng, 24, 3, 0.6);
            let sigma = median_heuristic(&x.concat(&y).unwrap().concat(&z).unwrap()).unwrap();
            let ab = rmmd_pvalue(&x, &y, &z, sigma, 100, 9).unwrap();
            let ba = rmmd_pvalue(&x, &z, &y, sigma, 100, 9).unwrap();
            assert!((ab.p + ba.p - 1.0).abs() < 1e-9, "p {} swapped {}", ab.p, ba.p);
            assert_eq!(ab.var_xy, ba.var_xz);
            assert_eq!(ab.var_xz, ba.var_xy);
            assert_eq!(ab.cov_xyxz, ba.cov_xyxz);
        }
    }

    #[test]
    fn rmmd_detects_the_farther_candidate() {
        let mut rng = ChaCha12Rng::seed_from_u64(76);
        let x = gaussian_set(&mut rng, 200, 1, 0.0);
        let y = gaussian_set(&mut rng, 200, 1, 0.0);
        let z = gaussian_set(&mut rng, 200, 1, 5.0);
        let pooled = x.concat(&y).unwrap().concat(&z).unwrap();
        let sigma = median_heuristic(&pooled).unwrap();
        let result = rmmd_pvalue(&x, &y, &z, sigma, DEFAULT_BOOTSTRAP, 6).unwrap();
        assert!(result.p > 0.99, "p {}", result.p);
        assert!(result.mmd_xy < result.mmd_xz);
    }

    #[test]
    fn rmmd_p_sign_tracks_statistic_order() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        for seed in 0..8u64 {
            let x = gaussian_set(&mut rng, 30, 2, 0.0);
            let y = gaussian_set(&mut rng, 30, 2, 0.8);
            let z = gaussian_set(&mut rng, 30, 2, 1.6);
            let result = rmmd_pvalue(&x, &y, &z, 1.5, 100, seed).unwrap();
            assert_eq!(result.p > 0.5, result.mmd_xy < result.mmd_xz);
        }
    }

    #[test]
    fn degenerate_variance_with_nonzero_numerator_errors() {
        let x = one_dim(&[0.0, 0.0, 0.0]);
        let y = one_dim(&[1.0, 1.0, 1.0]);
        let z = one_dim(&[2.0, 2.0, 2.0]);
        // Constant rows make every resampled statistic identical.
        let err = rmmd_pvalue(&x, &y, &z, 1.0, 50, 3).unwrap_err();
        assert!(matches!(err, Error::DegenerateVariance { .. }));
    }

    #[test]
    fn rmmd_calibration_quick_check() {
        // Smaller version of the acceptance calibration: with all three
        // sets from one distribution the mean p-value sits near 0.5.
        let mut rng = ChaCha12Rng::seed_from_u64(78);
        let trials = 20;
        let mut mean_p = 0.0;
        for seed in 0..trials {
            let x = gaussian_set(&mut rng, 40, 4, 0.0);
            let y = gaussian_set(&mut rng, 40, 4, 0.0);
            let z = gaussian_set(&mut rng, 40, 4, 0.0);
            let pooled = x.concat(&y).unwrap().concat(&z).unwrap();
            let sigma = median_heuristic(&pooled).unwrap();
            mean_p += rmmd_pvalue(&x, &y, &z, sigma, 100, seed).unwrap().p;
        }
        mean_p /= trials as f64;
        assert!((0.3..=0.7).contains(&mean_p), "mean p {mean_p}");
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rng = ChaCha12Rng::seed_from_u64(79);
        let set = gaussian_set(&mut rng, 7, 3, 0.25);
        let mut bytes = Vec::new();
        set.write_csv(&mut bytes).unwrap();
        let restored = SampleSet::read_csv(bytes.as_slice()).unwrap();
        assert_eq!(restored, set);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(matches!(
            SampleSet::from_rows(vec![vec![1.0, 2.0], vec![3.0]]),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn sweep_with_constant_costs_preserves_p_ranking() {
        let (net, store) = crate::network::tests::toy_net(2);
        let sampler = LatentSampler::new(8, 100);
        let training = crate::network::sample(&net, &store, &sampler, 24).unwrap();
        let formats: Vec<FixedPointFormat> = [6u32, 10, 14]
            .iter()
            .map(|&b| FixedPointFormat::with_default_split(b).unwrap())
            .collect();
        let cost: BTreeMap<u32, CostEntry> = [6, 10, 14]
            .iter()
            .map(|&b| (b, CostEntry { cost: 2.5, merit: 4.0 }))
            .collect();
        let rows = bitwidth_sweep(&net, &store, &training, &formats, 24, 11, &cost).unwrap();
        assert_eq!(rows.len(), 3);
        let argmax = |key: fn(&SweepRow) -> f64| {
            rows.iter()
                .max_by(|a, b| key(a).total_cmp(&key(b)))
                .unwrap()
                .bits
        };
        assert_eq!(argmax(|r| r.p), argmax(|r| r.p_per_cost));
        assert_eq!(argmax(|r| r.p), argmax(|r| r.p_times_merit));
    }

    #[test]
    fn sweep_requires_cost_entries() {
        let (net, store) = crate::network::tests::toy_net(2);
        let sampler = LatentSampler::new(8, 100);
        let training = crate::network::sample(&net, &store, &sampler, 8).unwrap();
        let formats = [FixedPointFormat::with_default_split(8).unwrap()];
        let err = bitwidth_sweep(&net, &store, &training, &formats, 8, 1, &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }
}
