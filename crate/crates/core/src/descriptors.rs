//! Shift descriptors: three scalar summaries of how a target embedding bank
//! differs from a model's source bank.
//!
//! * Fréchet distance between Gaussian fits (global moment changes).
//! * Mean Mahalanobis norm of target points under the source fit (mass in
//!   low-density regions).
//! * Root-mean-square sliced 2-Wasserstein distance (directional shifts).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    dot, fit_gaussian_summary, spd_sqrt_from_eigen, sym_eigen, Cholesky, GaussianSummary, Matrix,
};

pub const DEFAULT_PROJECTIONS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Source,
    Target,
}

/// A set of embeddings produced by some encoder for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBank {
    pub id: String,
    pub samples: Matrix,
    pub origin: Origin,
    pub encoder_tag: String,
}

impl EmbeddingBank {
    pub fn new(
        id: impl Into<String>,
        samples: Matrix,
        origin: Origin,
        encoder_tag: impl Into<String>,
    ) -> Result<Self> {
        if samples.rows() < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: samples.rows(),
            });
        }
        Ok(Self {
            id: id.into(),
            samples,
            origin,
            encoder_tag: encoder_tag.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }
}

/// `[F, M, SW]` train–test mismatch summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftDescriptor {
    pub sd_f: f64,
    pub sd_m: f64,
    pub sd_sw: f64,
    pub source_id: String,
    pub target_id: String,
    pub seed: u64,
}

impl ShiftDescriptor {
    pub fn components(&self) -> [f64; 3] {
        [self.sd_f, self.sd_m, self.sd_sw]
    }
}

fn check_dims(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

/// Squared Fréchet distance between two Gaussians.
pub fn frechet_term(src: &GaussianSummary, tgt: &GaussianSummary) -> Result<f64> {
    let src_sqrt = spd_sqrt_from_eigen(&sym_eigen(&src.covariance)?)?;
    frechet_with_sqrt(src, &src_sqrt, tgt)
}

fn frechet_with_sqrt(src: &GaussianSummary, src_sqrt: &Matrix, tgt: &GaussianSummary) -> Result<f64> {
    check_dims("frechet term", src.dim(), tgt.dim())?;
    let mean_term: f64 = src
        .mean
        .iter()
        .zip(&tgt.mean)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();

    let mut cross = src_sqrt.matmul(&tgt.covariance)?.matmul(src_sqrt)?;
    cross.symmetrize();
    let eig = sym_eigen(&cross)?;
    let cross_trace: f64 = eig.values.iter().map(|l| l.max(0.0).sqrt()).sum();
    let trace_term =
        (src.covariance.trace() + tgt.covariance.trace() - 2.0 * cross_trace).max(0.0);
    Ok(mean_term + trace_term)
}

/// Mean Mahalanobis norm of each target row under the source Gaussian.
pub fn mahalanobis_term(src: &GaussianSummary, tgt_samples: &Matrix) -> Result<f64> {
    let chol = Cholesky::factor(&src.covariance)?;
    mahalanobis_with_factor(src, &chol, tgt_samples)
}

fn mahalanobis_with_factor(
    src: &GaussianSummary,
    chol: &Cholesky,
    tgt_samples: &Matrix,
) -> Result<f64> {
    check_dims("mahalanobis term", src.dim(), tgt_samples.cols())?;
    let n = tgt_samples.rows();
    if n == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut z = vec![0.0; src.dim()];
    let mut total = 0.0;
    for row in tgt_samples.row_iter() {
        for ((zi, x), m) in z.iter_mut().zip(row).zip(&src.mean) {
            *zi = x - m;
        }
        chol.forward_substitute(&mut z);
        total += dot(&z, &z).sqrt();
    }
    Ok(total / n as f64)
}

/// Seeded set of unit directions shared by every bank compared under it.
#[derive(Debug, Clone)]
pub struct SliceSet {
    pub seed: u64,
    directions: Vec<Vec<f64>>,
}

impl SliceSet {
    pub fn new(dim: usize, n_projections: usize, seed: u64) -> Result<Self> {
        if n_projections == 0 {
            return Err(Error::invalid("n_projections must be >= 1"));
        }
        if dim == 0 {
            return Err(Error::invalid("cannot slice a 0-dimensional bank"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut directions = Vec::with_capacity(n_projections);
        while directions.len() < n_projections {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-12 {
                directions.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
        Ok(Self { seed, directions })
    }

    pub fn dim(&self) -> usize {
        self.directions[0].len()
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn directions(&self) -> &[Vec<f64>] {
        &self.directions
    }

    /// Sorted 1-D projections of `samples` along every direction.
    pub fn project_sorted(&self, samples: &Matrix) -> Result<Vec<Vec<f64>>> {
        check_dims("sliced projection", self.dim(), samples.cols())?;
        if samples.rows() == 0 {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        Ok(self
            .directions
            .iter()
            .map(|dir| {
                let mut p: Vec<f64> = samples.row_iter().map(|r| dot(r, dir)).collect();
                p.sort_by(f64::total_cmp);
                p
            })
            .collect())
    }
}

/// Linear-interpolated quantile of a sorted sample at level `q ∈ (0,1)`,
/// using the midpoint convention so that `q = (k+½)/n` lands on element `k`.
fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = (q * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Squared 1-D 2-Wasserstein distance between two sorted empirical samples.
pub fn w2_squared_sorted(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == b.len() {
        return a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    }
    let m = a.len().max(b.len());
    let mut total = 0.0;
    for k in 0..m {
        let q = (k as f64 + 0.5) / m as f64;
        let d = sorted_quantile(a, q) - sorted_quantile(b, q);
        total += d * d;
    }
    total / m as f64
}

fn sliced_from_sorted(src: &[Vec<f64>], tgt: &[Vec<f64>]) -> f64 {
    let mean_sq =
        src.iter().zip(tgt).map(|(a, b)| w2_squared_sorted(a, b)).sum::<f64>() / src.len() as f64;
    mean_sq.sqrt()
}

/// RMS over random slices of the 1-D 2-Wasserstein distance.
pub fn sliced_wasserstein_term(
    src_samples: &Matrix,
    tgt_samples: &Matrix,
    n_projections: usize,
    seed: u64,
) -> Result<f64> {
    check_dims("sliced wasserstein term", src_samples.cols(), tgt_samples.cols())?;
    let slices = SliceSet::new(src_samples.cols(), n_projections, seed)?;
    let a = slices.project_sorted(src_samples)?;
    let b = slices.project_sorted(tgt_samples)?;
    Ok(sliced_from_sorted(&a, &b))
}

pub fn compose_descriptor(
    sd_f: f64,
    sd_m: f64,
    sd_sw: f64,
    source_id: impl Into<String>,
    target_id: impl Into<String>,
    seed: u64,
) -> Result<ShiftDescriptor> {
    for (name, v) in [("sd_f", sd_f), ("sd_m", sd_m), ("sd_sw", sd_sw)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(name));
        }
        if v < 0.0 {
            return Err(Error::invalid(format!("{name} is negative ({v})")));
        }
    }
    Ok(ShiftDescriptor {
        sd_f,
        sd_m,
        sd_sw,
        source_id: source_id.into(),
        target_id: target_id.into(),
        seed,
    })
}

/// A bank with its Gaussian fit and sorted projections precomputed, so that
/// many (source, target) pairs can be described without refitting.
#[derive(Debug, Clone)]
pub struct PreparedBank {
    pub id: String,
    summary: GaussianSummary,
    cov_sqrt: Matrix,
    chol: Cholesky,
    projections: Vec<Vec<f64>>,
    samples: Matrix,
    slice_seed: u64,
}

impl PreparedBank {
    pub fn new(bank: &EmbeddingBank, slices: &SliceSet) -> Result<Self> {
        let summary = fit_gaussian_summary(&bank.samples)?;
        let cov_sqrt = spd_sqrt_from_eigen(&sym_eigen(&summary.covariance)?)?;
        let chol = Cholesky::factor(&summary.covariance)?;
        let projections = slices.project_sorted(&bank.samples)?;
        Ok(Self {
            id: bank.id.clone(),
            summary,
            cov_sqrt,
            chol,
            projections,
            samples: bank.samples.clone(),
            slice_seed: slices.seed,
        })
    }

    pub fn summary(&self) -> &GaussianSummary {
        &self.summary
    }
}

/// Full descriptor of `tgt` measured against `src`.
pub fn describe(src: &PreparedBank, tgt: &PreparedBank) -> Result<ShiftDescriptor> {
    if src.slice_seed != tgt.slice_seed || src.projections.len() != tgt.projections.len() {
        return Err(Error::invalid("banks were projected with different slice sets"));
    }
    let f = frechet_with_sqrt(&src.summary, &src.cov_sqrt, &tgt.summary)?;
    let m = mahalanobis_with_factor(&src.summary, &src.chol, &tgt.samples)?;
    let sw = sliced_from_sorted(&src.projections, &tgt.projections);
    compose_descriptor(f, m, sw, &src.id, &tgt.id, src.slice_seed)
}

/// Convenience wrapper computing all three terms for one pair of banks.
pub fn describe_banks(
    src: &EmbeddingBank,
    tgt: &EmbeddingBank,
    n_projections: usize,
    seed: u64,
) -> Result<ShiftDescriptor> {
    check_dims("descriptor banks", src.dim(), tgt.dim())?;
    let slices = SliceSet::new(src.dim(), n_projections, seed)?;
    describe(&PreparedBank::new(src, &slices)?, &PreparedBank::new(tgt, &slices)?)
}

/// log1p + z-score conditioning of raw descriptor components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorNormalizer {
    pub means: [f64; 3],
    pub stds: [f64; 3],
    pub fitted_on: usize,
}

pub const NORMALIZER_STD_FLOOR: f64 = 1e-12;

pub fn fit_normalizer<'a>(
    descriptors: impl IntoIterator<Item = &'a ShiftDescriptor>,
) -> Result<DescriptorNormalizer> {
    let logged: Vec<[f64; 3]> = descriptors
        .into_iter()
        .map(|d| d.components().map(f64::ln_1p))
        .collect();
    let n = logged.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let mut means = [0.0; 3];
    let mut stds = [0.0; 3];
    for k in 0..3 {
        let mean = logged.iter().map(|v| v[k]).sum::<f64>() / n as f64;
        let var = logged.iter().map(|v| (v[k] - mean).powi(2)).sum::<f64>() / n as f64;
        means[k] = mean;
        stds[k] = var.sqrt().max(NORMALIZER_STD_FLOOR);
    }
    Ok(DescriptorNormalizer {
        means,
        stds,
        fitted_on: n,
    })
}

impl DescriptorNormalizer {
    pub fn apply(&self, sd: &ShiftDescriptor) -> [f64; 3] {
        let c = sd.components();
        std::array::from_fn(|k| (c[k].ln_1p() - self.means[k]) / self.stds[k])
    }
}

pub fn apply_normalizer(norm: &DescriptorNormalizer, sd: &ShiftDescriptor) -> [f64; 3] {
    norm.apply(sd)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss1(mean: f64, var: f64) -> GaussianSummary {
        GaussianSummary::from_parts(vec![mean], Matrix::from_diag(&[var]), 100).unwrap()
    }

    fn col(values: &[f64]) -> Matrix {
        Matrix::new(values.len(), 1, values.to_vec()).unwrap()
    }

    fn sd(f: f64, m: f64, sw: f64) -> ShiftDescriptor {
        compose_descriptor(f, m, sw, "s", "t", 0).unwrap()
    }

    #[test]
    fn frechet_identical_is_zero() {
        let g = gauss1(0.3, 2.0);
        assert!(frechet_term(&g, &g).unwrap().abs() < 1e-8);
    }

    #[test]
    fn frechet_one_dimensional_closed_form() {
        let v = frechet_term(&gauss1(0.0, 1.0), &gauss1(1.0, 4.0)).unwrap();
        assert!((v - 2.0).abs() < 1e-8, "{v}");
    }

    #[test]
    fn frechet_dimension_mismatch() {
        let a = gauss1(0.0, 1.0);
        let b = GaussianSummary::from_parts(vec![0.0, 0.0], Matrix::identity(2), 5).unwrap();
        assert!(matches!(
            frechet_term(&a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mahalanobis_hand_cases() {
        let h = 0.5f64.sqrt();
        let src = fit_gaussian_summary(&col(&[-h, h])).unwrap();
        assert!((mahalanobis_term(&src, &col(&[1.0, -1.0])).unwrap() - 1.0).abs() < 1e-5);

        let src = gauss1(1.0, 4.0);
        assert!((mahalanobis_term(&src, &col(&[3.0])).unwrap() - 1.0).abs() < 1e-5);

        let at_mean = col(&[1.0, 1.0, 1.0]);
        assert_eq!(mahalanobis_term(&src, &at_mean).unwrap(), 0.0);
    }

    #[test]
    fn mahalanobis_is_asymmetric() {
        // A tight source sees a wide target as far away; not the other way round.
        let narrow = col(&[-0.1, 0.1, -0.05, 0.05]);
        let wide = col(&[-3.0, 3.0, -1.5, 1.5]);
        let gn = fit_gaussian_summary(&narrow).unwrap();
        let gw = fit_gaussian_summary(&wide).unwrap();
        let forward = mahalanobis_term(&gn, &wide).unwrap();
        let backward = mahalanobis_term(&gw, &narrow).unwrap();
        assert!(forward > 20.0 * backward, "{forward} vs {backward}");
    }

    #[test]
    fn sliced_translation_in_one_dimension() {
        let src = col(&[0.0, 1.0]);
        let tgt = col(&[2.0, 3.0]);
        for seed in 0..5 {
            let v = sliced_wasserstein_term(&src, &tgt, 7, seed).unwrap();
            assert!((v - 2.0).abs() < 1e-12);
        }
        assert_eq!(sliced_wasserstein_term(&src, &src, 16, 3).unwrap(), 0.0);
    }

    #[test]
    fn sliced_unequal_sizes_use_quantiles() {
        // {0,1,2,3} vs {0.5,2.5}: quantile grid of 4 points, interpolated target
        // quantiles at positions (-.25,.25,.75,1.25) clamp/interpolate to
        // 0.5, 1.0, 2.0, 2.5.
        let a = [0.0, 1.0, 2.0, 3.0];
        let b = [0.5, 2.5];
        let expected = (0.25 + 0.0 + 0.0 + 0.25) / 4.0;
        assert!((w2_squared_sorted(&a, &b) - expected).abs() < 1e-15);
    }

    #[test]
    fn sliced_rejects_empty() {
        let empty = Matrix::zeros(0, 2);
        let one = Matrix::zeros(3, 2);
        assert!(sliced_wasserstein_term(&empty, &one, 4, 0).is_err());
        assert!(sliced_wasserstein_term(&one, &one, 0, 0).is_err());
    }

    #[test]
    fn compose_orders_and_validates() {
        let d = sd(2.0, 1.0, 2.0);
        assert_eq!(d.components(), [2.0, 1.0, 2.0]);
        assert_eq!(sd(0.0, 0.0, 0.0).components(), [0.0; 3]);
        assert_ne!(sd(1.0, 2.0, 3.0).components(), sd(3.0, 2.0, 1.0).components());
        assert!(compose_descriptor(-1.0, 0.0, 0.0, "a", "b", 0).is_err());
        assert!(compose_descriptor(0.0, f64::NAN, 0.0, "a", "b", 0).is_err());
    }

    #[test]
    fn normalizer_cases() {
        let same = vec![sd(1.0, 2.0, 3.0); 4];
        let n = fit_normalizer(&same).unwrap();
        assert_eq!(n.stds, [NORMALIZER_STD_FLOOR; 3]);
        assert_eq!(n.apply(&same[0]), [0.0; 3]);

        let e2 = 2.0f64.exp() - 1.0;
        let pair = vec![sd(0.0, 0.0, 0.0), sd(e2, e2, e2)];
        let n = fit_normalizer(&pair).unwrap();
        for (d, want) in pair.iter().zip([-1.0, 1.0]) {
            for v in n.apply(d) {
                assert!((v - want).abs() < 1e-12);
            }
        }

        assert!(fit_normalizer(&pair[..1]).is_err());
    }

    #[test]
    fn normalized_fit_set_has_zero_mean() {
        let set: Vec<_> = (0..9)
            .map(|i| sd(i as f64 * 0.7, (i * i) as f64 * 0.1, 3.0 / (1.0 + i as f64)))
            .collect();
        let n = fit_normalizer(&set).unwrap();
        let mut sum = [0.0; 3];
        for d in &set {
            let z = n.apply(d);
            for k in 0..3 {
                sum[k] += z[k];
            }
        }
        for s in sum {
            assert!((s / set.len() as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn prepared_path_matches_direct_terms() {
        let src = Matrix::from_rows(&[
            vec![0.0, 1.0],
            vec![1.0, 0.5],
            vec![-0.5, 0.2],
            vec![0.3, -0.7],
        ])
        .unwrap();
        let tgt = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 0.0], vec![0.5, 0.5]]).unwrap();
        let sb = EmbeddingBank::new("s", src.clone(), Origin::Source, "raw").unwrap();
        let tb = EmbeddingBank::new("t", tgt.clone(), Origin::Target, "raw").unwrap();
        let d = describe_banks(&sb, &tb, 32, 9).unwrap();
        let gs = fit_gaussian_summary(&src).unwrap();
        let gt = fit_gaussian_summary(&tgt).unwrap();
        assert_eq!(d.sd_f, frechet_term(&gs, &gt).unwrap());
        assert_eq!(d.sd_m, mahalanobis_term(&gs, &tgt).unwrap());
        assert_eq!(d.sd_sw, sliced_wasserstein_term(&src, &tgt, 32, 9).unwrap());
        assert_eq!((d.source_id.as_str(), d.target_id.as_str(), d.seed), ("s", "t", 9));
    }
}
