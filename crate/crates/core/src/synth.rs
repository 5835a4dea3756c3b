//! Synthetic stand-in for a labeled benchmark corpus.
//!
//! Classes are Gaussians in `R^d`. Every pool model is the closed-form
//! linear-discriminant classifier of a jittered copy of the class
//! parameters, and every workload is a parametric shift of the class
//! distributions (translation, covariance scaling, prior drift, label
//! noise). The only code that ever reads a workload's labels is
//! [`true_accuracy_oracle`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::descriptors::{describe, EmbeddingBank, Origin, PreparedBank, SliceSet};
use crate::error::{Error, Result};
use crate::meta::{EvalPair, TaskDataset};
use crate::numerics::{dot, Cholesky, Matrix};

pub const RAW_ENCODER: &str = "raw-features";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn validate(&self, field: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::config(field, "range needs finite lo <= hi"));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..self.hi)
        }
    }
}

/// Severity ranges from which each workload's shift is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftRanges {
    /// Length of the translation along the world's drift direction.
    pub translation: Range,
    /// Multiplier applied to every class covariance.
    pub cov_scale: Range,
    /// Temperature of the log-normal prior perturbation.
    pub prior_drift: Range,
    pub label_noise: Range,
}

impl Default for ShiftRanges {
    fn default() -> Self {
        Self {
            translation: Range::new(0.0, 3.0),
            cov_scale: Range::new(1.0, 2.5),
            prior_drift: Range::new(0.0, 0.5),
            label_noise: Range::new(0.0, 0.02),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub dim: usize,
    pub classes: usize,
    /// Per-coordinate standard deviation of the class means.
    pub class_mean_scale: f64,
    /// Range of the eigenvalues of each class covariance.
    pub class_cov_eigen: Range,
    pub pool_size: usize,
    /// Size of the perturbation that turns the true class parameters into
    /// each model's private copy.
    pub jitter: f64,
    pub source_bank_size: usize,
    pub shifts: ShiftRanges,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            classes: 4,
            class_mean_scale: 0.6,
            class_cov_eigen: Range::new(0.5, 1.5),
            pool_size: 28,
            jitter: 0.4,
            source_bank_size: 1000,
            shifts: ShiftRanges::default(),
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("dim", "must be >= 1"));
        }
        if self.classes < 2 {
            return Err(Error::config("classes", "must be >= 2"));
        }
        if !(self.class_mean_scale.is_finite() && self.class_mean_scale >= 0.0) {
            return Err(Error::config("class_mean_scale", "must be >= 0"));
        }
        self.class_cov_eigen.validate("class_cov_eigen")?;
        if self.class_cov_eigen.lo <= 0.0 {
            return Err(Error::config("class_cov_eigen", "eigenvalues must be positive"));
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(Error::config("jitter", "must be >= 0"));
        }
        if self.source_bank_size < 2 {
            return Err(Error::config("source_bank_size", "must be >= 2"));
        }
        let s = &self.shifts;
        s.translation.validate("shifts.translation")?;
        s.cov_scale.validate("shifts.cov_scale")?;
        s.prior_drift.validate("shifts.prior_drift")?;
        s.label_noise.validate("shifts.label_noise")?;
        if s.translation.lo < 0.0 || s.prior_drift.lo < 0.0 {
            return Err(Error::config("shifts", "severities must be nonnegative"));
        }
        if s.cov_scale.lo <= 0.0 {
            return Err(Error::config("shifts.cov_scale", "must be positive"));
        }
        if s.label_noise.lo < 0.0 || s.label_noise.hi > 0.5 {
            return Err(Error::config("shifts.label_noise", "must lie in [0, 0.5]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGaussian {
    pub mean: Vec<f64>,
    pub covariance: Matrix,
}

/// A linear classifier `argmax(W x + b)` plus the source bank it was fit on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthModel {
    pub model_id: String,
    pub index: usize,
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub source_bank: EmbeddingBank,
}

impl SynthModel {
    pub fn classify(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (c, row) in self.weights.row_iter().enumerate() {
            let s = dot(row, x) + self.bias[c];
            if s > best_score {
                best = c;
                best_score = s;
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub classes: Vec<ClassGaussian>,
    /// Unit direction along which translation shifts move every class.
    pub drift_direction: Vec<f64>,
    pub models: Vec<SynthModel>,
    class_factors: Vec<Cholesky>,
}

/// Explicit shift applied when sampling a workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    /// Added to every sample; empty means no translation.
    #[serde(default)]
    pub translation: Vec<f64>,
    pub cov_scale: f64,
    /// Class priors; empty means uniform.
    #[serde(default)]
    pub priors: Vec<f64>,
    pub label_noise: f64,
}

impl ShiftSpec {
    pub fn identity() -> Self {
        Self {
            translation: Vec::new(),
            cov_scale: 1.0,
            priors: Vec::new(),
            label_noise: 0.0,
        }
    }

    pub fn translation_norm(&self) -> f64 {
        dot(&self.translation, &self.translation).sqrt()
    }

    fn validate(&self, world: &World) -> Result<()> {
        let d = world.config.dim;
        if !self.translation.is_empty() && self.translation.len() != d {
            return Err(Error::DimensionMismatch {
                what: "shift translation",
                expected: d,
                got: self.translation.len(),
            });
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("shift translation"));
        }
        if !(self.cov_scale.is_finite() && self.cov_scale > 0.0) {
            return Err(Error::invalid("cov_scale must be positive"));
        }
        if !self.priors.is_empty() {
            if self.priors.len() != world.config.classes {
                return Err(Error::DimensionMismatch {
                    what: "shift priors",
                    expected: world.config.classes,
                    got: self.priors.len(),
                });
            }
            let sum: f64 = self.priors.iter().sum();
            if self.priors.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > 1e-9
            {
                return Err(Error::invalid("priors must be a probability vector"));
            }
        }
        if !(0.0..=0.5).contains(&self.label_noise) {
            return Err(Error::invalid("label noise must lie in [0, 0.5]"));
        }
        Ok(())
    }
}

/// A target dataset. Labels stay private to this module.
#[derive(Debug, Clone)]
pub struct Workload {
    pub workload_id: String,
    pub samples: Matrix,
    labels: Vec<usize>,
    pub spec: ShiftSpec,
    pub seed: u64,
}

impl Workload {
    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    /// The unlabeled view handed to descriptor code.
    pub fn bank(&self) -> Result<EmbeddingBank> {
        EmbeddingBank::new(
            self.workload_id.clone(),
            self.samples.clone(),
            Origin::Target,
            RAW_ENCODER,
        )
    }
}

fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-8 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

fn random_covariance(d: usize, eig: Range, rng: &mut ChaCha8Rng) -> Matrix {
    let q = random_orthogonal(d, rng);
    let lambdas: Vec<f64> = (0..d).map(|_| eig.draw(rng)).collect();
    let mut cov = Matrix::zeros(d, d);
    for (k, qk) in q.iter().enumerate() {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += lambdas[k] * qk[i] * qk[j];
            }
        }
    }
    cov.symmetrize();
    cov
}

fn gaussian_vec(d: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>()
}

/// LDA weights `Σ⁻¹μ_c` and biases `-½ μ_cᵀΣ⁻¹μ_c` for equal priors.
fn lda(means: &[Vec<f64>], pooled: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let chol = Cholesky::factor(pooled)?;
    let mut rows = Vec::with_capacity(means.len());
    let mut bias = Vec::with_capacity(means.len());
    for mu in means {
        let w = chol.solve(mu)?;
        bias.push(-0.5 * dot(&w, mu));
        rows.push(w);
    }
    Ok((Matrix::from_rows(&rows)?, bias))
}

fn sample_mixture(
    means: &[Vec<f64>],
    factors: &[Cholesky],
    priors: &[f64],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> (Matrix, Vec<usize>) {
    let d = means[0].len();
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut c = priors.len() - 1;
        let mut acc = 0.0;
        for (k, p) in priors.iter().enumerate() {
            acc += p;
            if u < acc {
                c = k;
                break;
            }
        }
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let l = factors[c].lower();
        for i in 0..d {
            data.push(means[c][i] + dot(&l.row(i)[..=i], &z[..=i]));
        }
        labels.push(c);
    }
    (Matrix::new(n, d, data).expect("finite samples"), labels)
}

pub fn build_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let (d, c) = (config.dim, config.classes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let classes: Vec<ClassGaussian> = (0..c)
        .map(|_| ClassGaussian {
            mean: gaussian_vec(d, config.class_mean_scale, &mut rng),
            covariance: random_covariance(d, config.class_cov_eigen, &mut rng),
        })
        .collect();
    let class_factors = classes
        .iter()
        .map(|k| Cholesky::factor(&k.covariance))
        .collect::<Result<Vec<_>>>()?;
    let drift = gaussian_vec(d, 1.0, &mut rng);
    let norm = dot(&drift, &drift).sqrt().max(1e-12);
    let drift_direction: Vec<f64> = drift.into_iter().map(|v| v / norm).collect();

    let mut pooled = Matrix::zeros(d, d);
    for k in &classes {
        pooled = pooled.add(&k.covariance)?;
    }
    let pooled = pooled.scale(1.0 / c as f64);

    let mut models = Vec::with_capacity(config.pool_size);
    for index in 0..config.pool_size {
        let mut mrng = ChaCha8Rng::seed_from_u64(config.seed);
        mrng.set_stream(1 + index as u64);
        // Each model sees its own perturbation; its strength varies across the pool.
        let strength = config.jitter * mrng.random_range(0.25..1.75);
        let means: Vec<Vec<f64>> = classes
            .iter()
            .map(|k| {
                let e = gaussian_vec(d, strength * config.class_mean_scale, &mut mrng);
                k.mean.iter().zip(e).map(|(m, x)| m + x).collect()
            })
            .collect();
        let mut cov = pooled.clone();
        if strength > 0.0 {
            let a = random_covariance(d, config.class_cov_eigen, &mut mrng);
            cov = cov.add(&a.scale(strength))?;
            cov = cov.scale(1.0 / (1.0 + strength));
        }
        let (weights, bias) = lda(&means, &cov)?;

        let jittered_factors: Vec<Cholesky> = classes
            .iter()
            .map(|k| Cholesky::factor(&k.covariance))
            .collect::<Result<_>>()?;
        let uniform = vec![1.0 / c as f64; c];
        let (src, _) = sample_mixture(
            &means,
            &jittered_factors,
            &uniform,
            config.source_bank_size,
            &mut mrng,
        );
        let model_id = format!("m{index:03}");
        let source_bank =
            EmbeddingBank::new(format!("{model_id}-source"), src, Origin::Source, RAW_ENCODER)?;
        models.push(SynthModel {
            model_id,
            index,
            weights,
            bias,
            source_bank,
        });
    }

    Ok(World {
        config: config.clone(),
        classes,
        drift_direction,
        models,
        class_factors,
    })
}

impl World {
    /// Assembles a world from explicit class Gaussians and models, for
    /// hand-built scenarios. `config` supplies the shift ranges.
    pub fn from_parts(
        config: WorldConfig,
        classes: Vec<ClassGaussian>,
        drift_direction: Vec<f64>,
        models: Vec<SynthModel>,
    ) -> Result<World> {
        let d = config.dim;
        if classes.len() != config.classes {
            return Err(Error::DimensionMismatch {
                what: "class count",
                expected: config.classes,
                got: classes.len(),
            });
        }
        if drift_direction.len() != d {
            return Err(Error::DimensionMismatch {
                what: "drift direction",
                expected: d,
                got: drift_direction.len(),
            });
        }
        for k in &classes {
            if k.mean.len() != d || k.covariance.rows() != d {
                return Err(Error::DimensionMismatch {
                    what: "class Gaussian",
                    expected: d,
                    got: k.mean.len(),
                });
            }
        }
        for m in &models {
            if m.weights.rows() != config.classes || m.weights.cols() != d || m.bias.len() != config.classes {
                return Err(Error::invalid(format!("model {} has the wrong shape", m.model_id)));
            }
        }
        let class_factors = classes
            .iter()
            .map(|k| Cholesky::factor(&k.covariance))
            .collect::<Result<Vec<_>>>()?;
        Ok(World {
            config,
            classes,
            drift_direction,
            models,
            class_factors,
        })
    }

    /// Draw a shift from the configured severity ranges.
    pub fn draw_shift(&self, rng: &mut ChaCha8Rng) -> ShiftSpec {
        let s = &self.config.shifts;
        let t = s.translation.draw(rng);
        let scale = s.cov_scale.draw(rng);
        let drift = s.prior_drift.draw(rng);
        let noise = s.label_noise.draw(rng);
        let translation = if t > 0.0 {
            self.drift_direction.iter().map(|u| t * u).collect()
        } else {
            Vec::new()
        };
        let priors = if drift > 0.0 {
            let logits: Vec<f64> = (0..self.config.classes)
                .map(|_| drift * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                .collect::<Vec<f64>>();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect()
        } else {
            Vec::new()
        };
        ShiftSpec {
            translation,
            cov_scale: scale,
            priors,
            label_noise: noise,
        }
    }

    pub fn model(&self, model_id: &str) -> Option<&SynthModel> {
        self.models.iter().find(|m| m.model_id == model_id)
    }
}

pub fn workload_id(seed: u64) -> String {
    format!("w{seed:016x}")
}

pub fn sample_workload(world: &World, spec: &ShiftSpec, n: usize, seed: u64) -> Result<Workload> {
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    spec.validate(world)?;
    let c = world.config.classes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let priors = if spec.priors.is_empty() {
        vec![1.0 / c as f64; c]
    } else {
        spec.priors.clone()
    };
    let means: Vec<Vec<f64>> = world
        .classes
        .iter()
        .map(|k| {
            if spec.translation.is_empty() {
                k.mean.clone()
            } else {
                k.mean.iter().zip(&spec.translation).map(|(m, t)| m + t).collect()
            }
        })
        .collect();
    let (mut samples, mut labels) = sample_mixture(&means, &world.class_factors, &priors, n, &mut rng);
    if spec.cov_scale != 1.0 {
        let s = spec.cov_scale.sqrt();
        let d = world.config.dim;
        for (i, &lab) in labels.iter().enumerate() {
            let row = samples.row_mut(i);
            for k in 0..d {
                row[k] = means[lab][k] + s * (row[k] - means[lab][k]);
            }
        }
    }
    if spec.label_noise > 0.0 {
        for l in labels.iter_mut() {
            if rng.random::<f64>() < spec.label_noise {
                let other = rng.random_range(0..c - 1);
                *l = if other >= *l { other + 1 } else { other };
            }
        }
    }
    Ok(Workload {
        workload_id: workload_id(seed),
        samples,
        labels,
        spec: spec.clone(),
        seed,
    })
}

/// Exact fraction of workload rows the model labels correctly.
pub fn true_accuracy_oracle(model: &SynthModel, workload: &Workload) -> Result<f64> {
    if model.weights.cols() != workload.samples.cols() {
        return Err(Error::DimensionMismatch {
            what: "oracle input",
            expected: model.weights.cols(),
            got: workload.samples.cols(),
        });
    }
    let hits = workload
        .samples
        .row_iter()
        .zip(&workload.labels)
        .filter(|(x, &y)| model.classify(x) == y)
        .count();
    Ok(hits as f64 / workload.len().max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescriptorConfig {
    pub n_projections: usize,
    pub seed: u64,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            n_projections: crate::descriptors::DEFAULT_PROJECTIONS,
            seed: 0,
        }
    }
}

/// Workloads with their target-side descriptor state prepared once, so
/// that pairs for many models reuse it.
pub struct PairFactory<'w> {
    slices: SliceSet,
    targets: Vec<(&'w Workload, PreparedBank)>,
}

impl<'w> PairFactory<'w> {
    pub fn new(dim: usize, workloads: &'w [Workload], config: &DescriptorConfig) -> Result<Self> {
        let slices = SliceSet::new(dim, config.n_projections, config.seed)?;
        let targets = workloads
            .iter()
            .map(|w| Ok((w, PreparedBank::new(&w.bank()?, &slices)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { slices, targets })
    }

    pub fn workloads(&self) -> impl Iterator<Item = &'w Workload> + '_ {
        self.targets.iter().map(|(w, _)| *w)
    }

    /// Pairs for `model` on the selected workload indices (all when `None`).
    pub fn pairs_for(&self, model: &SynthModel, which: Option<&[usize]>) -> Result<Vec<EvalPair>> {
        let src = PreparedBank::new(&model.source_bank, &self.slices)?;
        let all: Vec<usize>;
        let idx = match which {
            Some(i) => i,
            None => {
                all = (0..self.targets.len()).collect();
                &all
            }
        };
        idx.iter()
            .map(|&i| {
                let (w, tgt) = self
                    .targets
                    .get(i)
                    .ok_or_else(|| Error::invalid(format!("workload index {i} out of range")))?;
                let sd = describe(&src, tgt)?;
                let acc = true_accuracy_oracle(model, w)?;
                EvalPair::new(sd, acc, &model.model_id, &w.workload_id)
            })
            .collect()
    }
}

pub fn make_task_dataset(
    world: &World,
    model: &SynthModel,
    workloads: &[Workload],
    config: &DescriptorConfig,
) -> Result<TaskDataset> {
    if workloads.is_empty() {
        return Err(Error::EmptyTask(format!("no workloads for {}", model.model_id)));
    }
    let factory = PairFactory::new(world.config.dim, workloads, config)?;
    TaskDataset::new(&model.model_id, factory.pairs_for(model, None)?)
}
