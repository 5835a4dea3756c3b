//! Episodic meta-training of the evaluator over a pool of reference models,
//! context adaptation for an unseen model, prediction, and split-conformal
//! interval calibration.
//!
//! Each reference model is one task. Per epoch and per model, the inner loop
//! takes one plain gradient step on that model's context with the network
//! frozen; the outer loop then measures the updated context on validation
//! pairs and updates the network with every context frozen.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptors::{fit_normalizer, DescriptorNormalizer, ShiftDescriptor};
use crate::error::{Error, Result};
use crate::evaluator::{
    adamw_step, backward_selective, forward_batch, gd_step, init_params, rmse_loss, ContextVector,
    Dims, EvaluatorParams, ForwardCache, LrSchedule, Mode, OptimizerState, Want, DEFAULT_DROPOUT,
    SD_DIM,
};

/// One supervision pair: a descriptor and the true metric it should predict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub descriptor: ShiftDescriptor,
    pub true_metric: f64,
    pub model_id: String,
    pub workload_id: String,
}

impl EvalPair {
    pub fn new(
        descriptor: ShiftDescriptor,
        true_metric: f64,
        model_id: impl Into<String>,
        workload_id: impl Into<String>,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&true_metric) {
            return Err(Error::invalid(format!(
                "true metric {true_metric} outside [0, 1]"
            )));
        }
        Ok(Self {
            descriptor,
            true_metric,
            model_id: model_id.into(),
            workload_id: workload_id.into(),
        })
    }
}

/// All supervision pairs for a single model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub model_id: String,
    pub pairs: Vec<EvalPair>,
}

impl TaskDataset {
    pub fn new(model_id: impl Into<String>, pairs: Vec<EvalPair>) -> Result<Self> {
        let model_id = model_id.into();
        if pairs.is_empty() {
            return Err(Error::EmptyTask(model_id));
        }
        if let Some(p) = pairs.iter().find(|p| p.model_id != model_id) {
            return Err(Error::invalid(format!(
                "pair for model {} in task of {model_id}",
                p.model_id
            )));
        }
        Ok(Self { model_id, pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterOptimizer {
    /// AdamW with cosine decay.
    #[default]
    Adamw,
    /// Constant-rate gradient descent.
    PlainGd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterStepping {
    /// One network update per epoch over the validation losses of all models.
    #[default]
    PerEpoch,
    /// One network update after each model's episode.
    PerEpisode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    pub alpha_inner: f64,
    pub alpha_outer: f64,
    /// Step size for unseen-model adaptation.
    pub alpha_adapt: f64,
    pub b_train: usize,
    pub b_val: usize,
    pub b_adapt: usize,
    pub epochs: usize,
    pub patience: usize,
    pub adapt_steps: usize,
    pub context_dim: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub weight_decay: f64,
    pub outer_optimizer: OuterOptimizer,
    pub outer_stepping: OuterStepping,
    /// Re-center reference contexts after every epoch, folding their mean
    /// into the first-layer bias. Predictions are unchanged; the zero
    /// context then sits at the average reference model.
    pub center_contexts: bool,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            alpha_inner: 1e-2,
            alpha_outer: 1e-4,
            alpha_adapt: 1e-2,
            b_train: 64,
            b_val: 64,
            b_adapt: 64,
            epochs: 100,
            patience: 10,
            adapt_steps: 3,
            context_dim: 512,
            hidden: vec![256, 128, 64],
            dropout: DEFAULT_DROPOUT,
            weight_decay: 1e-3,
            outer_optimizer: OuterOptimizer::Adamw,
            outer_stepping: OuterStepping::PerEpoch,
            center_contexts: false,
            seed: 0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("alpha_inner", self.alpha_inner),
            ("alpha_outer", self.alpha_outer),
            ("alpha_adapt", self.alpha_adapt),
            ("weight_decay", self.weight_decay),
        ];
        for (field, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, "must be finite and >= 0"));
            }
        }
        let positive = [
            ("b_train", self.b_train),
            ("b_val", self.b_val),
            ("b_adapt", self.b_adapt),
            ("epochs", self.epochs),
            ("patience", self.patience),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::config("hidden", "widths must be positive"));
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        Dims {
            ctx_dim: self.context_dim,
            hidden: self.hidden.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub val_mae: f64,
    pub inner_loss: Option<f64>,
    pub outer_loss: Option<f64>,
}

/// Meta-trained evaluator: shared network, per-model contexts, and the
/// descriptor conditioning they were trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaState {
    pub params: EvaluatorParams,
    pub contexts: BTreeMap<String, ContextVector>,
    pub normalizer: DescriptorNormalizer,
    pub opt_state: OptimizerState,
    pub config: MetaConfig,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

impl MetaState {
    pub fn features(&self, sd: &ShiftDescriptor) -> [f64; SD_DIM] {
        self.normalizer.apply(sd)
    }

    pub fn zero_context(&self, model_id: impl Into<String>) -> ContextVector {
        ContextVector::zeros(model_id, self.params.dims.ctx_dim)
    }
}

fn split_pairs(
    pairs: &[&EvalPair],
    normalizer: &DescriptorNormalizer,
) -> (Vec<[f64; SD_DIM]>, Vec<f64>) {
    pairs
        .iter()
        .map(|p| (normalizer.apply(&p.descriptor), p.true_metric))
        .unzip()
}

/// Batch indices: `b` distinct picks when the task is large enough,
/// otherwise `b` draws with replacement.
fn sample_indices(n: usize, b: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n >= b {
        rand::seq::index::sample(rng, n, b).into_vec()
    } else {
        (0..b).map(|_| rng.random_range(0..n)).collect()
    }
}

fn eval_loss_and_ctx_grad(
    params: &EvaluatorParams,
    ctx: &ContextVector,
    feats: &[[f64; SD_DIM]],
    targets: &[f64],
) -> Result<(f64, Vec<f64>)> {
    // Eval mode draws nothing from the rng.
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let cache = forward_batch(params, feats, ctx, Mode::Eval, &mut unused)?;
    let (loss, upstream) = rmse_loss(&cache.predictions(), targets)?;
    let grads = backward_selective(params, &cache, &upstream, Want::CTX)?;
    Ok((loss, grads.ctx.expect("ctx gradient requested")))
}

fn predict_features(
    params: &EvaluatorParams,
    ctx: &ContextVector,
    feats: &[[f64; SD_DIM]],
) -> Result<Vec<f64>> {
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    Ok(forward_batch(params, feats, ctx, Mode::Eval, &mut unused)?.predictions())
}

struct PreparedTask {
    model_id: String,
    train_x: Vec<[f64; SD_DIM]>,
    train_y: Vec<f64>,
    val_x: Vec<[f64; SD_DIM]>,
    val_y: Vec<f64>,
}

fn validation_mae(
    params: &EvaluatorParams,
    contexts: &BTreeMap<String, ContextVector>,
    tasks: &[PreparedTask],
) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for t in tasks {
        let preds = predict_features(params, &contexts[&t.model_id], &t.val_x)?;
        total += preds.iter().zip(&t.val_y).map(|(p, y)| (p - y).abs()).sum::<f64>();
        n += preds.len();
    }
    Ok(total / n.max(1) as f64)
}

fn outer_step(
    params: &mut EvaluatorParams,
    opt: &mut OptimizerState,
    kind: OuterOptimizer,
    batches: &[(ForwardCache, Vec<f64>)],
) -> Result<f64> {
    let preds: Vec<f64> = batches.iter().flat_map(|(c, _)| c.predictions()).collect();
    let targets: Vec<f64> = batches.iter().flat_map(|(_, y)| y.iter().copied()).collect();
    let (loss, upstream) = rmse_loss(&preds, &targets)?;
    let mut grad = vec![0.0; params.len()];
    let mut offset = 0;
    for (cache, _) in batches {
        let up = &upstream[offset..offset + cache.len()];
        offset += cache.len();
        let g = backward_selective(params, cache, up, Want::PARAMS)?;
        for (acc, v) in grad.iter_mut().zip(g.params.expect("param gradient requested")) {
            *acc += v;
        }
    }
    match kind {
        OuterOptimizer::Adamw => adamw_step(&mut params.data, opt, &grad)?,
        OuterOptimizer::PlainGd => gd_step(&mut params.data, opt, &grad)?,
    }
    Ok(loss)
}

/// Subtracts the mean context from every context and adds `W_ctx · mean` to
/// the first-layer bias.
fn center_contexts(params: &mut EvaluatorParams, contexts: &mut BTreeMap<String, ContextVector>) {
    let Some(dim) = contexts.values().next().map(|c| c.dim()) else {
        return;
    };
    let n = contexts.len() as f64;
    let mut mean = vec![0.0; dim];
    for c in contexts.values() {
        for (m, v) in mean.iter_mut().zip(&c.values) {
            *m += v / n;
        }
    }
    for c in contexts.values_mut() {
        for (v, m) in c.values.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let first = params.dims.layout()[0];
    for j in 0..first.fan_out {
        let row = first.weights + j * first.fan_in + SD_DIM;
        let shift: f64 = (0..dim).map(|k| params.data[row + k] * mean[k]).sum();
        params.data[first.bias + j] += shift;
    }
}

fn context_checksum(contexts: &BTreeMap<String, ContextVector>) -> u64 {
    contexts
        .values()
        .fold(0u64, |h, c| h.rotate_left(7) ^ c.fingerprint())
}

/// Meta-train the evaluator over the reference pool. Returns the snapshot
/// with the lowest validation MAE, with the full per-epoch log attached.
pub fn meta_train(
    train_tasks: &[TaskDataset],
    val_tasks: &[TaskDataset],
    config: &MetaConfig,
) -> Result<MetaState> {
    config.validate()?;
    if train_tasks.is_empty() {
        return Err(Error::EmptyTask("no training tasks".into()));
    }
    let val_by_id: BTreeMap<&str, &TaskDataset> =
        val_tasks.iter().map(|t| (t.model_id.as_str(), t)).collect();
    let mut train_sorted: Vec<&TaskDataset> = train_tasks.iter().collect();
    train_sorted.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    for w in train_sorted.windows(2) {
        if w[0].model_id == w[1].model_id {
            return Err(Error::invalid(format!("duplicate task {}", w[0].model_id)));
        }
    }
    for t in &train_sorted {
        if t.is_empty() {
            return Err(Error::EmptyTask(t.model_id.clone()));
        }
        match val_by_id.get(t.model_id.as_str()) {
            Some(v) if !v.is_empty() => {}
            _ => {
                return Err(Error::EmptyTask(format!(
                    "no validation pairs for {}",
                    t.model_id
                )))
            }
        }
    }
    if val_by_id.len() != train_sorted.len() {
        return Err(Error::invalid("validation tasks cover models absent from training"));
    }

    let normalizer = fit_normalizer(
        train_sorted
            .iter()
            .flat_map(|t| t.pairs.iter().map(|p| &p.descriptor)),
    )?;
    let tasks: Vec<PreparedTask> = train_sorted
        .iter()
        .map(|t| {
            let train: Vec<&EvalPair> = t.pairs.iter().collect();
            let val: Vec<&EvalPair> = val_by_id[t.model_id.as_str()].pairs.iter().collect();
            let (train_x, train_y) = split_pairs(&train, &normalizer);
            let (val_x, val_y) = split_pairs(&val, &normalizer);
            PreparedTask {
                model_id: t.model_id.clone(),
                train_x,
                train_y,
                val_x,
                val_y,
            }
        })
        .collect();

    let dims = config.dims();
    let mut params = init_params(config.seed, &dims)?;
    let mut contexts: BTreeMap<String, ContextVector> = tasks
        .iter()
        .map(|t| (t.model_id.clone(), ContextVector::zeros(&t.model_id, dims.ctx_dim)))
        .collect();
    let steps_per_epoch = match config.outer_stepping {
        OuterStepping::PerEpoch => 1,
        OuterStepping::PerEpisode => tasks.len() as u64,
    };
    let schedule = match config.outer_optimizer {
        OuterOptimizer::Adamw => LrSchedule::Cosine,
        OuterOptimizer::PlainGd => LrSchedule::Constant,
    };
    let mut opt = OptimizerState::new(
        params.len(),
        config.alpha_outer,
        config.weight_decay,
        config.epochs as u64 * steps_per_epoch,
    )
    .with_schedule(schedule);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..tasks.len()).collect();

    let initial_mae = validation_mae(&params, &contexts, &tasks)?;
    let mut log = vec![EpochLog {
        epoch: 0,
        val_mae: initial_mae,
        inner_loss: None,
        outer_loss: None,
    }];
    let mut best = (params.clone(), contexts.clone(), opt.clone(), 0usize, initial_mae);
    let mut stale_epochs = 0;
    let train_mode = Mode::Train {
        dropout: config.dropout,
    };

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut inner_total = 0.0;
        let mut outer_total = 0.0;
        let mut pending: Vec<(ForwardCache, Vec<f64>)> = Vec::with_capacity(tasks.len());

        for &ti in &order {
            let task = &tasks[ti];
            let nonfinite = || Error::NonFiniteLoss {
                epoch,
                model: task.model_id.clone(),
            };

            // Inner: context step, network frozen.
            let theta_before = params.fingerprint();
            let idx = sample_indices(task.train_x.len(), config.b_train, &mut rng);
            let x: Vec<_> = idx.iter().map(|&i| task.train_x[i]).collect();
            let y: Vec<_> = idx.iter().map(|&i| task.train_y[i]).collect();
            let ctx = contexts.get_mut(&task.model_id).expect("context exists");
            let (loss, g) = eval_loss_and_ctx_grad(&params, ctx, &x, &y)?;
            if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(nonfinite());
            }
            for (c, gi) in ctx.values.iter_mut().zip(&g) {
                *c -= config.alpha_inner * gi;
            }
            inner_total += loss;
            if params.fingerprint() != theta_before {
                return Err(Error::invalid("inner loop modified network parameters"));
            }

            // Outer: validation pairs under the updated context.
            let idx = sample_indices(task.val_x.len(), config.b_val, &mut rng);
            let x: Vec<_> = idx.iter().map(|&i| task.val_x[i]).collect();
            let y: Vec<_> = idx.iter().map(|&i| task.val_y[i]).collect();
            let cache = forward_batch(&params, &x, &contexts[&task.model_id], train_mode, &mut rng)?;
            pending.push((cache, y));

            if config.outer_stepping == OuterStepping::PerEpisode {
                let ctx_before = context_checksum(&contexts);
                let l = outer_step(&mut params, &mut opt, config.outer_optimizer, &pending)?;
                if !l.is_finite() {
                    return Err(nonfinite());
                }
                outer_total += l;
                pending.clear();
                if context_checksum(&contexts) != ctx_before {
                    return Err(Error::invalid("outer loop modified contexts"));
                }
            }
        }

        if config.outer_stepping == OuterStepping::PerEpoch {
            let ctx_before = context_checksum(&contexts);
            let l = outer_step(&mut params, &mut opt, config.outer_optimizer, &pending)?;
            if !l.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    model: "<all>".into(),
                });
            }
            outer_total = l * tasks.len() as f64;
            if context_checksum(&contexts) != ctx_before {
                return Err(Error::invalid("outer loop modified contexts"));
            }
        }

        if config.center_contexts {
            center_contexts(&mut params, &mut contexts);
        }
        let val_mae = validation_mae(&params, &contexts, &tasks)?;
        log.push(EpochLog {
            epoch,
            val_mae,
            inner_loss: Some(inner_total / tasks.len() as f64),
            outer_loss: Some(outer_total / tasks.len() as f64),
        });
        log::debug!("epoch {epoch}: val MAE {val_mae:.5}");

        if val_mae < best.4 {
            best = (params.clone(), contexts.clone(), opt.clone(), epoch, val_mae);
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= config.patience {
                log::debug!("early stop at epoch {epoch}");
                break;
            }
        }
    }

    let (params, contexts, opt_state, best_epoch, _) = best;
    Ok(MetaState {
        params,
        contexts,
        normalizer,
        opt_state,
        config: config.clone(),
        log,
        best_epoch,
    })
}

/// Plain gradient descent on the context alone. The trace holds the loss
/// before every step and after the last one.
pub fn inner_adapt(
    params: &EvaluatorParams,
    ctx: &ContextVector,
    pairs: &[EvalPair],
    alpha: f64,
    steps: usize,
    normalizer: &DescriptorNormalizer,
) -> Result<(ContextVector, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::invalid("empty adaptation batch"));
    }
    let refs: Vec<&EvalPair> = pairs.iter().collect();
    let (x, y) = split_pairs(&refs, normalizer);
    let mut ctx = ctx.clone();
    let mut trace = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let (loss, g) = eval_loss_and_ctx_grad(params, &ctx, &x, &y)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: trace.len(),
                model: ctx.model_id.clone(),
            });
        }
        trace.push(loss);
        for (c, gi) in ctx.values.iter_mut().zip(&g) {
            *c -= alpha * gi;
        }
    }
    let preds = predict_features(params, &ctx, &x)?;
    trace.push(rmse_loss(&preds, &y)?.0);
    Ok((ctx, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adaptation {
    pub context: ContextVector,
    pub trace: Vec<f64>,
}

/// Adapt a fresh zero context for an unseen model with `steps` gradient
/// steps on one seeded batch of at most `b_adapt` of its labeled pairs.
pub fn adapt_unseen(
    state: &MetaState,
    model_id: &str,
    adapt_pairs: &[EvalPair],
    steps: usize,
    alpha: f64,
    seed: u64,
) -> Result<Adaptation> {
    let ctx = state.zero_context(model_id);
    if steps == 0 && adapt_pairs.is_empty() {
        return Ok(Adaptation {
            context: ctx,
            trace: Vec::new(),
        });
    }
    if adapt_pairs.is_empty() {
        return Err(Error::EmptyTask(format!("no adaptation pairs for {model_id}")));
    }
    let batch: Vec<EvalPair> = if adapt_pairs.len() > state.config.b_adapt {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, adapt_pairs.len(), state.config.b_adapt)
            .into_iter()
            .map(|i| adapt_pairs[i].clone())
            .collect()
    } else {
        adapt_pairs.to_vec()
    };
    let (context, trace) =
        inner_adapt(&state.params, &ctx, &batch, alpha, steps, &state.normalizer)?;
    Ok(Adaptation { context, trace })
}

/// Predicted metric for one raw descriptor under the given context.
pub fn predict(state: &MetaState, ctx: &ContextVector, raw_sd: &ShiftDescriptor) -> Result<f64> {
    Ok(predict_many(state, ctx, std::slice::from_ref(raw_sd))?[0])
}

pub fn predict_many(
    state: &MetaState,
    ctx: &ContextVector,
    raw_sds: &[ShiftDescriptor],
) -> Result<Vec<f64>> {
    if state.normalizer.fitted_on < 2 {
        return Err(Error::invalid("normalizer was never fitted"));
    }
    let feats: Vec<_> = raw_sds.iter().map(|sd| state.features(sd)).collect();
    predict_features(&state.params, ctx, &feats)
}

/// Split-conformal half-width: the `⌈(n+1)(1-α)⌉`-th smallest residual.
pub fn conformal_quantile(residuals: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("miscoverage {alpha} outside (0, 1)")));
    }
    let n = residuals.len();
    let rank = ((n as f64 + 1.0) * (1.0 - alpha) - 1e-9).ceil() as usize;
    if rank > n || rank == 0 {
        let needed = ((1.0 / alpha - 1e-9).ceil() as usize).saturating_sub(1);
        return Err(Error::InsufficientCalibration {
            needed: needed.max(rank),
            got: n,
        });
    }
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[rank - 1])
}

pub fn calibrate_interval(
    state: &MetaState,
    ctx: &ContextVector,
    calib_pairs: &[EvalPair],
    alpha: f64,
) -> Result<f64> {
    let sds: Vec<ShiftDescriptor> = calib_pairs.iter().map(|p| p.descriptor.clone()).collect();
    let preds = if sds.is_empty() {
        Vec::new()
    } else {
        predict_many(state, ctx, &sds)?
    };
    let residuals: Vec<f64> = preds
        .iter()
        .zip(calib_pairs)
        .map(|(p, c)| (p - c.true_metric).abs())
        .collect();
    conformal_quantile(&residuals, alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub model_id: String,
    pub estimate: f64,
    pub half_width: f64,
    pub alpha: f64,
    pub interval: (f64, f64),
    pub adaptation_trace: Vec<f64>,
    pub descriptor: ShiftDescriptor,
}

impl PredictionReport {
    pub fn new(
        model_id: impl Into<String>,
        estimate: f64,
        half_width: f64,
        alpha: f64,
        adaptation_trace: Vec<f64>,
        descriptor: ShiftDescriptor,
    ) -> Self {
        let interval = (
            (estimate - half_width).clamp(0.0, 1.0),
            (estimate + half_width).clamp(0.0, 1.0),
        );
        Self {
            model_id: model_id.into(),
            estimate,
            half_width,
            alpha,
            interval,
            adaptation_trace,
            descriptor,
        }
    }
}
