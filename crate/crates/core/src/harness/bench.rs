//! End-to-end benchmark: build a world, meta-train on the reference pool,
//! adapt to each unseen model, and compare against the retrieval baselines
//! on identical test pairs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mae;
use super::store::{
    load_checkpoint, pairs_checksum, save_checkpoint, save_pairs, to_canonical_json, write_checkpoint_file, write_json,
    ContextArtifact,
};
use crate::baselines::{knn_estimate, topk_estimate, DescriptorBank, K_SWEEP};
use crate::error::{Error, Result};
use crate::meta::{
    adapt_unseen, calibrate_interval, meta_train, predict_many, EvalPair, MetaConfig, MetaState,
    TaskDataset,
};
use crate::synth::{build_world, sample_workload, DescriptorConfig, PairFactory, World, WorldConfig, Workload};

pub const REPORT_VERSION: u32 = 1;
pub const FAILURE_MARKER: &str = "FAILED";

pub const METHOD_META: &str = "meta_evaluator";
pub const METHOD_ZERO: &str = "zero_context";
pub const METHOD_KNN: &str = "knn";
pub const METHOD_TOPK: &str = "topk";

/// splitmix64 of `master` offset by `tag`.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master.wrapping_add(tag.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

mod tag {
    pub const WORLD: u64 = 1;
    pub const DESCRIPTOR: u64 = 2;
    pub const META: u64 = 3;
    pub const PARTITION: u64 = 1_000;
    pub const ADAPT: u64 = 2_000;
    pub const WORKLOAD: u64 = 1_000_000;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub train: f64,
    pub val: f64,
    pub adapt: f64,
    pub calibration: f64,
    pub test: f64,
}

impl Default for Partition {
    fn default() -> Self {
        Self {
            train: 0.5,
            val: 0.2,
            adapt: 0.1,
            calibration: 0.1,
            test: 0.1,
        }
    }
}

impl Partition {
    fn fractions(&self) -> [f64; 5] {
        [self.train, self.val, self.adapt, self.calibration, self.test]
    }

    /// Counts for `n` workloads; the test share takes the rounding remainder.
    pub fn counts(&self, n: usize) -> [usize; 5] {
        let f = self.fractions();
        let mut c = [0; 5];
        for k in 0..4 {
            c[k] = (f[k] * n as f64 + 1e-9).floor() as usize;
        }
        c[4] = n - c[..4].iter().sum::<usize>();
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub k_sweep: Vec<usize>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            k_sweep: K_SWEEP.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub master_seed: u64,
    pub reference_models: usize,
    pub unseen_models: usize,
    /// Workloads shared by every model; each model partitions them independently.
    pub workloads: usize,
    pub workload_size: usize,
    pub partition: Partition,
    /// Miscoverage level for the conformal interval.
    pub alpha: f64,
    /// `pool_size` and `seed` are derived from the fields above.
    pub world: WorldConfig,
    /// `seed` is derived from `master_seed`.
    pub descriptor: DescriptorConfig,
    /// `seed` is derived from `master_seed`.
    pub meta: MetaConfig,
    pub baseline: BaselineConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            reference_models: 24,
            unseen_models: 4,
            workloads: 120,
            workload_size: 1000,
            partition: Partition::default(),
            alpha: 0.1,
            world: WorldConfig::default(),
            descriptor: DescriptorConfig::default(),
            meta: MetaConfig::default(),
            baseline: BaselineConfig::default(),
        }
    }
}

impl BenchmarkConfig {
    /// Small run used for smoke tests: 4 reference models, 10 workloads of 200.
    pub fn smoke() -> Self {
        Self {
            reference_models: 4,
            unseen_models: 2,
            workloads: 10,
            workload_size: 200,
            world: WorldConfig {
                source_bank_size: 400,
                ..WorldConfig::default()
            },
            descriptor: DescriptorConfig {
                n_projections: 32,
                seed: 0,
            },
            meta: MetaConfig {
                context_dim: 16,
                hidden: vec![32, 16],
                epochs: 5,
                b_train: 8,
                b_val: 8,
                b_adapt: 8,
                ..MetaConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reference_models == 0 {
            return Err(Error::config("reference_models", "must be >= 1"));
        }
        if self.workload_size < 2 {
            return Err(Error::config("workload_size", "must be >= 2"));
        }
        let f = self.partition.fractions();
        if f.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("partition", "fractions must be >= 0 and sum to 1"));
        }
        let c = self.partition.counts(self.workloads);
        for (name, k) in [("train", 0), ("val", 1), ("test", 4)] {
            if c[k] == 0 {
                return Err(Error::config(
                    format!("partition.{name}"),
                    format!("no workloads out of {}", self.workloads),
                ));
            }
        }
        if self.unseen_models > 0 && c[2] == 0 && self.meta.adapt_steps > 0 {
            return Err(Error::config("partition.adapt", "adaptation needs workloads"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("alpha", "must lie in (0, 1)"));
        }
        if self.baseline.k_sweep.is_empty() || self.baseline.k_sweep.contains(&0) {
            return Err(Error::config("baseline.k_sweep", "needs positive k values"));
        }
        if self.descriptor.n_projections == 0 {
            return Err(Error::config("descriptor.n_projections", "must be >= 1"));
        }
        self.meta.validate()?;
        self.resolved().world.validate()
    }

    /// The configuration actually run: pool size and every seed filled in.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.world.pool_size = self.reference_models + self.unseen_models;
        c.world.seed = derive_seed(self.master_seed, tag::WORLD);
        c.descriptor.seed = derive_seed(self.master_seed, tag::DESCRIPTOR);
        c.meta.seed = derive_seed(self.master_seed, tag::META);
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSet {
    pub master: u64,
    pub world: u64,
    pub descriptor: u64,
    pub meta: u64,
    pub workloads: Vec<u64>,
    pub partitions: BTreeMap<String, u64>,
    pub adaptation: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub model_id: String,
    pub method: String,
    pub k: Option<usize>,
    pub mae: f64,
    pub mean_prediction: f64,
    pub mean_truth: f64,
    pub half_width: Option<f64>,
    pub coverage: Option<f64>,
    pub n_test: usize,
    pub pairs_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationRecord {
    pub model_id: String,
    pub batch_size: usize,
    pub trace: Vec<f64>,
    pub non_increasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestBaseline {
    pub k: usize,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Mean over unseen models of the per-model MAE, keyed by method label.
    pub method_mae: BTreeMap<String, f64>,
    pub meta_mae: Option<f64>,
    pub zero_context_mae: Option<f64>,
    pub best_knn: Option<BestBaseline>,
    pub best_topk: Option<BestBaseline>,
    /// MetaEvaluator MAE divided by the better baseline's MAE.
    pub ratio_to_best_baseline: Option<f64>,
    pub mean_coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub initial_val_mae: f64,
    pub best_val_mae: f64,
    pub param_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub schema_version: u32,
    pub config: BenchmarkConfig,
    pub seeds: SeedSet,
    pub reference_models: Vec<String>,
    pub unseen_models: Vec<String>,
    pub training: TrainingSummary,
    pub rows: Vec<MethodRow>,
    pub adaptation: Vec<AdaptationRecord>,
    pub summary: Summary,
    pub notes: Vec<String>,
}

/// The five disjoint partitions of one model's workloads.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelPairs {
    pub train: Vec<EvalPair>,
    pub val: Vec<EvalPair>,
    pub adapt: Vec<EvalPair>,
    pub calibration: Vec<EvalPair>,
    pub test: Vec<EvalPair>,
}

pub const PARTITION_NAMES: [&str; 5] = ["train", "val", "adapt", "calibration", "test"];

impl ModelPairs {
    pub fn parts(&self) -> [&Vec<EvalPair>; 5] {
        [&self.train, &self.val, &self.adapt, &self.calibration, &self.test]
    }
}

/// Wall-clock seconds per phase. Kept apart from the report, which must be
/// reproducible byte for byte.
pub type Timings = BTreeMap<String, f64>;

pub struct BenchmarkOutcome {
    pub report: BenchmarkReport,
    pub state: MetaState,
    pub pairs: BTreeMap<String, ModelPairs>,
    pub contexts: Vec<ContextArtifact>,
    pub timings: Timings,
}

pub fn model_ids(config: &BenchmarkConfig) -> (Vec<String>, Vec<String>) {
    // Unseen models take the lowest indices so that shrinking the reference
    // pool leaves them unchanged.
    let id = |i: usize| format!("m{i:03}");
    let unseen = (0..config.unseen_models).map(id).collect();
    let reference = (config.unseen_models..config.unseen_models + config.reference_models)
        .map(id)
        .collect();
    (reference, unseen)
}

pub fn generate_workloads(world: &World, config: &BenchmarkConfig) -> Result<Vec<Workload>> {
    (0..config.workloads)
        .map(|i| {
            let seed = derive_seed(config.master_seed, tag::WORKLOAD + i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(7);
            let spec = world.draw_shift(&mut rng);
            sample_workload(world, &spec, config.workload_size, seed)
        })
        .collect()
}

pub fn partition_seed(master: u64, model_index: usize) -> u64 {
    derive_seed(master, tag::PARTITION + model_index as u64)
}

/// Seeded assignment of workload indices to the five partitions.
pub fn partition_indices(config: &BenchmarkConfig, seed: u64) -> [Vec<usize>; 5] {
    let mut idx: Vec<usize> = (0..config.workloads).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let counts = config.partition.counts(config.workloads);
    let mut out: [Vec<usize>; 5] = Default::default();
    let mut start = 0;
    for (k, c) in counts.iter().enumerate() {
        out[k] = idx[start..start + c].to_vec();
        start += c;
    }
    out
}

pub fn adapt_seed(master: u64, unseen_index: usize) -> u64 {
    derive_seed(master, tag::ADAPT + unseen_index as u64)
}

fn partition_seeds(world: &World, master: u64) -> BTreeMap<String, u64> {
    world
        .models
        .iter()
        .map(|m| (m.model_id.clone(), partition_seed(master, m.index)))
        .collect()
}

/// Descriptor/oracle pairs for every model of a resolved config. Reference
/// models get their train/val partitions, unseen models the other three.
pub fn build_model_pairs(
    cfg: &BenchmarkConfig,
    world: &World,
    workloads: &[Workload],
    jobs: usize,
) -> Result<BTreeMap<String, ModelPairs>> {
    let factory = PairFactory::new(cfg.world.dim, workloads, &cfg.descriptor)?;
    let partitions = partition_seeds(world, cfg.master_seed);
    let (reference, _) = model_ids(cfg);
    let built = with_pool(jobs, || {
        world
            .models
            .par_iter()
            .map(|m| {
                let split = partition_indices(cfg, partitions[&m.model_id]);
                let is_ref = reference.contains(&m.model_id);
                let get = |k: usize| -> Result<Vec<EvalPair>> {
                    let needed = if is_ref { k < 2 } else { k >= 2 };
                    if needed {
                        factory.pairs_for(m, Some(&split[k]))
                    } else {
                        Ok(Vec::new())
                    }
                };
                let pairs = ModelPairs {
                    train: get(0)?,
                    val: get(1)?,
                    adapt: get(2)?,
                    calibration: get(3)?,
                    test: get(4)?,
                };
                Ok((m.model_id.clone(), pairs))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(built.into_iter().collect())
}

/// Meta-trains on the reference models' train/val partitions.
pub fn train_reference(cfg: &BenchmarkConfig, pairs: &BTreeMap<String, ModelPairs>) -> Result<MetaState> {
    let (reference, _) = model_ids(cfg);
    let to_tasks = |part: fn(&ModelPairs) -> &Vec<EvalPair>| -> Result<Vec<TaskDataset>> {
        reference
            .iter()
            .map(|id| {
                let p = pairs
                    .get(id)
                    .ok_or_else(|| Error::EmptyTask(format!("no pairs for {id}")))?;
                TaskDataset::new(id, part(p).clone())
            })
            .collect()
    };
    meta_train(&to_tasks(|p| &p.train)?, &to_tasks(|p| &p.val)?, &cfg.meta)
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub struct Evaluated {
    pub rows: Vec<MethodRow>,
    pub adaptation: AdaptationRecord,
    pub context: ContextArtifact,
    pub calibration_note: Option<String>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

pub fn evaluate_unseen(
    state: &MetaState,
    config: &BenchmarkConfig,
    model_id: &str,
    adapt_seed: u64,
    pairs: &ModelPairs,
) -> Result<Evaluated> {
    let meta = &config.meta;
    let adaptation = adapt_unseen(
        state,
        model_id,
        &pairs.adapt,
        meta.adapt_steps,
        meta.alpha_adapt,
        adapt_seed,
    )?;
    let test = &pairs.test;
    let checksum = pairs_checksum(test);
    let truths: Vec<f64> = test.iter().map(|p| p.true_metric).collect();
    let sds: Vec<_> = test.iter().map(|p| p.descriptor.clone()).collect();
    let mean_truth = mean(&truths);

    let row = |method: &str, k: Option<usize>, preds: &[f64], hw: Option<f64>| -> Result<MethodRow> {
        let coverage = hw.map(|h| {
            preds
                .iter()
                .zip(&truths)
                .filter(|(p, t)| {
                    let (lo, hi) = ((*p - h).clamp(0.0, 1.0), (*p + h).clamp(0.0, 1.0));
                    (lo..=hi).contains(*t)
                })
                .count() as f64
                / preds.len() as f64
        });
        Ok(MethodRow {
            model_id: model_id.to_string(),
            method: method.to_string(),
            k,
            mae: mae(preds, &truths)?,
            mean_prediction: mean(preds),
            mean_truth,
            half_width: hw,
            coverage,
            n_test: preds.len(),
            pairs_sha256: checksum.clone(),
        })
    };

    let mut calibration_note = None;
    let half_width = match calibrate_interval(state, &adaptation.context, &pairs.calibration, config.alpha) {
        Ok(h) => Some(h),
        Err(Error::InsufficientCalibration { needed, got }) => {
            calibration_note = Some(format!(
                "{model_id}: {got} calibration pairs, {needed} needed for alpha = {}; no interval",
                config.alpha
            ));
            None
        }
        Err(e) => return Err(e),
    };

    let mut rows = Vec::new();
    let adapted = predict_many(state, &adaptation.context, &sds)?;
    rows.push(row(METHOD_META, None, &adapted, half_width)?);
    let zero = predict_many(state, &state.zero_context(model_id), &sds)?;
    rows.push(row(METHOD_ZERO, None, &zero, None)?);

    let bank = DescriptorBank::from_pairs(&pairs.adapt, &state.normalizer);
    let queries: Vec<_> = sds.iter().map(|sd| state.features(sd)).collect();
    for &k in &config.baseline.k_sweep {
        if k > bank.len() {
            continue;
        }
        let knn: Vec<f64> = queries
            .iter()
            .map(|q| knn_estimate(q, &bank, k))
            .collect::<Result<_>>()?;
        rows.push(row(METHOD_KNN, Some(k), &knn, None)?);
        let top: Vec<f64> = queries
            .iter()
            .map(|q| topk_estimate(q, &bank, k))
            .collect::<Result<_>>()?;
        rows.push(row(METHOD_TOPK, Some(k), &top, None)?);
    }

    if rows.iter().any(|r| r.pairs_sha256 != checksum) {
        return Err(Error::invalid("methods were scored on different test pairs"));
    }
    let trace = adaptation.trace.clone();
    let non_increasing = trace.windows(2).all(|w| w[1] <= w[0]);
    Ok(Evaluated {
        rows,
        adaptation: AdaptationRecord {
            model_id: model_id.to_string(),
            batch_size: pairs.adapt.len().min(meta.b_adapt),
            trace: trace.clone(),
            non_increasing,
        },
        context: ContextArtifact {
            model_id: model_id.to_string(),
            seed: adapt_seed,
            steps: meta.adapt_steps,
            alpha: meta.alpha_adapt,
            trace,
            values: adaptation.context.values,
        },
        calibration_note,
    })
}

fn method_label(method: &str, k: Option<usize>) -> String {
    match k {
        Some(k) => format!("{method}@{k}"),
        None => method.to_string(),
    }
}

fn summarize(rows: &[MethodRow], n_models: usize) -> Summary {
    let mut per: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        per.entry(method_label(&r.method, r.k)).or_default().push(r.mae);
    }
    // Only methods scored on every unseen model enter the summary.
    let method_mae: BTreeMap<String, f64> = per
        .into_iter()
        .filter(|(_, v)| v.len() == n_models)
        .map(|(k, v)| (k, mean(&v)))
        .collect();
    let best = |method: &str| -> Option<BestBaseline> {
        rows.iter()
            .filter(|r| r.method == method)
            .filter_map(|r| r.k)
            .filter_map(|k| method_mae.get(&method_label(method, Some(k))).map(|&m| (k, m)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(k, mae)| BestBaseline { k, mae })
    };
    let best_knn = best(METHOD_KNN);
    let best_topk = best(METHOD_TOPK);
    let meta_mae = method_mae.get(METHOD_META).copied();
    let better = match (&best_knn, &best_topk) {
        (Some(a), Some(b)) => Some(a.mae.min(b.mae)),
        (Some(a), None) | (None, Some(a)) => Some(a.mae),
        (None, None) => None,
    };
    let coverages: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == METHOD_META)
        .filter_map(|r| r.coverage)
        .collect();
    Summary {
        zero_context_mae: method_mae.get(METHOD_ZERO).copied(),
        ratio_to_best_baseline: match (meta_mae, better) {
            (Some(m), Some(b)) if b > 0.0 => Some(m / b),
            _ => None,
        },
        mean_coverage: (!coverages.is_empty() && coverages.len() == n_models)
            .then(|| mean(&coverages)),
        method_mae,
        meta_mae,
        best_knn,
        best_topk,
    }
}

/// Optional destination for stage artifacts, written as soon as each stage
/// finishes.
struct Sink<'a>(Option<&'a Path>);

impl Sink<'_> {
    fn pairs(&self, pairs: &BTreeMap<String, ModelPairs>) -> Result<()> {
        let Some(dir) = self.0 else { return Ok(()) };
        let pdir = dir.join("pairs");
        fs::create_dir_all(&pdir)?;
        for (k, name) in PARTITION_NAMES.iter().enumerate() {
            let all: Vec<EvalPair> = pairs.values().flat_map(|p| p.parts()[k].iter().cloned()).collect();
            save_pairs(&pdir.join(format!("{name}.csv")), &all)?;
        }
        Ok(())
    }

    fn checkpoint(&self, state: &MetaState) -> Result<()> {
        match self.0 {
            Some(dir) => write_checkpoint_file(&dir.join("checkpoint.mevc"), state),
            None => Ok(()),
        }
    }
}

pub fn run_benchmark(config: &BenchmarkConfig, jobs: usize) -> Result<BenchmarkOutcome> {
    run_inner(config, jobs, Sink(None))
}

/// Runs the benchmark and writes every artifact under `dir`. On failure a
/// marker file naming the failed stage is left next to whatever was written.
pub fn run_benchmark_to_dir(config: &BenchmarkConfig, jobs: usize, dir: &Path) -> Result<BenchmarkOutcome> {
    fs::create_dir_all(dir)?;
    let marker = dir.join(FAILURE_MARKER);
    if marker.exists() {
        fs::remove_file(&marker)?;
    }
    let result = write_json(&dir.join("config.json"), &config.resolved())
        .and_then(|_| run_inner(config, jobs, Sink(Some(dir))))
        .and_then(|out| {
            write_outcome(dir, &out)?;
            Ok(out)
        });
    if let Err(e) = &result {
        let _ = fs::write(&marker, format!("{e}\n"));
    }
    result
}

fn write_outcome(dir: &Path, out: &BenchmarkOutcome) -> Result<()> {
    fs::write(dir.join("report.json"), to_canonical_json(&out.report)?)?;
    let cdir = dir.join("contexts");
    fs::create_dir_all(&cdir)?;
    for c in &out.contexts {
        write_json(&cdir.join(format!("{}.json", c.model_id)), c)?;
    }
    write_json(&dir.join("timings.json"), &out.timings)
}

fn run_inner(config: &BenchmarkConfig, jobs: usize, sink: Sink<'_>) -> Result<BenchmarkOutcome> {
    stage("config", config.validate())?;
    let cfg = config.resolved();
    let master = cfg.master_seed;
    let mut timings = Timings::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut Timings| {
        timings.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let world = stage("world", build_world(&cfg.world))?;
    let workloads = stage("workloads", generate_workloads(&world, &cfg))?;
    lap("world", &mut timings);

    let (reference, unseen) = model_ids(&cfg);
    let partitions = partition_seeds(&world, master);
    let pairs = stage("descriptors", build_model_pairs(&cfg, &world, &workloads, jobs))?;
    stage("descriptors", sink.pairs(&pairs))?;
    lap("descriptors", &mut timings);

    let state = stage("meta-train", train_reference(&cfg, &pairs))?;
    // Evaluate with the stored (f32) checkpoint so the later stages can be
    // replayed from the run directory alone.
    let state = stage("meta-train", save_checkpoint(&state).and_then(|b| load_checkpoint(&b)))?;
    stage("meta-train", sink.checkpoint(&state))?;
    lap("meta-train", &mut timings);

    let adapt_seeds: BTreeMap<String, u64> = unseen
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), adapt_seed(master, i)))
        .collect();
    let evaluated: Vec<Evaluated> = stage(
        "evaluate",
        with_pool(jobs, || {
            unseen
                .par_iter()
                .map(|id| evaluate_unseen(&state, &cfg, id, adapt_seeds[id], &pairs[id]))
                .collect::<Result<Vec<_>>>()
        })?,
    )?;
    lap("evaluate", &mut timings);

    let mut notes = Vec::new();
    if unseen.is_empty() {
        notes.push("no unseen models configured: the per-model section is empty".to_string());
    }
    let mut rows = Vec::new();
    let mut adaptation = Vec::new();
    let mut contexts = Vec::new();
    for e in evaluated {
        rows.extend(e.rows);
        adaptation.push(e.adaptation);
        contexts.push(e.context);
        notes.extend(e.calibration_note);
    }
    let summary = summarize(&rows, unseen.len());
    let initial = state.log.first().map(|l| l.val_mae).unwrap_or(f64::NAN);
    let best_val = state
        .log
        .iter()
        .find(|l| l.epoch == state.best_epoch)
        .map(|l| l.val_mae)
        .unwrap_or(initial);
    let report = BenchmarkReport {
        schema_version: REPORT_VERSION,
        seeds: SeedSet {
            master,
            world: cfg.world.seed,
            descriptor: cfg.descriptor.seed,
            meta: cfg.meta.seed,
            workloads: workloads.iter().map(|w| w.seed).collect(),
            partitions,
            adaptation: adapt_seeds,
        },
        config: cfg,
        reference_models: reference,
        unseen_models: unseen,
        training: TrainingSummary {
            epochs_run: state.log.len() - 1,
            best_epoch: state.best_epoch,
            initial_val_mae: initial,
            best_val_mae: best_val,
            param_count: state.params.len(),
        },
        rows,
        adaptation,
        summary,
        notes,
    };
    Ok(BenchmarkOutcome {
        report,
        state,
        pairs,
        contexts,
        timings,
    })
}
