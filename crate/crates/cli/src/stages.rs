use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use metaeval::baselines::{knn_estimate, topk_estimate, DescriptorBank};
use metaeval::evaluator::ContextVector;
use metaeval::harness::bench::{
    adapt_seed, build_model_pairs, generate_workloads, model_ids, run_benchmark_to_dir,
    train_reference, BenchmarkConfig, ModelPairs, PARTITION_NAMES,
};
use metaeval::harness::cost::read_cost_sheet;
use metaeval::harness::store::{
    load_pairs, read_checkpoint_file, read_input, read_json, save_pairs, sha256_hex,
    to_canonical_json, write_bank, write_checkpoint_file, ContextArtifact,
};
use metaeval::harness::verify::verify_run_dir;
use metaeval::harness::{mae, project_cost};
use metaeval::meta::{
    adapt_unseen, calibrate_interval, predict_many, EpochLog, EvalPair, MetaState,
    PredictionReport,
};
use metaeval::synth::{build_world, World};
use metaeval::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::{Cli, Command, Global};

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::GenWorld => gen_world(g),
        Command::MakePairs => make_pairs(g),
        Command::MetaTrain => meta_train(g),
        Command::Adapt(m) => adapt(g, m.model.as_deref()),
        Command::Predict(m) => predict(g, m.model.as_deref()),
        Command::Baseline(m) => baseline(g, m.model.as_deref()),
        Command::Benchmark => benchmark(g),
        Command::Cost { sheet } => cost(sheet),
        Command::Verify { rerun } => verify(g, *rerun),
    }
}

/// Parses a config, reporting schema violations with their field path.
pub fn parse_config(bytes: &[u8]) -> Result<BenchmarkConfig> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let cfg: BenchmarkConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { "<root>".into() } else { path }, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn config_from_flags(g: &Global) -> Result<BenchmarkConfig> {
    let mut cfg = match &g.config {
        Some(p) => parse_config(&read_input(p)?)?,
        None => BenchmarkConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.master_seed = s;
    }
    cfg.validate()?;
    Ok(cfg.resolved())
}

/// The resolved config stored by `gen-world`. A `--seed` flag must agree.
fn stored_config(g: &Global) -> Result<BenchmarkConfig> {
    let cfg = parse_config(&read_input(&g.out.join("config.json"))?)?;
    if let Some(s) = g.seed {
        if s != cfg.master_seed {
            return Err(Error::config(
                "master_seed",
                format!("--seed {s} disagrees with the run directory's seed {}", cfg.master_seed),
            ));
        }
    }
    Ok(cfg)
}

/// Write-once file output.
struct Out<'a> {
    root: &'a Path,
    force: bool,
}

impl<'a> Out<'a> {
    fn new(g: &'a Global) -> Result<Self> {
        fs::create_dir_all(&g.out)?;
        Ok(Self {
            root: &g.out,
            force: g.force,
        })
    }

    fn path(&self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if p.exists() && !self.force {
            return Err(Error::Exists(p));
        }
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(p)
    }

    fn bytes(&self, rel: &str, data: &[u8]) -> Result<()> {
        fs::write(self.path(rel)?, data)?;
        Ok(())
    }

    fn json<T: Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        self.bytes(rel, &to_canonical_json(value)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BankRecord {
    id: String,
    path: String,
    rows: usize,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct WorldManifest {
    master_seed: u64,
    reference_models: Vec<String>,
    unseen_models: Vec<String>,
    sources: Vec<BankRecord>,
    workloads: Vec<BankRecord>,
}

fn world_manifest(cfg: &BenchmarkConfig, world: &World) -> Result<(WorldManifest, Vec<Vec<u8>>)> {
    let workloads = generate_workloads(world, cfg)?;
    let mut blobs = Vec::new();
    let mut record = |kind: &str, id: &str, samples: &metaeval::numerics::Matrix| -> Result<BankRecord> {
        let mut buf = Vec::new();
        write_bank(&mut buf, samples)?;
        let rec = BankRecord {
            id: id.to_string(),
            path: format!("banks/{kind}/{id}.mevb"),
            rows: samples.rows(),
            sha256: sha256_hex(&buf),
        };
        blobs.push(buf);
        Ok(rec)
    };
    let sources = world
        .models
        .iter()
        .map(|m| record("sources", &m.model_id, &m.source_bank.samples))
        .collect::<Result<Vec<_>>>()?;
    let wl = workloads
        .iter()
        .map(|w| record("workloads", &w.workload_id, &w.samples))
        .collect::<Result<Vec<_>>>()?;
    let (reference_models, unseen_models) = model_ids(cfg);
    Ok((
        WorldManifest {
            master_seed: cfg.master_seed,
            reference_models,
            unseen_models,
            sources,
            workloads: wl,
        },
        blobs,
    ))
}

fn gen_world(g: &Global) -> Result<()> {
    let cfg = config_from_flags(g)?;
    let out = Out::new(g)?;
    let world = build_world(&cfg.world)?;
    let (manifest, blobs) = world_manifest(&cfg, &world)?;
    out.json("config.json", &cfg)?;
    for (rec, blob) in manifest.sources.iter().chain(&manifest.workloads).zip(&blobs) {
        out.bytes(&rec.path, blob)?;
    }
    out.json("world.json", &manifest)?;
    println!(
        "world: {} models, {} workloads -> {}",
        manifest.sources.len(),
        manifest.workloads.len(),
        g.out.display()
    );
    Ok(())
}

fn make_pairs(g: &Global) -> Result<()> {
    let cfg = stored_config(g)?;
    let stored: WorldManifest = read_json(&g.out.join("world.json"))?;
    let world = build_world(&cfg.world)?;
    let (fresh, _) = world_manifest(&cfg, &world)?;
    for (a, b) in stored.sources.iter().chain(&stored.workloads).zip(fresh.sources.iter().chain(&fresh.workloads)) {
        let on_disk = sha256_hex(&read_input(&g.out.join(&a.path))?);
        if a.id != b.id || a.sha256 != b.sha256 || on_disk != a.sha256 {
            return Err(Error::Checksum(a.path.clone()));
        }
    }
    let workloads = generate_workloads(&world, &cfg)?;
    let pairs = build_model_pairs(&cfg, &world, &workloads, g.jobs)?;
    let out = Out::new(g)?;
    for (k, name) in PARTITION_NAMES.iter().enumerate() {
        let all: Vec<EvalPair> = pairs.values().flat_map(|p| p.parts()[k].iter().cloned()).collect();
        save_pairs(&out.path(&format!("pairs/{name}.csv"))?, &all)?;
    }
    let n: usize = pairs.values().map(|p| p.parts().iter().map(|v| v.len()).sum::<usize>()).sum();
    println!("pairs: {n} across {} models", pairs.len());
    Ok(())
}

/// Pair tables from a run directory, regrouped per model.
fn load_model_pairs(dir: &Path, cfg: &BenchmarkConfig) -> Result<BTreeMap<String, ModelPairs>> {
    let (reference, unseen) = model_ids(cfg);
    let mut out: BTreeMap<String, ModelPairs> = reference
        .iter()
        .chain(&unseen)
        .map(|id| (id.clone(), ModelPairs::default()))
        .collect();
    for (k, name) in PARTITION_NAMES.iter().enumerate() {
        for p in load_pairs(&dir.join("pairs").join(format!("{name}.csv")))? {
            let slot = out
                .get_mut(&p.model_id)
                .ok_or_else(|| Error::Format(format!("unknown model {} in {name}.csv", p.model_id)))?;
            match k {
                0 => slot.train.push(p),
                1 => slot.val.push(p),
                2 => slot.adapt.push(p),
                3 => slot.calibration.push(p),
                _ => slot.test.push(p),
            }
        }
    }
    Ok(out)
}

fn meta_train(g: &Global) -> Result<()> {
    let cfg = stored_config(g)?;
    let pairs = load_model_pairs(&g.out, &cfg)?;
    let out = Out::new(g)?;
    let ckpt = out.path("checkpoint.mevc")?;
    let log_path = out.path("training_log.json")?;
    let state = train_reference(&cfg, &pairs)?;
    write_checkpoint_file(&ckpt, &state)?;
    fs::write(log_path, to_canonical_json::<Vec<EpochLog>>(&state.log)?)?;
    println!(
        "meta-train: {} epochs, best epoch {}, {} parameters",
        state.log.len() - 1,
        state.best_epoch,
        state.params.len()
    );
    Ok(())
}

/// Requested unseen models with their positions (which fix adaptation seeds).
fn select_models(cfg: &BenchmarkConfig, model: Option<&str>) -> Result<Vec<(usize, String)>> {
    let (_, unseen) = model_ids(cfg);
    match model {
        None => Ok(unseen.into_iter().enumerate().collect()),
        Some(m) => unseen
            .iter()
            .position(|u| u == m)
            .map(|i| vec![(i, m.to_string())])
            .ok_or_else(|| Error::config("--model", format!("{m} is not an unseen model ({})", unseen.join(", ")))),
    }
}

fn adapt(g: &Global, model: Option<&str>) -> Result<()> {
    let cfg = stored_config(g)?;
    let models = select_models(&cfg, model)?;
    let state = read_checkpoint_file(&g.out.join("checkpoint.mevc"))?;
    let pairs = load_model_pairs(&g.out, &cfg)?;
    let out = Out::new(g)?;
    for (i, id) in models {
        let seed = adapt_seed(cfg.master_seed, i);
        let meta = &cfg.meta;
        let a = adapt_unseen(&state, &id, &pairs[&id].adapt, meta.adapt_steps, meta.alpha_adapt, seed)?;
        let artifact = ContextArtifact {
            model_id: id.clone(),
            seed,
            steps: meta.adapt_steps,
            alpha: meta.alpha_adapt,
            trace: a.trace.clone(),
            values: a.context.values,
        };
        out.json(&format!("contexts/{id}.json"), &artifact)?;
        println!("adapt {id}: trace {:?}", a.trace);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct PredictionFile {
    model_id: String,
    mae: f64,
    coverage: Option<f64>,
    half_width: Option<f64>,
    predictions: Vec<PredictionReport>,
}

fn load_context(dir: &Path, id: &str) -> Result<ContextArtifact> {
    read_json(&dir.join("contexts").join(format!("{id}.json")))
}

fn predict(g: &Global, model: Option<&str>) -> Result<()> {
    let cfg = stored_config(g)?;
    let models = select_models(&cfg, model)?;
    let state = read_checkpoint_file(&g.out.join("checkpoint.mevc"))?;
    let pairs = load_model_pairs(&g.out, &cfg)?;
    let out = Out::new(g)?;
    for (_, id) in models {
        let art = load_context(&g.out, &id)?;
        let ctx = ContextVector {
            model_id: id.clone(),
            values: art.values.clone(),
        };
        let p = &pairs[&id];
        let half_width = match calibrate_interval(&state, &ctx, &p.calibration, cfg.alpha) {
            Ok(h) => Some(h),
            Err(Error::InsufficientCalibration { needed, got }) => {
                log::warn!("{id}: {got} calibration pairs, {needed} needed; no interval");
                None
            }
            Err(e) => return Err(e),
        };
        let sds: Vec<_> = p.test.iter().map(|t| t.descriptor.clone()).collect();
        let preds = if sds.is_empty() { Vec::new() } else { predict_many(&state, &ctx, &sds)? };
        let truths: Vec<f64> = p.test.iter().map(|t| t.true_metric).collect();
        let reports: Vec<PredictionReport> = preds
            .iter()
            .zip(&sds)
            .map(|(e, sd)| {
                PredictionReport::new(id.clone(), *e, half_width.unwrap_or(f64::NAN), cfg.alpha, art.trace.clone(), sd.clone())
            })
            .collect();
        let coverage = half_width.map(|_| {
            reports
                .iter()
                .zip(&truths)
                .filter(|(r, t)| (r.interval.0..=r.interval.1).contains(*t))
                .count() as f64
                / reports.len().max(1) as f64
        });
        let file = PredictionFile {
            model_id: id.clone(),
            mae: mae(&preds, &truths)?,
            coverage,
            half_width,
            predictions: reports,
        };
        out.json(&format!("predictions/{id}.json"), &file)?;
        println!("predict {id}: MAE {:.5}, half-width {:?}", file.mae, half_width);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct BaselineRow {
    method: &'static str,
    k: usize,
    mae: f64,
    estimates: Vec<f64>,
}

fn baseline(g: &Global, model: Option<&str>) -> Result<()> {
    let cfg = stored_config(g)?;
    let models = select_models(&cfg, model)?;
    // Descriptor normalization comes from the meta-training checkpoint.
    let state: MetaState = read_checkpoint_file(&g.out.join("checkpoint.mevc"))?;
    let pairs = load_model_pairs(&g.out, &cfg)?;
    let out = Out::new(g)?;
    for (_, id) in models {
        let p = &pairs[&id];
        let bank = DescriptorBank::from_pairs(&p.adapt, &state.normalizer);
        let queries: Vec<_> = p.test.iter().map(|t| state.features(&t.descriptor)).collect();
        let truths: Vec<f64> = p.test.iter().map(|t| t.true_metric).collect();
        let mut rows = Vec::new();
        for &k in cfg.baseline.k_sweep.iter().filter(|&&k| k <= bank.len()) {
            for (method, f) in [
                ("knn", knn_estimate as fn(_, _, _) -> _),
                ("topk", topk_estimate as fn(_, _, _) -> _),
            ] {
                let estimates = queries.iter().map(|q| f(q, &bank, k)).collect::<Result<Vec<f64>>>()?;
                rows.push(BaselineRow {
                    method,
                    k,
                    mae: mae(&estimates, &truths)?,
                    estimates,
                });
            }
        }
        for r in &rows {
            println!("baseline {id}: {}@{} MAE {:.5}", r.method, r.k, r.mae);
        }
        out.json(&format!("baselines/{id}.json"), &rows)?;
    }
    Ok(())
}

fn benchmark(g: &Global) -> Result<()> {
    let cfg = config_from_flags(g)?;
    metaeval::harness::store::prepare_output_dir(&g.out, g.force)?;
    let outcome = run_benchmark_to_dir(&cfg, g.jobs, &g.out)?;
    let s = &outcome.report.summary;
    println!("report: {}", g.out.join("report.json").display());
    if let Some(m) = s.meta_mae {
        println!("meta_evaluator MAE {m:.5}");
    }
    if let Some(b) = &s.best_knn {
        println!("best knn (k = {}) MAE {:.5}", b.k, b.mae);
    }
    if let Some(b) = &s.best_topk {
        println!("best topk (k = {}) MAE {:.5}", b.k, b.mae);
    }
    Ok(())
}

fn cost(sheet: &Path) -> Result<()> {
    let bytes = read_input(sheet)?;
    let projection = project_cost(&read_cost_sheet(bytes.as_slice())?)?;
    println!("total {}", projection.total);
    println!("budget {}", projection.budget);
    println!("within_budget {}", projection.within_budget);
    Ok(())
}

fn verify(g: &Global, rerun: bool) -> Result<()> {
    if g.seed.is_some() {
        stored_config(g)?;
    }
    let report = verify_run_dir(&g.out, rerun, g.jobs)?;
    for c in &report.checks {
        let mark = if c.passed { "ok  " } else { "FAIL" };
        if c.detail.is_empty() {
            println!("{mark} {}", c.name);
        } else {
            println!("{mark} {} ({})", c.name, c.detail);
        }
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Error::invalid("verification failed"))
    }
}
