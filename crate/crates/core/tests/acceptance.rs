//! End-to-end acceptance suite. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero when any criterion fails.
//! The benchmark criteria use `configs/acceptance.json`.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use metaeval::descriptors::{
    describe, frechet_term, mahalanobis_term, sliced_wasserstein_term, EmbeddingBank, Origin,
    PreparedBank, SliceSet,
};
use metaeval::evaluator::{
    backward, forward_batch, forward_with_masks, init_params, ContextVector, Dims, Mode, SD_DIM,
};
use metaeval::harness::bench::{derive_seed, BenchmarkConfig, BenchmarkOutcome};
use metaeval::harness::cost::{project_cost, read_cost_sheet};
use metaeval::harness::store::{load_checkpoint, save_checkpoint};
use metaeval::harness::{run_benchmark, run_benchmark_to_dir};
use metaeval::meta::{calibrate_interval, predict_many};
use metaeval::numerics::{spd_sqrt, GaussianSummary, Matrix};
use metaeval::synth::{
    build_world, sample_workload, true_accuracy_oracle, ClassGaussian, PairFactory, ShiftSpec,
    SynthModel, World, WorldConfig, RAW_ENCODER,
};

const SEEDS: u64 = 5;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn acceptance_config() -> BenchmarkConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance.json");
    let text = std::fs::read_to_string(&path).expect("configs/acceptance.json");
    serde_json::from_str(&text).expect("acceptance config parses")
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

// 1

fn gradient_check() -> Verdict {
    const H: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    const FLOOR: f64 = 1e-6;
    let start = Instant::now();
    let dims = Dims::new(2, vec![8, 4, 2]).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut params = init_params(seed, &dims).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xacce);
        for v in params.data.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        let mut ctx = ContextVector::zeros("m", 2);
        ctx.values = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
        let batch = rng.random_range(1..4);
        let sds: Vec<[f64; SD_DIM]> = (0..batch)
            .map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0)))
            .collect();
        let train = forward_batch(&params, &sds, &ctx, Mode::Train { dropout: 0.25 }, &mut rng).unwrap();
        let masks: Vec<_> = train.masks().into_iter().map(|m| m.unwrap()).collect();
        let up: Vec<f64> = (0..batch).map(|_| rng.random_range(-1.0..1.0)).collect();

        let objective = |p: &metaeval::evaluator::EvaluatorParams, c: &ContextVector| -> f64 {
            let cache = forward_with_masks(p, &sds, c, &masks).unwrap();
            cache.predictions().iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        let cache = forward_with_masks(&params, &sds, &ctx, &masks).unwrap();
        let g = backward(&params, &cache, &up).unwrap();
        let (gp, gc) = (g.params.unwrap(), g.ctx.unwrap());
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(FLOOR);
        for i in 0..params.len() {
            let (mut plus, mut minus) = (params.clone(), params.clone());
            plus.data[i] += H;
            minus.data[i] -= H;
            let n = (objective(&plus, &ctx) - objective(&minus, &ctx)) / (2.0 * H);
            worst = worst.max(rel(gp[i], n));
        }
        for k in 0..2 {
            let (mut plus, mut minus) = (ctx.clone(), ctx.clone());
            plus.values[k] += H;
            minus.values[k] -= H;
            let n = (objective(&params, &plus) - objective(&params, &minus)) / (2.0 * H);
            worst = worst.max(rel(gc[k], n));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= TOL && secs < 10.0,
        format!("worst relative error {worst:.2e} (<= {TOL:.0e}), {secs:.2}s (< 10s)"),
    )
}

// 2

fn descriptor_goldens() -> Verdict {
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut pass = true;

    let a = GaussianSummary::from_parts(vec![0.0], Matrix::identity(1), 2).unwrap();
    let b = GaussianSummary::from_parts(vec![1.0], Matrix::from_diag(&[4.0]), 2).unwrap();
    let f = frechet_term(&a, &b).unwrap();
    pass &= (f - 2.0).abs() <= 1e-8;
    notes.push(format!("frechet {f:.12}"));

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let samples = normal_matrix(&mut rng, 1000, 16);
    let slices = SliceSet::new(16, 512, 11).unwrap();
    let bank = EmbeddingBank::new("b", samples.clone(), Origin::Source, RAW_ENCODER).unwrap();
    let prepared = PreparedBank::new(&bank, &slices).unwrap();
    let same = describe(&prepared, &prepared).unwrap();
    // A mean Mahalanobis norm cannot vanish for a bank against itself (it is
    // about sqrt(d) there); its zero is a target sitting on the source mean.
    let at_mean = Matrix::from_rows(&vec![prepared.summary().mean.clone(); 10]).unwrap();
    let m0 = mahalanobis_term(prepared.summary(), &at_mean).unwrap();
    let worst_same = same.sd_f.max(same.sd_sw).max(m0);
    pass &= worst_same <= 1e-6;
    notes.push(format!(
        "identical banks f {:.1e} sw {:.1e}, target on source mean m {m0:.1e} (self m {:.3})",
        same.sd_f, same.sd_sw, same.sd_m
    ));

    let mut worst_sqrt = 0.0f64;
    for i in 0..50 {
        let d = 1 + (i * 31) % 32;
        let g = normal_matrix(&mut rng, d, d);
        let spd = g.matmul(&g.transpose()).unwrap().add(&Matrix::identity(d).scale(0.1)).unwrap();
        let s = spd_sqrt(&spd).unwrap();
        let resid = s.matmul(&s).unwrap().add(&spd.scale(-1.0)).unwrap().frobenius_norm();
        worst_sqrt = worst_sqrt.max(resid);
    }
    pass &= worst_sqrt <= 1e-8;
    notes.push(format!("spd sqrt residual {worst_sqrt:.1e}"));

    let t = [1.5, -0.7];
    let slices = SliceSet::new(2, 512, 5).unwrap();
    let src = normal_matrix(&mut rng, 1000, 2);
    let mut tgt = src.clone();
    for r in 0..1000 {
        for (x, dt) in tgt.row_mut(r).iter_mut().zip(&t) {
            *x += dt;
        }
    }
    let sw = sliced_wasserstein_term(&src, &tgt, 512, 5).unwrap();
    let closed = (slices
        .directions()
        .iter()
        .map(|u| u.iter().zip(&t).map(|(a, b)| a * b).sum::<f64>().powi(2))
        .sum::<f64>()
        / slices.len() as f64)
        .sqrt();
    let rel = (sw - closed).abs() / closed;
    pass &= rel <= 0.03;
    notes.push(format!("sliced {sw:.4} vs {closed:.4} ({:.2}%)", 100.0 * rel));

    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 30.0;
    notes.push(format!("{secs:.1}s"));
    verdict(pass, notes.join(", "))
}

// 3

fn line_world() -> World {
    let config = WorldConfig {
        dim: 1,
        classes: 2,
        pool_size: 1,
        ..WorldConfig::default()
    };
    let classes = [-1.0, 1.0]
        .iter()
        .map(|&m| ClassGaussian {
            mean: vec![m],
            covariance: Matrix::identity(1),
        })
        .collect();
    let model = SynthModel {
        model_id: "m000".into(),
        index: 0,
        weights: Matrix::from_rows(&[vec![-1.0], vec![1.0]]).unwrap(),
        bias: vec![0.0, 0.0],
        source_bank: EmbeddingBank::new(
            "src",
            Matrix::from_rows(&[vec![-1.0], vec![1.0]]).unwrap(),
            Origin::Source,
            RAW_ENCODER,
        )
        .unwrap(),
    };
    World::from_parts(config, classes, vec![1.0], vec![model]).unwrap()
}

fn oracle_sanity() -> Verdict {
    const PHI_1: f64 = 0.841_344_746_068_542_9;
    let world = line_world();
    let w = sample_workload(&world, &ShiftSpec::identity(), 1_000_000, 42).unwrap();
    let acc = true_accuracy_oracle(&world.models[0], &w).unwrap();
    let phi_ok = (acc - PHI_1).abs() <= 0.002;

    let cfg = acceptance_config().resolved();
    let world = build_world(&cfg.world).unwrap();
    let levels = [1.0, 4.0, 8.0];
    let per_level = 50;
    let mut mean_acc = vec![[0.0; 3]; world.models.len()];
    for (li, &t) in levels.iter().enumerate() {
        for s in 0..per_level {
            let spec = ShiftSpec {
                translation: world.drift_direction.iter().map(|u| t * u).collect(),
                ..ShiftSpec::identity()
            };
            let w = sample_workload(&world, &spec, 1000, 7_000 + 100 * li as u64 + s).unwrap();
            for (mi, m) in world.models.iter().enumerate() {
                mean_acc[mi][li] += true_accuracy_oracle(m, &w).unwrap() / per_level as f64;
            }
        }
    }
    let monotone = mean_acc.iter().filter(|a| a[1] <= a[0] && a[2] <= a[1]).count();
    let n = world.models.len();
    verdict(
        phi_ok && monotone == n,
        format!("accuracy {acc:.5} vs Φ(1) {PHI_1:.5}; monotone decay for {monotone}/{n} models"),
    )
}

// 4, 5, 6, 9 share the seeded acceptance runs.

struct SeedRun {
    outcome: BenchmarkOutcome,
    secs: f64,
}

fn run_seeds(base: &BenchmarkConfig) -> Vec<SeedRun> {
    (0..SEEDS)
        .map(|s| {
            let cfg = BenchmarkConfig {
                master_seed: s,
                ..base.clone()
            };
            let start = Instant::now();
            let outcome = run_benchmark(&cfg, jobs()).expect("benchmark run");
            SeedRun {
                outcome,
                secs: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

fn avg(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn ordering(runs: &[SeedRun]) -> Verdict {
    let s = |r: &SeedRun| r.outcome.report.summary.clone();
    let meta = avg(runs.iter().map(|r| s(r).meta_mae.unwrap()));
    let knn = avg(runs.iter().map(|r| s(r).best_knn.unwrap().mae));
    let topk = avg(runs.iter().map(|r| s(r).best_topk.unwrap().mae));
    let better = knn.min(topk);
    let secs: f64 = runs.iter().map(|r| r.secs).sum();
    let pass = meta < knn && meta < topk && meta <= 0.6 * better && secs <= 600.0;
    verdict(
        pass,
        format!(
            "meta {meta:.4}, knn {knn:.4}, topk {topk:.4}; ratio {:.3} (<= 0.6); {secs:.0}s (<= 600s)",
            meta / better
        ),
    )
}

fn adaptation(runs: &[SeedRun]) -> Verdict {
    let wins = runs
        .iter()
        .filter(|r| {
            let s = &r.outcome.report.summary;
            s.meta_mae.unwrap() < s.zero_context_mae.unwrap()
        })
        .count();
    let records: Vec<_> = runs.iter().flat_map(|r| &r.outcome.report.adaptation).collect();
    let monotone = records.iter().filter(|a| a.non_increasing).count();
    let frac = monotone as f64 / records.len() as f64;
    verdict(
        wins >= 4 && frac >= 0.9,
        format!(
            "adapted beats zero context in {wins}/{SEEDS} seeds (>= 4); non-increasing traces {monotone}/{} (>= 90%)",
            records.len()
        ),
    )
}

/// Fresh workloads for one unseen model, split into calibration and test
/// halves of 1000 each.
fn coverage(run: &SeedRun) -> Verdict {
    const N: usize = 1000;
    const ALPHA: f64 = 0.1;
    let cfg = run.outcome.report.config.clone();
    let world = build_world(&cfg.world).unwrap();
    let model_id = &run.outcome.report.unseen_models[0];
    let model = world.model(model_id).unwrap();
    let workloads: Vec<_> = (0..2 * N)
        .map(|i| {
            let seed = derive_seed(cfg.master_seed, 9_000_000 + i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = world.draw_shift(&mut rng);
            sample_workload(&world, &spec, cfg.workload_size, seed).unwrap()
        })
        .collect();
    let pairs = PairFactory::new(cfg.world.dim, &workloads, &cfg.descriptor)
        .unwrap()
        .pairs_for(model, None)
        .unwrap();
    let (calib, test) = pairs.split_at(N);
    let artifact = run.outcome.contexts.iter().find(|c| &c.model_id == model_id).unwrap();
    let mut ctx = ContextVector::zeros(model_id.clone(), artifact.values.len());
    ctx.values = artifact.values.clone();
    let state = &run.outcome.state;
    let delta = calibrate_interval(state, &ctx, calib, ALPHA).unwrap();
    let sds: Vec<_> = test.iter().map(|p| p.descriptor.clone()).collect();
    let preds = predict_many(state, &ctx, &sds).unwrap();
    let covered = preds
        .iter()
        .zip(test)
        .filter(|(p, t)| (t.true_metric - *p).abs() <= delta)
        .count();
    let cov = covered as f64 / N as f64;
    verdict(
        (0.85..=1.0).contains(&cov),
        format!("coverage {cov:.3} at alpha {ALPHA} with {N} calibration and {N} test pairs, half-width {delta:.4}"),
    )
}

fn robustness(full: &[SeedRun], base: &BenchmarkConfig) -> Verdict {
    let small = run_seeds(&BenchmarkConfig {
        reference_models: 6,
        ..base.clone()
    });
    let big = avg(full.iter().map(|r| r.outcome.report.summary.meta_mae.unwrap()));
    let little = avg(small.iter().map(|r| r.outcome.report.summary.meta_mae.unwrap()));
    let ratio = little / big;
    verdict(
        ratio > 1.0 && ratio < 3.0,
        format!("MAE with 24 references {big:.4}, with 6 {little:.4}; ratio {ratio:.2} (in (1, 3))"),
    )
}

// 7

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Verdict {
    let cfg = BenchmarkConfig::smoke();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let run_a = run_benchmark_to_dir(&cfg, jobs(), a.path()).unwrap();
    run_benchmark_to_dir(&cfg, 1, b.path()).unwrap();
    let (fa, fb) = (files(a.path()), files(b.path()));
    // Wall-clock timings are the one artifact allowed to differ.
    let strip = |mut f: BTreeMap<String, Vec<u8>>| {
        f.remove("timings.json");
        f
    };
    let (fa, fb) = (strip(fa), strip(fb));
    let identical = !fa.is_empty() && fa == fb;

    let bytes = save_checkpoint(&run_a.state).unwrap();
    let back = load_checkpoint(&bytes).unwrap();
    let round_trip = back == run_a.state && save_checkpoint(&back).unwrap() == bytes;

    let mut corrupt = bytes.clone();
    let mid = corrupt.len() / 2;
    corrupt[mid] ^= 0x01;
    let detected = load_checkpoint(&corrupt).is_err() && load_checkpoint(&bytes[..mid]).is_err();
    verdict(
        identical && round_trip && detected,
        format!(
            "{} artifacts byte-identical: {identical}; checkpoint round trip exact: {round_trip}; corruption detected: {detected}",
            fa.len()
        ),
    )
}

// 8

fn budget() -> Verdict {
    let text = "budget,1000\nmodality,unit_id,n_gen,n_val,n_exec,c_gen,c_val,c_exec\nsql,u1,1000,1000,100,8e-5,2e-5,40e-5\n";
    let sheet = read_cost_sheet(text.as_bytes()).unwrap();
    let p = project_cost(&sheet).unwrap();
    let exact = p.total.to_string() == "0.14" && p.within_budget;
    let doubled = project_cost(&sheet.scaled_counts(2)).unwrap();
    let linear = doubled.total == p.total * rust_decimal::Decimal::from(2);
    verdict(
        exact && linear,
        format!("total {} (0.14), doubled counts {} (exactly twice: {linear})", p.total, doubled.total),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, v: Verdict| {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {n} [{tag}] {name}: {}", v.detail);
        failed += usize::from(!v.pass);
    };

    report(1, "gradient correctness", gradient_check());
    report(2, "descriptor golden values", descriptor_goldens());
    report(3, "oracle sanity", oracle_sanity());

    let base = acceptance_config();
    let runs = run_seeds(&base);
    report(4, "end-to-end ordering", ordering(&runs));
    report(5, "adaptation utility", adaptation(&runs));
    report(6, "conformal coverage", coverage(&runs[0]));
    report(7, "determinism", determinism());
    report(8, "budget arithmetic", budget());
    report(9, "reference pool robustness", robustness(&runs, &base));

    // Per-seed detail for the benchmark criteria.
    for r in &runs {
        let s = &r.outcome.report.summary;
        println!(
            "  seed {}: meta {:.4} zero {:.4} knn {:.4} topk {:.4} ({:.1}s)",
            r.outcome.report.config.master_seed,
            s.meta_mae.unwrap(),
            s.zero_context_mae.unwrap(),
            s.best_knn.as_ref().unwrap().mae,
            s.best_topk.as_ref().unwrap().mae,
            r.secs
        );
    }

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
