//! Oracle sanity: closed-form accuracy, symmetry under label noise,
//! monotone decay with translation severity, and label isolation.

use rand::SeedableRng;

use metaeval::descriptors::{describe, EmbeddingBank, Origin, PreparedBank, SliceSet};
use metaeval::numerics::Matrix;
use metaeval::synth::{
    build_world, sample_workload, true_accuracy_oracle, ClassGaussian, ShiftSpec, SynthModel,
    World, WorldConfig, RAW_ENCODER,
};

/// Φ(1), the standard normal CDF at one.
const PHI_1: f64 = 0.841_344_746_068_542_9;

fn binary_line_world(noise_free_model: bool) -> World {
    let config = WorldConfig {
        dim: 1,
        classes: 2,
        pool_size: 1,
        ..WorldConfig::default()
    };
    let classes = vec![
        ClassGaussian {
            mean: vec![-1.0],
            covariance: Matrix::identity(1),
        },
        ClassGaussian {
            mean: vec![1.0],
            covariance: Matrix::identity(1),
        },
    ];
    // Scores -x and +x: class 1 exactly when x > 0.
    let weights = if noise_free_model {
        Matrix::from_rows(&[vec![-1.0], vec![1.0]]).unwrap()
    } else {
        Matrix::from_rows(&[vec![0.3], vec![-0.2]]).unwrap()
    };
    let source = Matrix::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
    let model = SynthModel {
        model_id: "m000".into(),
        index: 0,
        weights,
        bias: vec![0.0, 0.0],
        source_bank: EmbeddingBank::new("src", source, Origin::Source, RAW_ENCODER).unwrap(),
    };
    World::from_parts(config, classes, vec![1.0], vec![model]).unwrap()
}

#[test]
fn threshold_classifier_on_line_matches_phi_one() {
    let world = binary_line_world(true);
    let w = sample_workload(&world, &ShiftSpec::identity(), 1_000_000, 42).unwrap();
    let acc = true_accuracy_oracle(&world.models[0], &w).unwrap();
    println!("accuracy {acc:.5} vs {PHI_1:.5}");
    assert!((acc - PHI_1).abs() <= 0.002, "{acc}");
}

#[test]
fn half_label_noise_makes_any_binary_classifier_a_coin() {
    for exact in [true, false] {
        let world = binary_line_world(exact);
        let spec = ShiftSpec {
            label_noise: 0.5,
            ..ShiftSpec::identity()
        };
        let w = sample_workload(&world, &spec, 200_000, 9).unwrap();
        let acc = true_accuracy_oracle(&world.models[0], &w).unwrap();
        // Binomial sd at n = 2e5 is about 0.0011.
        assert!((acc - 0.5).abs() < 0.006, "{acc}");
    }
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn accuracy_decays_with_translation_severity() {
    let world = build_world(&WorldConfig::default()).unwrap();
    let levels = [0.5, 2.0, 4.0];
    let per_level = 50;
    let slices = SliceSet::new(world.config.dim, 64, 3).unwrap();
    let src = PreparedBank::new(&world.models[0].source_bank, &slices).unwrap();

    let mut mean_acc = vec![vec![0.0; levels.len()]; world.models.len()];
    let mut severities = Vec::new();
    let mut frechet = Vec::new();
    for (li, &t) in levels.iter().enumerate() {
        for s in 0..per_level {
            let spec = ShiftSpec {
                translation: world.drift_direction.iter().map(|u| t * u).collect(),
                ..ShiftSpec::identity()
            };
            let seed = 10_000 * li as u64 + s as u64;
            let w = sample_workload(&world, &spec, 1000, seed).unwrap();
            for (mi, m) in world.models.iter().enumerate() {
                mean_acc[mi][li] += true_accuracy_oracle(m, &w).unwrap() / per_level as f64;
            }
            let tgt = PreparedBank::new(&w.bank().unwrap(), &slices).unwrap();
            severities.push(t);
            frechet.push(describe(&src, &tgt).unwrap().sd_f);
        }
    }
    for (mi, accs) in mean_acc.iter().enumerate() {
        assert!(
            accs.windows(2).all(|p| p[1] <= p[0]),
            "model {mi}: {accs:?}"
        );
    }
    let rho = spearman(&frechet, &severities);
    println!("spearman(sd_f, severity) = {rho:.3}");
    assert!(rho > 0.5);
}

#[test]
fn descriptors_never_need_labels() {
    let world = build_world(&WorldConfig {
        pool_size: 1,
        ..WorldConfig::default()
    })
    .unwrap();
    let mut rng_spec = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let spec = world.draw_shift(&mut rng_spec);
    let w = sample_workload(&world, &spec, 500, 77).unwrap();
    let slices = SliceSet::new(world.config.dim, 32, 1).unwrap();
    let src = PreparedBank::new(&world.models[0].source_bank, &slices).unwrap();

    let with_workload = describe(&src, &PreparedBank::new(&w.bank().unwrap(), &slices).unwrap()).unwrap();
    // Rebuild the target from the bare sample matrix: nothing but features.
    let stripped = EmbeddingBank::new(w.workload_id.clone(), w.samples.clone(), Origin::Target, RAW_ENCODER).unwrap();
    let bare = describe(&src, &PreparedBank::new(&stripped, &slices).unwrap()).unwrap();
    assert_eq!(with_workload, bare);

    let json = serde_json::to_string(&w.bank().unwrap()).unwrap();
    assert!(!json.contains("label"));
}
