use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use metaeval::baselines::{knn_estimate, topk_estimate, BankEntry, DescriptorBank};
use metaeval::descriptors::{
    frechet_term, mahalanobis_term, sliced_wasserstein_term,
};
use metaeval::evaluator::{forward_batch, init_params, ContextVector, Dims, Mode, SD_DIM};
use metaeval::harness::cost::{project_cost, CostSheet, CostUnit, UnitCosts};
use metaeval::numerics::{fit_gaussian_summary, spd_sqrt, sym_eigen, Matrix};
use rust_decimal::Decimal;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |v| Matrix::new(rows, cols, v).unwrap())
}

fn spd(d: usize) -> impl Strategy<Value = Matrix> {
    matrix(d, d).prop_map(move |b| {
        let a = b.matmul(&b.transpose()).unwrap();
        a.add(&Matrix::identity(d).scale(0.1)).unwrap()
    })
}

fn samples() -> impl Strategy<Value = Matrix> {
    (1usize..5, 6usize..40).prop_flat_map(|(d, n)| matrix(n, d))
}

fn permuted(m: &Matrix, seed: u64) -> Matrix {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..m.rows()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| m.row(i).to_vec()).collect();
    Matrix::from_rows(&rows).unwrap()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spd_sqrt_squares_back(a in (1usize..9).prop_flat_map(spd)) {
        let r = spd_sqrt(&a).unwrap();
        let back = r.matmul(&r).unwrap();
        let err = back.add(&a.scale(-1.0)).unwrap().frobenius_norm();
        prop_assert!(err <= 1e-8 * a.frobenius_norm());
    }

    #[test]
    fn eigenvalues_shift_with_identity(a in (1usize..8).prop_flat_map(spd), c in -10.0f64..10.0) {
        let d = a.rows();
        let base = sym_eigen(&a).unwrap().values;
        let shifted = sym_eigen(&a.add(&Matrix::identity(d).scale(c)).unwrap()).unwrap().values;
        for (x, y) in base.iter().zip(&shifted) {
            prop_assert!((x + c - y).abs() <= 1e-9, "{} + {} vs {}", x, c, y);
        }
    }

    #[test]
    fn gaussian_fit_ignores_row_order(m in samples(), seed in any::<u64>()) {
        let a = fit_gaussian_summary(&m).unwrap();
        let b = fit_gaussian_summary(&permuted(&m, seed)).unwrap();
        for (x, y) in a.mean.iter().zip(&b.mean) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
        for (x, y) in a.covariance.as_slice().iter().zip(b.covariance.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn gaussian_fit_scales_with_input(m in samples(), c in 0.1f64..5.0) {
        let a = fit_gaussian_summary(&m).unwrap();
        let b = fit_gaussian_summary(&m.scale(c)).unwrap();
        for (x, y) in a.mean.iter().zip(&b.mean) {
            prop_assert!((c * x - y).abs() <= 1e-10 * (1.0 + y.abs()));
        }
        for (x, y) in a.covariance.as_slice().iter().zip(b.covariance.as_slice()) {
            prop_assert!((c * c * x - y).abs() <= 1e-10 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn descriptor_terms_ignore_row_order(
        (src, tgt) in (1usize..4).prop_flat_map(|d| (matrix(30, d), matrix(25, d))),
        seed in any::<u64>(),
    ) {
        let (ps, pt) = (permuted(&src, seed), permuted(&tgt, seed ^ 1));
        let (fs, ft) = (fit_gaussian_summary(&src).unwrap(), fit_gaussian_summary(&tgt).unwrap());
        let (gs, gt) = (fit_gaussian_summary(&ps).unwrap(), fit_gaussian_summary(&pt).unwrap());
        let f = frechet_term(&fs, &ft).unwrap();
        prop_assert!((f - frechet_term(&gs, &gt).unwrap()).abs() <= 1e-12 * (1.0 + f));
        let m = mahalanobis_term(&fs, &tgt).unwrap();
        prop_assert!((m - mahalanobis_term(&gs, &pt).unwrap()).abs() <= 1e-12 * (1.0 + m));
        let s = sliced_wasserstein_term(&src, &tgt, 16, 5).unwrap();
        prop_assert!((s - sliced_wasserstein_term(&ps, &pt, 16, 5).unwrap()).abs() <= 1e-12 * (1.0 + s));
    }

    #[test]
    fn frechet_is_symmetric(
        (a, b) in (1usize..5).prop_flat_map(|d| (matrix(20, d), matrix(20, d))),
    ) {
        let (fa, fb) = (fit_gaussian_summary(&a).unwrap(), fit_gaussian_summary(&b).unwrap());
        let x = frechet_term(&fa, &fb).unwrap();
        let y = frechet_term(&fb, &fa).unwrap();
        prop_assert!((x - y).abs() <= 1e-6 * x.max(y).max(1e-9), "{} vs {}", x, y);
    }

    #[test]
    fn identical_banks_have_tiny_descriptors(m in samples()) {
        let f = fit_gaussian_summary(&m).unwrap();
        prop_assert!(frechet_term(&f, &f).unwrap() <= 1e-6);
        prop_assert!(sliced_wasserstein_term(&m, &m, 32, 1).unwrap() <= 1e-6);
    }

    #[test]
    fn one_dimensional_translation(
        v in prop::collection::vec(-2.0f64..2.0, 8..40),
        t in -4.0f64..4.0,
    ) {
        let src = Matrix::new(v.len(), 1, v.clone()).unwrap();
        let tgt = Matrix::new(v.len(), 1, v.iter().map(|x| x + t).collect()).unwrap();
        let (a, b) = (fit_gaussian_summary(&src).unwrap(), fit_gaussian_summary(&tgt).unwrap());
        prop_assert!((frechet_term(&a, &b).unwrap() - t * t).abs() <= 1e-6);
        prop_assert!((sliced_wasserstein_term(&src, &tgt, 8, 3).unwrap() - t.abs()).abs() <= 1e-6);
    }

    #[test]
    fn sliced_term_is_deterministic(m in samples(), seed in any::<u64>()) {
        let shifted = m.scale(1.5);
        let a = sliced_wasserstein_term(&m, &shifted, 8, seed).unwrap();
        prop_assert_eq!(a.to_bits(), sliced_wasserstein_term(&m, &shifted, 8, seed).unwrap().to_bits());
    }

    #[test]
    fn evaluator_output_is_a_probability_and_repeatable(
        seed in any::<u64>(),
        sd in prop::array::uniform3(-50.0f64..50.0),
        ctx in prop::collection::vec(-5.0f64..5.0, 4),
    ) {
        let dims = Dims::new(4, vec![6, 3]).unwrap();
        let params = init_params(seed, &dims).unwrap();
        let c = ContextVector { model_id: "m".into(), values: ctx };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = forward_batch(&params, &[sd], &c, Mode::Eval, &mut rng).unwrap().predictions()[0];
        let b = forward_batch(&params, &[sd], &c, Mode::Eval, &mut rng).unwrap().predictions()[0];
        prop_assert!(a > 0.0 && a < 1.0);
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }
}

fn entry(i: usize, f: [f64; SD_DIM], m: f64) -> BankEntry {
    BankEntry {
        features: f,
        true_metric: m,
        model_id: "u".into(),
        workload_id: format!("w{i:03}"),
    }
}

fn bank_strategy() -> impl Strategy<Value = DescriptorBank> {
    prop::collection::vec((prop::array::uniform3(-3.0f64..3.0), 0.0f64..1.0), 1..20).prop_map(|v| {
        DescriptorBank {
            entries: v.into_iter().enumerate().map(|(i, (f, m))| entry(i, f, m)).collect(),
        }
    })
}

fn nonzero_query() -> impl Strategy<Value = [f64; SD_DIM]> {
    prop::array::uniform3(-3.0f64..3.0).prop_filter("nonzero", |q| q.iter().any(|v| v.abs() > 1e-3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn baseline_estimates_stay_in_range(bank in bank_strategy(), q in nonzero_query(), k in 1usize..12) {
        let k = k.min(bank.len());
        let lo = bank.entries.iter().map(|e| e.true_metric).fold(f64::INFINITY, f64::min);
        let hi = bank.entries.iter().map(|e| e.true_metric).fold(f64::NEG_INFINITY, f64::max);
        for v in [knn_estimate(&q, &bank, k).unwrap(), topk_estimate(&q, &bank, k).unwrap()] {
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn knn_ignores_joint_rescaling(bank in bank_strategy(), q in nonzero_query(), c in 0.1f64..10.0, k in 1usize..6) {
        let k = k.min(bank.len());
        let scaled = DescriptorBank {
            entries: bank.entries.iter().map(|e| BankEntry { features: e.features.map(|v| v * c), ..e.clone() }).collect(),
        };
        let a = knn_estimate(&q, &bank, k).unwrap();
        let b = knn_estimate(&q.map(|v| v * c), &scaled, k).unwrap();
        prop_assert!(close(a, b, 1e-12));
    }

    #[test]
    fn topk_ignores_per_vector_rescaling(
        bank in bank_strategy(),
        q in nonzero_query(),
        scales in prop::collection::vec(0.1f64..10.0, 21),
        k in 1usize..6,
    ) {
        let k = k.min(bank.len());
        let scaled = DescriptorBank {
            entries: bank.entries.iter().zip(&scales).map(|(e, s)| BankEntry { features: e.features.map(|v| v * s), ..e.clone() }).collect(),
        };
        let a = topk_estimate(&q, &bank, k).unwrap();
        let b = topk_estimate(&q.map(|v| v * scales[20]), &scaled, k).unwrap();
        prop_assert!(close(a, b, 1e-9), "{} vs {}", a, b);
    }

    #[test]
    fn baselines_ignore_bank_order(bank in bank_strategy(), q in nonzero_query(), seed in any::<u64>(), k in 1usize..6) {
        use rand::seq::SliceRandom;
        let k = k.min(bank.len());
        let mut shuffled = bank.clone();
        shuffled.entries.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(knn_estimate(&q, &bank, k).unwrap().to_bits(), knn_estimate(&q, &shuffled, k).unwrap().to_bits());
        prop_assert_eq!(topk_estimate(&q, &bank, k).unwrap().to_bits(), topk_estimate(&q, &shuffled, k).unwrap().to_bits());
    }

    #[test]
    fn cost_is_linear_in_counts(
        counts in prop::collection::vec((0u64..1_000_000, 0u64..1_000_000, 0u64..1_000_000), 1..6),
        cents in prop::array::uniform3(0u32..100_000),
        factor in 1u64..50,
    ) {
        let costs = UnitCosts {
            c_gen: Decimal::new(cents[0] as i64, 5),
            c_val: Decimal::new(cents[1] as i64, 5),
            c_exec: Decimal::new(cents[2] as i64, 5),
        };
        let sheet = CostSheet {
            budget: Decimal::ONE,
            costs: [("sql".to_string(), costs)].into(),
            units: counts.iter().enumerate().map(|(i, &(g, v, e))| CostUnit {
                modality: "sql".into(),
                unit_id: format!("u{i}"),
                n_gen: g,
                n_val: v,
                n_exec: e,
            }).collect(),
        };
        let one = project_cost(&sheet).unwrap().total;
        let many = project_cost(&sheet.scaled_counts(factor)).unwrap().total;
        prop_assert_eq!(many, one * Decimal::from(factor));
    }
}
