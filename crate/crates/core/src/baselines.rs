//! Retrieval baselines over the same normalized descriptors: KNN
//! (Euclidean) and Top-k (cosine similarity).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::descriptors::DescriptorNormalizer;
use crate::error::{Error, Result};
use crate::evaluator::SD_DIM;
use crate::meta::EvalPair;

pub const DEFAULT_K: usize = 5;
pub const K_SWEEP: [usize; 4] = [1, 3, 5, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub features: [f64; SD_DIM],
    pub true_metric: f64,
    pub model_id: String,
    pub workload_id: String,
}

/// Labeled descriptors available for retrieval.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DescriptorBank {
    pub entries: Vec<BankEntry>,
}

impl DescriptorBank {
    pub fn from_pairs(pairs: &[EvalPair], normalizer: &DescriptorNormalizer) -> Self {
        let entries = pairs
            .iter()
            .map(|p| BankEntry {
                features: normalizer.apply(&p.descriptor),
                true_metric: p.true_metric,
                model_id: p.model_id.clone(),
                workload_id: p.workload_id.clone(),
            })
            .collect();
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn check_k(bank: &DescriptorBank, k: usize) -> Result<()> {
    if bank.is_empty() {
        return Err(Error::invalid("empty descriptor bank"));
    }
    if k == 0 || k > bank.len() {
        return Err(Error::invalid(format!(
            "k = {k} outside [1, {}]",
            bank.len()
        )));
    }
    Ok(())
}

/// Mean metric of the first `k` entries under `order`, ties resolved by
/// workload id so the result does not depend on bank order.
fn mean_of_best(
    bank: &DescriptorBank,
    k: usize,
    score: impl Fn(&BankEntry) -> f64,
    better: fn(f64, f64) -> Ordering,
) -> f64 {
    let mut scored: Vec<(f64, &BankEntry)> = bank.entries.iter().map(|e| (score(e), e)).collect();
    scored.sort_by(|a, b| {
        better(a.0, b.0)
            .then_with(|| a.1.workload_id.cmp(&b.1.workload_id))
            .then_with(|| a.1.model_id.cmp(&b.1.model_id))
            .then_with(|| a.1.true_metric.total_cmp(&b.1.true_metric))
    });
    scored[..k].iter().map(|(_, e)| e.true_metric).sum::<f64>() / k as f64
}

fn euclidean(a: &[f64; SD_DIM], b: &[f64; SD_DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Cosine similarity; a zero vector on either side scores −1.
pub fn cosine_similarity(a: &[f64; SD_DIM], b: &[f64; SD_DIM]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return -1.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

pub fn knn_estimate(query: &[f64; SD_DIM], bank: &DescriptorBank, k: usize) -> Result<f64> {
    check_k(bank, k)?;
    Ok(mean_of_best(
        bank,
        k,
        |e| euclidean(query, &e.features),
        |a, b| a.total_cmp(&b),
    ))
}

pub fn topk_estimate(query: &[f64; SD_DIM], bank: &DescriptorBank, k: usize) -> Result<f64> {
    check_k(bank, k)?;
    Ok(mean_of_best(
        bank,
        k,
        |e| cosine_similarity(query, &e.features),
        |a, b| b.total_cmp(&a),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(f: [f64; 3], a: f64, w: &str) -> BankEntry {
        BankEntry {
            features: f,
            true_metric: a,
            model_id: "m".into(),
            workload_id: w.into(),
        }
    }

    fn line_bank() -> DescriptorBank {
        DescriptorBank {
            entries: vec![
                entry([0.1, 0.0, 0.0], 0.8, "a"),
                entry([0.2, 0.0, 0.0], 0.6, "b"),
                entry([9.0, 0.0, 0.0], 0.0, "c"),
            ],
        }
    }

    #[test]
    fn knn_hand_selection() {
        let q = [0.0; 3];
        let bank = line_bank();
        assert!((knn_estimate(&q, &bank, 2).unwrap() - 0.7).abs() < 1e-15);
        let all = knn_estimate(&q, &bank, 3).unwrap();
        assert!((all - 1.4 / 3.0).abs() < 1e-15);
        assert_eq!(knn_estimate(&[0.2, 0.0, 0.0], &bank, 1).unwrap(), 0.6);
    }

    #[test]
    fn knn_rejects_bad_k() {
        let bank = line_bank();
        assert!(knn_estimate(&[0.0; 3], &bank, 0).is_err());
        assert!(knn_estimate(&[0.0; 3], &bank, 4).is_err());
        assert!(topk_estimate(&[0.0; 3], &DescriptorBank::default(), 1).is_err());
    }

    #[test]
    fn topk_hand_cosine() {
        let bank = DescriptorBank {
            entries: vec![entry([2.0, 0.0, 0.0], 0.9, "x"), entry([0.0, 3.0, 0.0], 0.1, "y")],
        };
        let q = [1.0, 0.0, 0.0];
        assert_eq!(topk_estimate(&q, &bank, 1).unwrap(), 0.9);
        assert_eq!(topk_estimate(&[7.5, 0.0, 0.0], &bank, 1).unwrap(), 0.9);
        assert!((topk_estimate(&q, &bank, 2).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_vectors_score_minus_one() {
        assert_eq!(cosine_similarity(&[0.0; 3], &[1.0, 0.0, 0.0]), -1.0);
    }

    #[test]
    fn ties_break_on_workload_id() {
        let bank = DescriptorBank {
            entries: vec![entry([1.0, 0.0, 0.0], 0.2, "b"), entry([-1.0, 0.0, 0.0], 0.4, "a")],
        };
        assert_eq!(knn_estimate(&[0.0; 3], &bank, 1).unwrap(), 0.4);
        let mut rev = bank.clone();
        rev.entries.reverse();
        assert_eq!(knn_estimate(&[0.0; 3], &rev, 1).unwrap(), 0.4);
    }
}
