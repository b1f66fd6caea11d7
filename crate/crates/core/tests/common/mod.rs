//! Independent reference implementations used as test oracles. Each is
//! written from the definitions directly, sharing no code with the crate.
#![allow(dead_code)]

use avfuse::annotation::{AnnotationRecord, PriorLabel};
use avfuse::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Mean cross-entropy of row-major `logits` (`n × c`).
pub fn ce(logits: &[f64], c: usize, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits[i * c..(i + 1) * c];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / labels.len() as f64
}

pub struct MetricsOracle {
    pub acc: f64,
    pub wa_f1: f64,
    pub uar: f64,
}

/// Per-class precision/recall/F1 by scanning the pairs once per class.
pub fn metrics(preds: &[usize], labels: &[usize], num_classes: usize) -> MetricsOracle {
    let n = preds.len() as f64;
    let acc = preds.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / n;
    let (mut wf1, mut rec_sum, mut present) = (0.0, 0.0, 0.0);
    for c in 0..num_classes {
        let (mut tp, mut fp, mut fnn) = (0.0, 0.0, 0.0);
        for (&p, &y) in preds.iter().zip(labels) {
            match (p == c, y == c) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fnn += 1.0,
                _ => {}
            }
        }
        let support = tp + fnn;
        if support == 0.0 {
            continue;
        }
        let recall = tp / support;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        wf1 += support * f1;
        rec_sum += recall;
        present += 1.0;
    }
    MetricsOracle {
        acc,
        wa_f1: wf1 / n,
        uar: rec_sum / present,
    }
}

/// Vote outcome as `(label, stage)` or `Err(stage that lacked a vote)`.
pub fn vote(members: [usize; 3], extra: [Option<usize>; 3], k: usize) -> Result<(usize, u8), u8> {
    let mut counts = vec![0usize; k];
    for m in members {
        counts[m] += 1;
    }
    if let Some(l) = (0..k).find(|&l| counts[l] >= 2) {
        return Ok((l, 1));
    }
    for (stage, vote) in [(2u8, extra[0]), (3, extra[1])] {
        let v = vote.ok_or(stage)?;
        counts[v] += 1;
        let top = *counts.iter().max().unwrap();
        let holders: Vec<usize> = (0..k).filter(|&l| counts[l] == top).collect();
        if holders.len() == 1 {
            return Ok((holders[0], stage));
        }
    }
    extra[2].map(|e| (e, 4)).ok_or(4)
}

/// `S_a`, `S_r` by direct summation over sets with explicit weights.
pub fn consistency(records: &[AnnotationRecord]) -> (f64, f64) {
    let mut sets: Vec<usize> = records.iter().map(|r| r.set).collect();
    sets.sort_unstable();
    sets.dedup();
    let mut cats: Vec<usize> = Vec::new();
    for &s in &sets {
        let c = records.iter().find(|r| r.set == s).unwrap().set_category;
        cats.push(c);
    }
    let mut distinct = cats.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let (mut sa, mut sr) = (0.0, 0.0);
    for (i, &s) in sets.iter().enumerate() {
        let recs: Vec<&AnnotationRecord> = records.iter().filter(|r| r.set == s).collect();
        let m = recs.len() as f64;
        let w = 1.0 / cats.iter().filter(|&&c| c == cats[i]).count() as f64;
        let mut matched = 0.0;
        let (mut big_c, mut big_m) = (0.0, 0.0);
        for r in recs {
            let prior = match r.prior_label {
                PriorLabel::Category(c) => Some(c),
                PriorLabel::More => None,
            };
            matched += r.labels.iter().filter(|&&l| Some(l) == prior).count() as f64;
            let (a, b, c) = (r.labels[0], r.labels[1], r.labels[2]);
            let maj = if a == b || a == c {
                Some(a)
            } else if b == c {
                Some(b)
            } else {
                None
            };
            match maj {
                None => big_m += 1.0,
                Some(l) if Some(l) == prior => big_c += 1.0,
                Some(_) => {}
            }
        }
        sa += matched / (3.0 * m);
        sr += w * (0.7 * big_c + 0.3 * (m - big_c - big_m));
    }
    (sa / sets.len() as f64, sr / distinct.len() as f64)
}

pub fn record(set: usize, category: usize, j: usize, labels: [usize; 3]) -> AnnotationRecord {
    AnnotationRecord {
        sample_id: format!("s{set}-{j}"),
        group: 0,
        set,
        set_category: category,
        prior_label: PriorLabel::Category(category),
        labels: labels.to_vec(),
        annotators: None,
        confidence: None,
        leader_vote: None,
        leader2_vote: None,
        expert_vote: None,
    }
}

/// Standard nine sets of `m` records; `f(set, category, j)` gives labels.
pub fn standard_fixture(m: usize, mut f: impl FnMut(usize, usize, usize) -> [usize; 3]) -> Vec<AnnotationRecord> {
    let mut out = Vec::new();
    for (set, &cat) in avfuse::annotation::STANDARD_SET_CATEGORIES.iter().enumerate() {
        for j in 0..m {
            out.push(record(set, cat, j, f(set, cat, j)));
        }
    }
    out
}
