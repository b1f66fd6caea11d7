//! Intra-group (`S_a`) and inter-group (`S_r`) consistency over a group's
//! cross-check sets.
//!
//! `S_a = (1/n) Σ_i (1/(3m_i)) Σ_j c_j` where `c_j` counts member labels
//! equal to the prior label, and
//! `S_r = (1/c) Σ_i w_i (0.7·C_i + 0.3·(m_i − C_i − M_i))` where `C_i`
//! counts records whose majority label equals the prior label, `M_i`
//! counts records with three distinct labels, `c` is the number of
//! distinct set categories and `w_i = 1/k` for a category covered by `k`
//! sets. With the standard nine-set composition and `m = 100`, `S_r` spans
//! `[0, 70]`.

use std::collections::BTreeMap;

use serde::Serialize;

use super::records::AnnotationRecord;
use crate::error::{Error, Result};

/// Category of each of the nine standard cross-check sets: three Neutral,
/// two Excitation, one of each remaining category.
pub const STANDARD_SET_CATEGORIES: [usize; 9] = [2, 2, 2, 0, 0, 1, 3, 4, 5];

#[derive(Clone, Debug)]
pub struct CheckSet {
    pub id: usize,
    pub category: usize,
    pub records: Vec<AnnotationRecord>,
}

#[derive(Clone, Debug)]
pub struct CrossCheckSet {
    pub sets: Vec<CheckSet>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SetBreakdown {
    pub set: usize,
    pub category: usize,
    pub m: usize,
    pub weight: f64,
    /// Member labels matching the prior label.
    pub matches: usize,
    /// Records whose majority label equals the prior label (`C_i`).
    pub consistent: usize,
    /// Records with three distinct labels (`M_i`).
    pub more: usize,
    pub s_a: f64,
}

fn multiplicity_weights(sets: &[CheckSet]) -> Vec<f64> {
    let mut count: BTreeMap<usize, usize> = BTreeMap::new();
    for s in sets {
        *count.entry(s.category).or_default() += 1;
    }
    sets.iter().map(|s| 1.0 / count[&s.category] as f64).collect()
}

impl CrossCheckSet {
    /// Group records by set id (ascending), with multiplicity weights.
    pub fn from_records(records: &[AnnotationRecord]) -> Result<Self> {
        let mut by_set: BTreeMap<usize, CheckSet> = BTreeMap::new();
        for r in records {
            let entry = by_set.entry(r.set).or_insert_with(|| CheckSet {
                id: r.set,
                category: r.set_category,
                records: Vec::new(),
            });
            if entry.category != r.set_category {
                return Err(Error::Input(format!(
                    "set {} mixes categories {} and {}",
                    r.set, entry.category, r.set_category
                )));
            }
            entry.records.push(r.clone());
        }
        let sets: Vec<CheckSet> = by_set.into_values().collect();
        if sets.is_empty() {
            return Err(Error::Input("cross-check set has no records".into()));
        }
        let weights = multiplicity_weights(&sets);
        Ok(CrossCheckSet { sets, weights })
    }

    /// Replace the weights; they must equal the multiplicity weights
    /// (which makes them sum to the number of categories).
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        let expect = multiplicity_weights(&self.sets);
        if weights.len() != expect.len() {
            return Err(Error::Config(format!(
                "{} weights for {} sets",
                weights.len(),
                expect.len()
            )));
        }
        let c = self.num_categories() as f64;
        let sum: f64 = weights.iter().sum();
        let consistent = weights.iter().zip(&expect).all(|(w, e)| (w - e).abs() < 1e-12);
        if !consistent || (sum - c).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "set weights {weights:?} do not match the set composition (expected {expect:?}, sum {c})"
            )));
        }
        self.weights = weights;
        Ok(self)
    }

    /// Distinct set categories `c`.
    pub fn num_categories(&self) -> usize {
        let mut cats: Vec<usize> = self.sets.iter().map(|s| s.category).collect();
        cats.sort_unstable();
        cats.dedup();
        cats.len()
    }

    pub fn breakdown(&self) -> Result<Vec<SetBreakdown>> {
        self.sets
            .iter()
            .zip(&self.weights)
            .map(|(set, &w)| {
                let mut matches = 0;
                let mut consistent = 0;
                let mut more = 0;
                for r in &set.records {
                    if r.labels.len() != 3 {
                        return Err(Error::Input(format!(
                            "record `{}` has {} member labels, expected 3",
                            r.sample_id,
                            r.labels.len()
                        )));
                    }
                    matches += r.matches();
                    match r.majority() {
                        Some(l) if r.prior_label.matches(l) => consistent += 1,
                        Some(_) => {}
                        None => more += 1,
                    }
                }
                let m = set.records.len();
                Ok(SetBreakdown {
                    set: set.id,
                    category: set.category,
                    m,
                    weight: w,
                    matches,
                    consistent,
                    more,
                    s_a: matches as f64 / (3 * m) as f64,
                })
            })
            .collect()
    }
}

pub fn s_a(cc: &CrossCheckSet) -> Result<f64> {
    let b = cc.breakdown()?;
    Ok(b.iter().map(|s| s.s_a).sum::<f64>() / b.len() as f64)
}

pub fn s_r(cc: &CrossCheckSet) -> Result<f64> {
    let b = cc.breakdown()?;
    let total: f64 = b
        .iter()
        .map(|s| {
            let (c, m) = (s.consistent as f64, s.more as f64);
            s.weight * (0.7 * c + 0.3 * (s.m as f64 - c - m))
        })
        .sum();
    Ok(total / cc.num_categories() as f64)
}
