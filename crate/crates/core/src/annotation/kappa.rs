//! Fleiss' kappa over an item × category count matrix.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "status", content = "value", rename_all = "snake_case")]
pub enum Kappa {
    Value(f64),
    /// Every rating fell in one category, so chance agreement is 1 and the
    /// statistic is undefined.
    PerfectAgreementDegenerate,
}

impl Kappa {
    pub fn value(self) -> Option<f64> {
        match self {
            Kappa::Value(v) => Some(v),
            Kappa::PerfectAgreementDegenerate => None,
        }
    }
}

/// `(P̄ − P̄_e) / (1 − P̄_e)` for `counts[item][category]`, every row
/// summing to `raters`.
pub fn fleiss_kappa(counts: &[Vec<usize>], raters: usize) -> Result<Kappa> {
    if counts.is_empty() {
        return Err(Error::Input("kappa needs at least one item".into()));
    }
    if raters < 2 {
        return Err(Error::Input(format!("kappa needs at least 2 raters, got {raters}")));
    }
    let k = counts[0].len();
    let n = raters as f64;
    let mut col = vec![0usize; k];
    let mut p_bar = 0.0;
    for (i, row) in counts.iter().enumerate() {
        if row.len() != k {
            return Err(Error::Input(format!("item {i} has {} categories, expected {k}", row.len())));
        }
        let sum: usize = row.iter().sum();
        if sum != raters {
            return Err(Error::Input(format!("item {i} has {sum} ratings, expected {raters}")));
        }
        let sq: usize = row.iter().map(|c| c * c).sum();
        p_bar += (sq as f64 - n) / (n * (n - 1.0));
        for (c, v) in col.iter_mut().zip(row) {
            *c += v;
        }
    }
    let items = counts.len() as f64;
    p_bar /= items;
    let p_e: f64 = col.iter().map(|&c| (c as f64 / (items * n)).powi(2)).sum();
    if col.iter().filter(|&&c| c > 0).count() <= 1 {
        return Ok(Kappa::PerfectAgreementDegenerate);
    }
    Ok(Kappa::Value((p_bar - p_e) / (1.0 - p_e)))
}

/// Count matrix from per-item label lists.
pub fn count_matrix(labels: &[Vec<usize>], num_categories: usize) -> Result<Vec<Vec<usize>>> {
    labels
        .iter()
        .map(|ls| {
            let mut row = vec![0; num_categories];
            for &l in ls {
                *row.get_mut(l)
                    .ok_or_else(|| Error::Input(format!("category {l} outside [0, {num_categories})")))? += 1;
            }
            Ok(row)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_agreement_and_degenerate() {
        let c = vec![vec![3, 0], vec![0, 3]];
        assert_eq!(fleiss_kappa(&c, 3).unwrap(), Kappa::Value(1.0));
        let d = vec![vec![3, 0], vec![3, 0]];
        assert_eq!(fleiss_kappa(&d, 3).unwrap(), Kappa::PerfectAgreementDegenerate);
        assert!(fleiss_kappa(&[vec![2, 0]], 3).is_err());
    }
}
