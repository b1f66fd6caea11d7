//! Iterative personnel adjustment between annotation groups.
//!
//! Each round focuses on one category: every annotator's consistency ratio
//! (CR) on that category is the fraction of their labels matching the prior
//! label, over the cross-check items whose prior is that category. The
//! lowest-CR annotator overall trades places with the highest-CR annotator
//! of the same gender in another group and groups re-annotate the same
//! items. A swap that raises the variance of group `S_r` is undone. The loop
//! stops once the mean group `S_r` is no lower than at the start and the
//! variance is below a threshold, after a full pass over the categories
//! without an accepted swap, or at `max_iters`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::consistency::{s_r, CrossCheckSet, STANDARD_SET_CATEGORIES};
use super::records::{AnnotationRecord, PriorLabel};
use super::Gender;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Member {
    pub id: String,
    pub gender: Gender,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub members: Vec<Member>,
}

impl Group {
    /// Three members, two male and one female.
    pub fn validate(&self, index: usize) -> Result<()> {
        let female = self.members.iter().filter(|m| m.gender == Gender::Female).count();
        if self.members.len() != 3 || female != 1 {
            return Err(Error::Config(format!(
                "group {index} must have 2 male and 1 female members, has {} members ({female} female)",
                self.members.len()
            )));
        }
        Ok(())
    }
}

/// One cross-check item, annotated identically by every group.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckItem {
    pub sample_id: String,
    pub set: usize,
    pub set_category: usize,
    pub prior: usize,
}

/// The standard nine sets of `m` items each, every item's prior equal to
/// its set's category.
pub fn standard_items(m: usize) -> Vec<CheckItem> {
    STANDARD_SET_CATEGORIES
        .iter()
        .enumerate()
        .flat_map(|(set, &cat)| {
            (0..m).map(move |j| CheckItem {
                sample_id: format!("set{set}-{j:03}"),
                set,
                set_category: cat,
                prior: cat,
            })
        })
        .collect()
}

/// Deterministic source of annotator labels.
pub trait LabelOracle {
    fn label(&self, annotator: &str, item: &CheckItem) -> usize;
}

/// Annotators with a planted per-category probability of reproducing the
/// prior label; otherwise they pick a different category uniformly. Each
/// (annotator, item) pair has its own random stream, so an annotator labels
/// an item the same way whichever group they sit in.
#[derive(Clone, Debug)]
pub struct SkillOracle {
    pub skills: BTreeMap<String, Vec<f64>>,
    pub num_categories: usize,
    pub seed: u64,
}

fn fnv1a(parts: &[&str]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for p in parts {
        for b in p.bytes().chain(Some(0xff)) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

impl LabelOracle for SkillOracle {
    fn label(&self, annotator: &str, item: &CheckItem) -> usize {
        let skill = self
            .skills
            .get(annotator)
            .and_then(|s| s.get(item.prior))
            .copied()
            .unwrap_or(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(&[annotator, &item.sample_id]));
        if rng.random_bool(skill.clamp(0.0, 1.0)) || self.num_categories < 2 {
            item.prior
        } else {
            let k = rng.random_range(0..self.num_categories - 1);
            if k >= item.prior {
                k + 1
            } else {
                k
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdjustConfig {
    pub sigma2_max: f64,
    pub max_iters: usize,
    pub num_categories: usize,
}

impl Default for AdjustConfig {
    fn default() -> Self {
        AdjustConfig {
            sigma2_max: 1.0,
            max_iters: 12,
            num_categories: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdjustStep {
    pub iteration: usize,
    pub mu: f64,
    pub sigma2: f64,
    /// Swaps performed in this iteration (0 or 1).
    pub swaps: usize,
    pub category: Option<usize>,
    pub swapped: Option<(String, String)>,
}

#[derive(Clone, Debug)]
pub struct AdjustOutcome {
    pub groups: Vec<Group>,
    /// Row 0 is the starting allocation.
    pub trajectory: Vec<AdjustStep>,
    pub converged: bool,
}

impl AdjustOutcome {
    pub fn total_swaps(&self) -> usize {
        self.trajectory.iter().map(|s| s.swaps).sum()
    }

    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("iteration,mu,sigma2,swaps\n");
        for s in &self.trajectory {
            out.push_str(&format!("{},{},{},{}\n", s.iteration, s.mu, s.sigma2, s.swaps));
        }
        out
    }
}

fn annotate(groups: &[Group], items: &[CheckItem], oracle: &dyn LabelOracle) -> Vec<Vec<AnnotationRecord>> {
    groups
        .iter()
        .enumerate()
        .map(|(g, group)| {
            items
                .iter()
                .map(|it| AnnotationRecord {
                    sample_id: it.sample_id.clone(),
                    group: g,
                    set: it.set,
                    set_category: it.set_category,
                    prior_label: PriorLabel::Category(it.prior),
                    labels: group.members.iter().map(|m| oracle.label(&m.id, it)).collect(),
                    annotators: Some(group.members.iter().map(|m| m.id.clone()).collect()),
                    confidence: None,
                    leader_vote: None,
                    leader2_vote: None,
                    expert_vote: None,
                })
                .collect()
        })
        .collect()
}

/// Mean and population variance of the groups' `S_r`.
pub fn group_stats(records: &[Vec<AnnotationRecord>]) -> Result<(f64, f64)> {
    let scores = records
        .iter()
        .map(|r| s_r(&CrossCheckSet::from_records(r)?))
        .collect::<Result<Vec<f64>>>()?;
    let n = scores.len() as f64;
    let mu = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mu).powi(2)).sum::<f64>() / n;
    Ok((mu, var))
}

/// CR of `(group, member)` on `category`, or `None` without such items.
fn consistency_ratios(records: &[Vec<AnnotationRecord>], category: usize) -> Vec<Vec<Option<f64>>> {
    records
        .iter()
        .map(|recs| {
            let relevant: Vec<&AnnotationRecord> = recs
                .iter()
                .filter(|r| r.prior_label == PriorLabel::Category(category))
                .collect();
            (0..3)
                .map(|m| {
                    (!relevant.is_empty()).then(|| {
                        relevant.iter().filter(|r| r.labels[m] == category).count() as f64 / relevant.len() as f64
                    })
                })
                .collect()
        })
        .collect()
}

/// `(low, high)` as `(group, member)` positions for one category's swap.
fn pick_swap(groups: &[Group], cr: &[Vec<Option<f64>>]) -> Option<((usize, usize), (usize, usize))> {
    let slots = || {
        groups.iter().enumerate().flat_map(move |(g, grp)| {
            grp.members
                .iter()
                .enumerate()
                .filter_map(move |(m, mem)| cr[g][m].map(|c| (c, g, m, mem)))
        })
    };
    let (_, lg, lm, low) = slots().min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.3.id.cmp(&b.3.id)))?;
    let (_, hg, hm, _) = slots()
        .filter(|s| s.1 != lg && s.3.gender == low.gender)
        .max_by(|a, b| a.0.total_cmp(&b.0).then_with(|| b.3.id.cmp(&a.3.id)))?;
    Some(((lg, lm), (hg, hm)))
}

pub fn adjust_personnel(
    groups: Vec<Group>,
    items: &[CheckItem],
    oracle: &dyn LabelOracle,
    cfg: &AdjustConfig,
) -> Result<AdjustOutcome> {
    if groups.len() < 2 {
        return Err(Error::Config(format!("adjustment needs at least 2 groups, got {}", groups.len())));
    }
    for (i, g) in groups.iter().enumerate() {
        g.validate(i)?;
    }
    if items.is_empty() {
        return Err(Error::Input("no cross-check items".into()));
    }
    if !(cfg.sigma2_max > 0.0) || cfg.num_categories == 0 {
        return Err(Error::Config("sigma2_max must be > 0 and num_categories >= 1".into()));
    }
    let mut groups = groups;
    let mut records = annotate(&groups, items, oracle);
    let (mu0, var0) = group_stats(&records)?;
    let done = |mu: f64, var: f64| mu >= mu0 && var < cfg.sigma2_max;
    let mut trajectory = vec![AdjustStep {
        iteration: 0,
        mu: mu0,
        sigma2: var0,
        swaps: 0,
        category: None,
        swapped: None,
    }];
    let mut converged = done(mu0, var0);
    let (mut mu, mut sigma2) = (mu0, var0);
    let mut idle = 0;
    for iteration in 1..=cfg.max_iters {
        // stop once a full pass over the categories changed nothing
        if converged || idle == cfg.num_categories {
            break;
        }
        let category = (iteration - 1) % cfg.num_categories;
        let cr = consistency_ratios(&records, category);
        let mut swapped = None;
        if let Some(((lg, lm), (hg, hm))) = pick_swap(&groups, &cr) {
            let mut trial = groups.clone();
            let low = trial[lg].members[lm].clone();
            let high = std::mem::replace(&mut trial[hg].members[hm], low.clone());
            trial[lg].members[lm] = high.clone();
            let trial_records = annotate(&trial, items, oracle);
            let (m, v) = group_stats(&trial_records)?;
            // a swap that widens the spread between groups is undone
            if v <= sigma2 {
                groups = trial;
                records = trial_records;
                (mu, sigma2) = (m, v);
                swapped = Some((low.id, high.id));
            }
        }
        idle = if swapped.is_some() { 0 } else { idle + 1 };
        trajectory.push(AdjustStep {
            iteration,
            mu,
            sigma2,
            swaps: swapped.is_some() as usize,
            category: Some(category),
            swapped,
        });
        converged = done(mu, sigma2);
    }
    Ok(AdjustOutcome {
        groups,
        trajectory,
        converged,
    })
}

/// Three groups `a`, `b`, `c` of two men and one woman each, plus an
/// oracle in which the woman of group `b` is weak on every category.
pub fn planted_population(seed: u64) -> (Vec<Group>, SkillOracle) {
    let skills = [("a", [0.85, 0.85, 0.85]), ("b", [0.8, 0.8, 0.35]), ("c", [0.8, 0.8, 0.8])];
    let mut groups = Vec::new();
    let mut map = BTreeMap::new();
    for (g, s) in skills {
        let members = (0..3)
            .map(|i| Member {
                id: format!("{g}{i}"),
                gender: if i == 2 { Gender::Female } else { Gender::Male },
            })
            .collect();
        for (i, p) in s.iter().enumerate() {
            map.insert(format!("{g}{i}"), vec![*p; 6]);
        }
        groups.push(Group { members });
    }
    (
        groups,
        SkillOracle {
            skills: map,
            num_categories: 6,
            seed,
        },
    )
}
