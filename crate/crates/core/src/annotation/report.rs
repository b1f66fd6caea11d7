//! The annotation-metrics JSON report.

use std::collections::BTreeMap;

use serde::Serialize;

use super::adjust::AdjustStep;
use super::consistency::{s_a, s_r, CrossCheckSet, SetBreakdown};
use super::kappa::{count_matrix, fleiss_kappa, Kappa};
use super::records::AnnotationRecord;
use super::vote::{resolve_label, Resolution};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct GroupReport {
    pub group: usize,
    pub s_a: f64,
    pub s_r: f64,
    pub per_set: Vec<SetBreakdown>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ResolutionSummary {
    /// Records decided at stages 1–4.
    pub decided_by_stage: [usize; 4],
    pub pending_leader: usize,
    pub pending_second_leader: usize,
    pub pending_expert: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct AnnotationReport {
    /// Mean over groups.
    pub s_a: f64,
    /// Mean over groups.
    pub s_r: f64,
    /// Population variance of the groups' `S_r`.
    pub s_r_variance: f64,
    /// `null` when every rating fell in one category.
    pub kappa: Option<f64>,
    pub kappa_status: Kappa,
    pub records: usize,
    pub groups: Vec<GroupReport>,
    pub resolution: ResolutionSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adjustment: Option<Vec<AdjustStep>>,
}

impl AnnotationReport {
    pub fn from_records(records: &[AnnotationRecord], num_categories: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Input("no annotation records".into()));
        }
        for r in records {
            r.validate(num_categories)?;
        }
        let mut by_group: BTreeMap<usize, Vec<AnnotationRecord>> = BTreeMap::new();
        for r in records {
            by_group.entry(r.group).or_default().push(r.clone());
        }
        let groups = by_group
            .into_iter()
            .map(|(group, recs)| {
                let cc = CrossCheckSet::from_records(&recs)?;
                Ok(GroupReport {
                    group,
                    s_a: s_a(&cc)?,
                    s_r: s_r(&cc)?,
                    per_set: cc.breakdown()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n = groups.len() as f64;
        let mean_sr = groups.iter().map(|g| g.s_r).sum::<f64>() / n;
        let labels: Vec<Vec<usize>> = records.iter().map(|r| r.labels.clone()).collect();
        let kappa = fleiss_kappa(&count_matrix(&labels, num_categories)?, 3)?;
        let mut resolution = ResolutionSummary::default();
        for r in records {
            match resolve_label(r) {
                Resolution::Decided { stage, .. } => resolution.decided_by_stage[stage as usize - 1] += 1,
                Resolution::Pending { needs } => match needs {
                    super::Escalation::Leader => resolution.pending_leader += 1,
                    super::Escalation::SecondLeader => resolution.pending_second_leader += 1,
                    super::Escalation::Expert => resolution.pending_expert += 1,
                },
            }
        }
        Ok(AnnotationReport {
            s_a: groups.iter().map(|g| g.s_a).sum::<f64>() / n,
            s_r: mean_sr,
            s_r_variance: groups.iter().map(|g| (g.s_r - mean_sr).powi(2)).sum::<f64>() / n,
            kappa: kappa.value(),
            kappa_status: kappa,
            records: records.len(),
            groups,
            resolution,
            adjustment: None,
        })
    }
}
